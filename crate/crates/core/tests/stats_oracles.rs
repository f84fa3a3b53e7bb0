use counterscope::stats::{linreg, pearson, summarize, zscore_fit_apply};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Two-pass definitional oracle: cov and σ straight from E[(X-μ)(Y-μ)].
fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    let sx = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n).sqrt();
    let sy = (y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n).sqrt();
    cov / (sx * sy)
}

// Normal equations [n Σx; Σx Σx²][b; a] = [Σy; Σxy], solved by Cramer's rule.
fn linreg_oracle(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let det = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    let my = sy / n;
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    (slope, intercept, 1.0 - ss_res / ss_tot)
}

fn random_pair(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = rng.random_range(8..=64);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
    let slope = rng.random_range(-3.0..3.0);
    let y = x.iter().map(|v| slope * v + rng.random_range(-5.0..5.0)).collect();
    (x, y)
}

#[test]
fn pearson_matches_oracle_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let (x, y) = random_pair(&mut rng);
        let got = pearson(&x, &y).unwrap();
        assert!((got - pearson_oracle(&x, &y)).abs() <= 1e-12, "{got}");
    }
}

#[test]
fn pearson_reference_value() {
    let x = [1.0, 2.0, 3.0, 4.0];
    let y = [1.0, 3.0, 2.0, 4.0];
    let oracle = pearson_oracle(&x, &y);
    assert!((oracle - 0.8).abs() < 1e-15);
    assert!((pearson(&x, &y).unwrap() - 0.8).abs() < 1e-15);
}

#[test]
fn linreg_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let (x, y) = random_pair(&mut rng);
        let fit = linreg(&x, &y).unwrap();
        let (s, b, r2) = linreg_oracle(&x, &y);
        assert!((fit.slope - s).abs() < 1e-10);
        assert!((fit.intercept - b).abs() < 1e-10);
        assert!((fit.r_squared - r2).abs() < 1e-10);
    }
}

#[test]
fn summarize_matches_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let (x, _) = random_pair(&mut rng);
        let s = summarize(&x).unwrap();
        let n = x.len() as f64;
        let mu = x.iter().sum::<f64>() / n;
        let sd = (x.iter().map(|a| (a - mu).powi(2)).sum::<f64>() / n).sqrt();
        assert!((s.mean - mu).abs() < 1e-12);
        assert!((s.std - sd).abs() < 1e-12);
        assert_eq!(s.max, x.iter().copied().fold(f64::MIN, f64::max));
        assert_eq!(s.min, x.iter().copied().fold(f64::MAX, f64::min));
    }
}

#[test]
fn summarize_examples() {
    let s = summarize(&[1.0, 2.0, 3.0]).unwrap();
    assert_eq!((s.mean, s.max, s.min), (2.0, 3.0, 1.0));
    assert!((s.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    let s = summarize(&[-1.0, 1.0]).unwrap();
    assert_eq!((s.mean, s.std, s.max, s.min), (0.0, 1.0, 1.0, -1.0));
}

fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..40).prop_flat_map(|n| (prop::collection::vec(-1e3..1e3f64, n), prop::collection::vec(-1e3..1e3f64, n)))
}

proptest! {
    #[test]
    fn pearson_symmetric_and_bounded((x, y) in vec_pair()) {
        let a = pearson(&x, &y).unwrap();
        let b = pearson(&y, &x).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(a.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn pearson_affine_invariant((x, y) in vec_pair(), a in prop_oneof![-50.0..-0.1f64, 0.1..50.0f64], b in -100.0..100.0f64) {
        let base = pearson(&x, &y).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        // Rescaling can make a nearly constant series exactly constant or vice versa.
        let sx = counterscope::stats::std(&x);
        prop_assume!(sx > 1e-6);
        prop_assert!((pearson(&xs, &y).unwrap() - a.signum() * base).abs() < 1e-10);
    }

    #[test]
    fn r_squared_is_pearson_squared((x, y) in vec_pair()) {
        prop_assume!(counterscope::stats::std(&x) > 1e-6 && counterscope::stats::std(&y) > 1e-6);
        let fit = linreg(&x, &y).unwrap();
        let r = pearson(&x, &y).unwrap();
        prop_assert!((fit.r_squared - r * r).abs() < 1e-10);
        prop_assert!((0.0..=1.0).contains(&fit.r_squared));
    }

    #[test]
    fn zscore_output_is_standardized(x in prop::collection::vec(-1e3..1e3f64, 2..50)) {
        prop_assume!(counterscope::stats::std(&x) > 1e-6);
        let (z, _, _) = zscore_fit_apply(&x, &x).unwrap();
        prop_assert!(counterscope::stats::mean(&z).abs() < 1e-9);
        prop_assert!((counterscope::stats::std(&z) - 1.0).abs() < 1e-9);
    }
}
