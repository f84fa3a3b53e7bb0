//! Reference datasets: a corpus with a prescribed correlation structure for
//! exercising pruning, and the demo app-fingerprinting corpus spec.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::catalog::MetricCatalog;
use crate::simulator::{mix_seed, ClassTemplate, CorpusSpec, SceneEvent, SceneScript, SceneType};
use crate::traces::{CorpusItem, LabeledCorpus, TraceSet};

/// A metric that survives pruning, followed by the partners it removes and
/// the correlation each partner has with it.
pub struct PruneGroup {
    pub kept: &'static str,
    pub partners: &'static [(&'static str, f64)],
}

/// Reference pruning outcome over 23 metrics.
pub const REFERENCE_PRUNE_GROUPS: &[PruneGroup] = &[
    PruneGroup { kept: "gpu_bus_busy", partners: &[("prims_clipped", -0.995)] },
    PruneGroup {
        kept: "vertex_fetch_stall",
        partners: &[
            ("texture_fetch_stall", 0.911),
            ("texture_l2_miss", 0.907),
            ("stalled_on_system_memory", 0.913),
            ("prims_trivially_rejected", 0.908),
            ("nearest_filtered", 0.906),
            ("avg_bytes_per_fragment", 0.907),
            ("global_image_uncompressed_data_read_bw", 0.918),
        ],
    },
    PruneGroup { kept: "anisotropic_filtered", partners: &[] },
    PruneGroup { kept: "non_base_level_textures", partners: &[] },
    PruneGroup {
        kept: "sp_memory_read",
        partners: &[
            ("global_buffer_read_l2_hit", -0.932),
            ("bytes_data_actually_written", -0.909),
            ("global_buffer_data_read_bw", 0.9999),
        ],
    },
    PruneGroup { kept: "preemptions_per_second", partners: &[("global_buffer_data_read_request_bw", 0.919)] },
    PruneGroup { kept: "avg_preemption_delay", partners: &[] },
    PruneGroup { kept: "global_memory_load_instructions", partners: &[] },
    PruneGroup { kept: "local_memory_store_instructions", partners: &[] },
    PruneGroup { kept: "avg_load_store_instructions_per_cycle", partners: &[] },
    PruneGroup { kept: "bytes_data_write_requested", partners: &[] },
];

/// Centered, orthonormal vectors of length `n` (modified Gram-Schmidt on
/// Gaussian draws, each orthogonal to the constant vector).
pub fn orthonormal_centered(count: usize, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    assert!(count < n, "need more samples than vectors");
    let mut basis: Vec<Vec<f64>> = vec![vec![1.0 / (n as f64).sqrt(); n]];
    while basis.len() <= count {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis.remove(0);
    basis
}

/// Corpus over the metrics of [`REFERENCE_PRUNE_GROUPS`] whose concatenated
/// series have exactly the listed correlations between each kept metric
/// and its partners and zero correlation between kept metrics. Columns are
/// scaled into plausible ranges, in catalog order.
pub fn pruning_fixture(catalog: &MetricCatalog, n_items: usize, seconds: usize, seed: u64) -> LabeledCorpus {
    let n = n_items * seconds;
    let n_vectors: usize = REFERENCE_PRUNE_GROUPS.iter().map(|g| 1 + g.partners.len()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis = orthonormal_centered(n_vectors, n, &mut rng).into_iter();
    let mut series: Vec<(String, Vec<f64>)> = Vec::new();
    for g in REFERENCE_PRUNE_GROUPS {
        let z = basis.next().expect("enough basis vectors");
        for &(id, r) in g.partners {
            let e = basis.next().expect("enough basis vectors");
            let s = (1.0 - r * r).sqrt();
            series.push((id.to_string(), z.iter().zip(&e).map(|(a, b)| r * a + s * b).collect()));
        }
        series.push((g.kept.to_string(), z));
    }
    series.sort_by_key(|(id, _)| catalog.position(id).unwrap_or(usize::MAX));
    let scale = (n as f64).sqrt();
    let metrics: Vec<String> = series.iter().map(|(id, _)| id.clone()).collect();
    let scaled: Vec<Vec<f64>> = series
        .iter()
        .map(|(_, v)| v.iter().map(|x| 50.0 + 5.0 * scale * x).collect())
        .collect();
    let items = (0..n_items)
        .map(|i| CorpusItem {
            trace: TraceSet::new(
                metrics.clone(),
                scaled.iter().map(|c| c[i * seconds..(i + 1) * seconds].to_vec()).collect(),
                0,
            )
            .expect("well-formed fixture")
            .with_meta("scenario", "pruning_fixture"),
            label: "cube".into(),
            group: "p0".into(),
        })
        .collect();
    LabeledCorpus::new(items).expect("consistent metrics")
}

pub const DEMO_APP_CLASSES: usize = 20;
pub const DEMO_APP_REPETITIONS: usize = 20;
pub const DEMO_APP_SEED: u64 = 42;

/// App-fingerprinting demo: each class is a 40 s VR capture of one app
/// session (t = 5..35 s) with its own uniform intensity vector.
pub fn demo_app_corpus_spec(catalog: &MetricCatalog, seed: u64) -> CorpusSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0xa99]));
    let classes = (0..DEMO_APP_CLASSES)
        .map(|c| {
            let app_id = format!("app{c:02}");
            let intensity = (0..catalog.len()).map(|_| (rng.random_range(0.0..1.0f64) * 1000.0).round() / 1000.0).collect();
            let script = SceneScript::new(SceneType::Vr, 40, 0).with_event(SceneEvent::AppSession {
                app_id: app_id.clone(),
                t_start: 5.0,
                t_end: 35.0,
                intensity,
            });
            ClassTemplate { label: app_id, script }
        })
        .collect();
    CorpusSpec { classes, repetitions: DEMO_APP_REPETITIONS, seed, groups: 4 }
}
