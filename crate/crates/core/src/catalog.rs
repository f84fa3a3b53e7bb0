//! The metric universe: counter descriptors, categories and load direction.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema error at line {line}: {reason}")]
    Schema { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    GpuUtilization,
    Stalls,
    MemoryAccess,
    ShaderInstruction,
    GeometryRasterization,
    TextureFiltering,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Percent,
    PerSecond,
    BytesPerSecond,
    Count,
    Ratio,
}

/// How a counter moves when more content is rendered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    IncreasesWithLoad,
    DecreasesWithLoad,
}

impl Direction {
    /// `+1.0` for increasing counters, `-1.0` for decreasing ones.
    pub fn sign(self) -> f64 {
        match self {
            Direction::IncreasesWithLoad => 1.0,
            Direction::DecreasesWithLoad => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricDescriptor {
    pub id: String,
    pub display_name: String,
    pub category: Category,
    pub unit: Unit,
    pub direction: Direction,
}

impl MetricDescriptor {
    /// Closed value range for bounded units; only percentages are bounded.
    pub fn valid_range(&self) -> Option<(f64, f64)> {
        match self.unit {
            Unit::Percent => Some((0.0, 100.0)),
            _ => None,
        }
    }
}

/// Returns true if `id` is a canonical metric identifier (`[a-z0-9_]+`).
pub fn is_valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

/// Ordered set of metric descriptors. Order is the pruning scan order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricCatalog {
    entries: Vec<MetricDescriptor>,
}

impl MetricCatalog {
    /// Builds a catalog, rejecting malformed or duplicate ids.
    pub fn new(entries: Vec<MetricDescriptor>) -> Result<Self, CatalogError> {
        let mut seen = HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            if !is_valid_id(&e.id) {
                return Err(CatalogError::Schema {
                    line: i + 1,
                    reason: format!("invalid metric id {:?}", e.id),
                });
            }
            if !seen.insert(e.id.as_str()) {
                return Err(CatalogError::Schema {
                    line: i + 1,
                    reason: format!("duplicate metric id {:?}", e.id),
                });
            }
        }
        Ok(MetricCatalog { entries })
    }

    pub fn entries(&self) -> &[MetricDescriptor] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&MetricDescriptor> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }

    /// Serializes the catalog as a JSON array, one entry per line.
    pub fn to_json(&self) -> String {
        let mut out = String::from("[\n");
        for (i, e) in self.entries.iter().enumerate() {
            out.push_str("  ");
            out.push_str(&serde_json::to_string(e).expect("descriptor serializes"));
            if i + 1 < self.entries.len() {
                out.push(',');
            }
            out.push('\n');
        }
        out.push_str("]\n");
        out
    }

    /// Parses the catalog JSON schema. Errors carry the 1-based line of the
    /// offending entry.
    pub fn from_json(text: &str) -> Result<Self, CatalogError> {
        let entries: Vec<MetricDescriptor> =
            serde_json::from_str(text).map_err(|e| CatalogError::Schema {
                line: e.line(),
                reason: e.to_string(),
            })?;
        let mut seen = HashSet::new();
        for e in &entries {
            if !is_valid_id(&e.id) {
                return Err(CatalogError::Schema {
                    line: id_line(text, &e.id, 1),
                    reason: format!("invalid metric id {:?}", e.id),
                });
            }
            if !seen.insert(e.id.as_str()) {
                return Err(CatalogError::Schema {
                    line: id_line(text, &e.id, 2),
                    reason: format!("duplicate metric id {:?}", e.id),
                });
            }
        }
        Ok(MetricCatalog { entries })
    }
}

// Line of the nth `"id": "<id>"` occurrence in the raw text; 0 when not found.
fn id_line(text: &str, id: &str, nth: usize) -> usize {
    let quoted = format!("\"{id}\"");
    let mut hits = 0;
    for (lineno, line) in text.lines().enumerate() {
        let mut rest = line;
        while let Some(pos) = rest.find("\"id\"") {
            rest = &rest[pos + 4..];
            let value = rest.trim_start().trim_start_matches(':').trim_start();
            if value.starts_with(&quoted) {
                hits += 1;
                if hits == nth {
                    return lineno + 1;
                }
            }
        }
    }
    0
}

pub fn load_catalog(path: &Path) -> Result<MetricCatalog, CatalogError> {
    let text = fs::read_to_string(path)?;
    MetricCatalog::from_json(&text)
}

pub fn write_catalog(catalog: &MetricCatalog, path: &Path) -> Result<(), CatalogError> {
    fs::write(path, catalog.to_json())?;
    Ok(())
}

pub const NON_BASE_LEVEL_TEXTURES: &str = "non_base_level_textures";

/// The 30 counters read by the profiler, in table order (category rows
/// top to bottom, left to right within a row). The counter table names 29;
/// the L2-hit counter that correlation pruning removes closes the memory
/// access row.
pub fn builtin_catalog() -> MetricCatalog {
    use Category::*;
    use Direction::*;
    use Unit::*;
    const ROWS: &[(&str, &str, Category, Unit, Direction)] = &[
        ("gpu_frequency", "GPU Frequency", GpuUtilization, PerSecond, IncreasesWithLoad),
        ("gpu_bus_busy", "GPU Bus Busy", GpuUtilization, Percent, IncreasesWithLoad),
        ("preemptions_per_second", "Preemptions / second", GpuUtilization, PerSecond, IncreasesWithLoad),
        ("avg_preemption_delay", "Avg Preemption Delay", GpuUtilization, Count, IncreasesWithLoad),
        ("vertex_fetch_stall", "Vertex Fetch Stall", Stalls, Percent, IncreasesWithLoad),
        ("texture_fetch_stall", "Texture Fetch Stall", Stalls, Percent, IncreasesWithLoad),
        ("texture_l2_miss", "Texture L2 Miss", Stalls, Percent, IncreasesWithLoad),
        ("stalled_on_system_memory", "Stalled on System Memory", Stalls, Percent, IncreasesWithLoad),
        ("vertex_memory_read", "Vertex Memory Read (Bytes/Second)", MemoryAccess, BytesPerSecond, IncreasesWithLoad),
        ("sp_memory_read", "SP Memory Read (Bytes/Second)", MemoryAccess, BytesPerSecond, IncreasesWithLoad),
        ("global_memory_load_instructions", "Global Memory Load Instructions", MemoryAccess, Count, IncreasesWithLoad),
        ("global_buffer_data_read_request_bw", "Global Buffer Data Read Request BW (Bytes/sec)", MemoryAccess, BytesPerSecond, IncreasesWithLoad),
        ("global_buffer_data_read_bw", "Global Buffer Data Read BW (Bytes/sec)", MemoryAccess, BytesPerSecond, IncreasesWithLoad),
        ("global_image_uncompressed_data_read_bw", "Global Image Uncompressed Data Read BW (Bytes/sec)", MemoryAccess, BytesPerSecond, IncreasesWithLoad),
        ("bytes_data_write_requested", "Bytes Data Write Requested", MemoryAccess, BytesPerSecond, IncreasesWithLoad),
        ("bytes_data_actually_written", "Bytes Data Actually Written", MemoryAccess, BytesPerSecond, IncreasesWithLoad),
        ("global_buffer_read_l2_hit", "Global Buffer Read L2 Hit", MemoryAccess, Percent, IncreasesWithLoad),
        ("vertex_instructions_per_second", "Vertex Instructions / Second", ShaderInstruction, PerSecond, IncreasesWithLoad),
        ("local_memory_store_instructions", "Local Memory Store Instructions", ShaderInstruction, Count, IncreasesWithLoad),
        ("avg_load_store_instructions_per_cycle", "Avg Load-Store Instructions Per Cycle", ShaderInstruction, Ratio, IncreasesWithLoad),
        ("avg_bytes_per_fragment", "Avg Bytes / Fragment", ShaderInstruction, Ratio, IncreasesWithLoad),
        ("l1_texture_cache_miss_per_pixel", "L1 Texture Cache Miss Per Pixel", ShaderInstruction, Ratio, IncreasesWithLoad),
        ("pre_clipped_polygons_per_second", "Pre-clipped Polygons/Second", GeometryRasterization, PerSecond, IncreasesWithLoad),
        ("prims_trivially_rejected", "Prims Trivially Rejected", GeometryRasterization, Percent, DecreasesWithLoad),
        ("prims_clipped", "Prims Clipped", GeometryRasterization, Percent, DecreasesWithLoad),
        ("average_vertices_per_polygon", "Average Vertices / Polygon", GeometryRasterization, Ratio, DecreasesWithLoad),
        ("average_polygon_area", "Average Polygon Area", GeometryRasterization, Ratio, DecreasesWithLoad),
        ("nearest_filtered", "Nearest Filtered", TextureFiltering, Percent, IncreasesWithLoad),
        ("anisotropic_filtered", "Anisotropic Filtered", TextureFiltering, Percent, IncreasesWithLoad),
        (NON_BASE_LEVEL_TEXTURES, "Non-Base Level Textures", TextureFiltering, Percent, IncreasesWithLoad),
    ];
    let entries = ROWS
        .iter()
        .map(|&(id, name, category, unit, direction)| MetricDescriptor {
            id: id.to_string(),
            display_name: name.to_string(),
            category,
            unit,
            direction,
        })
        .collect();
    MetricCatalog::new(entries).expect("builtin catalog is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_has_thirty_entries_in_table_order() {
        let c = builtin_catalog();
        assert_eq!(c.len(), 30);
        assert_eq!(c.entries()[0].id, "gpu_frequency");
        assert_eq!(c.entries()[29].id, NON_BASE_LEVEL_TEXTURES);
        let cats: HashSet<_> = c.entries().iter().map(|e| e.category).collect();
        assert_eq!(cats.len(), 6);
    }

    #[test]
    fn exactly_four_decreasing_metrics() {
        let c = builtin_catalog();
        let dec: Vec<_> = c
            .entries()
            .iter()
            .filter(|e| e.direction == Direction::DecreasesWithLoad)
            .map(|e| e.id.as_str())
            .collect();
        assert_eq!(
            dec,
            [
                "prims_trivially_rejected",
                "prims_clipped",
                "average_vertices_per_polygon",
                "average_polygon_area"
            ]
        );
    }

    #[test]
    fn ids_are_canonical_and_percent_metrics_bounded() {
        for e in builtin_catalog().entries() {
            assert!(is_valid_id(&e.id), "{}", e.id);
            if e.unit == Unit::Percent {
                assert_eq!(e.valid_range(), Some((0.0, 100.0)));
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let c = builtin_catalog();
        assert_eq!(MetricCatalog::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn two_entries_parse() {
        let text = r#"[
  {"id":"a","display_name":"A","category":"stalls","unit":"percent","direction":"increases_with_load"},
  {"id":"b","display_name":"B","category":"stalls","unit":"ratio","direction":"decreases_with_load"}
]"#;
        let c = MetricCatalog::from_json(text).unwrap();
        assert_eq!(c.ids(), ["a", "b"]);
    }

    #[test]
    fn duplicate_id_reports_line() {
        let text = r#"[
  {"id":"a","display_name":"A","category":"stalls","unit":"percent","direction":"increases_with_load"},
  {"id":"a","display_name":"A2","category":"stalls","unit":"percent","direction":"increases_with_load"}
]"#;
        match MetricCatalog::from_json(text) {
            Err(CatalogError::Schema { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_category_is_schema_error() {
        let text = r#"[
  {"id":"a","display_name":"A","category":"bogus","unit":"percent","direction":"increases_with_load"}
]"#;
        assert!(matches!(
            MetricCatalog::from_json(text),
            Err(CatalogError::Schema { line: 2, .. })
        ));
    }
}
