//! Snapshot and image export: map snapshots as JSON, priority maps as
//! 8-bit PGM heatmaps with a JSON sidecar, and annotated PPM map renders.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{convex_hull, Point2, Pose2D};
use crate::grid::{rasterize_hull, rle_row, CellState, Grid, GridSpec};
use crate::priority::PriorityGrid;
use crate::semantic_map::{MapObject, SemanticMap};
use crate::stationarity::{StationarityBelief, StationarityLabel};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SnapshotObject {
    pub id: u64,
    pub class: String,
    pub pose: Pose2D,
    pub bbox: [f64; 4],
    pub e_v: f64,
    pub zeta: f64,
    pub t_first: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_disappear: Option<f64>,
    pub last_seen: f64,
    pub n_points: usize,
    /// Convex hull of the stored points; enough to rebuild the occupancy
    /// shadow exactly.
    pub hull: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BackgroundSnapshot {
    pub resolution: f64,
    pub origin: [f64; 2],
    pub width: usize,
    pub height: usize,
    /// Run-length encoded rows, south row first.
    pub rows: Vec<Vec<(CellState, usize)>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MapSnapshot {
    pub schema_version: u32,
    pub t: f64,
    pub active: Vec<SnapshotObject>,
    pub missing: Vec<SnapshotObject>,
    pub background: BackgroundSnapshot,
}

fn snapshot_object(obj: &MapObject) -> SnapshotObject {
    SnapshotObject {
        id: obj.id,
        class: obj.class_name.clone(),
        pose: obj.pose,
        bbox: [obj.bbox.min_x, obj.bbox.min_y, obj.bbox.max_x, obj.bbox.max_y],
        e_v: obj.expected_stationarity(),
        zeta: obj.belief.zeta,
        t_first: obj.t_first,
        t_disappear: obj.t_disappear,
        last_seen: obj.last_seen,
        n_points: obj.points.len(),
        hull: convex_hull(&obj.points)
            .into_iter()
            .map(|p| [p.x, p.y])
            .collect(),
    }
}

pub fn snapshot(map: &SemanticMap, t: f64) -> MapSnapshot {
    let spec = map.spec();
    let rows = (0..spec.height)
        .map(|iy| {
            let row: Vec<CellState> = (0..spec.width)
                .map(|ix| *map.background.get(ix, iy))
                .collect();
            rle_row(&row)
        })
        .collect();
    MapSnapshot {
        schema_version: crate::world::SCHEMA_VERSION,
        t,
        active: map.active.values().map(snapshot_object).collect(),
        missing: map.missing.values().map(snapshot_object).collect(),
        background: BackgroundSnapshot {
            resolution: spec.resolution,
            origin: [spec.origin_x, spec.origin_y],
            width: spec.width,
            height: spec.height,
            rows,
        },
    }
}

impl MapSnapshot {
    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            resolution: self.background.resolution,
            origin_x: self.background.origin[0],
            origin_y: self.background.origin[1],
            width: self.background.width,
            height: self.background.height,
        }
    }

    /// Rebuilds a semantic map carrying everything renders and metrics need
    /// (hull geometry, background, expected stationarity).
    pub fn to_map(&self) -> SemanticMap {
        let spec = self.grid_spec();
        let mut map = SemanticMap::new(spec);
        for (iy, runs) in self.background.rows.iter().enumerate() {
            let mut ix = 0usize;
            for (state, n) in runs {
                for _ in 0..*n {
                    if ix < spec.width {
                        map.background.set(ix, iy, *state);
                    }
                    ix += 1;
                }
            }
        }
        let restore = |list: &[SnapshotObject], active: bool, map: &mut SemanticMap| {
            for s in list {
                let points: Vec<Point2> =
                    s.hull.iter().map(|p| Point2::new(p[0], p[1])).collect();
                // Any pseudo-count pair with the recorded expectation works
                // for rendering and metrics.
                let scale = 100.0;
                let obj = MapObject {
                    id: s.id,
                    pose: s.pose,
                    bbox: crate::geometry::Aabb {
                        min_x: s.bbox[0],
                        min_y: s.bbox[1],
                        max_x: s.bbox[2],
                        max_y: s.bbox[3],
                    },
                    points,
                    feature: vec![1.0],
                    class_name: s.class.clone(),
                    stationarity_label: StationarityLabel::Dynamic,
                    t_first: s.t_first,
                    t_disappear: s.t_disappear,
                    belief: StationarityBelief {
                        alpha: scale * s.e_v.clamp(1e-9, 1.0 - 1e-9),
                        beta: scale * (1.0 - s.e_v.clamp(1e-9, 1.0 - 1e-9)),
                        zeta: s.zeta,
                        last_update: s.last_seen,
                        decaying: false,
                    },
                    last_seen: s.last_seen,
                    obs_count: 1,
                };
                if active {
                    map.active.insert(s.id, obj);
                } else {
                    map.missing.insert(s.id, obj);
                }
                map.next_id = map.next_id.max(s.id + 1);
            }
        };
        restore(&self.active, true, &mut map);
        restore(&self.missing, false, &mut map);
        map
    }
}

pub fn write_snapshot(path: impl AsRef<Path>, snap: &MapSnapshot) -> Result<()> {
    let json = serde_json::to_string_pretty(snap).expect("snapshot serializes");
    std::fs::write(path, json)?;
    Ok(())
}

pub fn read_snapshot(path: impl AsRef<Path>) -> Result<MapSnapshot> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| crate::error::Error::ScenarioParse {
        location: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridSidecar {
    pub resolution: f64,
    pub origin: [f64; 2],
    pub width: usize,
    pub height: usize,
    pub max_value: f64,
}

/// Binary PGM (P5) with the grid maximum mapped to 255; rows are written
/// north-first so images view with y up.
pub fn write_pgm(path: impl AsRef<Path>, grid: &PriorityGrid) -> Result<()> {
    let spec = grid.spec;
    let max = grid.data.iter().cloned().fold(0.0_f64, f64::max);
    let mut out = Vec::with_capacity(spec.len() + 32);
    write!(out, "P5\n{} {}\n255\n", spec.width, spec.height)?;
    for iy in (0..spec.height).rev() {
        for ix in 0..spec.width {
            let v = *grid.get(ix, iy);
            let byte = if max > 0.0 {
                ((v / max) * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            };
            out.push(byte);
        }
    }
    std::fs::write(&path, out)?;
    let sidecar = GridSidecar {
        resolution: spec.resolution,
        origin: [spec.origin_x, spec.origin_y],
        width: spec.width,
        height: spec.height,
        max_value: max,
    };
    let sidecar_path = path.as_ref().with_extension("json");
    std::fs::write(
        sidecar_path,
        serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
    )?;
    Ok(())
}

fn stationarity_color(e_v: f64) -> [u8; 3] {
    // Low scores render red (likely outdated), high scores green.
    let t = e_v.clamp(0.0, 1.0);
    [
        (230.0 * (1.0 - t) + 30.0 * t) as u8,
        (40.0 * (1.0 - t) + 200.0 * t) as u8,
        40,
    ]
}

/// Annotated map render (binary PPM, P6): background occupancy in grayscale,
/// active objects filled with a stationarity color ramp, missing objects
/// outlined by their hull cells in blue.
pub fn write_annotated_ppm(path: impl AsRef<Path>, map: &SemanticMap) -> Result<()> {
    let spec = map.spec();
    let mut pix: Grid<[u8; 3]> = Grid::filled(spec, [128, 128, 128]);
    for iy in 0..spec.height {
        for ix in 0..spec.width {
            let c = match map.background.get(ix, iy) {
                CellState::Unknown => [128, 128, 128],
                CellState::Free => [245, 245, 245],
                CellState::Occupied => [20, 20, 20],
            };
            pix.set(ix, iy, c);
        }
    }
    for obj in map.active.values() {
        let color = stationarity_color(obj.expected_stationarity());
        for (ix, iy) in rasterize_hull(&spec, &obj.points) {
            pix.set(ix, iy, color);
        }
    }
    for obj in map.missing.values() {
        for (ix, iy) in rasterize_hull(&spec, &obj.points) {
            pix.set(ix, iy, [60, 60, 220]);
        }
    }
    let mut out = Vec::with_capacity(spec.len() * 3 + 32);
    write!(out, "P6\n{} {}\n255\n", spec.width, spec.height)?;
    for iy in (0..spec.height).rev() {
        for ix in 0..spec.width {
            out.extend_from_slice(pix.get(ix, iy));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic_map::{insert_new, ObjectCandidate, SimilarityConfig};
    use crate::stationarity::BeliefConfig;
    use std::collections::BTreeMap;

    fn sample_map() -> SemanticMap {
        let spec = GridSpec {
            resolution: 0.1,
            origin_x: 0.0,
            origin_y: 0.0,
            width: 20,
            height: 16,
        };
        let mut map = SemanticMap::new(spec);
        for ix in 0..20 {
            map.background.set(ix, 0, CellState::Occupied);
            map.background.set(ix, 5, CellState::Free);
        }
        let cand = ObjectCandidate {
            pose: Pose2D::new(1.0, 1.0, 0.0),
            points: vec![
                Point2::new(0.8, 0.8),
                Point2::new(1.2, 0.8),
                Point2::new(1.2, 1.2),
                Point2::new(0.8, 1.2),
            ],
            feature: vec![1.0],
            class_name: "box".into(),
        };
        insert_new(
            &mut map,
            &cand,
            &BTreeMap::new(),
            3.0,
            &BeliefConfig::default(),
            &SimilarityConfig::default(),
        );
        map
    }

    #[test]
    fn snapshot_round_trips_background_and_objects() {
        let map = sample_map();
        let snap = snapshot(&map, 3.0);
        assert_eq!(snap.active.len(), 1);
        let rebuilt = snap.to_map();
        assert_eq!(rebuilt.background.data, map.background.data);
        assert_eq!(rebuilt.active.len(), 1);
        let (orig, back) = (&map.active[&0], &rebuilt.active[&0]);
        assert!((orig.expected_stationarity() - back.expected_stationarity()).abs() < 1e-9);
        assert_eq!(orig.class_name, back.class_name);
    }

    #[test]
    fn pgm_has_correct_header_and_size() {
        let dir = std::env::temp_dir().join("semistatic_pgm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("x.pgm");
        let spec = GridSpec {
            resolution: 0.1,
            origin_x: 0.0,
            origin_y: 0.0,
            width: 7,
            height: 5,
        };
        let mut g: PriorityGrid = Grid::filled(spec, 0.0);
        g.set(3, 2, 2.0);
        write_pgm(&path, &g).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = b"P5\n7 5\n255\n";
        assert!(bytes.starts_with(header));
        assert_eq!(bytes.len(), header.len() + 35);
        assert!(bytes[header.len()..].contains(&255u8));
        assert!(path.with_extension("json").exists());
    }
}
