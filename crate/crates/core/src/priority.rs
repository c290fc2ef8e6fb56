//! Task-conditioned exploration priority map: a relevancy-weighted
//! superposition of per-object Gaussian-smoothed occupancy shadows,
//! normalized to integrate to one over the workspace.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{rasterize_hull, CellState, Grid, GridSpec};
use crate::logging;
use crate::semantic_map::{MapObject, SemanticMap};
use crate::world::RelevancyTable;

/// Nonnegative density over the shared grid; `sum(values) * cell_area == 1`
/// after normalization.
pub type PriorityGrid = Grid<f64>;

pub fn integral(grid: &PriorityGrid) -> f64 {
    grid.data.iter().sum::<f64>() * grid.spec.cell_area()
}

/// Scales the grid so it integrates to one. No-op on an all-zero grid.
pub fn normalize(grid: &mut PriorityGrid) {
    let total = integral(grid);
    if total > 0.0 {
        let inv = 1.0 / total;
        for v in grid.data.iter_mut() {
            *v *= inv;
        }
    }
}

/// Total-variation distance between two densities on the same grid.
pub fn tv_distance(a: &PriorityGrid, b: &PriorityGrid) -> f64 {
    let area = a.spec.cell_area();
    0.5 * a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        * area
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SigmaConfig {
    pub v_search: f64,
    pub r_search: f64,
    pub sigma_measure: f64,
}

impl Default for SigmaConfig {
    fn default() -> Self {
        SigmaConfig {
            v_search: 0.6,
            r_search: 0.2,
            sigma_measure: 0.05,
        }
    }
}

impl SigmaConfig {
    pub fn is_valid(&self) -> bool {
        self.r_search > self.sigma_measure && self.sigma_measure > 0.0 && self.v_search > 0.0
            && self.v_search < 1.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Query {
    Maintenance,
    FindObject { text: String },
}

/// Table oracle standing in for a language-model relevancy query:
/// (query text, class name) -> likelihood the task succeeds near that class.
#[derive(Clone, Debug)]
pub struct RelevancyOracle {
    table: BTreeMap<(String, String), f64>,
    pub default: f64,
}

impl RelevancyOracle {
    pub fn new(default: f64) -> RelevancyOracle {
        RelevancyOracle {
            table: BTreeMap::new(),
            default,
        }
    }

    pub fn from_table(table: &RelevancyTable) -> RelevancyOracle {
        let mut oracle = RelevancyOracle::new(table.default);
        for e in &table.entries {
            oracle.insert(&e.query, &e.class, e.score);
        }
        oracle
    }

    pub fn insert(&mut self, query: &str, class: &str, score: f64) {
        self.table
            .insert((query.to_string(), class.to_string()), score);
    }

    pub fn score(&self, query: &str, class: &str) -> f64 {
        self.table
            .get(&(query.to_string(), class.to_string()))
            .copied()
            .unwrap_or(self.default)
    }
}

/// Binary ground-plane mask of the cells covered by the object's footprint
/// (convex hull of its stored points).
pub fn occupancy_shadow(obj: &MapObject, spec: &GridSpec) -> Result<Vec<(usize, usize)>> {
    let bounds = spec.world_bounds();
    for p in &obj.points {
        if !bounds.contains(*p) {
            return Err(Error::OutOfBounds(format!(
                "object {} at ({:.2}, {:.2})",
                obj.id, p.x, p.y
            )));
        }
    }
    Ok(rasterize_hull(spec, &obj.points))
}

/// Maps expected stationarity to kernel width: sigma(v_search) = r_search,
/// sigma(1) = sigma_measure, strictly decreasing in v, diverging as v -> 0.
pub fn sigma_of_v(v: f64, cfg: &SigmaConfig) -> Result<f64> {
    if v <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "stationarity {v} out of (0, 1]"
        )));
    }
    let ratio = (1.0 / v - 1.0) / (1.0 / cfg.v_search - 1.0);
    Ok(ratio * (cfg.r_search - cfg.sigma_measure) + cfg.sigma_measure)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PriorityParams {
    pub sigma: SigmaConfig,
    /// Transiently low scores are clamped to this before Eq.-of-sigma lookup.
    pub v_floor: f64,
    /// Optional uniform weight spread over unknown cells (initial-mapping aid).
    pub unknown_bonus: f64,
}

impl Default for PriorityParams {
    fn default() -> Self {
        PriorityParams {
            sigma: SigmaConfig::default(),
            v_floor: 0.6 + 1e-6,
            unknown_bonus: 0.0,
        }
    }
}

fn gaussian_kernel(sigma_cells: f64) -> Vec<f64> {
    let radius = (4.0 * sigma_cells).ceil().max(1.0) as usize;
    let mut k = Vec::with_capacity(2 * radius + 1);
    for i in 0..=2 * radius {
        let d = i as f64 - radius as f64;
        k.push((-d * d / (2.0 * sigma_cells * sigma_cells)).exp());
    }
    let sum: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

fn blur_separable(grid: &mut Grid<f64>, sigma_cells: f64) {
    if sigma_cells <= 0.0 {
        return;
    }
    let kernel = gaussian_kernel(sigma_cells);
    let radius = kernel.len() / 2;
    let (w, h) = (grid.spec.width, grid.spec.height);
    let mut tmp = vec![0.0; grid.data.len()];
    for iy in 0..h {
        for ix in 0..w {
            let v = grid.data[iy * w + ix];
            if v == 0.0 {
                continue;
            }
            for (k, kv) in kernel.iter().enumerate() {
                let x = ix as i64 + k as i64 - radius as i64;
                if x >= 0 && (x as usize) < w {
                    tmp[iy * w + x as usize] += v * kv;
                }
            }
        }
    }
    grid.data.fill(0.0);
    for iy in 0..h {
        for ix in 0..w {
            let v = tmp[iy * w + ix];
            if v == 0.0 {
                continue;
            }
            for (k, kv) in kernel.iter().enumerate() {
                let y = iy as i64 + k as i64 - radius as i64;
                if y >= 0 && (y as usize) < h {
                    grid.data[(y as usize) * w + ix] += v * kv;
                }
            }
        }
    }
}

/// Per-object priority: the occupancy shadow convolved with an isotropic
/// Gaussian whose width follows the object's expected stationarity, then
/// normalized to integrate to one. The kernel is truncated at four sigma
/// and capped at the workspace diagonal.
pub fn per_object_map(
    obj: &MapObject,
    params: &PriorityParams,
    spec: &GridSpec,
) -> Result<PriorityGrid> {
    let cells = occupancy_shadow(obj, spec)?;
    let mut grid = Grid::filled(*spec, 0.0);
    for (ix, iy) in cells {
        grid.set(ix, iy, 1.0);
    }
    let v = obj.expected_stationarity().max(params.v_floor).min(1.0);
    let sigma = sigma_of_v(v, &params.sigma)?.min(spec.world_bounds().diagonal());
    blur_separable(&mut grid, sigma / spec.resolution);
    normalize(&mut grid);
    Ok(grid)
}

const MAINT_ALPHA: f64 = 5.0;
const MAINT_BETA: f64 = 6.0;

fn beta_density_unnormalized(v: f64, a: f64, b: f64) -> f64 {
    if !(0.0..=1.0).contains(&v) {
        return 0.0;
    }
    v.powf(a - 1.0) * (1.0 - v).powf(b - 1.0)
}

/// Map-maintenance relevancy of a stationarity score: a Beta(5, 6) profile
/// scaled so its mode (4/9) maps to exactly one. Low but nonzero scores are
/// emphasized; fully confirmed objects (E[v] -> 1) fall out of the map.
pub fn maintenance_relevancy(e_v: f64) -> f64 {
    let mode = (MAINT_ALPHA - 1.0) / (MAINT_ALPHA + MAINT_BETA - 2.0);
    beta_density_unnormalized(e_v, MAINT_ALPHA, MAINT_BETA)
        / beta_density_unnormalized(mode, MAINT_ALPHA, MAINT_BETA)
}

/// Search relevancy: oracle lookup on (query text, object class).
pub fn search_relevancy(query: &Query, obj: &MapObject, oracle: &RelevancyOracle) -> f64 {
    match query {
        Query::FindObject { text } => oracle.score(text, &obj.class_name),
        Query::Maintenance => maintenance_relevancy(obj.expected_stationarity()),
    }
}

pub fn relevancy(query: &Query, obj: &MapObject, oracle: &RelevancyOracle) -> f64 {
    match query {
        Query::Maintenance => maintenance_relevancy(obj.expected_stationarity()),
        Query::FindObject { .. } => search_relevancy(query, obj, oracle),
    }
}

/// Superposition of per-object maps weighted by task relevancy, normalized
/// to integrate to one. With no informative object (all weights zero) the
/// map falls back to uniform over known-free space.
pub fn compose_priority_map(
    map: &SemanticMap,
    query: &Query,
    oracle: &RelevancyOracle,
    params: &PriorityParams,
) -> Result<PriorityGrid> {
    let spec = map.spec();
    let mut out = Grid::filled(spec, 0.0);
    let mut total_weight = 0.0;
    for obj in map.active.values() {
        let lambda = relevancy(query, obj, oracle);
        if lambda <= 0.0 {
            continue;
        }
        let f = per_object_map(obj, params, &spec)?;
        for (o, v) in out.data.iter_mut().zip(&f.data) {
            *o += lambda * v;
        }
        total_weight += lambda;
    }

    if params.unknown_bonus > 0.0 {
        let unknown: Vec<usize> = map
            .background
            .data
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == CellState::Unknown)
            .map(|(i, _)| i)
            .collect();
        if !unknown.is_empty() {
            let per_cell = params.unknown_bonus / (unknown.len() as f64 * spec.cell_area());
            for i in unknown {
                out.data[i] += per_cell;
            }
            total_weight += params.unknown_bonus;
        }
    }

    if total_weight <= 0.0 {
        logging::info("priority map has no informative object; uniform over free space");
        let free: Vec<usize> = map
            .background
            .data
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == CellState::Free)
            .map(|(i, _)| i)
            .collect();
        if free.is_empty() {
            let per_cell = 1.0 / (spec.len() as f64 * spec.cell_area());
            out.data.fill(per_cell);
        } else {
            let per_cell = 1.0 / (free.len() as f64 * spec.cell_area());
            for i in free {
                out.data[i] = per_cell;
            }
        }
        return Ok(out);
    }

    normalize(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point2, Pose2D};
    use crate::stationarity::{BeliefConfig, StationarityBelief, StationarityLabel};

    fn spec() -> GridSpec {
        GridSpec {
            resolution: 0.1,
            origin_x: 0.0,
            origin_y: 0.0,
            width: 60,
            height: 40,
        }
    }

    fn obj_with(points: Vec<Point2>, e_v: f64, class: &str) -> MapObject {
        MapObject {
            id: 0,
            pose: Pose2D::new(points[0].x, points[0].y, 0.0),
            bbox: crate::geometry::Aabb::of_points(&points).unwrap(),
            points,
            feature: vec![1.0],
            class_name: class.into(),
            stationarity_label: StationarityLabel::Static,
            t_first: 0.0,
            t_disappear: None,
            belief: StationarityBelief {
                alpha: 100.0 * e_v,
                beta: 100.0 * (1.0 - e_v),
                zeta: 0.0,
                last_update: 0.0,
                decaying: false,
            },
            last_seen: 0.0,
            obs_count: 1,
        }
    }

    fn square(cx: f64, cy: f64, half: f64) -> Vec<Point2> {
        vec![
            Point2::new(cx - half, cy - half),
            Point2::new(cx + half, cy - half),
            Point2::new(cx + half, cy + half),
            Point2::new(cx - half, cy + half),
        ]
    }

    #[test]
    fn shadow_of_aligned_square_is_100_cells() {
        let obj = obj_with(square(1.2, 1.2, 0.5), 0.9, "table");
        let cells = occupancy_shadow(&obj, &spec()).unwrap();
        assert!((cells.len() as i64 - 100).unsigned_abs() <= 4, "{}", cells.len());
    }

    #[test]
    fn shadow_of_point_is_one_cell() {
        let mut obj = obj_with(square(1.0, 1.0, 0.1), 0.9, "dot");
        obj.points = vec![Point2::new(1.23, 2.31)];
        let cells = occupancy_shadow(&obj, &spec()).unwrap();
        assert_eq!(cells.len(), 1);
    }

    #[test]
    fn shadow_outside_grid_errors() {
        let obj = obj_with(square(100.0, 100.0, 0.5), 0.9, "far");
        assert!(matches!(
            occupancy_shadow(&obj, &spec()),
            Err(Error::OutOfBounds(_))
        ));
    }

    #[test]
    fn sigma_hits_the_declared_endpoints() {
        let cfg = SigmaConfig::default();
        let at_search = sigma_of_v(cfg.v_search, &cfg).unwrap();
        assert!((at_search - cfg.r_search).abs() <= 4.0 * f64::EPSILON);
        let at_one = sigma_of_v(1.0, &cfg).unwrap();
        assert!((at_one - cfg.sigma_measure).abs() <= 4.0 * f64::EPSILON);
        // v = 0.75 with the default parameters evaluates to 0.125 m.
        assert!((sigma_of_v(0.75, &cfg).unwrap() - 0.125).abs() < 1e-12);
        assert!(sigma_of_v(0.0, &cfg).is_err());
    }

    #[test]
    fn sigma_is_strictly_decreasing() {
        let cfg = SigmaConfig::default();
        let mut prev = f64::INFINITY;
        for i in 1..=1000 {
            let v = i as f64 / 1000.0;
            let s = sigma_of_v(v, &cfg).unwrap();
            assert!(s < prev, "sigma not strictly decreasing at v={v}");
            prev = s;
        }
    }

    #[test]
    fn high_stationarity_concentrates_mass_on_the_footprint() {
        let params = PriorityParams::default();
        let obj = obj_with(square(3.0, 2.0, 0.5), 0.999, "table");
        let f = per_object_map(&obj, &params, &spec()).unwrap();
        let dilated = obj.bbox.dilate(4.0 * params.sigma.sigma_measure);
        let mut inside = 0.0;
        for iy in 0..f.spec.height {
            for ix in 0..f.spec.width {
                if dilated.contains(f.spec.center(ix, iy)) {
                    inside += f.get(ix, iy) * f.spec.cell_area();
                }
            }
        }
        assert!(inside >= 0.99, "mass inside dilated footprint: {inside}");
        assert!((integral(&f) - 1.0).abs() < 1e-6);
    }

    fn second_moment(f: &PriorityGrid) -> f64 {
        let mut cx = 0.0;
        let mut cy = 0.0;
        for iy in 0..f.spec.height {
            for ix in 0..f.spec.width {
                let m = f.get(ix, iy) * f.spec.cell_area();
                let p = f.spec.center(ix, iy);
                cx += m * p.x;
                cy += m * p.y;
            }
        }
        let mut var = 0.0;
        for iy in 0..f.spec.height {
            for ix in 0..f.spec.width {
                let m = f.get(ix, iy) * f.spec.cell_area();
                let p = f.spec.center(ix, iy);
                var += m * ((p.x - cx).powi(2) + (p.y - cy).powi(2));
            }
        }
        var
    }

    #[test]
    fn lower_stationarity_spreads_the_map() {
        let params = PriorityParams::default();
        let hi = per_object_map(&obj_with(square(3.0, 2.0, 0.4), 0.95, "t"), &params, &spec())
            .unwrap();
        let lo = per_object_map(&obj_with(square(3.0, 2.0, 0.4), 0.65, "t"), &params, &spec())
            .unwrap();
        assert!(second_moment(&lo) > second_moment(&hi));
    }

    #[test]
    fn separable_blur_matches_dense_convolution() {
        let sp = GridSpec {
            resolution: 0.1,
            origin_x: 0.0,
            origin_y: 0.0,
            width: 30,
            height: 24,
        };
        let mut g = Grid::filled(sp, 0.0);
        // Irregular support.
        g.set(5, 5, 1.0);
        g.set(6, 5, 1.0);
        g.set(5, 6, 1.0);
        g.set(14, 12, 1.0);
        let sigma_m = 0.2;
        let mut fast = g.clone();
        blur_separable(&mut fast, sigma_m / sp.resolution);
        normalize(&mut fast);

        // Dense reference convolution with the same truncated kernel.
        let k = gaussian_kernel(sigma_m / sp.resolution);
        let r = (k.len() / 2) as i64;
        let mut dense = Grid::filled(sp, 0.0);
        for iy in 0..sp.height as i64 {
            for ix in 0..sp.width as i64 {
                let v = *g.get(ix as usize, iy as usize);
                if v == 0.0 {
                    continue;
                }
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (x, y) = (ix + dx, iy + dy);
                        if x < 0 || y < 0 || x >= sp.width as i64 || y >= sp.height as i64 {
                            continue;
                        }
                        let w = k[(dx + r) as usize] * k[(dy + r) as usize];
                        dense.data[(y as usize) * sp.width + x as usize] += v * w;
                    }
                }
            }
        }
        normalize(&mut dense);
        for (a, b) in fast.data.iter().zip(&dense.data) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn maintenance_relevancy_profile() {
        assert!((maintenance_relevancy(4.0 / 9.0) - 1.0).abs() < 1e-12);
        assert_eq!(maintenance_relevancy(0.0), 0.0);
        assert_eq!(maintenance_relevancy(1.0), 0.0);
        // Value at 0.8 agrees with the direct density ratio.
        let direct = (0.8f64.powi(4) * 0.2f64.powi(5))
            / ((4.0f64 / 9.0).powi(4) * (5.0f64 / 9.0).powi(5));
        assert!((maintenance_relevancy(0.8) - direct).abs() < 1e-12);
    }

    #[test]
    fn maintenance_relevancy_is_unimodal_with_peak_at_mode() {
        let n = 10_000;
        let mut best = (0.0, 0.0);
        let mut rises_then_falls = true;
        let mut prev = -1.0;
        let mut falling = false;
        for i in 0..=n {
            let v = i as f64 / n as f64;
            let f = maintenance_relevancy(v);
            if f > best.1 {
                best = (v, f);
            }
            if f < prev - 1e-12 {
                falling = true;
            } else if falling && f > prev + 1e-12 {
                rises_then_falls = false;
            }
            prev = f;
        }
        assert!(rises_then_falls, "profile is not unimodal");
        assert!((best.0 - 4.0 / 9.0).abs() < 1e-3, "argmax at {}", best.0);
    }

    #[test]
    fn search_relevancy_reads_the_oracle() {
        let mut oracle = RelevancyOracle::new(0.1);
        oracle.insert("Where is my plate?", "cup", 0.9);
        oracle.insert("Where is my plate?", "chair", 0.1);
        let cup = obj_with(square(1.0, 1.0, 0.2), 0.9, "cup");
        let chair = obj_with(square(2.0, 1.0, 0.2), 0.9, "chair");
        let gizmo = obj_with(square(3.0, 1.0, 0.2), 0.9, "gizmo");
        let q = Query::FindObject {
            text: "Where is my plate?".into(),
        };
        assert!(search_relevancy(&q, &cup, &oracle) >= 0.8);
        assert!(search_relevancy(&q, &chair, &oracle) <= 0.2);
        assert!((search_relevancy(&q, &gizmo, &oracle) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn single_object_composition_equals_its_map() {
        let params = PriorityParams::default();
        let sp = spec();
        let mut map = SemanticMap::new(sp);
        let obj = obj_with(square(3.0, 2.0, 0.4), 0.7, "chair");
        map.active.insert(0, obj.clone());
        let oracle = RelevancyOracle::new(0.0);
        let composed =
            compose_priority_map(&map, &Query::Maintenance, &oracle, &params).unwrap();
        let single = per_object_map(&obj, &params, &sp).unwrap();
        for (a, b) in composed.data.iter().zip(&single.data) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!((integral(&composed) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn composition_is_order_invariant_and_symmetric() {
        let params = PriorityParams::default();
        let sp = spec();
        let a = obj_with(square(1.5, 1.5, 0.3), 0.7, "chair");
        let mut b = obj_with(square(4.5, 2.5, 0.3), 0.7, "chair");
        b.id = 1;
        let oracle = RelevancyOracle::new(0.0);

        let mut map_ab = SemanticMap::new(sp);
        map_ab.active.insert(0, a.clone());
        map_ab.active.insert(1, b.clone());
        let f_ab = compose_priority_map(&map_ab, &Query::Maintenance, &oracle, &params).unwrap();

        // Swap ids (iteration order changes, objects identical).
        let mut a2 = b.clone();
        a2.id = 0;
        let mut b2 = a.clone();
        b2.id = 1;
        let mut map_ba = SemanticMap::new(sp);
        map_ba.active.insert(0, a2);
        map_ba.active.insert(1, b2);
        let f_ba = compose_priority_map(&map_ba, &Query::Maintenance, &oracle, &params).unwrap();

        for (x, y) in f_ab.data.iter().zip(&f_ba.data) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn all_zero_relevancy_falls_back_to_free_space() {
        let params = PriorityParams::default();
        let sp = spec();
        let mut map = SemanticMap::new(sp);
        // Fully confirmed object: maintenance relevancy is exactly zero.
        let obj = obj_with(square(3.0, 2.0, 0.4), 1.0, "table");
        let mut obj = obj;
        obj.belief.beta = 0.0;
        obj.belief.alpha = 1.0;
        map.active.insert(0, obj);
        for ix in 0..10 {
            map.background.set(ix, 3, CellState::Free);
        }
        let oracle = RelevancyOracle::new(0.0);
        let f = compose_priority_map(&map, &Query::Maintenance, &oracle, &params).unwrap();
        assert!((integral(&f) - 1.0).abs() < 1e-6);
        // Mass sits only on the free cells.
        for iy in 0..sp.height {
            for ix in 0..sp.width {
                let v = *f.get(ix, iy);
                if iy == 3 && ix < 10 {
                    assert!(v > 0.0);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn fresh_belief_maintenance_weight_is_tiny() {
        let cfg = BeliefConfig::default();
        let b = StationarityBelief::fresh(&cfg, 0.0);
        assert!(maintenance_relevancy(b.expected()) < 0.02);
    }
}
