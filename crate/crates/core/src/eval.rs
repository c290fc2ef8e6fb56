//! Evaluation harness: baseline waypoint policies, the four metric
//! families, and seeded multi-episode aggregation.

use std::collections::BTreeSet;

use rand::Rng;
use serde::Serialize;

use crate::config::Config;
use crate::episode::{run_episode, EpisodeOptions, EpisodeResult, Policy};
use crate::error::{Error, Result};
use crate::explore::OccupancyGrid;
use crate::geometry::{centroid, Aabb, Point2};
use crate::grid::{rasterize_hull, CellState, Grid};
use crate::semantic_map::SemanticMap;
use crate::world::{world_state, ChangeKind, PlacedObject, Scenario, SimWorld};

/// 4-connected flood fill over traversable cells from the robot's cell.
pub fn reachable_cells(occ: &OccupancyGrid, from: Point2) -> Vec<(usize, usize)> {
    let spec = occ.spec();
    let Some(start) = spec.cell_of_clamped(from) else {
        return Vec::new();
    };
    let seed = if occ.traversable(start.0, start.1) {
        Some(start)
    } else {
        // The robot may sit on an inflated cell; seed from the nearest
        // traversable neighbor instead.
        let mut found = None;
        'search: for r in 1..=3i64 {
            for dy in -r..=r {
                for dx in -r..=r {
                    let x = start.0 as i64 + dx;
                    let y = start.1 as i64 + dy;
                    if x >= 0
                        && y >= 0
                        && (x as usize) < spec.width
                        && (y as usize) < spec.height
                        && occ.traversable(x as usize, y as usize)
                    {
                        found = Some((x as usize, y as usize));
                        break 'search;
                    }
                }
            }
        }
        found
    };
    let Some(seed) = seed else {
        return Vec::new();
    };
    let mut visited = vec![false; spec.len()];
    let mut queue = std::collections::VecDeque::new();
    visited[spec.index(seed.0, seed.1)] = true;
    queue.push_back(seed);
    let mut out = Vec::new();
    while let Some((ix, iy)) = queue.pop_front() {
        out.push((ix, iy));
        for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
            let x = ix as i64 + dx;
            let y = iy as i64 + dy;
            if x < 0 || y < 0 || x as usize >= spec.width || y as usize >= spec.height {
                continue;
            }
            let i = spec.index(x as usize, y as usize);
            if !visited[i] && occ.traversable(x as usize, y as usize) {
                visited[i] = true;
                queue.push_back((x as usize, y as usize));
            }
        }
    }
    out.sort_unstable();
    out
}

/// Uniform draw over reachable free cells.
pub fn random_waypoint(occ: &OccupancyGrid, robot: Point2, rng: &mut impl Rng) -> Option<Point2> {
    let cells = reachable_cells(occ, robot);
    if cells.is_empty() {
        return None;
    }
    let (ix, iy) = cells[rng.random_range(0..cells.len())];
    Some(occ.spec().center(ix, iy))
}

/// Boustrophedon patrol over a 2 m lattice of reachable nodes; cycles when
/// coverage completes, skipping nodes the planner reports unreachable.
pub struct PatrolState {
    nodes: Vec<Point2>,
    idx: usize,
}

impl PatrolState {
    pub fn new(occ: &OccupancyGrid, robot: Point2, spacing: f64) -> PatrolState {
        let spec = occ.spec();
        let bounds = spec.world_bounds();
        let reach: BTreeSet<(usize, usize)> = reachable_cells(occ, robot).into_iter().collect();
        let mut rows: Vec<Vec<Point2>> = Vec::new();
        let mut y = bounds.min_y + spacing / 2.0;
        while y < bounds.max_y {
            let mut row = Vec::new();
            let mut x = bounds.min_x + spacing / 2.0;
            while x < bounds.max_x {
                let p = Point2::new(x, y);
                if let Some(cell) = spec.cell_of(p) {
                    if reach.contains(&cell) {
                        row.push(p);
                    }
                }
                x += spacing;
            }
            rows.push(row);
            y += spacing;
        }
        let mut nodes = Vec::new();
        for (i, mut row) in rows.into_iter().enumerate() {
            if i % 2 == 1 {
                row.reverse();
            }
            nodes.extend(row);
        }
        PatrolState { nodes, idx: 0 }
    }

    pub fn nodes(&self) -> &[Point2] {
        &self.nodes
    }

    /// Current lattice target; `advance` moves on (also used for skips).
    pub fn next(&mut self) -> Option<Point2> {
        if self.nodes.is_empty() {
            return None;
        }
        let p = self.nodes[self.idx % self.nodes.len()];
        self.advance();
        Some(p)
    }

    pub fn advance(&mut self) {
        if !self.nodes.is_empty() {
            self.idx = (self.idx + 1) % self.nodes.len();
        }
    }
}

/// One scripted change unrolled into its addition/removal components
/// (a move counts as both).
#[derive(Clone, Debug)]
pub struct ChangeExpectation {
    pub object_id: String,
    pub class_name: String,
    /// Where a new instance should appear (add / move target).
    pub appears_at: Option<Point2>,
    /// Where an old instance should vanish (remove / move source).
    pub vanishes_at: Option<Point2>,
    pub time: f64,
}

/// Unrolls the scenario's change script into expected appearances and
/// disappearances with their ground-plane locations at event time.
pub fn change_expectations(scenario: &Scenario, budget: f64) -> Vec<ChangeExpectation> {
    let mut out = Vec::new();
    for ev in scenario.changes.iter().filter(|e| e.time <= budget) {
        let before = world_state(scenario, ev.time - 1e-6);
        let after = world_state(scenario, ev.time + 1e-6);
        let find = |objs: &[PlacedObject]| -> Option<Point2> {
            objs.iter()
                .find(|o| o.id == ev.object_id)
                .map(|o| centroid(&o.footprint))
        };
        let class_name = scenario
            .objects
            .iter()
            .find(|o| o.id == ev.object_id)
            .map(|o| o.class_name.clone())
            .unwrap_or_default();
        let (appears_at, vanishes_at) = match ev.kind {
            ChangeKind::Add => (find(&after), None),
            ChangeKind::Remove => (None, find(&before)),
            ChangeKind::Move => (find(&after), find(&before)),
        };
        out.push(ChangeExpectation {
            object_id: ev.object_id.clone(),
            class_name,
            appears_at,
            vanishes_at,
            time: ev.time,
        });
    }
    out
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct ChangeMetrics {
    pub additions_pct: f64,
    pub removals_pct: f64,
    pub additions_total: usize,
    pub removals_total: usize,
    pub additions_found: usize,
    pub removals_found: usize,
}

impl ChangeMetrics {
    pub fn overall_pct(&self) -> f64 {
        let total = self.additions_total + self.removals_total;
        if total == 0 {
            return 100.0;
        }
        100.0 * (self.additions_found + self.removals_found) as f64 / total as f64
    }
}

fn has_instance_near(
    map: &SemanticMap,
    class: &str,
    at: Point2,
    r_match: f64,
    class_strict: bool,
) -> bool {
    map.active.values().any(|o| {
        (!class_strict || o.class_name == class) && o.centroid().dist(at) <= r_match
    })
}

/// Identified additions and removals at budget end: an addition counts when
/// a (class-correct) instance sits within `r_match` of the new location; a
/// removal counts when no such instance remains at the old location.
pub fn change_detection_metrics(
    final_map: &SemanticMap,
    scenario: &Scenario,
    budget: f64,
    r_match: f64,
    class_strict: bool,
) -> ChangeMetrics {
    let mut m = ChangeMetrics::default();
    for exp in change_expectations(scenario, budget) {
        if let Some(at) = exp.appears_at {
            m.additions_total += 1;
            if has_instance_near(final_map, &exp.class_name, at, r_match, class_strict) {
                m.additions_found += 1;
            }
        }
        if let Some(at) = exp.vanishes_at {
            m.removals_total += 1;
            if !has_instance_near(final_map, &exp.class_name, at, r_match, class_strict) {
                m.removals_found += 1;
            }
        }
    }
    // Vacuous scripts score 100 by convention.
    m.additions_pct = if m.additions_total == 0 {
        100.0
    } else {
        100.0 * m.additions_found as f64 / m.additions_total as f64
    };
    m.removals_pct = if m.removals_total == 0 {
        100.0
    } else {
        100.0 * m.removals_found as f64 / m.removals_total as f64
    };
    m
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct GeometryMetrics {
    pub precision: f64,
    pub accuracy: f64,
    pub fpr: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

/// Believed occupancy mask: background occupancy plus active object cells.
pub fn believed_occupied(map: &SemanticMap) -> Grid<bool> {
    let spec = map.spec();
    let mut g = Grid::filled(spec, false);
    for i in 0..map.background.data.len() {
        if map.background.data[i] == CellState::Occupied {
            g.data[i] = true;
        }
    }
    for obj in map.active.values() {
        for (ix, iy) in rasterize_hull(&spec, &obj.points) {
            g.set(ix, iy, true);
        }
    }
    g
}

/// Bounding boxes of every object touched by a scripted change (old and new
/// poses), for restricting the voxel comparison.
pub fn changed_bboxes(scenario: &Scenario, budget: f64) -> Vec<Aabb> {
    let mut out = Vec::new();
    for ev in scenario.changes.iter().filter(|e| e.time <= budget) {
        for t in [ev.time - 1e-6, ev.time + 1e-6] {
            if let Some(obj) = world_state(scenario, t).into_iter().find(|o| o.id == ev.object_id)
            {
                if let Some(bb) = Aabb::of_points(&obj.footprint) {
                    out.push(bb);
                }
            }
        }
    }
    out
}

/// Cell-wise precision / accuracy / FPR inside the union of changed-object
/// bounding boxes (dilated by one cell).
pub fn voxel_geometry_metrics(
    believed: &Grid<bool>,
    truth: &Grid<bool>,
    changed: &[Aabb],
) -> Result<GeometryMetrics> {
    if changed.is_empty() {
        return Err(Error::InvalidInput("no changed objects".into()));
    }
    let spec = believed.spec;
    let dilated: Vec<Aabb> = changed.iter().map(|b| b.dilate(spec.resolution)).collect();
    let mut m = GeometryMetrics::default();
    for iy in 0..spec.height {
        for ix in 0..spec.width {
            let c = spec.center(ix, iy);
            if !dilated.iter().any(|b| b.contains(c)) {
                continue;
            }
            match (*believed.get(ix, iy), *truth.get(ix, iy)) {
                (true, true) => m.tp += 1,
                (true, false) => m.fp += 1,
                (false, false) => m.tn += 1,
                (false, true) => m.fn_ += 1,
            }
        }
    }
    let total = (m.tp + m.fp + m.tn + m.fn_) as f64;
    m.precision = if m.tp + m.fp == 0 {
        1.0
    } else {
        m.tp as f64 / (m.tp + m.fp) as f64
    };
    m.accuracy = if total == 0.0 {
        1.0
    } else {
        (m.tp + m.tn) as f64 / total
    };
    m.fpr = if m.fp + m.tn == 0 {
        0.0
    } else {
        m.fp as f64 / (m.fp + m.tn) as f64
    };
    Ok(m)
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct DetectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Instance-level detection quality: greedy nearest-first matching of
/// mapped instances to same-class ground-truth objects within `r_match`.
pub fn object_detection_metrics(
    map: &SemanticMap,
    truth: &[PlacedObject],
    r_match: f64,
) -> DetectionMetrics {
    let mut pairs: Vec<(f64, u64, usize)> = Vec::new();
    for obj in map.active.values() {
        for (gi, gt) in truth.iter().enumerate() {
            if obj.class_name != gt.class_name {
                continue;
            }
            let d = obj.centroid().dist(centroid(&gt.footprint));
            if d <= r_match {
                pairs.push((d, obj.id, gi));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut used_obj = BTreeSet::new();
    let mut used_gt = BTreeSet::new();
    let mut tp = 0usize;
    for (_, oid, gi) in pairs {
        if used_obj.contains(&oid) || used_gt.contains(&gi) {
            continue;
        }
        used_obj.insert(oid);
        used_gt.insert(gi);
        tp += 1;
    }
    let n_map = map.active.len();
    let n_truth = truth.len();
    let precision = if n_map == 0 { 1.0 } else { tp as f64 / n_map as f64 };
    let recall = if n_truth == 0 {
        1.0
    } else {
        tp as f64 / n_truth as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    DetectionMetrics {
        precision,
        recall,
        f1,
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct NavigationMetrics {
    pub success_rate: f64,
    pub mean_success_time: f64,
    /// mean_success_time / success_rate; infinite with zero successes.
    pub weighted_success_time: f64,
}

pub fn navigation_metrics(outcomes: &[Option<f64>]) -> NavigationMetrics {
    assert!(!outcomes.is_empty());
    let successes: Vec<f64> = outcomes.iter().flatten().copied().collect();
    let rate = successes.len() as f64 / outcomes.len() as f64;
    if successes.is_empty() {
        return NavigationMetrics {
            success_rate: 0.0,
            mean_success_time: f64::INFINITY,
            weighted_success_time: f64::INFINITY,
        };
    }
    let mean = successes.iter().sum::<f64>() / successes.len() as f64;
    NavigationMetrics {
        success_rate: rate,
        mean_success_time: mean,
        weighted_success_time: mean / rate,
    }
}

/// The changed scene frozen as an initial state: every object present at
/// `t` becomes an initial object at its pose at `t`, and the change script
/// is dropped. Running an episode on this scenario is the full-rebuild
/// reference for map-quality comparisons.
pub fn rebuild_scenario(scenario: &Scenario, t: f64) -> Scenario {
    let placed = world_state(scenario, t);
    let mut out = scenario.clone();
    out.name = format!("{}_rebuilt", scenario.name);
    out.changes.clear();
    out.objects = scenario
        .objects
        .iter()
        .filter_map(|obj| {
            placed.iter().find(|p| p.id == obj.id).map(|p| {
                let mut o = obj.clone();
                o.present_from = 0.0;
                o.pose = p.pose;
                o
            })
        })
        .collect();
    out
}

/// One evaluated episode with its metric row.
#[derive(Clone, Debug, Serialize)]
pub struct EpisodeRecord {
    pub scenario: String,
    pub policy: Policy,
    pub task: String,
    pub seed: u64,
    pub budget: f64,
    pub change: ChangeMetrics,
    pub geometry: Option<GeometryMetrics>,
    pub detection: DetectionMetrics,
    pub success_time: Option<f64>,
    pub frames: usize,
}

/// Runs one episode and computes its per-episode metrics.
pub fn evaluate_episode(
    world: &SimWorld,
    config: &Config,
    opts: &EpisodeOptions,
) -> Result<(EpisodeRecord, EpisodeResult)> {
    let result = run_episode(world, config, opts)?;
    let budget = opts.time_budget;
    let change = change_detection_metrics(
        &result.map,
        &world.scenario,
        budget,
        config.eval.r_match,
        config.eval.class_strict,
    );
    let truth_objects = world_state(&world.scenario, budget);
    let detection = object_detection_metrics(&result.map, &truth_objects, config.eval.r_match);
    let geometry = {
        let boxes = changed_bboxes(&world.scenario, budget);
        if boxes.is_empty() {
            None
        } else {
            let believed = believed_occupied(&result.map);
            let truth = world.truth_occupancy(budget);
            Some(voxel_geometry_metrics(&believed, &truth, &boxes)?)
        }
    };
    let record = EpisodeRecord {
        scenario: world.scenario.name.clone(),
        policy: opts.policy,
        task: opts.task.label(),
        seed: opts.seed,
        budget,
        change,
        geometry,
        detection,
        success_time: result.success_time,
        frames: result.frames,
    };
    Ok((record, result))
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.4}"),
        Some(_) => "inf".to_string(),
        None => String::new(),
    }
}

pub const METRICS_CSV_HEADER: &str = "scenario,policy,task,seed,budget_s,frames,\
additions_pct,removals_pct,changes_pct,geo_precision,geo_accuracy,geo_fpr,\
det_precision,det_recall,det_f1,nav_success,nav_time_s";

pub fn metrics_csv(records: &[EpisodeRecord]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for r in records {
        let (gp, ga, gf) = match &r.geometry {
            Some(g) => (
                format!("{:.4}", g.precision),
                format!("{:.4}", g.accuracy),
                format!("{:.4}", g.fpr),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{:.1},{},{:.2},{:.2},{:.2},{},{},{},{:.4},{:.4},{:.4},{},{}\n",
            r.scenario,
            r.policy.as_str(),
            r.task,
            r.seed,
            r.budget,
            r.frames,
            r.change.additions_pct,
            r.change.removals_pct,
            r.change.overall_pct(),
            gp,
            ga,
            gf,
            r.detection.precision,
            r.detection.recall,
            r.detection.f1,
            u8::from(r.success_time.is_some()),
            fmt_opt(r.success_time),
        ));
    }
    out
}

/// Per (scenario, policy, task) aggregate in the shape of the evaluation
/// tables: change-detection percentages plus navigation statistics.
pub fn summary_csv(records: &[EpisodeRecord]) -> String {
    let mut keys: Vec<(String, Policy, String)> = records
        .iter()
        .map(|r| (r.scenario.clone(), r.policy, r.task.clone()))
        .collect();
    keys.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.as_str().cmp(b.1.as_str()))
            .then(a.2.cmp(&b.2))
    });
    keys.dedup();

    let mut out = String::from(
        "scenario,policy,task,n_episodes,additions_pct_mean,removals_pct_mean,changes_pct_mean,\
geo_precision_mean,det_f1_mean,success_rate,mean_success_time_s,weighted_success_time_s\n",
    );
    for (scenario, policy, task) in keys {
        let rows: Vec<&EpisodeRecord> = records
            .iter()
            .filter(|r| r.scenario == scenario && r.policy == policy && r.task == task)
            .collect();
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&EpisodeRecord) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
        let geo_rows: Vec<f64> = rows
            .iter()
            .filter_map(|r| r.geometry.as_ref().map(|g| g.precision))
            .collect();
        let geo_mean = if geo_rows.is_empty() {
            String::new()
        } else {
            format!("{:.4}", geo_rows.iter().sum::<f64>() / geo_rows.len() as f64)
        };
        let nav = navigation_metrics(&rows.iter().map(|r| r.success_time).collect::<Vec<_>>());
        out.push_str(&format!(
            "{},{},{},{},{:.2},{:.2},{:.2},{},{:.4},{:.4},{},{}\n",
            scenario,
            policy.as_str(),
            task,
            rows.len(),
            mean(&|r| r.change.additions_pct),
            mean(&|r| r.change.removals_pct),
            mean(&|r| r.change.overall_pct()),
            geo_mean,
            mean(&|r| r.detection.f1),
            nav.success_rate,
            fmt_opt(Some(nav.mean_success_time)),
            fmt_opt(Some(nav.weighted_success_time)),
        ));
    }
    out
}
