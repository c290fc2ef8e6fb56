//! Waypoint selection against the priority map, grid path planning, and a
//! kinematic path follower with a hard collision veto.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, Point2, Pose2D};
use crate::grid::{inflate, rasterize_hull, supercover_line, CellState, Grid, GridSpec};
use crate::logging;
use crate::priority::{normalize, PriorityGrid};
use crate::semantic_map::SemanticMap;

/// Believed occupancy for planning: tri-state cells plus an obstacle mask
/// grown by the robot radius.
#[derive(Clone, Debug)]
pub struct OccupancyGrid {
    pub cells: Grid<CellState>,
    pub inflation_radius: f64,
    pub inflated: Grid<bool>,
}

impl OccupancyGrid {
    pub fn spec(&self) -> GridSpec {
        self.cells.spec
    }

    /// Traversable: observed free and clear of the inflated obstacle mask.
    pub fn traversable(&self, ix: usize, iy: usize) -> bool {
        *self.cells.get(ix, iy) == CellState::Free && !*self.inflated.get(ix, iy)
    }

    pub fn free_cell_at(&self, p: Point2) -> bool {
        match self.spec().cell_of(p) {
            Some((ix, iy)) => self.traversable(ix, iy),
            None => false,
        }
    }
}

/// Projects the believed scene onto the ground plane: background occupancy
/// overlaid with the active objects' footprints, inflated for planning.
pub fn project_occupancy(map: &SemanticMap, inflation_radius: f64) -> OccupancyGrid {
    let spec = map.spec();
    let mut cells = map.background.clone();
    for obj in map.active.values() {
        for (ix, iy) in rasterize_hull(&spec, &obj.points) {
            cells.set(ix, iy, CellState::Occupied);
        }
    }
    let mut mask = Grid::filled(spec, false);
    for i in 0..cells.data.len() {
        if cells.data[i] == CellState::Occupied {
            mask.data[i] = true;
        }
    }
    let inflated = inflate(&mask, inflation_radius);
    OccupancyGrid {
        cells,
        inflation_radius,
        inflated,
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RobotModel {
    pub v_max: f64,
    pub omega_max: f64,
    pub radius: f64,
    pub dt: f64,
    pub lookahead: f64,
    pub goal_tolerance: f64,
}

impl Default for RobotModel {
    fn default() -> Self {
        RobotModel {
            v_max: 0.5,
            omega_max: 1.5,
            radius: 0.2,
            dt: 0.1,
            lookahead: 0.5,
            goal_tolerance: 0.3,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub m_candidates: usize,
    pub bandwidth: f64,
    pub forgetting: f64,
    pub max_resample: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            m_candidates: 3,
            bandwidth: 0.5,
            forgetting: 0.997,
            max_resample: 100,
        }
    }
}

/// Low-passed density estimate of the committed waypoints.
#[derive(Clone, Debug)]
pub struct WaypointHistory {
    pub waypoints: Vec<Point2>,
    pub density: PriorityGrid,
    pub bandwidth: f64,
    pub forgetting: f64,
}

impl WaypointHistory {
    pub fn new(spec: GridSpec, cfg: &SamplerConfig) -> WaypointHistory {
        WaypointHistory {
            waypoints: Vec::new(),
            density: Grid::filled(spec, 0.0),
            bandwidth: cfg.bandwidth,
            forgetting: cfg.forgetting,
        }
    }

    pub fn commit(&mut self, w: Point2) {
        for v in self.density.data.iter_mut() {
            *v *= self.forgetting;
        }
        deposit_kernel(&mut self.density, w, self.bandwidth);
        normalize(&mut self.density);
        self.waypoints.push(w);
    }
}

/// Adds a unit-mass truncated Gaussian blob (as density) centered at `p`.
fn deposit_kernel(grid: &mut PriorityGrid, p: Point2, bandwidth: f64) {
    let spec = grid.spec;
    let sigma_cells = (bandwidth / spec.resolution).max(1e-6);
    let radius = (4.0 * sigma_cells).ceil() as i64;
    let Some((cx, cy)) = spec.cell_of_clamped(p) else {
        return;
    };
    let mut weights = Vec::new();
    let mut total = 0.0;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let x = cx as i64 + dx;
            let y = cy as i64 + dy;
            if x < 0 || y < 0 || x >= spec.width as i64 || y >= spec.height as i64 {
                continue;
            }
            let center = spec.center(x as usize, y as usize);
            let d2 = center.dist_sq(p);
            let w = (-d2 / (2.0 * bandwidth * bandwidth)).exp();
            weights.push((spec.index(x as usize, y as usize), w));
            total += w;
        }
    }
    if total <= 0.0 {
        return;
    }
    let area = spec.cell_area();
    for (i, w) in weights {
        grid.data[i] += w / (total * area);
    }
}

fn draw_cell(weights: &[f64], total: f64, u: f64) -> usize {
    let target = u * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if acc > target {
            return i;
        }
    }
    weights.len() - 1
}

/// Ergodic waypoint sampling: candidates are drawn from the clipped error
/// between the priority map and the waypoint-density estimate; each draw
/// updates a working copy of the estimate before the next, and the
/// candidate closest to the robot is committed. Candidates landing on
/// non-traversable cells are resampled.
pub fn sample_next_waypoint(
    f_task: &PriorityGrid,
    hist: &mut WaypointHistory,
    robot_xy: Point2,
    m: usize,
    occ: &OccupancyGrid,
    rng: &mut impl Rng,
) -> Point2 {
    let spec = f_task.spec;
    let mut working = hist.density.clone();
    let mut candidates: Vec<Point2> = Vec::with_capacity(m);

    for _ in 0..m.max(1) {
        let mut error: Vec<f64> = f_task
            .data
            .iter()
            .zip(&working.data)
            .map(|(t, h)| (t - h).max(0.0))
            .collect();
        let mut total: f64 = error.iter().sum();
        if total <= 0.0 {
            logging::debug("waypoint error distribution empty; sampling f_task directly");
            error.clone_from(&f_task.data);
            total = error.iter().sum();
            if total <= 0.0 {
                break;
            }
        }

        let mut chosen: Option<Point2> = None;
        let mut tries = 0;
        while tries < 100 {
            tries += 1;
            let i = draw_cell(&error, total, rng.random::<f64>());
            let (ix, iy) = (i % spec.width, i / spec.width);
            if !occ.traversable(ix, iy) {
                continue;
            }
            let c = spec.center(ix, iy);
            let jx = (rng.random::<f64>() - 0.5) * 0.8 * spec.resolution;
            let jy = (rng.random::<f64>() - 0.5) * 0.8 * spec.resolution;
            chosen = Some(Point2::new(c.x + jx, c.y + jy));
            break;
        }
        let cand = chosen.unwrap_or_else(|| {
            // Deterministic fallback: best traversable cell by error mass.
            let mut best = (0usize, f64::NEG_INFINITY);
            for iy in 0..spec.height {
                for ix in 0..spec.width {
                    if occ.traversable(ix, iy) {
                        let v = error[spec.index(ix, iy)];
                        if v > best.1 {
                            best = (spec.index(ix, iy), v);
                        }
                    }
                }
            }
            logging::debug("waypoint rejection budget exhausted; using best free cell");
            spec.center(best.0 % spec.width, best.0 / spec.width)
        });
        candidates.push(cand);
        deposit_kernel(&mut working, cand, hist.bandwidth);
        normalize(&mut working);
    }

    let next = candidates
        .iter()
        .copied()
        .min_by(|a, b| {
            a.dist_sq(robot_xy)
                .partial_cmp(&b.dist_sq(robot_xy))
                .unwrap_or(Ordering::Equal)
        })
        .unwrap_or(robot_xy);
    hist.commit(next);
    next
}

struct HeapNode {
    f: f64,
    h: f64,
    seq: u64,
    cell: (usize, usize),
}

impl PartialEq for HeapNode {
    fn eq(&self, other: &Self) -> bool {
        self.f == other.f && self.h == other.h && self.seq == other.seq
    }
}
impl Eq for HeapNode {}
impl PartialOrd for HeapNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapNode {
    // Min-heap on (f, h, seq) via reversed comparison.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .partial_cmp(&self.f)
            .unwrap_or(Ordering::Equal)
            .then(other.h.partial_cmp(&self.h).unwrap_or(Ordering::Equal))
            .then(other.seq.cmp(&self.seq))
    }
}

fn snap_within(occ: &OccupancyGrid, p: Point2, radius_cells: i64) -> Option<(usize, usize)> {
    let spec = occ.spec();
    let (ix, iy) = spec.cell_of_clamped(p)?;
    if occ.traversable(ix, iy) {
        return Some((ix, iy));
    }
    let mut best: Option<((usize, usize), f64)> = None;
    for dy in -radius_cells..=radius_cells {
        for dx in -radius_cells..=radius_cells {
            let x = ix as i64 + dx;
            let y = iy as i64 + dy;
            if x < 0 || y < 0 || x >= spec.width as i64 || y >= spec.height as i64 {
                continue;
            }
            let c = (x as usize, y as usize);
            if occ.traversable(c.0, c.1) {
                let d = spec.center(c.0, c.1).dist_sq(p);
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((c, d));
                }
            }
        }
    }
    best.map(|(c, _)| c)
}

/// Goals snap within one cell; starts get a wider net because the robot can
/// legitimately sit inside the inflation band (e.g. after an object's hull
/// shifted under it) and must still be able to plan its way out.
fn snap_start(occ: &OccupancyGrid, p: Point2) -> Option<(usize, usize)> {
    let spec = occ.spec();
    let escape = ((occ.inflation_radius / spec.resolution).ceil() as i64 + 2).max(3);
    snap_within(occ, p, escape)
}

/// True when the straight segment stays on traversable cells.
pub fn segment_clear(occ: &OccupancyGrid, from: Point2, to: Point2) -> bool {
    supercover_line(&occ.spec(), from, to)
        .into_iter()
        .all(|(ix, iy)| occ.traversable(ix, iy))
}

/// 8-connected A* over traversable cells (unknown space is non-traversable),
/// euclidean heuristic, followed by line-of-sight shortcut smoothing.
/// Returns `None` when the goal is unreachable.
pub fn plan_path(occ: &OccupancyGrid, start: Point2, goal: Point2) -> Option<Vec<Point2>> {
    let spec = occ.spec();
    let start_cell = snap_start(occ, start)?;
    let goal_cell = snap_within(occ, goal, 1)?;
    if start_cell == goal_cell {
        return Some(vec![start, spec.center(goal_cell.0, goal_cell.1)]);
    }

    let idx = |c: (usize, usize)| spec.index(c.0, c.1);
    let heur = |c: (usize, usize)| -> f64 {
        spec.center(c.0, c.1)
            .dist(spec.center(goal_cell.0, goal_cell.1))
    };
    let mut g = vec![f64::INFINITY; spec.len()];
    let mut parent: Vec<u32> = vec![u32::MAX; spec.len()];
    let mut closed = vec![false; spec.len()];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    g[idx(start_cell)] = 0.0;
    heap.push(HeapNode {
        f: heur(start_cell),
        h: heur(start_cell),
        seq,
        cell: start_cell,
    });

    const STEPS: [(i64, i64); 8] = [
        (1, 0),
        (-1, 0),
        (0, 1),
        (0, -1),
        (1, 1),
        (1, -1),
        (-1, 1),
        (-1, -1),
    ];

    let mut found = false;
    while let Some(node) = heap.pop() {
        let c = node.cell;
        let ci = idx(c);
        if closed[ci] {
            continue;
        }
        closed[ci] = true;
        if c == goal_cell {
            found = true;
            break;
        }
        for (dx, dy) in STEPS {
            let nx = c.0 as i64 + dx;
            let ny = c.1 as i64 + dy;
            if nx < 0 || ny < 0 || nx >= spec.width as i64 || ny >= spec.height as i64 {
                continue;
            }
            let n = (nx as usize, ny as usize);
            if !occ.traversable(n.0, n.1) {
                continue;
            }
            // No corner cutting on diagonal moves.
            if dx != 0 && dy != 0 {
                let a = ((c.0 as i64 + dx) as usize, c.1);
                let b = (c.0, (c.1 as i64 + dy) as usize);
                if !occ.traversable(a.0, a.1) || !occ.traversable(b.0, b.1) {
                    continue;
                }
            }
            let step = if dx != 0 && dy != 0 {
                std::f64::consts::SQRT_2
            } else {
                1.0
            } * spec.resolution;
            let ng = g[ci] + step;
            let ni = idx(n);
            if ng < g[ni] {
                g[ni] = ng;
                parent[ni] = ci as u32;
                seq += 1;
                let h = heur(n);
                heap.push(HeapNode {
                    f: ng + h,
                    h,
                    seq,
                    cell: n,
                });
            }
        }
    }
    if !found {
        return None;
    }

    let mut cells = vec![goal_cell];
    let mut cur = idx(goal_cell);
    while cur != idx(start_cell) {
        cur = parent[cur] as usize;
        cells.push((cur % spec.width, cur / spec.width));
    }
    cells.reverse();

    let mut raw: Vec<Point2> = Vec::with_capacity(cells.len() + 1);
    raw.push(start);
    raw.extend(cells.into_iter().map(|c| spec.center(c.0, c.1)));

    // Shortcut smoothing: jump to the furthest point still in line of sight.
    let mut smooth = vec![raw[0]];
    let mut i = 0;
    while i + 1 < raw.len() {
        let mut j = raw.len() - 1;
        while j > i + 1 && !segment_clear(occ, raw[i], raw[j]) {
            j -= 1;
        }
        smooth.push(raw[j]);
        i = j;
    }
    Some(smooth)
}

pub fn path_length(path: &[Point2]) -> f64 {
    path.windows(2).map(|w| w[0].dist(w[1])).sum()
}

#[derive(Clone, Copy, Debug)]
pub struct FollowOutcome {
    pub pose: Pose2D,
    pub reached_end: bool,
    pub replan: bool,
}

fn lookahead_point(path: &[Point2], robot: Point2, lookahead: f64) -> Point2 {
    // Project onto the path, then advance by the lookahead distance.
    let mut best_seg = 0;
    let mut best_t = 0.0;
    let mut best_d = f64::INFINITY;
    for (i, w) in path.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let ab = b.sub(a);
        let len2 = ab.dist_sq(Point2::new(0.0, 0.0)).max(1e-12);
        let t = ((robot.sub(a).x * ab.x + robot.sub(a).y * ab.y) / len2).clamp(0.0, 1.0);
        let proj = a.add(ab.scale(t));
        let d = proj.dist_sq(robot);
        if d < best_d {
            best_d = d;
            best_seg = i;
            best_t = t;
        }
    }
    let mut remaining = lookahead;
    let mut seg = best_seg;
    let mut t = best_t;
    loop {
        let a = path[seg];
        let b = path[seg + 1];
        let seg_len = a.dist(b);
        let left = seg_len * (1.0 - t);
        if remaining <= left || seg + 2 >= path.len() {
            let adv = if seg_len > 0.0 {
                (t + remaining / seg_len).min(1.0)
            } else {
                1.0
            };
            return a.add(b.sub(a).scale(adv));
        }
        remaining -= left;
        seg += 1;
        t = 0.0;
    }
}

/// One pure-pursuit control step along `path`. Heading-first: large heading
/// errors rotate in place. Motion that would enter an occupied (inflated)
/// cell is vetoed, leaving the pose unchanged and raising the replan flag.
pub fn follow_step(
    robot: &Pose2D,
    path: &[Point2],
    model: &RobotModel,
    occ: &OccupancyGrid,
) -> FollowOutcome {
    if path.is_empty() {
        return FollowOutcome {
            pose: *robot,
            reached_end: true,
            replan: false,
        };
    }
    let end = *path.last().unwrap();
    if robot.position().dist(end) <= model.goal_tolerance {
        return FollowOutcome {
            pose: *robot,
            reached_end: true,
            replan: false,
        };
    }
    let target = if path.len() == 1 {
        path[0]
    } else {
        lookahead_point(path, robot.position(), model.lookahead)
    };
    let delta = robot.bearing_to(target);

    let (v, omega) = if delta.abs() > std::f64::consts::FRAC_PI_3 {
        (0.0, (delta / model.dt).clamp(-model.omega_max, model.omega_max))
    } else {
        let v = model.v_max * (1.0 - 0.5 * delta.abs() / std::f64::consts::FRAC_PI_3);
        let kappa = 2.0 * delta.sin() / model.lookahead.max(1e-6);
        (
            v,
            (v * kappa).clamp(-model.omega_max, model.omega_max),
        )
    };

    let heading = normalize_angle(robot.heading + omega * model.dt);
    let next = Pose2D::new(
        robot.x + v * heading.cos() * model.dt,
        robot.y + v * heading.sin() * model.dt,
        heading,
    );

    if v > 0.0 {
        // The veto is against real obstacle cells; the inflation band is a
        // planning construct and must stay passable so the robot can drive
        // out of it when obstacle hulls shift underneath it.
        let spec = occ.spec();
        let blocked = supercover_line(&spec, robot.position(), next.position())
            .into_iter()
            .any(|(ix, iy)| *occ.cells.get(ix, iy) == CellState::Occupied)
            || spec.cell_of(next.position()).is_none();
        if blocked {
            return FollowOutcome {
                pose: Pose2D::new(robot.x, robot.y, heading),
                reached_end: false,
                replan: true,
            };
        }
    }

    FollowOutcome {
        pose: next,
        reached_end: next.position().dist(end) <= model.goal_tolerance,
        replan: false,
    }
}

/// Object-goal success: close enough, facing the target, and the line of
/// sight is not blocked (the target's own cells do not block it).
pub fn search_success(
    robot: &Pose2D,
    target_centroid: Point2,
    target_cells: &[(usize, usize)],
    obstacles: &Grid<bool>,
    fov_half_angle: f64,
    r_succ: f64,
) -> bool {
    if robot.position().dist(target_centroid) > r_succ {
        return false;
    }
    if robot.bearing_to(target_centroid).abs() > fov_half_angle {
        return false;
    }
    let spec = obstacles.spec;
    let robot_cell = spec.cell_of_clamped(robot.position());
    for (ix, iy) in supercover_line(&spec, robot.position(), target_centroid) {
        if Some((ix, iy)) == robot_cell || target_cells.contains(&(ix, iy)) {
            continue;
        }
        if *obstacles.get(ix, iy) {
            return false;
        }
    }
    true
}
