//! Ground-truth world: scenario files, scripted change replay, and the
//! synthetic object-candidate sensor.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{centroid, convex_hull, densify_hull, Aabb, Point2, Pose2D};
use crate::grid::{supercover_line, CellState, Grid, GridSpec};
use crate::semantic_map::{normalize_feature, ObjectCandidate};
use crate::stationarity::StationarityLabel;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WallSegment {
    pub from: [f64; 2],
    pub to: [f64; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub id: String,
    pub class_name: String,
    /// Object-local footprint vertices; placed into the world by `pose`.
    pub footprint: Vec<[f64; 2]>,
    pub stationarity_label: StationarityLabel,
    pub present_from: f64,
    pub pose: Pose2D,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    Add,
    Remove,
    Move,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChangeEvent {
    pub time: f64,
    pub kind: ChangeKind,
    pub object_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_pose: Option<Pose2D>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SensorSpec {
    pub fov_half_angle: f64,
    pub max_range: f64,
    pub points_per_object: usize,
    pub range_noise_sigma: f64,
    pub feature_noise_sigma: f64,
    pub class_confusion_prob: f64,
    pub detection_visibility_threshold: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RelevancyEntry {
    pub query: String,
    pub class: String,
    pub score: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RelevancyTable {
    pub default: f64,
    #[serde(default)]
    pub entries: Vec<RelevancyEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub bounds: Aabb,
    pub walls: Vec<WallSegment>,
    pub objects: Vec<GroundTruthObject>,
    pub changes: Vec<ChangeEvent>,
    pub robot_start: Pose2D,
    pub sensor: SensorSpec,
    pub class_embeddings: BTreeMap<String, Vec<f64>>,
    pub relevancy_table: RelevancyTable,
    pub rng_seed: u64,
}

fn invariant(field: &str, message: impl Into<String>) -> Error {
    Error::ScenarioInvariant {
        field: field.to_string(),
        message: message.into(),
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario> {
        let scenario: Scenario =
            serde_json::from_str(text).map_err(|e| Error::ScenarioParse {
                location: format!("line {}, column {}", e.line(), e.column()),
                message: e.to_string(),
            })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invariant(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        if !(self.bounds.max_x > self.bounds.min_x && self.bounds.max_y > self.bounds.min_y) {
            return Err(invariant("bounds", "workspace rectangle is empty"));
        }
        if !self.bounds.contains(self.robot_start.position()) {
            return Err(invariant("robot_start", "robot start outside bounds"));
        }

        let s = &self.sensor;
        if !(s.max_range > 0.0) {
            return Err(invariant("sensor.max_range", "d_max must be > 0"));
        }
        if !(s.fov_half_angle > 0.0 && s.fov_half_angle <= std::f64::consts::PI) {
            return Err(invariant("sensor.fov_half_angle", "must be in (0, pi]"));
        }
        if s.range_noise_sigma < 0.0 || s.feature_noise_sigma < 0.0 {
            return Err(invariant("sensor", "noise sigmas must be >= 0"));
        }
        if !(0.0..=1.0).contains(&s.class_confusion_prob) {
            return Err(invariant("sensor.class_confusion_prob", "must be in [0,1]"));
        }
        if !(0.0..=1.0).contains(&s.detection_visibility_threshold) {
            return Err(invariant(
                "sensor.detection_visibility_threshold",
                "must be in [0,1]",
            ));
        }
        if s.points_per_object == 0 {
            return Err(invariant("sensor.points_per_object", "must be >= 1"));
        }

        let mut dim: Option<usize> = None;
        for (class, v) in &self.class_embeddings {
            let d = *dim.get_or_insert(v.len());
            if v.len() != d {
                return Err(invariant(
                    "class_embeddings",
                    format!("inconsistent embedding dims ({} vs {d})", v.len()),
                ));
            }
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(invariant(
                    "class_embeddings",
                    format!("embedding for `{class}` is not unit-norm (|v|={norm})"),
                ));
            }
        }

        if !(0.0..=1.0).contains(&self.relevancy_table.default) {
            return Err(invariant("relevancy_table.default", "must be in [0,1]"));
        }
        for e in &self.relevancy_table.entries {
            if !(0.0..=1.0).contains(&e.score) {
                return Err(invariant(
                    "relevancy_table",
                    format!("score for ({}, {}) out of [0,1]", e.query, e.class),
                ));
            }
        }

        let mut seen_ids = std::collections::BTreeSet::new();
        for obj in &self.objects {
            if !seen_ids.insert(obj.id.clone()) {
                return Err(invariant("objects", format!("duplicate id `{}`", obj.id)));
            }
            if obj.footprint.len() < 3 {
                return Err(invariant(
                    &format!("objects[{}].footprint", obj.id),
                    "footprint needs >= 3 points",
                ));
            }
            let local: Vec<Point2> = obj.footprint.iter().map(|p| Point2::new(p[0], p[1])).collect();
            let bbox = Aabb::of_points(&local).unwrap();
            if bbox.area() <= 0.0 {
                return Err(invariant(
                    &format!("objects[{}].footprint", obj.id),
                    "footprint is degenerate (zero-area bounding box)",
                ));
            }
            if !self.class_embeddings.contains_key(&obj.class_name) {
                return Err(invariant(
                    &format!("objects[{}].class_name", obj.id),
                    format!("no embedding for class `{}`", obj.class_name),
                ));
            }
            for p in world_footprint(obj, &obj.pose) {
                if !self.bounds.contains(p) {
                    return Err(invariant(
                        &format!("objects[{}]", obj.id),
                        "footprint outside bounds",
                    ));
                }
            }
        }

        let mut last_t = 0.0_f64;
        for (i, ev) in self.changes.iter().enumerate() {
            if ev.time < 0.0 {
                return Err(invariant(
                    &format!("changes[{i}].time"),
                    "change event times strictly nonnegative",
                ));
            }
            if ev.time < last_t {
                return Err(invariant(
                    &format!("changes[{i}].time"),
                    "change events must be sorted by time",
                ));
            }
            last_t = ev.time;
            let obj = self
                .objects
                .iter()
                .find(|o| o.id == ev.object_id)
                .ok_or_else(|| {
                    invariant(
                        &format!("changes[{i}].object_id"),
                        format!("unknown object `{}`", ev.object_id),
                    )
                })?;
            match ev.kind {
                ChangeKind::Move | ChangeKind::Add => {
                    if ev.kind == ChangeKind::Move && ev.new_pose.is_none() {
                        return Err(invariant(
                            &format!("changes[{i}].new_pose"),
                            "move events require new_pose",
                        ));
                    }
                    if let Some(pose) = &ev.new_pose {
                        for p in world_footprint(obj, pose) {
                            if !self.bounds.contains(p) {
                                return Err(invariant(
                                    &format!("changes[{i}].new_pose"),
                                    "footprint outside bounds at new pose",
                                ));
                            }
                        }
                    }
                }
                ChangeKind::Remove => {}
            }
        }

        // Replay to check add/remove/move reference presence correctly.
        let mut present: BTreeMap<&str, bool> = self
            .objects
            .iter()
            .map(|o| (o.id.as_str(), o.present_from <= 0.0))
            .collect();
        let mut entered: BTreeMap<&str, f64> = self
            .objects
            .iter()
            .map(|o| (o.id.as_str(), o.present_from))
            .collect();
        for (i, ev) in self.changes.iter().enumerate() {
            // Apply implicit entries (present_from) that happen before this event.
            for (id, t_in) in &entered {
                if *t_in > 0.0 && *t_in <= ev.time {
                    present.insert(id, true);
                }
            }
            entered.retain(|_, t_in| *t_in > ev.time);
            let is_present = present.get(ev.object_id.as_str()).copied().unwrap_or(false);
            match ev.kind {
                ChangeKind::Add if is_present => {
                    return Err(invariant(
                        &format!("changes[{i}]"),
                        format!("add: object `{}` already present", ev.object_id),
                    ));
                }
                ChangeKind::Remove | ChangeKind::Move if !is_present => {
                    return Err(invariant(
                        &format!("changes[{i}]"),
                        format!("{:?}: object `{}` absent at event time", ev.kind, ev.object_id),
                    ));
                }
                _ => {}
            }
            present.insert(
                ev.object_id.as_str(),
                !matches!(ev.kind, ChangeKind::Remove),
            );
        }
        Ok(())
    }

    /// Per-class stationarity prior table derived from the ground truth
    /// (stands in for an external labeling service).
    pub fn label_oracle(&self) -> BTreeMap<String, StationarityLabel> {
        let mut table = BTreeMap::new();
        for obj in &self.objects {
            table
                .entry(obj.class_name.clone())
                .or_insert(obj.stationarity_label);
        }
        table
    }

    pub fn embedding_dim(&self) -> usize {
        self.class_embeddings
            .values()
            .next()
            .map(|v| v.len())
            .unwrap_or(0)
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    Scenario::from_json(&text)
}

fn world_footprint(obj: &GroundTruthObject, pose: &Pose2D) -> Vec<Point2> {
    let (s, c) = pose.heading.sin_cos();
    obj.footprint
        .iter()
        .map(|p| Point2::new(c * p[0] - s * p[1] + pose.x, s * p[0] + c * p[1] + pose.y))
        .collect()
}

/// A ground-truth object at its pose at some query time.
#[derive(Clone, Debug)]
pub struct PlacedObject {
    pub id: String,
    pub class_name: String,
    pub stationarity_label: StationarityLabel,
    pub pose: Pose2D,
    pub footprint: Vec<Point2>,
    pub hull: Vec<Point2>,
}

/// Objects present at time `t`, with every event at times `<= t` applied in order.
pub fn world_state(scenario: &Scenario, t: f64) -> Vec<PlacedObject> {
    let mut present: BTreeMap<&str, bool> = BTreeMap::new();
    let mut poses: BTreeMap<&str, Pose2D> = BTreeMap::new();
    for obj in &scenario.objects {
        present.insert(obj.id.as_str(), obj.present_from <= t);
        poses.insert(obj.id.as_str(), obj.pose);
    }
    for ev in scenario.changes.iter().filter(|e| e.time <= t) {
        match ev.kind {
            ChangeKind::Remove => {
                present.insert(ev.object_id.as_str(), false);
            }
            ChangeKind::Add => {
                present.insert(ev.object_id.as_str(), true);
                if let Some(p) = ev.new_pose {
                    poses.insert(ev.object_id.as_str(), p);
                }
            }
            ChangeKind::Move => {
                if let Some(p) = ev.new_pose {
                    poses.insert(ev.object_id.as_str(), p);
                }
            }
        }
    }
    scenario
        .objects
        .iter()
        .filter(|o| present[o.id.as_str()])
        .map(|o| {
            let pose = poses[o.id.as_str()];
            let footprint = world_footprint(o, &pose);
            let hull = convex_hull(&footprint);
            PlacedObject {
                id: o.id.clone(),
                class_name: o.class_name.clone(),
                stationarity_label: o.stationarity_label,
                pose,
                footprint,
                hull,
            }
        })
        .collect()
}

/// One sensed frame: accepted object candidates plus the background cells
/// observed by the field-of-view sweep (object-covered cells are withheld,
/// mirroring a perception front-end that masks objects out of the background).
#[derive(Clone, Debug)]
pub struct SenseFrame {
    pub candidates: Vec<ObjectCandidate>,
    pub observed_cells: Vec<((usize, usize), CellState)>,
}

/// Prepared view of a scenario: cached wall raster plus embedding lookups.
pub struct SimWorld {
    pub scenario: Scenario,
    pub grid: GridSpec,
    walls: Grid<bool>,
    class_names: Vec<String>,
}

impl SimWorld {
    pub fn new(scenario: Scenario, resolution: f64) -> SimWorld {
        let grid = GridSpec::covering(&scenario.bounds, resolution);
        let mut walls = Grid::filled(grid, false);
        for w in &scenario.walls {
            for (ix, iy) in supercover_line(
                &grid,
                Point2::new(w.from[0], w.from[1]),
                Point2::new(w.to[0], w.to[1]),
            ) {
                walls.set(ix, iy, true);
            }
        }
        let class_names = scenario.class_embeddings.keys().cloned().collect();
        SimWorld {
            scenario,
            grid,
            walls,
            class_names,
        }
    }

    pub fn walls(&self) -> &Grid<bool> {
        &self.walls
    }

    /// Ground-truth occupancy (walls + objects present at `t`); used by the
    /// evaluation harness and the search success check.
    pub fn truth_occupancy(&self, t: f64) -> Grid<bool> {
        let mut g = self.walls.clone();
        for obj in world_state(&self.scenario, t) {
            for (ix, iy) in crate::grid::rasterize_hull(&self.grid, &obj.hull) {
                g.set(ix, iy, true);
            }
        }
        g
    }

    pub fn sense(&self, t: f64, robot: &Pose2D, rng: &mut impl Rng) -> SenseFrame {
        let placed = world_state(&self.scenario, t);
        let sensor = &self.scenario.sensor;

        // Stamp object cells: count + sole owner index, so rays can tell
        // "blocked by someone else" from "my own footprint".
        let mut count = vec![0u8; self.grid.len()];
        let mut owner = vec![usize::MAX; self.grid.len()];
        let mut object_cells: Vec<Vec<(usize, usize)>> = Vec::with_capacity(placed.len());
        for (k, obj) in placed.iter().enumerate() {
            let cells = crate::grid::rasterize_hull(&self.grid, &obj.hull);
            for &(ix, iy) in &cells {
                let i = self.grid.index(ix, iy);
                count[i] = count[i].saturating_add(1);
                owner[i] = k;
            }
            object_cells.push(cells);
        }

        let robot_cell = self.grid.cell_of_clamped(robot.position());
        let blocked_for = |k: usize, ix: usize, iy: usize| -> bool {
            let i = self.grid.index(ix, iy);
            if *self.walls.get(ix, iy) {
                return true;
            }
            count[i] >= 2 || (count[i] == 1 && owner[i] != k)
        };

        let mut candidates = Vec::new();
        for (k, obj) in placed.iter().enumerate() {
            let surface = densify_hull(&obj.hull, sensor.points_per_object);
            if surface.is_empty() {
                continue;
            }
            let mut visible = Vec::new();
            for p in &surface {
                let range = robot.position().dist(*p);
                if range > sensor.max_range {
                    continue;
                }
                if robot.bearing_to(*p).abs() > sensor.fov_half_angle {
                    continue;
                }
                let target_cell = self.grid.cell_of_clamped(*p);
                let mut clear = true;
                for (ix, iy) in supercover_line(&self.grid, robot.position(), *p) {
                    if Some((ix, iy)) == robot_cell || Some((ix, iy)) == target_cell {
                        continue;
                    }
                    if blocked_for(k, ix, iy) {
                        clear = false;
                        break;
                    }
                }
                if clear {
                    visible.push(*p);
                }
            }
            let fraction = visible.len() as f64 / surface.len() as f64;
            if fraction < sensor.detection_visibility_threshold || visible.is_empty() {
                continue;
            }

            let points: Vec<Point2> = if sensor.range_noise_sigma > 0.0 {
                visible
                    .iter()
                    .map(|p| {
                        let d = p.sub(robot.position());
                        let range = d.norm().max(1e-9);
                        let noise = (standard_normal(rng) * sensor.range_noise_sigma)
                            .clamp(-3.0 * sensor.range_noise_sigma, 3.0 * sensor.range_noise_sigma);
                        let scale = (range + noise) / range;
                        robot.position().add(d.scale(scale))
                    })
                    .collect()
            } else {
                visible
            };

            let true_embedding = &self.scenario.class_embeddings[&obj.class_name];
            let feature = if sensor.feature_noise_sigma > 0.0 {
                let noisy: Vec<f64> = true_embedding
                    .iter()
                    .map(|x| x + standard_normal(rng) * sensor.feature_noise_sigma)
                    .collect();
                normalize_feature(&noisy)
            } else {
                true_embedding.clone()
            };

            let class_name = if sensor.class_confusion_prob > 0.0
                && self.class_names.len() > 1
                && rng.random::<f64>() < sensor.class_confusion_prob
            {
                let others: Vec<&String> = self
                    .class_names
                    .iter()
                    .filter(|c| **c != obj.class_name)
                    .collect();
                others[rng.random_range(0..others.len())].clone()
            } else {
                obj.class_name.clone()
            };

            let c = centroid(&points);
            candidates.push(ObjectCandidate {
                pose: Pose2D::new(c.x, c.y, 0.0),
                points,
                feature,
                class_name,
            });
        }

        // Background sweep: free-space rays across the field of view; rays stop
        // at walls (marked occupied) or objects (withheld from the background).
        let mut observed: BTreeMap<(usize, usize), CellState> = BTreeMap::new();
        let step = (self.grid.resolution / (2.0 * sensor.max_range)).max(1e-3);
        let n_rays = (2.0 * sensor.fov_half_angle / step).ceil() as usize + 1;
        for r in 0..n_rays {
            let ang = robot.heading - sensor.fov_half_angle
                + 2.0 * sensor.fov_half_angle * (r as f64) / ((n_rays - 1).max(1) as f64);
            let end = Point2::new(
                robot.x + sensor.max_range * ang.cos(),
                robot.y + sensor.max_range * ang.sin(),
            );
            for (ix, iy) in supercover_line(&self.grid, robot.position(), end) {
                let i = self.grid.index(ix, iy);
                if *self.walls.get(ix, iy) {
                    observed.insert((ix, iy), CellState::Occupied);
                    break;
                }
                if count[i] > 0 {
                    break; // object surface: masked out of the background
                }
                observed.entry((ix, iy)).or_insert(CellState::Free);
            }
        }

        SenseFrame {
            candidates,
            observed_cells: observed.into_iter().collect(),
        }
    }
}

/// Box-Muller standard normal draw; deterministic given the generator state.
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
