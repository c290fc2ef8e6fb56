//! Closed-loop episode runner: sense -> map update -> belief update ->
//! lifecycle -> (waypoint, plan, follow), deterministic for a fixed seed.

use std::collections::BTreeSet;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::eval::{random_waypoint, PatrolState};
use crate::explore::{
    follow_step, plan_path, project_occupancy, sample_next_waypoint, search_success,
    OccupancyGrid, WaypointHistory,
};
use crate::export::{snapshot, MapSnapshot};
use crate::geometry::{centroid, densify_hull, Point2, Pose2D};
use crate::grid::rasterize_hull;
use crate::lifecycle::{apply_removal, reidentify};
use crate::priority::{compose_priority_map, Query, RelevancyOracle};
use crate::semantic_map::{
    associate, associate_step1, expected_objects, insert_new, merge, update_background,
    MapObject, SemanticMap,
};
use crate::stationarity::{
    bayes_update, inject_decay, measure_change, observed_absence, StationarityBelief,
};
use crate::world::{world_state, SimWorld};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Ours,
    Random,
    Patrol,
    /// Keeps the robot at its start pose; useful for staged replays.
    Hold,
}

impl Policy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Policy::Ours => "ours",
            Policy::Random => "random",
            Policy::Patrol => "patrol",
            Policy::Hold => "hold",
        }
    }

    fn tag(&self) -> u64 {
        match self {
            Policy::Ours => 1,
            Policy::Random => 2,
            Policy::Patrol => 3,
            Policy::Hold => 4,
        }
    }
}

impl FromStr for Policy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Policy> {
        match s {
            "ours" => Ok(Policy::Ours),
            "random" => Ok(Policy::Random),
            "patrol" => Ok(Policy::Patrol),
            "hold" => Ok(Policy::Hold),
            other => Err(Error::InvalidInput(format!("unknown policy `{other}`"))),
        }
    }
}

/// Episode task: the map-maintenance query or an object search. Search
/// targets resolve to a ground-truth object id for the success check.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub query: Query,
    pub target_id: Option<String>,
}

impl Task {
    pub fn maintenance() -> Task {
        Task {
            query: Query::Maintenance,
            target_id: None,
        }
    }

    pub fn find(text: &str, target_id: Option<&str>) -> Task {
        Task {
            query: Query::FindObject {
                text: text.to_string(),
            },
            target_id: target_id.map(str::to_string),
        }
    }

    /// Parses `maintain` or `find:<query text>[@<target object id>]`.
    pub fn parse(s: &str) -> Result<Task> {
        if s == "maintain" || s == "maintenance" {
            return Ok(Task::maintenance());
        }
        if let Some(rest) = s.strip_prefix("find:") {
            if rest.is_empty() {
                return Err(Error::InvalidInput("find task needs a query text".into()));
            }
            let (text, target) = match rest.rsplit_once('@') {
                Some((text, target)) if !target.is_empty() => (text, Some(target)),
                _ => (rest, None),
            };
            return Ok(Task::find(text, target));
        }
        Err(Error::InvalidInput(format!(
            "unknown task `{s}` (expected `maintain` or `find:<query>[@<target>]`)"
        )))
    }

    pub fn label(&self) -> String {
        match &self.query {
            Query::Maintenance => "maintain".to_string(),
            Query::FindObject { text } => format!("find:{text}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeliefEventKind {
    Observed,
    Decay,
    Absence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleEventKind {
    Inserted,
    Removed,
    Reintroduced,
    Translated,
    Merged,
}

#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum EpisodeEvent {
    Belief {
        t: f64,
        object_id: u64,
        class: String,
        e_v: f64,
        zeta: f64,
        event: BeliefEventKind,
    },
    Lifecycle {
        t: f64,
        kind: LifecycleEventKind,
        ids: Vec<u64>,
    },
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub active_waypoint_x: f64,
    pub active_waypoint_y: f64,
    pub replans: u64,
}

#[derive(Clone, Debug)]
pub struct EpisodeOptions {
    pub policy: Policy,
    pub task: Task,
    pub time_budget: f64,
    pub seed: u64,
    /// Start from a synthesized map of the initial scene (the usual mode).
    pub use_prior_map: bool,
    /// Disables absence handling, decay, and lifecycle; the ablation that
    /// cannot update mapped objects.
    pub change_detection: bool,
}

impl EpisodeOptions {
    pub fn new(policy: Policy, task: Task, time_budget: f64, seed: u64) -> EpisodeOptions {
        EpisodeOptions {
            policy,
            task,
            time_budget,
            seed,
            use_prior_map: true,
            change_detection: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub events: Vec<EpisodeEvent>,
    pub trajectory: Vec<TrajectorySample>,
    pub map: SemanticMap,
    pub frames: usize,
    pub icp_calls: usize,
    pub success_time: Option<f64>,
    pub snapshots: Vec<MapSnapshot>,
    pub final_pose: Pose2D,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn fold_str(seed: u64, s: &str) -> u64 {
    let mut h = seed ^ 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn episode_seed(scenario_seed: u64, seed: u64, policy: Policy, task: &Task) -> u64 {
    let mut s = splitmix64(scenario_seed);
    s = splitmix64(s ^ seed);
    s = splitmix64(s ^ policy.tag());
    splitmix64(fold_str(s, &task.label()))
}

/// Builds the believed map at the start of an episode from the initial
/// scene: every object present at t = 0 with a fresh belief, walls marked
/// occupied and the remaining workspace observed free.
pub fn synthesize_prior_map(world: &SimWorld, config: &Config) -> SemanticMap {
    let spec = world.grid;
    let mut map = SemanticMap::new(spec);
    for i in 0..map.background.data.len() {
        map.background.data[i] = if world.walls().data[i] {
            crate::grid::CellState::Occupied
        } else {
            crate::grid::CellState::Free
        };
    }
    for obj in world_state(&world.scenario, 0.0) {
        let points = crate::semantic_map::voxel_downsample(
            &densify_hull(&obj.hull, world.scenario.sensor.points_per_object),
            config.similarity.d_voxel,
        );
        if points.is_empty() {
            continue;
        }
        let id = map.next_id;
        map.next_id += 1;
        let c = centroid(&points);
        map.active.insert(
            id,
            MapObject {
                id,
                pose: Pose2D::new(c.x, c.y, 0.0),
                bbox: crate::geometry::Aabb::of_points(&points).unwrap(),
                points,
                feature: world.scenario.class_embeddings[&obj.class_name].clone(),
                class_name: obj.class_name.clone(),
                stationarity_label: obj.stationarity_label,
                t_first: 0.0,
                t_disappear: None,
                belief: StationarityBelief::fresh(&config.belief, 0.0),
                last_seen: 0.0,
                obs_count: 1,
            },
        );
    }
    map
}

/// Resolves the ground-truth target for a find task: an explicit id wins;
/// otherwise the first object whose class name appears in the query text;
/// otherwise the object introduced by the last scripted add event.
pub fn resolve_target(world: &SimWorld, task: &Task) -> Result<Option<String>> {
    let Query::FindObject { text } = &task.query else {
        return Ok(None);
    };
    if let Some(id) = &task.target_id {
        if !world.scenario.objects.iter().any(|o| &o.id == id) {
            return Err(Error::InvalidInput(format!("unknown target object `{id}`")));
        }
        return Ok(Some(id.clone()));
    }
    let lower = text.to_lowercase();
    for obj in &world.scenario.objects {
        if lower.contains(&obj.class_name.to_lowercase()) {
            return Ok(Some(obj.id.clone()));
        }
    }
    if let Some(ev) = world
        .scenario
        .changes
        .iter()
        .rev()
        .find(|e| e.kind == crate::world::ChangeKind::Add)
    {
        return Ok(Some(ev.object_id.clone()));
    }
    Err(Error::InvalidInput(format!(
        "cannot resolve a search target for query `{text}`"
    )))
}

struct WaypointState {
    current: Option<Point2>,
    path: Vec<Point2>,
    age: f64,
    replans: u64,
    /// The follower finished the planned path (which may stop one snapped
    /// cell short of the requested waypoint).
    completed: bool,
}

pub fn run_episode(world: &SimWorld, config: &Config, opts: &EpisodeOptions) -> Result<EpisodeResult> {
    config.validate()?;
    let scenario = &world.scenario;
    let mut rng =
        ChaCha12Rng::seed_from_u64(episode_seed(scenario.rng_seed, opts.seed, opts.policy, &opts.task));
    let mut map = if opts.use_prior_map {
        synthesize_prior_map(world, config)
    } else {
        SemanticMap::new(world.grid)
    };
    let label_oracle = scenario.label_oracle();
    let relevancy = RelevancyOracle::from_table(&scenario.relevancy_table);
    let priority_params = config.priority_params();
    let target_id = resolve_target(world, &opts.task)?;

    let mut robot = scenario.robot_start;
    let mut hist = WaypointHistory::new(world.grid, &config.sampler);
    let mut patrol: Option<PatrolState> = None;
    let mut wp = WaypointState {
        current: None,
        path: Vec::new(),
        age: 0.0,
        replans: 0,
        completed: false,
    };

    let mut events = Vec::new();
    let mut trajectory = Vec::new();
    let mut snapshots = Vec::new();
    let mut icp_calls = 0usize;
    let mut success_time: Option<f64> = None;

    let frame_period = config.episode.frame_period;
    let frames = (opts.time_budget / frame_period).ceil() as usize;
    let substeps = (frame_period / config.robot.dt).round().max(1.0) as usize;
    let snap_every = if config.episode.snapshot_interval > 0.0 {
        (config.episode.snapshot_interval / frame_period).round().max(1.0) as usize
    } else {
        0
    };

    'frames: for frame in 0..frames {
        let t = frame as f64 * frame_period;

        // Sense and update the believed scene.
        let sense = world.sense(t, &robot, &mut rng);
        let mut candidate_cells: BTreeSet<(usize, usize)> = BTreeSet::new();
        for cand in &sense.candidates {
            candidate_cells.extend(rasterize_hull(&world.grid, &cand.points));
        }
        let observed: Vec<_> = sense
            .observed_cells
            .iter()
            .filter(|(cell, _)| !candidate_cells.contains(cell))
            .cloned()
            .collect();
        update_background(&mut map, &observed);

        let expected = expected_objects(&map, &robot, &scenario.sensor, &config.similarity);
        let outcome = if opts.change_detection {
            associate(&sense.candidates, &expected, &config.similarity)
        } else {
            associate_step1(&sense.candidates, &expected, &config.similarity)
        };
        icp_calls += outcome.icp_calls;

        let mut matched: BTreeSet<u64> = BTreeSet::new();
        for (ci, assignment) in outcome.assignments.iter().enumerate() {
            let Some(id) = assignment else { continue };
            let before = map.active[id].clone();
            merge(&mut map, *id, &sense.candidates[ci], t, &config.similarity)?;
            let obj = map.active.get_mut(id).expect("merged object is active");
            if opts.change_detection {
                let e = measure_change(&before, obj);
                bayes_update(&mut obj.belief, e, &config.decay, &config.belief, t);
            }
            events.push(EpisodeEvent::Belief {
                t,
                object_id: *id,
                class: obj.class_name.clone(),
                e_v: obj.belief.expected(),
                zeta: obj.belief.zeta,
                event: BeliefEventKind::Observed,
            });
            matched.insert(*id);
        }

        if opts.change_detection {
            // Expected but unmatched: observed absence.
            for view in &expected {
                if matched.contains(&view.id) {
                    continue;
                }
                let obj = map.active.get_mut(&view.id).expect("expected object is active");
                observed_absence(&mut obj.belief, &config.decay, &config.belief, t);
                if obj.t_disappear.is_none() {
                    obj.t_disappear = Some(t);
                }
                events.push(EpisodeEvent::Belief {
                    t,
                    object_id: view.id,
                    class: obj.class_name.clone(),
                    e_v: obj.belief.expected(),
                    zeta: obj.belief.zeta,
                    event: BeliefEventKind::Absence,
                });
            }
            // Out-of-view objects: delayed decay toward the removal clip.
            let expected_ids: BTreeSet<u64> = expected.iter().map(|v| v.id).collect();
            for obj in map.active.values_mut() {
                if expected_ids.contains(&obj.id) {
                    continue;
                }
                let before = obj.belief;
                inject_decay(
                    &mut obj.belief,
                    obj.stationarity_label,
                    &config.decay,
                    config.lifecycle.theta_removal,
                    obj.last_seen,
                    t,
                );
                if obj.belief != before {
                    events.push(EpisodeEvent::Belief {
                        t,
                        object_id: obj.id,
                        class: obj.class_name.clone(),
                        e_v: obj.belief.expected(),
                        zeta: obj.belief.zeta,
                        event: BeliefEventKind::Decay,
                    });
                }
            }
            for id in apply_removal(&mut map, &config.lifecycle, t) {
                events.push(EpisodeEvent::Lifecycle {
                    t,
                    kind: LifecycleEventKind::Removed,
                    ids: vec![id],
                });
            }
        }

        // Unmatched candidates become new objects.
        for (ci, assignment) in outcome.assignments.iter().enumerate() {
            if assignment.is_none() {
                let id = insert_new(
                    &mut map,
                    &sense.candidates[ci],
                    &label_oracle,
                    t,
                    &config.belief,
                    &config.similarity,
                );
                events.push(EpisodeEvent::Lifecycle {
                    t,
                    kind: LifecycleEventKind::Inserted,
                    ids: vec![id],
                });
            }
        }

        if opts.change_detection {
            for rec in reidentify(&mut map, &config.lifecycle, &config.similarity, t) {
                events.push(EpisodeEvent::Lifecycle {
                    t,
                    kind: if rec.was_missing {
                        LifecycleEventKind::Reintroduced
                    } else {
                        LifecycleEventKind::Translated
                    },
                    ids: vec![rec.kept, rec.absorbed],
                });
            }
        }

        if snap_every > 0 && frame % snap_every == 0 {
            snapshots.push(snapshot(&map, t));
        }

        // Success check for search tasks, then motion over the frame period.
        let target_state = target_id.as_ref().and_then(|tid| {
            world_state(scenario, t)
                .into_iter()
                .find(|o| &o.id == tid)
                .map(|o| {
                    let cells = rasterize_hull(&world.grid, &o.hull);
                    (centroid(&o.footprint), cells, world.truth_occupancy(t))
                })
        });
        if let Some((c, cells, truth)) = &target_state {
            if search_success(
                &robot,
                *c,
                cells,
                truth,
                scenario.sensor.fov_half_angle,
                config.episode.r_succ,
            ) {
                success_time = Some(t);
            }
        }
        if success_time.is_some() {
            trajectory.push(sample_of(t, &robot, &wp));
            break 'frames;
        }

        if opts.policy != Policy::Hold {
            let occ = project_occupancy(&map, config.robot.radius);
            maintain_waypoint(
                config,
                opts,
                &map,
                &occ,
                &robot,
                &mut wp,
                &mut hist,
                &mut patrol,
                &relevancy,
                &priority_params,
                &mut rng,
                frame_period,
            )?;

            for k in 0..substeps {
                if wp.path.is_empty() {
                    break;
                }
                let out = follow_step(&robot, &wp.path, &config.robot, &occ);
                robot = out.pose;
                if out.replan {
                    wp.replans += 1;
                    wp.path.clear();
                }
                if let Some((c, cells, truth)) = &target_state {
                    let t_sub = t + (k + 1) as f64 * config.robot.dt;
                    if search_success(
                        &robot,
                        *c,
                        cells,
                        truth,
                        scenario.sensor.fov_half_angle,
                        config.episode.r_succ,
                    ) {
                        success_time = Some(t_sub);
                        break;
                    }
                }
                if out.reached_end {
                    wp.completed = true;
                    break;
                }
            }
        }

        trajectory.push(sample_of(t, &robot, &wp));
        if success_time.is_some() {
            break 'frames;
        }
    }

    Ok(EpisodeResult {
        events,
        frames: trajectory.len(),
        trajectory,
        icp_calls,
        success_time,
        snapshots,
        final_pose: robot,
        map,
    })
}

fn sample_of(t: f64, robot: &Pose2D, wp: &WaypointState) -> TrajectorySample {
    let (wx, wy) = wp
        .current
        .map(|w| (w.x, w.y))
        .unwrap_or((f64::NAN, f64::NAN));
    TrajectorySample {
        t,
        x: robot.x,
        y: robot.y,
        heading: robot.heading,
        active_waypoint_x: wx,
        active_waypoint_y: wy,
        replans: wp.replans,
    }
}

#[allow(clippy::too_many_arguments)]
fn maintain_waypoint(
    config: &Config,
    opts: &EpisodeOptions,
    map: &SemanticMap,
    occ: &OccupancyGrid,
    robot: &Pose2D,
    wp: &mut WaypointState,
    hist: &mut WaypointHistory,
    patrol: &mut Option<PatrolState>,
    relevancy: &RelevancyOracle,
    priority_params: &crate::priority::PriorityParams,
    rng: &mut ChaCha12Rng,
    frame_period: f64,
) -> Result<()> {
    wp.age += frame_period;
    let reached = wp.completed
        || wp
            .current
            .map(|w| robot.position().dist(w) <= config.robot.goal_tolerance)
            .unwrap_or(false);
    let mut need_new = wp.current.is_none()
        || reached
        || wp.age >= config.episode.waypoint_timeout;

    for _ in 0..3 {
        if need_new {
            wp.current = match opts.policy {
                Policy::Ours => {
                    let f_task =
                        compose_priority_map(map, &opts.task.query, relevancy, priority_params)?;
                    Some(sample_next_waypoint(
                        &f_task,
                        hist,
                        robot.position(),
                        config.sampler.m_candidates,
                        occ,
                        rng,
                    ))
                }
                Policy::Random => random_waypoint(occ, robot.position(), rng),
                Policy::Patrol => {
                    let state = patrol.get_or_insert_with(|| {
                        PatrolState::new(occ, robot.position(), 2.0)
                    });
                    state.next()
                }
                Policy::Hold => None,
            };
            wp.age = 0.0;
            wp.completed = false;
            if wp.current.is_none() {
                wp.path.clear();
                return Ok(());
            }
        }
        let goal = wp.current.expect("waypoint present");
        match plan_path(occ, robot.position(), goal) {
            Some(path) => {
                wp.path = path;
                return Ok(());
            }
            None => {
                if let (Policy::Patrol, Some(state)) = (opts.policy, patrol.as_mut()) {
                    state.advance();
                }
                wp.current = None;
                wp.path.clear();
                need_new = true;
            }
        }
    }
    Ok(())
}

/// Writes the event list as JSON lines.
pub fn events_to_jsonl(events: &[EpisodeEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("event serializes"));
        out.push('\n');
    }
    out
}

/// Trajectory CSV with the documented column set.
pub fn trajectory_to_csv(samples: &[TrajectorySample]) -> String {
    let mut out = String::from("t,x,y,heading,active_waypoint_x,active_waypoint_y,replans\n");
    for s in samples {
        out.push_str(&format!(
            "{:.3},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
            s.t, s.x, s.y, s.heading, s.active_waypoint_x, s.active_waypoint_y, s.replans
        ));
    }
    out
}

#[derive(Clone, Debug, Default)]
pub struct EventSummary {
    pub inserted: Vec<(f64, u64)>,
    pub removed: Vec<(f64, u64)>,
    pub reintroduced: Vec<(f64, u64, u64)>,
    pub translated: Vec<(f64, u64, u64)>,
}

pub fn summarize_events(events: &[EpisodeEvent]) -> EventSummary {
    let mut s = EventSummary::default();
    for e in events {
        if let EpisodeEvent::Lifecycle { t, kind, ids } = e {
            match kind {
                LifecycleEventKind::Inserted => s.inserted.push((*t, ids[0])),
                LifecycleEventKind::Removed => s.removed.push((*t, ids[0])),
                LifecycleEventKind::Reintroduced => s.reintroduced.push((*t, ids[0], ids[1])),
                LifecycleEventKind::Translated => s.translated.push((*t, ids[0], ids[1])),
                LifecycleEventKind::Merged => {}
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_parsing() {
        assert_eq!(Task::parse("maintain").unwrap(), Task::maintenance());
        let t = Task::parse("find:Where is my plate?").unwrap();
        assert_eq!(
            t.query,
            Query::FindObject {
                text: "Where is my plate?".into()
            }
        );
        assert_eq!(t.target_id, None);
        let t = Task::parse("find:Where is my plate?@plate_1").unwrap();
        assert_eq!(t.target_id.as_deref(), Some("plate_1"));
        assert!(Task::parse("explore").is_err());
        assert!(Task::parse("find:").is_err());
    }

    #[test]
    fn seeds_differ_by_policy_and_task() {
        let t1 = Task::maintenance();
        let t2 = Task::find("book", None);
        let a = episode_seed(7, 0, Policy::Ours, &t1);
        let b = episode_seed(7, 0, Policy::Random, &t1);
        let c = episode_seed(7, 0, Policy::Ours, &t2);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, episode_seed(7, 0, Policy::Ours, &t1));
    }
}
