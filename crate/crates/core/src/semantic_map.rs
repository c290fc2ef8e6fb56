//! Believed scene: object library, missing-object library, background grid,
//! and the two-step candidate-to-object association.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{centroid, Aabb, Point2, Pose2D};
use crate::grid::{rasterize_hull, supercover_line, CellState, Grid, GridSpec};
use crate::icp::icp_align;
use crate::logging;
use crate::stationarity::{BeliefConfig, StationarityBelief, StationarityLabel};
use crate::world::SensorSpec;

/// One detection extracted from the current view.
#[derive(Clone, Debug)]
pub struct ObjectCandidate {
    /// Point-cloud centroid with identity heading.
    pub pose: Pose2D,
    pub points: Vec<Point2>,
    /// Unit-norm visual feature.
    pub feature: Vec<f64>,
    pub class_name: String,
}

/// Persistent object instance in the believed map.
#[derive(Clone, Debug)]
pub struct MapObject {
    pub id: u64,
    pub pose: Pose2D,
    pub points: Vec<Point2>,
    pub bbox: Aabb,
    pub feature: Vec<f64>,
    pub class_name: String,
    pub stationarity_label: StationarityLabel,
    pub t_first: f64,
    pub t_disappear: Option<f64>,
    pub belief: StationarityBelief,
    pub last_seen: f64,
    /// Number of merged observations; weights the running feature average.
    pub obs_count: u64,
}

impl MapObject {
    pub fn centroid(&self) -> Point2 {
        centroid(&self.points)
    }

    pub fn expected_stationarity(&self) -> f64 {
        self.belief.expected()
    }
}

#[derive(Clone, Debug)]
pub struct SemanticMap {
    pub active: BTreeMap<u64, MapObject>,
    pub missing: BTreeMap<u64, MapObject>,
    pub background: Grid<CellState>,
    pub next_id: u64,
}

impl SemanticMap {
    pub fn new(spec: GridSpec) -> SemanticMap {
        SemanticMap {
            active: BTreeMap::new(),
            missing: BTreeMap::new(),
            background: Grid::filled(spec, CellState::Unknown),
            next_id: 0,
        }
    }

    pub fn spec(&self) -> GridSpec {
        self.background.spec
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub tau_expected: f64,
    pub tau_geo: f64,
    pub tau_sem: f64,
    pub d_voxel: f64,
    pub d_icp: f64,
    pub d_max: f64,
    pub icp_max_iters: usize,
    pub icp_tol: f64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            tau_expected: 0.3,
            tau_geo: 0.4,
            tau_sem: 0.8,
            d_voxel: 0.05,
            d_icp: 0.1,
            d_max: 4.0,
            icp_max_iters: 50,
            icp_tol: 1e-4,
        }
    }
}

pub fn normalize_feature(v: &[f64]) -> Vec<f64> {
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return v.to_vec();
    }
    v.iter().map(|x| x / norm).collect()
}

/// Cosine similarity of two feature vectors.
pub fn semantic_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na <= 0.0 || nb <= 0.0 {
        return Err(Error::InvalidInput("zero-norm feature vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// Fraction of candidate points with a nearest neighbor in `visible` within
/// `d_voxel`, normalized by the smaller cloud and clipped to 1.
pub fn geometric_similarity(
    candidate_points: &[Point2],
    visible: &[Point2],
    cfg: &SimilarityConfig,
) -> f64 {
    if candidate_points.is_empty() || visible.is_empty() {
        return 0.0;
    }
    let r2 = cfg.d_voxel * cfg.d_voxel;
    let mut close = 0usize;
    for p in candidate_points {
        if visible.iter().any(|q| p.dist_sq(*q) <= r2) {
            close += 1;
        }
    }
    let denom = candidate_points.len().min(visible.len()) as f64;
    (close as f64 / denom).min(1.0)
}

/// An active object predicted visible from the current pose, together with
/// the subset of its stored points that are actually in view.
#[derive(Clone, Debug)]
pub struct ExpectedView {
    pub id: u64,
    pub class_name: String,
    pub feature: Vec<f64>,
    pub points: Vec<Point2>,
    pub visible: Vec<Point2>,
}

/// Visibility gate over the active library: an object is expected when the
/// fraction of its stored points that are in range, inside the field of
/// view, and unoccluded by the believed scene reaches `tau_expected`.
pub fn expected_objects(
    map: &SemanticMap,
    robot: &Pose2D,
    sensor: &SensorSpec,
    cfg: &SimilarityConfig,
) -> Vec<ExpectedView> {
    let spec = map.spec();
    let mut count = vec![0u8; spec.len()];
    let mut owner = vec![u64::MAX; spec.len()];
    for obj in map.active.values() {
        for (ix, iy) in rasterize_hull(&spec, &obj.points) {
            let i = spec.index(ix, iy);
            count[i] = count[i].saturating_add(1);
            owner[i] = obj.id;
        }
    }
    let robot_cell = spec.cell_of_clamped(robot.position());

    let mut out = Vec::new();
    for obj in map.active.values() {
        let mut visible = Vec::new();
        for p in &obj.points {
            if robot.position().dist(*p) > cfg.d_max {
                continue;
            }
            if robot.bearing_to(*p).abs() > sensor.fov_half_angle {
                continue;
            }
            let target_cell = spec.cell_of_clamped(*p);
            let mut clear = true;
            for (ix, iy) in supercover_line(&spec, robot.position(), *p) {
                // Neither the robot's own cell nor the cell holding the
                // queried point can occlude it.
                if Some((ix, iy)) == robot_cell || Some((ix, iy)) == target_cell {
                    continue;
                }
                let i = spec.index(ix, iy);
                if *map.background.get(ix, iy) == CellState::Occupied
                    || count[i] >= 2
                    || (count[i] == 1 && owner[i] != obj.id)
                {
                    clear = false;
                    break;
                }
            }
            if clear {
                visible.push(*p);
            }
        }
        if obj.points.is_empty() {
            continue;
        }
        let fraction = visible.len() as f64 / obj.points.len() as f64;
        if fraction >= cfg.tau_expected {
            out.push(ExpectedView {
                id: obj.id,
                class_name: obj.class_name.clone(),
                feature: obj.feature.clone(),
                points: obj.points.clone(),
                visible,
            });
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatchStep {
    Geometric,
    SemanticIcp,
}

#[derive(Clone, Debug)]
pub struct MatchRecord {
    pub candidate_idx: usize,
    pub object_id: u64,
    pub step: MatchStep,
    pub s_geo: f64,
    pub s_sem: f64,
    pub icp_rmse: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct AssociationOutcome {
    /// Candidate index -> matched object id (parallel to the candidate list).
    pub assignments: Vec<Option<u64>>,
    pub matches: Vec<MatchRecord>,
    pub icp_calls: usize,
}

/// Two-step association. Step 1 assumes objects are stationary and pairs
/// candidates with expected objects greedily by geometric similarity,
/// accepting only when both the geometric and semantic thresholds pass.
/// Step 2 hands each remaining candidate to the semantically conditioned
/// ICP against the remaining unmatched objects. Candidates are processed
/// largest-first (by point count) so well-observed objects claim matches
/// before fragments do; matching is injective in both directions.
pub fn associate(
    candidates: &[ObjectCandidate],
    expected: &[ExpectedView],
    cfg: &SimilarityConfig,
) -> AssociationOutcome {
    associate_impl(candidates, expected, cfg, true)
}

/// Step-1-only association (no ICP rematching); used by the
/// no-change-detection ablation, which cannot re-register moved objects.
pub fn associate_step1(
    candidates: &[ObjectCandidate],
    expected: &[ExpectedView],
    cfg: &SimilarityConfig,
) -> AssociationOutcome {
    associate_impl(candidates, expected, cfg, false)
}

fn associate_impl(
    candidates: &[ObjectCandidate],
    expected: &[ExpectedView],
    cfg: &SimilarityConfig,
    run_step2: bool,
) -> AssociationOutcome {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        candidates[b]
            .points
            .len()
            .cmp(&candidates[a].points.len())
            .then(a.cmp(&b))
    });

    let mut outcome = AssociationOutcome {
        assignments: vec![None; candidates.len()],
        ..Default::default()
    };
    let mut unmatched: Vec<&ExpectedView> = expected.iter().collect();

    // Step 1: stationary-scene matching on geometric overlap.
    for &ci in &order {
        let cand = &candidates[ci];
        let mut best: Option<(usize, f64)> = None;
        for (k, obj) in unmatched.iter().enumerate() {
            let s = geometric_similarity(&cand.points, &obj.visible, cfg);
            if best.map_or(true, |(_, bs)| s > bs) {
                best = Some((k, s));
            }
        }
        let Some((k, s_geo)) = best else { continue };
        let obj = unmatched[k];
        let s_sem = semantic_similarity(&cand.feature, &obj.feature).unwrap_or(-1.0);
        if s_geo > cfg.tau_geo && s_sem > cfg.tau_sem {
            if cand.points.len() < 5 {
                logging::debug(&format!(
                    "low-support match: candidate {ci} has {} points",
                    cand.points.len()
                ));
            }
            outcome.assignments[ci] = Some(obj.id);
            outcome.matches.push(MatchRecord {
                candidate_idx: ci,
                object_id: obj.id,
                step: MatchStep::Geometric,
                s_geo,
                s_sem,
                icp_rmse: None,
            });
            unmatched.remove(k);
        }
    }

    if !run_step2 {
        return outcome;
    }

    // Step 2: remaining candidates may have moved; verify by ICP.
    for &ci in &order {
        if outcome.assignments[ci].is_some() {
            continue;
        }
        let cand = &candidates[ci];
        let (hit, icp_used) = semantic_icp_pool(
            &cand.feature,
            &cand.points,
            unmatched.iter().map(|o| (o.id, &o.feature, &o.points)),
            cfg,
        );
        if icp_used {
            outcome.icp_calls += 1;
        }
        if let Some(hit) = hit {
            outcome.assignments[ci] = Some(hit.id);
            outcome.matches.push(MatchRecord {
                candidate_idx: ci,
                object_id: hit.id,
                step: MatchStep::SemanticIcp,
                s_geo: 0.0,
                s_sem: hit.s_sem,
                icp_rmse: Some(hit.rmse),
            });
            unmatched.retain(|o| o.id != hit.id);
        }
    }

    outcome
}

#[derive(Clone, Copy, Debug)]
pub struct SemanticIcpHit {
    pub id: u64,
    pub s_sem: f64,
    pub rmse: f64,
    /// Transform that registers the query points onto the matched object.
    pub transform: crate::geometry::RigidTransform2,
}

/// Semantically conditioned ICP over a pool of `(id, feature, points)`.
/// Picks the single best semantic match (ties go to the newest id), and
/// only that one is verified by ICP — at most one registration per call.
/// The boolean reports whether an ICP registration actually ran.
pub fn semantic_icp_pool<'a, I>(
    feature: &[f64],
    points: &[Point2],
    pool: I,
    cfg: &SimilarityConfig,
) -> (Option<SemanticIcpHit>, bool)
where
    I: Iterator<Item = (u64, &'a Vec<f64>, &'a Vec<Point2>)>,
{
    let mut best: Option<(u64, f64, &'a Vec<Point2>)> = None;
    for (id, f, pts) in pool {
        let s = match semantic_similarity(feature, f) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let better = match best {
            None => true,
            Some((bid, bs, _)) => s > bs || (s == bs && id > bid),
        };
        if better {
            best = Some((id, s, pts));
        }
    }
    let Some((id, s_sem, target)) = best else {
        return (None, false);
    };
    if s_sem <= cfg.tau_sem || points.is_empty() || target.is_empty() {
        return (None, false);
    }
    let result = icp_align(points, target, cfg);
    if result.rmse <= cfg.d_icp {
        (
            Some(SemanticIcpHit {
                id,
                s_sem,
                rmse: result.rmse,
                transform: result.transform,
            }),
            true,
        )
    } else {
        (None, true)
    }
}

/// Keeps the first point seen in each `d_voxel` cell; order-stable.
pub fn voxel_downsample(points: &[Point2], d_voxel: f64) -> Vec<Point2> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for p in points {
        let key = (
            (p.x / d_voxel).floor() as i64,
            (p.y / d_voxel).floor() as i64,
        );
        if seen.insert(key) {
            out.push(*p);
        }
    }
    out
}

#[derive(Clone, Copy, Debug)]
pub struct MergeReport {
    pub centroid_before: Point2,
    pub centroid_after: Point2,
}

/// Replaces the object's geometry with the matched candidate's observation
/// and folds the candidate feature into the running average.
///
/// A clipped sliver of a view (field-of-view edge, close range) must not
/// overwrite a complete stored cloud: its centroid is off the true one and
/// would register as a fake geometric change, and the shrunken cloud then
/// mismatches the next view. The geometry is replaced only when the new
/// cloud carries at least half the stored point count; smaller views still
/// refresh the feature, timestamps, and belief bookkeeping.
pub fn merge(
    map: &mut SemanticMap,
    obj_id: u64,
    candidate: &ObjectCandidate,
    t: f64,
    cfg: &SimilarityConfig,
) -> Result<MergeReport> {
    let obj = map
        .active
        .get_mut(&obj_id)
        .ok_or(Error::UnknownObject(obj_id))?;
    let before = centroid(&obj.points);
    let new_points = voxel_downsample(&candidate.points, cfg.d_voxel);
    if 2 * new_points.len() >= obj.points.len() {
        obj.points = new_points;
        obj.pose = candidate.pose;
        obj.bbox = Aabb::of_points(&obj.points).unwrap_or(obj.bbox);
    }
    let n = obj.obs_count as f64;
    let fused: Vec<f64> = obj
        .feature
        .iter()
        .zip(&candidate.feature)
        .map(|(a, b)| (a * n + b) / (n + 1.0))
        .collect();
    obj.feature = normalize_feature(&fused);
    obj.obs_count += 1;
    obj.last_seen = t;
    obj.t_disappear = None;
    Ok(MergeReport {
        centroid_before: before,
        centroid_after: centroid(&obj.points),
    })
}

/// Adds an unmatched candidate as a brand-new object instance.
pub fn insert_new(
    map: &mut SemanticMap,
    candidate: &ObjectCandidate,
    label_oracle: &BTreeMap<String, StationarityLabel>,
    t: f64,
    belief_cfg: &BeliefConfig,
    cfg: &SimilarityConfig,
) -> u64 {
    let id = map.next_id;
    map.next_id += 1;
    let points = voxel_downsample(&candidate.points, cfg.d_voxel);
    let bbox = Aabb::of_points(&points).unwrap_or(Aabb {
        min_x: candidate.pose.x,
        min_y: candidate.pose.y,
        max_x: candidate.pose.x,
        max_y: candidate.pose.y,
    });
    let label = label_oracle
        .get(&candidate.class_name)
        .copied()
        .unwrap_or(StationarityLabel::Dynamic);
    map.active.insert(
        id,
        MapObject {
            id,
            pose: candidate.pose,
            points,
            bbox,
            feature: normalize_feature(&candidate.feature),
            class_name: candidate.class_name.clone(),
            stationarity_label: label,
            t_first: t,
            t_disappear: None,
            belief: StationarityBelief::fresh(belief_cfg, t),
            last_seen: t,
            obs_count: 1,
        },
    );
    id
}

/// Latest observation wins, cell by cell. The caller is responsible for
/// excluding cells covered by current candidates.
pub fn update_background(map: &mut SemanticMap, observed: &[((usize, usize), CellState)]) {
    for &((ix, iy), state) in observed {
        map.background.set(ix, iy, state);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stationarity::BeliefConfig;

    fn unit(dim: usize, axis: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        v
    }

    fn ring(cx: f64, cy: f64, r: f64, n: usize) -> Vec<Point2> {
        (0..n)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                Point2::new(cx + r * a.cos(), cy + r * a.sin())
            })
            .collect()
    }

    fn view(id: u64, feature: Vec<f64>, points: Vec<Point2>) -> ExpectedView {
        ExpectedView {
            id,
            class_name: "x".into(),
            feature,
            visible: points.clone(),
            points,
        }
    }

    fn candidate(feature: Vec<f64>, points: Vec<Point2>) -> ObjectCandidate {
        let c = centroid(&points);
        ObjectCandidate {
            pose: Pose2D::new(c.x, c.y, 0.0),
            points,
            feature,
            class_name: "x".into(),
        }
    }

    #[test]
    fn cosine_similarity_basics() {
        let a = unit(4, 0);
        let b = unit(4, 1);
        assert!((semantic_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(semantic_similarity(&a, &b).unwrap().abs() < 1e-12);
        // 60 degrees apart.
        let c = normalize_feature(&[0.5, 3f64.sqrt() / 2.0, 0.0, 0.0]);
        assert!((semantic_similarity(&a, &c).unwrap() - 0.5).abs() < 1e-12);
        assert!(semantic_similarity(&a, &[0.0; 4]).is_err());
    }

    #[test]
    fn geometric_similarity_counts_close_points() {
        let cfg = SimilarityConfig::default();
        let a = ring(0.0, 0.0, 0.5, 10);
        assert!((geometric_similarity(&a, &a, &cfg) - 1.0).abs() < 1e-12);
        let far = ring(10.0, 0.0, 0.5, 10);
        assert_eq!(geometric_similarity(&a, &far, &cfg), 0.0);
        assert_eq!(geometric_similarity(&a, &[], &cfg), 0.0);

        // 10-point candidate, 7 points near a 20-point visible set -> 0.7.
        let mut visible: Vec<Point2> = (0..20).map(|i| Point2::new(i as f64, 0.0)).collect();
        let candidate: Vec<Point2> = (0..10)
            .map(|i| {
                if i < 7 {
                    Point2::new(i as f64, 0.02)
                } else {
                    Point2::new(100.0 + i as f64, 100.0)
                }
            })
            .collect();
        // Brute-force oracle over all pairs.
        let oracle = candidate
            .iter()
            .filter(|p| visible.iter().any(|q| p.dist(*q) <= cfg.d_voxel))
            .count() as f64
            / candidate.len().min(visible.len()) as f64;
        assert!((oracle - 0.7).abs() < 1e-12);
        assert!((geometric_similarity(&candidate, &visible, &cfg) - 0.7).abs() < 1e-12);
        visible.truncate(20);
    }

    #[test]
    fn geometric_similarity_clips_at_one() {
        let cfg = SimilarityConfig::default();
        // Many candidate points near a tiny visible set: the raw ratio
        // exceeds one and must clip.
        let visible = vec![Point2::new(0.0, 0.0), Point2::new(0.03, 0.0)];
        let candidate: Vec<Point2> = (0..10)
            .map(|i| Point2::new(0.001 * i as f64, 0.0))
            .collect();
        assert_eq!(geometric_similarity(&candidate, &visible, &cfg), 1.0);
    }

    #[test]
    fn expected_objects_gate_on_view_and_range() {
        let cfg = SimilarityConfig::default();
        let sensor = crate::world::SensorSpec {
            fov_half_angle: 1.0,
            max_range: 4.0,
            points_per_object: 16,
            range_noise_sigma: 0.0,
            feature_noise_sigma: 0.0,
            class_confusion_prob: 0.0,
            detection_visibility_threshold: 0.3,
        };
        let spec = GridSpec {
            resolution: 0.1,
            origin_x: 0.0,
            origin_y: 0.0,
            width: 120,
            height: 60,
        };
        let mut map = SemanticMap::new(spec);
        let oracle = BTreeMap::new();
        let bc = BeliefConfig::default();
        let visible_obj = candidate(unit(8, 0), ring(3.0, 3.0, 0.3, 20));
        let behind_obj = candidate(unit(8, 1), ring(0.5, 3.0, 0.3, 20));
        let id_visible = insert_new(&mut map, &visible_obj, &oracle, 0.0, &bc, &cfg);
        let id_behind = insert_new(&mut map, &behind_obj, &oracle, 0.0, &bc, &cfg);

        // Robot at (1.5, 3) facing +x: the first object is dead ahead, the
        // second is behind it (outside the field of view).
        let robot = Pose2D::new(1.5, 3.0, 0.0);
        let views = expected_objects(&map, &robot, &sensor, &cfg);
        let ids: Vec<u64> = views.iter().map(|v| v.id).collect();
        assert!(ids.contains(&id_visible));
        assert!(!ids.contains(&id_behind));

        // An object with 40% of its points beyond d_max is excluded at
        // tau_expected = 0.7; the point-count oracle fixes the fraction.
        let mut strip: Vec<Point2> = (0..10)
            .map(|i| Point2::new(3.0 + 0.45 * i as f64, 3.0))
            .collect();
        strip.push(Point2::new(3.0, 3.2));
        let far = ObjectCandidate {
            pose: Pose2D::new(4.0, 3.0, 0.0),
            points: strip.clone(),
            feature: unit(8, 2),
            class_name: "strip".into(),
        };
        let mut map2 = SemanticMap::new(spec);
        let id_far = insert_new(&mut map2, &far, &oracle, 0.0, &bc, &cfg);
        let in_range = strip
            .iter()
            .filter(|p| robot.position().dist(**p) <= cfg.d_max)
            .count();
        let fraction = in_range as f64 / strip.len() as f64;
        assert!(fraction < 0.7, "oracle fraction {fraction}");
        let mut tight = cfg;
        tight.tau_expected = 0.7;
        let views2 = expected_objects(&map2, &robot, &sensor, &tight);
        assert!(views2.iter().all(|v| v.id != id_far));
        // With the default gate it stays expected.
        let views3 = expected_objects(&map2, &robot, &sensor, &cfg);
        assert!(views3.iter().any(|v| v.id == id_far));
    }

    #[test]
    fn geometric_similarity_is_rigid_invariant() {
        let cfg = SimilarityConfig::default();
        let a = ring(0.0, 0.0, 0.4, 12);
        let b = ring(0.03, 0.0, 0.4, 17);
        let s0 = geometric_similarity(&a, &b, &cfg);
        let tf = crate::geometry::RigidTransform2 {
            rotation: 0.7,
            tx: 3.0,
            ty: -1.0,
        };
        let a2: Vec<Point2> = a.iter().map(|p| tf.apply(*p)).collect();
        let b2: Vec<Point2> = b.iter().map(|p| tf.apply(*p)).collect();
        let s1 = geometric_similarity(&a2, &b2, &cfg);
        assert!((s0 - s1).abs() < 1e-9);
    }

    #[test]
    fn overlapping_candidate_matches_in_step_one() {
        let cfg = SimilarityConfig::default();
        let pts = ring(2.0, 2.0, 0.3, 24);
        let expected = vec![view(0, unit(8, 0), pts.clone())];
        let cands = vec![candidate(unit(8, 0), pts)];
        let out = associate(&cands, &expected, &cfg);
        assert_eq!(out.assignments, vec![Some(0)]);
        assert_eq!(out.icp_calls, 0);
        let m = &out.matches[0];
        assert_eq!(m.step, MatchStep::Geometric);
        assert!(m.s_geo > cfg.tau_geo && m.s_sem > cfg.tau_sem);
    }

    #[test]
    fn moved_candidate_matches_via_icp_in_step_two() {
        let cfg = SimilarityConfig::default();
        let stored = ring(2.0, 2.0, 0.3, 24);
        let moved = ring(4.0, 2.0, 0.3, 24);
        let expected = vec![view(0, unit(8, 0), stored)];
        let cands = vec![candidate(unit(8, 0), moved)];
        let out = associate(&cands, &expected, &cfg);
        assert_eq!(out.assignments, vec![Some(0)]);
        assert_eq!(out.icp_calls, 1);
        let m = &out.matches[0];
        assert_eq!(m.step, MatchStep::SemanticIcp);
        assert!(m.s_sem > cfg.tau_sem);
        assert!(m.icp_rmse.unwrap() <= cfg.d_icp);
    }

    #[test]
    fn two_pairs_do_not_cross_match() {
        let cfg = SimilarityConfig::default();
        // Object 0 overlaps candidate 0; object 1 moved to candidate 1's spot.
        let o0 = ring(1.0, 1.0, 0.3, 24);
        let o1 = ring(3.0, 1.0, 0.3, 24);
        let c0 = ring(1.0, 1.0, 0.3, 24);
        let c1 = ring(5.0, 1.0, 0.3, 24);
        let expected = vec![view(0, unit(8, 0), o0), view(1, unit(8, 0), o1)];
        let cands = vec![candidate(unit(8, 0), c0), candidate(unit(8, 0), c1)];
        let out = associate(&cands, &expected, &cfg);
        assert_eq!(out.assignments[0], Some(0));
        assert_eq!(out.assignments[1], Some(1));
        // Injective both ways.
        let mut ids: Vec<u64> = out.assignments.iter().flatten().copied().collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 2);
    }

    #[test]
    fn step_two_checks_only_the_semantic_argmax() {
        let cfg = SimilarityConfig::default();
        // Best semantic match geometrically fails ICP; the runner-up would
        // pass but must not be tried.
        let cand_feature = unit(8, 0);
        let near_feature = normalize_feature(&[1.0, 0.05, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let cand_pts = ring(0.0, 0.0, 0.1, 24);
        let big = ring(4.0, 0.0, 0.6, 24); // argmax by feature, wrong shape
        let same = ring(6.0, 0.0, 0.1, 24); // right shape, slightly worse feature
        let expected = vec![view(7, cand_feature.clone(), big), view(8, near_feature, same)];
        let cands = vec![candidate(cand_feature, cand_pts)];
        let out = associate(&cands, &expected, &cfg);
        assert_eq!(out.assignments, vec![None]);
        assert_eq!(out.icp_calls, 1);
    }

    #[test]
    fn merge_updates_centroid_and_keeps_feature_unit() {
        let cfg = SimilarityConfig::default();
        let spec = GridSpec {
            resolution: 0.1,
            origin_x: 0.0,
            origin_y: 0.0,
            width: 80,
            height: 60,
        };
        let mut map = SemanticMap::new(spec);
        let oracle = BTreeMap::new();
        let belief_cfg = BeliefConfig::default();
        let c0 = candidate(unit(8, 0), ring(2.0, 2.0, 0.3, 24));
        let id = insert_new(&mut map, &c0, &oracle, 0.0, &belief_cfg, &cfg);

        // Identical observation: centroid stays put.
        let r = merge(&mut map, id, &c0, 1.0, &cfg).unwrap();
        assert!(r.centroid_before.dist(r.centroid_after) < 1e-9);

        // Displaced observation: centroid moves by ~1 m.
        let c1 = candidate(unit(8, 0), ring(3.0, 2.0, 0.3, 24));
        let r = merge(&mut map, id, &c1, 2.0, &cfg).unwrap();
        let d = r.centroid_before.dist(r.centroid_after);
        assert!((d - 1.0).abs() < 1e-6, "moved {d}");

        // Slightly rotated feature stays unit-norm after fusion.
        let mut f = unit(8, 0);
        f[1] = 0.2;
        let c2 = candidate(normalize_feature(&f), ring(3.0, 2.0, 0.3, 24));
        merge(&mut map, id, &c2, 3.0, &cfg).unwrap();
        let norm: f64 = map.active[&id]
            .feature
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        assert!((norm - 1.0).abs() < 1e-6);

        assert!(merge(&mut map, 999, &c0, 4.0, &cfg).is_err());
    }

    #[test]
    fn insert_assigns_distinct_ids_and_default_label() {
        let cfg = SimilarityConfig::default();
        let spec = GridSpec {
            resolution: 0.1,
            origin_x: 0.0,
            origin_y: 0.0,
            width: 10,
            height: 10,
        };
        let mut map = SemanticMap::new(spec);
        let mut oracle = BTreeMap::new();
        oracle.insert("ball".to_string(), StationarityLabel::Dynamic);
        let belief_cfg = BeliefConfig::default();
        let mut c = candidate(unit(8, 0), ring(0.4, 0.4, 0.1, 8));
        c.class_name = "ball".into();
        let mut c2 = candidate(unit(8, 1), ring(0.6, 0.6, 0.1, 8));
        c2.class_name = "gizmo".into();
        let a = insert_new(&mut map, &c, &oracle, 0.0, &belief_cfg, &cfg);
        let b = insert_new(&mut map, &c2, &oracle, 0.0, &belief_cfg, &cfg);
        assert_ne!(a, b);
        assert_eq!(map.active[&a].stationarity_label, StationarityLabel::Dynamic);
        // Unknown class defaults to dynamic.
        assert_eq!(map.active[&b].stationarity_label, StationarityLabel::Dynamic);
    }

    #[test]
    fn background_latest_observation_wins() {
        let spec = GridSpec {
            resolution: 0.1,
            origin_x: 0.0,
            origin_y: 0.0,
            width: 10,
            height: 10,
        };
        let mut map = SemanticMap::new(spec);
        update_background(&mut map, &[((3, 3), CellState::Occupied)]);
        assert_eq!(*map.background.get(3, 3), CellState::Occupied);
        update_background(&mut map, &[((3, 3), CellState::Free)]);
        assert_eq!(*map.background.get(3, 3), CellState::Free);
    }
}
