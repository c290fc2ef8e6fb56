//! Object lifecycle: removal to the missing library and object-to-object
//! reidentification for translation and reintroduction.

use serde::{Deserialize, Serialize};

use crate::geometry::Aabb;
use crate::semantic_map::{
    normalize_feature, semantic_icp_pool, voxel_downsample, SemanticMap, SimilarityConfig,
};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LifecycleConfig {
    pub theta_removal: f64,
    pub theta_translational: f64,
    /// Temporal reidentification window around a disappearance (s).
    pub tau_window: f64,
}

impl Default for LifecycleConfig {
    fn default() -> Self {
        LifecycleConfig {
            theta_removal: 0.6,
            theta_translational: 0.8,
            tau_window: 120.0,
        }
    }
}

impl LifecycleConfig {
    pub fn is_valid(&self) -> bool {
        0.0 <= self.theta_removal
            && self.theta_removal < self.theta_translational
            && self.theta_translational <= 1.0
            && self.tau_window >= 0.0
    }
}

/// Moves every active object with `E[v] <= theta_removal` to the missing
/// library, keeping all fields for later reidentification.
pub fn apply_removal(map: &mut SemanticMap, cfg: &LifecycleConfig, _t: f64) -> Vec<u64> {
    let ids: Vec<u64> = map
        .active
        .values()
        .filter(|o| o.expected_stationarity() <= cfg.theta_removal)
        .map(|o| o.id)
        .collect();
    for id in &ids {
        if let Some(obj) = map.active.remove(id) {
            map.missing.insert(*id, obj);
        }
    }
    ids
}

#[derive(Clone, Copy, Debug)]
pub struct MergeRecord {
    /// Surviving identity (the older instance).
    pub kept: u64,
    /// Absorbed instance (the fresh appearance); its id is retired.
    pub absorbed: u64,
    pub was_missing: bool,
    pub rmse: f64,
}

/// Reidentification pass. Candidates for reidentification are missing
/// objects and active objects in the mid-stationarity band; each is matched
/// against active objects that first appeared within `tau_window` of its
/// disappearance, using the semantically conditioned ICP. On a match the
/// fresh appearance is absorbed into the older identity: the merged object
/// keeps the old id and earliest first-seen time, takes the fresh geometry,
/// pose, and belief, and unions the registered clouds.
pub fn reidentify(
    map: &mut SemanticMap,
    cfg: &LifecycleConfig,
    sim_cfg: &SimilarityConfig,
    _t: f64,
) -> Vec<MergeRecord> {
    // (id, disappearance time, currently missing) ordered oldest-first.
    let mut pending: Vec<(u64, f64, bool)> = Vec::new();
    for obj in map.missing.values() {
        if let Some(td) = obj.t_disappear {
            pending.push((obj.id, td, true));
        }
    }
    for obj in map.active.values() {
        let ev = obj.expected_stationarity();
        if ev > cfg.theta_removal && ev <= cfg.theta_translational {
            if let Some(td) = obj.t_disappear {
                pending.push((obj.id, td, false));
            }
        }
    }
    pending.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));

    let mut records = Vec::new();
    for (k_id, t_disappear, was_missing) in pending {
        // The object may have been consumed by an earlier merge this pass.
        let k = match if was_missing {
            map.missing.get(&k_id)
        } else {
            map.active.get(&k_id)
        } {
            Some(o) => o.clone(),
            None => continue,
        };

        let hit = {
            let pool = map.active.values().filter(|o| {
                o.id != k_id && (o.t_first - t_disappear).abs() <= cfg.tau_window
            });
            let (hit, _) = semantic_icp_pool(
                &k.feature,
                &k.points,
                pool.map(|o| (o.id, &o.feature, &o.points)),
                sim_cfg,
            );
            hit
        };
        let Some(hit) = hit else { continue };

        let fresh = map.active.remove(&hit.id).expect("pool entry is active");
        let mut survivor = if was_missing {
            map.missing.remove(&k_id).expect("pending missing object")
        } else {
            map.active.remove(&k_id).expect("pending active object")
        };

        // Union the registered clouds; the fresh observation fixes the pose.
        let mut points = fresh.points.clone();
        points.extend(k.points.iter().map(|p| hit.transform.apply(*p)));
        survivor.points = voxel_downsample(&points, sim_cfg.d_voxel);
        survivor.pose = fresh.pose;
        survivor.bbox = Aabb::of_points(&survivor.points).unwrap_or(fresh.bbox);
        let wk = k.obs_count as f64;
        let wf = fresh.obs_count as f64;
        let fused: Vec<f64> = survivor
            .feature
            .iter()
            .zip(&fresh.feature)
            .map(|(a, b)| (a * wk + b * wf) / (wk + wf))
            .collect();
        survivor.feature = normalize_feature(&fused);
        survivor.obs_count = k.obs_count + fresh.obs_count;
        survivor.class_name = fresh.class_name.clone();
        survivor.t_first = survivor.t_first.min(fresh.t_first);
        survivor.last_seen = survivor.last_seen.max(fresh.last_seen);
        survivor.t_disappear = None;
        survivor.belief = fresh.belief;
        map.active.insert(k_id, survivor);

        records.push(MergeRecord {
            kept: k_id,
            absorbed: hit.id,
            was_missing,
            rmse: hit.rmse,
        });
    }
    records
}
