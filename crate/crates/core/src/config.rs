//! Aggregated tunables with string-keyed overrides so every default is
//! auditable from the command line.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explore::{RobotModel, SamplerConfig};
use crate::lifecycle::LifecycleConfig;
use crate::priority::{PriorityParams, SigmaConfig};
use crate::semantic_map::SimilarityConfig;
use crate::stationarity::{BeliefConfig, DecayPolicy};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpisodeParams {
    /// Seconds of simulated time between map updates.
    pub frame_period: f64,
    /// Success radius for object-goal navigation (m).
    pub r_succ: f64,
    /// Waypoints are resampled after this long even if not reached (s).
    pub waypoint_timeout: f64,
    /// Snapshot recording interval in seconds; 0 disables interval snapshots.
    pub snapshot_interval: f64,
}

impl Default for EpisodeParams {
    fn default() -> Self {
        EpisodeParams {
            frame_period: 1.0,
            r_succ: 1.5,
            waypoint_timeout: 45.0,
            snapshot_interval: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EvalParams {
    /// Instance-matching radius for detection and change metrics (m).
    pub r_match: f64,
    /// Require class-correct instances when crediting identified changes.
    pub class_strict: bool,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            r_match: 0.5,
            class_strict: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Config {
    pub grid_resolution: f64,
    pub similarity: SimilarityConfig,
    pub belief: BeliefConfig,
    pub decay: DecayPolicy,
    pub lifecycle: LifecycleConfig,
    pub sigma: SigmaConfig,
    /// Uniform priority weight spread over unknown cells (initial mapping).
    pub unknown_bonus: f64,
    pub sampler: SamplerConfig,
    pub robot: RobotModel,
    pub episode: EpisodeParams,
    pub eval: EvalParams,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            grid_resolution: 0.1,
            similarity: SimilarityConfig::default(),
            belief: BeliefConfig::default(),
            decay: DecayPolicy::default(),
            lifecycle: LifecycleConfig::default(),
            sigma: SigmaConfig::default(),
            unknown_bonus: 0.0,
            sampler: SamplerConfig::default(),
            robot: RobotModel::default(),
            episode: EpisodeParams::default(),
            eval: EvalParams::default(),
        }
    }
}

impl Config {
    pub fn priority_params(&self) -> PriorityParams {
        PriorityParams {
            sigma: self.sigma,
            v_floor: self.lifecycle.theta_removal + 1e-6,
            unknown_bonus: self.unknown_bonus,
        }
    }

    /// Applies one `key=value` override. Unknown keys and unparsable values
    /// are errors so typos never silently run with defaults.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn f(key: &str, value: &str) -> Result<f64> {
            value.parse::<f64>().map_err(|e| Error::BadConfigValue {
                key: key.to_string(),
                message: e.to_string(),
            })
        }
        fn u(key: &str, value: &str) -> Result<usize> {
            value.parse::<usize>().map_err(|e| Error::BadConfigValue {
                key: key.to_string(),
                message: e.to_string(),
            })
        }
        fn b(key: &str, value: &str) -> Result<bool> {
            value.parse::<bool>().map_err(|e| Error::BadConfigValue {
                key: key.to_string(),
                message: e.to_string(),
            })
        }
        match key {
            "grid.resolution" => self.grid_resolution = f(key, value)?,
            "similarity.tau_expected" => self.similarity.tau_expected = f(key, value)?,
            "similarity.tau_geo" => self.similarity.tau_geo = f(key, value)?,
            "similarity.tau_sem" => self.similarity.tau_sem = f(key, value)?,
            "similarity.d_voxel" => self.similarity.d_voxel = f(key, value)?,
            "similarity.d_icp" => self.similarity.d_icp = f(key, value)?,
            "similarity.d_max" => self.similarity.d_max = f(key, value)?,
            "similarity.icp_max_iters" => self.similarity.icp_max_iters = u(key, value)?,
            "similarity.icp_tol" => self.similarity.icp_tol = f(key, value)?,
            "belief.alpha_init" => self.belief.alpha_init = f(key, value)?,
            "belief.beta_init" => self.belief.beta_init = f(key, value)?,
            "belief.count_cap" => self.belief.count_cap = f(key, value)?,
            "belief.zeta_ema" => self.belief.zeta_ema = f(key, value)?,
            "decay.delay_static" => self.decay.delay_static = f(key, value)?,
            "decay.delay_dynamic" => self.decay.delay_dynamic = f(key, value)?,
            "decay.rate_static" => self.decay.rate_static = f(key, value)?,
            "decay.rate_dynamic" => self.decay.rate_dynamic = f(key, value)?,
            "decay.e_absent" => self.decay.e_absent = f(key, value)?,
            "decay.sigma_meas" => self.decay.sigma_meas = f(key, value)?,
            "decay.e_broad" => self.decay.e_broad = f(key, value)?,
            "lifecycle.theta_removal" => self.lifecycle.theta_removal = f(key, value)?,
            "lifecycle.theta_translational" => {
                self.lifecycle.theta_translational = f(key, value)?
            }
            "lifecycle.tau_window" => self.lifecycle.tau_window = f(key, value)?,
            "sigma.v_search" => self.sigma.v_search = f(key, value)?,
            "sigma.r_search" => self.sigma.r_search = f(key, value)?,
            "sigma.sigma_measure" => self.sigma.sigma_measure = f(key, value)?,
            "priority.unknown_bonus" => self.unknown_bonus = f(key, value)?,
            "sampler.m_candidates" => self.sampler.m_candidates = u(key, value)?,
            "sampler.bandwidth" => self.sampler.bandwidth = f(key, value)?,
            "sampler.forgetting" => self.sampler.forgetting = f(key, value)?,
            "sampler.max_resample" => self.sampler.max_resample = u(key, value)?,
            "robot.v_max" => self.robot.v_max = f(key, value)?,
            "robot.omega_max" => self.robot.omega_max = f(key, value)?,
            "robot.radius" => self.robot.radius = f(key, value)?,
            "robot.dt" => self.robot.dt = f(key, value)?,
            "robot.lookahead" => self.robot.lookahead = f(key, value)?,
            "robot.goal_tolerance" => self.robot.goal_tolerance = f(key, value)?,
            "episode.frame_period" => self.episode.frame_period = f(key, value)?,
            "episode.r_succ" => self.episode.r_succ = f(key, value)?,
            "episode.waypoint_timeout" => self.episode.waypoint_timeout = f(key, value)?,
            "episode.snapshot_interval" => self.episode.snapshot_interval = f(key, value)?,
            "eval.r_match" => self.eval.r_match = f(key, value)?,
            "eval.class_strict" => self.eval.class_strict = b(key, value)?,
            _ => return Err(Error::UnknownConfigKey(key.to_string())),
        }
        Ok(())
    }

    /// All keys with their current values, sorted, for `--dump-config`.
    pub fn dump(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("grid.resolution".into(), self.grid_resolution.to_string()),
            (
                "similarity.tau_expected".into(),
                self.similarity.tau_expected.to_string(),
            ),
            ("similarity.tau_geo".into(), self.similarity.tau_geo.to_string()),
            ("similarity.tau_sem".into(), self.similarity.tau_sem.to_string()),
            ("similarity.d_voxel".into(), self.similarity.d_voxel.to_string()),
            ("similarity.d_icp".into(), self.similarity.d_icp.to_string()),
            ("similarity.d_max".into(), self.similarity.d_max.to_string()),
            (
                "similarity.icp_max_iters".into(),
                self.similarity.icp_max_iters.to_string(),
            ),
            ("similarity.icp_tol".into(), self.similarity.icp_tol.to_string()),
            ("belief.alpha_init".into(), self.belief.alpha_init.to_string()),
            ("belief.beta_init".into(), self.belief.beta_init.to_string()),
            ("belief.count_cap".into(), self.belief.count_cap.to_string()),
            ("belief.zeta_ema".into(), self.belief.zeta_ema.to_string()),
            ("decay.delay_static".into(), self.decay.delay_static.to_string()),
            ("decay.delay_dynamic".into(), self.decay.delay_dynamic.to_string()),
            ("decay.rate_static".into(), self.decay.rate_static.to_string()),
            ("decay.rate_dynamic".into(), self.decay.rate_dynamic.to_string()),
            ("decay.e_absent".into(), self.decay.e_absent.to_string()),
            ("decay.sigma_meas".into(), self.decay.sigma_meas.to_string()),
            ("decay.e_broad".into(), self.decay.e_broad.to_string()),
            (
                "lifecycle.theta_removal".into(),
                self.lifecycle.theta_removal.to_string(),
            ),
            (
                "lifecycle.theta_translational".into(),
                self.lifecycle.theta_translational.to_string(),
            ),
            ("lifecycle.tau_window".into(), self.lifecycle.tau_window.to_string()),
            ("sigma.v_search".into(), self.sigma.v_search.to_string()),
            ("sigma.r_search".into(), self.sigma.r_search.to_string()),
            ("sigma.sigma_measure".into(), self.sigma.sigma_measure.to_string()),
            ("priority.unknown_bonus".into(), self.unknown_bonus.to_string()),
            ("sampler.m_candidates".into(), self.sampler.m_candidates.to_string()),
            ("sampler.bandwidth".into(), self.sampler.bandwidth.to_string()),
            ("sampler.forgetting".into(), self.sampler.forgetting.to_string()),
            ("sampler.max_resample".into(), self.sampler.max_resample.to_string()),
            ("robot.v_max".into(), self.robot.v_max.to_string()),
            ("robot.omega_max".into(), self.robot.omega_max.to_string()),
            ("robot.radius".into(), self.robot.radius.to_string()),
            ("robot.dt".into(), self.robot.dt.to_string()),
            ("robot.lookahead".into(), self.robot.lookahead.to_string()),
            (
                "robot.goal_tolerance".into(),
                self.robot.goal_tolerance.to_string(),
            ),
            ("episode.frame_period".into(), self.episode.frame_period.to_string()),
            ("episode.r_succ".into(), self.episode.r_succ.to_string()),
            (
                "episode.waypoint_timeout".into(),
                self.episode.waypoint_timeout.to_string(),
            ),
            (
                "episode.snapshot_interval".into(),
                self.episode.snapshot_interval.to_string(),
            ),
            ("eval.r_match".into(), self.eval.r_match.to_string()),
            ("eval.class_strict".into(), self.eval.class_strict.to_string()),
        ];
        out.sort();
        out
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.grid_resolution > 0.0) {
            return Err(Error::InvalidInput("grid.resolution must be > 0".into()));
        }
        if !self.decay.is_valid() {
            return Err(Error::InvalidInput(
                "decay policy violates delay/rate/e_absent ordering".into(),
            ));
        }
        if !self.lifecycle.is_valid() {
            return Err(Error::InvalidInput(
                "lifecycle thresholds must satisfy 0 <= removal < translational <= 1".into(),
            ));
        }
        if !self.sigma.is_valid() {
            return Err(Error::InvalidInput(
                "sigma config must satisfy r_search > sigma_measure > 0".into(),
            ));
        }
        if self.sampler.m_candidates == 0 {
            return Err(Error::InvalidInput("sampler.m_candidates must be >= 1".into()));
        }
        if !(self.robot.dt > 0.0 && self.episode.frame_period >= self.robot.dt) {
            return Err(Error::InvalidInput(
                "episode.frame_period must be >= robot.dt > 0".into(),
            ));
        }
        Ok(())
    }
}
