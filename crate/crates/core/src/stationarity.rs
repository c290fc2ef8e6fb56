//! Per-object stationarity belief.
//!
//! The belief over the stationarity score `v` is a Beta(alpha, beta)
//! maintained by pseudo-count updates. Each measured change `e` is turned
//! into a responsibility `r` for the "moved" hypothesis by comparing a
//! peaked stationary kernel against a heavy-tailed moved kernel; `r` is
//! then added to `beta` and `1 - r` to `alpha`. The total pseudo-count is
//! capped so the belief stays responsive after long observation streaks.
//! Out-of-view objects decay through fake change mass added to `beta` at a
//! label-dependent delay and rate; decay halts at the removal threshold so
//! only observed absence can push an object below it.

use serde::{Deserialize, Serialize};

use crate::geometry::centroid;
use crate::semantic_map::MapObject;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationarityLabel {
    Static,
    Dynamic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationarityBelief {
    pub alpha: f64,
    pub beta: f64,
    /// Exponential moving average of the measured geometric change (m).
    pub zeta: f64,
    pub last_update: f64,
    pub decaying: bool,
}

impl StationarityBelief {
    pub fn fresh(cfg: &BeliefConfig, t: f64) -> StationarityBelief {
        StationarityBelief {
            alpha: cfg.alpha_init,
            beta: cfg.beta_init,
            zeta: 0.0,
            last_update: t,
            decaying: false,
        }
    }

    /// E[v] = alpha / (alpha + beta).
    pub fn expected(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BeliefConfig {
    pub alpha_init: f64,
    pub beta_init: f64,
    /// Total pseudo-count cap; the belief is rescaled to this after updates.
    pub count_cap: f64,
    /// EMA factor for the geometric-change estimate zeta.
    pub zeta_ema: f64,
}

impl Default for BeliefConfig {
    fn default() -> Self {
        BeliefConfig {
            alpha_init: 8.0,
            beta_init: 1.0,
            count_cap: 9.0,
            zeta_ema: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DecayPolicy {
    pub delay_static: f64,
    pub delay_dynamic: f64,
    pub rate_static: f64,
    pub rate_dynamic: f64,
    /// Injected change magnitude for an observed absence (m).
    pub e_absent: f64,
    /// Stationary-hypothesis kernel width (m).
    pub sigma_meas: f64,
    /// Moved-hypothesis exponential scale (m).
    pub e_broad: f64,
}

impl Default for DecayPolicy {
    fn default() -> Self {
        DecayPolicy {
            delay_static: 60.0,
            delay_dynamic: 30.0,
            rate_static: 0.02,
            rate_dynamic: 0.05,
            e_absent: 1.0,
            sigma_meas: 0.05,
            e_broad: 1.0,
        }
    }
}

impl DecayPolicy {
    pub fn is_valid(&self) -> bool {
        self.delay_dynamic <= self.delay_static
            && self.rate_dynamic >= self.rate_static
            && self.e_absent > self.sigma_meas
            && self.sigma_meas > 0.0
            && self.e_broad > 0.0
            && self.rate_static >= 0.0
    }

    pub fn delay_for(&self, label: StationarityLabel) -> f64 {
        match label {
            StationarityLabel::Static => self.delay_static,
            StationarityLabel::Dynamic => self.delay_dynamic,
        }
    }

    pub fn rate_for(&self, label: StationarityLabel) -> f64 {
        match label {
            StationarityLabel::Static => self.rate_static,
            StationarityLabel::Dynamic => self.rate_dynamic,
        }
    }
}

/// Distance the object's point-cloud center of mass moved between the two
/// snapshots (the per-frame geometric change measure).
pub fn measure_change(before: &MapObject, after: &MapObject) -> f64 {
    centroid(&before.points).dist(centroid(&after.points))
}

/// Responsibility of the "moved" hypothesis for a measured change `e`.
/// Stationary kernel: exp(-e^2 / (2 sigma^2)); moved kernel:
/// exp(-e / e_broad) * (sigma / e_broad). Monotone increasing in `e`.
pub fn responsibility(e: f64, policy: &DecayPolicy) -> f64 {
    let l_stat = (-e * e / (2.0 * policy.sigma_meas * policy.sigma_meas)).exp();
    let l_moved = (-e / policy.e_broad).exp() * (policy.sigma_meas / policy.e_broad);
    l_moved / (l_stat + l_moved)
}

/// Bayesian step for a measured change `e_t >= 0` at time `t`.
pub fn bayes_update(
    belief: &mut StationarityBelief,
    e_t: f64,
    policy: &DecayPolicy,
    cfg: &BeliefConfig,
    t: f64,
) {
    let r = responsibility(e_t, policy);
    belief.alpha += 1.0 - r;
    belief.beta += r;
    let total = belief.alpha + belief.beta;
    if total > cfg.count_cap {
        let s = cfg.count_cap / total;
        belief.alpha *= s;
        belief.beta *= s;
    }
    belief.zeta = (1.0 - cfg.zeta_ema) * belief.zeta + cfg.zeta_ema * e_t;
    belief.last_update = t;
    belief.decaying = false;
}

/// Time-based decay for an object that is out of view. Fake change mass is
/// added to `beta` at the label rate once the label delay has elapsed since
/// `last_seen`; `beta` is clipped so E[v] never drops below
/// `theta_removal + epsilon` through decay alone.
pub fn inject_decay(
    belief: &mut StationarityBelief,
    label: StationarityLabel,
    policy: &DecayPolicy,
    theta_removal: f64,
    last_seen: f64,
    t_now: f64,
) {
    const EPS: f64 = 1e-6;
    let delay = policy.delay_for(label);
    if t_now - last_seen <= delay {
        return;
    }
    let start = if belief.decaying {
        belief.last_update
    } else {
        last_seen + delay
    };
    let dt = t_now - start;
    if dt <= 0.0 {
        return;
    }
    let floor = (theta_removal + EPS).min(1.0 - EPS);
    let beta_cap = belief.alpha * (1.0 / floor - 1.0);
    if belief.beta < beta_cap {
        belief.beta = (belief.beta + policy.rate_for(label) * dt).min(beta_cap);
    }
    belief.last_update = t_now;
    belief.decaying = true;
}

/// An expected-but-unmatched frame: a real, large change measure that is
/// not subject to the decay clip, so it can push E[v] past removal.
pub fn observed_absence(
    belief: &mut StationarityBelief,
    policy: &DecayPolicy,
    cfg: &BeliefConfig,
    t: f64,
) {
    bayes_update(belief, policy.e_absent, policy, cfg, t);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> (DecayPolicy, BeliefConfig) {
        (DecayPolicy::default(), BeliefConfig::default())
    }

    #[test]
    fn zero_change_raises_expected_score() {
        let (policy, cfg) = defaults();
        let r0 = responsibility(0.0, &policy);
        assert!(r0 < 0.05, "r(0) = {r0}");
        let mut b = StationarityBelief::fresh(&cfg, 0.0);
        let before = b.expected();
        bayes_update(&mut b, 0.0, &policy, &cfg, 1.0);
        assert!(b.expected() > before);
    }

    #[test]
    fn large_change_lowers_expected_score() {
        let (policy, cfg) = defaults();
        assert!(responsibility(1.0, &policy) > 0.99);
        let mut b = StationarityBelief::fresh(&cfg, 0.0);
        let before = b.expected();
        bayes_update(&mut b, 1.0, &policy, &cfg, 1.0);
        assert!(b.expected() < before);
    }

    #[test]
    fn repeated_zero_updates_converge_monotonically_upward() {
        let (policy, cfg) = defaults();
        let mut b = StationarityBelief {
            alpha: 1.0,
            beta: 1.0,
            zeta: 0.0,
            last_update: 0.0,
            decaying: false,
        };
        // Independent closed form: the limit of E[v] under identical updates
        // is 1 - r(0), approached monotonically from below.
        let limit = 1.0 - responsibility(0.0, &policy);
        let mut prev = b.expected();
        for k in 0..200 {
            bayes_update(&mut b, 0.0, &policy, &cfg, k as f64);
            let e = b.expected();
            assert!(e >= prev - 1e-12, "E dropped at step {k}");
            prev = e;
        }
        assert!(prev > 0.94 && prev <= limit + 1e-9, "E_200 = {prev}, limit {limit}");
    }

    #[test]
    fn fresh_belief_expectation() {
        let (_, cfg) = defaults();
        let b = StationarityBelief::fresh(&cfg, 0.0);
        assert!((b.expected() - 8.0 / 9.0).abs() < 1e-12);
        let half = StationarityBelief {
            alpha: 3.0,
            beta: 3.0,
            zeta: 0.0,
            last_update: 0.0,
            decaying: false,
        };
        assert!((half.expected() - 0.5).abs() < 1e-12);
        let nine = StationarityBelief {
            alpha: 9.0,
            beta: 1.0,
            zeta: 0.0,
            last_update: 0.0,
            decaying: false,
        };
        assert!((nine.expected() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn decay_waits_for_the_delay() {
        let (policy, cfg) = defaults();
        let mut b = StationarityBelief::fresh(&cfg, 0.0);
        let before = b;
        // Static object unobserved for 10 s with delay_static = 60 s.
        inject_decay(&mut b, StationarityLabel::Static, &policy, 0.6, 0.0, 10.0);
        assert_eq!(b, before);
    }

    #[test]
    fn decay_is_strictly_decreasing_but_clipped_at_removal() {
        let (policy, cfg) = defaults();
        let theta = 0.6;
        let mut b = StationarityBelief::fresh(&cfg, 0.0);
        let mut prev = b.expected();
        let mut clipped = false;
        for tick in 1..2000 {
            let t = policy.delay_dynamic + tick as f64;
            inject_decay(&mut b, StationarityLabel::Dynamic, &policy, theta, 0.0, t);
            let e = b.expected();
            assert!(e >= theta + 1e-6 - 1e-12, "decay crossed removal: {e}");
            if (e - (theta + 1e-6)).abs() < 1e-9 {
                clipped = true;
                break;
            }
            assert!(e < prev, "decay not strictly decreasing at tick {tick}");
            prev = e;
        }
        assert!(clipped, "decay never reached the clip");
    }

    #[test]
    fn absence_crosses_removal_within_five_frames() {
        let (policy, cfg) = defaults();
        // Saturated belief (long observation streak at the count cap).
        let mut b = StationarityBelief::fresh(&cfg, 0.0);
        for k in 0..100 {
            bayes_update(&mut b, 0.0, &policy, &cfg, k as f64);
        }
        let mut frames = 0;
        while b.expected() >= 0.6 {
            observed_absence(&mut b, &policy, &cfg, 100.0 + frames as f64);
            frames += 1;
            assert!(frames <= 5, "absence took more than 5 frames");
        }
        assert!(frames <= 5);
    }

    #[test]
    fn absence_is_not_subject_to_decay_clip() {
        let (policy, cfg) = defaults();
        let theta = 0.6;
        let mut b = StationarityBelief::fresh(&cfg, 0.0);
        // Decay to the clip.
        inject_decay(&mut b, StationarityLabel::Dynamic, &policy, theta, 0.0, 1e6);
        let at_clip = b.expected();
        assert!((at_clip - (theta + 1e-6)).abs() < 1e-9);
        observed_absence(&mut b, &policy, &cfg, 1e6 + 1.0);
        assert!(b.expected() < theta);
    }

    #[test]
    fn recovery_after_spurious_absence_is_bounded() {
        let (policy, cfg) = defaults();
        let mut b = StationarityBelief::fresh(&cfg, 0.0);
        for k in 0..50 {
            bayes_update(&mut b, 0.0, &policy, &cfg, k as f64);
        }
        observed_absence(&mut b, &policy, &cfg, 50.0);
        let mut frames = 0;
        while b.expected() <= 0.8 {
            bayes_update(&mut b, 0.0, &policy, &cfg, 51.0 + frames as f64);
            frames += 1;
            assert!(frames < 50, "no recovery after {frames} frames");
        }
    }

    #[test]
    fn dynamic_label_decays_no_slower_than_static() {
        let (policy, cfg) = defaults();
        let theta = 0.6;
        let mut soon = StationarityBelief::fresh(&cfg, 0.0);
        let mut slow = StationarityBelief::fresh(&cfg, 0.0);
        for tick in 1..400 {
            let t = tick as f64;
            inject_decay(&mut soon, StationarityLabel::Dynamic, &policy, theta, 0.0, t);
            inject_decay(&mut slow, StationarityLabel::Static, &policy, theta, 0.0, t);
            assert!(soon.expected() <= slow.expected() + 1e-12);
        }
    }

    #[test]
    fn centroid_shift_is_the_change_measure() {
        use crate::geometry::{Point2, Pose2D};
        let obj = |cx: f64, cy: f64| MapObject {
            id: 0,
            pose: Pose2D::new(cx, cy, 0.0),
            points: vec![
                Point2::new(cx - 0.1, cy),
                Point2::new(cx + 0.1, cy),
                Point2::new(cx, cy + 0.1),
            ],
            bbox: crate::geometry::Aabb {
                min_x: cx - 0.1,
                min_y: cy,
                max_x: cx + 0.1,
                max_y: cy + 0.1,
            },
            feature: vec![1.0],
            class_name: "x".into(),
            stationarity_label: StationarityLabel::Static,
            t_first: 0.0,
            t_disappear: None,
            belief: StationarityBelief::fresh(&BeliefConfig::default(), 0.0),
            last_seen: 0.0,
            obs_count: 1,
        };
        assert!(measure_change(&obj(1.0, 1.0), &obj(1.0, 1.0)).abs() < 1e-12);
        // 3-4-5 triangle displacement.
        let d = measure_change(&obj(0.0, 0.0), &obj(0.3, 0.4));
        assert!((d - 0.5).abs() < 1e-12);
    }
}
