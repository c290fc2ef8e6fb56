//! Point-to-point ICP in the plane.
//!
//! Correspondences are nearest neighbors; each iteration solves the rigid
//! fit in closed form (2D Procrustes). The initial guess aligns centroids
//! with identity rotation. Nearly collinear or tiny sources fall back to a
//! translation-only fit, which is always well posed.

use crate::geometry::{centroid, Point2, RigidTransform2};
use crate::semantic_map::SimilarityConfig;

#[derive(Clone, Copy, Debug)]
pub struct IcpResult {
    pub transform: RigidTransform2,
    /// Symmetric residual: the larger of the source-to-target and
    /// target-to-source nearest-neighbor RMSEs after alignment. A small
    /// cloud sliding onto a section of a larger one scores well one way
    /// but poorly the other, so one-sided residuals would accept shape
    /// mismatches between hull clouds.
    pub rmse: f64,
    pub iterations: usize,
}

fn nearest(p: Point2, cloud: &[Point2]) -> Point2 {
    let mut best = cloud[0];
    let mut best_d = p.dist_sq(best);
    for q in &cloud[1..] {
        let d = p.dist_sq(*q);
        if d < best_d {
            best_d = d;
            best = *q;
        }
    }
    best
}

/// Smallest eigenvalue of the 2x2 covariance of `points`; near-zero means
/// the cloud is (almost) collinear and rotation is unobservable.
fn min_covariance_eigenvalue(points: &[Point2]) -> f64 {
    let c = centroid(points);
    let n = points.len() as f64;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let dx = p.x - c.x;
        let dy = p.y - c.y;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    sxx /= n;
    sxy /= n;
    syy /= n;
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    tr / 2.0 - disc
}

fn rigid_fit(source: &[Point2], target: &[Point2], rotate: bool) -> RigidTransform2 {
    let cs = centroid(source);
    let ct = centroid(target);
    let theta = if rotate {
        let mut num = 0.0;
        let mut den = 0.0;
        for (p, q) in source.iter().zip(target) {
            let px = p.x - cs.x;
            let py = p.y - cs.y;
            let qx = q.x - ct.x;
            let qy = q.y - ct.y;
            num += px * qy - py * qx;
            den += px * qx + py * qy;
        }
        if num == 0.0 && den == 0.0 {
            0.0
        } else {
            num.atan2(den)
        }
    } else {
        0.0
    };
    let (s, c) = theta.sin_cos();
    RigidTransform2 {
        rotation: theta,
        tx: ct.x - (c * cs.x - s * cs.y),
        ty: ct.y - (s * cs.x + c * cs.y),
    }
}

fn run_from(
    source: &[Point2],
    target: &[Point2],
    init: RigidTransform2,
    rotate: bool,
    cfg: &SimilarityConfig,
) -> IcpResult {
    let mut total = init;
    let mut moved: Vec<Point2> = source.iter().map(|p| total.apply(*p)).collect();
    let mut iterations = 0;
    for _ in 0..cfg.icp_max_iters {
        iterations += 1;
        let matched: Vec<Point2> = moved.iter().map(|p| nearest(*p, target)).collect();
        let step = rigid_fit(&moved, &matched, rotate);
        let mut shift = 0.0;
        for p in moved.iter_mut() {
            let np = step.apply(*p);
            shift += p.dist(np);
            *p = np;
        }
        total = step.compose(&total);
        if shift / (moved.len() as f64) < cfg.icp_tol {
            break;
        }
    }
    let mut fwd = 0.0;
    for p in &moved {
        fwd += p.dist_sq(nearest(*p, target));
    }
    let mut rev = 0.0;
    for q in target {
        rev += q.dist_sq(nearest(*q, &moved));
    }
    let rmse = (fwd / moved.len() as f64)
        .sqrt()
        .max((rev / target.len() as f64).sqrt());
    IcpResult {
        transform: total,
        rmse,
        iterations,
    }
}

/// Aligns `source` onto `target`, returning the accumulated transform and
/// the RMSE of the final nearest-neighbor correspondences.
///
/// Nearest-neighbor ICP stalls in shallow aliasing minima on regularly
/// sampled clouds, so after the plain centroid-aligned start a coarse set
/// of initial rotations is tried and the best residual wins. The sweep
/// stops as soon as a start lands well inside the match tolerance.
pub fn icp_align(source: &[Point2], target: &[Point2], cfg: &SimilarityConfig) -> IcpResult {
    assert!(!source.is_empty() && !target.is_empty());
    let rotate = source.len() >= 3 && min_covariance_eigenvalue(source) > 1e-9;

    let cs = centroid(source);
    let ct = centroid(target);
    let centroid_init = RigidTransform2::translation(ct.x - cs.x, ct.y - cs.y);
    if !rotate {
        return run_from(source, target, centroid_init, false, cfg);
    }

    let good_enough = (0.1 * cfg.d_icp).max(cfg.icp_tol);
    let mut best: Option<IcpResult> = None;
    for k in 0..16 {
        let angle = std::f64::consts::FRAC_PI_8 * k as f64;
        let (s, c) = angle.sin_cos();
        let init = RigidTransform2 {
            rotation: angle,
            tx: ct.x - (c * cs.x - s * cs.y),
            ty: ct.y - (s * cs.x + c * cs.y),
        };
        let result = run_from(source, target, init, true, cfg);
        let better = best.as_ref().map_or(true, |b| result.rmse < b.rmse);
        if better {
            best = Some(result);
        }
        if best.as_ref().is_some_and(|b| b.rmse <= good_enough) {
            break;
        }
    }
    best.expect("at least one start ran")
}
