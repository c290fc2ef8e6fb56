//! Planar geometry primitives shared by the simulator, map, and planners.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn dist_sq(self, other: Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn add(self, other: Point2) -> Point2 {
        Point2::new(self.x + other.x, self.y + other.y)
    }

    pub fn sub(self, other: Point2) -> Point2 {
        Point2::new(self.x - other.x, self.y - other.y)
    }

    pub fn scale(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Planar robot/object pose. `heading` is kept normalized to `(-pi, pi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    /// Bearing of `target` relative to this pose's heading, in `(-pi, pi]`.
    pub fn bearing_to(&self, target: Point2) -> f64 {
        let abs = (target.y - self.y).atan2(target.x - self.x);
        normalize_angle(abs - self.heading)
    }
}

/// Rigid planar transform `p' = R(theta) * p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform2 {
    pub rotation: f64,
    pub tx: f64,
    pub ty: f64,
}

impl RigidTransform2 {
    pub fn identity() -> Self {
        Self {
            rotation: 0.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            rotation: 0.0,
            tx,
            ty,
        }
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        let (s, c) = self.rotation.sin_cos();
        Point2::new(c * p.x - s * p.y + self.tx, s * p.x + c * p.y + self.ty)
    }

    /// `self` composed after `first`: result.apply(p) == self.apply(first.apply(p)).
    pub fn compose(&self, first: &RigidTransform2) -> RigidTransform2 {
        let (s, c) = self.rotation.sin_cos();
        RigidTransform2 {
            rotation: normalize_angle(self.rotation + first.rotation),
            tx: c * first.tx - s * first.ty + self.tx,
            ty: s * first.tx + c * first.ty + self.ty,
        }
    }
}

/// Axis-aligned rectangle, `min` inclusive, `max` inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Aabb {
    pub fn of_points(points: &[Point2]) -> Option<Aabb> {
        let first = points.first()?;
        let mut r = Aabb {
            min_x: first.x,
            min_y: first.y,
            max_x: first.x,
            max_y: first.y,
        };
        for p in &points[1..] {
            r.min_x = r.min_x.min(p.x);
            r.min_y = r.min_y.min(p.y);
            r.max_x = r.max_x.max(p.x);
            r.max_y = r.max_y.max(p.y);
        }
        Some(r)
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }

    pub fn area(&self) -> f64 {
        (self.max_x - self.min_x).max(0.0) * (self.max_y - self.min_y).max(0.0)
    }

    pub fn dilate(&self, r: f64) -> Aabb {
        Aabb {
            min_x: self.min_x - r,
            min_y: self.min_y - r,
            max_x: self.max_x + r,
            max_y: self.max_y + r,
        }
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min_x: self.min_x.min(other.min_x),
            min_y: self.min_y.min(other.min_y),
            max_x: self.max_x.max(other.max_x),
            max_y: self.max_y.max(other.max_y),
        }
    }

    pub fn diagonal(&self) -> f64 {
        (self.max_x - self.min_x).hypot(self.max_y - self.min_y)
    }
}

pub fn centroid(points: &[Point2]) -> Point2 {
    if points.is_empty() {
        return Point2::new(0.0, 0.0);
    }
    let mut cx = 0.0;
    let mut cy = 0.0;
    for p in points {
        cx += p.x;
        cy += p.y;
    }
    let n = points.len() as f64;
    Point2::new(cx / n, cy / n)
}

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull (Andrew monotone chain), counter-clockwise, no repeated endpoint.
/// Collinear inputs collapse to the two extreme points; a single point returns itself.
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(|a, b| {
        a.x.partial_cmp(&b.x)
            .unwrap()
            .then(a.y.partial_cmp(&b.y).unwrap())
    });
    pts.dedup_by(|a, b| a.x == b.x && a.y == b.y);
    if pts.len() <= 2 {
        return pts;
    }
    let mut hull: Vec<Point2> = Vec::with_capacity(pts.len() * 2);
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev() {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Point-in-convex-polygon test, boundary inclusive. The polygon must be CCW.
pub fn hull_contains(hull: &[Point2], p: Point2) -> bool {
    if hull.len() < 3 {
        return false;
    }
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        if cross(a, b, p) < -1e-12 {
            return false;
        }
    }
    true
}

/// Resamples `count` points uniformly (by arc length) along the closed hull boundary.
pub fn densify_hull(hull: &[Point2], count: usize) -> Vec<Point2> {
    if hull.is_empty() || count == 0 {
        return Vec::new();
    }
    if hull.len() == 1 {
        return vec![hull[0]; count.min(1)];
    }
    // Closed perimeter for >= 3 vertices, open polyline for 2.
    let closed = hull.len() >= 3;
    let seg_count = if closed { hull.len() } else { hull.len() - 1 };
    let mut seg_len = Vec::with_capacity(seg_count);
    let mut total = 0.0;
    for i in 0..seg_count {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        let l = a.dist(b);
        seg_len.push(l);
        total += l;
    }
    if total <= 0.0 {
        return vec![hull[0]; count.min(1)];
    }
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let mut s = total * (k as f64) / (count as f64);
        let mut i = 0;
        while i < seg_count - 1 && s > seg_len[i] {
            s -= seg_len[i];
            i += 1;
        }
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        let t = if seg_len[i] > 0.0 { s / seg_len[i] } else { 0.0 };
        out.push(Point2::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t));
    }
    out
}
