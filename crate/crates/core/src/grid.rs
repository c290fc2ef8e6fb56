//! Shared 2D grid machinery: one grid spec is used by the background map,
//! the priority map, the planner, and the metrics so cell indices always agree.

use crate::geometry::{convex_hull, hull_contains, Aabb, Point2};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    pub width: usize,
    pub height: usize,
}

impl GridSpec {
    /// Covers `bounds` with square cells of side `resolution`.
    pub fn covering(bounds: &Aabb, resolution: f64) -> GridSpec {
        let width = ((bounds.max_x - bounds.min_x) / resolution).ceil().max(1.0) as usize;
        let height = ((bounds.max_y - bounds.min_y) / resolution).ceil().max(1.0) as usize;
        GridSpec {
            resolution,
            origin_x: bounds.min_x,
            origin_y: bounds.min_y,
            width,
            height,
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_area(&self) -> f64 {
        self.resolution * self.resolution
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.width + ix
    }

    pub fn cell_of(&self, p: Point2) -> Option<(usize, usize)> {
        let fx = (p.x - self.origin_x) / self.resolution;
        let fy = (p.y - self.origin_y) / self.resolution;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let ix = fx as usize;
        let iy = fy as usize;
        if ix >= self.width || iy >= self.height {
            return None;
        }
        Some((ix, iy))
    }

    /// Like `cell_of` but points on the outer max edge are clamped inward.
    pub fn cell_of_clamped(&self, p: Point2) -> Option<(usize, usize)> {
        let fx = (p.x - self.origin_x) / self.resolution;
        let fy = (p.y - self.origin_y) / self.resolution;
        if fx < -1e-9 || fy < -1e-9 {
            return None;
        }
        let ix = (fx.max(0.0) as usize).min(self.width.saturating_sub(1));
        let iy = (fy.max(0.0) as usize).min(self.height.saturating_sub(1));
        if fx > self.width as f64 + 1e-9 || fy > self.height as f64 + 1e-9 {
            return None;
        }
        Some((ix, iy))
    }

    pub fn center(&self, ix: usize, iy: usize) -> Point2 {
        Point2::new(
            self.origin_x + (ix as f64 + 0.5) * self.resolution,
            self.origin_y + (iy as f64 + 0.5) * self.resolution,
        )
    }

    pub fn world_bounds(&self) -> Aabb {
        Aabb {
            min_x: self.origin_x,
            min_y: self.origin_y,
            max_x: self.origin_x + self.width as f64 * self.resolution,
            max_y: self.origin_y + self.height as f64 * self.resolution,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellState {
    Unknown,
    Free,
    Occupied,
}

/// Dense grid of `T` over a `GridSpec`, row-major with row 0 at the south edge.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    pub spec: GridSpec,
    pub data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(spec: GridSpec, value: T) -> Grid<T> {
        Grid {
            spec,
            data: vec![value; spec.len()],
        }
    }

    pub fn get(&self, ix: usize, iy: usize) -> &T {
        &self.data[self.spec.index(ix, iy)]
    }

    pub fn set(&mut self, ix: usize, iy: usize, value: T) {
        let i = self.spec.index(ix, iy);
        self.data[i] = value;
    }

    pub fn at_point(&self, p: Point2) -> Option<&T> {
        self.spec.cell_of(p).map(|(ix, iy)| self.get(ix, iy))
    }
}

/// All cells a segment passes through (supercover traversal), endpoints included.
/// Unlike plain Bresenham this also yields cells the segment touches only at
/// a corner crossing, so it is safe for collision checks.
pub fn supercover_line(spec: &GridSpec, from: Point2, to: Point2) -> Vec<(usize, usize)> {
    let mut cells = Vec::new();
    let res = spec.resolution;
    let mut x = (from.x - spec.origin_x) / res;
    let mut y = (from.y - spec.origin_y) / res;
    let x1 = (to.x - spec.origin_x) / res;
    let y1 = (to.y - spec.origin_y) / res;

    let dx = x1 - x;
    let dy = y1 - y;
    let n_steps = (dx.abs().max(dy.abs()).ceil() as usize * 2).max(1);
    let sx = dx / n_steps as f64;
    let sy = dy / n_steps as f64;

    let mut last: Option<(i64, i64)> = None;
    let push = |cells: &mut Vec<(usize, usize)>, cx: i64, cy: i64| {
        if cx >= 0 && cy >= 0 && (cx as usize) < spec.width && (cy as usize) < spec.height {
            cells.push((cx as usize, cy as usize));
        }
    };
    for _ in 0..=n_steps {
        let cx = x.floor() as i64;
        let cy = y.floor() as i64;
        match last {
            Some((lx, ly)) if lx == cx && ly == cy => {}
            Some((lx, ly)) => {
                // Fill the 4-connected gap if we moved diagonally in one step.
                if lx != cx && ly != cy {
                    push(&mut cells, lx, cy);
                    push(&mut cells, cx, ly);
                }
                push(&mut cells, cx, cy);
                last = Some((cx, cy));
            }
            None => {
                push(&mut cells, cx, cy);
                last = Some((cx, cy));
            }
        }
        x += sx;
        y += sy;
    }
    cells
}

/// Rasterizes the convex hull of `points` onto the grid: every cell whose
/// center lies inside the hull (boundary inclusive). Degenerate hulls fall
/// back to the supercover of the segment, or the single containing cell.
pub fn rasterize_hull(spec: &GridSpec, points: &[Point2]) -> Vec<(usize, usize)> {
    let hull = convex_hull(points);
    match hull.len() {
        0 => Vec::new(),
        1 => spec.cell_of_clamped(hull[0]).into_iter().collect(),
        2 => {
            let mut cells = supercover_line(spec, hull[0], hull[1]);
            cells.sort_unstable();
            cells.dedup();
            cells
        }
        _ => {
            let bbox = Aabb::of_points(&hull).unwrap();
            let lo = spec
                .cell_of_clamped(Point2::new(bbox.min_x, bbox.min_y))
                .unwrap_or((0, 0));
            let hi = spec
                .cell_of_clamped(Point2::new(bbox.max_x, bbox.max_y))
                .unwrap_or((spec.width - 1, spec.height - 1));
            let mut cells = Vec::new();
            for iy in lo.1..=hi.1 {
                for ix in lo.0..=hi.0 {
                    if hull_contains(&hull, spec.center(ix, iy)) {
                        cells.push((ix, iy));
                    }
                }
            }
            // Guarantee at least the cells under the hull vertices so thin
            // objects never vanish between cell centers.
            if cells.is_empty() {
                for v in &hull {
                    if let Some(c) = spec.cell_of_clamped(*v) {
                        cells.push(c);
                    }
                }
                cells.sort_unstable();
                cells.dedup();
            }
            cells
        }
    }
}

/// Marks every cell within `radius` (euclidean, center-to-center) of an
/// occupied cell as occupied. Used to grow obstacles by the robot radius.
pub fn inflate(occupied: &Grid<bool>, radius: f64) -> Grid<bool> {
    let spec = occupied.spec;
    let r_cells = (radius / spec.resolution).ceil() as i64;
    if r_cells <= 0 {
        return occupied.clone();
    }
    let mut offsets = Vec::new();
    for dy in -r_cells..=r_cells {
        for dx in -r_cells..=r_cells {
            let d = ((dx * dx + dy * dy) as f64).sqrt() * spec.resolution;
            if d <= radius + 1e-9 {
                offsets.push((dx, dy));
            }
        }
    }
    let mut out = Grid::filled(spec, false);
    for iy in 0..spec.height {
        for ix in 0..spec.width {
            if !*occupied.get(ix, iy) {
                continue;
            }
            for &(dx, dy) in &offsets {
                let nx = ix as i64 + dx;
                let ny = iy as i64 + dy;
                if nx >= 0 && ny >= 0 && (nx as usize) < spec.width && (ny as usize) < spec.height {
                    out.set(nx as usize, ny as usize, true);
                }
            }
        }
    }
    out
}

/// Run-length encodes one grid row as `(state, count)` pairs.
pub fn rle_row(states: &[CellState]) -> Vec<(CellState, usize)> {
    let mut out: Vec<(CellState, usize)> = Vec::new();
    for s in states {
        match out.last_mut() {
            Some((last, n)) if last == s => *n += 1,
            _ => out.push((*s, 1)),
        }
    }
    out
}

pub fn rle_decode(runs: &[(CellState, usize)]) -> Vec<CellState> {
    let mut out = Vec::new();
    for (s, n) in runs {
        out.extend(std::iter::repeat_n(*s, *n));
    }
    out
}
