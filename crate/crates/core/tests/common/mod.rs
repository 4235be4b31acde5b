//! Independent reference implementations shared by the integration tests
//! and the acceptance runner. None of these call into the library's own
//! geometry code.
#![allow(dead_code)]

pub mod checks;
pub mod server;

use rand::Rng;
use telelab::sim::{DhParam, OccupancyGrid};

pub type Mat4 = [[f64; 4]; 4];

pub fn mat_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// The textbook standard DH link matrix, written out element by element.
pub fn dh_matrix(a: f64, alpha: f64, d: f64, theta: f64) -> Mat4 {
    let (st, ct) = theta.sin_cos();
    let (sa, ca) = alpha.sin_cos();
    [
        [ct, -st * ca, st * sa, a * ct],
        [st, ct * ca, -ct * sa, a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

pub fn fk_oracle(dh: &[DhParam], q: &[f64]) -> Mat4 {
    let mut t = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
    for (p, &qi) in dh.iter().zip(q) {
        t = mat_mul(&t, &dh_matrix(p.a, p.alpha, p.d, qi + p.theta_offset));
    }
    t
}

/// Exact unicycle pose after `t` seconds of constant `(v, w)`.
pub fn unicycle_arc(x0: f64, y0: f64, th0: f64, v: f64, w: f64, t: f64) -> (f64, f64, f64) {
    if w.abs() < 1e-12 {
        return (x0 + v * th0.cos() * t, y0 + v * th0.sin() * t, th0);
    }
    let th = th0 + w * t;
    let r = v / w;
    (x0 + r * (th.sin() - th0.sin()), y0 - r * (th.cos() - th0.cos()), th)
}

/// Plain fixed-step sampler: the first sample at a multiple of `step` that
/// lands in an occupied cell. Blind to cells the ray crosses for less than
/// `step`.
pub fn sampled_ray(grid: &OccupancyGrid, x: f64, y: f64, heading: f64, range_max: f64, step: f64) -> f64 {
    let (dx, dy) = (heading.cos(), heading.sin());
    let mut k = 0u64;
    loop {
        let t = k as f64 * step;
        if t >= range_max {
            return range_max;
        }
        if grid.occupied_at(x + dx * t, y + dy * t) {
            return t;
        }
        k += 1;
    }
}

/// Length of the part of the ray that lies inside cell `(i, j)`.
pub fn chord_in_cell(grid: &OccupancyGrid, x: f64, y: f64, heading: f64, (i, j): (i64, i64)) -> f64 {
    let (ox, oy) = grid.origin();
    let r = grid.resolution();
    let (dx, dy) = (heading.cos(), heading.sin());
    let slab = |p: f64, d: f64, lo: f64, hi: f64| {
        if d.abs() < 1e-15 {
            if p >= lo && p < hi {
                (f64::NEG_INFINITY, f64::INFINITY)
            } else {
                (f64::INFINITY, f64::NEG_INFINITY)
            }
        } else {
            let (a, b) = ((lo - p) / d, (hi - p) / d);
            (a.min(b), a.max(b))
        }
    };
    let (a0, a1) = slab(x, dx, ox + i as f64 * r, ox + (i + 1) as f64 * r);
    let (b0, b1) = slab(y, dy, oy + j as f64 * r, oy + (j + 1) as f64 * r);
    (a1.min(b1) - a0.max(b0).max(0.0)).max(0.0)
}

/// Dense-sampling oracle: samples every `step` along the ray and reports
/// the first sample that lands in an occupied cell (or outside the map).
///
/// Two consecutive samples in diagonal neighbours mean the ray crossed a
/// cell corner between them and may have clipped a third cell, so that
/// interval is bisected down to `1e-9` of a cell before moving on.
pub fn dense_ray(grid: &OccupancyGrid, x: f64, y: f64, heading: f64, range_max: f64, step: f64) -> f64 {
    let (dx, dy) = (heading.cos(), heading.sin());
    let at = |t: f64| (x + dx * t, y + dy * t);
    let occupied = |t: f64| {
        let (px, py) = at(t);
        grid.occupied_at(px, py)
    };
    let cell = |t: f64| {
        let (px, py) = at(t);
        grid.cell_of(px, py)
    };
    let min_len = grid.resolution() * 1e-9;
    // First occupied sample strictly inside (t0, t1), refining corner crossings.
    fn refine(t0: f64, t1: f64, min_len: f64, cell: &dyn Fn(f64) -> (i64, i64), occupied: &dyn Fn(f64) -> bool) -> Option<f64> {
        let (a, b) = (cell(t0), cell(t1));
        let diagonal = a.0 != b.0 && a.1 != b.1;
        if !diagonal || t1 - t0 < min_len {
            return None;
        }
        let mid = 0.5 * (t0 + t1);
        if let Some(t) = refine(t0, mid, min_len, cell, occupied) {
            return Some(t);
        }
        if occupied(mid) {
            return Some(mid);
        }
        refine(mid, t1, min_len, cell, occupied)
    }
    if occupied(0.0) {
        return 0.0;
    }
    let mut t = 0.0;
    while t < range_max {
        let next = (t + step).min(range_max);
        if let Some(hit) = refine(t, next, min_len, &cell, &occupied) {
            return hit;
        }
        if occupied(next) {
            return next;
        }
        if next >= range_max {
            break;
        }
        t = next;
    }
    range_max
}

/// A random bordered world: `w × h` cells with scattered blocks.
pub fn random_grid<R: Rng>(rng: &mut R) -> OccupancyGrid {
    let res = [0.05, 0.1, 0.2][rng.random_range(0..3)];
    let (w, h) = (rng.random_range(20..80usize), rng.random_range(20..80usize));
    let mut g = OccupancyGrid::empty((rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)), (w as f64 * res, h as f64 * res), res)
        .expect("aligned");
    let density = rng.random_range(0.0..0.15);
    for j in 0..h {
        for i in 0..w {
            let border = i == 0 || j == 0 || i == w - 1 || j == h - 1;
            if border || rng.random_bool(density) {
                g.set(i, j, true);
            }
        }
    }
    g
}

/// A uniformly drawn free point of `g`, if it has one.
pub fn free_point<R: Rng>(rng: &mut R, g: &OccupancyGrid) -> Option<(f64, f64)> {
    let (ox, oy) = g.origin();
    let (w, h) = g.size();
    (0..1000)
        .map(|_| (ox + rng.random_range(0.0..w), oy + rng.random_range(0.0..h)))
        .find(|&(x, y)| !g.occupied_at(x, y))
}
