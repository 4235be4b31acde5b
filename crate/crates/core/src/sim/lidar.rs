//! 2D LIDAR by grid traversal (Amanatides–Woo DDA).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::grid::OccupancyGrid;
use crate::bus::schema::{LaserScan, Pose2D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarParams {
    pub n_beams: usize,
    pub angle_min: f64,
    pub angle_max: f64,
    pub range_max: f64,
    pub noise_sigma: f64,
}

impl Default for LidarParams {
    /// 360 beams at 1° spacing, 10 m range, noiseless.
    fn default() -> Self {
        let step = std::f64::consts::TAU / 360.0;
        LidarParams {
            n_beams: 360,
            angle_min: -std::f64::consts::PI,
            angle_max: std::f64::consts::PI - step,
            range_max: 10.0,
            noise_sigma: 0.0,
        }
    }
}

impl LidarParams {
    pub fn angle_increment(&self) -> f64 {
        if self.n_beams > 1 {
            (self.angle_max - self.angle_min) / (self.n_beams - 1) as f64
        } else {
            0.0
        }
    }
}

/// Distance from `(x, y)` along `heading` to the first occupied cell, capped at `range_max`.
pub fn cast_ray(grid: &OccupancyGrid, x: f64, y: f64, heading: f64, range_max: f64) -> f64 {
    let (ox, oy) = grid.origin();
    let res = grid.resolution();
    let (mut i, mut j) = grid.cell_of(x, y);
    if grid.occupied_cell(i, j) {
        return 0.0;
    }
    let (dx, dy) = (heading.cos(), heading.sin());

    let axis = |d: f64, pos: f64, origin: f64, cell: i64| -> (i64, f64, f64) {
        if d > 0.0 {
            let boundary = origin + (cell + 1) as f64 * res;
            (1, (boundary - pos) / d, res / d)
        } else if d < 0.0 {
            let boundary = origin + cell as f64 * res;
            (-1, (boundary - pos) / d, -res / d)
        } else {
            (0, f64::INFINITY, f64::INFINITY)
        }
    };
    let (step_i, mut t_max_x, t_delta_x) = axis(dx, x, ox, i);
    let (step_j, mut t_max_y, t_delta_y) = axis(dy, y, oy, j);

    loop {
        let t = if t_max_x < t_max_y {
            i += step_i;
            let t = t_max_x;
            t_max_x += t_delta_x;
            t
        } else {
            j += step_j;
            let t = t_max_y;
            t_max_y += t_delta_y;
            t
        };
        if t >= range_max {
            return range_max;
        }
        if grid.occupied_cell(i, j) {
            return t.max(0.0);
        }
    }
}

pub fn scan_lidar<R: Rng + ?Sized>(
    grid: &OccupancyGrid,
    pose: &Pose2D,
    params: &LidarParams,
    rng: &mut R,
) -> LaserScan {
    let increment = params.angle_increment();
    let noise = (params.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, params.noise_sigma).expect("sigma is positive and finite"));
    let ranges = (0..params.n_beams)
        .map(|k| {
            let heading = pose.theta + params.angle_min + k as f64 * increment;
            let r = cast_ray(grid, pose.x, pose.y, heading, params.range_max);
            match &noise {
                Some(n) => (r + n.sample(rng)).clamp(0.0, params.range_max),
                None => r,
            }
        })
        .collect();
    LaserScan {
        angle_min: params.angle_min,
        angle_increment: increment,
        range_max: params.range_max,
        ranges,
    }
}
