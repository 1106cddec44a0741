//! Cameras and camera rigs.
//!
//! World space is y-up with the scene inside `[-1,1]^3`. A camera orbits the
//! origin at a fixed radius, looking at the origin. Azimuth is measured
//! around +y (azimuth 0 places the camera on +z), elevation above the
//! horizon. In camera space the view direction is -z, so the world-to-camera
//! rotation rows are `[right; up; -forward]`.

use crate::error::{contract, Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_RADIUS: f64 = 2.5;
pub const DEFAULT_FOV_DEG: f64 = 40.0;
pub const DEFAULT_ELEVATION_DEG: f64 = 15.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Camera {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub radius: f64,
    pub fov_deg: f64,
}

impl Camera {
    pub fn new(azimuth_deg: f64, elevation_deg: f64, radius: f64, fov_deg: f64) -> Self {
        Self {
            azimuth_deg,
            elevation_deg,
            radius,
            fov_deg,
        }
    }

    pub fn position(&self) -> [f64; 3] {
        let a = self.azimuth_deg.to_radians();
        let e = self.elevation_deg.to_radians();
        [
            self.radius * e.cos() * a.sin(),
            self.radius * e.sin(),
            self.radius * e.cos() * a.cos(),
        ]
    }

    /// Orthonormal camera basis `(right, up, forward)`, forward pointing at
    /// the origin.
    pub fn basis(&self) -> ([f64; 3], [f64; 3], [f64; 3]) {
        let pos = self.position();
        let fwd = normalize([-pos[0], -pos[1], -pos[2]]);
        let right = normalize(cross(fwd, [0.0, 1.0, 0.0]));
        let up = cross(right, fwd);
        (right, up, fwd)
    }

    /// Flattened row-major 4x4 world-to-camera matrix.
    pub fn extrinsic(&self) -> [f32; 16] {
        let (r, u, f) = self.basis();
        let pos = self.position();
        let rows = [r, u, [-f[0], -f[1], -f[2]]];
        let mut m = [0f32; 16];
        for (i, row) in rows.iter().enumerate() {
            m[i * 4] = row[0] as f32;
            m[i * 4 + 1] = row[1] as f32;
            m[i * 4 + 2] = row[2] as f32;
            m[i * 4 + 3] = -dot(*row, pos) as f32;
        }
        m[15] = 1.0;
        m
    }

    /// Ray through the center of pixel `(row, col)` on an `n x n` image.
    /// Returns `(origin, unit direction)`.
    pub fn pixel_ray(&self, row: usize, col: usize, n: usize) -> ([f64; 3], [f64; 3]) {
        let px = ((col as f64 + 0.5) / n as f64) * 2.0 - 1.0;
        let py = 1.0 - ((row as f64 + 0.5) / n as f64) * 2.0;
        self.ndc_ray(px, py)
    }

    /// Ray for normalized device coordinates in `[-1,1]^2`, y up.
    pub fn ndc_ray(&self, px: f64, py: f64) -> ([f64; 3], [f64; 3]) {
        let (r, u, f) = self.basis();
        let half = (self.fov_deg.to_radians() / 2.0).tan();
        let d = [
            f[0] + half * (px * r[0] + py * u[0]),
            f[1] + half * (px * r[1] + py * u[1]),
            f[2] + half * (px * r[2] + py * u[2]),
        ];
        (self.position(), normalize(d))
    }
}

/// A set of `F` cameras sharing intrinsics, jointly observing one scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRig {
    pub cameras: Vec<Camera>,
    pub image_size: usize,
}

impl CameraRig {
    /// The canonical 4-view rig: azimuths `base + {0, 90, 180, 270}` at a
    /// shared elevation.
    pub fn four_view(base_azimuth_deg: f64, elevation_deg: f64, image_size: usize) -> Self {
        let cameras = (0..4)
            .map(|k| {
                Camera::new(
                    base_azimuth_deg + 90.0 * k as f64,
                    elevation_deg,
                    DEFAULT_RADIUS,
                    DEFAULT_FOV_DEG,
                )
            })
            .collect();
        Self {
            cameras,
            image_size,
        }
    }

    pub fn canonical(image_size: usize) -> Self {
        Self::four_view(0.0, DEFAULT_ELEVATION_DEG, image_size)
    }

    pub fn num_views(&self) -> usize {
        self.cameras.len()
    }

    pub fn extrinsics(&self) -> Vec<[f32; 16]> {
        self.cameras.iter().map(|c| c.extrinsic()).collect()
    }

    /// Structural compatibility: same view count, intrinsics and image size.
    /// Extrinsics may differ (each scene is observed from its own rig).
    pub fn same_structure(&self, other: &CameraRig) -> bool {
        self.num_views() == other.num_views()
            && self.image_size == other.image_size
            && self
                .cameras
                .iter()
                .zip(&other.cameras)
                .all(|(a, b)| (a.fov_deg - b.fov_deg).abs() < 1e-9 && (a.radius - b.radius).abs() < 1e-9)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() {
            return Err(contract("camera rig must contain at least one view"));
        }
        for (v, cam) in self.cameras.iter().enumerate() {
            let m = cam.extrinsic();
            let mut max_dev = 0f64;
            // R^T R - I over the 3x3 rotation block
            for i in 0..3 {
                for j in 0..3 {
                    let mut s = 0f64;
                    for k in 0..3 {
                        s += m[k * 4 + i] as f64 * m[k * 4 + j] as f64;
                    }
                    let target = if i == j { 1.0 } else { 0.0 };
                    max_dev = max_dev.max((s - target).abs());
                }
            }
            if max_dev >= 1e-5 {
                return Err(Error::Contract(format!(
                    "view {v}: rotation block not orthonormal (deviation {max_dev:.2e})"
                )));
            }
        }
        Ok(())
    }
}

/// Random-view sampling parameters for stage-2 distillation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomCameraCfg {
    pub radius: f64,
    pub fov_deg: f64,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub image_size: usize,
}

impl RandomCameraCfg {
    pub fn new(image_size: usize) -> Self {
        Self {
            radius: DEFAULT_RADIUS,
            fov_deg: DEFAULT_FOV_DEG,
            elevation_min_deg: -10.0,
            elevation_max_deg: 45.0,
            image_size,
        }
    }
}

/// One random unobserved camera: azimuth uniform over the circle, elevation
/// uniform in the configured band.
pub fn sample_random_camera(rng: &mut impl Rng, cfg: &RandomCameraCfg) -> Camera {
    let azimuth = rng.gen::<f64>() * 360.0;
    let elevation = cfg.elevation_min_deg
        + rng.gen::<f64>() * (cfg.elevation_max_deg - cfg.elevation_min_deg);
    Camera::new(azimuth, elevation, cfg.radius, cfg.fov_deg)
}

/// A 4-camera batch at 90-degree azimuth offsets from one random base
/// azimuth, matching the multi-view denoiser's training distribution.
pub fn sample_random_rig(rng: &mut impl Rng, cfg: &RandomCameraCfg) -> CameraRig {
    let base = rng.gen::<f64>() * 360.0;
    let elevation = cfg.elevation_min_deg
        + rng.gen::<f64>() * (cfg.elevation_max_deg - cfg.elevation_min_deg);
    let cameras = (0..4)
        .map(|k| Camera::new(base + 90.0 * k as f64, elevation, cfg.radius, cfg.fov_deg))
        .collect();
    CameraRig {
        cameras,
        image_size: cfg.image_size,
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = dot(v, v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}
