//! Sphere-traced reference renderer for scene geometry.
//!
//! Matte shading on a white background: `color * (0.8 + 0.2 * max(0, n.l))`
//! with a fixed light direction. Supersampled by an integer factor and
//! box-filtered down; the mask marks pixels with at least half coverage.

use super::sdf::SceneGeometry;
use super::spec::SceneSpec;
use crate::camera::{Camera, CameraRig};
use crate::img::Image;

pub const NEAR: f64 = 0.75;
pub const FAR: f64 = 4.25;
const HIT_EPS: f64 = 2e-4;
const MAX_STEPS: usize = 256;
const AMBIENT: f32 = 0.8;
const DIFFUSE: f32 = 0.2;

fn light_dir() -> [f64; 3] {
    let v: [f64; 3] = [0.3, 0.7, 0.55];
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

#[derive(Debug, Clone)]
pub struct RenderedView {
    pub image: Image,
    pub mask: Vec<bool>,
}

/// March one ray; returns the hit point and nearest subject, if any.
pub fn trace(geom: &SceneGeometry, origin: [f64; 3], dir: [f64; 3]) -> Option<([f64; 3], usize)> {
    let mut t = NEAR;
    for _ in 0..MAX_STEPS {
        let p = [
            origin[0] + t * dir[0],
            origin[1] + t * dir[1],
            origin[2] + t * dir[2],
        ];
        let (d, who) = geom.distance(p);
        if d < HIT_EPS {
            return Some((p, who));
        }
        t += d;
        if t > FAR {
            return None;
        }
    }
    None
}

pub fn render_view(spec: &SceneSpec, camera: &Camera, size: usize, ssaa: usize) -> RenderedView {
    let geom = SceneGeometry::new(spec);
    let light = light_dir();
    let hi = size * ssaa;
    let mut img = Image::new(hi);
    let mut coverage = vec![0u32; size * size];
    for r in 0..hi {
        for c in 0..hi {
            let (o, d) = camera.pixel_ray(r, c, hi);
            let rgb = match trace(&geom, o, d) {
                Some((p, who)) => {
                    let n = geom.normal(p);
                    let lambert =
                        (n[0] * light[0] + n[1] * light[1] + n[2] * light[2]).max(0.0) as f32;
                    let base = spec.subjects[who].color.rgb();
                    coverage[(r / ssaa) * size + c / ssaa] += 1;
                    base.map(|v| v * (AMBIENT + DIFFUSE * lambert))
                }
                None => [1.0, 1.0, 1.0],
            };
            img.set_pixel(r, c, rgb);
        }
    }
    let image = img.downsample(ssaa).expect("ssaa divides supersampled size");
    let half = (ssaa * ssaa / 2).max(1) as u32;
    let mask = coverage.iter().map(|&c| c >= half).collect();
    RenderedView { image, mask }
}

pub fn render_rig(spec: &SceneSpec, rig: &CameraRig, ssaa: usize) -> Vec<RenderedView> {
    rig.cameras
        .iter()
        .map(|cam| render_view(spec, cam, rig.image_size, ssaa))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::spec::{Color, Relation, Shape, Subject, GROUND_Y};

    fn scene() -> SceneSpec {
        SceneSpec {
            subjects: vec![
                Subject {
                    color: Color::Red,
                    shape: Shape::Sphere,
                    scale: 0.22,
                    position: [-0.45, GROUND_Y + 0.22, 0.0],
                },
                Subject {
                    color: Color::Blue,
                    shape: Shape::Cube,
                    scale: 0.22,
                    position: [0.45, GROUND_Y + 0.22, 0.0],
                },
            ],
            relations: vec![Some(Relation::LeftOf)],
        }
    }

    #[test]
    fn background_is_white_and_objects_are_visible() {
        let spec = scene();
        let cam = Camera::new(0.0, 15.0, crate::camera::DEFAULT_RADIUS, 40.0);
        let view = render_view(&spec, &cam, 48, 2);
        assert_eq!(view.image.pixel(0, 0), [1.0, 1.0, 1.0]);
        let covered = view.mask.iter().filter(|m| **m).count();
        assert!(covered > 40, "only {covered} covered pixels");
        // red appears left of blue in the first view
        let mut red_cols = Vec::new();
        let mut blue_cols = Vec::new();
        for r in 0..48 {
            for c in 0..48 {
                let p = view.image.pixel(r, c);
                if p[0] > 0.5 && p[1] < 0.4 && p[2] < 0.4 {
                    red_cols.push(c);
                }
                if p[2] > 0.5 && p[0] < 0.45 && p[1] < 0.5 {
                    blue_cols.push(c);
                }
            }
        }
        assert!(!red_cols.is_empty() && !blue_cols.is_empty());
        let red_mean = red_cols.iter().sum::<usize>() as f64 / red_cols.len() as f64;
        let blue_mean = blue_cols.iter().sum::<usize>() as f64 / blue_cols.len() as f64;
        assert!(red_mean < blue_mean, "red at {red_mean}, blue at {blue_mean}");
    }

    #[test]
    fn opposite_view_swaps_left_and_right() {
        let spec = scene();
        let front = render_view(&spec, &Camera::new(0.0, 15.0, 2.5, 40.0), 32, 1);
        let back = render_view(&spec, &Camera::new(180.0, 15.0, 2.5, 40.0), 32, 1);
        let reds = |v: &RenderedView| {
            let mut cols = Vec::new();
            for r in 0..32 {
                for c in 0..32 {
                    let p = v.image.pixel(r, c);
                    if p[0] > 0.5 && p[1] < 0.4 {
                        cols.push(c as f64);
                    }
                }
            }
            cols.iter().sum::<f64>() / cols.len() as f64
        };
        assert!(reds(&front) < 16.0);
        assert!(reds(&back) > 16.0);
    }

    #[test]
    fn rendering_is_deterministic() {
        let spec = scene();
        let cam = Camera::new(30.0, 10.0, 2.5, 40.0);
        let a = render_view(&spec, &cam, 32, 2);
        let b = render_view(&spec, &cam, 32, 2);
        assert_eq!(a.image.data, b.image.data);
        assert_eq!(a.mask, b.mask);
    }
}
