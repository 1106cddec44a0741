//! Signed distance evaluation for scene geometry.

use super::spec::{SceneSpec, Shape, Subject};

/// Precomputed per-subject geometry for distance queries.
#[derive(Debug, Clone)]
pub struct SceneGeometry {
    subjects: Vec<SubjectGeom>,
}

#[derive(Debug, Clone)]
struct SubjectGeom {
    shape: Shape,
    position: [f64; 3],
    scale: f64,
}

impl SceneGeometry {
    pub fn new(spec: &SceneSpec) -> Self {
        let subjects = spec
            .subjects
            .iter()
            .map(|s: &Subject| SubjectGeom {
                shape: s.shape,
                position: s.position,
                scale: s.scale,
            })
            .collect();
        Self { subjects }
    }

    /// Distance to the nearest surface and the index of the nearest subject.
    pub fn distance(&self, p: [f64; 3]) -> (f64, usize) {
        let mut best = f64::INFINITY;
        let mut who = 0;
        for (i, s) in self.subjects.iter().enumerate() {
            let d = s.distance(p);
            if d < best {
                best = d;
                who = i;
            }
        }
        (best, who)
    }

    pub fn normal(&self, p: [f64; 3]) -> [f64; 3] {
        let h = 1e-5;
        let mut n = [0f64; 3];
        for a in 0..3 {
            let mut hi = p;
            let mut lo = p;
            hi[a] += h;
            lo[a] -= h;
            n[a] = self.distance(hi).0 - self.distance(lo).0;
        }
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt().max(1e-12);
        [n[0] / len, n[1] / len, n[2] / len]
    }
}

impl SubjectGeom {
    fn distance(&self, p: [f64; 3]) -> f64 {
        let q = [
            p[0] - self.position[0],
            p[1] - self.position[1],
            p[2] - self.position[2],
        ];
        let s = self.scale;
        match self.shape {
            Shape::Sphere => (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt() - s,
            Shape::Cube => {
                let d = [q[0].abs() - s, q[1].abs() - s, q[2].abs() - s];
                let outside = (d[0].max(0.0).powi(2) + d[1].max(0.0).powi(2) + d[2].max(0.0).powi(2)).sqrt();
                let inside = d[0].max(d[1]).max(d[2]).min(0.0);
                outside + inside
            }
            // Capped cone spanning q.y in [0, 2s], radius s at the base
            // tapering to a point at the apex.
            Shape::Cone => {
                let h = s;
                let r1 = s;
                let r2 = 1e-4;
                let c = [q[0], q[1] - h, q[2]];
                let qv = [(c[0] * c[0] + c[2] * c[2]).sqrt(), c[1]];
                let k1 = [r2, h];
                let k2 = [r2 - r1, 2.0 * h];
                let ca = [
                    qv[0] - qv[0].min(if qv[1] < 0.0 { r1 } else { r2 }),
                    qv[1].abs() - h,
                ];
                let t = ((k1[0] - qv[0]) * k2[0] + (k1[1] - qv[1]) * k2[1])
                    / (k2[0] * k2[0] + k2[1] * k2[1]);
                let t = t.clamp(0.0, 1.0);
                let cb = [qv[0] - k1[0] + k2[0] * t, qv[1] - k1[1] + k2[1] * t];
                let sign = if cb[0] < 0.0 && ca[1] < 0.0 { -1.0 } else { 1.0 };
                let d2 = (ca[0] * ca[0] + ca[1] * ca[1]).min(cb[0] * cb[0] + cb[1] * cb[1]);
                sign * d2.sqrt()
            }
            // Torus lying flat: major radius 0.75s, tube radius 0.25s.
            Shape::Torus => {
                let major = 0.75 * s;
                let minor = 0.25 * s;
                let ring = (q[0] * q[0] + q[2] * q[2]).sqrt() - major;
                (ring * ring + q[1] * q[1]).sqrt() - minor
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::scenes::spec::{Color, GROUND_Y};
    use rand::Rng;

    fn single(shape: Shape, scale: f64) -> SceneGeometry {
        let subject = Subject {
            color: Color::Red,
            shape,
            scale,
            position: [0.0, 0.0, 0.0],
        };
        SceneGeometry::new(&SceneSpec {
            subjects: vec![subject],
            relations: vec![],
        })
    }

    #[test]
    fn sphere_distance_is_exact() {
        let g = single(Shape::Sphere, 0.25);
        assert!((g.distance([1.0, 0.0, 0.0]).0 - 0.75).abs() < 1e-12);
        assert!((g.distance([0.0, 0.1, 0.0]).0 + 0.15).abs() < 1e-12);
    }

    #[test]
    fn distances_are_metric_lower_bounds() {
        // |d(p) - d(q)| <= |p - q| for a true signed distance field
        for shape in Shape::ALL {
            let g = single(shape, 0.22);
            let mut rng = stream(11, "sdf");
            for _ in 0..500 {
                let p: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.8..0.8));
                let q: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.8..0.8));
                let dp = g.distance(p).0;
                let dq = g.distance(q).0;
                let sep = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2))
                    .sqrt();
                assert!(
                    (dp - dq).abs() <= sep + 1e-9,
                    "{shape:?}: lipschitz violated ({dp} vs {dq} at separation {sep})"
                );
            }
        }
    }

    #[test]
    fn surface_points_have_small_distance() {
        let g = single(Shape::Torus, 0.3);
        // point on the outer equator of the tube
        let d = g.distance([0.3, 0.0, 0.0]).0;
        assert!(d.abs() < 1e-12, "outer torus surface distance {d}");
    }

    #[test]
    fn nearest_subject_index_is_reported() {
        let scene = SceneSpec {
            subjects: vec![
                Subject {
                    color: Color::Red,
                    shape: Shape::Sphere,
                    scale: 0.2,
                    position: [-0.5, GROUND_Y + 0.2, 0.0],
                },
                Subject {
                    color: Color::Blue,
                    shape: Shape::Cube,
                    scale: 0.2,
                    position: [0.5, GROUND_Y + 0.2, 0.0],
                },
            ],
            relations: vec![None],
        };
        let g = SceneGeometry::new(&scene);
        assert_eq!(g.distance([-0.5, 0.0, 0.0]).1, 0);
        assert_eq!(g.distance([0.5, 0.0, 0.0]).1, 1);
    }

    #[test]
    fn normals_point_outward() {
        let g = single(Shape::Cube, 0.25);
        let n = g.normal([0.4, 0.0, 0.0]);
        assert!(n[0] > 0.99);
    }
}
