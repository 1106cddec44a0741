//! The radiance field: hash-grid encoding feeding a density head and a
//! color head, with hand-derived backward passes.
//!
//! Everything is generic over the float type so gradient code can be
//! checked against central finite differences in f64 while training runs
//! in f32. Parameters live in one flat vector (see the layout module);
//! gradients are written into an equally shaped flat buffer.

use super::grid::{vertex_entry, FieldCfg, Layout};
use crate::error::Result;
use crate::rng;
use num_traits::{Float, FromPrimitive};
use rand::Rng;
use std::fmt::Debug;
use std::ops::AddAssign;

pub trait Real:
    Float + FromPrimitive + AddAssign + Copy + Send + Sync + Debug + 'static
{
}
impl Real for f32 {}
impl Real for f64 {}

/// Shorthand for float literals in generic code.
pub(crate) fn c<T: Real>(x: f64) -> T {
    T::from_f64(x).unwrap()
}

pub(crate) fn softplus<T: Real>(x: T) -> T {
    if x > c(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Per-point forward state retained for the backward pass. Reused across
/// samples to avoid per-point allocation.
#[derive(Debug, Clone)]
pub struct PointCache<T> {
    /// `(parameter index of the entry's first feature, trilinear weight)`,
    /// eight per level.
    corners: Vec<(usize, T)>,
    enc: Vec<T>,
    dir: [T; 3],
    yd: Vec<T>,
    hd: Vec<T>,
    raw: T,
    yc: Vec<T>,
    hc: Vec<T>,
    zc: [T; 3],
    pub sigma: T,
    pub rgb: [T; 3],
}

impl<T: Real> Default for PointCache<T> {
    fn default() -> Self {
        Self {
            corners: Vec::new(),
            enc: Vec::new(),
            dir: [T::zero(); 3],
            yd: Vec::new(),
            hd: Vec::new(),
            raw: T::zero(),
            yc: Vec::new(),
            hc: Vec::new(),
            zc: [T::zero(); 3],
            sigma: T::zero(),
            rgb: [T::zero(); 3],
        }
    }
}

#[derive(Debug, Clone)]
pub struct RadianceField<T: Real> {
    pub cfg: FieldCfg,
    pub layout: Layout,
    pub params: Vec<T>,
}

impl<T: Real> RadianceField<T> {
    /// Zero-initialized field (tests and deserialization).
    pub fn zeros(cfg: FieldCfg) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let params = vec![T::zero(); layout.total];
        Ok(Self {
            cfg,
            layout,
            params,
        })
    }

    /// Seeded initialization: tiny uniform table features, uniform
    /// fan-in-scaled head weights, zero biases except a negative density
    /// bias so the scene starts as light fog instead of an opaque block.
    pub fn new(cfg: FieldCfg, seed: u64) -> Result<Self> {
        let mut field = Self::zeros(cfg)?;
        let mut r = rng::stream(seed, "field/init");
        let l = &field.layout;
        for p in &mut field.params[..l.tables] {
            *p = c(r.gen_range(-1e-4..1e-4));
        }
        let d = field.cfg.feature_dim();
        let dc = field.cfg.color_in_dim();
        let h = field.cfg.hidden;
        for (sp, fan_in) in [(l.w1, d), (l.w2, h), (l.v1, dc), (l.v2, h)] {
            let lim = (6.0 / fan_in as f64).sqrt();
            for i in sp.0..sp.0 + sp.1 {
                field.params[i] = c(r.gen_range(-lim..lim));
            }
        }
        field.params[l.b2.0] = c(-2.0);
        Ok(field)
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    /// Convert the parameter vector to another float width.
    pub fn cast<U: Real>(&self) -> RadianceField<U> {
        RadianceField {
            cfg: self.cfg.clone(),
            layout: self.layout.clone(),
            params: self
                .params
                .iter()
                .map(|&p| U::from_f64(p.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }

    /// All parameters finite?
    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Trilinear corner indices and weights of `p` at every level,
    /// appended to `out` as eight `(param index, weight)` pairs per level.
    /// Points outside the bounds clamp to the boundary.
    fn corners(&self, p: [T; 3], out: &mut Vec<(usize, T)>) {
        out.clear();
        let inv = c::<T>(0.5) / c(self.cfg.bound);
        let u = [
            (p[0] * inv + c(0.5)).max(T::zero()).min(T::one()),
            (p[1] * inv + c(0.5)).max(T::zero()).min(T::one()),
            (p[2] * inv + c(0.5)).max(T::zero()).min(T::one()),
        ];
        for l in 0..self.cfg.levels {
            let res = self.layout.level_res[l];
            let dense = self.layout.level_dense[l];
            let entries = self.layout.level_entries[l];
            let offset = self.layout.level_offset[l];
            let mut cell = [0usize; 3];
            let mut frac = [T::zero(); 3];
            for a in 0..3 {
                let g = u[a] * c(res as f64);
                let mut i = g.floor().to_f64().unwrap() as isize;
                if i > res as isize - 1 {
                    i = res as isize - 1;
                }
                if i < 0 {
                    i = 0;
                }
                cell[a] = i as usize;
                frac[a] = g - c(i as f64);
            }
            for dx in 0..2usize {
                let wx = if dx == 0 { T::one() - frac[0] } else { frac[0] };
                for dy in 0..2usize {
                    let wy = if dy == 0 { T::one() - frac[1] } else { frac[1] };
                    for dz in 0..2usize {
                        let wz = if dz == 0 { T::one() - frac[2] } else { frac[2] };
                        let e = vertex_entry(
                            cell[0] + dx,
                            cell[1] + dy,
                            cell[2] + dz,
                            res,
                            dense,
                            entries,
                        );
                        out.push((offset + e * self.cfg.feats_per_level, wx * wy * wz));
                    }
                }
            }
        }
    }

    /// Concatenated interpolated features of all levels.
    pub fn encode(&self, p: [T; 3]) -> Vec<T> {
        let mut corners = Vec::with_capacity(self.cfg.levels * 8);
        self.corners(p, &mut corners);
        let f = self.cfg.feats_per_level;
        let mut enc = vec![T::zero(); self.cfg.feature_dim()];
        for (l, chunk) in corners.chunks(8).enumerate() {
            for &(base, w) in chunk {
                for k in 0..f {
                    enc[l * f + k] += w * self.params[base + k];
                }
            }
        }
        enc
    }

    /// Density and color at a point, populating `cache` for the backward
    /// pass. `dir` only matters for view-dependent color.
    pub fn eval_point_cached(&self, p: [T; 3], dir: [T; 3], cache: &mut PointCache<T>) {
        let f = self.cfg.feats_per_level;
        let d = self.cfg.feature_dim();
        let dc = self.cfg.color_in_dim();
        let h = self.cfg.hidden;
        let l = &self.layout;

        self.corners(p, &mut cache.corners);
        cache.enc.clear();
        cache.enc.resize(d, T::zero());
        for (lv, chunk) in cache.corners.chunks(8).enumerate() {
            for &(base, w) in chunk {
                for k in 0..f {
                    cache.enc[lv * f + k] += w * self.params[base + k];
                }
            }
        }
        cache.dir = dir;

        // density head
        cache.yd.clear();
        cache.hd.clear();
        for j in 0..h {
            let mut acc = self.params[l.b1.0 + j];
            let row = l.w1.0 + j * d;
            for i in 0..d {
                acc = acc + self.params[row + i] * cache.enc[i];
            }
            cache.yd.push(acc);
            cache.hd.push(acc.max(T::zero()));
        }
        let mut raw = self.params[l.b2.0];
        for j in 0..h {
            raw = raw + self.params[l.w2.0 + j] * cache.hd[j];
        }
        cache.raw = raw;
        cache.sigma = softplus(raw);

        // color head
        let cin = |i: usize, cache: &PointCache<T>| {
            if i < d {
                cache.enc[i]
            } else {
                cache.dir[i - d]
            }
        };
        cache.yc.clear();
        cache.hc.clear();
        for j in 0..h {
            let mut acc = self.params[l.c1.0 + j];
            let row = l.v1.0 + j * dc;
            for i in 0..dc {
                acc = acc + self.params[row + i] * cin(i, cache);
            }
            cache.yc.push(acc);
            cache.hc.push(acc.max(T::zero()));
        }
        for k in 0..3 {
            let mut acc = self.params[l.c2.0 + k];
            let row = l.v2.0 + k * h;
            for j in 0..h {
                acc = acc + self.params[row + j] * cache.hc[j];
            }
            cache.zc[k] = acc;
            cache.rgb[k] = sigmoid(acc);
        }
    }

    /// Density and color without retaining state.
    pub fn eval_point(&self, p: [T; 3], dir: [T; 3]) -> (T, [T; 3]) {
        let mut cache = PointCache::default();
        self.eval_point_cached(p, dir, &mut cache);
        (cache.sigma, cache.rgb)
    }

    /// Accumulate `d loss / d params` into `grad` for one evaluated point,
    /// given the loss sensitivities to its density and color.
    pub fn backward_point(
        &self,
        cache: &PointCache<T>,
        dsigma: T,
        drgb: [T; 3],
        grad: &mut [T],
    ) {
        debug_assert_eq!(grad.len(), self.layout.total);
        let f = self.cfg.feats_per_level;
        let d = self.cfg.feature_dim();
        let dc = self.cfg.color_in_dim();
        let h = self.cfg.hidden;
        let l = &self.layout;
        let mut denc = vec![T::zero(); d];

        // density head
        let draw = dsigma * sigmoid(cache.raw);
        grad[l.b2.0] += draw;
        for j in 0..h {
            grad[l.w2.0 + j] += draw * cache.hd[j];
            if cache.yd[j] > T::zero() {
                let dyd = self.params[l.w2.0 + j] * draw;
                grad[l.b1.0 + j] += dyd;
                let row = l.w1.0 + j * d;
                for i in 0..d {
                    grad[row + i] += dyd * cache.enc[i];
                    denc[i] += self.params[row + i] * dyd;
                }
            }
        }

        // color head
        let cin = |i: usize| if i < d { cache.enc[i] } else { cache.dir[i - d] };
        let mut dhc = vec![T::zero(); h];
        for k in 0..3 {
            let dz = drgb[k] * cache.rgb[k] * (T::one() - cache.rgb[k]);
            grad[l.c2.0 + k] += dz;
            let row = l.v2.0 + k * h;
            for j in 0..h {
                grad[row + j] += dz * cache.hc[j];
                dhc[j] += self.params[row + j] * dz;
            }
        }
        for j in 0..h {
            if cache.yc[j] > T::zero() {
                let dyc = dhc[j];
                grad[l.c1.0 + j] += dyc;
                let row = l.v1.0 + j * dc;
                for i in 0..dc {
                    grad[row + i] += dyc * cin(i);
                    if i < d {
                        denc[i] += self.params[row + i] * dyc;
                    }
                }
            }
        }

        // hash tables
        for (lv, chunk) in cache.corners.chunks(8).enumerate() {
            for &(base, w) in chunk {
                for k in 0..f {
                    grad[base + k] += w * denc[lv * f + k];
                }
            }
        }
    }
}
