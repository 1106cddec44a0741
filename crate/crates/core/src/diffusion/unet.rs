//! The toy multi-view denoiser.
//!
//! A small U-Net over `F` views treated as the batch dimension, with three
//! couplings: a sinusoidal timestep embedding shared by all views, a
//! per-view camera embedding (view index plus elevation), and a bottleneck
//! self-attention over the concatenated tokens of all views, which is what
//! makes the `F` predictions mutually consistent. Text enters through
//! cross-attention; every cross-attention layer reports its probabilities
//! so sampling-time guidance can inspect and differentiate them.
//!
//! All parameters are (re-)initialized from a seeded stream, never from the
//! device RNG, so construction is bit-reproducible.

use crate::camera::CameraRig;
use crate::error::{contract, Error, Result};
use crate::rng;
use crate::text::{TextCondition, MAX_TOKENS};
use candle_core::{DType, Device, Tensor};
use candle_nn::ops::softmax;
use candle_nn::{
    embedding, group_norm, linear, Embedding, GroupNorm, Linear, Module, VarBuilder, VarMap,
};
use serde::{Deserialize, Serialize};

/// Square convolution expressed as patch extraction plus a matmul.
///
/// The builtin conv2d CPU kernel takes a fast path that misreads NCHW
/// buffers whenever channels equal both spatial extents (its layout probe
/// cannot tell the two orders apart), which this net hits at full
/// resolution. Building the op from pad / index_select / matmul sidesteps
/// that kernel entirely, forward and backward.
struct Conv {
    weight: Tensor,
    bias: Tensor,
    kernel: usize,
    padding: usize,
    stride: usize,
}

impl Conv {
    fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        padding: usize,
        stride: usize,
        vb: VarBuilder,
    ) -> Result<Self> {
        Ok(Self {
            weight: vb.get((c_out, c_in, kernel, kernel), "weight")?,
            bias: vb.get(c_out, "bias")?,
            kernel,
            padding,
            stride,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (f, c, h, w) = x.dims4()?;
        let (c_out, k, p, s) = (self.weight.dim(0)?, self.kernel, self.padding, self.stride);
        let bias = self.bias.reshape((1, c_out, 1, 1))?;
        if k == 1 && s == 1 && p == 0 {
            let wf = self.weight.reshape((c_out, c))?;
            let y = wf.unsqueeze(0)?.broadcast_matmul(&x.reshape((f, c, h * w))?)?;
            return Ok(y.reshape((f, c_out, h, w))?.broadcast_add(&bias)?);
        }
        let ho = (h + 2 * p - k) / s + 1;
        let wo = (w + 2 * p - k) / s + 1;
        let padded = x.pad_with_zeros(2, p, p)?.pad_with_zeros(3, p, p)?;
        let dev = x.device();
        let mut taps = Vec::with_capacity(k * k);
        for ky in 0..k {
            let rows: Vec<u32> = (0..ho).map(|o| (ky + s * o) as u32).collect();
            let row_sel = padded.index_select(&Tensor::from_vec(rows, (ho,), dev)?, 2)?;
            for kx in 0..k {
                let cols: Vec<u32> = (0..wo).map(|o| (kx + s * o) as u32).collect();
                taps.push(row_sel.index_select(&Tensor::from_vec(cols, (wo,), dev)?, 3)?);
            }
        }
        // channel layout of the patches is tap-major, so flatten the weight
        // to (c_out, ky, kx, c_in) to match
        let patches = Tensor::cat(&taps, 1)?.reshape((f, k * k * c, ho * wo))?;
        let wf = self
            .weight
            .permute((0, 2, 3, 1))?
            .contiguous()?
            .reshape((c_out, k * k * c))?;
        let y = wf.unsqueeze(0)?.broadcast_matmul(&patches)?;
        Ok(y.reshape((f, c_out, ho, wo))?.broadcast_add(&bias)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserCfg {
    pub image_size: usize,
    pub base_channels: usize,
    pub mid_channels: usize,
    pub emb_dim: usize,
    pub text_dim: usize,
    pub heads: usize,
    pub vocab_size: usize,
}

impl Default for DenoiserCfg {
    fn default() -> Self {
        Self {
            image_size: 32,
            base_channels: 32,
            mid_channels: 64,
            emb_dim: 128,
            text_dim: 64,
            heads: 2,
            vocab_size: crate::text::Vocabulary::default().len(),
        }
    }
}

/// Cross-attention probabilities of one layer, averaged over heads, with
/// the layer's spatial resolution. Shape `(F, size * size, L)`; the tensor
/// stays connected to the graph that produced it.
#[derive(Debug, Clone)]
pub struct AttentionMaps {
    pub size: usize,
    pub probs: Tensor,
}

#[derive(Debug, Clone)]
pub struct DenoiserOutput {
    /// Predicted noise, `(F, 3, N, N)`.
    pub eps: Tensor,
    pub attention: Vec<AttentionMaps>,
}

/// Anything that can jointly denoise a rig of views at one timestep.
pub trait Denoiser {
    fn image_size(&self) -> usize;
    fn predict(
        &self,
        x: &Tensor,
        t: usize,
        cond: &TextCondition,
        rig: &CameraRig,
    ) -> Result<DenoiserOutput>;
}

struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv,
    emb_proj: Linear,
    norm2: GroupNorm,
    conv2: Conv,
    skip: Option<Conv>,
}

impl ResBlock {
    fn new(c_in: usize, c_out: usize, emb: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            norm1: group_norm(8, c_in, 1e-5, vb.pp("norm1"))?,
            conv1: Conv::new(c_in, c_out, 3, 1, 1, vb.pp("conv1"))?,
            emb_proj: linear(emb, c_out, vb.pp("emb_proj"))?,
            norm2: group_norm(8, c_out, 1e-5, vb.pp("norm2"))?,
            conv2: Conv::new(c_out, c_out, 3, 1, 1, vb.pp("conv2"))?,
            skip: if c_in == c_out {
                None
            } else {
                Some(Conv::new(c_in, c_out, 1, 0, 1, vb.pp("skip"))?)
            },
        })
    }

    fn forward(&self, x: &Tensor, emb: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(&self.norm1.forward(x)?.silu()?)?;
        let e = self.emb_proj.forward(&emb.silu()?)?;
        let (f, c) = (e.dim(0)?, e.dim(1)?);
        let h = h.broadcast_add(&e.reshape((f, c, 1, 1))?)?;
        let h = self.conv2.forward(&self.norm2.forward(&h)?.silu()?)?;
        let x = match &self.skip {
            Some(conv) => conv.forward(x)?,
            None => x.clone(),
        };
        Ok((x + h)?)
    }
}

struct CrossAttention {
    norm: GroupNorm,
    to_q: Linear,
    to_k: Linear,
    to_v: Linear,
    to_out: Linear,
    heads: usize,
    channels: usize,
}

impl CrossAttention {
    fn new(channels: usize, text_dim: usize, heads: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            norm: group_norm(8, channels, 1e-5, vb.pp("norm"))?,
            to_q: linear(channels, channels, vb.pp("to_q"))?,
            to_k: linear(text_dim, channels, vb.pp("to_k"))?,
            to_v: linear(text_dim, channels, vb.pp("to_v"))?,
            to_out: linear(channels, channels, vb.pp("to_out"))?,
            heads,
            channels,
        })
    }

    /// Returns the residual output and head-averaged probabilities
    /// `(F, HW, L)`.
    fn forward(&self, x: &Tensor, ctx: &Tensor) -> Result<(Tensor, Tensor)> {
        let (f, c, h, w) = x.dims4()?;
        let l = ctx.dim(0)?;
        let hd = self.channels / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();

        let tokens = self
            .norm
            .forward(x)?
            .reshape((f, c, h * w))?
            .transpose(1, 2)?; // (F, HW, C)
        let q = self.to_q.forward(&tokens)?;
        let k = self.to_k.forward(ctx)?; // (L, C)
        let v = self.to_v.forward(ctx)?;

        let split = |t: &Tensor, n: usize| -> Result<Tensor> {
            // (F, n, C) -> (F * heads, n, hd)
            Ok(t
                .reshape((f, n, self.heads, hd))?
                .transpose(1, 2)?
                .reshape((f * self.heads, n, hd))?)
        };
        let q = split(&q, h * w)?;
        let k = split(&k.unsqueeze(0)?.expand((f, l, self.channels))?, l)?;
        let v = split(&v.unsqueeze(0)?.expand((f, l, self.channels))?, l)?;

        let scores = (q.matmul(&k.transpose(1, 2)?)? * scale)?; // (F*h, HW, L)
        let probs = softmax(&scores, 2)?;
        let out = probs.matmul(&v)?; // (F*h, HW, hd)
        let out = out
            .reshape((f, self.heads, h * w, hd))?
            .transpose(1, 2)?
            .reshape((f, h * w, self.channels))?;
        let out = self.to_out.forward(&out)?;
        let out = out.transpose(1, 2)?.reshape((f, c, h, w))?;

        let head_avg = probs
            .reshape((f, self.heads, h * w, l))?
            .mean(1)?; // (F, HW, L)
        Ok(((x + out)?, head_avg))
    }
}

/// Self-attention over the concatenated spatial tokens of all views.
struct ViewAttention {
    norm: GroupNorm,
    to_qkv: Linear,
    to_out: Linear,
    heads: usize,
    channels: usize,
}

impl ViewAttention {
    fn new(channels: usize, heads: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            norm: group_norm(8, channels, 1e-5, vb.pp("norm"))?,
            to_qkv: linear(channels, 3 * channels, vb.pp("to_qkv"))?,
            to_out: linear(channels, channels, vb.pp("to_out"))?,
            heads,
            channels,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (f, c, h, w) = x.dims4()?;
        let n = f * h * w;
        let hd = self.channels / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();

        let tokens = self
            .norm
            .forward(x)?
            .reshape((f, c, h * w))?
            .transpose(1, 2)?
            .reshape((1, n, c))?;
        let qkv = self.to_qkv.forward(&tokens)?; // (1, N, 3C)
        let q = qkv.narrow(2, 0, c)?;
        let k = qkv.narrow(2, c, c)?;
        let v = qkv.narrow(2, 2 * c, c)?;
        let split = |t: &Tensor| -> Result<Tensor> {
            Ok(t
                .reshape((1, n, self.heads, hd))?
                .transpose(1, 2)?
                .reshape((self.heads, n, hd))?)
        };
        let (q, k, v) = (split(&q)?, split(&k)?, split(&v)?);
        let probs = softmax(&(q.matmul(&k.transpose(1, 2)?)? * scale)?, 2)?;
        let out = probs
            .matmul(&v)?
            .reshape((1, self.heads, n, hd))?
            .transpose(1, 2)?
            .reshape((1, n, c))?;
        let out = self.to_out.forward(&out)?;
        let out = out
            .reshape((f, h * w, c))?
            .transpose(1, 2)?
            .reshape((f, c, h, w))?;
        Ok((x + out)?)
    }
}

pub struct ToyDenoiser {
    pub cfg: DenoiserCfg,
    varmap: VarMap,
    device: Device,
    tok_embed: Embedding,
    pos_embed: Tensor,
    time_l1: Linear,
    time_l2: Linear,
    view_embed: Embedding,
    elev_proj: Linear,
    conv_in: Conv,
    down_a_res: ResBlock,
    down_a_pool: Conv,
    down_b_res: ResBlock,
    down_b_attn: CrossAttention,
    down_b_pool: Conv,
    mid_res1: ResBlock,
    mid_view_attn: ViewAttention,
    mid_attn: CrossAttention,
    mid_res2: ResBlock,
    up_b_res: ResBlock,
    up_b_attn: CrossAttention,
    up_a_res: ResBlock,
    out_norm: GroupNorm,
    out_conv: Conv,
}

impl ToyDenoiser {
    pub fn new(cfg: DenoiserCfg, init_seed: u64) -> Result<Self> {
        let device = Device::Cpu;
        let varmap = VarMap::new();
        let model = Self::build(cfg, varmap, device)?;
        model.reinit(init_seed)?;
        Ok(model)
    }

    fn build(cfg: DenoiserCfg, varmap: VarMap, device: Device) -> Result<Self> {
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &device);
        let (b, m, e, td) = (cfg.base_channels, cfg.mid_channels, cfg.emb_dim, cfg.text_dim);
        if b % 8 != 0 || m % 8 != 0 || m % cfg.heads != 0 {
            return Err(contract("channel counts must fit the norm groups and heads"));
        }
        Ok(Self {
            tok_embed: embedding(cfg.vocab_size, td, vb.pp("text.tok"))?,
            pos_embed: vb.get((MAX_TOKENS, td), "text.pos.weight")?,
            time_l1: linear(e, e, vb.pp("time.l1"))?,
            time_l2: linear(e, e, vb.pp("time.l2"))?,
            view_embed: embedding(4, e, vb.pp("cam.embed"))?,
            elev_proj: linear(2, e, vb.pp("cam.elev"))?,
            conv_in: Conv::new(3, b, 3, 1, 1, vb.pp("conv_in"))?,
            down_a_res: ResBlock::new(b, b, e, vb.pp("down_a.res"))?,
            down_a_pool: Conv::new(b, b, 3, 1, 2, vb.pp("down_a.pool"))?,
            down_b_res: ResBlock::new(b, m, e, vb.pp("down_b.res"))?,
            down_b_attn: CrossAttention::new(m, td, cfg.heads, vb.pp("down_b.attn"))?,
            down_b_pool: Conv::new(m, m, 3, 1, 2, vb.pp("down_b.pool"))?,
            mid_res1: ResBlock::new(m, m, e, vb.pp("mid.res1"))?,
            mid_view_attn: ViewAttention::new(m, cfg.heads, vb.pp("mid.view_attn"))?,
            mid_attn: CrossAttention::new(m, td, cfg.heads, vb.pp("mid.attn"))?,
            mid_res2: ResBlock::new(m, m, e, vb.pp("mid.res2"))?,
            up_b_res: ResBlock::new(2 * m, m, e, vb.pp("up_b.res"))?,
            up_b_attn: CrossAttention::new(m, td, cfg.heads, vb.pp("up_b.attn"))?,
            up_a_res: ResBlock::new(m + b, b, e, vb.pp("up_a.res"))?,
            out_norm: group_norm(8, b, 1e-5, vb.pp("out.norm"))?,
            out_conv: Conv::new(b, 3, 3, 1, 1, vb.pp("out.conv"))?,
            cfg,
            varmap,
            device,
        })
    }

    /// Overwrite every parameter from the seeded stream, in name order.
    /// Biases and the output conv start at zero, norm gains at one,
    /// embeddings small, conv / linear weights fan-in scaled.
    fn reinit(&self, seed: u64) -> Result<()> {
        let data = self.varmap.data().lock().unwrap();
        let mut names: Vec<&String> = data.keys().collect();
        names.sort();
        for name in names {
            let var = &data[name];
            let dims = var.dims().to_vec();
            let count: usize = dims.iter().product();
            let values: Vec<f32> = if name.ends_with(".bias") {
                vec![0.0; count]
            } else if dims.len() == 1 {
                vec![1.0; count]
            } else {
                let sigma = if name.starts_with("out.conv") {
                    // near-zero start so the untrained model predicts
                    // almost no noise
                    1e-3
                } else if name.starts_with("text.") || name.starts_with("cam.embed") {
                    0.02
                } else if dims.len() == 4 {
                    (2.0 / (dims[1] * dims[2] * dims[3]) as f64).sqrt()
                } else {
                    (1.0 / dims[1] as f64).sqrt()
                };
                let mut rng = rng::stream(seed, &format!("init/{name}"));
                rng::normal_vec(&mut rng, count)
                    .into_iter()
                    .map(|v| v * sigma as f32)
                    .collect()
            };
            var.set(&Tensor::from_vec(values, dims, &self.device)?)?;
        }
        Ok(())
    }

    pub fn varmap(&self) -> &VarMap {
        &self.varmap
    }

    pub fn load_weights(&mut self, path: &std::path::Path) -> Result<()> {
        self.varmap
            .load(path)
            .map_err(|e| Error::Checkpoint(format!("loading weights: {e}")))
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn parameter_count(&self) -> usize {
        let data = self.varmap.data().lock().unwrap();
        data.values().map(|v| v.dims().iter().product::<usize>()).sum()
    }

    /// Timestep features: interleaved sines and cosines over a geometric
    /// frequency ladder.
    fn time_features(&self, t: usize) -> Result<Tensor> {
        let e = self.cfg.emb_dim;
        let half = e / 2;
        let mut feats = vec![0f32; e];
        for i in 0..half {
            let freq = (10000f64).powf(-(i as f64) / (half as f64 - 1.0));
            let arg = t as f64 * freq;
            feats[i] = arg.sin() as f32;
            feats[half + i] = arg.cos() as f32;
        }
        Ok(Tensor::from_vec(feats, (1, e), &self.device)?)
    }

    fn condition_embedding(&self, t: usize, rig: &CameraRig) -> Result<Tensor> {
        let f = rig.num_views();
        if f != 4 {
            return Err(contract("the toy denoiser is trained for 4-view rigs"));
        }
        let time = self
            .time_l2
            .forward(&self.time_l1.forward(&self.time_features(t)?)?.silu()?)?;
        let idx = Tensor::from_vec((0..f as u32).collect::<Vec<_>>(), (f,), &self.device)?;
        let views = self.view_embed.forward(&idx)?;
        let mut elev = Vec::with_capacity(2 * f);
        for cam in &rig.cameras {
            let e = cam.elevation_deg.to_radians();
            elev.push(e.sin() as f32);
            elev.push(e.cos() as f32);
        }
        let elev = self
            .elev_proj
            .forward(&Tensor::from_vec(elev, (f, 2), &self.device)?)?;
        Ok(views.broadcast_add(&time)?.add(&elev)?)
    }

    fn text_context(&self, cond: &TextCondition) -> Result<Tensor> {
        let l = cond.token_ids.len();
        if l == 0 || l > MAX_TOKENS {
            return Err(contract("condition length out of range"));
        }
        if cond
            .token_ids
            .iter()
            .any(|&id| id as usize >= self.cfg.vocab_size)
        {
            return Err(contract("condition token outside the model vocabulary"));
        }
        let ids = Tensor::from_vec(cond.token_ids.clone(), (l,), &self.device)?;
        let tok = self.tok_embed.forward(&ids)?;
        let pos = self.pos_embed.narrow(0, 0, l)?;
        Ok((tok + pos)?)
    }
}

impl Denoiser for ToyDenoiser {
    fn image_size(&self) -> usize {
        self.cfg.image_size
    }

    fn predict(
        &self,
        x: &Tensor,
        t: usize,
        cond: &TextCondition,
        rig: &CameraRig,
    ) -> Result<DenoiserOutput> {
        let (f, c, hh, ww) = x.dims4()?;
        if c != 3 || hh != self.cfg.image_size || ww != self.cfg.image_size {
            return Err(Error::ShapeMismatch {
                expected: format!("(F, 3, {0}, {0})", self.cfg.image_size),
                got: format!("({f}, {c}, {hh}, {ww})"),
            });
        }
        if f != rig.num_views() {
            return Err(contract("view count does not match the rig"));
        }
        if t >= super::schedule::TRAIN_STEPS {
            return Err(contract("timestep outside the training schedule"));
        }
        let emb = self.condition_embedding(t, rig)?;
        let ctx = self.text_context(cond)?;
        let mut attention = Vec::with_capacity(3);

        let h0 = self.conv_in.forward(x)?;
        let ha = self.down_a_res.forward(&h0, &emb)?; // (F, b, 32, 32)
        let h = self.down_a_pool.forward(&ha)?; // 16^2
        let hb = self.down_b_res.forward(&h, &emb)?;
        let (hb, probs) = self.down_b_attn.forward(&hb, &ctx)?;
        attention.push(AttentionMaps {
            size: hb.dim(2)?,
            probs,
        });
        let h = self.down_b_pool.forward(&hb)?; // 8^2

        let h = self.mid_res1.forward(&h, &emb)?;
        let h = self.mid_view_attn.forward(&h)?;
        let (h, probs) = self.mid_attn.forward(&h, &ctx)?;
        attention.push(AttentionMaps {
            size: h.dim(2)?,
            probs,
        });
        let h = self.mid_res2.forward(&h, &emb)?;

        let h = h.upsample_nearest2d(hb.dim(2)?, hb.dim(3)?)?;
        let h = Tensor::cat(&[&h, &hb], 1)?;
        let h = self.up_b_res.forward(&h, &emb)?;
        let (h, probs) = self.up_b_attn.forward(&h, &ctx)?;
        attention.push(AttentionMaps {
            size: h.dim(2)?,
            probs,
        });

        let h = h.upsample_nearest2d(ha.dim(2)?, ha.dim(3)?)?;
        let h = Tensor::cat(&[&h, &ha], 1)?;
        let h = self.up_a_res.forward(&h, &emb)?;

        let eps = self.out_conv.forward(&self.out_norm.forward(&h)?.silu()?)?;
        Ok(DenoiserOutput { eps, attention })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::CameraRig;
    use crate::text::Vocabulary;

    fn tiny_cfg() -> DenoiserCfg {
        DenoiserCfg {
            image_size: 16,
            base_channels: 16,
            mid_channels: 32,
            emb_dim: 32,
            text_dim: 16,
            heads: 2,
            vocab_size: 19,
        }
    }

    fn input(model: &ToyDenoiser, seed: u64) -> Tensor {
        let n = model.cfg.image_size;
        let mut rng = rng::stream(seed, "unet-test");
        let v = rng::normal_vec(&mut rng, 4 * 3 * n * n);
        Tensor::from_vec(v, (4, 3, n, n), model.device()).unwrap()
    }

    #[test]
    fn construction_is_deterministic_and_output_shaped() {
        let a = ToyDenoiser::new(tiny_cfg(), 7).unwrap();
        let b = ToyDenoiser::new(tiny_cfg(), 7).unwrap();
        let rig = CameraRig::canonical(16);
        let vocab = Vocabulary::default();
        let cond = TextCondition::from_text("a red sphere left of a blue cube", &vocab).unwrap();
        let x = input(&a, 1);
        let oa = a.predict(&x, 500, &cond, &rig).unwrap();
        let ob = b.predict(&x, 500, &cond, &rig).unwrap();
        assert_eq!(oa.eps.dims(), &[4, 3, 16, 16]);
        let va: Vec<f32> = oa.eps.flatten_all().unwrap().to_vec1().unwrap();
        let vb: Vec<f32> = ob.eps.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(va, vb);
        let c = ToyDenoiser::new(tiny_cfg(), 8).unwrap();
        let oc = c.predict(&x, 500, &cond, &rig).unwrap();
        let vc: Vec<f32> = oc.eps.flatten_all().unwrap().to_vec1().unwrap();
        assert_ne!(va, vc);
    }

    #[test]
    fn attention_maps_are_row_stochastic() {
        let model = ToyDenoiser::new(tiny_cfg(), 3).unwrap();
        let rig = CameraRig::canonical(16);
        let vocab = Vocabulary::default();
        let cond = TextCondition::from_text("a green cone beside a purple torus", &vocab).unwrap();
        let out = model.predict(&input(&model, 2), 100, &cond, &rig).unwrap();
        assert_eq!(out.attention.len(), 3);
        for maps in &out.attention {
            let dims = maps.probs.dims().to_vec();
            assert_eq!(dims[0], 4);
            assert_eq!(dims[1], maps.size * maps.size);
            assert_eq!(dims[2], cond.token_ids.len());
            let sums: Vec<f32> = maps
                .probs
                .sum(2)
                .unwrap()
                .flatten_all()
                .unwrap()
                .to_vec1()
                .unwrap();
            for s in sums {
                assert!((s - 1.0).abs() < 1e-5, "attention row sums to {s}");
            }
        }
    }

    #[test]
    fn unconditional_prompt_is_accepted() {
        let model = ToyDenoiser::new(tiny_cfg(), 3).unwrap();
        let rig = CameraRig::canonical(16);
        let out = model
            .predict(&input(&model, 5), 999, &TextCondition::uncond(), &rig)
            .unwrap();
        assert_eq!(out.attention[0].probs.dims()[2], 1);
    }

    #[test]
    fn timestep_changes_the_prediction() {
        let model = ToyDenoiser::new(tiny_cfg(), 4).unwrap();
        let rig = CameraRig::canonical(16);
        let cond = TextCondition::uncond();
        let x = input(&model, 9);
        let a: Vec<f32> = model
            .predict(&x, 10, &cond, &rig)
            .unwrap()
            .eps
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        let b: Vec<f32> = model
            .predict(&x, 900, &cond, &rig)
            .unwrap()
            .eps
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn wrong_shapes_are_rejected() {
        let model = ToyDenoiser::new(tiny_cfg(), 4).unwrap();
        let rig = CameraRig::canonical(16);
        let bad = Tensor::zeros((4usize, 3, 8, 8), DType::F32, model.device()).unwrap();
        assert!(model.predict(&bad, 10, &TextCondition::uncond(), &rig).is_err());
        let bad_t = input(&model, 1);
        assert!(model
            .predict(&bad_t, 1000, &TextCondition::uncond(), &rig)
            .is_err());
    }
}
