//! The attention activation loss steering sampling-time latent updates.
//!
//! For each subject token the record is reduced to one smoothed spatial
//! map; the loss of a token is one minus that map's peak, and the total
//! loss is the worst token's loss, so gradient steps always work on the
//! currently most neglected subject. Two aggregation orders are
//! supported: averaging maps across views before smoothing (the default),
//! or scoring each view separately and averaging the per-view losses
//! (the ablation arm). They coincide for a single view.

use super::record::AttentionRecord;
use crate::error::{contract, Error, Result};
use candle_core::Tensor;
use candle_nn::ops::softmax;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean the token's maps over views, then smooth and take the peak.
    #[default]
    MeanViews,
    /// Score each view's map separately and average the view losses.
    PerView,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SotMode {
    /// Drop the start token's column and renormalize the remaining mass.
    #[default]
    Renormalize,
    /// Re-softmax the remaining columns' values. (Subtracting the start
    /// token's weight per pixel first would cancel inside the softmax.)
    Subtract,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefocusConfig {
    /// Denoising-chain length; the refinement indices below index into it.
    pub sample_steps: usize,
    /// Classifier-free guidance scale for the denoising transitions.
    pub cfg_scale: f64,
    /// Latent step size is this constant times sqrt(1 - abar_t).
    pub alpha_scale: f64,
    /// Chain indices at which the update loop may repeat.
    pub refinement_steps: Vec<usize>,
    /// (chain index, target activation T): from each listed index on, the
    /// loop repeats until the loss drops to 1 - T.
    pub threshold_ladder: Vec<(usize, f64)>,
    pub max_inner_iterations: usize,
    /// Global floor: the loop never demands a loss below this.
    pub loss_stop_threshold: f64,
    pub gaussian_kernel_size: usize,
    pub gaussian_sigma: f64,
    pub aggregation: Aggregation,
    pub sot_mode: SotMode,
}

impl Default for RefocusConfig {
    fn default() -> Self {
        Self {
            sample_steps: 50,
            cfg_scale: 7.5,
            alpha_scale: 20.0,
            refinement_steps: vec![0, 1, 2, 3, 4, 5, 10, 20, 30, 40],
            threshold_ladder: vec![(0, 0.05), (10, 0.5), (20, 0.8)],
            max_inner_iterations: 25,
            loss_stop_threshold: 0.1,
            gaussian_kernel_size: 3,
            gaussian_sigma: 0.5,
            aggregation: Aggregation::MeanViews,
            sot_mode: SotMode::Renormalize,
        }
    }
}

impl RefocusConfig {
    /// Refocusing switched off entirely: plain DDIM sampling.
    pub fn disabled() -> Self {
        Self {
            alpha_scale: 0.0,
            refinement_steps: Vec::new(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_steps == 0 {
            return Err(contract("sample_steps must be positive"));
        }
        if self.max_inner_iterations == 0 {
            return Err(contract("max_inner_iterations must be at least 1"));
        }
        if self.gaussian_kernel_size % 2 == 0 {
            return Err(contract("gaussian_kernel_size must be odd"));
        }
        if self.gaussian_sigma <= 0.0 {
            return Err(contract("gaussian_sigma must be positive"));
        }
        if self.alpha_scale < 0.0 {
            return Err(contract("alpha_scale must be nonnegative"));
        }
        for &(_, t) in &self.threshold_ladder {
            if !(t > 0.0 && t <= 1.0) {
                return Err(contract("threshold targets must lie in (0, 1]"));
            }
        }
        for &s in &self.refinement_steps {
            if s >= self.sample_steps {
                return Err(contract("refinement step outside the sampling chain"));
            }
        }
        Ok(())
    }

    /// Loss value at which the refinement loop stops at this chain index:
    /// `max(1 - T, floor)` with T taken from the most recent ladder rung.
    pub fn stop_threshold(&self, step_index: usize) -> f64 {
        let mut target: Option<f64> = None;
        let mut best_key = 0usize;
        for &(k, t) in &self.threshold_ladder {
            if k <= step_index && (target.is_none() || k >= best_key) {
                best_key = k;
                target = Some(t);
            }
        }
        match target {
            Some(t) => (1.0 - t).max(self.loss_stop_threshold),
            None => self.loss_stop_threshold,
        }
    }
}

/// Normalized 1D Gaussian taps, odd length.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Vec<f64>> {
    if size % 2 == 0 || size == 0 {
        return Err(contract("kernel size must be odd"));
    }
    let r = (size / 2) as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    for v in &mut k {
        *v /= total;
    }
    Ok(k)
}

/// Indices implementing reflect padding (edge not repeated) of a length-n
/// axis by r on both sides.
fn reflect_indices(n: usize, r: usize) -> Result<Vec<u32>> {
    if r >= n {
        return Err(contract("kernel radius must be smaller than the map"));
    }
    Ok(((-(r as i64))..(n + r) as i64)
        .map(|i| {
            let j = if i < 0 {
                -i
            } else if i >= n as i64 {
                2 * (n as i64 - 1) - i
            } else {
                i
            };
            j as u32
        })
        .collect())
}

/// Separable smoothing of a `(B, H, W)` stack with reflect padding.
fn smooth(maps: &Tensor, kernel: &[f64]) -> Result<Tensor> {
    let (_b, h, w) = maps.dims3()?;
    let r = kernel.len() / 2;
    let dev = maps.device();
    let mut out = maps.clone();
    for (dim, n) in [(2usize, w), (1usize, h)] {
        let idx = Tensor::from_vec(reflect_indices(n, r)?, (n + 2 * r,), dev)?;
        let padded = out.index_select(&idx, dim)?;
        let mut acc = (padded.narrow(dim, 0, n)? * kernel[0])?;
        for (k, &wk) in kernel.iter().enumerate().skip(1) {
            acc = (acc + (padded.narrow(dim, k, n)? * wk)?)?;
        }
        out = acc;
    }
    Ok(out)
}

/// Remove the start token's column (token 0) and redistribute its mass.
pub fn strip_sot_and_renormalize(att: &AttentionRecord, mode: SotMode) -> Result<AttentionRecord> {
    let l = att.num_tokens()?;
    if l < 2 {
        return Err(contract("nothing remains after removing the start token"));
    }
    let rest = att.maps.narrow(3, 1, l - 1)?;
    let maps = match mode {
        SotMode::Renormalize => {
            let sums = rest.sum_keepdim(3)?;
            rest.broadcast_div(&sums)?
        }
        SotMode::Subtract => softmax(&rest.contiguous()?, 3)?,
    };
    Ok(AttentionRecord { maps })
}

/// Smoothed mean-over-views map of one token. `token_index` addresses the
/// original token list, so the start token (index 0) is rejected.
pub fn aggregate_token_map(
    att: &AttentionRecord,
    token_index: usize,
    cfg: &RefocusConfig,
) -> Result<Tensor> {
    let stripped = strip_sot_and_renormalize(att, cfg.sot_mode)?;
    let l = stripped.num_tokens()?;
    if token_index == 0 || token_index > l {
        return Err(contract("token index must name a non-start token"));
    }
    let kernel = gaussian_kernel(cfg.gaussian_kernel_size, cfg.gaussian_sigma)?;
    let map = stripped
        .maps
        .narrow(3, token_index - 1, 1)?
        .squeeze(3)?
        .mean(0)?; // (H, W)
    Ok(smooth(&map.unsqueeze(0)?, &kernel)?.squeeze(0)?)
}

#[derive(Debug)]
pub struct AttentionLoss {
    /// Scalar loss tensor, connected to the producing graph.
    pub total: Tensor,
    pub value: f32,
    /// (token index, loss) per subject, for diagnostics.
    pub per_token: Vec<(usize, f32)>,
}

/// Loss of the most neglected subject token.
pub fn attention_loss(
    att: &AttentionRecord,
    subjects: &[usize],
    cfg: &RefocusConfig,
) -> Result<AttentionLoss> {
    if subjects.is_empty() {
        return Err(contract("at least one subject token is required"));
    }
    let stripped = strip_sot_and_renormalize(att, cfg.sot_mode)?;
    let l = stripped.num_tokens()?;
    for &s in subjects {
        if s == 0 || s > l {
            return Err(contract("subject index must name a non-start token"));
        }
    }
    let kernel = gaussian_kernel(cfg.gaussian_kernel_size, cfg.gaussian_sigma)?;
    let dev = stripped.maps.device();
    let cols: Vec<u32> = subjects.iter().map(|&s| (s - 1) as u32).collect();
    let ns = cols.len();
    let idx = Tensor::from_vec(cols, (ns,), dev)?;
    let picked = stripped.maps.index_select(&idx, 3)?; // (F, H, W, S)
    let (f, h, w, _) = picked.dims4()?;

    let (total, per_token_t) = match cfg.aggregation {
        Aggregation::MeanViews => {
            let maps = picked.mean(0)?.permute((2, 0, 1))?.contiguous()?; // (S, H, W)
            let peaks = smooth(&maps, &kernel)?.max(2)?.max(1)?; // (S,)
            let losses = (1.0 - &peaks)?;
            (losses.max(0)?, losses)
        }
        Aggregation::PerView => {
            let maps = picked
                .permute((0, 3, 1, 2))?
                .contiguous()?
                .reshape((f * ns, h, w))?;
            let peaks = smooth(&maps, &kernel)?
                .max(2)?
                .max(1)?
                .reshape((f, ns))?;
            let view_losses = (1.0 - &peaks)?.max(1)?; // (F,) worst token per view
            let per_token = (1.0 - &peaks)?.mean(0)?;
            (view_losses.mean(0)?, per_token)
        }
    };
    let value = total.to_scalar::<f32>()?;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            what: "attention loss",
            context: format!("subjects {subjects:?}"),
        });
    }
    let per: Vec<f32> = per_token_t.to_vec1()?;
    Ok(AttentionLoss {
        total,
        value,
        per_token: subjects.iter().copied().zip(per).collect(),
    })
}
