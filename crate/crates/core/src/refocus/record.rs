//! Collecting per-layer cross-attention into one differentiable record.
//!
//! The denoiser reports each cross-attention layer's probabilities at that
//! layer's own resolution. The record upsamples every layer to the finest
//! recorded grid (nearest neighbour, which keeps per-pixel rows
//! stochastic) and averages them, giving a single `(F, H, W, L)` tensor
//! that stays connected to the graph, so losses on it can reach the
//! latent.

use crate::diffusion::AttentionMaps;
use crate::error::{contract, Result};
use candle_core::Tensor;

#[derive(Debug, Clone)]
pub struct AttentionRecord {
    /// `(F, H, W, L)`, nonnegative, rows over the last axis sum to one
    /// until the start token is stripped.
    pub maps: Tensor,
}

impl AttentionRecord {
    pub fn from_layers(layers: &[AttentionMaps]) -> Result<AttentionRecord> {
        if layers.is_empty() {
            return Err(contract("no attention layers recorded"));
        }
        let target = layers.iter().map(|m| m.size).max().unwrap();
        let mut acc: Option<Tensor> = None;
        for layer in layers {
            let (f, hw, l) = layer.probs.dims3()?;
            let s = layer.size;
            if hw != s * s {
                return Err(contract("attention map size disagrees with its resolution"));
            }
            if target % s != 0 {
                return Err(contract("attention resolutions must nest by integer factors"));
            }
            let grid = layer
                .probs
                .reshape((f, s, s, l))?
                .permute((0, 3, 1, 2))?
                .contiguous()?;
            let grid = if s == target {
                grid
            } else {
                grid.upsample_nearest2d(target, target)?
            };
            let grid = grid.permute((0, 2, 3, 1))?.contiguous()?;
            acc = Some(match acc {
                None => grid,
                Some(a) => (a + grid)?,
            });
        }
        let maps = (acc.unwrap() / layers.len() as f64)?;
        Ok(AttentionRecord { maps })
    }

    pub fn num_views(&self) -> Result<usize> {
        Ok(self.maps.dim(0)?)
    }

    pub fn num_tokens(&self) -> Result<usize> {
        Ok(self.maps.dim(3)?)
    }

    /// Largest deviation of any per-pixel token row from summing to one.
    pub fn row_sum_deviation(&self) -> Result<f32> {
        let sums = self.maps.sum(3)?;
        let dev = (sums - 1.0)?.abs()?.max_all()?.to_scalar::<f32>()?;
        Ok(dev)
    }
}
