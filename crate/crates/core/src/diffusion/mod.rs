//! The multi-view diffusion model: schedule, denoiser, training and
//! checkpointing, plus image/tensor conversions shared by samplers.

pub mod checkpoint;
pub mod schedule;
pub mod train;
pub mod unet;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use schedule::{sample_timesteps, NoiseSchedule, DEFAULT_SAMPLE_STEPS, TRAIN_STEPS};
pub use train::{train_denoiser, TrainCfg, TrainReport};
pub use unet::{AttentionMaps, Denoiser, DenoiserCfg, DenoiserOutput, ToyDenoiser};

use crate::error::{Error, Result};
use crate::img::Image;
use candle_core::{Device, Tensor};

/// Stack `F` unit-range views into a `(F, 3, N, N)` tensor in `[-1, 1]`.
pub fn views_to_tensor(views: &[Image], device: &Device) -> Result<Tensor> {
    if views.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = views[0].size;
    let mut data = Vec::with_capacity(views.len() * 3 * n * n);
    for v in views {
        if v.size != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{n}x{n}"),
                got: format!("{0}x{0}", v.size),
            });
        }
        data.extend(v.data.iter().map(|x| 2.0 * x - 1.0));
    }
    Ok(Tensor::from_vec(data, (views.len(), 3, n, n), device)?)
}

/// Clamp a `(F, 3, N, N)` tensor in `[-1, 1]` back to unit-range views.
pub fn tensor_to_views(x: &Tensor) -> Result<Vec<Image>> {
    let (f, c, h, w) = x.dims4()?;
    if c != 3 || h != w {
        return Err(Error::ShapeMismatch {
            expected: "(F, 3, N, N)".into(),
            got: format!("({f}, {c}, {h}, {w})"),
        });
    }
    let flat: Vec<f32> = x.flatten_all()?.to_vec1()?;
    let mut views = Vec::with_capacity(f);
    for v in 0..f {
        let data = flat[v * 3 * h * w..(v + 1) * 3 * h * w]
            .iter()
            .map(|x| ((x + 1.0) / 2.0).clamp(0.0, 1.0))
            .collect();
        views.push(Image::from_data(h, data)?);
    }
    Ok(views)
}
