//! Multi-view DDIM sampling with sampling-time attention refocusing.
//!
//! Between denoising transitions the latent is nudged down the gradient of
//! the attention activation loss. Every step with subject tokens applies
//! one nudge; at the configured refinement indices the nudge repeats until
//! the loss clears the step's threshold or the iteration cap is hit. The
//! plain sampler is kept as an independent code path rather than a
//! special-cased call into the refocused one, so the two can be compared
//! against each other.

use super::loss::{attention_loss, RefocusConfig};
use super::record::AttentionRecord;
use crate::camera::CameraRig;
use crate::diffusion::schedule::{sample_timesteps, NoiseSchedule};
use crate::diffusion::unet::{AttentionMaps, Denoiser};
use crate::error::{contract, Result};
use crate::img::Image;
use crate::rng;
use crate::text::TextCondition;
use crate::viewset::{foreground_mask, StepTrace, ViewSet};
use candle_core::{Device, Tensor, Var};

/// Stream label for the initial latent noise. Shared by both samplers so a
/// seed names the same starting point with refocusing on or off.
const INIT_STREAM: &str = "sample/init";

pub fn init_noise(seed: u64, views: usize, size: usize, dev: &Device) -> Result<Tensor> {
    let mut r = rng::stream(seed, INIT_STREAM);
    let data = rng::normal_vec(&mut r, views * 3 * size * size);
    Ok(Tensor::from_vec(data, (views, 3, size, size), dev)?)
}

/// Classifier-free guided noise prediction. Returns the guided eps and the
/// attention maps of the conditional pass.
pub fn guided_eps(
    den: &dyn Denoiser,
    z: &Tensor,
    t: usize,
    cond: &TextCondition,
    rig: &CameraRig,
    scale: f64,
) -> Result<(Tensor, Vec<AttentionMaps>)> {
    let out = den.predict(z, t, cond, rig)?;
    if scale == 1.0 {
        return Ok((out.eps, out.attention));
    }
    let un = den.predict(z, t, &TextCondition::uncond(), rig)?;
    let eps = (&un.eps + ((&out.eps - &un.eps)? * scale)?)?;
    Ok((eps, out.attention))
}

/// One DDIM transition; `t_prev = None` is the final jump to the clean
/// image estimate.
pub fn ddim_transition(
    z: &Tensor,
    eps: &Tensor,
    schedule: &NoiseSchedule,
    t: usize,
    t_prev: Option<usize>,
) -> Result<Tensor> {
    let (a, b) = match t_prev {
        Some(tp) => schedule.ddim_coeffs(t, tp),
        None => schedule.x0_coeffs(t),
    };
    Ok(((z * a)? + (eps * b)?)?)
}

/// One refocused sampling step: latent updates against the attention loss,
/// then the DDIM transition from the updated latent.
#[allow(clippy::too_many_arguments)]
pub fn refocus_denoising_step(
    den: &dyn Denoiser,
    z: &Tensor,
    cond: &TextCondition,
    rig: &CameraRig,
    schedule: &NoiseSchedule,
    t: usize,
    t_prev: Option<usize>,
    step_index: usize,
    cfg: &RefocusConfig,
) -> Result<(Tensor, StepTrace)> {
    let alpha = cfg.alpha_scale * (1.0 - schedule.alpha_bar(t)).sqrt();
    let is_refine = cfg.refinement_steps.contains(&step_index);
    let stop = cfg.stop_threshold(step_index);
    let mut losses = Vec::new();
    let mut z_cur = z.clone();

    if alpha > 0.0 && !cond.subject_indices.is_empty() {
        let budget = if is_refine { cfg.max_inner_iterations } else { 1 };
        for _ in 0..budget {
            let zv = Var::from_tensor(&z_cur)?;
            let out = den.predict(zv.as_tensor(), t, cond, rig)?;
            let record = AttentionRecord::from_layers(&out.attention)?;
            let loss = attention_loss(&record, &cond.subject_indices, cfg)?;
            losses.push(loss.value);
            let grads = loss.total.backward()?;
            let step = match grads.get(&zv) {
                Some(g) => (zv.as_tensor() - (g * alpha)?)?,
                None => zv.as_tensor().clone(),
            };
            z_cur = step.detach();
            if !is_refine || (loss.value as f64) <= stop {
                break;
            }
        }
    }

    let (eps, _) = guided_eps(den, &z_cur, t, cond, rig, cfg.cfg_scale)?;
    let z_next = ddim_transition(&z_cur, &eps, schedule, t, t_prev)?;
    Ok((
        z_next,
        StepTrace {
            step_index,
            timestep: t,
            losses,
        },
    ))
}

fn to_images(x0: &Tensor) -> Result<Vec<Image>> {
    let (f, _c, n, _) = x0.dims4()?;
    let clamped = x0.clamp(0f32, 1f32)?;
    let mut images = Vec::with_capacity(f);
    for v in 0..f {
        let data: Vec<f32> = clamped.narrow(0, v, 1)?.flatten_all()?.to_vec1()?;
        images.push(Image::from_data(n, data)?);
    }
    Ok(images)
}

fn finish(
    x0: Tensor,
    rig: &CameraRig,
    cond: &TextCondition,
    prompt: &str,
    trace: Option<Vec<StepTrace>>,
) -> Result<ViewSet> {
    let images = to_images(&x0)?;
    let masks = images.iter().map(foreground_mask).collect();
    let vs = ViewSet {
        images,
        masks,
        rig: rig.clone(),
        condition: cond.clone(),
        prompt: prompt.to_string(),
        trace,
    };
    vs.validate()?;
    Ok(vs)
}

/// Full refocused sampling run from seeded noise to a view set.
pub fn sample_refocused_views(
    den: &dyn Denoiser,
    cond: &TextCondition,
    prompt: &str,
    rig: &CameraRig,
    schedule: &NoiseSchedule,
    cfg: &RefocusConfig,
    seed: u64,
) -> Result<ViewSet> {
    cfg.validate()?;
    if rig.image_size != den.image_size() {
        return Err(contract("camera rig resolution differs from the denoiser"));
    }
    let ts = sample_timesteps(cfg.sample_steps)?;
    let dev = Device::Cpu;
    let mut z = init_noise(seed, rig.num_views(), den.image_size(), &dev)?;
    let mut traces = Vec::with_capacity(ts.len());
    for (i, &t) in ts.iter().enumerate() {
        let t_prev = ts.get(i + 1).copied();
        let (z_next, trace) =
            refocus_denoising_step(den, &z, cond, rig, schedule, t, t_prev, i, cfg)?;
        z = z_next;
        traces.push(trace);
    }
    finish(z, rig, cond, prompt, Some(traces))
}

/// Plain DDIM sampling, written as its own loop on purpose: this is the
/// reference the refocused sampler is checked against when refocusing is
/// switched off.
pub fn sample_views(
    den: &dyn Denoiser,
    cond: &TextCondition,
    prompt: &str,
    rig: &CameraRig,
    schedule: &NoiseSchedule,
    cfg: &RefocusConfig,
    seed: u64,
) -> Result<ViewSet> {
    cfg.validate()?;
    if rig.image_size != den.image_size() {
        return Err(contract("camera rig resolution differs from the denoiser"));
    }
    let ts = sample_timesteps(cfg.sample_steps)?;
    let dev = Device::Cpu;
    let mut z = init_noise(seed, rig.num_views(), den.image_size(), &dev)?;
    for (i, &t) in ts.iter().enumerate() {
        let (eps, _) = guided_eps(den, &z, t, cond, rig, cfg.cfg_scale)?;
        z = ddim_transition(&z, &eps, schedule, t, ts.get(i + 1).copied())?;
    }
    finish(z, rig, cond, prompt, None)
}
