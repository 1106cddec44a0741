//! Stage-2 trainer: few-shot reconstruction warm-up on the fixed
//! reference views, then joint optimization adding the annealed SDS term
//! on freshly sampled random view batches.
//!
//! Per step the applied update is the weighted sum of the separately
//! computed gradient terms, so the combination can be verified by
//! recomputation from a recorded probe.

use super::adam::{Adam, DEFAULT_LR_HEADS, DEFAULT_LR_TABLES};
use super::schedule::TrainSchedule;
use super::sds::{sds_gradient, SdsSample};
use crate::camera::{sample_random_rig, CameraRig, RandomCameraCfg};
use crate::diffusion::schedule::NoiseSchedule;
use crate::diffusion::unet::Denoiser;
use crate::error::{contract, Error, Result};
use crate::field::{
    camera_rays, reconstruction_cotangents, reconstruction_loss, render_rays,
    render_rays_backward, rig_rays, save_field, FieldCfg, RadianceField, Ray, RayCotangents,
    RenderCfg,
};
use crate::img::Image;
use crate::refocus::RefocusConfig;
use crate::rng;
use crate::viewset::ViewSet;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillCfg {
    pub schedule: TrainSchedule,
    pub field: FieldCfg,
    pub render: RenderCfg,
    pub lr_tables: f64,
    pub lr_heads: f64,
    pub seed: u64,
    /// Progress-render cadence in steps; 0 disables progress renders.
    pub render_every: usize,
    /// When positive, the attention activation loss is differentiated
    /// through the critic and added to the SDS pixel gradient (the
    /// one-stage coupling).
    pub attention_scale: f64,
    pub attention_cfg: RefocusConfig,
    /// `None` folds the mask term into the image loss so it decays with
    /// `lambda_img`; `Some(w)` gives it a constant separate weight.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_weight: Option<f64>,
    /// Record the gradient terms of one step for the linearity check.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_step: Option<usize>,
}

impl Default for DistillCfg {
    fn default() -> Self {
        let mut render = RenderCfg::default();
        render.samples_per_ray = 48;
        Self {
            schedule: TrainSchedule::default(),
            field: FieldCfg::small(),
            render,
            lr_tables: DEFAULT_LR_TABLES,
            lr_heads: DEFAULT_LR_HEADS,
            seed: 0,
            render_every: 0,
            attention_scale: 0.0,
            attention_cfg: RefocusConfig::default(),
            mask_weight: None,
            probe_step: None,
        }
    }
}

impl DistillCfg {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.field.validate()?;
        self.render.validate()?;
        if !(self.lr_tables > 0.0 && self.lr_heads > 0.0) {
            return Err(contract("learning rates must be positive"));
        }
        if let Some(w) = self.mask_weight {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(contract("mask weight must be finite and non-negative"));
            }
        }
        if self.attention_scale < 0.0 {
            return Err(contract("attention scale must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    /// Reconstruction render resolution this step.
    pub res: usize,
    pub lambda_img: f64,
    pub lambda_sds: f64,
    pub recon_total: f64,
    pub recon_rgb: f64,
    pub recon_mask: f64,
    /// Fixed-view PSNR (dB) from the reconstruction render.
    pub psnr: f64,
    pub sds_t: Option<usize>,
    pub omega: f64,
    /// Mean squared guidance residual of the SDS draw.
    pub sds_residual: f64,
    pub attention: Option<f32>,
    /// Update skipped because a gradient term went non-finite.
    pub skipped: bool,
}

/// Gradient terms of one recorded step, for verifying that the applied
/// update is exactly their weighted sum.
#[derive(Debug, Clone)]
pub struct LinearityProbe {
    pub step: usize,
    pub lambda_img: f64,
    pub lambda_sds: f64,
    pub mask_weight: Option<f64>,
    pub g_img: Vec<f32>,
    pub g_mask: Option<Vec<f32>>,
    pub g_sds: Option<Vec<f32>>,
    pub applied: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub field: RadianceField<f32>,
    /// Parameter snapshot at the end of the warm-up phase.
    pub warmup_field: Option<RadianceField<f32>>,
    pub steps: Vec<StepRecord>,
    pub skipped: usize,
    pub probe: Option<LinearityProbe>,
}

/// Aborts a run whose loss stays above `factor` times its initial value
/// for `window` consecutive steps.
#[derive(Debug, Clone)]
pub struct DivergenceGuard {
    factor: f64,
    window: usize,
    initial: Option<f64>,
    run: usize,
}

impl DivergenceGuard {
    pub fn new(factor: f64, window: usize) -> Self {
        Self {
            factor,
            window,
            initial: None,
            run: 0,
        }
    }

    pub fn observe(&mut self, step: usize, loss: f64) -> Result<()> {
        let initial = *self.initial.get_or_insert(loss);
        if loss > self.factor * initial + 1e-12 {
            self.run += 1;
            if self.run >= self.window {
                return Err(Error::Diverged {
                    step,
                    loss,
                    initial,
                    window: self.window,
                });
            }
        } else {
            self.run = 0;
        }
        Ok(())
    }
}

/// Fixed-view ray batch and targets at one render resolution, resampled
/// from the reference set by nearest neighbor.
struct FixedTargets {
    res: usize,
    rays: Vec<Ray>,
    gt_rgb: Vec<[f32; 3]>,
    gt_mask: Vec<f32>,
}

fn fixed_targets(refs: &ViewSet, res: usize) -> FixedTargets {
    let native = refs.rig.image_size;
    let rig = CameraRig {
        cameras: refs.rig.cameras.clone(),
        image_size: res,
    };
    let rays = rig_rays(&rig);
    let mut gt_rgb = Vec::with_capacity(rays.len());
    let mut gt_mask = Vec::with_capacity(rays.len());
    for (img, m) in refs.images.iter().zip(&refs.masks) {
        for r in 0..res {
            for col in 0..res {
                let sr = r * native / res;
                let sc = col * native / res;
                let p = img.pixel(sr, sc);
                gt_rgb.push(p);
                gt_mask.push(if m[sr * native + sc] { 1.0 } else { 0.0 });
            }
        }
    }
    FixedTargets {
        res,
        rays,
        gt_rgb,
        gt_mask,
    }
}

fn psnr_db(mse: f64) -> f64 {
    if mse <= 1e-10 {
        99.0
    } else {
        -10.0 * mse.log10()
    }
}

/// Render each fixed view at `res` and return its PSNR against the
/// (nearest-resampled) reference image.
pub fn fixed_view_psnr(
    field: &RadianceField<f32>,
    refs: &ViewSet,
    rcfg: &RenderCfg,
    res: usize,
) -> Result<Vec<f64>> {
    let tg = fixed_targets(refs, res);
    let mut psnrs = Vec::with_capacity(refs.images.len());
    let per_view = res * res;
    for (v, cam) in refs.rig.cameras.iter().enumerate() {
        let out = render_rays(field, &camera_rays(cam, res), rcfg, None)?;
        let mut mse = 0.0f64;
        for (p, rgb) in out.rgb.iter().enumerate() {
            let gt = tg.gt_rgb[v * per_view + p];
            for ch in 0..3 {
                let d = rgb[ch] as f64 - gt[ch] as f64;
                mse += d * d;
            }
        }
        psnrs.push(psnr_db(mse / (3 * per_view) as f64));
    }
    Ok(psnrs)
}

const CSV_HEADER: &str = "step,res,lambda_img,lambda_sds,recon_total,recon_rgb,recon_mask,psnr,sds_t,omega,sds_residual,attention,skipped";

fn csv_row(r: &StepRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.step,
        r.res,
        r.lambda_img,
        r.lambda_sds,
        r.recon_total,
        r.recon_rgb,
        r.recon_mask,
        r.psnr,
        r.sds_t.map(|t| t.to_string()).unwrap_or_default(),
        r.omega,
        r.sds_residual,
        r.attention.map(|a| a.to_string()).unwrap_or_default(),
        r.skipped
    )
}

fn save_progress_renders(
    dir: &Path,
    step: usize,
    res: usize,
    rgb: &[[f32; 3]],
) -> Result<()> {
    let per_view = res * res;
    for v in 0..rgb.len() / per_view {
        let mut data = vec![0f32; 3 * per_view];
        for p in 0..per_view {
            for ch in 0..3 {
                data[ch * per_view + p] = rgb[v * per_view + p][ch].clamp(0.0, 1.0);
            }
        }
        let img = Image::from_data(res, data)?;
        img.save_png(&dir.join(format!("step_{step:05}_view{v}.png")))?;
    }
    Ok(())
}

pub fn train_stage2(
    cfg: &DistillCfg,
    refs: &ViewSet,
    den: &dyn Denoiser,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    refs.validate()?;
    let ts = &cfg.schedule;
    let ns = NoiseSchedule::linear();
    let mut field = RadianceField::<f32>::new(cfg.field.clone(), cfg.seed)?;
    let mut adam = Adam::new(&field.layout, cfg.lr_tables, cfg.lr_heads);
    let mut r = rng::stream(cfg.seed, "distill/train");
    let rand_cams = RandomCameraCfg::new(den.image_size());
    let cond = refs.condition.clone();
    if ts.low_res > refs.rig.image_size {
        log::info!(
            "reference views are {} px; clamping reconstruction renders to that",
            refs.rig.image_size
        );
    }

    let mut csv = None;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
        if cfg.render_every > 0 {
            fs::create_dir_all(dir.join("renders"))?;
        }
        let mut f = fs::File::create(dir.join("metrics.csv"))?;
        writeln!(f, "{CSV_HEADER}")?;
        csv = Some(f);
    }

    let mut targets: Option<FixedTargets> = None;
    let mut guard = DivergenceGuard::new(10.0, 100);
    let mut steps = Vec::with_capacity(ts.total_steps);
    let mut skipped_total = 0usize;
    let mut warmup_field = None;
    let mut probe = None;

    for i in 0..ts.total_steps {
        let res = ts.resolution_at(i).min(refs.rig.image_size);
        if targets.as_ref().map_or(true, |t| t.res != res) {
            targets = Some(fixed_targets(refs, res));
        }
        let tg = targets.as_ref().unwrap();

        // reconstruction term on the fixed views, full batch
        let out = render_rays(&field, &tg.rays, &cfg.render, None)?;
        let loss = reconstruction_loss(&out, &tg.gt_rgb, &tg.gt_mask)?;
        let mut cots = reconstruction_cotangents(&out, &tg.gt_rgb, &tg.gt_mask)?;
        let (g_img, g_mask, recon_total) = match cfg.mask_weight {
            None => {
                let g = render_rays_backward(&field, &tg.rays, &cfg.render, None, &cots)?;
                (g, None, loss.total as f64)
            }
            Some(w) => {
                let mut mask_cots = RayCotangents::<f32>::zeros(tg.rays.len());
                mask_cots.opacity.copy_from_slice(&cots.opacity);
                for o in cots.opacity.iter_mut() {
                    *o = 0.0;
                }
                let g_rgb = render_rays_backward(&field, &tg.rays, &cfg.render, None, &cots)?;
                let g_m =
                    render_rays_backward(&field, &tg.rays, &cfg.render, None, &mask_cots)?;
                (g_rgb, Some(g_m), loss.rgb as f64 + w * loss.mask as f64)
            }
        };
        let psnr = psnr_db(loss.rgb as f64);

        // Weights follow the schedule on every step so the log matches
        // loss_weights(i) exactly; during warm-up the SDS term is simply
        // absent rather than zero-weighted.
        let (li, ls) = ts.loss_weights(i);
        let sds: Option<SdsSample<f32>> = if i >= ts.warmup_steps && ls > 0.0 {
            let rig = sample_random_rig(&mut r, &rand_cams);
            let attn = (cfg.attention_scale > 0.0)
                .then_some((cfg.attention_scale, &cfg.attention_cfg));
            Some(sds_gradient(
                &field, &cfg.render, &rig, &cond, i, den, &ns, ts, attn, &mut r,
            )?)
        } else {
            None
        };

        let lif = li as f32;
        let lsf = ls as f32;
        let mut g = vec![0f32; field.param_count()];
        for k in 0..g.len() {
            g[k] = lif * g_img[k];
        }
        if let (Some(w), Some(gm)) = (cfg.mask_weight, &g_mask) {
            let wf = w as f32;
            for k in 0..g.len() {
                g[k] += wf * gm[k];
            }
        }
        if let Some(s) = &sds {
            for k in 0..g.len() {
                g[k] += lsf * s.grad[k];
            }
        }

        let skipped = !g.iter().all(|x| x.is_finite());
        if skipped {
            skipped_total += 1;
            log::warn!("step {i}: non-finite gradient, skipping the update");
        } else {
            adam.step(&mut field.params, &g);
        }

        if cfg.probe_step == Some(i) {
            probe = Some(LinearityProbe {
                step: i,
                lambda_img: li,
                lambda_sds: ls,
                mask_weight: cfg.mask_weight,
                g_img: g_img.clone(),
                g_mask: g_mask.clone(),
                g_sds: sds.as_ref().map(|s| s.grad.clone()),
                applied: g.clone(),
            });
        }

        let rec = StepRecord {
            step: i,
            res,
            lambda_img: li,
            lambda_sds: ls,
            recon_total,
            recon_rgb: loss.rgb as f64,
            recon_mask: loss.mask as f64,
            psnr,
            sds_t: sds.as_ref().map(|s| s.t),
            omega: sds.as_ref().map_or(0.0, |s| s.omega),
            sds_residual: sds.as_ref().map_or(0.0, |s| s.residual_msq),
            attention: sds.as_ref().and_then(|s| s.attention_value),
            skipped,
        };
        if let Some(f) = &mut csv {
            writeln!(f, "{}", csv_row(&rec))?;
        }
        steps.push(rec);

        if i + 1 == ts.warmup_steps {
            warmup_field = Some(field.clone());
        }
        if let Some(dir) = out_dir {
            if cfg.render_every > 0 && (i % cfg.render_every == 0 || i + 1 == ts.total_steps) {
                save_progress_renders(&dir.join("renders"), i, res, &out.rgb)?;
            }
        }

        guard.observe(i, recon_total)?;
    }

    if let Some(dir) = out_dir {
        save_field(&field, &cfg.render, &dir.join("checkpoint"))?;
    }
    Ok(TrainReport {
        field,
        warmup_field,
        steps,
        skipped: skipped_total,
        probe,
    })
}
