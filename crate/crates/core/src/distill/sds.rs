//! Score-distillation gradient for the radiance field.
//!
//! The field renders a 4-view batch, the render is noised to a scheduled
//! timestep, and the frozen multi-view denoiser scores it under
//! classifier-free guidance. The per-pixel residual `omega(t) * (eps_hat -
//! eps)` is then pulled back through the volume renderer only; the
//! denoiser is a frozen critic, equivalent to differentiating the
//! stop-gradient surrogate `1/2 * omega * ||x - stop(x - (eps_hat -
//! eps))||^2` with respect to the field parameters.

use super::schedule::TrainSchedule;
use crate::camera::CameraRig;
use crate::diffusion::schedule::{NoiseSchedule, TRAIN_STEPS};
use crate::diffusion::unet::Denoiser;
use crate::error::{contract, Result};
use crate::field::{
    c, render_rays, render_rays_backward, rig_rays, RadianceField, RayCotangents, Real, RenderCfg,
};
use crate::refocus::{attention_loss, AttentionRecord, RefocusConfig};
use crate::rng;
use crate::text::TextCondition;
use candle_core::{Device, Tensor, Var};
use rand::Rng;

/// One SDS evaluation: the parameter gradient plus everything needed to
/// reconstruct the surrogate objective it differentiates.
#[derive(Debug, Clone)]
pub struct SdsSample<T> {
    pub grad: Vec<T>,
    pub t: usize,
    pub omega: f64,
    /// Mean squared guidance residual `eps_hat - eps` (unweighted).
    pub residual_msq: f64,
    /// Rendered view batch at the evaluation point, one rgb per ray in
    /// rig order.
    pub renders: Vec<[T; 3]>,
    /// Guidance residual per ray (unweighted by omega).
    pub residual: Vec<[T; 3]>,
    /// Attention loss value when the one-stage coupling is active.
    pub attention_value: Option<f32>,
}

/// Draw a timestep and noise for step `i` and evaluate the SDS gradient.
#[allow(clippy::too_many_arguments)]
pub fn sds_gradient<T: Real>(
    field: &RadianceField<T>,
    rcfg: &RenderCfg,
    rig: &CameraRig,
    cond: &TextCondition,
    i: usize,
    den: &dyn Denoiser,
    ns: &NoiseSchedule,
    ts: &TrainSchedule,
    attn: Option<(f64, &RefocusConfig)>,
    rng: &mut impl Rng,
) -> Result<SdsSample<T>> {
    let t = ts.sample_timestep(i, rng);
    let noise = rng::normal_vec(rng, rig.num_views() * 3 * rig.image_size * rig.image_size);
    let omega = ts.omega.value(ns, t);
    sds_gradient_at(
        field,
        rcfg,
        rig,
        cond,
        t,
        omega,
        ts.sds_cfg_scale,
        &noise,
        den,
        ns,
        attn,
    )
}

/// Deterministic core: evaluate the SDS gradient at a fixed timestep,
/// weight, and noise realization.
#[allow(clippy::too_many_arguments)]
pub fn sds_gradient_at<T: Real>(
    field: &RadianceField<T>,
    rcfg: &RenderCfg,
    rig: &CameraRig,
    cond: &TextCondition,
    t: usize,
    omega: f64,
    cfg_scale: f64,
    noise: &[f32],
    den: &dyn Denoiser,
    ns: &NoiseSchedule,
    attn: Option<(f64, &RefocusConfig)>,
) -> Result<SdsSample<T>> {
    let s = rig.image_size;
    let f = rig.num_views();
    if s != den.image_size() {
        return Err(contract(format!(
            "rig renders {s} px but the critic expects {}",
            den.image_size()
        )));
    }
    if noise.len() != f * 3 * s * s {
        return Err(contract("noise length must match the view batch"));
    }
    if t >= TRAIN_STEPS {
        return Err(contract("timestep outside the training range"));
    }

    let rays = rig_rays(rig);
    let out = render_rays(field, &rays, rcfg, None)?;

    // view-major CHW tensor of the composited renders
    let mut x = vec![0f32; f * 3 * s * s];
    for v in 0..f {
        for p in 0..s * s {
            let rgb = out.rgb[v * s * s + p];
            for ch in 0..3 {
                x[(v * 3 + ch) * s * s + p] = rgb[ch].to_f64().unwrap() as f32;
            }
        }
    }
    let dev = Device::Cpu;
    let x_t = Tensor::from_vec(x, (f, 3, s, s), &dev)?;
    let eps_t = Tensor::from_vec(noise.to_vec(), (f, 3, s, s), &dev)?;
    let (qa, qb) = ns.q_sample_coeffs(t);
    let z_t = ((&x_t * qa)? + (&eps_t * qb)?)?;

    // frozen critic under classifier-free guidance; the one-stage variant
    // additionally differentiates the attention loss through the critic
    // back to the noised render
    let (eps_hat, attn_pixel_grad, attention_value) = match attn {
        Some((scale, rcfg_attn)) if scale > 0.0 && !cond.subject_indices.is_empty() => {
            let zv = Var::from_tensor(&z_t)?;
            let out_c = den.predict(zv.as_tensor(), t, cond, rig)?;
            let record = AttentionRecord::from_layers(&out_c.attention)?;
            let loss = attention_loss(&record, &cond.subject_indices, rcfg_attn)?;
            let grads = loss.total.backward()?;
            let gz = match grads.get(&zv) {
                Some(g) => (g * (scale * qa))?,
                None => z_t.zeros_like()?,
            };
            let eps_c = out_c.eps.detach();
            let un = den.predict(&z_t, t, &TextCondition::uncond(), rig)?;
            let eps = (&un.eps + ((&eps_c - &un.eps)? * cfg_scale)?)?;
            (eps, Some(gz), Some(loss.value))
        }
        _ => {
            let out_c = den.predict(&z_t, t, cond, rig)?;
            let eps = if cfg_scale == 1.0 {
                out_c.eps
            } else {
                let un = den.predict(&z_t, t, &TextCondition::uncond(), rig)?;
                (&un.eps + ((&out_c.eps - &un.eps)? * cfg_scale)?)?
            };
            (eps, None, None)
        }
    };

    let resid_t = (&eps_hat - &eps_t)?;
    let resid: Vec<f32> = resid_t.flatten_all()?.to_vec1()?;
    let attn_grad: Option<Vec<f32>> = match &attn_pixel_grad {
        Some(g) => Some(g.flatten_all()?.to_vec1()?),
        None => None,
    };

    let mut cots = RayCotangents::<T>::zeros(rays.len());
    let mut residual = Vec::with_capacity(rays.len());
    let mut msq = 0.0f64;
    for v in 0..f {
        for p in 0..s * s {
            let mut r3 = [T::zero(); 3];
            for ch in 0..3 {
                let idx = (v * 3 + ch) * s * s + p;
                let r = resid[idx] as f64;
                msq += r * r;
                let mut cot = omega * r;
                if let Some(g) = &attn_grad {
                    cot += g[idx] as f64;
                }
                cots.rgb[v * s * s + p][ch] = c(cot);
                r3[ch] = c(r);
            }
            residual.push(r3);
        }
    }
    msq /= (f * 3 * s * s) as f64;

    let grad = render_rays_backward(field, &rays, rcfg, None, &cots)?;
    Ok(SdsSample {
        grad,
        t,
        omega,
        residual_msq: msq,
        renders: out.rgb,
        residual,
        attention_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::unet::{AttentionMaps, DenoiserOutput};
    use crate::field::{spread_tables, FieldCfg};

    /// Critic returning a fixed affine function of its input; enough to
    /// exercise guidance arithmetic without a trained model.
    struct AffineCritic {
        size: usize,
        cond_scale: f64,
        cond_shift: f64,
        uncond_scale: f64,
    }

    impl Denoiser for AffineCritic {
        fn image_size(&self) -> usize {
            self.size
        }
        fn predict(
            &self,
            x: &Tensor,
            _t: usize,
            cond: &TextCondition,
            _rig: &CameraRig,
        ) -> Result<DenoiserOutput> {
            let eps = if cond.token_ids.is_empty() {
                (x * self.uncond_scale)?
            } else {
                ((x * self.cond_scale)? + self.cond_shift)?
            };
            Ok(DenoiserOutput {
                eps,
                attention: vec![],
            })
        }
    }

    /// Critic that always predicts exactly the stored noise tensor.
    struct EchoNoise {
        size: usize,
        noise: Tensor,
    }

    impl Denoiser for EchoNoise {
        fn image_size(&self) -> usize {
            self.size
        }
        fn predict(
            &self,
            _x: &Tensor,
            _t: usize,
            _cond: &TextCondition,
            _rig: &CameraRig,
        ) -> Result<DenoiserOutput> {
            Ok(DenoiserOutput {
                eps: self.noise.clone(),
                attention: vec![],
            })
        }
    }

    /// Critic whose single attention layer couples to the input image, so
    /// the attention loss is differentiable w.r.t. the noised render.
    struct CoupledAttention {
        size: usize,
        tokens: usize,
        couple: Vec<f32>,
    }

    impl Denoiser for CoupledAttention {
        fn image_size(&self) -> usize {
            self.size
        }
        fn predict(
            &self,
            x: &Tensor,
            _t: usize,
            cond: &TextCondition,
            _rig: &CameraRig,
        ) -> Result<DenoiserOutput> {
            let (fv, _c, n, _) = x.dims4()?;
            if cond.token_ids.is_empty() {
                return Ok(DenoiserOutput {
                    eps: x.zeros_like()?,
                    attention: vec![],
                });
            }
            // logits[k] = couple[k] * mean_channel(x) per pixel
            let mean = x.mean_keepdim(1)?.reshape((fv, n * n, 1))?;
            let cpl = Tensor::from_vec(
                self.couple.clone(),
                (1, 1, self.tokens),
                x.device(),
            )?;
            let logits = mean.broadcast_mul(&cpl)?;
            let probs = candle_nn::ops::softmax(&logits, 2)?;
            Ok(DenoiserOutput {
                eps: x.zeros_like()?,
                attention: vec![AttentionMaps {
                    size: n,
                    probs,
                }],
            })
        }
    }

    fn test_rig(size: usize) -> CameraRig {
        CameraRig::four_view(30.0, 15.0, size)
    }

    fn test_cond() -> TextCondition {
        TextCondition {
            token_ids: vec![1, 4, 7],
            subject_indices: vec![1, 2],
        }
    }

    fn micro_field() -> RadianceField<f64> {
        let mut f = RadianceField::<f64>::new(FieldCfg::micro(), 7).unwrap();
        spread_tables(&mut f);
        f
    }

    fn small_render() -> RenderCfg {
        let mut r = RenderCfg::default();
        r.samples_per_ray = 16;
        r
    }

    #[test]
    fn critic_matching_the_noise_gives_exactly_zero_gradient() {
        let size = 8;
        let field = micro_field();
        let rig = test_rig(size);
        let mut r = rng::stream(2, "sds-test");
        let noise = rng::normal_vec(&mut r, 4 * 3 * size * size);
        let den = EchoNoise {
            size,
            noise: Tensor::from_vec(noise.clone(), (4, 3, size, size), &Device::Cpu).unwrap(),
        };
        let ns = NoiseSchedule::linear();
        let sample = sds_gradient_at(
            &field,
            &small_render(),
            &rig,
            &test_cond(),
            400,
            0.8,
            7.5,
            &noise,
            &den,
            &ns,
            None,
        )
        .unwrap();
        assert!(sample.grad.iter().all(|&g| g == 0.0));
        assert_eq!(sample.residual_msq, 0.0);
    }

    #[test]
    fn zero_omega_gives_exactly_zero_gradient() {
        let size = 8;
        let field = micro_field();
        let rig = test_rig(size);
        let mut r = rng::stream(3, "sds-test");
        let noise = rng::normal_vec(&mut r, 4 * 3 * size * size);
        let den = AffineCritic {
            size,
            cond_scale: 0.4,
            cond_shift: 0.2,
            uncond_scale: 0.1,
        };
        let ns = NoiseSchedule::linear();
        let sample = sds_gradient_at(
            &field,
            &small_render(),
            &rig,
            &test_cond(),
            300,
            0.0,
            7.5,
            &noise,
            &den,
            &ns,
            None,
        )
        .unwrap();
        assert!(sample.grad.iter().all(|&g| g == 0.0));
        assert!(sample.residual_msq > 0.0);
    }

    #[test]
    fn gradient_scales_linearly_in_omega() {
        let size = 8;
        let field = micro_field();
        let rig = test_rig(size);
        let mut r = rng::stream(4, "sds-test");
        let noise = rng::normal_vec(&mut r, 4 * 3 * size * size);
        let den = AffineCritic {
            size,
            cond_scale: 0.4,
            cond_shift: 0.2,
            uncond_scale: 0.1,
        };
        let ns = NoiseSchedule::linear();
        let run = |omega: f64| {
            sds_gradient_at(
                &field,
                &small_render(),
                &rig,
                &test_cond(),
                300,
                omega,
                7.5,
                &noise,
                &den,
                &ns,
                None,
            )
            .unwrap()
            .grad
        };
        let g1 = run(1.0);
        let g2 = run(2.0);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn gradient_matches_finite_differences_of_the_stop_gradient_surrogate() {
        let size = 8;
        let field = micro_field();
        assert_eq!(field.param_count(), 16);
        let rig = test_rig(size);
        let rcfg = small_render();
        let cond = test_cond();
        let mut r = rng::stream(5, "sds-fd");
        let noise = rng::normal_vec(&mut r, 4 * 3 * size * size);
        let den = AffineCritic {
            size,
            cond_scale: 0.4,
            cond_shift: 0.15,
            uncond_scale: 0.1,
        };
        let ns = NoiseSchedule::linear();
        let t = 450;
        let omega = 1.0 - ns.alpha_bar(t);
        let base = sds_gradient_at(
            &field, &rcfg, &rig, &cond, t, omega, 7.5, &noise, &den, &ns, None,
        )
        .unwrap();

        // fixed surrogate target from the base evaluation
        let target: Vec<[f64; 3]> = base
            .renders
            .iter()
            .zip(&base.residual)
            .map(|(x, d)| [x[0] - d[0], x[1] - d[1], x[2] - d[2]])
            .collect();
        let rays = rig_rays(&rig);
        let surrogate = |f: &RadianceField<f64>| {
            let out = render_rays(f, &rays, &rcfg, None).unwrap();
            let mut acc = 0.0;
            for (x, tgt) in out.rgb.iter().zip(&target) {
                for ch in 0..3 {
                    let d = x[ch] - tgt[ch];
                    acc += d * d;
                }
            }
            0.5 * omega * acc
        };
        let h = 1e-7;
        let gmax = base.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        assert!(gmax > 0.0);
        for i in 0..16 {
            let mut fp = field.clone();
            fp.params[i] += h;
            let mut fm = field.clone();
            fm.params[i] -= h;
            let fd = (surrogate(&fp) - surrogate(&fm)) / (2.0 * h);
            let denom = fd.abs().max(base.grad[i].abs()).max(1e-3 * gmax);
            assert!(
                (fd - base.grad[i]).abs() / denom < 1e-3,
                "param {i}: analytic {} vs fd {fd}",
                base.grad[i]
            );
        }
    }

    #[test]
    fn attention_coupling_matches_finite_differences_through_the_critic() {
        let size = 8;
        let field = micro_field();
        let rig = test_rig(size);
        let rcfg = small_render();
        let cond = test_cond();
        let mut r = rng::stream(6, "sds-attn-fd");
        let noise = rng::normal_vec(&mut r, 4 * 3 * size * size);
        let den = CoupledAttention {
            size,
            tokens: 3,
            couple: vec![0.0, 1.2, -1.2],
        };
        let ns = NoiseSchedule::linear();
        let t = 500;
        let scale = 2.0;
        let acfg = RefocusConfig::default();
        let sample = sds_gradient_at(
            &field,
            &rcfg,
            &rig,
            &cond,
            t,
            0.0,
            1.0,
            &noise,
            &den,
            &ns,
            Some((scale, &acfg)),
        )
        .unwrap();
        assert!(sample.attention_value.is_some());
        assert!(sample.grad.iter().any(|&g| g != 0.0));

        // the full chain as a scalar function of the field parameters:
        // render, noise, critic attention, attention loss
        let rays = rig_rays(&rig);
        let (qa, qb) = ns.q_sample_coeffs(t);
        let objective = |f: &RadianceField<f64>| {
            let out = render_rays(f, &rays, &rcfg, None).unwrap();
            let mut x = vec![0f32; 4 * 3 * size * size];
            for v in 0..4 {
                for p in 0..size * size {
                    for ch in 0..3 {
                        x[(v * 3 + ch) * size * size + p] =
                            out.rgb[v * size * size + p][ch] as f32;
                    }
                }
            }
            let dev = Device::Cpu;
            let x_t = Tensor::from_vec(x, (4, 3, size, size), &dev).unwrap();
            let eps = Tensor::from_vec(noise.clone(), (4, 3, size, size), &dev).unwrap();
            let z = ((&x_t * qa).unwrap() + (&eps * qb).unwrap()).unwrap();
            let out_c = den.predict(&z, t, &cond, &rig).unwrap();
            let record = AttentionRecord::from_layers(&out_c.attention).unwrap();
            let loss = attention_loss(&record, &cond.subject_indices, &acfg).unwrap();
            scale * loss.value as f64
        };
        // f32 roundoff inside the critic limits achievable precision;
        // a larger step and a looser bound than the pure-f64 checks
        let h = 1e-3;
        let gmax = sample.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let mut checked = 0;
        for i in 0..16 {
            if sample.grad[i].abs() < 0.05 * gmax {
                continue;
            }
            let mut fp = field.clone();
            fp.params[i] += h;
            let mut fm = field.clone();
            fm.params[i] -= h;
            let fd = (objective(&fp) - objective(&fm)) / (2.0 * h);
            let denom = fd.abs().max(sample.grad[i].abs());
            assert!(
                (fd - sample.grad[i]).abs() / denom < 0.08,
                "param {i}: analytic {} vs fd {fd}",
                sample.grad[i]
            );
            checked += 1;
        }
        assert!(checked >= 3, "only {checked} parameters carried signal");
    }

    #[test]
    fn wrapper_draws_are_deterministic_and_within_the_window() {
        let size = 8;
        let field = micro_field().cast::<f32>();
        let rig = test_rig(size);
        let den = AffineCritic {
            size,
            cond_scale: 0.3,
            cond_shift: 0.1,
            uncond_scale: 0.05,
        };
        let ns = NoiseSchedule::linear();
        let ts = TrainSchedule::default();
        let run = || {
            let mut r = rng::stream(9, "sds-wrap");
            sds_gradient(
                &field,
                &small_render(),
                &rig,
                &test_cond(),
                5100,
                &den,
                &ns,
                &ts,
                None,
                &mut r,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.t, b.t);
        assert_eq!(a.grad, b.grad);
        assert!(a.t >= ts.t_min_schedule(5100) && a.t <= ts.t_max_schedule(5100));
        assert_eq!(a.omega, ts.omega.value(&ns, a.t));
    }

    #[test]
    fn mismatched_rig_and_critic_resolutions_are_rejected() {
        let field = micro_field();
        let den = AffineCritic {
            size: 16,
            cond_scale: 0.3,
            cond_shift: 0.1,
            uncond_scale: 0.05,
        };
        let ns = NoiseSchedule::linear();
        let noise = vec![0f32; 4 * 3 * 8 * 8];
        let r = sds_gradient_at(
            &field,
            &small_render(),
            &test_rig(8),
            &test_cond(),
            100,
            1.0,
            7.5,
            &noise,
            &den,
            &ns,
            None,
        );
        assert!(r.is_err());
    }
}
