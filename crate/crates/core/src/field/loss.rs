//! Sparse-view reconstruction loss: RGB error on the composited render
//! plus opacity-vs-mask error, both plain mean squared errors.

use super::net::{c, Real};
use super::render::{RayCotangents, RenderOutput};
use crate::error::{contract, Result};
use crate::viewset::ViewSet;

#[derive(Debug, Clone, Copy)]
pub struct ReconLoss<T> {
    pub total: T,
    pub rgb: T,
    pub mask: T,
}

fn check_lengths<T>(out: &RenderOutput<T>, gt_rgb: &[[T; 3]], gt_mask: &[T]) -> Result<usize> {
    let n = out.rgb.len();
    if gt_rgb.len() != n || gt_mask.len() != n || out.opacity.len() != n {
        return Err(contract("render and target sizes must match"));
    }
    if n == 0 {
        return Err(contract("empty ray batch"));
    }
    Ok(n)
}

/// `L_img = mean_sq(rgb - gt) + mean_sq(opacity - mask)`, with the RGB
/// term averaged over all pixel channels and the mask term over pixels.
pub fn reconstruction_loss<T: Real>(
    out: &RenderOutput<T>,
    gt_rgb: &[[T; 3]],
    gt_mask: &[T],
) -> Result<ReconLoss<T>> {
    let n = check_lengths(out, gt_rgb, gt_mask)?;
    let mut rgb = T::zero();
    let mut mask = T::zero();
    for i in 0..n {
        for ch in 0..3 {
            let d = out.rgb[i][ch] - gt_rgb[i][ch];
            rgb += d * d;
        }
        let d = out.opacity[i] - gt_mask[i];
        mask += d * d;
    }
    let rgb = rgb / c(3.0 * n as f64);
    let mask = mask / c(n as f64);
    Ok(ReconLoss {
        total: rgb + mask,
        rgb,
        mask,
    })
}

/// Sensitivities of the total reconstruction loss to the render outputs.
pub fn reconstruction_cotangents<T: Real>(
    out: &RenderOutput<T>,
    gt_rgb: &[[T; 3]],
    gt_mask: &[T],
) -> Result<RayCotangents<T>> {
    let n = check_lengths(out, gt_rgb, gt_mask)?;
    let mut cots = RayCotangents::zeros(n);
    let sr = c::<T>(2.0) / c(3.0 * n as f64);
    let sm = c::<T>(2.0) / c(n as f64);
    for i in 0..n {
        for ch in 0..3 {
            cots.rgb[i][ch] = sr * (out.rgb[i][ch] - gt_rgb[i][ch]);
        }
        cots.opacity[i] = sm * (out.opacity[i] - gt_mask[i]);
    }
    Ok(cots)
}

/// Per-ray targets of a view set, in the same order as the rig's rays
/// (view-major, pixels row-major).
pub fn viewset_targets<T: Real>(vs: &ViewSet) -> (Vec<[T; 3]>, Vec<T>) {
    let n = vs.rig.image_size;
    let mut rgb = Vec::with_capacity(vs.images.len() * n * n);
    let mut mask = Vec::with_capacity(rgb.capacity());
    for (img, m) in vs.images.iter().zip(&vs.masks) {
        for r in 0..n {
            for col in 0..n {
                let p = img.pixel(r, col);
                rgb.push([c(p[0] as f64), c(p[1] as f64), c(p[2] as f64)]);
                mask.push(if m[r * n + col] { T::one() } else { T::zero() });
            }
        }
    }
    (rgb, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Camera;
    use crate::field::grid::FieldCfg;
    use crate::field::net::RadianceField;
    use crate::field::render::{camera_rays, render_rays, render_rays_backward, RenderCfg};
    use crate::rng;
    use rand::Rng;

    fn fake_output(n: usize, seed: u64) -> (RenderOutput<f64>, Vec<[f64; 3]>, Vec<f64>) {
        let mut r = rng::stream(seed, "recon-test");
        let mut out = RenderOutput {
            rgb: Vec::new(),
            opacity: Vec::new(),
            depth: Vec::new(),
            trans: Vec::new(),
        };
        let mut gt_rgb = Vec::new();
        let mut gt_mask = Vec::new();
        for _ in 0..n {
            out.rgb
                .push([r.gen::<f64>(), r.gen::<f64>(), r.gen::<f64>()]);
            out.opacity.push(r.gen::<f64>());
            out.depth.push(2.0);
            out.trans.push(0.0);
            gt_rgb.push([r.gen::<f64>(), r.gen::<f64>(), r.gen::<f64>()]);
            gt_mask.push(if r.gen::<f64>() > 0.5 { 1.0 } else { 0.0 });
        }
        (out, gt_rgb, gt_mask)
    }

    #[test]
    fn perfect_render_has_zero_loss() {
        let (mut out, gt_rgb, gt_mask) = fake_output(32, 1);
        out.rgb = gt_rgb.clone();
        out.opacity = gt_mask.clone();
        let l = reconstruction_loss(&out, &gt_rgb, &gt_mask).unwrap();
        assert_eq!(l.total, 0.0);
        assert_eq!(l.rgb, 0.0);
        assert_eq!(l.mask, 0.0);
    }

    #[test]
    fn uniform_opacity_offset_gives_its_square() {
        let (mut out, gt_rgb, gt_mask) = fake_output(64, 2);
        out.rgb = gt_rgb.clone();
        out.opacity = gt_mask.iter().map(|m| m + 0.1).collect();
        let l = reconstruction_loss(&out, &gt_rgb, &gt_mask).unwrap();
        assert!((l.mask - 0.01).abs() < 1e-12);
        assert!((l.total - 0.01).abs() < 1e-12);
        assert_eq!(l.rgb, 0.0);
    }

    #[test]
    fn loss_matches_independent_recomputation() {
        let (out, gt_rgb, gt_mask) = fake_output(50, 3);
        let l = reconstruction_loss(&out, &gt_rgb, &gt_mask).unwrap();
        // accumulate in a different order with explicit running means
        let mut rgb = 0.0;
        let mut mask = 0.0;
        for i in (0..50).rev() {
            let d = out.opacity[i] - gt_mask[i];
            mask += d * d / 50.0;
            for ch in 0..3 {
                let d = out.rgb[i][ch] - gt_rgb[i][ch];
                rgb += d * d / 150.0;
            }
        }
        assert!((l.rgb - rgb).abs() < 1e-12);
        assert!((l.mask - mask).abs() < 1e-12);
        assert!((l.total - (rgb + mask)).abs() < 1e-12);
    }

    #[test]
    fn cotangents_match_finite_differences_of_the_loss() {
        let (out, gt_rgb, gt_mask) = fake_output(20, 4);
        let cots = reconstruction_cotangents(&out, &gt_rgb, &gt_mask).unwrap();
        let h = 1e-6;
        for &(i, ch) in &[(0usize, 0usize), (7, 2), (19, 1)] {
            let mut op = out.clone();
            op.rgb[i][ch] += h;
            let mut om = out.clone();
            om.rgb[i][ch] -= h;
            let fd = (reconstruction_loss(&op, &gt_rgb, &gt_mask).unwrap().total
                - reconstruction_loss(&om, &gt_rgb, &gt_mask).unwrap().total)
                / (2.0 * h);
            assert!((fd - cots.rgb[i][ch]).abs() < 1e-8);
        }
        let mut op = out.clone();
        op.opacity[11] += h;
        let mut om = out.clone();
        om.opacity[11] -= h;
        let fd = (reconstruction_loss(&op, &gt_rgb, &gt_mask).unwrap().total
            - reconstruction_loss(&om, &gt_rgb, &gt_mask).unwrap().total)
            / (2.0 * h);
        assert!((fd - cots.opacity[11]).abs() < 1e-8);
    }

    #[test]
    fn full_image_loss_gradient_matches_finite_differences() {
        // the acceptance-grade check: d L_img / d params through the
        // renderer against central differences, double precision
        let cfg = FieldCfg {
            levels: 2,
            feats_per_level: 2,
            base_res: 4,
            max_res: 8,
            table_size: 1 << 10,
            hidden: 8,
            bound: 1.0,
            view_dependent: false,
        };
        let mut field = RadianceField::<f64>::new(cfg, 31).unwrap();
        crate::field::spread_tables(&mut field);
        let mut rcfg = RenderCfg::default();
        rcfg.samples_per_ray = 24;
        let cam = Camera::new(120.0, 10.0, 2.5, 40.0);
        let rays = camera_rays(&cam, 4);
        let mut r = rng::stream(8, "recon-fd");
        let gt_rgb: Vec<[f64; 3]> = (0..rays.len())
            .map(|_| [r.gen(), r.gen(), r.gen()])
            .collect();
        let gt_mask: Vec<f64> = (0..rays.len())
            .map(|_| if r.gen::<f64>() > 0.5 { 1.0 } else { 0.0 })
            .collect();
        let loss_of = |f: &RadianceField<f64>| {
            let out = render_rays(f, &rays, &rcfg, None).unwrap();
            reconstruction_loss(&out, &gt_rgb, &gt_mask).unwrap().total
        };
        let out = render_rays(&field, &rays, &rcfg, None).unwrap();
        let cots = reconstruction_cotangents(&out, &gt_rgb, &gt_mask).unwrap();
        let grad = render_rays_backward(&field, &rays, &rcfg, None, &cots).unwrap();
        let lay = field.layout.clone();
        let mut idx: Vec<usize> = (0..lay.tables).filter(|&i| grad[i] != 0.0).take(5).collect();
        for sp in [lay.w1, lay.b2, lay.v1, lay.c2] {
            idx.push(sp.0);
        }
        let h = 1e-7;
        for &i in &idx {
            let mut fp = field.clone();
            fp.params[i] += h;
            let mut fm = field.clone();
            fm.params[i] -= h;
            let fd = (loss_of(&fp) - loss_of(&fm)) / (2.0 * h);
            let denom = fd.abs().max(grad[i].abs()).max(1e-10);
            assert!(
                (fd - grad[i]).abs() / denom < 1e-3,
                "param {i}: analytic {} vs fd {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn mismatched_sizes_are_rejected() {
        let (out, gt_rgb, gt_mask) = fake_output(8, 9);
        assert!(reconstruction_loss(&out, &gt_rgb[..4], &gt_mask).is_err());
        assert!(reconstruction_loss(&out, &gt_rgb, &gt_mask[..4]).is_err());
    }
}
