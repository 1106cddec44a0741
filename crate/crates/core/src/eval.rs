//! Run evaluation: rendering trained fields back into images, scoring them
//! with the composition metric, and the paired statistics behind the A/B
//! comparisons.

use crate::camera::CameraRig;
use crate::error::Result;
use crate::field::{render_rays, rig_rays, RadianceField, Real, RenderCfg};
use crate::img::Image;
use crate::scenes::{score_views, CompositionReport, PromptSpec};
use serde::{Deserialize, Serialize};

/// Render every view of a rig into images, clamped to displayable range.
pub fn render_field_views<T: Real>(
    field: &RadianceField<T>,
    cfg: &RenderCfg,
    rig: &CameraRig,
) -> Result<Vec<Image>> {
    let rays = rig_rays(rig);
    let out = render_rays(field, &rays, cfg, None)?;
    let n = rig.image_size;
    let per_view = n * n;
    let mut views = Vec::with_capacity(rig.num_views());
    for v in 0..rig.num_views() {
        let mut data = vec![0f32; 3 * per_view];
        for p in 0..per_view {
            for ch in 0..3 {
                let x: f64 = num_traits::ToPrimitive::to_f64(&out.rgb[v * per_view + p][ch])
                    .unwrap_or(f64::NAN);
                data[ch * per_view + p] = (x as f32).clamp(0.0, 1.0);
            }
        }
        views.push(Image::from_data(n, data)?);
    }
    Ok(views)
}

/// Composition score of a trained field, judged from the rig's viewpoints.
pub fn field_composition<T: Real>(
    field: &RadianceField<T>,
    cfg: &RenderCfg,
    rig: &CameraRig,
    prompt: &PromptSpec,
) -> Result<CompositionReport> {
    let views = render_field_views(field, cfg, rig)?;
    Ok(score_views(&views, prompt))
}

/// One-sided exact sign test: the probability of seeing at least `wins`
/// successes in `wins + losses` fair coin flips. Ties must be dropped by the
/// caller before counting.
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    // Walk Pascal's row: p_0 = 2^-n, p_{k+1} = p_k (n-k)/(k+1).
    let mut pk = 0.5f64.powi(n as i32);
    let mut tail = 0.0;
    for k in 0..=n {
        if k >= wins {
            tail += pk;
        }
        pk *= (n - k) as f64 / (k + 1) as f64;
    }
    tail.min(1.0)
}

/// One seed's scores under the two arms being compared.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairedOutcome {
    pub label: String,
    pub baseline: f64,
    pub treated: f64,
}

impl PairedOutcome {
    pub fn delta(&self) -> f64 {
        self.treated - self.baseline
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairedReport {
    pub pairs: Vec<PairedOutcome>,
    pub baseline_mean: f64,
    pub treated_mean: f64,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// One-sided sign-test p-value for "treated beats baseline".
    pub p_value: f64,
}

pub fn compare_paired(pairs: &[PairedOutcome]) -> PairedReport {
    let n = pairs.len().max(1) as f64;
    let baseline_mean = pairs.iter().map(|p| p.baseline).sum::<f64>() / n;
    let treated_mean = pairs.iter().map(|p| p.treated).sum::<f64>() / n;
    let wins = pairs.iter().filter(|p| p.delta() > 0.0).count();
    let losses = pairs.iter().filter(|p| p.delta() < 0.0).count();
    let ties = pairs.len() - wins - losses;
    PairedReport {
        pairs: pairs.to_vec(),
        baseline_mean,
        treated_mean,
        wins,
        losses,
        ties,
        p_value: sign_test_p(wins, losses),
    }
}
