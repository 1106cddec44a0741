//! Stage 2: hybrid few-shot reconstruction plus annealed score
//! distillation against the frozen multi-view denoiser.

pub mod adam;
pub mod schedule;
pub mod sds;
pub mod trainer;

pub use adam::{Adam, DEFAULT_LR_HEADS, DEFAULT_LR_TABLES};
pub use schedule::{OmegaKind, TrainSchedule};
pub use sds::{sds_gradient, sds_gradient_at, SdsSample};
pub use trainer::{
    fixed_view_psnr, train_stage2, DistillCfg, DivergenceGuard, LinearityProbe, StepRecord,
    TrainReport,
};
