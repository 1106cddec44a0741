//! Attention-refocused multi-view sampling: the attention activation loss,
//! cross-layer attention records, and the DDIM sampler that applies
//! gradient nudges to the latent between denoising transitions.

pub mod loss;
pub mod record;
pub mod sampler;

pub use loss::{
    attention_loss, gaussian_kernel, strip_sot_and_renormalize, Aggregation, AttentionLoss,
    RefocusConfig, SotMode,
};
pub use record::AttentionRecord;
pub use sampler::{
    ddim_transition, guided_eps, init_noise, refocus_denoising_step, sample_refocused_views,
    sample_views,
};
