//! Hash-grid radiance field, differentiable volume renderer, and the
//! sparse-view reconstruction loss.

pub mod checkpoint;
pub mod grid;
pub mod loss;
pub mod net;
pub mod render;

pub use checkpoint::{load_field, save_field, FieldCheckpointMeta};
pub use grid::{FieldCfg, Layout};
pub use loss::{reconstruction_cotangents, reconstruction_loss, viewset_targets, ReconLoss};
pub use net::{PointCache, RadianceField, Real};
pub(crate) use net::c;
pub use render::{
    camera_rays, render_rays, render_rays_backward, rig_rays, stratified_jitter, surface_normals,
    Ray, RayCotangents, RenderCfg, RenderOutput,
};

/// Scale the table features of a freshly initialized field from their tiny
/// training magnitudes up to O(0.1). Finite-difference checks need this:
/// at init every hidden pre-activation sits within ~1e-4 of the ReLU kink,
/// exactly where central differences lie.
pub fn spread_tables<T: Real>(field: &mut RadianceField<T>) {
    let k = T::from_f64(3000.0).unwrap();
    for p in &mut field.params[..field.layout.tables] {
        *p = *p * k;
    }
}
