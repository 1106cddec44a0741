//! Synthetic compositional scenes: specification, geometry, rendering,
//! dataset synthesis and the composition metric.

pub mod dataset;
pub mod metric;
pub mod render;
pub mod sdf;
pub mod spec;

pub use dataset::{generate_dataset, generate_sample, DatasetCfg, SceneSample};
pub use metric::{score_views, CompositionReport};
pub use render::{render_rig, render_view, RenderedView};
pub use spec::{Color, PromptSpec, Relation, SceneSpec, Shape, Subject};
