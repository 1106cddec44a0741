//! Field checkpoints: the flat f32 parameter vector in safetensors form
//! next to a JSON sidecar holding the grid configuration and the render
//! conventions it was trained under.

use super::grid::{FieldCfg, Layout};
use super::net::{Real, RadianceField};
use super::render::RenderCfg;
use crate::error::{Error, Result};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldCheckpointMeta {
    pub field: FieldCfg,
    pub render: RenderCfg,
}

pub fn save_field<T: Real>(
    field: &RadianceField<T>,
    render: &RenderCfg,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = FieldCheckpointMeta {
        field: field.cfg.clone(),
        render: render.clone(),
    };
    fs::write(dir.join("field.json"), serde_json::to_string_pretty(&meta)?)?;
    let data: Vec<f32> = field.params.iter().map(|p| p.to_f64().unwrap() as f32).collect();
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    let view = TensorView::new(Dtype::F32, vec![data.len()], &bytes)
        .map_err(|e| Error::Checkpoint(format!("{e}")))?;
    safetensors::serialize_to_file([("params".to_string(), view)], &None, &dir.join("field.safetensors"))
        .map_err(|e| Error::Checkpoint(format!("{e}")))?;
    Ok(())
}

pub fn load_field<T: Real>(dir: &Path) -> Result<(RadianceField<T>, RenderCfg)> {
    let meta_path = dir.join("field.json");
    if !meta_path.exists() {
        return Err(Error::MissingInput(meta_path));
    }
    let meta: FieldCheckpointMeta = serde_json::from_str(&fs::read_to_string(meta_path)?)?;
    meta.field.validate()?;
    let layout = Layout::new(&meta.field);
    let raw = fs::read(dir.join("field.safetensors"))?;
    let st = SafeTensors::deserialize(&raw).map_err(|e| Error::Checkpoint(format!("{e}")))?;
    let t = st
        .tensor("params")
        .map_err(|e| Error::Checkpoint(format!("{e}")))?;
    if t.dtype() != Dtype::F32 || t.shape() != [layout.total] {
        return Err(Error::Checkpoint(format!(
            "parameter tensor has shape {:?}, layout expects {}",
            t.shape(),
            layout.total
        )));
    }
    let params: Vec<T> = t
        .data()
        .chunks_exact(4)
        .map(|b| {
            let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            T::from_f64(v as f64).unwrap()
        })
        .collect();
    Ok((
        RadianceField {
            cfg: meta.field,
            layout,
            params,
        },
        meta.render,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::grid::FieldCfg;

    #[test]
    fn checkpoint_roundtrip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let field = RadianceField::<f32>::new(FieldCfg::small(), 77).unwrap();
        let mut rcfg = RenderCfg::default();
        rcfg.samples_per_ray = 48;
        save_field(&field, &rcfg, dir.path()).unwrap();
        let (back, rcfg2) = load_field::<f32>(dir.path()).unwrap();
        assert_eq!(field.cfg, back.cfg);
        assert_eq!(field.params, back.params);
        assert_eq!(rcfg, rcfg2);
    }

    #[test]
    fn missing_checkpoint_reports_the_path() {
        let dir = tempfile::tempdir().unwrap();
        match load_field::<f32>(dir.path()) {
            Err(Error::MissingInput(_)) => {}
            other => panic!("expected MissingInput, got {other:?}"),
        }
    }
}
