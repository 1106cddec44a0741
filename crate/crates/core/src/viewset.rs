//! The on-disk product of stage 1: a rig of RGB views with foreground
//! masks, the prompt that produced them, and the optimization trace.
//!
//! Directory layout: `view_{k}.png`, `mask_{k}.png`, `cameras.json`,
//! `prompt.json`, and `refocus_trace.json` when the set came from a
//! refocused run.

use crate::camera::CameraRig;
use crate::error::{contract, Error, Result};
use crate::img::{load_mask_png, save_mask_png, Image};
use crate::text::TextCondition;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Distance from pure white (euclidean, [0,1] rgb) beyond which a pixel
/// counts as foreground.
pub const MASK_WHITE_DISTANCE: f32 = 0.05;

/// Loss values recorded while sampling, one entry per denoising step.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StepTrace {
    pub step_index: usize,
    pub timestep: usize,
    /// Attention loss per inner iteration, in execution order.
    pub losses: Vec<f32>,
}

pub type RefocusTrace = Vec<StepTrace>;

#[derive(Debug, Clone)]
pub struct ViewSet {
    pub images: Vec<Image>,
    pub masks: Vec<Vec<bool>>,
    pub rig: CameraRig,
    pub condition: TextCondition,
    pub prompt: String,
    pub trace: Option<RefocusTrace>,
}

#[derive(Serialize, Deserialize)]
struct CamerasFile {
    image_size: usize,
    cameras: Vec<crate::camera::Camera>,
    /// Row-major world-to-camera matrices, derived from the cameras.
    extrinsics: Vec<[f32; 16]>,
}

#[derive(Serialize, Deserialize)]
struct PromptFile {
    prompt: String,
    condition: TextCondition,
}

/// Pixels far enough from the white background, morphologically closed
/// with a 3x3 kernel so one-pixel gaps inside a subject do not punch
/// holes in the mask.
pub fn foreground_mask(img: &Image) -> Vec<bool> {
    let n = img.size;
    let mut mask = vec![false; n * n];
    for r in 0..n {
        for c in 0..n {
            let p = img.pixel(r, c);
            let d2 = (1.0 - p[0]).powi(2) + (1.0 - p[1]).powi(2) + (1.0 - p[2]).powi(2);
            mask[r * n + c] = d2.sqrt() > MASK_WHITE_DISTANCE;
        }
    }
    let dilated = morph(&mask, n, true);
    morph(&dilated, n, false)
}

fn morph(mask: &[bool], n: usize, dilate: bool) -> Vec<bool> {
    let mut out = vec![false; n * n];
    for r in 0..n {
        for c in 0..n {
            let mut acc = !dilate;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    let v = if rr < 0 || cc < 0 || rr >= n as i64 || cc >= n as i64 {
                        // outside the frame counts as background
                        false
                    } else {
                        mask[rr as usize * n + cc as usize]
                    };
                    if dilate {
                        acc |= v;
                    } else {
                        acc &= v;
                    }
                }
            }
            out[r * n + c] = acc;
        }
    }
    out
}

impl ViewSet {
    pub fn validate(&self) -> Result<()> {
        let f = self.rig.num_views();
        if self.images.len() != f || self.masks.len() != f {
            return Err(contract("view and mask counts must match the rig"));
        }
        let n = self.rig.image_size;
        for (img, mask) in self.images.iter().zip(&self.masks) {
            if img.size != n || mask.len() != n * n {
                return Err(contract("view resolution must match the rig"));
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        std::fs::create_dir_all(dir)?;
        for (k, img) in self.images.iter().enumerate() {
            img.save_png(&dir.join(format!("view_{k}.png")))?;
        }
        for (k, mask) in self.masks.iter().enumerate() {
            save_mask_png(mask, self.rig.image_size, &dir.join(format!("mask_{k}.png")))?;
        }
        let cams = CamerasFile {
            image_size: self.rig.image_size,
            cameras: self.rig.cameras.clone(),
            extrinsics: self.rig.cameras.iter().map(|c| c.extrinsic()).collect(),
        };
        std::fs::write(dir.join("cameras.json"), serde_json::to_vec_pretty(&cams)?)?;
        let prompt = PromptFile {
            prompt: self.prompt.clone(),
            condition: self.condition.clone(),
        };
        std::fs::write(dir.join("prompt.json"), serde_json::to_vec_pretty(&prompt)?)?;
        if let Some(trace) = &self.trace {
            std::fs::write(
                dir.join("refocus_trace.json"),
                serde_json::to_vec_pretty(trace)?,
            )?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<ViewSet> {
        let cams_path = dir.join("cameras.json");
        if !cams_path.exists() {
            return Err(Error::MissingInput(cams_path));
        }
        let cams: CamerasFile = serde_json::from_slice(&std::fs::read(cams_path)?)?;
        let prompt: PromptFile = serde_json::from_slice(&std::fs::read(dir.join("prompt.json"))?)?;
        let rig = CameraRig {
            cameras: cams.cameras,
            image_size: cams.image_size,
        };
        let f = rig.num_views();
        let mut images = Vec::with_capacity(f);
        let mut masks = Vec::with_capacity(f);
        for k in 0..f {
            images.push(Image::load_png(&dir.join(format!("view_{k}.png")))?);
            let (mask, size) = load_mask_png(&dir.join(format!("mask_{k}.png")))?;
            if size != rig.image_size {
                return Err(contract("mask resolution must match the rig"));
            }
            masks.push(mask);
        }
        let trace_path = dir.join("refocus_trace.json");
        let trace = if trace_path.exists() {
            Some(serde_json::from_slice(&std::fs::read(trace_path)?)?)
        } else {
            None
        };
        let set = ViewSet {
            images,
            masks,
            rig,
            condition: prompt.condition,
            prompt: prompt.prompt,
            trace,
        };
        set.validate()?;
        Ok(set)
    }
}
