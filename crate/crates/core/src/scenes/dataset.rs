//! Random scene synthesis and the rendered multi-view dataset.
//!
//! Every scene is derived from `stream(seed, "scene/<index>")`, so samples
//! can be regenerated individually and in any order. Placement happens in a
//! canonical frame whose +x axis is screen right of the scene's first
//! camera, then the whole arrangement is rotated to the rig's base azimuth,
//! keeping `left of` true in view 0 regardless of the rig orientation.

use super::render::render_rig;
use super::spec::{Color, PromptSpec, Relation, SceneSpec, Shape, Subject, GROUND_Y};
use crate::camera::CameraRig;
use crate::error::{Error, Result};
use crate::img::{load_mask_png, save_mask_png, Image};
use crate::rng::stream;
use crate::text::{TextCondition, Vocabulary};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

const PLACEMENT_ATTEMPTS: usize = 100;
const SCALE_RANGE: (f64, f64) = (0.18, 0.26);

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetCfg {
    pub scenes: usize,
    pub image_size: usize,
    pub ssaa: usize,
    pub seed: u64,
}

impl DatasetCfg {
    pub fn new(scenes: usize, image_size: usize, seed: u64) -> Self {
        Self {
            scenes,
            image_size,
            ssaa: 2,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SceneSample {
    pub spec: SceneSpec,
    pub rig: CameraRig,
    pub prompt: PromptSpec,
    pub condition: TextCondition,
    pub views: Vec<Image>,
    pub masks: Vec<Vec<bool>>,
}

/// Sample what a scene contains: two subjects with distinct colors and a
/// relation slot. Shapes are drawn first so their marginals stay uniform;
/// the relation is drawn from the slots those shapes permit.
pub fn sample_composition(rng: &mut impl Rng) -> PromptSpec {
    let shape_a = *Shape::ALL.choose(rng).expect("non-empty");
    let shape_b = *Shape::ALL.choose(rng).expect("non-empty");
    let mut colors = Color::ALL.to_vec();
    colors.shuffle(rng);
    let mut slots: Vec<Option<Relation>> =
        vec![None, Some(Relation::LeftOf), Some(Relation::Beside)];
    if shape_b == Shape::Cube {
        slots.push(Some(Relation::OnTopOf));
    }
    if shape_b == Shape::Torus && matches!(shape_a, Shape::Sphere | Shape::Cone) {
        slots.push(Some(Relation::Inside));
    }
    let relation = *slots.choose(rng).expect("non-empty");
    PromptSpec {
        subjects: vec![(colors[0], shape_a), (colors[1], shape_b)],
        relations: vec![relation],
    }
}

fn footprint_of(shape: Shape, scale: f64) -> f64 {
    match shape {
        Shape::Cube => scale * std::f64::consts::SQRT_2,
        _ => scale,
    }
}

fn rest_y(shape: Shape, scale: f64, surface: f64) -> f64 {
    match shape {
        Shape::Sphere | Shape::Cube => surface + scale,
        Shape::Cone => surface,
        Shape::Torus => surface + 0.25 * scale,
    }
}

fn rotate_about_y(p: [f64; 3], deg: f64) -> [f64; 3] {
    let (s, c) = deg.to_radians().sin_cos();
    [c * p[0] + s * p[2], p[1], -s * p[0] + c * p[2]]
}

/// Realize a composition as placed geometry, rotated to `base_azimuth_deg`.
pub fn sample_scene_spec(
    rng: &mut impl Rng,
    prompt: &PromptSpec,
    base_azimuth_deg: f64,
) -> Result<SceneSpec> {
    let (ca, sa_shape) = prompt.subjects[0];
    let (cb, sb_shape) = prompt.subjects[1];
    let relation = prompt.relations[0];

    for _ in 0..PLACEMENT_ATTEMPTS {
        let (sa, sb) = match relation {
            Some(Relation::Inside) => {
                let sb = rng.gen_range(0.42..0.50);
                let sa = rng.gen_range(0.13..0.85 * 0.5 * sb);
                (sa, sb)
            }
            _ => (
                rng.gen_range(SCALE_RANGE.0..SCALE_RANGE.1),
                rng.gen_range(SCALE_RANGE.0..SCALE_RANGE.1),
            ),
        };
        let fa = footprint_of(sa_shape, sa);
        let fb = footprint_of(sb_shape, sb);

        let (a_xz, b_xz) = match relation {
            Some(Relation::LeftOf) => {
                let xa = rng.gen_range(-0.52..-0.12);
                let xb = rng.gen_range(0.12..0.52);
                if xb - xa < fa + fb + 0.05 {
                    continue;
                }
                (
                    (xa, rng.gen_range(-0.28..0.28)),
                    (xb, rng.gen_range(-0.28..0.28)),
                )
            }
            Some(Relation::Beside) => {
                let d = rng.gen_range((fa + fb + 0.04)..(1.45 * (fa + fb)));
                let angle: f64 = rng.gen_range(-0.26..0.26);
                let cx = rng.gen_range(-0.1..0.1);
                let cz = rng.gen_range(-0.1..0.1);
                let (dx, dz) = (d * angle.cos() / 2.0, d * angle.sin() / 2.0);
                ((cx - dx, cz - dz), (cx + dx, cz + dz))
            }
            Some(Relation::OnTopOf) | Some(Relation::Inside) => {
                let bx = rng.gen_range(-0.35..0.35);
                let bz = rng.gen_range(-0.35..0.35);
                let max_off = match relation {
                    Some(Relation::OnTopOf) => 0.3 * sb,
                    _ => (0.5 * sb - fa).max(0.0) * 0.6,
                };
                let r = max_off * rng.gen::<f64>().sqrt();
                let phi = rng.gen_range(0.0..std::f64::consts::TAU);
                ((bx + r * phi.cos(), bz + r * phi.sin()), (bx, bz))
            }
            None => (
                (rng.gen_range(-0.5..0.5), rng.gen_range(-0.28..0.28)),
                (rng.gen_range(-0.5..0.5), rng.gen_range(-0.28..0.28)),
            ),
        };

        let by = rest_y(sb_shape, sb, GROUND_Y);
        let ay = match relation {
            Some(Relation::OnTopOf) => rest_y(sa_shape, sa, GROUND_Y + 2.0 * sb),
            _ => rest_y(sa_shape, sa, GROUND_Y),
        };

        let spec = SceneSpec {
            subjects: vec![
                Subject {
                    color: ca,
                    shape: sa_shape,
                    scale: sa,
                    position: rotate_about_y([a_xz.0, ay, a_xz.1], base_azimuth_deg),
                },
                Subject {
                    color: cb,
                    shape: sb_shape,
                    scale: sb,
                    position: rotate_about_y([b_xz.0, by, b_xz.1], base_azimuth_deg),
                },
            ],
            relations: vec![relation],
        };
        if spec.validate().is_ok() {
            return Ok(spec);
        }
    }
    Err(Error::Unsatisfiable {
        attempts: PLACEMENT_ATTEMPTS,
    })
}

/// Generate scene `index` of the dataset identified by `cfg.seed`.
pub fn generate_sample(cfg: &DatasetCfg, index: usize, vocab: &Vocabulary) -> Result<SceneSample> {
    let mut rng = stream(cfg.seed, &format!("scene/{index}"));
    let base_azimuth = rng.gen::<f64>() * 360.0;
    let elevation = rng.gen_range(-10.0..45.0);
    let rig = CameraRig::four_view(base_azimuth, elevation, cfg.image_size);
    let prompt = sample_composition(&mut rng);
    let spec = sample_scene_spec(&mut rng, &prompt, base_azimuth)?;
    let condition = prompt.condition(vocab)?;
    let rendered = render_rig(&spec, &rig, cfg.ssaa);
    let (views, masks) = rendered.into_iter().map(|v| (v.image, v.mask)).unzip();
    Ok(SceneSample {
        spec,
        rig,
        prompt,
        condition,
        views,
        masks,
    })
}

pub fn generate_dataset(cfg: &DatasetCfg, vocab: &Vocabulary) -> Result<Vec<SceneSample>> {
    if cfg.scenes == 0 {
        return Err(Error::EmptyDataset);
    }
    (0..cfg.scenes)
        .map(|i| generate_sample(cfg, i, vocab))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneMeta {
    spec: SceneSpec,
    rig: CameraRig,
    prompt: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    cfg: DatasetCfg,
}

pub fn save_dataset(dir: &Path, cfg: &DatasetCfg, samples: &[SceneSample]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = DatasetMeta { cfg: cfg.clone() };
    fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&meta)?)?;
    for (i, sample) in samples.iter().enumerate() {
        let scene_dir = dir.join(format!("scene_{i:04}"));
        fs::create_dir_all(&scene_dir)?;
        let meta = SceneMeta {
            spec: sample.spec.clone(),
            rig: sample.rig.clone(),
            prompt: sample.prompt.prompt(),
        };
        fs::write(scene_dir.join("scene.json"), serde_json::to_string_pretty(&meta)?)?;
        for (v, view) in sample.views.iter().enumerate() {
            view.save_png(&scene_dir.join(format!("view_{v}.png")))?;
            save_mask_png(
                &sample.masks[v],
                view.size,
                &scene_dir.join(format!("mask_{v}.png")),
            )?;
        }
    }
    Ok(())
}

pub fn load_dataset(dir: &Path, vocab: &Vocabulary) -> Result<Vec<SceneSample>> {
    let meta_path = dir.join("dataset.json");
    if !meta_path.exists() {
        return Err(Error::MissingInput(meta_path));
    }
    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(meta_path)?)?;
    let mut samples = Vec::with_capacity(meta.cfg.scenes);
    for i in 0..meta.cfg.scenes {
        let scene_dir = dir.join(format!("scene_{i:04}"));
        let scene: SceneMeta = serde_json::from_str(&fs::read_to_string(scene_dir.join("scene.json"))?)?;
        scene.rig.validate()?;
        let mut views = Vec::new();
        let mut masks = Vec::new();
        for v in 0..scene.rig.num_views() {
            views.push(Image::load_png(&scene_dir.join(format!("view_{v}.png")))?);
            masks.push(load_mask_png(&scene_dir.join(format!("mask_{v}.png")))?.0);
        }
        let prompt = scene.spec.prompt_spec();
        let condition = prompt.condition(vocab)?;
        samples.push(SceneSample {
            spec: scene.spec,
            rig: scene.rig,
            prompt,
            condition,
            views,
            masks,
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(samples)
}
