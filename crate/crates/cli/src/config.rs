//! On-disk run configuration: one tagged TOML document per command. Every
//! command archives its effective config verbatim into the run directory, so
//! a run can be replayed with `--config <run>/config.toml`.

use mvlab_core::diffusion::{DenoiserCfg, TrainCfg};
use mvlab_core::distill::DistillCfg;
use mvlab_core::refocus::RefocusConfig;
use mvlab_core::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    MakeDataset(MakeDatasetCfg),
    TrainModel(TrainModelCfg),
    GenerateViews(GenerateViewsCfg),
    Distill(DistillRunCfg),
    Evaluate(EvaluateCfg),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Write the effective config into the run directory.
    pub fn archive(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("config not serializable: {e}")))?;
        fs::write(dir.join("config.toml"), text)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MakeDatasetCfg {
    pub out: PathBuf,
    pub scenes: usize,
    pub image_size: usize,
    /// Supersampling factor for the ground-truth renders.
    pub ssaa: usize,
    pub seed: u64,
}

impl Default for MakeDatasetCfg {
    fn default() -> Self {
        Self {
            out: PathBuf::from("runs/dataset"),
            scenes: 64,
            image_size: 32,
            ssaa: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainModelCfg {
    pub dataset: PathBuf,
    pub out: PathBuf,
    /// Model shape; `image_size` is always overridden by the dataset's.
    pub model: DenoiserCfg,
    pub train: TrainCfg,
    pub init_seed: u64,
}

impl Default for TrainModelCfg {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("runs/dataset"),
            out: PathBuf::from("runs/model"),
            model: DenoiserCfg::default(),
            train: TrainCfg::default(),
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepCfg {
    /// Number of sampled two-subject prompts.
    pub prompts: usize,
    /// Noise seeds; each (prompt, seed) pair runs both arms.
    pub seeds: Vec<u64>,
}

impl Default for SweepCfg {
    fn default() -> Self {
        Self {
            prompts: 20,
            seeds: vec![0, 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateViewsCfg {
    pub checkpoint: PathBuf,
    pub out: PathBuf,
    /// Explicit prompt text; when absent a prompt is sampled from
    /// `prompt_seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub prompt_seed: u64,
    /// Noise seed for the denoising chain.
    pub seed: u64,
    /// Plain DDIM baseline instead of the refocused sampler.
    pub no_refocus: bool,
    pub base_azimuth: f64,
    pub elevation: f64,
    pub refocus: RefocusConfig,
    /// Paired A/B sweep over prompts x seeds; overrides `prompt` and `seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepCfg>,
}

impl Default for GenerateViewsCfg {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::from("runs/model"),
            out: PathBuf::from("runs/views"),
            prompt: None,
            prompt_seed: 0,
            seed: 0,
            no_refocus: false,
            base_azimuth: 0.0,
            elevation: mvlab_core::camera::DEFAULT_ELEVATION_DEG,
            refocus: RefocusConfig::default(),
            sweep: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Open the timestep window degenerately high: both ends start at 980.
    Tmax980,
    /// Single-stage variant: add the attention loss directly to SDS.
    OneStageA,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillRunCfg {
    pub views: PathBuf,
    pub checkpoint: PathBuf,
    pub out: PathBuf,
    pub distill: DistillCfg,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ablation: Option<Ablation>,
    pub turntable_frames: usize,
    pub turntable_size: usize,
}

impl Default for DistillRunCfg {
    fn default() -> Self {
        Self {
            views: PathBuf::from("runs/views"),
            checkpoint: PathBuf::from("runs/model"),
            out: PathBuf::from("runs/distill"),
            distill: DistillCfg::default(),
            ablation: None,
            turntable_frames: 12,
            turntable_size: 64,
        }
    }
}

impl DistillRunCfg {
    /// Fold the ablation switch into the trainer config.
    pub fn effective_distill(&self) -> DistillCfg {
        let mut d = self.distill.clone();
        match self.ablation {
            Some(Ablation::Tmax980) => {
                d.schedule.t_max.0 = 980;
                d.schedule.t_min.0 = 980;
            }
            Some(Ablation::OneStageA) => {
                if d.attention_scale == 0.0 {
                    d.attention_scale = 1.0;
                }
            }
            None => {}
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateCfg {
    /// Run directories to score individually.
    pub runs: Vec<PathBuf>,
    /// Two-arm comparison: `baseline[i]` is paired with `treated[i]`.
    pub baseline: Vec<PathBuf>,
    pub treated: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Render resolution when scoring a distilled field checkpoint.
    pub eval_size: usize,
}

impl Default for EvaluateCfg {
    fn default() -> Self {
        Self {
            runs: Vec::new(),
            baseline: Vec::new(),
            treated: Vec::new(),
            out: None,
            eval_size: 64,
        }
    }
}

impl EvaluateCfg {
    pub fn validate(&self) -> Result<()> {
        if self.runs.is_empty() && self.baseline.is_empty() {
            return Err(Error::Config(
                "no run directories given: pass --run, or --baseline with --treated".into(),
            ));
        }
        if self.baseline.len() != self.treated.len() {
            return Err(Error::Config(format!(
                "paired comparison needs equally many baseline ({}) and treated ({}) runs",
                self.baseline.len(),
                self.treated.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(cfg: &RunConfig) {
        let text = toml::to_string_pretty(cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(&back, cfg, "lossy roundtrip:\n{text}");
    }

    #[test]
    fn all_commands_roundtrip_through_toml() {
        roundtrip(&RunConfig::MakeDataset(MakeDatasetCfg::default()));
        roundtrip(&RunConfig::TrainModel(TrainModelCfg::default()));
        let mut gv = GenerateViewsCfg::default();
        roundtrip(&RunConfig::GenerateViews(gv.clone()));
        gv.prompt = Some("red cube left of blue sphere".into());
        gv.sweep = Some(SweepCfg::default());
        roundtrip(&RunConfig::GenerateViews(gv));
        let mut d = DistillRunCfg::default();
        roundtrip(&RunConfig::Distill(d.clone()));
        d.ablation = Some(Ablation::Tmax980);
        d.distill.mask_weight = Some(0.5);
        d.distill.probe_step = Some(300);
        roundtrip(&RunConfig::Distill(d));
        let mut e = EvaluateCfg::default();
        e.runs = vec![PathBuf::from("a"), PathBuf::from("b")];
        e.out = Some(PathBuf::from("metrics"));
        roundtrip(&RunConfig::Evaluate(e));
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        let top = "command = \"make-dataset\"\nscenes = 4\nbogus = 1\n";
        assert!(toml::from_str::<RunConfig>(top).is_err());
        let nested = "command = \"generate-views\"\n[refocus]\nalpha_scale = 0.0\nbogus = 1\n";
        assert!(toml::from_str::<RunConfig>(nested).is_err());
        let sched = "command = \"distill\"\n[distill.schedule]\nwarmup_steps = 100\nbogus = 1\n";
        assert!(toml::from_str::<RunConfig>(sched).is_err());
        let ok = "command = \"make-dataset\"\nscenes = 4\n";
        assert!(toml::from_str::<RunConfig>(ok).is_ok());
    }

    #[test]
    fn ablations_rewrite_the_trainer_config() {
        let mut cfg = DistillRunCfg::default();
        cfg.ablation = Some(Ablation::Tmax980);
        let d = cfg.effective_distill();
        assert_eq!(d.schedule.t_max.0, 980);
        assert_eq!(d.schedule.t_min.0, 980);
        assert_eq!(d.schedule.t_max.1, cfg.distill.schedule.t_max.1);
        d.schedule.validate().unwrap();

        cfg.ablation = Some(Ablation::OneStageA);
        let d = cfg.effective_distill();
        assert_eq!(d.attention_scale, 1.0);
        cfg.distill.attention_scale = 3.0;
        assert_eq!(cfg.effective_distill().attention_scale, 3.0);

        cfg.ablation = None;
        assert_eq!(cfg.effective_distill(), cfg.distill);
    }

    #[test]
    fn evaluate_validation_catches_empty_and_unbalanced_inputs() {
        assert!(EvaluateCfg::default().validate().is_err());
        let mut e = EvaluateCfg::default();
        e.baseline = vec![PathBuf::from("a")];
        assert!(e.validate().is_err());
        e.treated = vec![PathBuf::from("b")];
        assert!(e.validate().is_ok());
    }
}
