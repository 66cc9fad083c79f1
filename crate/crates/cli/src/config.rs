//! Run configuration: a TOML document merged with command-line overrides.
//!
//! Every section and key is optional in the file; missing keys take the
//! defaults below. Unknown keys are rejected. The fully resolved document
//! is written as `config.toml` into every run directory, and feeding it
//! back with `--config` reproduces the run.

use std::path::{Path, PathBuf};

use pde_surrogate::datagen::{GridSpec, IcFamily, System};
use pde_surrogate::dataset::DatasetMeta;
use pde_surrogate::model::{FnoConfig, ModelConfig, ViTConfig};
use pde_surrogate::training::TrainPlan;
use pde_surrogate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream (initial conditions, splits, weight
    /// init, shuffling).
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    /// Parent directory of the timestamped run directories.
    pub out_dir: PathBuf,
    pub data: DataPaths,
    pub generate: GenerateConfig,
    pub split: SplitConfig,
    pub model: ModelSection,
    pub train: TrainPlan,
    pub finetune: FinetuneConfig,
    pub evaluate: EvaluateConfig,
    pub compare: CompareConfig,
    pub study: StudyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: 0,
            out_dir: PathBuf::from("runs"),
            data: DataPaths::default(),
            generate: GenerateConfig::default(),
            split: SplitConfig::default(),
            model: ModelSection::default(),
            train: TrainPlan::default(),
            finetune: FinetuneConfig::default(),
            evaluate: EvaluateConfig::default(),
            compare: CompareConfig::default(),
            study: StudyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    /// PDET dataset read by every command except `generate`.
    pub dataset: Option<PathBuf>,
    /// Split assignment written by `split`; computed from `[split]` when
    /// absent.
    pub splits: Option<PathBuf>,
    /// Checkpoint read by `finetune` and `evaluate`.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub system: System,
    /// One entry per parameter vector.
    pub params: Vec<Vec<f64>>,
    pub n_traj: usize,
    /// Spatial extents; `[256]` in 1D and `[64, 64]` in 2D when empty.
    pub spatial: Vec<usize>,
    pub timesteps: usize,
    pub t_final: f64,
    pub ic: IcFamily,
    /// Fixed solver substeps per output interval; chosen from the CFL
    /// limit when absent.
    pub substeps: Option<usize>,
    /// Output file.
    pub out: PathBuf,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            system: System::Advection,
            params: Vec::new(),
            n_traj: 10,
            spatial: Vec::new(),
            timesteps: 41,
            t_final: 2.0,
            ic: IcFamily::default(),
            substeps: None,
            out: PathBuf::from("dataset.pdet"),
        }
    }
}

impl GenerateConfig {
    pub fn grid(&self) -> GridSpec {
        let spatial = if self.spatial.is_empty() {
            match self.system.spatial_dims() {
                1 => vec![256],
                _ => vec![64, 64],
            }
        } else {
            self.spatial.clone()
        };
        GridSpec {
            spatial,
            n_timesteps: self.timesteps,
            t_final: self.t_final,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// In-domain parameters; every parameter of the dataset not listed as
    /// out-of-domain when empty.
    pub id_params: Vec<Vec<f64>>,
    pub ood_params: Vec<Vec<f64>>,
    pub test_per_param: usize,
    pub train_fraction: f64,
    /// Output file of the `split` command.
    pub out: PathBuf,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            id_params: Vec::new(),
            ood_params: Vec::new(),
            test_per_param: 2,
            train_fraction: 0.8,
            out: PathBuf::from("splits.json"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    Vit,
    Fno,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub arch: Arch,
    /// Context frames `k`.
    pub context: usize,
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Patch extents (spatial..., time); derived from the grid when empty.
    pub patch: Vec<usize>,
    /// Kept Fourier modes per axis; `min(12, n/2)` when absent.
    pub fno_modes: Option<usize>,
    pub fno_width: usize,
    pub fno_layers: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            arch: Arch::Vit,
            context: 8,
            layers: 4,
            hidden: 256,
            heads: 4,
            mlp_ratio: 4,
            patch: Vec::new(),
            fno_modes: None,
            fno_width: 20,
            fno_layers: 4,
        }
    }
}

impl ModelSection {
    pub fn vit(&self, meta: &DatasetMeta) -> ViTConfig {
        let c = meta.n_channels();
        let mut v = ViTConfig::new(&meta.grid.spatial, c + meta.n_params() + 1, c, self.context)
            .with_size(self.layers, self.hidden);
        v.heads = self.heads;
        v.mlp_ratio = self.mlp_ratio;
        if !self.patch.is_empty() {
            v.patch = self.patch.clone();
        }
        v
    }

    pub fn fno(&self, meta: &DatasetMeta) -> FnoConfig {
        let c = meta.n_channels();
        let mut f = FnoConfig::new(&meta.grid.spatial, c, c + meta.n_params() + 1, self.context);
        if let Some(m) = self.fno_modes {
            f.modes = m;
        }
        f.width = self.fno_width;
        f.n_layers = self.fno_layers;
        f
    }

    pub fn build(&self, meta: &DatasetMeta) -> Result<ModelConfig> {
        let m = match self.arch {
            Arch::Vit => ModelConfig::Vit(self.vit(meta)),
            Arch::Fno => ModelConfig::Fno(self.fno(meta)),
        };
        m.validate()?;
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    /// Uses only the first `n_traj` trajectories of the dataset when set.
    pub n_traj: Option<usize>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 10,
            n_traj: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Without a split file every trajectory is evaluated; these parameter
    /// values are reported as out-of-domain.
    pub ood_params: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub n_per_param: usize,
    /// Parameter whose data trains the pooled-budget FNO; the first
    /// in-domain parameter when empty.
    pub pooled_param: Vec<f64>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            n_per_param: 10,
            pooled_param: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub axis: pde_surrogate::eval::study::StudyAxis,
    /// Trajectory counts, or `small`/`base`/`large`/`L<l>H<h>` sizes.
    pub points: Vec<String>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            axis: pde_surrogate::eval::study::StudyAxis::DataSize,
            points: vec!["10".into(), "20".into(), "40".into()],
        }
    }
}

/// `0.1,0.4,2.0` for single-parameter systems, or `;`-separated vectors
/// such as `1,0,0.1;0,1,0.1`.
pub fn parse_param_list(s: &str, n_params: usize) -> Result<Vec<Vec<f64>>> {
    let num = |x: &str| {
        x.trim()
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("cannot parse parameter value {x:?}")))
    };
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    if n_params == 1 && !s.contains(';') {
        return s.split(',').map(|x| num(x).map(|v| vec![v])).collect();
    }
    s.split(';')
        .map(|v| v.split(',').map(num).collect::<Result<Vec<f64>>>())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("sead = 3").is_err());
        assert!(RunConfig::parse("[train]\nlearning_rate = 0.1").is_err());
        let c = RunConfig::parse("seed = 3\n[train]\nlr = 0.01").unwrap();
        assert_eq!((c.seed, c.train.lr, c.train.batch_size), (3, 0.01, 32));
    }

    #[test]
    fn parameter_lists() {
        assert_eq!(
            parse_param_list("0.1,0.4,2.0", 1).unwrap(),
            vec![vec![0.1], vec![0.4], vec![2.0]]
        );
        assert_eq!(
            parse_param_list("1,0,0.1;0,1,0", 3).unwrap(),
            vec![vec![1.0, 0.0, 0.1], vec![0.0, 1.0, 0.0]]
        );
        assert!(parse_param_list("x", 1).is_err());
    }
}
