//! `pdes`: generate data, train, finetune, evaluate and run studies.
//!
//! Settings resolve in three layers: built-in defaults, an optional TOML
//! file (`--config`), then flags or their `PDES_*` environment variables.
//! Exit codes: 2 configuration error, 3 data error, 4 numerical divergence.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pde_surrogate::Error;

#[derive(Parser, Debug)]
#[command(name = "pdes", version, about = "Parametric PDE surrogate pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct GlobalArgs {
    /// TOML run configuration; flags override its values
    #[arg(long, global = true, env = "PDES_CONFIG")]
    pub config: Option<PathBuf>,
    /// Root random seed [default: 0]
    #[arg(long, global = true, env = "PDES_SEED")]
    pub seed: Option<u64>,
    /// Worker threads, 0 for all cores [default: 0]
    #[arg(long, global = true, env = "PDES_THREADS")]
    pub threads: Option<usize>,
    /// Parent of timestamped run directories [default: runs]
    #[arg(long, global = true, env = "PDES_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    /// Exact run directory, replacing `<out-dir>/<command>-<timestamp>-s<seed>`
    #[arg(long, global = true, env = "PDES_RUN_DIR")]
    pub run_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve trajectories and write a PDET dataset
    Generate(GenerateArgs),
    /// Assign trajectories to train/val/test-id/test-ood
    Split(SplitArgs),
    /// Train a model from scratch
    Train(TrainArgs),
    /// Continue training a checkpoint on new data
    Finetune(FinetuneArgs),
    /// Roll out a checkpoint on the test trajectories
    Evaluate(EvaluateArgs),
    /// Transformer versus per-parameter and pooled FNO baselines
    Compare(CompareArgs),
    /// Data-size or model-size scaling study
    Study(StudyArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// advection, burgers or ns2d-synthetic [default: advection]
    #[arg(long, env = "PDES_SYSTEM")]
    pub system: Option<String>,
    /// Parameter values, e.g. `0.1,0.4,2.0`, or `;`-separated vectors
    #[arg(long, env = "PDES_PARAMS", allow_hyphen_values = true)]
    pub params: Option<String>,
    /// Trajectories per parameter vector [default: 10]
    #[arg(long, env = "PDES_N_TRAJ")]
    pub n_traj: Option<usize>,
    /// Spatial extents, e.g. `256` or `64,64` [default: 256 in 1D, 64,64 in 2D]
    #[arg(long, env = "PDES_SPATIAL", value_delimiter = ',')]
    pub spatial: Option<Vec<usize>>,
    /// Stored frames per trajectory [default: 41]
    #[arg(long, env = "PDES_TIMESTEPS")]
    pub timesteps: Option<usize>,
    /// Final time [default: 2.0]
    #[arg(long, env = "PDES_T_FINAL")]
    pub t_final: Option<f64>,
    /// Solver substeps per frame [default: from the CFL limit]
    #[arg(long, env = "PDES_SUBSTEPS")]
    pub substeps: Option<usize>,
    /// Output file [default: dataset.pdet]
    #[arg(long, env = "PDES_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// PDET dataset
    #[arg(long, env = "PDES_DATASET")]
    pub dataset: Option<PathBuf>,
    /// Split file written by `split` [default: computed from the config]
    #[arg(long, env = "PDES_SPLITS")]
    pub splits: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    /// PDET dataset
    #[arg(long, env = "PDES_DATASET")]
    pub dataset: Option<PathBuf>,
    /// In-domain parameters [default: every parameter not out-of-domain]
    #[arg(long, env = "PDES_ID_PARAMS")]
    pub id_params: Option<String>,
    /// Out-of-domain (test-only) parameters [default: none]
    #[arg(long, env = "PDES_OOD_PARAMS")]
    pub ood_params: Option<String>,
    /// Test trajectories per in-domain parameter [default: 2]
    #[arg(long, env = "PDES_TEST_PER_PARAM")]
    pub test_per_param: Option<usize>,
    /// Train share of the remaining in-domain trajectories [default: 0.8]
    #[arg(long, env = "PDES_TRAIN_FRACTION")]
    pub train_fraction: Option<f64>,
    /// Output file [default: splits.json]
    #[arg(long, env = "PDES_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// vit or fno [default: vit]
    #[arg(long, env = "PDES_ARCH")]
    pub arch: Option<String>,
    /// Context frames k [default: 8]
    #[arg(long, env = "PDES_CONTEXT")]
    pub context: Option<usize>,
    /// Transformer layers [default: 4]
    #[arg(long, env = "PDES_LAYERS")]
    pub layers: Option<usize>,
    /// Transformer width [default: 256]
    #[arg(long, env = "PDES_HIDDEN")]
    pub hidden: Option<usize>,
    /// Attention heads [default: 4]
    #[arg(long, env = "PDES_HEADS")]
    pub heads: Option<usize>,
    /// Patch extents (spatial..., time) [default: from the grid]
    #[arg(long, env = "PDES_PATCH", value_delimiter = ',')]
    pub patch: Option<Vec<usize>>,
    /// FNO kept modes per axis [default: min(12, n/2)]
    #[arg(long, env = "PDES_FNO_MODES")]
    pub fno_modes: Option<usize>,
    /// FNO width [default: 20]
    #[arg(long, env = "PDES_FNO_WIDTH")]
    pub fno_width: Option<usize>,
    /// FNO layers [default: 4]
    #[arg(long, env = "PDES_FNO_LAYERS")]
    pub fno_layers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PlanArgs {
    /// Epoch limit [default: 100]
    #[arg(long, env = "PDES_MAX_EPOCHS")]
    pub max_epochs: Option<usize>,
    /// Optimizer step limit [default: none]
    #[arg(long, env = "PDES_MAX_STEPS")]
    pub max_steps: Option<usize>,
    /// Samples per step [default: 32]
    #[arg(long, env = "PDES_BATCH_SIZE")]
    pub batch_size: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long, env = "PDES_LR")]
    pub lr: Option<f64>,
    /// Decoupled weight decay [default: 0]
    #[arg(long, env = "PDES_WEIGHT_DECAY")]
    pub weight_decay: Option<f64>,
    /// Global gradient-norm cap, 0 disables [default: 1.0]
    #[arg(long, env = "PDES_GRAD_CLIP")]
    pub grad_clip: Option<f64>,
    /// Epochs without improvement before halving the rate [default: 5]
    #[arg(long, env = "PDES_PLATEAU_PATIENCE")]
    pub plateau_patience: Option<usize>,
    /// Epochs without improvement before stopping [default: 15]
    #[arg(long, env = "PDES_EARLY_STOP_PATIENCE")]
    pub early_stop_patience: Option<usize>,
    /// one-step or rollout [default: one-step]
    #[arg(long, env = "PDES_VAL_METRIC")]
    pub val_metric: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub plan: PlanArgs,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    /// Pretrained checkpoint
    #[arg(long, env = "PDES_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    /// Finetuning dataset; every trajectory is used for training
    #[arg(long, env = "PDES_DATASET")]
    pub dataset: Option<PathBuf>,
    /// Finetuning epochs [default: 10]
    #[arg(long, env = "PDES_EPOCHS")]
    pub epochs: Option<usize>,
    /// Use only the first n trajectories [default: all]
    #[arg(long, env = "PDES_N_TRAJ")]
    pub n_traj: Option<usize>,
    #[command(flatten)]
    pub plan: PlanArgs,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Checkpoint to roll out
    #[arg(long, env = "PDES_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Without a split file: parameters reported as out-of-domain [default: none]
    #[arg(long, env = "PDES_OOD_PARAMS")]
    pub ood_params: Option<String>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Training trajectories per parameter [default: 10]
    #[arg(long, env = "PDES_N_PER_PARAM")]
    pub n_per_param: Option<usize>,
    /// Parameter for the pooled FNO [default: first in-domain parameter]
    #[arg(long, env = "PDES_POOLED_PARAM", value_delimiter = ',')]
    pub pooled_param: Option<Vec<f64>>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub plan: PlanArgs,
}

#[derive(Args, Debug)]
pub struct StudyArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// data-size or model-size [default: data-size]
    #[arg(long, env = "PDES_AXIS")]
    pub axis: Option<String>,
    /// Trajectory counts, or small,base,large / L<l>H<h> [default: 10,20,40]
    #[arg(long, env = "PDES_POINTS", value_delimiter = ',')]
    pub points: Option<Vec<String>>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub plan: PlanArgs,
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Params(_) | Error::ShapeMismatch { .. } | Error::InvalidShape { .. } => 2,
        Error::Diverged(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
