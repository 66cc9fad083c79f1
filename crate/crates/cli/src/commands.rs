use std::path::{Path, PathBuf};

use pde_surrogate::datagen::{generate_dataset, DatasetSpec, System};
use pde_surrogate::dataset::{
    dataset_hash, make_splits, read_dataset, same_params, write_dataset, Dataset, PdetReader, Split, SplitAssignment,
    SplitPlan, Trajectory,
};
use pde_surrogate::eval::study::{compare_fno, scaling_study, CompareSpec, StudyAxis, StudyGrid, StudyPoint};
use pde_surrogate::eval::{evaluate, TestCase};
use pde_surrogate::model::Checkpoint;
use pde_surrogate::training::{finetune, pretrain, EpochLog, TrainData, ValMetric};
use pde_surrogate::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{parse_param_list, Arch, RunConfig};
use crate::{Cli, Command, DataArgs, GlobalArgs, ModelArgs, PlanArgs};

const SPLIT_SCHEMA_VERSION: u32 = 1;

/// On-disk split assignment, tied to the dataset it was computed for.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitFile {
    schema_version: u32,
    dataset_hash: String,
    seed: u64,
    plan: SplitPlan,
    splits: Vec<Option<Split>>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_global(cfg: &mut RunConfig, g: &GlobalArgs) {
    set(&mut cfg.seed, g.seed);
    set(&mut cfg.threads, g.threads);
    set(&mut cfg.out_dir, g.out_dir.clone());
}

fn apply_data(cfg: &mut RunConfig, d: DataArgs) {
    if d.dataset.is_some() {
        cfg.data.dataset = d.dataset;
    }
    if d.splits.is_some() {
        cfg.data.splits = d.splits;
    }
}

fn apply_model(cfg: &mut RunConfig, m: ModelArgs) -> Result<()> {
    let s = &mut cfg.model;
    if let Some(a) = m.arch {
        s.arch = match a.as_str() {
            "vit" => Arch::Vit,
            "fno" => Arch::Fno,
            other => return Err(Error::Config(format!("unknown architecture {other:?}"))),
        };
    }
    set(&mut s.context, m.context);
    set(&mut s.layers, m.layers);
    set(&mut s.hidden, m.hidden);
    set(&mut s.heads, m.heads);
    set(&mut s.patch, m.patch);
    if m.fno_modes.is_some() {
        s.fno_modes = m.fno_modes;
    }
    set(&mut s.fno_width, m.fno_width);
    set(&mut s.fno_layers, m.fno_layers);
    Ok(())
}

fn apply_plan(cfg: &mut RunConfig, p: PlanArgs) -> Result<()> {
    let t = &mut cfg.train;
    set(&mut t.max_epochs, p.max_epochs);
    if p.max_steps.is_some() {
        t.max_steps = p.max_steps;
    }
    set(&mut t.batch_size, p.batch_size);
    set(&mut t.lr, p.lr);
    set(&mut t.weight_decay, p.weight_decay);
    if let Some(c) = p.grad_clip {
        t.grad_clip = (c > 0.0).then_some(c);
    }
    set(&mut t.plateau_patience, p.plateau_patience);
    set(&mut t.early_stop_patience, p.early_stop_patience);
    if let Some(v) = p.val_metric {
        t.val_metric = match v.as_str() {
            "rollout" => ValMetric::Rollout,
            "one-step" => ValMetric::OneStep,
            other => return Err(Error::Config(format!("unknown validation metric {other:?}"))),
        };
    }
    Ok(())
}

fn init_threads(n: usize) {
    // a second initialization (only possible in-process) keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

/// Creates the run directory and records the resolved configuration and
/// tool version in it.
fn make_run_dir(cfg: &RunConfig, explicit: Option<PathBuf>, command: &str) -> Result<PathBuf> {
    let dir = match explicit {
        Some(d) => d,
        None => {
            let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S");
            let base = cfg.out_dir.join(format!("{command}-{stamp}-s{}", cfg.seed));
            let mut dir = base.clone();
            let mut n = 2;
            while dir.exists() {
                dir = PathBuf::from(format!("{}-{n}", base.display()));
                n += 1;
            }
            dir
        }
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?;
    let version = format!("pdes {}\n", env!("CARGO_PKG_VERSION"));
    let config = format!(
        "# resolved configuration of `pdes {command}`, {version}{}",
        cfg.to_toml()
    );
    write(&dir.join("config.toml"), &config)?;
    write(&dir.join("VERSION"), &version)?;
    Ok(dir)
}

fn write(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn dataset_path(cfg: &RunConfig) -> Result<&Path> {
    cfg.data
        .dataset
        .as_deref()
        .ok_or_else(|| Error::Config("no dataset given (--dataset or [data] dataset)".into()))
}

/// Parameter count from the dataset header alone.
fn n_params(cfg: &RunConfig) -> Result<usize> {
    Ok(PdetReader::open(dataset_path(cfg)?)?.manifest().meta().n_params())
}

fn load_dataset(cfg: &RunConfig) -> Result<(Dataset, String)> {
    let p = dataset_path(cfg)?;
    Ok((read_dataset(p)?, dataset_hash(p)?))
}

fn split_plan(cfg: &RunConfig, ds: &Dataset) -> SplitPlan {
    let s = &cfg.split;
    let id = if s.id_params.is_empty() {
        ds.param_values()
            .into_iter()
            .filter(|p| !s.ood_params.iter().any(|q| same_params(p, q)))
            .collect()
    } else {
        s.id_params.clone()
    };
    let mut plan = SplitPlan::new(id, s.ood_params.clone(), s.test_per_param);
    plan.train_fraction = s.train_fraction;
    plan.val_fraction = 1.0 - s.train_fraction;
    plan
}

fn compute_splits(cfg: &RunConfig, ds: &Dataset) -> Result<SplitAssignment> {
    let recs: Vec<(Vec<f64>, u64)> = ds.trajectories.iter().map(|t| (t.params.clone(), t.seed)).collect();
    make_splits(&recs, &split_plan(cfg, ds), cfg.seed)
}

fn resolve_splits(cfg: &RunConfig, ds: &Dataset, hash: &str) -> Result<SplitAssignment> {
    let Some(p) = &cfg.data.splits else {
        return compute_splits(cfg, ds);
    };
    let text = std::fs::read_to_string(p).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
    let f: SplitFile = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
    if f.schema_version != SPLIT_SCHEMA_VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported split schema {}",
            p.display(),
            f.schema_version
        )));
    }
    if f.dataset_hash != hash || f.splits.len() != ds.trajectories.len() {
        return Err(Error::Data(format!(
            "{} was computed for a different dataset",
            p.display()
        )));
    }
    Ok(SplitAssignment { splits: f.splits })
}

fn pick<'a>(ds: &'a Dataset, s: &SplitAssignment, which: Split) -> Vec<&'a Trajectory> {
    s.indices(which).into_iter().map(|i| &ds.trajectories[i]).collect()
}

fn log_epoch(e: &EpochLog) {
    match e.val_mse {
        Some(v) => eprintln!(
            "epoch {:4}  train {:.4e}  val {:.4e}  lr {:.2e}",
            e.epoch, e.train_mse, v, e.lr
        ),
        None => eprintln!("epoch {:4}  train {:.4e}  lr {:.2e}", e.epoch, e.train_mse, e.lr),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_global(&mut cfg, &cli.global);
    let run_dir = cli.global.run_dir;
    match cli.command {
        Command::Generate(a) => {
            let g = &mut cfg.generate;
            if let Some(s) = a.system {
                g.system = System::parse(&s)?;
            }
            if let Some(p) = a.params {
                g.params = parse_param_list(&p, g.system.param_names().len())?;
            }
            set(&mut g.n_traj, a.n_traj);
            set(&mut g.spatial, a.spatial);
            set(&mut g.timesteps, a.timesteps);
            set(&mut g.t_final, a.t_final);
            if a.substeps.is_some() {
                g.substeps = a.substeps;
            }
            set(&mut g.out, a.out);
            init_threads(cfg.threads);
            generate(&cfg)
        }
        Command::Split(a) => {
            if a.dataset.is_some() {
                cfg.data.dataset = a.dataset;
            }
            if let Some(p) = a.id_params {
                cfg.split.id_params = parse_param_list(&p, n_params(&cfg)?)?;
            }
            if let Some(p) = a.ood_params {
                cfg.split.ood_params = parse_param_list(&p, n_params(&cfg)?)?;
            }
            set(&mut cfg.split.test_per_param, a.test_per_param);
            set(&mut cfg.split.train_fraction, a.train_fraction);
            set(&mut cfg.split.out, a.out);
            split(&cfg)
        }
        Command::Train(a) => {
            apply_data(&mut cfg, a.data);
            apply_model(&mut cfg, a.model)?;
            apply_plan(&mut cfg, a.plan)?;
            cfg.train.seed = cfg.seed;
            init_threads(cfg.threads);
            train(&cfg, make_run_dir(&cfg, run_dir, "train")?)
        }
        Command::Finetune(a) => {
            if a.checkpoint.is_some() {
                cfg.data.checkpoint = a.checkpoint;
            }
            if a.dataset.is_some() {
                cfg.data.dataset = a.dataset;
            }
            set(&mut cfg.finetune.epochs, a.epochs);
            if a.n_traj.is_some() {
                cfg.finetune.n_traj = a.n_traj;
            }
            apply_plan(&mut cfg, a.plan)?;
            cfg.train.seed = cfg.seed;
            init_threads(cfg.threads);
            finetune_cmd(&cfg, make_run_dir(&cfg, run_dir, "finetune")?)
        }
        Command::Evaluate(a) => {
            if a.checkpoint.is_some() {
                cfg.data.checkpoint = a.checkpoint;
            }
            apply_data(&mut cfg, a.data);
            if let Some(p) = a.ood_params {
                cfg.evaluate.ood_params = parse_param_list(&p, n_params(&cfg)?)?;
            }
            init_threads(cfg.threads);
            evaluate_cmd(&cfg, make_run_dir(&cfg, run_dir, "evaluate")?)
        }
        Command::Compare(a) => {
            apply_data(&mut cfg, a.data);
            set(&mut cfg.compare.n_per_param, a.n_per_param);
            set(&mut cfg.compare.pooled_param, a.pooled_param);
            apply_model(&mut cfg, a.model)?;
            apply_plan(&mut cfg, a.plan)?;
            cfg.train.seed = cfg.seed;
            init_threads(cfg.threads);
            compare(&cfg, make_run_dir(&cfg, run_dir, "compare")?)
        }
        Command::Study(a) => {
            apply_data(&mut cfg, a.data);
            if let Some(axis) = a.axis {
                cfg.study.axis = match axis.as_str() {
                    "data-size" => StudyAxis::DataSize,
                    "model-size" => StudyAxis::ModelSize,
                    other => return Err(Error::Config(format!("unknown study axis {other:?}"))),
                };
            }
            set(&mut cfg.study.points, a.points);
            apply_model(&mut cfg, a.model)?;
            apply_plan(&mut cfg, a.plan)?;
            cfg.train.seed = cfg.seed;
            init_threads(cfg.threads);
            study(&cfg, make_run_dir(&cfg, run_dir, "study")?)
        }
    }
}

fn generate(cfg: &RunConfig) -> Result<()> {
    let g = &cfg.generate;
    if g.params.is_empty() {
        return Err(Error::Config("no parameter values given (--params)".into()));
    }
    let spec = DatasetSpec {
        system: g.system,
        params: g.params.clone(),
        n_traj: g.n_traj,
        grid: g.grid(),
        seed: cfg.seed,
        ic: g.ic.clone(),
        substeps: g.substeps,
    };
    let ds = generate_dataset(&spec)?;
    write_dataset(&g.out, &ds)?;
    println!(
        "{}: {} trajectories of {} ({} parameter values x {}), frames {:?}, sha256 {}",
        g.out.display(),
        ds.trajectories.len(),
        g.system.name(),
        g.params.len(),
        g.n_traj,
        ds.meta.frame_shape(),
        dataset_hash(&g.out)?
    );
    Ok(())
}

fn split(cfg: &RunConfig) -> Result<()> {
    let (ds, hash) = load_dataset(cfg)?;
    let plan = split_plan(cfg, &ds);
    let assignment = compute_splits(cfg, &ds)?;
    let file = SplitFile {
        schema_version: SPLIT_SCHEMA_VERSION,
        dataset_hash: hash,
        seed: cfg.seed,
        plan,
        splits: assignment.splits.clone(),
    };
    let body = serde_json::to_string_pretty(&file).expect("split file serializes");
    write(&cfg.split.out, &body)?;
    println!(
        "{}: train {}, val {}, test-id {}, test-ood {}",
        cfg.split.out.display(),
        assignment.count(Split::Train),
        assignment.count(Split::Val),
        assignment.count(Split::TestId),
        assignment.count(Split::TestOod)
    );
    Ok(())
}

fn train(cfg: &RunConfig, dir: PathBuf) -> Result<()> {
    let (ds, hash) = load_dataset(cfg)?;
    let splits = resolve_splits(cfg, &ds, &hash)?;
    let model = cfg.model.build(&ds.meta)?;
    let data = TrainData {
        train: pick(&ds, &splits, Split::Train),
        val: pick(&ds, &splits, Split::Val),
        grid: &ds.meta.grid,
        dataset_hash: hash,
    };
    eprintln!(
        "training {} ({} parameters) on {} trajectories",
        model.arch(),
        model.count_params(),
        data.train.len()
    );
    let out = pretrain(model, &data, &cfg.train, &mut log_epoch)?;
    out.checkpoint.save(dir.join("checkpoint.pdtc"))?;
    write(&dir.join("train_log.csv"), &out.log.to_csv())?;
    println!("{}", dir.join("checkpoint.pdtc").display());
    Ok(())
}

fn load_checkpoint(cfg: &RunConfig) -> Result<Checkpoint> {
    let p = cfg
        .data
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::Config("no checkpoint given (--checkpoint or [data] checkpoint)".into()))?;
    Checkpoint::load(p)
}

fn finetune_cmd(cfg: &RunConfig, dir: PathBuf) -> Result<()> {
    let base = load_checkpoint(cfg)?;
    let (ds, hash) = load_dataset(cfg)?;
    let n = cfg.finetune.n_traj.unwrap_or(ds.trajectories.len());
    if n == 0 || n > ds.trajectories.len() {
        return Err(Error::Data(format!(
            "finetuning on {n} trajectories, dataset holds {}",
            ds.trajectories.len()
        )));
    }
    let data = TrainData {
        train: ds.trajectories.iter().take(n).collect(),
        val: Vec::new(),
        grid: &ds.meta.grid,
        dataset_hash: hash,
    };
    let out = finetune(&base, &data, &cfg.train, cfg.finetune.epochs, &mut log_epoch)?;
    out.checkpoint.save(dir.join("checkpoint.pdtc"))?;
    write(&dir.join("train_log.csv"), &out.log.to_csv())?;
    println!("{}", dir.join("checkpoint.pdtc").display());
    Ok(())
}

fn test_cases<'a>(cfg: &RunConfig, ds: &'a Dataset, hash: &str) -> Result<Vec<TestCase<'a>>> {
    if cfg.data.splits.is_some() {
        let s = resolve_splits(cfg, ds, hash)?;
        let tag = |which, ood| {
            s.indices(which).into_iter().map(move |id| TestCase {
                id,
                trajectory: &ds.trajectories[id],
                ood,
            })
        };
        return Ok(tag(Split::TestId, false).chain(tag(Split::TestOod, true)).collect());
    }
    Ok(ds
        .trajectories
        .iter()
        .enumerate()
        .map(|(id, t)| TestCase {
            id,
            trajectory: t,
            ood: cfg.evaluate.ood_params.iter().any(|p| same_params(p, &t.params)),
        })
        .collect())
}

fn fmt_mean(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4e}")).unwrap_or_else(|| "-".into())
}

fn evaluate_cmd(cfg: &RunConfig, dir: PathBuf) -> Result<()> {
    let ck = load_checkpoint(cfg)?;
    let (ds, hash) = load_dataset(cfg)?;
    if ck.model.config.spatial() != ds.meta.grid.spatial.as_slice() {
        return Err(Error::Data(format!(
            "checkpoint expects grid {:?}, dataset has {:?}",
            ck.model.config.spatial(),
            ds.meta.grid.spatial
        )));
    }
    let cases = test_cases(cfg, &ds, &hash)?;
    let id = ck.hash()?;
    let report = evaluate(&ck, &cases, &ds.meta.grid, &id[..12])?;
    report.write(&dir, "report")?;
    println!(
        "id-mean {} (persistence {}), ood-mean {} (persistence {}), diverged {}",
        fmt_mean(report.id_mean),
        fmt_mean(report.id_persistence_mean),
        fmt_mean(report.ood_mean),
        fmt_mean(report.ood_persistence_mean),
        report.n_diverged
    );
    Ok(())
}

fn compare(cfg: &RunConfig, dir: PathBuf) -> Result<()> {
    let (ds, hash) = load_dataset(cfg)?;
    let splits = resolve_splits(cfg, &ds, &hash)?;
    let pooled = if cfg.compare.pooled_param.is_empty() {
        splits
            .indices(Split::TestId)
            .first()
            .map(|&i| ds.trajectories[i].params.clone())
            .ok_or_else(|| Error::Data("split has no in-domain test trajectories".into()))?
    } else {
        cfg.compare.pooled_param.clone()
    };
    let spec = CompareSpec {
        vit: pde_surrogate::model::ModelConfig::Vit(cfg.model.vit(&ds.meta)),
        fno: cfg.model.fno(&ds.meta),
        vit_plan: cfg.train.clone(),
        fno_plan: cfg.train.clone(),
        n_per_param: cfg.compare.n_per_param,
        pooled_param: pooled,
        dataset_hash: hash,
    };
    let table = compare_fno(&ds, &splits, &spec)?;
    write(&dir.join("comparison.csv"), &table.to_csv())?;
    for r in &table.reports {
        let stem = r.model_id.replace(['[', ']'], "").to_lowercase();
        r.write(&dir, &stem)?;
    }
    print!("{}", table.to_csv());
    Ok(())
}

fn study(cfg: &RunConfig, dir: PathBuf) -> Result<()> {
    let (ds, hash) = load_dataset(cfg)?;
    let splits = resolve_splits(cfg, &ds, &hash)?;
    let points = cfg
        .study
        .points
        .iter()
        .map(|p| StudyPoint::parse(cfg.study.axis, p))
        .collect::<Result<Vec<_>>>()?;
    let grid = StudyGrid {
        axis: cfg.study.axis,
        points,
    };
    let base = cfg.model.build(&ds.meta)?;
    let result = scaling_study(&ds, &splits, &grid, &base, &cfg.train, &hash, &mut |r| {
        eprintln!(
            "point {}: id-mean {}, ood-mean {}",
            r.point,
            fmt_mean(r.id_mean),
            fmt_mean(r.ood_mean)
        );
    })?;
    write(&dir.join("study.csv"), &result.to_csv())?;
    let plot = serde_json::to_string_pretty(&result.plot_data()).expect("plot data serializes");
    write(&dir.join("plot.json"), &plot)?;
    for r in &result.reports {
        r.write(&dir, &format!("report-{}", r.model_id))?;
    }
    print!("{}", result.to_csv());
    match result.failure {
        Some((point, e)) => {
            eprintln!("study stopped at point {point}; rows before it were written");
            Err(e)
        }
        None => Ok(()),
    }
}
