//! Multi-run experiments: the FNO-versus-transformer comparison table and
//! data-size / model-size scaling studies.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{evaluate, RolloutReport, TestCase, TrajectoryResult};
use crate::dataset::{same_params, Dataset, Split, SplitAssignment, Trajectory};
use crate::error::{Error, Result};
use crate::model::{FnoConfig, ModelConfig};
use crate::training::{pretrain, TrainData, TrainPlan};

type Group<'a> = (Vec<f64>, Vec<(usize, &'a Trajectory)>);

/// Trajectories of one split, grouped by parameter in first-appearance
/// order.
fn by_param<'a>(ds: &'a Dataset, splits: &SplitAssignment, which: Split) -> Vec<Group<'a>> {
    let mut out: Vec<Group<'a>> = Vec::new();
    for i in splits.indices(which) {
        let t = &ds.trajectories[i];
        match out.iter_mut().find(|(p, _)| same_params(p, &t.params)) {
            Some((_, v)) => v.push((i, t)),
            None => out.push((t.params.clone(), vec![(i, t)])),
        }
    }
    out
}

fn test_cases<'a>(ds: &'a Dataset, splits: &SplitAssignment) -> Vec<TestCase<'a>> {
    let mut cases: Vec<TestCase> = splits
        .indices(Split::TestId)
        .into_iter()
        .map(|id| TestCase {
            id,
            trajectory: &ds.trajectories[id],
            ood: false,
        })
        .collect();
    cases.extend(splits.indices(Split::TestOod).into_iter().map(|id| TestCase {
        id,
        trajectory: &ds.trajectories[id],
        ood: true,
    }));
    cases
}

/// The first `n` training trajectories of every in-domain parameter and
/// all their validation trajectories.
fn subset<'a>(
    ds: &'a Dataset,
    splits: &SplitAssignment,
    n: Option<usize>,
    only: Option<&[f64]>,
) -> Result<(Vec<&'a Trajectory>, Vec<&'a Trajectory>)> {
    let keep = |p: &[f64]| only.is_none_or(|o| same_params(o, p));
    let mut train = Vec::new();
    for (p, group) in by_param(ds, splits, Split::Train) {
        if !keep(&p) {
            continue;
        }
        let take = n.unwrap_or(group.len());
        if group.len() < take {
            return Err(Error::Data(format!(
                "parameter {p:?} has {} training trajectories, {take} requested",
                group.len()
            )));
        }
        train.extend(group.into_iter().take(take).map(|(_, t)| t));
    }
    let val = by_param(ds, splits, Split::Val)
        .into_iter()
        .filter(|(p, _)| keep(p))
        .flat_map(|(_, g)| g.into_iter().map(|(_, t)| t))
        .collect();
    if train.is_empty() {
        return Err(Error::Data("no training trajectories selected".into()));
    }
    Ok((train, val))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "-".into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub id_mean: Option<f64>,
    pub ood_mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub reports: Vec<RolloutReport>,
}

impl Comparison {
    /// `model,id_mean,ood_mean`, `-` where a value does not apply.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,id_mean,ood_mean\n");
        for r in &self.rows {
            writeln!(s, "{},{},{}", r.model, fmt_opt(r.id_mean), fmt_opt(r.ood_mean)).unwrap();
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct CompareSpec {
    pub vit: ModelConfig,
    pub fno: FnoConfig,
    pub vit_plan: TrainPlan,
    pub fno_plan: TrainPlan,
    /// Training trajectories per parameter for the transformer and for
    /// each single-parameter FNO.
    pub n_per_param: usize,
    /// Parameter whose data trains the FNO given the pooled budget.
    pub pooled_param: Vec<f64>,
    pub dataset_hash: String,
}

/// Transformer on all in-domain parameters versus FNOs trained on one
/// parameter each (`FNO[I]`, `n` trajectories) and one FNO trained on
/// `n * #params` trajectories of a single parameter (`FNO[II]`).
pub fn compare_fno(ds: &Dataset, splits: &SplitAssignment, spec: &CompareSpec) -> Result<Comparison> {
    let id_groups = by_param(ds, splits, Split::TestId);
    if id_groups.len() < 2 {
        return Err(Error::Data("comparison needs at least two in-domain parameters".into()));
    }
    let grid = &ds.meta.grid;
    let n = spec.n_per_param;
    let (train, val) = subset(ds, splits, Some(n), None)?;
    let data = TrainData {
        train,
        val,
        grid,
        dataset_hash: spec.dataset_hash.clone(),
    };
    let vit = pretrain(spec.vit.clone(), &data, &spec.vit_plan, &mut |_| {})?.checkpoint;
    let cases = test_cases(ds, splits);
    let vit_report = evaluate(&vit, &cases, grid, "ViT")?;

    let fno_cfg = ModelConfig::Fno(spec.fno.clone());
    let mut single: Vec<TrajectoryResult> = Vec::new();
    for (p, group) in &id_groups {
        let (train, val) = subset(ds, splits, Some(n), Some(p))?;
        let data = TrainData {
            train,
            val,
            grid,
            dataset_hash: spec.dataset_hash.clone(),
        };
        let m = pretrain(fno_cfg.clone(), &data, &spec.fno_plan, &mut |_| {})?.checkpoint;
        let cases: Vec<TestCase> = group
            .iter()
            .map(|&(id, t)| TestCase {
                id,
                trajectory: t,
                ood: false,
            })
            .collect();
        single.extend(evaluate(&m, &cases, grid, "FNO[I]")?.trajectories);
    }
    let fno_i = RolloutReport::from_results("FNO[I]", vit.model.config.context(), vit_report.horizon, single);

    let pooled_n = n * id_groups.len();
    let have = by_param(ds, splits, Split::Train)
        .into_iter()
        .find(|(p, _)| same_params(p, &spec.pooled_param))
        .map(|(_, g)| g.len())
        .unwrap_or(0);
    if have < pooled_n {
        return Err(Error::Data(format!(
            "FNO[II] needs {pooled_n} training trajectories of {:?}, split has {have}",
            spec.pooled_param
        )));
    }
    let (train, val) = subset(ds, splits, Some(pooled_n), Some(&spec.pooled_param))?;
    let data = TrainData {
        train,
        val,
        grid,
        dataset_hash: spec.dataset_hash.clone(),
    };
    let m = pretrain(fno_cfg, &data, &spec.fno_plan, &mut |_| {})?.checkpoint;
    let pooled_cases: Vec<TestCase> = id_groups
        .iter()
        .filter(|(p, _)| same_params(p, &spec.pooled_param))
        .flat_map(|(_, g)| {
            g.iter().map(|&(id, t)| TestCase {
                id,
                trajectory: t,
                ood: false,
            })
        })
        .collect();
    if pooled_cases.is_empty() {
        return Err(Error::Data(format!(
            "no in-domain test trajectories for {:?}",
            spec.pooled_param
        )));
    }
    let fno_ii = evaluate(&m, &pooled_cases, grid, "FNO[II]")?;

    let rows = vec![
        ComparisonRow {
            model: "ViT".into(),
            id_mean: vit_report.id_mean,
            ood_mean: vit_report.ood_mean,
        },
        ComparisonRow {
            model: "FNO[I]".into(),
            id_mean: fno_i.id_mean,
            ood_mean: None,
        },
        ComparisonRow {
            model: "FNO[II]".into(),
            id_mean: fno_ii.id_mean,
            ood_mean: None,
        },
    ];
    Ok(Comparison {
        rows,
        reports: vec![vit_report, fno_i, fno_ii],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyAxis {
    DataSize,
    ModelSize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyPoint {
    /// Training trajectories per in-domain parameter.
    Trajectories(usize),
    /// Transformer depth and width.
    Size { layers: usize, hidden: usize },
}

impl StudyPoint {
    /// `small`, `base`, `large`, `L<layers>H<hidden>` or a trajectory count.
    pub fn parse(axis: StudyAxis, s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse study point {s:?} for {axis:?}"));
        match axis {
            StudyAxis::DataSize => s.trim().parse().map(StudyPoint::Trajectories).map_err(|_| bad()),
            StudyAxis::ModelSize => {
                let (layers, hidden) = match s.trim() {
                    "small" => (2, 128),
                    "base" => (4, 256),
                    "large" => (8, 512),
                    other => {
                        let rest = other.strip_prefix('L').ok_or_else(bad)?;
                        let (l, h) = rest.split_once('H').ok_or_else(bad)?;
                        (l.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?)
                    }
                };
                Ok(StudyPoint::Size { layers, hidden })
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            StudyPoint::Trajectories(n) => n.to_string(),
            StudyPoint::Size { layers, hidden } => format!("L{layers}H{hidden}"),
        }
    }

    fn key(&self) -> usize {
        match self {
            StudyPoint::Trajectories(n) => *n,
            StudyPoint::Size { layers, hidden } => layers * hidden * hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyGrid {
    pub axis: StudyAxis,
    pub points: Vec<StudyPoint>,
}

impl StudyGrid {
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Config("study grid has no points".into()));
        }
        for p in &self.points {
            let ok = matches!(
                (self.axis, p),
                (StudyAxis::DataSize, StudyPoint::Trajectories(n)) if *n > 0
            ) || matches!((self.axis, p), (StudyAxis::ModelSize, StudyPoint::Size { .. }));
            if !ok {
                return Err(Error::Config(format!(
                    "point {} does not belong on the {:?} axis",
                    p.label(),
                    self.axis
                )));
            }
        }
        if self.points.windows(2).any(|w| w[0].key() >= w[1].key()) {
            return Err(Error::Config("study points must be strictly increasing".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub point: String,
    pub id_mean: Option<f64>,
    pub ood_mean: Option<f64>,
    pub param_count: usize,
    /// Total training trajectories.
    pub trajectories: usize,
}

#[derive(Debug)]
pub struct StudyResult {
    pub grid: StudyGrid,
    pub rows: Vec<StudyRow>,
    pub reports: Vec<RolloutReport>,
    /// Point label and error of the run that aborted the study; earlier
    /// rows are kept.
    pub failure: Option<(String, Error)>,
}

impl StudyResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("point,id_mean,ood_mean,param_count,trajectories\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{}",
                r.point,
                fmt_opt(r.id_mean),
                fmt_opt(r.ood_mean),
                r.param_count,
                r.trajectories
            )
            .unwrap();
        }
        s
    }

    /// Series for a log-log plot of error against the study axis.
    pub fn plot_data(&self) -> serde_json::Value {
        let x: Vec<f64> = self
            .rows
            .iter()
            .map(|r| match self.grid.axis {
                StudyAxis::DataSize => r.trajectories as f64,
                StudyAxis::ModelSize => r.param_count as f64,
            })
            .collect();
        let series = |name: &str, f: fn(&StudyRow) -> Option<f64>| serde_json::json!({ "name": name, "x": x, "y": self.rows.iter().map(f).collect::<Vec<_>>() });
        serde_json::json!({
            "schema_version": super::REPORT_SCHEMA_VERSION,
            "axis": self.grid.axis,
            "x_label": match self.grid.axis {
                StudyAxis::DataSize => "training trajectories",
                StudyAxis::ModelSize => "learnable parameters",
            },
            "y_label": "rollout MSE",
            "x_scale": "log",
            "y_scale": "log",
            "points": self.rows.iter().map(|r| r.point.clone()).collect::<Vec<_>>(),
            "series": [series("id_mean", |r| r.id_mean), series("ood_mean", |r| r.ood_mean)],
            "failure": self.failure.as_ref().map(|(p, e)| serde_json::json!({ "point": p, "error": e.to_string() })),
        })
    }
}

/// One train-and-evaluate run per grid point, all with the same seed.
/// Data-size points keep the first `n` training trajectories of every
/// in-domain parameter; model-size points resize a transformer `base`.
pub fn scaling_study(
    ds: &Dataset,
    splits: &SplitAssignment,
    grid: &StudyGrid,
    base: &ModelConfig,
    plan: &TrainPlan,
    dataset_hash: &str,
    progress: &mut dyn FnMut(&StudyRow),
) -> Result<StudyResult> {
    grid.validate()?;
    if grid.axis == StudyAxis::ModelSize && !matches!(base, ModelConfig::Vit(_)) {
        return Err(Error::Config(
            "model-size studies resize a transformer base config".into(),
        ));
    }
    let cases = test_cases(ds, splits);
    let mut out = StudyResult {
        grid: grid.clone(),
        rows: Vec::new(),
        reports: Vec::new(),
        failure: None,
    };
    for point in &grid.points {
        let run = || -> Result<(StudyRow, RolloutReport)> {
            let (n, config) = match (point, base) {
                (StudyPoint::Trajectories(n), c) => (Some(*n), c.clone()),
                (StudyPoint::Size { layers, hidden }, ModelConfig::Vit(v)) => {
                    (None, ModelConfig::Vit(v.clone().with_size(*layers, *hidden)))
                }
                _ => unreachable!("checked above"),
            };
            let (train, val) = subset(ds, splits, n, None)?;
            let trajectories = train.len();
            let data = TrainData {
                train,
                val,
                grid: &ds.meta.grid,
                dataset_hash: dataset_hash.to_string(),
            };
            let ck = pretrain(config, &data, plan, &mut |_| {})?.checkpoint;
            let report = evaluate(&ck, &cases, &ds.meta.grid, &point.label())?;
            let row = StudyRow {
                point: point.label(),
                id_mean: report.id_mean,
                ood_mean: report.ood_mean,
                param_count: ck.model.config.count_params(),
                trajectories,
            };
            Ok((row, report))
        };
        match run() {
            Ok((row, report)) => {
                progress(&row);
                out.rows.push(row);
                out.reports.push(report);
            }
            Err(e) => {
                out.failure = Some((point.label(), e));
                break;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, DatasetSpec, GridSpec, IcFamily, System};
    use crate::dataset::{make_splits, SplitPlan};
    use crate::model::ViTConfig;

    fn setup(n: usize) -> (Dataset, SplitAssignment) {
        let ds = generate_dataset(&DatasetSpec {
            system: System::Advection,
            params: vec![vec![0.1], vec![0.4], vec![1.0]],
            n_traj: n,
            grid: GridSpec::new_1d(16, 8, 1.0),
            seed: 1,
            ic: IcFamily::default(),
            substeps: None,
        })
        .unwrap();
        let recs: Vec<_> = ds.trajectories.iter().map(|t| (t.params.clone(), t.seed)).collect();
        let plan = SplitPlan::new(vec![vec![0.1], vec![0.4]], vec![vec![1.0]], 1);
        let s = make_splits(&recs, &plan, 0).unwrap();
        (ds, s)
    }

    fn quick_plan() -> TrainPlan {
        TrainPlan {
            max_epochs: 1,
            batch_size: 8,
            ..TrainPlan::default()
        }
    }

    fn vit() -> ModelConfig {
        let mut c = ViTConfig::new(&[16], 3, 1, 4).with_size(1, 8);
        c.patch = vec![4, 1];
        c.heads = 2;
        ModelConfig::Vit(c)
    }

    fn fno() -> FnoConfig {
        FnoConfig {
            width: 4,
            n_layers: 1,
            projection_width: 8,
            ..FnoConfig::new(&[16], 1, 3, 4)
        }
    }

    #[test]
    fn comparison_table_shape_and_determinism() {
        // 12 per parameter: 1 test, 8 train, 3 val -> pooled needs 2 * 4 = 8
        let (ds, s) = setup(12);
        let spec = CompareSpec {
            vit: vit(),
            fno: fno(),
            vit_plan: quick_plan(),
            fno_plan: quick_plan(),
            n_per_param: 4,
            pooled_param: vec![0.1],
            dataset_hash: String::new(),
        };
        let a = compare_fno(&ds, &s, &spec).unwrap();
        let csv = a.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "model,id_mean,ood_mean");
        assert!(lines[1].starts_with("ViT,") && !lines[1].ends_with(",-"));
        assert!(lines[2].starts_with("FNO[I],") && lines[2].ends_with(",-"));
        assert!(lines[3].starts_with("FNO[II],") && lines[3].ends_with(",-"));
        assert_eq!(csv, compare_fno(&ds, &s, &spec).unwrap().to_csv());
        let too_many = CompareSpec { n_per_param: 5, ..spec };
        assert!(compare_fno(&ds, &s, &too_many).is_err());
    }

    #[test]
    fn study_points_parse_and_order() {
        let sizes: Vec<StudyPoint> = ["small", "base", "large"]
            .iter()
            .map(|p| StudyPoint::parse(StudyAxis::ModelSize, p).unwrap())
            .collect();
        assert_eq!(
            sizes,
            vec![
                StudyPoint::Size { layers: 2, hidden: 128 },
                StudyPoint::Size { layers: 4, hidden: 256 },
                StudyPoint::Size { layers: 8, hidden: 512 },
            ]
        );
        let g = StudyGrid {
            axis: StudyAxis::ModelSize,
            points: sizes,
        };
        assert!(g.validate().is_ok());
        let rev = StudyGrid {
            axis: StudyAxis::DataSize,
            points: vec![StudyPoint::Trajectories(20), StudyPoint::Trajectories(10)],
        };
        assert!(rev.validate().is_err());
        assert_eq!(
            StudyPoint::parse(StudyAxis::ModelSize, "L3H64").unwrap().label(),
            "L3H64"
        );
    }

    #[test]
    fn data_size_study_reports_counts_and_keeps_partial_rows() {
        let (ds, s) = setup(12);
        let grid = StudyGrid {
            axis: StudyAxis::DataSize,
            points: vec![
                StudyPoint::Trajectories(2),
                StudyPoint::Trajectories(4),
                StudyPoint::Trajectories(50),
            ],
        };
        let r = scaling_study(&ds, &s, &grid, &vit(), &quick_plan(), "", &mut |_| {}).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.rows[0].trajectories, 4);
        assert_eq!(r.rows[1].trajectories, 8);
        assert_eq!(r.failure.as_ref().unwrap().0, "50");
        let plot = r.plot_data();
        assert_eq!(plot["x_scale"], "log");
        assert_eq!(plot["series"][0]["x"][1], 8.0);
        assert!(r
            .to_csv()
            .starts_with("point,id_mean,ood_mean,param_count,trajectories\n2,"));
    }

    #[test]
    fn model_size_study_uses_exact_counts() {
        let (ds, s) = setup(4);
        let grid = StudyGrid {
            axis: StudyAxis::ModelSize,
            points: vec![
                StudyPoint::Size { layers: 1, hidden: 8 },
                StudyPoint::Size { layers: 2, hidden: 8 },
            ],
        };
        let r = scaling_study(&ds, &s, &grid, &vit(), &quick_plan(), "", &mut |_| {}).unwrap();
        let ModelConfig::Vit(v) = vit() else { unreachable!() };
        assert_eq!(r.rows[0].param_count, v.clone().with_size(1, 8).count_params());
        assert_eq!(r.rows[1].param_count, v.with_size(2, 8).count_params());
    }
}
