use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::same_params;
use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// JSON has no infinity; diverged errors are written as `null`.
mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        v.is_finite().then_some(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryResult {
    pub id: usize,
    pub params: Vec<f64>,
    pub ood: bool,
    /// Mean over predicted frames and channels, physical units.
    #[serde(with = "finite_or_null")]
    pub mse: f64,
    pub persistence_mse: f64,
    pub diverged: bool,
    /// Error of each predicted frame, in rollout order.
    pub frame_mse: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub params: Vec<f64>,
    pub ood: bool,
    pub n: usize,
    pub n_diverged: usize,
    pub mean: Option<f64>,
    pub persistence_mean: Option<f64>,
}

/// Rollout errors of one model on a test set. Means skip diverged
/// trajectories; `None` marks an empty group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutReport {
    pub schema_version: u32,
    pub model_id: String,
    /// Ground-truth frames seeding each rollout; errors cover the rest.
    pub context: usize,
    /// Predicted frames per trajectory.
    pub horizon: usize,
    pub id_mean: Option<f64>,
    pub ood_mean: Option<f64>,
    pub id_persistence_mean: Option<f64>,
    pub ood_persistence_mean: Option<f64>,
    pub n_diverged: usize,
    pub per_param: Vec<ParamSummary>,
    pub trajectories: Vec<TrajectoryResult>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl RolloutReport {
    pub fn from_results(model_id: &str, context: usize, horizon: usize, trajectories: Vec<TrajectoryResult>) -> Self {
        let group_mean = |ood: bool, pick: fn(&TrajectoryResult) -> f64| {
            mean(trajectories.iter().filter(|r| r.ood == ood && !r.diverged).map(pick))
        };
        let mut per_param: Vec<ParamSummary> = Vec::new();
        for r in &trajectories {
            if per_param.iter().any(|p| same_params(&p.params, &r.params)) {
                continue;
            }
            let group: Vec<&TrajectoryResult> = trajectories
                .iter()
                .filter(|q| same_params(&q.params, &r.params))
                .collect();
            let ok = || group.iter().filter(|q| !q.diverged);
            per_param.push(ParamSummary {
                params: r.params.clone(),
                ood: r.ood,
                n: group.len(),
                n_diverged: group.len() - ok().count(),
                mean: mean(ok().map(|q| q.mse)),
                persistence_mean: mean(ok().map(|q| q.persistence_mse)),
            });
        }
        RolloutReport {
            schema_version: REPORT_SCHEMA_VERSION,
            model_id: model_id.to_string(),
            context,
            horizon,
            id_mean: group_mean(false, |r| r.mse),
            ood_mean: group_mean(true, |r| r.mse),
            id_persistence_mean: group_mean(false, |r| r.persistence_mse),
            ood_persistence_mean: group_mean(true, |r| r.persistence_mse),
            n_diverged: trajectories.iter().filter(|r| r.diverged).count(),
            per_param,
            trajectories,
        }
    }

    pub fn summary(&self, params: &[f64]) -> Option<&ParamSummary> {
        self.per_param.iter().find(|p| same_params(&p.params, params))
    }

    /// `trajectory_id,param_vector,mse,diverged`; parameter vectors are
    /// `;`-joined.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("trajectory_id,param_vector,mse,diverged\n");
        for r in &self.trajectories {
            let p: Vec<String> = r.params.iter().map(f64::to_string).collect();
            writeln!(s, "{},{},{},{}", r.id, p.join(";"), r.mse, r.diverged).unwrap();
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        for (ext, body) in [("csv", self.to_csv()), ("json", self.to_json())] {
            let p = dir.join(format!("{stem}.{ext}"));
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}
