use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::same_params;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Val,
    TestId,
    TestOod,
}

/// Which parameter values are trained on and which are held out entirely.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub id_params: Vec<Vec<f64>>,
    pub ood_params: Vec<Vec<f64>>,
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// Test trajectories held out per in-domain parameter.
    pub test_per_param: usize,
}

impl SplitPlan {
    pub fn new(id_params: Vec<Vec<f64>>, ood_params: Vec<Vec<f64>>, test_per_param: usize) -> Self {
        SplitPlan {
            id_params,
            ood_params,
            train_fraction: 0.8,
            val_fraction: 0.2,
            test_per_param,
        }
    }

    fn validate(&self) -> Result<()> {
        let (tr, va) = (self.train_fraction, self.val_fraction);
        if !(tr > 0.0 && tr < 1.0 && va > 0.0 && va < 1.0 && (tr + va - 1.0).abs() < 1e-12) {
            return Err(Error::Config(format!(
                "train/val fractions must lie in (0, 1) and sum to 1, got {tr}/{va}"
            )));
        }
        for p in &self.id_params {
            if self.ood_params.iter().any(|q| same_params(p, q)) {
                return Err(Error::Config(format!(
                    "parameter {p:?} is both in-domain and out-of-domain"
                )));
            }
        }
        if self.id_params.is_empty() {
            return Err(Error::Config("split plan has no in-domain parameters".into()));
        }
        Ok(())
    }
}

/// Split of every trajectory in manifest order (`None` when its parameter
/// is not part of the plan).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub splits: Vec<Option<Split>>,
}

impl SplitAssignment {
    pub fn indices(&self, which: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter_map(|(i, s)| (*s == Some(which)).then_some(i))
            .collect()
    }

    pub fn count(&self, which: Split) -> usize {
        self.splits.iter().filter(|s| **s == Some(which)).count()
    }
}

fn param_key(p: &[f64]) -> Vec<u64> {
    p.iter().map(|v| v.to_bits()).collect()
}

/// Deterministic seeded split of trajectories described by `(params, seed)`
/// pairs.
///
/// Per in-domain parameter the trajectories are ordered by seed, shuffled
/// with a stream keyed by `(seed, parameter)`, the first `test_per_param`
/// become id-test, and the remainder is cut `floor(train_fraction * m)`
/// train / rest val. Out-of-domain parameters are test-only. The result
/// does not depend on manifest order.
pub fn make_splits(records: &[(Vec<f64>, u64)], plan: &SplitPlan, seed: u64) -> Result<SplitAssignment> {
    plan.validate()?;
    let mut groups: BTreeMap<Vec<u64>, Vec<(u64, usize)>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for (i, (p, s)) in records.iter().enumerate() {
        let key = param_key(p);
        if !seen.insert((key.clone(), *s)) {
            return Err(Error::Data(format!("duplicate trajectory: params {p:?}, seed {s}")));
        }
        groups.entry(key).or_default().push((*s, i));
    }
    let mut splits = vec![None; records.len()];
    let group = |p: &[f64]| -> Result<Vec<(u64, usize)>> {
        let mut g = groups
            .get(&param_key(p))
            .cloned()
            .ok_or_else(|| Error::Data(format!("split plan references absent parameter {p:?}")))?;
        g.sort_unstable();
        Ok(g)
    };
    for p in &plan.id_params {
        let mut g = group(p)?;
        if g.len() < plan.test_per_param {
            return Err(Error::Data(format!(
                "parameter {p:?} has {} trajectories, fewer than the {} requested for testing",
                g.len(),
                plan.test_per_param
            )));
        }
        let key = param_key(p).iter().fold(0u64, |h, &b| rng::mix(h, b));
        let mut r = rng::stream(rng::mix(seed, key), "split");
        g.shuffle(&mut r);
        let (test, rest) = g.split_at(plan.test_per_param);
        let n_train = (plan.train_fraction * rest.len() as f64 + 1e-9).floor() as usize;
        for &(_, i) in test {
            splits[i] = Some(Split::TestId);
        }
        for (j, &(_, i)) in rest.iter().enumerate() {
            splits[i] = Some(if j < n_train { Split::Train } else { Split::Val });
        }
    }
    for p in &plan.ood_params {
        for (_, i) in group(p)? {
            splits[i] = Some(Split::TestOod);
        }
    }
    Ok(SplitAssignment { splits })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(params: &[f64], n: u64) -> Vec<(Vec<f64>, u64)> {
        params
            .iter()
            .flat_map(|&p| (0..n).map(move |s| (vec![p], 100 + s)))
            .collect()
    }

    #[test]
    fn counts_per_parameter() {
        let mut recs = records(&[0.1, 0.4], 10);
        recs.extend(records(&[0.2], 5));
        let plan = SplitPlan::new(vec![vec![0.1], vec![0.4]], vec![vec![0.2]], 2);
        let a = make_splits(&recs, &plan, 3).unwrap();
        assert_eq!(a.count(Split::Train), 12);
        assert_eq!(a.count(Split::Val), 4);
        assert_eq!(a.count(Split::TestId), 4);
        assert_eq!(a.count(Split::TestOod), 5);
        assert_eq!(a, make_splits(&recs, &plan, 3).unwrap());
        assert_ne!(a, make_splits(&recs, &plan, 4).unwrap());
    }

    #[test]
    fn invariant_to_manifest_order() {
        let recs = records(&[0.1, 0.4], 10);
        let plan = SplitPlan::new(vec![vec![0.1], vec![0.4]], vec![], 2);
        let a = make_splits(&recs, &plan, 9).unwrap();
        let mut rev = recs.clone();
        rev.reverse();
        let b = make_splits(&rev, &plan, 9).unwrap();
        for (i, s) in a.splits.iter().enumerate() {
            assert_eq!(*s, b.splits[recs.len() - 1 - i]);
        }
    }

    #[test]
    fn rejects_bad_plans() {
        let recs = records(&[0.1], 3);
        let absent = SplitPlan::new(vec![vec![0.7]], vec![], 1);
        assert!(make_splits(&recs, &absent, 0).is_err());
        let greedy = SplitPlan::new(vec![vec![0.1]], vec![], 4);
        assert!(make_splits(&recs, &greedy, 0).is_err());
        let overlap = SplitPlan::new(vec![vec![0.1]], vec![vec![0.1]], 1);
        assert!(make_splits(&recs, &overlap, 0).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn ood_is_test_only_and_order_is_irrelevant(
            n_id in 1usize..4, n_ood in 0usize..3, per in 3u64..9, test in 0usize..2, seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            let id: Vec<f64> = (0..n_id).map(|i| 0.1 + i as f64).collect();
            let ood: Vec<f64> = (0..n_ood).map(|i| 0.05 + i as f64).collect();
            let mut recs = records(&id, per);
            recs.extend(records(&ood, per));
            let vecs = |v: &[f64]| v.iter().map(|&a| vec![a]).collect();
            let plan = SplitPlan::new(vecs(&id), vecs(&ood), test);
            let a = make_splits(&recs, &plan, seed).unwrap();
            proptest::prop_assert_eq!(a.count(Split::TestOod), n_ood * per as usize);
            proptest::prop_assert_eq!(a.count(Split::TestId), n_id * test);
            for (r, s) in recs.iter().zip(&a.splits) {
                let is_ood = ood.contains(&r.0[0]);
                proptest::prop_assert_eq!(is_ood, *s == Some(Split::TestOod));
            }
            let mut perm: Vec<usize> = (0..recs.len()).collect();
            perm.shuffle(&mut crate::rng::stream(seed, "perm"));
            let shuffled: Vec<_> = perm.iter().map(|&i| recs[i].clone()).collect();
            let b = make_splits(&shuffled, &plan, seed).unwrap();
            for (j, &i) in perm.iter().enumerate() {
                proptest::prop_assert_eq!(b.splits[j], a.splits[i]);
            }
        }
    }
}
