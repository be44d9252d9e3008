//! Train/validation/test splits: axle-count stratified and DGPS (modal axle
//! count for training, all other train lengths held out).

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;

pub const N_FOLDS: usize = 5;
pub const DEFAULT_TEST_FRACTION: f64 = 1.0 / 6.0;
/// Smallest stratum that can feed every fold and the test set.
const MIN_STRATUM: usize = N_FOLDS + 1;

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("dataset has no passages")]
    EmptyDataset,
    #[error("every passage has {0} axles, nothing to hold out")]
    SingleClassDataset(usize),
    #[error("axle counts {0:?} tie for the most common count; pass an explicit modal count")]
    TieForModalCount(Vec<usize>),
    #[error("no passage has {0} axles")]
    UnknownModalCount(usize),
    #[error("test fraction {0} outside (0, 1)")]
    BadFraction(f64),
    #[error("fold {0} out of range")]
    BadFold(usize),
    #[error("split plan io: {0}")]
    Io(#[from] std::io::Error),
    #[error("split plan json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    Stratified,
    #[serde(rename = "DGPS")]
    Dgps,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub scenario: Scenario,
    pub seed: u64,
    pub test: Vec<String>,
    pub folds: Vec<Vec<String>>,
}

impl SplitPlan {
    /// Training and validation ids when fold `k` validates.
    pub fn train_val(&self, k: usize) -> Result<(Vec<String>, Vec<String>), SplitError> {
        if k >= self.folds.len() {
            return Err(SplitError::BadFold(k));
        }
        let train = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect();
        Ok((train, self.folds[k].clone()))
    }

    pub fn pool(&self) -> Vec<String> {
        self.folds.iter().flatten().cloned().collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), SplitError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SplitError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn strata(ds: &Dataset) -> BTreeMap<usize, Vec<String>> {
    let mut s: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for p in &ds.passages {
        s.entry(p.axle_count).or_default().push(p.passage_id.clone());
    }
    for ids in s.values_mut() {
        ids.sort();
    }
    s
}

/// Folds strata with fewer than six members into the nearest large stratum
/// (ties go to the smaller axle count).
fn merge_small(s: BTreeMap<usize, Vec<String>>) -> BTreeMap<usize, Vec<String>> {
    let large: Vec<usize> = s
        .iter()
        .filter(|(_, v)| v.len() >= MIN_STRATUM)
        .map(|(k, _)| *k)
        .collect();
    if large.is_empty() {
        let mut all: Vec<String> = s.into_values().flatten().collect();
        all.sort();
        return BTreeMap::from([(0, all)]);
    }
    let mut out: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (count, ids) in s {
        let target = *large.iter().min_by_key(|&&l| (l.abs_diff(count), l)).expect("nonempty");
        out.entry(target).or_default().extend(ids);
    }
    for ids in out.values_mut() {
        ids.sort();
    }
    out
}

/// Largest-remainder apportionment of `round(total * fraction)` test slots,
/// so every stratum gets the floor or ceiling of its exact share.
fn apportion(sizes: &[usize], fraction: f64) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let target = (total as f64 * fraction).round() as usize;
    let exact: Vec<f64> = sizes.iter().map(|&n| n as f64 * fraction).collect();
    let mut take: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(a.cmp(&b))
    });
    let mut left = target.saturating_sub(take.iter().sum());
    for i in order {
        if left == 0 {
            break;
        }
        if take[i] < sizes[i] {
            take[i] += 1;
            left -= 1;
        }
    }
    take
}

pub fn stratified_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<SplitPlan, SplitError> {
    if ds.is_empty() {
        return Err(SplitError::EmptyDataset);
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(SplitError::BadFraction(test_fraction));
    }
    let strata = merge_small(strata(ds));
    let sizes: Vec<usize> = strata.values().map(Vec::len).collect();
    let takes = apportion(&sizes, test_fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test = Vec::new();
    let mut folds = vec![Vec::new(); N_FOLDS];
    // The fold pointer carries over between strata so fold sizes stay even.
    let mut next = 0;
    for (mut ids, n_test) in strata.into_values().zip(takes) {
        ids.shuffle(&mut rng);
        let rest = ids.split_off(n_test);
        test.extend(ids);
        for id in rest {
            folds[next].push(id);
            next = (next + 1) % N_FOLDS;
        }
    }
    Ok(finish(Scenario::Stratified, seed, test, folds))
}

/// `modal_override` resolves ties for the most common axle count.
pub fn dgps_split(ds: &Dataset, seed: u64, modal_override: Option<usize>) -> Result<SplitPlan, SplitError> {
    if ds.is_empty() {
        return Err(SplitError::EmptyDataset);
    }
    let strata = strata(ds);
    if strata.len() == 1 {
        return Err(SplitError::SingleClassDataset(*strata.keys().next().expect("nonempty")));
    }
    let modal = match modal_override {
        Some(m) if strata.contains_key(&m) => m,
        Some(m) => return Err(SplitError::UnknownModalCount(m)),
        None => {
            let best = strata.values().map(Vec::len).max().expect("nonempty");
            let tied: Vec<usize> = strata
                .iter()
                .filter(|(_, v)| v.len() == best)
                .map(|(k, _)| *k)
                .collect();
            if tied.len() > 1 {
                return Err(SplitError::TieForModalCount(tied));
            }
            tied[0]
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test = Vec::new();
    let mut folds = vec![Vec::new(); N_FOLDS];
    for (count, mut ids) in strata {
        if count != modal {
            test.extend(ids);
            continue;
        }
        ids.shuffle(&mut rng);
        for (i, id) in ids.into_iter().enumerate() {
            folds[i % N_FOLDS].push(id);
        }
    }
    Ok(finish(Scenario::Dgps, seed, test, folds))
}

fn finish(scenario: Scenario, seed: u64, mut test: Vec<String>, mut folds: Vec<Vec<String>>) -> SplitPlan {
    test.sort();
    for f in &mut folds {
        f.sort();
    }
    SplitPlan {
        scenario,
        seed,
        test,
        folds,
    }
}
