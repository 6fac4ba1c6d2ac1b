//! Random search over GNN hyper-parameters.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bp::TraceDataset;
use crate::gnn::{Architecture, Connectivity};
use crate::rng;
use crate::train::{baseline_mse, train_multi, TrainConfig};

#[derive(Debug, Error, PartialEq)]
pub enum SearchError {
    #[error("search space axis {0} is empty")]
    EmptyAxis(&'static str),
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error("no record has {axis} = {value}")]
    NoMatch { axis: Axis, value: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub connectivity: Vec<Connectivity>,
    pub d_v: Vec<usize>,
    pub d_e: Vec<usize>,
    pub d_s: Vec<usize>,
    pub d_m: Vec<usize>,
    pub message_hidden: Vec<Vec<usize>>,
    pub budget: usize,
    /// Concurrent trials.
    pub workers: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            connectivity: vec![Connectivity::Null, Connectivity::Full],
            d_v: vec![0, 1, 2, 4],
            d_e: vec![0, 2, 4, 8],
            d_s: vec![4, 8, 16],
            d_m: vec![4, 8, 12],
            message_hidden: vec![vec![], vec![16], vec![32]],
            budget: 12,
            workers: 1,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), SearchError> {
        let axes = [
            ("connectivity", self.connectivity.len()),
            ("d_v", self.d_v.len()),
            ("d_e", self.d_e.len()),
            ("d_s", self.d_s.len()),
            ("d_m", self.d_m.len()),
            ("message_hidden", self.message_hidden.len()),
        ];
        if let Some((name, _)) = axes.iter().find(|(_, len)| *len == 0) {
            return Err(SearchError::EmptyAxis(name));
        }
        if self.budget == 0 {
            return Err(SearchError::ZeroBudget);
        }
        Ok(())
    }
}

/// Independent uniform draws per axis, starting from `base` for fields the
/// space does not cover. Null connectivity records `d_e = 0`.
pub fn sample_architectures(space: &SearchSpace, base: &Architecture, count: usize, seed: u64) -> Vec<Architecture> {
    let mut r = rng::rng(rng::substream(seed, "search"));
    (0..count)
        .map(|_| {
            let connectivity = *space.connectivity.choose(&mut r).expect("nonempty");
            let d_v = *space.d_v.choose(&mut r).expect("nonempty");
            let d_e = *space.d_e.choose(&mut r).expect("nonempty");
            let d_s = *space.d_s.choose(&mut r).expect("nonempty");
            let d_m = *space.d_m.choose(&mut r).expect("nonempty");
            let message_hidden = space.message_hidden.choose(&mut r).expect("nonempty").clone();
            Architecture {
                connectivity,
                d_v,
                d_e: if connectivity == Connectivity::Null { 0 } else { d_e },
                d_s,
                d_m,
                message_hidden,
                ..base.clone()
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Connectivity,
    DV,
    DE,
    DS,
    DM,
    MessageHidden,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::Connectivity => "connectivity",
            Axis::DV => "D_v",
            Axis::DE => "D_e",
            Axis::DS => "D_s",
            Axis::DM => "D_m",
            Axis::MessageHidden => "msg_hidden",
        })
    }
}

/// `"linear"` for no hidden layers, else sizes joined by `x`.
pub fn hidden_label(hidden: &[usize]) -> String {
    if hidden.is_empty() {
        "linear".into()
    } else {
        hidden.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
    }
}

impl Axis {
    pub const ALL: [Axis; 6] = [Axis::Connectivity, Axis::DV, Axis::DE, Axis::DS, Axis::DM, Axis::MessageHidden];

    pub fn value(self, arch: &Architecture) -> String {
        match self {
            Axis::Connectivity => arch.connectivity.to_string(),
            Axis::DV => arch.d_v.to_string(),
            Axis::DE => arch.d_e.to_string(),
            Axis::DS => arch.d_s.to_string(),
            Axis::DM => arch.d_m.to_string(),
            Axis::MessageHidden => hidden_label(&arch.message_hidden),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub trial: usize,
    pub arch: Architecture,
    pub seed: u64,
    /// NaN when training failed.
    pub test_mse: f64,
    pub test_r2: f64,
    pub seconds: f64,
    pub error: Option<String>,
}

impl SearchRecord {
    pub fn log10_mse(&self) -> f64 {
        self.test_mse.log10()
    }
}

/// Minimum-test-MSE record with `axis == value`; the earliest trial wins ties.
pub fn conditional_best<'a>(records: &'a [SearchRecord], axis: Axis, value: &str) -> Result<&'a SearchRecord, SearchError> {
    records
        .iter()
        .filter(|r| r.test_mse.is_finite() && axis.value(&r.arch) == value)
        .fold(None, |best: Option<&SearchRecord>, r| match best {
            Some(b) if b.test_mse < r.test_mse || (b.test_mse == r.test_mse && b.trial < r.trial) => Some(b),
            _ => Some(r),
        })
        .ok_or(SearchError::NoMatch {
            axis,
            value: value.to_string(),
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalRow {
    pub axis: Axis,
    pub value: String,
    pub trial: usize,
    pub test_mse: f64,
    pub log10_mse: f64,
}

/// Conditional best for every axis value present among the records, in order
/// of first appearance.
pub fn conditional_table(records: &[SearchRecord]) -> Vec<ConditionalRow> {
    let mut rows = Vec::new();
    for axis in Axis::ALL {
        let mut seen: Vec<String> = Vec::new();
        for r in records {
            let v = axis.value(&r.arch);
            if seen.contains(&v) {
                continue;
            }
            if let Ok(best) = conditional_best(records, axis, &v) {
                rows.push(ConditionalRow {
                    axis,
                    value: v.clone(),
                    trial: best.trial,
                    test_mse: best.test_mse,
                    log10_mse: best.log10_mse(),
                });
            }
            seen.push(v);
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub records: Vec<SearchRecord>,
    pub conditional: Vec<ConditionalRow>,
    pub baseline_mse: f64,
}

/// Trains each sampled architecture on all datasets. Failed trials are
/// recorded with NaN metrics.
pub fn run_search(
    space: &SearchSpace,
    base: &Architecture,
    datasets: &[TraceDataset],
    config: &TrainConfig,
) -> Result<SearchOutcome, SearchError> {
    space.validate()?;
    let archs = sample_architectures(space, base, space.budget, config.seed);
    let next = AtomicUsize::new(0);
    let records = Mutex::new(Vec::with_capacity(archs.len()));
    let work = || loop {
        let trial = next.fetch_add(1, Ordering::SeqCst);
        let Some(arch) = archs.get(trial) else { break };
        let seed = rng::indexed(config.seed, "trial", trial as u64);
        let cfg = TrainConfig { seed, ..config.clone() };
        let start = Instant::now();
        let result = train_multi(datasets, arch, &cfg, |_| {});
        let seconds = start.elapsed().as_secs_f64();
        let record = match result {
            Ok(ens) => SearchRecord {
                trial,
                arch: arch.clone(),
                seed,
                test_mse: ens.metrics.pooled.test.mse,
                test_r2: ens.metrics.pooled.test.r2,
                seconds,
                error: None,
            },
            Err(e) => SearchRecord {
                trial,
                arch: arch.clone(),
                seed,
                test_mse: f64::NAN,
                test_r2: f64::NAN,
                seconds,
                error: Some(e.to_string()),
            },
        };
        records.lock().expect("no panics while holding the lock").push(record);
    };
    std::thread::scope(|s| {
        for _ in 1..space.workers.max(1) {
            s.spawn(work);
        }
        work();
    });
    let mut records = records.into_inner().expect("workers joined");
    records.sort_by_key(|r| r.trial);
    Ok(SearchOutcome {
        conditional: conditional_table(&records),
        baseline_mse: baseline_mse(datasets, config.burn_in),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(trial: usize, d_e: usize, mse: f64) -> SearchRecord {
        SearchRecord {
            trial,
            arch: Architecture {
                d_e,
                ..Architecture::default()
            },
            seed: 0,
            test_mse: mse,
            test_r2: 0.0,
            seconds: 0.0,
            error: None,
        }
    }

    #[test]
    fn singleton_space_gives_identical_samples() {
        let space = SearchSpace {
            connectivity: vec![Connectivity::Full],
            d_v: vec![3],
            d_e: vec![1],
            d_s: vec![5],
            d_m: vec![6],
            message_hidden: vec![vec![7]],
            budget: 1,
            workers: 1,
        };
        let s = sample_architectures(&space, &Architecture::default(), 5, 1);
        assert!(s.iter().all(|a| a == &s[0]));
        assert!(sample_architectures(&space, &Architecture::default(), 0, 1).is_empty());
    }

    #[test]
    fn null_connectivity_records_no_edge_dimension() {
        let space = SearchSpace::default();
        for a in sample_architectures(&space, &Architecture::default(), 200, 3) {
            if a.connectivity == Connectivity::Null {
                assert_eq!(a.d_e, 0);
            }
            a.validate().unwrap();
        }
    }

    #[test]
    fn conditional_best_examples() {
        let rs = vec![record(0, 2, 0.5), record(1, 2, 0.2), record(2, 4, 0.2), record(3, 4, 0.2)];
        assert_eq!(conditional_best(&rs, Axis::DE, "2").unwrap().trial, 1);
        assert_eq!(conditional_best(&rs, Axis::DE, "4").unwrap().trial, 2);
        assert!(conditional_best(&rs, Axis::DE, "8").is_err());
        let table = conditional_table(&rs);
        assert!(table.iter().any(|r| r.axis == Axis::DE && r.value == "4" && r.trial == 2));
    }

    #[test]
    fn failed_trials_are_skipped() {
        let rs = vec![record(0, 2, f64::NAN), record(1, 2, 0.7)];
        assert_eq!(conditional_best(&rs, Axis::DE, "2").unwrap().trial, 1);
    }

    #[test]
    fn empty_axis_rejected() {
        let space = SearchSpace {
            d_m: vec![],
            ..SearchSpace::default()
        };
        assert_eq!(space.validate(), Err(SearchError::EmptyAxis("d_m")));
        let space = SearchSpace {
            budget: 0,
            ..SearchSpace::default()
        };
        assert_eq!(space.validate(), Err(SearchError::ZeroBudget));
    }
}
