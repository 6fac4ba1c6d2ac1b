use std::collections::BTreeMap;

use bpgnn::bp::{generate_traces, BpConfig, SplitFractions};
use bpgnn::gnn::{Architecture, Connectivity};
use bpgnn::pgm::{random_precision_matrix, BiasSchedule, PrecisionSpec};
use bpgnn::search::*;
use bpgnn::train::TrainConfig;
use proptest::prelude::*;

#[test]
fn axis_values_are_drawn_uniformly() {
    let space = SearchSpace {
        connectivity: vec![Connectivity::Full],
        d_v: vec![2],
        d_e: vec![1, 2, 4, 8],
        d_s: vec![8],
        d_m: vec![2, 4, 8, 12],
        message_hidden: vec![vec![16]],
        budget: 1000,
        workers: 1,
    };
    let draws = sample_architectures(&space, &Architecture::default(), 1000, 21);
    for axis in [Axis::DE, Axis::DM] {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for a in &draws {
            *counts.entry(axis.value(a)).or_default() += 1;
        }
        assert_eq!(counts.len(), 4);
        for (v, c) in counts {
            let f = c as f64 / 1000.0;
            assert!((f - 0.25).abs() <= 0.05, "{axis} = {v}: {f}");
        }
    }
    assert_eq!(draws, sample_architectures(&space, &Architecture::default(), 1000, 21));
}

#[test]
fn linear_message_option_is_sampled() {
    let draws = sample_architectures(&SearchSpace::default(), &Architecture::default(), 100, 2);
    assert!(draws.iter().any(|a| a.message_hidden.is_empty()));
}

#[test]
fn tiny_search_is_reproducible() {
    let sched = BiasSchedule { duration: 12, ..BiasSchedule::default() };
    let datasets: Vec<_> = (0..2)
        .map(|g| {
            let pgm = random_precision_matrix(&PrecisionSpec::new(4, 0.6, 0.2), g).unwrap();
            generate_traces(g as usize, &pgm, &sched, &BpConfig::default(), 10, &SplitFractions::default(), 50 + g).unwrap()
        })
        .collect();
    let space = SearchSpace { budget: 2, ..SearchSpace::default() };
    let cfg = TrainConfig { max_steps: 10, eval_every: 5, burn_in: 2, ..TrainConfig::default() };
    let a = run_search(&space, &Architecture::default(), &datasets, &cfg).unwrap();
    let b = run_search(&space, &Architecture::default(), &datasets, &cfg).unwrap();
    assert_eq!(a.records.len(), 2);
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!((x.trial, &x.arch, x.seed), (y.trial, &y.arch, y.seed));
        assert_eq!(x.test_mse.to_bits(), y.test_mse.to_bits());
    }
    assert_eq!(a.conditional, b.conditional);

    let one = run_search(&SearchSpace { budget: 1, ..space }, &Architecture::default(), &datasets, &cfg).unwrap();
    assert_eq!(one.records.len(), 1);
    assert!(one.conditional.iter().all(|r| r.trial == 0));
}

fn arb_record() -> impl Strategy<Value = (usize, usize, f64)> {
    (0usize..3, 0usize..3, prop_oneof![Just(0.5), 0.0f64..1.0])
}

proptest! {
    #[test]
    fn conditional_best_matches_exhaustive_scan(rows in proptest::collection::vec(arb_record(), 1..30)) {
        let records: Vec<SearchRecord> = rows
            .iter()
            .enumerate()
            .map(|(trial, &(de, dm, mse))| SearchRecord {
                trial,
                arch: Architecture { d_e: de, d_m: dm + 1, ..Architecture::default() },
                seed: 0,
                test_mse: mse,
                test_r2: 0.0,
                seconds: 0.0,
                error: None,
            })
            .collect();
        for axis in [Axis::DE, Axis::DM] {
            for value in 0..4 {
                let v = value.to_string();
                let mut best: Option<&SearchRecord> = None;
                for r in &records {
                    if axis.value(&r.arch) == v && best.is_none_or(|b| r.test_mse < b.test_mse) {
                        best = Some(r);
                    }
                }
                match (best, conditional_best(&records, axis, &v)) {
                    (Some(b), Ok(c)) => prop_assert_eq!(b.trial, c.trial),
                    (None, Err(_)) => {}
                    (b, c) => prop_assert!(false, "{:?} vs {:?}", b.map(|r| r.trial), c.map(|r| r.trial)),
                }
            }
        }
    }
}
