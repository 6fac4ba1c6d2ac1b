//! Independent oracles for belief propagation: joint enumeration, dense
//! inverses and direct linear solves.
#![allow(dead_code)]

use std::collections::BTreeMap;

use bpgnn::bp::*;
use bpgnn::pgm::*;
use bpgnn::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

pub fn noiseless(gamma: f64) -> BpConfig {
    BpConfig {
        gamma,
        noise_sigma: 0.0,
        init: MessageInit::Vacuous,
    }
}

/// Random tree: vertex `k > 0` attaches to a uniformly chosen earlier vertex.
pub fn random_tree(n: usize, rng: &mut rng::Rng) -> Vec<(usize, usize)> {
    (1..n).map(|k| (rng.random_range(0..k), k)).collect()
}

pub fn tree_diameter(n: usize, edges: &[(usize, usize)]) -> usize {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let bfs = |start: usize| {
        let mut dist = vec![usize::MAX; n];
        dist[start] = 0;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    };
    (0..n).map(|s| *bfs(s).iter().max().unwrap()).max().unwrap()
}

/// Marginals by summing the joint over every configuration.
pub fn enumerate_marginals(pgm: &DiscretePgm) -> Vec<Vec<f64>> {
    let n = pgm.n();
    let mut marg: Vec<Vec<f64>> = (0..n).map(|i| vec![0.0; pgm.states(i)]).collect();
    let mut state = vec![0usize; n];
    let edges: Vec<(usize, usize)> = pgm.edges().collect();
    let mut z = 0.0;
    loop {
        let mut w = 1.0;
        for i in 0..n {
            w *= pgm.singleton(i)[state[i]];
        }
        for &(i, j) in &edges {
            w *= pgm.psi(i, j, state[i], state[j]);
        }
        z += w;
        for i in 0..n {
            marg[i][state[i]] += w;
        }
        let mut k = 0;
        loop {
            if k == n {
                for m in &mut marg {
                    m.iter_mut().for_each(|v| *v /= z);
                }
                return marg;
            }
            state[k] += 1;
            if state[k] < pgm.states(k) {
                break;
            }
            state[k] = 0;
            k += 1;
        }
    }
}

pub fn random_discrete_tree(n: usize, max_states: usize, rng: &mut rng::Rng) -> (DiscretePgm, usize) {
    let states: Vec<usize> = (0..n).map(|_| rng.random_range(2..=max_states)).collect();
    let singleton = states
        .iter()
        .map(|&k| (0..k).map(|_| rng.random_range(0.2..2.0)).collect())
        .collect();
    let edges = random_tree(n, rng);
    let mut pairwise = BTreeMap::new();
    for &(a, b) in &edges {
        let table = DMatrix::from_fn(states[a], states[b], |_, _| rng.random_range(0.2..3.0));
        pairwise.insert((a, b), table);
    }
    (DiscretePgm::new(singleton, pairwise).unwrap(), tree_diameter(n, &edges))
}

/// Gaussian model on a random tree with diagonally dominant precision.
pub fn random_gaussian_tree(n: usize, rng: &mut rng::Rng) -> (GaussianPgm, usize) {
    let edges = random_tree(n, rng);
    let mut a = DMatrix::zeros(n, n);
    for &(p, q) in &edges {
        let c = rng.random_range(-0.4..0.4);
        a[(p, q)] = c;
        a[(q, p)] = c;
    }
    for i in 0..n {
        let row: f64 = (0..n).filter(|&j| j != i).map(|j| f64::abs(a[(i, j)])).sum();
        a[(i, i)] = row + rng.random_range(0.3..1.0);
    }
    (GaussianPgm::new(a, 0.01).unwrap(), tree_diameter(n, &edges))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Exactness {
    pub converged: usize,
    pub not_converged: usize,
    pub max_error: f64,
}

/// Noiseless damped BP on `count` random loopy models; converged runs are
/// compared with the direct solve.
pub fn loopy_mean_exactness(count: u64, gamma: f64, seed: u64) -> Exactness {
    let mut report = Exactness::default();
    let mut r = rng::rng(seed);
    for case in 0..count {
        let n = r.random_range(4..=12);
        let pgm = random_precision_matrix(&PrecisionSpec::new(n, 0.6, 0.2), rng::indexed(seed, "pgm", case)).unwrap();
        let b = DVector::from_fn(n, |_, _| r.random_range(-2.0..2.0));
        let cfg = noiseless(gamma);
        let mut msgs = GaussianMessages::new(&pgm, MessageInit::Vacuous);
        let mut done = false;
        for t in 0..20_000 {
            let Ok(out) = gaussian_bp_step(&pgm, &msgs, &b, &cfg, t, None) else { break };
            let change = out.messages.max_change(&msgs);
            msgs = out.messages;
            if !change.is_finite() {
                break;
            }
            if change < 1e-9 {
                let mu = exact_marginal_means(&pgm, &b).unwrap();
                let err = (0..n).map(|i| (out.means[i] - mu[i]).abs()).fold(0.0, f64::max);
                report.max_error = report.max_error.max(err);
                done = true;
                break;
            }
        }
        if done {
            report.converged += 1;
        } else {
            report.not_converged += 1;
        }
    }
    report
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TreeErrors {
    pub discrete: f64,
    pub mean: f64,
    pub sigma: f64,
}

/// Largest deviations from the oracles over `cases` discrete trees (up to 8
/// vertices, up to 3 states) and `cases` Gaussian trees.
pub fn tree_oracle_errors(cases: usize, seed: u64) -> TreeErrors {
    let mut errors = TreeErrors::default();
    let mut r = rng::rng(seed);
    for _ in 0..cases {
        let n = r.random_range(2..=8);
        let (pgm, diameter) = random_discrete_tree(n, 3, &mut r);
        let mut msgs = DiscreteMessages::uniform(&pgm);
        let mut marg = Vec::new();
        for _ in 0..diameter + 1 {
            let (next, m) = discrete_bp_step(&pgm, &msgs, &noiseless(0.0), None).unwrap();
            msgs = next;
            marg = m;
        }
        let exact = enumerate_marginals(&pgm);
        for i in 0..n {
            for x in 0..pgm.states(i) {
                errors.discrete = errors.discrete.max((marg[i][x] - exact[i][x]).abs());
            }
        }
    }
    for _ in 0..cases {
        let n = r.random_range(2..=10);
        let (pgm, diameter) = random_gaussian_tree(n, &mut r);
        let b = DVector::from_fn(n, |_, _| r.random_range(-2.0..2.0));
        let mut msgs = GaussianMessages::new(&pgm, MessageInit::Vacuous);
        let mut last = None;
        for t in 0..=diameter {
            let out = gaussian_bp_step(&pgm, &msgs, &b, &noiseless(0.0), t, None).unwrap();
            msgs = out.messages.clone();
            last = Some(out);
        }
        let out = last.unwrap();
        let mu = exact_marginal_means(&pgm, &b).unwrap();
        let var = exact_marginal_variances(&pgm).unwrap();
        for i in 0..n {
            errors.mean = errors.mean.max((out.means[i] - mu[i]).abs());
            errors.sigma = errors.sigma.max((out.sigmas[i] - var.exact[i].sqrt()).abs());
        }
    }
    errors
}
