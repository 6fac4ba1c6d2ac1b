//! Finite-difference checks of tape gradients against the plain forward
//! implementations. Shared by the gradient tests and the acceptance target.

#![allow(dead_code)]

use bpgnn::bp::{Split, TraceDataset};
use bpgnn::diffnn::{
    elu, init_params, meta_terms, mmlp_forward, mmlp_forward_tape, InitScheme, MmlpSpec, Tape, Var,
};
use bpgnn::gnn::{message, readout, update, Architecture, DynamicalParams, StructuralParams};
use bpgnn::rng;
use bpgnn::train::{batch_gradient, loss, predict_trials, regularized_objective};
use ndarray::{Array2, Array3};
use rand::Rng as _;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Largest `|g − fd| / max(1, |g|)` over all coordinates.
pub fn fd_error(f: &dyn Fn(&[f64]) -> f64, x: &[f64], g: &[f64]) -> f64 {
    assert_eq!(x.len(), g.len());
    let mut worst = 0.0f64;
    let mut p = x.to_vec();
    for k in 0..x.len() {
        p[k] = x[k] + STEP;
        let up = f(&p);
        p[k] = x[k] - STEP;
        let down = f(&p);
        p[k] = x[k];
        let fd = (up - down) / (2.0 * STEP);
        worst = worst.max((g[k] - fd).abs() / g[k].abs().max(1.0));
    }
    worst
}

fn uniform(rng: &mut rng::Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-scale..scale)).collect()
}

fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
}

/// Weighted sum `Σ c_k out_k` on the tape.
fn weighted_sum(tape: &mut Tape, out: Var, c: &[f64]) -> Var {
    let c = tape.leaf(row(c));
    let prod = tape.mul(out, c);
    tape.sum(prod)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_arch(rng: &mut rng::Rng) -> Architecture {
    Architecture {
        d_v: rng.random_range(0..3),
        d_e: rng.random_range(0..3),
        d_s: rng.random_range(1..4),
        d_m: rng.random_range(1..4),
        message_hidden: if rng.random_bool(0.5) { vec![rng.random_range(2..5)] } else { vec![] },
        gate_hidden: vec![rng.random_range(2..4)],
        ..Architecture::default()
    }
}

pub fn check_elu(points: usize, seed: u64) -> f64 {
    let mut rng = rng::rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let x = rng.random_range(-3.0..3.0);
        let (_, g) = bpgnn::diffnn::grad(&[row(&[x])], |t, v| {
            let e = t.elu(v[0]);
            t.sum(e)
        })
        .unwrap();
        worst = worst.max(fd_error(&|p| elu(p[0]), &[x], &[g[0][(0, 0)]]));
    }
    worst
}

/// Gradient of a weighted output sum with respect to input, meta vector and parameters.
pub fn check_mmlp(points: usize, seed: u64) -> f64 {
    let mut rng = rng::rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let hidden: Vec<usize> = (0..rng.random_range(0..3)).map(|_| rng.random_range(1..6)).collect();
        let spec = MmlpSpec::new(rng.random_range(1..5), rng.random_range(0..4), &hidden, rng.random_range(1..4));
        let params = init_params(&spec, InitScheme::FanInUniform { gain: 2.0 }, rng.random());
        let x = uniform(&mut rng, spec.input_dim, 1.5);
        let z = uniform(&mut rng, spec.meta_dim, 1.5);
        let c = uniform(&mut rng, spec.output_dim, 1.0);

        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let xv = tape.leaf(row(&x));
        let zv = tape.leaf(row(&z));
        let meta = meta_terms(&mut tape, &vars, &spec, zv);
        let out = mmlp_forward_tape(&mut tape, &vars, &spec, xv, &meta);
        let f = weighted_sum(&mut tape, out, &c);
        let grads = tape.backward(f).unwrap();
        let mut g: Vec<f64> = grads.wrt(&tape, xv).iter().chain(grads.wrt(&tape, zv).iter()).copied().collect();
        vars.flatten_grad_into(&tape, &grads, &mut g);

        let mut point = x.clone();
        point.extend(&z);
        params.flatten_into(&mut point);
        let (nx, nz) = (spec.input_dim, spec.meta_dim);
        let plain = |p: &[f64]| {
            let mut q = params.clone();
            q.assign_flat(&p[nx + nz..]);
            dot(&mmlp_forward(&p[..nx], &p[nx..nx + nz], &q, &spec).unwrap(), &c)
        };
        worst = worst.max(fd_error(&plain, &point, &g));
    }
    worst
}

/// Message gradient with respect to both states, `e_ij` and `Θ_M`.
pub fn check_message(points: usize, seed: u64) -> f64 {
    let mut rng = rng::rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let arch = random_arch(&mut rng);
        let spec = arch.message_spec();
        let d = DynamicalParams::init(&arch, InitScheme::FanInUniform { gain: 2.0 }, rng.random());
        let si = uniform(&mut rng, arch.d_s, 1.0);
        let sj = uniform(&mut rng, arch.d_s, 1.0);
        let e = uniform(&mut rng, arch.d_e, 1.0);
        let c = uniform(&mut rng, arch.d_m, 1.0);

        let mut tape = Tape::new();
        let vars = d.message.register(&mut tape);
        let siv = tape.leaf(row(&si));
        let sjv = tape.leaf(row(&sj));
        let ev = tape.leaf(row(&e));
        let input = tape.hcat(&[siv, sjv]);
        let meta = meta_terms(&mut tape, &vars, &spec, ev);
        let out = mmlp_forward_tape(&mut tape, &vars, &spec, input, &meta);
        let f = weighted_sum(&mut tape, out, &c);
        let grads = tape.backward(f).unwrap();
        let mut g: Vec<f64> = [siv, sjv, ev].iter().flat_map(|&v| grads.wrt(&tape, v).into_iter()).collect();
        vars.flatten_grad_into(&tape, &grads, &mut g);

        let ds = arch.d_s;
        let mut point = [si, sj, e].concat();
        d.message.flatten_into(&mut point);
        let plain = |p: &[f64]| {
            let mut q = d.message.clone();
            q.assign_flat(&p[2 * ds + arch.d_e..]);
            let m = message(&p[..ds], &p[ds..2 * ds], &p[2 * ds..2 * ds + arch.d_e], &q, &arch).unwrap();
            dot(&m, &c)
        };
        worst = worst.max(fd_error(&plain, &point, &g));
    }
    worst
}

/// Update gradient with respect to `s`, `x`, `m`, `v_i` and all gate parameters.
pub fn check_update(points: usize, seed: u64) -> f64 {
    let mut rng = rng::rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let arch = random_arch(&mut rng);
        let spec = arch.gate_spec();
        let d = DynamicalParams::init(&arch, InitScheme::FanInUniform { gain: 2.0 }, rng.random());
        let s = uniform(&mut rng, arch.d_s, 1.0);
        let x = uniform(&mut rng, arch.d_x, 2.0);
        let m = uniform(&mut rng, arch.d_m, 2.0);
        let v = uniform(&mut rng, arch.d_v, 1.0);
        let c = uniform(&mut rng, arch.d_s, 1.0);

        let mut tape = Tape::new();
        let dv = d.register(&mut tape);
        let sv = tape.leaf(row(&s));
        let xv = tape.leaf(row(&x));
        let mv = tape.leaf(row(&m));
        let vv = tape.leaf(row(&v));
        let u = tape.hcat(&[xv, mv, sv]);
        let meta_z = meta_terms(&mut tape, &dv.gate_z, &spec, vv);
        let meta_s = meta_terms(&mut tape, &dv.gate_s, &spec, vv);
        let zpre = mmlp_forward_tape(&mut tape, &dv.gate_z, &spec, u, &meta_z);
        let z = tape.sigmoid(zpre);
        let cpre = mmlp_forward_tape(&mut tape, &dv.gate_s, &spec, u, &meta_s);
        let cand = tape.tanh(cpre);
        let diff = tape.sub(cand, sv);
        let step = tape.mul(z, diff);
        let next = tape.add(sv, step);
        let f = weighted_sum(&mut tape, next, &c);
        let grads = tape.backward(f).unwrap();
        let mut g: Vec<f64> = [sv, xv, mv, vv].iter().flat_map(|&k| grads.wrt(&tape, k).into_iter()).collect();
        g.extend(dv.flatten_grad(&tape, &grads));

        let lens = [arch.d_s, arch.d_x, arch.d_m, arch.d_v];
        let mut point = [s, x, m, v].concat();
        point.extend(d.flatten());
        let plain = |p: &[f64]| {
            let mut parts = Vec::new();
            let mut k = 0;
            for len in lens {
                parts.push(&p[k..k + len]);
                k += len;
            }
            let mut q = d.clone();
            q.assign_flat(&p[k..]);
            let out = update(parts[0], parts[1], parts[2], parts[3], &q, &arch).unwrap();
            dot(&out.state, &c)
        };
        worst = worst.max(fd_error(&plain, &point, &g));
    }
    worst
}

pub fn check_readout(points: usize, seed: u64) -> f64 {
    let mut rng = rng::rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let arch = Architecture {
            d_o: rng.random_range(1..3),
            ..random_arch(&mut rng)
        };
        let d = DynamicalParams::init(&arch, InitScheme::FanInUniform { gain: 2.0 }, rng.random());
        let s = uniform(&mut rng, arch.d_s, 1.0);
        let c = uniform(&mut rng, arch.d_o, 1.0);

        let mut tape = Tape::new();
        let dv = d.register(&mut tape);
        let sv = tape.leaf(row(&s));
        let out = tape.linear(sv, dv.readout_w, 0..arch.d_s, Some(dv.readout_b));
        let f = weighted_sum(&mut tape, out, &c);
        let grads = tape.backward(f).unwrap();
        let mut g: Vec<f64> = grads.wrt(&tape, sv).into_iter().collect();
        g.extend(grads.wrt(&tape, dv.readout_w).iter());
        g.extend(grads.wrt(&tape, dv.readout_b).iter());

        let ds = arch.d_s;
        let mut point = s.clone();
        point.extend(d.readout_w.iter());
        point.extend(d.readout_b.iter());
        let plain = |p: &[f64]| {
            let mut q = d.clone();
            let wl = q.readout_w.len();
            q.readout_w.iter_mut().zip(&p[ds..ds + wl]).for_each(|(w, v)| *w = *v);
            q.readout_b.iter_mut().zip(&p[ds + wl..]).for_each(|(w, v)| *w = *v);
            dot(&readout(&p[..ds], &q), &c)
        };
        worst = worst.max(fd_error(&plain, &point, &g));
    }
    worst
}

/// Two-trial dataset on `n` vertices with random inputs and targets.
pub fn toy_dataset(n: usize, duration: usize, seed: u64) -> TraceDataset {
    let mut rng = rng::rng(seed);
    let mut draw = |scale: f64| Array3::from_shape_simple_fn((2, n, duration), || rng.random_range(-scale..scale));
    let inputs = draw(2.0);
    let targets = draw(1.0);
    TraceDataset {
        pgm_id: 0,
        reference: targets.clone(),
        inputs,
        targets,
        splits: vec![Split::Train, Split::Train],
    }
}

/// End-to-end masked, regularized loss on a 3-vertex, 4-step rollout with
/// respect to every dynamical and structural parameter. The value is
/// recomputed through the plain prediction and loss functions.
pub fn check_end_to_end(points: usize, seed: u64) -> f64 {
    let mut rng = rng::rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let arch = Architecture {
            d_v: 2,
            d_e: 2,
            ..random_arch(&mut rng)
        };
        let ds = toy_dataset(3, 4, rng.random());
        let d = DynamicalParams::init(&arch, InitScheme::FanInUniform { gain: 2.0 }, rng.random());
        let st = StructuralParams::init(&arch, 3, rng.random());
        let (burn_in, lambda) = (1, 0.3);
        let trials = [0, 1];
        let bg = batch_gradient(&arch, &d, &st, &ds, &trials, burn_in, lambda).unwrap();
        let mut g = bg.dynamical.clone();
        g.extend(&bg.structural);

        let nd = d.param_count();
        let mut point = d.flatten();
        point.extend(st.flatten());
        let mask = bpgnn::train::burn_in_mask((2, 3, 4), burn_in);
        let plain = |p: &[f64]| {
            let mut q = d.clone();
            q.assign_flat(&p[..nd]);
            let mut r = st.clone();
            r.assign_flat(&p[nd..]);
            let pred = predict_trials(&arch, &q, &r, &ds, &trials).unwrap();
            let l = loss(pred.as_slice().unwrap(), ds.targets.as_slice().unwrap(), &mask);
            regularized_objective(l, &r, lambda)
        };
        assert!((plain(&point) - bg.objective).abs() < 1e-9 * bg.objective.max(1.0));
        worst = worst.max(fd_error(&plain, &point, &g));
    }
    worst
}

/// `(name, worst relative error)` for every check.
pub fn run_suite(points: usize, seed: u64) -> Vec<(&'static str, f64)> {
    vec![
        ("elu", check_elu(points, seed)),
        ("mmlp_forward", check_mmlp(points, seed + 1)),
        ("message", check_message(points, seed + 2)),
        ("update", check_update(points, seed + 3)),
        ("readout", check_readout(points, seed + 4)),
        ("end_to_end_loss", check_end_to_end(points, seed + 5)),
    ]
}
