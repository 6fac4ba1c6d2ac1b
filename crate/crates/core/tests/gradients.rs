#[path = "support/gradsuite.rs"]
mod gradsuite;

use bpgnn::bp::Split;
use bpgnn::diffnn::{init_params, mmlp_forward, InitScheme, MmlpSpec};
use bpgnn::gnn::{rollout, Architecture, DynamicalParams, StructuralParams};
use bpgnn::rng;
use bpgnn::train::{batch_gradient, train_multi, TrainConfig};
use gradsuite::*;
use proptest::prelude::*;
use rand::Rng as _;

#[test]
fn finite_difference_suite() {
    for (name, err) in run_suite(10, 11) {
        assert!(err <= TOLERANCE, "{name}: relative error {err:e}");
    }
}

#[test]
fn meta_gradient_on_twenty_specs() {
    // Sum of outputs w.r.t. ζ, via the mmlp check with varied specs.
    assert!(check_mmlp(20, 99) <= TOLERANCE);
}

#[test]
fn one_step_leaves_other_graphs_structure_untouched() {
    let arch = Architecture::default();
    let mut a = toy_dataset(3, 6, 5);
    let mut b = toy_dataset(4, 6, 6);
    b.pgm_id = 1;
    for ds in [&mut a, &mut b] {
        ds.splits = vec![Split::Train, Split::Val];
    }
    let cfg = TrainConfig { max_steps: 1, eval_every: 1, patience: 0, burn_in: 1, lambda_reg: 0.1, ..TrainConfig::default() };
    let datasets = [a, b];
    let ens = train_multi(&datasets, &arch, &cfg, |_| {}).unwrap();
    let init: Vec<StructuralParams> = (0..2)
        .map(|g| StructuralParams::init(&arch, datasets[g].n(), rng::indexed(cfg.seed, "structure", g as u64)))
        .collect();
    let trained = ens.curve[0].graph_id;
    if ens.best_step == 1 {
        assert_ne!(ens.structural[trained], init[trained]);
    }
    assert_eq!(ens.structural[1 - trained], init[1 - trained]);
}

#[test]
fn burn_in_points_carry_no_gradient() {
    let arch = Architecture::default();
    let mut ds = toy_dataset(3, 4, 6);
    let d = DynamicalParams::init(&arch, InitScheme::default(), 1);
    let st = StructuralParams::init(&arch, 3, 2);
    let a = batch_gradient(&arch, &d, &st, &ds, &[0, 1], 2, 0.0).unwrap();
    for r in 0..2 {
        for i in 0..3 {
            for t in 0..2 {
                ds.targets[(r, i, t)] += 100.0;
            }
        }
    }
    assert_eq!(ds.splits, vec![Split::Train; 2]);
    let b = batch_gradient(&arch, &d, &st, &ds, &[0, 1], 2, 0.0).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mmlp_is_linear_on_the_positive_orthant(seed in any::<u64>(), a in 0.1f64..3.0, b in 0.1f64..3.0) {
        let spec = MmlpSpec::new(3, 0, &[4, 3], 2);
        let mut p = init_params(&spec, InitScheme::default(), seed);
        for l in &mut p.layers {
            l.weight.mapv_inplace(f64::abs);
        }
        let mut r = rng::rng(seed);
        let x: Vec<f64> = (0..3).map(|_| r.random_range(0.0..1.0)).collect();
        let y: Vec<f64> = (0..3).map(|_| r.random_range(0.0..1.0)).collect();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let fx = mmlp_forward(&x, &[], &p, &spec).unwrap();
        let fy = mmlp_forward(&y, &[], &p, &spec).unwrap();
        let fm = mmlp_forward(&mix, &[], &p, &spec).unwrap();
        for k in 0..2 {
            prop_assert!((fm[k] - (a * fx[k] + b * fy[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn states_stay_in_open_unit_cube(seed in any::<u64>()) {
        let arch = Architecture { d_s: 3, d_m: 2, ..Architecture::default() };
        let d = DynamicalParams::init(&arch, InitScheme::FanInUniform { gain: 3.0 }, seed);
        let st = StructuralParams::init(&arch, 4, seed ^ 1);
        let mut r = rng::rng(seed);
        let x = ndarray::Array3::from_shape_simple_fn((4, 12, 1), || r.random_range(-6.0..6.0));
        let res = rollout(&arch, &d, &st, x.view()).unwrap();
        prop_assert!(res.states.iter().all(|s| s.abs() < 1.0));
    }

    #[test]
    fn relabeling_vertices_permutes_outputs(seed in any::<u64>()) {
        let n = 4;
        let arch = Architecture { d_s: 3, d_m: 2, ..Architecture::default() };
        let d = DynamicalParams::init(&arch, InitScheme::default(), seed);
        let st = StructuralParams::init(&arch, n, seed ^ 2);
        let mut r = rng::rng(seed);
        let x = ndarray::Array3::from_shape_simple_fn((n, 6, 1), || r.random_range(-2.0..2.0));
        let perm = [2usize, 0, 3, 1]; // new index k holds old vertex perm[k]
        let mut st_p = st.clone();
        let mut x_p = x.clone();
        for k in 0..n {
            st_p.vertex.row_mut(k).assign(&st.vertex.row(perm[k]));
            x_p.index_axis_mut(ndarray::Axis(0), k).assign(&x.index_axis(ndarray::Axis(0), perm[k]));
            for l in 0..n {
                if k != l {
                    let src = bpgnn::gnn::pair_index(n, perm[k], perm[l]);
                    st_p.edge.row_mut(bpgnn::gnn::pair_index(n, k, l)).assign(&st.edge.row(src));
                }
            }
        }
        let a = rollout(&arch, &d, &st, x.view()).unwrap();
        let b = rollout(&arch, &d, &st_p, x_p.view()).unwrap();
        for k in 0..n {
            for t in 0..6 {
                prop_assert!((b.outputs[(k, t, 0)] - a.outputs[(perm[k], t, 0)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_edges_carry_identical_messages(seed in any::<u64>()) {
        let arch = Architecture { d_s: 3, d_m: 2, ..Architecture::default() };
        let d = DynamicalParams::init(&arch, InitScheme::default(), seed);
        let mut st = StructuralParams::init(&arch, 3, seed ^ 3);
        // vertices 1 and 2 identical in every respect; then edges (0,1) and (0,2) match.
        let v1 = st.vertex.row(1).to_owned();
        st.vertex.row_mut(2).assign(&v1);
        let e01 = st.edge.row(0).to_owned();
        st.edge.row_mut(1).assign(&e01);
        let (e10, e12) = (st.edge.row(2).to_owned(), st.edge.row(3).to_owned());
        st.edge.row_mut(4).assign(&e10);
        st.edge.row_mut(5).assign(&e12);
        let mut r = rng::rng(seed);
        let mut x = ndarray::Array3::from_shape_simple_fn((3, 5, 1), || r.random_range(-2.0..2.0));
        let x1 = x.index_axis(ndarray::Axis(0), 1).to_owned();
        x.index_axis_mut(ndarray::Axis(0), 2).assign(&x1);
        let res = rollout(&arch, &d, &st, x.view()).unwrap();
        for t in 0..5 {
            for c in 0..2 {
                prop_assert_eq!(res.messages[(0, t, c)], res.messages[(1, t, c)]);
            }
        }
    }
}
