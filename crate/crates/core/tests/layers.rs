mod common;

use common::reference::{unfold, Weights};
use common::{fd_check, random_graph, random_tensor, rng};
use hetmotion::autodiff::Tape;
use hetmotion::layers::{DsBlock, GcnBlock, GruCell, GruStack, Linear};
use hetmotion::params::ParamStore;
use hetmotion::{Dims, MotionGraph, Tensor3};

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Overwrite parameter `name` with `values` in storage order.
fn set(store: &mut ParamStore, name: &str, values: &[f64]) {
    let k = store.iter().position(|(n, _)| n == name).unwrap_or_else(|| panic!("{name}"));
    let slot = &mut store.values_mut()[k];
    assert_eq!(slot.len(), values.len(), "{name}");
    slot.data_mut().copy_from_slice(values);
}

/// Scalar GRU with fixed gate weights: input and hidden width 1 except `w` rows.
fn scalar_cell(store: &mut ParamStore, name: &str, w: [&[f64]; 3], u: [f64; 3], b: [f64; 3]) {
    for (k, g) in ["z", "r", "h"].into_iter().enumerate() {
        set(store, &format!("{name}.w_{g}"), w[k]);
        set(store, &format!("{name}.u_{g}"), &[u[k]]);
        set(store, &format!("{name}.b_{g}"), &[b[k]]);
    }
}

/// One step from a zero state: `σ(x·w_z + b_z) · tanh(x·w_h + b_h)`.
fn first_step(x: &[f64], wz: &[f64], bz: f64, wh: &[f64], bh: f64) -> f64 {
    let dot = |w: &[f64]| x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
    sigmoid(dot(wz) + bz) * (dot(wh) + bh).tanh()
}

fn run(store: &ParamStore, f: impl FnOnce(&mut Tape, &hetmotion::params::Bound) -> hetmotion::Var) -> Tensor3 {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let v = f(&mut tape, &bound);
    tape.value(v).clone()
}

#[test]
fn gru_single_step_closed_form() {
    let mut store = ParamStore::new();
    let cell = GruCell::new(&mut store, "g", 1, 1, &mut rng(0));
    scalar_cell(&mut store, "g", [&[0.5], &[-0.3], &[1.2]], [0.7, 0.2, -0.4], [0.1, 0.0, -0.2]);
    let x = Tensor3::from_vec(Dims::new(1, 1, 1), vec![0.8]).unwrap();
    let got = run(&store, |t, b| {
        let x = t.constant(x.clone());
        cell.forward(t, b, x, None).unwrap()
    });
    let want = sigmoid(0.5 * 0.8 + 0.1) * (1.2 * 0.8 - 0.2f64).tanh();
    assert!((got.item() - want).abs() < 1e-15);
}

#[test]
fn gru_two_steps_use_reset_gate() {
    let mut store = ParamStore::new();
    let cell = GruCell::new(&mut store, "g", 1, 1, &mut rng(0));
    scalar_cell(&mut store, "g", [&[0.5], &[-0.3], &[1.2]], [0.7, 0.2, -0.4], [0.1, 0.0, -0.2]);
    let xs = [0.8, -0.6];
    let x = Tensor3::from_vec(Dims::new(1, 2, 1), xs.to_vec()).unwrap();
    let got = run(&store, |t, b| {
        let x = t.constant(x.clone());
        cell.forward(t, b, x, None).unwrap()
    });
    let h1 = sigmoid(0.5 * xs[0] + 0.1) * (1.2 * xs[0] - 0.2f64).tanh();
    let z = sigmoid(0.5 * xs[1] + 0.7 * h1 + 0.1);
    let r = sigmoid(-0.3 * xs[1] + 0.2 * h1);
    let cand = (1.2 * xs[1] - 0.4 * r * h1 - 0.2).tanh();
    let h2 = (1.0 - z) * h1 + z * cand;
    assert!((got.get(0, 0, 0) - h1).abs() < 1e-15);
    assert!((got.get(0, 1, 0) - h2).abs() < 1e-15);
}

#[test]
fn deep_set_two_instances_closed_form() {
    let mut store = ParamStore::new();
    let ds = DsBlock::new(&mut store, "ds", 1, 1, 1, 1, &mut rng(0));
    scalar_cell(&mut store, "ds.inner.0", [&[0.9], &[0.4], &[-1.1]], [0.3, 0.3, 0.3], [0.05, 0.0, 0.3]);
    scalar_cell(&mut store, "ds.outer.0", [&[-0.7], &[0.2], &[1.5]], [0.1, 0.1, 0.1], [0.2, 0.0, -0.1]);
    let xs = [0.4, -1.3];
    let x = Tensor3::from_vec(Dims::new(2, 1, 1), xs.to_vec()).unwrap();
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let xv = tape.constant(x);
    let out = ds.forward(&mut tape, &bound, xv, 1).unwrap();
    let per: Vec<f64> = xs.iter().map(|&x| first_step(&[x], &[0.9], 0.05, &[-1.1], 0.3)).collect();
    let mean = (per[0] + per[1]) / 2.0;
    let agg = first_step(&[mean], &[-0.7], 0.2, &[1.5], -0.1);
    let pi = tape.value(out.per_instance);
    assert!((pi.get(0, 0, 0) - per[0]).abs() < 1e-15);
    assert!((pi.get(1, 0, 0) - per[1]).abs() < 1e-15);
    assert!((tape.value(out.aggregate).item() - agg).abs() < 1e-15);
}

#[test]
fn graph_convolution_on_path_closed_form() {
    let mut store = ParamStore::new();
    let gcn = GcnBlock::new(&mut store, "g", 1, 1, 1, &mut rng(0));
    scalar_cell(&mut store, "g.0.inner", [&[0.6], &[0.1], &[0.8]], [0.0; 3], [0.1, 0.0, -0.3]);
    let (wz, wh) = ([0.3, -0.5], [1.1, 0.7]);
    scalar_cell(&mut store, "g.0.outer", [&wz, &[0.0, 0.0], &wh], [0.0; 3], [-0.2, 0.0, 0.05]);
    let graph = MotionGraph::path(3);
    let xs = [0.5, -0.9, 1.4];
    let x = Tensor3::from_vec(Dims::new(3, 1, 1), xs.to_vec()).unwrap();
    let got = run(&store, |t, b| {
        let x = t.constant(x.clone());
        gcn.forward(t, b, x, graph.neighbors()).unwrap()
    });
    let m: Vec<f64> = xs.iter().map(|&x| first_step(&[x], &[0.6], 0.1, &[0.8], -0.3)).collect();
    let s = [m[1], m[0] + m[2], m[1]];
    for v in 0..3 {
        let want = first_step(&[xs[v], s[v]], &wz, -0.2, &wh, 0.05);
        assert!((got.get(v, 0, 0) - want).abs() < 1e-15, "vertex {v}");
    }
}

#[test]
fn isolated_vertex_receives_zero_message() {
    let mut store = ParamStore::new();
    let gcn = GcnBlock::new(&mut store, "g", 1, 3, 1, &mut rng(4));
    let x = random_tensor(Dims::new(2, 5, 1), &mut rng(1));
    let got = run(&store, |t, b| {
        let x = t.constant(x.clone());
        gcn.forward(t, b, x, MotionGraph::edgeless(1).neighbors()).unwrap()
    });
    let w = Weights::new(&store);
    for (row, seq) in unfold(&x).iter().enumerate() {
        let joined: Vec<Vec<f64>> = seq.iter().map(|f| vec![f[0], 0.0, 0.0, 0.0]).collect();
        let want = w.gru("g.0.outer", &joined);
        for (t, h) in want.iter().enumerate() {
            for (k, v) in h.iter().enumerate() {
                assert!((got.get(row, t, k) - v).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn stacks_match_reference_on_random_weights() {
    let mut r = rng(7);
    let mut store = ParamStore::new();
    let stack = GruStack::new(&mut store, "s", 2, 3, 3, &mut r);
    let x = random_tensor(Dims::new(2, 6, 2), &mut r);
    let got = run(&store, |t, b| {
        let x = t.constant(x.clone());
        stack.forward(t, b, x).unwrap()
    });
    let w = Weights::new(&store);
    for i in 0..2 {
        let seq: Vec<Vec<f64>> = (0..6).map(|t| vec![x.get(i, t, 0), x.get(i, t, 1)]).collect();
        for (t, h) in w.stack("s", 3, &seq).iter().enumerate() {
            for (k, v) in h.iter().enumerate() {
                assert!((got.get(i, t, k) - v).abs() < 1e-13);
            }
        }
    }
}

#[test]
fn gcn_block_matches_reference_on_random_graph() {
    let mut r = rng(12);
    let graph = random_graph(6, 3, &mut r);
    let mut store = ParamStore::new();
    let gcn = GcnBlock::new(&mut store, "g", 1, 3, 2, &mut r);
    let x = random_tensor(Dims::new(2, 4, 6), &mut r);
    let got = run(&store, |t, b| {
        let x = t.constant(x.clone());
        let rows = t.unfold_sensors(x);
        gcn.forward(t, b, rows, graph.neighbors()).unwrap()
    });
    let want = Weights::new(&store).gcn("g", 2, &unfold(&x), &graph);
    for (row, seq) in want.iter().enumerate() {
        for (t, h) in seq.iter().enumerate() {
            for (k, v) in h.iter().enumerate() {
                assert!((got.get(row, t, k) - v).abs() < 1e-13);
            }
        }
    }
}

#[test]
fn layer_gradients_match_finite_differences() {
    let mut r = rng(3);
    let graph = random_graph(4, 1, &mut r);
    let x = random_tensor(Dims::new(8, 3, 2), &mut r);

    let mut store = ParamStore::new();
    let ds = DsBlock::new(&mut store, "ds", 2, 2, 2, 1, &mut r);
    let rep = fd_check(&mut store, std::slice::from_ref(&x), 1, |t, b, xs| {
        let out = ds.forward(t, b, xs[0], 4)?;
        let shared = t.tile(out.aggregate, 2)?;
        t.add(out.per_instance, shared)
    });
    assert!(rep.passed(), "deep set {rep:?}");

    let mut store = ParamStore::new();
    let gcn = GcnBlock::new(&mut store, "g", 2, 2, 2, &mut r);
    let rep = fd_check(&mut store, std::slice::from_ref(&x), 2, |t, b, xs| gcn.forward(t, b, xs[0], graph.neighbors()));
    assert!(rep.passed(), "gcn {rep:?}");

    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "l", 2, 3, &mut r);
    let rep = fd_check(&mut store, &[x], 3, |t, b, xs| lin.forward(t, b, xs[0]));
    assert!(rep.passed(), "linear {rep:?}");
}
