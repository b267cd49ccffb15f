#![allow(dead_code)]

pub mod reference;

use hetmotion::autodiff::Tape;
use hetmotion::params::{Bound, ParamStore};
use hetmotion::{Dims, Episode, MotionGraph, Result, Tensor3, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(dims: Dims, rng: &mut impl Rng) -> Tensor3 {
    Tensor3::from_fn(dims, |_, _, _| rng.random_range(-1.0..1.0))
}

/// Random spanning tree plus `extra` random chords.
pub fn random_graph(n: usize, extra: usize, rng: &mut impl Rng) -> MotionGraph {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    for k in 1..n {
        let parent = order[rng.random_range(0..k)];
        edges.push((order[k], parent));
    }
    for _ in 0..extra {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        let dup = edges.iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a));
        if a != b && !dup {
            edges.push((a, b));
        }
    }
    MotionGraph::from_edges(n, &edges).unwrap()
}

pub fn random_permutation(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

pub fn random_episode(
    graph: MotionGraph,
    (support, query, input_len, horizon): (usize, usize, usize, usize),
    rng: &mut impl Rng,
) -> Episode {
    let c = graph.len();
    let mut t = |i, t| random_tensor(Dims::new(i, t, c), rng);
    let (sx, sy) = (t(support, input_len), t(support, horizon));
    let (qx, qy) = (t(query, input_len), t(query, horizon));
    Episode::new("walking", graph, sx, sy, qx, qy).unwrap()
}

/// Outcome of a central finite-difference comparison.
#[derive(Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    /// Largest `|a - n| / (rtol · max(|a|, |n|) + atol)`; at most 1 passes.
    pub worst: f64,
}

impl FdReport {
    pub fn merge(&mut self, other: FdReport) {
        self.checked += other.checked;
        self.worst = self.worst.max(other.worst);
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.worst <= 1.0
    }
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_RTOL: f64 = 1e-4;
pub const FD_ATOL: f64 = 1e-9;

/// Compares reverse-mode gradients of `sum(f(...) ⊙ R)`, `R` random, with
/// central differences over every parameter and input coordinate.
pub fn fd_check<F>(store: &mut ParamStore, inputs: &[Tensor3], seed: u64, f: F) -> FdReport
where
    F: Fn(&mut Tape, &Bound, &[Var]) -> Result<Var>,
{
    let weights = {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let xs: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &bound, &xs).unwrap();
        random_tensor(tape.dims(out), &mut rng(seed))
    };
    let eval = |store: &ParamStore, inputs: &[Tensor3]| -> f64 {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let xs: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &bound, &xs).unwrap();
        let w = tape.constant(weights.clone());
        let prod = tape.mul(out, w).unwrap();
        let loss = tape.sum_all(prod);
        tape.value(loss).item()
    };

    let (param_grads, input_grads) = {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let xs: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
        let out = f(&mut tape, &bound, &xs).unwrap();
        let w = tape.constant(weights.clone());
        let prod = tape.mul(out, w).unwrap();
        let loss = tape.sum_all(prod);
        let mut grads = tape.backward(loss).unwrap();
        let inputs: Vec<Tensor3> = xs
            .iter()
            .zip(inputs)
            .map(|(&v, x)| grads.take_or_zeros(v, x.dims()))
            .collect();
        (bound.collect(&mut grads, store), inputs)
    };

    let mut report = FdReport::default();
    let mut compare = |a: f64, n: f64| {
        let err = (a - n).abs() / (FD_RTOL * a.abs().max(n.abs()) + FD_ATOL);
        report.checked += 1;
        report.worst = report.worst.max(err);
    };
    for p in 0..store.len() {
        for k in 0..param_grads[p].len() {
            let orig = store.values()[p].data()[k];
            store.values_mut()[p].data_mut()[k] = orig + FD_STEP;
            let up = eval(store, inputs);
            store.values_mut()[p].data_mut()[k] = orig - FD_STEP;
            let down = eval(store, inputs);
            store.values_mut()[p].data_mut()[k] = orig;
            compare(param_grads[p].data()[k], (up - down) / (2.0 * FD_STEP));
        }
    }
    let mut xs = inputs.to_vec();
    for j in 0..xs.len() {
        for k in 0..xs[j].len() {
            let orig = xs[j].data()[k];
            xs[j].data_mut()[k] = orig + FD_STEP;
            let up = eval(store, &xs);
            xs[j].data_mut()[k] = orig - FD_STEP;
            let down = eval(store, &xs);
            xs[j].data_mut()[k] = orig;
            compare(input_grads[j].data()[k], (up - down) / (2.0 * FD_STEP));
        }
    }
    report
}
