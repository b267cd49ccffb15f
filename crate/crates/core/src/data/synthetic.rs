//! Graph-coupled sinusoids.
//!
//! Sensor `c` of a recording follows
//!
//! ```text
//! x_c(t) = o_c + a_c sin(2π f t / 25 + θ_c + δ_c(t)) + noise ε
//! ```
//!
//! The static phases solve `θ = (1 - κ) u + κ P θ` on the unit circle, with
//! `u` random per sensor and `P` the row-normalised adjacency, so `κ = 1`
//! gives every connected sensor one shared phase. The perturbation `δ`
//! follows
//!
//! ```text
//! δ(t) = (1 - κ) δ(t - 1) + κ (P δ(t - lag) + drift ε(t))
//! ```
//!
//! so each sensor's phase is pulled towards where its neighbours' phases were
//! `lag` frames earlier, and the neighbours of a sensor carry information
//! about its future. Without coupling every sensor is a pure sinusoid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Catalog, MotionRecording};
use crate::error::{Error, Result};
use crate::graph::MotionGraph;
use crate::tensor::{Dims, Tensor3};

pub const TRAIN_ACTIONS: [&str; 11] = [
    "directions",
    "greeting",
    "phoning",
    "posing",
    "purchases",
    "sitting",
    "sittingdown",
    "takingphoto",
    "waiting",
    "walkingdog",
    "walkingtogether",
];

pub const TEST_ACTIONS: [&str; 4] = ["walking", "eating", "smoking", "discussion"];

const FPS: f64 = 25.0;
const BURN_IN: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticActionSpec {
    pub name: String,
    /// Hz, drawn uniformly per recording.
    pub frequency: [f64; 2],
    /// Drawn uniformly per sensor and recording.
    pub amplitude: [f64; 2],
    pub coupling: f64,
    /// Observation noise std.
    pub noise: f64,
    /// Std of the per-frame phase innovation, radians.
    pub drift: f64,
    /// Frames for a phase change to cross one edge.
    pub lag: usize,
    /// Sensor offsets are fixed per action and drawn from `±offset_scale`.
    pub offset_scale: f64,
}

impl SyntheticActionSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field, msg: &str| {
            Err(Error::Config {
                field,
                msg: format!("{}: {msg}", self.name),
            })
        };
        let [f0, f1] = self.frequency;
        if !(f0 > 0.0 && f0.is_finite() && f1.is_finite() && f0 <= f1) {
            return bad("frequency", "range must be positive and ordered");
        }
        let [a0, a1] = self.amplitude;
        if !(a0 >= 0.0 && a1.is_finite() && a0 <= a1) {
            return bad("amplitude", "range must be non-negative and ordered");
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return bad("coupling", "must lie in [0, 1]");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise", "must be non-negative");
        }
        if !(self.drift >= 0.0 && self.drift.is_finite()) {
            return bad("drift", "must be non-negative");
        }
        if self.lag == 0 {
            return bad("lag", "must be at least 1");
        }
        if !(self.offset_scale >= 0.0 && self.offset_scale.is_finite()) {
            return bad("offset_scale", "must be non-negative");
        }
        Ok(())
    }
}

/// The fifteen actions with distinct frequency bands.
pub fn default_actions(coupling: f64, noise: f64) -> Vec<SyntheticActionSpec> {
    let names = TRAIN_ACTIONS.iter().chain(TEST_ACTIONS.iter());
    names
        .enumerate()
        .map(|(i, name)| {
            // interleave so the held-out actions sit inside the training band
            let lo = 0.1 + 0.3 * ((i * 7) % 15) as f64 / 15.0;
            SyntheticActionSpec {
                name: name.to_string(),
                frequency: [lo, lo + 0.05],
                amplitude: [0.5, 1.5],
                coupling,
                noise,
                drift: 0.3,
                lag: 10,
                offset_scale: 0.5,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub actions: Vec<SyntheticActionSpec>,
    pub subjects: Vec<u32>,
    pub takes: u32,
    pub frames: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            actions: default_actions(0.5, 0.05),
            subjects: vec![1, 5, 6, 7, 8, 9, 11],
            takes: 2,
            frames: 240,
            seed: 0,
        }
    }
}

fn fnv(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(a << 6).wrapping_add(a >> 2);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting.
/// `a` is row-major `n × n`; `rhs` holds several right-hand sides.
fn solve(mut a: Vec<f64>, n: usize, rhs: &mut [Vec<f64>]) {
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .expect("non-empty");
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            for b in rhs.iter_mut() {
                b.swap(piv, col);
            }
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            for b in rhs.iter_mut() {
                b[row] -= f * b[col];
            }
        }
    }
    for b in rhs.iter_mut() {
        for row in (0..n).rev() {
            let mut s = b[row];
            for k in row + 1..n {
                s -= a[row * n + k] * b[k];
            }
            b[row] = s / a[row * n + row];
        }
    }
}

fn components(graph: &MotionGraph) -> Vec<usize> {
    let n = graph.len();
    let adj = graph.neighbors();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        comp[start] = next;
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if comp[u] == usize::MAX {
                    comp[u] = next;
                    stack.push(u);
                }
            }
        }
        next += 1;
    }
    comp
}

/// Phases whose unit phasors satisfy `z = (1 - κ) u + κ P z`.
fn coupled_phases(graph: &MotionGraph, initial: &[f64], kappa: f64) -> Vec<f64> {
    let n = graph.len();
    let adj = graph.neighbors();
    if kappa >= 1.0 {
        let comp = components(graph);
        let ncomp = comp.iter().max().map_or(0, |m| m + 1);
        let mut re = vec![0.0; ncomp];
        let mut im = vec![0.0; ncomp];
        for v in 0..n {
            re[comp[v]] += initial[v].cos();
            im[comp[v]] += initial[v].sin();
        }
        return (0..n).map(|v| im[comp[v]].atan2(re[comp[v]])).collect();
    }
    if kappa == 0.0 {
        return initial.to_vec();
    }
    let mut a = vec![0.0; n * n];
    for v in 0..n {
        a[v * n + v] = 1.0;
        let deg = adj[v].len() as f64;
        for &u in &adj[v] {
            a[v * n + u] -= kappa / deg;
        }
    }
    let mut rhs = vec![
        initial.iter().map(|p| (1.0 - kappa) * p.cos()).collect::<Vec<_>>(),
        initial.iter().map(|p| (1.0 - kappa) * p.sin()).collect::<Vec<_>>(),
    ];
    solve(a, n, &mut rhs);
    (0..n).map(|v| rhs[1][v].atan2(rhs[0][v])).collect()
}

/// One recording over every vertex of `graph`, deterministic in
/// `(spec, graph, subject_seed)`.
pub fn generate_recording(
    spec: &SyntheticActionSpec,
    graph: &MotionGraph,
    subject: u32,
    subject_seed: u64,
    n_frames: usize,
) -> Result<MotionRecording> {
    spec.validate()?;
    if n_frames == 0 {
        return Err(Error::invalid("a recording needs at least one frame"));
    }
    let n = graph.len();
    let adj = graph.neighbors();
    let action_key = fnv(spec.name.as_bytes());

    let mut action_rng = ChaCha8Rng::seed_from_u64(action_key);
    let offsets: Vec<f64> = (0..n)
        .map(|_| spec.offset_scale * action_rng.random_range(-1.0..=1.0))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(mix(subject_seed, action_key));
    let freq = rng.random_range(spec.frequency[0]..=spec.frequency[1]);
    let amp: Vec<f64> = (0..n)
        .map(|_| rng.random_range(spec.amplitude[0]..=spec.amplitude[1]))
        .collect();
    let initial: Vec<f64> = (0..n)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    let theta = coupled_phases(graph, &initial, spec.coupling);

    let kappa = spec.coupling;
    let lag = spec.lag;
    let total = BURN_IN + n_frames;
    // ring of the last `lag` perturbation frames
    let mut hist = vec![vec![0.0; n]; lag];
    let mut delta = vec![0.0; n];
    let mut data = Vec::with_capacity(n_frames * n);
    for step in 0..total {
        let old = &hist[step % lag];
        for v in 0..n {
            let spread = if adj[v].is_empty() {
                old[v]
            } else {
                adj[v].iter().map(|&u| old[u]).sum::<f64>() / adj[v].len() as f64
            };
            let mut pull = spread;
            if spec.drift > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                pull += spec.drift * z;
            }
            delta[v] = (1.0 - kappa) * delta[v] + kappa * pull;
        }
        hist[step % lag].copy_from_slice(&delta);
        if step < BURN_IN {
            continue;
        }
        let t = (step - BURN_IN) as f64;
        let base = std::f64::consts::TAU * freq * t / FPS;
        for v in 0..n {
            let mut x = offsets[v] + amp[v] * (base + theta[v] + delta[v]).sin();
            if spec.noise > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                x += spec.noise * z;
            }
            data.push(x);
        }
    }
    let frames = Tensor3::from_vec(Dims::new(1, n_frames, n), data)?;
    MotionRecording::new(spec.name.clone(), subject, frames)
}

/// `takes` recordings per action and subject.
pub fn generate_catalog(cfg: &SyntheticConfig, graph: &MotionGraph) -> Result<Catalog> {
    let mut recs = Vec::new();
    for spec in &cfg.actions {
        for &subject in &cfg.subjects {
            for take in 0..cfg.takes {
                let seed = mix(mix(cfg.seed, u64::from(subject)), u64::from(take));
                recs.push(generate_recording(spec, graph, subject, seed, cfg.frames)?);
            }
        }
    }
    Catalog::new(recs)
}
