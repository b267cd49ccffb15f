//! Straight-line forward evaluation on nested vectors, reading weights by name.

use std::collections::HashMap;

use hetmotion::params::ParamStore;
use hetmotion::{ModelConfig, MotionGraph, Tensor3, Variant};

/// `T × F` series.
pub type Seq = Vec<Vec<f64>>;

pub struct Weights<'a>(HashMap<&'a str, &'a Tensor3>);

impl<'a> Weights<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Weights(store.iter().collect())
    }

    fn get(&self, name: &str) -> &Tensor3 {
        self.0.get(name).unwrap_or_else(|| panic!("no parameter {name}"))
    }

    /// `v W + b` for `W (1, in, out)` and `b (1, 1, out)`.
    fn affine(&self, v: &[f64], w: &str, b: Option<&str>) -> Vec<f64> {
        let w = self.get(w);
        let (rows, cols) = (w.dims().time, w.dims().channels);
        assert_eq!(rows, v.len(), "weight rows");
        (0..cols)
            .map(|j| {
                let mut s = b.map_or(0.0, |b| self.get(b).get(0, 0, j));
                for (i, x) in v.iter().enumerate() {
                    s += x * w.get(0, i, j);
                }
                s
            })
            .collect()
    }

    pub fn linear(&self, name: &str, v: &[f64]) -> Vec<f64> {
        self.affine(v, &format!("{name}.w"), Some(&format!("{name}.b")))
    }

    pub fn gru(&self, name: &str, x: &Seq) -> Seq {
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let k = self.get(&format!("{name}.b_z")).dims().channels;
        let mut h = vec![0.0; k];
        let mut out = Vec::with_capacity(x.len());
        for xt in x {
            let gate = |g: &str, h: &[f64]| {
                let a = self.affine(xt, &format!("{name}.w_{g}"), Some(&format!("{name}.b_{g}")));
                let b = self.affine(h, &format!("{name}.u_{g}"), None);
                a.iter().zip(b).map(|(a, b)| a + b).collect::<Vec<f64>>()
            };
            let z: Vec<f64> = gate("z", &h).into_iter().map(sig).collect();
            let r: Vec<f64> = gate("r", &h).into_iter().map(sig).collect();
            let rh: Vec<f64> = r.iter().zip(&h).map(|(r, h)| r * h).collect();
            let cand: Vec<f64> = gate("h", &rh).into_iter().map(f64::tanh).collect();
            h = (0..k).map(|j| (1.0 - z[j]) * h[j] + z[j] * cand[j]).collect();
            out.push(h.clone());
        }
        out
    }

    pub fn stack(&self, name: &str, depth: usize, x: &Seq) -> Seq {
        (0..depth).fold(x.clone(), |h, k| self.gru(&format!("{name}.{k}"), &h))
    }

    /// Aggregate per vertex and inner output per row, rows `instance * C + vertex`.
    pub fn ds(&self, name: &str, inner: usize, outer: usize, rows: &[Seq], c: usize) -> (Vec<Seq>, Vec<Seq>) {
        let per: Vec<Seq> = rows.iter().map(|x| self.stack(&format!("{name}.inner"), inner, x)).collect();
        let instances = rows.len() / c;
        let agg = (0..c)
            .map(|v| {
                let t = per[v].len();
                let k = per[v][0].len();
                let mean: Seq = (0..t)
                    .map(|s| {
                        (0..k)
                            .map(|j| (0..instances).map(|i| per[i * c + v][s][j]).sum::<f64>() / instances as f64)
                            .collect()
                    })
                    .collect();
                self.stack(&format!("{name}.outer"), outer, &mean)
            })
            .collect();
        (agg, per)
    }

    pub fn gcn(&self, name: &str, depth: usize, rows: &[Seq], graph: &MotionGraph) -> Vec<Seq> {
        let c = graph.len();
        let adj = graph.neighbors();
        let mut h = rows.to_vec();
        for layer in 0..depth {
            let msg: Vec<Seq> = h.iter().map(|x| self.gru(&format!("{name}.{layer}.inner"), x)).collect();
            h = h
                .iter()
                .enumerate()
                .map(|(row, x)| {
                    let (i, v) = (row / c, row % c);
                    let joined: Seq = (0..x.len())
                        .map(|t| {
                            let mut f = x[t].clone();
                            let k = msg[row][t].len();
                            f.extend((0..k).map(|j| adj[v].iter().map(|&u| msg[i * c + u][t][j]).sum::<f64>()));
                            f
                        })
                        .collect();
                    self.gru(&format!("{name}.{layer}.outer"), &joined)
                })
                .collect();
        }
        h
    }
}

/// Univariate series of sensor `c` for each instance of `x (I, T, C)`, rows `i * C + c`.
pub fn unfold(x: &Tensor3) -> Vec<Seq> {
    let d = x.dims();
    (0..d.instances * d.channels)
        .map(|row| (0..d.time).map(|t| vec![x.get(row / d.channels, t, row % d.channels)]).collect())
        .collect()
}

fn add(a: &Seq, b: &Seq) -> Seq {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

/// Forecast `(I_q, H, C)` of the full pipeline.
pub fn forecast(
    w: &Weights,
    cfg: &ModelConfig,
    graph: &MotionGraph,
    sx: &Tensor3,
    sy: &Tensor3,
    qx: &Tensor3,
) -> Tensor3 {
    let c = graph.len();
    let series = Tensor3::concat_time(&[sx, sy]).unwrap();
    let is = series.dims().instances;
    let (agg, per) = w.ds("inf.ds1", cfg.ds_inner_depth, cfg.ds_outer_depth, &unfold(&series), c);
    let mut h: Vec<Seq> = (0..is * c).map(|row| add(&per[row], &agg[row % c])).collect();
    if cfg.variant == Variant::GraphHetNet {
        h = w.gcn("inf.gcn", cfg.gcn_depth, &h, graph);
    }
    let (agg2, _) = w.ds("inf.ds2", cfg.ds_inner_depth, cfg.ds_outer_depth, &h, c);
    let emb: Vec<Vec<f64>> = agg2.iter().map(|s| s.last().unwrap().clone()).collect();
    let cond: Vec<Vec<f64>> = emb.iter().map(|e| w.linear("cond.proj", e)).collect();

    let q = qx.dims();
    let mut rows: Vec<Seq> = unfold(qx)
        .into_iter()
        .enumerate()
        .map(|(row, s)| {
            s.into_iter()
                .map(|mut f| {
                    f.extend_from_slice(&cond[row % c]);
                    f
                })
                .collect()
        })
        .collect();
    if cfg.variant == Variant::GraphHetNet {
        rows = w.gcn("pred.gcn", cfg.gcn_depth, &rows, graph);
    }
    let mut out = Tensor3::zeros(hetmotion::Dims::new(q.instances, cfg.horizon, c));
    for (row, x) in rows.iter().enumerate() {
        let hs = w.stack("pred.gru", cfg.gru_depth, x);
        let y = w.linear("pred.head", hs.last().unwrap());
        for (k, v) in y.into_iter().enumerate() {
            let base = if cfg.residual { qx.get(row / c, q.time - 1, row % c) } else { 0.0 };
            out.set(row / c, k, row % c, v + base);
        }
    }
    out
}
