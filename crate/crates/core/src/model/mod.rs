//! The forecaster, its deep-set-only ablation, baselines and checkpoints.
//!
//! Data flow of [`GraphHetNet`] for a task with `C` sensors:
//!
//! ```text
//! support  [X^s | Y^s]  (I_s, T+H, C)  -> one univariate row per (instance, sensor)
//!   DS block 1          rows -> inner(x) + outer(mean_i inner(x))       (I_s·C, T+H, K)
//!   GCN block           per instance over the task graph                (I_s·C, T+H, K)
//!   DS block 2          aggregate over instances, last frame            (C, 1, K)   = embedding
//! query    X^q          (I_q, T, C) -> rows, concat projected embedding  (I_q·C, T, 1+K)
//!   GCN block           per instance over the task graph                (I_q·C, T, K)
//!   GRU stack, head     last frame -> H values per row                  (I_q, H, C)
//! ```
//!
//! The ablation drops both GCN blocks.

mod baselines;
mod checkpoint;

pub use baselines::{pad_channels, PaddedGru, PaddedGruConfig, ZeroVelocity, PAD_WIDTH};
pub use checkpoint::{write_atomic, Checkpoint};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Neighbors, Tape, Var};
use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::graph::MotionGraph;
use crate::layers::{DsBlock, GcnBlock, GruStack, Linear};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Dims, Tensor3};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    GraphHetNet,
    /// Same pipeline without graph convolutions.
    DsOnly,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::GraphHetNet => "graph-het-net",
            Variant::DsOnly => "ds-only",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "graph-het-net" | "ghn" => Ok(Variant::GraphHetNet),
            "ds-only" => Ok(Variant::DsOnly),
            _ => Err(Error::Config {
                field: "variant",
                msg: format!("unknown model variant `{s}`"),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Units per GRU (`K`).
    pub hidden: usize,
    /// Forecast frames (`H`).
    pub horizon: usize,
    pub ds_inner_depth: usize,
    pub ds_outer_depth: usize,
    /// Graph layers per GCN block.
    pub gcn_depth: usize,
    /// GRU layers in the forecasting block.
    pub gru_depth: usize,
    /// Add the last observed frame to every forecast frame.
    pub residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::full()
    }
}

impl ModelConfig {
    /// 64 units, two graph layers per GCN block, three GRUs per DS block.
    pub const fn full() -> Self {
        ModelConfig {
            variant: Variant::GraphHetNet,
            hidden: 64,
            horizon: 10,
            ds_inner_depth: 2,
            ds_outer_depth: 1,
            gcn_depth: 2,
            gru_depth: 2,
            residual: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("hidden", self.hidden),
            ("horizon", self.horizon),
            ("ds_inner_depth", self.ds_inner_depth),
            ("ds_outer_depth", self.ds_outer_depth),
            ("gcn_depth", self.gcn_depth),
            ("gru_depth", self.gru_depth),
        ] {
            if v == 0 {
                return Err(Error::Config {
                    field,
                    msg: "must be at least 1".into(),
                });
            }
        }
        Ok(())
    }

    /// Trainable scalars, from the configuration alone.
    pub fn param_count(&self) -> usize {
        let k = self.hidden;
        let ds1 = DsBlock::param_count(1, k, self.ds_inner_depth, self.ds_outer_depth);
        let ds2 = DsBlock::param_count(k, k, self.ds_inner_depth, self.ds_outer_depth);
        let proj = Linear::param_count(k, k);
        let head = Linear::param_count(k, self.horizon);
        let graph = match self.variant {
            Variant::GraphHetNet => {
                GcnBlock::param_count(k, k, self.gcn_depth)
                    + GcnBlock::param_count(1 + k, k, self.gcn_depth)
                    + GruStack::param_count(k, k, self.gru_depth)
            }
            Variant::DsOnly => GruStack::param_count(1 + k, k, self.gru_depth),
        };
        ds1 + ds2 + proj + head + graph
    }
}

/// A model that produces query forecasts for an episode.
pub trait Forecaster {
    fn name(&self) -> String;

    /// `(I_q, H, C)` forecast of `episode.query_y` from everything else.
    fn forecast_episode(&self, episode: &Episode) -> Result<Tensor3>;
}

/// A model that [`crate::train::meta_train`] can optimise.
pub trait Trainable: Sync {
    fn params(&self) -> &ParamStore;

    fn params_mut(&mut self) -> &mut ParamStore;

    /// Training loss on one episode and its gradient, in store order.
    fn loss_and_grads(&self, episode: &Episode) -> Result<(f64, Vec<Tensor3>)>;
}

fn mse(tape: &mut Tape, pred: Var, target: &Tensor3) -> Result<Var> {
    let y = tape.constant(target.clone());
    let d = tape.sub(pred, y)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean_all(sq))
}

/// `(I, H, C)` where every frame repeats the last frame of `x (I, T, C)`.
pub(crate) fn repeat_last_frame(x: &Tensor3, horizon: usize) -> Result<Tensor3> {
    let d = x.dims();
    if d.time == 0 || horizon == 0 {
        return Err(Error::invalid("need at least one observed and one forecast frame"));
    }
    Ok(Tensor3::from_fn(Dims::new(d.instances, horizon, d.channels), |i, _, c| {
        x.get(i, d.time - 1, c)
    }))
}

/// Meta-learned forecaster for tasks over arbitrary sensor subgraphs.
#[derive(Clone, Debug)]
pub struct GraphHetNet {
    config: ModelConfig,
    store: ParamStore,
    ds1: DsBlock,
    gcn_inf: Option<GcnBlock>,
    ds2: DsBlock,
    proj: Linear,
    gcn_pred: Option<GcnBlock>,
    gru: GruStack,
    head: Linear,
}

impl GraphHetNet {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let mut store = ParamStore::new();
        let s = &mut store;
        let k = config.hidden;
        let graph = config.variant == Variant::GraphHetNet;
        let ds1 = DsBlock::new(s, "inf.ds1", 1, k, config.ds_inner_depth, config.ds_outer_depth, rng);
        let gcn_inf = graph.then(|| GcnBlock::new(s, "inf.gcn", k, k, config.gcn_depth, rng));
        let ds2 = DsBlock::new(s, "inf.ds2", k, k, config.ds_inner_depth, config.ds_outer_depth, rng);
        let proj = Linear::new(s, "cond.proj", k, k, rng);
        let gcn_pred = graph.then(|| GcnBlock::new(s, "pred.gcn", 1 + k, k, config.gcn_depth, rng));
        let gru_in = if graph { k } else { 1 + k };
        let gru = GruStack::new(s, "pred.gru", gru_in, k, config.gru_depth, rng);
        let head = Linear::new(s, "pred.head", k, config.horizon, rng);
        debug_assert_eq!(store.count(), config.param_count());
        Ok(GraphHetNet {
            config,
            store,
            ds1,
            gcn_inf,
            ds2,
            proj,
            gcn_pred,
            gru,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn count_params(&self) -> usize {
        self.store.count()
    }

    fn check_graph(&self, graph: &MotionGraph, x: &Tensor3, what: &str) -> Result<()> {
        if x.dims().channels != graph.len() {
            return Err(Error::Graph(format!(
                "{what} has {} channels for {} vertices",
                x.dims().channels,
                graph.len()
            )));
        }
        Ok(())
    }

    /// Task embedding `(C, 1, K)` on the tape.
    pub fn infer_task_var(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        adj: &Neighbors,
        support_x: Var,
        support_y: Var,
    ) -> Result<Var> {
        let c = adj.len();
        let series = tape.concat_time(&[support_x, support_y])?;
        let instances = tape.dims(series).instances;
        if instances == 0 {
            return Err(Error::EmptySupport);
        }
        let frames = tape.dims(series).time;
        let rows = tape.unfold_sensors(series);
        let first = self.ds1.forward(tape, bound, rows, c)?;
        let shared = tape.tile(first.aggregate, instances)?;
        let mut h = tape.add(first.per_instance, shared)?;
        if let Some(gcn) = &self.gcn_inf {
            h = gcn.forward(tape, bound, h, adj)?;
        }
        let second = self.ds2.forward(tape, bound, h, c)?;
        tape.slice_time(second.aggregate, frames - 1, 1)
    }

    /// Forecast `(I_q, H, C)` on the tape.
    pub fn forecast_var(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        adj: &Neighbors,
        query_x: Var,
        embedding: Var,
    ) -> Result<Var> {
        let c = adj.len();
        let qd = tape.dims(query_x);
        let ed = tape.dims(embedding);
        if ed != Dims::new(c, 1, self.config.hidden) || qd.channels != c {
            return Err(Error::Shape {
                op: "forecast",
                lhs: qd,
                rhs: ed,
            });
        }
        let cond = self.proj.forward(tape, bound, embedding)?;
        let cond = tape.broadcast(cond, qd.instances, qd.time)?;
        let rows = tape.unfold_sensors(query_x);
        let mut h = tape.concat_channels(&[rows, cond])?;
        if let Some(gcn) = &self.gcn_pred {
            h = gcn.forward(tape, bound, h, adj)?;
        }
        let last = self.gru.forward_last(tape, bound, h)?;
        let out = self.head.forward(tape, bound, last)?;
        let mut y = tape.fold_sensors(out, qd.instances)?;
        if self.config.residual {
            let base = repeat_last_frame(tape.value(query_x), self.config.horizon)?;
            let base = tape.constant(base);
            y = tape.add(y, base)?;
        }
        Ok(y)
    }

    fn episode_forward(&self, tape: &mut Tape, bound: &Bound, ep: &Episode) -> Result<Var> {
        if ep.horizon() != self.config.horizon {
            return Err(Error::invalid(format!(
                "episode horizon {} differs from model horizon {}",
                ep.horizon(),
                self.config.horizon
            )));
        }
        let adj = ep.graph.neighbors();
        let sx = tape.constant(ep.support_x.clone());
        let sy = tape.constant(ep.support_y.clone());
        let qx = tape.constant(ep.query_x.clone());
        let emb = self.infer_task_var(tape, bound, adj, sx, sy)?;
        self.forecast_var(tape, bound, adj, qx, emb)
    }

    /// Task embedding `(C, 1, K)`.
    pub fn infer_task(
        &self,
        graph: &MotionGraph,
        support_x: &Tensor3,
        support_y: &Tensor3,
    ) -> Result<Tensor3> {
        self.check_graph(graph, support_x, "support input")?;
        self.check_graph(graph, support_y, "support target")?;
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let sx = tape.constant(support_x.clone());
        let sy = tape.constant(support_y.clone());
        let e = self.infer_task_var(&mut tape, &bound, graph.neighbors(), sx, sy)?;
        Ok(tape.value(e).clone())
    }

    /// Forecast `(I_q, H, C)` for a precomputed embedding.
    pub fn forecast(
        &self,
        graph: &MotionGraph,
        query_x: &Tensor3,
        embedding: &Tensor3,
    ) -> Result<Tensor3> {
        self.check_graph(graph, query_x, "query input")?;
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let qx = tape.constant(query_x.clone());
        let e = tape.constant(embedding.clone());
        let y = self.forecast_var(&mut tape, &bound, graph.neighbors(), qx, e)?;
        Ok(tape.value(y).clone())
    }

    /// Query MSE of one episode.
    pub fn loss(&self, ep: &Episode) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let pred = self.episode_forward(&mut tape, &bound, ep)?;
        let l = mse(&mut tape, pred, &ep.query_y)?;
        Ok(tape.value(l).item())
    }
}

impl Forecaster for GraphHetNet {
    fn name(&self) -> String {
        self.config.variant.to_string()
    }

    fn forecast_episode(&self, ep: &Episode) -> Result<Tensor3> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let y = self.episode_forward(&mut tape, &bound, ep)?;
        Ok(tape.value(y).clone())
    }
}

impl Trainable for GraphHetNet {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn loss_and_grads(&self, ep: &Episode) -> Result<(f64, Vec<Tensor3>)> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let pred = self.episode_forward(&mut tape, &bound, ep)?;
        let loss = mse(&mut tape, pred, &ep.query_y)?;
        let value = tape.value(loss).item();
        let mut grads = tape.backward(loss)?;
        Ok((value, bound.collect(&mut grads, &self.store)))
    }
}
