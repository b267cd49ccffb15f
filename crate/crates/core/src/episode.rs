//! Few-shot forecasting tasks and meta-batches.

use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{window_count, Catalog, MotionRecording, Subjects};
use crate::error::{Error, Result};
use crate::graph::{sample_induced_subgraph, MotionGraph, SamplerConfig};
use crate::tensor::{Dims, Tensor3};

/// One task: a sensor graph shared by support and query instances.
///
/// Channel `k` of every array is vertex `k` of `graph`, i.e. sensor
/// `graph.ids()[k]` of the source recordings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub action: String,
    pub graph: MotionGraph,
    /// `(I_s, T, C)`
    pub support_x: Tensor3,
    /// `(I_s, H, C)`
    pub support_y: Tensor3,
    /// `(I_q, T, C)`
    pub query_x: Tensor3,
    /// `(I_q, H, C)`
    pub query_y: Tensor3,
}

impl Episode {
    pub fn new(
        action: impl Into<String>,
        graph: MotionGraph,
        support_x: Tensor3,
        support_y: Tensor3,
        query_x: Tensor3,
        query_y: Tensor3,
    ) -> Result<Self> {
        let c = graph.len();
        let (sx, sy, qx, qy) = (
            support_x.dims(),
            support_y.dims(),
            query_x.dims(),
            query_y.dims(),
        );
        let consistent = sx.channels == c
            && sy.channels == c
            && qx.channels == c
            && qy.channels == c
            && sx.instances == sy.instances
            && qx.instances == qy.instances
            && sx.time == qx.time
            && sy.time == qy.time;
        if !consistent {
            return Err(Error::invalid(format!(
                "inconsistent episode arrays for {c} vertices: support {sx} -> {sy}, query {qx} -> {qy}"
            )));
        }
        Ok(Episode {
            action: action.into(),
            graph,
            support_x,
            support_y,
            query_x,
            query_y,
        })
    }

    pub fn sensors(&self) -> usize {
        self.graph.len()
    }

    pub fn input_len(&self) -> usize {
        self.support_x.dims().time
    }

    pub fn horizon(&self) -> usize {
        self.support_y.dims().time
    }

    pub fn support_len(&self) -> usize {
        self.support_x.dims().instances
    }

    pub fn query_len(&self) -> usize {
        self.query_x.dims().instances
    }

    /// Same task with vertex `k` taken from vertex `perm[k]`.
    pub fn permuted_vertices(&self, perm: &[usize]) -> Result<Episode> {
        Episode::new(
            self.action.clone(),
            self.graph.permuted(perm)?,
            self.support_x.select_channels(perm)?,
            self.support_y.select_channels(perm)?,
            self.query_x.select_channels(perm)?,
            self.query_y.select_channels(perm)?,
        )
    }

    /// Same task with support instance `k` taken from instance `perm[k]`.
    pub fn permuted_support(&self, perm: &[usize]) -> Result<Episode> {
        Episode::new(
            self.action.clone(),
            self.graph.clone(),
            self.support_x.select_instances(perm)?,
            self.support_y.select_instances(perm)?,
            self.query_x.clone(),
            self.query_y.clone(),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ep: Episode = serde_json::from_str(text)?;
        // re-run the shape checks on deserialised data
        Episode::new(
            ep.action,
            ep.graph,
            ep.support_x,
            ep.support_y,
            ep.query_x,
            ep.query_y,
        )
    }
}

/// Writes episodes as a JSON array.
pub fn dump_episodes(path: impl AsRef<Path>, episodes: &[Episode]) -> Result<()> {
    let text = serde_json::to_string(episodes)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_episodes(path: impl AsRef<Path>) -> Result<Vec<Episode>> {
    let text = std::fs::read_to_string(path)?;
    let raw: Vec<Episode> = serde_json::from_str(&text)?;
    raw.into_iter()
        .map(|e| Episode::new(e.action, e.graph, e.support_x, e.support_y, e.query_x, e.query_y))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub support: usize,
    pub query: usize,
    pub input_len: usize,
    pub horizon: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            support: 5,
            query: 2,
            input_len: 50,
            horizon: 10,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("support", self.support),
            ("query", self.query),
            ("input_len", self.input_len),
            ("horizon", self.horizon),
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

    pub fn window_len(&self) -> usize {
        self.input_len + self.horizon
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphMode {
    /// Every task uses the full graph.
    Homogeneous,
    /// Every task samples its own induced subgraph.
    #[default]
    Heterogeneous,
}

impl std::str::FromStr for GraphMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "homogeneous" => Ok(GraphMode::Homogeneous),
            "heterogeneous" => Ok(GraphMode::Heterogeneous),
            _ => Err(Error::Config {
                field: "mode",
                msg: format!("expected homogeneous or heterogeneous, got `{s}`"),
            }),
        }
    }
}

/// Task with `cfg.support + cfg.query` distinct windows of `action`, drawn
/// uniformly over all windows of the matching recordings. The first windows
/// drawn become the support set.
pub fn assemble_episode<R: Rng + ?Sized>(
    graph: &MotionGraph,
    action: &str,
    catalog: &Catalog,
    subjects: Subjects,
    cfg: &EpisodeConfig,
    rng: &mut R,
) -> Result<Episode> {
    cfg.validate()?;
    let width = cfg.window_len();
    let recs: Vec<&MotionRecording> = catalog.select(action, subjects).collect();
    if let Some(&max_id) = graph.ids().iter().max() {
        if recs.iter().any(|r| max_id >= r.sensor_count()) {
            return Err(Error::invalid(format!(
                "graph reads sensor {max_id}, recordings of `{action}` are narrower"
            )));
        }
    }
    let counts: Vec<usize> = recs
        .iter()
        .map(|r| window_count(r.frame_count(), cfg.input_len, cfg.horizon, 1))
        .collect();
    let available: usize = counts.iter().sum();
    let required = cfg.support + cfg.query;
    if available < required {
        return Err(Error::InsufficientData {
            action: action.to_string(),
            required,
            available,
        });
    }
    let picks = index::sample(rng, available, required).into_vec();
    let c = graph.len();
    let ids = graph.ids();
    let gather = |sel: &[usize]| -> (Tensor3, Tensor3) {
        let n = sel.len();
        let mut x = Tensor3::zeros(Dims::new(n, cfg.input_len, c));
        let mut y = Tensor3::zeros(Dims::new(n, cfg.horizon, c));
        for (i, &flat) in sel.iter().enumerate() {
            let (mut r, mut start) = (0, flat);
            while start >= counts[r] {
                start -= counts[r];
                r += 1;
            }
            let rec = recs[r];
            for t in 0..width {
                for (k, &s) in ids.iter().enumerate() {
                    let v = rec.get(start + t, s);
                    if t < cfg.input_len {
                        x.set(i, t, k, v);
                    } else {
                        y.set(i, t - cfg.input_len, k, v);
                    }
                }
            }
        }
        (x, y)
    };
    let (sx, sy) = gather(&picks[..cfg.support]);
    let (qx, qy) = gather(&picks[cfg.support..]);
    Episode::new(action, graph.clone(), sx, sy, qx, qy)
}

/// Everything needed to draw tasks from a catalog.
#[derive(Clone, Debug)]
pub struct TaskSource<'a> {
    pub catalog: &'a Catalog,
    pub full_graph: &'a MotionGraph,
    pub subjects: Subjects,
    pub mode: GraphMode,
    pub sampler: SamplerConfig,
    pub episode: EpisodeConfig,
}

impl TaskSource<'_> {
    pub fn graph<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<MotionGraph> {
        match self.mode {
            GraphMode::Homogeneous => Ok(self.full_graph.clone()),
            GraphMode::Heterogeneous => sample_induced_subgraph(self.full_graph, &self.sampler, rng),
        }
    }

    pub fn episode<R: Rng + ?Sized>(&self, action: &str, rng: &mut R) -> Result<Episode> {
        let g = self.graph(rng)?;
        assemble_episode(&g, action, self.catalog, self.subjects, &self.episode, rng)
    }

    /// One task per action, in the given order.
    pub fn meta_batch<R: Rng + ?Sized, S: AsRef<str>>(
        &self,
        actions: &[S],
        rng: &mut R,
    ) -> Result<Vec<Episode>> {
        if actions.is_empty() {
            return Err(Error::invalid("meta-batch needs at least one action"));
        }
        actions.iter().map(|a| self.episode(a.as_ref(), rng)).collect()
    }
}
