//! Sensor graphs, the adjacency-list file format, and connected induced-subgraph
//! sampling.

use std::collections::{HashSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Neighbors;
use crate::error::{Error, Result};

/// The 54-angle skeleton shipped with the crate.
pub const SKELETON_GRAPH: &str = include_str!("../data/h36m_skeleton.graph");

/// Undirected sensor graph without self loops.
///
/// `ids` are sensor ids in the host recording (column indices); vertex `k` of
/// this graph reads channel `ids[k]`. Neighbour lists use local indices and
/// are sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphRepr", into = "GraphRepr")]
pub struct MotionGraph {
    ids: Vec<usize>,
    labels: Vec<String>,
    adj: Neighbors,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    ids: Vec<usize>,
    labels: Vec<String>,
    neighbors: Vec<Vec<usize>>,
}

impl TryFrom<GraphRepr> for MotionGraph {
    type Error = Error;
    fn try_from(r: GraphRepr) -> Result<Self> {
        MotionGraph::new(r.ids, r.labels, r.neighbors)
    }
}

impl From<MotionGraph> for GraphRepr {
    fn from(g: MotionGraph) -> Self {
        GraphRepr {
            ids: g.ids,
            labels: g.labels,
            neighbors: g.adj.as_ref().clone(),
        }
    }
}

/// Rejects self loops, out-of-range or duplicate entries, and asymmetric lists.
pub fn validate_neighbors(adj: &[Vec<usize>]) -> Result<()> {
    let n = adj.len();
    for (v, nbrs) in adj.iter().enumerate() {
        for (k, &j) in nbrs.iter().enumerate() {
            if j >= n {
                return Err(Error::Graph(format!("vertex {v}: neighbour {j} out of range")));
            }
            if j == v {
                return Err(Error::Graph(format!("vertex {v}: self loop")));
            }
            if nbrs[..k].contains(&j) {
                return Err(Error::Graph(format!("vertex {v}: duplicate neighbour {j}")));
            }
            if !adj[j].contains(&v) {
                return Err(Error::Graph(format!(
                    "adjacency not symmetric: {v} -> {j} without {j} -> {v}"
                )));
            }
        }
    }
    Ok(())
}

impl MotionGraph {
    pub fn new(ids: Vec<usize>, labels: Vec<String>, mut neighbors: Vec<Vec<usize>>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Graph("graph has no vertices".into()));
        }
        if labels.len() != ids.len() || neighbors.len() != ids.len() {
            return Err(Error::Graph(format!(
                "{} ids, {} labels, {} neighbour lists",
                ids.len(),
                labels.len(),
                neighbors.len()
            )));
        }
        let distinct: HashSet<_> = ids.iter().collect();
        if distinct.len() != ids.len() {
            return Err(Error::Graph("duplicate vertex id".into()));
        }
        for nbrs in &mut neighbors {
            nbrs.sort_unstable();
        }
        validate_neighbors(&neighbors)?;
        Ok(MotionGraph {
            ids,
            labels,
            adj: Arc::new(neighbors),
        })
    }

    /// Graph on vertices `0..n` with the given undirected edges.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut nbrs = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Graph(format!("edge ({a}, {b}) out of range")));
            }
            if !nbrs[a].contains(&b) {
                nbrs[a].push(b);
                nbrs[b].push(a);
            }
        }
        MotionGraph::new((0..n).collect(), (0..n).map(|v| format!("v{v}")).collect(), nbrs)
    }

    pub fn path(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|v| (v - 1, v)).collect();
        MotionGraph::from_edges(n, &edges).expect("valid path")
    }

    pub fn edgeless(n: usize) -> Self {
        MotionGraph::from_edges(n, &[]).expect("valid graph")
    }

    /// The shipped 54-vertex skeleton.
    pub fn skeleton() -> Self {
        MotionGraph::parse(SKELETON_GRAPH, "<builtin skeleton>").expect("builtin graph is valid")
    }

    /// Parses `<id> <label> <neighbour ids...>` lines; `#` starts a comment.
    /// Neighbour ids refer to the `id` column.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut rows: Vec<(usize, usize, String, Vec<usize>)> = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let id = fields
                .next()
                .unwrap()
                .parse::<usize>()
                .map_err(|e| err(k + 1, format!("bad vertex id: {e}")))?;
            let label = fields
                .next()
                .ok_or_else(|| err(k + 1, "missing label".into()))?
                .to_string();
            let nbrs = fields
                .map(|f| f.parse::<usize>().map_err(|e| err(k + 1, format!("bad neighbour `{f}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push((k + 1, id, label, nbrs));
        }
        if rows.is_empty() {
            return Err(err(0, "no vertices".into()));
        }
        let ids: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let local = |id: usize| ids.iter().position(|&x| x == id);
        let mut neighbors = Vec::with_capacity(rows.len());
        for (k, (line, id, _, nbrs)) in rows.iter().enumerate() {
            if local(*id) != Some(k) {
                return Err(err(*line, format!("duplicate vertex id {id}")));
            }
            let mapped = nbrs
                .iter()
                .map(|&j| local(j).ok_or_else(|| err(*line, format!("unknown neighbour id {j}"))))
                .collect::<Result<Vec<_>>>()?;
            neighbors.push(mapped);
        }
        for (k, (line, id, _, _)) in rows.iter().enumerate() {
            for (m, &j) in neighbors[k].iter().enumerate() {
                let msg = if j == k {
                    Some(format!("vertex {id} lists itself"))
                } else if neighbors[k][..m].contains(&j) {
                    Some(format!("vertex {id} lists {} twice", ids[j]))
                } else if !neighbors[j].contains(&k) {
                    Some(format!(
                        "adjacency not symmetric: {id} lists {} but not the reverse",
                        ids[j]
                    ))
                } else {
                    None
                };
                if let Some(msg) = msg {
                    return Err(err(*line, msg));
                }
            }
        }
        let labels = rows.iter().map(|r| r.2.clone()).collect();
        MotionGraph::new(ids, labels, neighbors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        MotionGraph::parse(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# format: <id> <label> <neighbor ids...>\n");
        for k in 0..self.len() {
            let _ = write!(out, "{} {}", self.ids[k], self.labels[k]);
            for &j in &self.adj[k] {
                let _ = write!(out, " {}", self.ids[j]);
            }
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn neighbors(&self) -> &Neighbors {
        &self.adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adj.iter().map(Vec::len).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a].binary_search(&b).is_ok()
    }

    /// Dense 0/1 adjacency matrix.
    pub fn adjacency(&self) -> Vec<Vec<u8>> {
        let n = self.len();
        let mut a = vec![vec![0u8; n]; n];
        for (v, nbrs) in self.adj.iter().enumerate() {
            for &j in nbrs {
                a[v][j] = 1;
            }
        }
        a
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.len()];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &j in &self.adj[v] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == self.len()
    }

    /// Subgraph on the given local vertices (in that order) with every edge
    /// of `self` whose endpoints are both kept.
    pub fn induced(&self, keep: &[usize]) -> Result<Self> {
        let mut position = vec![usize::MAX; self.len()];
        for (k, &v) in keep.iter().enumerate() {
            if v >= self.len() || position[v] != usize::MAX {
                return Err(Error::Graph(format!("bad or repeated vertex {v} in subset")));
            }
            position[v] = k;
        }
        let neighbors = keep
            .iter()
            .map(|&v| {
                self.adj[v]
                    .iter()
                    .filter_map(|&j| (position[j] != usize::MAX).then_some(position[j]))
                    .collect()
            })
            .collect();
        MotionGraph::new(
            keep.iter().map(|&v| self.ids[v]).collect(),
            keep.iter().map(|&v| self.labels[v].clone()).collect(),
            neighbors,
        )
    }

    /// Relabelled copy: vertex `k` of the result is vertex `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.len() {
            return Err(Error::Graph("permutation length mismatch".into()));
        }
        self.induced(perm)
    }
}

/// Neighbour-inclusion probability calibrated on the shipped skeleton so that
/// sampled subgraphs average about 27 vertices.
pub const CALIBRATED_INCLUSION: f64 = 0.67;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Probability of adding each undecided neighbour of a frontier vertex.
    pub p: f64,
    pub min_vertices: usize,
    /// `None` means no cap beyond the graph size.
    pub max_vertices: Option<usize>,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            p: CALIBRATED_INCLUSION,
            min_vertices: 1,
            max_vertices: None,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::Config {
                field: "p",
                msg: format!("must lie in (0, 1], got {}", self.p),
            });
        }
        if self.min_vertices < 1 {
            return Err(Error::Config {
                field: "min_vertices",
                msg: "must be at least 1".into(),
            });
        }
        if let Some(max) = self.max_vertices {
            if max < self.min_vertices {
                return Err(Error::Config {
                    field: "max_vertices",
                    msg: format!("{max} is below min_vertices {}", self.min_vertices),
                });
            }
        }
        Ok(())
    }
}

const MAX_ATTEMPTS: usize = 100_000;

/// Random connected induced subgraph.
///
/// Starting from a uniformly drawn root, every frontier vertex offers each of
/// its not-yet-decided neighbours (in ascending order) for inclusion with
/// probability `p`; a neighbour is decided on its first offer. Newly added
/// vertices form the next frontier. Growth stops when the frontier is empty
/// or the maximum cap is reached. Draws below the minimum cap are discarded
/// and sampling restarts. The result lists its vertices in ascending order.
pub fn sample_induced_subgraph<R: Rng + ?Sized>(
    full: &MotionGraph,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<MotionGraph> {
    cfg.validate()?;
    let n = full.len();
    if cfg.min_vertices > n {
        return Err(Error::Sampler(format!(
            "minimum of {} vertices exceeds graph size {n}",
            cfg.min_vertices
        )));
    }
    let max = cfg.max_vertices.unwrap_or(n).min(n);
    let adj = full.neighbors();
    let mut decided = vec![false; n];
    for _ in 0..MAX_ATTEMPTS {
        decided.fill(false);
        let root = rng.random_range(0..n);
        decided[root] = true;
        let mut kept = vec![root];
        let mut frontier = vec![root];
        'grow: while !frontier.is_empty() {
            let mut next = Vec::new();
            for &u in &frontier {
                for &w in &adj[u] {
                    if kept.len() >= max {
                        break 'grow;
                    }
                    if decided[w] {
                        continue;
                    }
                    decided[w] = true;
                    if rng.random::<f64>() < cfg.p {
                        kept.push(w);
                        next.push(w);
                    }
                }
            }
            frontier = next;
        }
        if kept.len() >= cfg.min_vertices {
            kept.sort_unstable();
            return full.induced(&kept);
        }
    }
    Err(Error::Sampler(format!(
        "no subgraph with at least {} vertices after {MAX_ATTEMPTS} attempts",
        cfg.min_vertices
    )))
}

/// `n` samples from a stream seeded with `cfg.seed`.
pub fn sample_many(full: &MotionGraph, cfg: &SamplerConfig, n: usize) -> Result<Vec<MotionGraph>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..n).map(|_| sample_induced_subgraph(full, cfg, &mut rng)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgraphStats {
    pub samples: usize,
    pub vertices_mean: f64,
    /// Unbiased; `None` for a single sample.
    pub vertices_std: Option<f64>,
    pub edges_per_vertex_mean: f64,
    /// Unbiased over all vertices of all samples; `None` with fewer than two vertices.
    pub edges_per_vertex_std: Option<f64>,
    /// Distinct vertex sets divided by sample count.
    pub unique_fraction: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, Option<f64>) {
    let n = values.clone().count();
    let mean = values.clone().sum::<f64>() / n as f64;
    let std = (n >= 2).then(|| {
        let ss: f64 = values.map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    (mean, std)
}

/// Vertex-count and degree statistics of a set of sampled subgraphs. Two
/// samples count as the same task when they have the same sorted vertex-id set.
pub fn subgraph_stats(samples: &[MotionGraph]) -> Result<SubgraphStats> {
    if samples.is_empty() {
        return Err(Error::invalid("statistics of zero samples"));
    }
    let (vertices_mean, vertices_std) = mean_std(samples.iter().map(|g| g.len() as f64));
    let degrees = samples.iter().flat_map(|g| g.adj.iter().map(|n| n.len() as f64));
    let (edges_per_vertex_mean, edges_per_vertex_std) = mean_std(degrees);
    let unique: HashSet<Vec<usize>> = samples
        .iter()
        .map(|g| {
            let mut ids = g.ids.clone();
            ids.sort_unstable();
            ids
        })
        .collect();
    Ok(SubgraphStats {
        samples: samples.len(),
        vertices_mean,
        vertices_std,
        edges_per_vertex_mean,
        edges_per_vertex_std,
        unique_fraction: unique.len() as f64 / samples.len() as f64,
    })
}

impl SubgraphStats {
    /// Two-line summary in the `vertices` / `edges per vertex` layout.
    pub fn table(&self) -> String {
        let pm = |m: f64, s: Option<f64>| match s {
            Some(s) => format!("{m:.1} ± {s:.1}"),
            None => format!("{m:.1}"),
        };
        format!(
            "samples          {}\nvertices         {}\nedges per vertex {}\nunique fraction  {:.4}\n",
            self.samples,
            pm(self.vertices_mean, self.vertices_std),
            pm(self.edges_per_vertex_mean, self.edges_per_vertex_std),
            self.unique_fraction
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn skeleton_loads() {
        let g = MotionGraph::skeleton();
        assert_eq!(g.len(), 54);
        assert!(g.is_connected());
    }

    #[test]
    fn asymmetric_graph_rejected() {
        let e = MotionGraph::new(vec![0, 1], vec!["a".into(), "b".into()], vec![vec![1], vec![]]);
        assert!(matches!(e, Err(Error::Graph(m)) if m.contains("symmetric")));
    }

    #[test]
    fn self_loop_rejected() {
        assert!(MotionGraph::new(vec![0], vec!["a".into()], vec![vec![0]]).is_err());
    }

    #[test]
    fn parse_reports_line() {
        let text = "0 a 1\n1 b 0\n2 c x\n";
        match MotionGraph::parse(text, "g.txt") {
            Err(Error::Parse { path, line, .. }) => {
                assert_eq!(path, "g.txt");
                assert_eq!(line, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn text_round_trip() {
        let g = MotionGraph::skeleton();
        let back = MotionGraph::parse(&g.to_text(), "rt").unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn saturated_sampler_returns_full_graph() {
        let g = MotionGraph::skeleton();
        let cfg = SamplerConfig {
            p: 1.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            assert_eq!(sample_induced_subgraph(&g, &cfg, &mut rng).unwrap(), g);
        }
    }

    #[test]
    fn cap_of_one_keeps_root() {
        let g = MotionGraph::skeleton();
        let cfg = SamplerConfig {
            p: 1.0,
            max_vertices: Some(1),
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = sample_induced_subgraph(&g, &cfg, &mut rng).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.edge_count(), 0);
    }

    #[test]
    fn unsatisfiable_min_is_an_error() {
        let g = MotionGraph::path(4);
        let cfg = SamplerConfig {
            min_vertices: 5,
            max_vertices: None,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_induced_subgraph(&g, &cfg, &mut rng),
            Err(Error::Sampler(_))
        ));
    }

    #[test]
    fn bad_probability_rejected() {
        for p in [0.0, -0.1, 1.5, f64::NAN] {
            let cfg = SamplerConfig {
                p,
                ..Default::default()
            };
            assert!(cfg.validate().is_err(), "p = {p}");
        }
    }

    #[test]
    fn duplicate_samples_halve_uniqueness() {
        let g = MotionGraph::path(3);
        let s = subgraph_stats(&[g.clone(), g]).unwrap();
        assert_eq!(s.unique_fraction, 0.5);
        assert_eq!(s.vertices_std, Some(0.0));
    }

    #[test]
    fn single_sample_is_unique() {
        let s = subgraph_stats(&[MotionGraph::path(3)]).unwrap();
        assert_eq!(s.unique_fraction, 1.0);
        assert_eq!(s.vertices_std, None);
    }
}
