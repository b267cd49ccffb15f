use rand::Rng;

use crate::autodiff::{Neighbors, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::validate_neighbors;
use crate::layers::GruCell;
use crate::params::{Bound, ParamStore};

/// One graph-convolution layer:
///
/// ```text
/// u_ic = outer([x_ic, Σ_{j ∈ N(c)} inner(x_ij)])
/// ```
///
/// The neighbourhood excludes the vertex itself and messages are summed
/// without normalisation.
#[derive(Clone, Debug)]
pub struct GcnLayer {
    inner: GruCell,
    outer: GruCell,
}

impl GcnLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        GcnLayer {
            inner: GruCell::new(store, &format!("{name}.inner"), input, hidden, rng),
            outer: GruCell::new(store, &format!("{name}.outer"), input + hidden, hidden, rng),
        }
    }

    pub const fn param_count(input: usize, hidden: usize) -> usize {
        GruCell::param_count(input, hidden) + GruCell::param_count(input + hidden, hidden)
    }

    fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var, adj: &Neighbors) -> Result<Var> {
        let messages = self.inner.forward(tape, bound, x, None)?;
        let summed = tape.neighbor_sum(messages, adj.clone())?;
        let joined = tape.concat_channels(&[x, summed])?;
        self.outer.forward(tape, bound, joined, None)
    }
}

#[derive(Clone, Debug)]
pub struct GcnBlock {
    layers: Vec<GcnLayer>,
}

impl GcnBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        depth: usize,
        rng: &mut R,
    ) -> Self {
        assert!(depth >= 1, "GCN block needs at least one layer");
        let layers = (0..depth)
            .map(|k| {
                let inp = if k == 0 { input } else { hidden };
                GcnLayer::new(store, &format!("{name}.{k}"), inp, hidden, rng)
            })
            .collect();
        GcnBlock { layers }
    }

    pub fn param_count(input: usize, hidden: usize, depth: usize) -> usize {
        GcnLayer::param_count(input, hidden) + (depth - 1) * GcnLayer::param_count(hidden, hidden)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `x` has rows `instance * C + vertex` where `C = adj.len()`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var, adj: &Neighbors) -> Result<Var> {
        validate_neighbors(adj)?;
        let rows = tape.dims(x).instances;
        if !rows.is_multiple_of(adj.len()) {
            return Err(Error::Graph(format!(
                "{rows} feature rows do not split over {} vertices",
                adj.len()
            )));
        }
        self.layers
            .iter()
            .try_fold(x, |h, layer| layer.forward(tape, bound, h, adj))
    }
}
