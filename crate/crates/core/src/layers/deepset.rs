use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::GruStack;
use crate::params::{Bound, ParamStore};

/// Deep-set block over the instance axis.
///
/// Input rows are laid out `instance * C + vertex`, one univariate (or
/// K-variate) series per row. Each row goes through the inner network; the
/// inner outputs are averaged over instances separately for every vertex and
/// the average goes through the outer network:
///
/// ```text
/// w_c = outer( mean_i inner(x_ic) )
/// ```
#[derive(Clone, Debug)]
pub struct DsBlock {
    inner: GruStack,
    outer: GruStack,
}

pub struct DsOutput {
    /// `(C, T, K)`, invariant to the order of instances.
    pub aggregate: Var,
    /// Inner-network output per row, `(I·C, T, K)`; follows the instance order.
    pub per_instance: Var,
}

impl DsBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        inner_depth: usize,
        outer_depth: usize,
        rng: &mut R,
    ) -> Self {
        DsBlock {
            inner: GruStack::new(store, &format!("{name}.inner"), input, hidden, inner_depth, rng),
            outer: GruStack::new(store, &format!("{name}.outer"), hidden, hidden, outer_depth, rng),
        }
    }

    pub fn param_count(input: usize, hidden: usize, inner_depth: usize, outer_depth: usize) -> usize {
        GruStack::param_count(input, hidden, inner_depth)
            + GruStack::param_count(hidden, hidden, outer_depth)
    }

    pub fn inner(&self) -> &GruStack {
        &self.inner
    }

    pub fn outer(&self) -> &GruStack {
        &self.outer
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var, vertices: usize) -> Result<DsOutput> {
        let rows = tape.dims(x).instances;
        if vertices == 0 || rows < vertices {
            return Err(Error::EmptySupport);
        }
        let per_instance = self.inner.forward(tape, bound, x)?;
        let mean = tape.mean_instances(per_instance, vertices)?;
        let aggregate = self.outer.forward(tape, bound, mean)?;
        Ok(DsOutput {
            aggregate,
            per_instance,
        })
    }
}
