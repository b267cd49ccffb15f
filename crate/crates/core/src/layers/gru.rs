use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Dims, Tensor3};

/// Affine map over the channel axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub input: usize,
    pub output: usize,
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add_uniform(format!("{name}.w"), Dims::new(1, input, output), input, rng);
        let b = store.add_uniform(format!("{name}.b"), Dims::new(1, 1, output), input, rng);
        Linear {
            input,
            output,
            w,
            b,
        }
    }

    pub const fn param_count(input: usize, output: usize) -> usize {
        input * output + output
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, bound.var(self.w))?;
        tape.add_bias(y, bound.var(self.b))
    }
}

/// One gated recurrent unit layer with update, reset and candidate gates.
///
/// ```text
/// z = σ(x W_z + h U_z + b_z)
/// r = σ(x W_r + h U_r + b_r)
/// ĥ = tanh(x W_h + (r ⊙ h) U_h + b_h)
/// h' = (1 - z) ⊙ h + z ⊙ ĥ
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    pub input: usize,
    pub hidden: usize,
    w: [ParamId; 3],
    u: [ParamId; 3],
    b: [ParamId; 3],
}

const GATES: [&str; 3] = ["z", "r", "h"];

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let w = GATES.map(|g| {
            store.add_uniform(format!("{name}.w_{g}"), Dims::new(1, input, hidden), input, rng)
        });
        let u = GATES.map(|g| {
            store.add_uniform(format!("{name}.u_{g}"), Dims::new(1, hidden, hidden), hidden, rng)
        });
        let b = GATES.map(|g| {
            store.add_uniform(
                format!("{name}.b_{g}"),
                Dims::new(1, 1, hidden),
                input + hidden,
                rng,
            )
        });
        GruCell {
            input,
            hidden,
            w,
            u,
            b,
        }
    }

    pub const fn param_count(input: usize, hidden: usize) -> usize {
        3 * (hidden * (input + hidden) + hidden)
    }

    /// Runs the recurrence over the time axis of `x (N, T, input)` and returns
    /// every hidden state, `(N, T, hidden)`. The initial state is zero unless
    /// `h0 (N, 1, hidden)` is given.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var, h0: Option<Var>) -> Result<Var> {
        let states = self.states(tape, bound, x, h0)?;
        tape.concat_time(&states)
    }

    /// Hidden state after the last frame, `(N, 1, hidden)`.
    pub fn forward_last(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        h0: Option<Var>,
    ) -> Result<Var> {
        let states = self.states(tape, bound, x, h0)?;
        Ok(*states.last().expect("time axis is non-empty"))
    }

    fn states(&self, tape: &mut Tape, bound: &Bound, x: Var, h0: Option<Var>) -> Result<Vec<Var>> {
        let d = tape.dims(x);
        if d.channels != self.input {
            return Err(Error::Shape {
                op: "gru",
                lhs: d,
                rhs: Dims::new(1, self.input, self.hidden),
            });
        }
        let mut proj = [x; 3];
        for g in 0..3 {
            let p = tape.matmul(x, bound.var(self.w[g]))?;
            proj[g] = tape.add_bias(p, bound.var(self.b[g]))?;
        }
        let [uz, ur, uh] = self.u.map(|u| bound.var(u));
        let mut h = match h0 {
            Some(h) => {
                let hd = tape.dims(h);
                if hd != Dims::new(d.instances, 1, self.hidden) {
                    return Err(Error::Shape {
                        op: "gru initial state",
                        lhs: hd,
                        rhs: Dims::new(d.instances, 1, self.hidden),
                    });
                }
                h
            }
            None => tape.constant(Tensor3::zeros(Dims::new(d.instances, 1, self.hidden))),
        };
        let mut states = Vec::with_capacity(d.time);
        for t in 0..d.time {
            let xz = tape.slice_time(proj[0], t, 1)?;
            let xr = tape.slice_time(proj[1], t, 1)?;
            let xh = tape.slice_time(proj[2], t, 1)?;

            let hz = tape.matmul(h, uz)?;
            let z = tape.add(xz, hz)?;
            let z = tape.sigmoid(z);

            let hr = tape.matmul(h, ur)?;
            let r = tape.add(xr, hr)?;
            let r = tape.sigmoid(r);

            let rh = tape.mul(r, h)?;
            let hh = tape.matmul(rh, uh)?;
            let cand = tape.add(xh, hh)?;
            let cand = tape.tanh(cand);

            // (1 - z) h + z ĥ  ==  h + z (ĥ - h)
            let delta = tape.sub(cand, h)?;
            let step = tape.mul(z, delta)?;
            h = tape.add(h, step)?;
            states.push(h);
        }
        Ok(states)
    }
}

/// Stacked GRU layers; the first maps `input -> hidden`, the rest `hidden -> hidden`.
#[derive(Clone, Debug)]
pub struct GruStack {
    cells: Vec<GruCell>,
}

impl GruStack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        depth: usize,
        rng: &mut R,
    ) -> Self {
        assert!(depth >= 1, "GRU stack needs at least one layer");
        let cells = (0..depth)
            .map(|k| {
                let inp = if k == 0 { input } else { hidden };
                GruCell::new(store, &format!("{name}.{k}"), inp, hidden, rng)
            })
            .collect();
        GruStack { cells }
    }

    pub fn param_count(input: usize, hidden: usize, depth: usize) -> usize {
        GruCell::param_count(input, hidden) + (depth - 1) * GruCell::param_count(hidden, hidden)
    }

    pub fn cells(&self) -> &[GruCell] {
        &self.cells
    }

    pub fn input(&self) -> usize {
        self.cells[0].input
    }

    pub fn hidden(&self) -> usize {
        self.cells[0].hidden
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        self.cells
            .iter()
            .try_fold(x, |h, cell| cell.forward(tape, bound, h, None))
    }

    /// Like [`forward`](Self::forward) but only the last frame of the top layer.
    pub fn forward_last(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let (top, below) = self.cells.split_last().expect("non-empty stack");
        let h = below
            .iter()
            .try_fold(x, |h, cell| cell.forward(tape, bound, h, None))?;
        top.forward_last(tape, bound, h, None)
    }
}

/// Stacked GRUs followed by a per-frame linear readout.
#[derive(Clone, Debug)]
pub struct GruBlock {
    stack: GruStack,
    readout: Linear,
}

impl GruBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        depth: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let stack = GruStack::new(store, &format!("{name}.gru"), input, hidden, depth, rng);
        let readout = Linear::new(store, &format!("{name}.readout"), hidden, outputs, rng);
        GruBlock { stack, readout }
    }

    pub fn param_count(input: usize, hidden: usize, depth: usize, outputs: usize) -> usize {
        GruStack::param_count(input, hidden, depth) + Linear::param_count(hidden, outputs)
    }

    pub fn stack(&self) -> &GruStack {
        &self.stack
    }

    pub fn outputs(&self) -> usize {
        self.readout.output
    }

    /// Readout at every frame: `(N, T, input) -> (N, T, outputs)`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let h = self.stack.forward(tape, bound, x)?;
        self.readout.forward(tape, bound, h)
    }

    /// Readout of the final frame only: `(N, T, input) -> (N, 1, outputs)`.
    pub fn forward_last(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let h = self.stack.forward_last(tape, bound, x)?;
        self.readout.forward(tape, bound, h)
    }
}
