use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::layers::{GruCell, Linear};
use crate::model::{repeat_last_frame, Forecaster, Trainable};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Dims, Tensor3};

/// Sensor count of the full skeleton.
pub const PAD_WIDTH: usize = 54;

/// Repeats the last observed frame.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroVelocity;

impl ZeroVelocity {
    pub fn predict(x: &Tensor3, horizon: usize) -> Result<Tensor3> {
        repeat_last_frame(x, horizon)
    }
}

impl Forecaster for ZeroVelocity {
    fn name(&self) -> String {
        "zero-velocity".into()
    }

    fn forecast_episode(&self, ep: &Episode) -> Result<Tensor3> {
        repeat_last_frame(&ep.query_x, ep.horizon())
    }
}

/// Places channel `k` of `x` at column `ids[k]` of a zero tensor `width` wide.
pub fn pad_channels(x: &Tensor3, ids: &[usize], width: usize) -> Result<Tensor3> {
    let d = x.dims();
    if ids.len() != d.channels {
        return Err(Error::invalid(format!(
            "{} channel ids for {} channels",
            ids.len(),
            d.channels
        )));
    }
    if let Some(&bad) = ids.iter().find(|&&s| s >= width) {
        return Err(Error::invalid(format!(
            "sensor {bad} does not fit the pad width {width}"
        )));
    }
    let mut out = Tensor3::zeros(Dims::new(d.instances, d.time, width));
    for i in 0..d.instances {
        for t in 0..d.time {
            for (k, &s) in ids.iter().enumerate() {
                out.set(i, t, s, x.get(i, t, k));
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaddedGruConfig {
    pub width: usize,
    pub hidden: usize,
    pub horizon: usize,
}

/// Fixed-width encoder-decoder GRU over zero-padded sensor vectors.
///
/// The decoder runs autoregressively from the last observed frame and
/// predicts a per-frame change. Changes on padding columns are masked, so
/// those columns stay zero and never enter the loss.
#[derive(Clone, Debug)]
pub struct PaddedGru {
    config: PaddedGruConfig,
    store: ParamStore,
    encoder: GruCell,
    decoder: GruCell,
    readout: Linear,
}

impl PaddedGru {
    pub fn new(width: usize, hidden: usize, horizon: usize, seed: u64) -> Result<Self> {
        if width == 0 || hidden == 0 || horizon == 0 {
            return Err(Error::Config {
                field: "padded_gru",
                msg: "width, hidden size and horizon must be positive".into(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = GruCell::new(&mut store, "enc", width, hidden, &mut rng);
        let decoder = GruCell::new(&mut store, "dec", width, hidden, &mut rng);
        let readout = Linear::new(&mut store, "dec.readout", hidden, width, &mut rng);
        Ok(PaddedGru {
            config: PaddedGruConfig {
                width,
                hidden,
                horizon,
            },
            store,
            encoder,
            decoder,
            readout,
        })
    }

    pub fn config(&self) -> &PaddedGruConfig {
        &self.config
    }

    pub fn count_params(&self) -> usize {
        self.store.count()
    }

    fn mask(&self, instances: usize, time: usize, ids: &[usize]) -> Tensor3 {
        let mut m = Tensor3::zeros(Dims::new(instances, time, self.config.width));
        for i in 0..instances {
            for t in 0..time {
                for &s in ids {
                    m.set(i, t, s, 1.0);
                }
            }
        }
        m
    }

    /// `(N, T, width) -> (N, H, width)`.
    fn forward(&self, tape: &mut Tape, bound: &Bound, x: &Tensor3, ids: &[usize]) -> Result<Var> {
        let d = x.dims();
        let xv = tape.constant(x.clone());
        let mask = tape.constant(self.mask(d.instances, 1, ids));
        let mut h = self.encoder.forward_last(tape, bound, xv, None)?;
        let mut prev = tape.slice_time(xv, d.time - 1, 1)?;
        let mut outs = Vec::with_capacity(self.config.horizon);
        for _ in 0..self.config.horizon {
            h = self.decoder.forward_last(tape, bound, prev, Some(h))?;
            let step = self.readout.forward(tape, bound, h)?;
            let step = tape.mul(step, mask)?;
            prev = tape.add(prev, step)?;
            outs.push(prev);
        }
        tape.concat_time(&outs)
    }

    fn check_horizon(&self, ep: &Episode) -> Result<()> {
        if ep.horizon() != self.config.horizon {
            return Err(Error::invalid(format!(
                "episode horizon {} differs from model horizon {}",
                ep.horizon(),
                self.config.horizon
            )));
        }
        Ok(())
    }

    /// Mean squared error over real sensors of padded predictions.
    pub fn masked_mse(
        tape: &mut Tape,
        pred: Var,
        target: &Tensor3,
        mask: &Tensor3,
    ) -> Result<Var> {
        let count: f64 = mask.sum();
        if count == 0.0 {
            return Err(Error::invalid("mask selects no entries"));
        }
        let y = tape.constant(target.clone());
        let m = tape.constant(mask.clone());
        let diff = tape.sub(pred, y)?;
        let diff = tape.mul(diff, m)?;
        let sq = tape.mul(diff, diff)?;
        let total = tape.sum_all(sq);
        Ok(tape.scale(total, 1.0 / count))
    }
}

fn stack_instances(a: &Tensor3, b: &Tensor3) -> Result<Tensor3> {
    let (da, db) = (a.dims(), b.dims());
    if da.time != db.time || da.channels != db.channels {
        return Err(Error::Shape {
            op: "stack_instances",
            lhs: da,
            rhs: db,
        });
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor3::from_vec(Dims::new(da.instances + db.instances, da.time, da.channels), data)
}

impl Forecaster for PaddedGru {
    fn name(&self) -> String {
        "padded-gru".into()
    }

    fn forecast_episode(&self, ep: &Episode) -> Result<Tensor3> {
        self.check_horizon(ep)?;
        let ids = ep.graph.ids();
        let x = pad_channels(&ep.query_x, ids, self.config.width)?;
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let y = self.forward(&mut tape, &bound, &x, ids)?;
        tape.value(y).select_channels(ids)
    }
}

impl Trainable for PaddedGru {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Every window of the episode, support and query alike, is a training
    /// example.
    fn loss_and_grads(&self, ep: &Episode) -> Result<(f64, Vec<Tensor3>)> {
        self.check_horizon(ep)?;
        let ids = ep.graph.ids();
        let w = self.config.width;
        let x = pad_channels(&stack_instances(&ep.support_x, &ep.query_x)?, ids, w)?;
        let y = pad_channels(&stack_instances(&ep.support_y, &ep.query_y)?, ids, w)?;
        let mask = self.mask(y.dims().instances, y.dims().time, ids);
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let pred = self.forward(&mut tape, &bound, &x, ids)?;
        let loss = PaddedGru::masked_mse(&mut tape, pred, &y, &mask)?;
        let value = tape.value(loss).item();
        let mut grads = tape.backward(loss)?;
        Ok((value, bound.collect(&mut grads, &self.store)))
    }
}
