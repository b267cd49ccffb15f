use serde::{Deserialize, Serialize};

use crate::data::MotionRecording;
use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Per-sensor z-score statistics, indexed by sensor id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const MIN_STD: f64 = 1e-12;

impl Normalizer {
    pub fn identity(sensors: usize) -> Self {
        Normalizer {
            mean: vec![0.0; sensors],
            std: vec![1.0; sensors],
        }
    }

    /// Statistics over every frame of the given recordings. A channel with
    /// zero variance keeps std 1, so it is only centred.
    pub fn fit<'a>(recordings: impl IntoIterator<Item = &'a MotionRecording>) -> Result<Self> {
        let recs: Vec<&MotionRecording> = recordings.into_iter().collect();
        let first = recs
            .first()
            .ok_or_else(|| Error::invalid("normalisation statistics need at least one recording"))?;
        let s = first.sensor_count();
        let mut sum = vec![0.0; s];
        let mut n = 0usize;
        for r in &recs {
            if r.sensor_count() != s {
                return Err(Error::invalid("recordings differ in sensor count"));
            }
            for f in 0..r.frame_count() {
                for (c, acc) in sum.iter_mut().enumerate() {
                    *acc += r.get(f, c);
                }
            }
            n += r.frame_count();
        }
        let mean: Vec<f64> = sum.iter().map(|v| v / n as f64).collect();
        let mut ss = vec![0.0; s];
        for r in &recs {
            for f in 0..r.frame_count() {
                for (c, acc) in ss.iter_mut().enumerate() {
                    *acc += (r.get(f, c) - mean[c]).powi(2);
                }
            }
        }
        let std = ss
            .iter()
            .map(|v| {
                let sd = (v / n as f64).sqrt();
                if sd < MIN_STD {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Normalizer { mean, std })
    }

    pub fn sensors(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, t: &Tensor3, ids: &[usize]) -> Result<()> {
        if t.dims().channels != ids.len() || ids.iter().any(|&i| i >= self.sensors()) {
            return Err(Error::invalid(format!(
                "tensor {} does not match {} channel ids over {} sensors",
                t.dims(),
                ids.len(),
                self.sensors()
            )));
        }
        Ok(())
    }

    /// `(x - mean) / std` where channel `k` of `t` is sensor `ids[k]`.
    pub fn apply(&self, t: &Tensor3, ids: &[usize]) -> Result<Tensor3> {
        self.check(t, ids)?;
        let c = ids.len();
        let mut out = t.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let s = ids[k % c];
            *v = (*v - self.mean[s]) / self.std[s];
        }
        Ok(out)
    }

    pub fn invert(&self, t: &Tensor3, ids: &[usize]) -> Result<Tensor3> {
        self.check(t, ids)?;
        let c = ids.len();
        let mut out = t.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let s = ids[k % c];
            *v = *v * self.std[s] + self.mean[s];
        }
        Ok(out)
    }

    pub fn apply_recording(&self, rec: &MotionRecording) -> Result<MotionRecording> {
        let ids: Vec<usize> = (0..rec.sensor_count()).collect();
        MotionRecording::new(rec.action.clone(), rec.subject, self.apply(rec.frames(), &ids)?)
    }
}

/// Fits statistics on `recordings` and returns them normalised.
pub fn normalize(recordings: &[MotionRecording]) -> Result<(Vec<MotionRecording>, Normalizer)> {
    let norm = Normalizer::fit(recordings)?;
    let out = recordings
        .iter()
        .map(|r| norm.apply_recording(r))
        .collect::<Result<_>>()?;
    Ok((out, norm))
}
