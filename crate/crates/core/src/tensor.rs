//! Dense instance × time × channel arrays.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub instances: usize,
    pub time: usize,
    pub channels: usize,
}

impl Dims {
    pub const fn new(instances: usize, time: usize, channels: usize) -> Self {
        Dims {
            instances,
            time,
            channels,
        }
    }

    pub const fn scalar() -> Self {
        Dims::new(1, 1, 1)
    }

    pub const fn len(&self) -> usize {
        self.instances * self.time * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of `channels`-wide rows.
    pub const fn rows(&self) -> usize {
        self.instances * self.time
    }

    fn valid(&self) -> bool {
        self.instances >= 1 && self.time >= 1 && self.channels >= 1
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.instances, self.time, self.channels)
    }
}

/// Row-major 3-D array: `data[(i * T + t) * C + c]`.
///
/// Weight matrices use the same container with `instances == 1`, `time` as
/// the input width and `channels` as the output width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    dims: Dims,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(dims: Dims) -> Self {
        assert!(dims.valid(), "zero-sized axis in {dims}");
        Tensor3 {
            dims,
            data: vec![0.0; dims.len()],
        }
    }

    pub fn filled(dims: Dims, value: f64) -> Self {
        let mut t = Tensor3::zeros(dims);
        t.data.fill(value);
        t
    }

    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if !dims.valid() || data.len() != dims.len() {
            return Err(Error::BadDims(dims));
        }
        Ok(Tensor3 { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Tensor3::zeros(dims);
        for i in 0..dims.instances {
            for s in 0..dims.time {
                for c in 0..dims.channels {
                    let idx = t.index(i, s, c);
                    t.data[idx] = f(i, s, c);
                }
            }
        }
        t
    }

    pub fn scalar(value: f64) -> Self {
        Tensor3 {
            dims: Dims::scalar(),
            data: vec![value],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, t: usize, c: usize) -> usize {
        debug_assert!(i < self.dims.instances && t < self.dims.time && c < self.dims.channels);
        (i * self.dims.time + t) * self.dims.channels + c
    }

    #[inline]
    pub fn get(&self, i: usize, t: usize, c: usize) -> f64 {
        self.data[self.index(i, t, c)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, t: usize, c: usize, value: f64) {
        let idx = self.index(i, t, c);
        self.data[idx] = value;
    }

    /// The scalar value of a 1×1×1 tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.dims, Dims::scalar(), "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor3 {
        Tensor3 {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor3) {
        assert_eq!(self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, k: f64) {
        for a in &mut self.data {
            *a *= k;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Frames `start..start + len` of every instance.
    pub fn slice_time(&self, start: usize, len: usize) -> Result<Tensor3> {
        let d = self.dims;
        if len == 0 || start + len > d.time {
            return Err(Error::invalid(format!(
                "time slice {start}..{} out of range for {d}",
                start + len
            )));
        }
        let out = Dims::new(d.instances, len, d.channels);
        let mut data = Vec::with_capacity(out.len());
        for i in 0..d.instances {
            let from = self.index(i, start, 0);
            data.extend_from_slice(&self.data[from..from + len * d.channels]);
        }
        Tensor3::from_vec(out, data)
    }

    /// Instances selected by index, in the given order.
    pub fn select_instances(&self, idx: &[usize]) -> Result<Tensor3> {
        let d = self.dims;
        let block = d.time * d.channels;
        let mut data = Vec::with_capacity(idx.len() * block);
        for &i in idx {
            if i >= d.instances {
                return Err(Error::invalid(format!("instance {i} out of range for {d}")));
            }
            data.extend_from_slice(&self.data[i * block..(i + 1) * block]);
        }
        Tensor3::from_vec(Dims::new(idx.len(), d.time, d.channels), data)
    }

    /// Channels selected by index, in the given order.
    pub fn select_channels(&self, idx: &[usize]) -> Result<Tensor3> {
        let d = self.dims;
        if let Some(&c) = idx.iter().find(|&&c| c >= d.channels) {
            return Err(Error::invalid(format!("channel {c} out of range for {d}")));
        }
        let out = Dims::new(d.instances, d.time, idx.len());
        let mut data = Vec::with_capacity(out.len());
        for r in 0..d.rows() {
            let row = &self.data[r * d.channels..(r + 1) * d.channels];
            data.extend(idx.iter().map(|&c| row[c]));
        }
        Tensor3::from_vec(out, data)
    }

    /// Concatenation along the time axis.
    pub fn concat_time(parts: &[&Tensor3]) -> Result<Tensor3> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat_time of nothing"))?
            .dims;
        let mut total = 0;
        for p in parts {
            let d = p.dims;
            if d.instances != first.instances || d.channels != first.channels {
                return Err(Error::Shape {
                    op: "concat_time",
                    lhs: first,
                    rhs: d,
                });
            }
            total += d.time;
        }
        let out = Dims::new(first.instances, total, first.channels);
        let mut data = Vec::with_capacity(out.len());
        for i in 0..first.instances {
            for p in parts {
                let block = p.dims.time * p.dims.channels;
                data.extend_from_slice(&p.data[i * block..(i + 1) * block]);
            }
        }
        Tensor3::from_vec(out, data)
    }

    /// FNV-1a over the raw bit patterns; used to detect accidental mutation.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for v in &self.data {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}
