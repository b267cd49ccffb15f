use crate::data::MotionRecording;
use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Input frames `start..start+T` and the following target frames `..+H`.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub start: usize,
    /// `(1, T, sensors)`
    pub input: Tensor3,
    /// `(1, H, sensors)`
    pub target: Tensor3,
}

/// `floor((frames - T - H) / stride) + 1`, or 0 when the recording is too short.
pub fn window_count(frames: usize, input_len: usize, horizon: usize, stride: usize) -> usize {
    if stride == 0 || frames < input_len + horizon {
        0
    } else {
        (frames - input_len - horizon) / stride + 1
    }
}

pub fn window_split(
    rec: &MotionRecording,
    input_len: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<Window>> {
    if input_len == 0 || horizon == 0 || stride == 0 {
        return Err(Error::invalid(format!(
            "window lengths and stride must be positive (T={input_len}, H={horizon}, stride={stride})"
        )));
    }
    let n = window_count(rec.frame_count(), input_len, horizon, stride);
    (0..n)
        .map(|k| {
            let start = k * stride;
            Ok(Window {
                start,
                input: rec.frames().slice_time(start, input_len)?,
                target: rec.frames().slice_time(start + input_len, horizon)?,
            })
        })
        .collect()
}
