//! Motion recordings: synthetic generation, exponential-map text files,
//! windowing and per-channel normalisation.

mod expmap;
mod normalize;
mod synthetic;
mod window;

pub use expmap::{
    load_expmap_dir, load_expmap_dir_with, parse_expmap, parse_sequence_name, write_expmap,
    LoadOptions, RecordingKey,
};
pub use normalize::{normalize, Normalizer};
pub use synthetic::{
    default_actions, generate_catalog, generate_recording, SyntheticActionSpec, SyntheticConfig,
    TEST_ACTIONS, TRAIN_ACTIONS,
};
pub use window::{window_count, window_split, Window};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// One continuous sequence, frames × sensors, at 25 fps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionRecording {
    pub action: String,
    pub subject: u32,
    /// `(1, frames, sensors)`.
    frames: Tensor3,
}

impl MotionRecording {
    pub fn new(action: impl Into<String>, subject: u32, frames: Tensor3) -> Result<Self> {
        if frames.dims().instances != 1 {
            return Err(Error::invalid(format!(
                "recording must have one instance, got {}",
                frames.dims()
            )));
        }
        Ok(MotionRecording {
            action: action.into(),
            subject,
            frames,
        })
    }

    pub fn frames(&self) -> &Tensor3 {
        &self.frames
    }

    pub fn frame_count(&self) -> usize {
        self.frames.dims().time
    }

    pub fn sensor_count(&self) -> usize {
        self.frames.dims().channels
    }

    pub fn get(&self, frame: usize, sensor: usize) -> f64 {
        self.frames.get(0, frame, sensor)
    }
}

/// Which subjects a query may draw from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subjects {
    All,
    Only(u32),
    AllBut(u32),
}

impl Subjects {
    pub fn contains(self, subject: u32) -> bool {
        match self {
            Subjects::All => true,
            Subjects::Only(s) => subject == s,
            Subjects::AllBut(s) => subject != s,
        }
    }
}

/// Immutable set of recordings, queried by action and subject.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    recordings: Vec<MotionRecording>,
}

impl Catalog {
    pub fn new(recordings: Vec<MotionRecording>) -> Result<Self> {
        if let Some(first) = recordings.first() {
            let width = first.sensor_count();
            if let Some(bad) = recordings.iter().find(|r| r.sensor_count() != width) {
                return Err(Error::invalid(format!(
                    "recording {}/S{} has {} sensors, expected {width}",
                    bad.action,
                    bad.subject,
                    bad.sensor_count()
                )));
            }
        }
        Ok(Catalog { recordings })
    }

    pub fn recordings(&self) -> &[MotionRecording] {
        &self.recordings
    }

    pub fn len(&self) -> usize {
        self.recordings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recordings.is_empty()
    }

    pub fn sensor_count(&self) -> Option<usize> {
        self.recordings.first().map(MotionRecording::sensor_count)
    }

    pub fn select<'a>(
        &'a self,
        action: &'a str,
        subjects: Subjects,
    ) -> impl Iterator<Item = &'a MotionRecording> + 'a {
        self.recordings
            .iter()
            .filter(move |r| r.action == action && subjects.contains(r.subject))
    }

    /// Sorted, de-duplicated action names.
    pub fn actions(&self) -> Vec<String> {
        let mut a: Vec<String> = self.recordings.iter().map(|r| r.action.clone()).collect();
        a.sort();
        a.dedup();
        a
    }

    pub fn map(&self, f: impl Fn(&MotionRecording) -> MotionRecording) -> Catalog {
        Catalog {
            recordings: self.recordings.iter().map(f).collect(),
        }
    }
}
