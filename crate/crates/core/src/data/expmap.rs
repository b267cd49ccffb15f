//! Comma-separated exponential-map files, one sequence per file.
//!
//! Accepted layouts inside the directory:
//!
//! - `S<subject>/<action>_<take>.txt`
//! - `S<subject>_<action>_<take>.txt`
//!
//! Other files are skipped with a warning.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::MotionRecording;
use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor3};

/// `(action, subject)`
pub type RecordingKey = (String, u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoadOptions {
    /// Keep every `frame_skip`-th frame, starting at the first.
    pub frame_skip: usize,
    /// Drop columns that are zero in every frame of every file.
    pub drop_zero_columns: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            frame_skip: 1,
            drop_zero_columns: true,
        }
    }
}

/// Rows of one file. All rows must have the same width.
pub fn parse_expmap(text: &str, origin: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| {
                v.trim().parse::<f64>().map_err(|e| Error::Parse {
                    path: origin.to_string(),
                    line: lineno,
                    msg: format!("bad value {v:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: lineno,
                    msg: format!("row has {} values, expected {}", row.len(), first.len()),
                });
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// `(action, subject, take)` from a path relative to the data directory.
pub fn parse_sequence_name(rel: &Path) -> Option<(String, u32, u32)> {
    if rel.extension()? != "txt" {
        return None;
    }
    let stem = rel.file_stem()?.to_str()?;
    let parent = rel
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|p| p.to_str());
    let subject_of = |s: &str| s.strip_prefix('S')?.parse::<u32>().ok();
    let (subject, rest) = match parent.and_then(subject_of) {
        Some(s) => (s, stem),
        None => {
            let (head, rest) = stem.split_once('_')?;
            (subject_of(head)?, rest)
        }
    };
    let (action, take) = rest.rsplit_once('_')?;
    if action.is_empty() {
        return None;
    }
    Some((action.to_lowercase(), subject, take.parse().ok()?))
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

pub fn load_expmap_dir(path: impl AsRef<Path>) -> Result<BTreeMap<RecordingKey, Vec<MotionRecording>>> {
    load_expmap_dir_with(path, LoadOptions::default())
}

/// Recordings grouped by `(action, subject)`, ordered by take number.
pub fn load_expmap_dir_with(
    path: impl AsRef<Path>,
    opts: LoadOptions,
) -> Result<BTreeMap<RecordingKey, Vec<MotionRecording>>> {
    let root = path.as_ref();
    if opts.frame_skip == 0 {
        return Err(Error::Config {
            field: "frame_skip",
            msg: "must be at least 1".into(),
        });
    }
    if !root.is_dir() {
        return Err(Error::invalid(format!(
            "{} is not a directory",
            root.display()
        )));
    }
    let mut files = Vec::new();
    collect_files(root, &mut files)?;

    let mut parsed: Vec<((String, u32, u32), Vec<Vec<f64>>)> = Vec::new();
    let mut width: Option<(usize, String)> = None;
    for file in files {
        let rel = file.strip_prefix(root).unwrap_or(&file);
        let Some(key) = parse_sequence_name(rel) else {
            log::warn!("skipping {}: name does not encode subject and action", file.display());
            continue;
        };
        let origin = file.display().to_string();
        let text = fs::read_to_string(&file).map_err(|e| Error::Parse {
            path: origin.clone(),
            line: 0,
            msg: e.to_string(),
        })?;
        let rows = parse_expmap(&text, &origin)?;
        if rows.is_empty() {
            log::warn!("skipping {origin}: no frames");
            continue;
        }
        match &width {
            Some((w, first)) if *w != rows[0].len() => {
                return Err(Error::Parse {
                    path: origin,
                    line: 1,
                    msg: format!("{} columns, but {first} has {w}", rows[0].len()),
                })
            }
            None => width = Some((rows[0].len(), origin)),
            _ => {}
        }
        parsed.push((key, rows));
    }
    let Some((width, _)) = width else {
        return Ok(BTreeMap::new());
    };

    let keep: Vec<usize> = if opts.drop_zero_columns {
        (0..width)
            .filter(|&c| parsed.iter().any(|(_, rows)| rows.iter().any(|r| r[c] != 0.0)))
            .collect()
    } else {
        (0..width).collect()
    };
    if keep.is_empty() {
        return Err(Error::invalid("every column is zero"));
    }

    parsed.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out: BTreeMap<RecordingKey, Vec<MotionRecording>> = BTreeMap::new();
    for ((action, subject, _), rows) in parsed {
        let frames: Vec<&Vec<f64>> = rows.iter().step_by(opts.frame_skip).collect();
        let mut data = Vec::with_capacity(frames.len() * keep.len());
        for r in &frames {
            data.extend(keep.iter().map(|&c| r[c]));
        }
        let t = Tensor3::from_vec(Dims::new(1, frames.len(), keep.len()), data)?;
        let rec = MotionRecording::new(action.clone(), subject, t)?;
        out.entry((action, subject)).or_default().push(rec);
    }
    Ok(out)
}

/// Writes `(1, frames, sensors)` as comma-separated rows. Values use the
/// shortest representation that parses back to the same bits.
pub fn write_expmap(path: impl AsRef<Path>, frames: &Tensor3) -> Result<()> {
    let d = frames.dims();
    if d.instances != 1 {
        return Err(Error::BadDims(d));
    }
    let mut s = String::with_capacity(d.len() * 20);
    for t in 0..d.time {
        for c in 0..d.channels {
            if c > 0 {
                s.push(',');
            }
            write!(s, "{:?}", frames.get(0, t, c)).expect("string write");
        }
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}
