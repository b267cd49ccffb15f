//! Flat run configuration and the data set it describes.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{
    default_actions, generate_catalog, load_expmap_dir_with, Catalog, LoadOptions, Normalizer,
    Subjects, SyntheticActionSpec, SyntheticConfig, TEST_ACTIONS, TRAIN_ACTIONS,
};
use crate::episode::{Episode, EpisodeConfig, GraphMode, TaskSource};
use crate::error::{Error, Result};
use crate::eval::Reduction;
use crate::graph::{MotionGraph, SamplerConfig, CALIBRATED_INCLUSION};
use crate::model::{ModelConfig, Variant};
use crate::train::TrainConfig;

/// Every setting of a run. Missing JSON fields take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    /// Exponential-map directory; synthetic data when absent.
    pub data_dir: Option<PathBuf>,
    /// Graph file; the shipped skeleton when absent.
    pub graph_file: Option<PathBuf>,
    pub frame_skip: usize,
    pub coupling: f64,
    pub noise: f64,
    /// Std of the per-frame synthetic phase innovation.
    pub drift: f64,
    /// Frames for a synthetic phase change to cross one edge.
    pub lag: usize,
    pub synthetic_frames: usize,
    pub synthetic_takes: u32,
    pub subjects: Vec<u32>,
    pub test_subject: u32,
    pub train_actions: Vec<String>,
    pub test_actions: Vec<String>,

    pub variant: Variant,
    pub hidden: usize,
    pub ds_inner_depth: usize,
    pub ds_outer_depth: usize,
    pub gcn_depth: usize,
    pub gru_depth: usize,
    pub residual: bool,

    pub lr: f64,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub jobs: usize,

    pub mode: GraphMode,
    pub p: f64,
    pub min_vertices: usize,
    pub max_vertices: Option<usize>,

    pub support: usize,
    pub query: usize,
    pub input_len: usize,
    pub horizon: usize,

    pub eval_tasks: usize,
    pub reduction: Reduction,

    /// Meta-train actions held out for best-epoch selection; none disables it.
    pub val_actions: Vec<String>,
    /// Validation tasks per held-out action.
    pub val_tasks: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::full();
        let train = TrainConfig::default();
        let ep = EpisodeConfig::default();
        let synth = SyntheticConfig::default();
        let spec = &synth.actions[0];
        RunConfig {
            seed: 0,
            data_dir: None,
            graph_file: None,
            frame_skip: 1,
            coupling: 0.5,
            noise: 0.05,
            drift: spec.drift,
            lag: spec.lag,
            synthetic_frames: synth.frames,
            synthetic_takes: synth.takes,
            subjects: synth.subjects,
            test_subject: 5,
            train_actions: TRAIN_ACTIONS.iter().map(|s| s.to_string()).collect(),
            test_actions: TEST_ACTIONS.iter().map(|s| s.to_string()).collect(),
            variant: model.variant,
            hidden: model.hidden,
            ds_inner_depth: model.ds_inner_depth,
            ds_outer_depth: model.ds_outer_depth,
            gcn_depth: model.gcn_depth,
            gru_depth: model.gru_depth,
            residual: model.residual,
            lr: train.lr,
            epochs: train.epochs,
            batches_per_epoch: train.batches_per_epoch,
            jobs: train.jobs,
            mode: GraphMode::Heterogeneous,
            p: CALIBRATED_INCLUSION,
            min_vertices: 1,
            max_vertices: None,
            support: ep.support,
            query: ep.query,
            input_len: ep.input_len,
            horizon: ep.horizon,
            eval_tasks: 500,
            reduction: Reduction::L2Scaled,
            val_actions: Vec::new(),
            val_tasks: 20,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            hidden: self.hidden,
            horizon: self.horizon,
            ds_inner_depth: self.ds_inner_depth,
            ds_outer_depth: self.ds_outer_depth,
            gcn_depth: self.gcn_depth,
            gru_depth: self.gru_depth,
            residual: self.residual,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            batches_per_epoch: self.batches_per_epoch,
            seed: self.seed,
            jobs: self.jobs,
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            p: self.p,
            min_vertices: self.min_vertices,
            max_vertices: self.max_vertices,
            seed: self.seed,
        }
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            support: self.support,
            query: self.query,
            input_len: self.input_len,
            horizon: self.horizon,
        }
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            actions: default_actions(self.coupling, self.noise)
                .into_iter()
                .map(|a| SyntheticActionSpec {
                    drift: self.drift,
                    lag: self.lag,
                    ..a
                })
                .collect(),
            subjects: self.subjects.clone(),
            takes: self.synthetic_takes,
            frames: self.synthetic_frames,
            seed: self.seed,
        }
    }

    /// Meta-train actions minus the validation actions.
    pub fn fitting_actions(&self) -> Vec<String> {
        self.train_actions
            .iter()
            .filter(|a| !self.val_actions.contains(a))
            .cloned()
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.train_config().validate()?;
        self.sampler_config().validate()?;
        self.episode_config().validate()?;
        if self.frame_skip == 0 {
            return Err(Error::Config {
                field: "frame_skip",
                msg: "must be at least 1".into(),
            });
        }
        if self.data_dir.is_none() {
            for spec in self.synthetic_config().actions {
                spec.validate()?;
            }
            if self.synthetic_takes == 0 || self.subjects.is_empty() {
                return Err(Error::Config {
                    field: "subjects",
                    msg: "synthetic data needs at least one subject and take".into(),
                });
            }
        }
        if self.train_actions.is_empty() {
            return Err(Error::Config {
                field: "train_actions",
                msg: "must not be empty".into(),
            });
        }
        if let Some(a) = self.val_actions.iter().find(|a| !self.train_actions.contains(a)) {
            return Err(Error::Config {
                field: "val_actions",
                msg: format!("`{a}` is not a meta-train action"),
            });
        }
        if self.fitting_actions().is_empty() {
            return Err(Error::Config {
                field: "val_actions",
                msg: "no meta-train action left for fitting".into(),
            });
        }
        if !self.val_actions.is_empty() && self.val_tasks == 0 {
            return Err(Error::Config {
                field: "val_tasks",
                msg: "must be at least 1".into(),
            });
        }
        if self.eval_tasks == 0 {
            return Err(Error::Config {
                field: "eval_tasks",
                msg: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

const VALIDATION_STREAM: u64 = 0x5eed_7a11;

/// Graph and normalised recordings for a run.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub graph: MotionGraph,
    pub catalog: Catalog,
    /// Statistics of the meta-train recordings, applied to all recordings.
    pub normalizer: Normalizer,
}

impl Dataset {
    pub fn prepare(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let graph = match &cfg.graph_file {
            Some(p) => MotionGraph::load(p)?,
            None => MotionGraph::skeleton(),
        };
        let raw = match &cfg.data_dir {
            None => generate_catalog(&cfg.synthetic_config(), &graph)?,
            Some(dir) => {
                let opts = LoadOptions {
                    frame_skip: cfg.frame_skip,
                    drop_zero_columns: true,
                };
                let map = load_expmap_dir_with(dir, opts)?;
                Catalog::new(map.into_values().flatten().collect())?
            }
        };
        if let Some(width) = raw.sensor_count() {
            if let Some(&bad) = graph.ids().iter().find(|&&id| id >= width) {
                return Err(Error::invalid(format!(
                    "graph reads sensor {bad} but recordings have {width} sensors"
                )));
            }
        }
        Dataset::from_catalog(graph, raw, cfg)
    }

    /// Fits the normaliser on train actions of non-test subjects and applies
    /// it everywhere.
    pub fn from_catalog(graph: MotionGraph, raw: Catalog, cfg: &RunConfig) -> Result<Self> {
        let train: Vec<_> = cfg
            .train_actions
            .iter()
            .flat_map(|a| raw.select(a, Subjects::AllBut(cfg.test_subject)))
            .collect();
        if train.is_empty() {
            return Err(Error::invalid("no meta-train recordings found"));
        }
        let normalizer = Normalizer::fit(train)?;
        let catalog = Catalog::new(
            raw.recordings()
                .iter()
                .map(|r| normalizer.apply_recording(r))
                .collect::<Result<_>>()?,
        )?;
        Ok(Dataset {
            graph,
            catalog,
            normalizer,
        })
    }

    pub fn train_source(&self, cfg: &RunConfig) -> TaskSource<'_> {
        TaskSource {
            catalog: &self.catalog,
            full_graph: &self.graph,
            subjects: Subjects::AllBut(cfg.test_subject),
            mode: cfg.mode,
            sampler: cfg.sampler_config(),
            episode: cfg.episode_config(),
        }
    }

    pub fn test_source(&self, cfg: &RunConfig) -> TaskSource<'_> {
        TaskSource {
            subjects: Subjects::Only(cfg.test_subject),
            ..self.train_source(cfg)
        }
    }

    /// `cfg.val_tasks` tasks per validation action from meta-train subjects.
    pub fn validation_episodes(&self, cfg: &RunConfig) -> Result<Vec<Episode>> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed ^ VALIDATION_STREAM);
        let src = self.train_source(cfg);
        let mut out = Vec::with_capacity(cfg.val_tasks * cfg.val_actions.len());
        for action in &cfg.val_actions {
            for _ in 0..cfg.val_tasks {
                out.push(src.episode(action, &mut rng)?);
            }
        }
        Ok(out)
    }

    /// `cfg.eval_tasks` tasks per test action from a stream seeded with `seed`.
    pub fn test_episodes(&self, cfg: &RunConfig, seed: u64) -> Result<Vec<Episode>> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let src = self.test_source(cfg);
        let mut out = Vec::with_capacity(cfg.eval_tasks * cfg.test_actions.len());
        for action in &cfg.test_actions {
            for _ in 0..cfg.eval_tasks {
                out.push(src.episode(action, &mut rng)?);
            }
        }
        Ok(out)
    }
}
