//! Desk-scale comparison of the forecaster against its ablation and baselines.
//!
//! Settings come from environment variables, e.g.
//! `HIDDEN=12 EPOCHS=50 cargo run --release --example lift`.

use std::time::Instant;

use hetmotion::config::{Dataset, RunConfig};
use hetmotion::eval::query_mse;
use hetmotion::model::{Forecaster, PaddedGru, ZeroVelocity, PAD_WIDTH};
use hetmotion::train::meta_train;
use hetmotion::{GraphHetNet, Variant};

fn env<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> hetmotion::Result<()> {
    let seeds: u64 = env("SEEDS", 3);
    let mut cfg = RunConfig {
        hidden: env("HIDDEN", 8),
        lr: env("LR", 1e-2),
        epochs: env("EPOCHS", 20),
        batches_per_epoch: env("BATCHES", 10),
        residual: env("RESIDUAL", true),
        max_vertices: Some(env("CAP", 8)),
        coupling: env("COUPLING", 0.5),
        noise: env("NOISE", 0.05),
        eval_tasks: env("TASKS", 50),
        drift: env("DRIFT", 0.3),
        lag: env("LAG", 10),
        ..RunConfig::default()
    };
    let ds_inner: usize = env("DS_INNER", 1);
    cfg.ds_inner_depth = ds_inner;
    cfg.gcn_depth = env("GCN", 1);
    cfg.gru_depth = env("GRU", 1);
    for seed in 0..seeds {
        cfg.seed = seed;
        let data = Dataset::prepare(&cfg)?;
        let test = data.test_episodes(&cfg, 1000 + seed)?;
        let src = data.train_source(&cfg);
        let tc = cfg.train_config();
        let zv = query_mse(&ZeroVelocity, &test)?;
        let mut line = format!("seed {seed} zero {zv:.5}");
        for variant in [Variant::GraphHetNet, Variant::DsOnly] {
            let start = Instant::now();
            let mut m = GraphHetNet::new(
                hetmotion::ModelConfig {
                    variant,
                    ..cfg.model_config()
                },
                seed,
            )?;
            let rep = meta_train(&mut m, &src, &cfg.train_actions, &tc)?;
            if env("CURVE", false) {
                eprintln!("{variant}: {:?}", rep.epoch_losses.iter().map(|l| (l * 1000.0).round() / 1000.0).collect::<Vec<_>>());
            }
            let e = query_mse(&m as &dyn Forecaster, &test)?;
            line += &format!(
                " {variant} {e:.5} (train {:.4}->{:.4}, {:.0}s)",
                rep.epoch_losses[0],
                rep.epoch_losses.last().unwrap(),
                start.elapsed().as_secs_f64()
            );
        }
        let start = Instant::now();
        let mut g = PaddedGru::new(PAD_WIDTH, env("GRU_HIDDEN", 32), cfg.horizon, seed)?;
        meta_train(&mut g, &src, &cfg.train_actions, &tc)?;
        let e = query_mse(&g, &test)?;
        line += &format!(" padded {e:.5} ({:.0}s)", start.elapsed().as_secs_f64());
        println!("{line}");
    }
    Ok(())
}
