use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hetmotion::config::{Dataset, RunConfig};
use hetmotion::data::{generate_catalog, write_expmap};
use hetmotion::episode::GraphMode;
use hetmotion::eval::{evaluate, forecast_traces, Reduction, HORIZONS_MS};
use hetmotion::graph::{sample_many, subgraph_stats};
use hetmotion::model::{write_atomic, Checkpoint, Forecaster, Trainable, ZeroVelocity};
use hetmotion::train::{meta_train_validated, meta_train_with};
use hetmotion::{GraphHetNet, MotionGraph, SamplerConfig, Variant};

const CONFIG: &str = "config.json";
const LOSSES: &str = "losses.csv";
const REPORT_CSV: &str = "report.csv";
const REPORT_JSON: &str = "report.json";
const CHECKPOINT: &str = "checkpoint.bin";

#[derive(Parser)]
#[command(name = "hetmotion", version, about = "Few-shot motion forecasting on heterogeneous sensor graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train a forecaster and write config, losses and checkpoint.
    Train {
        #[arg(long)]
        run_dir: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Evaluate a trained or baseline model on held-out tasks.
    Eval {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = ModelKind::Checkpoint)]
        model: ModelKind,
        /// Defaults to <run-dir>/checkpoint.bin.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Seed of the test-task stream; the run seed by default.
        #[arg(long)]
        eval_seed: Option<u64>,
        /// Write observed, target and predicted series of the first task.
        #[arg(long)]
        traces: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Subgraph statistics of the sampler.
    SampleStats {
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long, default_value_t = 1)]
        min_vertices: usize,
        #[arg(long)]
        max_vertices: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Write synthetic recordings as exponential-map text files.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print the configuration and arrays of a checkpoint.
    InspectCheckpoint { path: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    /// The network stored in the checkpoint.
    Checkpoint,
    ZeroVelocity,
}

/// Settings shared by every command that builds a data set. Flags override
/// the config file, which overrides the defaults.
#[derive(Args, Default)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use synthetic data even if the config names a data directory.
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    graph_file: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batches: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    residual: Option<bool>,
    #[arg(long)]
    mode: Option<GraphMode>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    max_vertices: Option<usize>,
    #[arg(long)]
    coupling: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    test_subject: Option<u32>,
    #[arg(long)]
    eval_tasks: Option<usize>,
    #[arg(long)]
    reduction: Option<Reduction>,
    /// Meta-train actions held out to pick the best epoch, comma separated.
    #[arg(long, value_delimiter = ',')]
    val_actions: Option<Vec<String>>,
    #[arg(long)]
    val_tasks: Option<usize>,
}

impl RunArgs {
    fn resolve(&self, fallback: Option<&Path>) -> anyhow::Result<RunConfig> {
        let file = self.config.as_deref().or(fallback.filter(|p| p.exists()));
        let mut cfg = match file {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                RunConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag.clone() { cfg.$field = v; })*
            };
        }
        set!(seed => seed, epochs => epochs, batches => batches_per_epoch, lr => lr,
             jobs => jobs, variant => variant, hidden => hidden, residual => residual,
             mode => mode, p => p, coupling => coupling, noise => noise,
             test_subject => test_subject, eval_tasks => eval_tasks, reduction => reduction,
             val_actions => val_actions, val_tasks => val_tasks);
        if self.data_dir.is_some() {
            cfg.data_dir = self.data_dir.clone();
        }
        if self.synthetic {
            cfg.data_dir = None;
        }
        if self.graph_file.is_some() {
            cfg.graph_file = self.graph_file.clone();
        }
        if self.max_vertices.is_some() {
            cfg.max_vertices = self.max_vertices;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn train(run_dir: &Path, args: &RunArgs) -> anyhow::Result<()> {
    let cfg = args.resolve(None)?;
    fs::create_dir_all(run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
    write_atomic(&run_dir.join(CONFIG), cfg.to_json().as_bytes())?;
    let data = Dataset::prepare(&cfg)?;
    let mut model = GraphHetNet::new(cfg.model_config(), cfg.seed)?;
    eprintln!(
        "training {} ({} parameters) for {} epochs",
        cfg.variant,
        model.count_params(),
        cfg.epochs
    );
    let source = data.train_source(&cfg);
    let report = if cfg.val_actions.is_empty() {
        meta_train_with(&mut model, &source, &cfg.train_actions, &cfg.train_config(), |epoch, loss, _| {
            eprintln!("epoch {epoch:>4}  loss {loss:.6}")
        })?
    } else {
        let val = data.validation_episodes(&cfg)?;
        let report = meta_train_validated(
            &mut model,
            &source,
            &cfg.fitting_actions(),
            &cfg.train_config(),
            &val,
            |epoch, loss, v| eprintln!("epoch {epoch:>4}  loss {loss:.6}  val {v:.6}"),
        )?;
        if let Some(best) = report.best_epoch {
            eprintln!("keeping epoch {best}");
        }
        report
    };
    write_atomic(&run_dir.join(LOSSES), report.losses_csv().as_bytes())?;
    Checkpoint::capture(cfg.to_json(), cfg.seed, model.params()).write(run_dir.join(CHECKPOINT))?;
    println!("{} tasks seen; artifacts in {}", report.tasks_seen, run_dir.display());
    Ok(())
}

fn load_model(path: &Path) -> anyhow::Result<GraphHetNet> {
    let ckpt = Checkpoint::read(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = RunConfig::from_json(&ckpt.config).context("checkpoint configuration")?;
    let mut model = GraphHetNet::new(cfg.model_config(), ckpt.seed)?;
    model
        .params_mut()
        .load_from(ckpt.arrays.iter().map(|(n, t)| (n.as_str(), t)))?;
    Ok(model)
}

fn eval(
    run_dir: &Path,
    kind: ModelKind,
    checkpoint: Option<&Path>,
    eval_seed: Option<u64>,
    traces: Option<&Path>,
    args: &RunArgs,
) -> anyhow::Result<()> {
    let cfg = args.resolve(Some(&run_dir.join(CONFIG)))?;
    let data = Dataset::prepare(&cfg)?;
    let model: Box<dyn Forecaster> = match kind {
        ModelKind::ZeroVelocity => Box::new(ZeroVelocity),
        ModelKind::Checkpoint => {
            let path = checkpoint.map_or_else(|| run_dir.join(CHECKPOINT), Path::to_path_buf);
            let model = load_model(&path)?;
            if model.config().horizon != cfg.horizon {
                bail!(
                    "checkpoint forecasts {} frames but the run uses {}",
                    model.config().horizon,
                    cfg.horizon
                );
            }
            Box::new(model)
        }
    };
    let episodes = data.test_episodes(&cfg, eval_seed.unwrap_or(cfg.seed))?;
    let report = evaluate(model.as_ref(), &episodes, Some(&data.normalizer), cfg.reduction, &HORIZONS_MS)?;
    fs::create_dir_all(run_dir)?;
    write_atomic(&run_dir.join(REPORT_CSV), report.to_csv().as_bytes())?;
    write_atomic(&run_dir.join(REPORT_JSON), report.to_json()?.as_bytes())?;
    if let Some(path) = traces {
        let first = episodes.first().context("no test tasks")?;
        write_atomic(path, forecast_traces(model.as_ref(), first, Some(&data.normalizer))?.as_bytes())?;
    }
    print!("{}", report.table());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sample_stats(
    graph: Option<&Path>,
    samples: usize,
    p: Option<f64>,
    min_vertices: usize,
    max_vertices: Option<usize>,
    seed: u64,
    json: bool,
) -> anyhow::Result<()> {
    let full = match graph {
        Some(path) => MotionGraph::load(path)?,
        None => MotionGraph::skeleton(),
    };
    let cfg = SamplerConfig {
        p: p.unwrap_or(SamplerConfig::default().p),
        min_vertices,
        max_vertices,
        seed,
    };
    let whole = subgraph_stats(std::slice::from_ref(&full))?;
    let sampled = subgraph_stats(&sample_many(&full, &cfg, samples)?)?;
    if json {
        let value = serde_json::json!({ "full": whole, "sampled": sampled, "sampler": cfg });
        println!("{}", serde_json::to_string_pretty(&value)?);
    } else {
        println!("full graph\n{}", whole.table());
        println!("sampled (p = {})\n{}", cfg.p, sampled.table());
    }
    Ok(())
}

fn gen_synthetic(out: &Path, args: &RunArgs) -> anyhow::Result<()> {
    let cfg = args.resolve(None)?;
    let graph = match &cfg.graph_file {
        Some(path) => MotionGraph::load(path)?,
        None => MotionGraph::skeleton(),
    };
    let catalog = generate_catalog(&cfg.synthetic_config(), &graph)?;
    let mut takes = std::collections::HashMap::new();
    for rec in catalog.recordings() {
        let take = takes.entry((rec.subject, rec.action.clone())).or_insert(0u32);
        *take += 1;
        let dir = out.join(format!("S{}", rec.subject));
        fs::create_dir_all(&dir)?;
        write_expmap(dir.join(format!("{}_{}.txt", rec.action, take)), rec.frames())?;
    }
    write_atomic(&out.join("graph.txt"), graph.to_text().as_bytes())?;
    println!("{} recordings written to {}", catalog.len(), out.display());
    Ok(())
}

fn inspect(path: &Path) -> anyhow::Result<()> {
    let ckpt = Checkpoint::read(path).with_context(|| format!("reading {}", path.display()))?;
    println!("seed {}", ckpt.seed);
    println!("config {}", ckpt.config);
    let mut total = 0;
    for (name, t) in &ckpt.arrays {
        println!("{name:<32} {}", t.dims());
        total += t.len();
    }
    println!("{} arrays, {total} parameters", ckpt.arrays.len());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { run_dir, run } => train(&run_dir, &run),
        Command::Eval {
            run_dir,
            model,
            checkpoint,
            eval_seed,
            traces,
            run,
        } => eval(&run_dir, model, checkpoint.as_deref(), eval_seed, traces.as_deref(), &run),
        Command::SampleStats {
            graph,
            samples,
            p,
            min_vertices,
            max_vertices,
            seed,
            json,
        } => sample_stats(graph.as_deref(), samples, p, min_vertices, max_vertices, seed, json),
        Command::GenSynthetic { out, run } => gen_synthetic(&out, &run),
        Command::InspectCheckpoint { path } => inspect(&path),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e
                .downcast_ref::<hetmotion::Error>()
                .is_some_and(|e| matches!(e, hetmotion::Error::Config { .. }));
            ExitCode::from(if usage { 1 } else { 2 })
        }
    }
}
