//! The `vinecast` command line: prior training, data and grid synthesis,
//! benchmarking, prediction and risk maps.

pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;
use vinecast::baselines::BinaryClassifier;
use vinecast::eval::{
    auc_csv, generate_vineyard_like, read_feature_csv, report_json, roc_csv, roc_svg, round6, run_benchmark, shap_feature_ranking,
    ModelSpec, TabularDataset, TargetMode,
};
use vinecast::geomap::{aggregate_blocks, block_csv, demo_grid, predict_grid, render_png, PixelGrid};
use vinecast::pfn::{file, train_offline, PfnClassifier, PfnWeights};

pub use config::RunConfig;

/// Weights shipped with the binary, produced by `prior-train` with the
/// configuration in `assets/default.toml`.
pub const DEFAULT_WEIGHTS: &[u8] = include_bytes!("../assets/default.pfnw");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] vinecast::Error),
}

impl CliError {
    /// 2 for usage, configuration and input problems, 3 for numeric
    /// failures, 4 for model failures.
    pub fn exit_code(&self) -> i32 {
        use vinecast::Error as E;
        match self {
            Self::Usage(_) | Self::Config(_) => 2,
            Self::Core(E::Divergence { .. } | E::Numeric(_)) => 3,
            Self::Core(E::Model { .. }) => 4,
            Self::Core(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "vinecast", version, about = "Prior-fitted network classification and disease-risk maps")]
pub struct Cli {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a PFN on synthetic tasks from the prior and save its weights.
    PriorTrain {
        #[arg(long)]
        out: PathBuf,
        /// Overrides `pfn.training.steps`.
        #[arg(long)]
        steps: Option<usize>,
        /// Overrides `pfn.training.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a synthetic vineyard-like dataset.
    SynthData {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1335)]
        rows: usize,
        #[arg(long, default_value_t = 450)]
        features: usize,
    },
    /// Compare the PFN against the baselines over repeated splits.
    Benchmark {
        #[arg(long)]
        data: PathBuf,
        /// Defaults to the shipped weights.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Overrides `eval.seeds`.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Directory for ROC curves (CSV and SVG).
        #[arg(long)]
        roc_dir: Option<PathBuf>,
        /// Overrides `eval.top_k`; 0 keeps every feature.
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Positive-class probabilities for query rows given labelled rows.
    Predict {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `preprocess.ensembles`.
        #[arg(long)]
        ensembles: Option<usize>,
        /// Overrides `eval.top_k`; 0 keeps every feature.
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Render a probability heat map of a pixel grid.
    Map {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-block mean probabilities as CSV.
        #[arg(long)]
        aggregate: Option<PathBuf>,
        #[arg(long)]
        ensembles: Option<usize>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Write a demo pixel grid whose blocks are seeded from dataset rows.
    SynthGrid {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 48)]
        height: usize,
        #[arg(long, default_value_t = 4)]
        blocks_x: usize,
        #[arg(long, default_value_t = 3)]
        blocks_y: usize,
    },
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| CliError::Usage(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn read_dataset(path: &Path) -> Result<TabularDataset, CliError> {
    Ok(TabularDataset::read_csv(read(path)?.as_slice())?)
}

fn load_weights(path: Option<&Path>) -> Result<PfnWeights<f32>, CliError> {
    Ok(match path {
        Some(p) => file::from_bytes(&read(p)?)?,
        None => file::from_bytes(DEFAULT_WEIGHTS)?,
    })
}

/// The training rows restricted to the top-k SHAP features (all when k is 0
/// or at least the feature count), with the kept names.
fn select_top_features(data: &TabularDataset, cfg: &RunConfig, top_k: usize) -> Result<(TabularDataset, Vec<String>), CliError> {
    let data = if top_k > 0 && top_k < data.n_features() {
        let y = data.binary_labels()?;
        data.select_features(&shap_feature_ranking(&data.x, &y, &cfg.benchmark(), top_k)?)?
    } else {
        data.clone()
    };
    let names = data.feature_names.clone();
    Ok((data, names))
}

fn positive(n: usize, what: &str) -> Result<usize, CliError> {
    if n == 0 {
        return Err(CliError::Usage(format!("{what} must be positive")));
    }
    Ok(n)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::PriorTrain { out, steps, seed } => {
            let opts = &mut cfg.pfn.training;
            opts.steps = steps.unwrap_or(opts.steps);
            opts.seed = seed.unwrap_or(opts.seed);
            positive(opts.steps, "--steps")?;
            let mut window = 0.0;
            let outcome = train_offline::<f32>(&cfg.prior, &cfg.pfn.architecture, &cfg.pfn.training, |step, loss, _| {
                window += loss;
                let done = step + 1;
                if done % 50 == 0 || done == cfg.pfn.training.steps {
                    let n = if done % 50 == 0 { 50 } else { done % 50 };
                    eprintln!("step {done} loss {:.4}", window / n as f64);
                    window = 0.0;
                }
            })?;
            write_atomic(&out, &file::to_bytes(&outcome.weights)?)
        }
        Command::SynthData { seed, out, rows, features } => {
            positive(features, "--features")?;
            if rows < 2 {
                return Err(CliError::Usage("--rows must be at least 2".into()));
            }
            let data = generate_vineyard_like(seed, rows, features)?;
            let mut bytes = Vec::new();
            data.write_csv(&mut bytes)?;
            write_atomic(&out, &bytes)
        }
        Command::Benchmark { data, weights, seeds, out, roc_dir, top_k } => {
            cfg.eval.seeds = positive(seeds.unwrap_or(cfg.eval.seeds) as usize, "--seeds")? as u64;
            cfg.eval.top_k = top_k.unwrap_or(cfg.eval.top_k);
            let dataset = read_dataset(&data)?;
            let weights = load_weights(weights.as_deref())?;
            let bench = cfg.benchmark();
            let report = run_benchmark(&ModelSpec::standard(), &dataset, &bench, Some(&weights), &|seed| eprintln!("seed {seed} done"))?;
            if let Some(dir) = roc_dir {
                std::fs::create_dir_all(&dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
                for c in &report.roc {
                    write_atomic(&dir.join(format!("roc-{}-{}.csv", c.model, c.target_mode.name())), roc_csv(c).as_bytes())?;
                }
                write_atomic(&dir.join("auc.csv"), auc_csv(&report.roc).as_bytes())?;
                for mode in TargetMode::ALL {
                    let curves: Vec<_> = report.roc.iter().filter(|c| c.target_mode == mode).cloned().collect();
                    let svg = roc_svg(&curves, &format!("ROC, {} targets, split seed {}", mode.name(), bench.roc_seed));
                    write_atomic(&dir.join(format!("roc-{}.svg", mode.name())), svg.as_bytes())?;
                }
            }
            write_atomic(&out, report_json(&report)?.as_bytes())
        }
        Command::Predict { data, query, weights, out, ensembles, top_k } => {
            let members = positive(ensembles.unwrap_or(cfg.preprocess.ensembles), "--ensembles")?;
            let train = read_dataset(&data)?;
            let (train, names) = select_top_features(&train, &cfg, top_k.unwrap_or(cfg.eval.top_k))?;
            let x_query = read_feature_csv(read(&query)?.as_slice(), &names)?;
            let weights = load_weights(weights.as_deref())?;
            let y = train.binary_labels()?;
            let model = PfnClassifier::new(&weights, train.x, y, members)?;
            let probs = model.predict_proba(&x_query)?;
            let mut csv = String::from("row,probability\n");
            for (i, p) in probs.iter().enumerate() {
                csv.push_str(&format!("{i},{}\n", round6(*p)));
            }
            write_atomic(&out, csv.as_bytes())
        }
        Command::Map { grid, train, weights, out, aggregate, ensembles, top_k } => {
            let members = positive(ensembles.unwrap_or(cfg.preprocess.ensembles), "--ensembles")?;
            let grid = PixelGrid::from_bytes(&read(&grid)?)?;
            let train = read_dataset(&train)?;
            let (train, names) = select_top_features(&train, &cfg, top_k.unwrap_or(cfg.eval.top_k))?;
            let grid = grid.select_features(&names)?;
            let weights = load_weights(weights.as_deref())?;
            let y = train.binary_labels()?;
            let model = PfnClassifier::new(&weights, train.x, y, members)?;
            let raster = predict_grid(&model, &grid, None)?;
            if let Some(path) = aggregate {
                let ids = grid.block_id.as_ref().ok_or_else(|| CliError::Usage("grid has no block ids to aggregate".into()))?;
                write_atomic(&path, block_csv(&aggregate_blocks(&raster, ids)?).as_bytes())?;
            }
            write_atomic(&out, &render_png(&raster, &cfg.map.colormap())?)
        }
        Command::SynthGrid { data, seed, out, width, height, blocks_x, blocks_y } => {
            let dataset = read_dataset(&data)?;
            let grid = demo_grid(&dataset, seed, width, height, blocks_x, blocks_y)?;
            write_atomic(&out, &grid.to_bytes())
        }
    }
}

/// Caps the global worker pool at `PFN_THREADS` when set.
pub fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("PFN_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("PFN_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure threads: {e}")))?;
    }
    Ok(())
}
