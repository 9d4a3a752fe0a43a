use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use super::config::{ExperimentConfig, OutputFormat, SEED_ENV};
use super::run::{run_grid, DumpDirs};
use super::table::emit_table;
use super::BenchError;
use crate::graphkit::{build_graph, write_graph, ConstructionParams, Metric};
use crate::pipeline::{load_csv, write_csv, Scaler, SyntheticSpec};

const EXIT_OK: i32 = 0;
const EXIT_CONFIG: i32 = 1;
const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "nidsgraph",
    version,
    about = "Graph neural network benchmarks for intrusion detection data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiment grid described by a config file.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Single seed overriding the config and the environment.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; overrides the config.
        #[arg(long)]
        jobs: Option<usize>,
        /// Directory for constructed graphs.
        #[arg(long)]
        dump_graph: Option<PathBuf>,
        /// Directory for preprocessed datasets.
        #[arg(long)]
        dump_dataset: Option<PathBuf>,
        /// Directory for per-epoch loss histories.
        #[arg(long)]
        dump_history: Option<PathBuf>,
    },
    /// Build a similarity graph from a CSV file.
    ConstructGraph {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        dump_graph: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value = "label")]
        label_column: String,
        #[arg(long, value_enum, default_value_t = MetricArg::Euclidean)]
        metric: MetricArg,
        /// Use features as read instead of standardizing them.
        #[arg(long)]
        raw: bool,
    },
    /// Write a synthetic labeled dataset as CSV.
    Synth {
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        features: usize,
        #[arg(long, default_value_t = 4.0)]
        separation: f64,
        #[arg(long, default_value_t = 0.3)]
        imbalance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check a config file without running it.
    ValidateConfig { path: PathBuf },
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum MetricArg {
    Euclidean,
    Cosine,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Config(m) => Failure::Config(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Entry point behind the binary; returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Bench {
            config,
            seed,
            jobs,
            dump_graph,
            dump_dataset,
            dump_history,
        } => bench(
            &config,
            seed,
            jobs,
            DumpDirs {
                graph: dump_graph,
                dataset: dump_dataset,
                history: dump_history,
            },
        ),
        Command::ConstructGraph {
            input,
            dump_graph,
            tau,
            k,
            label_column,
            metric,
            raw,
        } => construct(&input, &dump_graph, tau, k, &label_column, metric, raw),
        Command::Synth {
            samples,
            classes,
            out,
            features,
            separation,
            imbalance,
            seed,
        } => synth(
            SyntheticSpec {
                samples,
                classes,
                features,
                separation,
                imbalance,
                seed,
            },
            &out,
        ),
        Command::ValidateConfig { path } => validate(&path),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            EXIT_CONFIG
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            EXIT_RUNTIME
        }
    }
}

fn load_valid(path: &std::path::Path) -> Result<ExperimentConfig, Failure> {
    let cfg = ExperimentConfig::load(path)?;
    for w in cfg.validate()? {
        log::warn!("{w}");
    }
    Ok(cfg)
}

fn validate(path: &std::path::Path) -> Result<(), Failure> {
    load_valid(path)?;
    println!("OK");
    Ok(())
}

fn bench(path: &std::path::Path, seed: Option<u64>, jobs: Option<usize>, dumps: DumpDirs) -> Result<(), Failure> {
    let cfg = load_valid(path)?;
    let env = std::env::var(SEED_ENV).ok();
    let seeds = cfg.resolve_seeds(seed, env.as_deref())?;
    let jobs = jobs.unwrap_or(cfg.jobs);
    if jobs == 0 {
        return Err(Failure::Config("--jobs must be at least 1".into()));
    }
    let rows = run_grid(&cfg, &seeds, jobs, &dumps);
    let text = emit_table(&rows, cfg.output.format);
    match &cfg.output.path {
        Some(p) => std::fs::write(p, &text).map_err(|e| runtime(format!("cannot write {}: {e}", p.display())))?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(runtime)?;
            out.flush().map_err(runtime)?;
        }
    }
    if cfg.output.format == OutputFormat::Csv && cfg.output.path.is_some() {
        log::info!("{} rows written", rows.len());
    }
    if rows.iter().all(|r| r.outcome.is_err()) {
        return Err(runtime("every grid cell failed"));
    }
    Ok(())
}

fn construct(
    input: &std::path::Path,
    out: &std::path::Path,
    tau: f64,
    k: usize,
    label_column: &str,
    metric: MetricArg,
    raw: bool,
) -> Result<(), Failure> {
    let params = ConstructionParams {
        metric: match metric {
            MetricArg::Euclidean => Metric::Euclidean,
            MetricArg::Cosine => Metric::Cosine,
        },
        tau,
        k,
        ..ConstructionParams::default()
    };
    if !(tau > 0.0) || k == 0 {
        return Err(Failure::Config("--tau must be positive and --k at least 1".into()));
    }
    let (ds, _) = load_csv(input, label_column).map_err(runtime)?;
    let x = if raw {
        ds.features.clone()
    } else {
        Scaler::fit(&ds.features)
            .and_then(|s| s.transform(&ds.features))
            .map_err(runtime)?
    };
    let g = build_graph(&x, &ds.labels, &params).map_err(runtime)?;
    let file = std::fs::File::create(out).map_err(|e| runtime(format!("cannot write {}: {e}", out.display())))?;
    write_graph(&g, std::io::BufWriter::new(file)).map_err(runtime)?;
    println!("nodes {} edges {}", g.num_nodes(), g.num_edges());
    Ok(())
}

fn synth(spec: SyntheticSpec, out: &std::path::Path) -> Result<(), Failure> {
    if spec.classes < 2 || spec.samples < spec.classes {
        return Err(Failure::Config(
            "need at least 2 classes and one sample per class".into(),
        ));
    }
    let ds = spec.generate().map_err(|e| Failure::Config(e.to_string()))?;
    write_csv(&ds, out, "label").map_err(runtime)?;
    println!("wrote {} rows with {} features", ds.len(), ds.num_features());
    Ok(())
}
