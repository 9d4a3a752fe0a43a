use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use super::config::{ExperimentConfig, ModelEntry};
use super::{BenchError, Result};
use crate::gnn::{build_model, GraphContext};
use crate::graphkit::{build_graph, mask_features, perturb_edges, write_graph, AugmentParams, GraphData};
use crate::pipeline::{load_csv, prepare, write_csv, Prepared, TabularDataset};
use crate::trainer::{evaluate, measure_run, train, LossKind, Metrics};

/// One grid cell's outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub dataset: String,
    pub model: String,
    pub augmented: bool,
    pub seed: u64,
    /// Scores, or the error that stopped the cell.
    pub outcome: std::result::Result<Metrics, String>,
}

impl ResultRow {
    pub fn metrics(&self) -> Option<&Metrics> {
        self.outcome.as_ref().ok()
    }
}

/// Optional artifact directories.
#[derive(Clone, Debug, Default)]
pub struct DumpDirs {
    pub graph: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub history: Option<PathBuf>,
}

/// Everything the model cells of one (dataset, seed, augmentation) share.
struct PreparedGraph {
    graph: GraphData,
    ctx: GraphContext,
    train_idx: Vec<usize>,
    test_idx: Vec<usize>,
}

type Shared = std::result::Result<Arc<PreparedGraph>, String>;

fn load_dataset(src: &super::config::DatasetSource) -> Result<TabularDataset> {
    match (&src.csv_path, &src.synthetic) {
        (Some(p), _) => {
            let (ds, report) = load_csv(p, &src.label_column)?;
            if report.rows_dropped > 0 {
                log::info!("{}: dropped {} rows with missing values", src.name, report.rows_dropped);
            }
            Ok(ds)
        }
        (None, Some(spec)) => Ok(spec.generate()?),
        (None, None) => Err(BenchError::Config(format!("dataset {:?} has no source", src.name))),
    }
}

fn file_stem(parts: &[&str]) -> String {
    parts
        .iter()
        .map(|p| {
            p.chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join("_")
}

fn aug_tag(augmented: bool) -> &'static str {
    if augmented {
        "aug"
    } else {
        "plain"
    }
}

fn prepare_graphs(
    cfg: &ExperimentConfig,
    name: &str,
    ds: &TabularDataset,
    seed: u64,
    dumps: &DumpDirs,
) -> Result<Vec<(bool, Arc<PreparedGraph>)>> {
    let pcfg = crate::pipeline::PipelineConfig {
        seed,
        ..cfg.pipeline.clone()
    };
    let Prepared {
        dataset,
        train_idx,
        test_idx,
        ..
    } = prepare(ds, &pcfg)?;
    if let Some(dir) = &dumps.dataset {
        let path = dir.join(format!("{}.csv", file_stem(&[name, &format!("seed{seed}")])));
        write_csv(&dataset, path, "label")?;
    }
    let base = build_graph(&dataset.features, &dataset.labels, &cfg.graph)?;
    let mut out = Vec::new();
    for &augmented in cfg.augmentation.variants() {
        let graph = if augmented {
            let params = AugmentParams {
                edge_rate: cfg.augment.edge_rate,
                feature_mask_rate: cfg.augment.feature_mask_rate,
                seed,
            };
            mask_features(&perturb_edges(&base, &params)?, &params)?
        } else {
            base.clone()
        };
        if let Some(dir) = &dumps.graph {
            let path = dir.join(format!(
                "{}.graph",
                file_stem(&[name, &format!("seed{seed}"), aug_tag(augmented)])
            ));
            write_graph(&graph, std::io::BufWriter::new(std::fs::File::create(path)?))?;
        }
        let ctx = GraphContext::from_graph(&graph)?;
        out.push((
            augmented,
            Arc::new(PreparedGraph {
                graph,
                ctx,
                train_idx: train_idx.clone(),
                test_idx: test_idx.clone(),
            }),
        ));
    }
    Ok(out)
}

struct Cell {
    dataset: String,
    model: ModelEntry,
    augmented: bool,
    seed: u64,
    shared: Shared,
}

fn run_cell(cfg: &ExperimentConfig, cell: &Cell, dumps: &DumpDirs) -> std::result::Result<Metrics, String> {
    let prepared = cell.shared.as_ref().map_err(Clone::clone)?;
    let num_classes = prepared.graph.num_classes.max(2);
    let tcfg = crate::trainer::TrainConfig {
        seed: cell.seed,
        ..cfg.train.clone()
    };
    let binary = tcfg.loss.resolve(num_classes).map_err(|e| e.to_string())? == LossKind::Binary;
    let spec = cell
        .model
        .to_spec(num_classes, binary, cell.seed)
        .map_err(|e| e.to_string())?;
    let (result, secs, mb) = measure_run(|| -> std::result::Result<_, String> {
        let mut model = build_model(&spec, prepared.graph.num_features()).map_err(|e| e.to_string())?;
        let g = &prepared.graph;
        let history =
            train(model.as_mut(), &prepared.ctx, &g.y, &prepared.train_idx, &tcfg).map_err(|e| e.to_string())?;
        let metrics = evaluate(model.as_ref(), &prepared.ctx, &g.y, &prepared.test_idx, num_classes)
            .map_err(|e| e.to_string())?;
        Ok((history, metrics))
    });
    let (history, mut metrics) = result?;
    if let Some(dir) = &dumps.history {
        let stem = file_stem(&[
            &cell.dataset,
            &cell.model.display_name(),
            aug_tag(cell.augmented),
            &format!("seed{}", cell.seed),
        ]);
        let file = std::fs::File::create(dir.join(format!("{stem}.csv"))).map_err(|e| e.to_string())?;
        history
            .write_csv(std::io::BufWriter::new(file))
            .map_err(|e| e.to_string())?;
    }
    metrics.time_seconds = secs;
    metrics.memory_mb = mb;
    Ok(metrics)
}

/// Runs every (dataset, model, augmentation, seed) cell on up to `jobs`
/// worker threads. Failures become error rows; rows come back in grid order.
pub fn run_grid(cfg: &ExperimentConfig, seeds: &[u64], jobs: usize, dumps: &DumpDirs) -> Vec<ResultRow> {
    for dir in [&dumps.graph, &dumps.dataset, &dumps.history].into_iter().flatten() {
        if let Err(e) = std::fs::create_dir_all(dir) {
            log::warn!("cannot create {}: {e}", dir.display());
        }
    }
    let mut cells = Vec::new();
    for src in &cfg.datasets {
        let loaded = load_dataset(src).map_err(|e| e.to_string());
        for &seed in seeds {
            let mut graphs: BTreeMap<bool, Shared> = BTreeMap::new();
            match &loaded {
                Ok(ds) => match prepare_graphs(cfg, &src.name, ds, seed, dumps) {
                    Ok(list) => graphs.extend(list.into_iter().map(|(a, g)| (a, Ok(g)))),
                    Err(e) => graphs.extend(cfg.augmentation.variants().iter().map(|&a| (a, Err(e.to_string())))),
                },
                Err(e) => graphs.extend(cfg.augmentation.variants().iter().map(|&a| (a, Err(e.clone())))),
            }
            for model in &cfg.models {
                for (&augmented, shared) in &graphs {
                    cells.push(Cell {
                        dataset: src.name.clone(),
                        model: model.clone(),
                        augmented,
                        seed,
                        shared: shared.clone(),
                    });
                }
            }
        }
    }
    let results: Mutex<Vec<Option<ResultRow>>> = Mutex::new(vec![None; cells.len()]);
    let next = AtomicUsize::new(0);
    let workers = jobs.clamp(1, cells.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = cells.get(i) else { break };
                let outcome = run_cell(cfg, cell, dumps);
                if let Err(e) = &outcome {
                    log::warn!(
                        "{} / {} / {} / seed {}: {e}",
                        cell.dataset,
                        cell.model.display_name(),
                        aug_tag(cell.augmented),
                        cell.seed
                    );
                }
                let row = ResultRow {
                    dataset: cell.dataset.clone(),
                    model: cell.model.display_name(),
                    augmented: cell.augmented,
                    seed: cell.seed,
                    outcome,
                };
                results.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(row);
            });
        }
    });
    results
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .map(|r| r.expect("every cell produces a row"))
        .collect()
}
