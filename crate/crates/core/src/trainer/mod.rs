//! Full-graph training, evaluation and resource measurement.

mod metrics;

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gnn::{GnnError, GraphContext, Model, PairBank};
use crate::numcore::{cosine_annealing_lr, memory, softmax_rows, AdamConfig, AdamState, NumError, Tape, Tensor, Var};
use crate::rng;

pub use metrics::{accuracy, auc_macro, binary_auc, confusion_matrix, macro_prf, round2, Metrics};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("non-finite loss {loss} at epoch {epoch} (learning rate {lr})")]
    NonFiniteLoss { epoch: usize, lr: f64, loss: f64 },
    #[error("{0} node set is empty")]
    EmptyMask(&'static str),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Binary for two classes, cross-entropy otherwise.
    #[default]
    Auto,
    CrossEntropy,
    /// Sigmoid on a single logit; two classes only.
    Binary,
}

impl LossKind {
    /// Concrete loss for `num_classes`; never returns `Auto`.
    pub fn resolve(self, num_classes: usize) -> Result<LossKind> {
        match (self, num_classes) {
            (LossKind::Auto, 2) | (LossKind::Binary, 2) => Ok(LossKind::Binary),
            (LossKind::Binary, c) => Err(TrainError::Invalid(format!("binary loss needs 2 classes, got {c}"))),
            _ => Ok(LossKind::CrossEntropy),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub scheduler_t_max: usize,
    pub eta_min: f64,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 0.001,
            scheduler_t_max: 200,
            eta_min: 0.0,
            loss: LossKind::Auto,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(TrainError::Invalid("epochs must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Invalid(format!(
                "lr must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if self.scheduler_t_max == 0 {
            return Err(TrainError::Invalid("scheduler_t_max must be at least 1".into()));
        }
        if !(self.eta_min >= 0.0 && self.eta_min <= self.lr) {
            return Err(TrainError::Invalid(format!(
                "eta_min must lie in [0, lr], got {}",
                self.eta_min
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// `epoch,lr,loss` CSV with shortest round-trip floats.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,lr,loss")?;
        for r in &self.records {
            writeln!(w, "{},{:?},{:?}", r.epoch, r.lr, r.loss)?;
        }
        w.flush()
    }
}

/// Classification loss on `idx` plus the model's auxiliary term. A
/// single-column output is trained with binary cross-entropy, wider ones
/// with softmax cross-entropy.
pub fn objective(
    model: &dyn Model,
    tape: &mut Tape,
    ctx: &GraphContext,
    labels: &[usize],
    idx: &[usize],
    bank: Option<&PairBank>,
) -> Result<Var> {
    Ok(objective_with_width(model, tape, ctx, labels, idx, bank)?.0)
}

fn objective_with_width(
    model: &dyn Model,
    tape: &mut Tape,
    ctx: &GraphContext,
    labels: &[usize],
    idx: &[usize],
    bank: Option<&PairBank>,
) -> Result<(Var, usize)> {
    if idx.is_empty() {
        return Err(TrainError::EmptyMask("training"));
    }
    let out = model.forward(tape, ctx)?;
    let picked = tape.gather_rows(out.logits, idx.to_vec())?;
    let targets: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
    let width = tape.shape(picked)[1];
    let mut total = if width == 1 {
        tape.binary_cross_entropy(picked, &targets)?
    } else {
        tape.cross_entropy(picked, &targets)?
    };
    if let Some(bank) = bank {
        if let Some(aux) = model.auxiliary_loss(tape, &out, bank)? {
            total = tape.add(total, aux)?;
        }
    }
    Ok((total, width))
}

/// Trains on the nodes in `train_idx` with Adam and cosine-annealed
/// learning rate; epoch `t` uses the rate at step `t`.
pub fn train(
    model: &mut dyn Model,
    ctx: &GraphContext,
    labels: &[usize],
    train_idx: &[usize],
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    if train_idx.is_empty() {
        return Err(TrainError::EmptyMask("training"));
    }
    if labels.len() != ctx.num_nodes() {
        return Err(TrainError::Invalid(format!(
            "{} labels for {} nodes",
            labels.len(),
            ctx.num_nodes()
        )));
    }
    let num_classes = labels.iter().max().map_or(1, |m| m + 1).max(2);
    let want_binary = cfg.loss.resolve(num_classes)? == LossKind::Binary;
    let mut adam = AdamState::new(model.params(), AdamConfig::default());
    let mut pair_rng = rng::stream(cfg.seed, "pairs");
    let mut history = History::default();
    for epoch in 0..cfg.epochs {
        let lr = cosine_annealing_lr(epoch, cfg.scheduler_t_max, cfg.lr, cfg.eta_min);
        let bank = model
            .pair_capacity()
            .map(|cap| PairBank::sample(labels, train_idx, cap, &mut pair_rng));
        let mut tape = Tape::new();
        let (total, width) = objective_with_width(&*model, &mut tape, ctx, labels, train_idx, bank.as_ref())?;
        if epoch == 0 && want_binary != (width == 1) {
            return Err(TrainError::Invalid(format!(
                "{:?} loss does not match the model's output width",
                cfg.loss
            )));
        }
        let value = tape.value(total).item();
        if !value.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, lr, loss: value });
        }
        tape.backward(total)?;
        tape.write_param_grads(model.params_mut())?;
        drop(tape);
        adam.step(model.params_mut(), lr)?;
        history.records.push(EpochRecord { epoch, lr, loss: value });
    }
    Ok(history)
}

/// Class probabilities `[N x C]` and hard predictions for every node.
#[derive(Clone, Debug)]
pub struct Predictions {
    pub probs: Tensor,
    pub labels: Vec<usize>,
}

/// Runs a forward pass. A single-column output is read as a sigmoid logit
/// (prediction `p > 0.5`); wider outputs go through a softmax and argmax.
pub fn predict(model: &dyn Model, ctx: &GraphContext) -> Result<Predictions> {
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, ctx)?;
    let logits = tape.value(out.logits);
    let n = logits.rows();
    let probs = if logits.cols() == 1 {
        let mut rows = Vec::with_capacity(n * 2);
        for i in 0..n {
            let p = crate::numcore::Activation::Sigmoid.apply(logits.get(i, 0));
            rows.extend([1.0 - p, p]);
        }
        Tensor::new(vec![n, 2], rows)?
    } else {
        softmax_rows(logits)
    };
    let labels = if logits.cols() == 1 {
        (0..n).map(|i| usize::from(probs.get(i, 1) > 0.5)).collect()
    } else {
        (0..n)
            .map(|i| {
                let row = probs.row(i);
                (0..row.len()).fold(0, |best, k| if row[k] > row[best] { k } else { best })
            })
            .collect()
    };
    Ok(Predictions { probs, labels })
}

/// Scores on `test_idx`. Time and memory are left at zero; see [`measure_run`].
pub fn evaluate(
    model: &dyn Model,
    ctx: &GraphContext,
    labels: &[usize],
    test_idx: &[usize],
    num_classes: usize,
) -> Result<Metrics> {
    if test_idx.is_empty() {
        return Err(TrainError::EmptyMask("test"));
    }
    let p = predict(model, ctx)?;
    let pred: Vec<usize> = test_idx.iter().map(|&i| p.labels[i]).collect();
    let truth: Vec<usize> = test_idx.iter().map(|&i| labels[i]).collect();
    let cm = confusion_matrix(&pred, &truth, num_classes)?;
    let (precision_macro, recall_macro, f1_macro) = macro_prf(&cm);
    let scores = p.probs.select_rows(test_idx);
    Ok(Metrics {
        accuracy: accuracy(&cm),
        auc_macro: auc_macro(&scores, &truth),
        precision_macro,
        recall_macro,
        f1_macro,
        time_seconds: 0.0,
        memory_mb: 0.0,
    })
}

/// Runs `f`, returning its result with wall time in seconds and the peak
/// tensor memory it added on this thread in MiB, both rounded to 2 decimals.
pub fn measure_run<R>(f: impl FnOnce() -> R) -> (R, f64, f64) {
    let base = memory::reset_peak();
    let start = Instant::now();
    let out = f();
    let secs = start.elapsed().as_secs_f64();
    let peak = memory::peak_bytes().saturating_sub(base);
    (out, round2(secs), round2(peak as f64 / (1u64 << 20) as f64))
}

#[cfg(test)]
mod tests;
