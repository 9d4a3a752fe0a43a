use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::numcore::Tensor;

/// One results-table row worth of scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub auc_macro: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub time_seconds: f64,
    /// Peak live tensor bytes during the run, in MiB.
    pub memory_mb: f64,
}

/// `counts[truth][pred]`.
pub fn confusion_matrix(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<Vec<Vec<usize>>> {
    if pred.len() != truth.len() {
        return Err(TrainError::Invalid(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut cm = vec![vec![0; num_classes]; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= num_classes || t >= num_classes {
            return Err(TrainError::Invalid(format!(
                "label {} out of range for {num_classes} classes",
                p.max(t)
            )));
        }
        cm[t][p] += 1;
    }
    Ok(cm)
}

pub fn accuracy(cm: &[Vec<usize>]) -> f64 {
    let total: usize = cm.iter().flatten().sum();
    if total == 0 {
        return 0.0;
    }
    let hits: usize = (0..cm.len()).map(|i| cm[i][i]).sum();
    hits as f64 / total as f64
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Unweighted means of per-class precision, recall and F1 (0/0 counts as 0).
pub fn macro_prf(cm: &[Vec<usize>]) -> (f64, f64, f64) {
    let c = cm.len();
    if c == 0 {
        return (0.0, 0.0, 0.0);
    }
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for k in 0..c {
        let tp = cm[k][k] as f64;
        let predicted: usize = (0..c).map(|t| cm[t][k]).sum();
        let actual: usize = cm[k].iter().sum();
        let p = ratio(tp, predicted as f64);
        let r = ratio(tp, actual as f64);
        p_sum += p;
        r_sum += r;
        f_sum += ratio(2.0 * p * r, p + r);
    }
    let n = c as f64;
    (p_sum / n, r_sum / n, f_sum / n)
}

/// Mann-Whitney AUC of `scores` for separating `positive` from the rest,
/// with midranks for ties. `None` when either side is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// One-vs-rest AUC averaged over the classes that have both positives and
/// negatives in `truth`. With two score columns only the positive class
/// (column 1) is scored. Returns 0.5 when no class qualifies.
pub fn auc_macro(scores: &Tensor, truth: &[usize]) -> f64 {
    let c = if scores.rows() == 0 { 0 } else { scores.cols() };
    let classes: Vec<usize> = if c == 2 { vec![1] } else { (0..c).collect() };
    let per_class: Vec<f64> = classes
        .into_iter()
        .filter_map(|k| {
            let col: Vec<f64> = (0..scores.rows()).map(|i| scores.get(i, k)).collect();
            let pos: Vec<bool> = truth.iter().map(|&t| t == k).collect();
            binary_auc(&col, &pos)
        })
        .collect();
    if per_class.is_empty() {
        0.5
    } else {
        per_class.iter().sum::<f64>() / per_class.len() as f64
    }
}

/// Rounds to two decimals, as reported in results tables.
pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}
