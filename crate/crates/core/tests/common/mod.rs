//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use nidsgraph::gnn::{build_model, GraphContext, Model, ModelKind, ModelSpec, PairBank};
use nidsgraph::graphkit::Metric;
use nidsgraph::numcore::{EdgeList, Tape, Tensor};
use nidsgraph::trainer::objective;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian(n: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = nidsgraph::rng::stream(seed, "test");
    Tensor::new(vec![n, d], (0..n * d).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

pub fn brute_distance(x: &Tensor, i: usize, j: usize, metric: Metric) -> f64 {
    let (a, b) = (x.row(i), x.row(j));
    match metric {
        Metric::Euclidean => {
            let mut s = 0.0;
            for c in 0..a.len() {
                s += (a[c] - b[c]).powi(2);
            }
            s.sqrt()
        }
        Metric::Cosine => {
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for c in 0..a.len() {
                dot += a[c] * b[c];
                na += a[c] * a[c];
                nb += b[c] * b[c];
            }
            if i == j {
                0.0
            } else {
                1.0 - dot / (na.sqrt() * nb.sqrt())
            }
        }
    }
}

/// Edge set assembled independently: threshold pairs, then each node's k
/// nearest by sorting a full candidate list, then symmetric closure.
pub fn oracle_edges(x: &Tensor, tau: f64, k: usize, metric: Metric) -> BTreeSet<(usize, usize)> {
    let n = x.rows();
    let mut edges = BTreeSet::new();
    for i in 0..n {
        let mut cand: Vec<(f64, usize)> = Vec::new();
        for j in 0..n {
            if j == i {
                continue;
            }
            let dist = brute_distance(x, i, j, metric);
            if dist < tau {
                edges.insert((i, j));
            }
            cand.push((dist, j));
        }
        cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, j) in cand.iter().take(k) {
            edges.insert((i, j));
            edges.insert((j, i));
        }
    }
    edges
}

/// Symmetric loop-free graph: a ring plus each remaining pair with
/// probability `p`.
pub fn random_graph(n: usize, p: f64, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = nidsgraph::rng::stream(seed, "test-graph");
    let mut set = BTreeSet::new();
    for i in 0..n {
        let j = (i + 1) % n;
        if i != j {
            set.insert((i, j));
            set.insert((j, i));
        }
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                set.insert((i, j));
                set.insert((j, i));
            }
        }
    }
    set.into_iter().collect()
}

pub fn context(x: Tensor, edges: &[(usize, usize)]) -> GraphContext {
    let n = x.rows();
    GraphContext::new(x, EdgeList::new(n, edges).unwrap()).unwrap()
}

/// Narrow spec so every kind is cheap to differentiate numerically.
pub fn tiny_spec(kind: ModelKind, classes: usize, seed: u64) -> ModelSpec {
    ModelSpec {
        hidden_dim: 3,
        heads_schedule: vec![2, 1, 1],
        cagn_heads: [2, 2, 1],
        pair_capacity: 8,
        seed,
        ..ModelSpec::new(kind, classes)
    }
}

pub fn objective_value(
    model: &dyn Model,
    ctx: &GraphContext,
    labels: &[usize],
    idx: &[usize],
    bank: Option<&PairBank>,
) -> f64 {
    let mut tape = Tape::new();
    let loss = objective(model, &mut tape, ctx, labels, idx, bank).unwrap();
    tape.value(loss).item()
}

/// Largest relative error between backprop and central differences over
/// every trainable scalar. Relative error is `|a - n| / max(|a|, |n|, floor)`.
pub fn gradcheck(
    model: &mut dyn Model,
    ctx: &GraphContext,
    labels: &[usize],
    idx: &[usize],
    bank: Option<&PairBank>,
    h: f64,
    floor: f64,
) -> f64 {
    let mut tape = Tape::new();
    let loss = objective(&*model, &mut tape, ctx, labels, idx, bank).unwrap();
    tape.backward(loss).unwrap();
    tape.write_param_grads(model.params_mut()).unwrap();
    drop(tape);
    let ids: Vec<_> = model
        .params()
        .iter()
        .filter(|(_, e)| !e.frozen)
        .map(|(id, _)| id)
        .collect();
    let mut worst: f64 = 0.0;
    for id in ids {
        let analytic: Vec<f64> = match model.params().get(id).grad() {
            Some(g) => g.to_vec(),
            None => vec![0.0; model.params().get(id).numel()],
        };
        for (k, &a) in analytic.iter().enumerate() {
            let orig = model.params().get(id).data()[k];
            model.params_mut().get_mut(id).data_mut()[k] = orig + h;
            let up = objective_value(&*model, ctx, labels, idx, bank);
            model.params_mut().get_mut(id).data_mut()[k] = orig - h;
            let down = objective_value(&*model, ctx, labels, idx, bank);
            model.params_mut().get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Adds Gaussian noise to every parameter so checks run at a generic point
/// rather than at zero-initialized biases, where ReLU kinks sit exactly.
pub fn jitter_params(model: &mut dyn Model, scale: f64, seed: u64) {
    let mut rng = nidsgraph::rng::stream(seed, "test-jitter");
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        for v in model.params_mut().get_mut(id).data_mut() {
            *v += scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

/// Builds a 6-node, 4-feature, 2-class problem and returns the worst
/// gradient error of `kind`'s full objective.
pub fn gradcheck_kind(kind: ModelKind, seed: u64) -> f64 {
    let x = gaussian(6, 4, seed);
    let edges = random_graph(6, 0.4, seed);
    let ctx = context(x, &edges);
    let labels = vec![0, 1, 0, 1, 0, 1];
    let idx: Vec<usize> = (0..6).collect();
    let mut model = build_model(&tiny_spec(kind, 2, seed), 4).unwrap();
    jitter_params(model.as_mut(), 0.1, seed);
    let bank = model.pair_capacity().map(|cap| {
        let mut rng = nidsgraph::rng::stream(seed, "test-pairs");
        PairBank::sample(&labels, &idx, cap, &mut rng)
    });
    if let Some(b) = &bank {
        assert!(!b.is_empty());
    }
    gradcheck(model.as_mut(), &ctx, &labels, &idx, bank.as_ref(), 1e-5, 1e-6)
}

/// Worst deviation from 1 of any per-node, per-head attention sum recorded
/// on `tape`, plus the number of (layer, node, head) sums checked.
pub fn attention_sum_error(tape: &Tape) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for rec in tape.attention_records() {
        let alpha = tape.value(rec.alpha);
        let n = rec.edges.num_nodes;
        let mut sums = vec![vec![0.0; rec.heads]; n];
        let mut has = vec![false; n];
        for (e, (_, t)) in rec.edges.pairs().enumerate() {
            has[t] = true;
            for h in 0..rec.heads {
                sums[t][h] += alpha.get(e, h);
            }
        }
        for i in (0..n).filter(|&i| has[i]) {
            for s in &sums[i] {
                worst = worst.max((s - 1.0).abs());
                checked += 1;
            }
        }
    }
    (worst, checked)
}

/// Macro precision, recall and F1 recomputed from prediction lists class
/// by class, with 0/0 read as 0.
pub fn brute_prf(pred: &[usize], truth: &[usize], classes: usize) -> (f64, f64, f64) {
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    for c in 0..classes {
        let tp = pred.iter().zip(truth).filter(|&(&a, &b)| a == c && b == c).count() as f64;
        let predicted = pred.iter().filter(|&&a| a == c).count() as f64;
        let actual = truth.iter().filter(|&&b| b == c).count() as f64;
        let prec = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let rec = if actual > 0.0 { tp / actual } else { 0.0 };
        let f1 = if prec + rec > 0.0 {
            2.0 * prec * rec / (prec + rec)
        } else {
            0.0
        };
        p += prec;
        r += rec;
        f += f1;
    }
    let c = classes as f64;
    (p / c, r / c, f / c)
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting
/// half.
pub fn brute_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if positive[i] && !positive[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}
