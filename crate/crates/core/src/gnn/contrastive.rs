use rand::Rng as _;

use super::{GnnError, Result};
use crate::numcore::{Tape, Var};
use crate::rng::Rng;

/// Same-class and different-class node pairs for the contrastive objective.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairBank {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
    pub capacity: usize,
}

impl PairBank {
    pub fn new(positives: Vec<(usize, usize)>, negatives: Vec<(usize, usize)>, labels: &[usize]) -> Result<Self> {
        let capacity = positives.len().max(negatives.len());
        let check = |pairs: &[(usize, usize)], same: bool| {
            pairs
                .iter()
                .all(|&(i, j)| i < labels.len() && j < labels.len() && (labels[i] == labels[j]) == same)
        };
        if !check(&positives, true) || !check(&negatives, false) {
            return Err(GnnError::InvalidSpec("pair labels disagree with bank side".into()));
        }
        Ok(Self {
            positives,
            negatives,
            capacity,
        })
    }

    /// Draws up to `capacity` pairs of each kind among `candidates`.
    /// Pairs never join a node with itself; sides that cannot be filled
    /// (a single class, or no class with two members) stay short.
    pub fn sample(labels: &[usize], candidates: &[usize], capacity: usize, rng: &mut Rng) -> Self {
        let mut bank = Self {
            capacity,
            ..Self::default()
        };
        let m = candidates.len();
        if m < 2 || capacity == 0 {
            return bank;
        }
        let budget = capacity * 32;
        for _ in 0..budget {
            if bank.positives.len() >= capacity && bank.negatives.len() >= capacity {
                break;
            }
            let i = candidates[rng.random_range(0..m)];
            let j = candidates[rng.random_range(0..m)];
            if i == j {
                continue;
            }
            let side = if labels[i] == labels[j] {
                &mut bank.positives
            } else {
                &mut bank.negatives
            };
            if side.len() < capacity {
                side.push((i, j));
            }
        }
        bank
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Result of [`contrastive_loss`]; `empty_bank` flags a zero loss caused by
/// having no pairs at all.
#[derive(Clone, Copy, Debug)]
pub struct ContrastiveLoss {
    pub value: Var,
    pub empty_bank: bool,
}

fn pair_cosines(tape: &mut Tape, emb: Var, pairs: &[(usize, usize)]) -> Result<Var> {
    let left: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let right: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let a = tape.gather_rows(emb, left)?;
    let b = tape.gather_rows(emb, right)?;
    Ok(tape.row_cosine(a, b)?)
}

/// Mean over all pairs of `1 - cos` for positives and `max(0, cos - margin)`
/// for negatives.
pub fn contrastive_loss(tape: &mut Tape, embeddings: Var, bank: &PairBank, margin: f64) -> Result<ContrastiveLoss> {
    let total = bank.len();
    if total == 0 {
        log::warn!("contrastive loss requested with an empty pair bank");
        let value = tape.constant(crate::numcore::Tensor::scalar(0.0)?);
        return Ok(ContrastiveLoss {
            value,
            empty_bank: true,
        });
    }
    let mut terms = Vec::new();
    if !bank.positives.is_empty() {
        let cos = pair_cosines(tape, embeddings, &bank.positives)?;
        let s = tape.sum(cos)?;
        let s = tape.scale(s, -1.0)?;
        terms.push(tape.add_scalar(s, bank.positives.len() as f64)?);
    }
    if !bank.negatives.is_empty() {
        let cos = pair_cosines(tape, embeddings, &bank.negatives)?;
        let shifted = tape.add_scalar(cos, -margin)?;
        let hinge = tape.relu(shifted)?;
        terms.push(tape.sum(hinge)?);
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    let value = tape.scale(acc, 1.0 / total as f64)?;
    Ok(ContrastiveLoss {
        value,
        empty_bank: false,
    })
}
