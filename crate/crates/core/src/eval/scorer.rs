use super::{EvalError, Result};
use crate::data::{ItemIdx, PopularityIndex};
use crate::model::{Batch, Lsrm};
use crate::rng::{derive_seed, stream};
use rand::Rng;
use std::collections::HashMap;

/// Produces next-item scores for histories. Every score vector has
/// `n_items + 1` entries; slot 0 is padding and ignored.
pub trait Scorer: Sync {
    fn n_items(&self) -> usize;

    fn score_batch(&self, histories: &[&[ItemIdx]]) -> Result<Vec<Vec<f64>>>;

    fn score(&self, history: &[ItemIdx]) -> Result<Vec<f64>> {
        Ok(self.score_batch(&[history])?.pop().expect("one row"))
    }
}

/// A trained model; histories are cut to the model's window.
pub struct ModelScorer<'a> {
    pub model: &'a Lsrm,
}

impl Scorer for ModelScorer<'_> {
    fn n_items(&self) -> usize {
        self.model.shape().n_items
    }

    fn score_batch(&self, histories: &[&[ItemIdx]]) -> Result<Vec<Vec<f64>>> {
        let batch = Batch::inference(histories, self.model.shape())?;
        Ok(self.model.score_last(&batch)?)
    }
}

/// Training-interaction counts, the same for every history.
pub struct PopularityScorer<'a> {
    pub index: &'a PopularityIndex,
}

impl Scorer for PopularityScorer<'_> {
    fn n_items(&self) -> usize {
        self.index.counts.len() - 1
    }

    fn score_batch(&self, histories: &[&[ItemIdx]]) -> Result<Vec<Vec<f64>>> {
        let row: Vec<f64> = self.index.counts.iter().map(|&c| c as f64).collect();
        Ok(vec![row; histories.len()])
    }
}

/// Uniform scores seeded by the history's contents, so repeated calls
/// agree.
pub struct RandomScorer {
    pub n_items: usize,
    pub seed: u64,
}

impl Scorer for RandomScorer {
    fn n_items(&self) -> usize {
        self.n_items
    }

    fn score_batch(&self, histories: &[&[ItemIdx]]) -> Result<Vec<Vec<f64>>> {
        Ok(histories
            .iter()
            .map(|h| {
                let path: Vec<u64> = h.iter().map(|&i| i as u64).collect();
                let mut rng = stream(derive_seed(self.seed, &path), &[0x5C0E]);
                let mut row: Vec<f64> = (0..=self.n_items).map(|_| rng.gen()).collect();
                row[0] = f64::NEG_INFINITY;
                row
            })
            .collect())
    }
}

/// Fixed scores per history, with a fallback row for unknown histories.
pub struct TableScorer {
    pub n_items: usize,
    pub table: HashMap<Vec<ItemIdx>, Vec<f64>>,
    pub fallback: Vec<f64>,
}

impl TableScorer {
    pub fn new(n_items: usize) -> Self {
        let mut fallback = vec![0.0; n_items + 1];
        fallback[0] = f64::NEG_INFINITY;
        Self {
            n_items,
            table: HashMap::new(),
            fallback,
        }
    }

    /// Scores 1 for `target` after `history`, 0 elsewhere.
    pub fn insert_target(&mut self, history: &[ItemIdx], target: ItemIdx) {
        let mut row = self.fallback.clone();
        row[target as usize] = 1.0;
        self.table.insert(history.to_vec(), row);
    }
}

impl Scorer for TableScorer {
    fn n_items(&self) -> usize {
        self.n_items
    }

    fn score_batch(&self, histories: &[&[ItemIdx]]) -> Result<Vec<Vec<f64>>> {
        histories
            .iter()
            .map(|h| {
                let row = self.table.get(*h).unwrap_or(&self.fallback);
                if row.len() != self.n_items + 1 {
                    return Err(EvalError::ScoreLength {
                        found: row.len(),
                        expected: self.n_items + 1,
                    });
                }
                Ok(row.clone())
            })
            .collect()
    }
}
