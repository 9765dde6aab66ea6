use super::{ModelError, ModelShape, Result};
use crate::data::{ItemIdx, PAD};

/// Left-padded input rows with next-item targets.
///
/// The width is the longest row rather than `s`; leading columns that are
/// padding in every row carry no information and are dropped. Column `t`
/// uses position embedding `offset + t` with `offset = s - width`, so the
/// result is identical to padding every row to the full window.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub rows: usize,
    pub width: usize,
    pub offset: usize,
    /// Row-major `[rows, width]` item indices.
    pub inputs: Vec<usize>,
    /// Next item at each position; `PAD` where there is none.
    pub targets: Vec<usize>,
    /// Positions that contribute to the loss.
    pub loss_mask: Vec<bool>,
}

impl Batch {
    /// Rows of inputs with optional per-row targets of equal length. Every
    /// row must be non-empty and at most `s` long.
    pub fn new(inputs: &[&[ItemIdx]], targets: Option<&[&[ItemIdx]]>, shape: &ModelShape) -> Result<Self> {
        let rows = inputs.len();
        if rows == 0 {
            return Err(ModelError::EmptyHistory);
        }
        let mut width = 0;
        for (r, row) in inputs.iter().enumerate() {
            if row.is_empty() {
                return Err(ModelError::EmptyHistory);
            }
            if row.len() > shape.s {
                return Err(ModelError::SequenceTooLong { len: row.len(), s: shape.s });
            }
            if let Some(t) = targets {
                if t[r].len() != row.len() {
                    return Err(ModelError::InvalidShape(format!(
                        "row {r}: {} inputs but {} targets",
                        row.len(),
                        t[r].len()
                    )));
                }
            }
            for &i in row.iter().chain(targets.map_or(&[][..], |t| t[r])) {
                if i as usize > shape.n_items {
                    return Err(ModelError::ItemOutOfRange { index: i, n: shape.n_items });
                }
            }
            width = width.max(row.len());
        }
        let mut b = Batch {
            rows,
            width,
            offset: shape.s - width,
            inputs: vec![PAD as usize; rows * width],
            targets: vec![PAD as usize; rows * width],
            loss_mask: vec![false; rows * width],
        };
        for (r, row) in inputs.iter().enumerate() {
            let start = r * width + width - row.len();
            for (k, &i) in row.iter().enumerate() {
                b.inputs[start + k] = i as usize;
                if let Some(t) = targets {
                    let tgt = t[r][k] as usize;
                    b.targets[start + k] = tgt;
                    b.loss_mask[start + k] = i != PAD && tgt != PAD as usize;
                }
            }
        }
        Ok(b)
    }

    /// Next-item training rows from whole sequences: inputs `seq[..len-1]`,
    /// targets `seq[1..]`, keeping the most recent `s` pairs.
    pub fn training(sequences: &[&[ItemIdx]], shape: &ModelShape) -> Result<Self> {
        let mut ins = Vec::with_capacity(sequences.len());
        let mut outs = Vec::with_capacity(sequences.len());
        for seq in sequences {
            if seq.len() < 2 {
                return Err(ModelError::EmptyHistory);
            }
            let start = seq.len().saturating_sub(shape.s + 1);
            ins.push(&seq[start..seq.len() - 1]);
            outs.push(&seq[start + 1..]);
        }
        Self::new(&ins, Some(&outs), shape)
    }

    /// Histories whose next item is `targets[r]`: only the last position of
    /// each row is scored. Histories are truncated to the last `s` items.
    pub fn last_item(histories: &[&[ItemIdx]], targets: &[ItemIdx], shape: &ModelShape) -> Result<Self> {
        let ins: Vec<&[ItemIdx]> = histories
            .iter()
            .map(|h| &h[h.len().saturating_sub(shape.s)..])
            .collect();
        let mut b = Self::new(&ins, None, shape)?;
        for (r, &t) in targets.iter().enumerate() {
            if t as usize > shape.n_items {
                return Err(ModelError::ItemOutOfRange { index: t, n: shape.n_items });
            }
            let last = r * b.width + b.width - 1;
            b.targets[last] = t as usize;
            b.loss_mask[last] = t != PAD;
        }
        Ok(b)
    }

    /// Inference rows: each history truncated to its last `s` items.
    pub fn inference(histories: &[&[ItemIdx]], shape: &ModelShape) -> Result<Self> {
        let ins: Vec<&[ItemIdx]> = histories
            .iter()
            .map(|h| &h[h.len().saturating_sub(shape.s)..])
            .collect();
        Self::new(&ins, None, shape)
    }

    pub fn is_real(&self, row: usize, col: usize) -> bool {
        self.inputs[row * self.width + col] != PAD as usize
    }

    pub fn loss_positions(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }
}
