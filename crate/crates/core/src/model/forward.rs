use super::{Batch, Lsrm, ModelError, Result, LN_EPS};
use crate::rng::derive_seed;
use crate::tensor::{gemm, Gradients, Mask, ParamStore, Tape, Tensor, Var};

/// Dropout sites, used to derive independent masks.
const SITE_EMBED: u64 = 0;
const SITE_ATTN: u64 = 1;
const SITE_ATTN_OUT: u64 = 2;
const SITE_FFN_OUT: u64 = 3;

/// Training-mode switches for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions<'a> {
    pub training: bool,
    /// Per-layer dropout rates; the embedding uses the first.
    pub dropout: &'a [f64],
    pub seed: u64,
}

impl ForwardOptions<'_> {
    pub fn inference() -> Self {
        ForwardOptions {
            training: false,
            dropout: &[],
            seed: 0,
        }
    }
}

/// Loss value and parameter gradients of one batch.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub loss: f64,
    pub grads: Gradients,
}

impl Lsrm {
    fn rate(&self, opts: &ForwardOptions, layer: usize) -> f64 {
        if opts.training {
            opts.dropout[layer]
        } else {
            0.0
        }
    }

    /// Causal mask that also hides padding keys. The diagonal stays open so
    /// that rows belonging to padding queries are never empty.
    fn attention_mask(batch: &Batch) -> Result<Mask> {
        let w = batch.width;
        let mut allowed = vec![false; batch.rows * w * w];
        for r in 0..batch.rows {
            for t in 0..w {
                for j in 0..=t {
                    allowed[(r * w + t) * w + j] = j == t || batch.is_real(r, j);
                }
            }
        }
        Ok(Mask::new([batch.rows, 1, w, w], allowed)?)
    }

    /// Final hidden states, shape `[rows·width, d_model]`.
    pub fn hidden<'p>(&self, tape: &mut Tape<'p>, batch: &Batch, opts: &ForwardOptions) -> Result<Var> {
        let shape = &self.shape;
        if opts.training && opts.dropout.len() != shape.n_layer {
            return Err(ModelError::InvalidShape(format!(
                "{} dropout rates for {} layers",
                opts.dropout.len(),
                shape.n_layer
            )));
        }
        let ids = self.ids();
        let (b, w, h) = (batch.rows, batch.width, shape.n_head);
        let positions: Vec<usize> = (0..b).flat_map(|_| batch.offset..batch.offset + w).collect();
        let e = tape.param(ids.item_emb);
        let p = tape.param(ids.pos_emb);
        let items = tape.embedding(e, &batch.inputs)?;
        let pos = tape.embedding(p, &positions)?;
        let mut x = tape.add(items, pos)?;
        let seed = |layer: usize, site: u64| derive_seed(opts.seed, &[layer as u64, site]);
        x = tape.dropout(x, self.rate(opts, 0), opts.training, seed(0, SITE_EMBED))?;

        let mask = Self::attention_mask(batch)?;
        let scale = 1.0 / (shape.head_dim() as f64).sqrt();
        for (l, li) in ids.layers.iter().enumerate() {
            let rate = self.rate(opts, l);
            let g1 = tape.param(li.ln1_gain);
            let b1 = tape.param(li.ln1_bias);
            let a = tape.layer_norm(x, g1, b1, LN_EPS)?;
            let mut heads = Vec::with_capacity(3);
            for wid in [li.wq, li.wk, li.wv] {
                let wv = tape.param(wid);
                let proj = tape.matmul(a, wv, false)?;
                heads.push(tape.split_heads(proj, b, w, h)?);
            }
            let scores = tape.matmul(heads[0], heads[1], true)?;
            let scores = tape.scale(scores, scale);
            let probs = tape.softmax_rows(scores, Some(&mask))?;
            let probs = tape.dropout(probs, rate, opts.training, seed(l, SITE_ATTN))?;
            let ctx = tape.matmul(probs, heads[2], false)?;
            let ctx = tape.merge_heads(ctx)?;
            let wo = tape.param(li.wo);
            let attn = tape.matmul(ctx, wo, false)?;
            let attn = tape.dropout(attn, rate, opts.training, seed(l, SITE_ATTN_OUT))?;
            x = tape.add(x, attn)?;

            let g2 = tape.param(li.ln2_gain);
            let b2 = tape.param(li.ln2_bias);
            let f = tape.layer_norm(x, g2, b2, LN_EPS)?;
            let w1 = tape.param(li.w1);
            let bias1 = tape.param(li.b1);
            let f = tape.matmul(f, w1, false)?;
            let f = tape.add_bias(f, bias1)?;
            let f = tape.gelu(f);
            let w2 = tape.param(li.w2);
            let bias2 = tape.param(li.b2);
            let f = tape.matmul(f, w2, false)?;
            let f = tape.add_bias(f, bias2)?;
            let f = tape.dropout(f, rate, opts.training, seed(l, SITE_FFN_OUT))?;
            x = tape.add(x, f)?;
        }
        let g = tape.param(ids.final_gain);
        let bias = tape.param(ids.final_bias);
        Ok(tape.layer_norm(x, g, bias, LN_EPS)?)
    }

    /// Logits over the vocabulary (padding included) at every position,
    /// shape `[rows·width, n_items + 1]`.
    pub fn logits<'p>(&self, tape: &mut Tape<'p>, hidden: Var) -> Result<Var> {
        let e = tape.param(self.ids().item_emb);
        Ok(tape.matmul(hidden, e, true)?)
    }

    /// Mean next-item cross-entropy over the batch's loss positions,
    /// multiplied by `weight`.
    pub fn loss_var<'p>(
        &self,
        tape: &mut Tape<'p>,
        batch: &Batch,
        opts: &ForwardOptions,
        weight: f64,
    ) -> Result<Var> {
        let hidden = self.hidden(tape, batch, opts)?;
        let logits = self.logits(tape, hidden)?;
        let ce = tape.cross_entropy(logits, &batch.targets, &batch.loss_mask, Some(0))?;
        Ok(if weight == 1.0 { ce } else { tape.scale(ce, weight) })
    }

    pub fn loss(&self, batch: &Batch, opts: &ForwardOptions) -> Result<f64> {
        let mut tape = Tape::with_params(&self.params);
        let l = self.loss_var(&mut tape, batch, opts, 1.0)?;
        Ok(tape.value(l).data()[0])
    }

    /// Loss evaluated with `params` in place of the model's own values.
    /// `params` must have this model's layout.
    pub fn loss_with_params(&self, params: &ParamStore, batch: &Batch, opts: &ForwardOptions) -> Result<f64> {
        let mut tape = Tape::with_params(params);
        let l = self.loss_var(&mut tape, batch, opts, 1.0)?;
        Ok(tape.value(l).data()[0])
    }

    /// Weighted loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, batch: &Batch, opts: &ForwardOptions, weight: f64) -> Result<ModelOutput> {
        let mut tape = Tape::with_params(&self.params);
        let l = self.loss_var(&mut tape, batch, opts, weight)?;
        let loss = tape.value(l).data()[0];
        let mut grads = Gradients::zeros_like(&self.params);
        tape.backward(l, &mut grads)?;
        Ok(ModelOutput { loss, grads })
    }

    /// Inference-mode logits at every position.
    pub fn forward(&self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::with_params(&self.params);
        let h = self.hidden(&mut tape, batch, &ForwardOptions::inference())?;
        let l = self.logits(&mut tape, h)?;
        Ok(tape.value(l).clone())
    }

    /// Scores after the last position of each row, one vector of length
    /// `n_items + 1` per row with the padding slot at `-inf`.
    pub fn score_last(&self, batch: &Batch) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::with_params(&self.params);
        let h = self.hidden(&mut tape, batch, &ForwardOptions::inference())?;
        let hidden = tape.value(h);
        let d = self.shape.d_model;
        let mut last = Vec::with_capacity(batch.rows * d);
        for r in 0..batch.rows {
            last.extend_from_slice(hidden.row(r * batch.width + batch.width - 1));
        }
        let v = self.shape.vocab();
        let mut out = vec![0.0; batch.rows * v];
        let table = self.params.value(self.ids().item_emb).data();
        gemm(batch.rows, d, v, &last, false, table, true, &mut out, false);
        Ok(out
            .chunks(v)
            .map(|row| {
                let mut row = row.to_vec();
                row[0] = f64::NEG_INFINITY;
                row
            })
            .collect())
    }

    /// Scores for the item following `history` (index 0 is padding, `-inf`).
    pub fn next_item_scores(&self, history: &[crate::data::ItemIdx]) -> Result<Vec<f64>> {
        if history.is_empty() {
            return Err(ModelError::EmptyHistory);
        }
        let batch = Batch::inference(&[history], &self.shape)?;
        Ok(self.score_last(&batch)?.pop().expect("one row"))
    }
}
