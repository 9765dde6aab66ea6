use super::*;
use crate::data::ItemIdx;
use crate::tensor::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn shape(n_layer: usize, d: usize, h: usize, s: usize, n: usize) -> ModelShape {
    ModelShape::standard(n_layer, d, h, s, n).unwrap()
}

/// Randomises every parameter (including gains and biases) so that oracle
/// comparisons exercise all terms.
fn randomised(shape: ModelShape, seed: u64) -> Lsrm {
    let mut m = Lsrm::init(shape, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for p in m.params_mut().iter_mut() {
        for v in p.value.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    m
}

/// Straight-line evaluation of the architecture on one left-padded row with
/// plain nested loops. Returns logits per position.
fn oracle_logits(m: &Lsrm, row: &[usize], offset: usize) -> Vec<Vec<f64>> {
    let sh = *m.shape();
    let (d, h, f) = (sh.d_model, sh.n_head, sh.d_ff);
    let dh = d / h;
    let p = |name: &str| m.params().value(m.params().find(name).unwrap()).data().to_vec();
    let w = row.len();
    let e = p("item_emb");
    let pe = p("pos_emb");
    let mut x: Vec<Vec<f64>> = (0..w)
        .map(|t| (0..d).map(|j| e[row[t] * d + j] + pe[(offset + t) * d + j]).collect())
        .collect();
    let ln = |v: &[f64], g: &[f64], b: &[f64]| -> Vec<f64> {
        let mu = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|a| (a - mu) * (a - mu)).sum::<f64>() / v.len() as f64;
        v.iter()
            .enumerate()
            .map(|(j, a)| (a - mu) / (var + 1e-5).sqrt() * g[j] + b[j])
            .collect()
    };
    let matvec = |v: &[f64], wt: &[f64], cols: usize| -> Vec<f64> {
        (0..cols)
            .map(|c| v.iter().enumerate().map(|(k, a)| a * wt[k * cols + c]).sum())
            .collect()
    };
    for l in 0..sh.n_layer {
        let q = |n: &str| p(&format!("layer{l}.{n}"));
        let a: Vec<Vec<f64>> = x.iter().map(|v| ln(v, &q("ln1.gain"), &q("ln1.bias"))).collect();
        let qs: Vec<Vec<f64>> = a.iter().map(|v| matvec(v, &q("attn.wq"), d)).collect();
        let ks: Vec<Vec<f64>> = a.iter().map(|v| matvec(v, &q("attn.wk"), d)).collect();
        let vs: Vec<Vec<f64>> = a.iter().map(|v| matvec(v, &q("attn.wv"), d)).collect();
        let mut ctx = vec![vec![0.0; d]; w];
        for head in 0..h {
            let r = head * dh..(head + 1) * dh;
            for t in 0..w {
                let keys: Vec<usize> = (0..=t).filter(|&j| j == t || row[j] != 0).collect();
                let sc: Vec<f64> = keys
                    .iter()
                    .map(|&j| {
                        qs[t][r.clone()].iter().zip(&ks[j][r.clone()]).map(|(a, b)| a * b).sum::<f64>()
                            / (dh as f64).sqrt()
                    })
                    .collect();
                let mx = sc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = sc.iter().map(|s| (s - mx).exp()).sum();
                for (ki, &j) in keys.iter().enumerate() {
                    let pr = (sc[ki] - mx).exp() / z;
                    for c in r.clone() {
                        ctx[t][c] += pr * vs[j][c];
                    }
                }
            }
        }
        for t in 0..w {
            let o = matvec(&ctx[t], &q("attn.wo"), d);
            for j in 0..d {
                x[t][j] += o[j];
            }
            let a2 = ln(&x[t], &q("ln2.gain"), &q("ln2.bias"));
            let mut hid = matvec(&a2, &q("ffn.w1"), f);
            let b1 = q("ffn.b1");
            for (j, v) in hid.iter_mut().enumerate() {
                let z = *v + b1[j];
                *v = 0.5 * z * (1.0 + libm::erf(z / 2f64.sqrt()));
            }
            let out = matvec(&hid, &q("ffn.w2"), d);
            let b2 = q("ffn.b2");
            for j in 0..d {
                x[t][j] += out[j] + b2[j];
            }
        }
    }
    let (g, b) = (p("final_ln.gain"), p("final_ln.bias"));
    x.iter()
        .map(|v| {
            let hv = ln(v, &g, &b);
            (0..sh.vocab())
                .map(|i| (0..d).map(|j| hv[j] * e[i * d + j]).sum())
                .collect()
        })
        .collect()
}

#[test]
fn table_three_parameter_counts() {
    let rows = [
        (2, 64, 2, 98_304u64),
        (4, 128, 4, 786_432),
        (8, 128, 4, 1_572_864),
        (12, 256, 8, 9_437_184),
        (24, 512, 8, 75_497_472),
        (48, 1200, 24, 829_440_000),
    ];
    for (l, d, h, n) in rows {
        assert_eq!(count_non_embedding_params(&shape(l, d, h, 50, 100)), n);
    }
}

#[test]
fn stored_weight_matrices_match_the_count() {
    let sh = shape(2, 16, 4, 10, 30);
    let m = Lsrm::init(sh, 1).unwrap();
    let matrices: usize = m
        .params()
        .iter()
        .filter(|p| p.value.shape().len() == 2 && !p.name.ends_with("_emb"))
        .map(|p| p.value.numel())
        .sum();
    assert_eq!(matrices as u64, count_non_embedding_params(&sh));
    assert_eq!(m.params().numel() as u64, sh.total_params());
    let emb = m.params().value(m.item_embedding()).numel() + m.params().value(m.params().find("pos_emb").unwrap()).numel();
    assert_eq!(emb as u64, sh.embedding_params());
}

#[test]
fn shape_validation() {
    assert!(matches!(ModelShape::standard(2, 10, 3, 8, 5), Err(ModelError::InvalidShape(_))));
    assert!(ModelShape::standard(2, 8, 2, 0, 5).is_err());
    assert!(ModelShape::standard(0, 8, 2, 4, 5).is_err());
}

#[test]
fn init_is_seeded_and_has_the_clamped_spread() {
    let sh = shape(1, 64, 2, 8, 2000);
    let a = Lsrm::init(sh, 5).unwrap();
    let b = Lsrm::init(sh, 5).unwrap();
    let c = Lsrm::init(sh, 6).unwrap();
    let e = |m: &Lsrm| m.params().value(m.item_embedding()).data().to_vec();
    assert_eq!(e(&a), e(&b));
    assert_ne!(e(&a), e(&c));
    let v = e(&a);
    assert!(v.len() >= 100_000);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
    assert!((sd - INIT_STD).abs() < 0.1 * INIT_STD, "{sd}");
    assert!(v.iter().all(|x| x.abs() <= 2.0 * INIT_STD));
    let ln = a.params().value(a.params().find("layer0.ln1.gain").unwrap());
    assert!(ln.data().iter().all(|&g| g == 1.0));
}

#[test]
fn forward_matches_straight_line_oracle() {
    for (sh, seed) in [(shape(1, 2, 1, 2, 3), 1), (shape(2, 8, 2, 6, 11), 2)] {
        let m = randomised(sh, seed);
        let rows: Vec<Vec<ItemIdx>> = vec![vec![3], (1..=sh.s as ItemIdx).map(|i| i % sh.n_items as ItemIdx + 1).collect()];
        let refs: Vec<&[ItemIdx]> = rows.iter().map(Vec::as_slice).collect();
        let batch = Batch::inference(&refs, &sh).unwrap();
        let logits = m.forward(&batch).unwrap();
        for r in 0..batch.rows {
            let row = &batch.inputs[r * batch.width..(r + 1) * batch.width];
            let want = oracle_logits(&m, row, batch.offset);
            for t in 0..batch.width {
                if row[t] == 0 {
                    continue;
                }
                for (a, b) in logits.row(r * batch.width + t).iter().zip(&want[t]) {
                    assert!((a - b).abs() < 1e-10, "{a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn future_positions_do_not_leak() {
    let sh = shape(2, 8, 2, 8, 20);
    let m = randomised(sh, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let seq: Vec<ItemIdx> = (0..8).map(|_| rng.gen_range(1..=20)).collect();
        let t = rng.gen_range(0..7);
        let mut other = seq.clone();
        for v in &mut other[t + 1..] {
            *v = rng.gen_range(1..=20);
        }
        let a = m.forward(&Batch::inference(&[&seq], &sh).unwrap()).unwrap();
        let b = m.forward(&Batch::inference(&[&other], &sh).unwrap()).unwrap();
        for pos in 0..=t {
            assert_eq!(a.row(pos), b.row(pos));
        }
    }
}

#[test]
fn repeated_rows_give_identical_slices() {
    let sh = shape(2, 8, 2, 5, 12);
    let m = randomised(sh, 4);
    let seq: Vec<ItemIdx> = vec![4, 2, 9];
    let batch = Batch::inference(&[&seq, &seq, &seq, &seq], &sh).unwrap();
    let l = m.forward(&batch).unwrap();
    let w = batch.width;
    for r in 1..4 {
        for t in 0..w {
            assert_eq!(l.row(t), l.row(r * w + t));
        }
    }
}

#[test]
fn untrained_loss_is_near_log_catalog_size() {
    let sh = shape(2, 16, 2, 10, 2000);
    let m = Lsrm::init(sh, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let seqs: Vec<Vec<ItemIdx>> = (0..8).map(|_| (0..11).map(|_| rng.gen_range(1..=2000)).collect()).collect();
    let refs: Vec<&[ItemIdx]> = seqs.iter().map(Vec::as_slice).collect();
    let loss = m.loss(&Batch::training(&refs, &sh).unwrap(), &ForwardOptions::inference()).unwrap();
    let ln = (2000f64).ln();
    assert!((loss - ln).abs() < 0.05 * ln, "{loss}");
}

#[test]
fn padding_does_not_change_the_loss() {
    let sh = shape(2, 8, 2, 8, 15);
    let m = randomised(sh, 8);
    let short = Batch::new(&[&[3, 5, 7]], Some(&[&[5, 7, 2]]), &sh).unwrap();
    let padded = Batch::new(&[&[0, 0, 3, 5, 7]], Some(&[&[0, 0, 5, 7, 2]]), &sh).unwrap();
    let opts = ForwardOptions::inference();
    let (a, b) = (m.loss(&short, &opts).unwrap(), m.loss(&padded, &opts).unwrap());
    assert!((a - b).abs() < 1e-12, "{a} {b}");
    let empty = Batch::new(&[&[0, 0]], Some(&[&[0, 0]]), &sh).unwrap();
    assert!(m.loss(&empty, &opts).is_err());
}

#[test]
fn over_long_rows_are_rejected() {
    let sh = shape(1, 8, 2, 4, 10);
    let row: Vec<ItemIdx> = vec![1; 5];
    assert_eq!(
        Batch::new(&[&row], None, &sh).unwrap_err(),
        ModelError::SequenceTooLong { len: 5, s: 4 }
    );
    assert!(Batch::new(&[&[11]], None, &sh).is_err());
}

#[test]
fn scores_contract() {
    let sh = shape(2, 8, 2, 6, 25);
    let m = randomised(sh, 10);
    let hist: Vec<ItemIdx> = vec![5, 9, 1, 20];
    let s = m.next_item_scores(&hist).unwrap();
    assert_eq!(s.len(), 26);
    assert_eq!(s[0], f64::NEG_INFINITY);
    assert_eq!(s, m.next_item_scores(&hist).unwrap());
    let logits = m.forward(&Batch::inference(&[&hist], &sh).unwrap()).unwrap();
    let last = logits.row(3);
    let argmax = |v: &[f64]| (1..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
    assert_eq!(argmax(&s), argmax(last));
    assert!(matches!(m.next_item_scores(&[]), Err(ModelError::EmptyHistory)));
}

#[test]
fn relabelling_items_permutes_scores() {
    let sh = shape(1, 8, 2, 6, 9);
    let m = randomised(sh, 11);
    let perm: Vec<usize> = vec![0, 4, 7, 1, 9, 2, 8, 3, 6, 5];
    let mut store = m.params().clone();
    let id = m.item_embedding();
    let old = m.params().value(id).clone();
    let d = sh.d_model;
    for i in 0..sh.vocab() {
        store.get_mut(id).value.data_mut()[perm[i] * d..(perm[i] + 1) * d].copy_from_slice(old.row(i));
    }
    let relabelled = Lsrm::from_params(sh, store).unwrap();
    let hist: Vec<ItemIdx> = vec![3, 1, 8, 2];
    let mapped: Vec<ItemIdx> = hist.iter().map(|&i| perm[i as usize] as ItemIdx).collect();
    let a = m.next_item_scores(&hist).unwrap();
    let b = relabelled.next_item_scores(&mapped).unwrap();
    for i in 1..sh.vocab() {
        assert!((a[i] - b[perm[i]]).abs() < 1e-12);
    }
}

#[test]
fn tied_head_binds_one_embedding() {
    let sh = shape(2, 8, 2, 6, 10);
    let m = Lsrm::init(sh, 1).unwrap();
    let mut tape = Tape::with_params(m.params());
    let batch = Batch::training(&[&[1, 2, 3, 4]], &sh).unwrap();
    m.loss_var(&mut tape, &batch, &ForwardOptions::inference(), 1.0).unwrap();
    assert_eq!(tape.bound_params(), m.params().len());
}

#[test]
fn dropout_changes_training_loss_only() {
    let sh = shape(2, 8, 2, 6, 10);
    let m = randomised(sh, 12);
    let batch = Batch::training(&[&[1, 2, 3, 4, 5]], &sh).unwrap();
    let rates = [0.3, 0.3];
    let train = |seed| ForwardOptions { training: true, dropout: &rates, seed };
    let eval = ForwardOptions { training: false, dropout: &rates, seed: 1 };
    assert_eq!(m.loss(&batch, &eval).unwrap(), m.loss(&batch, &ForwardOptions::inference()).unwrap());
    assert_eq!(m.loss(&batch, &train(1)).unwrap(), m.loss(&batch, &train(1)).unwrap());
    assert_ne!(m.loss(&batch, &train(1)).unwrap(), m.loss(&batch, &train(2)).unwrap());
    let bad = ForwardOptions { training: true, dropout: &[0.1], seed: 1 };
    assert!(m.loss(&batch, &bad).is_err());
}

#[test]
fn from_params_rejects_wrong_catalog() {
    let m = Lsrm::init(shape(1, 8, 2, 4, 10), 1).unwrap();
    let err = Lsrm::from_params(shape(1, 8, 2, 4, 11), m.into_params()).unwrap_err();
    assert!(err.to_string().contains("item_emb"), "{err}");
}

#[test]
fn gradients_match_finite_differences() {
    use crate::gradcheck::{check, Stencil};
    let sh = shape(2, 8, 2, 8, 50);
    let m = randomised(sh, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let seqs: Vec<Vec<ItemIdx>> = (0..3).map(|k| (0..6 + k).map(|_| rng.gen_range(1..=50)).collect()).collect();
    let refs: Vec<&[ItemIdx]> = seqs.iter().map(Vec::as_slice).collect();
    let batch = Batch::training(&refs, &sh).unwrap();
    let opts = ForwardOptions::inference();
    let g = m.loss_and_grad(&batch, &opts, 1.0).unwrap().grads;
    let mut store = m.params().clone();
    let r = check(&mut store, &g, 1e-3, Stencil::FivePoint, 1e-8, |s| m.loss_with_params(s, &batch, &opts).unwrap());
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}
