//! Softmax, connectivity masking and next-token cross-entropy.

use super::model::TransformerModel;
use super::tape::{Tape, Var};
use super::mat::Mat;
use crate::error::{Error, Result};
use crate::roadnet::ConnectivityMatrix;
use crate::seed::Rng;

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|&x| if x == f64::NEG_INFINITY { 0.0 } else { (x - max).exp() }).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Sets every logit whose token may not follow `prev` to `-inf`.
pub fn apply_rcm_mask(row: &mut [f64], prev: usize, rcm: &ConnectivityMatrix) {
    for (next, x) in row.iter_mut().enumerate() {
        if !rcm.allowed(prev, next) {
            *x = f64::NEG_INFINITY;
        }
    }
}

/// Softmax over the entries flagged in `allowed`; the rest get exactly 0.
pub fn restricted_softmax(row: &[f64], allowed: &[bool]) -> Vec<f64> {
    let masked: Vec<f64> = row
        .iter()
        .zip(allowed)
        .map(|(&x, &a)| if a { x } else { f64::NEG_INFINITY })
        .collect();
    softmax(&masked)
}

/// Mean negative log-likelihood of `targets` over positions where
/// `loss_mask` is true.
pub fn cross_entropy(logits: &Mat, targets: &[usize], loss_mask: &[bool]) -> Result<f64> {
    if logits.rows != targets.len() || targets.len() != loss_mask.len() {
        return Err(Error::invalid("logits, targets and mask disagree in length"));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (r, (&t, &m)) in targets.iter().zip(loss_mask).enumerate() {
        if !m {
            continue;
        }
        let row = logits.row(r);
        if t >= row.len() {
            return Err(Error::invalid(format!("target {t} outside vocabulary")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        total += lse - row[t];
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("every position is masked out of the loss"));
    }
    Ok(total / n as f64)
}

/// One teacher-forced training sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LmExample {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    /// Positions that contribute to the loss.
    pub loss_mask: Vec<bool>,
}

impl From<crate::corpus::Block> for LmExample {
    fn from(b: crate::corpus::Block) -> Self {
        let n = b.active_len();
        LmExample {
            inputs: b.inputs[..n].to_vec(),
            targets: b.targets[..n].to_vec(),
            loss_mask: b.loss_mask[..n].to_vec(),
        }
    }
}

/// What to do with a target the connectivity mask forbids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Disallowed {
    /// Fail: training data must be consistent with the mask.
    Reject,
    /// Leave it out of the mean and count it.
    Skip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmLoss {
    pub loss: f64,
    pub positions: usize,
    pub skipped: usize,
    /// Parameter gradients, present when requested.
    pub grads: Option<Vec<Mat>>,
}

/// Batched masked next-token loss for an LM-headed model. With `rcm`, each
/// row's softmax is restricted to the tokens allowed after its input token.
pub fn lm_loss(
    model: &TransformerModel,
    batch: &[LmExample],
    rcm: Option<&ConnectivityMatrix>,
    on_disallowed: Disallowed,
    dropout_rng: Option<&mut Rng>,
    with_grads: bool,
) -> Result<LmLoss> {
    let vocab = model.config().vocab_size;
    let seqs: Vec<&[usize]> = batch.iter().map(|e| e.inputs.as_slice()).collect();
    let mut targets = Vec::new();
    let mut weights_on = Vec::new();
    let mut skipped = 0;
    for e in batch {
        if e.inputs.len() != e.targets.len() || e.targets.len() != e.loss_mask.len() {
            return Err(Error::invalid("example inputs, targets and mask disagree in length"));
        }
        for ((&i, &t), &m) in e.inputs.iter().zip(&e.targets).zip(&e.loss_mask) {
            if t >= vocab {
                return Err(Error::invalid(format!("target {t} outside vocabulary")));
            }
            let mut on = m;
            if m {
                if let Some(r) = rcm {
                    if !r.allowed(i, t) {
                        match on_disallowed {
                            Disallowed::Reject => {
                                return Err(Error::invalid(format!("target {t} after {i} is not permitted by the connectivity matrix")))
                            }
                            Disallowed::Skip => {
                                skipped += 1;
                                on = false;
                            }
                        }
                    }
                }
            }
            targets.push(t);
            weights_on.push(on);
        }
    }
    let n = weights_on.iter().filter(|&&b| b).count();
    if n == 0 {
        return Err(Error::invalid("every position is masked out of the loss"));
    }
    let allowed = rcm.map(|r| {
        let mut a = vec![false; targets.len() * vocab];
        let mut row = 0;
        for e in batch {
            for &i in &e.inputs {
                r.fill_row(i, &mut a[row * vocab..(row + 1) * vocab]);
                row += 1;
            }
        }
        a
    });
    let weights: Vec<f64> = weights_on.iter().map(|&b| if b { -1.0 / n as f64 } else { 0.0 }).collect();

    let mut tape = Tape::new(model.params());
    let p = tape.bind_params();
    let h = model.hidden(&mut tape, &p, &seqs, dropout_rng)?;
    let logits = model.lm_logits(&mut tape, &p, h);
    let lp = tape.masked_log_softmax(logits, allowed);
    let picked = tape.gather(lp, &targets);
    let loss: Var = tape.weighted_sum(picked, weights);
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss {value}")));
    }
    let grads = with_grads.then(|| tape.backward(loss));
    Ok(LmLoss {
        loss: value,
        positions: n,
        skipped,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{BoundaryMode, Trajectory, Vocab};
    use crate::nn::model::{HeadKind, ModelConfig};
    use crate::seed;
    use rand::Rng as _;

    #[test]
    fn hard_mask_zeroes_probability() {
        let p = restricted_softmax(&[2.0, 1.0, 0.5], &[true, false, true]);
        assert_eq!(p[1], 0.0);
        let z = 2f64.exp() + 0.5f64.exp();
        assert!((p[0] - 2f64.exp() / z).abs() < 1e-15);
        let q = restricted_softmax(&[2.0, 1.0, 0.5], &[true; 3]);
        assert_eq!(q, softmax(&[2.0, 1.0, 0.5]));
    }

    #[test]
    fn restricted_softmax_matches_renormalized_subset() {
        let mut rng = seed::stream(1, "mask");
        for _ in 0..1000 {
            let n = rng.gen_range(2..12);
            let row: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let mut allowed: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            allowed[rng.gen_range(0..n)] = true;
            let p = restricted_softmax(&row, &allowed);
            // oracle: full softmax, zero the disallowed, renormalize
            let full: Vec<f64> = row.iter().map(|x| x.exp()).collect();
            let z: f64 = full.iter().zip(&allowed).filter(|(_, &a)| a).map(|(x, _)| x).sum();
            for i in 0..n {
                let want = if allowed[i] { full[i] / z } else { 0.0 };
                assert!((p[i] - want).abs() < 1e-12);
                if !allowed[i] {
                    assert_eq!(p[i], 0.0);
                }
            }
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rcm_mask_leaves_allowed_entries() {
        let v = Vocab::new(3, BoundaryMode::EotOnly);
        let rcm = ConnectivityMatrix::from_corpus(&[Trajectory::new(vec![0, 1])], v);
        let mut row = vec![0.1, 0.2, 0.3, 0.4];
        apply_rcm_mask(&mut row, 0, &rcm);
        assert_eq!(row, vec![f64::NEG_INFINITY, 0.2, f64::NEG_INFINITY, 0.4]);
    }

    #[test]
    fn cross_entropy_uniform_and_limit() {
        let l = cross_entropy(&Mat::zeros(3, 7), &[0, 3, 6], &[true; 3]).unwrap();
        assert!((l - 7f64.ln()).abs() < 1e-12);
        let mut m = Mat::zeros(1, 4);
        m.set(0, 2, 60.0);
        assert!(cross_entropy(&m, &[2], &[true]).unwrap() < 1e-20);
        assert!(cross_entropy(&m, &[2], &[false]).is_err());
    }

    #[test]
    fn cross_entropy_matches_literal_oracle() {
        let mut rng = seed::stream(2, "ce");
        for _ in 0..50 {
            let (t, v) = (rng.gen_range(1..6), rng.gen_range(2..9));
            let logits = Mat::from_vec(t, v, (0..t * v).map(|_| rng.gen_range(-4.0..4.0)).collect());
            let targets: Vec<usize> = (0..t).map(|_| rng.gen_range(0..v)).collect();
            let mut mask: Vec<bool> = (0..t).map(|_| rng.gen_bool(0.7)).collect();
            mask[0] = true;
            let mut sum = 0.0;
            let mut n = 0.0;
            for r in 0..t {
                if mask[r] {
                    let z: f64 = logits.row(r).iter().map(|x| x.exp()).sum();
                    sum += -(logits.get(r, targets[r]).exp() / z).ln();
                    n += 1.0;
                }
            }
            let got = cross_entropy(&logits, &targets, &mask).unwrap();
            assert!((got - sum / n).abs() < 1e-10);
        }
    }

    #[test]
    fn tape_loss_agrees_with_standalone() {
        let cfg = ModelConfig { n_layers: 1, n_heads: 1, d_model: 8, block_size: 5, vocab_size: 6, dropout: 0.0, seed: 1 };
        let m = TransformerModel::new(cfg, HeadKind::Lm).unwrap();
        let ex = LmExample { inputs: vec![5, 1, 2], targets: vec![1, 2, 3], loss_mask: vec![true, false, true] };
        let got = lm_loss(&m, &[ex.clone()], None, Disallowed::Reject, None, false).unwrap();
        let want = cross_entropy(&m.forward(&ex.inputs).unwrap(), &ex.targets, &ex.loss_mask).unwrap();
        assert!((got.loss - want).abs() < 1e-12);
    }

    #[test]
    fn disallowed_targets_rejected_or_skipped() {
        let v = Vocab::new(5, BoundaryMode::EotOnly);
        let rcm = ConnectivityMatrix::from_corpus(&[Trajectory::new(vec![0, 1, 2])], v);
        let cfg = ModelConfig { n_layers: 1, n_heads: 1, d_model: 8, block_size: 5, vocab_size: 6, dropout: 0.0, seed: 1 };
        let m = TransformerModel::new(cfg, HeadKind::Lm).unwrap();
        let ex = LmExample { inputs: vec![5, 0, 3], targets: vec![0, 1, 4], loss_mask: vec![true; 3] };
        assert!(lm_loss(&m, &[ex.clone()], Some(&rcm), Disallowed::Reject, None, false).is_err());
        let l = lm_loss(&m, &[ex], Some(&rcm), Disallowed::Skip, None, false).unwrap();
        assert_eq!((l.positions, l.skipped), (2, 1));
    }
}
