//! Scalar-headed reward model trained on preference pairs.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::prefs::PreferencePair;
use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::nn::model::last_rows;
use crate::nn::{AdamWConfig, OptimizerState, Tape, TransformerModel};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub val_frac: f64,
    pub eval_interval: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            steps: 200,
            batch_size: 32,
            val_frac: 0.2,
            eval_interval: 50,
            seed: 0,
            optimizer: AdamWConfig::default().with_lr(1e-4),
        }
    }
}

/// `-ln σ(u_chosen - u_rejected)`.
pub fn pair_loss(u_chosen: f64, u_rejected: f64) -> f64 {
    let d = u_chosen - u_rejected;
    if d >= 0.0 {
        (-d).exp().ln_1p()
    } else {
        -d + d.exp().ln_1p()
    }
}

/// Token sequence the reward model scores: start token, prompt,
/// completion, end token.
pub fn scored_sequence(vocab: Vocab, prompt: &[usize], completion: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(prompt.len() + completion.len() + 2);
    s.push(vocab.start_token());
    s.extend_from_slice(prompt);
    s.extend_from_slice(completion);
    s.push(vocab.eot());
    s
}

/// Eval-mode score of a prompt and completion.
pub fn score(model: &TransformerModel, vocab: Vocab, prompt: &[usize], completion: &[usize]) -> Result<f64> {
    Ok(model.scores(&[&scored_sequence(vocab, prompt, completion)])?[0])
}

/// Fraction of pairs whose chosen completion scores strictly higher.
pub fn pairwise_accuracy(model: &TransformerModel, vocab: Vocab, pairs: &[PreferencePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no pairs to score"));
    }
    let mut right = 0;
    for chunk in pairs.chunks(64) {
        let seqs: Vec<Vec<usize>> = chunk
            .iter()
            .flat_map(|p| [scored_sequence(vocab, &p.prompt, &p.chosen), scored_sequence(vocab, &p.prompt, &p.rejected)])
            .collect();
        let refs: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
        let s = model.scores(&refs)?;
        right += s.chunks(2).filter(|c| c[0] > c[1]).count();
    }
    Ok(right as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardTracePoint {
    pub step: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct RewardOutcome {
    pub model: TransformerModel,
    pub trace: Vec<RewardTracePoint>,
    pub val_accuracy: f64,
    pub train_pairs: usize,
    pub val_pairs: usize,
}

/// Splits pairs into training and validation parts with a seeded shuffle.
pub fn split_pairs(pairs: &[PreferencePair], val_frac: f64, seed_value: u64) -> Result<(Vec<PreferencePair>, Vec<PreferencePair>)> {
    if pairs.len() < 2 {
        return Err(Error::invalid("reward training needs at least two pairs"));
    }
    if !(val_frac > 0.0 && val_frac < 1.0) {
        return Err(Error::config("val_frac", "must lie in (0, 1)"));
    }
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    idx.shuffle(&mut seed::stream(seed_value, "reward_split"));
    let n_val = ((pairs.len() as f64 * val_frac).round() as usize).clamp(1, pairs.len() - 1);
    let val = idx[..n_val].iter().map(|&i| pairs[i].clone()).collect();
    let train = idx[n_val..].iter().map(|&i| pairs[i].clone()).collect();
    Ok((train, val))
}

/// Minimizes the pairwise logistic loss starting from `init`, which must
/// carry a score head.
pub fn train_reward_model(init: TransformerModel, vocab: Vocab, pairs: &[PreferencePair], cfg: &RewardConfig) -> Result<RewardOutcome> {
    cfg.optimizer.validate()?;
    if cfg.batch_size == 0 || cfg.eval_interval == 0 {
        return Err(Error::config("batch_size", "batch_size and eval_interval must be at least 1"));
    }
    let (train, val) = split_pairs(pairs, cfg.val_frac, cfg.seed)?;
    let mut model = init;
    let mut opt = OptimizerState::new(cfg.optimizer, model.params(), model.decay_mask());
    let mut rng = seed::stream(cfg.seed, "reward");
    let mut trace = Vec::new();
    let (mut window, mut wn) = (0.0, 0usize);
    for step in 1..=cfg.steps {
        let batch: Vec<&PreferencePair> = (0..cfg.batch_size).map(|_| &train[rng.gen_range(0..train.len())]).collect();
        let seqs: Vec<Vec<usize>> = batch
            .iter()
            .map(|p| scored_sequence(vocab, &p.prompt, &p.chosen))
            .chain(batch.iter().map(|p| scored_sequence(vocab, &p.prompt, &p.rejected)))
            .collect();
        let refs: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
        let (loss, grads) = {
            let mut tape = Tape::new(model.params());
            let p = tape.bind_params();
            let h = model.hidden(&mut tape, &p, &refs, Some(&mut rng))?;
            let s = model.score_rows(&mut tape, &p, h, &last_rows(&refs));
            let b = batch.len();
            let chosen: Vec<_> = (0..b).map(|i| tape.select_row(s, i)).collect();
            let rejected: Vec<_> = (0..b).map(|i| tape.select_row(s, b + i)).collect();
            let sc = tape.stack(&chosen);
            let sr = tape.stack(&rejected);
            let d = tape.sub(sc, sr);
            let ls = tape.log_sigmoid(d);
            let loss = tape.weighted_sum(ls, vec![-1.0 / b as f64; b]);
            let v = tape.scalar(loss);
            if !v.is_finite() {
                return Err(Error::Numerical(format!("non-finite reward loss at step {step}")));
            }
            (v, tape.backward(loss))
        };
        opt.step(model.params_mut(), grads)?;
        window += loss;
        wn += 1;
        if step % cfg.eval_interval == 0 || step == cfg.steps {
            let acc = pairwise_accuracy(&model, vocab, &val)?;
            log::info!("reward step {step} loss {:.4} val acc {acc:.3}", window / wn as f64);
            trace.push(RewardTracePoint {
                step,
                train_loss: window / wn as f64,
                val_accuracy: acc,
            });
            window = 0.0;
            wn = 0;
        }
    }
    let val_accuracy = pairwise_accuracy(&model, vocab, &val)?;
    Ok(RewardOutcome {
        model,
        trace,
        val_accuracy,
        train_pairs: train.len(),
        val_pairs: val.len(),
    })
}

pub fn reward_trace_csv(trace: &[RewardTracePoint], header_comment: &str) -> String {
    let mut s = String::from(header_comment);
    s.push_str("step,train_loss,val_accuracy\n");
    for p in trace {
        s.push_str(&format!("{},{},{}\n", p.step, p.train_loss, p.val_accuracy));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_is_ln2_and_gap_limits() {
        assert!((pair_loss(0.3, 0.3) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(pair_loss(50.0, 0.0) < 1e-20);
        assert!((pair_loss(0.0, 50.0) - 50.0).abs() < 1e-12);
        for c in [-3.0, 0.0, 11.5] {
            assert!((pair_loss(1.0 + c, -0.5 + c) - pair_loss(1.0, -0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let pairs: Vec<PreferencePair> = (0..10)
            .map(|i| PreferencePair { prompt: vec![i], chosen: vec![], rejected: vec![1], gamma_chosen: 0.0, gamma_rejected: 1.0, source: i })
            .collect();
        let (a, b) = split_pairs(&pairs, 0.2, 3).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        assert_eq!(split_pairs(&pairs, 0.2, 3).unwrap(), (a.clone(), b.clone()));
        assert!(b.iter().all(|p| !a.contains(p)));
        assert!(split_pairs(&pairs[..1], 0.2, 3).is_err());
    }
}
