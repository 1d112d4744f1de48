//! Supervised fine-tuning on the preferred completions, used as a control
//! for the reward-driven loop under the same update budget.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::prefs::PreferencePair;
use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::nn::{lm_loss, AdamWConfig, Disallowed, LmExample, OptimizerState, TransformerModel};
use crate::roadnet::ConnectivityMatrix;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig {
            steps: 200,
            batch_size: 32,
            seed: 0,
            optimizer: AdamWConfig::default().with_lr(1e-5),
        }
    }
}

/// `[start, prompt.., chosen..]` predicting `[prompt.., chosen.., EOT]` with
/// the prompt targets excluded from the loss.
pub fn sft_example(vocab: Vocab, pair: &PreferencePair) -> LmExample {
    let mut seq = vec![vocab.start_token()];
    seq.extend_from_slice(&pair.prompt);
    seq.extend_from_slice(&pair.chosen);
    seq.push(vocab.eot());
    let n = seq.len() - 1;
    let loss_mask = (0..n).map(|i| i + 1 > pair.prompt.len()).collect();
    LmExample {
        inputs: seq[..n].to_vec(),
        targets: seq[1..].to_vec(),
        loss_mask,
    }
}

/// Fine-tunes `policy` in place and returns the per-step training loss.
pub fn sft_finetune(policy: &mut TransformerModel, vocab: Vocab, rcm: &ConnectivityMatrix, pairs: &[PreferencePair], cfg: &SftConfig) -> Result<Vec<f64>> {
    cfg.optimizer.validate()?;
    if pairs.is_empty() {
        return Err(Error::invalid("no preference pairs to fine-tune on"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch_size", "must be at least 1"));
    }
    let examples: Vec<LmExample> = pairs.iter().map(|p| sft_example(vocab, p)).collect();
    let mut opt = OptimizerState::new(cfg.optimizer, policy.params(), policy.decay_mask());
    let mut rng = seed::stream(cfg.seed, "sft");
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let batch: Vec<LmExample> = (0..cfg.batch_size).map(|_| examples[rng.gen_range(0..examples.len())].clone()).collect();
        let out = lm_loss(policy, &batch, Some(rcm), Disallowed::Reject, Some(&mut rng), true)?;
        if !out.loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite fine-tuning loss at step {step}")));
        }
        opt.step(policy.params_mut(), out.grads.expect("gradients requested"))?;
        losses.push(out.loss);
    }
    Ok(losses)
}
