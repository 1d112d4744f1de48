//! Policy fine-tuning against the reward model with a clipped ratio
//! objective and a KL penalty toward the frozen pretrained policy.

use serde::{Deserialize, Serialize};

use super::prefs::prompt_len;
use super::reward::scored_sequence;
use crate::corpus::{Trajectory, Vocab};
use crate::error::{Error, Result};
use crate::generate::{generate, GenerateConfig};
use crate::nn::{AdamWConfig, OptimizerState, Tape, TransformerModel};
use crate::pretrain::GravitySampler;
use crate::roadnet::ConnectivityMatrix;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    /// Weight of the log-ratio penalty.
    pub beta: f64,
    pub clip_eps: f64,
    pub rollouts: usize,
    pub epochs: usize,
    pub iterations: usize,
    pub temperature: f64,
    pub m_frac: f64,
    /// Abort when the mean per-token log-ratio to the base policy exceeds this.
    pub kl_ceiling: f64,
    /// Draw prompts with gravity weights instead of uniformly.
    pub gravity_prompts: bool,
    pub seed: u64,
    pub optimizer: AdamWConfig,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            beta: 0.1,
            clip_eps: 0.2,
            rollouts: 32,
            epochs: 4,
            iterations: 50,
            temperature: 1.0,
            m_frac: 0.25,
            kl_ceiling: 5.0,
            gravity_prompts: false,
            seed: 0,
            optimizer: AdamWConfig::default().with_lr(1e-5),
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta < 0.0 {
            return Err(Error::config("beta", "must be non-negative"));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::config("clip_eps", "must lie in (0, 1)"));
        }
        if self.rollouts < 2 {
            return Err(Error::config("rollouts", "must be at least 2"));
        }
        if !(self.m_frac > 0.0 && self.m_frac < 1.0) {
            return Err(Error::config("m_frac", "must lie in (0, 1)"));
        }
        self.optimizer.validate()
    }
}

/// `U - β Σ_t (log π(c_t) - log π_base(c_t))`.
pub fn ppo_reward(u: f64, policy_logps: &[f64], base_logps: &[f64], beta: f64) -> f64 {
    assert_eq!(policy_logps.len(), base_logps.len());
    if beta == 0.0 {
        return u;
    }
    u - beta * policy_logps.iter().zip(base_logps).map(|(a, b)| a - b).sum::<f64>()
}

/// A sampled continuation: `tokens` is the full input-plus-target sequence
/// and the actions are `tokens[first_action..]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub prompt: Vec<usize>,
    pub completion: Vec<usize>,
    pub tokens: Vec<usize>,
    pub first_action: usize,
}

impl Rollout {
    pub fn new(vocab: Vocab, prompt: &[usize], completion: &[usize], ended: bool) -> Self {
        let mut tokens = vec![vocab.start_token()];
        tokens.extend_from_slice(prompt);
        tokens.extend_from_slice(completion);
        if ended {
            tokens.push(vocab.eot());
        }
        Rollout {
            prompt: prompt.to_vec(),
            completion: completion.to_vec(),
            first_action: 1 + prompt.len(),
            tokens,
        }
    }

    pub fn num_actions(&self) -> usize {
        self.tokens.len() - self.first_action
    }
}

fn allowed_rows(inputs: &[&[usize]], vocab_size: usize, rcm: &ConnectivityMatrix) -> Vec<bool> {
    let n: usize = inputs.iter().map(|s| s.len()).sum();
    let mut a = vec![false; n * vocab_size];
    let mut row = 0;
    for s in inputs {
        for &t in s.iter() {
            rcm.fill_row(t, &mut a[row * vocab_size..(row + 1) * vocab_size]);
            row += 1;
        }
    }
    a
}

/// Masked log-probabilities of every action of every rollout, eval mode.
pub fn action_logprobs(model: &TransformerModel, rcm: &ConnectivityMatrix, rollouts: &[Rollout]) -> Result<Vec<Vec<f64>>> {
    let inputs: Vec<&[usize]> = rollouts.iter().map(|r| &r.tokens[..r.tokens.len() - 1]).collect();
    let targets: Vec<usize> = rollouts.iter().flat_map(|r| r.tokens[1..].iter().copied()).collect();
    let mut tape = Tape::new(model.params());
    let p = tape.bind_params();
    let h = model.hidden(&mut tape, &p, &inputs, None)?;
    let logits = model.lm_logits(&mut tape, &p, h);
    let lp = tape.masked_log_softmax(logits, Some(allowed_rows(&inputs, model.config().vocab_size, rcm)));
    let g = tape.gather(lp, &targets);
    let all = &tape.value(g).data;
    let mut out = Vec::with_capacity(rollouts.len());
    let mut off = 0;
    for r in rollouts {
        let n = r.tokens.len() - 1;
        out.push(all[off + r.first_action - 1..off + n].to_vec());
        off += n;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoTracePoint {
    pub iteration: usize,
    pub mean_reward: f64,
    pub mean_score: f64,
    pub mean_kl: f64,
    pub mean_completion_len: f64,
}

pub fn ppo_trace_csv(trace: &[PpoTracePoint], header_comment: &str) -> String {
    let mut s = String::from(header_comment);
    s.push_str("iteration,mean_reward,mean_score,mean_kl,mean_completion_len\n");
    for p in trace {
        s.push_str(&format!("{},{},{},{},{}\n", p.iteration, p.mean_reward, p.mean_score, p.mean_kl, p.mean_completion_len));
    }
    s
}

/// Whitened copies of `x`; a constant input maps to zeros.
pub fn whiten(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    x.iter().map(|v| if sd > 1e-12 { (v - mean) / sd } else { 0.0 }).collect()
}

/// Fine-tunes `policy` in place and returns the per-iteration trace.
#[allow(clippy::too_many_arguments)]
pub fn ppo_finetune(
    policy: &mut TransformerModel,
    base: &TransformerModel,
    reward_model: &TransformerModel,
    vocab: Vocab,
    rcm: &ConnectivityMatrix,
    prompts_from: &[Trajectory],
    prompt_sampler: Option<&GravitySampler>,
    cfg: &PpoConfig,
) -> Result<Vec<PpoTracePoint>> {
    cfg.validate()?;
    let max_len = policy.config().block_size - 2;
    let eligible: Vec<usize> = (0..prompts_from.len())
        .filter(|&i| prompts_from[i].len() >= 2 && prompts_from[i].len() <= max_len)
        .collect();
    if eligible.is_empty() {
        return Err(Error::invalid("no trajectory can provide a prompt"));
    }
    let uniform;
    let sampler = match (cfg.gravity_prompts, prompt_sampler) {
        (true, Some(s)) => s,
        (true, None) => return Err(Error::config("gravity_prompts", "no gravity sampler supplied")),
        (false, _) => {
            uniform = GravitySampler::uniform(prompts_from.len())?;
            &uniform
        }
    };
    let gen_cfg = GenerateConfig {
        temperature: cfg.temperature,
        max_len,
        rcm_masking: true,
        max_retries: 0,
    };
    let mut opt = OptimizerState::new(cfg.optimizer, policy.params(), policy.decay_mask());
    let mut rng = seed::stream(cfg.seed, "ppo");
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let mut rollouts = Vec::with_capacity(cfg.rollouts);
        while rollouts.len() < cfg.rollouts {
            let i = sampler.draw(&mut rng);
            if eligible.binary_search(&i).is_err() {
                continue;
            }
            let t = &prompts_from[i];
            let m = prompt_len(t.len(), cfg.m_frac);
            let g = generate(policy, vocab, Some(rcm), &gen_cfg, &t[..m], &mut rng)?;
            let completion = &g.trajectory[m..];
            let ended = g.trajectory.len() < max_len;
            rollouts.push(Rollout::new(vocab, &t[..m], completion, ended));
        }
        rollouts.retain(|r| r.num_actions() > 0);
        let old = action_logprobs(policy, rcm, &rollouts)?;
        let base_lp = action_logprobs(base, rcm, &rollouts)?;
        let seqs: Vec<Vec<usize>> = rollouts.iter().map(|r| scored_sequence(vocab, &r.prompt, &r.completion)).collect();
        let refs: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
        let scores = reward_model.scores(&refs)?;
        let rewards: Vec<f64> = scores.iter().zip(old.iter().zip(&base_lp)).map(|(&u, (o, b))| ppo_reward(u, o, b, cfg.beta)).collect();
        let n_actions: usize = old.iter().map(Vec::len).sum();
        let kl = old.iter().zip(&base_lp).flat_map(|(o, b)| o.iter().zip(b).map(|(x, y)| x - y)).sum::<f64>() / n_actions as f64;
        if !kl.is_finite() || kl > cfg.kl_ceiling {
            return Err(Error::Numerical(format!("policy drifted from base: mean per-token log-ratio {kl:.3} at iteration {it}")));
        }
        let adv = whiten(&rewards);

        let inputs: Vec<&[usize]> = rollouts.iter().map(|r| &r.tokens[..r.tokens.len() - 1]).collect();
        let targets: Vec<usize> = rollouts.iter().flat_map(|r| r.tokens[1..].iter().copied()).collect();
        let mut old_full = Vec::with_capacity(targets.len());
        let mut adv_full = Vec::with_capacity(targets.len());
        for ((r, o), &a) in rollouts.iter().zip(&old).zip(&adv) {
            let n_prompt = r.first_action - 1;
            old_full.extend(std::iter::repeat(0.0).take(n_prompt));
            adv_full.extend(std::iter::repeat(0.0).take(n_prompt));
            old_full.extend_from_slice(o);
            adv_full.extend(std::iter::repeat(a).take(o.len()));
        }
        let allowed = allowed_rows(&inputs, policy.config().vocab_size, rcm);
        for _ in 0..cfg.epochs {
            let grads = {
                let mut tape = Tape::new(policy.params());
                let p = tape.bind_params();
                let h = policy.hidden(&mut tape, &p, &inputs, None)?;
                let logits = policy.lm_logits(&mut tape, &p, h);
                let lp = tape.masked_log_softmax(logits, Some(allowed.clone()));
                let g = tape.gather(lp, &targets);
                let surrogate = tape.clipped_surrogate_loss(g, old_full.clone(), adv_full.clone(), cfg.clip_eps);
                let loss = tape.scale(surrogate, 1.0 / n_actions as f64);
                if !tape.scalar(loss).is_finite() {
                    return Err(Error::Numerical(format!("non-finite policy loss at iteration {it}")));
                }
                tape.backward(loss)
            };
            opt.step(policy.params_mut(), grads)?;
        }
        let n = rollouts.len() as f64;
        let point = PpoTracePoint {
            iteration: it + 1,
            mean_reward: rewards.iter().sum::<f64>() / n,
            mean_score: scores.iter().sum::<f64>() / n,
            mean_kl: kl,
            mean_completion_len: rollouts.iter().map(|r| r.completion.len()).sum::<usize>() as f64 / n,
        };
        log::info!(
            "ppo iter {} reward {:.4} score {:.4} kl {:.4} len {:.2}",
            point.iteration,
            point.mean_reward,
            point.mean_score,
            point.mean_kl,
            point.mean_completion_len
        );
        trace.push(point);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_reduces_to_score() {
        assert_eq!(ppo_reward(1.5, &[-1.0, -2.0], &[-0.5, -0.1], 0.0), 1.5);
        assert_eq!(ppo_reward(1.5, &[-1.0, -2.0], &[-1.0, -2.0], 0.3), 1.5);
    }

    #[test]
    fn three_token_hand_example() {
        let pol = [-0.2, -1.1, -0.05];
        let base = [-0.4, -0.9, -0.30];
        // log-ratios 0.2, -0.2, 0.25 sum to 0.25
        let r = ppo_reward(2.0, &pol, &base, 0.1);
        assert!((r - (2.0 - 0.1 * 0.25)).abs() < 1e-10);
    }

    #[test]
    fn whitening() {
        let w = whiten(&[1.0, 2.0, 3.0, 4.0]);
        assert!(w.iter().sum::<f64>().abs() < 1e-12);
        assert!((w.iter().map(|x| x * x).sum::<f64>() / 4.0 - 1.0).abs() < 1e-12);
        assert_eq!(whiten(&[2.0, 2.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn rollout_actions_include_end() {
        let v = Vocab::new(5, crate::corpus::BoundaryMode::EotOnly);
        let r = Rollout::new(v, &[1], &[2, 3], true);
        assert_eq!(r.tokens, vec![5, 1, 2, 3, 5]);
        assert_eq!(r.num_actions(), 3);
        let r = Rollout::new(v, &[1], &[], true);
        assert_eq!(r.num_actions(), 1);
    }
}
