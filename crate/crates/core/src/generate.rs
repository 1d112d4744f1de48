//! Autoregressive trajectory sampling.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Trajectory, Vocab};
use crate::error::{Error, Result};
use crate::nn::{softmax, TransformerModel};
use crate::roadnet::ConnectivityMatrix;
use crate::seed::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    /// Logit divisor; 0 selects greedy decoding.
    pub temperature: f64,
    /// Cap on trajectory length in links, prompt included.
    pub max_len: usize,
    pub rcm_masking: bool,
    /// Extra attempts for a trajectory that comes out empty.
    pub max_retries: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            temperature: 1.0,
            max_len: 63,
            rcm_masking: true,
            max_retries: 10,
        }
    }
}

impl GenerateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("temperature", "must be a finite non-negative number"));
        }
        if self.max_len == 0 {
            return Err(Error::config("max_len", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub trajectory: Trajectory,
    /// True when the context outgrew the block and was windowed.
    pub windowed: bool,
}

/// Picks the next token from a logit row: greedy at zero temperature,
/// otherwise a draw from the tempered, masked softmax.
pub fn choose_token(logits: &mut [f64], temperature: f64, allowed: Option<&[bool]>, rng: &mut Rng) -> usize {
    if let Some(a) = allowed {
        for (x, &ok) in logits.iter_mut().zip(a) {
            if !ok {
                *x = f64::NEG_INFINITY;
            }
        }
    }
    if temperature == 0.0 {
        let mut best = 0;
        for (i, &x) in logits.iter().enumerate() {
            if x > logits[best] {
                best = i;
            }
        }
        return best;
    }
    logits.iter_mut().for_each(|x| *x /= temperature);
    let p = softmax(logits);
    let u = rng.gen::<f64>();
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi > 0.0 {
            last_nonzero = i;
            acc += pi;
            if u < acc {
                return i;
            }
        }
    }
    last_nonzero
}

/// Generates one trajectory continuing `prompt` (link ids, possibly empty).
pub fn generate(
    model: &TransformerModel,
    vocab: Vocab,
    rcm: Option<&ConnectivityMatrix>,
    cfg: &GenerateConfig,
    prompt: &[usize],
    rng: &mut Rng,
) -> Result<Generated> {
    cfg.validate()?;
    let block = model.config().block_size;
    if vocab.size() != model.config().vocab_size {
        return Err(Error::invalid("vocabulary does not match model"));
    }
    if prompt.len() + 1 > block {
        return Err(Error::invalid(format!("prompt of {} links does not fit block size {block}", prompt.len())));
    }
    if let Some(&bad) = prompt.iter().find(|&&l| l >= vocab.num_links()) {
        return Err(Error::invalid(format!("prompt contains unknown link {bad}")));
    }
    if let Some(r) = rcm {
        if !r.is_connected(prompt) {
            return Err(Error::invalid("prompt is not consistent with the connectivity matrix"));
        }
    }
    let mut ctx = Vec::with_capacity(cfg.max_len + 1);
    ctx.push(vocab.start_token());
    ctx.extend_from_slice(prompt);
    let mut windowed = false;
    let mut allowed = vec![true; vocab.size()];
    while ctx.len() - 1 < cfg.max_len {
        let window = if ctx.len() > block {
            windowed = true;
            &ctx[ctx.len() - (block - 1)..]
        } else {
            &ctx[..]
        };
        let mut logits = model.next_token_logits(window)?;
        match rcm {
            Some(r) => r.fill_row(*ctx.last().unwrap(), &mut allowed),
            None => allowed.fill(true),
        }
        if let Some(b) = vocab.bot() {
            allowed[b] = false;
        }
        let tok = choose_token(&mut logits, cfg.temperature, Some(&allowed), rng);
        if tok == vocab.eot() {
            break;
        }
        ctx.push(tok);
    }
    Ok(Generated {
        trajectory: Trajectory::new(ctx[1..].to_vec()),
        windowed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCorpus {
    pub trajectories: Vec<Trajectory>,
    /// Redraws caused by empty outputs.
    pub retries: usize,
    /// Requested trajectories that stayed empty after every retry.
    pub shortfall: usize,
    pub windowed: usize,
}

/// `n` unconditional generations. Trajectory `i` uses its own sub-seed, so
/// the result does not depend on the thread count.
pub fn generate_corpus(
    model: &TransformerModel,
    vocab: Vocab,
    rcm: Option<&ConnectivityMatrix>,
    n: usize,
    cfg: &GenerateConfig,
    seed_value: u64,
) -> Result<GeneratedCorpus> {
    if n == 0 {
        return Err(Error::invalid("requested zero trajectories"));
    }
    cfg.validate()?;
    let results: Vec<Result<(Option<Generated>, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::indexed(seed_value, "generate", i as u64);
            for attempt in 0..=cfg.max_retries {
                let g = generate(model, vocab, rcm, cfg, &[], &mut rng)?;
                if !g.trajectory.is_empty() {
                    return Ok((Some(g), attempt));
                }
            }
            Ok((None, cfg.max_retries))
        })
        .collect();
    let mut out = GeneratedCorpus {
        trajectories: Vec::with_capacity(n),
        retries: 0,
        shortfall: 0,
        windowed: 0,
    };
    for r in results {
        let (g, retries) = r?;
        out.retries += retries;
        match g {
            Some(g) => {
                out.windowed += g.windowed as usize;
                out.trajectories.push(g.trajectory);
            }
            None => out.shortfall += 1,
        }
    }
    if out.shortfall > 0 {
        log::warn!("{} of {n} generations stayed empty after {} retries", out.shortfall, cfg.max_retries);
    }
    Ok(out)
}
