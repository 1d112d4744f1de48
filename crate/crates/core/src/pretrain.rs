//! Gravity-weighted trajectory sampling and the pretraining loop.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{PackedStream, Trajectory, Vocab};
use crate::error::{Error, Result};
use crate::nn::{lm_loss, AdamWConfig, Disallowed, LmExample, OptimizerState, TransformerModel};
use crate::roadnet::{ConnectivityMatrix, GravityTable, RegionMap};
use crate::seed::{self, Rng};

/// Relative floor applied to gravity weights before normalization.
pub const GRAVITY_FLOOR: f64 = 1e-6;

/// Draws trajectory indices i.i.d. from a fixed categorical distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GravitySampler {
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl GravitySampler {
    /// Normalizes non-negative weights after flooring each at
    /// `GRAVITY_FLOOR * max`. All-zero input gives the uniform distribution.
    pub fn from_weights(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::invalid("sampler needs at least one trajectory"));
        }
        if raw.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("sampling weights must be finite and non-negative"));
        }
        let max = raw.iter().copied().fold(0.0, f64::max);
        let w: Vec<f64> = if max == 0.0 {
            vec![1.0; raw.len()]
        } else {
            raw.iter().map(|&g| g.max(GRAVITY_FLOOR * max)).collect()
        };
        let total: f64 = w.iter().sum();
        let probs: Vec<f64> = w.iter().map(|x| x / total).collect();
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(GravitySampler { probs, cumulative })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::from_weights(&vec![1.0; n])
    }

    /// Weight of each trajectory is the gravity between the regions of its
    /// first and last links.
    pub fn from_gravity(corpus: &[Trajectory], rmap: &RegionMap, table: &GravityTable) -> Result<Self> {
        let raw: Vec<f64> = corpus
            .iter()
            .map(|t| match (t.first(), t.last()) {
                (Some(&a), Some(&b)) => table.get(rmap.region_of(a), rmap.region_of(b)),
                _ => 0.0,
            })
            .collect();
        Self::from_weights(&raw)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn draw(&self, rng: &mut Rng) -> usize {
        let total = *self.cumulative.last().unwrap();
        let u = rng.gen::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= u).min(self.probs.len() - 1)
    }

    pub fn sample(&self, rng: &mut Rng, k: usize) -> Vec<usize> {
        (0..k).map(|_| self.draw(rng)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub eval_interval: usize,
    /// Held-out trajectories scored at each evaluation; 0 means all.
    pub eval_trajectories: usize,
    pub seed: u64,
    pub gravity_sampling: bool,
    pub rcm_masking: bool,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            steps: 3000,
            eval_interval: 100,
            eval_trajectories: 500,
            seed: 0,
            gravity_sampling: true,
            rcm_masking: true,
            optimizer: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.eval_interval == 0 {
            return Err(Error::config("eval_interval", "must be at least 1"));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub train_loss: f64,
    pub eval_loss: f64,
}

pub fn trace_to_csv(trace: &[TracePoint], header_comment: &str) -> String {
    let mut s = String::from(header_comment);
    s.push_str("step,train_loss,eval_loss\n");
    for p in trace {
        s.push_str(&format!("{},{},{}\n", p.step, p.train_loss, p.eval_loss));
    }
    s
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: TransformerModel,
    pub optimizer: OptimizerState,
    pub rng: Rng,
    pub step: usize,
}

impl TrainState {
    pub fn fresh(model: TransformerModel, cfg: &TrainConfig) -> Self {
        let optimizer = OptimizerState::new(cfg.optimizer, model.params(), model.decay_mask());
        TrainState {
            model,
            optimizer,
            rng: seed::stream(cfg.seed, "pretrain"),
            step: 0,
        }
    }
}

/// Data shared by every step of a run.
pub struct TrainData<'a> {
    pub stream: PackedStream,
    pub heldout: Vec<LmExample>,
    pub rcm: &'a ConnectivityMatrix,
    pub sampler: GravitySampler,
}

impl<'a> TrainData<'a> {
    pub fn new(
        train: &[Trajectory],
        heldout: &[Trajectory],
        vocab: Vocab,
        block_size: usize,
        rcm: &'a ConnectivityMatrix,
        sampler: GravitySampler,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::invalid("empty training corpus"));
        }
        if sampler.len() != train.len() {
            return Err(Error::invalid("sampler size does not match training corpus"));
        }
        if rcm.vocab() != vocab {
            return Err(Error::invalid("connectivity matrix built over a different vocabulary"));
        }
        let stream = PackedStream::from_corpus(train, vocab, block_size)?;
        if stream.truncated() > 0 {
            log::warn!("{} training trajectories truncated to {} links", stream.truncated(), block_size - 1);
        }
        let take = if cfg.eval_trajectories == 0 { heldout.len() } else { cfg.eval_trajectories.min(heldout.len()) };
        let hstream = PackedStream::from_corpus(&heldout[..take], vocab, block_size)?;
        let heldout = (0..take).map(|i| hstream.trajectory_block(i).into()).collect();
        Ok(TrainData { stream, heldout, rcm, sampler })
    }

    pub fn batch(&self, indices: &[usize]) -> Vec<LmExample> {
        indices.iter().map(|&i| self.stream.trajectory_block(i).into()).collect()
    }
}

/// Mean held-out loss in eval mode, with the number of targets skipped
/// because the mask forbids them.
pub fn heldout_loss(model: &TransformerModel, examples: &[LmExample], rcm: Option<&ConnectivityMatrix>) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut n = 0usize;
    let mut skipped = 0;
    for chunk in examples.chunks(64) {
        let l = lm_loss(model, chunk, rcm, Disallowed::Skip, None, false)?;
        total += l.loss * l.positions as f64;
        n += l.positions;
        skipped += l.skipped;
    }
    if n == 0 {
        return Err(Error::invalid("no held-out positions to score"));
    }
    Ok((total / n as f64, skipped))
}

fn fingerprint(indices: &[usize]) -> String {
    let bytes: Vec<u8> = indices.iter().flat_map(|i| (*i as u64).to_le_bytes()).collect();
    seed::sha256_hex(&bytes)[..16].to_string()
}

/// Runs training from `state.step` up to `cfg.steps`, returning the trace
/// points recorded along the way.
pub fn train(state: &mut TrainState, data: &TrainData, cfg: &TrainConfig) -> Result<Vec<TracePoint>> {
    cfg.validate()?;
    let rcm = cfg.rcm_masking.then_some(data.rcm);
    let uniform = GravitySampler::uniform(data.sampler.len())?;
    let sampler = if cfg.gravity_sampling { &data.sampler } else { &uniform };
    let mut trace = Vec::new();
    let mut window = 0.0;
    let mut window_n = 0usize;
    while state.step < cfg.steps {
        let idx = sampler.sample(&mut state.rng, cfg.batch_size);
        let batch = data.batch(&idx);
        let out = lm_loss(&state.model, &batch, rcm, Disallowed::Reject, Some(&mut state.rng), true).map_err(|e| match e {
            Error::Numerical(m) => Error::Numerical(format!("{m} at step {} (batch {})", state.step, fingerprint(&idx))),
            other => other,
        })?;
        let grads = out.grads.expect("requested");
        state.optimizer.step(state.model.params_mut(), grads).map_err(|e| match e {
            Error::Numerical(m) => Error::Numerical(format!("{m} (batch {})", fingerprint(&idx))),
            other => other,
        })?;
        if !state.model.is_finite() {
            return Err(Error::Numerical(format!("non-finite parameters after step {}", state.step)));
        }
        state.step += 1;
        window += out.loss;
        window_n += 1;
        if state.step % cfg.eval_interval == 0 || state.step == cfg.steps {
            let eval_loss = if data.heldout.is_empty() {
                f64::NAN
            } else {
                heldout_loss(&state.model, &data.heldout, rcm)?.0
            };
            let p = TracePoint {
                step: state.step,
                train_loss: window / window_n as f64,
                eval_loss,
            };
            log::info!("step {} train {:.4} eval {:.4}", p.step, p.train_loss, p.eval_loss);
            trace.push(p);
            window = 0.0;
            window_n = 0;
        }
    }
    Ok(trace)
}
