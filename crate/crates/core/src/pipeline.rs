//! Stage functions shared by the command-line front end and the end-to-end
//! tests. Each stage takes the resolved config and the prepared data.

use std::path::Path;

use crate::config::PipelineConfig;
use crate::corpus::{split, Trajectory, Vocab};
use crate::error::{Error, Result};
use crate::eval::{report, ReportOutput};
use crate::generate::{generate_corpus, GenerateConfig, GeneratedCorpus};
use crate::meta::Provenance;
use crate::nn::{Checkpoint, HeadKind, ModelConfig, TransformerModel};
use crate::pretrain::{train, GravitySampler, TracePoint, TrainData, TrainState};
use crate::rltf::{self, PpoTracePoint, PrefStats, PreferencePair, RewardOutcome};
use crate::roadnet::{build_region_map, ConnectivityMatrix, GravityTable, RegionMap, RoadNetwork};
use crate::synthworld::{generate_grid_network, simulate_corpus};

pub fn synth_world(cfg: &PipelineConfig) -> Result<(RoadNetwork, Vec<Trajectory>)> {
    cfg.world.validate()?;
    let net = generate_grid_network(&cfg.world)?;
    let corpus = simulate_corpus(&net, &cfg.world)?;
    Ok((net, corpus))
}

/// Network, train/held-out split and the structures derived from them.
pub struct Prepared {
    pub network: RoadNetwork,
    pub train: Vec<Trajectory>,
    pub heldout: Vec<Trajectory>,
    pub vocab: Vocab,
    pub rcm: ConnectivityMatrix,
    pub rmap: RegionMap,
    pub gravity: GravityTable,
}

impl Prepared {
    pub fn new(cfg: &PipelineConfig, network: RoadNetwork, corpus: &[Trajectory]) -> Result<Self> {
        cfg.validate()?;
        for t in corpus {
            t.validate(&network)?;
        }
        let (train, heldout) = split(corpus, cfg.train_frac, cfg.seed)?;
        let vocab = Vocab::new(network.num_links(), cfg.boundary_mode);
        let rcm = ConnectivityMatrix::from_corpus(&train, vocab);
        let rmap = build_region_map(&network, cfg.region_grid, cfg.region_grid)?;
        let gravity = GravityTable::from_corpus(&train, &rmap);
        Ok(Prepared {
            network,
            train,
            heldout,
            vocab,
            rcm,
            rmap,
            gravity,
        })
    }

    pub fn gravity_sampler(&self) -> Result<GravitySampler> {
        GravitySampler::from_gravity(&self.train, &self.rmap, &self.gravity)
    }

    pub fn model_config(&self, cfg: &PipelineConfig) -> ModelConfig {
        cfg.model.model_config(self.vocab.size(), cfg.seed)
    }
}

pub fn fresh_state(cfg: &PipelineConfig, prep: &Prepared) -> Result<TrainState> {
    let model = TransformerModel::new(prep.model_config(cfg), HeadKind::Lm)?;
    Ok(TrainState::fresh(model, &cfg.pretrain))
}

/// Trains `state` (fresh or restored) up to the configured step count.
pub fn pretrain(cfg: &PipelineConfig, prep: &Prepared, state: &mut TrainState) -> Result<Vec<TracePoint>> {
    let sampler = if cfg.pretrain.gravity_sampling { prep.gravity_sampler()? } else { GravitySampler::uniform(prep.train.len())? };
    let data = TrainData::new(&prep.train, &prep.heldout, prep.vocab, cfg.model.block_size, &prep.rcm, sampler, &cfg.pretrain)?;
    train(state, &data, &cfg.pretrain)
}

pub fn preference_pairs(cfg: &PipelineConfig, prep: &Prepared, policy: &TransformerModel) -> Result<(Vec<PreferencePair>, PrefStats)> {
    rltf::build_preference_dataset(policy, prep.vocab, &prep.rcm, &prep.train, &prep.network, &cfg.prefs)
}

/// Reward model whose body starts from the policy's weights.
pub fn reward_model(cfg: &PipelineConfig, prep: &Prepared, policy: &TransformerModel, pairs: &[PreferencePair]) -> Result<RewardOutcome> {
    rltf::train_reward_model(policy.to_score_model(), prep.vocab, pairs, &cfg.reward)
}

pub fn finetune_rltf(
    cfg: &PipelineConfig,
    prep: &Prepared,
    policy: &TransformerModel,
    reward: &TransformerModel,
) -> Result<(TransformerModel, Vec<PpoTracePoint>)> {
    if reward.head() != HeadKind::Score {
        return Err(Error::invalid("reward checkpoint does not carry a score head"));
    }
    let sampler = if cfg.ppo.gravity_prompts { Some(prep.gravity_sampler()?) } else { None };
    let mut tuned = policy.clone();
    let trace = rltf::ppo_finetune(&mut tuned, policy, reward, prep.vocab, &prep.rcm, &prep.train, sampler.as_ref(), &cfg.ppo)?;
    Ok((tuned, trace))
}

pub fn finetune_sft(cfg: &PipelineConfig, prep: &Prepared, policy: &TransformerModel, pairs: &[PreferencePair]) -> Result<(TransformerModel, Vec<f64>)> {
    let mut tuned = policy.clone();
    let losses = rltf::sft_finetune(&mut tuned, prep.vocab, &prep.rcm, pairs, &cfg.sft)?;
    Ok((tuned, losses))
}

pub fn generate(cfg: &PipelineConfig, prep: &Prepared, model: &TransformerModel, n: usize, temperature: f64, seed: u64) -> Result<GeneratedCorpus> {
    let gcfg = GenerateConfig { temperature, ..cfg.generate.sampling() };
    let rcm = gcfg.rcm_masking.then_some(&prep.rcm);
    generate_corpus(model, prep.vocab, rcm, n, &gcfg, seed)
}

/// Scores `syn` against the held-out split.
pub fn evaluate(cfg: &PipelineConfig, prep: &Prepared, syn: &[Trajectory], with_baselines: bool, provenance: Option<Provenance>) -> Result<ReportOutput> {
    let fit = with_baselines.then_some(prep.train.as_slice());
    report(&prep.heldout, syn, &prep.network, &prep.rmap, &prep.rcm, &cfg.eval, fit, provenance)
}

pub fn save_model(path: &Path, model: &TransformerModel, state: Option<&TrainState>, provenance: Provenance, stage: &str) -> Result<()> {
    let mut ck = Checkpoint::new(model.clone());
    ck.provenance = Some(provenance);
    let mut extra = serde_json::json!({ "stage": stage });
    if let Some(s) = state {
        ck.optimizer = Some(s.optimizer.clone());
        ck.rng = Some(s.rng.clone());
        extra["step"] = s.step.into();
    }
    ck.extra = extra;
    ck.save(path)
}

/// Loads a checkpoint and checks that it matches the configured
/// architecture and the expected head.
pub fn load_model(path: &Path, cfg: &PipelineConfig, prep: &Prepared, head: HeadKind) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path, Some(&prep.model_config(cfg)))?;
    if ck.model.head() != head {
        return Err(Error::format(path.display().to_string(), format!("expected a {head:?} head, found {:?}", ck.model.head())));
    }
    Ok(ck)
}

/// Restores the full training state stored in a pretraining checkpoint.
pub fn resume_state(ck: Checkpoint) -> Result<TrainState> {
    let step = ck.extra.get("step").and_then(|v| v.as_u64());
    match (ck.optimizer, ck.rng, step) {
        (Some(optimizer), Some(rng), Some(step)) => Ok(TrainState {
            model: ck.model,
            optimizer,
            rng,
            step: step as usize,
        }),
        _ => Err(Error::format("checkpoint", "no optimizer state to resume from")),
    }
}
