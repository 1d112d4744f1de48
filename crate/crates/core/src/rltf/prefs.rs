//! Preference pairs labeled by closeness to a reference trip length.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Trajectory, Vocab};
use crate::error::{Error, Result};
use crate::generate::{generate, GenerateConfig};
use crate::meta::Provenance;
use crate::nn::TransformerModel;
use crate::roadnet::{ConnectivityMatrix, RoadNetwork};
use crate::seed;

use super::traj_length;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: Vec<usize>,
    pub chosen: Vec<usize>,
    pub rejected: Vec<usize>,
    pub gamma_chosen: f64,
    pub gamma_rejected: f64,
    /// Index of the reference trajectory in its corpus.
    pub source: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrefConfig {
    /// Share of the reference trajectory used as prompt.
    pub m_frac: f64,
    pub n_pairs: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for PrefConfig {
    fn default() -> Self {
        PrefConfig {
            m_frac: 0.25,
            n_pairs: 500,
            temperature: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefStats {
    pub attempts: usize,
    pub ties: usize,
    pub identical_redraws: usize,
    pub identical_skipped: usize,
}

/// Prompt length for a trajectory of `n` links.
pub fn prompt_len(n: usize, m_frac: f64) -> usize {
    ((m_frac * n as f64).floor() as usize).max(1)
}

/// `|L(reference) - L(prompt + completion)|`.
pub fn gamma(reference_len: f64, prompt: &[usize], completion: &[usize], network: &RoadNetwork) -> f64 {
    (reference_len - traj_length(prompt, network) - traj_length(completion, network)).abs()
}

/// Orders two completions by Γ. Equal Γ carries no preference and yields
/// `None`.
pub fn label_pair(
    reference_len: f64,
    prompt: &[usize],
    first: Vec<usize>,
    second: Vec<usize>,
    network: &RoadNetwork,
    source: usize,
) -> Option<PreferencePair> {
    let g1 = gamma(reference_len, prompt, &first, network);
    let g2 = gamma(reference_len, prompt, &second, network);
    let (chosen, rejected, gc, gr) = if g1 < g2 {
        (first, second, g1, g2)
    } else if g2 < g1 {
        (second, first, g2, g1)
    } else {
        return None;
    };
    Some(PreferencePair {
        prompt: prompt.to_vec(),
        chosen,
        rejected,
        gamma_chosen: gc,
        gamma_rejected: gr,
        source,
    })
}

/// Samples reference trajectories, generates two completions of each
/// prompt with `policy` and labels them by Γ until `n_pairs` pairs exist or
/// the attempt budget (`20 * n_pairs`) runs out.
#[allow(clippy::too_many_arguments)]
pub fn build_preference_dataset(
    policy: &TransformerModel,
    vocab: Vocab,
    rcm: &ConnectivityMatrix,
    corpus: &[Trajectory],
    network: &RoadNetwork,
    cfg: &PrefConfig,
) -> Result<(Vec<PreferencePair>, PrefStats)> {
    if !(cfg.m_frac > 0.0 && cfg.m_frac < 1.0) {
        return Err(Error::config("m_frac", "must lie in (0, 1)"));
    }
    let max_len = policy.config().block_size - 2;
    let eligible: Vec<usize> = (0..corpus.len()).filter(|&i| corpus[i].len() >= 2 && corpus[i].len() <= max_len).collect();
    if eligible.is_empty() {
        return Err(Error::invalid("no reference trajectory is long enough to split into prompt and completion"));
    }
    let gen_cfg = GenerateConfig {
        temperature: cfg.temperature,
        max_len,
        rcm_masking: true,
        max_retries: 0,
    };
    let mut stats = PrefStats::default();
    let mut pairs = Vec::with_capacity(cfg.n_pairs);
    while pairs.len() < cfg.n_pairs && stats.attempts < 20 * cfg.n_pairs.max(1) {
        let mut rng = seed::indexed(cfg.seed, "prefs", stats.attempts as u64);
        stats.attempts += 1;
        let src = eligible[rng.gen_range(0..eligible.len())];
        let reference = &corpus[src];
        let m = prompt_len(reference.len(), cfg.m_frac);
        let prompt = &reference[..m];
        let draw = |rng: &mut seed::Rng| -> Result<Vec<usize>> { Ok(generate(policy, vocab, Some(rcm), &gen_cfg, prompt, rng)?.trajectory.links()[m..].to_vec()) };
        let first = draw(&mut rng)?;
        let mut second = draw(&mut rng)?;
        if first == second {
            stats.identical_redraws += 1;
            second = draw(&mut rng)?;
            if first == second {
                stats.identical_skipped += 1;
                continue;
            }
        }
        match label_pair(reference.length(network), prompt, first, second, network, src) {
            Some(p) => pairs.push(p),
            None => stats.ties += 1,
        }
    }
    if pairs.len() < cfg.n_pairs {
        log::warn!("built {} of {} preference pairs in {} attempts", pairs.len(), cfg.n_pairs, stats.attempts);
    }
    Ok((pairs, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PrefHeader {
    format_version: u32,
    num_pairs: usize,
    provenance: Option<Provenance>,
    stats: PrefStats,
}

/// JSON lines: one header record, then one record per pair.
pub fn write_pairs(path: &Path, pairs: &[PreferencePair], stats: &PrefStats, provenance: Option<Provenance>) -> Result<()> {
    let header = PrefHeader {
        format_version: 1,
        num_pairs: pairs.len(),
        provenance,
        stats: stats.clone(),
    };
    let mut s = serde_json::to_string(&header).expect("serializable") + "\n";
    for p in pairs {
        s.push_str(&serde_json::to_string(p).expect("serializable"));
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_pairs(path: &Path) -> Result<Vec<PreferencePair>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let ctx = path.display().to_string();
    let header: PrefHeader = serde_json::from_str(lines.next().ok_or_else(|| Error::format(&ctx, "empty file"))?)
        .map_err(|e| Error::format(&ctx, format!("bad header: {e}")))?;
    let pairs = lines
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(&ctx, format!("record {}: {e}", i + 1))))
        .collect::<Result<Vec<PreferencePair>>>()?;
    if pairs.len() != header.num_pairs {
        return Err(Error::format(&ctx, format!("header promises {} pairs, found {}", header.num_pairs, pairs.len())));
    }
    Ok(pairs)
}
