//! Reference generators: a visitation-weighted random walk and a
//! first-order Markov chain.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};

use crate::corpus::Trajectory;
use crate::error::{Error, Result};
use crate::roadnet::RoadNetwork;
use crate::seed;

/// Occurrences of each link across the corpus.
pub fn visitation_counts(corpus: &[Trajectory], num_links: usize) -> Vec<f64> {
    let mut c = vec![0.0; num_links];
    for t in corpus {
        for &l in t.iter() {
            c[l] += 1.0;
        }
    }
    c
}

/// Random walk on the network: the start link and every successor are drawn
/// in proportion to real visitation counts, and the walk length is drawn
/// from the real length distribution. A walk stops early at a dead end.
pub fn random_walk_baseline(network: &RoadNetwork, real: &[Trajectory], n: usize, seed_value: u64) -> Result<Vec<Trajectory>> {
    let visits = visitation_counts(real, network.num_links());
    if visits.iter().all(|&v| v == 0.0) {
        return Err(Error::invalid("random walk needs a nonempty reference corpus"));
    }
    let lengths: Vec<usize> = real.iter().map(|t| t.len()).filter(|&l| l > 0).collect();
    let start = WeightedIndex::new(&visits).expect("positive total");
    let mut rng = seed::stream(seed_value, "random_walk");
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let len = lengths[rand::Rng::gen_range(&mut rng, 0..lengths.len())];
        let mut cur = start.sample(&mut rng);
        let mut walk = vec![cur];
        while walk.len() < len {
            let succ = network.successors(cur);
            if succ.is_empty() {
                break;
            }
            let w: Vec<f64> = succ.iter().map(|&s| visits[s]).collect();
            cur = match WeightedIndex::new(&w) {
                Ok(d) => succ[d.sample(&mut rng)],
                Err(_) => succ[rand::Rng::gen_range(&mut rng, 0..succ.len())],
            };
            walk.push(cur);
        }
        out.push(Trajectory::new(walk));
    }
    Ok(out)
}

/// Maximum-likelihood first-order chain over links with an absorbing end
/// state.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    start: BTreeMap<usize, f64>,
    /// Successor counts per link; `None` is the end state.
    transitions: BTreeMap<usize, BTreeMap<Option<usize>, f64>>,
    max_len: usize,
}

impl MarkovChain {
    pub fn fit(corpus: &[Trajectory]) -> Result<Self> {
        let mut start = BTreeMap::new();
        let mut transitions: BTreeMap<usize, BTreeMap<Option<usize>, f64>> = BTreeMap::new();
        let mut max_len = 0;
        for t in corpus.iter().filter(|t| !t.is_empty()) {
            *start.entry(t[0]).or_insert(0.0) += 1.0;
            for w in t.windows(2) {
                *transitions.entry(w[0]).or_default().entry(Some(w[1])).or_insert(0.0) += 1.0;
            }
            *transitions.entry(*t.last().unwrap()).or_default().entry(None).or_insert(0.0) += 1.0;
            max_len = max_len.max(t.len());
        }
        if start.is_empty() {
            return Err(Error::invalid("Markov chain needs a nonempty corpus"));
        }
        Ok(MarkovChain { start, transitions, max_len })
    }

    /// Fitted probability of moving from `from` to `to` (`None` = end).
    pub fn probability(&self, from: usize, to: Option<usize>) -> f64 {
        self.transitions.get(&from).map_or(0.0, |row| {
            let total: f64 = row.values().sum();
            row.get(&to).copied().unwrap_or(0.0) / total
        })
    }

    pub fn row(&self, from: usize) -> Option<&BTreeMap<Option<usize>, f64>> {
        self.transitions.get(&from)
    }

    /// Samples `n` trajectories; walks are capped at four times the longest
    /// fitted trajectory.
    pub fn sample(&self, n: usize, seed_value: u64) -> Vec<Trajectory> {
        let mut rng = seed::stream(seed_value, "mmc");
        let starts: Vec<usize> = self.start.keys().copied().collect();
        let sd = WeightedIndex::new(self.start.values()).expect("positive");
        let cap = 4 * self.max_len;
        (0..n)
            .map(|_| {
                let mut cur = starts[sd.sample(&mut rng)];
                let mut t = vec![cur];
                while t.len() < cap {
                    let row = &self.transitions[&cur];
                    let keys: Vec<Option<usize>> = row.keys().copied().collect();
                    let d = WeightedIndex::new(row.values()).expect("positive");
                    match keys[d.sample(&mut rng)] {
                        Some(next) => {
                            cur = next;
                            t.push(cur);
                        }
                        None => break,
                    }
                }
                Trajectory::new(t)
            })
            .collect()
    }
}

pub fn mmc_baseline(corpus: &[Trajectory], n: usize, seed_value: u64) -> Result<Vec<Trajectory>> {
    Ok(MarkovChain::fit(corpus)?.sample(n, seed_value))
}
