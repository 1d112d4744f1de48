//! Link-trajectory corpora: tokenizer, splits, packed training streams and
//! the on-disk corpus format.

mod io;
mod stream;
mod vocab;

pub use io::{corpus_to_text, parse_corpus, read_corpus, write_corpus, CorpusFile, CorpusMeta};
pub use stream::{Block, PackedStream};
pub use vocab::{decode, encode, BoundaryMode, Vocab};

use std::ops::Deref;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::roadnet::{LinkId, RoadNetwork};
use crate::seed;

/// Ordered sequence of road links travelled by one trip.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct Trajectory(Vec<LinkId>);

impl Trajectory {
    pub fn new(links: Vec<LinkId>) -> Self {
        Trajectory(links)
    }

    pub fn links(&self) -> &[LinkId] {
        &self.0
    }

    pub fn into_links(self) -> Vec<LinkId> {
        self.0
    }

    /// Checks that every link exists in `network`.
    pub fn validate(&self, network: &RoadNetwork) -> Result<()> {
        if let Some((i, &l)) = self.0.iter().enumerate().find(|(_, &l)| l >= network.num_links()) {
            return Err(Error::invalid(format!("unknown link id {l} at index {i}")));
        }
        Ok(())
    }

    /// Total length in meters.
    pub fn length(&self, network: &RoadNetwork) -> f64 {
        self.0.iter().map(|&l| network.link(l).length).sum()
    }
}

impl Deref for Trajectory {
    type Target = [LinkId];

    fn deref(&self) -> &[LinkId] {
        &self.0
    }
}

impl From<Vec<LinkId>> for Trajectory {
    fn from(v: Vec<LinkId>) -> Self {
        Trajectory(v)
    }
}

/// Seeded shuffle then split into (train, test).
pub fn split(corpus: &[Trajectory], train_frac: f64, seed_value: u64) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::config("train_frac", format!("must lie in (0, 1), got {train_frac}")));
    }
    if corpus.len() < 2 {
        return Err(Error::invalid(format!("cannot split a corpus of {} trajectories", corpus.len())));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut seed::stream(seed_value, "split"));
    let n_train = ((corpus.len() as f64 * train_frac).round() as usize).clamp(1, corpus.len() - 1);
    let train = order[..n_train].iter().map(|&i| corpus[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| corpus[i].clone()).collect();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn numbered(n: usize) -> Vec<Trajectory> {
        (0..n).map(|i| Trajectory::new(vec![i, i + 1])).collect()
    }

    #[test]
    fn eighty_twenty() {
        let (tr, te) = split(&numbered(10), 0.8, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
    }

    #[test]
    fn deterministic_under_seed() {
        let c = numbered(50);
        assert_eq!(split(&c, 0.8, 9).unwrap(), split(&c, 0.8, 9).unwrap());
        assert_ne!(split(&c, 0.8, 9).unwrap(), split(&c, 0.8, 10).unwrap());
    }

    #[test]
    fn disjoint_and_exhaustive() {
        // Duplicated trajectories are allowed, so compare multisets.
        let mut c = numbered(1000);
        c.extend(numbered(7));
        let (tr, te) = split(&c, 0.8, 3).unwrap();
        let mut count: HashMap<&Trajectory, i64> = HashMap::new();
        for t in &c {
            *count.entry(t).or_default() += 1;
        }
        for t in tr.iter().chain(&te) {
            *count.get_mut(t).unwrap() -= 1;
        }
        assert!(count.values().all(|&v| v == 0));
        assert_eq!(tr.len() + te.len(), c.len());
    }

    #[test]
    fn rejects_tiny_corpus_and_bad_fraction() {
        assert!(split(&numbered(1), 0.8, 0).is_err());
        assert!(split(&numbered(5), 1.0, 0).is_err());
        assert!(split(&numbered(5), 0.0, 0).is_err());
    }

    #[test]
    fn validate_reports_index() {
        let net = crate::synthworld::generate_grid_network(&crate::synthworld::WorldConfig::default()).unwrap();
        let t = Trajectory::new(vec![0, 1, 9999]);
        let err = t.validate(&net).unwrap_err().to_string();
        assert!(err.contains("index 2"), "{err}");
    }
}
