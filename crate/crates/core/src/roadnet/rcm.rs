use super::RoadNetwork;
use crate::corpus::{Trajectory, Vocab};

/// Binary next-token permission matrix over the vocabulary.
///
/// Link rows hold the sorted set of link successors observed in the data.
/// Boundary tokens (<EOT>, and <BOT> when present) have full rows and
/// columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityMatrix {
    vocab: Vocab,
    succ: Vec<Vec<usize>>,
}

impl ConnectivityMatrix {
    /// Marks every consecutive pair observed in `corpus`.
    pub fn from_corpus(corpus: &[Trajectory], vocab: Vocab) -> Self {
        let mut succ = vec![Vec::new(); vocab.num_links()];
        for t in corpus {
            for w in t.windows(2) {
                assert!(w[0] < vocab.num_links() && w[1] < vocab.num_links(), "link id outside vocab");
                succ[w[0]].push(w[1]);
            }
        }
        for s in &mut succ {
            s.sort_unstable();
            s.dedup();
        }
        ConnectivityMatrix { vocab, succ }
    }

    /// Adds every graph-adjacent link pair of `network`.
    pub fn union_graph_adjacency(mut self, network: &RoadNetwork) -> Self {
        assert_eq!(network.num_links(), self.vocab.num_links());
        for (a, s) in self.succ.iter_mut().enumerate() {
            s.extend_from_slice(network.successors(a));
            s.sort_unstable();
            s.dedup();
        }
        self
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn size(&self) -> usize {
        self.vocab.size()
    }

    pub fn allowed(&self, prev: usize, next: usize) -> bool {
        if self.vocab.is_boundary(prev) || self.vocab.is_boundary(next) {
            return true;
        }
        self.succ[prev].binary_search(&next).is_ok()
    }

    /// Observed link successors of a link token (boundary columns excluded).
    pub fn link_successors(&self, link: usize) -> &[usize] {
        &self.succ[link]
    }

    /// Writes the dense permission row for `prev` into `row`.
    pub fn fill_row(&self, prev: usize, row: &mut [bool]) {
        debug_assert_eq!(row.len(), self.size());
        if self.vocab.is_boundary(prev) {
            row.fill(true);
            return;
        }
        row.fill(false);
        for &s in &self.succ[prev] {
            row[s] = true;
        }
        for b in self.vocab.boundary_tokens() {
            row[b] = true;
        }
    }

    pub fn row(&self, prev: usize) -> Vec<bool> {
        let mut r = vec![false; self.size()];
        self.fill_row(prev, &mut r);
        r
    }

    /// Number of 1-entries between link tokens.
    pub fn link_pair_count(&self) -> usize {
        self.succ.iter().map(Vec::len).sum()
    }

    /// True when every consecutive pair in `t` is permitted.
    pub fn is_connected(&self, t: &[usize]) -> bool {
        t.windows(2).all(|w| self.allowed(w[0], w[1]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::BoundaryMode;

    #[test]
    fn single_trajectory_rows() {
        let v = Vocab::new(3, BoundaryMode::EotOnly);
        let rc = ConnectivityMatrix::from_corpus(&[Trajectory::new(vec![0, 1, 2])], v);
        let eot = v.eot();
        assert_eq!(rc.row(0), vec![false, true, false, true]);
        assert_eq!(rc.row(1), vec![false, false, true, true]);
        assert_eq!(rc.row(2), vec![false, false, false, true]);
        assert_eq!(rc.row(eot), vec![true; 4]);
        assert!(rc.allowed(eot, 2));
        assert_eq!(rc.link_pair_count(), 2);
    }

    #[test]
    fn empty_corpus_only_boundary() {
        let v = Vocab::new(3, BoundaryMode::BotAndEot);
        let rc = ConnectivityMatrix::from_corpus(&[], v);
        for a in 0..3 {
            for b in 0..3 {
                assert!(!rc.allowed(a, b));
            }
            assert!(rc.allowed(a, v.eot()));
            assert!(rc.allowed(v.bot().unwrap(), a));
        }
        assert_eq!(rc.link_pair_count(), 0);
    }
}
