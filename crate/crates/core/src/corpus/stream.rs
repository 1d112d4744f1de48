use super::{encode, BoundaryMode, Trajectory, Vocab};
use crate::error::{Error, Result};

/// Trajectories encoded and concatenated into one token array.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedStream {
    tokens: Vec<usize>,
    starts: Vec<usize>,
    block_size: usize,
    vocab: Vocab,
    truncated: usize,
}

/// One fixed-shape training example. Positions with `loss_mask == false` are
/// padding and carry no loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub loss_mask: Vec<bool>,
}

impl Block {
    /// Pads `inputs`/`targets` to `block_size` with `pad`, masking the padding.
    pub fn padded(mut inputs: Vec<usize>, mut targets: Vec<usize>, mut loss_mask: Vec<bool>, block_size: usize, pad: usize) -> Self {
        debug_assert!(inputs.len() == targets.len() && targets.len() == loss_mask.len());
        debug_assert!(inputs.len() <= block_size);
        inputs.resize(block_size, pad);
        targets.resize(block_size, pad);
        loss_mask.resize(block_size, false);
        Block {
            inputs,
            targets,
            loss_mask,
        }
    }

    /// Length of the prefix that ends at the last loss-bearing position.
    /// Causal attention makes everything after it irrelevant to the loss.
    pub fn active_len(&self) -> usize {
        self.loss_mask.iter().rposition(|&m| m).map_or(0, |i| i + 1)
    }
}

impl PackedStream {
    /// Encodes and concatenates `corpus`. Trajectories with more than
    /// `block_size - 1` links are truncated to that many links.
    pub fn from_corpus(corpus: &[Trajectory], vocab: Vocab, block_size: usize) -> Result<Self> {
        if block_size < 2 {
            return Err(Error::config("block_size", "must be >= 2"));
        }
        let mut tokens = Vec::new();
        let mut starts = Vec::with_capacity(corpus.len());
        let mut truncated = 0;
        for t in corpus {
            if t.is_empty() {
                return Err(Error::invalid("empty trajectory in training corpus"));
            }
            starts.push(tokens.len());
            if t.len() > block_size - 1 {
                truncated += 1;
                let cut = Trajectory::new(t[..block_size - 1].to_vec());
                tokens.extend(encode(&cut, &vocab)?);
            } else {
                tokens.extend(encode(t, &vocab)?);
            }
        }
        if truncated > 0 {
            log::info!("truncated {truncated} trajectories longer than {} links", block_size - 1);
        }
        Ok(PackedStream {
            tokens,
            starts,
            block_size,
            vocab,
            truncated,
        })
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn num_trajectories(&self) -> usize {
        self.starts.len()
    }

    pub fn truncated(&self) -> usize {
        self.truncated
    }

    /// Offset of trajectory `i`'s first token.
    pub fn start_of(&self, i: usize) -> usize {
        self.starts[i]
    }

    fn end_of(&self, i: usize) -> usize {
        self.starts.get(i + 1).copied().unwrap_or(self.tokens.len())
    }

    /// Shift-by-one teacher-forcing pairs at arbitrary stream offsets.
    pub fn next_token_batch(&self, positions: &[usize]) -> Result<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
        let b = self.block_size;
        let mut inputs = Vec::with_capacity(positions.len());
        let mut targets = Vec::with_capacity(positions.len());
        for &p in positions {
            if p + b + 1 > self.tokens.len() {
                return Err(Error::invalid(format!(
                    "offset {p} with block {b} exceeds stream length {}",
                    self.tokens.len()
                )));
            }
            inputs.push(self.tokens[p..p + b].to_vec());
            targets.push(self.tokens[p + 1..p + b + 1].to_vec());
        }
        Ok((inputs, targets))
    }

    /// Padded block for trajectory `i`. The inputs begin with the boundary
    /// token that precedes the trajectory (the previous <EOT>, or <BOT>), so
    /// the first link is itself a prediction target.
    pub fn trajectory_block(&self, i: usize) -> Block {
        let (s, e) = (self.starts[i], self.end_of(i));
        let (inputs, targets): (Vec<usize>, Vec<usize>) = match self.vocab.mode() {
            BoundaryMode::EotOnly => {
                let mut inp = Vec::with_capacity(e - s);
                inp.push(self.vocab.eot());
                inp.extend_from_slice(&self.tokens[s..e - 1]);
                (inp, self.tokens[s..e].to_vec())
            }
            BoundaryMode::BotAndEot => (self.tokens[s..e - 1].to_vec(), self.tokens[s + 1..e].to_vec()),
        };
        let mask = vec![true; inputs.len()];
        Block::padded(inputs, targets, mask, self.block_size, self.vocab.eot())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus(lens: &[usize]) -> Vec<Trajectory> {
        lens.iter()
            .enumerate()
            .map(|(k, &n)| Trajectory::new((0..n).map(|i| (i + k) % 10).collect()))
            .collect()
    }

    #[test]
    fn shift_by_one() {
        let v = Vocab::new(3, BoundaryMode::EotOnly);
        let s = PackedStream::from_corpus(&[Trajectory::new(vec![0, 1, 2])], v, 8).unwrap();
        let s = PackedStream { block_size: 3, ..s };
        let (i, t) = s.next_token_batch(&[0]).unwrap();
        assert_eq!(i[0], vec![0, 1, 2]);
        assert_eq!(t[0], vec![1, 2, 3]);
        assert!(s.next_token_batch(&[1]).is_err());
    }

    #[test]
    fn analytic_length_and_eot_count() {
        let c = corpus(&[3, 5, 1, 7]);
        for (mode, extra) in [(BoundaryMode::EotOnly, 0), (BoundaryMode::BotAndEot, 1)] {
            let v = Vocab::new(10, mode);
            let s = PackedStream::from_corpus(&c, v, 16).unwrap();
            let expected: usize = c.iter().map(|t| t.len() + 1 + extra).sum();
            assert_eq!(s.len(), expected);
            assert_eq!(s.tokens().iter().filter(|&&t| t == v.eot()).count(), c.len());
        }
    }

    #[test]
    fn trajectory_blocks_start_from_boundary() {
        let v = Vocab::new(10, BoundaryMode::EotOnly);
        let c = vec![Trajectory::new(vec![4, 5]), Trajectory::new(vec![6, 7, 8])];
        let s = PackedStream::from_corpus(&c, v, 6).unwrap();
        let b = s.trajectory_block(1);
        assert_eq!(b.inputs, vec![10, 6, 7, 8, 10, 10]);
        assert_eq!(b.targets, vec![6, 7, 8, 10, 10, 10]);
        assert_eq!(b.loss_mask, vec![true, true, true, true, false, false]);
        assert_eq!(b.active_len(), 4);
        // For i > 0 the block coincides with the stream pair one token back.
        let p = s.start_of(1) - 1;
        assert_eq!(&b.inputs[..4], &s.tokens()[p..p + 4]);
        assert_eq!(&b.targets[..4], &s.tokens()[p + 1..p + 5]);

        let vb = Vocab::new(10, BoundaryMode::BotAndEot);
        let s = PackedStream::from_corpus(&c, vb, 6).unwrap();
        let b = s.trajectory_block(0);
        assert_eq!(b.inputs, vec![11, 4, 5, 10, 10, 10]);
        assert_eq!(b.targets, vec![4, 5, 10, 10, 10, 10]);
        assert_eq!(b.active_len(), 3);
    }

    #[test]
    fn long_trajectories_truncated() {
        let v = Vocab::new(10, BoundaryMode::EotOnly);
        let s = PackedStream::from_corpus(&corpus(&[9, 2]), v, 5).unwrap();
        assert_eq!(s.truncated(), 1);
        assert_eq!(s.len(), 5 + 3);
        let b = s.trajectory_block(0);
        assert_eq!(b.active_len(), 5);
        assert_eq!(b.targets[4], v.eot());
    }

    #[test]
    fn full_stream_boundary_case() {
        let v = Vocab::new(10, BoundaryMode::EotOnly);
        let c = corpus(&[4]);
        let s = PackedStream::from_corpus(&c, v, 8).unwrap();
        let s = PackedStream { block_size: 4, ..s };
        let (i, t) = s.next_token_batch(&[0]).unwrap();
        assert_eq!(i[0], s.tokens()[..4].to_vec());
        assert_eq!(t[0], s.tokens()[1..].to_vec());
    }

    proptest! {
        #[test]
        fn targets_are_shifted_inputs(lens in proptest::collection::vec(1usize..12, 3..20), block in 2usize..8, pick in any::<proptest::sample::Index>()) {
            let v = Vocab::new(10, BoundaryMode::EotOnly);
            let s = PackedStream::from_corpus(&corpus(&lens), v, 16).unwrap();
            prop_assume!(s.len() > block + 1);
            let s = PackedStream { block_size: block, ..s };
            let p = pick.index(s.len() - block);
            let (i, t) = s.next_token_batch(&[p]).unwrap();
            for k in 0..block - 1 {
                prop_assert_eq!(t[0][k], i[0][k + 1]);
            }
        }
    }
}
