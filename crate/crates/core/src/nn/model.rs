//! Pre-norm decoder-only transformer.

use serde::{Deserialize, Serialize};

use super::mat::Mat;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub block_size: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Small configuration that trains in minutes on one core.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 32,
            block_size: 64,
            vocab_size,
            dropout: 0.1,
            seed: 0,
        }
    }

    /// The full-size configuration: 6 layers, 4 heads, width 64.
    pub fn full(vocab_size: usize, block_size: usize) -> Self {
        ModelConfig {
            n_layers: 6,
            n_heads: 4,
            d_model: 64,
            block_size,
            vocab_size,
            dropout: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::config("n_layers", "must be at least 1"));
        }
        if self.n_heads == 0 || self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::config("d_model", format!("{} is not divisible by n_heads = {}", self.d_model, self.n_heads)));
        }
        if self.block_size < 2 {
            return Err(Error::config("block_size", "must be at least 2"));
        }
        if self.vocab_size < 2 {
            return Err(Error::config("vocab_size", "must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", format!("{} is outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self, head: HeadKind) -> usize {
        let (v, b, d, l) = (self.vocab_size, self.block_size, self.d_model, self.n_layers);
        let head_params = match head {
            HeadKind::Lm => d * v,
            HeadKind::Score => d + 1,
        };
        v * d + b * d + l * (12 * d * d + 13 * d) + 2 * d + head_params
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Next-token logits over the vocabulary.
    Lm,
    /// One scalar per sequence, read at its last position.
    Score,
}

const TOK: usize = 0;
const POS: usize = 1;
const PER_LAYER: usize = 12;

// offsets within one layer's slots
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const W_QKV: usize = 2;
const B_QKV: usize = 3;
const W_O: usize = 4;
const B_O: usize = 5;
const LN2_G: usize = 6;
const LN2_B: usize = 7;
const W_FC: usize = 8;
const B_FC: usize = 9;
const W_PROJ: usize = 10;
const B_PROJ: usize = 11;

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerModel {
    config: ModelConfig,
    head: HeadKind,
    params: Vec<Mat>,
}

impl TransformerModel {
    pub fn new(config: ModelConfig, head: HeadKind) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::stream(config.seed, "init");
        let (v, b, d, l) = (config.vocab_size, config.block_size, config.d_model, config.n_layers);
        let std = 0.02;
        let resid_std = std / ((2 * l) as f64).sqrt();
        let mut params = vec![Mat::randn(v, d, std, &mut rng), Mat::randn(b, d, std, &mut rng)];
        for _ in 0..l {
            params.push(Mat::filled(1, d, 1.0));
            params.push(Mat::zeros(1, d));
            params.push(Mat::randn(d, 3 * d, std, &mut rng));
            params.push(Mat::zeros(1, 3 * d));
            params.push(Mat::randn(d, d, resid_std, &mut rng));
            params.push(Mat::zeros(1, d));
            params.push(Mat::filled(1, d, 1.0));
            params.push(Mat::zeros(1, d));
            params.push(Mat::randn(d, 4 * d, std, &mut rng));
            params.push(Mat::zeros(1, 4 * d));
            params.push(Mat::randn(4 * d, d, resid_std, &mut rng));
            params.push(Mat::zeros(1, d));
        }
        params.push(Mat::filled(1, d, 1.0));
        params.push(Mat::zeros(1, d));
        match head {
            HeadKind::Lm => params.push(Mat::randn(d, v, std, &mut rng)),
            HeadKind::Score => {
                params.push(Mat::randn(d, 1, std, &mut rng));
                params.push(Mat::zeros(1, 1));
            }
        }
        Ok(TransformerModel { config, head, params })
    }

    /// Rebuilds a model from stored tensors, checking every shape.
    pub fn from_params(config: ModelConfig, head: HeadKind, params: Vec<Mat>) -> Result<Self> {
        let template = TransformerModel::new(config.clone(), head)?;
        if template.params.len() != params.len() {
            return Err(Error::format("model parameters", format!("expected {} tensors, found {}", template.params.len(), params.len())));
        }
        for (i, (a, b)) in template.params.iter().zip(&params).enumerate() {
            if a.shape() != b.shape() {
                return Err(Error::format("model parameters", format!("tensor {i} has shape {:?}, expected {:?}", b.shape(), a.shape())));
            }
        }
        Ok(TransformerModel { config, head, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn head(&self) -> HeadKind {
        self.head
    }

    pub fn params(&self) -> &[Mat] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Mat] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Mat::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Mat::is_finite)
    }

    /// Slots that receive weight decay: embeddings and matmul weights.
    pub fn decay_mask(&self) -> Vec<bool> {
        self.params.iter().map(|p| p.rows > 1).collect()
    }

    fn head_start(&self) -> usize {
        2 + self.config.n_layers * PER_LAYER + 2
    }

    /// A scalar-headed model sharing this model's body weights. The new
    /// head is drawn from its own seeded stream.
    pub fn to_score_model(&self) -> TransformerModel {
        let d = self.config.d_model;
        let mut rng = seed::stream(self.config.seed, "score_head");
        let mut params: Vec<Mat> = self.params[..self.head_start()].to_vec();
        params.push(Mat::randn(d, 1, 0.02, &mut rng));
        params.push(Mat::zeros(1, 1));
        TransformerModel {
            config: self.config.clone(),
            head: HeadKind::Score,
            params,
        }
    }

    pub fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::invalid("empty token sequence"));
        }
        if tokens.len() > self.config.block_size {
            return Err(Error::invalid(format!(
                "sequence of {} tokens exceeds block size {}",
                tokens.len(),
                self.config.block_size
            )));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::invalid(format!("token {t} is outside the vocabulary of {}", self.config.vocab_size)));
        }
        Ok(())
    }

    /// Final-norm hidden states for a packed batch of sequences, one row per
    /// token. Dropout is active only when `rng` is given.
    pub fn hidden(&self, tape: &mut Tape, p: &[Var], seqs: &[&[usize]], mut rng: Option<&mut Rng>) -> Result<Var> {
        if seqs.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        for s in seqs {
            self.check_tokens(s)?;
        }
        let ids: Vec<usize> = seqs.iter().flat_map(|s| s.iter().copied()).collect();
        let pos: Vec<usize> = seqs.iter().flat_map(|s| 0..s.len()).collect();
        let lens: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
        let rate = if rng.is_some() { self.config.dropout } else { 0.0 };

        let tok = tape.embed(p[TOK], &ids);
        let pe = tape.embed(p[POS], &pos);
        let mut x = tape.add(tok, pe);
        if let Some(r) = rng.as_deref_mut() {
            x = tape.dropout(x, rate, r);
        }
        for layer in 0..self.config.n_layers {
            let w = |k: usize| p[2 + layer * PER_LAYER + k];
            let h = tape.layer_norm(x, w(LN1_G), w(LN1_B));
            let qkv = tape.linear(h, w(W_QKV), w(B_QKV));
            let att = tape.causal_attention(qkv, self.config.n_heads, &lens);
            let mut o = tape.linear(att, w(W_O), w(B_O));
            if let Some(r) = rng.as_deref_mut() {
                o = tape.dropout(o, rate, r);
            }
            x = tape.add(x, o);
            let h = tape.layer_norm(x, w(LN2_G), w(LN2_B));
            let f = tape.linear(h, w(W_FC), w(B_FC));
            let f = tape.gelu(f);
            let mut f = tape.linear(f, w(W_PROJ), w(B_PROJ));
            if let Some(r) = rng.as_deref_mut() {
                f = tape.dropout(f, rate, r);
            }
            x = tape.add(x, f);
        }
        let hs = self.head_start();
        Ok(tape.layer_norm(x, p[hs - 2], p[hs - 1]))
    }

    /// Vocabulary logits for every row of `hidden`.
    pub fn lm_logits(&self, tape: &mut Tape, p: &[Var], hidden: Var) -> Var {
        assert_eq!(self.head, HeadKind::Lm, "model has no LM head");
        tape.matmul(hidden, p[self.head_start()])
    }

    /// Scalar scores read at the given rows of `hidden`, as a column.
    pub fn score_rows(&self, tape: &mut Tape, p: &[Var], hidden: Var, rows: &[usize]) -> Var {
        assert_eq!(self.head, HeadKind::Score, "model has no score head");
        let picked: Vec<Var> = rows.iter().map(|&r| tape.select_row(hidden, r)).collect();
        let h = tape.stack(&picked);
        let hs = self.head_start();
        tape.linear(h, p[hs], p[hs + 1])
    }

    /// Eval-mode logits, `T x vocab_size`.
    pub fn forward(&self, tokens: &[usize]) -> Result<Mat> {
        let mut tape = Tape::new(&self.params);
        let p = tape.bind_params();
        let h = self.hidden(&mut tape, &p, &[tokens], None)?;
        let l = self.lm_logits(&mut tape, &p, h);
        Ok(tape.value(l).clone())
    }

    /// Eval-mode logits at the last position only.
    pub fn next_token_logits(&self, context: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        let p = tape.bind_params();
        let h = self.hidden(&mut tape, &p, &[context], None)?;
        let last = tape.select_row(h, context.len() - 1);
        let l = self.lm_logits(&mut tape, &p, last);
        Ok(tape.value(l).data.clone())
    }

    /// Eval-mode scalar score of each sequence at its last token.
    pub fn scores(&self, seqs: &[&[usize]]) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        let p = tape.bind_params();
        let h = self.hidden(&mut tape, &p, seqs, None)?;
        let ends = last_rows(seqs);
        let s = self.score_rows(&mut tape, &p, h, &ends);
        Ok(tape.value(s).data.clone())
    }
}

/// Row index of each sequence's final token in a packed batch.
pub fn last_rows(seqs: &[&[usize]]) -> Vec<usize> {
    let mut acc = 0;
    seqs.iter()
        .map(|s| {
            acc += s.len();
            acc - 1
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(vocab: usize) -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            block_size: 6,
            vocab_size: vocab,
            dropout: 0.0,
            seed: 3,
        }
    }

    #[test]
    fn param_count_matches_tensors() {
        for cfg in [tiny(12), ModelConfig::desk(361), ModelConfig::full(500, 60)] {
            for head in [HeadKind::Lm, HeadKind::Score] {
                let m = TransformerModel::new(cfg.clone(), head).unwrap();
                assert_eq!(m.num_params(), cfg.param_count(head));
            }
        }
    }

    #[test]
    fn shape_and_causality() {
        let m = TransformerModel::new(tiny(12), HeadKind::Lm).unwrap();
        let a = m.forward(&[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(a.shape(), (5, 12));
        let b = m.forward(&[1, 2, 3, 9, 0]).unwrap();
        for r in 0..3 {
            assert_eq!(a.row(r), b.row(r));
        }
        assert_ne!(a.row(3), b.row(3));
    }

    #[test]
    fn packed_batch_equals_separate_forwards() {
        let m = TransformerModel::new(tiny(12), HeadKind::Lm).unwrap();
        let (s1, s2): (&[usize], &[usize]) = (&[1, 2, 3], &[7, 4, 4, 0, 11]);
        let mut tape = Tape::new(m.params());
        let p = tape.bind_params();
        let h = m.hidden(&mut tape, &p, &[s1, s2], None).unwrap();
        let l = m.lm_logits(&mut tape, &p, h);
        let packed = tape.value(l).clone();
        let (a, b) = (m.forward(s1).unwrap(), m.forward(s2).unwrap());
        for r in 0..3 {
            for (x, y) in packed.row(r).iter().zip(a.row(r)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        for r in 0..5 {
            for (x, y) in packed.row(3 + r).iter().zip(b.row(r)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = TransformerModel::new(tiny(12), HeadKind::Lm).unwrap().forward(&[0, 5]).unwrap();
        let b = TransformerModel::new(tiny(12), HeadKind::Lm).unwrap().forward(&[0, 5]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = TransformerModel::new(tiny(12), HeadKind::Lm).unwrap();
        assert!(m.forward(&[12]).is_err());
        assert!(m.forward(&[0; 7]).is_err());
        assert!(m.forward(&[]).is_err());
        let mut bad = tiny(12);
        bad.d_model = 7;
        assert!(matches!(TransformerModel::new(bad, HeadKind::Lm), Err(Error::Config { .. })));
    }

    #[test]
    fn next_token_logits_match_last_row() {
        let m = TransformerModel::new(tiny(12), HeadKind::Lm).unwrap();
        let full = m.forward(&[3, 1, 4]).unwrap();
        let last = m.next_token_logits(&[3, 1, 4]).unwrap();
        for (x, y) in full.row(2).iter().zip(&last) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn score_model_shares_body() {
        let m = TransformerModel::new(tiny(12), HeadKind::Lm).unwrap();
        let s = m.to_score_model();
        assert_eq!(s.num_params(), tiny(12).param_count(HeadKind::Score));
        let v = s.scores(&[&[1, 2], &[3, 4, 5]]).unwrap();
        assert_eq!(v.len(), 2);
        assert!(v.iter().all(|x| x.is_finite()));
    }
}
