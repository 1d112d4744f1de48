//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//! `magic[8] | version u32 | header_len u64 | header JSON | tensors | sha256[32]`.
//! Tensors are `count u64` followed by `rows u64, cols u64, f64 data` for each
//! parameter, then the same for optimizer first and second moments when the
//! header says an optimizer is present.

use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mat::Mat;
use super::model::{HeadKind, ModelConfig, TransformerModel};
use super::optim::{AdamWConfig, OptimizerState};
use crate::error::{Error, Result};
use crate::meta::Provenance;
use crate::seed::Rng;

const MAGIC: &[u8; 8] = b"LGPTCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: TransformerModel,
    pub optimizer: Option<OptimizerState>,
    pub rng: Option<Rng>,
    pub provenance: Option<Provenance>,
    /// Free-form JSON for stage-specific details.
    pub extra: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    head: HeadKind,
    optimizer: Option<OptimizerHeader>,
    rng: Option<RngState>,
    provenance: Option<Provenance>,
    extra: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamWConfig,
    step: u64,
    decay: Vec<bool>,
}

impl Checkpoint {
    pub fn new(model: TransformerModel) -> Self {
        Checkpoint {
            model,
            optimizer: None,
            rng: None,
            provenance: None,
            extra: serde_json::Value::Null,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            model: self.model.config().clone(),
            head: self.model.head(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                config: o.config,
                step: o.step,
                decay: o.decay_mask().to_vec(),
            }),
            rng: self.rng.as_ref().map(|r| RngState {
                seed: hex::encode(r.get_seed()),
                stream: r.get_stream(),
                word_pos: r.get_word_pos().to_string(),
            }),
            provenance: self.provenance.clone(),
            extra: self.extra.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        write_tensors(&mut out, self.model.params());
        if let Some(o) = &self.optimizer {
            write_tensors(&mut out, &o.m);
            write_tensors(&mut out, &o.v);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// Parses a checkpoint. With `expected`, the stored model config must
    /// match it exactly.
    pub fn from_bytes(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Self> {
        let corrupt = |reason: &str| Error::format("checkpoint", reason.to_string());
        if bytes.len() < MAGIC.len() + 4 + 8 + 32 || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let hlen = r.u64()? as usize;
        let header: Header = serde_json::from_slice(r.take(hlen)?).map_err(|e| corrupt(&format!("bad header: {e}")))?;
        if let Some(want) = expected {
            if *want != header.model {
                return Err(Error::config(
                    "model",
                    format!("checkpoint config {:?} does not match expected {:?}", header.model, want),
                ));
            }
        }
        let params = r.tensors()?;
        let model = TransformerModel::from_params(header.model, header.head, params)?;
        let optimizer = match header.optimizer {
            Some(h) => {
                let m = r.tensors()?;
                let v = r.tensors()?;
                let shapes_ok = m.len() == model.params().len()
                    && v.len() == m.len()
                    && h.decay.len() == m.len()
                    && model.params().iter().zip(&m).zip(&v).all(|((p, a), b)| p.shape() == a.shape() && p.shape() == b.shape());
                if !shapes_ok {
                    return Err(corrupt("optimizer moments do not match parameters"));
                }
                Some(OptimizerState::restore(h.config, m, v, h.step, h.decay))
            }
            None => None,
        };
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        let rng = match header.rng {
            Some(s) => {
                let seed: [u8; 32] = hex::decode(&s.seed)
                    .ok()
                    .and_then(|b| b.try_into().ok())
                    .ok_or_else(|| corrupt("bad rng seed"))?;
                let pos: u128 = s.word_pos.parse().map_err(|_| corrupt("bad rng position"))?;
                let mut rng = Rng::from_seed(seed);
                rng.set_stream(s.stream);
                rng.set_word_pos(pos);
                Some(rng)
            }
            None => None,
        };
        Ok(Checkpoint {
            model,
            optimizer,
            rng,
            provenance: header.provenance,
            extra: header.extra,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes, expected)
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn content_hash(&self) -> String {
        crate::seed::sha256_hex(&self.to_bytes())
    }
}

fn write_tensors(out: &mut Vec<u8>, ts: &[Mat]) {
    out.extend_from_slice(&(ts.len() as u64).to_le_bytes());
    for t in ts {
        out.extend_from_slice(&(t.rows as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols as u64).to_le_bytes());
        for x in &t.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format("checkpoint", "truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensors(&mut self) -> Result<Vec<Mat>> {
        let n = self.u64()? as usize;
        let mut out = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let rows = self.u64()? as usize;
            let cols = self.u64()? as usize;
            let len = rows.checked_mul(cols).filter(|l| l * 8 <= self.buf.len()).ok_or_else(|| Error::format("checkpoint", "tensor too large"))?;
            let raw = self.take(len * 8)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            out.push(Mat::from_vec(rows, cols, data));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    fn model(vocab: usize) -> TransformerModel {
        let cfg = ModelConfig { n_layers: 1, n_heads: 2, d_model: 8, block_size: 6, vocab_size: vocab, dropout: 0.1, seed: 9 };
        TransformerModel::new(cfg, HeadKind::Lm).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model(10);
        let mut opt = OptimizerState::new(AdamWConfig::default(), m.params(), m.decay_mask());
        opt.m[0].data[3] = 0.125;
        opt.step = 17;
        let mut rng = crate::seed::stream(4, "x");
        rng.next_u64();
        let ck = Checkpoint { model: m.clone(), optimizer: Some(opt.clone()), rng: Some(rng.clone()), provenance: Some(Provenance::new("abc", 4)), extra: serde_json::json!({"k": 1}) };
        let back = Checkpoint::from_bytes(&ck.to_bytes(), Some(m.config())).unwrap();
        assert_eq!(back.model, m);
        assert_eq!(back.optimizer.unwrap(), opt);
        assert_eq!(back.rng.unwrap().next_u64(), rng.next_u64());
        assert_eq!(back.model.forward(&[1, 2, 3]).unwrap(), m.forward(&[1, 2, 3]).unwrap());
        assert_eq!(back.extra["k"], 1);
    }

    #[test]
    fn rejects_mismatch_and_corruption() {
        let ck = Checkpoint::new(model(10));
        let bytes = ck.to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes, Some(model(11).config())), Err(Error::Config { .. })));
        let mut bad = bytes.clone();
        bad[40] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bad, None), Err(Error::Format { .. })));
        assert!(Checkpoint::from_bytes(&bytes[..20], None).is_err());
    }
}
