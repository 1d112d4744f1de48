//! Provenance stamped into every emitted file.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Provenance {
            config_hash: config_hash.into(),
            seed,
        }
    }

    /// Comment lines for text formats that use `#` comments.
    pub fn comment_lines(&self) -> String {
        format!("# config_hash {}\n# seed {}\n", self.config_hash, self.seed)
    }

    /// Parses the lines produced by [`Provenance::comment_lines`], if present.
    pub fn from_comments(text: &str) -> Option<Provenance> {
        let mut hash = None;
        let mut seed = None;
        for line in text.lines() {
            let Some(rest) = line.strip_prefix('#') else {
                continue;
            };
            let mut it = rest.split_whitespace();
            match (it.next(), it.next()) {
                (Some("config_hash"), Some(h)) => hash = Some(h.to_string()),
                (Some("seed"), Some(s)) => seed = s.parse().ok(),
                _ => {}
            }
        }
        Some(Provenance::new(hash?, seed?))
    }
}
