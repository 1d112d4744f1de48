use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{Error, Result};
use crate::meta::Provenance;
use crate::roadnet::RoadNetwork;

pub const CORPUS_META_VERSION: u32 = 1;

/// Sidecar record written next to every corpus file as `<file>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub format_version: u32,
    /// Content hash of the network the link ids refer to.
    pub network_hash: String,
    pub num_trajectories: usize,
    pub provenance: Option<Provenance>,
    /// Producer-specific fields (generation temperature, retry counts, ...).
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl CorpusMeta {
    pub fn new(network: &RoadNetwork, num_trajectories: usize, provenance: Option<Provenance>) -> Self {
        CorpusMeta {
            format_version: CORPUS_META_VERSION,
            network_hash: network.content_hash(),
            num_trajectories,
            provenance,
            extra: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.extra
            .insert(key.to_string(), serde_json::to_value(value).expect("serializable metadata"));
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusFile {
    pub trajectories: Vec<Trajectory>,
    pub meta: Option<CorpusMeta>,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn corpus_to_text(corpus: &[Trajectory], provenance: Option<&Provenance>) -> String {
    let mut s = String::from("# linkgpt corpus: one trajectory per line\n");
    if let Some(p) = provenance {
        s.push_str(&p.comment_lines());
    }
    for t in corpus {
        let mut first = true;
        for l in t.iter() {
            if !first {
                s.push(' ');
            }
            first = false;
            let _ = write!(s, "{l}");
        }
        s.push('\n');
    }
    s
}

pub fn parse_corpus(text: &str) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let links = line
            .split_whitespace()
            .map(|tok| tok.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(format!("corpus line {}", i + 1), e.to_string()))?;
        out.push(Trajectory::new(links));
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, corpus: &[Trajectory], meta: &CorpusMeta) -> Result<()> {
    std::fs::write(path, corpus_to_text(corpus, meta.provenance.as_ref())).map_err(|e| Error::io(path, e))?;
    let mp = meta_path(path);
    let json = serde_json::to_string_pretty(meta).expect("serializable metadata");
    std::fs::write(&mp, json + "\n").map_err(|e| Error::io(mp, e))
}

/// Reads a corpus file and its sidecar (if present). When `network` is given
/// the sidecar hash and every link id are checked against it.
pub fn read_corpus(path: &Path, network: Option<&RoadNetwork>) -> Result<CorpusFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let trajectories = parse_corpus(&text)?;
    let mp = meta_path(path);
    let meta = if mp.exists() {
        let raw = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        let m: CorpusMeta =
            serde_json::from_str(&raw).map_err(|e| Error::format(mp.display().to_string(), e.to_string()))?;
        Some(m)
    } else {
        None
    };
    if let Some(net) = network {
        if let Some(m) = &meta {
            if m.network_hash != net.content_hash() {
                return Err(Error::format(
                    path.display().to_string(),
                    "corpus was built against a different road network",
                ));
            }
        }
        for (i, t) in trajectories.iter().enumerate() {
            t.validate(net)
                .map_err(|e| Error::format(format!("{} trajectory {i}", path.display()), e.to_string()))?;
        }
    }
    Ok(CorpusFile { trajectories, meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{generate_grid_network, WorldConfig};

    #[test]
    fn file_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let net = generate_grid_network(&WorldConfig::default()).unwrap();
        let c = vec![Trajectory::new(vec![0, 1, 2]), Trajectory::new(vec![5])];
        let p = dir.path().join("c.txt");
        let meta = CorpusMeta::new(&net, c.len(), Some(Provenance::new("h", 1))).with("temperature", 1.0);
        write_corpus(&p, &c, &meta).unwrap();
        let back = read_corpus(&p, Some(&net)).unwrap();
        assert_eq!(back.trajectories, c);
        assert_eq!(back.meta.unwrap(), meta);
    }

    #[test]
    fn detects_network_mismatch_and_bad_ids() {
        let dir = tempfile::tempdir().unwrap();
        let net = generate_grid_network(&WorldConfig::default()).unwrap();
        let other = generate_grid_network(&WorldConfig {
            width: 3,
            height: 3,
            ..WorldConfig::default()
        })
        .unwrap();
        let p = dir.path().join("c.txt");
        write_corpus(&p, &[Trajectory::new(vec![0, 1])], &CorpusMeta::new(&net, 1, None)).unwrap();
        assert!(read_corpus(&p, Some(&other)).is_err());
        std::fs::write(&p, "1 2 x\n").unwrap();
        assert!(matches!(read_corpus(&p, None), Err(Error::Format { .. })));
    }

    #[test]
    fn comments_and_blank_lines_skipped() {
        let c = parse_corpus("# hi\n\n1 2 3\n  # indented comment\n4\n").unwrap();
        assert_eq!(c, vec![Trajectory::new(vec![1, 2, 3]), Trajectory::new(vec![4])]);
    }
}
