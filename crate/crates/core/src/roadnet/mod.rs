//! Road network digraph, spatial regions, gravity model and the road
//! connectivity matrix.

mod gravity;
mod rcm;
mod region;

pub use gravity::{gravity, region_weights, GravityTable};
pub use rcm::ConnectivityMatrix;
pub use region::{build_region_map, RegionMap};

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::meta::Provenance;
use crate::seed::sha256_hex;

pub type LinkId = usize;
pub type NodeId = usize;

pub const NETWORK_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub id: LinkId,
    pub from: NodeId,
    pub to: NodeId,
    /// Meters.
    pub length: f64,
}

/// Directed road graph. Node and link ids are dense indices.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    nodes: Vec<Node>,
    links: Vec<Link>,
    out_links: Vec<Vec<LinkId>>,
    centroids: Vec<(f64, f64)>,
}

impl RoadNetwork {
    pub fn new(nodes: Vec<Node>, links: Vec<Link>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::invalid("road network has no nodes"));
        }
        for (i, n) in nodes.iter().enumerate() {
            if n.id != i {
                return Err(Error::invalid(format!("node ids must be dense: slot {i} holds id {}", n.id)));
            }
            if !n.x.is_finite() || !n.y.is_finite() {
                return Err(Error::invalid(format!("node {i} has non-finite coordinates")));
            }
        }
        let mut out_links = vec![Vec::new(); nodes.len()];
        for (i, l) in links.iter().enumerate() {
            if l.id != i {
                return Err(Error::invalid(format!("link ids must be dense: slot {i} holds id {}", l.id)));
            }
            if l.from >= nodes.len() || l.to >= nodes.len() {
                return Err(Error::invalid(format!("link {i} references a missing node")));
            }
            if !(l.length > 0.0) || !l.length.is_finite() {
                return Err(Error::invalid(format!("link {i} has non-positive length {}", l.length)));
            }
            out_links[l.from].push(i);
        }
        let centroids = links
            .iter()
            .map(|l| {
                let a = nodes[l.from];
                let b = nodes[l.to];
                ((a.x + b.x) / 2.0, (a.y + b.y) / 2.0)
            })
            .collect();
        Ok(RoadNetwork {
            nodes,
            links,
            out_links,
            centroids,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id]
    }

    /// Segment midpoint of a link.
    pub fn centroid(&self, id: LinkId) -> (f64, f64) {
        self.centroids[id]
    }

    pub fn out_links(&self, node: NodeId) -> &[LinkId] {
        &self.out_links[node]
    }

    /// Links that can directly follow `link` (they leave its head node).
    pub fn successors(&self, link: LinkId) -> &[LinkId] {
        &self.out_links[self.links[link].to]
    }

    pub fn is_adjacent(&self, a: LinkId, b: LinkId) -> bool {
        self.links[a].to == self.links[b].from
    }

    /// The link running the opposite way between the same two nodes.
    pub fn reverse_of(&self, link: LinkId) -> Option<LinkId> {
        let l = self.links[link];
        self.out_links[l.to]
            .iter()
            .copied()
            .find(|&c| self.links[c].to == l.from)
    }

    /// Bounding box of all nodes as (min_x, min_y, max_x, max_y).
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        self.nodes.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), n| (a.min(n.x), b.min(n.y), c.max(n.x), d.max(n.y)),
        )
    }

    pub fn to_text(&self, provenance: Option<&Provenance>) -> String {
        let mut s = String::from("# linkgpt road network\n");
        if let Some(p) = provenance {
            s.push_str(&p.comment_lines());
        }
        let _ = writeln!(s, "format_version {NETWORK_FORMAT_VERSION}");
        let _ = writeln!(s, "coords planar");
        let _ = writeln!(s, "nodes {}", self.nodes.len());
        let _ = writeln!(s, "links {}", self.links.len());
        for n in &self.nodes {
            let _ = writeln!(s, "n {} {:?} {:?}", n.id, n.x, n.y);
        }
        for l in &self.links {
            let _ = writeln!(s, "l {} {} {} {:?}", l.id, l.from, l.to, l.length);
        }
        s
    }

    /// Hash of the network content, independent of provenance comments.
    pub fn content_hash(&self) -> String {
        sha256_hex(self.to_text(None).as_bytes())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ctx = |line: usize| format!("network line {line}");
        let mut version = None;
        let mut lonlat = false;
        let mut n_nodes = None;
        let mut n_links = None;
        let mut nodes = Vec::new();
        let mut links = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let num = |k: usize| -> Result<f64> {
                f.get(k)
                    .ok_or_else(|| Error::format(ctx(lineno), "missing field"))?
                    .parse::<f64>()
                    .map_err(|e| Error::format(ctx(lineno), e.to_string()))
            };
            let int = |k: usize| -> Result<usize> {
                f.get(k)
                    .ok_or_else(|| Error::format(ctx(lineno), "missing field"))?
                    .parse::<usize>()
                    .map_err(|e| Error::format(ctx(lineno), e.to_string()))
            };
            match f[0] {
                "format_version" => {
                    let v = int(1)? as u32;
                    if v != NETWORK_FORMAT_VERSION {
                        return Err(Error::format(ctx(lineno), format!("unsupported format_version {v}")));
                    }
                    version = Some(v);
                }
                "coords" => match f.get(1).copied() {
                    Some("planar") => lonlat = false,
                    Some("lonlat") => lonlat = true,
                    other => return Err(Error::format(ctx(lineno), format!("unknown coords {other:?}"))),
                },
                "nodes" => n_nodes = Some(int(1)?),
                "links" => n_links = Some(int(1)?),
                "n" => nodes.push(Node {
                    id: int(1)?,
                    x: num(2)?,
                    y: num(3)?,
                }),
                "l" => links.push(Link {
                    id: int(1)?,
                    from: int(2)?,
                    to: int(3)?,
                    length: num(4)?,
                }),
                other => return Err(Error::format(ctx(lineno), format!("unknown record `{other}`"))),
            }
        }
        if version.is_none() {
            return Err(Error::format("network header", "missing format_version"));
        }
        if n_nodes != Some(nodes.len()) || n_links != Some(links.len()) {
            return Err(Error::format(
                "network header",
                format!(
                    "header counts {:?}/{:?} disagree with {} nodes / {} links",
                    n_nodes,
                    n_links,
                    nodes.len(),
                    links.len()
                ),
            ));
        }
        if lonlat {
            project_nodes(&mut nodes);
        }
        RoadNetwork::new(nodes, links).map_err(|e| Error::format("network", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path, provenance: Option<&Provenance>) -> Result<()> {
        std::fs::write(path, self.to_text(provenance)).map_err(|e| Error::io(path, e))
    }
}

const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Local equirectangular projection of (lon, lat) degrees around a reference
/// point, returning planar meters.
pub fn equirectangular(lon: f64, lat: f64, lon0: f64, lat0: f64) -> (f64, f64) {
    let x = (lon - lon0).to_radians() * lat0.to_radians().cos() * EARTH_RADIUS_M;
    let y = (lat - lat0).to_radians() * EARTH_RADIUS_M;
    (x, y)
}

fn project_nodes(nodes: &mut [Node]) {
    let (mut lo_x, mut lo_y, mut hi_x, mut hi_y) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for n in nodes.iter() {
        lo_x = lo_x.min(n.x);
        hi_x = hi_x.max(n.x);
        lo_y = lo_y.min(n.y);
        hi_y = hi_y.max(n.y);
    }
    let (lon0, lat0) = ((lo_x + hi_x) / 2.0, (lo_y + hi_y) / 2.0);
    for n in nodes.iter_mut() {
        let (x, y) = equirectangular(n.x, n.y, lon0, lat0);
        n.x = x;
        n.y = y;
    }
}
