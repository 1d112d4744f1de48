//! Deterministic grid-city road networks and a planted-gravity trip
//! simulator. These stand in for real map-matched corpora.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng as _;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::Trajectory;
use crate::error::{Error, Result};
use crate::roadnet::{Link, LinkId, Node, NodeId, RoadNetwork};
use crate::seed::{self, Rng};

/// Trips shorter than this many links are discarded and redrawn.
pub const MIN_TRIP_LINKS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Intersections along x.
    pub width: usize,
    /// Intersections along y.
    pub height: usize,
    /// Meters.
    pub link_length: f64,
    pub num_trajectories: usize,
    /// Exponent on distance in the planted OD model.
    pub gravity_exponent: f64,
    /// Per-step probability of leaving the shortest path.
    pub detour_prob: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            width: 10,
            height: 10,
            link_length: 100.0,
            num_trajectories: 20000,
            gravity_exponent: 2.0,
            detour_prob: 0.1,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 2 {
            return Err(Error::config("world.width", "must be >= 2"));
        }
        if self.height < 2 {
            return Err(Error::config("world.height", "must be >= 2"));
        }
        if !(self.link_length > 0.0) {
            return Err(Error::config("world.link_length", "must be > 0"));
        }
        if !(0.0..=0.5).contains(&self.detour_prob) {
            return Err(Error::config("world.detour_prob", "must lie in [0, 0.5]"));
        }
        if !self.gravity_exponent.is_finite() || self.gravity_exponent < 0.0 {
            return Err(Error::config("world.gravity_exponent", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// `width x height` lattice; every street becomes two opposite links.
pub fn generate_grid_network(cfg: &WorldConfig) -> Result<RoadNetwork> {
    cfg.validate()?;
    let (w, h, len) = (cfg.width, cfg.height, cfg.link_length);
    let nodes: Vec<Node> = (0..w * h)
        .map(|id| Node {
            id,
            x: (id % w) as f64 * len,
            y: (id / w) as f64 * len,
        })
        .collect();
    let mut links = Vec::with_capacity(2 * (w * (h - 1) + h * (w - 1)));
    let push = |a: NodeId, b: NodeId, links: &mut Vec<Link>| {
        for (from, to) in [(a, b), (b, a)] {
            links.push(Link {
                id: links.len(),
                from,
                to,
                length: len,
            });
        }
    };
    for y in 0..h {
        for x in 0..w {
            let id = y * w + x;
            if x + 1 < w {
                push(id, id + 1, &mut links);
            }
            if y + 1 < h {
                push(id, id + w, &mut links);
            }
        }
    }
    RoadNetwork::new(nodes, links)
}

/// Seeded per-node attractiveness, lognormal(0, 0.5).
pub fn node_popularity(cfg: &WorldConfig, num_nodes: usize) -> Vec<f64> {
    let mut rng = seed::stream(cfg.seed, "popularity");
    let dist = LogNormal::new(0.0, 0.5).expect("valid lognormal");
    (0..num_nodes).map(|_| dist.sample(&mut rng)).collect()
}

/// Unnormalized planted OD weight `pop(o) * pop(d) / dist(o, d)^exponent`.
pub fn planted_od_weight(network: &RoadNetwork, popularity: &[f64], exponent: f64, o: NodeId, d: NodeId) -> f64 {
    if o == d {
        return 0.0;
    }
    let (a, b) = (network.nodes()[o], network.nodes()[d]);
    let dist = (a.x - b.x).hypot(a.y - b.y);
    popularity[o] * popularity[d] / dist.powf(exponent)
}

#[derive(PartialEq)]
struct HeapItem(f64, NodeId);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest-path distance from every node to `dest`.
pub fn distances_to(network: &RoadNetwork, dest: NodeId) -> Vec<f64> {
    let n = network.nodes().len();
    let mut incoming = vec![Vec::new(); n];
    for l in network.links() {
        incoming[l.to].push(l.id);
    }
    let mut dist = vec![f64::INFINITY; n];
    dist[dest] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(HeapItem(0.0, dest));
    while let Some(HeapItem(d, v)) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        for &l in &incoming[v] {
            let link = network.link(l);
            let nd = d + link.length;
            if nd < dist[link.from] {
                dist[link.from] = nd;
                heap.push(HeapItem(nd, link.from));
            }
        }
    }
    dist
}

fn on_shortest_path(network: &RoadNetwork, dist: &[f64], l: LinkId) -> bool {
    let link = network.link(l);
    let lhs = dist[link.to] + link.length;
    (lhs - dist[link.from]).abs() <= 1e-9 * dist[link.from].max(1.0)
}

/// One trip from `o` to `d`: shortest-path steps with random tie-breaks,
/// each step replaced by a random non-U-turn detour with probability `eps`.
fn walk(network: &RoadNetwork, dist: &[f64], o: NodeId, d: NodeId, eps: f64, rng: &mut Rng) -> Option<Vec<LinkId>> {
    let cap = 4 * network.nodes().len() + 16;
    let mut cur = o;
    let mut prev: Option<LinkId> = None;
    let mut path = Vec::new();
    while cur != d {
        if path.len() > cap || !dist[cur].is_finite() {
            return None;
        }
        let out = network.out_links(cur);
        let uturn = prev.and_then(|p| network.reverse_of(p));
        let next = if eps > 0.0 && rng.gen_bool(eps) {
            let choices: Vec<LinkId> = out.iter().copied().filter(|&l| Some(l) != uturn).collect();
            let pool = if choices.is_empty() { out.to_vec() } else { choices };
            pool[rng.gen_range(0..pool.len())]
        } else {
            let best: Vec<LinkId> = out.iter().copied().filter(|&l| on_shortest_path(network, dist, l)).collect();
            best[rng.gen_range(0..best.len())]
        };
        path.push(next);
        prev = Some(next);
        cur = network.link(next).to;
    }
    Some(path)
}

/// Cumulative OD table over ordered node pairs.
struct OdSampler {
    pairs: Vec<(NodeId, NodeId)>,
    cdf: Vec<f64>,
}

impl OdSampler {
    fn new(network: &RoadNetwork, cfg: &WorldConfig) -> Self {
        let n = network.nodes().len();
        let pop = node_popularity(cfg, n);
        let mut pairs = Vec::with_capacity(n * (n - 1));
        let mut cdf = Vec::with_capacity(n * (n - 1));
        let mut acc = 0.0;
        for o in 0..n {
            for d in 0..n {
                if o == d {
                    continue;
                }
                acc += planted_od_weight(network, &pop, cfg.gravity_exponent, o, d);
                pairs.push((o, d));
                cdf.push(acc);
            }
        }
        OdSampler { pairs, cdf }
    }

    fn draw(&self, rng: &mut Rng) -> (NodeId, NodeId) {
        let total = *self.cdf.last().unwrap();
        let u = rng.gen::<f64>() * total;
        let i = self.cdf.partition_point(|&c| c <= u).min(self.pairs.len() - 1);
        self.pairs[i]
    }
}

/// Simulates `cfg.num_trajectories` trips with planted gravity structure.
/// Each trajectory uses its own sub-seed, so any index range can be
/// generated independently.
pub fn simulate_corpus(network: &RoadNetwork, cfg: &WorldConfig) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    if network.nodes().len() < 2 {
        return Err(Error::invalid("network needs at least two nodes"));
    }
    let od = OdSampler::new(network, cfg);
    let mut dist_cache: Vec<Option<Vec<f64>>> = vec![None; network.nodes().len()];
    let mut out = Vec::with_capacity(cfg.num_trajectories);
    const MAX_REDRAWS: usize = 10_000;
    for i in 0..cfg.num_trajectories {
        let mut rng = seed::indexed(cfg.seed, "trajectory", i as u64);
        let mut found = None;
        for _ in 0..MAX_REDRAWS {
            let (o, d) = od.draw(&mut rng);
            let dist = dist_cache[d].get_or_insert_with(|| distances_to(network, d));
            if let Some(p) = walk(network, dist, o, d, cfg.detour_prob, &mut rng) {
                if p.len() >= MIN_TRIP_LINKS {
                    found = Some(p);
                    break;
                }
            }
        }
        let p = found.ok_or_else(|| {
            Error::invalid(format!("no trip of >= {MIN_TRIP_LINKS} links after {MAX_REDRAWS} draws"))
        })?;
        out.push(Trajectory::new(p));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{HashSet, VecDeque};

    fn cfg(n: usize, eps: f64) -> WorldConfig {
        WorldConfig {
            num_trajectories: n,
            detour_prob: eps,
            seed: 11,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn link_counts() {
        let two = WorldConfig {
            width: 2,
            height: 2,
            ..WorldConfig::default()
        };
        assert_eq!(generate_grid_network(&two).unwrap().num_links(), 8);
        assert_eq!(generate_grid_network(&WorldConfig::default()).unwrap().num_links(), 360);
    }

    #[test]
    fn every_link_has_reverse() {
        let net = generate_grid_network(&WorldConfig::default()).unwrap();
        for l in 0..net.num_links() {
            let r = net.reverse_of(l).unwrap();
            assert_eq!(net.reverse_of(r), Some(l));
        }
    }

    #[test]
    fn config_validation_names_field() {
        let bad = WorldConfig {
            detour_prob: 0.7,
            ..WorldConfig::default()
        };
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("detour_prob"));
        assert!(WorldConfig { width: 1, ..WorldConfig::default() }.validate().is_err());
    }

    /// Hop-count BFS between nodes; grid links share one length.
    fn bfs_hops(net: &RoadNetwork, o: NodeId, d: NodeId) -> usize {
        let mut seen = vec![usize::MAX; net.nodes().len()];
        seen[o] = 0;
        let mut q = VecDeque::from([o]);
        while let Some(v) = q.pop_front() {
            for &l in net.out_links(v) {
                let t = net.link(l).to;
                if seen[t] == usize::MAX {
                    seen[t] = seen[v] + 1;
                    q.push_back(t);
                }
            }
        }
        seen[d]
    }

    #[test]
    fn zero_noise_gives_shortest_paths() {
        let c = cfg(300, 0.0);
        let net = generate_grid_network(&c).unwrap();
        for t in simulate_corpus(&net, &c).unwrap() {
            let o = net.link(t[0]).from;
            let d = net.link(*t.last().unwrap()).to;
            assert_eq!(t.len(), bfs_hops(&net, o, d));
        }
    }

    #[test]
    fn trips_are_long_enough_and_adjacent() {
        let c = cfg(500, 0.2);
        let net = generate_grid_network(&c).unwrap();
        let corpus = simulate_corpus(&net, &c).unwrap();
        assert_eq!(corpus.len(), 500);
        for t in &corpus {
            assert!(t.len() >= MIN_TRIP_LINKS);
            assert!(t.windows(2).all(|w| net.is_adjacent(w[0], w[1])));
        }
        let distinct: HashSet<_> = corpus.iter().collect();
        assert!(distinct.len() > 300);
    }

    #[test]
    fn same_seed_same_corpus() {
        let c = cfg(200, 0.1);
        let net = generate_grid_network(&c).unwrap();
        assert_eq!(simulate_corpus(&net, &c).unwrap(), simulate_corpus(&net, &c).unwrap());
        let other = WorldConfig { seed: 12, ..c.clone() };
        assert_ne!(simulate_corpus(&net, &c).unwrap(), simulate_corpus(&net, &other).unwrap());
    }

    /// Empirical OD over a 2x2 quadrant partition approaches the planted
    /// distribution (restricted to pairs that survive the length filter).
    #[test]
    fn od_converges_to_planted_gravity() {
        let base = cfg(0, 0.0);
        let net = generate_grid_network(&base).unwrap();
        let n = net.nodes().len();
        let pop = node_popularity(&base, n);
        let quad = |v: NodeId| {
            let node = net.nodes()[v];
            (node.x > 450.0) as usize + 2 * (node.y > 450.0) as usize
        };
        let mut planted = [0.0; 16];
        for o in 0..n {
            for d in 0..n {
                if o != d && bfs_hops(&net, o, d) >= MIN_TRIP_LINKS {
                    planted[quad(o) * 4 + quad(d)] += planted_od_weight(&net, &pop, 2.0, o, d);
                }
            }
        }
        let z: f64 = planted.iter().sum();
        planted.iter_mut().for_each(|p| *p /= z);
        let l1 = |size: usize| {
            let c = cfg(size, 0.0);
            let mut emp = [0.0; 16];
            for t in simulate_corpus(&net, &c).unwrap() {
                let o = net.link(t[0]).from;
                let d = net.link(*t.last().unwrap()).to;
                emp[quad(o) * 4 + quad(d)] += 1.0 / size as f64;
            }
            emp.iter().zip(&planted).map(|(a, b)| (a - b).abs()).sum::<f64>()
        };
        let small = l1(200);
        let large = l1(6000);
        assert!(large < small, "L1 {large} not below {small}");
        assert!(large < 0.05, "L1 {large}");
    }
}
