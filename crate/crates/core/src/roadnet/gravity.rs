use super::RegionMap;
use crate::corpus::Trajectory;

/// Endpoint tally per region: each trajectory adds one to the region of its
/// first link and one to the region of its last link.
pub fn region_weights(corpus: &[Trajectory], rmap: &RegionMap) -> Vec<u64> {
    let mut w = vec![0u64; rmap.num_regions()];
    for t in corpus {
        if let (Some(&a), Some(&b)) = (t.first(), t.last()) {
            w[rmap.region_of(a)] += 1;
            w[rmap.region_of(b)] += 1;
        }
    }
    w
}

/// `W(rx) * W(ry) / d²(rx, ry)` between region centroids.
pub fn gravity(rx: usize, ry: usize, weights: &[u64], rmap: &RegionMap) -> f64 {
    let num = weights[rx] as f64 * weights[ry] as f64;
    if num == 0.0 {
        return 0.0;
    }
    num / rmap.distance_sq(rx, ry)
}

/// Dense pairwise gravity over all regions.
#[derive(Debug, Clone, PartialEq)]
pub struct GravityTable {
    n: usize,
    weights: Vec<u64>,
    values: Vec<f64>,
    dist_sq: Vec<f64>,
}

impl GravityTable {
    pub fn new(weights: Vec<u64>, rmap: &RegionMap) -> Self {
        let n = rmap.num_regions();
        assert_eq!(weights.len(), n, "weights do not match region map");
        let mut values = vec![0.0; n * n];
        let mut dist_sq = vec![0.0; n * n];
        for x in 0..n {
            for y in 0..n {
                dist_sq[x * n + y] = rmap.distance_sq(x, y);
                values[x * n + y] = gravity(x, y, &weights, rmap);
            }
        }
        GravityTable {
            n,
            weights,
            values,
            dist_sq,
        }
    }

    pub fn from_corpus(corpus: &[Trajectory], rmap: &RegionMap) -> Self {
        Self::new(region_weights(corpus, rmap), rmap)
    }

    pub fn num_regions(&self) -> usize {
        self.n
    }

    pub fn get(&self, rx: usize, ry: usize) -> f64 {
        self.values[rx * self.n + ry]
    }

    pub fn dist_sq(&self, rx: usize, ry: usize) -> f64 {
        self.dist_sq[rx * self.n + ry]
    }

    pub fn weights(&self) -> &[u64] {
        &self.weights
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roadnet::{build_region_map, Link, Node, RoadNetwork};

    /// Two links whose centroids sit at x=1 and x=3 in a [0, 4] box split in
    /// two cells, so the region centroids are 2 m apart.
    fn two_region_net() -> (RoadNetwork, RegionMap) {
        let nodes = vec![
            Node { id: 0, x: 0.0, y: 0.0 },
            Node { id: 1, x: 2.0, y: 0.0 },
            Node { id: 2, x: 4.0, y: 0.0 },
        ];
        let links = vec![
            Link { id: 0, from: 0, to: 1, length: 2.0 },
            Link { id: 1, from: 1, to: 2, length: 2.0 },
        ];
        let net = RoadNetwork::new(nodes, links).unwrap();
        let m = build_region_map(&net, 2, 1).unwrap();
        (net, m)
    }

    #[test]
    fn empty_corpus_has_zero_weights() {
        let (_, m) = two_region_net();
        assert_eq!(region_weights(&[], &m), vec![0, 0]);
    }

    #[test]
    fn one_trajectory_counts_both_endpoints() {
        let (_, m) = two_region_net();
        let w = region_weights(&[Trajectory::new(vec![0, 1])], &m);
        assert_eq!(w, vec![1, 1]);
        let w = region_weights(&[Trajectory::new(vec![1])], &m);
        assert_eq!(w, vec![0, 2]);
    }

    #[test]
    fn hand_evaluated_gravity() {
        let (_, m) = two_region_net();
        let w = vec![3, 4];
        assert_eq!(m.distance_sq(0, 1), 4.0);
        assert_eq!(gravity(0, 1, &w, &m), 3.0);
        assert_eq!(gravity(1, 0, &w, &m), 3.0);
        assert_eq!(gravity(0, 1, &[0, 4], &m), 0.0);
        // same region uses the half-diagonal floor (cell is 2 x 0 -> 1 m)
        assert_eq!(gravity(0, 0, &w, &m), 9.0);
    }

    #[test]
    fn table_matches_pointwise() {
        let (_, m) = two_region_net();
        let t = GravityTable::new(vec![3, 4], &m);
        for x in 0..2 {
            for y in 0..2 {
                assert_eq!(t.get(x, y), gravity(x, y, &[3, 4], &m));
            }
        }
        assert_eq!(t.max_value(), 16.0);
    }
}
