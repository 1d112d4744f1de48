use std::collections::BTreeMap;

use rand::seq::index::sample;

use super::histogram::{jsd, uniform_edges, Histogram};
use crate::corpus::Trajectory;
use crate::error::{Error, Result};
use crate::roadnet::{region_weights, gravity, ConnectivityMatrix, RegionMap, RoadNetwork};
use crate::seed;

/// Number of trajectories that pass through each link at least once.
pub fn link_visits(corpus: &[Trajectory], num_links: usize) -> Vec<f64> {
    let mut f = vec![0.0; num_links];
    let mut seen = vec![usize::MAX; num_links];
    for (i, t) in corpus.iter().enumerate() {
        for &l in t.iter() {
            if seen[l] != i {
                seen[l] = i;
                f[l] += 1.0;
            }
        }
    }
    f
}

/// Mean over sampled links of `|f_real - f_syn| / max(f_real, s)`, where
/// `s` is 1% of the real corpus size.
pub fn query_error(real: &[Trajectory], syn: &[Trajectory], num_links: usize, n_queries: usize, seed_value: u64) -> Result<f64> {
    if real.is_empty() || syn.is_empty() {
        return Err(Error::invalid("query error needs two nonempty corpora"));
    }
    let k = n_queries.min(num_links);
    let mut rng = seed::stream(seed_value, "query_error");
    let picks = sample(&mut rng, num_links, k).into_vec();
    query_error_at(real, syn, num_links, &picks)
}

/// Query error over an explicit set of query links.
pub fn query_error_at(real: &[Trajectory], syn: &[Trajectory], num_links: usize, links: &[usize]) -> Result<f64> {
    if real.is_empty() || syn.is_empty() || links.is_empty() {
        return Err(Error::invalid("query error needs two nonempty corpora and at least one query"));
    }
    let fr = link_visits(real, num_links);
    let fs = link_visits(syn, num_links);
    let s = 0.01 * real.len() as f64;
    let total: f64 = links.iter().map(|&l| (fr[l] - fs[l]).abs() / fr[l].max(s)).sum();
    Ok(total / links.len() as f64)
}

/// Tally of (origin region, destination region) over first and last links.
pub fn od_counts(corpus: &[Trajectory], rmap: &RegionMap) -> BTreeMap<(usize, usize), f64> {
    let mut m = BTreeMap::new();
    for t in corpus {
        if let (Some(&a), Some(&b)) = (t.first(), t.last()) {
            *m.entry((rmap.region_of(a), rmap.region_of(b))).or_insert(0.0) += 1.0;
        }
    }
    m
}

/// Histograms over the union of keys of two tallies.
pub fn aligned_categorical<K: Ord + Clone>(a: &BTreeMap<K, f64>, b: &BTreeMap<K, f64>, na: usize, nb: usize) -> Result<(Histogram, Histogram)> {
    let mut keys: Vec<&K> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    let ca: Vec<f64> = keys.iter().map(|k| a.get(*k).copied().unwrap_or(0.0)).collect();
    let cb: Vec<f64> = keys.iter().map(|k| b.get(*k).copied().unwrap_or(0.0)).collect();
    Ok((Histogram::categorical(&ca, na)?, Histogram::categorical(&cb, nb)?))
}

pub fn od_distribution(real: &[Trajectory], syn: &[Trajectory], rmap: &RegionMap) -> Result<(Histogram, Histogram)> {
    aligned_categorical(&od_counts(real, rmap), &od_counts(syn, rmap), real.len(), syn.len())
}

pub fn trip_length(t: &[usize], network: &RoadNetwork) -> f64 {
    t.iter().map(|&l| network.link(l).length).sum()
}

/// Root-mean-square distance of link centroids from their mean.
pub fn radius_of_gyration(t: &[usize], network: &RoadNetwork) -> f64 {
    if t.is_empty() {
        return 0.0;
    }
    let n = t.len() as f64;
    let pts: Vec<(f64, f64)> = t.iter().map(|&l| network.centroid(l)).collect();
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / n;
    (pts.iter().map(|p| (p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sum::<f64>() / n).sqrt()
}

/// Histograms of a per-trajectory statistic over shared uniform bins that
/// span the pooled range.
pub fn pooled_histograms(a: &[f64], b: &[f64], bins: usize) -> Result<(Histogram, Histogram)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("empty sample"));
    }
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    let edges = uniform_edges(lo, hi, bins);
    Ok((Histogram::from_values(a, edges.clone())?, Histogram::from_values(b, edges)?))
}

pub fn trip_length_distribution(real: &[Trajectory], syn: &[Trajectory], network: &RoadNetwork, bins: usize) -> Result<(Histogram, Histogram)> {
    let f = |c: &[Trajectory]| c.iter().map(|t| trip_length(t, network)).collect::<Vec<_>>();
    pooled_histograms(&f(real), &f(syn), bins)
}

pub fn radius_distribution(real: &[Trajectory], syn: &[Trajectory], network: &RoadNetwork, bins: usize) -> Result<(Histogram, Histogram)> {
    let f = |c: &[Trajectory]| c.iter().map(|t| radius_of_gyration(t, network)).collect::<Vec<_>>();
    pooled_histograms(&f(real), &f(syn), bins)
}

/// Gravity between every ordered region pair, recomputed from the corpus's
/// own endpoint weights.
pub fn gravity_counts(corpus: &[Trajectory], rmap: &RegionMap) -> Vec<f64> {
    let w = region_weights(corpus, rmap);
    let n = rmap.num_regions();
    let mut out = Vec::with_capacity(n * n);
    for x in 0..n {
        for y in 0..n {
            out.push(gravity(x, y, &w, rmap));
        }
    }
    out
}

pub fn gravity_distribution(corpus: &[Trajectory], rmap: &RegionMap) -> Result<Histogram> {
    Histogram::categorical(&gravity_counts(corpus, rmap), corpus.len())
}

/// Fraction of trajectories whose consecutive links are all permitted.
pub fn connectivity(corpus: &[Trajectory], rcm: &ConnectivityMatrix) -> f64 {
    if corpus.is_empty() {
        return 1.0;
    }
    corpus.iter().filter(|t| rcm.is_connected(t)).count() as f64 / corpus.len() as f64
}

pub fn jsd_od(real: &[Trajectory], syn: &[Trajectory], rmap: &RegionMap) -> Result<f64> {
    let (a, b) = od_distribution(real, syn, rmap)?;
    jsd(&a, &b)
}

pub fn jsd_gravity(real: &[Trajectory], syn: &[Trajectory], rmap: &RegionMap) -> Result<f64> {
    jsd(&gravity_distribution(real, rmap)?, &gravity_distribution(syn, rmap)?)
}
