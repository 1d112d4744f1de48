use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Zero-mass smoothing added to categorical histograms.
pub const CATEGORY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    edges: Vec<f64>,
    mass: Vec<f64>,
    count: usize,
}

/// `bins` equal-width bins over `[lo, hi]`; a zero-width range is widened
/// to `[lo - 0.5, hi + 0.5]`.
pub fn uniform_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    assert!(bins >= 1 && lo <= hi);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let w = (hi - lo) / bins as f64;
    let mut e: Vec<f64> = (0..bins).map(|i| lo + w * i as f64).collect();
    e.push(hi);
    e
}

impl Histogram {
    /// Bins `values` over `edges`. Bins are half-open except the last, which
    /// includes its upper edge.
    pub fn from_values(values: &[f64], edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("histogram edges must be strictly increasing"));
        }
        if values.is_empty() {
            return Err(Error::invalid("histogram of an empty sample"));
        }
        let k = edges.len() - 1;
        let mut counts = vec![0.0; k];
        for &v in values {
            if !(v >= edges[0] && v <= edges[k]) {
                return Err(Error::invalid(format!("value {v} outside histogram range")));
            }
            let i = edges.partition_point(|&e| e <= v).saturating_sub(1).min(k - 1);
            counts[i] += 1.0;
        }
        let n = values.len() as f64;
        Ok(Histogram {
            mass: counts.into_iter().map(|c| c / n).collect(),
            edges,
            count: values.len(),
        })
    }

    /// Categorical histogram over `counts.len()` categories with edges
    /// `0..=K`, normalized, smoothed by [`CATEGORY_EPS`] and renormalized.
    pub fn categorical(counts: &[f64], sample_count: usize) -> Result<Self> {
        let total: f64 = counts.iter().sum();
        if counts.is_empty() || total <= 0.0 || counts.iter().any(|&c| c < 0.0 || !c.is_finite()) {
            return Err(Error::invalid("categorical histogram needs non-negative counts with positive total"));
        }
        let smoothed: Vec<f64> = counts.iter().map(|c| c / total + CATEGORY_EPS).collect();
        let z: f64 = smoothed.iter().sum();
        Ok(Histogram {
            edges: (0..=counts.len()).map(|i| i as f64).collect(),
            mass: smoothed.into_iter().map(|m| m / z).collect(),
            count: sample_count,
        })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

fn kl2(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &mi)| pi * (pi / mi).log2())
        .sum()
}

/// Jensen-Shannon divergence with base-2 logarithms, in `[0, 1]`.
pub fn jsd(p: &Histogram, q: &Histogram) -> Result<f64> {
    if p.edges != q.edges {
        return Err(Error::invalid("histograms have different bin edges"));
    }
    Ok(jsd_masses(&p.mass, &q.mass))
}

pub fn jsd_masses(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    (0.5 * kl2(p, &m) + 0.5 * kl2(q, &m)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn extremes() {
        assert_eq!(jsd_masses(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert_eq!(jsd_masses(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
    }

    #[test]
    fn binning_rules() {
        let h = Histogram::from_values(&[0.0, 1.0, 2.0, 3.0, 4.0], uniform_edges(0.0, 4.0, 4)).unwrap();
        assert_eq!(h.mass(), &[0.2, 0.2, 0.2, 0.4]);
        let h = Histogram::from_values(&[5.0; 3], uniform_edges(5.0, 5.0, 50)).unwrap();
        assert_eq!(h.mass().iter().filter(|&&m| m > 0.0).count(), 1);
        assert!(Histogram::from_values(&[9.0], uniform_edges(0.0, 1.0, 2)).is_err());
        assert!(Histogram::from_values(&[0.5], vec![0.0, 0.0, 1.0]).is_err());
        let a = Histogram::from_values(&[0.5], uniform_edges(0.0, 1.0, 2)).unwrap();
        let b = Histogram::from_values(&[0.5], uniform_edges(0.0, 1.0, 3)).unwrap();
        assert!(jsd(&a, &b).is_err());
    }

    #[test]
    fn categorical_smoothing_keeps_unit_mass() {
        let h = Histogram::categorical(&[3.0, 0.0, 1.0], 4).unwrap();
        assert!((h.mass().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(h.mass()[1] > 0.0 && h.mass()[1] < 1e-11);
    }

    proptest! {
        #[test]
        fn jsd_bounded_symmetric(p in proptest::collection::vec(0.0f64..1.0, 1..12), q in proptest::collection::vec(0.0f64..1.0, 1..12)) {
            let k = p.len().min(q.len());
            let (p, q) = (&p[..k], &q[..k]);
            prop_assume!(p.iter().sum::<f64>() > 0.0 && q.iter().sum::<f64>() > 0.0);
            let a = Histogram::categorical(p, k).unwrap();
            let b = Histogram::categorical(q, k).unwrap();
            let d = jsd(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert!((d - jsd(&b, &a).unwrap()).abs() < 1e-15);
            prop_assert_eq!(jsd(&a, &a).unwrap(), 0.0);
        }
    }
}
