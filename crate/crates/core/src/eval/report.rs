use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::baselines::{mmc_baseline, random_walk_baseline};
use super::histogram::jsd;
use super::metrics::{connectivity, jsd_gravity, jsd_od, query_error, radius_distribution, radius_of_gyration, trip_length, trip_length_distribution};
use crate::corpus::Trajectory;
use crate::error::{Error, Result};
use crate::meta::Provenance;
use crate::roadnet::{ConnectivityMatrix, RegionMap, RoadNetwork};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_queries: usize,
    pub bins: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { n_queries: 500, bins: 50, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub query_error: f64,
    pub jsd_od: f64,
    pub jsd_trip_length: f64,
    pub jsd_radius: f64,
    pub jsd_gravity: f64,
    pub connectivity: f64,
    pub size: usize,
}

impl MetricRow {
    /// The five lower-is-better similarity metrics, in a fixed order.
    pub fn similarity(&self) -> [f64; 5] {
        [self.query_error, self.jsd_od, self.jsd_trip_length, self.jsd_radius, self.jsd_gravity]
    }

    pub const SIMILARITY_NAMES: [&'static str; 5] = ["query_error", "jsd_od", "jsd_trip_length", "jsd_radius", "jsd_gravity"];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format_version: u32,
    #[serde(flatten)]
    pub model: MetricRow,
    pub real_size: usize,
    pub provenance: Option<Provenance>,
    #[serde(default)]
    pub baselines: BTreeMap<String, MetricRow>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

pub fn evaluate(real: &[Trajectory], syn: &[Trajectory], network: &RoadNetwork, rmap: &RegionMap, rcm: &ConnectivityMatrix, cfg: &EvalConfig) -> Result<MetricRow> {
    if real.is_empty() || syn.is_empty() {
        return Err(Error::invalid("evaluation needs two nonempty corpora"));
    }
    if rcm.vocab().num_links() != network.num_links() {
        return Err(Error::invalid("connectivity matrix does not match the network"));
    }
    for t in real.iter().chain(syn) {
        t.validate(network)?;
    }
    let (a, b) = trip_length_distribution(real, syn, network, cfg.bins)?;
    let (ra, rb) = radius_distribution(real, syn, network, cfg.bins)?;
    Ok(MetricRow {
        query_error: query_error(real, syn, network.num_links(), cfg.n_queries, cfg.seed)?,
        jsd_od: jsd_od(real, syn, rmap)?,
        jsd_trip_length: jsd(&a, &b)?,
        jsd_radius: jsd(&ra, &rb)?,
        jsd_gravity: jsd_gravity(real, syn, rmap)?,
        connectivity: connectivity(syn, rcm),
        size: syn.len(),
    })
}

/// Per-trajectory values behind the length and radius box plots.
pub fn plot_csv(sources: &[(&str, &[Trajectory])], network: &RoadNetwork, header_comment: &str) -> String {
    let mut s = String::from(header_comment);
    s.push_str("source,trip_length_m,radius_of_gyration_m\n");
    for (name, c) in sources {
        for t in c.iter() {
            s.push_str(&format!("{name},{},{}\n", trip_length(t, network), radius_of_gyration(t, network)));
        }
    }
    s
}

pub struct ReportOutput {
    pub report: MetricsReport,
    pub plot_csv: String,
}

/// Metrics for `syn` against `real`, plus baseline rows fitted on `fit`
/// when requested.
#[allow(clippy::too_many_arguments)]
pub fn report(
    real: &[Trajectory],
    syn: &[Trajectory],
    network: &RoadNetwork,
    rmap: &RegionMap,
    rcm: &ConnectivityMatrix,
    cfg: &EvalConfig,
    baselines_from: Option<&[Trajectory]>,
    provenance: Option<Provenance>,
) -> Result<ReportOutput> {
    let model = evaluate(real, syn, network, rmap, rcm, cfg)?;
    let mut rows = BTreeMap::new();
    let mut sources: Vec<(&str, Vec<Trajectory>)> = Vec::new();
    if let Some(fit) = baselines_from {
        let rw = random_walk_baseline(network, fit, syn.len(), cfg.seed)?;
        let mmc = mmc_baseline(fit, syn.len(), cfg.seed)?;
        rows.insert("random_walk".to_string(), evaluate(real, &rw, network, rmap, rcm, cfg)?);
        rows.insert("mmc".to_string(), evaluate(real, &mmc, network, rmap, rcm, cfg)?);
        sources.push(("random_walk", rw));
        sources.push(("mmc", mmc));
    }
    let comment = provenance.as_ref().map(Provenance::comment_lines).unwrap_or_default();
    let mut all: Vec<(&str, &[Trajectory])> = vec![("real", real), ("model", syn)];
    all.extend(sources.iter().map(|(n, c)| (*n, c.as_slice())));
    let plot = plot_csv(&all, network, &comment);
    Ok(ReportOutput {
        report: MetricsReport {
            format_version: REPORT_VERSION,
            model,
            real_size: real.len(),
            provenance,
            baselines: rows,
        },
        plot_csv: plot,
    })
}
