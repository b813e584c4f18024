use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// Default lower bound on the optimal length for the long-episode split.
pub const LONG_EPISODE_MIN_OPTIMAL: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub scene_id: String,
    pub scene_type: String,
    pub target: String,
    pub episode_seed: u64,
    pub success: bool,
    /// Actions taken, the final one included.
    pub steps: usize,
    /// Shortest successful action count, the final `Done` included.
    pub optimal: usize,
    pub deadlock_events: usize,
    pub adaptations: usize,
}

pub fn compute_success_rate(results: &[EpisodeResult]) -> Result<f64, HarnessError> {
    if results.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    let s: f64 = results.iter().map(|r| if r.success { 1.0 } else { 0.0 }).sum();
    Ok(s / results.len() as f64)
}

/// `(1/N) sum S_n * opt_n / max(len_n, opt_n)`.
pub fn compute_spl(results: &[EpisodeResult]) -> Result<f64, HarnessError> {
    if results.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    let mut total = 0.0;
    for r in results {
        if r.optimal == 0 {
            return Err(HarnessError::Config(format!("episode in {} has zero optimal length", r.scene_id)));
        }
        if r.success {
            total += r.optimal as f64 / r.steps.max(r.optimal) as f64;
        }
    }
    Ok(total / results.len() as f64)
}

/// Episodes whose optimal length is at least `min_optimal`.
pub fn filter_long(results: &[EpisodeResult], min_optimal: usize) -> Vec<EpisodeResult> {
    results.iter().filter(|r| r.optimal >= min_optimal).cloned().collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub success: f64,
    pub spl: f64,
    pub n: usize,
}

impl SplitMetrics {
    /// Zero rates for an empty set.
    pub fn of(results: &[EpisodeResult]) -> Self {
        if results.is_empty() {
            return Self::default();
        }
        Self {
            success: compute_success_rate(results).expect("non-empty"),
            spl: compute_spl(results).unwrap_or(0.0),
            n: results.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub all: SplitMetrics,
    pub long: SplitMetrics,
    pub by_scene_type: BTreeMap<String, SplitMetrics>,
    pub deadlock_events: usize,
}

impl MetricsReport {
    pub fn from_results(results: &[EpisodeResult], min_optimal: usize) -> Self {
        let mut groups: BTreeMap<String, Vec<EpisodeResult>> = BTreeMap::new();
        for r in results {
            groups.entry(r.scene_type.clone()).or_default().push(r.clone());
        }
        Self {
            all: SplitMetrics::of(results),
            long: SplitMetrics::of(&filter_long(results, min_optimal)),
            by_scene_type: groups.iter().map(|(k, v)| (k.clone(), SplitMetrics::of(v))).collect(),
            deadlock_events: results.iter().map(|r| r.deadlock_events).sum(),
        }
    }

    /// Summary in the published machine-readable layout.
    pub fn summary_json(&self) -> String {
        let v = serde_json::json!({
            "success": self.all.success,
            "spl": self.all.spl,
            "success_L5": self.long.success,
            "spl_L5": self.long.spl,
            "n": self.all.n,
        });
        serde_json::to_string_pretty(&v).expect("plain values") + "\n"
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<14} {:>8} {:>8} {:>7}\n", "split", "success", "spl", "n"));
        let mut line = |name: &str, m: &SplitMetrics| {
            out.push_str(&format!("{:<14} {:>7.1}% {:>8.3} {:>7}\n", name, 100.0 * m.success, m.spl, m.n));
        };
        line("all", &self.all);
        line("L>=5", &self.long);
        for (k, m) in &self.by_scene_type {
            line(k, m);
        }
        out
    }
}
