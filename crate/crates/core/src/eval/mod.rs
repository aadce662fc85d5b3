//! Retrieval metrics, database persistence, benchmarks and the dataset harness.

mod bench;
mod db;
mod harness;

pub use bench::{bench_correlation, BenchReport};
pub use db::{load_db, save_db, DescriptorDb, MAGIC, VERSION};
pub use harness::{
    build_db_from_dir, build_db_from_records, coarse_queries, load_queries, synthetic_queries, Query,
};

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::dsm::MatchResult;
use crate::error::{Error, Result};

/// Default localization radius, meters.
pub const DEFAULT_RADIUS_M: f64 = 5.0;

/// Fraction of the FoV allowed as orientation error.
pub const ORIENTATION_TOLERANCE: f64 = 0.1;

/// Ranked output for one query plus its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalResult {
    pub query_id: u64,
    pub truth_id: u64,
    pub truth_azimuth_deg: f64,
    /// True camera position, meters.
    pub truth_xy: (f64, f64),
    /// Sorted by similarity (descending), ties by id.
    pub ranked: Vec<MatchResult>,
}

impl RetrievalResult {
    /// Zero-based rank of the truth reference, if present.
    pub fn truth_rank(&self) -> Option<usize> {
        self.ranked.iter().position(|m| m.ref_id == self.truth_id)
    }
}

fn check_results(results: &[RetrievalResult], k: usize) -> Result<()> {
    if results.is_empty() {
        return Err(Error::invalid("no retrieval results"));
    }
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    Ok(())
}

/// Fraction of queries whose truth reference is in the top `k`.
pub fn recall_at_k(results: &[RetrievalResult], k: usize) -> Result<f64> {
    check_results(results, k)?;
    let hits = results
        .iter()
        .filter(|r| r.truth_rank().is_some_and(|i| i < k))
        .count();
    Ok(hits as f64 / results.len() as f64)
}

/// Fraction of queries with any top-`k` reference within `radius_m` of the
/// query's true position.
pub fn distance_recall(
    results: &[RetrievalResult],
    geotags: &HashMap<u64, (f64, f64)>,
    k: usize,
    radius_m: f64,
) -> Result<f64> {
    check_results(results, k)?;
    if !(radius_m >= 0.0) {
        return Err(Error::invalid("radius must be non-negative"));
    }
    let mut hits = 0usize;
    for r in results {
        let mut found = false;
        for m in r.ranked.iter().take(k) {
            let &(x, y) = geotags
                .get(&m.ref_id)
                .ok_or_else(|| Error::invalid(format!("reference {} has no geotag", m.ref_id)))?;
            if (x - r.truth_xy.0).hypot(y - r.truth_xy.1) <= radius_m {
                found = true;
            }
        }
        hits += found as usize;
    }
    Ok(hits as f64 / results.len() as f64)
}

/// Absolute angular difference on the circle, in `[0, 180]` degrees.
pub fn circular_error(a_deg: f64, b_deg: f64) -> f64 {
    let d = (a_deg - b_deg).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Over top-1-correct queries, the fraction whose azimuth error is within
/// `0.1 * fov`. `None` when no query is top-1 correct.
pub fn orientation_accuracy(results: &[RetrievalResult], fov_deg: f64) -> Result<Option<f64>> {
    check_results(results, 1)?;
    let tol = ORIENTATION_TOLERANCE * fov_deg;
    let (mut n, mut ok) = (0usize, 0usize);
    for r in results {
        if let Some(top) = r.ranked.first().filter(|m| m.ref_id == r.truth_id) {
            n += 1;
            if circular_error(top.azimuth_deg, r.truth_azimuth_deg) <= tol {
                ok += 1;
            }
        }
    }
    Ok((n > 0).then(|| ok as f64 / n as f64))
}

/// `loc_acc * orien_acc`, both expected in `[0, 1]`.
pub fn overall(loc_acc: f64, orien_acc: f64) -> f64 {
    loc_acc * orien_acc
}

/// Standard metric set for one field of view.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub fov_deg: f64,
    pub queries: usize,
    /// `(K, r@K)` pairs.
    pub recall: Vec<(usize, f64)>,
    pub recall_top1_percent: f64,
    pub distance_recall: f64,
    pub radius_m: f64,
    pub orientation: Option<f64>,
    pub overall: Option<f64>,
}

impl MetricsReport {
    pub fn compute(
        results: &[RetrievalResult],
        geotags: &HashMap<u64, (f64, f64)>,
        fov_deg: f64,
        radius_m: f64,
    ) -> Result<Self> {
        check_results(results, 1)?;
        let n_refs = results.iter().map(|r| r.ranked.len()).max().unwrap_or(1).max(1);
        let top1p = (n_refs as f64 / 100.0).ceil().max(1.0) as usize;
        let recall = [1, 5, 10]
            .into_iter()
            .map(|k| Ok((k, recall_at_k(results, k)?)))
            .collect::<Result<Vec<_>>>()?;
        let r1 = recall[0].1;
        let orientation = orientation_accuracy(results, fov_deg)?;
        Ok(Self {
            fov_deg,
            queries: results.len(),
            recall,
            recall_top1_percent: recall_at_k(results, top1p)?,
            distance_recall: distance_recall(results, geotags, 1, radius_m)?,
            radius_m,
            orientation,
            overall: orientation.map(|o| overall(r1, o)),
        })
    }

    fn rows(&self) -> Vec<(String, Option<f64>)> {
        let mut rows: Vec<(String, Option<f64>)> = self
            .recall
            .iter()
            .map(|&(k, v)| (format!("r@{k}"), Some(v)))
            .collect();
        rows.push(("r@1%".into(), Some(self.recall_top1_percent)));
        rows.push((format!("dist_recall@1_{}m", self.radius_m), Some(self.distance_recall)));
        rows.push(("orien_acc".into(), self.orientation));
        rows.push(("overall".into(), self.overall));
        rows
    }

    /// `fov,queries,metric,value`; undefined values are written as `NA`.
    pub fn to_csv(reports: &[MetricsReport]) -> String {
        let mut s = String::from("fov,queries,metric,value\n");
        for r in reports {
            for (name, v) in r.rows() {
                let v = v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
                let _ = writeln!(s, "{},{},{},{}", r.fov_deg, r.queries, name, v);
            }
        }
        s
    }

    pub fn to_table(reports: &[MetricsReport]) -> String {
        let mut s = String::new();
        for r in reports {
            let _ = writeln!(s, "FoV {} deg, {} queries", r.fov_deg, r.queries);
            for (name, v) in r.rows() {
                let v = v.map_or_else(|| "undefined".to_string(), |v| format!("{:7.2}%", 100.0 * v));
                let _ = writeln!(s, "  {name:<18} {v}");
            }
        }
        s
    }
}
