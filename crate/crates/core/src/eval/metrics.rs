//! nDCG@k, MRR@k, MAP@k over run files and qrels.
//!
//! Conventions: graded gains `2^grade - 1` with `1/log2(rank+1)` discounts
//! for nDCG; MRR/MAP consume binarized qrels; queries with no relevant
//! documents (or absent from the qrels entirely) are excluded from the
//! mean and counted as skipped; run-score ties break by passage id
//! ascending before any metric is computed.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::data::formats::{DataError, Qrels, RunFile};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricConfig {
    pub ndcg_k: usize,
    pub mrr_k: usize,
    pub map_k: usize,
    /// Grade threshold for MRR/MAP binarization; nDCG keeps raw grades.
    pub binarization_threshold: u32,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            ndcg_k: 10,
            mrr_k: 10,
            map_k: 100,
            binarization_threshold: 2,
        }
    }
}

/// Per-query values; `None` means the query was excluded for that metric
/// (no relevant documents under the metric's label view).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryMetrics {
    pub ndcg: Option<f64>,
    pub mrr: Option<f64>,
    pub map: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub config: MetricConfig,
    pub per_query: BTreeMap<String, QueryMetrics>,
    pub mean_ndcg: f64,
    pub mean_mrr: f64,
    pub mean_map: f64,
    pub evaluated_ndcg: usize,
    pub evaluated_mrr: usize,
    pub evaluated_map: usize,
    /// Queries present in the run but absent from the qrels.
    pub skipped_no_judgments: usize,
}

fn dcg_at_k(ranked: &[(String, f64)], grades: &BTreeMap<String, u32>, k: usize) -> f64 {
    let mut dcg = 0.0;
    for (i, (pid, _)) in ranked.iter().take(k).enumerate() {
        let g = grades.get(pid).copied().unwrap_or(0);
        if g > 0 {
            let gain = (2f64.powi(g as i32)) - 1.0;
            dcg += gain / ((i + 2) as f64).log2();
        }
    }
    dcg
}

/// nDCG@k for one ranked list. Returns `None` when the query has no
/// graded-relevant documents (ideal DCG is zero).
pub fn ndcg_at_k(
    ranked: &[(String, f64)],
    grades: &BTreeMap<String, u32>,
    k: usize,
) -> Option<f64> {
    let mut ideal: Vec<u32> = grades.values().copied().filter(|&g| g > 0).collect();
    if ideal.is_empty() {
        return None;
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let mut idcg = 0.0;
    for (i, &g) in ideal.iter().take(k).enumerate() {
        idcg += ((2f64.powi(g as i32)) - 1.0) / ((i + 2) as f64).log2();
    }
    Some(dcg_at_k(ranked, grades, k) / idcg)
}

/// Reciprocal rank of the first relevant document within the top k, or 0.
/// Returns `None` when the query has no relevant documents at all.
pub fn mrr_at_k(
    ranked: &[(String, f64)],
    binary: &BTreeMap<String, u32>,
    k: usize,
) -> Option<f64> {
    if !binary.values().any(|&g| g > 0) {
        return None;
    }
    for (i, (pid, _)) in ranked.iter().take(k).enumerate() {
        if binary.get(pid).copied().unwrap_or(0) > 0 {
            return Some(1.0 / (i + 1) as f64);
        }
    }
    Some(0.0)
}

/// MAP@k: mean of precision-at-rank over relevant hits within k, divided
/// by `min(total relevant, k)`. `None` when the query has no relevant
/// documents.
pub fn map_at_k(
    ranked: &[(String, f64)],
    binary: &BTreeMap<String, u32>,
    k: usize,
) -> Option<f64> {
    let total_relevant = binary.values().filter(|&&g| g > 0).count();
    if total_relevant == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum_prec = 0.0;
    for (i, (pid, _)) in ranked.iter().take(k).enumerate() {
        if binary.get(pid).copied().unwrap_or(0) > 0 {
            hits += 1;
            sum_prec += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum_prec / total_relevant.min(k) as f64)
}

impl MetricReport {
    pub fn compute(run: &RunFile, qrels: &Qrels, config: &MetricConfig) -> MetricReport {
        let mut canonical = run.clone();
        canonical.canonicalize();
        let binary = qrels.binarize(config.binarization_threshold);

        let mut per_query = BTreeMap::new();
        let mut skipped = 0usize;
        for (qid, ranked) in &canonical.per_query {
            let Some(grades) = qrels.grades.get(qid) else {
                skipped += 1;
                continue;
            };
            let bin = binary.grades.get(qid).expect("binarize keeps queries");
            per_query.insert(
                qid.clone(),
                QueryMetrics {
                    ndcg: ndcg_at_k(ranked, grades, config.ndcg_k),
                    mrr: mrr_at_k(ranked, bin, config.mrr_k),
                    map: map_at_k(ranked, bin, config.map_k),
                },
            );
        }

        let collect = |f: fn(&QueryMetrics) -> Option<f64>| {
            let vals: Vec<f64> = per_query.values().filter_map(f).collect();
            let mean = if vals.is_empty() {
                0.0
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            };
            (mean, vals.len())
        };
        let (mean_ndcg, evaluated_ndcg) = collect(|m| m.ndcg);
        let (mean_mrr, evaluated_mrr) = collect(|m| m.mrr);
        let (mean_map, evaluated_map) = collect(|m| m.map);

        MetricReport {
            config: config.clone(),
            per_query,
            mean_ndcg,
            mean_mrr,
            mean_map,
            evaluated_ndcg,
            evaluated_mrr,
            evaluated_map,
            skipped_no_judgments: skipped,
        }
    }

    /// Tab-separated per-query table ("-" marks excluded queries).
    pub fn write_tsv(&self, path: &Path) -> Result<(), EvalError> {
        let fmt = |v: Option<f64>| match v {
            Some(x) => format!("{x:.6}"),
            None => "-".to_string(),
        };
        let mut w = std::io::BufWriter::new(fs::File::create(path)?);
        writeln!(
            w,
            "query_id\tndcg@{}\tmrr@{}\tmap@{}",
            self.config.ndcg_k, self.config.mrr_k, self.config.map_k
        )?;
        for (q, m) in &self.per_query {
            writeln!(w, "{q}\t{}\t{}\t{}", fmt(m.ndcg), fmt(m.mrr), fmt(m.map))?;
        }
        writeln!(
            w,
            "MEAN\t{:.6}\t{:.6}\t{:.6}",
            self.mean_ndcg, self.mean_mrr, self.mean_map
        )?;
        w.flush()?;
        Ok(())
    }

    /// Machine-readable key=value aggregate file.
    pub fn write_kv(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = std::io::BufWriter::new(fs::File::create(path)?);
        writeln!(w, "ndcg@{}={:.6}", self.config.ndcg_k, self.mean_ndcg)?;
        writeln!(w, "mrr@{}={:.6}", self.config.mrr_k, self.mean_mrr)?;
        writeln!(w, "map@{}={:.6}", self.config.map_k, self.mean_map)?;
        writeln!(w, "evaluated_ndcg={}", self.evaluated_ndcg)?;
        writeln!(w, "evaluated_mrr={}", self.evaluated_mrr)?;
        writeln!(w, "evaluated_map={}", self.evaluated_map)?;
        writeln!(w, "skipped_no_judgments={}", self.skipped_no_judgments)?;
        w.flush()?;
        Ok(())
    }
}

/// Parse the aggregate key=value file back into a map.
pub fn read_kv(path: &Path) -> Result<BTreeMap<String, f64>, EvalError> {
    let text = fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            if let Ok(x) = v.parse::<f64>() {
                out.insert(k.to_string(), x);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grades(pairs: &[(&str, u32)]) -> BTreeMap<String, u32> {
        pairs.iter().map(|(p, g)| (p.to_string(), *g)).collect()
    }

    fn ranked(pids: &[&str]) -> Vec<(String, f64)> {
        pids.iter()
            .enumerate()
            .map(|(i, p)| (p.to_string(), 100.0 - i as f64))
            .collect()
    }

    #[test]
    fn ndcg_hand_cases() {
        // The only relevant document (grade 1) ranked first: perfect.
        let g = grades(&[("p1", 1)]);
        let v = ndcg_at_k(&ranked(&["p1", "p2", "p3"]), &g, 10).unwrap();
        assert!((v - 1.0).abs() < 1e-12);

        // Same document at rank 2: 1/log2(3).
        let v = ndcg_at_k(&ranked(&["p2", "p1", "p3"]), &g, 10).unwrap();
        let expect = 1.0 / 3f64.log2();
        assert!((v - expect).abs() < 1e-12);
        assert!((v - 0.630930).abs() < 1e-6);

        // No graded docs: excluded.
        assert!(ndcg_at_k(&ranked(&["p1"]), &grades(&[("p9", 0)]), 10).is_none());
    }

    #[test]
    fn mrr_and_map_hand_cases() {
        let bin = grades(&[("p3", 1), ("p7", 1)]);
        // First relevant at rank 3.
        let r = ranked(&["a", "b", "p3", "p7"]);
        assert_eq!(mrr_at_k(&r, &bin, 10).unwrap(), 1.0 / 3.0);

        // Relevant at ranks 1 and 3 of 2 total: (1/1 + 2/3) / 2.
        let r = ranked(&["p3", "x", "p7", "y"]);
        let v = map_at_k(&r, &bin, 10).unwrap();
        assert!((v - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((v - 0.833333).abs() < 1e-6);

        // Nothing relevant in the top k: both zero.
        let r = ranked(&["x", "y"]);
        assert_eq!(mrr_at_k(&r, &bin, 10).unwrap(), 0.0);
        assert_eq!(map_at_k(&r, &bin, 10).unwrap(), 0.0);
    }

    #[test]
    fn map_denominator_caps_at_k() {
        // 3 relevant total but k = 2: denominator is 2.
        let bin = grades(&[("a", 1), ("b", 1), ("c", 1)]);
        let r = ranked(&["a", "b", "c"]);
        let v = map_at_k(&r, &bin, 2).unwrap();
        assert!((v - (1.0 + 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn report_exclusions_and_skips() {
        let mut run = RunFile::default();
        run.per_query.insert("q1".into(), ranked(&["p1", "p2"]));
        run.per_query.insert("q2".into(), ranked(&["p1"])); // graded only below threshold
        run.per_query.insert("q3".into(), ranked(&["p1"])); // not in qrels at all
        let mut qrels = Qrels::default();
        qrels.insert("q1", "p1", 3);
        qrels.insert("q2", "p1", 1);
        let cfg = MetricConfig::default(); // binarization threshold 2
        let report = MetricReport::compute(&run, &qrels, &cfg);
        assert_eq!(report.skipped_no_judgments, 1);
        assert_eq!(report.evaluated_ndcg, 2); // q1 and q2 have graded docs
        assert_eq!(report.evaluated_mrr, 1); // q2 has none above threshold
        assert!(report.per_query["q2"].mrr.is_none());
        assert_eq!(report.per_query["q1"].mrr, Some(1.0));
        // Mean over evaluated queries only.
        assert!((report.mean_mrr - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_invariant_under_monotone_score_transforms() {
        let mut run = RunFile::default();
        run.per_query.insert(
            "q".into(),
            vec![
                ("a".into(), 3.2),
                ("b".into(), -1.0),
                ("c".into(), 0.5),
                ("d".into(), 7.9),
            ],
        );
        let mut qrels = Qrels::default();
        qrels.insert("q", "a", 2);
        qrels.insert("q", "c", 3);
        qrels.insert("q", "b", 1);
        let cfg = MetricConfig::default();
        let base = MetricReport::compute(&run, &qrels, &cfg);
        for transform in [|x: f64| 3.0 * x + 5.0, |x: f64| x.exp(), |x: f64| x.powi(3) / 10.0] {
            let mut t = RunFile::default();
            t.per_query.insert(
                "q".into(),
                run.per_query["q"]
                    .iter()
                    .map(|(p, s)| (p.clone(), transform(*s)))
                    .collect(),
            );
            let got = MetricReport::compute(&t, &qrels, &cfg);
            assert_eq!(got.per_query, base.per_query);
        }
    }

    #[test]
    fn kv_round_trip() {
        let mut run = RunFile::default();
        run.per_query.insert("q".into(), ranked(&["a"]));
        let mut qrels = Qrels::default();
        qrels.insert("q", "a", 2);
        let report = MetricReport::compute(&run, &qrels, &MetricConfig::default());
        let dir = tempfile::tempdir().unwrap();
        let kv = dir.path().join("m.kv");
        report.write_kv(&kv).unwrap();
        let map = read_kv(&kv).unwrap();
        assert!((map["ndcg@10"] - report.mean_ndcg).abs() < 1e-9);
        report.write_tsv(&dir.path().join("m.tsv")).unwrap();
    }
}
