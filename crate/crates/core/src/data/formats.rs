//! Text file formats. Scores serialize with 6 decimal digits, which
//! round-trips exactly at that precision.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}:{line}: {msg}")]
    Malformed {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("teacher scores misaligned with triples: {0}")]
    Misaligned(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn malformed(path: &Path, line: usize, msg: impl Into<String>) -> DataError {
    DataError::Malformed {
        file: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// One training triple: query, relevant passage, non-relevant passage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingTriple {
    pub query_id: String,
    pub pos_id: String,
    pub neg_id: String,
}

/// Teacher scores for one triple, aligned by line position with the
/// triples file it accompanies. The trailing id columns make shuffling
/// detectable.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherScoreRecord {
    pub pos_score: f64,
    pub neg_score: f64,
    pub ids: Option<(String, String, String)>,
}

impl TeacherScoreRecord {
    pub fn margin(&self) -> f64 {
        self.pos_score - self.neg_score
    }
}

/// id -> text map for passages or queries.
pub type Collection = BTreeMap<String, String>;

/// (query, passage) -> integer relevance grade.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    pub grades: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn grade(&self, query_id: &str, passage_id: &str) -> u32 {
        self.grades
            .get(query_id)
            .and_then(|m| m.get(passage_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn insert(&mut self, query_id: impl Into<String>, passage_id: impl Into<String>, grade: u32) {
        self.grades
            .entry(query_id.into())
            .or_default()
            .insert(passage_id.into(), grade);
    }

    /// Grade >= threshold becomes relevant (1), everything else 0.
    pub fn binarize(&self, threshold: u32) -> Qrels {
        let mut out = Qrels::default();
        for (q, docs) in &self.grades {
            for (p, &g) in docs {
                out.insert(q.clone(), p.clone(), u32::from(g >= threshold));
            }
        }
        out
    }
}

/// Ranked candidate lists per query, descending score.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFile {
    pub per_query: BTreeMap<String, Vec<(String, f64)>>,
}

impl RunFile {
    /// Sort each list by score descending, ties broken by passage id
    /// ascending. Every consumer relies on this canonical order.
    pub fn canonicalize(&mut self) {
        for list in self.per_query.values_mut() {
            list.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .expect("scores are finite")
                    .then_with(|| a.0.cmp(&b.0))
            });
        }
    }
}

/// Per-query candidate passage lists (first-stage stand-in).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CandidateSet {
    pub per_query: BTreeMap<String, Vec<String>>,
}

// ── Triples ──────────────────────────────────────────────────────────

pub fn write_triples(path: &Path, triples: &[TrainingTriple]) -> Result<(), DataError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for t in triples {
        writeln!(w, "{}\t{}\t{}", t.query_id, t.pos_id, t.neg_id)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_triples(path: &Path) -> Result<Vec<TrainingTriple>, DataError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(malformed(
                path,
                lineno,
                format!("expected 3 tab-separated columns, got {}", cols.len()),
            ));
        }
        if cols[1] == cols[2] {
            return Err(malformed(
                path,
                lineno,
                "positive and negative passage ids must differ",
            ));
        }
        out.push(TrainingTriple {
            query_id: cols[0].to_string(),
            pos_id: cols[1].to_string(),
            neg_id: cols[2].to_string(),
        });
    }
    Ok(out)
}

// ── Collections ──────────────────────────────────────────────────────

pub fn write_collection(path: &Path, collection: &Collection) -> Result<(), DataError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (id, text) in collection {
        writeln!(w, "{id}\t{text}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_collection(path: &Path) -> Result<Collection, DataError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Collection::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let Some((id, text)) = line.split_once('\t') else {
            return Err(malformed(path, lineno, "expected `id<TAB>text`"));
        };
        if out.insert(id.to_string(), text.to_string()).is_some() {
            return Err(malformed(path, lineno, format!("duplicate collection id {id:?}")));
        }
    }
    Ok(out)
}

// ── Teacher scores ───────────────────────────────────────────────────

/// Line format: `pos_score<TAB>neg_score<TAB>query_id<TAB>pos_id<TAB>neg_id`,
/// scores fixed to 6 decimals.
pub fn write_teacher_scores(path: &Path, records: &[TeacherScoreRecord]) -> Result<(), DataError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        match &r.ids {
            Some((q, p, n)) => {
                writeln!(w, "{:.6}\t{:.6}\t{}\t{}\t{}", r.pos_score, r.neg_score, q, p, n)?
            }
            None => writeln!(w, "{:.6}\t{:.6}", r.pos_score, r.neg_score)?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Tolerant of extra trailing columns; the id columns are optional.
pub fn read_teacher_scores(path: &Path) -> Result<Vec<TeacherScoreRecord>, DataError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 2 {
            return Err(malformed(path, lineno, "expected at least 2 score columns"));
        }
        let pos_score: f64 = cols[0]
            .parse()
            .map_err(|_| malformed(path, lineno, format!("non-numeric score {:?}", cols[0])))?;
        let neg_score: f64 = cols[1]
            .parse()
            .map_err(|_| malformed(path, lineno, format!("non-numeric score {:?}", cols[1])))?;
        if !pos_score.is_finite() || !neg_score.is_finite() {
            return Err(malformed(path, lineno, "scores must be finite"));
        }
        let ids = if cols.len() >= 5 {
            Some((cols[2].to_string(), cols[3].to_string(), cols[4].to_string()))
        } else {
            None
        };
        out.push(TeacherScoreRecord {
            pos_score,
            neg_score,
            ids,
        });
    }
    Ok(out)
}

/// Check a score file against the triples it claims to accompany: counts
/// must match, and any id columns must agree line by line.
pub fn align_teacher_scores(
    records: &[TeacherScoreRecord],
    triples: &[TrainingTriple],
) -> Result<(), DataError> {
    if records.len() != triples.len() {
        return Err(DataError::Misaligned(format!(
            "{} records vs {} triples",
            records.len(),
            triples.len()
        )));
    }
    for (i, (r, t)) in records.iter().zip(triples).enumerate() {
        if let Some((q, p, n)) = &r.ids {
            if q != &t.query_id || p != &t.pos_id || n != &t.neg_id {
                return Err(DataError::Misaligned(format!(
                    "line {}: record ids ({q}, {p}, {n}) vs triple ({}, {}, {})",
                    i + 1,
                    t.query_id,
                    t.pos_id,
                    t.neg_id
                )));
            }
        }
    }
    Ok(())
}

// ── Qrels ────────────────────────────────────────────────────────────

pub fn write_qrels(path: &Path, qrels: &Qrels) -> Result<(), DataError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (q, docs) in &qrels.grades {
        for (p, g) in docs {
            writeln!(w, "{q} 0 {p} {g}")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_qrels(path: &Path) -> Result<Qrels, DataError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Qrels::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(malformed(
                path,
                lineno,
                format!("expected `qid 0 pid grade`, got {} fields", cols.len()),
            ));
        }
        let grade: u32 = cols[3]
            .parse()
            .map_err(|_| malformed(path, lineno, format!("bad grade {:?}", cols[3])))?;
        out.insert(cols[0].to_string(), cols[2].to_string(), grade);
    }
    Ok(out)
}

// ── Run files ────────────────────────────────────────────────────────

/// TREC format: `qid Q0 pid rank score tag`. Ranks are recomputed from
/// the canonical order before writing.
pub fn write_run(path: &Path, run: &RunFile, tag: &str) -> Result<(), DataError> {
    let mut canonical = run.clone();
    canonical.canonicalize();
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (q, list) in &canonical.per_query {
        for (rank, (p, score)) in list.iter().enumerate() {
            writeln!(w, "{} Q0 {} {} {:.6} {}", q, p, rank + 1, score, tag)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_run(path: &Path) -> Result<(RunFile, String), DataError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut run = RunFile::default();
    let mut tag = String::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(malformed(
                path,
                lineno,
                format!("expected `qid Q0 pid rank score tag`, got {} fields", cols.len()),
            ));
        }
        let score: f64 = cols[4]
            .parse()
            .map_err(|_| malformed(path, lineno, format!("bad score {:?}", cols[4])))?;
        let entry = run.per_query.entry(cols[0].to_string()).or_default();
        if entry.iter().any(|(p, _)| p == cols[2]) {
            return Err(malformed(
                path,
                lineno,
                format!("duplicate passage {} for query {}", cols[2], cols[0]),
            ));
        }
        entry.push((cols[2].to_string(), score));
        tag = cols[5].to_string();
    }
    run.canonicalize();
    Ok((run, tag))
}

// ── Candidate lists ──────────────────────────────────────────────────

pub fn write_candidates(path: &Path, candidates: &CandidateSet) -> Result<(), DataError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (q, pids) in &candidates.per_query {
        for p in pids {
            writeln!(w, "{q}\t{p}")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_candidates(path: &Path) -> Result<CandidateSet, DataError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = CandidateSet::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let Some((q, p)) = line.split_once('\t') else {
            return Err(malformed(path, lineno, "expected `qid<TAB>pid`"));
        };
        out.per_query
            .entry(q.to_string())
            .or_default()
            .push(p.to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn triples_parse_and_error_cases() {
        let dir = tmp();
        let path = dir.path().join("triples.tsv");
        std::fs::write(&path, "q1\tp9\tp4\n").unwrap();
        let ts = read_triples(&path).unwrap();
        assert_eq!(
            ts,
            vec![TrainingTriple {
                query_id: "q1".into(),
                pos_id: "p9".into(),
                neg_id: "p4".into()
            }]
        );

        std::fs::write(&path, "q1\tp9\n").unwrap();
        let err = read_triples(&path).unwrap_err();
        assert!(err.to_string().contains(":1:"), "line number in {err}");

        std::fs::write(&path, "q1\tp9\tp9\n").unwrap();
        assert!(read_triples(&path).is_err(), "pos == neg must be rejected");
    }

    #[test]
    fn teacher_score_format_contract() {
        let dir = tmp();
        let path = dir.path().join("scores.tsv");
        let rec = TeacherScoreRecord {
            pos_score: 12.5,
            neg_score: -3.25,
            ids: Some(("q1".into(), "p9".into(), "p4".into())),
        };
        write_teacher_scores(&path, &[rec]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "12.500000\t-3.250000\tq1\tp9\tp4\n");

        // Tolerant of extra trailing columns.
        std::fs::write(&path, "1.000000\t0.500000\tq1\tp9\tp4\textra\tstuff\n").unwrap();
        let recs = read_teacher_scores(&path).unwrap();
        assert_eq!(recs[0].pos_score, 1.0);
        assert_eq!(recs[0].ids.as_ref().unwrap().0, "q1");

        // Non-numeric scores rejected with position.
        std::fs::write(&path, "1.0\tbad\tq\tp\tn\n").unwrap();
        assert!(read_teacher_scores(&path).is_err());
    }

    #[test]
    fn teacher_score_alignment_detection() {
        let triples = vec![
            TrainingTriple {
                query_id: "q1".into(),
                pos_id: "p1".into(),
                neg_id: "p2".into(),
            },
            TrainingTriple {
                query_id: "q2".into(),
                pos_id: "p3".into(),
                neg_id: "p4".into(),
            },
        ];
        let ok = vec![
            TeacherScoreRecord {
                pos_score: 1.0,
                neg_score: 0.0,
                ids: Some(("q1".into(), "p1".into(), "p2".into())),
            },
            TeacherScoreRecord {
                pos_score: 2.0,
                neg_score: 0.5,
                ids: None,
            },
        ];
        align_teacher_scores(&ok, &triples).unwrap();

        let shuffled = vec![ok[1].clone(), ok[0].clone()];
        assert!(align_teacher_scores(&shuffled, &triples).is_err());
        assert!(align_teacher_scores(&ok[..1], &triples).is_err());
    }

    #[test]
    fn qrels_parse_and_binarize() {
        let dir = tmp();
        let path = dir.path().join("qrels.txt");
        std::fs::write(&path, "7 0 p3 2\n7 0 p4 1\n8 0 p1 0\n").unwrap();
        let qrels = read_qrels(&path).unwrap();
        assert_eq!(qrels.grade("7", "p3"), 2);
        assert_eq!(qrels.grade("7", "p9"), 0);

        let bin = qrels.binarize(2);
        assert_eq!(bin.grade("7", "p3"), 1);
        assert_eq!(bin.grade("7", "p4"), 0);
        // Threshold 1: any positive grade is relevant.
        let bin1 = qrels.binarize(1);
        assert_eq!(bin1.grade("7", "p4"), 1);
        assert_eq!(bin1.grade("8", "p1"), 0);
    }

    #[test]
    fn run_ties_break_by_passage_id() {
        let mut run = RunFile::default();
        run.per_query
            .insert("q1".into(), vec![("pb".into(), 1.0), ("pa".into(), 1.0), ("pc".into(), 2.0)]);
        let dir = tmp();
        let path = dir.path().join("run.trec");
        write_run(&path, &run, "toy").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "q1 Q0 pc 1 2.000000 toy");
        assert_eq!(lines[1], "q1 Q0 pa 2 1.000000 toy");
        assert_eq!(lines[2], "q1 Q0 pb 3 1.000000 toy");
    }

    #[test]
    fn run_duplicate_passage_rejected() {
        let dir = tmp();
        let path = dir.path().join("run.trec");
        std::fs::write(&path, "q1 Q0 p1 1 2.0 t\nq1 Q0 p1 2 1.0 t\n").unwrap();
        assert!(read_run(&path).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        /// Triples and teacher-score files round-trip losslessly; scores
        /// survive exactly at 6-decimal precision.
        #[test]
        fn triples_and_scores_round_trip(
            raw in proptest::collection::vec((0u32..500, 0u32..500, 0u32..500), 1..60)
        ) {
            let triples: Vec<TrainingTriple> = raw.iter().map(|(q, p, n)| TrainingTriple {
                query_id: format!("q{q}"),
                pos_id: format!("p{p}"),
                neg_id: format!("n{n}"),
            }).collect();
            let dir = tmp();
            let tpath = dir.path().join("t.tsv");
            write_triples(&tpath, &triples).unwrap();
            prop_assert_eq!(read_triples(&tpath).unwrap(), triples.clone());

            let records: Vec<TeacherScoreRecord> = triples.iter().enumerate().map(|(i, t)| {
                let pos = ((i as f64) * 0.731 - 3.0) * 7.0;
                let pos = (pos * 1e6).round() / 1e6; // already at 6-decimal precision
                TeacherScoreRecord {
                    pos_score: pos,
                    neg_score: -pos / 3.0 + 0.125,
                    ids: Some((t.query_id.clone(), t.pos_id.clone(), t.neg_id.clone())),
                }
            }).collect();
            let spath = dir.path().join("s.tsv");
            write_teacher_scores(&spath, &records).unwrap();
            let back = read_teacher_scores(&spath).unwrap();
            align_teacher_scores(&back, &triples).unwrap();
            for (a, b) in records.iter().zip(&back) {
                prop_assert!((a.pos_score - b.pos_score).abs() <= 5e-7);
                prop_assert!((a.neg_score - b.neg_score).abs() <= 5e-7);
                // Values already at 6 decimals round-trip exactly.
                prop_assert_eq!(a.pos_score, b.pos_score);
            }
        }

        /// Run files preserve ordering through a write/read cycle.
        #[test]
        fn run_round_trip_preserves_order(
            scores in proptest::collection::vec(-100i64..100, 2..30)
        ) {
            let mut run = RunFile::default();
            let list: Vec<(String, f64)> = scores.iter().enumerate()
                .map(|(i, &s)| (format!("p{i:03}"), s as f64 / 7.0)).collect();
            run.per_query.insert("q0".into(), list);
            run.canonicalize();
            let dir = tmp();
            let path = dir.path().join("r.trec");
            write_run(&path, &run, "tag").unwrap();
            let (back, tag) = read_run(&path).unwrap();
            prop_assert_eq!(tag, "tag");
            let a: Vec<&String> = run.per_query["q0"].iter().map(|(p, _)| p).collect();
            let b: Vec<&String> = back.per_query["q0"].iter().map(|(p, _)| p).collect();
            prop_assert_eq!(a, b);
        }

        /// Qrels round-trip.
        #[test]
        fn qrels_round_trip(entries in proptest::collection::vec((0u32..40, 0u32..80, 0u32..4), 1..100)) {
            let mut qrels = Qrels::default();
            for (q, p, g) in &entries {
                qrels.insert(format!("q{q}"), format!("p{p}"), *g);
            }
            let dir = tmp();
            let path = dir.path().join("q.txt");
            write_qrels(&path, &qrels).unwrap();
            prop_assert_eq!(read_qrels(&path).unwrap(), qrels);
        }
    }
}
