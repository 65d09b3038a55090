//! Three-step distillation workflow: train a teacher, freeze its scores
//! into a file, train students against those scores — plus reranking and
//! early stopping.
//!
//! Batch members are scored on independent graphs (fanned out across
//! threads) and their per-pair gradients reduced in index order, so runs
//! are bit-reproducible regardless of thread count. The loss path sees
//! triples and teacher scores only; qrels enter nowhere but validation.

pub mod adam;
pub mod checkpoint;
pub mod log;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use thiserror::Error;

use crate::autodiff::{Graph, TapeError};
use crate::data::formats::{
    align_teacher_scores, CandidateSet, Collection, DataError, Qrels, RunFile, TeacherScoreRecord,
    TrainingTriple,
};
use crate::encoder::vocab::{
    tokenize, TokenId, VocabError, Vocabulary, PASSAGE_TOKEN_CAP, QUERY_TOKEN_CAP,
};
use crate::eval::metrics::{MetricConfig, MetricReport};
use crate::losses::{pair_term_on_graph, LossError, LossKind};
use crate::params::GradSet;
use crate::scorers::{CacheEntry, Model, ScoreError, ScorerKind};

pub use adam::Adam;
pub use checkpoint::{hash_bytes, Checkpoint, CheckpointError};
pub use log::{read_train_log, LogRecord, TrainLog, LOG_HEADER};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("batch_size must be >= 1")]
    BadBatch,
    #[error("learning_rate must be > 0")]
    BadLearningRate,
    #[error("loss {0} requires teacher scores but none were provided")]
    MissingTeacher(LossKind),
    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },
    #[error("triple references unknown query id {0}")]
    UnknownQuery(String),
    #[error("triple references unknown passage id {0}")]
    UnknownPassage(String),
    #[error("ensemble inputs misaligned: {0}")]
    EnsembleMisaligned(String),
    #[error("ensemble needs at least one score file")]
    EmptyEnsemble,
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Optimization and early-stopping settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Validate every this many steps.
    pub validation_interval: usize,
    /// Stop after this many validations without a new best nDCG@10.
    pub early_stop_patience: usize,
    /// Batch shuffling seed.
    pub seed: u64,
    pub loss: LossKind,
    /// Log cadence for loss/accuracy/score-mean records.
    pub log_interval: usize,
}

impl TrainConfig {
    /// Published defaults: 7e-6 for encoder-based models, 1e-5 for TK,
    /// batch 32, validation every 500 steps with patience 10.
    pub fn default_for(kind: ScorerKind) -> Self {
        TrainConfig {
            learning_rate: if matches!(kind, ScorerKind::Tk) { 1e-5 } else { 7e-6 },
            batch_size: 32,
            max_steps: 5000,
            validation_interval: 500,
            early_stop_patience: 10,
            seed: 42,
            loss: LossKind::RanknetBinary,
            log_interval: 50,
        }
    }

    fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::BadBatch);
        }
        if self.learning_rate <= 0.0 {
            return Err(TrainError::BadLearningRate);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TokenizedTriple {
    pub q: Vec<TokenId>,
    pub pos: Vec<TokenId>,
    pub neg: Vec<TokenId>,
}

/// Everything a training run consumes, tokenized once up front.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub triples: Vec<TokenizedTriple>,
    /// (pos, neg) teacher scores aligned with `triples`.
    pub teacher: Option<Vec<(f64, f64)>>,
    pub val_candidates: CandidateSet,
    pub val_qrels: Qrels,
    pub metric: MetricConfig,
    pub query_tokens: BTreeMap<String, Vec<TokenId>>,
    pub passage_tokens: BTreeMap<String, Vec<TokenId>>,
}

pub fn tokenize_collection(
    collection: &Collection,
    vocab: &Vocabulary,
    cap: usize,
) -> Result<BTreeMap<String, Vec<TokenId>>, VocabError> {
    let mut out = BTreeMap::new();
    for (id, text) in collection {
        out.insert(id.clone(), tokenize(text, vocab, cap)?.ids);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn prepare_train_data(
    triples: &[TrainingTriple],
    teacher: Option<&[TeacherScoreRecord]>,
    queries: &Collection,
    passages: &Collection,
    vocab: &Vocabulary,
    val_candidates: CandidateSet,
    val_qrels: Qrels,
    metric: MetricConfig,
) -> Result<TrainData, TrainError> {
    if let Some(records) = teacher {
        align_teacher_scores(records, triples).map_err(TrainError::Data)?;
    }
    let query_tokens = tokenize_collection(queries, vocab, QUERY_TOKEN_CAP)?;
    let passage_tokens = tokenize_collection(passages, vocab, PASSAGE_TOKEN_CAP)?;
    let mut tokenized = Vec::with_capacity(triples.len());
    for t in triples {
        let q = query_tokens
            .get(&t.query_id)
            .ok_or_else(|| TrainError::UnknownQuery(t.query_id.clone()))?;
        let pos = passage_tokens
            .get(&t.pos_id)
            .ok_or_else(|| TrainError::UnknownPassage(t.pos_id.clone()))?;
        let neg = passage_tokens
            .get(&t.neg_id)
            .ok_or_else(|| TrainError::UnknownPassage(t.neg_id.clone()))?;
        tokenized.push(TokenizedTriple {
            q: q.clone(),
            pos: pos.clone(),
            neg: neg.clone(),
        });
    }
    Ok(TrainData {
        triples: tokenized,
        teacher: teacher.map(|r| r.iter().map(|s| (s.pos_score, s.neg_score)).collect()),
        val_candidates,
        val_qrels,
        metric,
        query_tokens,
        passage_tokens,
    })
}

struct MemberOut {
    term: f64,
    pos: f64,
    neg: f64,
    grads: GradSet<f64>,
}

fn run_batch(
    model: &Model<f64>,
    members: &[(usize, &TokenizedTriple)],
    loss: LossKind,
    teacher: Option<&Vec<(f64, f64)>>,
) -> Result<(f64, f64, f64, f64, GradSet<f64>), TrainError> {
    let outs: Result<Vec<MemberOut>, TrainError> = members
        .par_iter()
        .map(|&(idx, triple)| {
            let mut g: Graph<f64> = Graph::new();
            let bound = model.params().bind(&mut g, true)?;
            let s_pos = model.score_on_graph(&mut g, &bound, &triple.q, &triple.pos)?;
            let s_neg = model.score_on_graph(&mut g, &bound, &triple.q, &triple.neg)?;
            let t = teacher.map(|v| v[idx]);
            let term = pair_term_on_graph(&mut g, loss, s_pos, s_neg, t)?;
            g.backward(term)?;
            Ok(MemberOut {
                term: g.value(term).first(),
                pos: g.value(s_pos).first(),
                neg: g.value(s_neg).first(),
                grads: GradSet::from_graph(&g, &bound),
            })
        })
        .collect();
    let outs = outs?;

    let b = outs.len();
    let inv_b = 1.0 / b as f64;
    let mut grads = GradSet::zeros_like(model.params());
    let mut term_sum = 0.0;
    let mut pos_sum = 0.0;
    let mut neg_sum = 0.0;
    let mut correct = 0usize;
    for o in &outs {
        grads.add_assign(&o.grads);
        term_sum += o.term;
        pos_sum += o.pos;
        neg_sum += o.neg;
        if o.pos > o.neg {
            correct += 1;
        }
    }
    grads.scale(inv_b);
    Ok((
        term_sum * inv_b,
        correct as f64 * inv_b,
        pos_sum * inv_b,
        neg_sum * inv_b,
        grads,
    ))
}

/// Outcome of a training run: the best-validation checkpoint plus where
/// training actually stopped.
#[derive(Debug)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub final_step: usize,
    pub stopped_early: bool,
}

/// Run the optimization loop with periodic validation and early stopping
/// on the best validation nDCG@10 (ties keep the earliest step).
pub fn train(
    model: &mut Model<f64>,
    data: &TrainData,
    cfg: &TrainConfig,
    log: &mut TrainLog,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if cfg.loss.needs_teacher() && data.teacher.is_none() {
        return Err(TrainError::MissingTeacher(cfg.loss));
    }
    if data.triples.is_empty() {
        return Err(TrainError::BadBatch);
    }
    let config_hash = hash_bytes(format!("{:?}|{:?}", model.config(), cfg).as_bytes());
    let snapshot = |model: &Model<f64>, step: usize, val: f64| Checkpoint {
        params: model.params().clone(),
        step,
        val_ndcg: val,
        config_hash,
    };

    if cfg.max_steps == 0 {
        let val = validate(model, data)?;
        return Ok(TrainOutcome {
            best: snapshot(model, 0, val),
            final_step: 0,
            stopped_early: false,
        });
    }

    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut shuffle_rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.triples.len()).collect();
    order.shuffle(&mut shuffle_rng);
    let mut cursor = 0usize;

    let mut adam = Adam::new(model.params(), cfg.learning_rate);
    let mut best: Option<Checkpoint> = None;
    let mut intervals_since_best = 0usize;
    let mut stopped_early = false;
    let mut final_step = 0usize;

    // Means accumulated since the last log record.
    let mut acc_loss = 0.0;
    let mut acc_acc = 0.0;
    let mut acc_pos = 0.0;
    let mut acc_neg = 0.0;
    let mut acc_n = 0usize;

    for step in 1..=cfg.max_steps {
        final_step = step;
        let mut members = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut shuffle_rng);
                cursor = 0;
            }
            let idx = order[cursor];
            cursor += 1;
            members.push((idx, &data.triples[idx]));
        }
        let (loss, acc, mean_pos, mean_neg, grads) =
            run_batch(model, &members, cfg.loss, data.teacher.as_ref())?;
        if !loss.is_finite() {
            return Err(TrainError::Divergence { step, loss });
        }
        adam.step(model.params_mut(), &grads);

        acc_loss += loss;
        acc_acc += acc;
        acc_pos += mean_pos;
        acc_neg += mean_neg;
        acc_n += 1;

        let validate_now = step % cfg.validation_interval == 0 || step == cfg.max_steps;
        let log_now = step % cfg.log_interval == 0 || validate_now || step == 1;
        let mut val_value = None;
        if validate_now {
            let v = validate(model, data)?;
            val_value = Some(v);
            match &best {
                Some(b) if v <= b.val_ndcg => {
                    intervals_since_best += 1;
                }
                _ => {
                    best = Some(snapshot(model, step, v));
                    intervals_since_best = 0;
                }
            }
        }
        if log_now && acc_n > 0 {
            let inv = 1.0 / acc_n as f64;
            log.append(LogRecord {
                step,
                loss: acc_loss * inv,
                pairwise_acc: acc_acc * inv,
                margin_mean_pos: acc_pos * inv,
                margin_mean_neg: acc_neg * inv,
                val_ndcg10: val_value,
            })?;
            acc_loss = 0.0;
            acc_acc = 0.0;
            acc_pos = 0.0;
            acc_neg = 0.0;
            acc_n = 0;
        }
        if validate_now && intervals_since_best >= cfg.early_stop_patience {
            stopped_early = true;
            break;
        }
    }

    let best = best.expect("at least one validation ran");
    Ok(TrainOutcome {
        best,
        final_step,
        stopped_early,
    })
}

fn validate(model: &Model<f64>, data: &TrainData) -> Result<f64, TrainError> {
    let run = rerank(model, &data.val_candidates, &data.query_tokens, &data.passage_tokens)?;
    let report = MetricReport::compute(&run, &data.val_qrels, &data.metric);
    Ok(report.mean_ndcg)
}

/// Score every triple with frozen parameters, one record per triple in
/// input order.
pub fn generate_teacher_scores(
    model: &Model<f64>,
    triples: &[TrainingTriple],
    query_tokens: &BTreeMap<String, Vec<TokenId>>,
    passage_tokens: &BTreeMap<String, Vec<TokenId>>,
) -> Result<Vec<TeacherScoreRecord>, TrainError> {
    let records: Result<Vec<Vec<TeacherScoreRecord>>, TrainError> = triples
        .par_chunks(32)
        .map(|chunk| {
            let mut session = model.session()?;
            let mut out = Vec::with_capacity(chunk.len());
            for t in chunk {
                let q = query_tokens
                    .get(&t.query_id)
                    .ok_or_else(|| TrainError::UnknownQuery(t.query_id.clone()))?;
                let pos = passage_tokens
                    .get(&t.pos_id)
                    .ok_or_else(|| TrainError::UnknownPassage(t.pos_id.clone()))?;
                let neg = passage_tokens
                    .get(&t.neg_id)
                    .ok_or_else(|| TrainError::UnknownPassage(t.neg_id.clone()))?;
                out.push(TeacherScoreRecord {
                    pos_score: session.score_pair(q, pos)?,
                    neg_score: session.score_pair(q, neg)?,
                    ids: Some((t.query_id.clone(), t.pos_id.clone(), t.neg_id.clone())),
                });
            }
            Ok(out)
        })
        .collect();
    Ok(records?.into_iter().flatten().collect())
}

/// Average aligned teacher-score files element-wise (positive and
/// negative sides independently).
pub fn ensemble_scores(
    files: &[Vec<TeacherScoreRecord>],
) -> Result<Vec<TeacherScoreRecord>, TrainError> {
    let Some(first) = files.first() else {
        return Err(TrainError::EmptyEnsemble);
    };
    for (fi, f) in files.iter().enumerate() {
        if f.len() != first.len() {
            return Err(TrainError::EnsembleMisaligned(format!(
                "file 0 has {} records, file {fi} has {}",
                first.len(),
                f.len()
            )));
        }
        for (i, (a, b)) in first.iter().zip(f).enumerate() {
            if let (Some(x), Some(y)) = (&a.ids, &b.ids) {
                if x != y {
                    return Err(TrainError::EnsembleMisaligned(format!(
                        "line {}: ids {x:?} vs {y:?}",
                        i + 1
                    )));
                }
            }
        }
    }
    let k = files.len() as f64;
    let mut out = Vec::with_capacity(first.len());
    for i in 0..first.len() {
        let mut pos = 0.0;
        let mut neg = 0.0;
        for f in files {
            pos += f[i].pos_score;
            neg += f[i].neg_score;
        }
        out.push(TeacherScoreRecord {
            pos_score: pos / k,
            neg_score: neg / k,
            ids: first[i].ids.clone(),
        });
    }
    Ok(out)
}

/// Rerank candidate lists with frozen parameters: per-query descending
/// score with ties broken by passage id ascending.
pub fn rerank(
    model: &Model<f64>,
    candidates: &CandidateSet,
    query_tokens: &BTreeMap<String, Vec<TokenId>>,
    passage_tokens: &BTreeMap<String, Vec<TokenId>>,
) -> Result<RunFile, TrainError> {
    // Validate ids and dedup candidate lists up front.
    let mut lists: Vec<(&String, Vec<&String>)> = Vec::with_capacity(candidates.per_query.len());
    for (qid, pids) in &candidates.per_query {
        if !query_tokens.contains_key(qid) {
            return Err(TrainError::UnknownQuery(qid.clone()));
        }
        let mut seen = BTreeSet::new();
        let mut list = Vec::with_capacity(pids.len());
        for p in pids {
            if !passage_tokens.contains_key(p) {
                return Err(TrainError::UnknownPassage(p.clone()));
            }
            if seen.insert(p) {
                list.push(p);
            }
        }
        lists.push((qid, list));
    }

    let mut run = RunFile::default();
    if model.kind().supports_cache() {
        // Shared passage-entry memo, built in deterministic chunks.
        let distinct: Vec<&String> = {
            let mut set = BTreeSet::new();
            for (_, pids) in &lists {
                for &p in pids {
                    set.insert(p);
                }
            }
            set.into_iter().collect()
        };
        let chunks: Result<Vec<Vec<(&String, CacheEntry<f64>)>>, TrainError> = distinct
            .par_chunks(64)
            .map(|chunk| {
                let mut session = model.session()?;
                let mut out = Vec::with_capacity(chunk.len());
                for &pid in chunk {
                    let entry = session.build_cache_entry(0, &passage_tokens[pid])?;
                    out.push((pid, entry));
                }
                Ok(out)
            })
            .collect();
        let memo: BTreeMap<&String, CacheEntry<f64>> =
            chunks?.into_iter().flatten().collect();

        let scored: Result<Vec<(String, Vec<(String, f64)>)>, TrainError> = lists
            .par_iter()
            .map(|(qid, pids)| {
                let mut session = model.session()?;
                let qr = session.prepare_query(&query_tokens[*qid])?;
                let mut out = Vec::with_capacity(pids.len());
                for &p in pids {
                    let s = session.score_cached(&qr, &memo[p])?;
                    out.push((p.clone(), s));
                }
                Ok(((*qid).clone(), out))
            })
            .collect();
        for (qid, list) in scored? {
            run.per_query.insert(qid, list);
        }
    } else {
        let scored: Result<Vec<(String, Vec<(String, f64)>)>, TrainError> = lists
            .par_iter()
            .map(|(qid, pids)| {
                let mut session = model.session()?;
                let q = &query_tokens[*qid];
                let mut out = Vec::with_capacity(pids.len());
                for &p in pids {
                    out.push((p.clone(), session.score_pair(q, &passage_tokens[p])?));
                }
                Ok(((*qid).clone(), out))
            })
            .collect();
        for (qid, list) in scored? {
            run.per_query.insert(qid, list);
        }
    }
    run.canonicalize();
    Ok(run)
}

#[cfg(test)]
mod tests;
