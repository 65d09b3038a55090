//! Seeded latent-topic corpus generator: a desk-scale stand-in for a
//! large passage collection.
//!
//! Every query and passage samples a topic. A passage carries a graded
//! "quality" in {1, 2, 3} that controls how densely it uses its topic's
//! tokens, and every same-topic query grades it by that value; other
//! passages grade 0. Training triples pair a graded positive with a
//! negative drawn uniformly from the whole collection, so a negative can
//! accidentally be relevant, mirroring sampled-negative training data.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::encoder::vocab::{Vocabulary, SPECIAL_TOKENS};

use super::formats::{
    write_candidates, write_collection, write_qrels, write_triples, CandidateSet, Collection,
    DataError, Qrels, TrainingTriple,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("vocab size {vocab} too small: need at least {need} regular tokens")]
    VocabTooSmall { vocab: usize, need: usize },
    #[error("all sizes must be >= 1 (got {0})")]
    ZeroSize(&'static str),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Vocab(#[from] crate::encoder::vocab::VocabError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_passages: usize,
    pub n_train_queries: usize,
    pub n_val_queries: usize,
    pub n_eval_queries: usize,
    /// Total vocabulary size including the five special tokens.
    pub vocab_size: usize,
    pub n_topics: usize,
    pub tokens_per_topic: usize,
    pub passage_len: (usize, usize),
    pub query_len: (usize, usize),
    pub triples_per_query: usize,
    pub candidates_per_query: usize,
    /// How many of each candidate list come from the query's topic.
    pub graded_candidates: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            n_passages: 5000,
            n_train_queries: 500,
            n_val_queries: 30,
            n_eval_queries: 50,
            vocab_size: 5000,
            n_topics: 100,
            tokens_per_topic: 30,
            passage_len: (8, 14),
            query_len: (3, 5),
            triples_per_query: 8,
            candidates_per_query: 50,
            graded_candidates: 25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub vocab: Vocabulary,
    pub passages: Collection,
    pub queries: Collection,
    pub train_queries: Vec<String>,
    pub val_queries: Vec<String>,
    pub eval_queries: Vec<String>,
    pub triples: Vec<TrainingTriple>,
    pub qrels: Qrels,
    pub val_candidates: CandidateSet,
    pub eval_candidates: CandidateSet,
}

/// File names produced by [`SynthCorpus::write_all`].
#[derive(Debug, Clone)]
pub struct CorpusPaths {
    pub vocab: PathBuf,
    pub passages: PathBuf,
    pub queries: PathBuf,
    pub triples: PathBuf,
    pub qrels: PathBuf,
    pub val_candidates: PathBuf,
    pub eval_candidates: PathBuf,
    pub train_query_ids: PathBuf,
}

impl CorpusPaths {
    pub fn in_dir(dir: &Path) -> Self {
        CorpusPaths {
            vocab: dir.join("vocab.txt"),
            passages: dir.join("collection.tsv"),
            queries: dir.join("queries.tsv"),
            triples: dir.join("triples.tsv"),
            qrels: dir.join("qrels.txt"),
            val_candidates: dir.join("candidates_val.tsv"),
            eval_candidates: dir.join("candidates_eval.tsv"),
            train_query_ids: dir.join("queries_train.txt"),
        }
    }
}

struct PassageInfo {
    id: String,
    topic: usize,
    grade: u32,
}

/// Fully determined by the seed: same config, byte-identical output.
pub fn generate_synthetic_corpus(cfg: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    for (name, v) in [
        ("n_passages", cfg.n_passages),
        ("n_train_queries", cfg.n_train_queries),
        ("n_eval_queries", cfg.n_eval_queries),
        ("n_topics", cfg.n_topics),
        ("tokens_per_topic", cfg.tokens_per_topic),
        ("triples_per_query", cfg.triples_per_query),
        ("candidates_per_query", cfg.candidates_per_query),
        ("passage_len", cfg.passage_len.0),
        ("query_len", cfg.query_len.0),
    ] {
        if v == 0 {
            return Err(SynthError::ZeroSize(name));
        }
    }
    let n_regular = cfg.vocab_size.saturating_sub(SPECIAL_TOKENS.len());
    if n_regular < cfg.tokens_per_topic {
        return Err(SynthError::VocabTooSmall {
            vocab: cfg.vocab_size,
            need: cfg.tokens_per_topic,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tokens: Vec<String> = (0..n_regular).map(|i| format!("t{i:05}")).collect();
    let vocab = Vocabulary::new(tokens.clone())?;

    // Topic models: each topic owns a sampled token subset.
    let mut topics: Vec<Vec<usize>> = Vec::with_capacity(cfg.n_topics);
    for _ in 0..cfg.n_topics {
        let mut set = BTreeSet::new();
        while set.len() < cfg.tokens_per_topic {
            set.insert(rng.gen_range(0..n_regular));
        }
        topics.push(set.into_iter().collect());
    }

    // Passages: topic + graded quality; quality controls topical density.
    let mut passages = Collection::new();
    let mut infos: Vec<PassageInfo> = Vec::with_capacity(cfg.n_passages);
    let width = digits(cfg.n_passages);
    for i in 0..cfg.n_passages {
        let topic = rng.gen_range(0..cfg.n_topics);
        let grade = rng.gen_range(1..=3u32);
        let strength = 0.35 + 0.15 * grade as f64;
        let len = rng.gen_range(cfg.passage_len.0..=cfg.passage_len.1.max(cfg.passage_len.0));
        let mut words = Vec::with_capacity(len);
        for _ in 0..len {
            let tok = if rng.gen_bool(strength) {
                topics[topic][rng.gen_range(0..topics[topic].len())]
            } else {
                rng.gen_range(0..n_regular)
            };
            words.push(tokens[tok].as_str());
        }
        let id = format!("p{i:0width$}");
        passages.insert(id.clone(), words.join(" "));
        infos.push(PassageInfo { id, topic, grade });
    }

    // Topics that actually own passages (queries must be answerable).
    let mut by_topic: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_topics];
    for (idx, info) in infos.iter().enumerate() {
        by_topic[info.topic].push(idx);
    }
    let populated: Vec<usize> = (0..cfg.n_topics).filter(|&t| !by_topic[t].is_empty()).collect();

    // Queries: train, then validation, then eval.
    let total_queries = cfg.n_train_queries + cfg.n_val_queries + cfg.n_eval_queries;
    let qwidth = digits(total_queries);
    let mut queries = Collection::new();
    let mut query_ids = Vec::with_capacity(total_queries);
    let mut query_topics = Vec::with_capacity(total_queries);
    for i in 0..total_queries {
        let topic = populated[rng.gen_range(0..populated.len())];
        let len = rng.gen_range(cfg.query_len.0..=cfg.query_len.1.max(cfg.query_len.0));
        let mut words = Vec::with_capacity(len);
        for _ in 0..len {
            let tok = if rng.gen_bool(0.9) {
                topics[topic][rng.gen_range(0..topics[topic].len())]
            } else {
                rng.gen_range(0..n_regular)
            };
            words.push(tokens[tok].as_str());
        }
        let id = format!("q{i:0qwidth$}");
        queries.insert(id.clone(), words.join(" "));
        query_ids.push(id);
        query_topics.push(topic);
    }
    let train_queries = query_ids[..cfg.n_train_queries].to_vec();
    let val_queries =
        query_ids[cfg.n_train_queries..cfg.n_train_queries + cfg.n_val_queries].to_vec();
    let eval_queries = query_ids[cfg.n_train_queries + cfg.n_val_queries..].to_vec();

    // Qrels: same-topic passages carry their grade, everything else 0.
    let mut qrels = Qrels::default();
    for (qi, qid) in query_ids.iter().enumerate() {
        for &pidx in &by_topic[query_topics[qi]] {
            qrels.insert(qid.clone(), infos[pidx].id.clone(), infos[pidx].grade);
        }
    }

    // Triples: graded positive + uniformly random negative.
    let mut triples = Vec::with_capacity(cfg.n_train_queries * cfg.triples_per_query);
    for (qi, qid) in train_queries.iter().enumerate() {
        let topic_passages = &by_topic[query_topics[qi]];
        for _ in 0..cfg.triples_per_query {
            let pos = topic_passages[rng.gen_range(0..topic_passages.len())];
            let neg = loop {
                let cand = rng.gen_range(0..cfg.n_passages);
                if cand != pos {
                    break cand;
                }
            };
            triples.push(TrainingTriple {
                query_id: qid.clone(),
                pos_id: infos[pos].id.clone(),
                neg_id: infos[neg].id.clone(),
            });
        }
    }

    // Candidate lists for validation and eval queries: a graded slice of
    // the query's topic plus random fillers, deterministically shuffled.
    let build_candidates = |rng: &mut ChaCha8Rng, ids: &[String]| -> CandidateSet {
        let mut out = CandidateSet::default();
        for qid in ids {
            let qi = query_ids.iter().position(|q| q == qid).expect("known query");
            let mut picked = BTreeSet::new();
            let mut topic_pool = by_topic[query_topics[qi]].clone();
            topic_pool.shuffle(rng);
            for &pidx in topic_pool.iter().take(cfg.graded_candidates) {
                picked.insert(pidx);
            }
            while picked.len() < cfg.candidates_per_query.min(cfg.n_passages) {
                picked.insert(rng.gen_range(0..cfg.n_passages));
            }
            let mut list: Vec<usize> = picked.into_iter().collect();
            list.shuffle(rng);
            out.per_query.insert(
                qid.clone(),
                list.into_iter().map(|p| infos[p].id.clone()).collect(),
            );
        }
        out
    };
    let val_candidates = build_candidates(&mut rng, &val_queries);
    let eval_candidates = build_candidates(&mut rng, &eval_queries);

    Ok(SynthCorpus {
        vocab,
        passages,
        queries,
        train_queries,
        val_queries,
        eval_queries,
        triples,
        qrels,
        val_candidates,
        eval_candidates,
    })
}

fn digits(n: usize) -> usize {
    (n.max(1) as f64).log10().floor() as usize + 1
}

impl SynthCorpus {
    pub fn write_all(&self, dir: &Path) -> Result<CorpusPaths, SynthError> {
        fs::create_dir_all(dir).map_err(DataError::Io)?;
        let paths = CorpusPaths::in_dir(dir);
        self.vocab.write_file(&paths.vocab)?;
        write_collection(&paths.passages, &self.passages)?;
        write_collection(&paths.queries, &self.queries)?;
        write_triples(&paths.triples, &self.triples)?;
        write_qrels(&paths.qrels, &self.qrels)?;
        write_candidates(&paths.val_candidates, &self.val_candidates)?;
        write_candidates(&paths.eval_candidates, &self.eval_candidates)?;
        let mut w = fs::File::create(&paths.train_query_ids).map_err(DataError::Io)?;
        for q in &self.train_queries {
            writeln!(w, "{q}").map_err(DataError::Io)?;
        }
        Ok(paths)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            seed: 11,
            n_passages: 400,
            n_train_queries: 40,
            n_val_queries: 5,
            n_eval_queries: 10,
            vocab_size: 300,
            n_topics: 20,
            tokens_per_topic: 12,
            passage_len: (6, 10),
            query_len: (2, 4),
            triples_per_query: 4,
            candidates_per_query: 20,
            graded_candidates: 10,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_gives_byte_identical_files() {
        let cfg = small_cfg();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate_synthetic_corpus(&cfg).unwrap().write_all(d1.path()).unwrap();
        generate_synthetic_corpus(&cfg).unwrap().write_all(d2.path()).unwrap();
        for name in [
            "vocab.txt",
            "collection.tsv",
            "queries.tsv",
            "triples.tsv",
            "qrels.txt",
            "candidates_val.tsv",
            "candidates_eval.tsv",
        ] {
            let a = std::fs::read(d1.path().join(name)).unwrap();
            let b = std::fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identically-seeded runs");
        }
    }

    #[test]
    fn every_triple_positive_is_graded_relevant() {
        let corpus = generate_synthetic_corpus(&small_cfg()).unwrap();
        assert!(!corpus.triples.is_empty());
        for t in &corpus.triples {
            assert!(
                corpus.qrels.grade(&t.query_id, &t.pos_id) >= 1,
                "triple positive {} has grade 0 for {}",
                t.pos_id,
                t.query_id
            );
            assert_ne!(t.pos_id, t.neg_id);
        }
    }

    #[test]
    fn relevant_fraction_tracks_topic_share() {
        let corpus = generate_synthetic_corpus(&small_cfg()).unwrap();
        let cfg = small_cfg();
        let expected = 1.0 / cfg.n_topics as f64;
        let mut total_fraction = 0.0;
        let mut count = 0usize;
        for docs in corpus.qrels.grades.values() {
            total_fraction += docs.len() as f64 / cfg.n_passages as f64;
            count += 1;
        }
        let mean = total_fraction / count as f64;
        // Binomial noise: with ~400 passages per topic draw, the mean
        // across ~55 queries sits well within half an order of magnitude.
        assert!(
            mean > expected * 0.5 && mean < expected * 2.0,
            "mean relevant fraction {mean} vs topic share {expected}"
        );
    }

    #[test]
    fn candidate_lists_have_requested_size_and_contain_graded() {
        let cfg = small_cfg();
        let corpus = generate_synthetic_corpus(&cfg).unwrap();
        assert_eq!(corpus.eval_candidates.per_query.len(), cfg.n_eval_queries);
        for (q, list) in &corpus.eval_candidates.per_query {
            assert_eq!(list.len(), cfg.candidates_per_query);
            let graded = list.iter().filter(|p| corpus.qrels.grade(q, p) >= 1).count();
            assert!(graded >= 1, "query {q} has no graded candidates");
        }
    }

    #[test]
    fn vocab_too_small_is_reported() {
        let cfg = SynthConfig {
            vocab_size: 10,
            tokens_per_topic: 30,
            ..small_cfg()
        };
        assert!(matches!(
            generate_synthetic_corpus(&cfg),
            Err(SynthError::VocabTooSmall { .. })
        ));
    }

    #[test]
    fn corpus_tokenizes_cleanly() {
        let corpus = generate_synthetic_corpus(&small_cfg()).unwrap();
        use crate::encoder::vocab::{tokenize, OOV, PASSAGE_TOKEN_CAP};
        for text in corpus.passages.values().take(50) {
            let seq = tokenize(text, &corpus.vocab, PASSAGE_TOKEN_CAP).unwrap();
            assert!(seq.ids.iter().all(|&id| id != OOV));
        }
    }
}
