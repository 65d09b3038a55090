//! File formats for training triples, teacher-score files, qrels, TREC
//! run files, and the synthetic corpus generator.
//!
//! All formats are plain UTF-8 text, byte-exact and deterministic:
//! writers iterate ordered structures only.

pub mod formats;
pub mod synth;

pub use formats::{
    read_candidates, read_collection, read_qrels, read_run, read_teacher_scores, read_triples,
    write_candidates, write_collection, write_qrels, write_run, write_teacher_scores,
    write_triples, CandidateSet, Collection, DataError, Qrels, RunFile, TeacherScoreRecord,
    TrainingTriple,
};
pub use synth::{generate_synthetic_corpus, SynthConfig, SynthCorpus};
