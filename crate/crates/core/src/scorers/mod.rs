//! The five ranking architectures, each mapping (query, passage) to one
//! unbounded scalar score.
//!
//! Passage-side work that does not depend on the query is exposed as a
//! cacheable representation ([`cache::CacheEntry`]):
//!
//! | kind    | cached representation                  | rows    |
//! |---------|----------------------------------------|---------|
//! | CAT     | none (joint encoding only)             | --      |
//! | DOT     | projected CLS vector                   | 1       |
//! | COLBERT | projected per-token matrix             | n       |
//! | PRETT   | layer-b activations of `[SEP; p]`      | n + 1   |
//! | TK      | embedding-layer output (token + pos)   | n       |
//!
//! Cached-path scores are bit-identical to fresh-path scores: both paths
//! run the same op sequence on the same values.

pub mod cache;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{math, Graph, TapeError, Tensor, Var};
use crate::encoder::vocab::{TokenId, CLS, MASK, PAD, SEP};
use crate::encoder::{contextualize_gated, EncoderConfig, EncoderError, EncoderStack};
use crate::params::{Bound, ParamId, ParamSet};
use crate::scalar::Scalar;

pub use cache::{CacheEntry, PassageCache};

/// Guard added inside the kernel-pooling logarithm so an underflowing
/// kernel-sum row cannot produce -inf.
pub const TK_LOG_EPS: f64 = 1e-10;

/// One of the five architecture configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScorerKind {
    Cat,
    Dot,
    Colbert,
    Prett,
    Tk,
}

impl ScorerKind {
    pub const ALL: [ScorerKind; 5] = [
        ScorerKind::Cat,
        ScorerKind::Dot,
        ScorerKind::Colbert,
        ScorerKind::Prett,
        ScorerKind::Tk,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScorerKind::Cat => "cat",
            ScorerKind::Dot => "dot",
            ScorerKind::Colbert => "colbert",
            ScorerKind::Prett => "prett",
            ScorerKind::Tk => "tk",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_lowercase().as_str() {
            "cat" => Some(ScorerKind::Cat),
            "dot" => Some(ScorerKind::Dot),
            "colbert" => Some(ScorerKind::Colbert),
            "prett" => Some(ScorerKind::Prett),
            "tk" => Some(ScorerKind::Tk),
            _ => None,
        }
    }

    pub(crate) fn code(&self) -> u8 {
        match self {
            ScorerKind::Cat => 0,
            ScorerKind::Dot => 1,
            ScorerKind::Colbert => 2,
            ScorerKind::Prett => 3,
            ScorerKind::Tk => 4,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(ScorerKind::Cat),
            1 => Some(ScorerKind::Dot),
            2 => Some(ScorerKind::Colbert),
            3 => Some(ScorerKind::Prett),
            4 => Some(ScorerKind::Tk),
            _ => None,
        }
    }

    /// Everything but CAT precomputes a passage representation.
    pub fn supports_cache(&self) -> bool {
        !matches!(self, ScorerKind::Cat)
    }
}

impl std::fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Gaussian kernel bank for kernel pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelConfig {
    /// Kernel centers, strictly increasing, within [-1, 1].
    pub centers: Vec<f64>,
    /// Shared kernel width, > 0.
    pub sigma: f64,
}

impl Default for KernelConfig {
    /// The established kernel-pooling bank: 11 kernels covering [-1, 1]
    /// with an exact-match kernel at 1.0, sigma 0.1.
    fn default() -> Self {
        KernelConfig {
            centers: vec![-0.9, -0.7, -0.5, -0.3, -0.1, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0],
            sigma: 0.1,
        }
    }
}

impl KernelConfig {
    pub fn count(&self) -> usize {
        self.centers.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.centers.is_empty() {
            return Err("kernel config needs at least one center".into());
        }
        if self.sigma <= 0.0 {
            return Err(format!("kernel sigma must be positive, got {}", self.sigma));
        }
        for w in self.centers.windows(2) {
            if w[0] >= w[1] {
                return Err(format!(
                    "kernel centers must be strictly increasing, got {:?}",
                    self.centers
                ));
            }
        }
        if self.centers[0] < -1.0 || *self.centers.last().expect("non-empty") > 1.0 {
            return Err("kernel centers must lie in [-1, 1]".into());
        }
        Ok(())
    }
}

/// Split-layer configuration: `split_layer` layers run per side, the rest
/// on the concatenated sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrettConfig {
    pub split_layer: usize,
}

/// Full configuration of one scorer instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ScorerKind,
    pub encoder: EncoderConfig,
    pub kernels: KernelConfig,
    /// PreTT: number of per-side layers b (1 <= b < num_layers).
    pub prett_split: usize,
    /// ColBERT: how many MASK tokens augment the query, independent of
    /// batch padding.
    pub mask_repeat: usize,
    /// Parameter initialization seed.
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(kind: ScorerKind, vocab_size: usize, seed: u64) -> Self {
        let encoder = match kind {
            ScorerKind::Tk => EncoderConfig::toy_tk(vocab_size),
            _ => EncoderConfig::toy_bert(vocab_size),
        };
        ModelConfig {
            kind,
            encoder,
            kernels: KernelConfig::default(),
            prett_split: 2,
            mask_repeat: 8,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.encoder.validate()?;
        match self.kind {
            ScorerKind::Tk => self.kernels.validate()?,
            ScorerKind::Prett => {
                let total = self.encoder.num_layers;
                if self.prett_split == 0 || self.prett_split >= total {
                    return Err(format!(
                        "prett_split must satisfy 1 <= b < {total}, got {}",
                        self.prett_split
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("scorer kind {0} does not support passage caching")]
    NotCacheable(ScorerKind),
    #[error("representation dim mismatch: expected {expect}, got {got}")]
    DimMismatch { expect: usize, got: usize },
    #[error("empty passage representation")]
    EmptyPassage,
    #[error("empty query")]
    EmptyQuery,
    #[error("query representation kind does not match scorer {0}")]
    RepKindMismatch(ScorerKind),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tape(#[from] TapeError),
}

/// Query-side work, precomputable once per query.
#[derive(Debug, Clone)]
pub enum QueryRep<S> {
    /// CAT has no query-side precomputation; it keeps the token ids.
    Cat { ids: Vec<TokenId> },
    /// Projected CLS vector.
    Dot { vec: Vec<S> },
    /// Projected rows of `[CLS; q; MASK x r]`.
    Colbert { rows: Tensor<S> },
    /// Layer-b states of `[CLS; q]`.
    Prett { states: Tensor<S> },
    /// Gated contextualized query rows.
    Tk { rows: Tensor<S> },
}

/// One ranking model: an encoder stack, a scoring head, and (for TK) the
/// contextualization gate.
#[derive(Debug, Clone)]
pub struct Model<S> {
    cfg: ModelConfig,
    params: ParamSet<S>,
    encoder: EncoderStack<S>,
    w_s: ParamId,
    raw_alpha: Option<ParamId>,
}

fn strip_trailing_pads(ids: &[TokenId]) -> &[TokenId] {
    let mut end = ids.len();
    while end > 0 && ids[end - 1] == PAD {
        end -= 1;
    }
    &ids[..end]
}

impl<S: Scalar> Model<S> {
    pub fn init(cfg: ModelConfig) -> Result<Self, ScoreError> {
        cfg.validate().map_err(ScoreError::Config)?;
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let encoder = EncoderStack::init(&cfg.encoder, &mut params, &mut rng, "enc");
        let d = cfg.encoder.embed_dim;
        let w_s = match cfg.kind {
            ScorerKind::Cat | ScorerKind::Prett => params.add(
                "w_s",
                Tensor::new(vec![d, 1], crate::encoder::normal_init(&mut rng, d, 0.02))
                    .expect("sized"),
            ),
            ScorerKind::Dot | ScorerKind::Colbert => params.add(
                "w_s",
                Tensor::new(vec![d, d], crate::encoder::normal_init(&mut rng, d * d, 0.02))
                    .expect("sized"),
            ),
            ScorerKind::Tk => {
                let k = cfg.kernels.count();
                params.add(
                    "w_s",
                    Tensor::vector(crate::encoder::normal_init(&mut rng, k, 0.1)),
                )
            }
        };
        let raw_alpha = match cfg.kind {
            ScorerKind::Tk => {
                // Sigmoid-squashed storage keeps alpha in (0, 1) while training.
                let a = cfg.encoder.clamped_gate_alpha().clamp(1e-6, 1.0 - 1e-6);
                let raw = (a / (1.0 - a)).ln();
                Some(params.add("gate_alpha_raw", Tensor::scalar(S::of(raw))))
            }
            _ => None,
        };
        Ok(Model {
            cfg,
            params,
            encoder,
            w_s,
            raw_alpha,
        })
    }

    pub fn kind(&self) -> ScorerKind {
        self.cfg.kind
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }

    pub fn encoder(&self) -> &EncoderStack<S> {
        &self.encoder
    }

    /// Parameter id of the scoring head W_s.
    pub fn scoring_head(&self) -> ParamId {
        self.w_s
    }

    /// Current gate value (TK only).
    pub fn gate_alpha(&self) -> Option<f64> {
        self.raw_alpha
            .map(|id| math::sigmoid(self.params.get(id).first().as_f64()))
    }

    // ── Input assembly ──────────────────────────────────────────────

    fn query_ids(&self, q: &[TokenId]) -> Result<Vec<TokenId>, ScoreError> {
        let q = strip_trailing_pads(q);
        if q.is_empty() {
            return Err(ScoreError::EmptyQuery);
        }
        Ok(match self.cfg.kind {
            ScorerKind::Cat => q.to_vec(), // CAT assembles jointly
            ScorerKind::Dot | ScorerKind::Prett => {
                let mut ids = vec![CLS];
                ids.extend_from_slice(q);
                ids
            }
            ScorerKind::Colbert => {
                let mut ids = vec![CLS];
                ids.extend_from_slice(q);
                ids.extend(std::iter::repeat(MASK).take(self.cfg.mask_repeat));
                ids
            }
            ScorerKind::Tk => q.to_vec(),
        })
    }

    fn passage_ids(&self, p: &[TokenId]) -> Result<Vec<TokenId>, ScoreError> {
        let p = strip_trailing_pads(p);
        if p.is_empty() {
            return Err(ScoreError::EmptyPassage);
        }
        Ok(match self.cfg.kind {
            ScorerKind::Cat => p.to_vec(),
            ScorerKind::Dot | ScorerKind::Colbert => {
                let mut ids = vec![CLS];
                ids.extend_from_slice(p);
                ids
            }
            ScorerKind::Prett => {
                let mut ids = vec![SEP];
                ids.extend_from_slice(p);
                ids
            }
            ScorerKind::Tk => p.to_vec(),
        })
    }

    // ── Graph building blocks ───────────────────────────────────────

    fn cls_projection(
        &self,
        g: &mut Graph<S>,
        bound: &Bound,
        enc: Var,
    ) -> Result<Var, ScoreError> {
        let cls = g.slice_rows(enc, 0, 1)?;
        let v = g.matmul(cls, bound.var(self.w_s))?;
        Ok(v)
    }

    fn tk_query_passage(
        &self,
        g: &mut Graph<S>,
        bound: &Bound,
        ids: &[TokenId],
    ) -> Result<Var, ScoreError> {
        let emb = self.encoder.embed(g, bound, ids)?;
        let ctx = self
            .encoder
            .apply_layers(g, bound, emb, None, 0, self.encoder.num_layers())?;
        let raw = bound.var(self.raw_alpha.expect("TK model has a gate"));
        let alpha = g.sigmoid(raw)?;
        Ok(contextualize_gated(g, emb, ctx, alpha)?)
    }

    /// Gated contextualization applied to cached embedding rows.
    fn tk_passage_from_states(
        &self,
        g: &mut Graph<S>,
        bound: &Bound,
        states: Var,
    ) -> Result<Var, ScoreError> {
        let ctx = self
            .encoder
            .apply_layers(g, bound, states, None, 0, self.encoder.num_layers())?;
        let raw = bound.var(self.raw_alpha.expect("TK model has a gate"));
        let alpha = g.sigmoid(raw)?;
        Ok(contextualize_gated(g, states, ctx, alpha)?)
    }

    /// Full fresh-path score as a differentiable graph node.
    pub fn score_on_graph(
        &self,
        g: &mut Graph<S>,
        bound: &Bound,
        q: &[TokenId],
        p: &[TokenId],
    ) -> Result<Var, ScoreError> {
        match self.cfg.kind {
            ScorerKind::Cat => {
                let q = self.query_ids(q)?;
                let p = self.passage_ids(p)?;
                let mut ids = vec![CLS];
                ids.extend_from_slice(&q);
                ids.push(SEP);
                ids.extend_from_slice(&p);
                let enc = self.encoder.encode_full(g, bound, &ids, None)?;
                let s = self.cls_projection(g, bound, enc)?;
                Ok(g.reshape(s, vec![1])?)
            }
            ScorerKind::Dot => {
                let q_ids = self.query_ids(q)?;
                let p_ids = self.passage_ids(p)?;
                let qe = self.encoder.encode_full(g, bound, &q_ids, None)?;
                let qv = self.cls_projection(g, bound, qe)?;
                let pe = self.encoder.encode_full(g, bound, &p_ids, None)?;
                let pv = self.cls_projection(g, bound, pe)?;
                let prod = g.mul(qv, pv)?;
                Ok(g.sum_all(prod)?)
            }
            ScorerKind::Colbert => {
                let q_ids = self.query_ids(q)?;
                let p_ids = self.passage_ids(p)?;
                let qe = self.encoder.encode_full(g, bound, &q_ids, None)?;
                let qhat = g.matmul(qe, bound.var(self.w_s))?;
                let pe = self.encoder.encode_full(g, bound, &p_ids, None)?;
                let body = g.slice_rows(pe, 1, p_ids.len())?; // drop passage CLS
                let phat = g.matmul(body, bound.var(self.w_s))?;
                colbert_aggregate(g, qhat, phat).map_err(Into::into)
            }
            ScorerKind::Prett => {
                let q_ids = self.query_ids(q)?;
                let p_ids = self.passage_ids(p)?;
                let b = self.cfg.prett_split;
                let qs = self.encoder.encode_prefix(g, bound, &q_ids, None, b)?;
                let ps = self.encoder.encode_prefix(g, bound, &p_ids, None, b)?;
                let joint = g.concat_rows(&[qs, ps])?;
                let out = self.encoder.encode_suffix(g, bound, joint, None, b)?;
                let s = self.cls_projection(g, bound, out)?;
                Ok(g.reshape(s, vec![1])?)
            }
            ScorerKind::Tk => {
                let q_ids = self.query_ids(q)?;
                let p_ids = self.passage_ids(p)?;
                let qhat = self.tk_query_passage(g, bound, &q_ids)?;
                let phat = self.tk_query_passage(g, bound, &p_ids)?;
                tk_pool(g, qhat, phat, &self.cfg.kernels, bound.var(self.w_s))
                    .map_err(Into::into)
            }
        }
    }

    /// Open a frozen scoring session (parameters bound once, no
    /// gradients). All inference paths go through this.
    pub fn session(&self) -> Result<ScoringSession<'_, S>, ScoreError> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false)?;
        let base_len = g.len();
        Ok(ScoringSession {
            model: self,
            g,
            bound,
            base_len,
        })
    }

    /// Score one pair (builds a throwaway session).
    pub fn score_pair(&self, q: &[TokenId], p: &[TokenId]) -> Result<S, ScoreError> {
        self.session()?.score_pair(q, p)
    }
}

/// Frozen-parameter scoring context. The graph is truncated back to the
/// parameter leaves after every score, so long candidate loops stay flat
/// in memory.
pub struct ScoringSession<'m, S: Scalar> {
    model: &'m Model<S>,
    g: Graph<S>,
    bound: Bound,
    base_len: usize,
}

impl<'m, S: Scalar> ScoringSession<'m, S> {
    pub fn model(&self) -> &Model<S> {
        self.model
    }

    fn run<T>(
        &mut self,
        f: impl FnOnce(&Model<S>, &mut Graph<S>, &Bound) -> Result<T, ScoreError>,
    ) -> Result<T, ScoreError> {
        let out = f(self.model, &mut self.g, &self.bound);
        self.g.truncate(self.base_len);
        out
    }

    /// Fresh-path score (no cache involved).
    pub fn score_pair(&mut self, q: &[TokenId], p: &[TokenId]) -> Result<S, ScoreError> {
        self.run(|m, g, b| {
            let s = m.score_on_graph(g, b, q, p)?;
            Ok(g.value(s).first())
        })
    }

    /// Precompute the query-side representation.
    pub fn prepare_query(&mut self, q: &[TokenId]) -> Result<QueryRep<S>, ScoreError> {
        self.run(|m, g, b| {
            Ok(match m.cfg.kind {
                ScorerKind::Cat => QueryRep::Cat {
                    ids: m.query_ids(q)?,
                },
                ScorerKind::Dot => {
                    let ids = m.query_ids(q)?;
                    let qe = m.encoder.encode_full(g, b, &ids, None)?;
                    let qv = m.cls_projection(g, b, qe)?;
                    QueryRep::Dot {
                        vec: g.value(qv).data().to_vec(),
                    }
                }
                ScorerKind::Colbert => {
                    let ids = m.query_ids(q)?;
                    let qe = m.encoder.encode_full(g, b, &ids, None)?;
                    let qhat = g.matmul(qe, b.var(m.w_s))?;
                    QueryRep::Colbert {
                        rows: g.value(qhat).clone(),
                    }
                }
                ScorerKind::Prett => {
                    let ids = m.query_ids(q)?;
                    let qs = m.encoder.encode_prefix(g, b, &ids, None, m.cfg.prett_split)?;
                    QueryRep::Prett {
                        states: g.value(qs).clone(),
                    }
                }
                ScorerKind::Tk => {
                    let ids = m.query_ids(q)?;
                    let qhat = m.tk_query_passage(g, b, &ids)?;
                    QueryRep::Tk {
                        rows: g.value(qhat).clone(),
                    }
                }
            })
        })
    }

    /// Precompute the passage-side representation.
    pub fn build_cache_entry(
        &mut self,
        passage_id: i64,
        p: &[TokenId],
    ) -> Result<CacheEntry<S>, ScoreError> {
        self.run(|m, g, b| {
            let rows = match m.cfg.kind {
                ScorerKind::Cat => return Err(ScoreError::NotCacheable(ScorerKind::Cat)),
                ScorerKind::Dot => {
                    let ids = m.passage_ids(p)?;
                    let pe = m.encoder.encode_full(g, b, &ids, None)?;
                    let pv = m.cls_projection(g, b, pe)?;
                    g.value(pv).clone()
                }
                ScorerKind::Colbert => {
                    let ids = m.passage_ids(p)?;
                    let pe = m.encoder.encode_full(g, b, &ids, None)?;
                    let body = g.slice_rows(pe, 1, ids.len())?;
                    let phat = g.matmul(body, b.var(m.w_s))?;
                    g.value(phat).clone()
                }
                ScorerKind::Prett => {
                    let ids = m.passage_ids(p)?;
                    let ps = m.encoder.encode_prefix(g, b, &ids, None, m.cfg.prett_split)?;
                    g.value(ps).clone()
                }
                ScorerKind::Tk => {
                    let ids = m.passage_ids(p)?;
                    let e = m.encoder.embed(g, b, &ids)?;
                    g.value(e).clone()
                }
            };
            Ok(CacheEntry { passage_id, rows })
        })
    }

    /// Score a prepared query against a cached passage representation.
    pub fn score_cached(
        &mut self,
        qr: &QueryRep<S>,
        entry: &CacheEntry<S>,
    ) -> Result<S, ScoreError> {
        if entry.rows.shape()[0] == 0 {
            return Err(ScoreError::EmptyPassage);
        }
        match (self.model.cfg.kind, qr) {
            (ScorerKind::Cat, _) => Err(ScoreError::NotCacheable(ScorerKind::Cat)),
            (ScorerKind::Dot, QueryRep::Dot { vec }) => {
                if entry.rows.len() != vec.len() {
                    return Err(ScoreError::DimMismatch {
                        expect: vec.len(),
                        got: entry.rows.len(),
                    });
                }
                Ok(math::dot(vec, entry.rows.data()))
            }
            (ScorerKind::Colbert, QueryRep::Colbert { rows }) => {
                if rows.shape()[1] != entry.rows.shape()[1] {
                    return Err(ScoreError::DimMismatch {
                        expect: rows.shape()[1],
                        got: entry.rows.shape()[1],
                    });
                }
                Ok(maxsim_plain(rows, &entry.rows))
            }
            (ScorerKind::Prett, QueryRep::Prett { states }) => self.run(|m, g, b| {
                let qs = g.constant(states.clone())?;
                let ps = g.constant(entry.rows.clone())?;
                let joint = g.concat_rows(&[qs, ps])?;
                let out = m
                    .encoder
                    .encode_suffix(g, b, joint, None, m.cfg.prett_split)?;
                let s = m.cls_projection(g, b, out)?;
                Ok(g.value(s).first())
            }),
            (ScorerKind::Tk, QueryRep::Tk { rows }) => self.run(|m, g, b| {
                let qhat = g.constant(rows.clone())?;
                let states = g.constant(entry.rows.clone())?;
                let phat = m.tk_passage_from_states(g, b, states)?;
                let s = tk_pool(g, qhat, phat, &m.cfg.kernels, b.var(m.w_s))?;
                Ok(g.value(s).first())
            }),
            _ => Err(ScoreError::RepKindMismatch(self.model.cfg.kind)),
        }
    }

    /// Score one query against many cached candidates, in order.
    pub fn score_many(
        &mut self,
        qr: &QueryRep<S>,
        entries: &[&CacheEntry<S>],
    ) -> Result<Vec<S>, ScoreError> {
        if matches!(qr, QueryRep::Cat { .. }) {
            return Err(ScoreError::NotCacheable(ScorerKind::Cat));
        }
        let mut out = Vec::with_capacity(entries.len());
        for e in entries {
            out.push(self.score_cached(qr, e)?);
        }
        Ok(out)
    }
}

/// Late-interaction aggregation on the graph: sum over query rows of the
/// max dot product with any passage row.
pub fn colbert_aggregate<S: Scalar>(
    g: &mut Graph<S>,
    qhat: Var,
    phat: Var,
) -> Result<Var, TapeError> {
    let pt = g.transpose(phat)?;
    let sims = g.matmul(qhat, pt)?;
    let mx = g.max_last(sims)?;
    g.sum_all(mx)
}

/// Plain-path twin of [`colbert_aggregate`], bit-identical by
/// construction (same dot order, ascending max scan, ascending sum).
fn maxsim_plain<S: Scalar>(q: &Tensor<S>, p: &Tensor<S>) -> S {
    let mut total = S::zero();
    for i in 0..q.shape()[0] {
        let qrow = q.row(i);
        let mut best = math::dot(qrow, p.row(0));
        for j in 1..p.shape()[0] {
            let d = math::dot(qrow, p.row(j));
            if d > best {
                best = d;
            }
        }
        total = total + best;
    }
    total
}

/// Kernel pooling on the graph: cosine match matrix, Gaussian kernel
/// activations, sum over passage terms, guarded log, sum over query
/// terms, weighted by the kernel head.
pub fn tk_pool<S: Scalar>(
    g: &mut Graph<S>,
    qhat: Var,
    phat: Var,
    kernels: &KernelConfig,
    w_s: Var,
) -> Result<Var, TapeError> {
    let cos = g.cosine_matrix(qhat, phat)?;
    let centers: Vec<S> = kernels.centers.iter().map(|&c| S::of(c)).collect();
    let acts = g.gauss_kernels(cos, &centers, S::of(kernels.sigma))?;
    let per_term = g.sum_last(acts)?; // [K, m]
    let guarded = g.add_scalar(per_term, S::of(TK_LOG_EPS))?;
    let logged = g.log(guarded)?;
    let per_kernel = g.sum_last(logged)?; // [K]
    let weighted = g.mul(per_kernel, w_s)?;
    g.sum_all(weighted)
}

/// Gaussian kernel activations of a cosine matrix: `[m, n] -> [K, m, n]`.
pub fn kernel_activations<S: Scalar>(
    g: &mut Graph<S>,
    cos: Var,
    kernels: &KernelConfig,
) -> Result<Var, TapeError> {
    let centers: Vec<S> = kernels.centers.iter().map(|&c| S::of(c)).collect();
    g.gauss_kernels(cos, &centers, S::of(kernels.sigma))
}
