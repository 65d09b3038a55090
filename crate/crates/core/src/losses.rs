//! Pairwise training losses: the binary RankNet teacher loss and the
//! three distillation losses over (positive, negative) score pairs.
//!
//! Every loss is a batch mean, so learning rates transfer across batch
//! sizes. The distillation losses consume only teacher scores — binary
//! relevance labels never enter here.

use thiserror::Error;

use crate::autodiff::{math, Graph, TapeError, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Binary RankNet on the triple orientation; ignores teacher scores.
    RanknetBinary,
    /// MSE between student margins and teacher margins.
    MarginMse,
    /// MSE against raw teacher scores, per side.
    PointwiseMse,
    /// RankNet weighted per-sample by |teacher margin|.
    WeightedRanknet,
}

impl LossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::RanknetBinary => "ranknet_binary",
            LossKind::MarginMse => "margin_mse",
            LossKind::PointwiseMse => "pointwise_mse",
            LossKind::WeightedRanknet => "weighted_ranknet",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_lowercase().as_str() {
            "ranknet_binary" | "ranknet-binary" | "ranknet" => Some(LossKind::RanknetBinary),
            "margin_mse" | "margin-mse" => Some(LossKind::MarginMse),
            "pointwise_mse" | "pointwise-mse" => Some(LossKind::PointwiseMse),
            "weighted_ranknet" | "weighted-ranknet" => Some(LossKind::WeightedRanknet),
            _ => None,
        }
    }

    /// Whether this loss requires a teacher-score file.
    pub fn needs_teacher(&self) -> bool {
        !matches!(self, LossKind::RanknetBinary)
    }

    pub const ALL: [LossKind; 4] = [
        LossKind::RanknetBinary,
        LossKind::MarginMse,
        LossKind::PointwiseMse,
        LossKind::WeightedRanknet,
    ];
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum LossError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch lists must share one length: {0:?}")]
    LengthMismatch(Vec<usize>),
    #[error("loss requires teacher scores but none were provided")]
    MissingTeacherScores,
    #[error(transparent)]
    Tape(#[from] TapeError),
}

/// Aligned student/teacher score pairs for one batch. Teacher entries are
/// optional only for the plain RankNet loss.
#[derive(Debug, Clone)]
pub struct ScorePairBatch<S> {
    pub student_pos: Vec<S>,
    pub student_neg: Vec<S>,
    pub teacher_pos: Option<Vec<S>>,
    pub teacher_neg: Option<Vec<S>>,
}

impl<S: Scalar> ScorePairBatch<S> {
    pub fn without_teacher(student_pos: Vec<S>, student_neg: Vec<S>) -> Self {
        ScorePairBatch {
            student_pos,
            student_neg,
            teacher_pos: None,
            teacher_neg: None,
        }
    }

    pub fn with_teacher(
        student_pos: Vec<S>,
        student_neg: Vec<S>,
        teacher_pos: Vec<S>,
        teacher_neg: Vec<S>,
    ) -> Self {
        ScorePairBatch {
            student_pos,
            student_neg,
            teacher_pos: Some(teacher_pos),
            teacher_neg: Some(teacher_neg),
        }
    }

    pub fn len(&self) -> usize {
        self.student_pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.student_pos.is_empty()
    }

    fn validate(&self, needs_teacher: bool) -> Result<(), LossError> {
        if self.student_pos.is_empty() {
            return Err(LossError::EmptyBatch);
        }
        let mut lens = vec![self.student_pos.len(), self.student_neg.len()];
        if let Some(t) = &self.teacher_pos {
            lens.push(t.len());
        }
        if let Some(t) = &self.teacher_neg {
            lens.push(t.len());
        }
        if lens.iter().any(|&l| l != lens[0]) {
            return Err(LossError::LengthMismatch(lens));
        }
        if needs_teacher && (self.teacher_pos.is_none() || self.teacher_neg.is_none()) {
            return Err(LossError::MissingTeacherScores);
        }
        Ok(())
    }

    fn teacher(&self) -> (&[S], &[S]) {
        (
            self.teacher_pos.as_deref().expect("validated"),
            self.teacher_neg.as_deref().expect("validated"),
        )
    }
}

fn batch_mean<S: Scalar>(total: S, n: usize) -> S {
    total * (S::one() / S::of(n as f64))
}

/// Mean over the batch of `log(1 + exp(-(pos - neg)))`.
pub fn ranknet_loss<S: Scalar>(pos: &[S], neg: &[S]) -> Result<S, LossError> {
    if pos.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    if pos.len() != neg.len() {
        return Err(LossError::LengthMismatch(vec![pos.len(), neg.len()]));
    }
    let mut total = S::zero();
    for (&p, &n) in pos.iter().zip(neg) {
        total = total + math::softplus(n - p);
    }
    Ok(batch_mean(total, pos.len()))
}

/// MSE between student margins and teacher margins (margins are
/// `pos - neg`). Exactly zero iff every margin matches, and invariant to
/// per-pair constant shifts of the student scores.
pub fn margin_mse_loss<S: Scalar>(batch: &ScorePairBatch<S>) -> Result<S, LossError> {
    batch.validate(true)?;
    let (tp, tn) = batch.teacher();
    let mut total = S::zero();
    for i in 0..batch.len() {
        let d = (batch.student_pos[i] - batch.student_neg[i]) - (tp[i] - tn[i]);
        total = total + d * d;
    }
    Ok(batch_mean(total, batch.len()))
}

/// `MSE(student_pos, teacher_pos) + MSE(student_neg, teacher_neg)`.
/// Unlike the margin loss, this pins the student to the teacher's raw
/// score range.
pub fn pointwise_mse_loss<S: Scalar>(batch: &ScorePairBatch<S>) -> Result<S, LossError> {
    batch.validate(true)?;
    let (tp, tn) = batch.teacher();
    let mut pos_total = S::zero();
    let mut neg_total = S::zero();
    for i in 0..batch.len() {
        let dp = batch.student_pos[i] - tp[i];
        let dn = batch.student_neg[i] - tn[i];
        pos_total = pos_total + dp * dp;
        neg_total = neg_total + dn * dn;
    }
    Ok(batch_mean(pos_total, batch.len()) + batch_mean(neg_total, batch.len()))
}

/// RankNet on the student margin, weighted per sample by the absolute
/// teacher margin, batch-mean normalized.
pub fn weighted_ranknet_loss<S: Scalar>(batch: &ScorePairBatch<S>) -> Result<S, LossError> {
    batch.validate(true)?;
    let (tp, tn) = batch.teacher();
    let mut total = S::zero();
    for i in 0..batch.len() {
        let w = (tp[i] - tn[i]).abs();
        total = total + math::softplus(batch.student_neg[i] - batch.student_pos[i]) * w;
    }
    Ok(batch_mean(total, batch.len()))
}

/// Dispatch by kind over a full batch of plain values.
pub fn batch_loss<S: Scalar>(kind: LossKind, batch: &ScorePairBatch<S>) -> Result<S, LossError> {
    match kind {
        LossKind::RanknetBinary => {
            batch.validate(false)?;
            ranknet_loss(&batch.student_pos, &batch.student_neg)
        }
        LossKind::MarginMse => margin_mse_loss(batch),
        LossKind::PointwiseMse => pointwise_mse_loss(batch),
        LossKind::WeightedRanknet => weighted_ranknet_loss(batch),
    }
}

/// Per-pair loss term as a graph node: the batch loss is the mean of
/// these terms, so per-pair gradients can be computed on independent
/// graphs and averaged.
pub fn pair_term_on_graph<S: Scalar>(
    g: &mut Graph<S>,
    kind: LossKind,
    pos: Var,
    neg: Var,
    teacher: Option<(S, S)>,
) -> Result<Var, LossError> {
    match kind {
        LossKind::RanknetBinary => {
            let m = g.sub(neg, pos)?;
            Ok(g.softplus(m)?)
        }
        LossKind::MarginMse => {
            let (tp, tn) = teacher.ok_or(LossError::MissingTeacherScores)?;
            let margin = g.sub(pos, neg)?;
            let d = g.add_scalar(margin, -(tp - tn))?;
            Ok(g.mul(d, d)?)
        }
        LossKind::PointwiseMse => {
            let (tp, tn) = teacher.ok_or(LossError::MissingTeacherScores)?;
            let dp = g.add_scalar(pos, -tp)?;
            let dn = g.add_scalar(neg, -tn)?;
            let sp = g.mul(dp, dp)?;
            let sn = g.mul(dn, dn)?;
            Ok(g.add(sp, sn)?)
        }
        LossKind::WeightedRanknet => {
            let (tp, tn) = teacher.ok_or(LossError::MissingTeacherScores)?;
            let m = g.sub(neg, pos)?;
            let s = g.softplus(m)?;
            Ok(g.scale(s, (tp - tn).abs())?)
        }
    }
}

/// Batch loss over score vectors already on a graph (used by gradient
/// tests; training uses [`pair_term_on_graph`] per member).
pub fn batch_loss_on_graph<S: Scalar>(
    g: &mut Graph<S>,
    kind: LossKind,
    pos: Var,
    neg: Var,
    teacher: Option<(&[S], &[S])>,
) -> Result<Var, LossError> {
    let n = g.value(pos).len();
    if n == 0 {
        return Err(LossError::EmptyBatch);
    }
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let p = g.slice_rows(pos, i, i + 1)?;
        let q = g.slice_rows(neg, i, i + 1)?;
        let t = teacher.map(|(tp, tn)| (tp[i], tn[i]));
        terms.push(pair_term_on_graph(g, kind, p, q, t)?);
    }
    let stacked = g.concat_rows(&terms)?;
    let total = g.sum_all(stacked)?;
    Ok(g.scale(total, S::one() / S::of(n as f64))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn ranknet_examples() {
        // pos == neg: log 2 per pair.
        let l = ranknet_loss::<f64>(&[1.5, -0.3], &[1.5, -0.3]).unwrap();
        assert!((l - LN2).abs() < 1e-15);
        assert!((l - 0.693147).abs() < 1e-6);

        // Huge margin: loss goes to zero.
        let l = ranknet_loss::<f64>(&[1000.0], &[0.0]).unwrap();
        assert_eq!(l, 0.0);

        // pos=[2], neg=[1]: log(1 + e^-1).
        let l = ranknet_loss::<f64>(&[2.0], &[1.0]).unwrap();
        assert!((l - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-15);
        assert!((l - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn margin_mse_examples() {
        // Teacher fixpoint: exactly zero.
        let b: ScorePairBatch<f64> = ScorePairBatch::with_teacher(
            vec![2.0, -1.0],
            vec![0.5, -3.0],
            vec![12.0, 9.0],
            vec![10.5, 7.0],
        );
        assert_eq!(margin_mse_loss(&b).unwrap(), 0.0);

        // B=1: student (2,1), teacher (3,1) -> (1-2)^2 = 1.
        let b: ScorePairBatch<f64> = ScorePairBatch::with_teacher(vec![2.0], vec![1.0], vec![3.0], vec![1.0]);
        assert_eq!(margin_mse_loss(&b).unwrap(), 1.0);

        // B=2: student margins {1, 0}, teacher margins {2, -1} (a negative
        // teacher margin is legal) -> ((-1)^2 + 1^2) / 2 = 1.
        let b = ScorePairBatch::with_teacher(
            vec![1.0, 0.0],
            vec![0.0, 0.0],
            vec![2.0, 0.0],
            vec![0.0, 1.0],
        );
        assert_eq!(margin_mse_loss(&b).unwrap(), 1.0);
    }

    #[test]
    fn pointwise_mse_examples() {
        let b: ScorePairBatch<f64> = ScorePairBatch::with_teacher(vec![4.0], vec![-2.0], vec![4.0], vec![-2.0]);
        assert_eq!(pointwise_mse_loss(&b).unwrap(), 0.0);

        // B=1: student (1,0), teacher (2,1) -> 1 + 1 = 2.
        let b: ScorePairBatch<f64> = ScorePairBatch::with_teacher(vec![1.0], vec![0.0], vec![2.0], vec![1.0]);
        assert_eq!(pointwise_mse_loss(&b).unwrap(), 2.0);

        // Decomposes into two independent MSEs.
        let b = ScorePairBatch::with_teacher(
            vec![1.0, -0.5],
            vec![0.25, 2.0],
            vec![3.0, 0.5],
            vec![-1.0, 2.5],
        );
        let mse = |a: &[f64], t: &[f64]| {
            a.iter().zip(t).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() * (1.0 / a.len() as f64)
        };
        let expect = mse(&b.student_pos, b.teacher_pos.as_ref().unwrap())
            + mse(&b.student_neg, b.teacher_neg.as_ref().unwrap());
        assert_eq!(pointwise_mse_loss(&b).unwrap(), expect);
    }

    #[test]
    fn weighted_ranknet_examples() {
        // Teacher margin 0: the sample contributes nothing.
        let b: ScorePairBatch<f64> = ScorePairBatch::with_teacher(vec![-5.0], vec![17.0], vec![1.0], vec![1.0]);
        assert_eq!(weighted_ranknet_loss(&b).unwrap(), 0.0);

        // Student margin 0, teacher margin 2 -> 2 log 2.
        let b: ScorePairBatch<f64> = ScorePairBatch::with_teacher(vec![1.0], vec![1.0], vec![2.5], vec![0.5]);
        assert!((weighted_ranknet_loss(&b).unwrap() - 2.0 * LN2).abs() < 1e-15);
        assert!((weighted_ranknet_loss(&b).unwrap() - 1.386294).abs() < 1e-6);

        // Unit teacher margins reduce to plain RankNet, bit for bit.
        let pos: Vec<f64> = vec![0.4, -1.2, 3.0];
        let neg: Vec<f64> = vec![0.1, 0.7, 2.0];
        let b = ScorePairBatch::with_teacher(
            pos.clone(),
            neg.clone(),
            vec![1.0, 2.0, -0.5],
            vec![0.0, 1.0, -1.5],
        );
        assert_eq!(
            weighted_ranknet_loss(&b).unwrap().to_bits(),
            ranknet_loss(&pos, &neg).unwrap().to_bits()
        );
    }

    #[test]
    fn margin_shift_invariance_exact_vs_pointwise() {
        // Dyadic scores and shifts make every addition exact, so the
        // margin loss is *exactly* invariant under per-pair shifts.
        let pos: Vec<f64> = vec![1.5, -2.25, 0.75];
        let neg: Vec<f64> = vec![0.5, -3.0, 2.0];
        let tp = vec![4.0, 1.25, -0.5];
        let tn = vec![3.25, 2.0, 0.5];
        let shifts = [8.0, -16.0, 0.125];

        let base = ScorePairBatch::with_teacher(pos.clone(), neg.clone(), tp.clone(), tn.clone());
        let shifted = ScorePairBatch::with_teacher(
            pos.iter().zip(&shifts).map(|(a, c)| a + c).collect(),
            neg.iter().zip(&shifts).map(|(a, c)| a + c).collect(),
            tp,
            tn,
        );
        assert_eq!(
            margin_mse_loss(&base).unwrap().to_bits(),
            margin_mse_loss(&shifted).unwrap().to_bits()
        );
        // The pointwise loss is *not* shift invariant on the same cases.
        assert!(
            (pointwise_mse_loss(&base).unwrap() - pointwise_mse_loss(&shifted).unwrap()).abs()
                > 1.0
        );
    }

    #[test]
    fn losses_nonnegative_and_zero_iff_margins_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let n = rng.gen_range(1..6);
            let r = |rng: &mut ChaCha8Rng| (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect::<Vec<f64>>();
            let b = ScorePairBatch::with_teacher(r(&mut rng), r(&mut rng), r(&mut rng), r(&mut rng));
            let margins_match = (0..n).all(|i| {
                (b.student_pos[i] - b.student_neg[i])
                    == (b.teacher_pos.as_ref().unwrap()[i] - b.teacher_neg.as_ref().unwrap()[i])
            });
            let l = margin_mse_loss(&b).unwrap();
            assert!(l >= 0.0);
            assert_eq!(l == 0.0, margins_match);
            assert!(pointwise_mse_loss(&b).unwrap() >= 0.0);
            assert!(weighted_ranknet_loss(&b).unwrap() >= 0.0);
            assert!(ranknet_loss(&b.student_pos, &b.student_neg).unwrap() >= 0.0);
        }
    }

    #[test]
    fn binary_labels_never_consumed_by_distillation_losses() {
        // Swapping the (pos, neg) orientation together with the teacher
        // scores leaves every distillation loss unchanged: the losses see
        // only scores, not which side was labeled relevant.
        let b: ScorePairBatch<f64> = ScorePairBatch::with_teacher(
            vec![0.3, 2.0],
            vec![1.1, -0.4],
            vec![5.0, 1.0],
            vec![6.5, 0.0],
        );
        let swapped = ScorePairBatch::with_teacher(
            b.student_neg.clone(),
            b.student_pos.clone(),
            b.teacher_neg.clone().unwrap(),
            b.teacher_pos.clone().unwrap(),
        );
        assert_eq!(
            margin_mse_loss(&b).unwrap().to_bits(),
            margin_mse_loss(&swapped).unwrap().to_bits()
        );
        assert_eq!(
            pointwise_mse_loss(&b).unwrap().to_bits(),
            pointwise_mse_loss(&swapped).unwrap().to_bits()
        );
        // The binary RankNet baseline *does* depend on the orientation.
        assert!(
            (ranknet_loss(&b.student_pos, &b.student_neg).unwrap()
                - ranknet_loss(&swapped.student_pos, &swapped.student_neg).unwrap())
            .abs()
                > 0.1
        );
    }

    #[test]
    fn graph_batch_loss_matches_value_functions() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for kind in LossKind::ALL {
            let n = 5;
            let r = |rng: &mut ChaCha8Rng| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>();
            let (pos, neg, tp, tn) = (r(&mut rng), r(&mut rng), r(&mut rng), r(&mut rng));
            let batch = ScorePairBatch::with_teacher(pos.clone(), neg.clone(), tp.clone(), tn.clone());
            let value = batch_loss(kind, &batch).unwrap();

            let mut g: Graph<f64> = Graph::new();
            let pv = g.leaf(Tensor::vector(pos), true).unwrap();
            let nv = g.leaf(Tensor::vector(neg), true).unwrap();
            let teacher = kind.needs_teacher().then_some((tp.as_slice(), tn.as_slice()));
            let lv = batch_loss_on_graph(&mut g, kind, pv, nv, teacher).unwrap();
            let got = g.value(lv).first();
            let tol = if matches!(kind, LossKind::PointwiseMse) {
                1e-12
            } else {
                0.0
            };
            assert!(
                (got - value).abs() <= tol,
                "{kind}: graph {got} vs value {value}"
            );
            // And the loss is differentiable end to end.
            g.backward(lv).unwrap();
            assert!(g.grad(pv).is_some());
        }
    }

    #[test]
    fn margin_mse_gradient_direction() {
        // d loss / d student_pos_i has the opposite sign of
        // (teacher_margin_i - student_margin_i).
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..50 {
            let n = 4;
            let r = |rng: &mut ChaCha8Rng| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>();
            let (pos, neg, tp, tn) = (r(&mut rng), r(&mut rng), r(&mut rng), r(&mut rng));
            let mut g: Graph<f64> = Graph::new();
            let pv = g.leaf(Tensor::vector(pos.clone()), true).unwrap();
            let nv = g.leaf(Tensor::vector(neg.clone()), true).unwrap();
            let lv =
                batch_loss_on_graph(&mut g, LossKind::MarginMse, pv, nv, Some((&tp, &tn))).unwrap();
            g.backward(lv).unwrap();
            let grad = g.grad(pv).unwrap();
            for i in 0..n {
                let gap = (tp[i] - tn[i]) - (pos[i] - neg[i]);
                if gap.abs() > 1e-12 {
                    assert!(
                        grad[i] * gap < 0.0,
                        "gradient {} should oppose margin gap {}",
                        grad[i],
                        gap
                    );
                }
            }
        }
    }

    #[test]
    fn error_paths() {
        let empty: ScorePairBatch<f64> = ScorePairBatch::without_teacher(vec![], vec![]);
        assert!(matches!(
            margin_mse_loss(&empty),
            Err(LossError::EmptyBatch)
        ));
        let no_teacher = ScorePairBatch::without_teacher(vec![1.0], vec![0.0]);
        assert!(matches!(
            margin_mse_loss(&no_teacher),
            Err(LossError::MissingTeacherScores)
        ));
        assert!(matches!(
            weighted_ranknet_loss(&no_teacher),
            Err(LossError::MissingTeacherScores)
        ));
        let ragged = ScorePairBatch::with_teacher(vec![1.0, 2.0], vec![0.0], vec![1.0], vec![0.0]);
        assert!(matches!(
            margin_mse_loss(&ragged),
            Err(LossError::LengthMismatch(_))
        ));
        assert!(matches!(
            ranknet_loss::<f64>(&[], &[]),
            Err(LossError::EmptyBatch)
        ));
    }
}
