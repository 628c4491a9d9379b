//! Soft and hard correspondences between two encoded clouds.
//!
//! Scores are inner products of the final encodings. They are bordered with a
//! slack row and column (corner included) and normalized in log space by
//! alternating row and column passes. Every real row and column is driven to
//! unit mass; the slack row carries mass `n` and the slack column mass `m`, so
//! both marginals total `m + n` and a constant added to the bordered matrix
//! cancels exactly. The corner soaks up whatever the slack border does not
//! route to real points. It is never read by the loss or the hard assignment.

use crate::error::{Error, Result};
use crate::geometry::{apply_transform, nearest, PointCloud, RigidTransform};
use crate::tape::{Tape, Var};
use crate::tensor::Mat;

pub const DEFAULT_SINKHORN_ITERS: usize = 100;
pub const DEFAULT_GAP_MARGIN: f64 = 0.5;
pub const DEFAULT_SLACK_INIT: f64 = 1.0;
pub const DEFAULT_GT_THRESHOLD: f64 = 0.05;

pub fn score_matrix(tape: &mut Tape, hx: Var, hy: Var) -> Result<Var> {
    let (a, b) = (tape.value(hx).cols(), tape.value(hy).cols());
    if a != b {
        return Err(Error::param(format!("encoding widths differ: {a} vs {b}")));
    }
    Ok(tape.matmul_bt(hx, hy))
}

/// Log-domain slack Sinkhorn on the tape; returns the `(m+1) × (n+1)` log
/// assignment.
pub fn sinkhorn_log(tape: &mut Tape, scores: Var, slack: Var, iters: usize) -> Result<Var> {
    if iters == 0 {
        return Err(Error::param("Sinkhorn needs at least one iteration"));
    }
    if !tape.value(scores).all_finite() || !tape.value(slack).all_finite() {
        return Err(Error::Numerical("non-finite score matrix".into()));
    }
    let (m, n) = tape.value(scores).shape();
    let mut row_mass = vec![0.0; m + 1];
    row_mass[m] = (n as f64).ln();
    let mut col_mass = vec![0.0; n + 1];
    col_mass[n] = (m as f64).ln();
    let mut z = tape.augment(scores, slack);
    for _ in 0..iters {
        z = tape.log_normalize_rows(z, row_mass.clone());
        z = tape.log_normalize_cols(z, col_mass.clone());
    }
    Ok(z)
}

/// Slack-augmented correspondence probabilities, stored as logs.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignment {
    log: Mat,
}

impl SoftAssignment {
    pub fn from_log(log: Mat) -> Self {
        assert!(log.rows() >= 1 && log.cols() >= 1);
        Self { log }
    }

    /// Number of real source rows.
    pub fn m(&self) -> usize {
        self.log.rows() - 1
    }

    /// Number of real target columns.
    pub fn n(&self) -> usize {
        self.log.cols() - 1
    }

    pub fn log(&self) -> &Mat {
        &self.log
    }

    pub fn prob(&self, i: usize, j: usize) -> f64 {
        self.log.get(i, j).exp()
    }

    pub fn probabilities(&self) -> Mat {
        let mut p = self.log.clone();
        p.data_mut().iter_mut().for_each(|v| *v = v.exp());
        p
    }
}

pub fn sinkhorn(scores: &Mat, slack: f64, iters: usize) -> Result<SoftAssignment> {
    let mut tape = Tape::new();
    let c = tape.leaf(scores.clone());
    let s = tape.leaf(Mat::scalar(slack));
    let z = sinkhorn_log(&mut tape, c, s, iters)?;
    Ok(SoftAssignment::from_log(tape.value(z).clone()))
}

/// Ground-truth partner of every source and target point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthMatches {
    source_to_target: Vec<Option<usize>>,
    target_to_source: Vec<Option<usize>>,
}

impl GroundTruthMatches {
    pub fn from_pairs(m: usize, n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut s2t = vec![None; m];
        let mut t2s = vec![None; n];
        for &(i, j) in pairs {
            if i >= m || j >= n {
                return Err(Error::param(format!("match ({i}, {j}) out of range for {m}x{n}")));
            }
            if s2t[i].is_some() || t2s[j].is_some() {
                return Err(Error::param(format!("match ({i}, {j}) reuses a point")));
            }
            s2t[i] = Some(j);
            t2s[j] = Some(i);
        }
        Ok(Self {
            source_to_target: s2t,
            target_to_source: t2s,
        })
    }

    pub fn m(&self) -> usize {
        self.source_to_target.len()
    }

    pub fn n(&self) -> usize {
        self.target_to_source.len()
    }

    pub fn source_to_target(&self) -> &[Option<usize>] {
        &self.source_to_target
    }

    pub fn target_to_source(&self) -> &[Option<usize>] {
        &self.target_to_source
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.source_to_target
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| (i, j)))
            .collect()
    }

    pub fn matched_count(&self) -> usize {
        self.source_to_target.iter().flatten().count()
    }

    /// True column for each source row (`n` for slack) and true row for each
    /// target column (`m` for slack).
    pub fn slack_indices(&self) -> (Vec<usize>, Vec<usize>) {
        let (m, n) = (self.m(), self.n());
        (
            self.source_to_target.iter().map(|j| j.unwrap_or(n)).collect(),
            self.target_to_source.iter().map(|i| i.unwrap_or(m)).collect(),
        )
    }
}

/// Margin loss on the tape. See [`gap_loss`] for the formula.
pub fn gap_loss_on_tape(tape: &mut Tape, log_assign: Var, gt: &GroundTruthMatches, alpha: f64) -> Result<Var> {
    let (r, c) = tape.value(log_assign).shape();
    if (r, c) != (gt.m() + 1, gt.n() + 1) {
        return Err(Error::param(format!(
            "assignment is {r}x{c} but ground truth covers {}x{}",
            gt.m(),
            gt.n()
        )));
    }
    if !(alpha > 0.0) {
        return Err(Error::param(format!("margin must be positive, got {alpha}")));
    }
    let (rows, cols) = gt.slack_indices();
    Ok(tape.gap_loss(log_assign, rows, cols, alpha))
}

/// `Σ_i log(1 + Σ_n max(log P[i,n] − log P[i,ī] + α, 0))` plus the same
/// over target columns, with `n` spanning every column (rows) including slack
/// and the true match itself.
pub fn gap_loss(assign: &Mat, gt: &GroundTruthMatches, alpha: f64) -> Result<f64> {
    let (m, n) = (gt.m(), gt.n());
    if assign.shape() != (m + 1, n + 1) {
        return Err(Error::param("assignment shape does not match ground truth"));
    }
    for i in 0..=m {
        for j in 0..=n {
            if (i, j) != (m, n) && !(assign.get(i, j) > 0.0) {
                return Err(Error::Numerical(format!(
                    "assignment entry ({i}, {j}) = {} is not positive",
                    assign.get(i, j)
                )));
            }
        }
    }
    let mut log = assign.clone();
    log.data_mut().iter_mut().for_each(|v| *v = v.ln());
    let mut tape = Tape::new();
    let v = tape.leaf(log);
    let loss = gap_loss_on_tape(&mut tape, v, gt, alpha)?;
    Ok(tape.value(loss).scalar_value())
}

/// Mutual-best correspondences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardAssignment {
    m: usize,
    n: usize,
    row_match: Vec<Option<usize>>,
}

impl HardAssignment {
    /// The decisions a perfect matcher would make.
    pub fn from_truth(gt: &GroundTruthMatches) -> Self {
        Self {
            m: gt.m(),
            n: gt.n(),
            row_match: gt.source_to_target().to_vec(),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row_match(&self) -> &[Option<usize>] {
        &self.row_match
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.row_match
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| (i, j)))
            .collect()
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.row_match[i] == Some(j)
    }

    /// Dense binary `m × n` matrix.
    pub fn to_matrix(&self) -> Mat {
        Mat::from_fn(self.m, self.n, |i, j| if self.get(i, j) { 1.0 } else { 0.0 })
    }
}

fn first_argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (k, v) in values.enumerate() {
        if v > best_v || k == 0 {
            best = k;
            best_v = v;
        }
    }
    best
}

/// `A[i,j] = 1` iff `j` is row `i`'s argmax over all `n + 1` columns and `i`
/// is column `j`'s argmax over all `m + 1` rows. Ties go to the lower index.
pub fn hard_assignment(soft: &SoftAssignment) -> HardAssignment {
    let (m, n) = (soft.m(), soft.n());
    let log = soft.log();
    let row_best: Vec<usize> = (0..m).map(|i| first_argmax(log.row(i).iter().copied())).collect();
    let col_best: Vec<usize> = (0..n).map(|j| first_argmax((0..=m).map(|i| log.get(i, j)))).collect();
    let row_match = row_best
        .iter()
        .enumerate()
        .map(|(i, &j)| (j < n && col_best[j] == i).then_some(j))
        .collect();
    HardAssignment { m, n, row_match }
}

/// Pairs `(i, j)` where `y_j` is the nearest target to `T(x_i)`, `T(x_i)` is
/// the nearest transformed source to `y_j`, and their distance is below
/// `threshold`.
pub fn gt_correspondences(
    x: &PointCloud,
    y: &PointCloud,
    t_gt: &RigidTransform,
    threshold: f64,
) -> Result<GroundTruthMatches> {
    if !(threshold > 0.0) {
        return Err(Error::param(format!("threshold must be positive, got {threshold}")));
    }
    let moved = apply_transform(x, t_gt);
    let mut pairs = Vec::new();
    let t2s: Vec<Option<(usize, f64)>> = y.points().iter().map(|q| nearest(moved.points(), q)).collect();
    for (i, p) in moved.points().iter().enumerate() {
        if let Some((j, d2)) = nearest(y.points(), p) {
            if d2.sqrt() < threshold && t2s[j].map(|(s, _)| s) == Some(i) {
                pairs.push((i, j));
            }
        }
    }
    GroundTruthMatches::from_pairs(x.len(), y.len(), &pairs)
}

/// Correspondence quality in percent. `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchingMetrics {
    pub precision: Option<f64>,
    /// Fraction of source points whose decision (partner or unmatched) is right.
    pub accuracy: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

fn percent(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

pub fn matching_metrics(hard: &HardAssignment, gt: &GroundTruthMatches) -> Result<MatchingMetrics> {
    if (hard.m(), hard.n()) != (gt.m(), gt.n()) {
        return Err(Error::param("assignment and ground truth shapes differ"));
    }
    let mut tp = 0;
    let mut fp = 0;
    let mut correct = 0;
    for (pred, truth) in hard.row_match().iter().zip(gt.source_to_target()) {
        match pred {
            Some(j) if Some(*j) == *truth => tp += 1,
            Some(_) => fp += 1,
            None => {}
        }
        if pred == truth {
            correct += 1;
        }
    }
    let fn_ = gt.matched_count() - tp;
    Ok(MatchingMetrics {
        precision: percent(tp, tp + fp),
        accuracy: percent(correct, gt.m()),
        recall: percent(tp, tp + fn_),
        f1: percent(2 * tp, 2 * tp + fp + fn_),
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
    })
}

/// Pools confusion counts over many pairs before computing the ratios.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricsAccumulator {
    tp: usize,
    fp: usize,
    fn_: usize,
    correct: usize,
    sources: usize,
}

impl MetricsAccumulator {
    pub fn add(&mut self, hard: &HardAssignment, gt: &GroundTruthMatches) -> Result<()> {
        let m = matching_metrics(hard, gt)?;
        self.tp += m.true_positives;
        self.fp += m.false_positives;
        self.fn_ += m.false_negatives;
        self.correct += hard
            .row_match()
            .iter()
            .zip(gt.source_to_target())
            .filter(|(a, b)| a == b)
            .count();
        self.sources += gt.m();
        Ok(())
    }

    pub fn finish(&self) -> MatchingMetrics {
        MatchingMetrics {
            precision: percent(self.tp, self.tp + self.fp),
            accuracy: percent(self.correct, self.sources),
            recall: percent(self.tp, self.tp + self.fn_),
            f1: percent(2 * self.tp, 2 * self.tp + self.fp + self.fn_),
            true_positives: self.tp,
            false_positives: self.fp,
            false_negatives: self.fn_,
        }
    }
}
