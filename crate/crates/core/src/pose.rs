//! Rigid transform estimation from correspondences.

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{nearest, CorrespondenceSet, Point, PointCloud, RigidTransform};

/// Relative singular-value floor below which the cross-covariance counts as
/// rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Weighted least-squares rigid fit `dst ≈ R·src + t`.
pub fn kabsch(src: &[Point], dst: &[Point], weights: Option<&[f64]>) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::param(format!("{} source vs {} target points", src.len(), dst.len())));
    }
    if src.len() < 3 {
        return Err(Error::Degenerate(format!("need at least 3 pairs, got {}", src.len())));
    }
    let w: Vec<f64> = match weights {
        Some(w) if w.len() != src.len() => {
            return Err(Error::param(format!("{} weights for {} pairs", w.len(), src.len())));
        }
        Some(w) => {
            if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::param("weights must be finite and nonnegative"));
            }
            w.to_vec()
        }
        None => vec![1.0; src.len()],
    };
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::param("weights are all zero"));
    }
    let cs = src.iter().zip(&w).map(|(p, w)| p * *w).sum::<Vector3<f64>>() / total;
    let cd = dst.iter().zip(&w).map(|(p, w)| p * *w).sum::<Vector3<f64>>() / total;
    let mut h = Matrix3::zeros();
    for ((s, d), w) in src.iter().zip(dst).zip(&w) {
        h += (s - cs) * (d - cd).transpose() * *w;
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] <= RANK_TOL * sv[0] {
        return Err(Error::Degenerate(format!(
            "correspondences are collinear or coincident (singular values {:.3e}, {:.3e}, {:.3e})",
            sv[0], sv[1], sv[2]
        )));
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let t = cd - r * cs;
    RigidTransform::new(r, t).map_err(|e| Error::Numerical(format!("SVD produced an invalid rotation: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    /// Number of highest-score correspondences kept.
    pub k_c: usize,
    pub max_iters: usize,
    /// Meters.
    pub inlier_threshold: f64,
    pub sample_size: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            k_c: 256,
            max_iters: 500,
            inlier_threshold: 0.05,
            sample_size: 3,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_size < 3 {
            return Err(Error::param(format!("sample_size must be >= 3, got {}", self.sample_size)));
        }
        if self.k_c < self.sample_size {
            return Err(Error::param(format!(
                "k_c = {} is smaller than sample_size = {}",
                self.k_c, self.sample_size
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters must be >= 1"));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(Error::param("inlier_threshold must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacOutcome {
    pub transform: RigidTransform,
    /// One flag per input correspondence; dropped ones are never inliers.
    pub inliers: Vec<bool>,
    pub iterations: usize,
}

impl RansacOutcome {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// Indices of the `k` highest-score entries, ties to the lower index.
pub fn top_k_by_score(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

struct Hypothesis {
    transform: RigidTransform,
    inliers: Vec<usize>,
    residual: f64,
    iteration: usize,
}

impl Hypothesis {
    fn beats(&self, other: &Hypothesis) -> bool {
        (self.inliers.len(), other.residual, other.iteration) > (other.inliers.len(), self.residual, self.iteration)
    }
}

fn score_model(t: &RigidTransform, src: &[Point], dst: &[Point], threshold: f64) -> (Vec<usize>, f64) {
    let mut inliers = Vec::new();
    let mut sq = 0.0;
    for (k, (s, d)) in src.iter().zip(dst).enumerate() {
        let r = (t.apply_point(s) - d).norm();
        if r < threshold {
            inliers.push(k);
            sq += r * r;
        }
    }
    let residual = if inliers.is_empty() { f64::INFINITY } else { sq / inliers.len() as f64 };
    (inliers, residual)
}

/// RANSAC over the `k_c` best-scored correspondences (all of them, in input
/// order, when no scores are attached), followed by a refit on the winner's
/// inliers.
pub fn ransac_register(
    corr: &CorrespondenceSet,
    x: &PointCloud,
    y: &PointCloud,
    cfg: &RansacConfig,
) -> Result<RansacOutcome> {
    cfg.validate()?;
    corr.validate_against(x.len(), y.len())?;
    let kept: Vec<usize> = match corr.scores() {
        Some(s) => top_k_by_score(s, cfg.k_c),
        None => (0..corr.len().min(cfg.k_c)).collect(),
    };
    if kept.len() < cfg.sample_size {
        return Err(Error::Degenerate(format!(
            "{} correspondences available, RANSAC needs {}",
            kept.len(),
            cfg.sample_size
        )));
    }
    let src: Vec<Point> = kept.iter().map(|&k| x.points()[corr.pairs()[k].0]).collect();
    let dst: Vec<Point> = kept.iter().map(|&k| y.points()[corr.pairs()[k].1]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<Hypothesis> = None;
    let mut iterations = 0;
    for it in 0..cfg.max_iters {
        iterations = it + 1;
        let sample = rand::seq::index::sample(&mut rng, src.len(), cfg.sample_size).into_vec();
        let s: Vec<Point> = sample.iter().map(|&k| src[k]).collect();
        let d: Vec<Point> = sample.iter().map(|&k| dst[k]).collect();
        let Ok(t) = kabsch(&s, &d, None) else { continue };
        let (inliers, residual) = score_model(&t, &src, &dst, cfg.inlier_threshold);
        let h = Hypothesis { transform: t, inliers, residual, iteration: it };
        let all_in = h.inliers.len() == src.len();
        if best.as_ref().is_none_or(|b| h.beats(b)) {
            best = Some(h);
        }
        if all_in {
            break;
        }
    }
    let best = best.ok_or_else(|| Error::Degenerate("every RANSAC sample was degenerate".into()))?;

    let mut transform = best.transform;
    let mut inliers = best.inliers;
    if inliers.len() >= 3 {
        let s: Vec<Point> = inliers.iter().map(|&k| src[k]).collect();
        let d: Vec<Point> = inliers.iter().map(|&k| dst[k]).collect();
        if let Ok(t) = kabsch(&s, &d, None) {
            let (refit_inliers, _) = score_model(&t, &src, &dst, cfg.inlier_threshold);
            if refit_inliers.len() >= inliers.len() {
                transform = t;
                inliers = refit_inliers;
            }
        }
    }
    let mut mask = vec![false; corr.len()];
    for k in inliers {
        mask[kept[k]] = true;
    }
    Ok(RansacOutcome {
        transform,
        inliers: mask,
        iterations,
    })
}

/// Unweighted least-squares fit over every correspondence.
pub fn svd_register(corr: &CorrespondenceSet, x: &PointCloud, y: &PointCloud) -> Result<RigidTransform> {
    corr.validate_against(x.len(), y.len())?;
    let src: Vec<Point> = corr.pairs().iter().map(|&(i, _)| x.points()[i]).collect();
    let dst: Vec<Point> = corr.pairs().iter().map(|&(_, j)| y.points()[j]).collect();
    kabsch(&src, &dst, None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpOutcome {
    pub transform: RigidTransform,
    pub iterations: usize,
    /// Mean squared nearest-neighbor distance at the start of each iteration
    /// followed by the value under the returned transform.
    pub mse_history: Vec<f64>,
}

fn match_nearest(x: &PointCloud, y: &PointCloud, t: &RigidTransform) -> (Vec<Point>, f64) {
    let mut matched = Vec::with_capacity(x.len());
    let mut sq = 0.0;
    for p in x.points() {
        let (j, d2) = nearest(y.points(), &t.apply_point(p)).expect("target cloud is non-empty");
        matched.push(y.points()[j]);
        sq += d2;
    }
    (matched, sq / x.len() as f64)
}

/// Point-to-point ICP from the identity. Stops when the update moves the
/// rotation by less than `tol` radians and the translation by less than `tol`
/// meters, or after `max_iters` iterations. A degenerate fit ends the loop
/// with the current estimate.
pub fn icp(x: &PointCloud, y: &PointCloud, max_iters: usize, tol: f64) -> Result<IcpOutcome> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidCloud("ICP needs non-empty clouds".into()));
    }
    let mut t = RigidTransform::identity();
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters {
        let (matched, mse) = match_nearest(x, y, &t);
        history.push(mse);
        iterations += 1;
        let Ok(next) = kabsch(x.points(), &matched, None) else { break };
        let delta = next.compose(&t.invert());
        let angle = crate::geometry::geodesic_angle_deg(delta.rotation(), &Matrix3::identity()).to_radians();
        let moved = (next.translation() - t.translation()).norm();
        t = next;
        if angle < tol && moved < tol {
            break;
        }
    }
    history.push(match_nearest(x, y, &t).1);
    Ok(IcpOutcome {
        transform: t,
        iterations,
        mse_history: history,
    })
}
