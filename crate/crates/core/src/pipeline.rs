//! End-to-end registration and the evaluation report.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datagen::{pair_seed, RegistrationPair};
use crate::error::{Error, Result};
use crate::geometry::{geodesic_angle_deg, mae, rmse, rotation_error, translation_error, CorrespondenceSet, PointCloud, RigidTransform};
use crate::matching::{hard_assignment, GroundTruthMatches, HardAssignment, MatchingMetrics, MetricsAccumulator, SoftAssignment};
use crate::model::{ForwardOptions, Model};
use crate::pose::{icp, ransac_register, svd_register, RansacConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Estimator {
    #[default]
    Ransac,
    Svd,
    Icp,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Ransac => "ransac",
            Estimator::Svd => "svd",
            Estimator::Icp => "icp",
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ransac" => Ok(Estimator::Ransac),
            "svd" => Ok(Estimator::Svd),
            "icp" => Ok(Estimator::Icp),
            _ => Err(Error::param(format!("unknown estimator '{s}' (ransac, svd, icp)"))),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub estimator: Estimator,
    pub ransac: RansacConfig,
    pub icp_max_iters: usize,
    pub icp_tol: f64,
    pub forward: ForwardOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            estimator: Estimator::Ransac,
            ransac: RansacConfig::default(),
            icp_max_iters: 100,
            icp_tol: 1e-10,
            forward: ForwardOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub transform: RigidTransform,
    /// Correspondences handed to the estimator (0 for ICP).
    pub matches: usize,
    /// RANSAC inliers, or every match for SVD; `None` for ICP.
    pub inliers: Option<usize>,
    /// Mutual-argmax decisions of the network, when it ran.
    pub hard: Option<HardAssignment>,
}

/// Real mutual matches scored by their assignment probability.
pub fn predicted_correspondences(soft: &SoftAssignment) -> Result<(HardAssignment, CorrespondenceSet)> {
    let hard = hard_assignment(soft);
    let pairs = hard.pairs();
    let scores = pairs.iter().map(|&(i, j)| soft.prob(i, j)).collect();
    let set = CorrespondenceSet::with_scores(pairs, scores)?;
    Ok((hard, set))
}

pub fn oracle_correspondences(gt: &GroundTruthMatches) -> Result<CorrespondenceSet> {
    let pairs = gt.pairs();
    let scores = vec![1.0; pairs.len()];
    CorrespondenceSet::with_scores(pairs, scores)
}

/// Corrupts `round(fraction · len)` correspondences by rotating their target
/// indices one step among themselves, so every touched pair becomes wrong
/// while the set stays one-to-one. Scores are left untouched.
pub fn contaminate(corr: &CorrespondenceSet, fraction: f64, seed: u64) -> Result<CorrespondenceSet> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::param(format!("outlier fraction must be in [0, 1], got {fraction}")));
    }
    let mut pairs = corr.pairs().to_vec();
    let count = (fraction * pairs.len() as f64).round() as usize;
    if count >= 2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picked = rand::seq::index::sample(&mut rng, pairs.len(), count).into_vec();
        let targets: Vec<usize> = picked.iter().map(|&k| pairs[k].1).collect();
        for (n, &k) in picked.iter().enumerate() {
            pairs[k].1 = targets[(n + 1) % count];
        }
    }
    match corr.scores() {
        Some(s) => CorrespondenceSet::with_scores(pairs, s.to_vec()),
        None => CorrespondenceSet::new(pairs),
    }
}

fn estimate(corr: &CorrespondenceSet, x: &PointCloud, y: &PointCloud, cfg: &PipelineConfig) -> Result<(RigidTransform, Option<usize>)> {
    match cfg.estimator {
        Estimator::Ransac => {
            let out = ransac_register(corr, x, y, &cfg.ransac)?;
            let n = out.inlier_count();
            Ok((out.transform, Some(n)))
        }
        Estimator::Svd => Ok((svd_register(corr, x, y)?, Some(corr.len()))),
        Estimator::Icp => Ok((icp(x, y, cfg.icp_max_iters, cfg.icp_tol)?.transform, None)),
    }
}

/// Registers `x` onto `y`. ICP ignores the network entirely.
pub fn register(model: &Model, x: &PointCloud, y: &PointCloud, cfg: &PipelineConfig) -> Result<Registration> {
    if cfg.estimator == Estimator::Icp {
        let (transform, _) = estimate(&CorrespondenceSet::default(), x, y, cfg)?;
        return Ok(Registration { transform, matches: 0, inliers: None, hard: None });
    }
    let px = model.prepare(x)?;
    let py = model.prepare(y)?;
    let soft = model.soft_assignment(&px, &py, cfg.forward)?;
    let (hard, corr) = predicted_correspondences(&soft)?;
    let (transform, inliers) = estimate(&corr, x, y, cfg)?;
    Ok(Registration { transform, matches: corr.len(), inliers, hard: Some(hard) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub pipeline: PipelineConfig,
    /// Use ground-truth matches instead of the network's.
    pub oracle_matches: bool,
    /// Fraction of correspondences corrupted before pose estimation.
    pub outlier_fraction: f64,
    /// Base seed for per-pair RANSAC and contamination streams.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            oracle_matches: false,
            outlier_fraction: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairResult {
    pub rot_err_deg: [f64; 3],
    /// Angle of the relative rotation.
    pub geodesic_deg: f64,
    pub trans_err_m: [f64; 3],
    /// Pose estimation failed and the identity was scored instead.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub pairs: usize,
    pub rmse_r_deg: f64,
    pub mae_r_deg: f64,
    /// Scalar-angle aggregates over the relative rotation.
    pub rmse_geodesic_deg: f64,
    pub mae_geodesic_deg: f64,
    pub rmse_t_m: f64,
    pub mae_t_m: f64,
    pub matching: MatchingMetrics,
    /// Pairs where the estimator raised an error.
    pub failures: usize,
    pub per_pair: Vec<PairResult>,
}

fn evaluate_one(model: &Model, pair: &RegistrationPair, index: usize, cfg: &EvalConfig) -> Result<(PairResult, HardAssignment)> {
    let (hard, corr) = if cfg.oracle_matches {
        let truth = HardAssignment::from_truth(&pair.matches);
        (truth, oracle_correspondences(&pair.matches)?)
    } else if cfg.pipeline.estimator == Estimator::Icp {
        // Matching metrics still describe the network even though ICP ignores it.
        let px = model.prepare(&pair.source)?;
        let py = model.prepare(&pair.target)?;
        let soft = model.soft_assignment(&px, &py, cfg.pipeline.forward)?;
        (hard_assignment(&soft), CorrespondenceSet::default())
    } else {
        let px = model.prepare(&pair.source)?;
        let py = model.prepare(&pair.target)?;
        let soft = model.soft_assignment(&px, &py, cfg.pipeline.forward)?;
        predicted_correspondences(&soft)?
    };
    let seed = pair_seed(cfg.seed, index as u64);
    let corr = if cfg.outlier_fraction > 0.0 {
        contaminate(&corr, cfg.outlier_fraction, seed ^ 0x5eed)?
    } else {
        corr
    };
    let pipeline = PipelineConfig {
        ransac: RansacConfig { seed, ..cfg.pipeline.ransac },
        ..cfg.pipeline
    };
    let (estimate, failed) = match estimate(&corr, &pair.source, &pair.target, &pipeline) {
        Ok((t, _)) => (t, false),
        Err(Error::Degenerate(_)) => (RigidTransform::identity(), true),
        Err(e) => return Err(e),
    };
    let rot = rotation_error(estimate.rotation(), pair.transform.rotation());
    let result = PairResult {
        rot_err_deg: rot.per_axis_deg,
        geodesic_deg: geodesic_angle_deg(estimate.rotation(), pair.transform.rotation()),
        trans_err_m: translation_error(estimate.translation(), pair.transform.translation()),
        failed,
    };
    Ok((result, hard))
}

/// Pose errors (per-axis Euler degrees, geodesic degrees, per-axis meters)
/// pooled over pairs
/// and matching metrics pooled over all correspondences.
pub fn evaluate(model: &Model, pairs: &[RegistrationPair], cfg: &EvalConfig) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::param("evaluation set is empty"));
    }
    let results: Vec<(PairResult, HardAssignment)> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| evaluate_one(model, p, i, cfg))
        .collect::<Result<_>>()?;
    let mut acc = MetricsAccumulator::default();
    for ((_, hard), p) in results.iter().zip(pairs) {
        acc.add(hard, &p.matches)?;
    }
    let per_pair: Vec<PairResult> = results.into_iter().map(|(r, _)| r).collect();
    let rot: Vec<[f64; 3]> = per_pair.iter().map(|r| r.rot_err_deg).collect();
    let geo: Vec<[f64; 1]> = per_pair.iter().map(|r| [r.geodesic_deg]).collect();
    let trans: Vec<[f64; 3]> = per_pair.iter().map(|r| r.trans_err_m).collect();
    Ok(EvalReport {
        pairs: pairs.len(),
        rmse_r_deg: rmse(&rot),
        mae_r_deg: mae(&rot),
        rmse_geodesic_deg: rmse(&geo),
        mae_geodesic_deg: mae(&geo),
        rmse_t_m: rmse(&trans),
        mae_t_m: mae(&trans),
        matching: acc.finish(),
        failures: per_pair.iter().filter(|r| r.failed).count(),
        per_pair,
    })
}

/// Shuffles pair indices with a seed; used to pick held-out subsets.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}
