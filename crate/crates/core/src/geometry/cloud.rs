use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Point = Vector3<f64>;

const NORMAL_UNIT_TOL: f64 = 1e-6;

/// Ordered set of 3D points (meters) with optional per-point unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
    normals: Option<Vec<Point>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidCloud(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self {
            points,
            normals: None,
        })
    }

    pub fn with_normals(points: Vec<Point>, normals: Vec<Point>) -> Result<Self> {
        let mut cloud = Self::new(points)?;
        cloud.set_normals(normals)?;
        Ok(cloud)
    }

    pub fn from_rows(rows: &[[f64; 3]]) -> Result<Self> {
        Self::new(rows.iter().map(|r| Point::new(r[0], r[1], r[2])).collect())
    }

    pub fn set_normals(&mut self, normals: Vec<Point>) -> Result<()> {
        if normals.len() != self.points.len() {
            return Err(Error::InvalidCloud(format!(
                "{} normals for {} points",
                normals.len(),
                self.points.len()
            )));
        }
        if let Some(i) = normals
            .iter()
            .position(|n| (n.norm() - 1.0).abs() > NORMAL_UNIT_TOL || !n.norm().is_finite())
        {
            return Err(Error::InvalidCloud(format!("normal {i} is not unit length")));
        }
        self.normals = Some(normals);
        Ok(())
    }

    pub fn clear_normals(&mut self) {
        self.normals = None;
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Point]> {
        self.normals.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point {
        if self.points.is_empty() {
            return Point::zeros();
        }
        self.points.iter().sum::<Point>() / self.points.len() as f64
    }

    /// Returns the sub-cloud at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|n| indices.iter().map(|&i| n[i]).collect()),
        }
    }

    /// Row-major `len × 3` coordinate buffer.
    pub fn coordinates(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    /// Builds a cloud without re-validating; callers guarantee finiteness.
    pub(crate) fn from_parts_unchecked(points: Vec<Point>, normals: Option<Vec<Point>>) -> Self {
        Self { points, normals }
    }
}

/// Pairs of (source index, target index), optionally scored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    pairs: Vec<(usize, usize)>,
    scores: Option<Vec<f64>>,
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self> {
        Self::check_bijective(&pairs)?;
        Ok(Self {
            pairs,
            scores: None,
        })
    }

    pub fn with_scores(pairs: Vec<(usize, usize)>, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != pairs.len() {
            return Err(Error::param(format!(
                "{} scores for {} correspondences",
                scores.len(),
                pairs.len()
            )));
        }
        Self::check_bijective(&pairs)?;
        Ok(Self {
            pairs,
            scores: Some(scores),
        })
    }

    fn check_bijective(pairs: &[(usize, usize)]) -> Result<()> {
        let mut src: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let mut dst: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        src.sort_unstable();
        dst.sort_unstable();
        if src.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::param("duplicate source index in correspondences"));
        }
        if dst.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::param("duplicate target index in correspondences"));
        }
        Ok(())
    }

    /// Checks that every index lies inside clouds of the given sizes.
    pub fn validate_against(&self, source_len: usize, target_len: usize) -> Result<()> {
        match self
            .pairs
            .iter()
            .find(|&&(s, t)| s >= source_len || t >= target_len)
        {
            Some(&(s, t)) => Err(Error::param(format!(
                "correspondence ({s}, {t}) out of range for clouds of {source_len} and {target_len} points"
            ))),
            None => Ok(()),
        }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn scores(&self) -> Option<&[f64]> {
        self.scores.as_deref()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}
