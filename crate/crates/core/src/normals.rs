//! Surface normals from local PCA, oriented toward the denser side of the
//! surface, and the sinusoidal embedding of normal-to-normal angles that
//! biases self-attention.

use nalgebra::{Matrix3, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::{radius_neighbors, Point, PointCloud};
use crate::tape::{Tape, Var};
use crate::tensor::Mat;

pub const DEFAULT_RADIUS: f64 = 0.3;
pub const DEFAULT_MAX_NEIGHBORS: usize = 128;
pub const DEFAULT_TAU: f64 = 1.0;

/// Relative eigenvalue floor below which a neighborhood is treated as a line.
const RANK_EPS: f64 = 1e-10;

/// Oriented unit normals with per-point quality flags.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalField {
    pub normals: Vec<Point>,
    /// Fewer than 3 neighbors or a collinear neighborhood; normal is `+z`.
    pub degenerate: Vec<bool>,
    /// The orientation sum vanished, so the sign is not determined by geometry.
    pub ambiguous: Vec<bool>,
}

impl NormalField {
    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    /// True where the normal is geometrically determined, sign included.
    pub fn is_reliable(&self, i: usize) -> bool {
        !self.degenerate[i] && !self.ambiguous[i]
    }
}

/// `Σ_j nᵀ(x_i − x_j)` over the neighborhood; non-negative for an oriented normal.
pub fn orientation_sum(normal: &Point, center: &Point, neighborhood: &[Point]) -> f64 {
    neighborhood.iter().map(|x| normal.dot(&(center - x))).sum()
}

pub fn estimate_normals(cloud: &PointCloud, radius: f64, k_nn: usize) -> Result<NormalField> {
    if cloud.len() < 3 {
        return Err(Error::param(format!(
            "normal estimation needs at least 3 points, got {}",
            cloud.len()
        )));
    }
    if !(radius > 0.0) {
        return Err(Error::param(format!("radius must be positive, got {radius}")));
    }
    let n = cloud.len();
    let mut field = NormalField {
        normals: Vec::with_capacity(n),
        degenerate: Vec::with_capacity(n),
        ambiguous: Vec::with_capacity(n),
    };
    for i in 0..n {
        let hood: Vec<Point> = radius_neighbors(cloud, i, radius, k_nn)?
            .into_iter()
            .map(|j| cloud.points()[j])
            .collect();
        let center = cloud.points()[i];
        match pca_normal(&hood) {
            Some(normal) => {
                let s = orientation_sum(&normal, &center, &hood);
                let scale: f64 = hood.iter().map(|x| (center - x).norm()).sum();
                let oriented = if s < 0.0 { -normal } else { normal };
                field.normals.push(oriented);
                field.degenerate.push(false);
                field.ambiguous.push(s.abs() <= 1e-9 * scale.max(f64::MIN_POSITIVE));
            }
            None => {
                field.normals.push(Point::z());
                field.degenerate.push(true);
                field.ambiguous.push(false);
            }
        }
    }
    Ok(field)
}

/// Eigenvector of the neighborhood covariance with the smallest eigenvalue,
/// or `None` for fewer than 3 points or a rank-deficient (collinear) spread.
fn pca_normal(hood: &[Point]) -> Option<Point> {
    if hood.len() < 3 {
        return None;
    }
    let mean = hood.iter().sum::<Point>() / hood.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in hood {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= hood.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (mid, hi) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if !(hi > 0.0) || mid <= RANK_EPS * hi {
        return None;
    }
    let v: Point = eig.eigenvectors.column(order[0]).into_owned();
    Some(v.normalize())
}

/// Angle between two unit normals, radians in `[0, π]`.
pub fn normal_angle(a: &Point, b: &Point) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AngleUnit {
    #[default]
    Radians,
    Degrees,
}

impl AngleUnit {
    pub fn name(self) -> &'static str {
        match self {
            Self::Radians => "radians",
            Self::Degrees => "degrees",
        }
    }
}

impl std::str::FromStr for AngleUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "radians" => Ok(Self::Radians),
            "degrees" => Ok(Self::Degrees),
            _ => Err(Error::param(format!("unknown angle unit '{s}' (expected radians or degrees)"))),
        }
    }
}

/// Interleaved sin/cos encoding of an angle at `d / 2` geometric frequencies:
/// component `2k` is `sin(angle / (tau · 10000^(2k/d)))`, `2k+1` the cosine.
pub fn angle_embedding(angle: f64, d: usize, tau: f64) -> Result<Vec<f64>> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::param(format!("embedding width must be even and positive, got {d}")));
    }
    if !(tau > 0.0) {
        return Err(Error::param(format!("tau must be positive, got {tau}")));
    }
    let mut out = vec![0.0; d];
    fill_embedding(angle, tau, &mut out);
    Ok(out)
}

fn fill_embedding(angle: f64, tau: f64, out: &mut [f64]) {
    let d = out.len() as f64;
    for k in 0..out.len() / 2 {
        let arg = angle / (tau * 10000f64.powf(2.0 * k as f64 / d));
        out[2 * k] = arg.sin();
        out[2 * k + 1] = arg.cos();
    }
}

/// Angle embeddings for every ordered pair `(i, j)`, row `i·n + j` of an
/// `n² × d` matrix.
pub fn pair_angle_embeddings(field: &NormalField, d: usize, tau: f64, unit: AngleUnit) -> Result<Mat> {
    angle_embedding(0.0, d, tau)?;
    let n = field.len();
    let mut out = Mat::zeros(n * n, d);
    for i in 0..n {
        for j in 0..n {
            let mut angle = normal_angle(&field.normals[i], &field.normals[j]);
            if unit == AngleUnit::Degrees {
                angle = angle.to_degrees();
            }
            fill_embedding(angle, tau, out.row_mut(i * n + j));
        }
    }
    Ok(out)
}

/// Projects pair embeddings `g` (`n² × d`) through the learned `d × d` matrix.
pub fn embed_pairs(tape: &mut Tape, pair_embeddings: Var, projection: Var) -> Result<Var> {
    let (_, d) = tape.value(pair_embeddings).shape();
    let shape = tape.value(projection).shape();
    if shape != (d, d) {
        return Err(Error::param(format!(
            "embedding projection is {}x{}, expected {d}x{d}",
            shape.0, shape.1
        )));
    }
    Ok(tape.matmul(pair_embeddings, projection))
}
