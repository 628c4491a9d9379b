//! Synthetic registration pairs.
//!
//! A source cloud is subsampled, scaled into the unit sphere, moved by a
//! random rigid transform and shuffled to make the target. Optional partial
//! overlap keeps the nearest points around an independent random anchor in
//! each cloud, and optional noise perturbs every coordinate of both clouds.
//! Ground truth comes from index bookkeeping, so it stays exact under
//! cropping and noise.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::io::{read_cloud, write_cloud};
use crate::geometry::{apply_transform, Point, PointCloud, RigidTransform};
use crate::matching::GroundTruthMatches;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Standard deviation in meters.
    pub sigma: f64,
    /// Absolute clip in meters.
    pub clip: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { sigma: 0.1, clip: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSpec {
    pub n_points: usize,
    /// Per-axis Euler angle range in degrees.
    pub rot_range_deg: [f64; 2],
    /// Per-axis translation range in meters.
    pub trans_range_m: [f64; 2],
    pub crop_keep: Option<usize>,
    pub noise: Option<NoiseSpec>,
    pub seed: u64,
}

impl Default for PairSpec {
    fn default() -> Self {
        Self {
            n_points: 1024,
            rot_range_deg: [0.0, 45.0],
            trans_range_m: [0.0, 0.5],
            crop_keep: None,
            noise: None,
            seed: 0,
        }
    }
}

impl PairSpec {
    pub fn partial(n_points: usize, keep: usize) -> Self {
        Self {
            n_points,
            crop_keep: Some(keep),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points < 3 {
            return Err(Error::param(format!("n_points must be >= 3, got {}", self.n_points)));
        }
        for (name, [lo, hi]) in [("rotation", self.rot_range_deg), ("translation", self.trans_range_m)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::param(format!("{name} range [{lo}, {hi}] is invalid")));
            }
        }
        if let Some(keep) = self.crop_keep {
            if keep < 3 || keep > self.n_points {
                return Err(Error::param(format!(
                    "crop_keep = {keep} must lie in [3, n_points = {}]",
                    self.n_points
                )));
            }
        }
        if let Some(n) = self.noise {
            if !(n.sigma >= 0.0) || !(n.clip >= 0.0) {
                return Err(Error::param("noise sigma and clip must be nonnegative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationPair {
    pub source: PointCloud,
    pub target: PointCloud,
    /// Maps source coordinates onto target coordinates.
    pub transform: RigidTransform,
    pub matches: GroundTruthMatches,
}

/// Centers the cloud on its centroid and scales the farthest point to radius 1.
pub fn scale_to_unit_sphere(cloud: &PointCloud) -> Result<PointCloud> {
    let c = cloud.centroid();
    let r = cloud.points().iter().map(|p| (p - c).norm()).fold(0.0, f64::max);
    if !(r > 0.0) {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    PointCloud::new(cloud.points().iter().map(|p| (p - c) / r).collect())
}

/// Indices of the `keep` points nearest to `points[anchor]`, in ascending
/// index order.
pub fn crop_around(points: &[Point], anchor: usize, keep: usize) -> Vec<usize> {
    let a = points[anchor];
    let mut order: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| ((p - a).norm_squared(), i)).collect();
    order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let mut kept: Vec<usize> = order.into_iter().take(keep).map(|(_, i)| i).collect();
    kept.sort_unstable();
    kept
}

fn add_noise(cloud: &PointCloud, noise: NoiseSpec, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
    if noise.sigma == 0.0 {
        return Ok(cloud.clone());
    }
    let normal = Normal::new(0.0, noise.sigma).map_err(|e| Error::param(e.to_string()))?;
    let mut jitter = || normal.sample(rng).clamp(-noise.clip, noise.clip);
    PointCloud::new(
        cloud
            .points()
            .iter()
            .map(|p| p + Point::new(jitter(), jitter(), jitter()))
            .collect(),
    )
}

pub fn make_pair(source: &PointCloud, spec: &PairSpec) -> Result<RegistrationPair> {
    spec.validate()?;
    if source.len() < spec.n_points {
        return Err(Error::InvalidCloud(format!(
            "source has {} points, {} requested",
            source.len(),
            spec.n_points
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let picked = if source.len() > spec.n_points {
        let mut idx = rand::seq::index::sample(&mut rng, source.len(), spec.n_points).into_vec();
        idx.sort_unstable();
        source.select(&idx)
    } else {
        PointCloud::new(source.points().to_vec())?
    };
    let x = scale_to_unit_sphere(&picked)?;

    let [rlo, rhi] = spec.rot_range_deg;
    let [tlo, thi] = spec.trans_range_m;
    let mut angle = || rng.random_range(rlo..=rhi).to_radians();
    let (ax, ay, az) = (angle(), angle(), angle());
    let mut shift = || rng.random_range(tlo..=thi);
    let t = Point::new(shift(), shift(), shift());
    let transform = RigidTransform::from_euler_xyz(ax, ay, az, t);

    let mut perm: Vec<usize> = (0..x.len()).collect();
    perm.shuffle(&mut rng);
    let y = apply_transform(&x, &transform).select(&perm);

    let (src_keep, tgt_keep) = match spec.crop_keep {
        Some(keep) => {
            let a = rng.random_range(0..x.len());
            let b = rng.random_range(0..y.len());
            (crop_around(x.points(), a, keep), crop_around(y.points(), b, keep))
        }
        None => ((0..x.len()).collect(), (0..y.len()).collect()),
    };

    // Target slot k holds source point perm[k].
    let mut src_slot = vec![None; x.len()];
    for (new, &old) in src_keep.iter().enumerate() {
        src_slot[old] = Some(new);
    }
    let pairs: Vec<(usize, usize)> = tgt_keep
        .iter()
        .enumerate()
        .filter_map(|(new_k, &k)| src_slot[perm[k]].map(|i| (i, new_k)))
        .collect();
    let matches = GroundTruthMatches::from_pairs(src_keep.len(), tgt_keep.len(), &pairs)?;

    let mut source = x.select(&src_keep);
    let mut target = y.select(&tgt_keep);
    if let Some(noise) = spec.noise {
        source = add_noise(&source, noise, &mut rng)?;
        target = add_noise(&target, noise, &mut rng)?;
    }
    Ok(RegistrationPair {
        source,
        target,
        transform,
        matches,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Plane,
    Sphere,
    Torus,
    Box,
    Composite,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [Self::Plane, Self::Sphere, Self::Torus, Self::Box, Self::Composite];

    pub fn name(self) -> &'static str {
        match self {
            Self::Plane => "plane",
            Self::Sphere => "sphere",
            Self::Torus => "torus",
            Self::Box => "box",
            Self::Composite => "composite",
        }
    }
}

impl std::str::FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::param(format!("unknown shape '{s}' (expected plane, sphere, torus, box or composite)")))
    }
}

fn sample_primitive(kind: ShapeKind, n: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    match kind {
        ShapeKind::Plane => (0..n)
            .map(|_| Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0))
            .collect(),
        ShapeKind::Sphere => (0..n)
            .map(|_| loop {
                let v = Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let r = v.norm();
                if r > 1e-3 && r <= 1.0 {
                    break v / r;
                }
            })
            .collect(),
        ShapeKind::Torus => {
            let (big, small) = (0.7, 0.3);
            (0..n)
                .map(|_| {
                    let u = rng.random_range(0.0..std::f64::consts::TAU);
                    let v = rng.random_range(0.0..std::f64::consts::TAU);
                    let ring = big + small * v.cos();
                    Point::new(ring * u.cos(), ring * u.sin(), small * v.sin())
                })
                .collect()
        }
        ShapeKind::Box => {
            let half = [0.8, 0.5, 0.3];
            let areas = [half[1] * half[2], half[0] * half[2], half[0] * half[1]];
            let total: f64 = areas.iter().sum();
            (0..n)
                .map(|_| {
                    let mut pick = rng.random_range(0.0..total);
                    let mut axis = 0;
                    while axis < 2 && pick >= areas[axis] {
                        pick -= areas[axis];
                        axis += 1;
                    }
                    let mut p = [0.0; 3];
                    for (k, h) in half.iter().enumerate() {
                        p[k] = rng.random_range(-h..*h);
                    }
                    p[axis] = if rng.random_bool(0.5) { half[axis] } else { -half[axis] };
                    Point::new(p[0], p[1], p[2])
                })
                .collect()
        }
        ShapeKind::Composite => unreachable!("composite is assembled from primitives"),
    }
}

/// Deterministic samples of a parametric surface. `Composite` joins two
/// different primitives with random scale, orientation and offset.
pub fn synth_shapes(kind: ShapeKind, n: usize, seed: u64) -> Result<PointCloud> {
    if n < 8 {
        return Err(Error::param(format!("need at least 8 points, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if kind != ShapeKind::Composite {
        return PointCloud::new(sample_primitive(kind, n, &mut rng));
    }
    let prims = [ShapeKind::Plane, ShapeKind::Sphere, ShapeKind::Torus, ShapeKind::Box];
    let a = rng.random_range(0..prims.len());
    let b = (a + rng.random_range(1..prims.len())) % prims.len();
    let mut points = Vec::with_capacity(n);
    for (part, kind) in [(n / 2, prims[a]), (n - n / 2, prims[b])] {
        let scale = Point::new(rng.random_range(0.4..1.0), rng.random_range(0.4..1.0), rng.random_range(0.4..1.0));
        let pose = RigidTransform::from_euler_xyz(
            rng.random_range(0.0..std::f64::consts::TAU),
            rng.random_range(0.0..std::f64::consts::TAU),
            rng.random_range(0.0..std::f64::consts::TAU),
            Point::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6)),
        );
        points.extend(
            sample_primitive(kind, part, &mut rng)
                .into_iter()
                .map(|p| pose.apply_point(&p.component_mul(&scale))),
        );
    }
    PointCloud::new(points)
}

/// Seed of pair `index` under `base`.
pub fn pair_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSpec {
    pub pairs: usize,
    pub shape: ShapeKind,
    pub pair: PairSpec,
}

/// Pair `index` of a dataset: a fresh shape and pair draw, both seeded from
/// `pair_seed(spec.pair.seed, index)`.
pub fn make_dataset_pair(spec: &DatasetSpec, index: usize) -> Result<RegistrationPair> {
    let seed = pair_seed(spec.pair.seed, index as u64);
    let shape = synth_shapes(spec.shape, spec.pair.n_points, seed)?;
    make_pair(&shape, &PairSpec { seed: seed.wrapping_add(1), ..spec.pair })
}

pub fn make_dataset(spec: &DatasetSpec) -> Result<Vec<RegistrationPair>> {
    (0..spec.pairs).map(|i| make_dataset_pair(spec, i)).collect()
}

pub const MANIFEST_HEADER: &str = "rocnet-manifest v1";

/// One manifest line: cloud files and ground truth of a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub id: usize,
    pub source: PathBuf,
    pub target: PathBuf,
    pub transform: RigidTransform,
    pub matches: Vec<(usize, usize)>,
}

impl ManifestRecord {
    pub fn to_line(&self) -> String {
        let mut s = format!("pair {} {} {}", self.id, self.source.display(), self.target.display());
        let m = self.transform.to_row_major();
        s.push_str(" rot");
        for v in &m[..9] {
            write!(s, " {v:?}").unwrap();
        }
        s.push_str(" trans");
        for v in &m[9..] {
            write!(s, " {v:?}").unwrap();
        }
        s.push_str(" matches ");
        if self.matches.is_empty() {
            s.push('-');
        } else {
            let parts: Vec<String> = self.matches.iter().map(|(i, j)| format!("{i}:{j}")).collect();
            s.push_str(&parts.join(","));
        }
        s
    }

    pub fn parse_line(line: &str) -> std::result::Result<Self, String> {
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 20 || tok[0] != "pair" || tok[4] != "rot" || tok[14] != "trans" || tok[18] != "matches" {
            return Err("expected 'pair <id> <source> <target> rot <9 numbers> trans <3 numbers> matches <list>'".into());
        }
        let id = tok[1].parse().map_err(|_| format!("bad pair id '{}'", tok[1]))?;
        let mut m = [0.0; 12];
        for (k, t) in tok[5..14].iter().chain(&tok[15..18]).enumerate() {
            m[k] = t.parse().map_err(|_| format!("bad number '{t}'"))?;
        }
        let transform = RigidTransform::from_row_major(&m).map_err(|e| e.to_string())?;
        let matches = if tok[19] == "-" {
            Vec::new()
        } else {
            tok[19]
                .split(',')
                .map(|p| {
                    let (i, j) = p.split_once(':').ok_or_else(|| format!("bad match '{p}'"))?;
                    Ok((
                        i.parse().map_err(|_| format!("bad match '{p}'"))?,
                        j.parse().map_err(|_| format!("bad match '{p}'"))?,
                    ))
                })
                .collect::<std::result::Result<_, String>>()?
        };
        Ok(Self {
            id,
            source: PathBuf::from(tok[2]),
            target: PathBuf::from(tok[3]),
            transform,
            matches,
        })
    }
}

/// Writes each pair as two XYZ files plus `manifest.txt` under `dir`.
pub fn write_dataset(dir: &Path, pairs: &[RegistrationPair]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut text = String::from(MANIFEST_HEADER);
    text.push('\n');
    for (id, pair) in pairs.iter().enumerate() {
        let (xs, ys) = (format!("pair_{id:05}_x.xyz"), format!("pair_{id:05}_y.xyz"));
        write_cloud(&dir.join(&xs), &pair.source)?;
        write_cloud(&dir.join(&ys), &pair.target)?;
        let rec = ManifestRecord {
            id,
            source: xs.into(),
            target: ys.into(),
            transform: pair.transform,
            matches: pair.matches.pairs(),
        };
        text.push_str(&rec.to_line());
        text.push('\n');
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, l)) if l.trim() == MANIFEST_HEADER => {}
        _ => return Err(Error::format(path, format!("missing '{MANIFEST_HEADER}' header"))),
    }
    lines
        .map(|(n, l)| ManifestRecord::parse_line(l).map_err(|m| Error::format(path, format!("line {}: {m}", n + 1))))
        .collect()
}

/// Loads every pair of a manifest; cloud paths resolve against its directory.
pub fn load_dataset(manifest: &Path) -> Result<Vec<RegistrationPair>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(manifest)?
        .into_iter()
        .map(|rec| {
            let source = read_cloud(&base.join(&rec.source))?;
            let target = read_cloud(&base.join(&rec.target))?;
            let matches = GroundTruthMatches::from_pairs(source.len(), target.len(), &rec.matches)
                .map_err(|e| Error::format(manifest, format!("pair {}: {e}", rec.id)))?;
            Ok(RegistrationPair {
                source,
                target,
                transform: rec.transform,
                matches,
            })
        })
        .collect()
}
