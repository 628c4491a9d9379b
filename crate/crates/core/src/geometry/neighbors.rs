//! Exact neighbor queries by linear scan.
//!
//! Ordering is by distance with ties broken by the lower index, so every
//! query is deterministic.

use super::cloud::PointCloud;
use crate::error::{Error, Result};

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// `k` nearest rows to row `query` of a row-major `n × dim` buffer,
/// excluding `query` itself.
pub fn knn_rows(data: &[f64], dim: usize, query: usize, k: usize) -> Result<Vec<usize>> {
    let n = if dim == 0 { 0 } else { data.len() / dim };
    if query >= n {
        return Err(Error::param(format!("query index {query} out of range for {n} rows")));
    }
    if k == 0 || k >= n {
        return Err(Error::param(format!("k = {k} must satisfy 1 <= k < {n}")));
    }
    let q = &data[query * dim..(query + 1) * dim];
    let mut cand: Vec<(f64, usize)> = (0..n)
        .filter(|&j| j != query)
        .map(|j| (squared_distance(q, &data[j * dim..(j + 1) * dim]), j))
        .collect();
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, by_distance_then_index);
        cand.truncate(k);
    }
    cand.sort_unstable_by(by_distance_then_index);
    Ok(cand.into_iter().map(|(_, j)| j).collect())
}

/// `k`-NN lists for every row, concatenated row by row (`n · k` entries).
pub fn knn_graph_rows(data: &[f64], dim: usize, k: usize) -> Result<Vec<usize>> {
    let n = if dim == 0 { 0 } else { data.len() / dim };
    let mut out = Vec::with_capacity(n * k);
    for i in 0..n {
        out.extend(knn_rows(data, dim, i, k)?);
    }
    Ok(out)
}

/// Indices of the `k` nearest points to `cloud[query_index]`, excluding the query.
pub fn knn(cloud: &PointCloud, query_index: usize, k: usize) -> Result<Vec<usize>> {
    knn_rows(&cloud.coordinates(), 3, query_index, k)
}

/// All points within `radius` of the query (the query included), truncated to
/// the `k_max` nearest.
pub fn radius_neighbors(
    cloud: &PointCloud,
    query_index: usize,
    radius: f64,
    k_max: usize,
) -> Result<Vec<usize>> {
    if query_index >= cloud.len() {
        return Err(Error::param(format!(
            "query index {query_index} out of range for {} points",
            cloud.len()
        )));
    }
    if !(radius > 0.0) || k_max == 0 {
        return Err(Error::param(format!(
            "radius must be > 0 and k_max >= 1 (got {radius}, {k_max})"
        )));
    }
    let q = cloud.points()[query_index];
    let r2 = radius * radius;
    let mut cand: Vec<(f64, usize)> = cloud
        .points()
        .iter()
        .enumerate()
        .map(|(j, p)| ((p - q).norm_squared(), j))
        .filter(|&(d, _)| d <= r2)
        .collect();
    cand.sort_unstable_by(by_distance_then_index);
    cand.truncate(k_max);
    Ok(cand.into_iter().map(|(_, j)| j).collect())
}

/// Index of the nearest point in `targets` to `p`, with its squared distance.
pub fn nearest(targets: &[super::Point], p: &super::Point) -> Option<(usize, f64)> {
    targets
        .iter()
        .enumerate()
        .map(|(j, q)| ((q - p).norm_squared(), j))
        .min_by(by_distance_then_index)
        .map(|(d, j)| (j, d))
}
