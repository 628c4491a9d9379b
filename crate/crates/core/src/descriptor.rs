//! EdgeConv graph descriptor.
//!
//! Each EdgeConv layer links every point to its `k` nearest neighbors in the
//! layer's input space, applies a shared two-layer perceptron to
//! `concat(f_i, f_j − f_i)` for every edge and max-pools over the neighbors.
//! The graph of the second layer is rebuilt in the feature space produced by
//! the first. A pointwise linear layer fuses the concatenated layer outputs
//! into the final width.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::knn_graph_rows;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Mat;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const DEFAULT_K_GRAPH: usize = 16;

#[derive(Debug, Clone)]
pub struct EdgeConvLayer {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub out_width: usize,
}

#[derive(Debug, Clone)]
pub struct EdgeConvParams {
    pub layers: Vec<EdgeConvLayer>,
    pub fusion_w: ParamId,
    pub fusion_b: ParamId,
    pub k_graph: usize,
    pub out_width: usize,
}

impl EdgeConvParams {
    /// Registers an EdgeConv stack with the given per-layer widths, fused into
    /// `out_width` features.
    pub fn init(
        store: &mut ParamStore,
        in_width: usize,
        widths: &[usize],
        out_width: usize,
        k_graph: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if widths.is_empty() {
            return Err(Error::param("EdgeConv stack needs at least one layer"));
        }
        if k_graph == 0 {
            return Err(Error::param("k_graph must be at least 1"));
        }
        let mut layers = Vec::with_capacity(widths.len());
        let mut c_in = in_width;
        for (l, &w) in widths.iter().enumerate() {
            layers.push(EdgeConvLayer {
                w1: store.add_weight(format!("descriptor.edge{l}.w1"), 2 * c_in, w, rng),
                b1: store.add_bias(format!("descriptor.edge{l}.b1"), w),
                w2: store.add_weight(format!("descriptor.edge{l}.w2"), w, w, rng),
                b2: store.add_bias(format!("descriptor.edge{l}.b2"), w),
                out_width: w,
            });
            c_in = w;
        }
        let concat: usize = widths.iter().sum();
        Ok(Self {
            layers,
            fusion_w: store.add_weight("descriptor.fusion.w", concat, out_width, rng),
            fusion_b: store.add_bias("descriptor.fusion.b", out_width),
            k_graph,
            out_width,
        })
    }
}

/// Neighbor lists (`n · k` flat) of the `k`-NN graph in feature space, where
/// `k = min(k_graph, n − 1)`.
pub fn build_feature_graph(features: &Mat, k_graph: usize) -> Result<(Vec<usize>, usize)> {
    let n = features.rows();
    if n < 2 {
        return Err(Error::param(format!("feature graph needs at least 2 points, got {n}")));
    }
    let k = k_graph.min(n - 1);
    Ok((knn_graph_rows(features.data(), features.cols(), k)?, k))
}

/// `out_i = max_j MLP(concat(f_i, f_j − f_i))` over the `k` neighbors of `i`.
pub fn edge_conv(tape: &mut Tape, features: Var, graph: &[usize], k: usize, layer: &EdgeConvLayer, bound: &Bound) -> Var {
    let n = tape.value(features).rows();
    debug_assert_eq!(graph.len(), n * k);
    let centers: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, k)).collect();
    let center = tape.gather_rows(features, centers);
    let neighbor = tape.gather_rows(features, graph.to_vec());
    let diff = tape.sub(neighbor, center);
    let edge = tape.concat_cols(&[center, diff]);
    let h = tape.linear(edge, bound[layer.w1], Some(bound[layer.b1]));
    let h = tape.leaky_relu(h, LEAKY_SLOPE);
    let h = tape.linear(h, bound[layer.w2], Some(bound[layer.b2]));
    let h = tape.leaky_relu(h, LEAKY_SLOPE);
    tape.segment_max(h, k)
}

/// Runs the EdgeConv stack on an `n × 3` coordinate matrix.
pub fn dgcnn_forward(tape: &mut Tape, coords: Var, params: &EdgeConvParams, bound: &Bound) -> Result<Var> {
    let mut x = coords;
    let mut outputs = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (graph, k) = build_feature_graph(tape.value(x), params.k_graph)?;
        tape.record_decision(&graph);
        x = edge_conv(tape, x, &graph, k, layer, bound);
        outputs.push(x);
    }
    let cat = if outputs.len() == 1 {
        outputs[0]
    } else {
        tape.concat_cols(&outputs)
    };
    Ok(tape.linear(cat, bound[params.fusion_w], Some(bound[params.fusion_b])))
}
