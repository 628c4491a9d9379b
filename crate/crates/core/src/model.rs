//! The full matching network: descriptor, normal-angle embeddings,
//! attention stack, score matrix and slack Sinkhorn.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{transformer_forward, AttentionOptions, AttentionScale, TransformerParams};
use crate::descriptor::EdgeConvParams;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::matching::{gap_loss_on_tape, score_matrix, sinkhorn_log, GroundTruthMatches, SoftAssignment};
use crate::normals::{embed_pairs, estimate_normals, pair_angle_embeddings, AngleUnit, NormalField};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Mat;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Feature width `d`.
    pub width: usize,
    /// Attention rounds `L`.
    pub layers: usize,
    pub heads: usize,
    pub edge_widths: Vec<usize>,
    pub k_graph: usize,
    pub tau: f64,
    pub angle_unit: AngleUnit,
    /// Meters.
    pub normal_radius: f64,
    pub normal_max_neighbors: usize,
    pub sinkhorn_iters: usize,
    pub gap_margin: f64,
    pub slack_init: f64,
    pub attention_scale: AttentionScale,
    /// Subtract each cloud's centroid before the descriptor.
    pub center_inputs: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width: 96,
            layers: 6,
            heads: crate::attention::DEFAULT_HEADS,
            edge_widths: vec![32, 64],
            k_graph: crate::descriptor::DEFAULT_K_GRAPH,
            tau: crate::normals::DEFAULT_TAU,
            angle_unit: AngleUnit::Radians,
            normal_radius: crate::normals::DEFAULT_RADIUS,
            normal_max_neighbors: crate::normals::DEFAULT_MAX_NEIGHBORS,
            sinkhorn_iters: crate::matching::DEFAULT_SINKHORN_ITERS,
            gap_margin: crate::matching::DEFAULT_GAP_MARGIN,
            slack_init: crate::matching::DEFAULT_SLACK_INIT,
            attention_scale: AttentionScale::PerHead,
            center_inputs: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.width % 2 != 0 {
            return Err(Error::param(format!("width must be even and positive, got {}", self.width)));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::param(format!("{} heads do not divide width {}", self.heads, self.width)));
        }
        if self.edge_widths.is_empty() || self.edge_widths.contains(&0) {
            return Err(Error::param("edge widths must be a non-empty list of positive integers"));
        }
        if self.k_graph == 0 {
            return Err(Error::param("k_graph must be >= 1"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::param(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.normal_radius > 0.0) || self.normal_max_neighbors < 3 {
            return Err(Error::param("normal radius must be positive and max neighbors >= 3"));
        }
        if self.sinkhorn_iters == 0 {
            return Err(Error::param("sinkhorn_iters must be >= 1"));
        }
        if !(self.gap_margin > 0.0) {
            return Err(Error::param("gap margin must be positive"));
        }
        if !self.slack_init.is_finite() {
            return Err(Error::param("slack_init must be finite"));
        }
        Ok(())
    }

    /// `(key, value)` pairs in a stable order, for checkpoint headers.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let widths: Vec<String> = self.edge_widths.iter().map(|w| w.to_string()).collect();
        vec![
            ("width", self.width.to_string()),
            ("layers", self.layers.to_string()),
            ("heads", self.heads.to_string()),
            ("edge_widths", widths.join(",")),
            ("k_graph", self.k_graph.to_string()),
            ("tau", format!("{:?}", self.tau)),
            ("angle_unit", self.angle_unit.name().to_string()),
            ("normal_radius", format!("{:?}", self.normal_radius)),
            ("normal_max_neighbors", self.normal_max_neighbors.to_string()),
            ("sinkhorn_iters", self.sinkhorn_iters.to_string()),
            ("gap_margin", format!("{:?}", self.gap_margin)),
            ("slack_init", format!("{:?}", self.slack_init)),
            ("attention_scale", self.attention_scale.name().to_string()),
            ("center_inputs", self.center_inputs.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim().parse().map_err(|_| Error::param(format!("{key}: cannot parse '{v}'")))
        }
        match key {
            "width" => self.width = num(key, value)?,
            "layers" => self.layers = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "edge_widths" => {
                self.edge_widths = value.split(',').map(|w| num(key, w)).collect::<Result<_>>()?;
            }
            "k_graph" => self.k_graph = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "angle_unit" => self.angle_unit = value.parse()?,
            "normal_radius" => self.normal_radius = num(key, value)?,
            "normal_max_neighbors" => self.normal_max_neighbors = num(key, value)?,
            "sinkhorn_iters" => self.sinkhorn_iters = num(key, value)?,
            "gap_margin" => self.gap_margin = num(key, value)?,
            "slack_init" => self.slack_init = num(key, value)?,
            "attention_scale" => self.attention_scale = value.parse()?,
            "center_inputs" => self.center_inputs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Err(Error::param(format!("unknown model setting '{key}'"))),
        }
        Ok(())
    }
}

/// Per-call switches that do not change the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Normal-angle bias in self-attention; off reproduces a model whose
    /// `W_R` are all zero.
    pub normal_bias: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self { normal_bias: true }
    }
}

/// Non-differentiable preprocessing of one cloud.
#[derive(Debug, Clone)]
pub struct PreparedCloud {
    pub coords: Mat,
    pub normals: NormalField,
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub hx: Var,
    pub hy: Var,
    pub scores: Var,
    /// `(m+1) × (n+1)` log assignment.
    pub log_assign: Var,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    descriptor: EdgeConvParams,
    w_e: ParamId,
    transformer: TransformerParams,
    slack: ParamId,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let descriptor = EdgeConvParams::init(&mut store, 3, &config.edge_widths, config.width, config.k_graph, &mut rng)?;
        let w_e = store.add_weight("normals.w_e", config.width, config.width, &mut rng);
        let transformer = TransformerParams::init(&mut store, config.width, config.layers, config.heads, &mut rng)?;
        let slack = store.add("matching.slack", Mat::scalar(config.slack_init));
        Ok(Self {
            config,
            store,
            descriptor,
            w_e,
            transformer,
            slack,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn transformer(&self) -> &TransformerParams {
        &self.transformer
    }

    pub fn slack_id(&self) -> ParamId {
        self.slack
    }

    pub fn w_e_id(&self) -> ParamId {
        self.w_e
    }

    pub fn prepare(&self, cloud: &PointCloud) -> Result<PreparedCloud> {
        if cloud.len() < 3 {
            return Err(Error::InvalidCloud(format!("need at least 3 points, got {}", cloud.len())));
        }
        let normals = estimate_normals(cloud, self.config.normal_radius, self.config.normal_max_neighbors)?;
        let c = if self.config.center_inputs { cloud.centroid() } else { Default::default() };
        let coords = Mat::from_fn(cloud.len(), 3, |i, k| cloud.points()[i][k] - c[k]);
        Ok(PreparedCloud { coords, normals })
    }

    fn encode_pairs(&self, tape: &mut Tape, bound: &Bound, cloud: &PreparedCloud) -> Result<Var> {
        let g = pair_angle_embeddings(&cloud.normals, self.config.width, self.config.tau, self.config.angle_unit)?;
        let g = tape.leaf(g);
        embed_pairs(tape, g, bound[self.w_e])
    }

    /// Records the whole network on `tape` with parameters bound as `bound`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: &PreparedCloud,
        y: &PreparedCloud,
        opts: ForwardOptions,
    ) -> Result<ForwardVars> {
        let cx = tape.leaf(x.coords.clone());
        let cy = tape.leaf(y.coords.clone());
        let fx = crate::descriptor::dgcnn_forward(tape, cx, &self.descriptor, bound)?;
        let fy = crate::descriptor::dgcnn_forward(tape, cy, &self.descriptor, bound)?;
        let (ex, ey) = if opts.normal_bias && self.config.layers > 0 {
            (Some(self.encode_pairs(tape, bound, x)?), Some(self.encode_pairs(tape, bound, y)?))
        } else {
            (None, None)
        };
        let attn = AttentionOptions {
            scale: self.config.attention_scale,
            normal_bias: opts.normal_bias,
        };
        let (hx, hy) = transformer_forward(tape, fx, fy, ex, ey, &self.transformer, bound, attn);
        let scores = score_matrix(tape, hx, hy)?;
        if !tape.value(scores).all_finite() {
            return Err(Error::Numerical("score matrix is not finite".into()));
        }
        let log_assign = sinkhorn_log(tape, scores, bound[self.slack], self.config.sinkhorn_iters)?;
        Ok(ForwardVars {
            hx,
            hy,
            scores,
            log_assign,
        })
    }

    /// Forward pass plus gap loss.
    pub fn forward_loss(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: &PreparedCloud,
        y: &PreparedCloud,
        gt: &GroundTruthMatches,
        opts: ForwardOptions,
    ) -> Result<(ForwardVars, Var)> {
        let vars = self.forward(tape, bound, x, y, opts)?;
        let loss = gap_loss_on_tape(tape, vars.log_assign, gt, self.config.gap_margin)?;
        if !tape.value(loss).scalar_value().is_finite() {
            return Err(Error::Numerical("gap loss is not finite".into()));
        }
        Ok((vars, loss))
    }

    pub fn soft_assignment(&self, x: &PreparedCloud, y: &PreparedCloud, opts: ForwardOptions) -> Result<SoftAssignment> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let vars = self.forward(&mut tape, &bound, x, y, opts)?;
        Ok(SoftAssignment::from_log(tape.value(vars.log_assign).clone()))
    }

    pub fn loss(&self, x: &PreparedCloud, y: &PreparedCloud, gt: &GroundTruthMatches, opts: ForwardOptions) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let (_, loss) = self.forward_loss(&mut tape, &bound, x, y, gt, opts)?;
        Ok(tape.value(loss).scalar_value())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{synth_shapes, ShapeKind};

    fn small_config() -> ModelConfig {
        ModelConfig {
            width: 8,
            layers: 1,
            heads: 2,
            edge_widths: vec![4, 4],
            k_graph: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn default_parameter_layout() {
        let m = Model::new(ModelConfig::default()).unwrap();
        let p = m.params();
        assert_eq!(p.get(p.find("descriptor.fusion.w").unwrap()).shape(), (96, 96));
        assert_eq!(p.get(p.find("attention.5.self.w_r3").unwrap()).shape(), (24, 24));
        assert!(p.find("attention.6.self.w_q").is_none());
        assert_eq!(p.get(m.slack_id()).data(), &[1.0]);
    }

    #[test]
    fn config_round_trip() {
        let c = ModelConfig { tau: 0.25, edge_widths: vec![8, 16, 4], center_inputs: false, ..ModelConfig::default() };
        let mut d = ModelConfig::default();
        for (k, v) in c.to_pairs() {
            d.set(k, &v).unwrap();
        }
        assert_eq!(c, d);
        assert!(d.set("width", "abc").is_err());
        assert!(d.set("nope", "1").is_err());
        assert!(ModelConfig { heads: 5, ..ModelConfig::default() }.validate().is_err());
    }

    #[test]
    fn zero_weights_give_uniform_loss() {
        let mut m = Model::new(small_config()).unwrap();
        let ids: Vec<_> = m.params().ids().filter(|&id| id != m.slack_id()).collect();
        for id in ids {
            m.params_mut().get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let slack = m.slack_id();
        m.params_mut().get_mut(slack).data_mut()[0] = 0.0;
        let x = synth_shapes(ShapeKind::Composite, 10, 1).unwrap();
        let y = synth_shapes(ShapeKind::Composite, 12, 2).unwrap();
        let (px, py) = (m.prepare(&x).unwrap(), m.prepare(&y).unwrap());
        let soft = m.soft_assignment(&px, &py, ForwardOptions::default()).unwrap();
        // All-zero bordered scores have a rank-one fixed point: real entries
        // 1/(m+n), slack column m/(m+n), slack row n/(m+n).
        let p = soft.probabilities();
        for i in 0..=10 {
            for j in 0..=12 {
                let expect = match (i < 10, j < 12) {
                    (true, true) => 1.0 / 22.0,
                    (true, false) => 10.0 / 22.0,
                    (false, true) => 12.0 / 22.0,
                    (false, false) => continue,
                };
                assert!((p.get(i, j) - expect).abs() < 1e-12, "{}", p.get(i, j));
            }
        }
        let gt = GroundTruthMatches::from_pairs(10, 12, &[(0, 0), (3, 5)]).unwrap();
        let loss = m.loss(&px, &py, &gt, ForwardOptions::default()).unwrap();
        let oracle = crate::matching::gap_loss(&p, &gt, 0.5).unwrap();
        assert!((loss - oracle).abs() < 1e-10);
    }
}
