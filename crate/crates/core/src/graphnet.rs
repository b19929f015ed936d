//! Edge-conditioned graph convolutions producing one embedding per district.
//!
//! A convolution layer mixes neighbour features through `H` affine maps, each
//! weighted per edge by a Gaussian kernel on the edge features:
//!
//! `out_v = 1/(H·|N(v)|) Σ_h Σ_{w∈N(v)} k_h(e_vw) Θ_h x_w + Θ₀ x_v + b`.
//!
//! All trainable tensors live in one flat vector so the optimizer and the
//! finite-difference checks can treat them uniformly. Backward passes are
//! written out by hand.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::NetworkStack;
use crate::panel::District;
use crate::Mat;

/// Number of edge channels: connectedness, distance, adjacency.
pub const EDGE_CHANNELS: usize = 3;
/// Lower bound applied to kernel scales after each optimizer step.
pub const MIN_KERNEL_SCALE: f64 = 1e-3;

/// Node and edge inputs of the graph network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphInput {
    /// `n × f` node features.
    pub node_features: Mat,
    /// One `n × n` matrix per edge channel; diagonals are ignored.
    pub edge_features: Vec<Mat>,
    /// `1` where `w` is a neighbour of `v`, zero diagonal.
    pub neighbors: Mat,
}

impl GraphInput {
    pub fn new(node_features: Mat, edge_features: Vec<Mat>, neighbors: Mat) -> Result<Self> {
        let n = node_features.nrows();
        if n < 2 {
            return Err(Error::Shape("graph needs at least two nodes".into()));
        }
        if edge_features.is_empty() {
            return Err(Error::Shape("graph needs at least one edge channel".into()));
        }
        for (c, m) in edge_features.iter().enumerate() {
            if m.shape() != (n, n) {
                return Err(Error::Shape(format!("edge channel {c} is {:?}", m.shape())));
            }
        }
        if neighbors.shape() != (n, n) {
            return Err(Error::Shape("neighbour mask has the wrong shape".into()));
        }
        for v in 0..n {
            if neighbors[(v, v)] != 0.0 {
                return Err(Error::InvalidData(format!("self-edge at node {v}")));
            }
            if neighbors.row(v).iter().any(|&x| x != 0.0 && x != 1.0) {
                return Err(Error::InvalidData("neighbour mask must be binary".into()));
            }
            if neighbors.row(v).sum() == 0.0 {
                return Err(Error::InvalidData(format!("node {v} has no neighbours")));
            }
        }
        let finite = node_features.iter().all(|x| x.is_finite())
            && edge_features
                .iter()
                .all(|m| m.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::InvalidData("non-finite graph features".into()));
        }
        Ok(GraphInput {
            node_features,
            edge_features,
            neighbors,
        })
    }

    pub fn fully_connected(node_features: Mat, edge_features: Vec<Mat>) -> Result<Self> {
        let n = node_features.nrows();
        let neighbors = Mat::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 });
        Self::new(node_features, edge_features, neighbors)
    }

    /// Node features `(log Σ_g pop, log mean_g density)` and edge channels
    /// `(log connectedness, distance, adjacency)`, the first two of each
    /// standardized over nodes / off-diagonal edges.
    pub fn from_networks(districts: &[District], stack: &NetworkStack) -> Result<Self> {
        let n = districts.len();
        if stack.n_districts() != n {
            return Err(Error::Shape(format!(
                "{n} districts but networks over {}",
                stack.n_districts()
            )));
        }
        let pop: Vec<f64> = districts
            .iter()
            .map(|d| d.total_population().ln())
            .collect();
        let den: Vec<f64> = districts.iter().map(|d| d.mean_density().ln()).collect();
        let pop = standardize_or_center(&pop);
        let den = standardize_or_center(&den);
        let node_features = Mat::from_fn(n, 2, |i, c| if c == 0 { pop[i] } else { den[i] });

        let max_s = stack.connectedness.iter().copied().fold(0.0, f64::max);
        let floor = if max_s > 0.0 { max_s * 1e-12 } else { 1.0 };
        let log_conn = stack.connectedness.map(|s| (s + floor).ln());
        let edge_features = vec![
            standardize_edges(&log_conn),
            standardize_edges(&stack.distance_km),
            stack.adjacency.clone(),
        ];
        Self::fully_connected(node_features, edge_features)
    }

    pub fn n_nodes(&self) -> usize {
        self.node_features.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.edge_features.len()
    }

    pub fn degree(&self, v: usize) -> f64 {
        self.neighbors.row(v).sum()
    }

    /// Relabelled graph whose node `i` is node `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_nodes();
        let mut seen = vec![false; n];
        if perm.len() != n
            || perm
                .iter()
                .any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::InvalidArgument(
                "not a permutation of the nodes".into(),
            ));
        }
        let pm = |m: &Mat| Mat::from_fn(n, n, |i, j| m[(perm[i], perm[j])]);
        Ok(GraphInput {
            node_features: Mat::from_fn(n, self.node_features.ncols(), |i, c| {
                self.node_features[(perm[i], c)]
            }),
            edge_features: self.edge_features.iter().map(pm).collect(),
            neighbors: pm(&self.neighbors),
        })
    }
}

fn standardize_or_center(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if sd > 0.0 { sd } else { 1.0 };
    v.iter().map(|x| (x - mean) / scale).collect()
}

fn standardize_edges(m: &Mat) -> Mat {
    let n = m.nrows();
    let off: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| m[(i, j)])
        .collect();
    let n_off = off.len() as f64;
    let mean = off.iter().sum::<f64>() / n_off;
    let sd = (off.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n_off).sqrt();
    let scale = if sd > 0.0 { sd } else { 1.0 };
    Mat::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            (m[(i, j)] - mean) / scale
        }
    })
}

/// Gaussian edge kernel `exp(−½ Σ_c ((e_c − μ_c)/σ_c)²)`.
pub fn rbf_weight(e: &[f64], mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if e.len() != mu.len() || e.len() != sigma.len() {
        return Err(Error::Shape(
            "edge, centre and scale dimensions differ".into(),
        ));
    }
    if sigma.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument(
            "kernel scales must be positive".into(),
        ));
    }
    Ok(rbf_unchecked(e, mu, sigma))
}

fn rbf_unchecked(e: &[f64], mu: &[f64], sigma: &[f64]) -> f64 {
    let q: f64 = e
        .iter()
        .zip(mu)
        .zip(sigma)
        .map(|((e, m), s)| ((e - m) / s).powi(2))
        .sum();
    (-0.5 * q).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub width: usize,
    pub kernels: usize,
}

/// Architecture of the embedding network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GnnConfig {
    pub conv: Vec<ConvSpec>,
    /// Dense widths; every layer but the last is followed by BN and
    /// leaky ReLU, the last is linear.
    pub dense: Vec<usize>,
    /// Dropout rate after each convolution block (training only).
    pub dropout: f64,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            conv: vec![
                ConvSpec {
                    width: 256,
                    kernels: 8,
                },
                ConvSpec {
                    width: 128,
                    kernels: 4,
                },
            ],
            dense: vec![64, 32, 16, 16],
            dropout: 0.25,
            leaky_slope: 0.01,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl GnnConfig {
    pub fn embedding_dim(&self) -> usize {
        self.dense
            .last()
            .copied()
            .or_else(|| self.conv.last().map(|c| c.width))
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one convolution layer is required".into(),
            ));
        }
        if self.conv.iter().any(|c| c.width == 0 || c.kernels == 0) || self.dense.contains(&0) {
            return Err(Error::InvalidArgument(
                "layer widths and kernel counts must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument("dropout must lie in [0, 1)".into()));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::InvalidArgument("invalid batch-norm settings".into()));
        }
        Ok(())
    }
}

/// Name, shape and position of one tensor inside the flat parameter vector.
/// Matrices are stored row-major as `[rows, cols]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone)]
struct ConvIdx {
    d_in: usize,
    d_out: usize,
    kernels: usize,
    theta0: Range<usize>,
    theta: Range<usize>,
    mu: Range<usize>,
    sigma: Range<usize>,
    bias: Range<usize>,
    gamma: Range<usize>,
    beta: Range<usize>,
}

#[derive(Debug, Clone)]
struct DenseIdx {
    d_in: usize,
    d_out: usize,
    weight: Range<usize>,
    bias: Range<usize>,
    bn: Option<(Range<usize>, Range<usize>)>,
}

struct Layout {
    conv: Vec<ConvIdx>,
    dense: Vec<DenseIdx>,
    tensors: Vec<TensorSpec>,
    total: usize,
}

fn layout(cfg: &GnnConfig, input_dim: usize, channels: usize) -> Layout {
    let mut tensors = Vec::new();
    let mut total = 0;
    let mut push = |name: String, shape: Vec<usize>| {
        let t = TensorSpec {
            name,
            shape,
            offset: total,
        };
        total += t.len();
        let r = t.range();
        tensors.push(t);
        r
    };
    let mut conv = Vec::new();
    let mut d_in = input_dim;
    for (r, spec) in cfg.conv.iter().enumerate() {
        let (d_out, h) = (spec.width, spec.kernels);
        conv.push(ConvIdx {
            d_in,
            d_out,
            kernels: h,
            theta0: push(format!("conv{r}.theta0"), vec![d_out, d_in]),
            theta: push(format!("conv{r}.theta"), vec![h, d_out, d_in]),
            mu: push(format!("conv{r}.mu"), vec![h, channels]),
            sigma: push(format!("conv{r}.sigma"), vec![h, channels]),
            bias: push(format!("conv{r}.bias"), vec![d_out]),
            gamma: push(format!("conv{r}.bn.gamma"), vec![d_out]),
            beta: push(format!("conv{r}.bn.beta"), vec![d_out]),
        });
        d_in = d_out;
    }
    let mut dense = Vec::new();
    for (k, &d_out) in cfg.dense.iter().enumerate() {
        let last = k + 1 == cfg.dense.len();
        let weight = push(format!("dense{k}.weight"), vec![d_out, d_in]);
        let bias = push(format!("dense{k}.bias"), vec![d_out]);
        let bn = (!last).then(|| {
            (
                push(format!("dense{k}.bn.gamma"), vec![d_out]),
                push(format!("dense{k}.bn.beta"), vec![d_out]),
            )
        });
        dense.push(DenseIdx {
            d_in,
            d_out,
            weight,
            bias,
            bn,
        });
        d_in = d_out;
    }
    Layout {
        conv,
        dense,
        tensors,
        total,
    }
}

/// All weights of the embedding network plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnParameters {
    pub config: GnnConfig,
    pub input_dim: usize,
    pub edge_channels: usize,
    pub tensors: Vec<TensorSpec>,
    pub values: Vec<f64>,
    /// One entry per batch-norm layer, convolutions first.
    pub running: Vec<BnStats>,
    pub seed: u64,
}

/// Owned parameters of one convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub theta0: Mat,
    pub theta: Vec<Mat>,
    pub mu: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

fn glorot<R: Rng>(rng: &mut R, out: &mut [f64], fan_in: usize, fan_out: usize) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in out {
        *v = rng.random_range(-limit..limit);
    }
}

impl GnnParameters {
    pub fn init(
        config: &GnnConfig,
        input_dim: usize,
        edge_channels: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(config, input_dim, edge_channels, seed, &mut rng)
    }

    /// Glorot-uniform affine maps, zero biases, unit BN scales, kernel
    /// centres uniform in `[−1, 1]` and unit kernel scales.
    pub fn init_with_rng<R: Rng>(
        config: &GnnConfig,
        input_dim: usize,
        edge_channels: usize,
        seed: u64,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 || edge_channels == 0 {
            return Err(Error::InvalidArgument(
                "input and edge dimensions must be positive".into(),
            ));
        }
        let lay = layout(config, input_dim, edge_channels);
        let mut values = vec![0.0; lay.total];
        let mut running = Vec::new();
        for c in &lay.conv {
            glorot(rng, &mut values[c.theta0.clone()], c.d_in, c.d_out);
            for h in 0..c.kernels {
                let s = c.theta.start + h * c.d_in * c.d_out;
                glorot(rng, &mut values[s..s + c.d_in * c.d_out], c.d_in, c.d_out);
            }
            for v in &mut values[c.mu.clone()] {
                *v = rng.random_range(-1.0..1.0);
            }
            values[c.sigma.clone()].fill(1.0);
            values[c.gamma.clone()].fill(1.0);
            running.push(BnStats {
                mean: vec![0.0; c.d_out],
                var: vec![1.0; c.d_out],
            });
        }
        for d in &lay.dense {
            glorot(rng, &mut values[d.weight.clone()], d.d_in, d.d_out);
            if let Some((g, _)) = &d.bn {
                values[g.clone()].fill(1.0);
                running.push(BnStats {
                    mean: vec![0.0; d.d_out],
                    var: vec![1.0; d.d_out],
                });
            }
        }
        Ok(GnnParameters {
            config: config.clone(),
            input_dim,
            edge_channels,
            tensors: lay.tensors,
            values,
            running,
            seed,
        })
    }

    pub fn n_params(&self) -> usize {
        self.values.len()
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn layout(&self) -> Layout {
        layout(&self.config, self.input_dim, self.edge_channels)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let lay = self.layout();
        if lay.total != self.values.len() || lay.tensors != self.tensors {
            return Err(Error::Shape(
                "parameter vector does not match the architecture".into(),
            ));
        }
        let n_bn = lay.conv.len() + lay.dense.iter().filter(|d| d.bn.is_some()).count();
        if self.running.len() != n_bn {
            return Err(Error::Shape("wrong number of batch-norm statistics".into()));
        }
        for c in &lay.conv {
            if self.values[c.sigma.clone()].iter().any(|&s| !(s > 0.0)) {
                return Err(Error::InvalidArgument(
                    "kernel scales must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    /// Ranges of every kernel scale tensor inside `values`.
    pub fn scale_ranges(&self) -> Vec<Range<usize>> {
        self.layout().conv.iter().map(|c| c.sigma.clone()).collect()
    }

    /// Keeps kernel scales at or above [`MIN_KERNEL_SCALE`].
    pub fn clamp_scales(&mut self) {
        for r in self.scale_ranges() {
            for s in &mut self.values[r] {
                *s = s.max(MIN_KERNEL_SCALE);
            }
        }
    }

    pub fn conv_layer(&self, r: usize) -> Option<ConvLayer> {
        let lay = self.layout();
        lay.conv.get(r).map(|c| conv_layer_from(&self.values, c))
    }
}

fn mat_at(values: &[f64], range: &Range<usize>, rows: usize, cols: usize) -> Mat {
    Mat::from_row_slice(rows, cols, &values[range.clone()])
}

fn add_row_major(grad: &mut [f64], start: usize, m: &Mat) {
    let cols = m.ncols();
    for i in 0..m.nrows() {
        for j in 0..cols {
            grad[start + i * cols + j] += m[(i, j)];
        }
    }
}

fn conv_layer_from(values: &[f64], c: &ConvIdx) -> ConvLayer {
    let block = c.d_in * c.d_out;
    let ch = (c.mu.end - c.mu.start) / c.kernels;
    ConvLayer {
        theta0: mat_at(values, &c.theta0, c.d_out, c.d_in),
        theta: (0..c.kernels)
            .map(|h| {
                let s = c.theta.start + h * block;
                mat_at(values, &(s..s + block), c.d_out, c.d_in)
            })
            .collect(),
        mu: (0..c.kernels)
            .map(|h| values[c.mu.start + h * ch..c.mu.start + (h + 1) * ch].to_vec())
            .collect(),
        sigma: (0..c.kernels)
            .map(|h| values[c.sigma.start + h * ch..c.sigma.start + (h + 1) * ch].to_vec())
            .collect(),
        bias: values[c.bias.clone()].to_vec(),
    }
}

/// Kernel weight matrix `W_h[v, w] = k_h(e_vw)` on neighbour pairs.
fn kernel_matrix(graph: &GraphInput, mu: &[f64], sigma: &[f64]) -> Mat {
    let n = graph.n_nodes();
    let ch = graph.n_channels();
    let mut e = vec![0.0; ch];
    Mat::from_fn(n, n, |v, w| {
        if graph.neighbors[(v, w)] == 0.0 {
            return 0.0;
        }
        for (c, m) in graph.edge_features.iter().enumerate() {
            e[c] = m[(v, w)];
        }
        rbf_unchecked(&e, mu, sigma)
    })
}

struct ConvOut {
    out: Mat,
    weights: Vec<Mat>,
    ys: Vec<Mat>,
}

fn check_conv(x: &Mat, graph: &GraphInput, layer: &ConvLayer) -> Result<()> {
    let n = graph.n_nodes();
    if x.nrows() != n || x.ncols() != layer.theta0.ncols() {
        return Err(Error::Shape(format!(
            "conv input is {:?}, expected {n}×{}",
            x.shape(),
            layer.theta0.ncols()
        )));
    }
    if layer.theta.is_empty()
        || layer.mu.len() != layer.theta.len()
        || layer.sigma.len() != layer.theta.len()
    {
        return Err(Error::Shape("kernel counts disagree".into()));
    }
    for h in 0..layer.theta.len() {
        if layer.theta[h].shape() != layer.theta0.shape() {
            return Err(Error::Shape("affine maps differ in shape".into()));
        }
        if layer.mu[h].len() != graph.n_channels() || layer.sigma[h].len() != graph.n_channels() {
            return Err(Error::Shape(
                "kernel dimension differs from edge channels".into(),
            ));
        }
        if layer.sigma[h].iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument(
                "kernel scales must be positive".into(),
            ));
        }
    }
    if layer.bias.len() != layer.theta0.nrows() {
        return Err(Error::Shape("bias length differs from output width".into()));
    }
    Ok(())
}

fn conv_compute(x: &Mat, graph: &GraphInput, layer: &ConvLayer) -> Result<ConvOut> {
    check_conv(x, graph, layer)?;
    let n = graph.n_nodes();
    let h_count = layer.theta.len();
    let d_out = layer.theta0.nrows();
    let mut msg = Mat::zeros(n, d_out);
    let mut weights = Vec::with_capacity(h_count);
    let mut ys = Vec::with_capacity(h_count);
    for h in 0..h_count {
        let w = kernel_matrix(graph, &layer.mu[h], &layer.sigma[h]);
        let y = x * layer.theta[h].transpose();
        msg += &w * &y;
        weights.push(w);
        ys.push(y);
    }
    for v in 0..n {
        let deg = graph.degree(v);
        if deg == 0.0 {
            return Err(Error::InvalidData(format!("node {v} has no neighbours")));
        }
        let scale = 1.0 / (h_count as f64 * deg);
        msg.row_mut(v).scale_mut(scale);
    }
    let mut out = msg + x * layer.theta0.transpose();
    for mut row in out.row_iter_mut() {
        for (j, b) in layer.bias.iter().enumerate() {
            row[j] += b;
        }
    }
    Ok(ConvOut { out, weights, ys })
}

/// One edge-conditioned convolution.
pub fn conv_forward(x: &Mat, graph: &GraphInput, layer: &ConvLayer) -> Result<Mat> {
    conv_compute(x, graph, layer).map(|c| c.out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Batch statistics in batch norm, dropout when a mask stream is given.
    Train,
    /// Running statistics, no dropout; deterministic.
    Eval,
}

/// `U`, one embedding row per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEmbeddings {
    pub u: Mat,
}

#[derive(Debug, Clone)]
struct BnCache {
    x_hat: Mat,
    inv_std: Vec<f64>,
    mean: Vec<f64>,
    var_unbiased: Vec<f64>,
    train: bool,
}

/// Batch norm over the rows of `x`. Returns the normalized-and-scaled output.
fn bn_forward(
    x: &Mat,
    gamma: &[f64],
    beta: &[f64],
    stats: &BnStats,
    eps: f64,
    mode: Mode,
) -> (Mat, BnCache) {
    let (n, d) = x.shape();
    let nf = n as f64;
    let mut mean = vec![0.0; d];
    let mut var = vec![0.0; d];
    let mut var_unbiased = vec![0.0; d];
    for j in 0..d {
        let col = x.column(j);
        let m = col.sum() / nf;
        let ss: f64 = col.iter().map(|v| (v - m).powi(2)).sum();
        mean[j] = m;
        var[j] = ss / nf;
        var_unbiased[j] = if n > 1 { ss / (nf - 1.0) } else { ss / nf };
    }
    let train = mode == Mode::Train;
    let (use_mean, use_var) = if train {
        (&mean, &var)
    } else {
        (&stats.mean, &stats.var)
    };
    let inv_std: Vec<f64> = use_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let x_hat = Mat::from_fn(n, d, |i, j| (x[(i, j)] - use_mean[j]) * inv_std[j]);
    let out = Mat::from_fn(n, d, |i, j| gamma[j] * x_hat[(i, j)] + beta[j]);
    (
        out,
        BnCache {
            x_hat,
            inv_std,
            mean,
            var_unbiased,
            train,
        },
    )
}

/// Returns `(dx, dγ, dβ)`.
fn bn_backward(dout: &Mat, gamma: &[f64], cache: &BnCache) -> (Mat, Vec<f64>, Vec<f64>) {
    let (n, d) = dout.shape();
    let nf = n as f64;
    let mut dx = Mat::zeros(n, d);
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    for j in 0..d {
        let mut sum_dxh = 0.0;
        let mut sum_dxh_xh = 0.0;
        for i in 0..n {
            let g = dout[(i, j)];
            dgamma[j] += g * cache.x_hat[(i, j)];
            dbeta[j] += g;
            let dxh = g * gamma[j];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * cache.x_hat[(i, j)];
        }
        for i in 0..n {
            let dxh = dout[(i, j)] * gamma[j];
            dx[(i, j)] = if cache.train {
                cache.inv_std[j] / nf * (nf * dxh - sum_dxh - cache.x_hat[(i, j)] * sum_dxh_xh)
            } else {
                dxh * cache.inv_std[j]
            };
        }
    }
    (dx, dgamma, dbeta)
}

fn leaky(x: &Mat, slope: f64) -> Mat {
    x.map(|v| if v > 0.0 { v } else { slope * v })
}

fn leaky_back(d: &Mat, pre: &Mat, slope: f64) -> Mat {
    d.zip_map(pre, |g, p| if p > 0.0 { g } else { slope * g })
}

#[derive(Debug, Clone)]
struct ConvCache {
    x: Mat,
    weights: Vec<Mat>,
    ys: Vec<Mat>,
    bn: BnCache,
    /// Batch-norm output, the leaky-ReLU input.
    pre_act: Mat,
    /// Inverted-dropout multipliers (0 or `1/(1−p)`).
    mask: Option<Mat>,
}

#[derive(Debug, Clone)]
struct DenseCache {
    x: Mat,
    bn: Option<(BnCache, Mat)>,
}

/// Intermediate values needed by [`gnn_backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    conv: Vec<ConvCache>,
    dense: Vec<DenseCache>,
}

/// Forward pass. In train mode dropout masks are drawn from `rng`.
pub fn gnn_forward<R: Rng>(
    input: &GraphInput,
    params: &GnnParameters,
    mode: Mode,
    rng: &mut R,
) -> Result<NodeEmbeddings> {
    gnn_forward_cached(input, params, mode, Some(rng)).map(|(u, _)| u)
}

/// Forward pass keeping the cache. Dropout is applied only in train mode
/// and only when `dropout_rng` is given.
pub fn gnn_forward_cached<R: Rng>(
    input: &GraphInput,
    params: &GnnParameters,
    mode: Mode,
    mut dropout_rng: Option<&mut R>,
) -> Result<(NodeEmbeddings, ForwardCache)> {
    params.validate()?;
    if input.node_features.ncols() != params.input_dim || input.n_channels() != params.edge_channels
    {
        return Err(Error::Shape(format!(
            "graph has {} node features and {} edge channels, network expects {} and {}",
            input.node_features.ncols(),
            input.n_channels(),
            params.input_dim,
            params.edge_channels
        )));
    }
    let cfg = &params.config;
    let lay = params.layout();
    let v = &params.values;
    let mut bn_k = 0;
    let mut x = input.node_features.clone();
    let mut conv_caches = Vec::with_capacity(lay.conv.len());
    for c in &lay.conv {
        let layer = conv_layer_from(v, c);
        let co = conv_compute(&x, input, &layer)?;
        let (bn_out, bn) = bn_forward(
            &co.out,
            &v[c.gamma.clone()],
            &v[c.beta.clone()],
            &params.running[bn_k],
            cfg.bn_eps,
            mode,
        );
        bn_k += 1;
        let mut act = leaky(&bn_out, cfg.leaky_slope);
        let mut mask = None;
        if let (Mode::Train, Some(rng)) = (mode, dropout_rng.as_deref_mut()) {
            if cfg.dropout > 0.0 {
                let keep = 1.0 / (1.0 - cfg.dropout);
                let m = Mat::from_fn(act.nrows(), act.ncols(), |_, _| {
                    if rng.random::<f64>() < cfg.dropout {
                        0.0
                    } else {
                        keep
                    }
                });
                act.component_mul_assign(&m);
                mask = Some(m);
            }
        }
        conv_caches.push(ConvCache {
            x,
            weights: co.weights,
            ys: co.ys,
            bn,
            pre_act: bn_out,
            mask,
        });
        x = act;
    }
    let mut dense_caches = Vec::with_capacity(lay.dense.len());
    for d in &lay.dense {
        let w = mat_at(v, &d.weight, d.d_out, d.d_in);
        let mut z = &x * w.transpose();
        let b = &v[d.bias.clone()];
        for mut row in z.row_iter_mut() {
            for (j, bj) in b.iter().enumerate() {
                row[j] += bj;
            }
        }
        match &d.bn {
            Some((g, be)) => {
                let (bn_out, bn) = bn_forward(
                    &z,
                    &v[g.clone()],
                    &v[be.clone()],
                    &params.running[bn_k],
                    cfg.bn_eps,
                    mode,
                );
                bn_k += 1;
                let act = leaky(&bn_out, cfg.leaky_slope);
                dense_caches.push(DenseCache {
                    x,
                    bn: Some((bn, bn_out)),
                });
                x = act;
            }
            None => {
                dense_caches.push(DenseCache { x, bn: None });
                x = z;
            }
        }
    }
    if x.iter().any(|u| !u.is_finite()) {
        return Err(Error::Numerical("non-finite node embeddings".into()));
    }
    Ok((
        NodeEmbeddings { u: x },
        ForwardCache {
            conv: conv_caches,
            dense: dense_caches,
        },
    ))
}

/// Gradient of a scalar loss with respect to `params.values`, given
/// `d_u = ∂L/∂U`.
pub fn gnn_backward(
    input: &GraphInput,
    params: &GnnParameters,
    cache: &ForwardCache,
    d_u: &Mat,
) -> Result<Vec<f64>> {
    let cfg = &params.config;
    let lay = params.layout();
    let v = &params.values;
    if cache.conv.len() != lay.conv.len() || cache.dense.len() != lay.dense.len() {
        return Err(Error::Shape("cache does not match the architecture".into()));
    }
    let mut grad = vec![0.0; v.len()];
    let mut d = d_u.clone();
    let slope = cfg.leaky_slope;

    for (di, dc) in lay.dense.iter().zip(&cache.dense).rev() {
        if let (Some((g, be)), Some((bn, pre))) = (&di.bn, &dc.bn) {
            let d_pre = leaky_back(&d, pre, slope);
            let (dz, dg, db) = bn_backward(&d_pre, &v[g.clone()], bn);
            add_slice(&mut grad, g.start, &dg);
            add_slice(&mut grad, be.start, &db);
            d = dz;
        }
        if d.shape() != (dc.x.nrows(), di.d_out) {
            return Err(Error::Shape("upstream gradient has the wrong shape".into()));
        }
        add_row_major(&mut grad, di.weight.start, &(d.transpose() * &dc.x));
        let col_sums: Vec<f64> = d.column_iter().map(|c| c.sum()).collect();
        add_slice(&mut grad, di.bias.start, &col_sums);
        let w = mat_at(v, &di.weight, di.d_out, di.d_in);
        d = &d * w;
    }

    let n = input.n_nodes();
    let ch = input.n_channels();
    for (ci, cc) in lay.conv.iter().zip(&cache.conv).rev() {
        if let Some(m) = &cc.mask {
            d.component_mul_assign(m);
        }
        let d_pre = leaky_back(&d, &cc.pre_act, slope);
        let (g, dg, db) = bn_backward(&d_pre, &v[ci.gamma.clone()], &cc.bn);
        add_slice(&mut grad, ci.gamma.start, &dg);
        add_slice(&mut grad, ci.beta.start, &db);

        let layer = conv_layer_from(v, ci);
        let col_sums: Vec<f64> = g.column_iter().map(|c| c.sum()).collect();
        add_slice(&mut grad, ci.bias.start, &col_sums);
        add_row_major(&mut grad, ci.theta0.start, &(g.transpose() * &cc.x));
        let mut dx = &g * &layer.theta0;

        let h_count = ci.kernels as f64;
        let mut g_scaled = g.clone();
        for vtx in 0..n {
            let s = 1.0 / (h_count * input.degree(vtx));
            g_scaled.row_mut(vtx).scale_mut(s);
        }
        let block = ci.d_in * ci.d_out;
        for h in 0..ci.kernels {
            let w = &cc.weights[h];
            let y = &cc.ys[h];
            let dy = w.transpose() * &g_scaled;
            add_row_major(
                &mut grad,
                ci.theta.start + h * block,
                &(dy.transpose() * &cc.x),
            );
            dx += &dy * &layer.theta[h];
            let dw = &g_scaled * y.transpose();
            let mu = &layer.mu[h];
            let sigma = &layer.sigma[h];
            let mut dmu = vec![0.0; ch];
            let mut dsig = vec![0.0; ch];
            for a in 0..n {
                for b in 0..n {
                    if input.neighbors[(a, b)] == 0.0 {
                        continue;
                    }
                    let coef = dw[(a, b)] * w[(a, b)];
                    if coef == 0.0 {
                        continue;
                    }
                    for c in 0..ch {
                        let diff = input.edge_features[c][(a, b)] - mu[c];
                        let s2 = sigma[c] * sigma[c];
                        dmu[c] += coef * diff / s2;
                        dsig[c] += coef * diff * diff / (s2 * sigma[c]);
                    }
                }
            }
            add_slice(&mut grad, ci.mu.start + h * ch, &dmu);
            add_slice(&mut grad, ci.sigma.start + h * ch, &dsig);
        }
        d = dx;
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical("non-finite network gradient".into()));
    }
    Ok(grad)
}

fn add_slice(grad: &mut [f64], start: usize, vals: &[f64]) {
    for (g, v) in grad[start..start + vals.len()].iter_mut().zip(vals) {
        *g += v;
    }
}

/// Folds the batch statistics of a train-mode pass into the running
/// statistics (unbiased variance).
pub fn update_running_stats(params: &mut GnnParameters, cache: &ForwardCache) {
    let m = params.config.bn_momentum;
    let caches = cache.conv.iter().map(|c| &c.bn).chain(
        cache
            .dense
            .iter()
            .filter_map(|d| d.bn.as_ref().map(|(b, _)| b)),
    );
    for (stats, bn) in params.running.iter_mut().zip(caches) {
        if !bn.train {
            continue;
        }
        for j in 0..stats.mean.len() {
            stats.mean[j] = (1.0 - m) * stats.mean[j] + m * bn.mean[j];
            stats.var[j] = (1.0 - m) * stats.var[j] + m * bn.var_unbiased[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> GnnConfig {
        GnnConfig {
            conv: vec![
                ConvSpec {
                    width: 5,
                    kernels: 3,
                },
                ConvSpec {
                    width: 4,
                    kernels: 2,
                },
            ],
            dense: vec![4, 3, 3],
            dropout: 0.25,
            leaky_slope: 0.01,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    fn random_graph(n: usize, seed: u64) -> GraphInput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes = Mat::from_fn(n, 2, |_, _| rng.random_range(-1.5..1.5));
        let edges = (0..EDGE_CHANNELS)
            .map(|_| {
                let mut m = Mat::zeros(n, n);
                for i in 0..n {
                    for j in 0..i {
                        let x = rng.random_range(-1.5..1.5);
                        m[(i, j)] = x;
                        m[(j, i)] = x;
                    }
                }
                m
            })
            .collect();
        GraphInput::fully_connected(nodes, edges).unwrap()
    }

    #[test]
    fn rbf_examples() {
        assert_eq!(
            rbf_weight(&[0.3, -1.0], &[0.3, -1.0], &[2.0, 0.5]).unwrap(),
            1.0
        );
        let w = rbf_weight(&[1.0 + 0.7], &[1.0], &[0.7]).unwrap();
        assert!((w - (-0.5f64).exp()).abs() < 1e-15);
        assert!((w - 0.60653).abs() < 1e-5);
        let mut last = 1.0;
        for k in 1..40 {
            let t = k as f64 * 0.5;
            let w = rbf_weight(&[t, -t, 0.5 * t], &[0.0; 3], &[1.0, 2.0, 0.3]).unwrap();
            assert!(w > 0.0 || t > 10.0);
            assert!(w < last);
            last = w;
        }
        assert!(last < 1e-100);
        assert!(rbf_weight(&[0.0], &[0.0], &[0.0]).is_err());
        assert!(rbf_weight(&[0.0], &[0.0], &[-1.0]).is_err());
    }

    #[test]
    fn two_node_hand_example() {
        let nodes = Mat::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -4.0, 0.5, 2.0]);
        let g = GraphInput::fully_connected(nodes.clone(), vec![Mat::zeros(2, 2)]).unwrap();
        let layer = ConvLayer {
            theta0: Mat::identity(3, 3),
            theta: vec![Mat::identity(3, 3)],
            mu: vec![vec![0.0]],
            sigma: vec![vec![1.0]],
            bias: vec![0.0; 3],
        };
        let out = conv_forward(&nodes, &g, &layer).unwrap();
        for c in 0..3 {
            let s = nodes[(0, c)] + nodes[(1, c)];
            assert_eq!(out[(0, c)], s);
            assert_eq!(out[(1, c)], s);
        }
    }

    #[test]
    fn zero_message_maps_is_self_map() {
        let g = random_graph(5, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let theta0 = Mat::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0));
        let layer = ConvLayer {
            theta0: theta0.clone(),
            theta: vec![Mat::zeros(4, 2); 3],
            mu: vec![vec![0.1, 0.2, 0.3]; 3],
            sigma: vec![vec![1.0; 3]; 3],
            bias: vec![0.0; 4],
        };
        let out = conv_forward(&g.node_features, &g, &layer).unwrap();
        assert!((out - &g.node_features * theta0.transpose()).abs().max() < 1e-15);
    }

    #[test]
    fn isolated_node_rejected() {
        let nodes = Mat::zeros(3, 1);
        let mut mask = Mat::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 });
        mask[(2, 0)] = 0.0;
        mask[(2, 1)] = 0.0;
        assert!(GraphInput::new(nodes.clone(), vec![Mat::zeros(3, 3)], mask).is_err());
        let mut selfloop = Mat::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 });
        selfloop[(1, 1)] = 1.0;
        assert!(GraphInput::new(nodes, vec![Mat::zeros(3, 3)], selfloop).is_err());
    }

    #[test]
    fn conv_and_network_are_permutation_equivariant() {
        let g = random_graph(5, 3);
        let perm = [3, 0, 4, 1, 2];
        let gp = g.permuted(&perm).unwrap();
        let params = GnnParameters::init(&small_config(), 2, EDGE_CHANNELS, 4).unwrap();
        let layer = params.conv_layer(0).unwrap();
        let a = conv_forward(&g.node_features, &g, &layer).unwrap();
        let b = conv_forward(&gp.node_features, &gp, &layer).unwrap();
        for i in 0..5 {
            for c in 0..a.ncols() {
                assert!((b[(i, c)] - a[(perm[i], c)]).abs() < 1e-12);
            }
        }
        for mode in [Mode::Eval, Mode::Train] {
            let (ua, _) = gnn_forward_cached::<ChaCha8Rng>(&g, &params, mode, None).unwrap();
            let (ub, _) = gnn_forward_cached::<ChaCha8Rng>(&gp, &params, mode, None).unwrap();
            for (i, &pi) in perm.iter().enumerate() {
                for c in 0..ua.u.ncols() {
                    assert!((ub.u[(i, c)] - ua.u[(pi, c)]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn default_architecture_shapes() {
        let g = random_graph(401, 5);
        let params = GnnParameters::init(&GnnConfig::default(), 2, EDGE_CHANNELS, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let u = gnn_forward(&g, &params, Mode::Eval, &mut rng).unwrap();
        assert_eq!(u.u.shape(), (401, 16));
        let names: Vec<&str> = params.tensors.iter().map(|t| t.name.as_str()).collect();
        assert!(names.contains(&"conv0.theta"));
        assert_eq!(params.tensor("conv0.theta").unwrap().shape, vec![8, 256, 2]);
        assert_eq!(
            params.tensor("conv1.theta").unwrap().shape,
            vec![4, 128, 256]
        );
        assert_eq!(params.tensor("dense3.weight").unwrap().shape, vec![16, 16]);
        assert!(params.tensor("dense3.bn.gamma").is_none());
    }

    #[test]
    fn eval_mode_is_bitwise_deterministic() {
        let g = random_graph(7, 7);
        let params = GnnParameters::init(&small_config(), 2, EDGE_CHANNELS, 8).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(999);
        let a = gnn_forward(&g, &params, Mode::Eval, &mut r1).unwrap();
        let b = gnn_forward(&g, &params, Mode::Eval, &mut r2).unwrap();
        assert_eq!(a, b);
        // train mode with the same stream is reproducible too
        let mut r3 = ChaCha8Rng::seed_from_u64(5);
        let mut r4 = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(
            gnn_forward(&g, &params, Mode::Train, &mut r3).unwrap(),
            gnn_forward(&g, &params, Mode::Train, &mut r4).unwrap()
        );
    }

    #[test]
    fn batch_norm_standardizes_in_train_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Mat::from_fn(40, 6, |_, j| {
            50.0 * rng.random_range(-1.0..1.0) + j as f64 * 10.0
        });
        let stats = BnStats {
            mean: vec![0.0; 6],
            var: vec![1.0; 6],
        };
        let (out, _) = bn_forward(&x, &[1.0; 6], &[0.0; 6], &stats, 1e-5, Mode::Train);
        for j in 0..6 {
            let c = out.column(j);
            let m = c.mean();
            let var = c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 40.0;
            assert!(m.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let g = random_graph(6, 10);
        let mut params = GnnParameters::init(&small_config(), 2, EDGE_CHANNELS, 11).unwrap();
        let (_, cache) = gnn_forward_cached::<ChaCha8Rng>(&g, &params, Mode::Train, None).unwrap();
        let batch_mean = cache.conv[0].bn.mean.clone();
        let batch_var = cache.conv[0].bn.var_unbiased.clone();
        update_running_stats(&mut params, &cache);
        for j in 0..batch_mean.len() {
            assert!((params.running[0].mean[j] - 0.1 * batch_mean[j]).abs() < 1e-15);
            assert!((params.running[0].var[j] - (0.9 + 0.1 * batch_var[j])).abs() < 1e-15);
        }
    }

    #[test]
    fn dropout_only_in_train_mode() {
        let g = random_graph(6, 12);
        let params = GnnParameters::init(&small_config(), 2, EDGE_CHANNELS, 13).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, cache) = gnn_forward_cached(&g, &params, Mode::Train, Some(&mut rng)).unwrap();
        let mask = cache.conv[0].mask.as_ref().unwrap();
        assert!(mask
            .iter()
            .all(|&m| m == 0.0 || (m - 1.0 / 0.75).abs() < 1e-15));
        let (_, cache) = gnn_forward_cached(&g, &params, Mode::Eval, Some(&mut rng)).unwrap();
        assert!(cache.conv.iter().all(|c| c.mask.is_none()));
    }

    fn objective(g: &GraphInput, p: &GnnParameters, r: &Mat) -> f64 {
        let (u, _) = gnn_forward_cached::<ChaCha8Rng>(g, p, Mode::Train, None).unwrap();
        // a non-linear readout so second-moment paths are exercised
        u.u.zip_map(r, |a, b| a * b + 0.1 * a * a).sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let g = random_graph(6, 14);
        let mut params = GnnParameters::init(&small_config(), 2, EDGE_CHANNELS, 15).unwrap();
        // move biases and BN shifts off their initial zeros
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for t in params.tensors.clone() {
            if t.name.ends_with("bias") || t.name.ends_with("beta") {
                for k in t.range() {
                    params.values[k] = rng.random_range(-0.3..0.3);
                }
            }
        }
        let r = Mat::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let (u, cache) = gnn_forward_cached::<ChaCha8Rng>(&g, &params, Mode::Train, None).unwrap();
        let d_u = u.u.zip_map(&r, |a, b| b + 0.2 * a);
        let grad = gnn_backward(&g, &params, &cache, &d_u).unwrap();
        let h = 1e-4;
        for t in &params.tensors {
            let mut num = 0.0;
            let mut den = 0.0;
            for k in t.range() {
                let mut p = params.clone();
                p.values[k] += h;
                let fp = objective(&g, &p, &r);
                p.values[k] -= 2.0 * h;
                let fm = objective(&g, &p, &r);
                let fd = (fp - fm) / (2.0 * h);
                num += (fd - grad[k]).powi(2);
                den += fd.powi(2).max(grad[k].powi(2));
            }
            // biases feeding a train-mode batch norm have an exactly zero
            // gradient; compare those on an absolute scale
            let rel = num.sqrt() / den.sqrt().max(1e-6);
            assert!(rel < 1e-4, "{}: relative error {rel}", t.name);
        }
    }

    #[test]
    fn eval_mode_gradients_match_finite_differences() {
        let g = random_graph(6, 17);
        let mut params = GnnParameters::init(&small_config(), 2, EDGE_CHANNELS, 18).unwrap();
        for s in &mut params.running {
            s.mean
                .iter_mut()
                .enumerate()
                .for_each(|(j, m)| *m = 0.1 * j as f64);
            s.var.iter_mut().for_each(|v| *v = 1.7);
        }
        let (u, cache) = gnn_forward_cached::<ChaCha8Rng>(&g, &params, Mode::Eval, None).unwrap();
        let d_u = Mat::from_element(u.u.nrows(), u.u.ncols(), 1.0);
        let grad = gnn_backward(&g, &params, &cache, &d_u).unwrap();
        let f = |p: &GnnParameters| {
            gnn_forward_cached::<ChaCha8Rng>(&g, p, Mode::Eval, None)
                .unwrap()
                .0
                .u
                .sum()
        };
        for k in (0..params.n_params()).step_by(7) {
            let mut p = params.clone();
            p.values[k] += 1e-5;
            let fp = f(&p);
            p.values[k] -= 2e-5;
            let fd = (fp - f(&p)) / 2e-5;
            assert!(
                (fd - grad[k]).abs() < 1e-6 * (1.0 + fd.abs()),
                "index {k}: {fd} vs {}",
                grad[k]
            );
        }
    }

    #[test]
    fn scales_clamped_and_validated() {
        let mut params = GnnParameters::init(&small_config(), 2, EDGE_CHANNELS, 19).unwrap();
        let r = params.scale_ranges()[0].clone();
        params.values[r.start] = -2.0;
        assert!(params.validate().is_err());
        params.clamp_scales();
        assert_eq!(params.values[r.start], MIN_KERNEL_SCALE);
        assert!(params.validate().is_ok());
    }

    #[test]
    fn init_is_seeded() {
        let a = GnnParameters::init(&small_config(), 2, EDGE_CHANNELS, 20).unwrap();
        let b = GnnParameters::init(&small_config(), 2, EDGE_CHANNELS, 20).unwrap();
        let c = GnnParameters::init(&small_config(), 2, EDGE_CHANNELS, 21).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values, c.values);
        let mu = a.tensor("conv0.mu").unwrap().range();
        assert!(a.values[mu].iter().all(|m| (-1.0..1.0).contains(m)));
    }
}
