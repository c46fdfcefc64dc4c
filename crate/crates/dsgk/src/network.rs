//! The shared classifier: stacked affine layers with batch normalization
//! and ReLU on the hidden layers, a plain affine output layer, and a
//! row-softmax head. Forward, backward, and the optimizers are written out
//! by hand so every gradient can be checked against finite differences.
//!
//! Training-mode forward normalizes with batch statistics and updates the
//! running estimates; inference-mode forward uses the frozen running
//! statistics, so a row's output depends only on that row.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 5] = b"DSGK1";
const BN_MOMENTUM: f64 = 0.1;
const BN_EPSILON: f64 = 1e-5;
const SGD_MOMENTUM: f64 = 0.9;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;

/// Batch-normalization parameters and running statistics for one layer.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNorm {
    fn identity(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        }
    }
}

/// One affine layer, optionally followed by batch normalization.
#[derive(Debug, Clone)]
pub struct Layer {
    /// `out x in`, row-major.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub norm: Option<BatchNorm>,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// All trainable state of the classifier.
#[derive(Debug, Clone)]
pub struct NetworkParams {
    pub layers: Vec<Layer>,
}

struct NormCache {
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
}

struct LayerCache {
    input: Array2<f64>,
    norm: Option<NormCache>,
    relu_in: Option<Array2<f64>>,
}

/// Output of a forward pass plus everything backward needs.
pub struct Forward {
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
    caches: Vec<LayerCache>,
    training: bool,
}

impl Forward {
    /// Smallest distance of any hidden ReLU input from its kink.
    ///
    /// Finite differences on the loss are only trustworthy when this
    /// clears the probe step times the local sensitivity; the gradient
    /// checker uses it to reject non-smooth points.
    pub fn min_abs_relu_input(&self) -> f64 {
        self.caches
            .iter()
            .filter_map(|c| c.relu_in.as_ref())
            .flat_map(|m| m.iter())
            .map(|v| v.abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest per-unit batch variance seen by a norm layer.
    ///
    /// A vanishing batch variance makes the normalization locally
    /// ill-conditioned (curvature grows like the inverse variance
    /// squared), which ruins finite-difference probes long before it
    /// breaks the analytic gradient.
    pub fn min_norm_variance(&self) -> f64 {
        self.caches
            .iter()
            .filter_map(|c| c.norm.as_ref())
            .flat_map(|n| n.inv_std.iter())
            .map(|&inv| 1.0 / (inv * inv))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Row-wise softmax with max-subtraction stabilization.
pub fn softmax(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

impl NetworkParams {
    /// Glorot-style scaled-uniform initialization: weights uniform in
    /// `(-l, l)` with `l = sqrt(6/(in+out))`, zero biases, identity norm.
    /// Hidden layers get a norm block; the final layer does not.
    pub fn init(input_dim: usize, layer_sizes: &[usize], seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidSizes("input dimension is 0".into()));
        }
        if layer_sizes.is_empty() {
            return Err(Error::InvalidSizes("no layers given".into()));
        }
        if let Some(pos) = layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidSizes(format!("layer {pos} has width 0")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(layer_sizes.len());
        let mut fan_in = input_dim;
        let last = layer_sizes.len() - 1;
        for (li, &out) in layer_sizes.iter().enumerate() {
            let limit = (6.0 / (fan_in + out) as f64).sqrt();
            let mut w = Vec::with_capacity(out * fan_in);
            for _ in 0..out * fan_in {
                w.push((rng.random::<f64>() * 2.0 - 1.0) * limit);
            }
            let weights = Array2::from_shape_vec((out, fan_in), w).expect("shape fits");
            let norm = if li < last {
                Some(BatchNorm::identity(out))
            } else {
                None
            };
            layers.push(Layer {
                weights,
                bias: Array1::zeros(out),
                norm,
            });
            fan_in = out;
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    /// Number of classes (width of the final layer).
    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").out_dim()
    }

    /// Training-mode forward: batch statistics in the norm layers,
    /// running statistics updated in place.
    pub fn forward_train(&mut self, x: ArrayView2<'_, f64>) -> Result<Forward> {
        let (fwd, stats) = self.forward_impl(x, true)?;
        for (layer, stat) in self.layers.iter_mut().zip(stats) {
            if let (Some(norm), Some((mean, var))) = (layer.norm.as_mut(), stat) {
                norm.running_mean =
                    &norm.running_mean * (1.0 - norm.momentum) + &(&mean * norm.momentum);
                norm.running_var =
                    &norm.running_var * (1.0 - norm.momentum) + &(&var * norm.momentum);
            }
        }
        Ok(fwd)
    }

    /// Inference-mode forward: frozen running statistics, no side effects.
    pub fn forward_infer(&self, x: ArrayView2<'_, f64>) -> Result<Forward> {
        Ok(self.forward_impl(x, false)?.0)
    }

    /// Forward with batch statistics in the norm layers but without
    /// touching the running estimates. Evaluation code uses this to
    /// measure the same quantity training minimizes, side-effect free.
    pub fn forward_batch_stats(&self, x: ArrayView2<'_, f64>) -> Result<Forward> {
        Ok(self.forward_impl(x, true)?.0)
    }

    #[allow(clippy::type_complexity)]
    fn forward_impl(
        &self,
        x: ArrayView2<'_, f64>,
        training: bool,
    ) -> Result<(Forward, Vec<Option<(Array1<f64>, Array1<f64>)>>)> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        if x.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input width {} vs network input dim {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        let has_norm = self.layers.iter().any(|l| l.norm.is_some());
        if training && has_norm && n < 2 {
            return Err(Error::SingleSampleTrainingBatch);
        }

        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut batch_stats = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let input = a;
            let z = input.dot(&layer.weights.t()) + layer.bias.view().insert_axis(Axis(0));
            let (y, norm_cache, stat) = match layer.norm.as_ref() {
                Some(norm) => {
                    let (mean, var) = if training {
                        let mean = z.mean_axis(Axis(0)).expect("nonempty");
                        let centered = &z - &mean.view().insert_axis(Axis(0));
                        let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("nonempty");
                        (mean, var)
                    } else {
                        (norm.running_mean.clone(), norm.running_var.clone())
                    };
                    let inv_std = var.mapv(|v| 1.0 / (v + norm.epsilon).sqrt());
                    let x_hat = (&z - &mean.view().insert_axis(Axis(0)))
                        * inv_std.view().insert_axis(Axis(0));
                    let y = &x_hat * &norm.gamma.view().insert_axis(Axis(0))
                        + norm.beta.view().insert_axis(Axis(0));
                    let stat = if training { Some((mean, var)) } else { None };
                    (y, Some(NormCache { x_hat, inv_std }), stat)
                }
                None => (z, None, None),
            };
            batch_stats.push(stat);
            let (out, relu_in) = if li < last {
                (y.mapv(|v| v.max(0.0)), Some(y))
            } else {
                (y, None)
            };
            caches.push(LayerCache {
                input,
                norm: norm_cache,
                relu_in,
            });
            a = out;
        }
        let probs = softmax(a.view());
        Ok((
            Forward {
                logits: a,
                probs,
                caches,
                training,
            },
            batch_stats,
        ))
    }

    /// Reverse-mode pass from a gradient w.r.t. the logits.
    ///
    /// Returns parameter gradients plus the gradient w.r.t. the input batch.
    /// Only training-mode caches can be backpropagated (the norm backward
    /// needs the batch-statistics path).
    pub fn backward(&self, fwd: &Forward, d_logits: ArrayView2<'_, f64>) -> Result<(ParamGrads, Array2<f64>)> {
        if !fwd.training {
            return Err(Error::StaleCache(
                "cache comes from an inference-mode forward".into(),
            ));
        }
        if fwd.caches.len() != self.layers.len() {
            return Err(Error::StaleCache(format!(
                "cache has {} layers, network has {}",
                fwd.caches.len(),
                self.layers.len()
            )));
        }
        if d_logits.shape() != fwd.logits.shape() {
            return Err(Error::StaleCache(format!(
                "upstream gradient shape {:?} vs logits {:?}",
                d_logits.shape(),
                fwd.logits.shape()
            )));
        }
        let n = fwd.logits.nrows();
        let last = self.layers.len() - 1;
        let mut grads = ParamGrads::zeros_like(self);
        let mut d = d_logits.to_owned();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let cache = &fwd.caches[li];
            if cache.input.nrows() != n || cache.input.ncols() != layer.in_dim() {
                return Err(Error::StaleCache(format!(
                    "layer {li} cache shape {:?} does not match network",
                    cache.input.shape()
                )));
            }
            if li < last {
                let relu_in = cache.relu_in.as_ref().ok_or_else(|| {
                    Error::StaleCache(format!("layer {li} cache is missing the relu input"))
                })?;
                d.zip_mut_with(relu_in, |g, &v| {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            let d_z = match (&layer.norm, &cache.norm) {
                (Some(norm), Some(nc)) => {
                    let g = &mut grads.layers[li];
                    let d_gamma = (&d * &nc.x_hat).sum_axis(Axis(0));
                    let d_beta = d.sum_axis(Axis(0));
                    *g.gamma.as_mut().expect("norm layer has gamma grad") += &d_gamma;
                    *g.beta.as_mut().expect("norm layer has beta grad") += &d_beta;
                    let d_xhat = &d * &norm.gamma.view().insert_axis(Axis(0));
                    let m1 = d_xhat.mean_axis(Axis(0)).expect("nonempty");
                    let m2 = (&d_xhat * &nc.x_hat).mean_axis(Axis(0)).expect("nonempty");
                    (&d_xhat
                        - &m1.view().insert_axis(Axis(0))
                        - &(&nc.x_hat * &m2.view().insert_axis(Axis(0))))
                        * nc.inv_std.view().insert_axis(Axis(0))
                }
                (None, None) => d,
                _ => {
                    return Err(Error::StaleCache(format!(
                        "layer {li} norm presence differs between cache and network"
                    )))
                }
            };
            grads.layers[li].weights += &d_z.t().dot(&cache.input);
            grads.layers[li].bias += &d_z.sum_axis(Axis(0));
            d = d_z.dot(&layer.weights);
        }
        Ok((grads, d))
    }

    /// Trainable parameters flattened in a fixed order: per layer, weights
    /// row-major, bias, then gamma and beta when present. Running statistics
    /// are not trainable and are excluded.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend(layer.weights.iter());
            out.extend(layer.bias.iter());
            if let Some(norm) = &layer.norm {
                out.extend(norm.gamma.iter());
                out.extend(norm.beta.iter());
            }
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let mut it = flat.iter();
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut() {
                *w = *it.next().ok_or_else(|| {
                    Error::ShapeMismatch("flat parameter vector too short".into())
                })?;
            }
            for b in layer.bias.iter_mut() {
                *b = *it.next().ok_or_else(|| {
                    Error::ShapeMismatch("flat parameter vector too short".into())
                })?;
            }
            if let Some(norm) = &mut layer.norm {
                for g in norm.gamma.iter_mut().chain(norm.beta.iter_mut()) {
                    *g = *it.next().ok_or_else(|| {
                        Error::ShapeMismatch("flat parameter vector too short".into())
                    })?;
                }
            }
        }
        if it.next().is_some() {
            return Err(Error::ShapeMismatch("flat parameter vector too long".into()));
        }
        Ok(())
    }

    /// Named spans of [`flat_params`], one per parameter tensor.
    pub fn param_segments(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut out = Vec::new();
        let mut pos = 0usize;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut push = |name: String, len: usize, pos: &mut usize| {
                out.push((name, *pos..*pos + len));
                *pos += len;
            };
            push(format!("layer{li}.weights"), layer.weights.len(), &mut pos);
            push(format!("layer{li}.bias"), layer.bias.len(), &mut pos);
            if let Some(norm) = &layer.norm {
                push(format!("layer{li}.gamma"), norm.gamma.len(), &mut pos);
                push(format!("layer{li}.beta"), norm.beta.len(), &mut pos);
            }
        }
        out
    }

    pub fn param_len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.weights.len()
                    + l.bias.len()
                    + l.norm.as_ref().map_or(0, |n| n.gamma.len() + n.beta.len())
            })
            .sum()
    }

    /// Serializes to the flat checkpoint layout: the magic string, a
    /// little-endian u32 layer count, per-layer u32 in/out/flags descriptors
    /// (bit 0 of flags marks a norm block), then per layer the f64 arrays in
    /// declaration order: weights row-major, bias, and for norm layers
    /// gamma, beta, running mean, running variance, momentum, epsilon.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for layer in &self.layers {
            out.extend_from_slice(&(layer.in_dim() as u32).to_le_bytes());
            out.extend_from_slice(&(layer.out_dim() as u32).to_le_bytes());
            let flags: u32 = if layer.norm.is_some() { 1 } else { 0 };
            out.extend_from_slice(&flags.to_le_bytes());
        }
        for layer in &self.layers {
            for v in layer.weights.iter().chain(layer.bias.iter()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            if let Some(norm) = &layer.norm {
                for v in norm
                    .gamma
                    .iter()
                    .chain(norm.beta.iter())
                    .chain(norm.running_mean.iter())
                    .chain(norm.running_var.iter())
                {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&norm.momentum.to_le_bytes());
                out.extend_from_slice(&norm.epsilon.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::BadCheckpoint("unexpected end of data".into()));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let magic = take(&mut pos, 5)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadCheckpoint("bad magic string".into()));
        }
        let read_u32 = |pos: &mut usize| -> Result<u32> {
            let b = take(pos, 4)?;
            Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
        };
        let count = read_u32(&mut pos)? as usize;
        if count == 0 {
            return Err(Error::BadCheckpoint("zero layers".into()));
        }
        let mut dims = Vec::with_capacity(count);
        for _ in 0..count {
            let in_dim = read_u32(&mut pos)? as usize;
            let out_dim = read_u32(&mut pos)? as usize;
            let flags = read_u32(&mut pos)?;
            if in_dim == 0 || out_dim == 0 {
                return Err(Error::BadCheckpoint("zero layer dimension".into()));
            }
            dims.push((in_dim, out_dim, flags));
        }
        for w in dims.windows(2) {
            if w[0].1 != w[1].0 {
                return Err(Error::BadCheckpoint(format!(
                    "layer widths do not chain: {} then {}",
                    w[0].1, w[1].0
                )));
            }
        }
        let read_f64 = |pos: &mut usize| -> Result<f64> {
            let b = take(pos, 8)?;
            Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
        };
        let read_arr = |pos: &mut usize, len: usize| -> Result<Array1<f64>> {
            let mut v = Vec::with_capacity(len);
            for _ in 0..len {
                v.push(read_f64(pos)?);
            }
            Ok(Array1::from_vec(v))
        };
        let mut layers = Vec::with_capacity(count);
        for (in_dim, out_dim, flags) in dims {
            let w = read_arr(&mut pos, out_dim * in_dim)?;
            let weights = Array2::from_shape_vec((out_dim, in_dim), w.to_vec())
                .expect("shape fits");
            let bias = read_arr(&mut pos, out_dim)?;
            let norm = if flags & 1 != 0 {
                let gamma = read_arr(&mut pos, out_dim)?;
                let beta = read_arr(&mut pos, out_dim)?;
                let running_mean = read_arr(&mut pos, out_dim)?;
                let running_var = read_arr(&mut pos, out_dim)?;
                let momentum = read_f64(&mut pos)?;
                let epsilon = read_f64(&mut pos)?;
                Some(BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    momentum,
                    epsilon,
                })
            } else {
                None
            };
            layers.push(Layer {
                weights,
                bias,
                norm,
            });
        }
        if pos != bytes.len() {
            return Err(Error::BadCheckpoint("trailing bytes".into()));
        }
        Ok(Self { layers })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Hex SHA-256 of the checkpoint bytes.
    pub fn checkpoint_hash(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Per-layer gradient of every trainable parameter.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub gamma: Option<Array1<f64>>,
    pub beta: Option<Array1<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|l| LayerGrads {
                weights: Array2::zeros(l.weights.raw_dim()),
                bias: Array1::zeros(l.bias.len()),
                gamma: l.norm.as_ref().map(|n| Array1::zeros(n.gamma.len())),
                beta: l.norm.as_ref().map(|n| Array1::zeros(n.beta.len())),
            })
            .collect();
        Self { layers }
    }

    pub fn add(&mut self, other: &ParamGrads) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::ShapeMismatch("gradient layer counts differ".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(other.layers.iter()) {
            a.weights += &b.weights;
            a.bias += &b.bias;
            if let (Some(x), Some(y)) = (a.gamma.as_mut(), b.gamma.as_ref()) {
                *x += y;
            }
            if let (Some(x), Some(y)) = (a.beta.as_mut(), b.beta.as_ref()) {
                *x += y;
            }
        }
        Ok(())
    }

    /// Flattened in the same order as [`NetworkParams::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
            if let Some(g) = &l.gamma {
                out.extend(g.iter());
            }
            if let Some(b) = &l.beta {
                out.extend(b.iter());
            }
        }
        out
    }
}

/// Optimizer family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OptimizerKind::SgdMomentum => write!(f, "sgd-momentum"),
            OptimizerKind::Adam => write!(f, "adam"),
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd-momentum" | "sgd" => Ok(OptimizerKind::SgdMomentum),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::InvalidSpec(format!(
                "unknown optimizer `{other}` (sgd-momentum|adam)"
            ))),
        }
    }
}

/// Per-parameter moment buffers plus the step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    step_count: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: &NetworkParams) -> Self {
        let len = params.param_len();
        Self {
            kind,
            learning_rate,
            step_count: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// Applies one in-place update.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &ParamGrads) -> Result<()> {
        let g = grads.flat();
        if g.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient length {} vs optimizer buffers {}",
                g.len(),
                self.m.len()
            )));
        }
        let mut theta = params.flat_params();
        if theta.len() != g.len() {
            return Err(Error::ShapeMismatch(format!(
                "parameter length {} vs gradient length {}",
                theta.len(),
                g.len()
            )));
        }
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::SgdMomentum => {
                for i in 0..g.len() {
                    self.m[i] = SGD_MOMENTUM * self.m[i] + g[i];
                    theta[i] -= lr * self.m[i];
                }
            }
            OptimizerKind::Adam => {
                self.step_count += 1;
                let t = self.step_count as i32;
                let bc1 = 1.0 - ADAM_BETA1.powi(t);
                let bc2 = 1.0 - ADAM_BETA2.powi(t);
                for i in 0..g.len() {
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g[i];
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    theta[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
                }
            }
        }
        params.set_flat_params(&theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_batch(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn init_is_deterministic() {
        let a = NetworkParams::init(10, &[16, 8, 4], 42).unwrap();
        let b = NetworkParams::init(10, &[16, 8, 4], 42).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = NetworkParams::init(10, &[16, 8, 4], 43).unwrap();
        assert_ne!(a.to_bytes(), c.to_bytes());
    }

    #[test]
    fn init_rejects_bad_sizes() {
        assert!(matches!(
            NetworkParams::init(0, &[4], 0),
            Err(Error::InvalidSizes(_))
        ));
        assert!(matches!(
            NetworkParams::init(4, &[], 0),
            Err(Error::InvalidSizes(_))
        ));
        assert!(matches!(
            NetworkParams::init(4, &[8, 0, 2], 0),
            Err(Error::InvalidSizes(_))
        ));
    }

    #[test]
    fn hidden_layers_have_norm_final_does_not() {
        let net = NetworkParams::init(10, &[16, 8, 4], 0).unwrap();
        assert!(net.layers[0].norm.is_some());
        assert!(net.layers[1].norm.is_some());
        assert!(net.layers[2].norm.is_none());
    }

    #[test]
    fn zero_final_layer_gives_uniform_probs() {
        let mut net = NetworkParams::init(6, &[8, 4], 1).unwrap();
        net.layers[1].weights.fill(0.0);
        net.layers[1].bias.fill(0.0);
        let x = random_batch(5, 6, 2);
        let fwd = net.forward_infer(x.view()).unwrap();
        for row in fwd.probs.rows() {
            for &p in row {
                assert_abs_diff_eq!(p, 0.25, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn probs_rows_sum_to_one() {
        let mut net = NetworkParams::init(6, &[8, 4], 1).unwrap();
        let x = random_batch(9, 6, 3);
        let fwd = net.forward_train(x.view()).unwrap();
        for row in fwd.probs.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn inference_is_repeatable_and_rowwise() {
        let mut net = NetworkParams::init(6, &[8, 4], 1).unwrap();
        // A couple of training passes so the running statistics move.
        for s in 0..3 {
            net.forward_train(random_batch(16, 6, s).view()).unwrap();
        }
        let x = random_batch(4, 6, 99);
        let a = net.forward_infer(x.view()).unwrap();
        let b = net.forward_infer(x.view()).unwrap();
        assert_eq!(a.logits, b.logits);
        // Row 0 alone gives the same output as row 0 in a batch.
        let solo = net.forward_infer(x.slice(ndarray::s![0..1, ..]).view()).unwrap();
        for (u, v) in solo.logits.row(0).iter().zip(a.logits.row(0).iter()) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-12);
        }
    }

    #[test]
    fn training_single_sample_with_norm_errors() {
        let mut net = NetworkParams::init(6, &[8, 4], 1).unwrap();
        let x = random_batch(1, 6, 0);
        assert!(matches!(
            net.forward_train(x.view()),
            Err(Error::SingleSampleTrainingBatch)
        ));
    }

    #[test]
    fn backward_rejects_stale_caches() {
        let mut net = NetworkParams::init(6, &[8, 4], 1).unwrap();
        let x = random_batch(4, 6, 0);
        let fwd = net.forward_train(x.view()).unwrap();
        let bad = Array2::<f64>::zeros((4, 3));
        assert!(matches!(
            net.backward(&fwd, bad.view()),
            Err(Error::StaleCache(_))
        ));
        let infer = net.forward_infer(x.view()).unwrap();
        let d = Array2::<f64>::zeros((4, 4));
        assert!(matches!(
            net.backward(&infer, d.view()),
            Err(Error::StaleCache(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut net = NetworkParams::init(6, &[8, 4], 1).unwrap();
        let x = random_batch(4, 6, 0);
        let fwd = net.forward_train(x.view()).unwrap();
        let d = Array2::<f64>::zeros((4, 4));
        let (grads, d_input) = net.backward(&fwd, d.view()).unwrap();
        assert!(grads.flat().iter().all(|&v| v == 0.0));
        assert!(d_input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dead_relu_unit_gets_zero_weight_gradient() {
        let mut net = NetworkParams::init(3, &[2, 2], 1).unwrap();
        // Drive unit 0 of the hidden layer permanently negative via its beta.
        if let Some(norm) = net.layers[0].norm.as_mut() {
            norm.beta[0] = -100.0;
        }
        let x = random_batch(6, 3, 0);
        let fwd = net.forward_train(x.view()).unwrap();
        let d = Array2::from_elem((6, 2), 1.0);
        let (grads, _) = net.backward(&fwd, d.view()).unwrap();
        // Incoming weights of the dead unit see no gradient.
        for v in grads.layers[0].weights.row(0) {
            assert_eq!(*v, 0.0);
        }
    }

    // Finite differences of sum(logits^2) against the analytic backward.
    #[test]
    fn backward_matches_finite_differences() {
        let mut net = NetworkParams::init(5, &[7, 3], 11).unwrap();
        let x = random_batch(8, 5, 21);
        let fwd = net.forward_train(x.view()).unwrap();
        let upstream = &fwd.logits * 2.0;
        let (grads, _) = net.backward(&fwd, upstream.view()).unwrap();
        let analytic = grads.flat();
        let base = net.flat_params();
        let eps = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += eps;
            net.set_flat_params(&plus).unwrap();
            let fp: f64 = net.forward_train(x.view()).unwrap().logits.mapv(|v| v * v).sum();
            let mut minus = base.clone();
            minus[i] -= eps;
            net.set_flat_params(&minus).unwrap();
            let fm: f64 = net.forward_train(x.view()).unwrap().logits.mapv(|v| v * v).sum();
            let numeric = (fp - fm) / (2.0 * eps);
            if analytic[i].abs() < 1e-8 && numeric.abs() < 1e-8 {
                // Unresolvable by finite differences (e.g. a bias feeding
                // a norm layer, whose true gradient is exactly zero).
                continue;
            }
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((analytic[i] - numeric).abs() / denom);
        }
        net.set_flat_params(&base).unwrap();
        assert!(worst <= 1e-5, "max relative error {worst}");
    }

    #[test]
    fn sgd_momentum_unit_step() {
        let mut net = NetworkParams::init(2, &[2], 0).unwrap();
        let before = net.flat_params();
        let mut grads = ParamGrads::zeros_like(&net);
        grads.layers[0].weights.fill(1.0);
        grads.layers[0].bias.fill(1.0);
        let mut opt = OptimizerState::new(OptimizerKind::SgdMomentum, 1.0, &net);
        opt.step(&mut net, &grads).unwrap();
        for (a, b) in net.flat_params().iter().zip(before.iter()) {
            assert_abs_diff_eq!(b - a, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        for kind in [OptimizerKind::SgdMomentum, OptimizerKind::Adam] {
            let mut net = NetworkParams::init(3, &[4, 2], 5).unwrap();
            let before = net.flat_params();
            let grads = ParamGrads::zeros_like(&net);
            let mut opt = OptimizerState::new(kind, 0.001, &net);
            opt.step(&mut net, &grads).unwrap();
            assert_eq!(net.flat_params(), before);
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let mut net = NetworkParams::init(5, &[7, 3], 11).unwrap();
        net.forward_train(random_batch(8, 5, 1).view()).unwrap();
        let bytes = net.to_bytes();
        let restored = NetworkParams::from_bytes(&bytes).unwrap();
        assert_eq!(restored.to_bytes(), bytes);
        assert_eq!(restored.checkpoint_hash(), net.checkpoint_hash());
        assert_eq!(&bytes[0..5], b"DSGK1");
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(matches!(
            NetworkParams::from_bytes(b"nope!"),
            Err(Error::BadCheckpoint(_))
        ));
        let net = NetworkParams::init(3, &[2], 0).unwrap();
        let mut bytes = net.to_bytes();
        bytes.push(0);
        assert!(matches!(
            NetworkParams::from_bytes(&bytes),
            Err(Error::BadCheckpoint(_))
        ));
    }

    #[test]
    fn flat_params_roundtrip() {
        let mut net = NetworkParams::init(4, &[5, 3], 7).unwrap();
        let flat = net.flat_params();
        assert_eq!(flat.len(), net.param_len());
        let segments = net.param_segments();
        assert_eq!(segments.last().unwrap().1.end, flat.len());
        let mut doubled = flat.clone();
        for v in doubled.iter_mut() {
            *v *= 2.0;
        }
        net.set_flat_params(&doubled).unwrap();
        assert_eq!(net.flat_params(), doubled);
    }
}
