//! Loss functions and their analytic gradients.
//!
//! The discrepancy losses embed a batch on the unit hypersphere and measure
//! the squared geodesic distance between the source and target embeddings:
//!
//! - feature embedding: flatten the `N x d` batch, scale by the Gaussian
//!   kernel of the two batch covariances, and normalize;
//! - moment embedding: flatten the `d x d` batch covariance instead.
//!
//! Because the kernel is a positive scalar applied to both sides, it cancels
//! under the normalization, so the loss value is kernel-invariant; the kernel
//! is still computed and reported. The categorical variant applies the same
//! construction per class slice and averages over the classes with enough
//! samples in both domains. CORAL (covariance gap over `4 d^2`) and linear
//! MMD (squared mean gap) are provided as baseline discrepancies.
//!
//! Every gradient here is exact and is exercised against central finite
//! differences in the test suites.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::moments::{batch_stats, gaussian_kernel, FeatureBatch};
use crate::network::{NetworkParams, ParamGrads};
use crate::sphere::ANTIPODAL_TOL;

/// How a batch is mapped onto the sphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingMode {
    /// Flatten the batch itself (`N x d` entries).
    Feature,
    /// Flatten the batch covariance (`d x d` entries).
    Moment,
}

impl fmt::Display for EmbeddingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbeddingMode::Feature => write!(f, "feature"),
            EmbeddingMode::Moment => write!(f, "moment"),
        }
    }
}

impl FromStr for EmbeddingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature" => Ok(EmbeddingMode::Feature),
            "moment" => Ok(EmbeddingMode::Moment),
            other => Err(Error::InvalidSpec(format!(
                "unknown embedding mode `{other}` (feature|moment)"
            ))),
        }
    }
}

/// Which classifier outputs feed the discrepancy losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeaturesForLoss {
    Softmax,
    Logits,
}

impl fmt::Display for FeaturesForLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeaturesForLoss::Softmax => write!(f, "softmax"),
            FeaturesForLoss::Logits => write!(f, "logits"),
        }
    }
}

impl FromStr for FeaturesForLoss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(FeaturesForLoss::Softmax),
            "logits" => Ok(FeaturesForLoss::Logits),
            other => Err(Error::InvalidSpec(format!(
                "unknown feature switch `{other}` (softmax|logits)"
            ))),
        }
    }
}

/// Which discrepancy loss fills the marginal and categorical slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscrepancyKind {
    Sphere,
    Coral,
    Mmd,
}

impl fmt::Display for DiscrepancyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiscrepancyKind::Sphere => write!(f, "sphere"),
            DiscrepancyKind::Coral => write!(f, "coral"),
            DiscrepancyKind::Mmd => write!(f, "mmd"),
        }
    }
}

impl FromStr for DiscrepancyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(DiscrepancyKind::Sphere),
            "coral" => Ok(DiscrepancyKind::Coral),
            "mmd" => Ok(DiscrepancyKind::Mmd),
            other => Err(Error::InvalidSpec(format!(
                "unknown discrepancy `{other}` (sphere|coral|mmd)"
            ))),
        }
    }
}

/// Per-term values of one evaluation of the combined objective.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub l_s: f64,
    pub l_t: f64,
    pub l_k: f64,
    /// Already averaged over the valid classes.
    pub l_k_cat: f64,
    pub total: f64,
    pub divergence_proxy: f64,
    pub kernel_value: f64,
    pub valid_class_count: usize,
}

/// A pairwise discrepancy loss value with gradients w.r.t. both inputs.
#[derive(Debug, Clone)]
pub struct PairLoss {
    pub value: f64,
    pub grad_s: Array2<f64>,
    pub grad_t: Array2<f64>,
}

/// Sphere loss result: the pair loss plus the kernel that scaled the embedding.
#[derive(Debug, Clone)]
pub struct SphereLoss {
    pub value: f64,
    pub grad_s: Array2<f64>,
    pub grad_t: Array2<f64>,
    pub kernel: f64,
}

/// Categorical loss averaged over valid classes, with gradients scattered
/// back to the full batches.
#[derive(Debug, Clone)]
pub struct CategoricalLoss {
    pub value: f64,
    pub grad_s: Array2<f64>,
    pub grad_t: Array2<f64>,
    pub valid_class_count: usize,
}

/// Mean negative log-likelihood of the labeled rows, with the fused
/// softmax gradient `(probs - onehot)/N` w.r.t. the pre-softmax logits.
pub fn cross_entropy_loss(
    probs: ArrayView2<'_, f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>)> {
    let n = probs.nrows();
    let c = probs.ncols();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            n
        )));
    }
    for (i, row) in probs.rows().into_iter().enumerate() {
        let sum = row.sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::RowNotNormalized { row: i, sum });
        }
    }
    let mut value = 0.0;
    let mut grad = probs.to_owned();
    for (i, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(Error::LabelOutOfRange { label, classes: c });
        }
        value -= probs[[i, label]].max(1e-300).ln();
        grad[[i, label]] -= 1.0;
    }
    grad /= n as f64;
    Ok((value / n as f64, grad))
}

/// Pulls a gradient w.r.t. softmax outputs back to the logits:
/// row-wise `p .* (g - <g, p>)`.
pub fn softmax_vjp(probs: ArrayView2<'_, f64>, grad: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = grad.to_owned();
    for (mut g, p) in out.rows_mut().into_iter().zip(probs.rows()) {
        let inner: f64 = g.iter().zip(p.iter()).map(|(a, b)| a * b).sum();
        for (gi, pi) in g.iter_mut().zip(p.iter()) {
            *gi = pi * (*gi - inner);
        }
    }
    out
}

/// Embeds a batch on the unit sphere: flatten (feature mode) or flatten the
/// covariance (moment mode), scale by the kernel value, normalize.
pub fn sphere_embed(
    b: &FeatureBatch,
    kernel_value: f64,
    mode: EmbeddingMode,
) -> Result<crate::sphere::SpherePoint> {
    let raw = embed_vector(b, mode)?;
    let scaled = raw * kernel_value;
    crate::sphere::project_to_sphere(scaled.view())
}

fn embed_vector(b: &FeatureBatch, mode: EmbeddingMode) -> Result<Array1<f64>> {
    match mode {
        EmbeddingMode::Feature => {
            if b.is_empty() {
                return Err(Error::EmptyBatch);
            }
            Ok(b.data.iter().cloned().collect())
        }
        EmbeddingMode::Moment => {
            if b.len() < 2 {
                return Err(Error::ShapeMismatch(format!(
                    "moment embedding needs at least 2 rows, got {}",
                    b.len()
                )));
            }
            let stats = batch_stats(b)?;
            Ok(stats.cov.iter().cloned().collect())
        }
    }
}

struct GeodesicCore {
    value: f64,
    grad_u: Array1<f64>,
    grad_v: Array1<f64>,
}

/// Squared geodesic distance between the normalizations of `u` and `v`,
/// with gradients w.r.t. the raw (pre-normalization) vectors.
fn geodesic_sq_core(u: &Array1<f64>, v: &Array1<f64>) -> Result<GeodesicCore> {
    let nu = u.dot(u).sqrt();
    let nv = v.dot(v).sqrt();
    for n in [nu, nv] {
        if n <= crate::sphere::ZERO_NORM_LIMIT {
            return Err(Error::ZeroNorm {
                norm: n,
                limit: crate::sphere::ZERO_NORM_LIMIT,
            });
        }
    }
    let p = u / nu;
    let q = v / nv;
    if p == q {
        // Identical embeddings: zero loss, exactly zero gradient.
        return Ok(GeodesicCore {
            value: 0.0,
            grad_u: Array1::zeros(u.len()),
            grad_v: Array1::zeros(v.len()),
        });
    }
    let s = p.dot(&q).clamp(-1.0, 1.0);
    if s <= -1.0 + ANTIPODAL_TOL {
        return Err(Error::Antipodal { dot: s });
    }
    let theta = s.acos();
    let value = theta * theta;
    // d(theta^2)/ds = -2 theta / sin(theta), with the small-angle series.
    let ratio = if theta < 1e-8 {
        1.0 + theta * theta / 6.0
    } else {
        theta / theta.sin()
    };
    let dl_ds = -2.0 * ratio;
    // Through p = u/|u|: grad_u = (g - p<p,g>)/|u| with g = dl_ds * q.
    let grad_u = (&q - &(&p * s)) * (dl_ds / nu);
    let grad_v = (&p - &(&q * s)) * (dl_ds / nv);
    Ok(GeodesicCore {
        value,
        grad_u,
        grad_v,
    })
}

/// Maps a gradient w.r.t. the covariance back to the batch rows:
/// `(1/N) (G + G^T) (b_w - mu)` per row `w`.
fn covariance_backward(data: ArrayView2<'_, f64>, grad_cov: &Array2<f64>) -> Array2<f64> {
    let n = data.nrows() as f64;
    let mean = data.mean_axis(Axis(0)).expect("nonempty");
    let centered = &data - &mean.view().insert_axis(Axis(0));
    let sym = grad_cov + &grad_cov.t();
    centered.dot(&sym) / n
}

/// Marginal sphere-kernel geodesic loss between two batches.
///
/// Feature mode requires equal batch shapes (the sampler guarantees this);
/// moment mode requires equal widths and at least two rows per batch.
pub fn sphere_kernel_geodesic_loss(
    b_s: &FeatureBatch,
    b_t: &FeatureBatch,
    kappa: f64,
    mode: EmbeddingMode,
) -> Result<SphereLoss> {
    if b_s.dim() != b_t.dim() {
        return Err(Error::ShapeMismatch(format!(
            "batch widths {} vs {}",
            b_s.dim(),
            b_t.dim()
        )));
    }
    if mode == EmbeddingMode::Feature && b_s.len() != b_t.len() {
        return Err(Error::ShapeMismatch(format!(
            "feature mode needs equal batch sizes, got {} vs {}",
            b_s.len(),
            b_t.len()
        )));
    }
    let stats_s = batch_stats(b_s)?;
    let stats_t = batch_stats(b_t)?;
    let kernel = gaussian_kernel(stats_s.cov.view(), stats_t.cov.view(), kappa)?;

    let raw_s = embed_vector(b_s, mode)?;
    let raw_t = embed_vector(b_t, mode)?;
    let u = &raw_s * kernel;
    let v = &raw_t * kernel;
    let core = geodesic_sq_core(&u, &v)?;
    // The kernel path contributes zero gradient (it cancels under the
    // normalization), so only the chain through the scaled vector remains.
    let gu = core.grad_u * kernel;
    let gv = core.grad_v * kernel;
    let (grad_s, grad_t) = match mode {
        EmbeddingMode::Feature => (
            Array2::from_shape_vec((b_s.len(), b_s.dim()), gu.to_vec()).expect("shape fits"),
            Array2::from_shape_vec((b_t.len(), b_t.dim()), gv.to_vec()).expect("shape fits"),
        ),
        EmbeddingMode::Moment => {
            let d = b_s.dim();
            let g_cov_s = Array2::from_shape_vec((d, d), gu.to_vec()).expect("shape fits");
            let g_cov_t = Array2::from_shape_vec((d, d), gv.to_vec()).expect("shape fits");
            (
                covariance_backward(b_s.data.view(), &g_cov_s),
                covariance_backward(b_t.data.view(), &g_cov_t),
            )
        }
    };
    Ok(SphereLoss {
        value: core.value,
        grad_s,
        grad_t,
        kernel,
    })
}

/// CORAL baseline: `||Sigma_S - Sigma_T||_F^2 / (4 d^2)`.
pub fn coral_loss(b_s: &FeatureBatch, b_t: &FeatureBatch) -> Result<PairLoss> {
    if b_s.dim() != b_t.dim() {
        return Err(Error::ShapeMismatch(format!(
            "batch widths {} vs {}",
            b_s.dim(),
            b_t.dim()
        )));
    }
    let stats_s = batch_stats(b_s)?;
    let stats_t = batch_stats(b_t)?;
    let d = b_s.dim() as f64;
    let scale = 4.0 * d * d;
    let diff = &stats_s.cov - &stats_t.cov;
    let value = diff.iter().map(|v| v * v).sum::<f64>() / scale;
    let g_cov = &diff * (2.0 / scale);
    let grad_s = covariance_backward(b_s.data.view(), &g_cov);
    let grad_t = covariance_backward(b_t.data.view(), &(-g_cov));
    Ok(PairLoss {
        value,
        grad_s,
        grad_t,
    })
}

/// Linear MMD baseline: squared Euclidean gap between batch means.
pub fn linear_mmd_loss(b_s: &FeatureBatch, b_t: &FeatureBatch) -> Result<PairLoss> {
    if b_s.dim() != b_t.dim() {
        return Err(Error::ShapeMismatch(format!(
            "batch widths {} vs {}",
            b_s.dim(),
            b_t.dim()
        )));
    }
    let stats_s = batch_stats(b_s)?;
    let stats_t = batch_stats(b_t)?;
    let delta = &stats_s.mean - &stats_t.mean;
    let value = delta.dot(&delta);
    let mut grad_s = Array2::zeros(b_s.data.raw_dim());
    let mut grad_t = Array2::zeros(b_t.data.raw_dim());
    let gs = &delta * (2.0 / b_s.len() as f64);
    let gt = &delta * (-2.0 / b_t.len() as f64);
    for mut row in grad_s.rows_mut() {
        row.assign(&gs);
    }
    for mut row in grad_t.rows_mut() {
        row.assign(&gt);
    }
    Ok(PairLoss {
        value,
        grad_s,
        grad_t,
    })
}

/// Per-class discrepancy averaged over the classes with at least
/// `min_class_count` samples in both batches.
///
/// For the sphere loss in feature mode, each class pair is subsampled
/// without replacement to the smaller slice size (row order preserved)
/// using the caller's seeded generator, so the flattened shapes match.
/// Gradients are scattered back to the originating rows and divided by
/// the valid-class count.
pub fn categorical_loss(
    kind: DiscrepancyKind,
    b_s: &FeatureBatch,
    b_t: &FeatureBatch,
    kappa: f64,
    mode: EmbeddingMode,
    min_class_count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<CategoricalLoss> {
    let labels_s = b_s.labels.as_ref().ok_or(Error::MissingLabels)?;
    let labels_t = b_t.labels.as_ref().ok_or(Error::MissingLabels)?;
    let num_classes = labels_s
        .iter()
        .chain(labels_t.iter())
        .copied()
        .max()
        .map_or(0, |m| m + 1);

    let mut value = 0.0;
    let mut grad_s = Array2::zeros(b_s.data.raw_dim());
    let mut grad_t = Array2::zeros(b_t.data.raw_dim());
    let mut valid = 0usize;
    for c in 0..num_classes {
        let mut idx_s = b_s.class_indices(c)?;
        let mut idx_t = b_t.class_indices(c)?;
        if idx_s.len() < min_class_count || idx_t.len() < min_class_count {
            continue;
        }
        if kind == DiscrepancyKind::Sphere && mode == EmbeddingMode::Feature {
            let m = idx_s.len().min(idx_t.len());
            idx_s = subsample_sorted(&idx_s, m, rng);
            idx_t = subsample_sorted(&idx_t, m, rng);
        }
        let slice_s = FeatureBatch::new(b_s.data.select(Axis(0), &idx_s));
        let slice_t = FeatureBatch::new(b_t.data.select(Axis(0), &idx_t));
        let (v, gs, gt) = match kind {
            DiscrepancyKind::Sphere => {
                let r = sphere_kernel_geodesic_loss(&slice_s, &slice_t, kappa, mode)?;
                (r.value, r.grad_s, r.grad_t)
            }
            DiscrepancyKind::Coral => {
                let r = coral_loss(&slice_s, &slice_t)?;
                (r.value, r.grad_s, r.grad_t)
            }
            DiscrepancyKind::Mmd => {
                let r = linear_mmd_loss(&slice_s, &slice_t)?;
                (r.value, r.grad_s, r.grad_t)
            }
        };
        value += v;
        for (k, &row) in idx_s.iter().enumerate() {
            let mut dst = grad_s.row_mut(row);
            dst += &gs.row(k);
        }
        for (k, &row) in idx_t.iter().enumerate() {
            let mut dst = grad_t.row_mut(row);
            dst += &gt.row(k);
        }
        valid += 1;
    }
    if valid == 0 {
        return Err(Error::NoValidClasses);
    }
    let scale = 1.0 / valid as f64;
    Ok(CategoricalLoss {
        value: value * scale,
        grad_s: grad_s * scale,
        grad_t: grad_t * scale,
        valid_class_count: valid,
    })
}

/// Categorical sphere-kernel geodesic loss (the per-class counterpart of
/// [`sphere_kernel_geodesic_loss`]).
pub fn categorical_sphere_kernel_geodesic_loss(
    b_s: &FeatureBatch,
    b_t: &FeatureBatch,
    kappa: f64,
    mode: EmbeddingMode,
    min_class_count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<CategoricalLoss> {
    categorical_loss(
        DiscrepancyKind::Sphere,
        b_s,
        b_t,
        kappa,
        mode,
        min_class_count,
        rng,
    )
}

/// Chooses `m` of the given indices without replacement, preserving order.
fn subsample_sorted(indices: &[usize], m: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if m >= indices.len() {
        return indices.to_vec();
    }
    let mut chosen: Vec<usize> = rand::seq::index::sample(rng, indices.len(), m).into_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|k| indices[k]).collect()
}

/// Weights, switches, and ablation flags for the combined objective.
#[derive(Debug, Clone)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub mode: EmbeddingMode,
    pub features_for_loss: FeaturesForLoss,
    pub discrepancy: DiscrepancyKind,
    pub min_class_count: usize,
    pub use_k: bool,
    pub use_t: bool,
    pub use_c: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.01,
            kappa: 0.1,
            mode: EmbeddingMode::Feature,
            features_for_loss: FeaturesForLoss::Softmax,
            discrepancy: DiscrepancyKind::Sphere,
            min_class_count: crate::moments::MIN_CLASS_COUNT,
            use_k: true,
            use_t: true,
            use_c: true,
        }
    }
}

/// One evaluation of the combined objective
/// `L_S + L_T + alpha * L_K + beta * mean_c L_K^c`
/// on a source batch, a target batch, and an optional pseudo-labeled target
/// batch, with gradients accumulated into fresh parameter buffers.
///
/// The batches carry raw input features; the network is forwarded in
/// training mode and the discrepancy losses read its outputs (softmax or
/// logits per the switch). Disabled terms report 0 and contribute no
/// gradient. A pseudo batch with fewer than two rows cannot form batch
/// statistics and is treated as empty.
pub fn total_loss(
    params: &mut NetworkParams,
    source: &FeatureBatch,
    target: ArrayView2<'_, f64>,
    pseudo: Option<&FeatureBatch>,
    cfg: &LossConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(LossBreakdown, ParamGrads)> {
    if cfg.alpha < 0.0 || cfg.beta < 0.0 {
        return Err(Error::InvalidSpec(format!(
            "alpha and beta must be nonnegative, got {} and {}",
            cfg.alpha, cfg.beta
        )));
    }
    let labels_s = source.labels.as_ref().ok_or(Error::MissingLabels)?.clone();
    let pseudo = pseudo.filter(|p| p.len() >= 2);

    // Only batches that feed an active loss term run in training mode;
    // disabled terms must not leak their batch statistics into the running
    // estimates (the source-only ablation is a pure source classifier).
    let fwd_s = params.forward_train(source.data.view())?;
    let fwd_t = if cfg.use_k {
        params.forward_train(target)?
    } else {
        params.forward_infer(target)?
    };
    let pseudo_active = cfg.use_t || cfg.use_c;
    let fwd_p = match pseudo {
        Some(p) if pseudo_active => Some(params.forward_train(p.data.view())?),
        _ => None,
    };

    let pick = |fwd: &crate::network::Forward| match cfg.features_for_loss {
        FeaturesForLoss::Softmax => fwd.probs.clone(),
        FeaturesForLoss::Logits => fwd.logits.clone(),
    };
    let feats_s = pick(&fwd_s);
    let feats_t = pick(&fwd_t);
    let feats_p = fwd_p.as_ref().map(&pick);

    // Source classification.
    let (l_s, mut d_logits_s) = cross_entropy_loss(fwd_s.probs.view(), &labels_s)?;

    // Pseudo-target classification.
    let mut l_t = 0.0;
    let mut d_logits_p: Option<Array2<f64>> = None;
    if let (true, Some(p), Some(fp)) = (cfg.use_t, pseudo, fwd_p.as_ref()) {
        let labels_p = p.labels.as_ref().ok_or(Error::MissingLabels)?;
        let (v, g) = cross_entropy_loss(fp.probs.view(), labels_p)?;
        l_t = v;
        d_logits_p = Some(g);
    }

    // Marginal alignment. The kernel value is reported even when the term
    // is disabled or a baseline discrepancy is in use.
    let out_s = FeatureBatch::new(feats_s.clone());
    let out_t = FeatureBatch::new(feats_t.clone());
    let kernel_value = {
        let ss = batch_stats(&out_s)?;
        let st = batch_stats(&out_t)?;
        gaussian_kernel(ss.cov.view(), st.cov.view(), cfg.kappa)?
    };
    let mut l_k = 0.0;
    let mut g_out_s = Array2::zeros(feats_s.raw_dim());
    let mut g_out_t = Array2::zeros(feats_t.raw_dim());
    if cfg.use_k {
        let (v, gs, gt) = match cfg.discrepancy {
            DiscrepancyKind::Sphere => {
                let r = sphere_kernel_geodesic_loss(&out_s, &out_t, cfg.kappa, cfg.mode)?;
                (r.value, r.grad_s, r.grad_t)
            }
            DiscrepancyKind::Coral => {
                let r = coral_loss(&out_s, &out_t)?;
                (r.value, r.grad_s, r.grad_t)
            }
            DiscrepancyKind::Mmd => {
                let r = linear_mmd_loss(&out_s, &out_t)?;
                (r.value, r.grad_s, r.grad_t)
            }
        };
        l_k = v;
        g_out_s += &(gs * cfg.alpha);
        g_out_t += &(gt * cfg.alpha);
    }

    // Conditional alignment on the pseudo-labeled batch.
    let mut l_k_cat = 0.0;
    let mut valid_class_count = 0usize;
    let mut g_out_p: Option<Array2<f64>> = None;
    if let (true, Some(p), Some(fp)) = (cfg.use_c, pseudo, feats_p.as_ref()) {
        let labeled_s = FeatureBatch {
            data: feats_s.clone(),
            labels: Some(labels_s.clone()),
        };
        let labeled_p = FeatureBatch {
            data: fp.clone(),
            labels: p.labels.clone(),
        };
        match categorical_loss(
            cfg.discrepancy,
            &labeled_s,
            &labeled_p,
            cfg.kappa,
            cfg.mode,
            cfg.min_class_count,
            rng,
        ) {
            Ok(r) => {
                l_k_cat = r.value;
                valid_class_count = r.valid_class_count;
                g_out_s += &(r.grad_s * cfg.beta);
                g_out_p = Some(r.grad_t * cfg.beta);
            }
            Err(Error::NoValidClasses) => {}
            Err(e) => return Err(e),
        }
    }

    // Pull output-space gradients back to the logits.
    let to_logits = |g: Array2<f64>, fwd: &crate::network::Forward| match cfg.features_for_loss {
        FeaturesForLoss::Softmax => softmax_vjp(fwd.probs.view(), g.view()),
        FeaturesForLoss::Logits => g,
    };
    d_logits_s += &to_logits(g_out_s, &fwd_s);
    let d_logits_t = to_logits(g_out_t, &fwd_t);
    if let Some(gp) = g_out_p {
        let fp = fwd_p.as_ref().expect("pseudo forward exists");
        let pulled = to_logits(gp, fp);
        match d_logits_p.as_mut() {
            Some(d) => *d += &pulled,
            None => d_logits_p = Some(pulled),
        }
    }

    // Accumulate parameter gradients over the batches with active terms.
    let mut grads = ParamGrads::zeros_like(params);
    let (g1, _) = params.backward(&fwd_s, d_logits_s.view())?;
    grads.add(&g1)?;
    if cfg.use_k {
        let (g2, _) = params.backward(&fwd_t, d_logits_t.view())?;
        grads.add(&g2)?;
    }
    if let (Some(d), Some(fp)) = (d_logits_p, fwd_p.as_ref()) {
        let (g3, _) = params.backward(fp, d.view())?;
        grads.add(&g3)?;
    }

    let total = l_s + l_t + cfg.alpha * l_k + cfg.beta * l_k_cat;
    let breakdown = LossBreakdown {
        l_s,
        l_t,
        l_k,
        l_k_cat,
        total,
        divergence_proxy: l_k + l_k_cat,
        kernel_value,
        valid_class_count,
    };
    Ok((breakdown, grads))
}
