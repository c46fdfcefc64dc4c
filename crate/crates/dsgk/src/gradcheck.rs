//! Central-difference verification of analytic gradients.
//!
//! The checker perturbs one coordinate at a time by `eps`, evaluates the
//! loss on both sides, and compares `(f(x+eps) - f(x-eps)) / 2 eps` with the
//! analytic value under the relative error
//! `|a - n| / max(|a|, |n|, 1e-8)`. Tensors larger than the per-tensor
//! coordinate budget are spot-checked on a seeded random subset.
//!
//! [`standard_network_checks`] wires every loss through a small classifier
//! and checks the gradient of each with respect to all network parameters;
//! it backs both the `gradcheck` command and the acceptance suite.

use std::ops::Range;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::{
    categorical_sphere_kernel_geodesic_loss, coral_loss, cross_entropy_loss, linear_mmd_loss,
    softmax_vjp, sphere_kernel_geodesic_loss, total_loss, DiscrepancyKind, EmbeddingMode,
    FeaturesForLoss, LossConfig,
};
use crate::moments::FeatureBatch;
use crate::network::{NetworkParams, ParamGrads};

/// Coordinates checked per tensor before switching to a random subset.
pub const COORDS_PER_TENSOR: usize = 64;

/// A coordinate where both the analytic and the numeric derivative fall
/// below this is unresolvable by central differences (the quotient is
/// rounding noise) and is skipped as degenerate. Parameters that are
/// exactly redundant, such as an affine bias feeding a batch-norm layer,
/// land here.
pub const DEGENERATE_FLOOR: f64 = 1e-8;

/// Absolute resolution of the probe for the network-level checks: the
/// central-difference estimate carries truncation error `eps^2 f'''/6`
/// plus cancellation noise `|f| ulp / (2 eps)`. For the losses here
/// (`|f| <= ~5`, third derivatives up to a few hundred through the
/// softmax/normalization stack at `eps = 1e-4`) that envelope is a few
/// times `1e-7`. A disagreement inside it is indistinguishable from an
/// exact gradient; only larger gaps are scored.
pub const FD_RESOLUTION: f64 = 5e-7;

/// Worst relative error observed within one named tensor.
#[derive(Debug, Clone)]
pub struct TensorReport {
    pub name: String,
    /// Worst relative error among coordinates the probe resolves.
    pub max_rel_err: f64,
    /// Worst absolute gap between the analytic and numeric derivative.
    pub max_abs_err: f64,
    pub coords_checked: usize,
    /// Coordinates skipped because both derivatives were below
    /// [`DEGENERATE_FLOOR`].
    pub coords_degenerate: usize,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_pair: (f64, f64),
}

/// Result of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorReport>,
    pub epsilon: f64,
    /// True when every analytic and numeric derivative seen was below 1e-9;
    /// the comparison says nothing at such a point (e.g. coincident batches).
    pub degenerate: bool,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn max_abs_err(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_abs_err)
            .fold(0.0, f64::max)
    }
}

/// Checks `analytic` against central differences of `eval` around `base`
/// with the probe's absolute resolution set to zero (every disagreement
/// is scored by the relative formula).
pub fn gradient_check(
    eval: &mut dyn FnMut(&[f64]) -> f64,
    base: &[f64],
    analytic: &[f64],
    segments: &[(String, Range<usize>)],
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    gradient_check_with_resolution(eval, base, analytic, segments, eps, seed, 0.0)
}

/// Checks `analytic` against central differences of `eval` around `base`.
///
/// `segments` names disjoint spans of the flat coordinate vector; each is
/// reported separately. `eps` must lie in `[1e-6, 1e-2]`. A coordinate
/// whose absolute disagreement is at most `abs_resolution` counts as
/// matching regardless of the relative quotient; pass 0.0 to disable.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check_with_resolution(
    eval: &mut dyn FnMut(&[f64]) -> f64,
    base: &[f64],
    analytic: &[f64],
    segments: &[(String, Range<usize>)],
    eps: f64,
    seed: u64,
    abs_resolution: f64,
) -> Result<GradCheckReport> {
    if !(1e-6..=1e-2).contains(&eps) {
        return Err(Error::InvalidSpec(format!(
            "finite-difference step {eps:e} outside [1e-6, 1e-2]"
        )));
    }
    if base.len() != analytic.len() {
        return Err(Error::ShapeMismatch(format!(
            "base has {} coordinates, analytic gradient has {}",
            base.len(),
            analytic.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = Vec::with_capacity(segments.len());
    let mut largest_seen = 0.0f64;
    let mut work = base.to_vec();
    for (name, range) in segments {
        if range.end > base.len() {
            return Err(Error::ShapeMismatch(format!(
                "segment {name} ends at {} past {} coordinates",
                range.end,
                base.len()
            )));
        }
        let len = range.len();
        let coords: Vec<usize> = if len <= COORDS_PER_TENSOR {
            range.clone().collect()
        } else {
            let mut picked: Vec<usize> =
                rand::seq::index::sample(&mut rng, len, COORDS_PER_TENSOR).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|k| range.start + k).collect()
        };
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        let mut degenerate = 0usize;
        let mut worst_pair = (0.0, 0.0);
        for &i in &coords {
            work[i] = base[i] + eps;
            let f_plus = eval(&work);
            work[i] = base[i] - eps;
            let f_minus = eval(&work);
            work[i] = base[i];
            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic[i];
            largest_seen = largest_seen.max(a.abs()).max(numeric.abs());
            if a.abs() < DEGENERATE_FLOOR && numeric.abs() < DEGENERATE_FLOOR {
                degenerate += 1;
                continue;
            }
            max_abs = max_abs.max((a - numeric).abs());
            if (a - numeric).abs() <= abs_resolution {
                continue;
            }
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
                worst_pair = (a, numeric);
            }
        }
        tensors.push(TensorReport {
            name: name.clone(),
            max_rel_err: max_rel,
            max_abs_err: max_abs,
            coords_checked: coords.len(),
            coords_degenerate: degenerate,
            worst_pair,
        });
    }
    Ok(GradCheckReport {
        tensors,
        epsilon: eps,
        degenerate: largest_seen < 1e-9,
    })
}

/// Which objective term a network-level check exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckTarget {
    SourceCe,
    PseudoCe,
    SphereFeature,
    SphereMoment,
    CategoricalSphere,
    Coral,
    Mmd,
    Total,
}

impl CheckTarget {
    pub const ALL: [CheckTarget; 8] = [
        CheckTarget::SourceCe,
        CheckTarget::PseudoCe,
        CheckTarget::SphereFeature,
        CheckTarget::SphereMoment,
        CheckTarget::CategoricalSphere,
        CheckTarget::Coral,
        CheckTarget::Mmd,
        CheckTarget::Total,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CheckTarget::SourceCe => "source-cross-entropy",
            CheckTarget::PseudoCe => "pseudo-cross-entropy",
            CheckTarget::SphereFeature => "sphere-geodesic-feature",
            CheckTarget::SphereMoment => "sphere-geodesic-moment",
            CheckTarget::CategoricalSphere => "categorical-sphere-geodesic",
            CheckTarget::Coral => "coral",
            CheckTarget::Mmd => "mmd",
            CheckTarget::Total => "total-objective",
        }
    }
}

struct CheckFixture {
    source: FeatureBatch,
    target: Array2<f64>,
    pseudo: FeatureBatch,
}

/// Hidden ReLU inputs must clear the kink by this much (at the base point,
/// over all three batches) for a point to count as smooth. Normalization
/// centers every preactivation batch at zero, so unshaped random points
/// routinely place a kink inside the probe interval.
pub const SMOOTH_MARGIN: f64 = 5e-3;

fn fixture(seed: u64) -> (CheckFixture, NetworkParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(17));
    let n = 12;
    let d = 6;
    let draw = |rng: &mut ChaCha8Rng| Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 6.0 - 3.0);
    // Balanced source labels; pseudo labels skewed so one class pair needs
    // the subsampling path.
    let source = FeatureBatch::labeled(
        draw(&mut rng),
        vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3],
    )
    .expect("label count matches");
    // Shift the target and pseudo batches off the source distribution.
    // Coincident domains are the degenerate point of every discrepancy
    // loss (value and gradient vanish together), where finite differences
    // measure noise.
    let mut target = draw(&mut rng);
    for mut row in target.rows_mut() {
        row[0] += 1.5;
        row[1] -= 1.0;
    }
    let mut pseudo_x = draw(&mut rng);
    for mut row in pseudo_x.rows_mut() {
        row[2] += 1.2;
        row[3] -= 0.8;
    }
    let pseudo = FeatureBatch::labeled(pseudo_x, vec![0, 0, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3])
        .expect("label count matches");
    let mut net =
        NetworkParams::init(d, &[16, 8, 4], seed ^ 0x5bd1).expect("valid layer sizes");
    // Push the relu inputs away from their kinks: normalized activations
    // land near +-0.75 with spread 0.25, so half the units are solidly
    // active, half solidly dead, and the probe interval stays inside one
    // smooth piece.
    for layer in &mut net.layers {
        if let Some(norm) = layer.norm.as_mut() {
            norm.gamma.fill(0.25);
            for (u, b) in norm.beta.iter_mut().enumerate() {
                *b = if u % 2 == 0 { 0.75 } else { -0.75 };
            }
        }
    }
    // Spread the logits so the output covariance norm is not tiny; the
    // moment embedding normalizes by it, and its curvature grows with the
    // inverse norm squared, which would swamp the probe with truncation
    // error.
    let last = net.layers.len() - 1;
    net.layers[last].weights *= 3.0;
    (
        CheckFixture {
            source,
            target,
            pseudo,
        },
        net,
    )
}

/// Whether the point behind `point_seed` keeps every hidden ReLU input at
/// least [`SMOOTH_MARGIN`] from its kink on all three batches. Points that
/// fail would put a kink inside the central-difference interval, where the
/// probe measures the kink, not the derivative.
pub fn point_is_smooth(point_seed: u64) -> Result<bool> {
    let (fix, mut net) = fixture(point_seed);
    let mut min_margin = f64::INFINITY;
    for batch in [fix.source.data.view(), fix.target.view(), fix.pseudo.data.view()] {
        let fwd = net.forward_train(batch)?;
        min_margin = min_margin.min(fwd.min_abs_relu_input());
    }
    Ok(min_margin >= SMOOTH_MARGIN)
}

fn eval_target(
    target: CheckTarget,
    net: &mut NetworkParams,
    fix: &CheckFixture,
    subsample_seed: u64,
) -> Result<(f64, ParamGrads)> {
    let kappa = 0.1;
    let sphere_through = |net: &mut NetworkParams,
                          mode: EmbeddingMode,
                          kind: DiscrepancyKind|
     -> Result<(f64, ParamGrads)> {
        let fwd_s = net.forward_train(fix.source.data.view())?;
        let fwd_t = net.forward_train(fix.target.view())?;
        let out_s = FeatureBatch::new(fwd_s.probs.clone());
        let out_t = FeatureBatch::new(fwd_t.probs.clone());
        let (value, gs, gt) = match kind {
            DiscrepancyKind::Sphere => {
                let r = sphere_kernel_geodesic_loss(&out_s, &out_t, kappa, mode)?;
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
        let d_s = softmax_vjp(fwd_s.probs.view(), gs.view());
        let d_t = softmax_vjp(fwd_t.probs.view(), gt.view());
        let mut grads = ParamGrads::zeros_like(net);
        grads.add(&net.backward(&fwd_s, d_s.view())?.0)?;
        grads.add(&net.backward(&fwd_t, d_t.view())?.0)?;
        Ok((value, grads))
    };
    match target {
        CheckTarget::SourceCe => {
            let fwd = net.forward_train(fix.source.data.view())?;
            let labels = fix.source.labels.as_ref().expect("labeled");
            let (value, d) = cross_entropy_loss(fwd.probs.view(), labels)?;
            let (grads, _) = net.backward(&fwd, d.view())?;
            Ok((value, grads))
        }
        CheckTarget::PseudoCe => {
            let fwd = net.forward_train(fix.pseudo.data.view())?;
            let labels = fix.pseudo.labels.as_ref().expect("labeled");
            let (value, d) = cross_entropy_loss(fwd.probs.view(), labels)?;
            let (grads, _) = net.backward(&fwd, d.view())?;
            Ok((value, grads))
        }
        CheckTarget::SphereFeature => {
            sphere_through(net, EmbeddingMode::Feature, DiscrepancyKind::Sphere)
        }
        CheckTarget::SphereMoment => {
            sphere_through(net, EmbeddingMode::Moment, DiscrepancyKind::Sphere)
        }
        CheckTarget::Coral => sphere_through(net, EmbeddingMode::Feature, DiscrepancyKind::Coral),
        CheckTarget::Mmd => sphere_through(net, EmbeddingMode::Feature, DiscrepancyKind::Mmd),
        CheckTarget::CategoricalSphere => {
            let fwd_s = net.forward_train(fix.source.data.view())?;
            let fwd_p = net.forward_train(fix.pseudo.data.view())?;
            let out_s = FeatureBatch {
                data: fwd_s.probs.clone(),
                labels: fix.source.labels.clone(),
            };
            let out_p = FeatureBatch {
                data: fwd_p.probs.clone(),
                labels: fix.pseudo.labels.clone(),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(subsample_seed);
            let r = categorical_sphere_kernel_geodesic_loss(
                &out_s,
                &out_p,
                kappa,
                EmbeddingMode::Feature,
                2,
                &mut rng,
            )?;
            let d_s = softmax_vjp(fwd_s.probs.view(), r.grad_s.view());
            let d_p = softmax_vjp(fwd_p.probs.view(), r.grad_t.view());
            let mut grads = ParamGrads::zeros_like(net);
            grads.add(&net.backward(&fwd_s, d_s.view())?.0)?;
            grads.add(&net.backward(&fwd_p, d_p.view())?.0)?;
            Ok((r.value, grads))
        }
        CheckTarget::Total => {
            let cfg = LossConfig {
                features_for_loss: FeaturesForLoss::Softmax,
                ..LossConfig::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(subsample_seed);
            let (breakdown, grads) = total_loss(
                net,
                &fix.source,
                fix.target.view(),
                Some(&fix.pseudo),
                &cfg,
                &mut rng,
            )?;
            Ok((breakdown.total, grads))
        }
    }
}

/// Checks one loss, through a fresh `(16, 8, 4)` network, against central
/// finite differences with respect to every trainable parameter.
pub fn check_loss_through_network(
    target: CheckTarget,
    point_seed: u64,
) -> Result<GradCheckReport> {
    let (fix, mut net) = fixture(point_seed);
    let subsample_seed = point_seed.wrapping_add(101);
    let (_, grads) = eval_target(target, &mut net, &fix, subsample_seed)?;
    let base = net.flat_params();
    let analytic = grads.flat();
    let segments = net.param_segments();
    let mut eval = |theta: &[f64]| -> f64 {
        net.set_flat_params(theta).expect("same length");
        eval_target(target, &mut net, &fix, subsample_seed)
            .expect("loss evaluates")
            .0
    };
    gradient_check_with_resolution(
        &mut eval,
        &base,
        &analytic,
        &segments,
        1e-4,
        point_seed,
        FD_RESOLUTION,
    )
}

/// Selects `points` smooth random points starting at `seed`, skipping the
/// ones where a kink sits inside the probe interval.
pub fn select_smooth_points(points: usize, seed: u64) -> Result<Vec<u64>> {
    let mut chosen = Vec::with_capacity(points);
    let mut candidate = seed;
    while chosen.len() < points {
        if point_is_smooth(candidate)? {
            chosen.push(candidate);
        }
        candidate = candidate.wrapping_add(1);
    }
    Ok(chosen)
}

/// Worst figures for one loss over a set of points.
#[derive(Debug, Clone)]
pub struct NetworkCheckSummary {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

/// Runs [`check_loss_through_network`] for every target over `points`
/// smooth random points and reports the worst errors per target.
pub fn standard_network_checks(points: usize, seed: u64) -> Result<Vec<NetworkCheckSummary>> {
    let point_seeds = select_smooth_points(points, seed)?;
    let mut out = Vec::new();
    for target in CheckTarget::ALL {
        let mut summary = NetworkCheckSummary {
            name: target.name(),
            max_rel_err: 0.0,
            max_abs_err: 0.0,
        };
        for &point_seed in &point_seeds {
            let report = check_loss_through_network(target, point_seed)?;
            summary.max_rel_err = summary.max_rel_err.max(report.max_rel_err());
            summary.max_abs_err = summary.max_abs_err.max(report.max_abs_err());
        }
        out.push(summary);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_bounds_are_enforced() {
        let mut eval = |x: &[f64]| x[0] * x[0];
        let err = gradient_check(
            &mut eval,
            &[1.0],
            &[2.0],
            &[("x".to_string(), 0..1)],
            1e-7,
            0,
        );
        assert!(err.is_err());
    }

    #[test]
    fn quadratic_checks_cleanly() {
        let mut eval = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let base = vec![0.3, -1.2, 2.0];
        let analytic: Vec<f64> = base.iter().map(|v| 2.0 * v).collect();
        let report = gradient_check(
            &mut eval,
            &base,
            &analytic,
            &[("x".to_string(), 0..3)],
            1e-4,
            0,
        )
        .unwrap();
        assert!(report.max_rel_err() <= 1e-9);
        assert!(!report.degenerate);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut eval = |x: &[f64]| x[0] * x[0];
        let report = gradient_check(
            &mut eval,
            &[1.0],
            &[2.5],
            &[("x".to_string(), 0..1)],
            1e-4,
            0,
        )
        .unwrap();
        assert!(report.max_rel_err() > 0.1);
    }

    #[test]
    fn degenerate_point_is_flagged() {
        // Loss is constant: both gradients vanish.
        let mut eval = |_: &[f64]| 1.0;
        let report = gradient_check(
            &mut eval,
            &[0.5, 0.5],
            &[0.0, 0.0],
            &[("x".to_string(), 0..2)],
            1e-4,
            0,
        )
        .unwrap();
        assert!(report.degenerate);
        assert_eq!(report.max_rel_err(), 0.0);
    }

    #[test]
    fn large_tensors_are_subsampled() {
        let mut eval = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let base: Vec<f64> = (0..200).map(|i| i as f64 * 0.01).collect();
        let analytic: Vec<f64> = base.iter().map(|v| 2.0 * v).collect();
        let report = gradient_check(
            &mut eval,
            &base,
            &analytic,
            &[("x".to_string(), 0..200)],
            1e-4,
            3,
        )
        .unwrap();
        assert_eq!(report.tensors[0].coords_checked, COORDS_PER_TENSOR);
        assert!(report.max_rel_err() <= 1e-6);
    }

    #[test]
    fn every_loss_checks_through_the_network() {
        for target in CheckTarget::ALL {
            let report = check_loss_through_network(target, 7).unwrap();
            assert!(
                report.max_rel_err() <= 1e-5,
                "{}: max relative error {}",
                target.name(),
                report.max_rel_err()
            );
        }
    }
}
