//! Closed-form Riemannian operations on the unit hypersphere.
//!
//! Points live on S^n embedded in R^{n+1}; tangent vectors at `p` are the
//! vectors orthogonal to `p`. The Log map sends a second point into the
//! tangent space, the Exp map sends a tangent vector back to the sphere,
//! and the geodesic distance is `arccos` of the dot product. All four
//! operations are exact closed forms; the only numerics to guard are the
//! `arccos` argument leaving [-1, 1] by rounding, near-zero angles, and
//! antipodal pairs (where the geodesic direction is undefined).

use ndarray::{Array1, ArrayView, Dimension};

use crate::error::{Error, Result};

/// Unit-norm tolerance for points accepted onto the sphere.
pub const UNIT_NORM_TOL: f64 = 1e-9;
/// Inputs with norm at or below this cannot be projected.
pub const ZERO_NORM_LIMIT: f64 = 1e-12;
/// Dot products at or below -1 + this are treated as antipodal.
pub const ANTIPODAL_TOL: f64 = 1e-6;
/// Angle below which `sin(theta)/theta` switches to its Taylor series.
pub const SMALL_ANGLE: f64 = 1e-8;

/// A point on the unit hypersphere: a vector of length >= 2 with unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct SpherePoint {
    coords: Array1<f64>,
}

impl SpherePoint {
    /// Wraps an already-normalized vector, checking the unit-norm invariant.
    pub fn new(coords: Array1<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: coords.len(),
            });
        }
        let norm = norm(&coords.view());
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::ZeroNorm {
                norm,
                limit: ZERO_NORM_LIMIT,
            });
        }
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &Array1<f64> {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// A tangent vector anchored at a base point, orthogonal to it.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub base: SpherePoint,
    pub vec: Array1<f64>,
}

impl TangentVector {
    /// The zero tangent vector at `base`.
    pub fn zero(base: SpherePoint) -> Self {
        let vec = Array1::zeros(base.dim());
        Self { base, vec }
    }

    /// Euclidean norm of the vector part (the geodesic step length).
    pub fn norm(&self) -> f64 {
        norm(&self.vec.view())
    }
}

fn norm(v: &ndarray::ArrayView1<f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Flattens `x` in row-major order and divides by its Euclidean norm.
///
/// Returns `ZeroNorm` when the input norm is at or below `1e-12`.
pub fn project_to_sphere<D: Dimension>(x: ArrayView<f64, D>) -> Result<SpherePoint> {
    let sq_sum: f64 = x.iter().map(|v| v * v).sum();
    let n = sq_sum.sqrt();
    if n <= ZERO_NORM_LIMIT {
        return Err(Error::ZeroNorm {
            norm: n,
            limit: ZERO_NORM_LIMIT,
        });
    }
    let coords: Array1<f64> = x.iter().map(|v| v / n).collect();
    if coords.len() < 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: coords.len(),
        });
    }
    Ok(SpherePoint { coords })
}

fn check_same_dim(p: &SpherePoint, q: &SpherePoint) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    Ok(())
}

/// Dot product of two sphere points, clamped into [-1, 1] for `arccos`.
fn clamped_dot(p: &SpherePoint, q: &SpherePoint) -> f64 {
    let dot = p.coords.dot(&q.coords);
    dot.clamp(-1.0, 1.0)
}

/// Geodesic distance `arccos(<p, q>)`, in [0, pi].
pub fn geodesic_distance(p: &SpherePoint, q: &SpherePoint) -> Result<f64> {
    check_same_dim(p, q)?;
    if p.coords == q.coords {
        return Ok(0.0);
    }
    Ok(clamped_dot(p, q).acos())
}

/// Log map: the tangent vector at `p` pointing along the geodesic to `q`,
/// with norm equal to the geodesic distance.
///
/// Returns `Antipodal` when `<p, q> <= -1 + 1e-6`, where the direction is
/// undefined. Coincident points map to the zero tangent vector.
pub fn log_map(p: &SpherePoint, q: &SpherePoint) -> Result<TangentVector> {
    check_same_dim(p, q)?;
    if p.coords == q.coords {
        return Ok(TangentVector::zero(p.clone()));
    }
    let dot = clamped_dot(p, q);
    if dot <= -1.0 + ANTIPODAL_TOL {
        return Err(Error::Antipodal { dot });
    }
    let theta = dot.acos();
    // L = q - p<p,q> is the tangent-plane component of q.
    let l = &q.coords - &(&p.coords * dot);
    let l_norm = norm(&l.view());
    if l_norm <= ZERO_NORM_LIMIT {
        return Ok(TangentVector::zero(p.clone()));
    }
    let vec = l * (theta / l_norm);
    Ok(TangentVector {
        base: p.clone(),
        vec,
    })
}

/// Exp map: follows the geodesic from `p` in direction `v` for length `|v|`.
///
/// `cos(theta) p + (sin(theta)/theta) v`, with the Taylor fallback
/// `sin(theta)/theta ~ 1 - theta^2/6` below the small-angle threshold.
pub fn exp_map(p: &SpherePoint, v: &TangentVector) -> Result<SpherePoint> {
    if v.base.dim() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: v.base.dim(),
        });
    }
    let max_diff = p
        .coords
        .iter()
        .zip(v.base.coords.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    if max_diff > UNIT_NORM_TOL {
        return Err(Error::BaseMismatch { max_diff });
    }
    let theta = v.norm();
    if !theta.is_finite() {
        return Err(Error::InvalidSpec(format!(
            "tangent norm {theta} is not finite"
        )));
    }
    if theta == 0.0 {
        return Ok(p.clone());
    }
    let sinc = if theta < SMALL_ANGLE {
        1.0 - theta * theta / 6.0
    } else {
        theta.sin() / theta
    };
    let coords = &(&p.coords * theta.cos()) + &(&v.vec * sinc);
    Ok(SpherePoint { coords })
}

/// Worst-case errors over random Log/Exp round trips.
#[derive(Debug, Clone)]
pub struct GeometryReport {
    pub dims: Vec<usize>,
    pub pairs_per_dim: usize,
    /// max over pairs of the Euclidean gap between `exp(p, log(p, q))` and `q`.
    pub max_roundtrip: f64,
    /// max |<p, log(p, q)>|.
    pub max_tangency: f64,
    /// max disagreement between |log(p, q)| and the geodesic distance.
    pub max_norm_gap: f64,
    /// max deviation of the Exp output norm from 1.
    pub max_unit_norm_err: f64,
    /// Pairs skipped for sitting too close to antipodal.
    pub skipped: usize,
}

/// Stress-tests the Log/Exp pair on random unit vectors in dimensions
/// 3, 16, and 100, skipping pairs with dot product at or below -0.99.
pub fn geometry_suite(pairs_per_dim: usize, seed: u64) -> Result<GeometryReport> {
    use rand::Rng;
    use rand::SeedableRng;
    use rand_distr::StandardNormal;

    let dims = vec![3usize, 16, 100];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut report = GeometryReport {
        dims: dims.clone(),
        pairs_per_dim,
        max_roundtrip: 0.0,
        max_tangency: 0.0,
        max_norm_gap: 0.0,
        max_unit_norm_err: 0.0,
        skipped: 0,
    };
    for &dim in &dims {
        let random_unit = |rng: &mut rand_chacha::ChaCha8Rng| -> Result<SpherePoint> {
            loop {
                let v: Array1<f64> = (0..dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                match project_to_sphere(v.view()) {
                    Ok(p) => return Ok(p),
                    Err(Error::ZeroNorm { .. }) => continue,
                    Err(e) => return Err(e),
                }
            }
        };
        for _ in 0..pairs_per_dim {
            let p = random_unit(&mut rng)?;
            let q = random_unit(&mut rng)?;
            if p.coords().dot(q.coords()) <= -0.99 {
                report.skipped += 1;
                continue;
            }
            let v = log_map(&p, &q)?;
            report.max_tangency = report.max_tangency.max(p.coords().dot(&v.vec).abs());
            let d = geodesic_distance(&p, &q)?;
            report.max_norm_gap = report.max_norm_gap.max((v.norm() - d).abs());
            let back = exp_map(&p, &v)?;
            let norm: f64 = back.coords().iter().map(|x| x * x).sum::<f64>().sqrt();
            report.max_unit_norm_err = report.max_unit_norm_err.max((norm - 1.0).abs());
            let gap: f64 = back
                .coords()
                .iter()
                .zip(q.coords().iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            report.max_roundtrip = report.max_roundtrip.max(gap);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, arr2, Array2};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn unit(v: &[f64]) -> SpherePoint {
        project_to_sphere(arr1(v).view()).unwrap()
    }

    fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> SpherePoint {
        loop {
            let v: Array1<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            if let Ok(p) = project_to_sphere(v.view()) {
                return p;
            }
        }
    }

    #[test]
    fn project_three_four_five() {
        let p = unit(&[3.0, 4.0]);
        assert_abs_diff_eq!(p.coords()[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(p.coords()[1], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn project_flattens_matrices_row_major() {
        let m = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let p = project_to_sphere(m.view()).unwrap();
        let s = 1.0 / 2.0f64.sqrt();
        let expected = [s, 0.0, 0.0, s];
        for (a, b) in p.coords().iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn project_zero_matrix_errors() {
        let m = Array2::<f64>::zeros((3, 3));
        assert!(matches!(
            project_to_sphere(m.view()),
            Err(Error::ZeroNorm { .. })
        ));
    }

    #[test]
    fn log_map_identity_is_zero() {
        let p = unit(&[1.0, 0.0, 0.0]);
        let v = log_map(&p, &p).unwrap();
        assert_eq!(v.norm(), 0.0);
    }

    #[test]
    fn log_map_quarter_turn() {
        let p = unit(&[1.0, 0.0, 0.0]);
        let q = unit(&[0.0, 1.0, 0.0]);
        let v = log_map(&p, &q).unwrap();
        assert_abs_diff_eq!(v.vec[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.vec[1], FRAC_PI_2, epsilon = 1e-15);
        assert_abs_diff_eq!(v.vec[2], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.norm(), (0.0f64).acos(), epsilon = 1e-15);
    }

    #[test]
    fn log_map_antipodal_errors() {
        let p = unit(&[1.0, 0.0, 0.0]);
        let q = unit(&[-1.0, 0.0, 0.0]);
        assert!(matches!(log_map(&p, &q), Err(Error::Antipodal { .. })));
    }

    #[test]
    fn log_map_dimension_mismatch() {
        let p = unit(&[1.0, 0.0, 0.0]);
        let q = unit(&[1.0, 0.0]);
        assert!(matches!(
            log_map(&p, &q),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn exp_map_zero_step_returns_base() {
        let p = unit(&[0.0, 0.0, 1.0]);
        let v = TangentVector::zero(p.clone());
        let q = exp_map(&p, &v).unwrap();
        assert_eq!(q.coords(), p.coords());
    }

    #[test]
    fn exp_map_quarter_turn_lands_on_axis() {
        let p = unit(&[1.0, 0.0, 0.0]);
        let v = TangentVector {
            base: p.clone(),
            vec: arr1(&[0.0, FRAC_PI_2, 0.0]),
        };
        let q = exp_map(&p, &v).unwrap();
        assert_abs_diff_eq!(q.coords()[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.coords()[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn exp_map_eighth_turn() {
        let p = unit(&[1.0, 0.0, 0.0]);
        let v = TangentVector {
            base: p.clone(),
            vec: arr1(&[0.0, PI / 4.0, 0.0]),
        };
        let q = exp_map(&p, &v).unwrap();
        let s = 2.0f64.sqrt() / 2.0;
        assert_abs_diff_eq!(q.coords()[0], s, epsilon = 1e-12);
        assert_abs_diff_eq!(q.coords()[1], s, epsilon = 1e-12);
        assert_abs_diff_eq!(q.coords()[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn exp_map_base_mismatch_errors() {
        let p = unit(&[1.0, 0.0, 0.0]);
        let other = unit(&[0.0, 1.0, 0.0]);
        let v = TangentVector {
            base: other,
            vec: arr1(&[0.0, 0.0, 0.1]),
        };
        assert!(matches!(exp_map(&p, &v), Err(Error::BaseMismatch { .. })));
    }

    #[test]
    fn geodesic_distance_known_values() {
        let p = unit(&[1.0, 0.0, 0.0]);
        assert_eq!(geodesic_distance(&p, &p).unwrap(), 0.0);
        let q = unit(&[0.0, 1.0, 0.0]);
        assert_abs_diff_eq!(geodesic_distance(&p, &q).unwrap(), FRAC_PI_2, epsilon = 1e-15);
        let r = unit(&[(0.3f64).cos(), (0.3f64).sin(), 0.0]);
        assert_abs_diff_eq!(geodesic_distance(&p, &r).unwrap(), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn roundtrip_tangency_and_norm_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for dim in [3usize, 16, 100] {
            for _ in 0..300 {
                let p = random_unit(dim, &mut rng);
                let q = random_unit(dim, &mut rng);
                if p.coords().dot(q.coords()) <= -0.99 {
                    continue;
                }
                let v = log_map(&p, &q).unwrap();
                // tangency
                assert!(p.coords().dot(&v.vec).abs() <= 1e-10);
                // norm identity
                let d = geodesic_distance(&p, &q).unwrap();
                assert!((v.norm() - d).abs() <= 1e-10);
                // roundtrip
                let back = exp_map(&p, &v).unwrap();
                let err: f64 = back
                    .coords()
                    .iter()
                    .zip(q.coords().iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!(err <= 1e-9, "roundtrip error {err} in dim {dim}");
                // symmetry is exact
                assert_eq!(
                    geodesic_distance(&p, &q).unwrap(),
                    geodesic_distance(&q, &p).unwrap()
                );
            }
        }
    }

    #[test]
    fn exp_map_small_angle_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_unit(8, &mut rng);
        let mut raw: Array1<f64> = (0..8).map(|_| rng.random::<f64>() - 0.5).collect();
        let along = p.coords().dot(&raw);
        raw = &raw - &(p.coords() * along);
        let tiny = &raw * (1e-10 / raw.iter().map(|x| x * x).sum::<f64>().sqrt());
        let v = TangentVector {
            base: p.clone(),
            vec: tiny,
        };
        let q = exp_map(&p, &v).unwrap();
        let n: f64 = q.coords().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert_abs_diff_eq!(n, 1.0, epsilon = 1e-12);
    }
}
