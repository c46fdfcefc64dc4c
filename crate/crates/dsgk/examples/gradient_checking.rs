//! Verifies every analytic gradient against central finite differences,
//! both standalone (a loss on raw inputs) and end-to-end through the
//! classifier.

use dsgk::gradcheck::{gradient_check, standard_network_checks};
use dsgk::losses::{coral_loss, linear_mmd_loss, sphere_kernel_geodesic_loss, EmbeddingMode};
use dsgk::moments::FeatureBatch;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type PairEval = Box<dyn Fn(&FeatureBatch, &FeatureBatch) -> (f64, Array2<f64>, Array2<f64>)>;

fn main() -> dsgk::Result<()> {
    // Standalone: a pair loss with respect to both input batches.
    let (n, d) = (8, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b_s = FeatureBatch::new(Array2::from_shape_fn((n, d), |_| rng.random::<f64>() + 0.1));
    let b_t = FeatureBatch::new(Array2::from_shape_fn((n, d), |_| rng.random::<f64>() + 0.4));

    let losses: [(&str, PairEval); 3] = [
        ("sphere-feature", Box::new(|s, t| {
            let r = sphere_kernel_geodesic_loss(s, t, 0.1, EmbeddingMode::Feature).unwrap();
            (r.value, r.grad_s, r.grad_t)
        })),
        ("coral", Box::new(|s, t| {
            let r = coral_loss(s, t).unwrap();
            (r.value, r.grad_s, r.grad_t)
        })),
        ("mmd", Box::new(|s, t| {
            let r = linear_mmd_loss(s, t).unwrap();
            (r.value, r.grad_s, r.grad_t)
        })),
    ];
    for (name, loss) in &losses {
        let (_, gs, gt) = loss(&b_s, &b_t);
        let mut base: Vec<f64> = b_s.data.iter().cloned().collect();
        base.extend(b_t.data.iter());
        let mut analytic: Vec<f64> = gs.iter().cloned().collect();
        analytic.extend(gt.iter());
        let mut eval = |flat: &[f64]| {
            let s = FeatureBatch::new(
                Array2::from_shape_vec((n, d), flat[..n * d].to_vec()).unwrap(),
            );
            let t = FeatureBatch::new(
                Array2::from_shape_vec((n, d), flat[n * d..].to_vec()).unwrap(),
            );
            loss(&s, &t).0
        };
        let segments = vec![
            ("source".to_string(), 0..n * d),
            ("target".to_string(), n * d..2 * n * d),
        ];
        let report = gradient_check(&mut eval, &base, &analytic, &segments, 1e-4, 1)?;
        println!(
            "{name:16} raw-input check: max relative error {:.3e}",
            report.max_rel_err()
        );
    }

    // End-to-end: every objective term through a (16, 8, 4) classifier,
    // with respect to all trainable parameters, at smooth random points.
    println!("\nthrough the network (5 points each):");
    for r in standard_network_checks(5, 0)? {
        println!(
            "  {:28} rel {:.3e}  abs {:.3e}",
            r.name, r.max_rel_err, r.max_abs_err
        );
    }
    Ok(())
}
