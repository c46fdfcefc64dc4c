//! Batch Gaussian statistics and the covariance-gap RBF kernel, including
//! the class-conditional variant on labeled batches.

use dsgk::moments::{batch_stats, categorical_kernel, gaussian_kernel, FeatureBatch};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> dsgk::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let draw = |rng: &mut ChaCha8Rng, shift: f64| {
        Array2::from_shape_fn((64, 3), |_| rng.random::<f64>() + shift)
    };

    let b_s = FeatureBatch::labeled(draw(&mut rng, 0.0), (0..64).map(|i| i % 4).collect())?;
    let b_t = FeatureBatch::labeled(draw(&mut rng, 0.3), (0..64).map(|i| i % 4).collect())?;

    let stats_s = batch_stats(&b_s)?;
    let stats_t = batch_stats(&b_t)?;
    println!("source mean: {:?}", stats_s.mean.to_vec());
    println!("target mean: {:?}", stats_t.mean.to_vec());
    println!("source covariance:\n{:.5}", stats_s.cov);

    // The kernel is 1 exactly when the covariances coincide and decays
    // with the squared Frobenius gap.
    let k_self = gaussian_kernel(stats_s.cov.view(), stats_s.cov.view(), 0.1)?;
    let k_cross = gaussian_kernel(stats_s.cov.view(), stats_t.cov.view(), 0.1)?;
    println!("kernel(source, source) = {k_self}");
    println!("kernel(source, target) = {k_cross}");

    // Per-class kernels skip classes without enough samples on both sides.
    for c in 0..4 {
        let k = categorical_kernel(&b_s, &b_t, c, 0.1, 2)?;
        println!("class {c} kernel        = {k:.6}");
    }
    Ok(())
}
