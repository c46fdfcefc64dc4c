//! Easy-to-hard pseudo labeling: the descending threshold schedule and the
//! subset-monotone selection it drives.

use dsgk::pseudo::{default_schedule, select_pseudo_labels};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> dsgk::Result<()> {
    for t in [1usize, 3, 5, 9] {
        println!("schedule T={t}: {:?}", default_schedule(t)?.values());
    }

    // Simulated prediction matrix: rows are target samples, sharper rows
    // clear higher thresholds.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut probs = Array2::from_shape_fn((200, 4), |_| rng.random::<f64>());
    for (i, mut row) in probs.rows_mut().into_iter().enumerate() {
        // Make confidence vary across the batch.
        let boost = 0.5 + 3.0 * (i as f64 / 200.0);
        let argmax = i % 4;
        row[argmax] += boost;
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }

    println!("\nthreshold  selected  (of 200)");
    let mut previous: Option<Vec<usize>> = None;
    for threshold in default_schedule(5)?.values() {
        let set = select_pseudo_labels(probs.view(), *threshold);
        // Each set contains the stricter one before it.
        if let Some(prev) = &previous {
            assert!(prev.iter().all(|i| set.indices.contains(i)));
        }
        println!("{threshold:>9}  {:>8}", set.len());
        previous = Some(set.indices.clone());
    }

    let everything = select_pseudo_labels(probs.view(), 0.0);
    println!("threshold 0 admits every sample: {}", everything.len());
    Ok(())
}
