//! Directional experiments on the frozen benchmark task that sit outside
//! the acceptance gate: every discrepancy loss, dropped into the marginal
//! and categorical slots, should beat the source-only baseline over the
//! paired seeds.

use dsgk::data::SyntheticTaskSpec;
use dsgk::experiments::{compare_losses, TaskSource};
use dsgk::harness::{evaluate, train, Evaluator, RunConfig};

#[test]
fn every_discrepancy_loss_beats_source_only_on_the_benchmark() {
    let seeds: Vec<u64> = (1..=5).collect();
    let task = TaskSource::Synthetic(SyntheticTaskSpec::desk(0));

    let mut source_only = 0.0;
    for &seed in &seeds {
        let (source, target) = task.realize(seed).unwrap();
        let evaluator = Evaluator::new(&target).unwrap();
        let cfg = RunConfig {
            use_k: false,
            use_t: false,
            use_c: false,
            ..RunConfig::desk(seed)
        };
        let out = train(&cfg, &source, target.unlabeled_view(), Some(&evaluator)).unwrap();
        source_only += evaluate(&out.params, &target).unwrap();
    }
    source_only /= seeds.len() as f64;

    let rows = compare_losses(&RunConfig::desk(0), &task, &seeds).unwrap();
    assert_eq!(rows[0].name, "DSGK");
    assert_eq!(rows[1].name, "CORAL");
    assert_eq!(rows[2].name, "MMD");
    for r in &rows {
        println!(
            "{:6} mean {:.4} vs source-only {:.4} ({:+.2} points)",
            r.name,
            r.mean,
            source_only,
            (r.mean - source_only) * 100.0
        );
        assert!(
            r.mean >= source_only,
            "{} fell below the source-only baseline",
            r.name
        );
    }
}
