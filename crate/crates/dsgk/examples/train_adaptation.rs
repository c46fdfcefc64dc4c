//! A full adaptation run on the frozen synthetic benchmark task: warmup,
//! easy-to-hard refinement, the metrics stream, and the final scores.

use dsgk::data::{generate_task, SyntheticTaskSpec};
use dsgk::harness::{evaluate, render_stream, train, Evaluator, RunConfig};

fn main() -> dsgk::Result<()> {
    let seed = 1;
    let (source, target) = generate_task(&SyntheticTaskSpec::desk(seed))?;
    let evaluator = Evaluator::new(&target)?;
    let cfg = RunConfig::desk(seed);

    // The trainer sees only a label-free view of the target domain; the
    // evaluator holds the ground truth for metrics.
    let output = train(&cfg, &source, target.unlabeled_view(), Some(&evaluator))?;

    let stream = render_stream(&cfg, &output);
    let lines: Vec<&str> = stream.lines().collect();
    println!("metrics stream: {} records; first and last few:", lines.len());
    for line in lines.iter().take(2) {
        println!("  {line}");
    }
    println!("  ...");
    for line in lines.iter().rev().take(3).rev() {
        println!("  {line}");
    }

    println!(
        "\ndivergence proxy: {:.4} at warmup end -> {:.4} final (ratio {:.3})",
        output.warmup_eval.divergence_proxy,
        output.final_eval.divergence_proxy,
        output.final_eval.divergence_proxy / output.warmup_eval.divergence_proxy
    );
    println!(
        "target accuracy:  {:.4} at warmup end -> {:.4} final",
        output.warmup_eval.target_accuracy,
        evaluate(&output.params, &target)?
    );
    println!("checkpoint hash:  {}", output.params.checkpoint_hash());
    Ok(())
}
