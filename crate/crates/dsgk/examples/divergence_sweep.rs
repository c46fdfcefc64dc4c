//! Hyperparameter selection without target labels: sweep a weight and
//! rank values by the end-of-training divergence proxy.

use dsgk::data::SyntheticTaskSpec;
use dsgk::experiments::{render_sweep_table, sweep, SweepParam, TaskSource};
use dsgk::harness::RunConfig;

fn main() -> dsgk::Result<()> {
    let task = TaskSource::Synthetic(SyntheticTaskSpec {
        samples_per_class: 64,
        ..SyntheticTaskSpec::desk(0)
    });
    let cfg = RunConfig::desk(0);

    // A condensed alpha grid; `dsgk sweep --param alpha` runs the full one.
    let grid = [0.06, 0.1, 0.3, 0.5];
    let rows = sweep(&cfg, &task, SweepParam::Alpha, &grid, &[1, 2])?;
    print!("{}", render_sweep_table(SweepParam::Alpha, &rows));

    let best = rows.iter().find(|r| r.is_argmin).unwrap();
    println!(
        "selected alpha = {} (smallest mean divergence proxy {:.6})",
        best.value, best.mean_proxy
    );
    Ok(())
}
