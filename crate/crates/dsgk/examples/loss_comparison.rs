//! Swaps the discrepancy loss filling the marginal and categorical slots
//! (sphere geodesic vs CORAL vs linear MMD) and compares target accuracy.

use dsgk::data::SyntheticTaskSpec;
use dsgk::experiments::{compare_losses, render_variant_table, TaskSource};
use dsgk::harness::RunConfig;

fn main() -> dsgk::Result<()> {
    let task = TaskSource::Synthetic(SyntheticTaskSpec {
        samples_per_class: 64,
        ..SyntheticTaskSpec::desk(0)
    });
    let cfg = RunConfig::desk(0);

    let rows = compare_losses(&cfg, &task, &[1, 2, 3])?;
    print!(
        "{}",
        render_variant_table("discrepancy-loss accuracy (reduced task)", &rows)
    );
    Ok(())
}
