//! Runs the full ablation grid (every combination of dropped loss terms)
//! on a reduced copy of the benchmark task with paired seeds.

use dsgk::data::SyntheticTaskSpec;
use dsgk::experiments::{ablate, render_variant_records, render_variant_table, TaskSource};
use dsgk::harness::RunConfig;

fn main() -> dsgk::Result<()> {
    // Smaller domains keep this to a few seconds; the full-size study is
    // `dsgk ablate --synthetic` or the acceptance suite.
    let task = TaskSource::Synthetic(SyntheticTaskSpec {
        samples_per_class: 64,
        ..SyntheticTaskSpec::desk(0)
    });
    let cfg = RunConfig::desk(0);
    let seeds = [1, 2, 3];

    let rows = ablate(&cfg, &task, &seeds)?;
    print!("{}", render_variant_records("ablate", &rows));
    println!();
    print!("{}", render_variant_table("ablation accuracy (reduced task)", &rows));
    Ok(())
}
