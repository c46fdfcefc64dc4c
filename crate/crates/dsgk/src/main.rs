//! Thin command-line front end; all behavior lives in the library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dsgk::data::{generate_task, load_features, save_features, DomainDataset, SyntheticTaskSpec};
use dsgk::error::{Error, Result};
use dsgk::experiments::{
    ablate, compare_losses, default_grid, render_sweep_records, render_sweep_table,
    render_variant_records, render_variant_table, sweep, SweepParam, TaskSource,
};
use dsgk::gradcheck::standard_network_checks;
use dsgk::harness::{evaluate, render_stream, train, Evaluator, RunConfig};
use dsgk::network::NetworkParams;
use dsgk::pseudo::{default_schedule, ThresholdSchedule};
use dsgk::sphere::geometry_suite;

#[derive(Parser)]
#[command(name = "dsgk", version, about = "Spherical-manifold Gaussian-kernel domain adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic domain-shift task as two feature CSV files.
    GenData(GenDataArgs),
    /// Train on a source/target pair and stream metrics records.
    Train(TrainArgs),
    /// Score a saved checkpoint on a labeled feature CSV.
    Evaluate(EvaluateArgs),
    /// Run every ablation variant over paired seeds.
    Ablate(AblateArgs),
    /// Sweep one hyperparameter and rank values by the divergence proxy.
    Sweep(SweepArgs),
    /// Compare the sphere loss against the CORAL and MMD baselines.
    CompareLosses(CompareArgs),
    /// Verify every analytic gradient against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Stress-test the Log/Exp maps on random unit vectors.
    Geomtest(GeomtestArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    beta: f64,
    #[arg(long, default_value_t = 0.1)]
    kappa: f64,
    /// Number of refinement rounds.
    #[arg(long = "T", default_value_t = 5)]
    rounds: usize,
    /// Explicit threshold schedule (comma separated, strictly decreasing);
    /// defaults to the standard schedule for T rounds.
    #[arg(long, value_delimiter = ',')]
    schedule: Option<Vec<f64>>,
    /// Iterations per refinement round; omitted means one epoch.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, default_value_t = 4)]
    warmup_epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// sgd-momentum | adam
    #[arg(long, default_value = "sgd-momentum")]
    optimizer: String,
    /// feature | moment
    #[arg(long, default_value = "feature")]
    mode: String,
    /// softmax | logits
    #[arg(long, default_value = "softmax")]
    features_for_loss: String,
    /// sphere | coral | mmd
    #[arg(long, default_value = "sphere")]
    discrepancy: String,
    /// Hidden layer widths (comma separated).
    #[arg(long, value_delimiter = ',', default_values_t = vec![512usize, 256])]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    min_class_count: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long = "use-K", default_value_t = true, action = clap::ArgAction::Set)]
    use_k: bool,
    #[arg(long = "use-T", default_value_t = true, action = clap::ArgAction::Set)]
    use_t: bool,
    #[arg(long = "use-C", default_value_t = true, action = clap::ArgAction::Set)]
    use_c: bool,
}

impl RunArgs {
    fn to_config(&self) -> Result<RunConfig> {
        let schedule = match &self.schedule {
            Some(values) => ThresholdSchedule::new(values.clone())?,
            None if self.rounds == 0 => ThresholdSchedule::empty(),
            None => default_schedule(self.rounds)?,
        };
        let cfg = RunConfig {
            alpha: self.alpha,
            beta: self.beta,
            kappa: self.kappa,
            refinement_rounds: self.rounds,
            schedule,
            iterations_per_round: self.iterations,
            warmup_epochs: self.warmup_epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            optimizer: self.optimizer.parse()?,
            mode: self.mode.parse()?,
            features_for_loss: self.features_for_loss.parse()?,
            discrepancy: self.discrepancy.parse()?,
            hidden_sizes: self.hidden.clone(),
            min_class_count: self.min_class_count,
            seed: self.seed,
            use_k: self.use_k,
            use_t: self.use_t,
            use_c: self.use_c,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TaskArgs {
    /// Source-domain feature CSV (labeled).
    #[arg(long, requires = "target")]
    source: Option<PathBuf>,
    /// Target-domain feature CSV (labels, if present, are used for
    /// evaluation only).
    #[arg(long, requires = "source")]
    target: Option<PathBuf>,
    /// Use the frozen synthetic benchmark task instead of files.
    #[arg(long, conflicts_with_all = ["source", "target"])]
    synthetic: bool,
}

impl TaskArgs {
    fn to_source(&self) -> Result<TaskSource> {
        match (&self.source, &self.target) {
            (Some(s), Some(t)) => Ok(TaskSource::Files {
                source: s.clone(),
                target: t.clone(),
            }),
            _ if self.synthetic => Ok(TaskSource::Synthetic(SyntheticTaskSpec::desk(0))),
            _ => Err(Error::InvalidSpec(
                "give --source and --target, or --synthetic".into(),
            )),
        }
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out_source: PathBuf,
    #[arg(long)]
    out_target: PathBuf,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 10)]
    dim: usize,
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    #[arg(long, default_value_t = 30.0)]
    rotation_degrees: f64,
    #[arg(long, default_value_t = 1.0)]
    translation_scale: f64,
    #[arg(long, default_value_t = 1.35)]
    class_separation: f64,
    #[arg(long, default_value_t = 0.5)]
    noise_scale: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Write the target file with label -1 (fully unlabeled).
    #[arg(long)]
    strip_target_labels: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    run: RunArgs,
    /// Write the metrics stream here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Save the final checkpoint here.
    #[arg(long)]
    save: Option<PathBuf>,
    /// Skip evaluation-only metrics even when target labels exist.
    #[arg(long)]
    no_eval: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1u64, 2, 3, 4, 5])]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct SweepArgs {
    /// alpha | beta | T
    #[arg(long)]
    param: String,
    /// Grid values (comma separated); defaults to the standard grid.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1u64, 2, 3, 4, 5])]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1u64, 2, 3, 4, 5])]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Random non-degenerate points per loss.
    #[arg(long, default_value_t = 20)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GeomtestArgs {
    /// Random unit-vector pairs per dimension.
    #[arg(long, default_value_t = 10_000)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn write_output(text: &str, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData(args) => {
            let spec = SyntheticTaskSpec {
                num_classes: args.classes,
                dim: args.dim,
                samples_per_class: args.per_class,
                rotation_degrees: args.rotation_degrees,
                translation_scale: args.translation_scale,
                class_separation: args.class_separation,
                noise_scale: args.noise_scale,
                seed: args.seed,
            };
            let (source, target) = generate_task(&spec)?;
            save_features(&source, &args.out_source)?;
            let target = if args.strip_target_labels {
                DomainDataset::new(target.features().to_owned(), None, &target.name)?
            } else {
                target
            };
            save_features(&target, &args.out_target)?;
            println!(
                "wrote {} source rows to {} and {} target rows to {}",
                source.len(),
                args.out_source.display(),
                target.len(),
                args.out_target.display()
            );
        }
        Command::Train(args) => {
            let cfg = args.run.to_config()?;
            let (source, target) = args.task.to_source()?.realize(cfg.seed)?;
            let evaluator = if args.no_eval || target.labels().is_none() {
                None
            } else {
                Some(Evaluator::new(&target)?)
            };
            let output = train(&cfg, &source, target.unlabeled_view(), evaluator.as_ref())?;
            write_output(&render_stream(&cfg, &output), args.out.as_ref())?;
            if let Some(path) = &args.save {
                output.params.save(path)?;
                eprintln!("checkpoint {} saved to {}", output.params.checkpoint_hash(), path.display());
            }
            if let Some(e) = evaluator.as_ref() {
                eprintln!(
                    "final target accuracy {:.4}",
                    e.target_accuracy(&output.params)?
                );
            }
        }
        Command::Evaluate(args) => {
            let params = NetworkParams::load(&args.checkpoint)?;
            let data = load_features(&args.data)?;
            println!("accuracy: {}", evaluate(&params, &data)?);
        }
        Command::Ablate(args) => {
            let cfg = args.run.to_config()?;
            let task = args.task.to_source()?;
            let rows = ablate(&cfg, &task, &args.seeds)?;
            print!("{}", render_variant_records("ablate", &rows));
            print!("{}", render_variant_table("ablation accuracy", &rows));
        }
        Command::Sweep(args) => {
            let cfg = args.run.to_config()?;
            let task = args.task.to_source()?;
            let param: SweepParam = args.param.parse()?;
            let grid = args.grid.clone().unwrap_or_else(|| default_grid(param));
            let rows = sweep(&cfg, &task, param, &grid, &args.seeds)?;
            print!("{}", render_sweep_records(param, &rows));
            print!("{}", render_sweep_table(param, &rows));
        }
        Command::CompareLosses(args) => {
            let cfg = args.run.to_config()?;
            let task = args.task.to_source()?;
            let rows = compare_losses(&cfg, &task, &args.seeds)?;
            print!("{}", render_variant_records("compare", &rows));
            print!("{}", render_variant_table("discrepancy-loss accuracy", &rows));
        }
        Command::Gradcheck(args) => {
            let results = standard_network_checks(args.points, args.seed)?;
            let mut all_ok = true;
            for r in &results {
                let ok = r.max_rel_err <= 1e-5;
                all_ok &= ok;
                println!(
                    "gradcheck {}: max relative error {:.3e}, max absolute gap {:.3e} [{}]",
                    r.name,
                    r.max_rel_err,
                    r.max_abs_err,
                    if ok { "PASS" } else { "FAIL" }
                );
            }
            if !all_ok {
                return Err(Error::InvalidSpec(
                    "a gradient check exceeded the 1e-5 tolerance".into(),
                ));
            }
        }
        Command::Geomtest(args) => {
            let report = geometry_suite(args.pairs, args.seed)?;
            let checks = [
                ("roundtrip", report.max_roundtrip, 1e-9),
                ("tangency", report.max_tangency, 1e-10),
                ("norm-vs-distance", report.max_norm_gap, 1e-10),
                ("unit-norm", report.max_unit_norm_err, 1e-9),
            ];
            let mut all_ok = true;
            for (name, worst, tol) in checks {
                let ok = worst <= tol;
                all_ok &= ok;
                println!(
                    "geomtest {name}: max {worst:.3e} (tolerance {tol:.0e}) [{}]",
                    if ok { "PASS" } else { "FAIL" }
                );
            }
            println!(
                "geomtest: {} pairs per dim over dims {:?}, {} near-antipodal pairs skipped",
                report.pairs_per_dim, report.dims, report.skipped
            );
            if !all_ok {
                return Err(Error::InvalidSpec("a geometry check failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
