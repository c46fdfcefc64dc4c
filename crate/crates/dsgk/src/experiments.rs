//! Experiment runners on top of the training harness: the ablation grid,
//! hyperparameter sweeps scored by the divergence proxy, and the
//! discrepancy-loss comparison. All runners use paired seeds: every
//! variant sees the same task realizations and the same training seeds.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::data::{generate_task, load_features, DomainDataset, SyntheticTaskSpec};
use crate::error::{Error, Result};
use crate::harness::{evaluate, train, Evaluator, RunConfig};
use crate::losses::DiscrepancyKind;
use crate::pseudo::default_schedule;

/// Where the experiment's datasets come from. A synthetic task is
/// regenerated per seed; file-backed datasets are fixed and only the
/// training seed varies.
#[derive(Debug, Clone)]
pub enum TaskSource {
    Synthetic(SyntheticTaskSpec),
    Files { source: PathBuf, target: PathBuf },
}

impl TaskSource {
    pub fn realize(&self, seed: u64) -> Result<(DomainDataset, DomainDataset)> {
        match self {
            TaskSource::Synthetic(spec) => {
                let spec = SyntheticTaskSpec {
                    seed,
                    ..spec.clone()
                };
                generate_task(&spec)
            }
            TaskSource::Files { source, target } => {
                Ok((load_features(source)?, load_features(target)?))
            }
        }
    }
}

/// The ablation grid: every combination of dropped loss terms, named by
/// which terms are removed (K marginal, T pseudo classification,
/// C categorical).
pub const ABLATION_VARIANTS: [(&str, bool, bool, bool); 7] = [
    ("DSGK-K/T/C", false, false, false),
    ("DSGK-C/T", true, false, false),
    ("DSGK-K/T", false, false, true),
    ("DSGK-C", true, true, false),
    ("DSGK-T", true, false, true),
    ("DSGK-K", false, true, true),
    ("DSGK", true, true, true),
];

/// Accuracy of one variant over the seed list.
#[derive(Debug, Clone)]
pub struct VariantResult {
    pub name: String,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn run_scored(cfg: &RunConfig, task: &TaskSource, seed: u64) -> Result<RunScore> {
    let (source, target) = task.realize(seed)?;
    let evaluator = Evaluator::new(&target)?;
    let cfg = RunConfig {
        seed,
        ..cfg.clone()
    };
    let out = train(&cfg, &source, target.unlabeled_view(), Some(&evaluator))?;
    let accuracy = evaluate(&out.params, &target)?;
    Ok(RunScore {
        accuracy,
        warmup_proxy: out.warmup_eval.divergence_proxy,
        final_proxy: out.final_eval.divergence_proxy,
    })
}

pub struct RunScore {
    pub accuracy: f64,
    pub warmup_proxy: f64,
    pub final_proxy: f64,
}

/// Runs every ablation variant over the seed list with paired seeds.
/// Rows come back in grid order (source-only first, full model last).
pub fn ablate(base: &RunConfig, task: &TaskSource, seeds: &[u64]) -> Result<Vec<VariantResult>> {
    if seeds.is_empty() {
        return Err(Error::InvalidSpec("no seeds given".into()));
    }
    let mut rows = Vec::with_capacity(ABLATION_VARIANTS.len());
    for (name, use_k, use_t, use_c) in ABLATION_VARIANTS {
        let cfg = RunConfig {
            use_k,
            use_t,
            use_c,
            ..base.clone()
        };
        let mut accuracies = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            accuracies.push(run_scored(&cfg, task, seed)?.accuracy);
        }
        let (mean, std) = mean_std(&accuracies);
        rows.push(VariantResult {
            name: name.to_string(),
            accuracies,
            mean,
            std,
        });
    }
    Ok(rows)
}

/// Hyperparameter being swept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Alpha,
    Beta,
    Rounds,
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepParam::Alpha => write!(f, "alpha"),
            SweepParam::Beta => write!(f, "beta"),
            SweepParam::Rounds => write!(f, "T"),
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepParam::Alpha),
            "beta" => Ok(SweepParam::Beta),
            "T" | "t" | "rounds" => Ok(SweepParam::Rounds),
            other => Err(Error::InvalidSpec(format!(
                "unknown sweep parameter `{other}` (alpha|beta|T)"
            ))),
        }
    }
}

/// The default search grid for each parameter.
pub fn default_grid(param: SweepParam) -> Vec<f64> {
    match param {
        SweepParam::Alpha => vec![0.06, 0.07, 0.08, 0.09, 0.1, 0.2, 0.3, 0.4, 0.5],
        SweepParam::Beta => vec![0.006, 0.007, 0.008, 0.009, 0.01, 0.02, 0.03, 0.04, 0.05],
        SweepParam::Rounds => (1..=9).map(|t| t as f64).collect(),
    }
}

/// One grid value's end-of-training divergence proxy over the seeds.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    pub proxies: Vec<f64>,
    pub mean_proxy: f64,
    /// Set on the row with the smallest mean proxy.
    pub is_argmin: bool,
}

fn apply_sweep_value(cfg: &mut RunConfig, param: SweepParam, value: f64) -> Result<()> {
    match param {
        SweepParam::Alpha => cfg.alpha = value,
        SweepParam::Beta => cfg.beta = value,
        SweepParam::Rounds => {
            let t = value as usize;
            if t as f64 != value {
                return Err(Error::InvalidSpec(format!(
                    "round count must be an integer, got {value}"
                )));
            }
            cfg.refinement_rounds = t;
            cfg.schedule = default_schedule(t)?;
        }
    }
    Ok(())
}

/// Trains once per grid value (others fixed at the base config) and
/// reports the final divergence proxy; the smallest mean is flagged.
pub fn sweep(
    base: &RunConfig,
    task: &TaskSource,
    param: SweepParam,
    grid: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidSpec("empty sweep grid".into()));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidSpec("no seeds given".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &value in grid {
        let mut cfg = base.clone();
        apply_sweep_value(&mut cfg, param, value)?;
        let mut proxies = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            proxies.push(run_scored(&cfg, task, seed)?.final_proxy);
        }
        let (mean_proxy, _) = mean_std(&proxies);
        rows.push(SweepRow {
            value,
            proxies,
            mean_proxy,
            is_argmin: false,
        });
    }
    let argmin = rows
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.mean_proxy.total_cmp(&b.1.mean_proxy))
        .map(|(i, _)| i)
        .expect("nonempty grid");
    rows[argmin].is_argmin = true;
    Ok(rows)
}

/// The discrepancy losses compared by the loss-comparison experiment,
/// in presentation order.
pub const COMPARED_LOSSES: [(&str, DiscrepancyKind); 3] = [
    ("DSGK", DiscrepancyKind::Sphere),
    ("CORAL", DiscrepancyKind::Coral),
    ("MMD", DiscrepancyKind::Mmd),
];

/// Per-seed accuracy for each discrepancy loss filling the marginal and
/// categorical slots, paired seeds across rows.
pub fn compare_losses(
    base: &RunConfig,
    task: &TaskSource,
    seeds: &[u64],
) -> Result<Vec<VariantResult>> {
    if seeds.is_empty() {
        return Err(Error::InvalidSpec("no seeds given".into()));
    }
    let mut rows = Vec::with_capacity(COMPARED_LOSSES.len());
    for (name, kind) in COMPARED_LOSSES {
        let cfg = RunConfig {
            discrepancy: kind,
            use_k: true,
            use_t: true,
            use_c: true,
            ..base.clone()
        };
        let mut accuracies = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            accuracies.push(run_scored(&cfg, task, seed)?.accuracy);
        }
        let (mean, std) = mean_std(&accuracies);
        rows.push(VariantResult {
            name: name.to_string(),
            accuracies,
            mean,
            std,
        });
    }
    Ok(rows)
}

/// Aligned text table for variant results (ablation or loss comparison).
pub fn render_variant_table(title: &str, rows: &[VariantResult]) -> String {
    let name_width = rows
        .iter()
        .map(|r| r.name.len())
        .max()
        .unwrap_or(4)
        .max("variant".len());
    let mut out = String::new();
    out.push_str(title);
    out.push('\n');
    out.push_str(&format!(
        "{:<name_width$}  {:>10}  {:>10}  per-seed\n",
        "variant", "mean", "std"
    ));
    for r in rows {
        let per_seed = r
            .accuracies
            .iter()
            .map(|a| format!("{a:.4}"))
            .collect::<Vec<_>>()
            .join(" ");
        out.push_str(&format!(
            "{:<name_width$}  {:>10.4}  {:>10.4}  {}\n",
            r.name, r.mean, r.std, per_seed
        ));
    }
    out
}

/// Aligned text table for a sweep, flagging the argmin row.
pub fn render_sweep_table(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!("divergence proxy by {param}\n"));
    out.push_str(&format!(
        "{:>10}  {:>14}  {:>7}  per-seed\n",
        param.to_string(),
        "mean-proxy",
        "argmin"
    ));
    for r in rows {
        let per_seed = r
            .proxies
            .iter()
            .map(|p| format!("{p:.6}"))
            .collect::<Vec<_>>()
            .join(" ");
        out.push_str(&format!(
            "{:>10}  {:>14.6}  {:>7}  {}\n",
            r.value,
            r.mean_proxy,
            if r.is_argmin { "<--" } else { "" },
            per_seed
        ));
    }
    out
}

/// Machine-readable record lines for variant results.
pub fn render_variant_records(kind: &str, rows: &[VariantResult]) -> String {
    let mut out = String::new();
    for r in rows {
        for (i, a) in r.accuracies.iter().enumerate() {
            out.push_str(&format!(
                "record:{kind} variant:{} seed-index:{i} accuracy:{a}\n",
                r.name
            ));
        }
        out.push_str(&format!(
            "record:{kind}-summary variant:{} mean:{} std:{}\n",
            r.name, r.mean, r.std
        ));
    }
    out
}

/// Machine-readable record lines for a sweep.
pub fn render_sweep_records(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&format!(
            "record:sweep param:{param} value:{} mean-proxy:{} argmin:{}\n",
            r.value, r.mean_proxy, r.is_argmin
        ));
    }
    out
}
