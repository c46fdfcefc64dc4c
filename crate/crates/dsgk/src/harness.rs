//! Training orchestration and the metrics stream.
//!
//! A run has two stages. Warmup minimizes the source classification loss
//! plus the weighted marginal geodesic loss. Refinement then loops over
//! `T` rounds with a descending confidence threshold: each inner iteration
//! regenerates pseudo labels from the current classifier, samples a paired
//! source/target batch plus a pseudo-labeled target batch, and steps the
//! full objective under the run's ablation flags.
//!
//! Every iteration emits one [`MetricsRecord`]; a full-dataset evaluation
//! record is emitted at the end of warmup and at the end of training. The
//! rendered stream is line-delimited `key:value` text in a fixed order and
//! is byte-identical across runs with the same config and seed (wall-clock
//! timing therefore stays out of the stream; it lives only in the in-memory
//! records).
//!
//! Target ground truth never enters this module's training path: the target
//! domain arrives as an [`UnlabeledView`] and accuracy metrics come from an
//! optional [`Evaluator`] that owns the labeled dataset. Running with or
//! without an evaluator produces identical parameters.

use std::fmt;
use std::fmt::Write as _;
use std::time::Instant;

use ndarray::Axis;
use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{DomainDataset, PairedSampler, UnlabeledView};
use crate::error::{Error, Result};
use crate::losses::{
    categorical_sphere_kernel_geodesic_loss, sphere_kernel_geodesic_loss, total_loss,
    DiscrepancyKind, EmbeddingMode, FeaturesForLoss, LossBreakdown, LossConfig,
};
use crate::moments::FeatureBatch;
use crate::network::{NetworkParams, OptimizerKind, OptimizerState};
use crate::pseudo::{default_schedule, select_pseudo_labels, PseudoLabelSet, ThresholdSchedule};

/// Version stamp written as the first field of every stream.
pub const VERSION_STAMP: &str = concat!("dsgk-v", env!("CARGO_PKG_VERSION"));

/// Training stage a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    Refine,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Warmup => write!(f, "warmup"),
            Phase::Refine => write!(f, "refine"),
        }
    }
}

/// Complete configuration of one training run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    /// Number of refinement rounds (the schedule length).
    pub refinement_rounds: usize,
    pub schedule: ThresholdSchedule,
    /// Inner iterations per round; `None` means one pass over the paired
    /// batches (one epoch).
    pub iterations_per_round: Option<usize>,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub mode: EmbeddingMode,
    pub features_for_loss: FeaturesForLoss,
    pub discrepancy: DiscrepancyKind,
    /// Hidden layer widths; the class count is appended at train time.
    pub hidden_sizes: Vec<usize>,
    pub min_class_count: usize,
    pub seed: u64,
    pub use_k: bool,
    pub use_t: bool,
    pub use_c: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.01,
            kappa: 0.1,
            refinement_rounds: 5,
            schedule: default_schedule(5).expect("5 is in range"),
            iterations_per_round: None,
            warmup_epochs: 4,
            batch_size: 64,
            learning_rate: 0.001,
            optimizer: OptimizerKind::SgdMomentum,
            mode: EmbeddingMode::Feature,
            features_for_loss: FeaturesForLoss::Softmax,
            discrepancy: DiscrepancyKind::Sphere,
            hidden_sizes: vec![512, 256],
            min_class_count: 2,
            seed: 7,
            use_k: true,
            use_t: true,
            use_c: true,
        }
    }
}

impl RunConfig {
    /// The frozen configuration for the synthetic benchmark task: a
    /// (128, 64, C) classifier under Adam, one warmup epoch, and 15
    /// iterations per refinement round (about seven epochs total at the
    /// benchmark dataset size).
    pub fn desk(seed: u64) -> Self {
        Self {
            hidden_sizes: vec![128, 64],
            optimizer: OptimizerKind::Adam,
            warmup_epochs: 1,
            iterations_per_round: Some(15),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schedule.len() != self.refinement_rounds {
            return Err(Error::InvalidSpec(format!(
                "schedule has {} thresholds for {} rounds",
                self.schedule.len(),
                self.refinement_rounds
            )));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::InvalidSpec("alpha and beta must be >= 0".into()));
        }
        if self.kappa <= 0.0 {
            return Err(Error::NonPositiveKappa(self.kappa));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidSpec("batch size is 0".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidSpec("learning rate must be > 0".into()));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::InvalidSizes("hidden layer of width 0".into()));
        }
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            beta: self.beta,
            kappa: self.kappa,
            mode: self.mode,
            features_for_loss: self.features_for_loss,
            discrepancy: self.discrepancy,
            min_class_count: self.min_class_count,
            use_k: self.use_k,
            use_t: self.use_t,
            use_c: self.use_c,
        }
    }
}

/// One training iteration's metrics.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub phase: Phase,
    pub round: usize,
    pub iteration: usize,
    pub loss: LossBreakdown,
    pub pseudo_count: usize,
    /// Fraction of pseudo labels matching held ground truth; NaN without an
    /// evaluator or without pseudo labels. Evaluation only.
    pub pseudo_precision: f64,
    /// NaN without an evaluator. Evaluation only.
    pub target_accuracy: f64,
    /// Wall-clock duration of the iteration. Kept out of the canonical
    /// stream so identical runs stay byte-identical.
    pub wall_ms: u64,
}

/// Where a full-dataset evaluation record was taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalStage {
    WarmupEnd,
    Final,
}

impl fmt::Display for EvalStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalStage::WarmupEnd => write!(f, "warmup-end"),
            EvalStage::Final => write!(f, "final"),
        }
    }
}

/// Full-dataset divergence evaluation.
///
/// The marginal and categorical terms are always the sphere geodesic
/// losses (the divergence proxy instrument), independent of which
/// discrepancy the run trains with. Target classes come from the
/// classifier's own argmax labeling; ground truth is never used here.
#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub stage: EvalStage,
    pub l_k: f64,
    pub l_k_cat: f64,
    pub divergence_proxy: f64,
    pub valid_class_count: usize,
    /// Pseudo-set size at the nearest schedule threshold (the first
    /// threshold at warmup end, the last at the final record).
    pub pseudo_count: usize,
    pub pseudo_precision: f64,
    pub target_accuracy: f64,
}

/// Holds the labeled target dataset for evaluation-only metrics.
pub struct Evaluator<'a> {
    truth: &'a DomainDataset,
}

impl<'a> Evaluator<'a> {
    pub fn new(truth: &'a DomainDataset) -> Result<Self> {
        if truth.labels().is_none() {
            return Err(Error::MissingLabels);
        }
        Ok(Self { truth })
    }

    pub fn target_accuracy(&self, params: &NetworkParams) -> Result<f64> {
        evaluate(params, self.truth)
    }

    /// Fraction of pseudo labels that match ground truth; NaN when empty.
    pub fn pseudo_precision(&self, set: &PseudoLabelSet) -> f64 {
        if set.is_empty() {
            return f64::NAN;
        }
        let labels = self.truth.labels().expect("checked at construction");
        let hits = set
            .indices
            .iter()
            .zip(set.labels.iter())
            .filter(|(&i, &l)| labels[i] == l)
            .count();
        hits as f64 / set.len() as f64
    }
}

/// Inference-mode accuracy: row argmax (lowest index wins ties) vs labels.
pub fn evaluate(params: &NetworkParams, ds: &DomainDataset) -> Result<f64> {
    let labels = ds.labels().ok_or(Error::MissingLabels)?;
    if ds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let fwd = params.forward_infer(ds.features())?;
    let mut hits = 0usize;
    for (row, &label) in fwd.probs.rows().into_iter().zip(labels.iter()) {
        let mut best = 0usize;
        let mut best_p = f64::NEG_INFINITY;
        for (j, &p) in row.iter().enumerate() {
            if p > best_p {
                best_p = p;
                best = j;
            }
        }
        if best == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

/// Everything a finished run produces.
pub struct TrainOutput {
    pub params: NetworkParams,
    pub records: Vec<MetricsRecord>,
    pub warmup_eval: EvalRecord,
    pub final_eval: EvalRecord,
}

fn argmax_row(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0usize;
    let mut best_p = f64::NEG_INFINITY;
    for (j, &p) in row.iter().enumerate() {
        if p > best_p {
            best_p = p;
            best = j;
        }
    }
    best
}

/// Full-dataset divergence proxy. Both domains are truncated to the same
/// row count (dataset order) so the feature embedding shapes match.
fn divergence_eval(
    params: &NetworkParams,
    source: &DomainDataset,
    target: UnlabeledView<'_>,
    cfg: &RunConfig,
    stage: EvalStage,
    evaluator: Option<&Evaluator<'_>>,
) -> Result<EvalRecord> {
    let n = source.len().min(target.features.nrows());
    let src_full = source.features();
    let src_x = src_full.slice(ndarray::s![..n, ..]);
    let tgt_x = target.features.slice(ndarray::s![..n, ..]);
    // Batch statistics, not running statistics: the proxy should measure
    // the quantity the objective actually minimizes, and it must not
    // perturb the model state.
    let fwd_s = params.forward_batch_stats(src_x)?;
    let fwd_t = params.forward_batch_stats(tgt_x)?;
    let pick = |fwd: &crate::network::Forward| match cfg.features_for_loss {
        FeaturesForLoss::Softmax => fwd.probs.clone(),
        FeaturesForLoss::Logits => fwd.logits.clone(),
    };
    let feats_s = pick(&fwd_s);
    let feats_t = pick(&fwd_t);
    let out_s = FeatureBatch::new(feats_s.clone());
    let out_t = FeatureBatch::new(feats_t.clone());
    let l_k = sphere_kernel_geodesic_loss(&out_s, &out_t, cfg.kappa, cfg.mode)?.value;

    // Class slices: true labels on the source side, the classifier's own
    // argmax labeling on the target side.
    let source_labels: Vec<usize> = source.labels().ok_or(Error::MissingLabels)?[..n].to_vec();
    let target_labels: Vec<usize> = fwd_t
        .probs
        .rows()
        .into_iter()
        .map(|r| argmax_row(r))
        .collect();
    let labeled_s = FeatureBatch {
        data: feats_s,
        labels: Some(source_labels),
    };
    let labeled_t = FeatureBatch {
        data: feats_t,
        labels: Some(target_labels),
    };
    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6576_616c);
    let (l_k_cat, valid_class_count) = match categorical_sphere_kernel_geodesic_loss(
        &labeled_s,
        &labeled_t,
        cfg.kappa,
        cfg.mode,
        cfg.min_class_count,
        &mut eval_rng,
    ) {
        Ok(r) => (r.value, r.valid_class_count),
        Err(Error::NoValidClasses) => (0.0, 0),
        Err(e) => return Err(e),
    };

    // Pseudo-set size at the nearest schedule threshold.
    let threshold = match stage {
        EvalStage::WarmupEnd => cfg.schedule.get(0),
        EvalStage::Final => cfg.schedule.get(cfg.refinement_rounds.saturating_sub(1)),
    };
    let (pseudo_count, pseudo_precision) = match threshold {
        Some(t) => {
            let full_probs = params.forward_infer(target.features)?.probs;
            let set = select_pseudo_labels(full_probs.view(), t);
            let precision = evaluator.map_or(f64::NAN, |e| e.pseudo_precision(&set));
            (set.len(), precision)
        }
        None => (0, f64::NAN),
    };
    let target_accuracy = match evaluator {
        Some(e) => e.target_accuracy(params)?,
        None => f64::NAN,
    };
    Ok(EvalRecord {
        stage,
        l_k,
        l_k_cat,
        divergence_proxy: l_k + l_k_cat,
        valid_class_count,
        pseudo_count,
        pseudo_precision,
        target_accuracy,
    })
}

/// Trains a classifier on the source domain and the unlabeled target view.
///
/// A `(config, seed, task)` triple fully determines every emitted number;
/// the optional evaluator only fills the evaluation-only metric fields and
/// never touches the training path.
pub fn train<'a>(
    cfg: &RunConfig,
    source: &'a DomainDataset,
    target: UnlabeledView<'a>,
    evaluator: Option<&Evaluator<'_>>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let labels = source.labels().ok_or(Error::MissingLabels)?;
    let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    if num_classes < 2 {
        return Err(Error::InvalidSpec(format!(
            "source domain has {num_classes} classes, need at least 2"
        )));
    }
    if source.dim() != target.features.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "source width {} vs target width {}",
            source.dim(),
            target.features.ncols()
        )));
    }

    // Independent deterministic streams derived from the run seed.
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init_seed = master.next_u64();
    let sampler_seed = master.next_u64();
    let loss_seed = master.next_u64();
    let pseudo_seed = master.next_u64();
    let mut loss_rng = ChaCha8Rng::seed_from_u64(loss_seed);
    let mut pseudo_rng = ChaCha8Rng::seed_from_u64(pseudo_seed);

    let mut layer_sizes = cfg.hidden_sizes.clone();
    layer_sizes.push(num_classes);
    let mut net = NetworkParams::init(source.dim(), &layer_sizes, init_seed)?;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, &net);
    let mut sampler = PairedSampler::new(source, target, cfg.batch_size, sampler_seed)?;
    let steps_per_epoch = sampler.steps_per_epoch().max(1);
    let iters_per_round = cfg.iterations_per_round.unwrap_or(steps_per_epoch).max(1);

    let mut records: Vec<MetricsRecord> = Vec::new();
    let emit = |records: &mut Vec<MetricsRecord>,
                    phase: Phase,
                    round: usize,
                    iteration: usize,
                    loss: LossBreakdown,
                    pseudo_count: usize,
                    pseudo_precision: f64,
                    net: &NetworkParams,
                    started: Instant|
     -> Result<()> {
        let target_accuracy = match evaluator {
            Some(e) => e.target_accuracy(net)?,
            None => f64::NAN,
        };
        records.push(MetricsRecord {
            phase,
            round,
            iteration,
            loss,
            pseudo_count,
            pseudo_precision,
            target_accuracy,
            wall_ms: started.elapsed().as_millis() as u64,
        });
        Ok(())
    };

    // Stage 1: warmup on the source loss plus the marginal term.
    let warmup_cfg = LossConfig {
        use_t: false,
        use_c: false,
        ..cfg.loss_config()
    };
    let mut warmup_iter = 0usize;
    for _ in 0..cfg.warmup_epochs {
        for _ in 0..steps_per_epoch {
            let started = Instant::now();
            let (batch_s, batch_t) = sampler.next_pair();
            warmup_iter += 1;
            match total_loss(
                &mut net,
                &batch_s,
                batch_t.view(),
                None,
                &warmup_cfg,
                &mut loss_rng,
            ) {
                Ok((loss, grads)) => {
                    opt.step(&mut net, &grads)?;
                    emit(
                        &mut records,
                        Phase::Warmup,
                        0,
                        warmup_iter,
                        loss,
                        0,
                        f64::NAN,
                        &net,
                        started,
                    )?;
                }
                Err(Error::Antipodal { dot }) => {
                    eprintln!(
                        "warmup iteration {warmup_iter}: antipodal embedding (dot {dot}), step skipped"
                    );
                }
                Err(e) => return Err(e),
            }
        }
    }
    let warmup_eval = divergence_eval(&net, source, target, cfg, EvalStage::WarmupEnd, evaluator)?;

    // Stage 2: easy-to-hard refinement.
    let full_cfg = cfg.loss_config();
    for round in 1..=cfg.refinement_rounds {
        let threshold = cfg
            .schedule
            .get(round - 1)
            .ok_or_else(|| Error::InvalidSpec("schedule shorter than rounds".into()))?;
        for iteration in 1..=iters_per_round {
            let started = Instant::now();
            // Pseudo labels track the evolving classifier: regenerate on
            // every inner iteration.
            let target_probs = net.forward_infer(target.features)?.probs;
            let pset = select_pseudo_labels(target_probs.view(), threshold);
            let pseudo_batch = sample_pseudo_batch(
                target,
                &pset,
                cfg.batch_size,
                &mut pseudo_rng,
            );
            let (batch_s, batch_t) = sampler.next_pair();
            match total_loss(
                &mut net,
                &batch_s,
                batch_t.view(),
                pseudo_batch.as_ref(),
                &full_cfg,
                &mut loss_rng,
            ) {
                Ok((loss, grads)) => {
                    opt.step(&mut net, &grads)?;
                    let precision = evaluator.map_or(f64::NAN, |e| e.pseudo_precision(&pset));
                    emit(
                        &mut records,
                        Phase::Refine,
                        round,
                        iteration,
                        loss,
                        pset.len(),
                        precision,
                        &net,
                        started,
                    )?;
                }
                Err(Error::Antipodal { dot }) => {
                    eprintln!(
                        "round {round} iteration {iteration}: antipodal embedding (dot {dot}), step skipped"
                    );
                }
                Err(e) => return Err(e),
            }
        }
    }
    let final_eval = divergence_eval(&net, source, target, cfg, EvalStage::Final, evaluator)?;

    Ok(TrainOutput {
        params: net,
        records,
        warmup_eval,
        final_eval,
    })
}

/// Draws up to `batch_size` distinct pseudo-labeled rows. Fewer than two
/// selected samples cannot form batch statistics, so the batch is skipped.
fn sample_pseudo_batch(
    target: UnlabeledView<'_>,
    pset: &PseudoLabelSet,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Option<FeatureBatch> {
    if pset.len() < 2 {
        return None;
    }
    let k = batch_size.min(pset.len());
    let picked: Vec<usize> = if k == pset.len() {
        (0..pset.len()).collect()
    } else {
        let mut p: Vec<usize> = rand::seq::index::sample(rng, pset.len(), k).into_vec();
        p.sort_unstable();
        p
    };
    let rows: Vec<usize> = picked.iter().map(|&j| pset.indices[j]).collect();
    let labels: Vec<usize> = picked.iter().map(|&j| pset.labels[j]).collect();
    let data = target.features.select(Axis(0), &rows);
    Some(FeatureBatch {
        data,
        labels: Some(labels),
    })
}

fn fmt_f(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

fn fmt_f64_list(vs: &[f64]) -> String {
    vs.iter()
        .map(|v| fmt_f(*v))
        .collect::<Vec<_>>()
        .join(",")
}

fn fmt_usize_list(vs: &[usize]) -> String {
    vs.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// The run-header line: version stamp plus a config echo in fixed order.
pub fn render_run_header(cfg: &RunConfig) -> String {
    format!(
        "record:run version:{} alpha:{} beta:{} kappa:{} T:{} schedule:{} iterations:{} \
         warmup-epochs:{} batch-size:{} lr:{} optimizer:{} mode:{} features-for-loss:{} \
         discrepancy:{} hidden:{} min-class-count:{} seed:{} use-K:{} use-T:{} use-C:{}",
        VERSION_STAMP,
        fmt_f(cfg.alpha),
        fmt_f(cfg.beta),
        fmt_f(cfg.kappa),
        cfg.refinement_rounds,
        fmt_f64_list(cfg.schedule.values()),
        cfg.iterations_per_round
            .map_or("auto".to_string(), |i| i.to_string()),
        cfg.warmup_epochs,
        cfg.batch_size,
        fmt_f(cfg.learning_rate),
        cfg.optimizer,
        cfg.mode,
        cfg.features_for_loss,
        cfg.discrepancy,
        fmt_usize_list(&cfg.hidden_sizes),
        cfg.min_class_count,
        cfg.seed,
        cfg.use_k,
        cfg.use_t,
        cfg.use_c,
    )
}

fn render_iter_record(r: &MetricsRecord, cfg: &RunConfig) -> String {
    format!(
        "record:iter phase:{} round:{} iter:{} mode:{} l_s:{} l_t:{} l_k:{} l_k_cat:{} total:{} \
         divergence_proxy:{} kernel_value:{} valid_class_count:{} pseudo_count:{} \
         pseudo_precision:{} target_accuracy:{}",
        r.phase,
        r.round,
        r.iteration,
        cfg.mode,
        fmt_f(r.loss.l_s),
        fmt_f(r.loss.l_t),
        fmt_f(r.loss.l_k),
        fmt_f(r.loss.l_k_cat),
        fmt_f(r.loss.total),
        fmt_f(r.loss.divergence_proxy),
        fmt_f(r.loss.kernel_value),
        r.loss.valid_class_count,
        r.pseudo_count,
        fmt_f(r.pseudo_precision),
        fmt_f(r.target_accuracy),
    )
}

fn render_eval_record(r: &EvalRecord, cfg: &RunConfig) -> String {
    format!(
        "record:eval stage:{} mode:{} l_k:{} l_k_cat:{} divergence_proxy:{} valid_class_count:{} \
         pseudo_count:{} pseudo_precision:{} target_accuracy:{}",
        r.stage,
        cfg.mode,
        fmt_f(r.l_k),
        fmt_f(r.l_k_cat),
        fmt_f(r.divergence_proxy),
        r.valid_class_count,
        r.pseudo_count,
        fmt_f(r.pseudo_precision),
        fmt_f(r.target_accuracy),
    )
}

/// Renders the canonical metrics stream for a finished run.
pub fn render_stream(cfg: &RunConfig, output: &TrainOutput) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", render_run_header(cfg));
    let mut warmup_done = false;
    for r in &output.records {
        if r.phase == Phase::Refine && !warmup_done {
            let _ = writeln!(out, "{}", render_eval_record(&output.warmup_eval, cfg));
            warmup_done = true;
        }
        let _ = writeln!(out, "{}", render_iter_record(r, cfg));
    }
    if !warmup_done {
        let _ = writeln!(out, "{}", render_eval_record(&output.warmup_eval, cfg));
    }
    let _ = writeln!(out, "{}", render_eval_record(&output.final_eval, cfg));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_task, SyntheticTaskSpec};

    fn small_task(seed: u64) -> (DomainDataset, DomainDataset) {
        let spec = SyntheticTaskSpec {
            samples_per_class: 24,
            ..SyntheticTaskSpec::desk(seed)
        };
        generate_task(&spec).unwrap()
    }

    fn quick_config(seed: u64) -> RunConfig {
        RunConfig {
            hidden_sizes: vec![16, 8],
            warmup_epochs: 1,
            refinement_rounds: 2,
            schedule: crate::pseudo::ThresholdSchedule::new(vec![0.9, 0.8]).unwrap(),
            batch_size: 32,
            seed,
            ..RunConfig::default()
        }
    }

    #[test]
    fn config_validation_catches_mismatches() {
        let mut cfg = quick_config(1);
        cfg.refinement_rounds = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = quick_config(1);
        cfg.kappa = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn evaluate_scores_predictions() {
        let (source, _) = small_task(3);
        let mut net = NetworkParams::init(10, &[8, 4], 0).unwrap();
        net.forward_train(source.features().slice(ndarray::s![..16, ..]))
            .unwrap();
        let acc = evaluate(&net, &source).unwrap();
        assert!((0.0..=1.0).contains(&acc));
        let unlabeled = DomainDataset::new(source.features().to_owned(), None, "x").unwrap();
        assert!(matches!(
            evaluate(&net, &unlabeled),
            Err(Error::MissingLabels)
        ));
    }

    #[test]
    fn evaluate_perfect_predictions_score_one() {
        // Single affine layer wired as the identity: one-hot rows map to
        // logits whose argmax is the label.
        let mut net = NetworkParams::init(4, &[4], 0).unwrap();
        net.layers[0].weights = ndarray::Array2::eye(4);
        net.layers[0].bias.fill(0.0);
        let mut features = ndarray::Array2::zeros((12, 4));
        let labels: Vec<usize> = (0..12).map(|i| i % 4).collect();
        for (i, &label) in labels.iter().enumerate() {
            features[[i, label]] = 10.0;
        }
        let ds = DomainDataset::new(features, Some(labels), "perfect").unwrap();
        assert_eq!(evaluate(&net, &ds).unwrap(), 1.0);
    }

    #[test]
    fn training_runs_and_emits_records() {
        let (source, target) = small_task(5);
        let cfg = quick_config(5);
        let evaluator = Evaluator::new(&target).unwrap();
        let out = train(&cfg, &source, target.unlabeled_view(), Some(&evaluator)).unwrap();
        // 1 warmup epoch of 3 steps (96/32) + 2 rounds x 3 iterations.
        assert_eq!(out.records.len(), 9);
        assert!(out.records.iter().all(|r| r.loss.total.is_finite()));
        assert!(out
            .records
            .iter()
            .all(|r| (r.loss.total
                - (r.loss.l_s
                    + r.loss.l_t
                    + cfg.alpha * r.loss.l_k
                    + cfg.beta * r.loss.l_k_cat))
                .abs()
                <= 1e-9));
        assert!(out.final_eval.divergence_proxy >= 0.0);
        let stream = render_stream(&cfg, &out);
        assert!(stream.starts_with("record:run version:dsgk-v"));
        assert_eq!(
            stream.lines().count(),
            1 + out.records.len() + 2,
            "header + iters + two eval records"
        );
    }

    #[test]
    fn identical_seeds_reproduce_streams_and_checkpoints() {
        let (source, target) = small_task(9);
        let cfg = quick_config(9);
        let a = train(&cfg, &source, target.unlabeled_view(), None).unwrap();
        let b = train(&cfg, &source, target.unlabeled_view(), None).unwrap();
        assert_eq!(render_stream(&cfg, &a), render_stream(&cfg, &b));
        assert_eq!(a.params.checkpoint_hash(), b.params.checkpoint_hash());
        let mut other = cfg.clone();
        other.seed = 10;
        let c = train(&other, &source, target.unlabeled_view(), None).unwrap();
        assert_ne!(a.params.checkpoint_hash(), c.params.checkpoint_hash());
    }

    #[test]
    fn evaluator_presence_does_not_change_training() {
        let (source, target) = small_task(11);
        let cfg = quick_config(11);
        let evaluator = Evaluator::new(&target).unwrap();
        let with = train(&cfg, &source, target.unlabeled_view(), Some(&evaluator)).unwrap();
        let without = train(&cfg, &source, target.unlabeled_view(), None).unwrap();
        assert_eq!(
            with.params.checkpoint_hash(),
            without.params.checkpoint_hash()
        );
        assert!(without.records.iter().all(|r| r.target_accuracy.is_nan()));
        assert!(with.records.iter().all(|r| !r.target_accuracy.is_nan()));
    }

    #[test]
    fn source_only_configuration_trains() {
        let (source, target) = small_task(13);
        let mut cfg = quick_config(13);
        cfg.use_k = false;
        cfg.use_t = false;
        cfg.use_c = false;
        let out = train(&cfg, &source, target.unlabeled_view(), None).unwrap();
        for r in &out.records {
            assert_eq!(r.loss.l_k, 0.0);
            assert_eq!(r.loss.l_t, 0.0);
            assert_eq!(r.loss.l_k_cat, 0.0);
            assert_eq!(r.loss.total, r.loss.l_s);
        }
    }

    #[test]
    fn zero_rounds_reduces_to_warmup_only() {
        let (source, target) = small_task(15);
        let mut cfg = quick_config(15);
        cfg.refinement_rounds = 0;
        cfg.schedule = crate::pseudo::ThresholdSchedule::empty();
        let out = train(&cfg, &source, target.unlabeled_view(), None).unwrap();
        assert!(out.records.iter().all(|r| r.phase == Phase::Warmup));
        assert_eq!(out.final_eval.pseudo_count, 0);
    }
}
