//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line. Run with `cargo test -p dsgk --test acceptance -- --nocapture`.
//!
//! The benchmark experiments (criteria 5-7) share one set of training
//! runs over seeds 1..=5 on the frozen synthetic task.

use std::sync::OnceLock;
use std::time::Instant;

use ndarray::{arr2, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dsgk::data::{generate_task, SyntheticTaskSpec};
use dsgk::gradcheck::standard_network_checks;
use dsgk::harness::{evaluate, render_stream, train, Evaluator, RunConfig};
use dsgk::losses::{
    categorical_sphere_kernel_geodesic_loss, coral_loss, cross_entropy_loss, linear_mmd_loss,
    sphere_kernel_geodesic_loss, total_loss, EmbeddingMode, LossConfig,
};
use dsgk::moments::{gaussian_kernel, FeatureBatch};
use dsgk::network::NetworkParams;
use dsgk::pseudo::{default_schedule, select_pseudo_labels, ThresholdSchedule};
use dsgk::sphere::geometry_suite;

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct DeskRun {
    accuracy: f64,
    warmup_proxy: f64,
    final_proxy: f64,
}

struct DeskExperiment {
    source_only: Vec<DeskRun>,
    full: Vec<DeskRun>,
    drop_k: Vec<f64>,
    drop_t: Vec<f64>,
    drop_c: Vec<f64>,
}

fn run_desk_variant(seed: u64, use_k: bool, use_t: bool, use_c: bool) -> DeskRun {
    let spec = SyntheticTaskSpec::desk(seed);
    let (source, target) = generate_task(&spec).expect("benchmark task generates");
    let evaluator = Evaluator::new(&target).expect("target carries labels");
    let cfg = RunConfig {
        use_k,
        use_t,
        use_c,
        ..RunConfig::desk(seed)
    };
    let out = train(&cfg, &source, target.unlabeled_view(), Some(&evaluator))
        .expect("training completes");
    DeskRun {
        accuracy: evaluate(&out.params, &target).expect("target scores"),
        warmup_proxy: out.warmup_eval.divergence_proxy,
        final_proxy: out.final_eval.divergence_proxy,
    }
}

static DESK: OnceLock<DeskExperiment> = OnceLock::new();

fn desk() -> &'static DeskExperiment {
    DESK.get_or_init(|| DeskExperiment {
        source_only: SEEDS
            .iter()
            .map(|&s| run_desk_variant(s, false, false, false))
            .collect(),
        full: SEEDS
            .iter()
            .map(|&s| run_desk_variant(s, true, true, true))
            .collect(),
        drop_k: SEEDS
            .iter()
            .map(|&s| run_desk_variant(s, false, true, true).accuracy)
            .collect(),
        drop_t: SEEDS
            .iter()
            .map(|&s| run_desk_variant(s, true, false, true).accuracy)
            .collect(),
        drop_c: SEEDS
            .iter()
            .map(|&s| run_desk_variant(s, true, true, false).accuracy)
            .collect(),
    })
}

#[test]
fn criterion_1_geometry_suite() {
    let started = Instant::now();
    let report = geometry_suite(10_000, 20260810).expect("suite runs");
    let elapsed = started.elapsed();
    let ok = report.max_roundtrip <= 1e-9
        && report.max_tangency <= 1e-10
        && report.max_norm_gap <= 1e-10
        && report.max_unit_norm_err <= 1e-9
        && elapsed.as_secs_f64() < 5.0;
    println!(
        "acceptance 1 geometry-suite: {} (roundtrip {:.2e}, tangency {:.2e}, norm-gap {:.2e}, \
         unit-norm {:.2e}, {} pairs/dim over {:?}, {:.2?})",
        verdict(ok),
        report.max_roundtrip,
        report.max_tangency,
        report.max_norm_gap,
        report.max_unit_norm_err,
        report.pairs_per_dim,
        report.dims,
        elapsed
    );
    assert!(ok);
}

#[test]
fn criterion_2_gradient_oracle() {
    let started = Instant::now();
    let results = standard_network_checks(20, 0).expect("checks run");
    let elapsed = started.elapsed();
    let worst = results
        .iter()
        .map(|r| r.max_rel_err)
        .fold(0.0f64, f64::max);
    let ok = worst <= 1e-5 && elapsed.as_secs_f64() < 60.0;
    println!(
        "acceptance 2 gradient-oracle: {} (worst relative error {:.3e} over {} losses x 20 points, {:.2?})",
        verdict(ok),
        worst,
        results.len(),
        elapsed
    );
    for r in &results {
        println!(
            "    {:28} rel {:.3e} abs {:.3e}",
            r.name, r.max_rel_err, r.max_abs_err
        );
    }
    assert!(ok);
}

#[test]
fn criterion_3_kernel_and_loss_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut ok = true;

    // Kernel bounds; equality exactly when the covariances coincide.
    let a = arr2(&[[2.0, 0.25], [0.25, 1.0]]);
    ok &= gaussian_kernel(a.view(), a.view(), 0.1).unwrap() == 1.0;
    for _ in 0..200 {
        let x = Array2::from_shape_fn((3, 3), |_| rng.random::<f64>());
        let y = Array2::from_shape_fn((3, 3), |_| rng.random::<f64>());
        let k = gaussian_kernel(x.view(), y.view(), 0.1).unwrap();
        ok &= k > 0.0 && k <= 1.0;
        if x != y {
            ok &= k < 1.0;
        }
    }

    // Feature-mode kernel invariance of the loss value.
    let random_batch = |rng: &mut ChaCha8Rng, n: usize, d: usize| {
        FeatureBatch::new(Array2::from_shape_fn((n, d), |_| rng.random::<f64>() + 0.05))
    };
    for _ in 0..50 {
        let b_s = random_batch(&mut rng, 8, 4);
        let b_t = random_batch(&mut rng, 8, 4);
        let values: Vec<f64> = [0.01, 0.1, 1.0]
            .iter()
            .map(|&k| {
                sphere_kernel_geodesic_loss(&b_s, &b_t, k, EmbeddingMode::Feature)
                    .unwrap()
                    .value
            })
            .collect();
        ok &= (values[0] - values[1]).abs() <= 1e-12 && (values[1] - values[2]).abs() <= 1e-12;
    }

    // Exactly zero on identical batches, for all four discrepancies.
    let b = FeatureBatch::labeled(
        Array2::from_shape_fn((8, 4), |_| rng.random::<f64>() + 0.05),
        vec![0, 0, 1, 1, 2, 2, 3, 3],
    )
    .unwrap();
    for mode in [EmbeddingMode::Feature, EmbeddingMode::Moment] {
        ok &= sphere_kernel_geodesic_loss(&b, &b, 0.1, mode).unwrap().value == 0.0;
        ok &= categorical_sphere_kernel_geodesic_loss(
            &b,
            &b,
            0.1,
            mode,
            2,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap()
        .value
            == 0.0;
    }
    ok &= coral_loss(&b, &b).unwrap().value == 0.0;
    ok &= linear_mmd_loss(&b, &b).unwrap().value == 0.0;

    // Composition identity of the breakdown over 1000 random inputs.
    let mut net = NetworkParams::init(5, &[8, 4], 3).unwrap();
    let cfg = LossConfig::default();
    let mut worst_gap = 0.0f64;
    for i in 0..1000 {
        let source = FeatureBatch::labeled(
            Array2::from_shape_fn((8, 5), |_| rng.random::<f64>() * 2.0 - 1.0),
            vec![0, 0, 1, 1, 2, 2, 3, 3],
        )
        .unwrap();
        let target = Array2::from_shape_fn((8, 5), |_| rng.random::<f64>() * 2.0 - 1.0);
        let pseudo = FeatureBatch::labeled(
            Array2::from_shape_fn((6, 5), |_| rng.random::<f64>() * 2.0 - 1.0),
            vec![0, 0, 1, 1, 3, 3],
        )
        .unwrap();
        let (breakdown, _) = total_loss(
            &mut net,
            &source,
            target.view(),
            Some(&pseudo),
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(i),
        )
        .unwrap();
        let recomposed = breakdown.l_s
            + breakdown.l_t
            + cfg.alpha * breakdown.l_k
            + cfg.beta * breakdown.l_k_cat;
        worst_gap = worst_gap.max((breakdown.total - recomposed).abs());
        worst_gap = worst_gap
            .max((breakdown.divergence_proxy - (breakdown.l_k + breakdown.l_k_cat)).abs());
    }
    ok &= worst_gap <= 1e-9;

    println!(
        "acceptance 3 kernel-and-loss-algebra: {} (worst composition gap {:.2e})",
        verdict(ok),
        worst_gap
    );
    assert!(ok);
}

#[test]
fn criterion_4_pseudo_label_contracts() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut ok = true;

    for _ in 0..1000 {
        let mut probs = Array2::from_shape_fn((12, 4), |_| rng.random::<f64>());
        for mut row in probs.rows_mut() {
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        let hi = rng.random_range(0.5..0.95);
        let lo = hi - rng.random_range(0.05..0.4);
        let set_hi = select_pseudo_labels(probs.view(), hi);
        let set_lo = select_pseudo_labels(probs.view(), lo);
        for (idx, label) in set_hi.indices.iter().zip(set_hi.labels.iter()) {
            let pos = set_lo.indices.iter().position(|i| i == idx);
            match pos {
                Some(p) => ok &= set_lo.labels[p] == *label,
                None => ok = false,
            }
        }
    }

    ok &= default_schedule(5).unwrap().values() == [0.9, 0.8, 0.7, 0.6, 0.5];
    ok &= default_schedule(1).unwrap().values() == [0.1];

    println!("acceptance 4 pseudo-label-contracts: {}", verdict(ok));
    assert!(ok);
}

#[test]
fn criterion_5_desk_adaptation_gain() {
    let started = Instant::now();
    let desk = desk();
    let base: Vec<f64> = desk.source_only.iter().map(|r| r.accuracy).collect();
    let full: Vec<f64> = desk.full.iter().map(|r| r.accuracy).collect();
    let gain = mean(&full) - mean(&base);
    let ok = gain >= 0.05;
    println!(
        "acceptance 5 desk-adaptation-gain: {} (source-only {:.4}, full {:.4}, gain {:+.2} points, {:.2?})",
        verdict(ok),
        mean(&base),
        mean(&full),
        gain * 100.0,
        started.elapsed()
    );
    assert!(ok);
}

#[test]
fn criterion_6_divergence_reduction() {
    let desk = desk();
    let warmup: Vec<f64> = desk.full.iter().map(|r| r.warmup_proxy).collect();
    let fin: Vec<f64> = desk.full.iter().map(|r| r.final_proxy).collect();
    let ratio = mean(&fin) / mean(&warmup);
    let ok = ratio <= 0.7;
    let per_seed: Vec<f64> = desk
        .full
        .iter()
        .map(|r| r.final_proxy / r.warmup_proxy)
        .collect();
    println!(
        "acceptance 6 divergence-reduction: {} (mean proxy {:.4} -> {:.4}, ratio {:.3}; per-seed {:?})",
        verdict(ok),
        mean(&warmup),
        mean(&fin),
        ratio,
        per_seed
            .iter()
            .map(|r| (r * 1000.0).round() / 1000.0)
            .collect::<Vec<_>>()
    );
    assert!(ok);
}

#[test]
fn criterion_7_ablation_ordering() {
    let desk = desk();
    let full = mean(&desk.full.iter().map(|r| r.accuracy).collect::<Vec<_>>());
    let mut ok = true;
    for (name, accs) in [
        ("drop-marginal", &desk.drop_k),
        ("drop-pseudo-classification", &desk.drop_t),
        ("drop-categorical", &desk.drop_c),
    ] {
        let variant = mean(accs);
        let holds = full >= variant - 0.01;
        ok &= holds;
        println!(
            "    full {:.4} vs {} {:.4}: {}",
            full,
            name,
            variant,
            verdict(holds)
        );
    }
    println!("acceptance 7 ablation-ordering: {}", verdict(ok));
    assert!(ok);
}

#[test]
fn criterion_8_determinism() {
    let spec = SyntheticTaskSpec {
        samples_per_class: 48,
        ..SyntheticTaskSpec::desk(9)
    };
    let (source, target) = generate_task(&spec).unwrap();
    let cfg = RunConfig {
        hidden_sizes: vec![32, 16],
        warmup_epochs: 2,
        refinement_rounds: 3,
        schedule: ThresholdSchedule::new(vec![0.9, 0.8, 0.7]).unwrap(),
        batch_size: 48,
        ..RunConfig::desk(9)
    };
    let evaluator = Evaluator::new(&target).unwrap();
    let a = train(&cfg, &source, target.unlabeled_view(), Some(&evaluator)).unwrap();
    let b = train(&cfg, &source, target.unlabeled_view(), Some(&evaluator)).unwrap();
    let stream_a = render_stream(&cfg, &a);
    let stream_b = render_stream(&cfg, &b);
    let ok = stream_a == stream_b && a.params.checkpoint_hash() == b.params.checkpoint_hash();
    println!(
        "acceptance 8 determinism: {} (stream {} bytes, checkpoint {})",
        verdict(ok),
        stream_a.len(),
        &a.params.checkpoint_hash()[..16]
    );
    assert!(ok);
}

#[test]
fn criterion_9_cross_entropy_anchors() {
    let uniform = Array2::from_elem((6, 4), 0.25);
    let (v_uniform, _) = cross_entropy_loss(uniform.view(), &[0, 1, 2, 3, 0, 1]).unwrap();
    let uniform_ok = (v_uniform - 4.0f64.ln()).abs() <= 1e-12;

    let probs = arr2(&[[0.9, 0.1], [0.2, 0.8]]);
    let (v_worked, _) = cross_entropy_loss(probs.view(), &[0, 1]).unwrap();
    let worked_ok = (v_worked - 0.164252).abs() <= 1e-6;

    let ok = uniform_ok && worked_ok;
    println!(
        "acceptance 9 cross-entropy-anchors: {} (uniform {:.12}, worked example {:.6})",
        verdict(ok),
        v_uniform,
        v_worked
    );
    assert!(ok);
}
