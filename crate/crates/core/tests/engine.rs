use dynamic_tta::engine::{adapt_step, run_stream, Method, NullSink, StepTelemetry, NO_DISCREPANCY};
use dynamic_tta::harness::{RunConfig, Scenario};
use dynamic_tta::model::NormPolicy;
use dynamic_tta::stream::{make_schedule, SchedulePattern, ShiftStream};
use dynamic_tta::{Error, Matrix};

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.source_samples = 400;
    cfg.train_epochs = 5;
    cfg.n_segments = 4;
    cfg.segment_length = 25;
    cfg
}

fn telemetry(cfg: &RunConfig, sc: &Scenario) -> Vec<StepTelemetry> {
    let mut model = sc.model.clone();
    run_stream(&mut model, sc.stream.clone(), &cfg.adapt_config(), None, &mut NullSink)
        .unwrap()
        .telemetry
}

#[test]
fn warm_up_then_rate_law() {
    for seed in 0..5 {
        let mut cfg = small_config();
        cfg.method = Method::Dltta;
        cfg.batch_size = 4;
        cfg.retrieval_size = 10;
        let sc = Scenario::build(&cfg, seed).unwrap();
        let tel = telemetry(&cfg, &sc);
        let first_dynamic = tel.iter().position(|t| t.applied_lr != cfg.alpha).unwrap();
        let first_full = tel.iter().position(|t| t.bank_size >= cfg.retrieval_size).unwrap();
        assert_eq!(first_dynamic, first_full);
        assert_eq!(first_full, 3);
        for t in &tel {
            if t.bank_size < cfg.retrieval_size {
                assert_eq!(t.applied_lr, cfg.alpha);
                assert_eq!(t.discrepancy, NO_DISCREPANCY);
            } else {
                assert!(t.discrepancy >= 0.0);
                assert!((t.applied_lr - cfg.alpha * t.discrepancy).abs() <= 1e-12 * cfg.alpha.max(1.0));
            }
        }
    }
}

#[test]
fn baselines_have_their_rates() {
    let cfg = small_config();
    let sc = Scenario::build(&cfg, 1).unwrap();
    for (method, lr) in [(Method::None, 0.0), (Method::Ptbn, 0.0), (Method::Fixed, cfg.alpha)] {
        let mut c = cfg.clone();
        c.method = method;
        assert!(telemetry(&c, &sc).iter().all(|t| t.applied_lr == lr), "{method}");
    }
}

#[test]
fn no_adaptation_matches_offline_frozen_model() {
    let mut cfg = small_config();
    cfg.method = Method::None;
    let sc = Scenario::build(&cfg, 2).unwrap();
    let mut model = sc.model.clone();
    let out = run_stream(&mut model, sc.stream.clone(), &cfg.adapt_config(), None, &mut NullSink).unwrap();
    assert_eq!(model, sc.model);
    for (t, b) in out.telemetry.iter().zip(sc.stream.batches()) {
        let pass = sc.model.forward(&b.features, &NormPolicy::train_running()).unwrap();
        assert_eq!(t.probs, pass.probs);
    }
}

#[test]
fn ptbn_uses_batch_statistics_and_keeps_parameters() {
    let mut cfg = small_config();
    cfg.method = Method::Ptbn;
    let sc = Scenario::build(&cfg, 2).unwrap();
    let mut model = sc.model.clone();
    let out = run_stream(&mut model, sc.stream.clone(), &cfg.adapt_config(), None, &mut NullSink).unwrap();
    assert_eq!(model.params(), sc.model.params());
    for (t, b) in out.telemetry.iter().zip(sc.stream.batches()) {
        let pass = sc.model.forward(&b.features, &NormPolicy::test_batch()).unwrap();
        assert_eq!(t.probs, pass.probs);
    }
}

#[test]
fn predictions_come_from_updated_parameters() {
    let mut cfg = small_config();
    cfg.method = Method::Dltta;
    cfg.alpha = 1.0;
    let sc = Scenario::build(&cfg, 4).unwrap();
    let acfg = cfg.adapt_config();
    let mut model = sc.model.clone();
    model.set_adapt_scope(acfg.adapt_scope);
    let mut bank = acfg.new_bank(&model).unwrap();
    let policy = NormPolicy::test_batch();
    for (i, b) in sc.stream.batches().iter().take(30).enumerate() {
        let before = model.clone();
        let t = adapt_step(&mut model, &mut bank, b, i, &acfg).unwrap();
        let old = before.forward(&b.features, &policy).unwrap().probs;
        let new = model.forward(&b.features, &policy).unwrap().probs;
        assert_eq!(t.probs, new, "step {i}");
        if t.applied_lr > 0.0 {
            assert_ne!(t.probs, old, "step {i}");
        }
        // only adaptable entries move
        for ((a, b), &m) in before.params().iter().zip(model.params()).zip(model.adapt_mask()) {
            if !m {
                assert_eq!(*a, b);
            }
        }
        assert_eq!(bank.len(), ((i + 1) * 16).min(64));
    }
}

#[test]
fn runs_are_deterministic() {
    let mut cfg = small_config();
    cfg.method = Method::Dltta;
    let a = Scenario::build(&cfg, 9).unwrap();
    let b = Scenario::build(&cfg, 9).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(telemetry(&cfg, &a), telemetry(&cfg, &b));
}

#[test]
fn batch_of_one_runs_with_ema_statistics() {
    let mut cfg = small_config();
    cfg.method = Method::Dltta;
    cfg.batch_size = 1;
    cfg.retrieval_size = 4;
    let sc = Scenario::build(&cfg, 0).unwrap();
    let tel = telemetry(&cfg, &sc);
    assert!(tel.iter().all(|t| t.error.is_none() && t.applied_lr.is_finite()));
    assert_eq!(tel[3].applied_lr, cfg.alpha);
    assert_ne!(tel[4].applied_lr, cfg.alpha);
}

#[test]
fn wrong_width_batch_is_an_error() {
    let cfg = small_config();
    let sc = Scenario::build(&cfg, 0).unwrap();
    let acfg = cfg.adapt_config();
    let mut model = sc.model.clone();
    let mut bank = acfg.new_bank(&model).unwrap();
    let mut batch = sc.stream.batches()[0].clone();
    batch.features = Matrix::zeros(16, 3);
    assert!(matches!(
        adapt_step(&mut model, &mut bank, &batch, 0, &acfg),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn extreme_rate_never_leaves_non_finite_state() {
    let mut cfg = small_config();
    cfg.method = Method::Fixed;
    cfg.alpha = f64::MAX;
    let sc = Scenario::build(&cfg, 0).unwrap();
    let mut model = sc.model.clone();
    let out = run_stream(&mut model, sc.stream.clone(), &cfg.adapt_config(), Some(5), &mut NullSink).unwrap();
    assert_eq!(out.metrics.steps, 5);
    assert!(out.telemetry.iter().all(|t| t.tta_loss_before.is_finite()));
    assert!(model.params().iter().all(|v| v.is_finite()));
}

#[test]
fn discrepancy_tracks_severity() {
    let cfg = RunConfig::default();
    for seed in 0..5 {
        let sc = Scenario::build(&cfg, seed).unwrap();
        let tel = telemetry(&cfg, &sc);
        let mean_for = |sev: f64| {
            let v: Vec<f64> = tel
                .iter()
                .zip(sc.stream.batches())
                .filter(|(t, b)| b.severity == sev && t.discrepancy >= 0.0)
                .map(|(t, _)| t.discrepancy)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let (mild, severe) = (mean_for(cfg.mild_severity), mean_for(cfg.severe_severity));
        assert!(severe > mild, "seed {seed}: severe {severe} mild {mild}");
    }
}

fn constant_stream(cfg: &RunConfig, seed: u64, severity: f64) -> ShiftStream {
    let plan = dynamic_tta::harness::SeedPlan::from_seed(seed);
    let schedule = make_schedule(SchedulePattern::Constant, 4, severity, severity, 50, plan.schedule).unwrap();
    ShiftStream::generate(
        &dynamic_tta::harness::scenario::source_spec(cfg, seed).unwrap(),
        &schedule,
        &cfg.shift_family(),
        cfg.batch_size,
        plan.stream,
    )
    .unwrap()
}

fn frozen_accuracy(cfg: &RunConfig, sc: &Scenario, severity: f64) -> f64 {
    let mut c = cfg.adapt_config();
    c.method = Method::None;
    let mut model = sc.model.clone();
    run_stream(&mut model, constant_stream(cfg, sc.seed, severity), &c, None, &mut NullSink)
        .unwrap()
        .metrics
        .streaming_accuracy
}

#[test]
fn frozen_accuracy_falls_with_severity() {
    let cfg = RunConfig::default();
    for seed in 0..5 {
        let sc = Scenario::build(&cfg, seed).unwrap();
        let accs: Vec<f64> = [0.0, 0.5, 1.0].iter().map(|&s| frozen_accuracy(&cfg, &sc, s)).collect();
        assert!(accs[1] <= accs[0] + 0.02 && accs[2] <= accs[1] + 0.02, "seed {seed}: {accs:?}");
        assert!(accs[0] - accs[2] >= 0.10, "seed {seed}: {accs:?}");
    }
}

