mod common;

use cassi::harness::checkpoint::{state_from_checkpoint, state_to_checkpoint};
use cassi::harness::formats::{load_checkpoint, save_checkpoint};
use cassi::harness::report::{emit_report, metrics_csv};
use cassi::harness::scenario::{evaluate, prepare, run_scenario};
use cassi::harness::{run_ablation, ScenarioKind};
use cassi::trainer::{Model, StrategyRegistry};
use common::tiny_config;

#[test]
fn resume_from_a_checkpoint_file_is_bit_exact() {
    let registry = StrategyRegistry::standard();
    for name in ["gst-bilevel", "gst-joint", "mask-ensemble"] {
        let mut cfg = tiny_config();
        cfg.strategy = name.into();
        cfg.train.rounds = 3;
        let p = prepare(&cfg).unwrap();
        let strategy = registry.get(name).unwrap();
        let full = strategy.train(&p.data, &cfg.train).unwrap();

        let mut short = cfg.clone();
        short.train.rounds = 1;
        let partial = strategy.train(&p.data, &short.train).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ckp");
        save_checkpoint(&path, &state_to_checkpoint(&partial, &short).unwrap()).unwrap();

        let (mut loaded_cfg, mut state) = state_from_checkpoint(&load_checkpoint(&path).unwrap()).unwrap();
        assert_eq!(loaded_cfg, short);
        loaded_cfg.train.rounds = 3;
        strategy.run(&mut state, &p.data, &loaded_cfg.train).unwrap();
        assert_eq!(state, full, "{name}");
        let a = state_to_checkpoint(&state, &cfg).unwrap().encode().unwrap();
        let b = state_to_checkpoint(&full, &cfg).unwrap().encode().unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn repeated_runs_write_identical_bytes() {
    let cfg = tiny_config();
    let registry = StrategyRegistry::standard();
    let (s1, r1) = run_scenario(&cfg, &registry).unwrap();
    let (s2, r2) = run_scenario(&cfg, &registry).unwrap();
    assert_eq!(metrics_csv(&r1), metrics_csv(&r2));
    assert_eq!(
        state_to_checkpoint(&s1, &cfg).unwrap().encode().unwrap(),
        state_to_checkpoint(&s2, &cfg).unwrap().encode().unwrap()
    );
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let w1 = emit_report(d1.path(), &r1, &[]).unwrap();
    let w2 = emit_report(d2.path(), &r2, &[]).unwrap();
    assert_eq!(w1.len(), 1, "an empty map list writes only the metrics table");
    assert_eq!(std::fs::read(&w1[0]).unwrap(), std::fs::read(&w2[0]).unwrap());
}

#[test]
fn untrained_one_to_one_smoke() {
    let mut cfg = tiny_config();
    cfg.scenario.kind = ScenarioKind::OneToOne;
    cfg.scenario.trials = 1;
    let p = prepare(&cfg).unwrap();
    let model = Model::init(cfg.data.channels, &cfg.train, false).unwrap();
    let r = evaluate(&cfg, &model, &p.test_scenes, &p.test_masks).unwrap();
    assert_eq!(r.entries.len(), cfg.data.test_scenes);
    assert!(r.entries.iter().all(|e| e.psnr_db.is_finite() && e.ssim.is_finite()));
}

#[test]
fn many_to_many_test_masks_are_unseen() {
    for kind in [ScenarioKind::OneToMany, ScenarioKind::ManyToMany] {
        let mut cfg = tiny_config();
        cfg.scenario.kind = kind;
        let p = prepare(&cfg).unwrap();
        assert_eq!(p.data.masks.collisions_with(&p.test_masks), 0);
    }
}

#[test]
fn ablation_structure() {
    let registry = StrategyRegistry::standard();
    let cfg = tiny_config();
    let no_gst = run_ablation("no-gst", &cfg, &registry).unwrap();
    let ckpt = state_to_checkpoint(&no_gst[0].state, &cfg).unwrap();
    assert!(ckpt.names().all(|n| !n.starts_with("phi/") && !n.starts_with("adam/phi/")));

    let sweep = run_ablation("fixed-variance", &cfg, &registry).unwrap();
    assert_eq!(sweep.len(), 4);
    let zero = &sweep[0];
    let losses = |log: &cassi::trainer::LossLog| log.records.iter().map(|r| r.loss).collect::<Vec<_>>();
    assert_eq!(losses(&zero.state.log), losses(&no_gst[0].state.log));
    assert_eq!(zero.report, no_gst[0].report);
}
