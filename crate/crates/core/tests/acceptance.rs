//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use cassi::gradcheck::gradient_suite;
use cassi::harness::checkpoint::{state_from_checkpoint, state_to_checkpoint};
use cassi::harness::formats::{load_checkpoint, save_checkpoint, write_file};
use cassi::harness::report::{emit_report, MapImage};
use cassi::harness::scenario::{evaluate, prepare, run_scenario};
use cassi::harness::{gen_synth_scenes, RunConfig};
use cassi::maskmodel::{entropy_term, perturb_with, sample_epsilon, MaskRole, MaskSet, NoisePrior, VarianceMap};
use cassi::metrics::{epistemic_map, median, psnr, psnr_from_mse, spectral_correlation, ssim};
use cassi::optics::{encode, HsiCube, Mask, NoiseModel};
use cassi::trainer::{Model, Phase, StrategyRegistry};
use common::{naive_encode, random_cube, random_mask, rng, tiny_config};
use ndgrad::Tensor;
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn forward_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (h, w, ch, step) = (
            r.random_range(1..=8),
            r.random_range(1..=8),
            r.random_range(1..=5),
            r.random_range(0..=2),
        );
        let x = random_cube(&mut r, ch, h, w);
        let m = random_mask(&mut r, h, w);
        let y = encode(&x, &m, step, &NoiseModel::NONE, 0).map_err(|e| e.to_string())?;
        for (a, b) in y.data().iter().zip(naive_encode(&x, &m, step)) {
            worst = worst.max((a - b).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst <= 1e-9 && secs < 5.0, format!("100 instances, max abs diff {worst:.2e}, {secs:.3} s"))
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut worst_op = 0.0f64;
    let mut worst_e2e = 0.0f64;
    let mut failures = Vec::new();
    let mut count = 0;
    for seed in 0..3 {
        for c in gradient_suite(seed).map_err(|e| e.to_string())? {
            count += 1;
            if c.name.starts_with("end to end") {
                worst_e2e = worst_e2e.max(c.max_rel_error);
            } else {
                worst_op = worst_op.max(c.max_rel_error);
            }
            if !c.passed() {
                failures.push(format!("{} (seed {seed}): {:.2e}", c.name, c.max_rel_error));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        failures.is_empty() && worst_op < 1e-6 && worst_e2e < 1e-4 && secs < 60.0,
        format!(
            "{count} checks over 3 seeds, worst op {worst_op:.2e}, worst end-to-end {worst_e2e:.2e}, {secs:.2} s{}",
            if failures.is_empty() { String::new() } else { format!(", failed: {}", failures.join("; ")) }
        ),
    )
}

fn entropy_closed_form() -> Outcome {
    let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
    let h = |g: f64| VarianceMap::constant(4, 4, g).map(|m| entropy_term(&m)).map_err(|e| e.to_string());
    let narrow = (h(0.005)? - (0.005 * two_pi_e.sqrt()).ln()).abs();
    let zero = h(1.0 / two_pi_e.sqrt())?.abs();
    ensure(narrow < 1e-12 && zero < 1e-12, format!("g=0.005 error {narrow:.1e}, zero-point error {zero:.1e}"))
}

fn reparameterization_statistics() -> Outcome {
    let n = 100_000;
    let (m, g) = (0.5, 0.2);
    let eps = sample_epsilon(1, n, &NoisePrior::STANDARD, 7);
    let pre: Vec<f64> = eps.data().iter().map(|e| m + g * e).collect();
    let mean = pre.iter().sum::<f64>() / n as f64;
    let std = (pre.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let mask = Mask::filled(1, n, m).map_err(|e| e.to_string())?;
    let post = perturb_with(&mask, &Tensor::full(vec![1, n], g), &eps).map_err(|e| e.to_string())?;
    let in_range = post.data().iter().all(|v| (0.0..=1.0).contains(v));
    let mean_tol = 4.0 * g / (n as f64).sqrt();
    ensure(
        (mean - m).abs() <= mean_tol && (std - g).abs() <= 0.02 * g && in_range,
        format!(
            "mean {mean:.5} (|d| {:.1e} <= {mean_tol:.1e}), std {std:.5} (rel {:.2}%), post-clamp in [0,1]: {in_range}",
            (mean - m).abs(),
            100.0 * (std - g).abs() / g
        ),
    )
}

/// Per-seed numbers of the toy many-to-many study.
struct ToyRun {
    loss_ratio: f64,
    psnr_init: f64,
    psnr_gst: f64,
    psnr_baseline: f64,
    entropy_first: f64,
    entropy_last: f64,
}

fn toy_runs() -> Result<(Vec<ToyRun>, f64), String> {
    let start = Instant::now();
    let registry = StrategyRegistry::standard();
    let mut runs = Vec::new();
    for seed in 0..3 {
        let mut cfg = RunConfig::default();
        cfg.train.seed = seed;
        let p = prepare(&cfg).map_err(|e| e.to_string())?;
        let score = |model: &Model| -> Result<f64, String> {
            evaluate(&cfg, model, &p.test_scenes, &p.test_masks)
                .map(|r| r.overall().psnr_mean)
                .map_err(|e| e.to_string())
        };
        let gst = registry.get("gst-bilevel").map_err(|e| e.to_string())?;
        let init = gst.init_state(&p.data, &cfg.train).map_err(|e| e.to_string())?;
        let trained = gst.train(&p.data, &cfg.train).map_err(|e| e.to_string())?;
        let baseline = registry
            .get("mask-ensemble")
            .and_then(|s| s.train(&p.data, &cfg.train))
            .map_err(|e| e.to_string())?;
        let log = &trained.log;
        let last = cfg.train.rounds;
        let missing = || "missing round in loss log".to_string();
        runs.push(ToyRun {
            loss_ratio: log.round_mean(last, Phase::Validate).ok_or_else(missing)?
                / log.round_mean(1, Phase::Validate).ok_or_else(missing)?,
            psnr_init: score(&init.model)?,
            psnr_gst: score(&trained.model)?,
            psnr_baseline: score(&baseline.model)?,
            entropy_first: log.round_entropy(1).ok_or_else(missing)?,
            entropy_last: log.round_entropy(last).ok_or_else(missing)?,
        });
    }
    Ok((runs, start.elapsed().as_secs_f64()))
}

fn med(runs: &[ToyRun], f: impl Fn(&ToyRun) -> f64) -> f64 {
    median(&mut runs.iter().map(f).collect::<Vec<_>>())
}

fn toy_training(runs: &[ToyRun], secs: f64) -> Outcome {
    let ratio = med(runs, |r| r.loss_ratio);
    let gain = med(runs, |r| r.psnr_gst - r.psnr_init);
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| format!("{:.2}/{:+.2} dB", r.loss_ratio, r.psnr_gst - r.psnr_init))
        .collect();
    ensure(
        ratio <= 0.5 && gain >= 5.0 && secs < 600.0,
        format!(
            "median loss ratio {ratio:.3}, median gain over init {gain:.2} dB (per seed {}), {secs:.0} s for all toy runs",
            per_seed.join(", ")
        ),
    )
}

fn ablation_direction(runs: &[ToyRun]) -> Outcome {
    let gst = med(runs, |r| r.psnr_gst);
    let base = med(runs, |r| r.psnr_baseline);
    ensure(
        gst >= base - 0.1,
        format!("median PSNR gst-bilevel {gst:.3} dB vs mask-ensemble {base:.3} dB, gap {:+.3} dB", gst - base),
    )
}

fn variance_shrinkage(runs: &[ToyRun]) -> Outcome {
    let drop = med(runs, |r| r.entropy_last - r.entropy_first);
    let per_seed: Vec<String> =
        runs.iter().map(|r| format!("{:.4} -> {:.4}", r.entropy_first, r.entropy_last)).collect();
    ensure(drop < 0.0, format!("median change {drop:+.4} (per seed {})", per_seed.join(", ")))
}

fn epistemic_sanity() -> Outcome {
    let cfg = RunConfig::default();
    let model = Model::init(4, &cfg.train, false).map_err(|e| e.to_string())?;
    let x = gen_synth_scenes(1, 16, 16, 4, 3).map_err(|e| e.to_string())?.remove(0);
    let masks: Vec<Mask> = (0..5).map(|i| random_mask(&mut rng(100 + i), 16, 16)).collect();
    let map = |ms: Vec<Mask>| -> Result<Tensor, String> {
        let set = MaskSet::new(ms, MaskRole::Test).map_err(|e| e.to_string())?;
        epistemic_map(&model.theta, &x, &set, 2, &NoiseModel::NONE, 9)
            .map(|e| e.variance)
            .map_err(|e| e.to_string())
    };
    let single = map(vec![masks[0].clone()])?;
    let repeated = map(vec![masks[1].clone(); 4])?;
    let zeros = single.data().iter().chain(repeated.data()).all(|v| *v == 0.0);
    let forward = map(masks.clone())?;
    let mut shuffled = masks.clone();
    shuffled.reverse();
    shuffled.swap(0, 2);
    let permuted = map(shuffled)?;
    let same = forward.data().iter().zip(permuted.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    let spread = forward.data().iter().any(|v| *v > 0.0);
    ensure(
        zeros && same && spread,
        format!("K=1 and repeated masks all zero: {zeros}; permutation bit-identical: {same}; distinct masks nonzero: {spread}"),
    )
}

fn naive_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut num = 0.0;
    let (mut da, mut db) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        da += (x - ma) * (x - ma);
        db += (y - mb) * (y - mb);
    }
    num / (da * db).sqrt()
}

fn metric_oracles() -> Outcome {
    let psnr_err = (psnr_from_mse(0.01) - 20.0).abs();
    let zero = HsiCube::zeros(2, 3, 3);
    let tenth = HsiCube::new(2, 3, 3, vec![0.1; 18]).map_err(|e| e.to_string())?;
    let cube_err = (psnr(&tenth, &zero).map_err(|e| e.to_string())? - 20.0).abs();
    let mut r = rng(5);
    let mut ssim_err = 0.0f64;
    let mut corr_err = 0.0f64;
    for _ in 0..10 {
        let x = random_cube(&mut r, 5, 16, 16);
        ssim_err = ssim_err.max((ssim(&x, &x).map_err(|e| e.to_string())? - 1.0).abs());
        let s = spectral_correlation(&x);
        for i in 0..5 {
            for j in 0..5 {
                corr_err = corr_err.max((s.get(i, j) - naive_pearson(x.channel(i), x.channel(j))).abs());
            }
        }
    }
    ensure(
        psnr_err < 1e-9 && cube_err < 1e-9 && ssim_err < 1e-12 && corr_err < 1e-12,
        format!(
            "PSNR(MSE 0.01) error {psnr_err:.1e} (cube {cube_err:.1e}), SSIM(x,x) error {ssim_err:.1e}, spectral correlation error {corr_err:.1e}"
        ),
    )
}

/// Writes everything a run produces into `dir`.
fn write_tree(dir: &Path, cfg: &RunConfig) -> Result<(), String> {
    let registry = StrategyRegistry::standard();
    let (state, report) = run_scenario(cfg, &registry).map_err(|e| e.to_string())?;
    let p = prepare(cfg).map_err(|e| e.to_string())?;
    let e = epistemic_map(&state.model.theta, &p.test_scenes[0], &p.test_masks, cfg.train.step, &cfg.train.noise, cfg.train.seed)
        .map_err(|e| e.to_string())?;
    let maps = [MapImage::from_tensor("epistemic", &e.variance).map_err(|e| e.to_string())?];
    emit_report(dir, &report, &maps).map_err(|e| e.to_string())?;
    let ckpt = state_to_checkpoint(&state, cfg).and_then(|c| c.encode()).map_err(|e| e.to_string())?;
    write_file(&dir.join("checkpoint.ckp"), &ckpt).map_err(|e| e.to_string())?;
    write_file(&dir.join("loss_log.csv"), state.log.to_csv().as_bytes()).map_err(|e| e.to_string())?;
    write_file(&dir.join("config.txt"), cfg.to_text().as_bytes()).map_err(|e| e.to_string())
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism_and_resume() -> Outcome {
    let cfg = tiny_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_tree(a.path(), &cfg)?;
    write_tree(b.path(), &cfg)?;
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    let identical = ta == tb;

    let registry = StrategyRegistry::standard();
    let p = prepare(&cfg).map_err(|e| e.to_string())?;
    let strategy = registry.get(&cfg.strategy).map_err(|e| e.to_string())?;
    let full = strategy.train(&p.data, &cfg.train).map_err(|e| e.to_string())?;
    let mut short = cfg.clone();
    short.train.rounds = 1;
    let partial = strategy.train(&p.data, &short.train).map_err(|e| e.to_string())?;
    let path = a.path().join("partial.ckp");
    let ckpt = state_to_checkpoint(&partial, &short).map_err(|e| e.to_string())?;
    save_checkpoint(&path, &ckpt).map_err(|e| e.to_string())?;
    let loaded = load_checkpoint(&path).map_err(|e| e.to_string())?;
    let (_, mut state) = state_from_checkpoint(&loaded).map_err(|e| e.to_string())?;
    strategy.run(&mut state, &p.data, &cfg.train).map_err(|e| e.to_string())?;
    let theta_eq = state.model.theta.params().bit_eq(full.model.theta.params());
    let phi_eq = match (&state.model.phi, &full.model.phi) {
        (Some(a), Some(b)) => a.params().bit_eq(b.params()),
        _ => false,
    };
    let log_eq = state.log == full.log;
    ensure(
        identical && theta_eq && phi_eq && log_eq,
        format!(
            "{} files byte-identical: {identical}; resume after 1 of {} rounds: theta {theta_eq}, phi {phi_eq}, loss log {log_eq}",
            ta.len(),
            cfg.train.rounds
        ),
    )
}

fn main() {
    let toy = toy_runs();
    let from_toy = |f: fn(&[ToyRun], f64) -> Outcome| match &toy {
        Ok((runs, secs)) => f(runs, *secs),
        Err(e) => Err(format!("toy training failed: {e}")),
    };
    let results: Vec<(&str, Outcome)> = vec![
        ("forward-model oracle", forward_oracle()),
        ("gradient suite", gradient_checks()),
        ("entropy closed form", entropy_closed_form()),
        ("reparameterization statistics", reparameterization_statistics()),
        ("toy bilevel training", from_toy(toy_training)),
        ("ablation direction", from_toy(|r, _| ablation_direction(r))),
        ("variance shrinkage", from_toy(|r, _| variance_shrinkage(r))),
        ("epistemic-map sanity", epistemic_sanity()),
        ("metric oracles", metric_oracles()),
        ("determinism and persistence", determinism_and_resume()),
    ];
    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(d) => println!("PASS criterion {:>2} {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {:>2} {name}: {d}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
