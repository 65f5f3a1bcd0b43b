use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cassi::gradcheck::gradient_suite;
use cassi::harness::ablation::run_ablation;
use cassi::harness::checkpoint::{state_from_checkpoint, state_to_checkpoint};
use cassi::harness::config::RunConfig;
use cassi::harness::formats::{load_checkpoint, save_checkpoint, save_cube, save_mask, write_file};
use cassi::harness::report::{
    emit_report, histogram_csv, summary_csv, sweep_csv, write_loss_log, write_summary, MapImage,
};
use cassi::harness::scenario::{evaluate, prepare};
use cassi::maskmodel::mask_histogram;
use cassi::metrics::epistemic_map;
use cassi::trainer::{StrategyRegistry, TrainState};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cassi", version, about = "Simulate, train and evaluate CASSI reconstruction under mask uncertainty")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file of `key = value` lines
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed, overriding the configuration
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single `key=value` override, applied after the configuration file
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic train, validation and test scenes
    GenData,
    /// Write the base mask, the train and test mask sets and the base mask histogram
    GenMasks {
        #[arg(long, default_value_t = 2000)]
        bins: usize,
    },
    /// Train the configured strategy and write a checkpoint and loss log
    Train {
        /// Continue from a checkpoint until the configured round count
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on the held-out scenes and masks
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run an ablation: no-gst, no-bilevel, fixed-variance[:g0] or prior-study[:mean,std]
    Ablate {
        #[arg(long)]
        kind: String,
    },
    /// Write epistemic variance maps over the test masks, and the learned variance map
    Uncertainty {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Finite-difference check of every operation and the full loss
    Gradcheck,
    /// Print every configuration key with its description and value
    Config,
}

fn config(common: &Common, base: RunConfig) -> Result<RunConfig> {
    let mut cfg = base;
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply(&text).with_context(|| format!("in {}", path.display()))?;
    }
    for kv in &common.set {
        cfg.apply(kv).with_context(|| format!("in --set {kv}"))?;
    }
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn from_checkpoint(common: &Common, path: &Path) -> Result<(RunConfig, TrainState)> {
    let ckpt = load_checkpoint(path)?;
    let (saved, state) = state_from_checkpoint(&ckpt).with_context(|| format!("reading {}", path.display()))?;
    Ok((config(common, saved)?, state))
}

fn write_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    Ok(write_file(&dir.join("config.txt"), cfg.to_text().as_bytes())?)
}

fn gen_data(common: &Common) -> Result<()> {
    let cfg = config(common, RunConfig::default())?;
    let p = prepare(&cfg)?;
    let dir = common.out_dir.join("scenes");
    for (split, scenes) in [("train", &p.data.train), ("val", &p.data.val), ("test", &p.test_scenes)] {
        for (i, x) in scenes.iter().enumerate() {
            save_cube(&dir.join(split).join(format!("{i:03}.hsc")), x)?;
        }
    }
    write_config(&common.out_dir, &cfg)?;
    println!(
        "wrote {} train, {} val, {} test scenes to {}",
        p.data.train.len(),
        p.data.val.len(),
        p.test_scenes.len(),
        dir.display()
    );
    Ok(())
}

fn gen_masks(common: &Common, bins: usize) -> Result<()> {
    let cfg = config(common, RunConfig::default())?;
    let p = prepare(&cfg)?;
    let dir = common.out_dir.join("masks");
    save_mask(&dir.join("base.msk"), &p.base_mask)?;
    for (split, set) in [("train", &p.data.masks), ("test", &p.test_masks)] {
        for (i, m) in set.masks().iter().enumerate() {
            save_mask(&dir.join(split).join(format!("{i:03}.msk")), m)?;
        }
    }
    write_file(&dir.join("base_histogram.csv"), histogram_csv(&mask_histogram(&p.base_mask, bins)?).as_bytes())?;
    write_config(&common.out_dir, &cfg)?;
    println!(
        "wrote base mask, {} train and {} test masks to {}",
        p.data.masks.len(),
        p.test_masks.len(),
        dir.display()
    );
    Ok(())
}

fn train(common: &Common, resume: Option<&Path>) -> Result<()> {
    let registry = StrategyRegistry::standard();
    let (cfg, state) = match resume {
        Some(path) => {
            let (cfg, mut state) = from_checkpoint(common, path)?;
            let p = prepare(&cfg)?;
            registry.get(&cfg.strategy)?.run(&mut state, &p.data, &cfg.train)?;
            (cfg, state)
        }
        None => {
            let cfg = config(common, RunConfig::default())?;
            let p = prepare(&cfg)?;
            let state = registry.get(&cfg.strategy)?.train(&p.data, &cfg.train)?;
            (cfg, state)
        }
    };
    let out = &common.out_dir;
    save_checkpoint(&out.join("checkpoint.ckp"), &state_to_checkpoint(&state, &cfg)?)?;
    write_loss_log(&out.join("loss_log.csv"), &state.log)?;
    write_config(out, &cfg)?;
    let last = state.log.records.last();
    println!(
        "{}: {} rounds, {} epochs, final loss {}",
        cfg.strategy,
        state.rounds_done,
        state.epoch,
        last.map_or_else(|| "n/a".to_string(), |r| format!("{:.6e}", r.loss))
    );
    Ok(())
}

fn eval(common: &Common, checkpoint: &Path) -> Result<()> {
    let (cfg, state) = from_checkpoint(common, checkpoint)?;
    let p = prepare(&cfg)?;
    let report = evaluate(&cfg, &state.model, &p.test_scenes, &p.test_masks)?;
    emit_report(&common.out_dir, &report, &[])?;
    write_summary(&common.out_dir, &report)?;
    print!("{}", summary_csv(&report));
    Ok(())
}

fn ablate(common: &Common, kind: &str) -> Result<()> {
    let cfg = config(common, RunConfig::default())?;
    let runs = run_ablation(kind, &cfg, &StrategyRegistry::standard())?;
    for r in &runs {
        let dir = common.out_dir.join(r.label.replace([':', ','], "_"));
        emit_report(&dir, &r.report, &[])?;
        write_summary(&dir, &r.report)?;
        write_loss_log(&dir.join("loss_log.csv"), &r.state.log)?;
    }
    let sweep = sweep_csv(runs.iter().map(|r| (r.label.as_str(), &r.report)));
    write_file(&common.out_dir.join("sweep.csv"), sweep.as_bytes())?;
    write_config(&common.out_dir, &cfg)?;
    print!("{sweep}");
    Ok(())
}

fn uncertainty(common: &Common, checkpoint: &Path) -> Result<()> {
    let (cfg, state) = from_checkpoint(common, checkpoint)?;
    let p = prepare(&cfg)?;
    let mut maps = Vec::new();
    println!("scene,mean_variance");
    for (i, x) in p.test_scenes.iter().enumerate() {
        let e = epistemic_map(&state.model.theta, x, &p.test_masks, cfg.train.step, &cfg.train.noise, cfg.train.seed)?;
        let v = e.variance.data();
        println!("{i},{:e}", v.iter().sum::<f64>() / v.len() as f64);
        maps.push(MapImage::from_tensor(format!("epistemic_scene_{i:03}"), &e.variance)?);
    }
    if let Some(phi) = &state.model.phi {
        let g = phi.variance_map(p.test_masks.get(0))?;
        maps.push(MapImage::from_tensor("learned_variance_test_mask_000", g.as_tensor())?);
    }
    let mut body = String::from("map,row,col,value\n");
    for m in &maps {
        for (k, v) in m.data.iter().enumerate() {
            body.push_str(&format!("{},{},{},{v}\n", m.name, k / m.width, k % m.width));
        }
    }
    write_file(&common.out_dir.join("maps.csv"), body.as_bytes())?;
    for m in &maps {
        write_file(
            &common.out_dir.join(format!("{}.pgm", m.name)),
            &cassi::harness::report::pgm(m)?,
        )?;
    }
    Ok(())
}

fn gradcheck(common: &Common) -> Result<()> {
    let seed = common.seed.unwrap_or(0);
    let results = gradient_suite(seed)?;
    let mut failed = 0;
    for r in &results {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        println!("{verdict:4} {:<60} rel err {:.3e} (tol {:e})", r.name, r.max_rel_error, r.tolerance);
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        bail!("{failed} of {} gradient checks failed", results.len());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    match cli.command {
        Command::GenData => gen_data(c),
        Command::GenMasks { bins } => gen_masks(c, bins),
        Command::Train { resume } => train(c, resume.as_deref()),
        Command::Eval { checkpoint } => eval(c, &checkpoint),
        Command::Ablate { kind } => ablate(c, &kind),
        Command::Uncertainty { checkpoint } => uncertainty(c, &checkpoint),
        Command::Gradcheck => gradcheck(c),
        Command::Config => {
            print!("{}", config(c, RunConfig::default())?.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
