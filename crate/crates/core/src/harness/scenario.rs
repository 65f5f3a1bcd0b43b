//! Synthetic data preparation and trial evaluation.

use rayon::prelude::*;

use super::config::{RunConfig, ScenarioKind};
use super::scenes::gen_synth_scenes;
use crate::error::Result;
use crate::maskmodel::{build_mask_sets, synthesize_real_mask, MaskRole, MaskSet};
use crate::metrics::{psnr, ssim, TrialEntry, TrialReport};
use crate::optics::{encode, HsiCube, Mask};
use crate::rng::{stream_seed, Stream};
use crate::trainer::{Model, StrategyRegistry, TrainData, TrainState};

/// Scenes and masks for one run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub data: TrainData,
    pub test_scenes: Vec<HsiCube>,
    pub test_masks: MaskSet,
    /// Hardware mask the training and test masks are cropped from.
    pub base_mask: Mask,
}

/// Generates scenes, the base mask and the train/test mask sets from `cfg.train.seed`.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let d = &cfg.data;
    let s = &cfg.scenario;
    let seed = cfg.train.seed;
    let total = d.train_scenes + d.val_scenes + d.test_scenes;
    let mut scenes = gen_synth_scenes(total, d.height, d.width, d.channels, seed)?;
    let test_scenes = scenes.split_off(d.train_scenes + d.val_scenes);
    let val = scenes.split_off(d.train_scenes);

    let base_mask = synthesize_real_mask(d.base_height, d.base_width, d.mask_density, &cfg.train.prior, seed)?;
    let k_test = match s.kind {
        ScenarioKind::OneToOne => 1,
        _ => s.effective_test_masks(),
    };
    let (train_masks, test_masks) =
        build_mask_sets(&base_mask, d.height, d.width, s.effective_train_masks(), k_test, seed)?;
    let test_masks = match s.kind {
        ScenarioKind::OneToOne => MaskSet::new(train_masks.masks().to_vec(), MaskRole::Test)?,
        _ => test_masks,
    };
    Ok(Prepared {
        data: TrainData {
            train: scenes,
            val,
            masks: train_masks,
        },
        test_scenes,
        test_masks,
        base_mask,
    })
}

/// Trains the configured strategy from scratch.
pub fn train(cfg: &RunConfig, prepared: &Prepared, registry: &StrategyRegistry) -> Result<TrainState> {
    registry.get(&cfg.strategy)?.train(&prepared.data, &cfg.train)
}

/// Scores every test scene in every trial; trial `t` measures with test mask `t mod K`.
pub fn evaluate(cfg: &RunConfig, model: &Model, scenes: &[HsiCube], masks: &MaskSet) -> Result<TrialReport> {
    let seed = cfg.train.seed;
    let per_trial: Vec<Vec<TrialEntry>> = (0..cfg.scenario.trials)
        .into_par_iter()
        .map(|trial| {
            let mask = masks.get(trial % masks.len());
            scenes
                .iter()
                .enumerate()
                .map(|(scene, x)| {
                    let noise_seed = stream_seed(seed, Stream::Trial, &[trial as u64, scene as u64]);
                    let y = encode(x, mask, cfg.train.step, &cfg.train.noise, noise_seed)?;
                    let x_hat = model.reconstruct(&y, mask)?;
                    Ok(TrialEntry {
                        scene,
                        trial,
                        psnr_db: psnr(&x_hat, x)?,
                        ssim: ssim(&x_hat, x)?,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(TrialReport {
        scenario: cfg.scenario.kind.as_str().to_string(),
        entries: per_trial.into_iter().flatten().collect(),
    })
}

/// Prepares data, trains and evaluates on the held-out scenes and masks.
pub fn run_scenario(cfg: &RunConfig, registry: &StrategyRegistry) -> Result<(TrainState, TrialReport)> {
    let prepared = prepare(cfg)?;
    let state = train(cfg, &prepared, registry)?;
    let report = evaluate(cfg, &state.model, &prepared.test_scenes, &prepared.test_masks)?;
    Ok((state, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        let mut c = RunConfig::default();
        c.apply(
            "train_scenes = 3\nval_scenes = 2\ntest_scenes = 2\nheight = 12\nwidth = 12\nchannels = 4\n\
             base_height = 20\nbase_width = 20\ntrials = 3\ntrain_masks = 2\n\
             backbone_width = 4\nbackbone_blocks = 1\ngst_channels = 2\ngst_proj_channels = 2\n\
             epochs_init = 1\nepochs_trn = 1\nepochs_val = 1\nrounds = 1\nbatch_size = 2",
        )
        .unwrap();
        c
    }

    #[test]
    fn one_to_one_tests_on_the_training_mask() {
        let mut c = tiny();
        c.scenario.kind = ScenarioKind::OneToOne;
        let p = prepare(&c).unwrap();
        assert_eq!(p.data.masks.len(), 1);
        assert_eq!(p.test_masks.masks(), p.data.masks.masks());
    }

    #[test]
    fn split_sizes_and_trial_mapping() {
        let mut c = tiny();
        c.scenario.test_masks = Some(2);
        let p = prepare(&c).unwrap();
        assert_eq!((p.data.train.len(), p.data.val.len(), p.test_scenes.len()), (3, 2, 2));
        assert_eq!(p.data.masks.len(), 2);
        assert_eq!(p.test_masks.len(), 2);
        let (state, report) = run_scenario(&c, &StrategyRegistry::standard()).unwrap();
        assert_eq!(report.entries.len(), 6);
        // trials 0 and 2 share a mask and, without noise, give identical scores
        let at = |t: usize, s: usize| report.entries.iter().find(|e| e.trial == t && e.scene == s).unwrap().psnr_db;
        assert_eq!(at(0, 1), at(2, 1));
        let again = evaluate(&c, &state.model, &p.test_scenes, &p.test_masks).unwrap();
        assert_eq!(again, report);
    }
}
