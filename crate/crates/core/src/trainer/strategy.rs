//! Training strategies, selectable by name.

use super::loops::{pretrain, run_epoch, scheduled, EpochPlan, VarianceSource};
use super::{Model, Phase, TrainConfig, TrainData, TrainState};
use crate::error::{Error, Result};
use crate::maskmodel::{MaskRole, MaskSet};

/// A complete training procedure. `run` continues from `state` until
/// `cfg.rounds` rounds are done, so a restored state resumes where it stopped.
pub trait TrainingStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    /// One-line description for listings.
    fn summary(&self) -> &'static str;

    /// Whether the strategy learns a variance network.
    fn uses_variance_net(&self) -> bool;

    fn init_state(&self, data: &TrainData, cfg: &TrainConfig) -> Result<TrainState> {
        cfg.validate()?;
        let model = Model::init(data.channels()?, cfg, self.uses_variance_net())?;
        Ok(TrainState::new(self.name(), model))
    }

    fn run(&self, state: &mut TrainState, data: &TrainData, cfg: &TrainConfig) -> Result<()>;

    fn train(&self, data: &TrainData, cfg: &TrainConfig) -> Result<TrainState> {
        let mut state = self.init_state(data, cfg)?;
        self.run(&mut state, data, cfg)?;
        Ok(state)
    }
}

fn check_state(s: &dyn TrainingStrategy, state: &TrainState, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if state.strategy != s.name() {
        return Err(Error::Config(format!(
            "state was produced by `{}`, not `{}`",
            state.strategy,
            s.name()
        )));
    }
    if state.model.phi.is_some() != s.uses_variance_net() {
        return Err(Error::Config(format!(
            "strategy `{}` and the stored variance network disagree",
            s.name()
        )));
    }
    Ok(())
}

/// Alternating rounds: reconstruction epochs on the training split, then
/// variance epochs on the validation split.
pub struct GstBilevel;

impl TrainingStrategy for GstBilevel {
    fn name(&self) -> &'static str {
        "gst-bilevel"
    }

    fn summary(&self) -> &'static str {
        "variance network trained on the validation split, alternating with the backbone"
    }

    fn uses_variance_net(&self) -> bool {
        true
    }

    fn run(&self, state: &mut TrainState, data: &TrainData, cfg: &TrainConfig) -> Result<()> {
        check_state(self, state, cfg)?;
        let warm = if cfg.pretrain_raw_masks {
            VarianceSource::Off
        } else {
            VarianceSource::Network
        };
        pretrain(state, cfg, &data.train, &data.masks, warm)?;
        if data.val.is_empty() && cfg.rounds > state.rounds_done && cfg.epochs_val > 0 {
            return Err(Error::Config("bilevel training needs a nonempty validation split".into()));
        }
        while state.rounds_done < cfg.rounds {
            let round = state.rounds_done + 1;
            for _ in 0..cfg.epochs_trn {
                let lr = scheduled(cfg.lr_trn, state, cfg);
                run_epoch(
                    state,
                    cfg,
                    EpochPlan {
                        phase: Phase::Train,
                        round,
                        variance: VarianceSource::Network,
                        train_theta: true,
                        train_phi: false,
                        with_entropy: false,
                        lr_theta: lr,
                        lr_phi: 0.0,
                        scenes: &data.train,
                        masks: &data.masks,
                    },
                )?;
            }
            for _ in 0..cfg.epochs_val {
                let lr = scheduled(cfg.lr_val, state, cfg);
                run_epoch(
                    state,
                    cfg,
                    EpochPlan {
                        phase: Phase::Validate,
                        round,
                        variance: VarianceSource::Network,
                        train_theta: false,
                        train_phi: true,
                        with_entropy: true,
                        lr_theta: 0.0,
                        lr_phi: lr,
                        scenes: &data.val,
                        masks: &data.masks,
                    },
                )?;
            }
            state.rounds_done = round;
        }
        Ok(())
    }
}

/// Backbone and variance network updated together on the training split.
pub struct GstJoint;

impl TrainingStrategy for GstJoint {
    fn name(&self) -> &'static str {
        "gst-joint"
    }

    fn summary(&self) -> &'static str {
        "backbone and variance network optimized jointly on the training split"
    }

    fn uses_variance_net(&self) -> bool {
        true
    }

    fn run(&self, state: &mut TrainState, data: &TrainData, cfg: &TrainConfig) -> Result<()> {
        check_state(self, state, cfg)?;
        let warm = if cfg.pretrain_raw_masks {
            VarianceSource::Off
        } else {
            VarianceSource::Network
        };
        pretrain(state, cfg, &data.train, &data.masks, warm)?;
        while state.rounds_done < cfg.rounds {
            let round = state.rounds_done + 1;
            for _ in 0..cfg.epochs_trn + cfg.epochs_val {
                let lr_theta = scheduled(cfg.lr_trn, state, cfg);
                let lr_phi = scheduled(cfg.lr_val, state, cfg);
                run_epoch(
                    state,
                    cfg,
                    EpochPlan {
                        phase: Phase::Joint,
                        round,
                        variance: VarianceSource::Network,
                        train_theta: true,
                        train_phi: true,
                        with_entropy: true,
                        lr_theta,
                        lr_phi,
                        scenes: &data.train,
                        masks: &data.masks,
                    },
                )?;
            }
            state.rounds_done = round;
        }
        Ok(())
    }
}

/// Backbone only, with masks drawn from `masks` and an optional constant perturbation.
fn baseline_run(state: &mut TrainState, cfg: &TrainConfig, data: &TrainData, masks: &MaskSet, variance: VarianceSource) -> Result<()> {
    pretrain(state, cfg, &data.train, masks, variance)?;
    while state.rounds_done < cfg.rounds {
        let round = state.rounds_done + 1;
        for _ in 0..cfg.epochs_trn {
            let lr = scheduled(cfg.lr_trn, state, cfg);
            run_epoch(
                state,
                cfg,
                EpochPlan {
                    phase: Phase::Train,
                    round,
                    variance,
                    train_theta: true,
                    train_phi: false,
                    with_entropy: false,
                    lr_theta: lr,
                    lr_phi: 0.0,
                    scenes: &data.train,
                    masks,
                },
            )?;
        }
        state.rounds_done = round;
    }
    Ok(())
}

/// Backbone trained on the mask set as-is, one mask drawn per batch.
pub struct MaskEnsemble;

impl TrainingStrategy for MaskEnsemble {
    fn name(&self) -> &'static str {
        "mask-ensemble"
    }

    fn summary(&self) -> &'static str {
        "backbone only, one unperturbed training mask drawn per batch"
    }

    fn uses_variance_net(&self) -> bool {
        false
    }

    fn run(&self, state: &mut TrainState, data: &TrainData, cfg: &TrainConfig) -> Result<()> {
        check_state(self, state, cfg)?;
        baseline_run(state, cfg, data, &data.masks, VarianceSource::Off)
    }
}

/// Backbone trained on the first training mask only.
pub struct SingleMask;

impl TrainingStrategy for SingleMask {
    fn name(&self) -> &'static str {
        "single-mask"
    }

    fn summary(&self) -> &'static str {
        "backbone only, trained on the first training mask"
    }

    fn uses_variance_net(&self) -> bool {
        false
    }

    fn run(&self, state: &mut TrainState, data: &TrainData, cfg: &TrainConfig) -> Result<()> {
        check_state(self, state, cfg)?;
        let first = MaskSet::new(vec![data.masks.get(0).clone()], MaskRole::Train)?;
        baseline_run(state, cfg, data, &first, VarianceSource::Off)
    }
}

/// Mask ensemble with a constant perturbation scale `cfg.fixed_variance`.
pub struct FixedVariance;

impl TrainingStrategy for FixedVariance {
    fn name(&self) -> &'static str {
        "fixed-variance"
    }

    fn summary(&self) -> &'static str {
        "backbone only, masks perturbed with a constant standard deviation"
    }

    fn uses_variance_net(&self) -> bool {
        false
    }

    fn run(&self, state: &mut TrainState, data: &TrainData, cfg: &TrainConfig) -> Result<()> {
        check_state(self, state, cfg)?;
        baseline_run(state, cfg, data, &data.masks, VarianceSource::Constant(cfg.fixed_variance))
    }
}

/// Name-indexed collection of strategies.
pub struct StrategyRegistry {
    entries: Vec<Box<dyn TrainingStrategy>>,
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(GstBilevel));
        r.register(Box::new(GstJoint));
        r.register(Box::new(MaskEnsemble));
        r.register(Box::new(SingleMask));
        r.register(Box::new(FixedVariance));
        r
    }

    /// Adds a strategy, replacing any with the same name.
    pub fn register(&mut self, s: Box<dyn TrainingStrategy>) {
        self.entries.retain(|e| e.name() != s.name());
        self.entries.push(s);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn TrainingStrategy> {
        self.entries.iter().map(|b| b.as_ref())
    }

    pub fn get(&self, name: &str) -> Result<&dyn TrainingStrategy> {
        self.iter().find(|e| e.name() == name).ok_or_else(|| Error::Unknown {
            kind: "strategy",
            name: name.to_string(),
            known: self.names().join(", "),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maskmodel::{synthesize_real_mask, NoisePrior};
    use crate::optics::HsiCube;

    fn scenes(n: usize, seed: usize) -> Vec<HsiCube> {
        (0..n)
            .map(|k| {
                HsiCube::new(
                    2,
                    6,
                    6,
                    (0..72).map(|i| (((i / 6) * 5 + (i % 6) * 3 + (k + seed) * 11) % 17) as f64 / 16.0).collect(),
                )
                .unwrap()
            })
            .collect()
    }

    fn data(k: usize) -> TrainData {
        let masks = (0..k)
            .map(|i| synthesize_real_mask(6, 6, 0.5, &NoisePrior::NARROW, i as u64).unwrap())
            .collect();
        TrainData {
            train: scenes(5, 0),
            val: scenes(3, 7),
            masks: MaskSet::new(masks, MaskRole::Train).unwrap(),
        }
    }

    fn small() -> TrainConfig {
        TrainConfig {
            epochs_init: 2,
            epochs_trn: 2,
            epochs_val: 1,
            rounds: 2,
            batch_size: 2,
            backbone_width: 4,
            backbone_blocks: 1,
            lr_val: 1e-3,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn registry_lookup() {
        let r = StrategyRegistry::standard();
        assert_eq!(r.names(), ["gst-bilevel", "gst-joint", "mask-ensemble", "single-mask", "fixed-variance"]);
        assert!(matches!(r.get("nope"), Err(Error::Unknown { .. })));
        assert_eq!(r.get("gst-joint").unwrap().name(), "gst-joint");
    }

    #[test]
    fn zero_epochs_leave_theta_unchanged() {
        let cfg = TrainConfig { epochs_init: 0, rounds: 0, ..small() };
        let d = data(2);
        for s in StrategyRegistry::standard().iter() {
            let init = s.init_state(&d, &cfg).unwrap();
            let done = s.train(&d, &cfg).unwrap();
            assert!(done.model.theta.params().bit_eq(init.model.theta.params()), "{}", s.name());
            assert!(done.log.records.is_empty());
        }
    }

    #[test]
    fn zero_rate_pretrain_leaves_theta_unchanged() {
        let cfg = TrainConfig { lr_init: 0.0, rounds: 0, ..small() };
        let d = data(2);
        let s = GstBilevel;
        let init = s.init_state(&d, &cfg).unwrap();
        let done = s.train(&d, &cfg).unwrap();
        assert!(done.model.theta.params().bit_eq(init.model.theta.params()));
        assert_eq!(done.log.records.len(), 2);
    }

    #[test]
    fn frozen_levels() {
        let d = data(2);
        let cfg = TrainConfig { epochs_init: 0, lr_trn: 0.0, ..small() };
        let init = GstBilevel.init_state(&d, &cfg).unwrap();
        let done = GstBilevel.train(&d, &cfg).unwrap();
        assert!(done.model.theta.params().bit_eq(init.model.theta.params()));
        assert!(!done.model.phi.as_ref().unwrap().params().bit_eq(init.model.phi.as_ref().unwrap().params()));

        let cfg = TrainConfig { lr_val: 0.0, ..small() };
        let done = GstBilevel.train(&d, &cfg).unwrap();
        assert!(done.model.phi.as_ref().unwrap().params().bit_eq(init.model.phi.as_ref().unwrap().params()));
        assert!(!done.model.theta.params().bit_eq(init.model.theta.params()));
    }

    #[test]
    fn single_mask_equals_ensemble_of_one() {
        let d = data(1);
        let cfg = small();
        let a = SingleMask.train(&d, &cfg).unwrap();
        let b = MaskEnsemble.train(&d, &cfg).unwrap();
        assert!(a.model.theta.params().bit_eq(b.model.theta.params()));
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn zero_fixed_variance_equals_ensemble() {
        let d = data(3);
        let cfg = TrainConfig { fixed_variance: 0.0, ..small() };
        let a = FixedVariance.train(&d, &cfg).unwrap();
        let b = MaskEnsemble.train(&d, &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert!(a.model.theta.params().bit_eq(b.model.theta.params()));
        let c = FixedVariance.train(&d, &TrainConfig { fixed_variance: 0.05, ..small() }).unwrap();
        assert_ne!(c.log, b.log);
    }

    #[test]
    fn same_seed_same_log() {
        let d = data(3);
        for s in StrategyRegistry::standard().iter() {
            let a = s.train(&d, &small()).unwrap();
            let b = s.train(&d, &small()).unwrap();
            assert_eq!(a, b, "{}", s.name());
            let c = s.train(&d, &TrainConfig { seed: 4, ..small() }).unwrap();
            assert_ne!(a.log, c.log, "{}", s.name());
        }
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let d = data(3);
        let full = GstBilevel.train(&d, &small()).unwrap();
        let mut partial = GstBilevel.train(&d, &TrainConfig { rounds: 1, ..small() }).unwrap();
        GstBilevel.run(&mut partial, &d, &small()).unwrap();
        assert_eq!(partial, full);
    }

    #[test]
    fn state_from_other_strategy_is_rejected() {
        let d = data(2);
        let mut st = MaskEnsemble.init_state(&d, &small()).unwrap();
        assert!(matches!(GstBilevel.run(&mut st, &d, &small()), Err(Error::Config(_))));
    }
}
