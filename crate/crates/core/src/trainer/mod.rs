//! Losses, optimization and the training strategies.

mod adam;
mod loops;
mod loss;
mod strategy;

pub use adam::{lr_schedule, Adam};
pub use loss::{
    batch_gradients, recon_loss, recon_loss_on_tape, total_loss, total_loss_on_tape, BatchOutcome,
    LossScale, LossSetup, Variance,
};
pub use strategy::{
    FixedVariance, GstBilevel, GstJoint, MaskEnsemble, SingleMask, StrategyRegistry, TrainingStrategy,
};

use std::fmt;

use crate::backbone::{SrnParams, SrnShape};
use crate::error::{Error, Result};
use crate::gstnet::{GstParams, GstShape};
use crate::maskmodel::{MaskSet, NoisePrior};
use crate::optics::{encode, HsiCube, Measurement, NoiseModel, DEFAULT_STEP};

/// Every hyperparameter of the training procedure.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Pre-training learning rate.
    pub lr_init: f64,
    /// Reconstruction-network learning rate in the alternating rounds.
    pub lr_trn: f64,
    /// Variance-network learning rate in the alternating rounds.
    pub lr_val: f64,
    pub epochs_init: usize,
    pub epochs_trn: usize,
    pub epochs_val: usize,
    /// Outer alternating rounds.
    pub rounds: usize,
    /// Entropy weight.
    pub beta: f64,
    /// Flip the sign of the entropy term (the as-written sign shrinks the variance).
    pub entropy_flip: bool,
    pub batch_size: usize,
    /// Dispersion step in columns per channel.
    pub step: usize,
    pub noise: NoiseModel,
    /// Pixel-noise prior used to realize synthetic masks.
    pub prior: NoisePrior,
    /// Draw the reparameterization noise from `prior`; `false` uses `N(0, 1)`.
    pub eps_from_prior: bool,
    pub backbone_width: usize,
    pub backbone_blocks: usize,
    pub gst: GstShape,
    /// Epochs between learning-rate halvings, counted over all phases.
    pub lr_period: usize,
    pub seed: u64,
    pub loss_scale: LossScale,
    /// Pre-train on the raw masks rather than masks perturbed by the initial variance network.
    pub pretrain_raw_masks: bool,
    /// Constant standard deviation for the fixed-variance strategy.
    pub fixed_variance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_init: 4e-4,
            lr_trn: 4e-4,
            lr_val: 1e-5,
            epochs_init: 20,
            epochs_trn: 5,
            epochs_val: 3,
            rounds: 20,
            beta: 1e-3,
            entropy_flip: false,
            batch_size: 4,
            step: DEFAULT_STEP,
            noise: NoiseModel::NONE,
            prior: NoisePrior::NARROW,
            eps_from_prior: true,
            backbone_width: 16,
            backbone_blocks: 4,
            gst: GstShape::default(),
            lr_period: 200,
            seed: 0,
            loss_scale: LossScale::Mean,
            pretrain_raw_masks: false,
            fixed_variance: 0.005,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lr_init", self.lr_init), ("lr_trn", self.lr_trn), ("lr_val", self.lr_val), ("beta", self.beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.fixed_variance >= 0.0 && self.fixed_variance.is_finite()) {
            return Err(Error::Config(format!(
                "fixed_variance must be finite and >= 0, got {}",
                self.fixed_variance
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.lr_period == 0 {
            return Err(Error::Config("lr_period must be at least 1".into()));
        }
        NoisePrior::new(self.prior.mean, self.prior.std)?;
        SrnShape::new(1, self.backbone_width, self.backbone_blocks)?;
        self.gst.zeros()?;
        Ok(())
    }

    pub fn eps_distribution(&self) -> NoisePrior {
        if self.eps_from_prior {
            self.prior
        } else {
            NoisePrior::STANDARD
        }
    }

    pub fn entropy_weight(&self) -> f64 {
        if self.entropy_flip {
            -self.beta
        } else {
            self.beta
        }
    }
}

/// Reconstruction weights and, for strategies that learn it, the variance network.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub theta: SrnParams,
    pub phi: Option<GstParams>,
}

impl Model {
    pub fn init(channels: usize, cfg: &TrainConfig, with_variance_net: bool) -> Result<Self> {
        let shape = SrnShape::new(channels, cfg.backbone_width, cfg.backbone_blocks)?;
        let theta = shape.init(cfg.seed)?;
        let phi = with_variance_net.then(|| cfg.gst.init(cfg.seed)).transpose()?;
        Ok(Self { theta, phi })
    }

    /// Reconstructs a scene from a measurement taken with `mask`.
    pub fn reconstruct(&self, y: &Measurement, mask: &crate::optics::Mask) -> Result<HsiCube> {
        let x_in = crate::optics::init_input(y, mask, self.theta.shape().channels, y.step())?;
        self.theta.reconstruct(&x_in)
    }
}

/// Training and validation scenes with the training mask set.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Vec<HsiCube>,
    pub val: Vec<HsiCube>,
    pub masks: MaskSet,
}

impl TrainData {
    pub fn channels(&self) -> Result<usize> {
        self.train
            .first()
            .map(HsiCube::channels)
            .ok_or_else(|| Error::Config("training split is empty".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One encoded scene and the index of the mask that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: HsiCube,
    pub y: Measurement,
    pub mask_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub split: Split,
}

impl Dataset {
    /// Encodes `scenes[i]` with `masks[mask_ids[i]]`.
    pub fn encode(
        scenes: &[HsiCube],
        masks: &MaskSet,
        mask_ids: &[usize],
        step: usize,
        noise: &NoiseModel,
        seed: u64,
        split: Split,
    ) -> Result<Self> {
        if scenes.len() != mask_ids.len() {
            return Err(Error::Config(format!(
                "{} scenes but {} mask assignments",
                scenes.len(),
                mask_ids.len()
            )));
        }
        let samples = scenes
            .iter()
            .zip(mask_ids)
            .enumerate()
            .map(|(i, (x, &id))| {
                let m = masks
                    .masks()
                    .get(id)
                    .ok_or_else(|| Error::Config(format!("mask id {id} out of range")))?;
                let y = encode(x, m, step, noise, crate::rng::derive_seed(seed, &[i as u64]))?;
                Ok(Sample { x: x.clone(), y, mask_id: id })
            })
            .collect::<Result<_>>()?;
        Ok(Self { samples, split })
    }

    /// Re-encodes every sample noiselessly and compares with the stored measurement.
    pub fn verify_noiseless(&self, masks: &MaskSet) -> Result<bool> {
        for s in &self.samples {
            let y = encode(&s.x, masks.get(s.mask_id), s.y.step(), &NoiseModel::NONE, 0)?;
            if y != s.y {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Training phase tag, also used to separate random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Train,
    Validate,
    Joint,
}

impl Phase {
    pub fn code(self) -> u64 {
        match self {
            Phase::Pretrain => 10,
            Phase::Train => 11,
            Phase::Validate => 12,
            Phase::Joint => 13,
        }
    }

    pub const ALL: [Phase; 4] = [Phase::Pretrain, Phase::Train, Phase::Validate, Phase::Joint];

    pub fn index(self) -> usize {
        match self {
            Phase::Pretrain => 0,
            Phase::Train => 1,
            Phase::Validate => 2,
            Phase::Joint => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Train => "train",
            Phase::Validate => "validate",
            Phase::Joint => "joint",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Phase::Pretrain),
            "train" => Ok(Phase::Train),
            "validate" => Ok(Phase::Validate),
            "joint" => Ok(Phase::Joint),
            _ => Err(Error::Config(format!("unknown phase `{s}`"))),
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Epoch-level loss record. `round` is 0 for warm-up epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub round: usize,
    pub phase: Phase,
    pub epoch: usize,
    pub lr: f64,
    /// Mean optimized objective over the epoch's batches.
    pub loss: f64,
    pub recon: f64,
    pub entropy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossLog {
    pub records: Vec<LossRecord>,
}

impl LossLog {
    pub const HEADER: &'static str = "round,phase,epoch,lr,loss,recon,entropy";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.records {
            let ent = r.entropy.map(|e| format!("{e:e}")).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{:e},{:e},{:e},{}\n",
                r.round, r.phase, r.epoch, r.lr, r.loss, r.recon, ent
            ));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == Self::HEADER => {}
            other => {
                return Err(Error::Config(format!("unexpected loss log header {other:?}")));
            }
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|e| Error::Config(format!("bad number `{s}`: {e}")))
        };
        let int = |s: &str| -> Result<usize> {
            s.parse::<usize>().map_err(|e| Error::Config(format!("bad integer `{s}`: {e}")))
        };
        let records = lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 7 {
                    return Err(Error::Config(format!("loss log row has {} fields", f.len())));
                }
                Ok(LossRecord {
                    round: int(f[0])?,
                    phase: Phase::parse(f[1])?,
                    epoch: int(f[2])?,
                    lr: num(f[3])?,
                    loss: num(f[4])?,
                    recon: num(f[5])?,
                    entropy: if f[6].is_empty() { None } else { Some(num(f[6])?) },
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }

    /// Mean objective over a round's records of one phase.
    pub fn round_mean(&self, round: usize, phase: Phase) -> Option<f64> {
        mean(self.records.iter().filter(|r| r.round == round && r.phase == phase).map(|r| r.loss))
    }

    /// Mean entropy over a round's records that carry one.
    pub fn round_entropy(&self, round: usize) -> Option<f64> {
        mean(self.records.iter().filter(|r| r.round == round).filter_map(|r| r.entropy))
    }

    pub fn last_round(&self) -> usize {
        self.records.iter().map(|r| r.round).max().unwrap_or(0)
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub strategy: String,
    pub model: Model,
    pub theta_opt: Adam,
    pub phi_opt: Option<Adam>,
    /// Epochs completed over all phases (drives the learning-rate schedule).
    pub epoch: usize,
    /// Epochs completed per phase, indexed by [`Phase::index`].
    pub phase_epochs: [usize; 4],
    pub warmup_done: bool,
    pub rounds_done: usize,
    pub log: LossLog,
}

impl TrainState {
    pub fn new(strategy: &str, model: Model) -> Self {
        let theta_opt = Adam::new(model.theta.params());
        let phi_opt = model.phi.as_ref().map(|p| Adam::new(p.params()));
        Self {
            strategy: strategy.to_string(),
            model,
            theta_opt,
            phi_opt,
            epoch: 0,
            phase_epochs: [0; 4],
            warmup_done: false,
            rounds_done: 0,
            log: LossLog::default(),
        }
    }
}
