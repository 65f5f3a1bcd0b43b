//! Flat `key = value` configuration files.
//!
//! One pair per line; `#` starts a comment. Every key has a default, so an empty
//! file is a complete configuration. [`RunConfig::to_text`] writes every key with
//! its description and is the reference for the format.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gstnet::GstShape;
use crate::maskmodel::NoisePrior;
use crate::optics::NoiseModel;
use crate::trainer::{LossScale, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    /// Train and test on the same single mask.
    OneToOne,
    /// Train on one mask, test on unseen masks.
    OneToMany,
    /// Train on a mask set, test on unseen masks.
    ManyToMany,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] = [ScenarioKind::OneToOne, ScenarioKind::OneToMany, ScenarioKind::ManyToMany];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::OneToOne => "one-to-one",
            ScenarioKind::OneToMany => "one-to-many",
            ScenarioKind::ManyToMany => "many-to-many",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| Error::Unknown {
            kind: "scenario",
            name: s.to_string(),
            known: Self::ALL.map(|k| k.as_str()).join(", "),
        })
    }
}

/// Which masks a run trains and tests on, and how many trials it scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Training masks for many-to-many; the other kinds use one.
    pub train_masks: usize,
    /// Unseen test masks; `None` means one per trial (one for one-to-one).
    pub test_masks: Option<usize>,
    pub trials: usize,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::ManyToMany,
            train_masks: 6,
            test_masks: None,
            trials: 16,
        }
    }
}

impl ScenarioSpec {
    pub fn effective_train_masks(&self) -> usize {
        match self.kind {
            ScenarioKind::ManyToMany => self.train_masks,
            _ => 1,
        }
    }

    pub fn effective_test_masks(&self) -> usize {
        match (self.kind, self.test_masks) {
            (_, Some(k)) => k,
            (ScenarioKind::OneToOne, None) => 1,
            (_, None) => self.trials,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.kind == ScenarioKind::ManyToMany && self.train_masks == 0 {
            return Err(Error::Config("many-to-many needs at least one training mask".into()));
        }
        match (self.kind, self.effective_test_masks()) {
            (_, 0) => Err(Error::Config("test_masks must be at least 1".into())),
            (ScenarioKind::OneToOne, k) if k > 1 => Err(Error::Config(format!(
                "one-to-one tests on the training mask, so test_masks must be 1, got {k}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Sizes of the synthetic data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataSpec {
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub test_scenes: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Size of the synthetic hardware mask that training and test masks are cropped from.
    pub base_height: usize,
    pub base_width: usize,
    pub mask_density: f64,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            train_scenes: 20,
            val_scenes: 6,
            test_scenes: 4,
            height: 16,
            width: 16,
            channels: 4,
            base_height: 48,
            base_width: 48,
            mask_density: 0.5,
        }
    }
}

impl DataSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train_scenes == 0 || self.test_scenes == 0 {
            return Err(Error::Config("train_scenes and test_scenes must be at least 1".into()));
        }
        if self.base_height < self.height || self.base_width < self.width {
            return Err(Error::Config(format!(
                "base mask {}x{} is smaller than the {}x{} scenes",
                self.base_height, self.base_width, self.height, self.width
            )));
        }
        if !(self.mask_density > 0.0 && self.mask_density < 1.0) {
            return Err(Error::Config(format!("mask_density must be in (0, 1), got {}", self.mask_density)));
        }
        Ok(())
    }
}

/// Everything a command needs: training hyperparameters, data sizes, scenario and strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub strategy: String,
    pub train: TrainConfig,
    pub data: DataSpec,
    pub scenario: ScenarioSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            strategy: "gst-bilevel".into(),
            train: TrainConfig::default(),
            data: DataSpec::default(),
            scenario: ScenarioSpec::default(),
        }
    }
}

/// Every key with its description, in file order.
pub const KEYS: &[(&str, &str)] = &[
    ("strategy", "training strategy: gst-bilevel, gst-joint, mask-ensemble, single-mask, fixed-variance"),
    ("seed", "base seed for data, masks, initialization and training draws"),
    ("lr_init", "backbone learning rate during warm-up"),
    ("lr_trn", "backbone learning rate in the alternating rounds"),
    ("lr_val", "variance-network learning rate in the alternating rounds"),
    ("epochs_init", "warm-up epochs"),
    ("epochs_trn", "backbone epochs per round"),
    ("epochs_val", "variance-network epochs per round"),
    ("rounds", "alternating rounds"),
    ("lr_period", "epochs between learning-rate halvings, counted over all phases"),
    ("beta", "entropy weight"),
    ("entropy_flip", "subtract the entropy term instead of adding it"),
    ("batch_size", "scenes per batch; each batch shares one mask"),
    ("loss_scale", "mean (per-pixel mean) or summed ((N/B) * sum of squared errors)"),
    ("step", "dispersion in columns per channel"),
    ("noise", "measurement noise: none, fixed:<std> or uniform:<max std>"),
    ("prior_mean", "mean of the pixel-noise prior"),
    ("prior_std", "standard deviation of the pixel-noise prior"),
    ("eps_from_prior", "draw the perturbation noise from the prior instead of N(0, 1)"),
    ("pretrain_raw_masks", "warm up on unperturbed masks"),
    ("fixed_variance", "constant perturbation scale for the fixed-variance strategy"),
    ("backbone_width", "backbone feature channels"),
    ("backbone_blocks", "backbone residual blocks"),
    ("gst_channels", "variance-network embedding channels"),
    ("gst_proj_channels", "variance-network projection channels"),
    ("scenario", "one-to-one, one-to-many or many-to-many"),
    ("train_masks", "training masks for many-to-many"),
    ("test_masks", "unseen test masks; auto = one per trial (one for one-to-one)"),
    ("trials", "test trials; trial t uses test mask t modulo test_masks"),
    ("train_scenes", "training scenes"),
    ("val_scenes", "validation scenes"),
    ("test_scenes", "test scenes"),
    ("height", "scene and mask height"),
    ("width", "scene and mask width"),
    ("channels", "spectral channels"),
    ("base_height", "height of the synthetic hardware mask"),
    ("base_width", "width of the synthetic hardware mask"),
    ("mask_density", "open fraction of the synthetic hardware mask"),
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse().map_err(|e| Error::Config(format!("`{key}`: cannot parse `{v}`: {e}")))
}

fn noise_text(n: &NoiseModel) -> String {
    match *n {
        m if m.is_noiseless() => "none".into(),
        NoiseModel::Fixed(s) => format!("fixed:{s}"),
        NoiseModel::Uniform(s) => format!("uniform:{s}"),
    }
}

fn parse_noise(v: &str) -> Result<NoiseModel> {
    if v == "none" {
        return Ok(NoiseModel::NONE);
    }
    let (kind, level) = v
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("`noise`: expected none, fixed:<std> or uniform:<max>, got `{v}`")))?;
    let level: f64 = parse("noise", level)?;
    if !(level >= 0.0 && level.is_finite()) {
        return Err(Error::Config(format!("`noise`: level must be finite and >= 0, got {level}")));
    }
    match kind {
        "fixed" => Ok(NoiseModel::Fixed(level)),
        "uniform" => Ok(NoiseModel::Uniform(level)),
        _ => Err(Error::Config(format!("`noise`: unknown kind `{kind}`"))),
    }
}

impl RunConfig {
    /// Current value of `key` as written to a file.
    pub fn get(&self, key: &str) -> Result<String> {
        let t = &self.train;
        let d = &self.data;
        let s = &self.scenario;
        Ok(match key {
            "strategy" => self.strategy.clone(),
            "seed" => t.seed.to_string(),
            "lr_init" => t.lr_init.to_string(),
            "lr_trn" => t.lr_trn.to_string(),
            "lr_val" => t.lr_val.to_string(),
            "epochs_init" => t.epochs_init.to_string(),
            "epochs_trn" => t.epochs_trn.to_string(),
            "epochs_val" => t.epochs_val.to_string(),
            "rounds" => t.rounds.to_string(),
            "lr_period" => t.lr_period.to_string(),
            "beta" => t.beta.to_string(),
            "entropy_flip" => t.entropy_flip.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "loss_scale" => t.loss_scale.as_str().to_string(),
            "step" => t.step.to_string(),
            "noise" => noise_text(&t.noise),
            "prior_mean" => t.prior.mean.to_string(),
            "prior_std" => t.prior.std.to_string(),
            "eps_from_prior" => t.eps_from_prior.to_string(),
            "pretrain_raw_masks" => t.pretrain_raw_masks.to_string(),
            "fixed_variance" => t.fixed_variance.to_string(),
            "backbone_width" => t.backbone_width.to_string(),
            "backbone_blocks" => t.backbone_blocks.to_string(),
            "gst_channels" => t.gst.channels.to_string(),
            "gst_proj_channels" => t.gst.proj_channels.to_string(),
            "scenario" => s.kind.as_str().to_string(),
            "train_masks" => s.train_masks.to_string(),
            "test_masks" => s.test_masks.map_or_else(|| "auto".to_string(), |k| k.to_string()),
            "trials" => s.trials.to_string(),
            "train_scenes" => d.train_scenes.to_string(),
            "val_scenes" => d.val_scenes.to_string(),
            "test_scenes" => d.test_scenes.to_string(),
            "height" => d.height.to_string(),
            "width" => d.width.to_string(),
            "channels" => d.channels.to_string(),
            "base_height" => d.base_height.to_string(),
            "base_width" => d.base_width.to_string(),
            "mask_density" => d.mask_density.to_string(),
            _ => return Err(unknown_key(key)),
        })
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        let d = &mut self.data;
        let s = &mut self.scenario;
        match key {
            "strategy" => self.strategy = v.to_string(),
            "seed" => t.seed = parse(key, v)?,
            "lr_init" => t.lr_init = parse(key, v)?,
            "lr_trn" => t.lr_trn = parse(key, v)?,
            "lr_val" => t.lr_val = parse(key, v)?,
            "epochs_init" => t.epochs_init = parse(key, v)?,
            "epochs_trn" => t.epochs_trn = parse(key, v)?,
            "epochs_val" => t.epochs_val = parse(key, v)?,
            "rounds" => t.rounds = parse(key, v)?,
            "lr_period" => t.lr_period = parse(key, v)?,
            "beta" => t.beta = parse(key, v)?,
            "entropy_flip" => t.entropy_flip = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "loss_scale" => t.loss_scale = LossScale::parse(v)?,
            "step" => t.step = parse(key, v)?,
            "noise" => t.noise = parse_noise(v)?,
            "prior_mean" => t.prior.mean = parse(key, v)?,
            "prior_std" => t.prior.std = parse(key, v)?,
            "eps_from_prior" => t.eps_from_prior = parse(key, v)?,
            "pretrain_raw_masks" => t.pretrain_raw_masks = parse(key, v)?,
            "fixed_variance" => t.fixed_variance = parse(key, v)?,
            "backbone_width" => t.backbone_width = parse(key, v)?,
            "backbone_blocks" => t.backbone_blocks = parse(key, v)?,
            "gst_channels" => t.gst = GstShape { channels: parse(key, v)?, ..t.gst },
            "gst_proj_channels" => t.gst = GstShape { proj_channels: parse(key, v)?, ..t.gst },
            "scenario" => s.kind = ScenarioKind::parse(v)?,
            "train_masks" => s.train_masks = parse(key, v)?,
            "test_masks" => s.test_masks = if v == "auto" { None } else { Some(parse(key, v)?) },
            "trials" => s.trials = parse(key, v)?,
            "train_scenes" => d.train_scenes = parse(key, v)?,
            "val_scenes" => d.val_scenes = parse(key, v)?,
            "test_scenes" => d.test_scenes = parse(key, v)?,
            "height" => d.height = parse(key, v)?,
            "width" => d.width = parse(key, v)?,
            "channels" => d.channels = parse(key, v)?,
            "base_height" => d.base_height = parse(key, v)?,
            "base_width" => d.base_width = parse(key, v)?,
            "mask_density" => d.mask_density = parse(key, v)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        NoisePrior::new(self.train.prior.mean, self.train.prior.std)?;
        self.data.validate()?;
        self.scenario.validate()
    }

    /// Applies `key = value` lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: `{k}` is set twice", i + 1)));
            }
            self.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    /// Every key with its description and current value.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, doc) in KEYS {
            let v = self.get(k).expect("documented key");
            out.push_str(&format!("# {doc}\n{k} = {v}\n"));
        }
        out
    }
}

fn unknown_key(key: &str) -> Error {
    Error::Unknown {
        kind: "config key",
        name: key.to_string(),
        known: KEYS.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(", "),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        assert_eq!(RunConfig::parse("# only a comment\n\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn text_round_trips() {
        let mut c = RunConfig::default();
        c.apply("seed = 42\nlr_val = 3.3e-7 # tiny\nnoise = uniform:0.05\nscenario = one-to-many\ntest_masks = 5\nloss_scale = summed").unwrap();
        assert_eq!(c.train.seed, 42);
        assert_eq!(c.train.lr_val, 3.3e-7);
        assert_eq!(c.train.noise, NoiseModel::Uniform(0.05));
        assert_eq!(c.scenario.test_masks, Some(5));
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn every_key_is_documented_and_settable() {
        let mut c = RunConfig::default();
        for (k, _) in KEYS {
            let v = c.get(k).unwrap();
            c.set(k, &v).unwrap();
        }
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn errors() {
        assert!(matches!(RunConfig::parse("nope = 1"), Err(Error::Unknown { .. })));
        assert!(matches!(RunConfig::parse("seed = x"), Err(Error::Config(m)) if m.contains("line 1")));
        assert!(RunConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(RunConfig::parse("seed").is_err());
        assert!(RunConfig::parse("noise = loud:1").is_err());
        let c = RunConfig::parse("scenario = one-to-one\ntest_masks = 3").unwrap();
        assert!(c.validate().is_err());
        let c = RunConfig::parse("scenario = one-to-one").unwrap();
        assert!(c.validate().is_ok());
        assert_eq!(c.scenario.effective_test_masks(), 1);
    }
}
