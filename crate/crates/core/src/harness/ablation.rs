//! Ablation studies built from registered strategies.
//!
//! Kinds: `no-gst`, `no-bilevel`, `fixed-variance` (default sweep or
//! `fixed-variance:<g0>`) and `prior-study` (default priors or `prior-study:<mean>,<std>`).

use super::config::RunConfig;
use super::scenario::run_scenario;
use crate::error::{Error, Result};
use crate::maskmodel::NoisePrior;
use crate::metrics::TrialReport;
use crate::trainer::{StrategyRegistry, TrainState};

/// Constant perturbation scales of the default fixed-variance sweep.
pub const FIXED_VARIANCE_SWEEP: [f64; 4] = [0.0, 0.005, 0.05, 0.5];

/// Priors of the default prior study.
pub const PRIOR_STUDY: [NoisePrior; 3] = [NoisePrior::STANDARD, NoisePrior::OBSERVED, NoisePrior::NARROW];

const KINDS: &str = "no-gst, no-bilevel, fixed-variance[:g0], prior-study[:mean,std]";

#[derive(Debug, Clone, PartialEq)]
pub enum AblationKind {
    NoGst,
    NoBilevel,
    FixedVariance(Vec<f64>),
    PriorStudy(Vec<NoisePrior>),
}

fn number(kind: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("ablation `{kind}`: bad number `{s}`")))
}

impl AblationKind {
    pub fn parse(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        match (name, arg) {
            ("no-gst", None) => Ok(Self::NoGst),
            ("no-bilevel", None) => Ok(Self::NoBilevel),
            ("fixed-variance", None) => Ok(Self::FixedVariance(FIXED_VARIANCE_SWEEP.to_vec())),
            ("fixed-variance", Some(a)) => {
                let g = number(name, a)?;
                if !(g >= 0.0 && g.is_finite()) {
                    return Err(Error::Config(format!("fixed variance must be finite and >= 0, got {g}")));
                }
                Ok(Self::FixedVariance(vec![g]))
            }
            ("prior-study", None) => Ok(Self::PriorStudy(PRIOR_STUDY.to_vec())),
            ("prior-study", Some(a)) => {
                let (m, sd) = a
                    .split_once(',')
                    .ok_or_else(|| Error::Config(format!("prior-study expects `<mean>,<std>`, got `{a}`")))?;
                Ok(Self::PriorStudy(vec![NoisePrior::new(number(name, m)?, number(name, sd)?)?]))
            }
            _ => Err(Error::Unknown {
                kind: "ablation",
                name: s.to_string(),
                known: KINDS.to_string(),
            }),
        }
    }

    /// One labelled configuration per run.
    pub fn variants(&self, base: &RunConfig) -> Vec<(String, RunConfig)> {
        let with = |f: &dyn Fn(&mut RunConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        match self {
            Self::NoGst => vec![("no-gst".into(), with(&|c| c.strategy = "mask-ensemble".into()))],
            Self::NoBilevel => vec![("no-bilevel".into(), with(&|c| c.strategy = "gst-joint".into()))],
            Self::FixedVariance(gs) => gs
                .iter()
                .map(|&g| {
                    let c = with(&|c| {
                        c.strategy = "fixed-variance".into();
                        c.train.fixed_variance = g;
                    });
                    (format!("fixed-variance:{g}"), c)
                })
                .collect(),
            Self::PriorStudy(priors) => priors
                .iter()
                .map(|&p| {
                    let c = with(&|c| {
                        c.strategy = "gst-bilevel".into();
                        c.train.prior = p;
                    });
                    (format!("prior-study:{},{}", p.mean, p.std), c)
                })
                .collect(),
        }
    }
}

/// Result of one ablation variant.
#[derive(Debug, Clone)]
pub struct AblationRun {
    pub label: String,
    pub state: TrainState,
    pub report: TrialReport,
}

/// Trains and evaluates every variant of `kind` in order.
pub fn run_ablation(kind: &str, base: &RunConfig, registry: &StrategyRegistry) -> Result<Vec<AblationRun>> {
    AblationKind::parse(kind)?
        .variants(base)
        .into_iter()
        .map(|(label, cfg)| {
            let (state, report) = run_scenario(&cfg, registry)?;
            Ok(AblationRun { label, state, report })
        })
        .collect()
}
