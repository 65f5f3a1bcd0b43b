//! Epoch loop shared by every strategy.

use ndgrad::GradError;
use rand::seq::SliceRandom;
use rand::Rng;

use super::loss::{batch_gradients, LossSetup, Variance};
use super::{lr_schedule, LossRecord, Phase, TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::maskmodel::MaskSet;
use crate::optics::HsiCube;
use crate::rng::{derive_seed, stream, Stream};

/// What one epoch optimizes.
#[derive(Debug, Clone, Copy)]
pub(crate) struct EpochPlan<'a> {
    pub phase: Phase,
    pub round: usize,
    pub variance: VarianceSource,
    pub train_theta: bool,
    pub train_phi: bool,
    pub with_entropy: bool,
    pub lr_theta: f64,
    pub lr_phi: f64,
    pub scenes: &'a [HsiCube],
    pub masks: &'a MaskSet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum VarianceSource {
    Off,
    Constant(f64),
    Network,
}

fn diverged(phase: Phase, round: usize, epoch: usize, detail: String) -> Error {
    Error::Diverged {
        phase: phase.to_string(),
        round,
        epoch,
        detail,
    }
}

/// Runs one epoch, applies the Adam updates and appends a log record.
pub(crate) fn run_epoch(state: &mut TrainState, cfg: &TrainConfig, plan: EpochPlan) -> Result<()> {
    if plan.scenes.is_empty() {
        return Err(Error::Config(format!("no scenes for the {} phase", plan.phase)));
    }
    let epoch = state.epoch;
    // Streams are keyed by the per-phase counter, so strategies that share a
    // phase see the same shuffles, mask picks and draws.
    let phase_epoch = state.phase_epochs[plan.phase.index()];
    let tags = [plan.phase.code(), phase_epoch as u64];
    let mut order: Vec<usize> = (0..plan.scenes.len()).collect();
    order.shuffle(&mut stream(cfg.seed, Stream::Shuffle, &tags));
    let mut pick = stream(cfg.seed, Stream::MaskPick, &tags);

    let gst = cfg.gst;
    let variance = match plan.variance {
        VarianceSource::Off => Variance::Off,
        VarianceSource::Constant(g) => Variance::Constant(g),
        VarianceSource::Network => Variance::Gst(&gst),
    };
    let theta_shape = *state.model.theta.shape();
    let setup = LossSetup {
        backbone: &theta_shape,
        channels: theta_shape.channels,
        step: cfg.step,
        noise: cfg.noise,
        variance,
        entropy_weight: cfg.entropy_weight(),
        scale: cfg.loss_scale,
        dataset_len: plan.scenes.len(),
        eps_dist: cfg.eps_distribution(),
    };

    let (mut loss_sum, mut recon_sum, mut ent_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);
    let mut has_entropy = false;
    for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let mask = plan.masks.get(pick.random_range(0..plan.masks.len()));
        let batch: Vec<&HsiCube> = chunk.iter().map(|&i| &plan.scenes[i]).collect();
        let seed = derive_seed(cfg.seed, &[plan.phase.code(), phase_epoch as u64, b as u64]);
        let phi = state.model.phi.as_ref().map(|p| p.params());
        let out = batch_gradients(
            &setup,
            state.model.theta.params(),
            phi,
            &batch,
            mask,
            seed,
            plan.train_theta,
            plan.train_phi,
            plan.with_entropy,
        )
        .map_err(|e| match e {
            Error::Grad(g @ GradError::NonFinite { .. }) => diverged(plan.phase, plan.round, epoch, g.to_string()),
            other => other,
        })?;
        if !out.loss.is_finite() {
            return Err(diverged(plan.phase, plan.round, epoch, format!("loss {} at batch {b}", out.loss)));
        }
        let step_err = |e: Error| diverged(plan.phase, plan.round, epoch, format!("batch {b}: {e}"));
        if let Some(g) = &out.theta_grads {
            state.theta_opt.step(state.model.theta.params_mut(), g, plan.lr_theta).map_err(step_err)?;
        }
        if let (Some(g), Some(phi), Some(opt)) = (&out.phi_grads, state.model.phi.as_mut(), state.phi_opt.as_mut()) {
            opt.step(phi.params_mut(), g, plan.lr_phi).map_err(step_err)?;
        }
        loss_sum += out.loss;
        recon_sum += out.recon;
        if let Some(h) = out.entropy {
            ent_sum += h;
            has_entropy = true;
        }
        batches += 1;
    }

    let n = batches as f64;
    let lr = if plan.train_theta { plan.lr_theta } else { plan.lr_phi };
    state.log.records.push(LossRecord {
        round: plan.round,
        phase: plan.phase,
        epoch,
        lr,
        loss: loss_sum / n,
        recon: recon_sum / n,
        entropy: has_entropy.then(|| ent_sum / n),
    });
    state.epoch += 1;
    state.phase_epochs[plan.phase.index()] += 1;
    Ok(())
}

/// Scheduled rate for the current global epoch.
pub(crate) fn scheduled(base: f64, state: &TrainState, cfg: &TrainConfig) -> f64 {
    lr_schedule(base, state.epoch, cfg.lr_period)
}

/// Warm-up of the reconstruction network, skipped when already done.
pub(crate) fn pretrain(
    state: &mut TrainState,
    cfg: &TrainConfig,
    scenes: &[HsiCube],
    masks: &MaskSet,
    variance: VarianceSource,
) -> Result<()> {
    if state.warmup_done {
        return Ok(());
    }
    for _ in 0..cfg.epochs_init {
        let lr = scheduled(cfg.lr_init, state, cfg);
        run_epoch(
            state,
            cfg,
            EpochPlan {
                phase: Phase::Pretrain,
                round: 0,
                variance,
                train_theta: true,
                train_phi: false,
                with_entropy: false,
                lr_theta: lr,
                lr_phi: 0.0,
                scenes,
                masks,
            },
        )?;
    }
    state.warmup_done = true;
    Ok(())
}
