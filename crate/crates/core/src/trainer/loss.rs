//! Monte Carlo reconstruction loss and the entropy-regularized objective.
//!
//! Every sample in a batch shares one real mask `m`. Sample `i` draws its own
//! perturbed mask `m'_i = clamp01(m + g * eps_i)`, is encoded with `m'_i` and
//! initialized with `m'_i`, so gradients reach the variance through both paths.

use ndgrad::{Tape, Tensor, Var};
use rayon::prelude::*;

use crate::backbone::Reconstructor;
use crate::error::{Error, Result};
use crate::gstnet::GstShape;
use crate::maskmodel::{entropy_on_tape, perturb_on_tape, sample_epsilon, NoisePrior};
use crate::nn::ParamSet;
use crate::optics::{encode_on_tape, init_input_on_tape, HsiCube, Mask, NoiseModel};
use crate::rng::derive_seed;

/// How squared errors are reduced to a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossScale {
    /// Mean over samples and pixels.
    Mean,
    /// `(N / B) * sum_i ||x_hat_i - x_i||^2` with `N` the dataset size.
    Summed,
}

impl LossScale {
    pub fn as_str(self) -> &'static str {
        match self {
            LossScale::Mean => "mean",
            LossScale::Summed => "summed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(LossScale::Mean),
            "summed" => Ok(LossScale::Summed),
            _ => Err(Error::Config(format!("unknown loss scale `{s}` (mean, summed)"))),
        }
    }
}

/// Where the perturbation scale comes from.
#[derive(Debug, Clone, Copy)]
pub enum Variance<'a> {
    /// Masks are used as-is.
    Off,
    /// Constant standard deviation at every pixel.
    Constant(f64),
    /// Learned map from the variance network.
    Gst(&'a GstShape),
}

/// Fixed ingredients of the loss.
#[derive(Clone, Copy)]
pub struct LossSetup<'a> {
    pub backbone: &'a dyn Reconstructor,
    pub channels: usize,
    pub step: usize,
    pub noise: NoiseModel,
    pub variance: Variance<'a>,
    /// Signed weight of the entropy term.
    pub entropy_weight: f64,
    pub scale: LossScale,
    /// Dataset size, used by [`LossScale::Summed`].
    pub dataset_len: usize,
    pub eps_dist: NoisePrior,
}

impl LossSetup<'_> {
    fn sample_factor(&self, batch: usize, pixels: usize) -> f64 {
        match self.scale {
            LossScale::Mean => 1.0 / (batch * pixels) as f64,
            LossScale::Summed => self.dataset_len as f64 / batch as f64,
        }
    }
}

/// Value and gradients of one optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    /// Objective that was differentiated (reconstruction plus any entropy term).
    pub loss: f64,
    pub recon: f64,
    /// Unweighted entropy term, present when the variance network is in use.
    pub entropy: Option<f64>,
    pub theta_grads: Option<Vec<Tensor>>,
    pub phi_grads: Option<Vec<Tensor>>,
}

fn check_batch(batch: &[&HsiCube], mask: &Mask) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Config("loss needs a nonempty batch".into()));
    }
    for x in batch {
        if (x.height(), x.width()) != (mask.height(), mask.width()) {
            return Err(Error::Shape(format!(
                "scene {}x{} does not match mask {}x{}",
                x.height(),
                x.width(),
                mask.height(),
                mask.width()
            )));
        }
    }
    Ok(())
}

fn variance_node(tape: &mut Tape, setup: &LossSetup, phi: Option<&[Var]>, mask: &Mask) -> Result<Option<Var>> {
    match setup.variance {
        Variance::Off => Ok(None),
        Variance::Constant(g0) => Ok(Some(tape.constant(Tensor::full([mask.height(), mask.width()], g0)))),
        Variance::Gst(shape) => {
            let phi = phi.ok_or_else(|| Error::Config("variance network parameters missing".into()))?;
            Ok(Some(shape.forward(tape, phi, mask)?))
        }
    }
}

/// Scaled squared error of one sample, `g` already on the tape.
fn sample_term(
    tape: &mut Tape,
    setup: &LossSetup,
    theta: &[Var],
    g: Option<Var>,
    x: &HsiCube,
    mask: &Mask,
    sample_seed: u64,
    factor: f64,
) -> Result<Var> {
    let (h, w) = (mask.height(), mask.width());
    let m = match g {
        Some(g) => {
            let eps = sample_epsilon(h, w, &setup.eps_dist, sample_seed);
            perturb_on_tape(tape, mask, g, &eps)?
        }
        None => tape.constant(mask.as_tensor().clone()),
    };
    let noise = setup.noise.sample(h, crate::optics::measurement_width(w, x.channels(), setup.step), sample_seed)?;
    let y = encode_on_tape(tape, x, m, setup.step, noise.as_ref())?;
    let x_in = init_input_on_tape(tape, y, m, setup.channels, setup.step)?;
    let x_hat = setup.backbone.forward(tape, theta, x_in)?;
    let target = tape.constant(x.as_tensor().clone());
    let diff = tape.sub(x_hat, target)?;
    let sq = tape.square(diff)?;
    let s = tape.sum(sq)?;
    Ok(tape.scale(s, factor)?)
}

fn sample_seed(seed: u64, i: usize) -> u64 {
    derive_seed(seed, &[i as u64])
}

/// Batch reconstruction loss as a single node.
pub fn recon_loss_on_tape(
    tape: &mut Tape,
    setup: &LossSetup,
    theta: &[Var],
    phi: Option<&[Var]>,
    batch: &[&HsiCube],
    mask: &Mask,
    seed: u64,
) -> Result<Var> {
    check_batch(batch, mask)?;
    let g = variance_node(tape, setup, phi, mask)?;
    let factor = setup.sample_factor(batch.len(), batch[0].data().len());
    let mut acc: Option<Var> = None;
    for (i, x) in batch.iter().enumerate() {
        let t = sample_term(tape, setup, theta, g, x, mask, sample_seed(seed, i), factor)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, t)?,
            None => t,
        });
    }
    Ok(acc.expect("nonempty batch"))
}

/// `recon + weight * entropy(g(m))`; the entropy is only added for the variance network.
pub fn total_loss_on_tape(
    tape: &mut Tape,
    setup: &LossSetup,
    theta: &[Var],
    phi: Option<&[Var]>,
    batch: &[&HsiCube],
    mask: &Mask,
    seed: u64,
) -> Result<Var> {
    let recon = recon_loss_on_tape(tape, setup, theta, phi, batch, mask, seed)?;
    match setup.variance {
        Variance::Gst(_) if setup.entropy_weight != 0.0 => {
            let g = variance_node(tape, setup, phi, mask)?.expect("variance network node");
            let h = entropy_on_tape(tape, g)?;
            let wh = tape.scale(h, setup.entropy_weight)?;
            Ok(tape.add(recon, wh)?)
        }
        _ => Ok(recon),
    }
}

fn bind_phi(tape: &mut Tape, phi: Option<&ParamSet>, trainable: bool) -> Option<Vec<Var>> {
    phi.map(|p| p.bind(tape, trainable))
}

/// Reconstruction loss value without gradients.
pub fn recon_loss(
    setup: &LossSetup,
    theta: &ParamSet,
    phi: Option<&ParamSet>,
    batch: &[&HsiCube],
    mask: &Mask,
    seed: u64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let th = theta.bind(&mut tape, false);
    let ph = bind_phi(&mut tape, phi, false);
    let l = recon_loss_on_tape(&mut tape, setup, &th, ph.as_deref(), batch, mask, seed)?;
    Ok(tape.value(l).item())
}

/// Entropy-regularized objective value without gradients.
pub fn total_loss(
    setup: &LossSetup,
    theta: &ParamSet,
    phi: Option<&ParamSet>,
    batch: &[&HsiCube],
    mask: &Mask,
    seed: u64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let th = theta.bind(&mut tape, false);
    let ph = bind_phi(&mut tape, phi, false);
    let l = total_loss_on_tape(&mut tape, setup, &th, ph.as_deref(), batch, mask, seed)?;
    Ok(tape.value(l).item())
}

struct Partial {
    value: f64,
    theta: Option<Vec<Tensor>>,
    phi: Option<Vec<Tensor>>,
}

fn collect(tape: &Tape, vars: &Option<Vec<Var>>, trainable: bool) -> Option<Vec<Tensor>> {
    match vars {
        Some(v) if trainable => Some(v.iter().map(|&p| tape.grad_or_zeros(p)).collect()),
        _ => None,
    }
}

fn accumulate(into: &mut Option<Vec<Tensor>>, from: Option<Vec<Tensor>>) {
    match (into.as_mut(), from) {
        (Some(acc), Some(g)) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
        (None, Some(g)) => *into = Some(g),
        _ => {}
    }
}

/// Objective value and gradients for the requested parameter groups.
///
/// Samples are differentiated on separate tapes in parallel; gradients are summed
/// in sample order, followed by the entropy term, so results do not depend on
/// scheduling. With `with_entropy` false only the reconstruction loss is optimized.
#[allow(clippy::too_many_arguments)]
pub fn batch_gradients(
    setup: &LossSetup,
    theta: &ParamSet,
    phi: Option<&ParamSet>,
    batch: &[&HsiCube],
    mask: &Mask,
    seed: u64,
    train_theta: bool,
    train_phi: bool,
    with_entropy: bool,
) -> Result<BatchOutcome> {
    check_batch(batch, mask)?;
    let factor = setup.sample_factor(batch.len(), batch[0].data().len());
    let partials: Vec<Partial> = batch
        .par_iter()
        .enumerate()
        .map(|(i, x)| -> Result<Partial> {
            let mut tape = Tape::new();
            let th = Some(theta.bind(&mut tape, train_theta));
            let ph = bind_phi(&mut tape, phi, train_phi);
            let g = variance_node(&mut tape, setup, ph.as_deref(), mask)?;
            let t = sample_term(
                &mut tape,
                setup,
                th.as_deref().expect("bound"),
                g,
                x,
                mask,
                sample_seed(seed, i),
                factor,
            )?;
            if train_theta || train_phi {
                tape.backward(t)?;
            }
            Ok(Partial {
                value: tape.value(t).item(),
                theta: collect(&tape, &th, train_theta),
                phi: collect(&tape, &ph, train_phi),
            })
        })
        .collect::<Result<_>>()?;

    let mut out = BatchOutcome {
        loss: 0.0,
        recon: 0.0,
        entropy: None,
        theta_grads: None,
        phi_grads: None,
    };
    for p in partials {
        out.recon += p.value;
        accumulate(&mut out.theta_grads, p.theta);
        accumulate(&mut out.phi_grads, p.phi);
    }
    out.loss = out.recon;

    if let Variance::Gst(shape) = setup.variance {
        let mut tape = Tape::new();
        let ph = bind_phi(&mut tape, phi, train_phi && with_entropy);
        let phv = ph.as_deref().ok_or_else(|| Error::Config("variance network parameters missing".into()))?;
        let g = shape.forward(&mut tape, phv, mask)?;
        let h = entropy_on_tape(&mut tape, g)?;
        out.entropy = Some(tape.value(h).item());
        if with_entropy && setup.entropy_weight != 0.0 {
            let wh = tape.scale(h, setup.entropy_weight)?;
            out.loss += tape.value(wh).item();
            if train_phi {
                tape.backward(wh)?;
                accumulate(&mut out.phi_grads, collect(&tape, &ph, true));
            }
        }
    }
    Ok(out)
}
