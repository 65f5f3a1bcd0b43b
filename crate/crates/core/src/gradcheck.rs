//! Finite-difference checks of every differentiable operation and of the full
//! training loss.

use ndgrad::{grad_check, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{Reconstructor, SrnShape};
use crate::error::Result;
use crate::gstnet::GstShape;
use crate::maskmodel::{entropy_on_tape, perturb_on_tape, NoisePrior};
use crate::optics::{encode_on_tape, init_input_on_tape, measurement_width, HsiCube, Mask, NoiseModel};
use crate::rng::{stream, Stream};
use crate::trainer::{total_loss_on_tape, LossScale, LossSetup, Variance};

/// Tolerance for single operations.
pub const OP_TOLERANCE: f64 = 1e-6;
/// Tolerance for the composed training loss.
pub const END_TO_END_TOLERANCE: f64 = 1e-4;
/// Central-difference probe step.
pub const PROBE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Values at least 0.05 away from the kinks of relu and clamp01.
fn off_kinks(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| loop {
        let v: f64 = rng.random_range(-0.5..1.5);
        if [0.0, 1.0].iter().all(|k| (v - k).abs() > 0.05) {
            break v;
        }
    })
}

/// Reduces a node to a scalar through a fixed random weighting.
fn weigh(tape: &mut Tape, v: Var, rng_seed: u64) -> ndgrad::Result<Var> {
    let mut rng = stream(rng_seed, Stream::Trial, &[99]);
    let w = uniform(&mut rng, tape.shape(v), 0.5, 1.5);
    let w = tape.constant(w);
    let p = tape.mul(v, w)?;
    tape.sum(p)
}

type Builder = Box<dyn Fn(&mut Tape, &[Var]) -> ndgrad::Result<Var>>;

fn check(name: &'static str, builder: Builder, params: &[Tensor], tolerance: f64) -> Result<CheckResult> {
    Ok(CheckResult {
        name,
        max_rel_error: grad_check(builder, params, PROBE)?,
        tolerance,
    })
}

fn tensor_ops(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = stream(seed, Stream::Trial, &[1]);
    let a = uniform(&mut rng, &[3, 4], -1.0, 1.0);
    let b = uniform(&mut rng, &[3, 4], -1.0, 1.0);
    let pos = uniform(&mut rng, &[3, 4], 0.2, 2.0);
    let kinked = off_kinks(&mut rng, &[3, 4]);
    let m = uniform(&mut rng, &[4, 2], -1.0, 1.0);
    let img = uniform(&mut rng, &[2, 4, 4], -1.0, 1.0);
    let ker = uniform(&mut rng, &[3, 2, 3, 3], -0.5, 0.5);
    let bias = uniform(&mut rng, &[3], -0.5, 0.5);

    macro_rules! unary {
        ($name:literal, $op:ident, $x:expr) => {
            check(
                $name,
                Box::new(move |t, v| {
                    let r = t.$op(v[0])?;
                    weigh(t, r, seed)
                }),
                std::slice::from_ref(&$x),
                OP_TOLERANCE,
            )?
        };
    }
    macro_rules! binary {
        ($name:literal, $op:ident) => {
            check(
                $name,
                Box::new(move |t, v| {
                    let r = t.$op(v[0], v[1])?;
                    weigh(t, r, seed)
                }),
                &[a.clone(), b.clone()],
                OP_TOLERANCE,
            )?
        };
    }

    Ok(vec![
        binary!("add", add),
        binary!("sub", sub),
        binary!("mul", mul),
        unary!("relu", relu, kinked),
        unary!("sigmoid", sigmoid, a),
        unary!("softplus", softplus, a),
        unary!("log", log, pos),
        unary!("neg", neg, a),
        unary!("square", square, a),
        unary!("clamp01", clamp01, kinked),
        unary!("transpose", transpose, a),
        unary!("sum_axis0", sum_axis0, a),
        unary!("sum", sum, a),
        unary!("mean", mean, a),
        check(
            "scale",
            Box::new(move |t, v| {
                let r = t.scale(v[0], -1.7)?;
                weigh(t, r, seed)
            }),
            std::slice::from_ref(&a),
            OP_TOLERANCE,
        )?,
        check(
            "add_scalar",
            Box::new(move |t, v| {
                let r = t.add_scalar(v[0], 0.3)?;
                let r = t.square(r)?;
                weigh(t, r, seed)
            }),
            std::slice::from_ref(&a),
            OP_TOLERANCE,
        )?,
        check(
            "matmul",
            Box::new(move |t, v| {
                let r = t.matmul(v[0], v[1])?;
                weigh(t, r, seed)
            }),
            &[a.clone(), m],
            OP_TOLERANCE,
        )?,
        check(
            "conv2d",
            Box::new(move |t, v| {
                let r = t.conv2d(v[0], v[1], v[2])?;
                weigh(t, r, seed)
            }),
            &[img, ker, bias],
            OP_TOLERANCE,
        )?,
        check(
            "reshape",
            Box::new(move |t, v| {
                let r = t.reshape(v[0], vec![2, 6])?;
                weigh(t, r, seed)
            }),
            std::slice::from_ref(&a),
            OP_TOLERANCE,
        )?,
        check(
            "gather",
            Box::new(move |t, v| {
                let r = t.gather(v[0], vec![0, 5, 5, 11, 2, 0], vec![2, 3])?;
                weigh(t, r, seed)
            }),
            &[a],
            OP_TOLERANCE,
        )?,
    ])
}

fn model_ops(seed: u64) -> Result<Vec<CheckResult>> {
    let (h, w, c, step) = (4, 4, 2, 2);
    let mut rng = stream(seed, Stream::Trial, &[2]);
    let x = HsiCube::from_tensor(uniform(&mut rng, &[c, h, w], 0.0, 1.0))?;
    let mask = uniform(&mut rng, &[h, w], 0.3, 0.7);
    let y = uniform(&mut rng, &[h, measurement_width(w, c, step)], 0.0, 2.0);
    let g = uniform(&mut rng, &[h, w], 0.05, 0.5);
    let eps = uniform(&mut rng, &[h, w], -0.3, 0.3);
    let m_fixed = Mask::new(h, w, mask.data().to_vec())?;
    let gst = GstShape { channels: 2, proj_channels: 2, ..GstShape::default() };
    let phi = gst.init(seed)?.params().tensors().to_vec();
    let srn = SrnShape::new(c, 3, 1)?;
    let theta = srn.init(seed)?.params().tensors().to_vec();
    let x_in = uniform(&mut rng, &[c, h, w], 0.0, 1.0);

    // Model builders report core errors through the gradient error's config variant.
    let lift = |e: crate::Error| ndgrad::GradError::Config(e.to_string());
    let n_phi = phi.len();
    let mut all_theta = theta.clone();
    all_theta.push(x_in);

    let x2 = x.clone();
    let mf = m_fixed.clone();
    let mf2 = m_fixed.clone();
    let eps2 = eps.clone();
    let mf3 = m_fixed.clone();
    Ok(vec![
        check(
            "encode (mask)",
            Box::new(move |t, v| {
                let r = encode_on_tape(t, &x2, v[0], step, None).map_err(lift)?;
                weigh(t, r, seed)
            }),
            std::slice::from_ref(&mask),
            OP_TOLERANCE,
        )?,
        check(
            "init_input (measurement, mask)",
            Box::new(move |t, v| {
                let r = init_input_on_tape(t, v[0], v[1], c, step).map_err(lift)?;
                weigh(t, r, seed)
            }),
            &[y, mask],
            OP_TOLERANCE,
        )?,
        check(
            "perturb (variance)",
            Box::new(move |t, v| {
                let r = perturb_on_tape(t, &mf, v[0], &eps2).map_err(lift)?;
                weigh(t, r, seed)
            }),
            std::slice::from_ref(&g),
            OP_TOLERANCE,
        )?,
        check(
            "entropy (variance)",
            Box::new(move |t, v| entropy_on_tape(t, v[0]).map_err(lift)),
            &[g],
            OP_TOLERANCE,
        )?,
        check(
            "variance network",
            Box::new(move |t, v| {
                let r = gst.forward(t, &v[..n_phi], &mf2).map_err(lift)?;
                weigh(t, r, seed)
            }),
            &phi,
            OP_TOLERANCE,
        )?,
        check(
            "backbone (weights, input)",
            Box::new(move |t, v| {
                let (th, xi) = v.split_at(v.len() - 1);
                let r = srn.forward(t, th, xi[0]).map_err(lift)?;
                weigh(t, r, seed)
            }),
            &all_theta,
            OP_TOLERANCE,
        )?,
        end_to_end_with(seed, &x, &mf3)?,
    ])
}

fn end_to_end_with(seed: u64, x: &HsiCube, mask: &Mask) -> Result<CheckResult> {
    let gst = GstShape { channels: 2, proj_channels: 2, ..GstShape::default() };
    let srn = SrnShape::new(x.channels(), 3, 1)?;
    let theta = srn.init(seed)?.params().tensors().to_vec();
    let phi = gst.init(seed)?.params().tensors().to_vec();
    let n_theta = theta.len();
    let mut params = theta;
    params.extend(phi);
    let (x, mask) = (x.clone(), mask.clone());
    let lift = |e: crate::Error| ndgrad::GradError::Config(e.to_string());
    check(
        "end to end: encode, init, variance net, perturb, backbone, loss",
        Box::new(move |t, v| {
            let setup = LossSetup {
                backbone: &srn,
                channels: x.channels(),
                step: 2,
                noise: NoiseModel::NONE,
                variance: Variance::Gst(&gst),
                entropy_weight: 1e-3,
                scale: LossScale::Mean,
                dataset_len: 1,
                eps_dist: NoisePrior { mean: 0.0, std: 0.1 },
            };
            let (th, ph) = v.split_at(n_theta);
            total_loss_on_tape(t, &setup, th, Some(ph), &[&x], &mask, seed).map_err(lift)
        }),
        &params,
        END_TO_END_TOLERANCE,
    )
}

/// The composed training loss on a random 4x4x2 instance.
pub fn end_to_end(seed: u64) -> Result<CheckResult> {
    let mut rng = stream(seed, Stream::Trial, &[3]);
    let x = HsiCube::from_tensor(uniform(&mut rng, &[2, 4, 4], 0.0, 1.0))?;
    let mask = Mask::new(4, 4, uniform(&mut rng, &[4, 4], 0.3, 0.7).into_data())?;
    end_to_end_with(seed, &x, &mask)
}

/// Every tape operation, every model component and the full loss.
pub fn gradient_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = tensor_ops(seed)?;
    out.extend(model_ops(seed)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for r in gradient_suite(0).unwrap() {
            assert!(r.passed(), "{} rel err {:e}", r.name, r.max_rel_error);
        }
    }
}
