use ndgrad::Tensor;

use crate::error::{Error, Result};
use crate::nn::ParamSet;

/// Bias-corrected Adam with per-tensor first and second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Shape(format!(
                "{} gradients and {} moment slots for {} parameters",
                grads.len(),
                self.m.len(),
                params.len()
            )));
        }
        for ((name, p), g) in params.names().iter().zip(params.tensors()).zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient for {name} has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::Domain(format!(
                    "non-finite gradient {} in {name} at element {i}",
                    g.data()[i]
                )));
            }
        }

        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((p, &g), (m, v)) in it {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Step decay: `base * 2^-(epoch / period)`.
pub fn lr_schedule(base: f64, epoch: usize, period: usize) -> f64 {
    let halvings = epoch / period.max(1);
    base * 0.5f64.powi(halvings as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.push("w", Tensor::scalar(v));
        ps
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = single(1.0);
        let mut opt = Adam::new(&p);
        opt.step(&mut p, &[Tensor::scalar(1.0)], 1e-3).unwrap();
        let moved = 1.0 - p.tensors()[0].item();
        assert!((moved - 1e-3).abs() < 1e-10, "{moved}");
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = single(0.3);
        let mut opt = Adam::new(&p);
        opt.step(&mut p, &[Tensor::scalar(2.0)], 1e-3).unwrap();
        let before = p.tensors()[0].item();
        let m_before = opt.m[0].item();
        opt.step(&mut p, &[Tensor::scalar(0.0)], 1e-3).unwrap();
        // params still move from the decaying first moment; with fresh state they do not
        assert_eq!(opt.m[0].item(), 0.9 * m_before);
        let mut fresh = single(0.3);
        let mut fopt = Adam::new(&fresh);
        fopt.step(&mut fresh, &[Tensor::scalar(0.0)], 1e-3).unwrap();
        assert_eq!(fresh.tensors()[0].item(), 0.3);
        assert!(before != 0.3);
    }

    #[test]
    fn two_steps_match_scalar_recomputation() {
        let (lr, g, b1, b2, eps) = (0.01, 0.5, 0.9f64, 0.999f64, 1e-8);
        let mut p = single(1.0);
        let mut opt = Adam::new(&p);
        for _ in 0..2 {
            opt.step(&mut p, &[Tensor::scalar(g)], lr).unwrap();
        }
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((p.tensors()[0].item() - x).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = single(1.0);
        let mut opt = Adam::new(&p);
        assert!(matches!(
            opt.step(&mut p, &[Tensor::scalar(f64::NAN)], 1e-3),
            Err(Error::Domain(_))
        ));
        assert_eq!(opt.t, 0);
    }

    #[test]
    fn schedule_halves_per_period() {
        assert_eq!(lr_schedule(4e-4, 0, 50), 4e-4);
        assert_eq!(lr_schedule(4e-4, 49, 50), 4e-4);
        assert_eq!(lr_schedule(4e-4, 50, 50), 2e-4);
        assert_eq!(lr_schedule(4e-4, 149, 50), 1e-4);
    }
}
