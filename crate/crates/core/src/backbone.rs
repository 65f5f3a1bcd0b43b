//! Residual reconstruction network.
//!
//! `out = relu(tail(body(head(x)) + head(x)))` where `head` is conv+relu,
//! `body` is a chain of residual blocks `r + conv(relu(conv(r)))`, and every
//! convolution is 3x3.

use ndgrad::{Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::{conv_kernel, ParamSet};
use crate::optics::HsiCube;
use crate::rng::{stream, Stream};

/// Maps an initialized input stack to a reconstructed cube on a tape.
pub trait Reconstructor: Sync {
    fn forward(&self, tape: &mut Tape, theta: &[Var], x_in: Var) -> Result<Var>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SrnShape {
    /// Spectral channels.
    pub channels: usize,
    /// Feature width of the head, body and tail.
    pub width: usize,
    /// Number of residual blocks.
    pub blocks: usize,
}

impl SrnShape {
    pub fn new(channels: usize, width: usize, blocks: usize) -> Result<Self> {
        let s = Self { channels, width, blocks };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.width == 0 || self.blocks == 0 {
            return Err(Error::Config(format!(
                "backbone needs positive channels, width and blocks, got {self:?}"
            )));
        }
        Ok(())
    }

    fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (l, c) = (self.channels, self.width);
        let mut v = vec![
            ("head.weight".to_string(), vec![c, l, 3, 3]),
            ("head.bias".to_string(), vec![c]),
        ];
        for j in 0..self.blocks {
            v.push((format!("block{j}.conv1.weight"), vec![c, c, 3, 3]));
            v.push((format!("block{j}.conv1.bias"), vec![c]));
            v.push((format!("block{j}.conv2.weight"), vec![c, c, 3, 3]));
            v.push((format!("block{j}.conv2.bias"), vec![c]));
        }
        v.push(("tail.weight".to_string(), vec![l, c, 3, 3]));
        v.push(("tail.bias".to_string(), vec![l]));
        v
    }

    pub fn zeros(&self) -> Result<SrnParams> {
        self.validate()?;
        let mut ps = ParamSet::new();
        for (name, shape) in self.layout() {
            ps.push(name, Tensor::zeros(shape));
        }
        Ok(SrnParams { shape: *self, params: ps })
    }

    /// Xavier-uniform weights (gain 1), zero biases.
    pub fn init(&self, seed: u64) -> Result<SrnParams> {
        self.validate()?;
        let mut rng = stream(seed, Stream::Init, &[1]);
        let mut ps = ParamSet::new();
        for (name, shape) in self.layout() {
            let t = if name.ends_with("bias") {
                Tensor::zeros(shape)
            } else {
                conv_kernel(shape[0], shape[1], shape[2], &mut rng)
            };
            ps.push(name, t);
        }
        Ok(SrnParams { shape: *self, params: ps })
    }
}

impl Reconstructor for SrnShape {
    fn forward(&self, tape: &mut Tape, theta: &[Var], x_in: Var) -> Result<Var> {
        let expected = 4 + 4 * self.blocks;
        if theta.len() != expected {
            return Err(Error::Config(format!(
                "backbone expects {expected} parameter tensors, got {}",
                theta.len()
            )));
        }
        let s = tape.shape(x_in);
        if s.len() != 3 || s[0] != self.channels {
            return Err(Error::Shape(format!(
                "backbone input {s:?} does not have {} channels",
                self.channels
            )));
        }
        let head = tape.conv2d(x_in, theta[0], theta[1])?;
        let head = tape.relu(head)?;
        let mut r = head;
        for j in 0..self.blocks {
            let p = &theta[2 + 4 * j..6 + 4 * j];
            let t = tape.conv2d(r, p[0], p[1])?;
            let t = tape.relu(t)?;
            let t = tape.conv2d(t, p[2], p[3])?;
            r = tape.add(r, t)?;
        }
        let skip = tape.add(r, head)?;
        let n = theta.len();
        let out = tape.conv2d(skip, theta[n - 2], theta[n - 1])?;
        Ok(tape.relu(out)?)
    }
}

/// Parameters of the reconstruction backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct SrnParams {
    shape: SrnShape,
    params: ParamSet,
}

impl SrnParams {
    pub fn from_param_set(shape: SrnShape, params: ParamSet) -> Result<Self> {
        shape.zeros()?.params.check_layout(&params)?;
        Ok(Self { shape, params })
    }

    pub fn shape(&self) -> &SrnShape {
        &self.shape
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Forward pass without gradient tracking.
    pub fn reconstruct(&self, x_in: &HsiCube) -> Result<HsiCube> {
        let mut tape = Tape::new();
        let theta = self.params.bind(&mut tape, false);
        let x = tape.constant(x_in.as_tensor().clone());
        let out = self.shape.forward(&mut tape, &theta, x)?;
        HsiCube::from_tensor(tape.value(out).clone())
    }
}
