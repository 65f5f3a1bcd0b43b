//! Graph-based self-tuning variance network: mask in, positive per-pixel
//! standard deviation out.
//!
//! Pipeline for an `H x W` mask with `N = H * W` pixels:
//!
//! 1. `H0 = relu(conv(relu(conv(m))))`, `[C, H, W]`.
//! 2. Two 1x1 projections give `H1, H2` as `[C', N]`; the edge matrix is
//!    `E = H1^T H2 / C'`, `[N, N]`.
//! 3. Node features are the raw mask pixels, `M = [N, 1]`. The graph convolution
//!    `sigmoid(E M W + b)` with `W = [1, C]` gives an `[N, C]` attention map.
//! 4. `A = H0 * (attention + 1)`, and `g = softplus(conv1x1(A))`, `[H, W]`.

use ndgrad::{Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::maskmodel::VarianceMap;
use crate::nn::{conv_kernel, xavier_uniform, ParamSet};
use crate::optics::Mask;
use crate::rng::{stream, Stream};

/// Largest mask (in pixels) for which the dense `N x N` edge matrix is built.
pub const MAX_GRAPH_NODES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GstShape {
    /// Embedding width `C`.
    pub channels: usize,
    /// Projection width `C'`.
    pub proj_channels: usize,
    /// Kernel size of the two embedding convolutions.
    pub embed_kernel: usize,
}

impl Default for GstShape {
    fn default() -> Self {
        Self {
            channels: 8,
            proj_channels: 4,
            embed_kernel: 3,
        }
    }
}

impl GstShape {
    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.proj_channels == 0 {
            return Err(Error::Config("GST widths must be at least 1".into()));
        }
        if self.embed_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "GST embedding kernel must be odd, got {}",
                self.embed_kernel
            )));
        }
        Ok(())
    }

    fn layout(&self) -> Vec<(&'static str, Vec<usize>)> {
        let (c, p, k) = (self.channels, self.proj_channels, self.embed_kernel);
        vec![
            ("embed1.weight", vec![c, 1, k, k]),
            ("embed1.bias", vec![c]),
            ("embed2.weight", vec![c, c, k, k]),
            ("embed2.bias", vec![c]),
            ("proj1.weight", vec![p, c, 1, 1]),
            ("proj1.bias", vec![p]),
            ("proj2.weight", vec![p, c, 1, 1]),
            ("proj2.bias", vec![p]),
            ("gcn.weight", vec![1, c]),
            ("gcn.bias", vec![1, c]),
            ("out.weight", vec![1, c, 1, 1]),
            ("out.bias", vec![1]),
        ]
    }

    pub fn zeros(&self) -> Result<GstParams> {
        self.validate()?;
        let mut ps = ParamSet::new();
        for (name, shape) in self.layout() {
            ps.push(name, Tensor::zeros(shape));
        }
        Ok(GstParams { shape: *self, params: ps })
    }

    /// Xavier-uniform weights (gain 1), zero biases.
    pub fn init(&self, seed: u64) -> Result<GstParams> {
        self.validate()?;
        let mut rng = stream(seed, Stream::Init, &[2]);
        let mut ps = ParamSet::new();
        for (name, shape) in self.layout() {
            let t = if name.ends_with("bias") {
                Tensor::zeros(shape)
            } else if name == "gcn.weight" {
                xavier_uniform(&shape, 1, self.channels, 1.0, &mut rng)
            } else {
                conv_kernel(shape[0], shape[1], shape[2], &mut rng)
            };
            ps.push(name, t);
        }
        Ok(GstParams { shape: *self, params: ps })
    }

    /// Builds the variance node for `mask` from bound parameters (in layout order).
    pub fn forward(&self, tape: &mut Tape, phi: &[Var], mask: &Mask) -> Result<Var> {
        let (h, w) = (mask.height(), mask.width());
        let n = h * w;
        if n > MAX_GRAPH_NODES {
            return Err(Error::GraphTooLarge {
                pixels: n,
                limit: MAX_GRAPH_NODES,
            });
        }
        if phi.len() != 12 {
            return Err(Error::Config(format!("GST expects 12 parameter tensors, got {}", phi.len())));
        }
        let (c, p) = (self.channels, self.proj_channels);

        let m_img = tape.constant(mask.as_tensor().clone().reshape([1, h, w])?);
        let e1 = tape.conv2d(m_img, phi[0], phi[1])?;
        let e1 = tape.relu(e1)?;
        let e2 = tape.conv2d(e1, phi[2], phi[3])?;
        let h0 = tape.relu(e2)?;

        let h1 = tape.conv2d(h0, phi[4], phi[5])?;
        let h1 = tape.reshape(h1, [p, n])?;
        let h2 = tape.conv2d(h0, phi[6], phi[7])?;
        let h2 = tape.reshape(h2, [p, n])?;
        let h1t = tape.transpose(h1)?;
        let edges = tape.matmul(h1t, h2)?;
        let edges = tape.scale(edges, 1.0 / p as f64)?;

        let nodes = tape.constant(mask.as_tensor().clone().reshape([n, 1])?);
        let agg = tape.matmul(edges, nodes)?;
        let z = tape.matmul(agg, phi[8])?;
        let ones = tape.constant(Tensor::full([n, 1], 1.0));
        let bias = tape.matmul(ones, phi[9])?;
        let z = tape.add(z, bias)?;
        let att = tape.sigmoid(z)?;
        let att = tape.add_scalar(att, 1.0)?;
        let att = tape.transpose(att)?;
        let att = tape.reshape(att, [c, h, w])?;
        let a = tape.mul(h0, att)?;

        let o = tape.conv2d(a, phi[10], phi[11])?;
        let g = tape.softplus(o)?;
        Ok(tape.reshape(g, [h, w])?)
    }
}

/// Parameters of the variance network.
#[derive(Debug, Clone, PartialEq)]
pub struct GstParams {
    shape: GstShape,
    params: ParamSet,
}

impl GstParams {
    pub fn from_param_set(shape: GstShape, params: ParamSet) -> Result<Self> {
        shape.zeros()?.params.check_layout(&params)?;
        Ok(Self { shape, params })
    }

    pub fn shape(&self) -> &GstShape {
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

    /// Evaluates `g(mask)` without tracking gradients.
    pub fn variance_map(&self, mask: &Mask) -> Result<VarianceMap> {
        let mut tape = Tape::new();
        let phi = self.params.bind(&mut tape, false);
        let g = self.shape.forward(&mut tape, &phi, mask)?;
        VarianceMap::new(tape.value(g).clone())
    }
}
