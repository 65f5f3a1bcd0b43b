//! Single-disperser CASSI encoding and its measurement-initialized inverse.
//!
//! Cubes are stored channel-major (`[channels, height, width]`). The disperser
//! moves channel `c` right by `step * c` columns, so a measurement is
//! `width + step * (channels - 1)` columns wide.

use ndgrad::{Tape, Tensor, Var, GATHER_ZERO};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// Default dispersion: two columns per spectral channel.
pub const DEFAULT_STEP: usize = 2;

/// Hyperspectral datacube, `[channels, height, width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube(Tensor);

impl HsiCube {
    /// Builds a cube whose values must lie in `[0, 1]`.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("cube value {v} outside [0, 1]")));
        }
        Self::from_raw(channels, height, width, data)
    }

    /// Builds a cube of arbitrary finite values (reconstructions, linearity probes).
    pub fn from_raw(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("cube contains non-finite values".into()));
        }
        Ok(Self(Tensor::new([channels, height, width], data)?))
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.shape().len() != 3 {
            return Err(Error::Shape(format!("cube needs 3 axes, got {:?}", t.shape())));
        }
        let s = t.shape().to_vec();
        Self::from_raw(s[0], s[1], s[2], t.into_data())
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self(Tensor::zeros([channels, height, width]))
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height() * self.width();
        &self.0.data()[c * plane..(c + 1) * plane]
    }

    pub fn get(&self, row: usize, col: usize, c: usize) -> f64 {
        self.0.data()[(c * self.height() + row) * self.width() + col]
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// Copy with every value clipped to `[0, 1]`.
    pub fn clipped(&self) -> Self {
        Self(self.0.map(|v| v.clamp(0.0, 1.0)))
    }
}

/// Coded-aperture transmission map, `[height, width]`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask(Tensor);

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("mask value {v} outside [0, 1]")));
        }
        Ok(Self(Tensor::new([height, width], data)?))
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.shape().len() != 2 {
            return Err(Error::Shape(format!("mask needs 2 axes, got {:?}", t.shape())));
        }
        let (h, w) = (t.shape()[0], t.shape()[1]);
        Self::new(h, w, t.into_data())
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn pixels(&self) -> usize {
        self.0.len()
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// Compressed snapshot, `[height, width + step * (channels - 1)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    values: Tensor,
    step: usize,
}

impl Measurement {
    pub fn new(values: Tensor, step: usize) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "measurement needs 2 axes, got {:?}",
                values.shape()
            )));
        }
        Ok(Self { values, step })
    }

    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn data(&self) -> &[f64] {
        self.values.data()
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.values
    }
}

/// Additive Gaussian sensor noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    /// Constant standard deviation; `Fixed(0.0)` is the noiseless model.
    Fixed(f64),
    /// Standard deviation drawn once per measurement from `U[0, max]`.
    Uniform(f64),
}

impl NoiseModel {
    pub const NONE: NoiseModel = NoiseModel::Fixed(0.0);

    pub fn is_noiseless(&self) -> bool {
        matches!(self, NoiseModel::Fixed(s) | NoiseModel::Uniform(s) if *s == 0.0)
    }

    fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::Fixed(s) | NoiseModel::Uniform(s) if !(s >= 0.0 && s.is_finite()) => {
                Err(Error::Config(format!("noise level must be finite and >= 0, got {s}")))
            }
            _ => Ok(()),
        }
    }

    /// Draws a `[height, width]` noise field, or `None` when noiseless.
    pub fn sample(&self, height: usize, width: usize, seed: u64) -> Result<Option<Tensor>> {
        self.validate()?;
        if self.is_noiseless() {
            return Ok(None);
        }
        let mut rng = stream(seed, Stream::MeasurementNoise, &[]);
        let std = match *self {
            NoiseModel::Fixed(s) => s,
            NoiseModel::Uniform(max) => rng.random_range(0.0..=max),
        };
        let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Some(Tensor::from_fn([height, width], |_| normal.sample(&mut rng))))
    }
}

pub fn measurement_width(width: usize, channels: usize, step: usize) -> usize {
    width + step * channels.saturating_sub(1)
}

/// Places channel `c` at columns `[step * c, step * c + W)` of a zero stack.
pub fn shift_cube(x: &HsiCube, step: usize) -> Tensor {
    let (c_n, h, w) = (x.channels(), x.height(), x.width());
    let wm = measurement_width(w, c_n, step);
    let mut out = Tensor::zeros([c_n, h, wm]);
    let od = out.data_mut();
    for c in 0..c_n {
        let src = x.channel(c);
        for r in 0..h {
            let dst = (c * h + r) * wm + step * c;
            od[dst..dst + w].copy_from_slice(&src[r * w..(r + 1) * w]);
        }
    }
    out
}

fn check_pair(x: &HsiCube, m: &Mask) -> Result<()> {
    if x.height() != m.height() || x.width() != m.width() {
        return Err(Error::Shape(format!(
            "cube is {}x{} but mask is {}x{}",
            x.height(),
            x.width(),
            m.height(),
            m.width()
        )));
    }
    Ok(())
}

/// `y = sum_c shift(x)_c * shift(m)_c + noise`. The result is not clipped.
pub fn encode(x: &HsiCube, m: &Mask, step: usize, noise: &NoiseModel, seed: u64) -> Result<Measurement> {
    check_pair(x, m)?;
    let (c_n, h, w) = (x.channels(), x.height(), x.width());
    let wm = measurement_width(w, c_n, step);
    let mut y = Tensor::zeros([h, wm]);
    let yd = y.data_mut();
    for c in 0..c_n {
        let xc = x.channel(c);
        for r in 0..h {
            let row = &mut yd[r * wm + step * c..r * wm + step * c + w];
            let xr = &xc[r * w..(r + 1) * w];
            let mr = &m.data()[r * w..(r + 1) * w];
            for ((o, a), b) in row.iter_mut().zip(xr).zip(mr) {
                *o += a * b;
            }
        }
    }
    if let Some(n) = noise.sample(h, wm, seed)? {
        y.add_assign(&n);
    }
    Measurement::new(y, step)
}

/// Encodes every cube under one mask with independent noise per measurement.
pub fn encode_batch(
    xs: &[HsiCube],
    m: &Mask,
    step: usize,
    noise: &NoiseModel,
    seed: u64,
) -> Result<Vec<Measurement>> {
    if let Some(first) = xs.first() {
        let dims = (first.channels(), first.height(), first.width());
        if let Some(bad) = xs.iter().find(|x| (x.channels(), x.height(), x.width()) != dims) {
            return Err(Error::Shape(format!(
                "batch mixes cube shapes {dims:?} and {:?}",
                (bad.channels(), bad.height(), bad.width())
            )));
        }
    }
    xs.iter()
        .enumerate()
        .map(|(i, x)| encode(x, m, step, noise, crate::rng::derive_seed(seed, &[i as u64])))
        .collect()
}

fn check_measurement(y: &Measurement, m: &Mask, channels: usize, step: usize) -> Result<()> {
    let wm = measurement_width(m.width(), channels, step);
    if y.height() != m.height() || y.width() != wm {
        return Err(Error::Shape(format!(
            "measurement is {}x{} but a {}x{} mask with {channels} channels and step {step} needs {}x{wm}",
            y.height(),
            y.width(),
            m.height(),
            m.width(),
            m.height()
        )));
    }
    Ok(())
}

/// Network input: channel `c` is the width-W window of `y` at column `step * c`,
/// multiplied by the mask.
pub fn init_input(y: &Measurement, m: &Mask, channels: usize, step: usize) -> Result<HsiCube> {
    check_measurement(y, m, channels, step)?;
    let (h, w, wm) = (m.height(), m.width(), y.width());
    let mut out = vec![0.0; channels * h * w];
    for c in 0..channels {
        for r in 0..h {
            let win = &y.data()[r * wm + step * c..r * wm + step * c + w];
            let mr = &m.data()[r * w..(r + 1) * w];
            let dst = &mut out[(c * h + r) * w..(c * h + r + 1) * w];
            for ((o, a), b) in dst.iter_mut().zip(win).zip(mr) {
                *o = a * b;
            }
        }
    }
    HsiCube::from_raw(channels, h, w, out)
}

/// Gather map taking a `[H, W]` mask to its dispersed `[C, H, W']` stack.
pub fn shifted_mask_index(height: usize, width: usize, channels: usize, step: usize) -> Vec<usize> {
    let wm = measurement_width(width, channels, step);
    let mut idx = vec![GATHER_ZERO; channels * height * wm];
    for c in 0..channels {
        for r in 0..height {
            for col in 0..width {
                idx[(c * height + r) * wm + step * c + col] = r * width + col;
            }
        }
    }
    idx
}

/// Gather map extracting the `[C, H, W]` windows from a `[H, W']` measurement.
pub fn window_index(height: usize, width: usize, channels: usize, step: usize) -> Vec<usize> {
    let wm = measurement_width(width, channels, step);
    let mut idx = Vec::with_capacity(channels * height * width);
    for c in 0..channels {
        for r in 0..height {
            for col in 0..width {
                idx.push(r * wm + step * c + col);
            }
        }
    }
    idx
}

/// Gather map replicating a `[H, W]` mask across `C` channels.
pub fn broadcast_index(height: usize, width: usize, channels: usize) -> Vec<usize> {
    (0..channels).flat_map(|_| 0..height * width).collect()
}

/// Differentiable [`encode`] with respect to the mask node (`[H, W]`).
/// Returns a `[H, W']` node.
pub fn encode_on_tape(
    tape: &mut Tape,
    x: &HsiCube,
    mask: Var,
    step: usize,
    noise: Option<&Tensor>,
) -> Result<Var> {
    let (c_n, h, w) = (x.channels(), x.height(), x.width());
    if tape.shape(mask) != [h, w] {
        return Err(Error::Shape(format!(
            "mask node {:?} does not match cube {h}x{w}",
            tape.shape(mask)
        )));
    }
    let wm = measurement_width(w, c_n, step);
    let xs = tape.constant(shift_cube(x, step));
    let ms = tape.gather(mask, shifted_mask_index(h, w, c_n, step), [c_n, h, wm])?;
    let prod = tape.mul(xs, ms)?;
    let mut y = tape.sum_axis0(prod)?;
    if let Some(n) = noise {
        let n = tape.constant(n.clone());
        y = tape.add(y, n)?;
    }
    Ok(y)
}

/// Differentiable [`init_input`]: `[H, W']` measurement and `[H, W]` mask to `[C, H, W]`.
pub fn init_input_on_tape(tape: &mut Tape, y: Var, mask: Var, channels: usize, step: usize) -> Result<Var> {
    let ms = tape.shape(mask).to_vec();
    let (h, w) = (ms[0], ms[1]);
    if tape.shape(y) != [h, measurement_width(w, channels, step)] {
        return Err(Error::Shape(format!(
            "measurement node {:?} inconsistent with {h}x{w} mask, {channels} channels, step {step}",
            tape.shape(y)
        )));
    }
    let win = tape.gather(y, window_index(h, w, channels, step), [channels, h, w])?;
    let mb = tape.gather(mask, broadcast_index(h, w, channels), [channels, h, w])?;
    Ok(tape.mul(win, mb)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_cube() -> HsiCube {
        // H=1, W=2, two channels: [1, 2] and [3, 4]; values scaled into [0, 1] later where needed
        HsiCube::from_raw(2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn shift_places_channels_by_step() {
        let s = shift_cube(&toy_cube(), 1);
        assert_eq!(s.shape(), &[2, 1, 3]);
        assert_eq!(s.data(), &[1.0, 2.0, 0.0, 0.0, 3.0, 4.0]);
        let s0 = shift_cube(&toy_cube(), 0);
        assert_eq!(s0.data(), toy_cube().data());
    }

    #[test]
    fn shift_preserves_channel_sums() {
        let x = toy_cube();
        let s = shift_cube(&x, 2);
        let plane = s.shape()[1] * s.shape()[2];
        for c in 0..2 {
            let sum: f64 = s.data()[c * plane..(c + 1) * plane].iter().sum();
            assert_eq!(sum, x.channel(c).iter().sum::<f64>());
        }
    }

    #[test]
    fn encode_toy_instance() {
        let m = Mask::new(1, 2, vec![1.0, 0.5]).unwrap();
        let y = encode(&toy_cube(), &m, 1, &NoiseModel::NONE, 0).unwrap();
        assert_eq!(y.data(), &[1.0, 4.0, 2.0]);
    }

    #[test]
    fn encode_transparent_single_channel_is_identity() {
        let x = HsiCube::new(1, 2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let m = Mask::filled(2, 3, 1.0).unwrap();
        let y = encode(&x, &m, 2, &NoiseModel::NONE, 0).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn encode_zero_scene() {
        let x = HsiCube::zeros(3, 2, 2);
        let m = Mask::filled(2, 2, 0.7).unwrap();
        let y = encode(&x, &m, 2, &NoiseModel::NONE, 0).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let noisy = encode(&x, &m, 2, &NoiseModel::Fixed(0.1), 5).unwrap();
        assert!(noisy.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn encode_rejects_shape_mismatch() {
        let m = Mask::filled(2, 2, 1.0).unwrap();
        assert!(matches!(
            encode(&toy_cube(), &m, 1, &NoiseModel::NONE, 0),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn init_input_toy_instance() {
        let m = Mask::new(1, 2, vec![1.0, 0.5]).unwrap();
        let y = Measurement::new(Tensor::new([1, 3], vec![1.0, 4.0, 2.0]).unwrap(), 1).unwrap();
        let x = init_input(&y, &m, 2, 1).unwrap();
        assert_eq!(x.channel(0), &[1.0, 2.0]);
        assert_eq!(x.channel(1), &[4.0, 1.0]);
    }

    #[test]
    fn init_input_identity_and_opaque() {
        let y = Measurement::new(Tensor::new([1, 3], vec![0.3, 0.1, 0.2]).unwrap(), 0).unwrap();
        let ones = Mask::filled(1, 3, 1.0).unwrap();
        assert_eq!(init_input(&y, &ones, 1, 0).unwrap().data(), y.data());
        let zeros = Mask::filled(1, 3, 0.0).unwrap();
        assert!(init_input(&y, &zeros, 1, 0).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(matches!(init_input(&y, &ones, 2, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn encode_batch_edges() {
        let m = Mask::filled(1, 2, 1.0).unwrap();
        assert!(encode_batch(&[], &m, 1, &NoiseModel::NONE, 0).unwrap().is_empty());
        let one = encode_batch(&[toy_cube()], &m, 1, &NoiseModel::Fixed(0.05), 3).unwrap();
        let single = encode(&toy_cube(), &m, 1, &NoiseModel::Fixed(0.05), crate::rng::derive_seed(3, &[0])).unwrap();
        assert_eq!(one[0], single);
        let other = HsiCube::zeros(2, 1, 3);
        assert!(matches!(
            encode_batch(&[toy_cube(), other], &m, 1, &NoiseModel::NONE, 0),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn encode_batch_noise_is_independent() {
        let m = Mask::filled(1, 2, 1.0).unwrap();
        let xs = vec![toy_cube(), toy_cube()];
        for seed in 0..5 {
            let noisy = encode_batch(&xs, &m, 1, &NoiseModel::Fixed(0.05), seed).unwrap();
            assert_ne!(noisy[0], noisy[1]);
            let clean = encode_batch(&xs, &m, 1, &NoiseModel::NONE, seed).unwrap();
            assert_eq!(clean[0], clean[1]);
        }
    }

    #[test]
    fn tape_versions_match_plain() {
        let x = HsiCube::new(3, 2, 4, (0..24).map(|i| i as f64 / 24.0).collect()).unwrap();
        let m = Mask::new(2, 4, vec![1.0, 0.0, 0.3, 0.9, 0.5, 1.0, 0.0, 0.2]).unwrap();
        let y = encode(&x, &m, 2, &NoiseModel::NONE, 0).unwrap();
        let xin = init_input(&y, &m, 3, 2).unwrap();

        let mut tape = Tape::new();
        let mv = tape.param(m.as_tensor().clone());
        let yv = encode_on_tape(&mut tape, &x, mv, 2, None).unwrap();
        assert_eq!(tape.value(yv), y.as_tensor());
        let xv = init_input_on_tape(&mut tape, yv, mv, 3, 2).unwrap();
        assert_eq!(tape.value(xv), xin.as_tensor());
    }
}
