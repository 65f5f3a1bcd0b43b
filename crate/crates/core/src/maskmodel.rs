//! Masks as a clean binary pattern plus Gaussian pixel noise, the Gaussian
//! variational family centered on a real mask, and its entropy regularizer.

use ndgrad::{Tape, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::optics::Mask;
use crate::rng::{derive_seed, stream, Stream};

/// `sqrt(2 * pi * e)`, the scale at which a Gaussian's differential entropy is zero.
pub const ENTROPY_SCALE: f64 = 4.132_731_354_122_493;

/// Gaussian pixel-noise prior `N(mean, std)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisePrior {
    pub mean: f64,
    pub std: f64,
}

impl NoisePrior {
    /// Default prior: mean at the observed histogram floor, narrow spread.
    pub const NARROW: NoisePrior = NoisePrior { mean: 0.006, std: 0.005 };
    pub const OBSERVED: NoisePrior = NoisePrior { mean: 0.006, std: 0.1 };
    pub const STANDARD: NoisePrior = NoisePrior { mean: 0.0, std: 1.0 };

    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std >= 0.0) || !mean.is_finite() || !std.is_finite() {
            return Err(Error::Config(format!("invalid noise prior N({mean}, {std})")));
        }
        Ok(Self { mean, std })
    }

    /// Draws an `[h, w]` field of i.i.d. samples.
    pub fn sample(&self, h: usize, w: usize, rng: &mut impl Rng) -> Tensor {
        if self.std == 0.0 {
            return Tensor::full([h, w], self.mean);
        }
        let n = Normal::new(self.mean, self.std).expect("validated prior");
        Tensor::from_fn([h, w], |_| n.sample(rng))
    }
}

impl Default for NoisePrior {
    fn default() -> Self {
        Self::NARROW
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskRole {
    Train,
    Test,
}

/// Nonempty list of same-shape masks.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    masks: Vec<Mask>,
    role: MaskRole,
}

impl MaskSet {
    pub fn new(masks: Vec<Mask>, role: MaskRole) -> Result<Self> {
        let first = masks
            .first()
            .ok_or_else(|| Error::Config("mask set must not be empty".into()))?;
        let dims = (first.height(), first.width());
        if let Some(bad) = masks.iter().find(|m| (m.height(), m.width()) != dims) {
            return Err(Error::Shape(format!(
                "mask set mixes {dims:?} and {:?}",
                (bad.height(), bad.width())
            )));
        }
        Ok(Self { masks, role })
    }

    pub fn masks(&self) -> &[Mask] {
        &self.masks
    }

    pub fn role(&self) -> MaskRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn get(&self, i: usize) -> &Mask {
        &self.masks[i]
    }

    pub fn height(&self) -> usize {
        self.masks[0].height()
    }

    pub fn width(&self) -> usize {
        self.masks[0].width()
    }

    /// Number of (self, other) pairs whose masks are exactly equal.
    pub fn collisions_with(&self, other: &MaskSet) -> usize {
        self.masks
            .iter()
            .map(|a| other.masks.iter().filter(|b| a == *b).count())
            .sum()
    }
}

/// Strictly positive per-pixel standard deviation map `[H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceMap(Tensor);

impl VarianceMap {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.shape().len() != 2 {
            return Err(Error::Shape(format!("variance map needs 2 axes, got {:?}", t.shape())));
        }
        if let Some(v) = t.data().iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::Domain(format!("variance map value {v} is not positive")));
        }
        Ok(Self(t))
    }

    pub fn constant(h: usize, w: usize, value: f64) -> Result<Self> {
        Self::new(Tensor::full([h, w], value))
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }
}

/// I.i.d. Bernoulli(`density`) binary pattern.
pub fn synthesize_clean_mask(h: usize, w: usize, density: f64, seed: u64) -> Result<Mask> {
    if !(density > 0.0 && density < 1.0) {
        return Err(Error::Config(format!("mask density must be in (0, 1), got {density}")));
    }
    let mut rng = stream(seed, Stream::Masks, &[0]);
    let data = (0..h * w)
        .map(|_| if rng.random_bool(density) { 1.0 } else { 0.0 })
        .collect();
    Mask::new(h, w, data)
}

/// Pre-clamp pixel noise used by [`realize_mask`].
pub fn mask_noise(h: usize, w: usize, prior: &NoisePrior, seed: u64) -> Tensor {
    prior.sample(h, w, &mut stream(seed, Stream::Masks, &[1]))
}

/// `clamp01(clean + z)` with `z ~ prior` per pixel.
pub fn realize_mask(clean: &Mask, prior: &NoisePrior, seed: u64) -> Result<Mask> {
    let z = mask_noise(clean.height(), clean.width(), prior, seed);
    let data = clean
        .data()
        .iter()
        .zip(z.data())
        .map(|(m, z)| (m + z).clamp(0.0, 1.0))
        .collect();
    Mask::new(clean.height(), clean.width(), data)
}

/// Auxiliary draw `eps` for the reparameterized sample, one value per pixel.
pub fn sample_epsilon(h: usize, w: usize, dist: &NoisePrior, seed: u64) -> Tensor {
    dist.sample(h, w, &mut stream(seed, Stream::Epsilon, &[]))
}

fn check_shape(m: &Mask, shape: &[usize], what: &str) -> Result<()> {
    if shape != [m.height(), m.width()] {
        return Err(Error::Shape(format!(
            "{what} {shape:?} does not match {}x{} mask",
            m.height(),
            m.width()
        )));
    }
    Ok(())
}

/// `clamp01(m + g * eps)` with an explicit auxiliary draw.
pub fn perturb_with(m: &Mask, g: &Tensor, eps: &Tensor) -> Result<Mask> {
    check_shape(m, g.shape(), "variance map")?;
    check_shape(m, eps.shape(), "epsilon")?;
    let data = m
        .data()
        .iter()
        .zip(g.data().iter().zip(eps.data()))
        .map(|(m, (g, e))| (m + g * e).clamp(0.0, 1.0))
        .collect();
    Mask::new(m.height(), m.width(), data)
}

/// Reparameterized draw from `N(m, g)` with standard-normal `eps`, clamped to `[0, 1]`.
pub fn sample_perturbed(m: &Mask, g: &VarianceMap, seed: u64) -> Result<Mask> {
    let eps = sample_epsilon(m.height(), m.width(), &NoisePrior::STANDARD, seed);
    perturb_with(m, g.as_tensor(), &eps)
}

/// Differentiable perturbation: `clamp01(m + g * eps)` as a node, gradient flowing to `g`.
pub fn perturb_on_tape(tape: &mut Tape, m: &Mask, g: Var, eps: &Tensor) -> Result<Var> {
    check_shape(m, tape.shape(g), "variance node")?;
    check_shape(m, eps.shape(), "epsilon")?;
    let e = tape.constant(eps.clone());
    let ge = tape.mul(g, e)?;
    let mv = tape.constant(m.as_tensor().clone());
    let sum = tape.add(mv, ge)?;
    Ok(tape.clamp01(sum)?)
}

/// Mean over pixels of `ln(g * sqrt(2 pi e))`.
pub fn entropy_on_tape(tape: &mut Tape, g: Var) -> Result<Var> {
    if let Some(v) = tape.value(g).data().iter().find(|v| **v <= 0.0) {
        return Err(Error::Domain(format!("entropy needs positive variance, got {v}")));
    }
    let scaled = tape.scale(g, ENTROPY_SCALE)?;
    let l = tape.log(scaled)?;
    Ok(tape.mean(l)?)
}

pub fn entropy_term(g: &VarianceMap) -> f64 {
    let n = g.data().len() as f64;
    g.data().iter().map(|v| (v * ENTROPY_SCALE).ln()).sum::<f64>() / n
}

/// Equal-width histogram over `[0, 1]`; bins are half-open except the last.
pub fn mask_histogram(m: &Mask, bins: usize) -> Result<Vec<u64>> {
    if bins < 2 {
        return Err(Error::Config(format!("histogram needs at least 2 bins, got {bins}")));
    }
    let mut counts = vec![0u64; bins];
    for &v in m.data() {
        let b = ((v * bins as f64).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(counts)
}

pub fn crop(base: &Mask, top: usize, left: usize, h: usize, w: usize) -> Result<Mask> {
    if top + h > base.height() || left + w > base.width() {
        return Err(Error::Shape(format!(
            "crop {h}x{w} at ({top}, {left}) exceeds {}x{} base",
            base.height(),
            base.width()
        )));
    }
    let bw = base.width();
    let data = (top..top + h)
        .flat_map(|r| base.data()[r * bw + left..r * bw + left + w].iter().copied())
        .collect();
    Mask::new(h, w, data)
}

const MAX_REDRAWS: usize = 1000;

/// Random crops for training and testing; any test crop equal to a training crop is redrawn.
pub fn build_mask_sets(
    base: &Mask,
    crop_h: usize,
    crop_w: usize,
    k_train: usize,
    k_test: usize,
    seed: u64,
) -> Result<(MaskSet, MaskSet)> {
    if crop_h > base.height() || crop_w > base.width() || crop_h == 0 || crop_w == 0 {
        return Err(Error::Shape(format!(
            "crop {crop_h}x{crop_w} does not fit {}x{} base",
            base.height(),
            base.width()
        )));
    }
    if k_train == 0 || k_test == 0 {
        return Err(Error::Config("mask set sizes must be at least 1".into()));
    }
    let mut rng = stream(seed, Stream::Masks, &[2]);
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
        let top = rng.random_range(0..=base.height() - crop_h);
        let left = rng.random_range(0..=base.width() - crop_w);
        crop(base, top, left, crop_h, crop_w)
    };
    let train: Vec<Mask> = (0..k_train).map(|_| draw(&mut rng)).collect::<Result<_>>()?;
    let mut test = Vec::with_capacity(k_test);
    for i in 0..k_test {
        let mut redraws = 0;
        loop {
            let c = draw(&mut rng)?;
            if !train.contains(&c) {
                test.push(c);
                break;
            }
            redraws += 1;
            if redraws >= MAX_REDRAWS {
                return Err(Error::Config(format!(
                    "could not draw test mask {i} distinct from the training crops after {MAX_REDRAWS} attempts; use a larger base or smaller crop"
                )));
            }
        }
    }
    Ok((
        MaskSet::new(train, MaskRole::Train)?,
        MaskSet::new(test, MaskRole::Test)?,
    ))
}

/// Synthetic stand-in for a hardware mask: Bernoulli pattern plus clamped prior noise.
pub fn synthesize_real_mask(h: usize, w: usize, density: f64, prior: &NoisePrior, seed: u64) -> Result<Mask> {
    let clean = synthesize_clean_mask(h, w, density, seed)?;
    realize_mask(&clean, prior, derive_seed(seed, &[1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_mask_is_binary_dense_and_repeatable() {
        let m = synthesize_clean_mask(64, 64, 0.5, 3).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
        let frac = m.data().iter().sum::<f64>() / 4096.0;
        assert!((frac - 0.5).abs() < 0.1, "{frac}");
        assert_eq!(m, synthesize_clean_mask(64, 64, 0.5, 3).unwrap());
        assert!(synthesize_clean_mask(4, 4, 0.0, 1).is_err());
        assert!(synthesize_clean_mask(4, 4, 1.0, 1).is_err());
    }

    #[test]
    fn realize_mask_cases() {
        let clean = synthesize_clean_mask(16, 16, 0.5, 1).unwrap();
        let same = realize_mask(&clean, &NoisePrior::new(0.0, 0.0).unwrap(), 4).unwrap();
        assert_eq!(same, clean);
        let shifted = realize_mask(&clean, &NoisePrior::new(0.5, 0.0).unwrap(), 4).unwrap();
        assert!(shifted.data().iter().all(|&v| v == 0.5 || v == 1.0));
    }

    #[test]
    fn mask_noise_mean_within_clt_bound() {
        let z = mask_noise(64, 64, &NoisePrior::OBSERVED, 17);
        let mean = z.sum() / z.len() as f64;
        assert!((mean - 0.006).abs() < 4.0 * 0.1 / 64.0, "{mean}");
        let real = realize_mask(&synthesize_clean_mask(64, 64, 0.5, 1).unwrap(), &NoisePrior::OBSERVED, 17).unwrap();
        assert!(real.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn perturbation_degenerate_cases() {
        let m = Mask::new(1, 2, vec![0.9, 0.2]).unwrap();
        let zeros = Tensor::zeros([1, 2]);
        let g = Tensor::full([1, 2], 0.5);
        assert_eq!(perturb_with(&m, &zeros, &Tensor::full([1, 2], 3.0)).unwrap(), m);
        assert_eq!(perturb_with(&m, &g, &zeros).unwrap(), m);
        let out = perturb_with(&m, &g, &Tensor::full([1, 2], 1.0)).unwrap();
        assert_eq!(out.data(), &[1.0, 0.7]);
        assert!(perturb_with(&m, &Tensor::zeros([2, 1]), &zeros).is_err());
    }

    #[test]
    fn entropy_closed_forms() {
        let zero_point = VarianceMap::constant(3, 3, 1.0 / ENTROPY_SCALE).unwrap();
        assert!(entropy_term(&zero_point).abs() < 1e-12);
        let small = VarianceMap::constant(3, 3, 0.005).unwrap();
        assert!((entropy_term(&small) - (-3.879_378_833_343_364)).abs() < 1e-12);
        let unit = VarianceMap::constant(3, 3, 1.0).unwrap();
        assert!((entropy_term(&unit) - 1.418_938_533_204_672_7).abs() < 1e-12);
        assert!(VarianceMap::constant(2, 2, 0.0).is_err());
    }

    #[test]
    fn entropy_gradient_is_reciprocal() {
        let g = Tensor::from_fn([3, 4], |i| 0.1 + 0.05 * i as f64);
        let mut tape = Tape::new();
        let gv = tape.param(g.clone());
        let e = entropy_on_tape(&mut tape, gv).unwrap();
        tape.backward(e).unwrap();
        let grad = tape.grad(gv).unwrap();
        for (d, v) in grad.data().iter().zip(g.data()) {
            assert!((d - 1.0 / (12.0 * v)).abs() < 1e-8);
        }
    }

    #[test]
    fn entropy_is_monotone_in_each_pixel() {
        let base = Tensor::from_fn([2, 3], |i| 0.2 + 0.1 * i as f64);
        let e0 = entropy_term(&VarianceMap::new(base.clone()).unwrap());
        for i in 0..base.len() {
            let mut up = base.clone();
            up.data_mut()[i] += 1e-3;
            assert!(entropy_term(&VarianceMap::new(up).unwrap()) > e0);
        }
    }

    #[test]
    fn histogram_rules() {
        let binary = Mask::new(2, 2, vec![0.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(mask_histogram(&binary, 2).unwrap(), vec![1, 3]);
        let half = Mask::filled(3, 3, 0.5).unwrap();
        assert_eq!(mask_histogram(&half, 4).unwrap(), vec![0, 0, 9, 0]);
        let real = synthesize_real_mask(20, 20, 0.5, &NoisePrior::OBSERVED, 2).unwrap();
        assert_eq!(mask_histogram(&real, 2000).unwrap().iter().sum::<u64>(), 400);
        assert!(mask_histogram(&half, 1).is_err());
    }

    #[test]
    fn mask_sets_shapes_and_disjointness() {
        let base = synthesize_real_mask(40, 40, 0.5, &NoisePrior::NARROW, 9).unwrap();
        let (train, test) = build_mask_sets(&base, 8, 8, 6, 10, 1).unwrap();
        assert_eq!(train.len(), 6);
        assert_eq!(test.len(), 10);
        assert!(train.masks().iter().chain(test.masks()).all(|m| m.height() == 8 && m.width() == 8));
        assert_eq!(train.collisions_with(&test), 0);
        assert_eq!((train, test), build_mask_sets(&base, 8, 8, 6, 10, 1).unwrap());
    }

    #[test]
    fn full_size_crop_is_the_base() {
        let base = synthesize_real_mask(6, 6, 0.5, &NoisePrior::NARROW, 9).unwrap();
        assert_eq!(crop(&base, 0, 0, 6, 6).unwrap(), base);
        // with a full-size crop no distinct test crop exists
        assert!(matches!(build_mask_sets(&base, 6, 6, 1, 1, 0), Err(Error::Config(_))));
        assert!(matches!(build_mask_sets(&base, 7, 6, 1, 1, 0), Err(Error::Shape(_))));
    }
}
