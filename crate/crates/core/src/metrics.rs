//! Reconstruction quality, spectral fidelity and epistemic-uncertainty maps.
//!
//! Reconstructions are clipped to `[0, 1]` before PSNR and SSIM; the peak value is 1.

use ndgrad::Tensor;
use rayon::prelude::*;

use crate::backbone::SrnParams;
use crate::error::{Error, Result};
use crate::maskmodel::MaskSet;
use crate::optics::{encode, init_input, HsiCube, NoiseModel};
use crate::rng::derive_seed;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn same_shape(a: &HsiCube, b: &HsiCube) -> Result<()> {
    let sa = (a.channels(), a.height(), a.width());
    let sb = (b.channels(), b.height(), b.width());
    if sa != sb {
        return Err(Error::Shape(format!("cubes differ: {sa:?} vs {sb:?}")));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` when the clipped inputs agree exactly.
pub fn psnr(x_hat: &HsiCube, x: &HsiCube) -> Result<f64> {
    same_shape(x_hat, x)?;
    let n = x.data().len() as f64;
    let mse = x_hat
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| (a.clamp(0.0, 1.0) - b).powi(2))
        .sum::<f64>()
        / n;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable weighted sums over every valid window position.
fn blur(img: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..n).map(|i| k[i] * img[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..n).map(|i| k[i] * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Mean SSIM of two `h x w` planes over all valid window positions.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::Shape(format!("plane lengths {} and {} for {h}x{w}", a.len(), b.len())));
    }
    let k = gaussian_window();
    let mu_a = blur(a, h, w, &k);
    let mu_b = blur(b, h, w, &k);
    let sq = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let e_aa = blur(&sq(a, a), h, w, &k);
    let e_bb = blur(&sq(b, b), h, w, &k);
    let e_ab = blur(&sq(a, b), h, w, &k);
    let n = mu_a.len() as f64;
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
        })
        .sum();
    Ok(total / n)
}

/// SSIM averaged over channels, after clipping `x_hat`.
pub fn ssim(x_hat: &HsiCube, x: &HsiCube) -> Result<f64> {
    same_shape(x_hat, x)?;
    let (h, w) = (x.height(), x.width());
    let mut total = 0.0;
    for c in 0..x.channels() {
        let a: Vec<f64> = x_hat.channel(c).iter().map(|v| v.clamp(0.0, 1.0)).collect();
        total += ssim_plane(&a, x.channel(c), h, w)?;
    }
    Ok(total / x.channels() as f64)
}

/// Pearson correlation; `None` when either input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - ma, y - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Channel-by-channel correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCorrelation {
    pub channels: usize,
    /// Row-major `channels x channels`.
    pub matrix: Vec<f64>,
    /// Constant channels; their off-diagonal entries are reported as 0.
    pub degenerate: Vec<usize>,
}

impl SpectralCorrelation {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.channels + j]
    }
}

pub fn spectral_correlation(x: &HsiCube) -> SpectralCorrelation {
    let l = x.channels();
    let degenerate: Vec<usize> = (0..l)
        .filter(|&c| {
            let ch = x.channel(c);
            ch.iter().all(|&v| v == ch[0])
        })
        .collect();
    let mut matrix = vec![0.0; l * l];
    for i in 0..l {
        matrix[i * l + i] = 1.0;
        for j in i + 1..l {
            let r = pearson(x.channel(i), x.channel(j)).unwrap_or(0.0);
            matrix[i * l + j] = r;
            matrix[j * l + i] = r;
        }
    }
    SpectralCorrelation { channels: l, matrix, degenerate }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Patch {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveCorrelation {
    /// Pearson correlation, 0 when either curve is flat.
    pub value: f64,
    pub degenerate: bool,
    pub predicted: Vec<f64>,
    pub reference: Vec<f64>,
}

/// Per-channel mean intensity inside `patch`.
pub fn density_curve(x: &HsiCube, patch: Patch) -> Result<Vec<f64>> {
    if patch.height == 0
        || patch.width == 0
        || patch.top + patch.height > x.height()
        || patch.left + patch.width > x.width()
    {
        return Err(Error::Shape(format!(
            "patch {patch:?} outside {}x{} image",
            x.height(),
            x.width()
        )));
    }
    let n = (patch.height * patch.width) as f64;
    Ok((0..x.channels())
        .map(|c| {
            let mut s = 0.0;
            for r in patch.top..patch.top + patch.height {
                for col in patch.left..patch.left + patch.width {
                    s += x.get(r, col, c);
                }
            }
            s / n
        })
        .collect())
}

pub fn density_curve_correlation(x_hat: &HsiCube, x: &HsiCube, patch: Patch) -> Result<CurveCorrelation> {
    same_shape(x_hat, x)?;
    let predicted = density_curve(x_hat, patch)?;
    let reference = density_curve(x, patch)?;
    let r = pearson(&predicted, &reference);
    Ok(CurveCorrelation {
        value: r.unwrap_or(0.0),
        degenerate: r.is_none(),
        predicted,
        reference,
    })
}

/// Per-pixel spread of reconstructions over several masks.
#[derive(Debug, Clone, PartialEq)]
pub struct EpistemicMap {
    /// Population variance, `[channels, H, W]`.
    pub variance: Tensor,
    pub mean: HsiCube,
}

/// Per-pixel mean and population variance across equally shaped samples.
///
/// Values at each pixel are sorted before reduction, so the result does not
/// depend on sample order.
pub fn pixel_statistics(samples: &[Tensor]) -> Result<(Tensor, Tensor)> {
    let first = samples.first().ok_or_else(|| Error::Config("no samples".into()))?;
    if samples.iter().any(|s| s.shape() != first.shape()) {
        return Err(Error::Shape("samples differ in shape".into()));
    }
    let k = samples.len() as f64;
    let mut mean = Vec::with_capacity(first.len());
    let mut var = Vec::with_capacity(first.len());
    let mut buf = vec![0.0; samples.len()];
    for i in 0..first.len() {
        for (b, s) in buf.iter_mut().zip(samples) {
            *b = s.data()[i];
        }
        buf.sort_by(f64::total_cmp);
        let m = buf.iter().sum::<f64>() / k;
        mean.push(m);
        var.push(buf.iter().map(|v| (v - m).powi(2)).sum::<f64>() / k);
    }
    Ok((
        Tensor::new(first.shape().to_vec(), mean)?,
        Tensor::new(first.shape().to_vec(), var)?,
    ))
}

fn mask_seed(seed: u64, mask: &crate::optics::Mask) -> u64 {
    let bits: Vec<u64> = mask.data().iter().map(|v| v.to_bits()).collect();
    derive_seed(seed, &bits)
}

/// Encodes `x` with every mask, reconstructs each and reduces across masks.
///
/// Measurement noise for a mask is seeded from its contents, so permuting the
/// list leaves the result unchanged.
pub fn epistemic_map(
    model: &SrnParams,
    x: &HsiCube,
    masks: &MaskSet,
    step: usize,
    noise: &NoiseModel,
    seed: u64,
) -> Result<EpistemicMap> {
    let recons: Vec<Tensor> = masks
        .masks()
        .par_iter()
        .map(|m| {
            let y = encode(x, m, step, noise, mask_seed(seed, m))?;
            let x_in = init_input(&y, m, x.channels(), step)?;
            Ok(model.reconstruct(&x_in)?.into_tensor())
        })
        .collect::<Result<_>>()?;
    let (mean, variance) = pixel_statistics(&recons)?;
    Ok(EpistemicMap {
        variance,
        mean: HsiCube::from_tensor(mean)?,
    })
}

/// PSNR and SSIM of one scene under one test mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialEntry {
    pub scene: usize,
    pub trial: usize,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub count: usize,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let v = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

fn aggregate<'a>(entries: impl Iterator<Item = &'a TrialEntry>) -> Aggregate {
    let (p, s): (Vec<f64>, Vec<f64>) = entries.map(|e| (e.psnr_db, e.ssim)).unzip();
    let (psnr_mean, psnr_std) = mean_std(&p);
    let (ssim_mean, ssim_std) = mean_std(&s);
    Aggregate {
        psnr_mean,
        psnr_std,
        ssim_mean,
        ssim_std,
        count: p.len(),
    }
}

/// Scores over scenes and test trials for one scenario.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialReport {
    pub scenario: String,
    pub entries: Vec<TrialEntry>,
}

impl TrialReport {
    pub fn overall(&self) -> Aggregate {
        aggregate(self.entries.iter())
    }

    /// Aggregates over trials for each scene, in scene order.
    pub fn per_scene(&self) -> Vec<(usize, Aggregate)> {
        let mut scenes: Vec<usize> = self.entries.iter().map(|e| e.scene).collect();
        scenes.sort_unstable();
        scenes.dedup();
        scenes
            .into_iter()
            .map(|s| (s, aggregate(self.entries.iter().filter(|e| e.scene == s))))
            .collect()
    }

    /// Median over trials of the per-trial mean PSNR.
    pub fn median_trial_psnr(&self) -> f64 {
        let mut trials: Vec<usize> = self.entries.iter().map(|e| e.trial).collect();
        trials.sort_unstable();
        trials.dedup();
        let mut means: Vec<f64> = trials
            .iter()
            .map(|t| aggregate(self.entries.iter().filter(|e| e.trial == *t)).psnr_mean)
            .collect();
        median(&mut means)
    }
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
