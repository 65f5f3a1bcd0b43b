//! Synthetic hyperspectral scenes: Gaussian blobs, each with a smooth spectrum.

use rand::Rng;

use crate::error::{Error, Result};
use crate::optics::HsiCube;
use crate::rng::{stream, Stream};

/// `count` scenes of shape `[channels, height, width]` with values in `[0, 1]`.
///
/// Values are rounded to 32-bit floats so that cube files store them exactly.
pub fn gen_synth_scenes(count: usize, height: usize, width: usize, channels: usize, seed: u64) -> Result<Vec<HsiCube>> {
    if height < 4 || width < 4 || channels < 4 {
        return Err(Error::Config(format!(
            "scene dimensions must be at least 4, got {height}x{width}x{channels}"
        )));
    }
    (0..count).map(|k| scene(height, width, channels, seed, k)).collect()
}

struct Blob {
    row: f64,
    col: f64,
    radius: f64,
    amplitude: f64,
    peak: f64,
    spread: f64,
}

fn scene(h: usize, w: usize, l: usize, seed: u64, k: usize) -> Result<HsiCube> {
    let mut rng = stream(seed, Stream::Scenes, &[k as u64]);
    let side = h.min(w) as f64;
    let lf = l as f64;
    let blobs: Vec<Blob> = (0..rng.random_range(3..=6))
        .map(|_| Blob {
            row: rng.random_range(0.0..h as f64),
            col: rng.random_range(0.0..w as f64),
            radius: rng.random_range(0.12..0.35) * side,
            amplitude: rng.random_range(0.3..1.0),
            peak: rng.random_range(0.0..lf - 1.0),
            spread: rng.random_range(0.3..1.0) * lf,
        })
        .collect();
    let background = rng.random_range(0.02..0.1);

    let mut data = vec![0.0; l * h * w];
    for c in 0..l {
        for r in 0..h {
            for col in 0..w {
                let mut v = background;
                for b in &blobs {
                    let d2 = (r as f64 - b.row).powi(2) + (col as f64 - b.col).powi(2);
                    let spatial = (-d2 / (2.0 * b.radius * b.radius)).exp();
                    let spectral = (-(c as f64 - b.peak).powi(2) / (2.0 * b.spread * b.spread)).exp();
                    v += b.amplitude * spatial * spectral;
                }
                data[(c * h + r) * w + col] = v;
            }
        }
    }
    let max = data.iter().copied().fold(0.0, f64::max);
    for v in &mut data {
        *v = ((*v / max) as f32) as f64;
    }
    HsiCube::new(l, h, w, data)
}
