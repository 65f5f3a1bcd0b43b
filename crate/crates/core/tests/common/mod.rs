#![allow(dead_code)]

use cassi::harness::RunConfig;
use cassi::optics::{HsiCube, Mask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Nested-loop measurement: `y[r][c + step*k] = sum_k x[k][r][c] * m[r][c]`.
pub fn naive_encode(x: &HsiCube, m: &Mask, step: usize) -> Vec<f64> {
    let (ch, h, w) = (x.channels(), x.height(), x.width());
    let wm = w + step * (ch - 1);
    let mut y = vec![0.0; h * wm];
    for k in 0..ch {
        for r in 0..h {
            for c in 0..w {
                y[r * wm + c + step * k] += x.get(r, c, k) * m.data()[r * w + c];
            }
        }
    }
    y
}

pub fn random_cube(rng: &mut ChaCha8Rng, ch: usize, h: usize, w: usize) -> HsiCube {
    let data = (0..ch * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
    HsiCube::new(ch, h, w, data).unwrap()
}

pub fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Mask {
    Mask::new(h, w, (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A run small enough for debug-speed tests.
pub fn tiny_config() -> RunConfig {
    RunConfig::parse(
        "train_scenes = 3\nval_scenes = 2\ntest_scenes = 2\nheight = 12\nwidth = 12\n\
         base_height = 20\nbase_width = 20\ntrials = 3\ntrain_masks = 2\n\
         backbone_width = 4\nbackbone_blocks = 1\ngst_channels = 2\ngst_proj_channels = 2\n\
         epochs_init = 1\nepochs_trn = 1\nepochs_val = 1\nrounds = 2\nbatch_size = 2",
    )
    .unwrap()
}
