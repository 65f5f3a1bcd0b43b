mod common;

use cassi::maskmodel::{
    build_mask_sets, entropy_term, mask_histogram, perturb_with, sample_perturbed, synthesize_real_mask, NoisePrior,
    VarianceMap,
};
use cassi::optics::Mask;
use ndgrad::Tensor;
use proptest::prelude::*;

proptest! {
    #[test]
    fn perturbed_masks_stay_in_unit_range(h in 1usize..6, w in 1usize..6, g in 1e-6f64..3.0, seed in any::<u64>()) {
        let m = common::random_mask(&mut common::rng(seed), h, w);
        let g = VarianceMap::constant(h, w, g).unwrap();
        let p = sample_perturbed(&m, &g, seed).unwrap();
        prop_assert!(p.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_variance_leaves_the_mask(h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let m = common::random_mask(&mut common::rng(seed), h, w);
        let eps = common::random_mask(&mut common::rng(seed ^ 1), h, w);
        let p = perturb_with(&m, &Tensor::zeros(vec![h, w]), eps.as_tensor()).unwrap();
        prop_assert_eq!(p, m);
    }

    #[test]
    fn histogram_conserves_pixels(h in 1usize..10, w in 1usize..10, bins in 2usize..50, seed in any::<u64>()) {
        let m = common::random_mask(&mut common::rng(seed), h, w);
        prop_assert_eq!(mask_histogram(&m, bins).unwrap().iter().sum::<u64>(), (h * w) as u64);
    }

    #[test]
    fn entropy_is_the_closed_form(g in 1e-6f64..10.0) {
        let want = (g * (2.0 * std::f64::consts::PI * std::f64::consts::E).sqrt()).ln();
        prop_assert!((entropy_term(&VarianceMap::constant(3, 2, g).unwrap()) - want).abs() < 1e-12);
    }

    #[test]
    fn test_masks_never_equal_training_masks(kt in 1usize..8, ke in 1usize..8, seed in any::<u64>()) {
        let base = synthesize_real_mask(16, 16, 0.5, &NoisePrior::NARROW, seed).unwrap();
        let (train, test) = build_mask_sets(&base, 8, 8, kt, ke, seed).unwrap();
        prop_assert_eq!((train.len(), test.len()), (kt, ke));
        prop_assert_eq!(train.collisions_with(&test), 0);
        prop_assert!(train.masks().iter().chain(test.masks()).all(|m| m.height() == 8 && m.width() == 8));
    }
}

#[test]
fn clamp_boundary() {
    let m = Mask::filled(1, 1, 0.9).unwrap();
    let g = Tensor::full(vec![1, 1], 0.5);
    let e = Tensor::full(vec![1, 1], 1.0);
    assert_eq!(perturb_with(&m, &g, &e).unwrap().data(), &[1.0]);
}

#[test]
fn histogram_placement() {
    let m = Mask::filled(2, 2, 0.5).unwrap();
    assert_eq!(mask_histogram(&m, 4).unwrap(), vec![0, 0, 4, 0]);
    let b = Mask::new(1, 3, vec![0.0, 1.0, 1.0]).unwrap();
    assert_eq!(mask_histogram(&b, 2).unwrap(), vec![1, 2]);
}
