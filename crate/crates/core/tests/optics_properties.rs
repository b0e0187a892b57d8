//! Physical invariants of propagation and the layered model.

use donn_core::field::{add_fields, intensity, ComplexField2D, GridSpec};
use donn_core::model::{forward_channel, forward_rgb, init_model, ModelConfig, SkipSpec};
use donn_core::propagation::{
    make_fresnel_kernel, make_sampled_kernel, propagate, propagate_adjoint, propagate_direct,
    propagate_padded,
};
use ndarray::Array2;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid(side: usize) -> GridSpec {
    GridSpec::new(side, 36e-6, 532e-9).unwrap()
}

fn random_field(g: GridSpec, seed: u64) -> ComplexField2D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = Array2::from_shape_simple_fn(g.shape(), || {
        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    });
    ComplexField2D::new(g, v).unwrap()
}

fn dot(a: &ComplexField2D, b: &ComplexField2D) -> Complex64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| x.conj() * y)
        .sum()
}

fn rel_l2(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

#[test]
fn sampled_kernel_equals_direct_sum_at_24_px() {
    let g = grid(24);
    let f = random_field(g, 3);
    for z in [0.01, 0.2794] {
        let k = make_sampled_kernel(g, z, 2).unwrap();
        let fast = propagate(&f, &k).unwrap();
        let slow = propagate_direct(&f, z).unwrap();
        assert!(rel_l2(fast.values(), slow.values()) < 1e-10);
    }
}

#[test]
fn direct_sum_refuses_large_grids() {
    let f = ComplexField2D::zeros(grid(65));
    assert!(propagate_direct(&f, 0.1).is_err());
}

#[test]
fn gaussian_beam_composes_over_distance() {
    let g = grid(64);
    let c = 31.5;
    let w = 6.0;
    let v = Array2::from_shape_fn(g.shape(), |(i, j)| {
        let r2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
        Complex64::new((-r2 / (w * w)).exp(), 0.0)
    });
    let f = ComplexField2D::new(g, v).unwrap();
    let z = 0.02;
    let k1 = make_fresnel_kernel(g, z, 2).unwrap();
    let k2 = make_fresnel_kernel(g, 2.0 * z, 2).unwrap();
    let twice = propagate(&propagate(&f, &k1).unwrap(), &k1).unwrap();
    let once = propagate(&f, &k2).unwrap();
    assert!(rel_l2(twice.values(), once.values()) <= 1e-6);
}

#[test]
fn sampled_adjoint_matches_inner_product() {
    let g = grid(16);
    let k = make_sampled_kernel(g, 0.05, 2).unwrap();
    let (f, h) = (random_field(g, 1), random_field(g, 2));
    let lhs = dot(&h, &propagate(&f, &k).unwrap());
    let rhs = dot(&propagate_adjoint(&h, &k).unwrap(), &f);
    assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm());
}

#[test]
fn detector_energy_never_exceeds_input_energy() {
    let cfg = ModelConfig::custom(16, 3, vec![]);
    let model = init_model(&cfg, 2).unwrap();
    let g = *model.grid();
    let fs = [random_field(g, 1), random_field(g, 2), random_field(g, 3)];
    let det = forward_rgb(&fs[0], &fs[1], &fs[2], &model).unwrap();
    let input: f64 = fs.iter().map(ComplexField2D::energy).sum();
    assert!(det.total() <= input * (1.0 + 1e-12));
}

#[test]
fn explicit_skip_composition_matches_model() {
    // 4 layers, skip 1 -> 4, checked against hand-written propagation
    let cfg = ModelConfig::custom(16, 4, vec![SkipSpec::new(1, 4).unwrap()]);
    let model = init_model(&cfg, 8).unwrap();
    let g = *model.grid();
    let f0 = random_field(g, 5);
    let k = make_fresnel_kernel(g, cfg.distance_m, 2).unwrap();
    let k3 = make_fresnel_kernel(g, 3.0 * cfg.distance_m, 2).unwrap();
    let modulate = |f: &ComplexField2D, l: usize| {
        let w = model.mask(0, l).modulation();
        ComplexField2D::new(g, f.values() * &w).unwrap()
    };
    let f1 = modulate(&propagate(&f0, &k).unwrap(), 0);
    let f2 = modulate(&propagate(&f1, &k).unwrap(), 1);
    let f3 = modulate(&propagate(&f2, &k).unwrap(), 2);
    let entering = add_fields(&f3, &propagate(&f1, &k3).unwrap()).unwrap();
    let f4 = modulate(&propagate(&entering, &k).unwrap(), 3);
    let out = forward_channel(&f0, model.channel(0)).unwrap();
    assert!(rel_l2(out.values(), f4.values()) <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn padded_propagation_is_unitary(seed in any::<u64>(), z in 0.001f64..0.5) {
        let g = grid(16);
        let f = random_field(g, seed);
        let k = make_fresnel_kernel(g, z, 2).unwrap();
        let out: f64 = propagate_padded(&f, &k).unwrap().iter().map(|v| v.norm_sqr()).sum();
        prop_assert!((out - f.energy()).abs() <= 1e-12 * f.energy());
    }

    #[test]
    fn cropping_only_loses_energy(seed in any::<u64>(), z in 0.001f64..0.5) {
        let g = grid(16);
        let f = random_field(g, seed);
        let k = make_fresnel_kernel(g, z, 2).unwrap();
        prop_assert!(propagate(&f, &k).unwrap().energy() <= f.energy() * (1.0 + 1e-12));
    }

    #[test]
    fn forward_channel_is_linear(seed in any::<u64>(), re in -3.0f64..3.0, im in -3.0f64..3.0) {
        let cfg = ModelConfig::custom(8, 3, vec![SkipSpec::new(1, 3).unwrap()]);
        let model = init_model(&cfg, seed).unwrap();
        let g = *model.grid();
        let (f, h) = (random_field(g, seed ^ 1), random_field(g, seed ^ 2));
        let a = Complex64::new(re, im);
        let combo = ComplexField2D::new(g, f.values() * a + h.values()).unwrap();
        let lhs = forward_channel(&combo, model.channel(0)).unwrap();
        let rhs = forward_channel(&f, model.channel(0)).unwrap().values() * a
            + forward_channel(&h, model.channel(0)).unwrap().values();
        prop_assert!(rel_l2(lhs.values(), &rhs) < 1e-12);
    }

    #[test]
    fn detector_ignores_global_input_phase(seed in any::<u64>(), phi in -7.0f64..7.0) {
        let model = init_model(&ModelConfig::custom(8, 2, vec![]), seed).unwrap();
        let g = *model.grid();
        let fs = [random_field(g, seed ^ 3), random_field(g, seed ^ 4), random_field(g, seed ^ 5)];
        let rot = Complex64::from_polar(1.0, phi);
        let turned: Vec<ComplexField2D> = fs.iter().map(|f| f.scale(rot)).collect();
        let a = forward_rgb(&fs[0], &fs[1], &fs[2], &model).unwrap();
        let b = forward_rgb(&turned[0], &turned[1], &turned[2], &model).unwrap();
        let scale = a.values().iter().fold(0.0f64, |m, v| m.max(*v));
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn perturbing_red_masks_leaves_green_and_blue_untouched(seed in any::<u64>()) {
        let mut model = init_model(&ModelConfig::custom(8, 2, vec![]), seed).unwrap();
        let g = *model.grid();
        let fs = [random_field(g, 1), random_field(g, 2), random_field(g, 3)];
        let before = model.channel_intensities([&fs[0], &fs[1], &fs[2]]).unwrap();
        model.mask_mut(0, 0).theta_mut().mapv_inplace(|t| t + 0.3);
        let after = model.channel_intensities([&fs[0], &fs[1], &fs[2]]).unwrap();
        prop_assert_ne!(before[0].values(), after[0].values());
        prop_assert_eq!(before[1].values(), after[1].values());
        prop_assert_eq!(before[2].values(), after[2].values());
    }

    #[test]
    fn intensity_of_sum_differs_from_sum_of_intensities_by_cross_term(seed in any::<u64>()) {
        let g = grid(8);
        let (a, b) = (random_field(g, seed), random_field(g, seed ^ 9));
        let sum = intensity(&add_fields(&a, &b).unwrap());
        let (ia, ib) = (intensity(&a), intensity(&b));
        for (((s, x), y), (fa, fb)) in sum.values().iter().zip(ia.values()).zip(ib.values()).zip(a.values().iter().zip(b.values())) {
            let cross = 2.0 * (fa * fb.conj()).re;
            prop_assert!((s - (x + y + cross)).abs() <= 1e-12 * (1.0 + s.abs()));
        }
    }
}
