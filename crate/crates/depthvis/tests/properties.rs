//! Property tests for invariants that hold across the whole input space,
//! not just on hand-picked fixtures: metric identities, operator algebra,
//! normal-map guarantees, and the determinism contracts of the stochastic
//! helpers.

use depthvis::geometry::{normals_from_depth, render, LightRig, NormalModel};
use depthvis::harness::degradation_pool;
use depthvis::loss::lap1;
use depthvis::metrics::{
    badpix_d, badpix_v, dssim_v, pearson, rmse_d, rmse_v, spearman, BadPixThreshold, SsimParams,
};
use depthvis::resample::{downsample_grid, ResampleModel, Resampler};
use depthvis::{DepthKind, DepthMap, Grid};
use proptest::prelude::*;

const W: usize = 16;
const H: usize = 16;

/// Positive depth values away from zero so multiplicative perturbations
/// and normal computations stay well conditioned.
fn depth_values() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(1.0..100.0f64, W * H)
}

fn map_from(values: Vec<f64>) -> DepthMap {
    DepthMap::new(W, H, values, DepthKind::OrthogonalDepth).expect("positive values")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_vanish_on_identical_maps(values in depth_values()) {
        let map = map_from(values);
        let rig = LightRig::default();
        let model = NormalModel::height_field();
        prop_assert_eq!(rmse_d(&map, &map, None).unwrap(), 0.0);
        prop_assert_eq!(rmse_v(&map, &map, &rig, model).unwrap(), 0.0);
        let bad = badpix_d(&map, &map, BadPixThreshold::Absolute(1e-12)).unwrap();
        prop_assert_eq!(bad.fraction, 0.0);
        let normals = normals_from_depth(&map, model).unwrap();
        let shaded = render(&normals, rig.extra()).unwrap();
        prop_assert_eq!(dssim_v(&shaded, &shaded, SsimParams::default()).unwrap(), 0.0);
        prop_assert_eq!(badpix_v(&shaded, &shaded, 5).unwrap(), 0.0);
    }

    #[test]
    fn rmse_d_is_symmetric(a in depth_values(), b in depth_values()) {
        let (ma, mb) = (map_from(a), map_from(b));
        let ab = rmse_d(&ma, &mb, None).unwrap();
        let ba = rmse_d(&mb, &ma, None).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn badpix_fraction_shrinks_as_threshold_grows(
        a in depth_values(),
        b in depth_values(),
        tau in 0.01..10.0f64,
    ) {
        let (ma, mb) = (map_from(a), map_from(b));
        let tight = badpix_d(&ma, &mb, BadPixThreshold::Absolute(tau)).unwrap();
        let loose = badpix_d(&ma, &mb, BadPixThreshold::Absolute(2.0 * tau)).unwrap();
        prop_assert!(loose.fraction <= tight.fraction);
        prop_assert!((0.0..=1.0).contains(&tight.fraction));
    }

    #[test]
    fn lap1_is_nonnegative_and_zero_only_at_equality(
        a in depth_values(),
        b in depth_values(),
    ) {
        let ga = Grid::from_vec(W, H, a).unwrap();
        let gb = Grid::from_vec(W, H, b).unwrap();
        let cross = lap1(&ga, &gb, 3).unwrap();
        prop_assert!(cross.value >= 0.0);
        // At equality the loss is exactly zero and so is its subgradient.
        let same = lap1(&ga, &ga, 3).unwrap();
        prop_assert_eq!(same.value, 0.0);
        prop_assert!(same.gradient.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn normals_are_unit_and_renders_stay_in_range(values in depth_values()) {
        let map = map_from(values);
        let normals = normals_from_depth(&map, NormalModel::height_field()).unwrap();
        for y in 0..H {
            for x in 0..W {
                if normals.valid(x, y) {
                    let n = normals.vector(x, y);
                    prop_assert!((n.norm() - 1.0).abs() < 1e-12);
                }
            }
        }
        for light in LightRig::default().lights() {
            let shaded = render(&normals, light).unwrap();
            prop_assert!(shaded
                .values
                .data()
                .iter()
                .all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
        }
    }

    #[test]
    fn dssim_and_badpix_v_stay_in_their_ranges(
        a in depth_values(),
        b in depth_values(),
    ) {
        let (ma, mb) = (map_from(a), map_from(b));
        let model = NormalModel::height_field();
        let light = LightRig::default().extra();
        let ra = render(&normals_from_depth(&ma, model).unwrap(), light).unwrap();
        let rb = render(&normals_from_depth(&mb, model).unwrap(), light).unwrap();
        let d = dssim_v(&ra, &rb, SsimParams::default()).unwrap();
        prop_assert!((0.0..=2.0).contains(&d), "dssim {}", d);
        let f = badpix_v(&ra, &rb, 5).unwrap();
        prop_assert!((0.0..=1.0).contains(&f), "badpix_v {}", f);
    }

    #[test]
    fn downsampling_is_linear_and_constant_preserving(
        values in depth_values(),
        k in 0.1..10.0f64,
        model in prop_oneof![Just(ResampleModel::Box), Just(ResampleModel::Nearest)],
    ) {
        let grid = Grid::from_vec(W, H, values).unwrap();
        let r = Resampler::new(model, 4).unwrap();
        let down = downsample_grid(&grid, r).unwrap();
        let scaled_first = {
            let mut g = grid.clone();
            for v in g.data_mut() { *v *= k; }
            downsample_grid(&g, r).unwrap()
        };
        for (a, b) in scaled_first.data().iter().zip(down.data()) {
            prop_assert!((a - k * b).abs() <= 1e-9 * b.abs().max(1.0));
        }
        let constant = Grid::filled(W, H, 3.25);
        let down_const = downsample_grid(&constant, r).unwrap();
        prop_assert!(down_const.data().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn nearest_downsampling_picks_block_corners(values in depth_values()) {
        let grid = Grid::from_vec(W, H, values).unwrap();
        let r = Resampler::new(ResampleModel::Nearest, 4).unwrap();
        let down = downsample_grid(&grid, r).unwrap();
        for y in 0..H / 4 {
            for x in 0..W / 4 {
                prop_assert_eq!(down.at(x, y), grid.at(4 * x, 4 * y));
            }
        }
    }

    #[test]
    fn degradation_pool_is_deterministic_for_any_seed_and_strength(
        values in depth_values(),
        seed in any::<u64>(),
        strength in 0.0..2.0f64,
    ) {
        let map = map_from(values);
        let a = degradation_pool(&map, seed, strength).unwrap();
        let b = degradation_pool(&map, seed, strength).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (va, vb) in a.iter().zip(&b) {
            prop_assert_eq!(&va.label, &vb.label);
            prop_assert_eq!(va.map.values().data(), vb.map.values().data());
            prop_assert!(va.map.values().data().iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn correlations_respect_affine_and_monotone_transforms(
        base in proptest::collection::vec(-100.0..100.0f64, 8..32),
        slope in 0.1..10.0f64,
        offset in -50.0..50.0f64,
    ) {
        // Nudge duplicates apart so the rank transform is unambiguous.
        let mut xs = base;
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for i in 1..xs.len() {
            if xs[i] - xs[i - 1] < 1e-6 {
                xs[i] = xs[i - 1] + 1e-3;
            }
        }
        let affine: Vec<f64> = xs.iter().map(|x| slope * x + offset).collect();
        let monotone: Vec<f64> = xs.iter().map(|x| x + x * x * x / 1e4).collect();
        let p = pearson(&xs, &affine).unwrap();
        prop_assert!((p - 1.0).abs() < 1e-9, "pearson under affine map: {}", p);
        let s = spearman(&xs, &monotone).unwrap();
        prop_assert!((s - 1.0).abs() < 1e-12, "spearman under monotone map: {}", s);
        let p2 = pearson(&xs, &monotone).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&p2));
    }
}
