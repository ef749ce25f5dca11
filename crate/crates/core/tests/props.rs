//! Property tests for the invariants that hold over whole input families.

use nalgebra::Vector3;
use ndarray::{Array2, Array3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spinesynth::geometry::{Geometry, RigidTransform};
use spinesynth::landmarks::{fit_rigid, FitMode, Landmark, LandmarkSet};
use spinesynth::preprocess::{
    normalize_ct, pad_to_multiple, random_crop_2d, stitch_2d, unpad, Window2,
};
use spinesynth::volume::{IntensitySpace, Volume};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalize_ct_bounded_and_stable(values in proptest::collection::vec(-3000.0f32..4000.0, 8)) {
        let data = Array3::from_shape_vec((2, 2, 2), values).unwrap();
        let v = Volume::new(data, Geometry::isotropic(1.0), IntensitySpace::Hounsfield).unwrap();
        let n = normalize_ct(&v).unwrap();
        for &x in n.data.iter() {
            prop_assert!((-1.0..=1.0).contains(&x));
        }
        // Clamping is idempotent: renormalizing the scaled-back result
        // changes nothing.
        let back = Volume::new(
            n.data.mapv(|x| x * 1000.0),
            n.geom.clone(),
            IntensitySpace::Hounsfield,
        ).unwrap();
        let twice = normalize_ct(&back).unwrap();
        prop_assert_eq!(n.data, twice.data);
    }

    #[test]
    fn crop_output_size_and_determinism(h in 10usize..80, w in 10usize..80, seed in 0u64..1000) {
        let img = Array2::from_shape_fn((h, w), |(i, j)| ((i * 31 + j * 17) % 97) as f32);
        let a = random_crop_2d(&img, 48, &mut ChaCha8Rng::seed_from_u64(seed));
        let b = random_crop_2d(&img, 48, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(a.dim(), (48, 48));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn pad_unpad_round_trip(
        nx in 1usize..20,
        ny in 1usize..20,
        nz in 1usize..20,
        m in prop::sample::select(vec![2usize, 4, 8]),
    ) {
        let data = Array3::from_shape_fn((nx, ny, nz), |(i, j, k)| (i + 2 * j + 3 * k) as f32);
        let v = Volume::new(data.clone(), Geometry::isotropic(1.0), IntensitySpace::Hounsfield).unwrap();
        let (padded, rec) = pad_to_multiple(&v, m);
        for d in padded.dims() {
            prop_assert_eq!(d % m, 0);
        }
        let back = unpad(&padded, &rec);
        prop_assert_eq!(back.data, data);
    }

    #[test]
    fn stitch_single_tile_is_identity(h in 3usize..24, w in 3usize..24) {
        let tile = Array2::from_shape_fn((h, w), |(i, j)| (i * w + j) as f32);
        let win = Window2 { start: [0, 0], size: [h, w] };
        let out = stitch_2d(&[(tile.clone(), win)], [h, w]).unwrap();
        prop_assert_eq!(out, tile);
    }

    #[test]
    fn rigid_fit_recovers_exact_transforms(
        angle in -0.5f64..0.5,
        ax in -1.0f64..1.0,
        ay in -1.0f64..1.0,
        tx in -50.0f64..50.0,
        ty in -50.0f64..50.0,
        tz in -50.0f64..50.0,
    ) {
        let axis = Vector3::new(ax, ay, 1.0);
        let t = RigidTransform {
            rotation: nalgebra::Rotation3::from_axis_angle(
                &nalgebra::Unit::new_normalize(axis), angle).into_inner(),
            translation: Vector3::new(tx, ty, tz),
        };
        let src = LandmarkSet {
            entries: vec![
                Landmark { id: 1, body: Vector3::new(0.0, 0.0, 0.0), spinous: Some(Vector3::new(0.0, 30.0, 2.0)) },
                Landmark { id: 2, body: Vector3::new(2.0, -1.0, 36.0), spinous: Some(Vector3::new(1.0, 29.0, 37.0)) },
                Landmark { id: 3, body: Vector3::new(-1.0, 1.5, 71.0), spinous: Some(Vector3::new(-2.0, 31.0, 70.0)) },
            ],
        };
        let dst = src.transformed(&t);
        let (got, report) = fit_rigid(&src, &dst, FitMode::TwoPoint).unwrap();
        prop_assert!(report.rms_mm < 1e-8);
        prop_assert!((got.rotation - t.rotation).abs().max() < 1e-8);
        prop_assert!((got.translation - t.translation).abs().max() < 1e-7);
    }

    #[test]
    fn jitter_stays_in_unit_range(seed in 0u64..500, fill in -1.0f32..1.0) {
        let data = Array3::from_elem((3, 3, 3), fill);
        let v = Volume::new(data, Geometry::isotropic(1.0), IntensitySpace::Normalized).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = spinesynth::augment::intensity_jitter(&v, 0.2, 0.2, &mut rng).unwrap();
        for &x in out.data.iter() {
            prop_assert!((-1.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn worst_p_is_brute_force_max(ps in proptest::collection::vec(0.0f64..1.0, 1..40)) {
        let brute = ps.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert_eq!(spinesynth::metrics::worst_p(&ps).unwrap(), brute);
    }
}
