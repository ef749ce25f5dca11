//! End-to-end phantom loop at library level: misalign, register, translate
//! with the paired-target oracle, segment, score, and close the loop by
//! regenerating landmarks from the synthesized segmentation.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spinesynth::diffusion::{
    sample, DiffusionSchedule, PredictionMode, SamplerConfig, SingleTargetDenoiser,
};
use spinesynth::geometry::RigidTransform;
use spinesynth::landmarks::{
    apply_rigid, apply_rigid_labels, extract_centroids, fit_rigid, regenerate_landmarks, FitMode,
};
use spinesynth::metrics::{dice_rows, DiceSubset};
use spinesynth::phantom::{generate_phantom, misalign, MisalignSpec, PhantomConfig};
use spinesynth::preprocess::normalize_ct;
use spinesynth::segment::threshold_segment;
use spinesynth::volume::{IntensitySpace, Volume};
use std::sync::Arc;

fn column_misalignment(cfg: &PhantomConfig) -> RigidTransform {
    let about = cfg.body_center_world(2);
    let rot = RigidTransform::rotation_about(Vector3::z(), 12f64.to_radians(), about);
    RigidTransform::translation_only(Vector3::new(3.0, -2.0, 4.0)).compose(&rot)
}

/// Oracle translation: run the diffusion sampler over the whole volume with
/// a denoiser that knows the paired target.
fn translate_with_oracle(target: &Volume, seed: u64) -> Volume {
    let sched = Arc::new(DiffusionSchedule::cosine(1000, 0.008).unwrap());
    let den = SingleTargetDenoiser::noise_mode(target.data.clone().into_dyn(), sched.clone());
    let cfg = SamplerConfig {
        mode: PredictionMode::Noise,
        eta: 0.0,
        steps: 4,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = target.dims();
    let out = sample(&den, None, &dims, &cfg, &sched, &mut rng).unwrap();
    Volume::new(
        out.into_dimensionality().unwrap(),
        target.geom.clone(),
        IntensitySpace::Normalized,
    )
    .unwrap()
}

#[test]
fn registration_translation_segmentation_dice() {
    let cfg = PhantomConfig::default();
    let p = generate_phantom(&cfg).unwrap();
    let t = column_misalignment(&cfg);
    let (ct_mis, labels_mis) = misalign(&p.ct, &p.labels, &MisalignSpec::Global(t.clone())).unwrap();
    let subs_mis = apply_rigid_labels(&p.subregions, &t, &p.subregions.grid()).unwrap();

    // Landmarks: automatic on both sides (phantom ground truth on the MR
    // side, misaligned labels on the CT side).
    let mr_lm = extract_centroids(&p.labels, Some(&p.subregions)).unwrap();
    let ct_lm = extract_centroids(&labels_mis, Some(&subs_mis)).unwrap();

    let (fit, report) = fit_rigid(&ct_lm, &mr_lm, FitMode::TwoPoint).unwrap();
    assert!(
        report.rms_mm < 0.5,
        "two-point fit on clean phantom: rms {}",
        report.rms_mm
    );

    // The fit must invert the misalignment.
    let recovered = fit.compose(&t);
    assert!(recovered.angle() < 0.01, "angle {}", recovered.angle());
    assert!(recovered.translation.norm() < 0.5);

    let ct_aligned = apply_rigid(&ct_mis, &fit, &p.ct.grid()).unwrap();
    let target = normalize_ct(&ct_aligned).unwrap();
    let synth = translate_with_oracle(&target, 99);

    let (seg, seg_subs) = threshold_segment(&synth, 0.3).unwrap();
    assert_eq!(seg.labels().len(), cfg.n_vertebrae);

    let rows = dice_rows(&seg, &p.labels, DiceSubset::All, None, None).unwrap();
    for r in &rows {
        assert!(
            r.dice >= 0.95,
            "vertebra {} dice {} below 0.95",
            r.vertebra,
            r.dice
        );
    }
    let post = dice_rows(
        &seg,
        &p.labels,
        DiceSubset::Posterior,
        Some(&seg_subs),
        Some(&p.subregions),
    )
    .unwrap();
    for r in &post {
        assert!(
            r.dice >= 0.90,
            "vertebra {} posterior dice {} below 0.90",
            r.vertebra,
            r.dice
        );
    }
}

#[test]
fn landmark_regeneration_reduces_rms() {
    let cfg = PhantomConfig::default();
    let p = generate_phantom(&cfg).unwrap();
    let t = column_misalignment(&cfg);
    let (ct_mis, labels_mis) = misalign(&p.ct, &p.labels, &MisalignSpec::Global(t.clone())).unwrap();
    let subs_mis = apply_rigid_labels(&p.subregions, &t, &p.subregions.grid()).unwrap();

    let ct_lm = extract_centroids(&labels_mis, Some(&subs_mis)).unwrap();
    // Iteration zero registers against manually placed (jittered) MR
    // landmarks.
    let mr_truth = extract_centroids(&p.labels, Some(&p.subregions)).unwrap();
    let mut jrng = ChaCha8Rng::seed_from_u64(7);
    let mr_manual = mr_truth.jittered(1.5, &mut jrng);

    let (fit0, report0) = fit_rigid(&ct_lm, &mr_manual, FitMode::TwoPoint).unwrap();
    let rms0 = report0.rms_mm;
    assert!(rms0 > 0.3, "jittered landmarks should leave residual");

    // Run the loop once: align, translate, segment, regenerate landmarks.
    let ct_aligned = apply_rigid(&ct_mis, &fit0, &p.ct.grid()).unwrap();
    let synth = translate_with_oracle(&normalize_ct(&ct_aligned).unwrap(), 123);
    let (seg, seg_subs) = threshold_segment(&synth, 0.3).unwrap();
    let regenerated = regenerate_landmarks(&seg, &seg_subs).unwrap();
    assert_eq!(regenerated.len(), cfg.n_vertebrae);

    let (_, report1) = fit_rigid(&ct_lm, &regenerated, FitMode::TwoPoint).unwrap();
    let rms1 = report1.rms_mm;
    assert!(
        rms1 < rms0,
        "one loop iteration must reduce registration RMS: {rms1} !< {rms0}"
    );
}
