//! `spinesynth register`: landmark files + aligned CT + fit report.

use super::ensure_dir;
use crate::config::{require_file, PipelineConfig, RegisterMode, RegisterSection};
use crate::error::{CliError, CliResult};
use spinesynth::landmarks::{
    apply_rigid, extract_centroids, fit_rigid, read_landmarks, write_landmarks, FitMode,
    LandmarkSet,
};
use spinesynth::nifti::{read_labels, read_volume, write_volume};

fn load_side(
    labels: &Option<std::path::PathBuf>,
    subregions: &Option<std::path::PathBuf>,
    landmarks: &Option<std::path::PathBuf>,
    side: &str,
) -> CliResult<LandmarkSet> {
    if let Some(lm) = landmarks {
        if !lm.exists() {
            return Err(CliError::validation(format!(
                "{side} landmark file {lm:?} does not exist"
            )));
        }
        return Ok(read_landmarks(lm)?);
    }
    let labels_path = labels.as_ref().ok_or_else(|| {
        CliError::validation(format!(
            "register needs {side}_landmarks or {side}_labels"
        ))
    })?;
    if !labels_path.exists() {
        return Err(CliError::validation(format!(
            "{side} labels {labels_path:?} do not exist"
        )));
    }
    let label_vol = read_labels(labels_path)?;
    let sub_vol = match subregions {
        Some(p) => {
            if !p.exists() {
                return Err(CliError::validation(format!(
                    "{side} subregions {p:?} do not exist"
                )));
            }
            Some(read_labels(p)?)
        }
        None => None,
    };
    Ok(extract_centroids(&label_vol, sub_vol.as_ref())?)
}

fn validate_two_point(set: &LandmarkSet, side: &str) -> CliResult<()> {
    for l in &set.entries {
        if l.spinous.is_none() {
            return Err(CliError::validation(format!(
                "two-point mode: {side} landmarks miss a spinous point for vertebra {}",
                l.id
            )));
        }
    }
    Ok(())
}

pub fn run(cfg: &PipelineConfig) -> CliResult<()> {
    let r: &RegisterSection = &cfg.register;
    let moving_ct_path = require_file(&r.moving_ct, "register.moving_ct")?;
    ensure_dir(&r.out_dir)?;

    if r.mode == RegisterMode::None {
        // Pass-through copy, byte for byte.
        let out = r.out_dir.join("aligned_ct.nii.gz");
        let bytes = std::fs::read(&moving_ct_path)
            .map_err(|e| CliError::runtime(format!("{moving_ct_path:?}: {e}")))?;
        std::fs::write(&out, bytes).map_err(|e| CliError::runtime(format!("{out:?}: {e}")))?;
        let report = serde_json::json!({
            "mode": "none",
            "rms_mm": 0.0,
            "collinear": false,
            "n_points": 0,
        });
        std::fs::write(
            r.out_dir.join("fit_report.json"),
            serde_json::to_string_pretty(&report).unwrap() + "\n",
        )
        .map_err(|e| CliError::runtime(e.to_string()))?;
        println!("register: mode none, copied input");
        return Ok(());
    }

    // All landmark validation happens before any volume work.
    let moving = load_side(
        &r.moving_labels,
        &r.moving_subregions,
        &r.moving_landmarks,
        "moving",
    )?;
    let fixed = load_side(&r.fixed_labels, &r.fixed_subregions, &r.fixed_landmarks, "fixed")?;
    let fit_mode = match r.mode {
        RegisterMode::OnePoint => FitMode::OnePoint,
        RegisterMode::TwoPoint => FitMode::TwoPoint,
        RegisterMode::None => unreachable!(),
    };
    if fit_mode == FitMode::TwoPoint {
        validate_two_point(&moving, "moving")?;
        validate_two_point(&fixed, "fixed")?;
    }

    let (transform, report) = fit_rigid(&moving, &fixed, fit_mode)?;

    let moving_ct = read_volume(&moving_ct_path)?;
    let aligned = apply_rigid(&moving_ct, &transform, &moving_ct.grid())?;

    write_landmarks(&moving, r.out_dir.join("moving_landmarks.txt"))?;
    write_landmarks(&fixed, r.out_dir.join("fixed_landmarks.txt"))?;
    write_volume(&aligned, r.out_dir.join("aligned_ct.nii.gz"))?;

    let rot = transform.rotation;
    let json = serde_json::json!({
        "mode": match fit_mode {
            FitMode::OnePoint => "one-point",
            FitMode::TwoPoint => "two-point",
        },
        "rms_mm": report.rms_mm,
        "collinear": report.collinear,
        "n_points": report.n_points,
        "singular_values": report.singular_values,
        "rotation": (0..3).map(|r| (0..3).map(|c| rot[(r, c)]).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "translation_mm": [transform.translation.x, transform.translation.y, transform.translation.z],
        "rotation_angle_deg": transform.angle().to_degrees(),
    });
    std::fs::write(
        r.out_dir.join("fit_report.json"),
        serde_json::to_string_pretty(&json).unwrap() + "\n",
    )
    .map_err(|e| CliError::runtime(e.to_string()))?;

    println!(
        "register: {} points, rms {:.4} mm, collinear {}",
        report.n_points, report.rms_mm, report.collinear
    );
    Ok(())
}
