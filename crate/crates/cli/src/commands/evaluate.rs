//! `spinesynth evaluate`: masked image-quality metrics on fixed-size crops
//! (one per segmented slice), Dice on the segmenter output, and paired
//! t-tests between methods.

use super::{ensure_dir, read_normalized};
use crate::config::{require_file, EvaluateSection, PipelineConfig};
use crate::error::{CliError, CliResult};
use ndarray::{Array2, Axis};
use spinesynth::metrics::{dice_rows, l1, mse, paired_ttest, psnr, spine_mask, ssim, vifp, DiceSubset};
use spinesynth::nifti::read_labels;
use spinesynth::report::{DiceReportRow, ImageRow, MetricsReport, TTestRow};
use spinesynth::segment::{exclude_unsupported, ExclusionRules, Segmenter, ThresholdSegmenter};
use spinesynth::volume::{check_same_grid, LabelVolume, Volume};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const PSNR_PEAK: f64 = 1.0;

pub fn run(cfg: &PipelineConfig) -> CliResult<()> {
    let e = &cfg.evaluate;
    if e.methods.is_empty() {
        return Err(CliError::validation("evaluate.methods is empty"));
    }
    let report = execute(cfg, &e.methods, &e.out_dir)?;
    let agg = report.aggregate_json();
    println!(
        "evaluate: {} methods, {} crops, {} dice rows -> {}",
        e.methods.len(),
        report.image_rows.len(),
        report.dice_rows.len(),
        e.out_dir.display()
    );
    if let Some(worst) = agg["worst_p"].as_f64() {
        println!("evaluate: worst p-value {worst:.4}");
    }
    Ok(())
}

/// Centered fixed-size crop window around the labeled pixels of a slice.
fn crop_window(seg: &Array2<u16>, crop: usize) -> [usize; 2] {
    let (h, w) = seg.dim();
    let mut cy = 0.0f64;
    let mut cx = 0.0f64;
    let mut n = 0.0f64;
    for ((y, x), &s) in seg.indexed_iter() {
        if s != 0 {
            cy += y as f64;
            cx += x as f64;
            n += 1.0;
        }
    }
    if n == 0.0 {
        return [0, 0];
    }
    let center = [cy / n, cx / n];
    let half = crop as f64 / 2.0;
    let start_y = (center[0] - half).round().max(0.0) as usize;
    let start_x = (center[1] - half).round().max(0.0) as usize;
    [
        start_y.min(h.saturating_sub(crop)),
        start_x.min(w.saturating_sub(crop)),
    ]
}

fn crop_image(img: &Array2<f32>, start: [usize; 2], crop: usize, fill: f32) -> Array2<f32> {
    let (h, w) = img.dim();
    Array2::from_shape_fn((crop, crop), |(y, x)| {
        let sy = start[0] + y;
        let sx = start[1] + x;
        if sy < h && sx < w {
            img[[sy, sx]]
        } else {
            fill
        }
    })
}

fn crop_labels(seg: &Array2<u16>, start: [usize; 2], crop: usize) -> Array2<u16> {
    let (h, w) = seg.dim();
    Array2::from_shape_fn((crop, crop), |(y, x)| {
        let sy = start[0] + y;
        let sx = start[1] + x;
        if sy < h && sx < w {
            seg[[sy, sx]]
        } else {
            0
        }
    })
}

struct Reference {
    ct: Volume,
    labels: LabelVolume,
    subregions: Option<LabelVolume>,
    volume_id: String,
}

fn load_reference(e: &EvaluateSection) -> CliResult<Reference> {
    let ct_path = require_file(&e.reference_ct, "evaluate.reference_ct")?;
    let labels_path = require_file(&e.reference_labels, "evaluate.reference_labels")?;
    let ct = read_normalized(&ct_path)?;
    let labels = read_labels(&labels_path)?;
    check_same_grid(&ct.grid(), &labels.grid(), "evaluate reference")
        .map_err(|err| CliError::validation(err.to_string()))?;
    let subregions = match &e.reference_subregions {
        Some(p) => {
            if !p.exists() {
                return Err(CliError::validation(format!(
                    "evaluate.reference_subregions {p:?} does not exist"
                )));
            }
            Some(read_labels(p)?)
        }
        None => None,
    };
    let volume_id = ct_path
        .file_stem()
        .map(|s| s.to_string_lossy().trim_end_matches(".nii").to_string())
        .unwrap_or_else(|| "volume".to_string());
    Ok(Reference {
        ct,
        labels,
        subregions,
        volume_id,
    })
}

/// Evaluate every method volume against the reference; write the report into
/// `out_dir` and return it.
pub fn execute(
    cfg: &PipelineConfig,
    methods: &BTreeMap<String, PathBuf>,
    out_dir: &Path,
) -> CliResult<MetricsReport> {
    let e = &cfg.evaluate;
    let reference = load_reference(e)?;
    let dims = reference.ct.dims();

    // One crop per segmented slice.
    let slices: Vec<usize> = (0..dims[0])
        .filter(|&i| {
            reference
                .labels
                .data
                .index_axis(Axis(0), i)
                .iter()
                .any(|&l| l != 0)
        })
        .collect();
    if slices.is_empty() {
        return Err(CliError::validation(
            "reference labels are empty; nothing to evaluate",
        ));
    }

    let segmenter = ThresholdSegmenter {
        bone_threshold: e.bone_threshold,
        min_component_voxels: e.min_component_voxels,
        ..Default::default()
    };
    let rules = ExclusionRules {
        sacrum_labels: e.exclude_sacrum_labels.clone(),
        boundary_fraction: e.exclude_boundary_fraction,
    };

    let mut report = MetricsReport::default();
    // Per-method PSNR series (paired across methods by crop) and Dice maps
    // (paired by vertebra id) for the t-tests.
    let mut psnr_series: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut dice_maps: BTreeMap<String, BTreeMap<u16, f64>> = BTreeMap::new();

    for (name, path) in methods {
        if !path.exists() {
            return Err(CliError::validation(format!(
                "evaluate.methods.{name} {path:?} does not exist"
            )));
        }
        let synth = read_normalized(path)?;
        if synth.dims() != dims {
            return Err(CliError::validation(format!(
                "method {name} dims {:?} do not match reference {dims:?}",
                synth.dims()
            )));
        }

        let mut psnrs = Vec::with_capacity(slices.len());
        for &si in &slices {
            let seg_slice = reference.labels.data.index_axis(Axis(0), si).to_owned();
            let start = crop_window(&seg_slice, e.crop);
            let seg_crop = crop_labels(&seg_slice, start, e.crop);
            let ref_crop = crop_image(
                &reference.ct.data.index_axis(Axis(0), si).to_owned(),
                start,
                e.crop,
                0.0,
            );
            let synth_crop = crop_image(
                &synth.data.index_axis(Axis(0), si).to_owned(),
                start,
                e.crop,
                0.0,
            );
            let ref_masked = spine_mask(&ref_crop, &seg_crop, e.mask_radius)?;
            let synth_masked = spine_mask(&synth_crop, &seg_crop, e.mask_radius)?;

            let row = ImageRow {
                method: name.clone(),
                volume_id: reference.volume_id.clone(),
                crop_id: format!("s{si:04}"),
                l1: l1(&ref_masked, &synth_masked)?,
                mse: mse(&ref_masked, &synth_masked)?,
                psnr_db: psnr(&ref_masked, &synth_masked, PSNR_PEAK)?,
                ssim: ssim(&ref_masked, &synth_masked, PSNR_PEAK)?,
                vifp: vifp(&ref_masked, &synth_masked)?,
            };
            psnrs.push(row.psnr_db);
            report.image_rows.push(row);
        }
        psnr_series.insert(name.clone(), psnrs);

        // Downstream Dice through the segmenter.
        let (seg_raw, seg_subs) = segmenter.segment(&synth)?;
        let seg = exclude_unsupported(&seg_raw, &rules);
        let ref_excluded = exclude_unsupported(&reference.labels, &rules);
        let rows = dice_rows(&seg, &ref_excluded, DiceSubset::All, None, None)?;
        let mut dmap = BTreeMap::new();
        for r in &rows {
            report.dice_rows.push(DiceReportRow {
                method: name.clone(),
                volume_id: reference.volume_id.clone(),
                vertebra_id: r.vertebra,
                subset: "all".to_string(),
                dice: r.dice,
            });
            dmap.insert(r.vertebra, r.dice);
        }
        dice_maps.insert(name.clone(), dmap);
        if e.posterior {
            if let Some(ref_subs) = &reference.subregions {
                let rows = dice_rows(
                    &seg,
                    &ref_excluded,
                    DiceSubset::Posterior,
                    Some(&seg_subs),
                    Some(ref_subs),
                )?;
                for r in &rows {
                    report.dice_rows.push(DiceReportRow {
                        method: name.clone(),
                        volume_id: reference.volume_id.clone(),
                        vertebra_id: r.vertebra,
                        subset: "posterior".to_string(),
                        dice: r.dice,
                    });
                }
            }
        }
    }

    // Paired t-tests between every method pair, on per-crop PSNR and on
    // per-vertebra Dice.
    let names: Vec<&String> = methods.keys().collect();
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            let pair = format!("{}-vs-{}", names[i], names[j]);
            let a = &psnr_series[names[i]];
            let b = &psnr_series[names[j]];
            if a.iter().chain(b.iter()).all(|v| v.is_finite()) {
                let t = paired_ttest(a, b)?;
                report.ttest_rows.push(TTestRow {
                    pair: pair.clone(),
                    metric: "psnr".to_string(),
                    t: t.t,
                    p: t.p,
                    n: t.n,
                });
            }
            let da = &dice_maps[names[i]];
            let db = &dice_maps[names[j]];
            let common: Vec<u16> = da.keys().filter(|k| db.contains_key(k)).cloned().collect();
            if common.len() >= 2 {
                let xa: Vec<f64> = common.iter().map(|k| da[k]).collect();
                let xb: Vec<f64> = common.iter().map(|k| db[k]).collect();
                let t = paired_ttest(&xa, &xb)?;
                report.ttest_rows.push(TTestRow {
                    pair,
                    metric: "dice".to_string(),
                    t: t.t,
                    p: t.p,
                    n: t.n,
                });
            }
        }
    }

    ensure_dir(out_dir)?;
    report.write_all(out_dir)?;
    Ok(report)
}
