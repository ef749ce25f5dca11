//! `spinesynth translate`: MR -> synthetic CT through the diffusion sampler.
//!
//! 2D recipe: slice sagittally, pad/tile to fixed-size crops, sample each
//! crop, feather-stitch the tiles and restack the slices.
//!
//! 3D recipe: resample to isotropic spacing, pad every side to a multiple of
//! 8, split into patches conditioned on the MR patch plus full-extent
//! coordinate ramps, sample each patch, stitch, un-pad and resample back to
//! the native grid.

use super::{ensure_dir, item_rng, read_normalized};
use crate::config::{
    require_file, DenoiserKind, MethodName, ModeName, PipelineConfig, Recipe, TranslateSection,
};
use crate::error::{CliError, CliResult};
use ndarray::{Array2, Array3, ArrayD, Axis};
use rayon::prelude::*;
use spinesynth::diffusion::{
    sample, Denoiser, DiffusionSchedule, ExternalPredictionDenoiser, PredictionMode,
    SamplerConfig, SamplerMethod, ScalarGaussianPosteriorDenoiser, SingleTargetDenoiser,
    ZeroDenoiser,
};
use spinesynth::nifti::write_volume;
use spinesynth::preprocess::{
    coordinate_ramps, grid_with_spacing, pad_image_to, pad_to_multiple, patch_windows,
    resample_scalar, stitch_2d, stitch_3d, tile_windows_2d, unpad, Window2, Window3,
};
use spinesynth::volume::{IntensitySpace, Volume};
use std::path::Path;
use std::sync::Arc;

pub fn run(cfg: &PipelineConfig) -> CliResult<()> {
    let out = cfg
        .translate
        .out
        .clone()
        .ok_or_else(|| CliError::validation("config is missing translate.out"))?;
    execute(cfg, &cfg.translate, &out)?;
    println!("translate: wrote {}", out.display());
    Ok(())
}

/// Run the translation recipe described by `section`, writing the synthetic
/// CT to `out`. Reused by the ablation sweep with patched sampler settings.
pub fn execute(cfg: &PipelineConfig, section: &TranslateSection, out: &Path) -> CliResult<()> {
    let mr_path = require_file(&section.mr, "translate.mr")?;
    validate_denoiser_inputs(section)?;
    let mr = read_normalized(&mr_path)?;

    let sched = Arc::new(
        DiffusionSchedule::cosine(section.t_max, section.cosine_s)
            .map_err(|e| CliError::validation(e.to_string()))?,
    );
    let sampler_cfg = SamplerConfig {
        mode: match section.mode {
            ModeName::Noise => PredictionMode::Noise,
            ModeName::Image => PredictionMode::Image,
        },
        method: match section.method {
            MethodName::Ddim => SamplerMethod::Ddim,
            MethodName::Ddpm => SamplerMethod::Ddpm,
        },
        eta: section.eta,
        steps: section.steps.unwrap_or(match section.recipe {
            Recipe::TwoD => 20,
            Recipe::ThreeD => 25,
        }),
        guidance_w: section.guidance_w,
        clamp_x0: section.clamp_x0,
    };
    sampler_cfg
        .validate(&sched)
        .map_err(|e| CliError::validation(e.to_string()))?;

    let synth = match section.recipe {
        Recipe::TwoD => translate_2d(cfg, section, &mr, &sched, &sampler_cfg)?,
        Recipe::ThreeD => translate_3d(cfg, section, &mr, &sched, &sampler_cfg)?,
    };
    if let Some(parent) = out.parent() {
        ensure_dir(parent)?;
    }
    write_volume(&synth, out)?;
    Ok(())
}

fn validate_denoiser_inputs(section: &TranslateSection) -> CliResult<()> {
    match section.denoiser {
        DenoiserKind::SingleTarget => {
            require_file(&section.target, "translate.target")?;
        }
        DenoiserKind::External => {
            let dir = section
                .external_dir
                .as_ref()
                .ok_or_else(|| CliError::validation("config is missing translate.external_dir"))?;
            if !dir.is_dir() {
                return Err(CliError::validation(format!(
                    "translate.external_dir {dir:?} is not a directory"
                )));
            }
        }
        DenoiserKind::Zero | DenoiserKind::ScalarPosterior => {}
    }
    Ok(())
}

/// Build the denoiser for one crop/patch. The single-target oracle receives
/// the matching crop of the paired target volume.
fn build_denoiser(
    section: &TranslateSection,
    sched: &Arc<DiffusionSchedule>,
    mode: PredictionMode,
    target_tile: Option<ArrayD<f32>>,
) -> CliResult<Box<dyn Denoiser + Send + Sync>> {
    Ok(match section.denoiser {
        DenoiserKind::SingleTarget => {
            let tile = target_tile.expect("oracle target tile prepared by caller");
            match mode {
                PredictionMode::Noise => {
                    Box::new(SingleTargetDenoiser::noise_mode(tile, sched.clone()))
                }
                PredictionMode::Image => Box::new(SingleTargetDenoiser::image_mode(tile)),
            }
        }
        DenoiserKind::ScalarPosterior => Box::new(ScalarGaussianPosteriorDenoiser::new(
            section.posterior_mu,
            section.posterior_sigma0,
            mode,
            sched.clone(),
        )),
        DenoiserKind::Zero => Box::new(ZeroDenoiser::new(mode)),
        DenoiserKind::External => Box::new(ExternalPredictionDenoiser::new(
            section.external_dir.clone().expect("validated"),
            mode,
        )),
    })
}

fn translate_2d(
    cfg: &PipelineConfig,
    section: &TranslateSection,
    mr: &Volume,
    sched: &Arc<DiffusionSchedule>,
    sampler_cfg: &SamplerConfig,
) -> CliResult<Volume> {
    let dims = mr.dims();
    let tile = section.tile;

    let target = match section.denoiser {
        DenoiserKind::SingleTarget => {
            let t = read_normalized(section.target.as_ref().expect("validated"))?;
            if t.dims() != dims {
                return Err(CliError::validation(format!(
                    "translate.target dims {:?} do not match MR dims {dims:?}",
                    t.dims()
                )));
            }
            Some(t)
        }
        _ => None,
    };

    // With a label volume, only segmented slices are translated; the rest
    // stay air.
    let selected: Vec<usize> = match &section.labels {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::validation(format!(
                    "translate.labels {path:?} does not exist"
                )));
            }
            let labels = spinesynth::nifti::read_labels(path)?;
            spinesynth::volume::check_same_grid(&mr.grid(), &labels.grid(), "translate labels")?;
            (0..dims[0])
                .filter(|&i| {
                    labels
                        .data
                        .index_axis(Axis(0), i)
                        .iter()
                        .any(|&l| l != 0)
                })
                .collect()
        }
        None => (0..dims[0]).collect(),
    };

    let slice_dims = [dims[1], dims[2]];
    let padded_dims = [slice_dims[0].max(tile), slice_dims[1].max(tile)];
    let windows = tile_windows_2d(padded_dims, [tile, tile], [tile, tile])?;

    // Work items: one per (slice, window).
    struct Item {
        slice_pos: usize,
        slice_index: usize,
        window: Window2,
        flat_index: u64,
    }
    let mut items = Vec::new();
    for (pos, &si) in selected.iter().enumerate() {
        for (wi, w) in windows.iter().enumerate() {
            items.push(Item {
                slice_pos: pos,
                slice_index: si,
                window: *w,
                flat_index: (si * windows.len() + wi) as u64,
            });
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| CliError::runtime(e.to_string()))?;

    let results: Vec<CliResult<(usize, Window2, Array2<f32>)>> = pool.install(|| {
        items
            .par_iter()
            .map(|item| {
                let mr_slice = mr.data.index_axis(Axis(0), item.slice_index).to_owned();
                let mr_padded = pad_image_to(&mr_slice, padded_dims, -1.0);
                let w = item.window;
                let cond: Array2<f32> = mr_padded
                    .slice(ndarray::s![
                        w.start[0]..w.start[0] + w.size[0],
                        w.start[1]..w.start[1] + w.size[1]
                    ])
                    .to_owned();
                let target_tile = target.as_ref().map(|t| {
                    let t_slice = t.data.index_axis(Axis(0), item.slice_index).to_owned();
                    let t_padded = pad_image_to(&t_slice, padded_dims, -1.0);
                    t_padded
                        .slice(ndarray::s![
                            w.start[0]..w.start[0] + w.size[0],
                            w.start[1]..w.start[1] + w.size[1]
                        ])
                        .to_owned()
                        .into_dyn()
                });
                let denoiser =
                    build_denoiser(section, sched, sampler_cfg.mode, target_tile)?;
                let mut rng = item_rng(cfg.seed, item.flat_index);
                let out = sample(
                    denoiser.as_ref(),
                    Some(&cond.clone().into_dyn()),
                    &[w.size[0], w.size[1]],
                    sampler_cfg,
                    sched,
                    &mut rng,
                )?;
                let out2: Array2<f32> = out.into_dimensionality().expect("2d sample");
                Ok((item.slice_pos, w, out2))
            })
            .collect()
    });

    // Stitch per slice.
    let mut per_slice: Vec<Vec<(Array2<f32>, Window2)>> = vec![Vec::new(); selected.len()];
    for r in results {
        let (pos, w, tile_img) = r?;
        per_slice[pos].push((tile_img, w));
    }
    let mut out = Array3::from_elem((dims[0], dims[1], dims[2]), -1.0f32);
    for (pos, tiles) in per_slice.into_iter().enumerate() {
        let stitched = stitch_2d(&tiles, padded_dims)?;
        let slice_index = selected[pos];
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                // The written CT lives in the normalized range even when
                // per-step clamping was disabled.
                out[[slice_index, y, x]] = stitched[[y, x]].clamp(-1.0, 1.0);
            }
        }
    }
    Ok(Volume::new(
        out,
        mr.geom.clone(),
        IntensitySpace::Normalized,
    )?)
}

fn translate_3d(
    cfg: &PipelineConfig,
    section: &TranslateSection,
    mr: &Volume,
    sched: &Arc<DiffusionSchedule>,
    sampler_cfg: &SamplerConfig,
) -> CliResult<Volume> {
    // Isotropic working grid.
    let iso = grid_with_spacing(
        &mr.grid(),
        [section.iso_spacing, section.iso_spacing, section.iso_spacing],
    )?;
    let mr_iso = resample_scalar(mr, &iso)?;
    let (mr_pad, pad_record) = pad_to_multiple(&mr_iso, 8);
    let padded_dims = mr_pad.dims();

    let target_pad = match section.denoiser {
        DenoiserKind::SingleTarget => {
            let t = read_normalized(section.target.as_ref().expect("validated"))?;
            if t.dims() != mr.dims() {
                return Err(CliError::validation(format!(
                    "translate.target dims {:?} do not match MR dims {:?}",
                    t.dims(),
                    mr.dims()
                )));
            }
            let t_iso = resample_scalar(&t, &iso)?;
            let (t_pad, _) = pad_to_multiple(&t_iso, 8);
            Some(t_pad)
        }
        _ => None,
    };

    // Patches never exceed the padded volume.
    let patch = [
        section.patch[0].min(padded_dims[0]),
        section.patch[1].min(padded_dims[1]),
        section.patch[2].min(padded_dims[2]),
    ];
    let windows = patch_windows(padded_dims, patch, patch)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| CliError::runtime(e.to_string()))?;

    let results: Vec<CliResult<(usize, Window3, Array3<f32>)>> = pool.install(|| {
        windows
            .par_iter()
            .enumerate()
            .map(|(wi, &w)| {
                let mr_patch = mr_pad
                    .data
                    .slice(ndarray::s![
                        w.start[0]..w.start[0] + w.size[0],
                        w.start[1]..w.start[1] + w.size[1],
                        w.start[2]..w.start[2] + w.size[2]
                    ])
                    .to_owned();
                let ramps = coordinate_ramps(padded_dims, w)?;
                // Condition channels: MR patch plus the three position ramps.
                let cond = ndarray::stack(
                    Axis(0),
                    &[
                        mr_patch.view(),
                        ramps[0].view(),
                        ramps[1].view(),
                        ramps[2].view(),
                    ],
                )
                .expect("congruent shapes")
                .into_dyn();
                let target_tile = target_pad.as_ref().map(|t| {
                    t.data
                        .slice(ndarray::s![
                            w.start[0]..w.start[0] + w.size[0],
                            w.start[1]..w.start[1] + w.size[1],
                            w.start[2]..w.start[2] + w.size[2]
                        ])
                        .to_owned()
                        .into_dyn()
                });
                let denoiser = build_denoiser(section, sched, sampler_cfg.mode, target_tile)?;
                let mut rng = item_rng(cfg.seed, wi as u64);
                let out = sample(
                    denoiser.as_ref(),
                    Some(&cond),
                    &w.size,
                    sampler_cfg,
                    sched,
                    &mut rng,
                )?;
                let out3: Array3<f32> = out.into_dimensionality().expect("3d sample");
                Ok((wi, w, out3))
            })
            .collect()
    });

    let mut tiles = Vec::with_capacity(windows.len());
    for r in results {
        let (_, w, t) = r?;
        tiles.push((t, w));
    }
    let stitched = stitch_3d(&tiles, padded_dims)?.mapv(|v| v.clamp(-1.0, 1.0));
    let synth_pad = Volume::new(stitched, mr_pad.geom.clone(), IntensitySpace::Normalized)?;
    let synth_iso = unpad(&synth_pad, &pad_record);
    // Back to the native MR grid.
    let out = resample_scalar(&synth_iso, &mr.grid())?;
    Ok(out)
}
