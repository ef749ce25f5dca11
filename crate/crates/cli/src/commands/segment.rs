//! `spinesynth segment`: threshold segmentation of a CT volume.

use super::{ensure_dir, read_normalized};
use crate::config::{require_file, PipelineConfig};
use crate::error::CliResult;
use spinesynth::nifti::write_labels;
use spinesynth::segment::{Segmenter, ThresholdSegmenter};

pub fn run(cfg: &PipelineConfig) -> CliResult<()> {
    let s = &cfg.segment;
    let ct_path = require_file(&s.ct, "segment.ct")?;
    let ct = read_normalized(&ct_path)?;
    let segmenter = ThresholdSegmenter {
        bone_threshold: s.bone_threshold,
        min_component_voxels: s.min_component_voxels,
        ..Default::default()
    };
    let (labels, subregions) = segmenter.segment(&ct)?;
    ensure_dir(&s.out_dir)?;
    write_labels(&labels, s.out_dir.join("seg_labels.nii.gz"))?;
    write_labels(&subregions, s.out_dir.join("seg_subregions.nii.gz"))?;
    println!(
        "segment: {} vertebrae above threshold {}",
        labels.labels().len(),
        s.bone_threshold
    );
    Ok(())
}
