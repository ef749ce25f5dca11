//! `spinesynth phantom`: write the four paired phantom volumes.

use super::ensure_dir;
use crate::config::PipelineConfig;
use crate::error::CliResult;
use spinesynth::nifti::{write_labels, write_volume};
use spinesynth::phantom::{generate_phantom, PhantomConfig};

pub fn run(cfg: &PipelineConfig) -> CliResult<()> {
    let p = &cfg.phantom;
    let phantom_cfg = PhantomConfig {
        n_vertebrae: p.n_vertebrae,
        body_radius: p.body_radius,
        body_height: p.body_height,
        disc_gap: p.disc_gap,
        process_length: p.process_length,
        process_width: p.process_width,
        curvature: p.curvature,
        noise_sigma: p.noise_sigma,
        spacing: p.spacing,
        seed: cfg.seed,
    };
    let set = generate_phantom(&phantom_cfg)?;
    ensure_dir(&p.out_dir)?;
    write_volume(&set.mr, p.out_dir.join("mr.nii.gz"))?;
    write_volume(&set.ct, p.out_dir.join("ct.nii.gz"))?;
    write_labels(&set.labels, p.out_dir.join("labels.nii.gz"))?;
    write_labels(&set.subregions, p.out_dir.join("subregions.nii.gz"))?;

    if p.misalign_rotation_deg != 0.0 || p.misalign_translation_mm != [0.0; 3] {
        use nalgebra::Vector3;
        use spinesynth::geometry::RigidTransform;
        use spinesynth::landmarks::apply_rigid_labels;
        use spinesynth::phantom::{misalign, MisalignSpec};
        let about = phantom_cfg.body_center_world(phantom_cfg.n_vertebrae / 2);
        let rot = RigidTransform::rotation_about(
            Vector3::z(),
            p.misalign_rotation_deg.to_radians(),
            about,
        );
        let t = RigidTransform::translation_only(Vector3::new(
            p.misalign_translation_mm[0],
            p.misalign_translation_mm[1],
            p.misalign_translation_mm[2],
        ))
        .compose(&rot);
        let (ct_mis, labels_mis) = misalign(&set.ct, &set.labels, &MisalignSpec::Global(t.clone()))?;
        let subs_mis = apply_rigid_labels(&set.subregions, &t, &set.subregions.grid())?;
        write_volume(&ct_mis, p.out_dir.join("ct_misaligned.nii.gz"))?;
        write_labels(&labels_mis, p.out_dir.join("labels_misaligned.nii.gz"))?;
        write_labels(&subs_mis, p.out_dir.join("subregions_misaligned.nii.gz"))?;
    }

    println!(
        "phantom: {} vertebrae, dims {:?} -> {}",
        phantom_cfg.n_vertebrae,
        set.ct.dims(),
        p.out_dir.display()
    );
    Ok(())
}
