//! Procedural spine phantom: paired MR-like and CT-like volumes with ground
//! truth vertebra and subregion labels.
//!
//! Each vertebra is an ellipsoidal body plus a posterior process box sharing
//! one label. CT intensities follow Hounsfield conventions (air -1000, soft
//! tissue +40, bone +800). MR intensities are deliberately non-monotonic
//! against CT: marrow inside the body is bright while the cortical shell and
//! the process are dark, so no global intensity map can translate one to the
//! other.

use crate::error::{Error, Result};
use crate::geometry::{Geometry, RigidTransform};
use crate::preprocess::{resample_labels_with, resample_scalar_with};
use crate::volume::{
    IntensitySpace, LabelMeaning, LabelVolume, Volume, SUBREGION_BODY, SUBREGION_POSTERIOR,
};
use nalgebra::Vector3;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;

/// CT tissue intensities in HU.
pub const CT_AIR: f32 = -1000.0;
pub const CT_SOFT: f32 = 40.0;
pub const CT_BONE: f32 = 800.0;

/// MR raw tissue intensities (nonnegative, arbitrary units).
pub const MR_AIR: f32 = 0.0;
pub const MR_SOFT: f32 = 300.0;
pub const MR_CORTICAL: f32 = 80.0;
pub const MR_MARROW: f32 = 900.0;

/// Fraction of the body semi-axes that counts as marrow; the rest of the
/// ellipsoid is cortical shell.
const MARROW_FRACTION: f64 = 0.75;
/// The process box reaches this far into the body ellipsoid so the two stay
/// 26-connected after voxelization.
const PROCESS_OVERLAP_MM: f64 = 2.0;
/// Air margin between the tissue block and the volume border.
const AIR_SHELL_MM: f64 = 3.0;

#[derive(Debug, Clone)]
pub struct PhantomConfig {
    pub n_vertebrae: usize,
    pub body_radius: f64,
    pub body_height: f64,
    pub disc_gap: f64,
    pub process_length: f64,
    pub process_width: f64,
    /// Sinusoidal left-right bend amplitude of the column, in mm.
    pub curvature: f64,
    /// Additive Gaussian intensity noise (native units, both modalities).
    pub noise_sigma: f64,
    pub spacing: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            n_vertebrae: 5,
            body_radius: 15.0,
            body_height: 30.0,
            disc_gap: 6.0,
            process_length: 30.0,
            process_width: 8.0,
            curvature: 0.0,
            noise_sigma: 0.0,
            spacing: 1.0,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_vertebrae < 2 {
            return Err(Error::InvalidPhantomConfig {
                detail: format!("n_vertebrae {} < 2", self.n_vertebrae),
            });
        }
        for (name, v) in [
            ("body_radius", self.body_radius),
            ("body_height", self.body_height),
            ("disc_gap", self.disc_gap),
            ("process_length", self.process_length),
            ("process_width", self.process_width),
            ("spacing", self.spacing),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidPhantomConfig {
                    detail: format!("{name} = {v} must be > 0"),
                });
            }
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidPhantomConfig {
                detail: format!("noise_sigma = {} must be >= 0", self.noise_sigma),
            });
        }
        if self.curvature < 0.0 || !self.curvature.is_finite() {
            return Err(Error::InvalidPhantomConfig {
                detail: format!("curvature = {} must be >= 0", self.curvature),
            });
        }
        Ok(())
    }

    fn margin(&self) -> f64 {
        10.0
    }

    fn process_height(&self) -> f64 {
        0.6 * self.body_height
    }

    /// Volume dims in voxels at the configured spacing.
    pub fn dims(&self) -> [usize; 3] {
        let m = self.margin();
        let nx = 2.0 * (self.body_radius + self.curvature) + 2.0 * m;
        let ny = self.body_center_y() + self.body_radius + self.process_length + m;
        let nz = 2.0 * m
            + self.n_vertebrae as f64 * self.body_height
            + (self.n_vertebrae - 1) as f64 * self.disc_gap;
        [
            (nx / self.spacing).ceil() as usize,
            (ny / self.spacing).ceil() as usize,
            (nz / self.spacing).ceil() as usize,
        ]
    }

    fn column_x(&self) -> f64 {
        self.margin() + self.body_radius + self.curvature
    }

    fn body_center_y(&self) -> f64 {
        self.margin() + self.body_radius
    }

    fn body_center_z(&self, k: usize) -> f64 {
        self.margin() + self.body_height / 2.0 + k as f64 * (self.body_height + self.disc_gap)
    }

    fn body_center_x(&self, k: usize) -> f64 {
        let bend = if self.n_vertebrae > 1 {
            self.curvature
                * (std::f64::consts::PI * k as f64 / (self.n_vertebrae - 1) as f64).sin()
        } else {
            0.0
        };
        self.column_x() + bend
    }

    /// Analytic world-space center of vertebra `k`'s body (0-based).
    pub fn body_center_world(&self, k: usize) -> Vector3<f64> {
        Vector3::new(
            self.body_center_x(k),
            self.body_center_y(),
            self.body_center_z(k),
        )
    }

    /// Analytic world-space center of vertebra `k`'s process box.
    pub fn process_center_world(&self, k: usize) -> Vector3<f64> {
        let y0 = self.body_center_y() + self.body_radius - PROCESS_OVERLAP_MM;
        Vector3::new(
            self.body_center_x(k),
            y0 + self.process_length / 2.0,
            self.body_center_z(k),
        )
    }
}

/// A generated phantom: paired MR/CT plus ground-truth labels. The subregion
/// volume codes voxels as body (1) or posterior (2) regardless of vertebra.
#[derive(Debug, Clone)]
pub struct PhantomSet {
    pub mr: Volume,
    pub ct: Volume,
    pub labels: LabelVolume,
    pub subregions: LabelVolume,
}

/// Generate the paired phantom. Deterministic for a fixed seed.
pub fn generate_phantom(cfg: &PhantomConfig) -> Result<PhantomSet> {
    cfg.validate()?;
    let dims = cfg.dims();
    let geom = Geometry::isotropic(cfg.spacing);
    let shape = (dims[0], dims[1], dims[2]);

    let mut ct = Array3::from_elem(shape, CT_AIR);
    let mut mr = Array3::from_elem(shape, MR_AIR);
    let mut labels = Array3::<u16>::zeros(shape);
    let mut subregions = Array3::<u16>::zeros(shape);

    let shell = AIR_SHELL_MM;
    let extent = [
        dims[0] as f64 * cfg.spacing,
        dims[1] as f64 * cfg.spacing,
        dims[2] as f64 * cfg.spacing,
    ];

    let rz = cfg.body_height / 2.0;
    let half_w = cfg.process_width / 2.0;
    let half_h = cfg.process_height() / 2.0;

    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let w = [
                    i as f64 * cfg.spacing,
                    j as f64 * cfg.spacing,
                    k as f64 * cfg.spacing,
                ];
                let in_tissue = (0..3).all(|a| w[a] >= shell && w[a] <= extent[a] - shell);
                if !in_tissue {
                    continue;
                }
                ct[[i, j, k]] = CT_SOFT;
                mr[[i, j, k]] = MR_SOFT;

                // Only vertebrae near this z can claim the voxel.
                for v in 0..cfg.n_vertebrae {
                    let c = cfg.body_center_world(v);
                    let dz = w[2] - c.z;
                    if dz.abs() > rz + 1.0 {
                        continue;
                    }
                    let dx = w[0] - c.x;
                    let dy = w[1] - c.y;
                    let e = (dx / cfg.body_radius).powi(2)
                        + (dy / cfg.body_radius).powi(2)
                        + (dz / rz).powi(2);
                    let p = cfg.process_center_world(v);
                    let in_process = (w[0] - p.x).abs() <= half_w
                        && (w[1] - p.y).abs() <= cfg.process_length / 2.0
                        && (w[2] - p.z).abs() <= half_h;
                    if e <= 1.0 {
                        labels[[i, j, k]] = (v + 1) as u16;
                        subregions[[i, j, k]] = SUBREGION_BODY;
                        ct[[i, j, k]] = CT_BONE;
                        mr[[i, j, k]] = if e <= MARROW_FRACTION * MARROW_FRACTION {
                            MR_MARROW
                        } else {
                            MR_CORTICAL
                        };
                        break;
                    } else if in_process {
                        labels[[i, j, k]] = (v + 1) as u16;
                        subregions[[i, j, k]] = SUBREGION_POSTERIOR;
                        ct[[i, j, k]] = CT_BONE;
                        mr[[i, j, k]] = MR_CORTICAL;
                        break;
                    }
                }
            }
        }
    }

    if cfg.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for v in ct.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *v += (n * cfg.noise_sigma) as f32;
        }
        for v in mr.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *v = (*v + (n * cfg.noise_sigma) as f32).max(0.0);
        }
    }

    let mut label_vol = LabelVolume::new(labels, geom.clone())?;
    let mut meaning = BTreeMap::new();
    for v in 0..cfg.n_vertebrae {
        meaning.insert(
            (v + 1) as u16,
            LabelMeaning {
                vertebra: (v + 1) as u16,
                subregion: 0,
            },
        );
    }
    label_vol.meaning = meaning;

    let mut sub_vol = LabelVolume::new(subregions, geom.clone())?;
    sub_vol.meaning = BTreeMap::from([
        (
            SUBREGION_BODY,
            LabelMeaning {
                vertebra: 0,
                subregion: SUBREGION_BODY,
            },
        ),
        (
            SUBREGION_POSTERIOR,
            LabelMeaning {
                vertebra: 0,
                subregion: SUBREGION_POSTERIOR,
            },
        ),
    ]);

    Ok(PhantomSet {
        mr: Volume::new(mr, geom.clone(), IntensitySpace::MrRaw)?,
        ct: Volume::new(ct, geom.clone(), IntensitySpace::Hounsfield)?,
        labels: label_vol,
        subregions: sub_vol,
    })
}

/// How to misalign a phantom CT against its MR.
#[derive(Debug, Clone)]
pub enum MisalignSpec {
    /// One rigid motion applied to the whole volume.
    Global(RigidTransform),
    /// Independent small motions per vertebra id. Voxels a vertebra vacates
    /// are filled with `vacated_fill` (native intensity units).
    PerVertebra {
        transforms: BTreeMap<u16, RigidTransform>,
        vacated_fill: f32,
    },
}

/// Apply a known rigid misalignment to a CT/label pair, resampling onto the
/// input grid, so that registration recovery is testable against ground
/// truth.
pub fn misalign(
    ct: &Volume,
    labels: &LabelVolume,
    spec: &MisalignSpec,
) -> Result<(Volume, LabelVolume)> {
    match spec {
        MisalignSpec::Global(t) => {
            t.validate()?;
            let inv = t.inverse();
            let out_ct = resample_scalar_with(ct, &ct.grid(), |w| inv.apply(w))?;
            let out_labels = resample_labels_with(labels, &labels.grid(), |w| inv.apply(w))?;
            Ok((out_ct, out_labels))
        }
        MisalignSpec::PerVertebra {
            transforms,
            vacated_fill,
        } => {
            let dims = labels.dims();
            let mut out_ct = ct.data.clone();
            let mut out_labels = Array3::<u16>::zeros((dims[0], dims[1], dims[2]));
            for i in 0..dims[0] {
                for j in 0..dims[1] {
                    for k in 0..dims[2] {
                        let w = labels
                            .geom
                            .world_from_voxel(Vector3::new(i as f64, j as f64, k as f64));
                        let mut claimed = false;
                        for (&id, t) in transforms {
                            let p = labels.geom.voxel_from_world(t.inverse().apply(w));
                            if labels.sample_nearest([p.x, p.y, p.z]) == id {
                                out_labels[[i, j, k]] = id;
                                out_ct[[i, j, k]] = ct.sample_trilinear(
                                    [p.x, p.y, p.z],
                                    ct.intensity_space.out_of_field(),
                                );
                                claimed = true;
                                break;
                            }
                        }
                        if !claimed && labels.data[[i, j, k]] != 0 {
                            // Bone moved away from here; backfill.
                            out_ct[[i, j, k]] = *vacated_fill;
                        }
                    }
                }
            }
            let mut lab = LabelVolume::new(out_labels, labels.geom.clone())?;
            lab.meaning = labels.meaning.clone();
            Ok((
                Volume::new(out_ct, ct.geom.clone(), ct.intensity_space)?,
                lab,
            ))
        }
    }
}
