//! Core volume data model: scalar volumes with world geometry and integer
//! label volumes for segmentations.
//!
//! Axis convention throughout the crate: axis 0 indexes sagittal slices
//! (left-right), axis 1 is anterior-posterior in plane, axis 2 is
//! cranio-caudal. A sagittal slice is `data[i, .., ..]`.

use crate::error::{Error, Result};
use crate::geometry::{Geometry, Grid};
use ndarray::{Array2, Array3};
use std::collections::BTreeMap;

/// Which intensity convention a scalar volume is in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntensitySpace {
    /// Calibrated CT Hounsfield units (air ~ -1000, bone ~ +1000).
    Hounsfield,
    /// Raw nonnegative MR magnitudes.
    MrRaw,
    /// Normalized [-1, 1] working range.
    Normalized,
}

impl IntensitySpace {
    pub fn name(self) -> &'static str {
        match self {
            IntensitySpace::Hounsfield => "HU",
            IntensitySpace::MrRaw => "MR-raw",
            IntensitySpace::Normalized => "normalized",
        }
    }

    /// Fill value for voxels sampled outside the field of view.
    pub fn out_of_field(self) -> f32 {
        match self {
            IntensitySpace::Hounsfield => -1000.0,
            IntensitySpace::MrRaw => 0.0,
            IntensitySpace::Normalized => -1.0,
        }
    }
}

/// 3D scalar grid with world-space geometry.
#[derive(Debug, Clone)]
pub struct Volume {
    pub data: Array3<f32>,
    pub geom: Geometry,
    pub intensity_space: IntensitySpace,
}

impl Volume {
    pub fn new(data: Array3<f32>, geom: Geometry, intensity_space: IntensitySpace) -> Result<Self> {
        geom.validate()?;
        let v = Volume {
            data,
            geom,
            intensity_space,
        };
        if intensity_space == IntensitySpace::Normalized {
            if let Some(&bad) = v.data.iter().find(|x| !(-1.0..=1.0).contains(*x)) {
                return Err(Error::WrongIntensitySpace {
                    op: "Volume::new",
                    expected: "normalized values in [-1,1]",
                    actual: format!("voxel {bad}"),
                });
            }
        }
        Ok(v)
    }

    pub fn dims(&self) -> [usize; 3] {
        let d = self.data.dim();
        [d.0, d.1, d.2]
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.dims(), self.geom.clone())
    }

    /// Trilinear sample at a continuous voxel coordinate; `fill` outside.
    pub fn sample_trilinear(&self, p: [f64; 3], fill: f32) -> f32 {
        trilinear(&self.data, p, fill)
    }
}

/// Subregion class codes used by subregion label volumes.
pub const SUBREGION_BODY: u16 = 1;
pub const SUBREGION_POSTERIOR: u16 = 2;

/// What a label value means, when known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelMeaning {
    pub vertebra: u16,
    /// `SUBREGION_BODY` or `SUBREGION_POSTERIOR`; 0 when the label covers a
    /// whole vertebra.
    pub subregion: u16,
}

/// Integer-labeled 3D grid; 0 is background.
#[derive(Debug, Clone)]
pub struct LabelVolume {
    pub data: Array3<u16>,
    pub geom: Geometry,
    pub meaning: BTreeMap<u16, LabelMeaning>,
}

impl LabelVolume {
    pub fn new(data: Array3<u16>, geom: Geometry) -> Result<Self> {
        geom.validate()?;
        Ok(LabelVolume {
            data,
            geom,
            meaning: BTreeMap::new(),
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        let d = self.data.dim();
        [d.0, d.1, d.2]
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.dims(), self.geom.clone())
    }

    /// Sorted distinct nonzero labels.
    pub fn labels(&self) -> Vec<u16> {
        let mut seen = std::collections::BTreeSet::new();
        for &v in self.data.iter() {
            if v != 0 {
                seen.insert(v);
            }
        }
        seen.into_iter().collect()
    }

    /// Nearest-neighbor sample at a continuous voxel coordinate; 0 outside.
    pub fn sample_nearest(&self, p: [f64; 3]) -> u16 {
        nearest(&self.data, p)
    }
}

/// Check two grids describe the same sampling lattice.
pub fn check_same_grid(a: &Grid, b: &Grid, what: &str) -> Result<()> {
    if a.dims != b.dims {
        return Err(Error::GeometryMismatch {
            detail: format!("{what}: dims {:?} vs {:?}", a.dims, b.dims),
        });
    }
    if !a.geom.approx_eq(&b.geom, 1e-6) {
        return Err(Error::GeometryMismatch {
            detail: format!("{what}: geometries differ beyond 1e-6"),
        });
    }
    Ok(())
}

pub(crate) fn trilinear(data: &Array3<f32>, p: [f64; 3], fill: f32) -> f32 {
    let dims = data.dim();
    let dims = [dims.0, dims.1, dims.2];
    // Outside the voxel-center hull counts as out of field.
    for k in 0..3 {
        if !(p[k] >= 0.0 && p[k] <= (dims[k] - 1) as f64) {
            return fill;
        }
    }
    let base = [
        (p[0].floor() as usize).min(dims[0] - 1),
        (p[1].floor() as usize).min(dims[1] - 1),
        (p[2].floor() as usize).min(dims[2] - 1),
    ];
    let frac = [
        p[0] - base[0] as f64,
        p[1] - base[1] as f64,
        p[2] - base[2] as f64,
    ];
    let hi = [
        (base[0] + 1).min(dims[0] - 1),
        (base[1] + 1).min(dims[1] - 1),
        (base[2] + 1).min(dims[2] - 1),
    ];
    let mut acc = 0.0f64;
    for (ix, wx) in [(base[0], 1.0 - frac[0]), (hi[0], frac[0])] {
        if wx == 0.0 {
            continue;
        }
        for (iy, wy) in [(base[1], 1.0 - frac[1]), (hi[1], frac[1])] {
            if wy == 0.0 {
                continue;
            }
            for (iz, wz) in [(base[2], 1.0 - frac[2]), (hi[2], frac[2])] {
                if wz == 0.0 {
                    continue;
                }
                acc += wx * wy * wz * data[[ix, iy, iz]] as f64;
            }
        }
    }
    acc as f32
}

pub(crate) fn nearest(data: &Array3<u16>, p: [f64; 3]) -> u16 {
    let dims = data.dim();
    let dims = [dims.0, dims.1, dims.2];
    let mut idx = [0usize; 3];
    for k in 0..3 {
        let r = p[k].round();
        if !(r >= 0.0 && r <= (dims[k] - 1) as f64) {
            return 0;
        }
        idx[k] = r as usize;
    }
    data[[idx[0], idx[1], idx[2]]]
}

/// Extract sagittal slice `i` of a scalar volume as a 2D image (axes 1, 2).
pub fn sagittal_slice(data: &Array3<f32>, i: usize) -> Array2<f32> {
    data.index_axis(ndarray::Axis(0), i).to_owned()
}

/// Extract sagittal slice `i` of a label volume.
pub fn sagittal_slice_labels(data: &Array3<u16>, i: usize) -> Array2<u16> {
    data.index_axis(ndarray::Axis(0), i).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_range_enforced() {
        let geom = Geometry::isotropic(1.0);
        let data = Array3::from_elem((2, 2, 2), 1.5f32);
        assert!(Volume::new(data, geom, IntensitySpace::Normalized).is_err());
    }

    #[test]
    fn trilinear_exact_at_centers() {
        let mut data = Array3::zeros((3, 3, 3));
        data[[1, 2, 0]] = 7.0;
        assert_eq!(trilinear(&data, [1.0, 2.0, 0.0], -1.0), 7.0);
    }

    #[test]
    fn trilinear_midpoint_is_mean() {
        let mut data = Array3::zeros((2, 1, 1));
        data[[0, 0, 0]] = 2.0;
        data[[1, 0, 0]] = 4.0;
        assert_eq!(trilinear(&data, [0.5, 0.0, 0.0], -1.0), 3.0);
    }

    #[test]
    fn out_of_field_uses_fill() {
        let data = Array3::from_elem((2, 2, 2), 5.0f32);
        assert_eq!(trilinear(&data, [-0.01, 0.0, 0.0], -1.0), -1.0);
        let labels = Array3::from_elem((2, 2, 2), 3u16);
        assert_eq!(nearest(&labels, [0.0, 0.0, 2.4]), 0);
        assert_eq!(nearest(&labels, [0.0, 0.0, 1.4]), 3);
    }

    #[test]
    fn label_set_sorted_distinct() {
        let geom = Geometry::isotropic(1.0);
        let mut data = Array3::zeros((2, 2, 2));
        data[[0, 0, 0]] = 4;
        data[[1, 1, 1]] = 2;
        data[[0, 1, 0]] = 4;
        let lv = LabelVolume::new(data, geom).unwrap();
        assert_eq!(lv.labels(), vec![2, 4]);
    }
}
