//! Stochastic training-data augmentation: smooth 3D elastic deformation and
//! MR intensity jitter, deterministic under a seed.

use crate::error::{Error, Result};
use crate::volume::{check_same_grid, IntensitySpace, LabelVolume, Volume};
use ndarray::{Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Parameters of one random smooth displacement field.
#[derive(Debug, Clone)]
pub struct DeformSpec {
    /// Control points per axis (>= 2 each).
    pub control_grid: [usize; 3],
    /// Standard deviation of the control-point offsets, in mm.
    pub sigma_mm: f64,
    pub seed: u64,
}

impl Default for DeformSpec {
    fn default() -> Self {
        DeformSpec {
            control_grid: [4, 4, 4],
            sigma_mm: 4.0,
            seed: 0,
        }
    }
}

impl DeformSpec {
    pub fn validate(&self) -> Result<()> {
        if self.control_grid.iter().any(|&g| g < 2) {
            return Err(Error::InvalidDeformSpec {
                detail: format!("control_grid {:?} needs >= 2 points per axis", self.control_grid),
            });
        }
        if self.sigma_mm < 0.0 || !self.sigma_mm.is_finite() {
            return Err(Error::InvalidDeformSpec {
                detail: format!("sigma {} must be >= 0", self.sigma_mm),
            });
        }
        Ok(())
    }
}

fn bspline3(t: f64) -> f64 {
    let a = t.abs();
    if a < 1.0 {
        (4.0 - 6.0 * a * a + 3.0 * a * a * a) / 6.0
    } else if a < 2.0 {
        let b = 2.0 - a;
        b * b * b / 6.0
    } else {
        0.0
    }
}

/// Per-voxel B-spline support along one axis: base control index and the
/// four kernel weights.
fn axis_weights(extent: usize, grid: usize) -> Vec<(isize, [f64; 4])> {
    let scale = if extent > 1 {
        (grid - 1) as f64 / (extent - 1) as f64
    } else {
        0.0
    };
    (0..extent)
        .map(|x| {
            let u = x as f64 * scale;
            let base = u.floor() as isize - 1;
            let mut w = [0.0; 4];
            for (a, wa) in w.iter_mut().enumerate() {
                *wa = bspline3(u - (base + a as isize) as f64);
            }
            (base, w)
        })
        .collect()
}

#[inline]
fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// The dense displacement field (in mm, one component per leading index)
/// that `spec` produces on a volume of `dims` voxels. The field is the
/// cubic-B-spline interpolation of Gaussian control-point offsets and scales
/// linearly with sigma at a fixed seed.
pub fn displacement_field(dims: [usize; 3], spec: &DeformSpec) -> Result<Array4<f64>> {
    spec.validate()?;
    let [gx, gy, gz] = spec.control_grid;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Unit-variance control offsets, scaled by sigma afterwards.
    let mut control = Array4::<f64>::zeros((3, gx, gy, gz));
    for c in control.iter_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *c = n;
    }

    let wz = axis_weights(dims[2], gz);
    let wy = axis_weights(dims[1], gy);
    let wx = axis_weights(dims[0], gx);

    // Separable evaluation: collapse control axes one at a time.
    let mut stage_z = Array4::<f64>::zeros((3, gx, gy, dims[2]));
    for comp in 0..3 {
        for ix in 0..gx {
            for iy in 0..gy {
                for (z, (base, w)) in wz.iter().enumerate() {
                    let mut acc = 0.0;
                    for (a, wa) in w.iter().enumerate() {
                        acc += wa * control[[comp, ix, iy, clamp_idx(base + a as isize, gz)]];
                    }
                    stage_z[[comp, ix, iy, z]] = acc;
                }
            }
        }
    }
    let mut stage_y = Array4::<f64>::zeros((3, gx, dims[1], dims[2]));
    for comp in 0..3 {
        for ix in 0..gx {
            for (y, (base, w)) in wy.iter().enumerate() {
                for z in 0..dims[2] {
                    let mut acc = 0.0;
                    for (a, wa) in w.iter().enumerate() {
                        acc += wa * stage_z[[comp, ix, clamp_idx(base + a as isize, gy), z]];
                    }
                    stage_y[[comp, ix, y, z]] = acc;
                }
            }
        }
    }
    let mut field = Array4::<f64>::zeros((3, dims[0], dims[1], dims[2]));
    for comp in 0..3 {
        for (x, (base, w)) in wx.iter().enumerate() {
            for y in 0..dims[1] {
                for z in 0..dims[2] {
                    let mut acc = 0.0;
                    for (a, wa) in w.iter().enumerate() {
                        acc += wa * stage_y[[comp, clamp_idx(base + a as isize, gx), y, z]];
                    }
                    field[[comp, x, y, z]] = acc * spec.sigma_mm;
                }
            }
        }
    }
    Ok(field)
}

/// Apply one random smooth deformation identically to every input. Scalar
/// volumes are pulled back with trilinear interpolation, labels with
/// nearest-neighbor, so paired inputs stay mutually aligned.
pub fn elastic_deform(
    vols: &[&Volume],
    labels: &[&LabelVolume],
    spec: &DeformSpec,
) -> Result<(Vec<Volume>, Vec<LabelVolume>)> {
    spec.validate()?;
    let grid = match (vols.first(), labels.first()) {
        (Some(v), _) => v.grid(),
        (None, Some(l)) => l.grid(),
        (None, None) => return Ok((Vec::new(), Vec::new())),
    };
    for v in vols {
        check_same_grid(&grid, &v.grid(), "elastic_deform")?;
    }
    for l in labels {
        check_same_grid(&grid, &l.grid(), "elastic_deform")?;
    }
    let dims = grid.dims;
    let field = displacement_field(dims, spec)?;
    let spacing = grid.geom.spacing;

    let pullback = |i: usize, j: usize, k: usize| -> [f64; 3] {
        [
            i as f64 + field[[0, i, j, k]] / spacing[0],
            j as f64 + field[[1, i, j, k]] / spacing[1],
            k as f64 + field[[2, i, j, k]] / spacing[2],
        ]
    };

    let mut out_vols = Vec::with_capacity(vols.len());
    for v in vols {
        let fill = v.intensity_space.out_of_field();
        let mut data = Array3::zeros((dims[0], dims[1], dims[2]));
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    data[[i, j, k]] = v.sample_trilinear(pullback(i, j, k), fill);
                }
            }
        }
        out_vols.push(Volume {
            data,
            geom: v.geom.clone(),
            intensity_space: v.intensity_space,
        });
    }
    let mut out_labels = Vec::with_capacity(labels.len());
    for l in labels {
        let mut data = Array3::zeros((dims[0], dims[1], dims[2]));
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    data[[i, j, k]] = l.sample_nearest(pullback(i, j, k));
                }
            }
        }
        let mut lv = LabelVolume::new(data, l.geom.clone())?;
        lv.meaning = l.meaning.clone();
        out_labels.push(lv);
    }
    Ok((out_vols, out_labels))
}

/// Random brightness/contrast jitter about the mean:
/// `clamp(a*(x - m) + m + b)` with `a ~ U[1-contrast, 1+contrast]`,
/// `b ~ U[-brightness, brightness]`. Input must be normalized.
pub fn intensity_jitter(
    v: &Volume,
    brightness: f64,
    contrast: f64,
    rng: &mut impl Rng,
) -> Result<Volume> {
    if v.intensity_space != IntensitySpace::Normalized {
        return Err(Error::WrongIntensitySpace {
            op: "intensity_jitter",
            expected: "normalized",
            actual: v.intensity_space.name().to_string(),
        });
    }
    let data = jitter_array(&v.data.view().into_dyn().to_owned(), brightness, contrast, rng)?;
    Volume::new(
        data.into_dimensionality().expect("shape preserved"),
        v.geom.clone(),
        IntensitySpace::Normalized,
    )
}

/// 2D variant for slice pipelines. Values must already be in [-1, 1].
pub fn intensity_jitter_2d(
    img: &Array2<f32>,
    brightness: f64,
    contrast: f64,
    rng: &mut impl Rng,
) -> Result<Array2<f32>> {
    if let Some(&bad) = img.iter().find(|x| !(-1.0..=1.0).contains(*x)) {
        return Err(Error::WrongIntensitySpace {
            op: "intensity_jitter_2d",
            expected: "normalized",
            actual: format!("pixel {bad}"),
        });
    }
    let out = jitter_array(&img.view().into_dyn().to_owned(), brightness, contrast, rng)?;
    Ok(out.into_dimensionality().expect("shape preserved"))
}

fn jitter_array(
    data: &ndarray::ArrayD<f32>,
    brightness: f64,
    contrast: f64,
    rng: &mut impl Rng,
) -> Result<ndarray::ArrayD<f32>> {
    if !(0.0..=1.0).contains(&contrast) || !(0.0..=1.0).contains(&brightness) {
        return Err(Error::Unsupported {
            what: format!("jitter strengths brightness={brightness} contrast={contrast} outside [0,1]"),
        });
    }
    // Contrast factor first, then brightness shift.
    let a = rng.random_range(1.0 - contrast..=1.0 + contrast);
    let b = rng.random_range(-brightness..=brightness);
    let m = data.iter().map(|&x| x as f64).sum::<f64>() / data.len().max(1) as f64;
    Ok(data.mapv(|x| ((a * (x as f64 - m) + m + b).clamp(-1.0, 1.0)) as f32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Geometry;
    use ndarray::Array3;

    fn mr_volume(data: Array3<f32>) -> Volume {
        Volume::new(data, Geometry::isotropic(1.0), IntensitySpace::MrRaw).unwrap()
    }

    fn label_volume(data: Array3<u16>) -> LabelVolume {
        LabelVolume::new(data, Geometry::isotropic(1.0)).unwrap()
    }

    #[test]
    fn sigma_zero_is_identity() {
        let v = mr_volume(Array3::from_shape_fn((8, 8, 8), |(i, j, k)| {
            (i * 64 + j * 8 + k) as f32
        }));
        let mut lab = Array3::zeros((8, 8, 8));
        lab[[3, 4, 5]] = 2;
        let l = label_volume(lab);
        let spec = DeformSpec {
            sigma_mm: 0.0,
            ..Default::default()
        };
        let (vs, ls) = elastic_deform(&[&v], &[&l], &spec).unwrap();
        assert_eq!(vs[0].data, v.data);
        assert_eq!(ls[0].data, l.data);
    }

    #[test]
    fn deterministic_under_seed() {
        let v = mr_volume(Array3::from_shape_fn((10, 9, 8), |(i, j, k)| {
            ((i + j + k) % 5) as f32
        }));
        let spec = DeformSpec {
            sigma_mm: 3.0,
            seed: 77,
            ..Default::default()
        };
        let (a, _) = elastic_deform(&[&v], &[], &spec).unwrap();
        let (b, _) = elastic_deform(&[&v], &[], &spec).unwrap();
        assert_eq!(a[0].data, b[0].data);
    }

    #[test]
    fn geometry_mismatch_rejected() {
        let v = mr_volume(Array3::zeros((4, 4, 4)));
        let l = label_volume(Array3::zeros((4, 4, 5)));
        assert!(matches!(
            elastic_deform(&[&v], &[&l], &DeformSpec::default()),
            Err(Error::GeometryMismatch { .. })
        ));
    }

    #[test]
    fn label_set_never_grows() {
        let mut lab = Array3::zeros((12, 12, 12));
        for i in 4..8 {
            for j in 4..8 {
                for k in 4..8 {
                    lab[[i, j, k]] = if i < 6 { 1 } else { 3 };
                }
            }
        }
        let l = label_volume(lab);
        let before: std::collections::BTreeSet<u16> = l.labels().into_iter().collect();
        let spec = DeformSpec {
            sigma_mm: 5.0,
            seed: 3,
            ..Default::default()
        };
        let (_, ls) = elastic_deform(&[], &[&l], &spec).unwrap();
        let after: std::collections::BTreeSet<u16> = ls[0].labels().into_iter().collect();
        assert!(after.is_subset(&before));
    }

    #[test]
    fn field_scales_linearly_with_sigma() {
        let spec1 = DeformSpec {
            sigma_mm: 1.0,
            seed: 5,
            ..Default::default()
        };
        let spec2 = DeformSpec {
            sigma_mm: 2.5,
            seed: 5,
            ..Default::default()
        };
        let f1 = displacement_field([6, 7, 8], &spec1).unwrap();
        let f2 = displacement_field([6, 7, 8], &spec2).unwrap();
        for (a, b) in f1.iter().zip(f2.iter()) {
            assert!((b - 2.5 * a).abs() < 1e-12);
        }
    }

    #[test]
    fn paired_inputs_stay_aligned() {
        // Scalar copy of the labels: wherever the pullback lands in a
        // single-label neighborhood, trilinear equals that label exactly.
        let mut lab = Array3::zeros((14, 14, 14));
        for i in 2..12 {
            for j in 2..12 {
                for k in 2..12 {
                    lab[[i, j, k]] = if j < 7 { 2 } else { 5 };
                }
            }
        }
        let l = label_volume(lab.clone());
        let v = mr_volume(lab.mapv(|x| x as f32));
        let spec = DeformSpec {
            sigma_mm: 2.0,
            seed: 11,
            ..Default::default()
        };
        let (vs, ls) = elastic_deform(&[&v], &[&l], &spec).unwrap();
        let field = displacement_field([14, 14, 14], &spec).unwrap();
        let mut checked = 0;
        for i in 0..14usize {
            for j in 0..14usize {
                for k in 0..14usize {
                    let p = [
                        i as f64 + field[[0, i, j, k]],
                        j as f64 + field[[1, i, j, k]],
                        k as f64 + field[[2, i, j, k]],
                    ];
                    if p.iter().any(|&x| x < 0.0 || x > 13.0) {
                        continue;
                    }
                    let corners: Vec<u16> = (0..8)
                        .map(|c| {
                            let q = [
                                (p[0].floor() as usize + (c & 1)).min(13),
                                (p[1].floor() as usize + ((c >> 1) & 1)).min(13),
                                (p[2].floor() as usize + ((c >> 2) & 1)).min(13),
                            ];
                            lab[[q[0], q[1], q[2]]]
                        })
                        .collect();
                    if corners.iter().all(|&c| c == corners[0]) {
                        assert_eq!(ls[0].data[[i, j, k]], corners[0]);
                        assert_eq!(vs[0].data[[i, j, k]], corners[0] as f32);
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 100, "only {checked} voxels checked");
    }

    #[test]
    fn jitter_constant_image_shifts_by_b() {
        use rand::SeedableRng;
        let v = Volume::new(
            Array3::from_elem((4, 4, 4), 0.25f32),
            Geometry::isotropic(1.0),
            IntensitySpace::Normalized,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = intensity_jitter(&v, 0.2, 0.2, &mut rng).unwrap();
        // a*(x-m)+m+b with x=m: result is m+b, the same everywhere.
        let first = out.data[[0, 0, 0]];
        assert!(out.data.iter().all(|&x| x == first));
        assert!((first - 0.25).abs() <= 0.2 + 1e-6);
    }

    #[test]
    fn jitter_zero_strength_is_identity() {
        use rand::SeedableRng;
        let v = Volume::new(
            Array3::from_shape_fn((3, 3, 3), |(i, _, _)| i as f32 / 3.0),
            Geometry::isotropic(1.0),
            IntensitySpace::Normalized,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = intensity_jitter(&v, 0.0, 0.0, &mut rng).unwrap();
        for (a, b) in out.data.iter().zip(v.data.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn jitter_requires_normalized() {
        let v = mr_volume(Array3::zeros((2, 2, 2)));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            intensity_jitter(&v, 0.2, 0.2, &mut rng),
            Err(Error::WrongIntensitySpace { .. })
        ));
    }
}
