//! Geometric and intensity preprocessing: normalization, resampling, slicing,
//! cropping, padding, coordinate ramps, patching and stitching.

use crate::error::{Error, Result};
use crate::geometry::{Geometry, Grid};
use crate::volume::{check_same_grid, IntensitySpace, LabelVolume, Volume};
use nalgebra::Vector3;
use ndarray::{Array2, Array3};
use rand::Rng;

/// CT normalization: HU / 1000, clamped to [-1, 1]. Air maps to -1, water to
/// 0, dense bone saturates at +1.
pub fn normalize_ct(v: &Volume) -> Result<Volume> {
    if v.intensity_space != IntensitySpace::Hounsfield {
        return Err(Error::WrongIntensitySpace {
            op: "normalize_ct",
            expected: "HU",
            actual: v.intensity_space.name().to_string(),
        });
    }
    let data = v.data.mapv(|x| (x / 1000.0).clamp(-1.0, 1.0));
    Volume::new(data, v.geom.clone(), IntensitySpace::Normalized)
}

/// MR normalization: linear map sending 0 to -1 and the per-volume maximum
/// to +1.
pub fn normalize_mr(v: &Volume) -> Result<Volume> {
    if v.intensity_space != IntensitySpace::MrRaw {
        return Err(Error::WrongIntensitySpace {
            op: "normalize_mr",
            expected: "MR-raw",
            actual: v.intensity_space.name().to_string(),
        });
    }
    let min = v.data.iter().cloned().fold(f32::INFINITY, f32::min);
    if min < 0.0 {
        return Err(Error::NegativeMrIntensity { min });
    }
    let max = v.data.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    if !(max > 0.0) {
        return Err(Error::AllZeroVolume);
    }
    let data = v.data.mapv(|x| (2.0 * x / max - 1.0).clamp(-1.0, 1.0));
    Volume::new(data, v.geom.clone(), IntensitySpace::Normalized)
}

/// Target grid with new spacing on the same origin/orientation, sized to
/// cover the source extent.
pub fn grid_with_spacing(src: &Grid, spacing: [f64; 3]) -> Result<Grid> {
    if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::DegenerateSpacing { spacing });
    }
    let mut dims = [0usize; 3];
    for k in 0..3 {
        let extent = src.dims[k] as f64 * src.geom.spacing[k];
        dims[k] = ((extent / spacing[k]).round() as usize).max(1);
    }
    Ok(Grid::new(
        dims,
        Geometry {
            spacing,
            origin: src.geom.origin,
            orientation: src.geom.orientation,
        },
    ))
}

/// Resample a scalar volume onto `target` through an optional world-space map
/// (`world_map` sends target-space world points to source-space world
/// points). Trilinear interpolation, out-of-field filled per intensity space.
pub fn resample_scalar_with(
    v: &Volume,
    target: &Grid,
    world_map: impl Fn(Vector3<f64>) -> Vector3<f64>,
) -> Result<Volume> {
    target.geom.validate()?;
    let fill = v.intensity_space.out_of_field();
    let mut out = Array3::zeros((target.dims[0], target.dims[1], target.dims[2]));
    for i in 0..target.dims[0] {
        for j in 0..target.dims[1] {
            for k in 0..target.dims[2] {
                let w = target
                    .geom
                    .world_from_voxel(Vector3::new(i as f64, j as f64, k as f64));
                let p = v.geom.voxel_from_world(world_map(w));
                out[[i, j, k]] = v.sample_trilinear([p.x, p.y, p.z], fill);
            }
        }
    }
    Volume::new(out, target.geom.clone(), v.intensity_space)
}

/// Resample a label volume onto `target`; nearest-neighbor, 0 outside.
pub fn resample_labels_with(
    l: &LabelVolume,
    target: &Grid,
    world_map: impl Fn(Vector3<f64>) -> Vector3<f64>,
) -> Result<LabelVolume> {
    target.geom.validate()?;
    let mut out = Array3::zeros((target.dims[0], target.dims[1], target.dims[2]));
    for i in 0..target.dims[0] {
        for j in 0..target.dims[1] {
            for k in 0..target.dims[2] {
                let w = target
                    .geom
                    .world_from_voxel(Vector3::new(i as f64, j as f64, k as f64));
                let p = l.geom.voxel_from_world(world_map(w));
                out[[i, j, k]] = l.sample_nearest([p.x, p.y, p.z]);
            }
        }
    }
    let mut res = LabelVolume::new(out, target.geom.clone())?;
    res.meaning = l.meaning.clone();
    Ok(res)
}

pub fn resample_scalar(v: &Volume, target: &Grid) -> Result<Volume> {
    resample_scalar_with(v, target, |w| w)
}

pub fn resample_labels(l: &LabelVolume, target: &Grid) -> Result<LabelVolume> {
    resample_labels_with(l, target, |w| w)
}

/// One sagittal slice paired with its label slice.
#[derive(Debug, Clone)]
pub struct SagittalPair {
    pub index: usize,
    pub image: Array2<f32>,
    pub labels: Array2<u16>,
}

/// Slice a volume sagittally, keeping only slices whose label plane is
/// nonempty. Order follows the sagittal index.
pub fn slice_sagittal(v: &Volume, labels: &LabelVolume) -> Result<Vec<SagittalPair>> {
    check_same_grid(&v.grid(), &labels.grid(), "slice_sagittal")?;
    let mut out = Vec::new();
    for i in 0..v.dims()[0] {
        let lab = labels.data.index_axis(ndarray::Axis(0), i);
        if lab.iter().any(|&x| x != 0) {
            out.push(SagittalPair {
                index: i,
                image: v.data.index_axis(ndarray::Axis(0), i).to_owned(),
                labels: lab.to_owned(),
            });
        }
    }
    Ok(out)
}

/// Zero-pad an image at the high end so both dims reach at least `size`.
pub fn pad_image_to(img: &Array2<f32>, size: [usize; 2], fill: f32) -> Array2<f32> {
    let (h, w) = img.dim();
    let th = h.max(size[0]);
    let tw = w.max(size[1]);
    if th == h && tw == w {
        return img.clone();
    }
    let mut out = Array2::from_elem((th, tw), fill);
    out.slice_mut(ndarray::s![..h, ..w]).assign(img);
    out
}

/// Uniformly random `size`-square crop. Inputs smaller than the crop are
/// zero-padded first, so the original content always survives intact.
/// Deterministic for a fixed RNG state.
pub fn random_crop_2d(img: &Array2<f32>, size: usize, rng: &mut impl Rng) -> Array2<f32> {
    let padded = pad_image_to(img, [size, size], 0.0);
    let (h, w) = padded.dim();
    let oy = if h > size { rng.random_range(0..=h - size) } else { 0 };
    let ox = if w > size { rng.random_range(0..=w - size) } else { 0 };
    padded
        .slice(ndarray::s![oy..oy + size, ox..ox + size])
        .to_owned()
}

/// Un-padding record produced by [`pad_to_multiple`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PadRecord {
    pub original_dims: [usize; 3],
}

/// Pad each axis by edge replication (high end) to the next multiple of `m`.
pub fn pad_to_multiple(v: &Volume, m: usize) -> (Volume, PadRecord) {
    let dims = v.dims();
    let record = PadRecord {
        original_dims: dims,
    };
    let target = [
        dims[0].div_ceil(m) * m,
        dims[1].div_ceil(m) * m,
        dims[2].div_ceil(m) * m,
    ];
    if target == dims {
        return (v.clone(), record);
    }
    let mut out = Array3::zeros((target[0], target[1], target[2]));
    for i in 0..target[0] {
        for j in 0..target[1] {
            for k in 0..target[2] {
                out[[i, j, k]] = v.data[[
                    i.min(dims[0] - 1),
                    j.min(dims[1] - 1),
                    k.min(dims[2] - 1),
                ]];
            }
        }
    }
    (
        Volume {
            data: out,
            geom: v.geom.clone(),
            intensity_space: v.intensity_space,
        },
        record,
    )
}

/// Undo [`pad_to_multiple`] exactly.
pub fn unpad(v: &Volume, record: &PadRecord) -> Volume {
    let d = record.original_dims;
    Volume {
        data: v.data.slice(ndarray::s![..d[0], ..d[1], ..d[2]]).to_owned(),
        geom: v.geom.clone(),
        intensity_space: v.intensity_space,
    }
}

/// Axis-aligned 3D voxel window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window3 {
    pub start: [usize; 3],
    pub size: [usize; 3],
}

/// Axis-aligned 2D pixel window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window2 {
    pub start: [usize; 2],
    pub size: [usize; 2],
}

/// Positional-encoding ramps: channel k runs linearly 0..1 across the FULL
/// image extent along axis k, then cropped to `window`. Degenerate axes
/// (a single voxel) give a constant 0 channel.
pub fn coordinate_ramps(full_dims: [usize; 3], window: Window3) -> Result<[Array3<f32>; 3]> {
    for a in 0..3 {
        if window.start[a] + window.size[a] > full_dims[a] || window.size[a] == 0 {
            return Err(Error::WindowOutOfBounds {
                window: [
                    (window.start[0], window.size[0]),
                    (window.start[1], window.size[1]),
                ],
                dims: [full_dims[0], full_dims[1]],
            });
        }
    }
    let shape = (window.size[0], window.size[1], window.size[2]);
    let mut out = [
        Array3::zeros(shape),
        Array3::zeros(shape),
        Array3::zeros(shape),
    ];
    for (axis, ramp) in out.iter_mut().enumerate() {
        let n = full_dims[axis];
        let denom = if n > 1 { (n - 1) as f32 } else { 1.0 };
        for ((i, j, k), val) in ramp.indexed_iter_mut() {
            let global = window.start[axis] + [i, j, k][axis];
            *val = if n > 1 { global as f32 / denom } else { 0.0 };
        }
    }
    Ok(out)
}

fn windows_1d(extent: usize, window: usize, stride: usize) -> Vec<usize> {
    debug_assert!(window <= extent && stride >= 1);
    let mut starts = Vec::new();
    let mut s = 0usize;
    loop {
        if s + window >= extent {
            starts.push(extent - window);
            break;
        }
        starts.push(s);
        s += stride;
    }
    starts
}

/// Tiling of a volume into patches. The last window per axis is clamped to
/// the boundary so the union of windows covers every voxel.
pub fn patch_windows(dims: [usize; 3], patch: [usize; 3], stride: [usize; 3]) -> Result<Vec<Window3>> {
    for a in 0..3 {
        if patch[a] > dims[a] || patch[a] == 0 {
            return Err(Error::PatchTooLarge { patch, dims });
        }
        if stride[a] == 0 {
            return Err(Error::Unsupported {
                what: "zero patch stride".to_string(),
            });
        }
    }
    let xs = windows_1d(dims[0], patch[0], stride[0]);
    let ys = windows_1d(dims[1], patch[1], stride[1]);
    let zs = windows_1d(dims[2], patch[2], stride[2]);
    let mut out = Vec::with_capacity(xs.len() * ys.len() * zs.len());
    for &x in &xs {
        for &y in &ys {
            for &z in &zs {
                out.push(Window3 {
                    start: [x, y, z],
                    size: patch,
                });
            }
        }
    }
    Ok(out)
}

/// Extract a patch as a Volume whose origin is the window start's world point.
pub fn extract_patch(v: &Volume, w: Window3) -> Volume {
    let data = v
        .data
        .slice(ndarray::s![
            w.start[0]..w.start[0] + w.size[0],
            w.start[1]..w.start[1] + w.size[1],
            w.start[2]..w.start[2] + w.size[2]
        ])
        .to_owned();
    let origin = v.geom.world_from_voxel(Vector3::new(
        w.start[0] as f64,
        w.start[1] as f64,
        w.start[2] as f64,
    ));
    Volume {
        data,
        geom: Geometry {
            spacing: v.geom.spacing,
            origin,
            orientation: v.geom.orientation,
        },
        intensity_space: v.intensity_space,
    }
}

/// Split a volume into boundary-clamped patches.
pub fn patch_3d(v: &Volume, patch: [usize; 3], stride: [usize; 3]) -> Result<Vec<(Volume, Window3)>> {
    let windows = patch_windows(v.dims(), patch, stride)?;
    Ok(windows
        .into_iter()
        .map(|w| (extract_patch(v, w), w))
        .collect())
}

fn feather_weight(offset: usize, size: usize) -> f64 {
    // Triangular profile: 1 at the tile edge, rising linearly inward.
    (offset + 1).min(size - offset) as f64
}

/// Reassemble tiles into a full 2D image. Overlaps are averaged with linear
/// feathering toward each tile's edges; pixels no tile covers become -1.
pub fn stitch_2d(tiles: &[(Array2<f32>, Window2)], full_dims: [usize; 2]) -> Result<Array2<f32>> {
    let mut num = Array2::<f64>::zeros((full_dims[0], full_dims[1]));
    let mut den = Array2::<f64>::zeros((full_dims[0], full_dims[1]));
    for (tile, w) in tiles {
        let (th, tw) = tile.dim();
        if [th, tw] != w.size {
            return Err(Error::ShapeMismatch {
                a: vec![th, tw],
                b: w.size.to_vec(),
            });
        }
        if w.start[0] + w.size[0] > full_dims[0] || w.start[1] + w.size[1] > full_dims[1] {
            return Err(Error::WindowOutOfBounds {
                window: [(w.start[0], w.size[0]), (w.start[1], w.size[1])],
                dims: full_dims,
            });
        }
        for dy in 0..th {
            let wy = feather_weight(dy, th);
            for dx in 0..tw {
                let wt = wy * feather_weight(dx, tw);
                let y = w.start[0] + dy;
                let x = w.start[1] + dx;
                num[[y, x]] += wt * tile[[dy, dx]] as f64;
                den[[y, x]] += wt;
            }
        }
    }
    let mut out = Array2::from_elem((full_dims[0], full_dims[1]), -1.0f32);
    for ((y, x), d) in den.indexed_iter() {
        if *d > 0.0 {
            out[[y, x]] = (num[[y, x]] / d) as f32;
        }
    }
    Ok(out)
}

/// 3D analogue of [`stitch_2d`], used to recombine translated patches.
pub fn stitch_3d(tiles: &[(Array3<f32>, Window3)], full_dims: [usize; 3]) -> Result<Array3<f32>> {
    let mut num = Array3::<f64>::zeros((full_dims[0], full_dims[1], full_dims[2]));
    let mut den = Array3::<f64>::zeros((full_dims[0], full_dims[1], full_dims[2]));
    for (tile, w) in tiles {
        let td = tile.dim();
        let td = [td.0, td.1, td.2];
        if td != w.size {
            return Err(Error::ShapeMismatch {
                a: td.to_vec(),
                b: w.size.to_vec(),
            });
        }
        for a in 0..3 {
            if w.start[a] + w.size[a] > full_dims[a] {
                return Err(Error::WindowOutOfBounds {
                    window: [(w.start[0], w.size[0]), (w.start[1], w.size[1])],
                    dims: [full_dims[0], full_dims[1]],
                });
            }
        }
        for dx in 0..td[0] {
            let wx = feather_weight(dx, td[0]);
            for dy in 0..td[1] {
                let wy = feather_weight(dy, td[1]);
                for dz in 0..td[2] {
                    let wt = wx * wy * feather_weight(dz, td[2]);
                    let p = [w.start[0] + dx, w.start[1] + dy, w.start[2] + dz];
                    num[p] += wt * tile[[dx, dy, dz]] as f64;
                    den[p] += wt;
                }
            }
        }
    }
    let mut out = Array3::from_elem((full_dims[0], full_dims[1], full_dims[2]), -1.0f32);
    for (p, d) in den.indexed_iter() {
        if *d > 0.0 {
            out[p] = (num[p] / d) as f32;
        }
    }
    Ok(out)
}

/// Deterministic 2D tiling with boundary clamping for inference-time
/// translation of whole slices.
pub fn tile_windows_2d(dims: [usize; 2], tile: [usize; 2], stride: [usize; 2]) -> Result<Vec<Window2>> {
    for a in 0..2 {
        if tile[a] > dims[a] || tile[a] == 0 {
            return Err(Error::WindowOutOfBounds {
                window: [(0, tile[0]), (0, tile[1])],
                dims,
            });
        }
        if stride[a] == 0 {
            return Err(Error::Unsupported {
                what: "zero tile stride".to_string(),
            });
        }
    }
    let ys = windows_1d(dims[0], tile[0], stride[0]);
    let xs = windows_1d(dims[1], tile[1], stride[1]);
    let mut out = Vec::with_capacity(ys.len() * xs.len());
    for &y in &ys {
        for &x in &xs {
            out.push(Window2 {
                start: [y, x],
                size: tile,
            });
        }
    }
    Ok(out)
}
