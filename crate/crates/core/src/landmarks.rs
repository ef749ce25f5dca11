//! Per-vertebra landmark extraction and least-squares rigid registration.
//!
//! Landmarks are unweighted centroids of labeled voxels in world mm: the
//! vertebral body center (always) and the spinous-process center (when a
//! subregion segmentation is available). Correspondence between two landmark
//! sets is by vertebra id, never nearest-neighbor.

use crate::error::{Error, Result};
use crate::geometry::{Grid, RigidTransform};
use crate::preprocess::{resample_labels_with, resample_scalar_with};
use crate::volume::{LabelVolume, Volume, SUBREGION_BODY, SUBREGION_POSTERIOR};
use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use std::io::Write;
use std::path::Path;

/// One vertebra's landmarks in world mm.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub id: u16,
    pub body: Vector3<f64>,
    pub spinous: Option<Vector3<f64>>,
}

/// Landmarks for a column, sorted by vertebra id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LandmarkSet {
    pub entries: Vec<Landmark>,
}

impl LandmarkSet {
    pub fn get(&self, id: u16) -> Option<&Landmark> {
        self.entries.iter().find(|l| l.id == id)
    }

    pub fn ids(&self) -> Vec<u16> {
        self.entries.iter().map(|l| l.id).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Apply a rigid transform to every point.
    pub fn transformed(&self, t: &RigidTransform) -> LandmarkSet {
        LandmarkSet {
            entries: self
                .entries
                .iter()
                .map(|l| Landmark {
                    id: l.id,
                    body: t.apply(l.body),
                    spinous: l.spinous.map(|s| t.apply(s)),
                })
                .collect(),
        }
    }

    /// Add isotropic Gaussian jitter to every point; models the placement
    /// noise of manually picked landmarks.
    pub fn jittered(&self, sigma_mm: f64, rng: &mut impl Rng) -> LandmarkSet {
        let mut noise = |p: Vector3<f64>| {
            let d: [f64; 3] = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            p + Vector3::new(d[0], d[1], d[2]) * sigma_mm
        };
        LandmarkSet {
            entries: self
                .entries
                .iter()
                .map(|l| Landmark {
                    id: l.id,
                    body: noise(l.body),
                    spinous: l.spinous.map(&mut noise),
                })
                .collect(),
        }
    }
}

/// Extract per-vertebra centroids. With a subregion volume, the body point
/// averages body-subregion voxels and the spinous point averages posterior
/// voxels; without one, the body point is the whole-vertebra mean and no
/// spinous point is produced.
pub fn extract_centroids(
    labels: &LabelVolume,
    subregions: Option<&LabelVolume>,
) -> Result<LandmarkSet> {
    if let Some(sub) = subregions {
        crate::volume::check_same_grid(&labels.grid(), &sub.grid(), "extract_centroids")?;
    }
    #[derive(Default)]
    struct Acc {
        all: (Vector3<f64>, f64),
        body: (Vector3<f64>, f64),
        posterior: (Vector3<f64>, f64),
    }
    let mut acc: std::collections::BTreeMap<u16, Acc> = std::collections::BTreeMap::new();
    for ((i, j, k), &id) in labels.data.indexed_iter() {
        if id == 0 {
            continue;
        }
        let w = labels
            .geom
            .world_from_voxel(Vector3::new(i as f64, j as f64, k as f64));
        let e = acc.entry(id).or_default();
        e.all.0 += w;
        e.all.1 += 1.0;
        if let Some(sub) = subregions {
            match sub.data[[i, j, k]] {
                SUBREGION_BODY => {
                    e.body.0 += w;
                    e.body.1 += 1.0;
                }
                SUBREGION_POSTERIOR => {
                    e.posterior.0 += w;
                    e.posterior.1 += 1.0;
                }
                _ => {}
            }
        }
    }
    if acc.is_empty() {
        return Err(Error::EmptyLabels);
    }
    let entries = acc
        .into_iter()
        .map(|(id, a)| {
            let body = if a.body.1 > 0.0 {
                a.body.0 / a.body.1
            } else {
                a.all.0 / a.all.1
            };
            let spinous = (a.posterior.1 > 0.0).then(|| a.posterior.0 / a.posterior.1);
            Landmark { id, body, spinous }
        })
        .collect();
    Ok(LandmarkSet { entries })
}

/// Same contract as [`extract_centroids`], applied to a segmentation of a
/// synthesized CT: the explicit edge that closes the pipeline loop by
/// producing fresh center points for the next registration round.
pub fn regenerate_landmarks(seg: &LabelVolume, subregions: &LabelVolume) -> Result<LandmarkSet> {
    extract_centroids(seg, Some(subregions))
}

/// Which landmarks take part in the rigid fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMode {
    /// Body centroids only; a straight column leaves the cranio-caudal
    /// rotation unconstrained.
    OnePoint,
    /// Body plus spinous centroids.
    TwoPoint,
}

/// Diagnostics from a rigid fit.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub rms_mm: f64,
    pub n_points: usize,
    /// Set when the matched points are (near-)degenerate: the smallest
    /// cross-covariance singular value is below 1e-6 of the largest.
    pub collinear: bool,
    pub singular_values: [f64; 3],
    pub mode: FitMode,
}

const DEGENERACY_RATIO: f64 = 1e-6;

/// Least-squares rigid fit from `src` landmarks onto `dst` landmarks:
/// centroid subtraction, cross-covariance SVD, reflection-corrected rotation.
///
/// Degenerate (collinear) configurations still return a transform: the free
/// rotation about the common axis resolves to the minimal-angle rotation, so
/// a straight column's one-point fit never sees a cranio-caudal twist.
pub fn fit_rigid(
    src: &LandmarkSet,
    dst: &LandmarkSet,
    mode: FitMode,
) -> Result<(RigidTransform, FitReport)> {
    let mut pairs: Vec<(Vector3<f64>, Vector3<f64>)> = Vec::new();
    for s in &src.entries {
        let Some(d) = dst.get(s.id) else { continue };
        pairs.push((s.body, d.body));
        if mode == FitMode::TwoPoint {
            match (s.spinous, d.spinous) {
                (Some(a), Some(b)) => pairs.push((a, b)),
                _ => return Err(Error::MissingSpinous { id: s.id }),
            }
        }
    }
    if pairs.len() < 3 {
        return Err(Error::TooFewPoints { got: pairs.len() });
    }

    let n = pairs.len() as f64;
    let c_src = pairs.iter().map(|(s, _)| s).sum::<Vector3<f64>>() / n;
    let c_dst = pairs.iter().map(|(_, d)| d).sum::<Vector3<f64>>() / n;

    let mut cov = Matrix3::zeros();
    for (s, d) in &pairs {
        cov += (s - c_src) * (d - c_dst).transpose();
    }

    let svd = cov.svd(true, true);
    let mut sv = [svd.singular_values[0], svd.singular_values[1], svd.singular_values[2]];
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let collinear = sv[2] < DEGENERACY_RATIO * sv[0].max(f64::MIN_POSITIVE);
    let rank1 = sv[1] < DEGENERACY_RATIO * sv[0].max(f64::MIN_POSITIVE);

    let rotation = if rank1 {
        minimal_rotation_for_line(&pairs, c_src, c_dst)
    } else {
        let u = svd.u.unwrap();
        let v_t = svd.v_t.unwrap();
        let v = v_t.transpose();
        let d = (v * u.transpose()).determinant();
        let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum()));
        v * correction * u.transpose()
    };
    let translation = c_dst - rotation * c_src;
    let transform = RigidTransform {
        rotation,
        translation,
    };

    let mut ss = 0.0;
    for (s, d) in &pairs {
        ss += (transform.apply(*s) - d).norm_squared();
    }
    let report = FitReport {
        rms_mm: (ss / n).sqrt(),
        n_points: pairs.len(),
        collinear,
        singular_values: sv,
        mode,
    };
    Ok((transform, report))
}

/// For exactly collinear point sets the rotation about the line is
/// unconstrained; pick the minimal rotation mapping the source line direction
/// onto the destination one (zero twist).
fn minimal_rotation_for_line(
    pairs: &[(Vector3<f64>, Vector3<f64>)],
    c_src: Vector3<f64>,
    c_dst: Vector3<f64>,
) -> Matrix3<f64> {
    let dir = |centered: Vec<Vector3<f64>>| -> Vector3<f64> {
        let mut scatter = Matrix3::zeros();
        for p in &centered {
            scatter += p * p.transpose();
        }
        let eig = scatter.symmetric_eigen();
        let mut best = 0;
        for k in 1..3 {
            if eig.eigenvalues[k] > eig.eigenvalues[best] {
                best = k;
            }
        }
        Vector3::from(eig.eigenvectors.column(best))
    };
    let src_c: Vec<_> = pairs.iter().map(|(s, _)| s - c_src).collect();
    let dst_c: Vec<_> = pairs.iter().map(|(_, d)| d - c_dst).collect();
    // Orient both directions consistently via the first-to-last point spread.
    let reference = src_c.last().copied().unwrap_or_else(Vector3::zeros)
        - src_c.first().copied().unwrap_or_else(Vector3::zeros);
    let ref_dst = dst_c.last().copied().unwrap_or_else(Vector3::zeros)
        - dst_c.first().copied().unwrap_or_else(Vector3::zeros);
    let mut u = dir(src_c);
    if u.dot(&reference) < 0.0 {
        u = -u;
    }
    let mut v = dir(dst_c);
    if v.dot(&ref_dst) < 0.0 {
        v = -v;
    }
    rotation_between(u, v)
}

fn rotation_between(u: Vector3<f64>, v: Vector3<f64>) -> Matrix3<f64> {
    let u = u.normalize();
    let v = v.normalize();
    let axis = u.cross(&v);
    let sin = axis.norm();
    let cos = u.dot(&v);
    if sin < 1e-14 {
        if cos > 0.0 {
            return Matrix3::identity();
        }
        // Antiparallel: rotate pi about any axis perpendicular to u.
        let helper = if u.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let perp = u.cross(&helper).normalize();
        return nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(perp), std::f64::consts::PI)
            .into_inner();
    }
    let angle = sin.atan2(cos);
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).into_inner()
}

/// Resample a scalar volume into the destination space of `t` on `target`.
pub fn apply_rigid(v: &Volume, t: &RigidTransform, target: &Grid) -> Result<Volume> {
    t.validate()?;
    let inv = t.inverse();
    resample_scalar_with(v, target, |w| inv.apply(w))
}

/// Label-volume counterpart of [`apply_rigid`] (nearest-neighbor sampling).
pub fn apply_rigid_labels(l: &LabelVolume, t: &RigidTransform, target: &Grid) -> Result<LabelVolume> {
    t.validate()?;
    let inv = t.inverse();
    resample_labels_with(l, target, |w| inv.apply(w))
}

/// Write landmarks as plain text: `vertebra_id x y z [sx sy sz]` per line,
/// world mm. Atomic (temp file + rename).
pub fn write_landmarks(set: &LandmarkSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("# vertebra_id x y z [sx sy sz]\n");
    for l in &set.entries {
        text.push_str(&format!("{} {} {} {}", l.id, l.body.x, l.body.y, l.body.z));
        if let Some(s) = l.spinous {
            text.push_str(&format!(" {} {} {}", s.x, s.y, s.z));
        }
        text.push('\n');
    }
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(|e| Error::io(path, e))?;
    tmp.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Parse a landmark file written by [`write_landmarks`].
pub fn read_landmarks(path: impl AsRef<Path>) -> Result<LandmarkSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 4 && tokens.len() != 7 {
            return Err(Error::BadLandmarkLine {
                line: lineno + 1,
                detail: format!("expected 4 or 7 fields, found {}", tokens.len()),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|e| Error::BadLandmarkLine {
                line: lineno + 1,
                detail: format!("{s:?}: {e}"),
            })
        };
        let id = tokens[0].parse::<u16>().map_err(|e| Error::BadLandmarkLine {
            line: lineno + 1,
            detail: format!("vertebra id {:?}: {e}", tokens[0]),
        })?;
        let body = Vector3::new(parse(tokens[1])?, parse(tokens[2])?, parse(tokens[3])?);
        let spinous = if tokens.len() == 7 {
            Some(Vector3::new(
                parse(tokens[4])?,
                parse(tokens[5])?,
                parse(tokens[6])?,
            ))
        } else {
            None
        };
        if !body.iter().all(|x| x.is_finite())
            || spinous.is_some_and(|s| !s.iter().all(|x| x.is_finite()))
        {
            return Err(Error::BadLandmarkLine {
                line: lineno + 1,
                detail: "non-finite coordinate".to_string(),
            });
        }
        entries.push(Landmark { id, body, spinous });
    }
    entries.sort_by_key(|l| l.id);
    for pair in entries.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(Error::BadLandmarkLine {
                line: 0,
                detail: format!("duplicate vertebra id {}", pair[0].id),
            });
        }
    }
    Ok(LandmarkSet { entries })
}
