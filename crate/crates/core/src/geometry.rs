//! World-space geometry shared by volumes: spacing, origin, direction cosines,
//! and rigid transforms between paired volumes.

use crate::error::{Error, Result};
use nalgebra::{Matrix3, Matrix4, Vector3};

/// Tolerance for orthonormality checks on direction matrices.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// Voxel-grid to world-space mapping: `world = origin + orientation * diag(spacing) * index`.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    /// Millimetres per voxel along each axis.
    pub spacing: [f64; 3],
    /// World position of voxel (0, 0, 0), in mm.
    pub origin: Vector3<f64>,
    /// Direction cosines; column k is the world direction of voxel axis k.
    pub orientation: Matrix3<f64>,
}

impl Geometry {
    /// Axis-aligned geometry with the given spacing and origin at zero.
    pub fn isotropic(spacing: f64) -> Self {
        Geometry {
            spacing: [spacing; 3],
            origin: Vector3::zeros(),
            orientation: Matrix3::identity(),
        }
    }

    pub fn new(spacing: [f64; 3], origin: Vector3<f64>, orientation: Matrix3<f64>) -> Result<Self> {
        let g = Geometry {
            spacing,
            origin,
            orientation,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::DegenerateSpacing {
                spacing: self.spacing,
            });
        }
        let gram = self.orientation.transpose() * self.orientation;
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev >= ORTHONORMAL_TOL {
            return Err(Error::GeometryMismatch {
                detail: format!("orientation not orthonormal (max deviation {dev:.3e})"),
            });
        }
        Ok(())
    }

    /// World coordinates of a (possibly fractional) voxel index.
    pub fn world_from_voxel(&self, index: Vector3<f64>) -> Vector3<f64> {
        let scaled = Vector3::new(
            index.x * self.spacing[0],
            index.y * self.spacing[1],
            index.z * self.spacing[2],
        );
        self.origin + self.orientation * scaled
    }

    /// Continuous voxel index of a world point.
    pub fn voxel_from_world(&self, world: Vector3<f64>) -> Vector3<f64> {
        let local = self.orientation.transpose() * (world - self.origin);
        Vector3::new(
            local.x / self.spacing[0],
            local.y / self.spacing[1],
            local.z / self.spacing[2],
        )
    }

    /// 4x4 homogeneous voxel-to-world affine.
    pub fn affine(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        for c in 0..3 {
            for r in 0..3 {
                m[(r, c)] = self.orientation[(r, c)] * self.spacing[c];
            }
            m[(c, 3)] = self.origin[c];
        }
        m
    }

    /// Build a geometry from a voxel-to-world affine, splitting columns into
    /// spacing (column norms) and direction cosines.
    pub fn from_affine(affine: &Matrix4<f64>) -> Result<Self> {
        let mut spacing = [0.0f64; 3];
        let mut orientation = Matrix3::zeros();
        for c in 0..3 {
            let col = Vector3::new(affine[(0, c)], affine[(1, c)], affine[(2, c)]);
            let n = col.norm();
            if !(n > 0.0) {
                return Err(Error::GeometryMismatch {
                    detail: format!("affine column {c} has zero norm"),
                });
            }
            spacing[c] = n;
            orientation.set_column(c, &(col / n));
        }
        if orientation.determinant().abs() < 1e-12 {
            return Err(Error::GeometryMismatch {
                detail: "affine upper-left 3x3 is singular".to_string(),
            });
        }
        // Float32 headers carry a little orthogonality noise; snap when close.
        let gram = orientation.transpose() * orientation;
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev >= ORTHONORMAL_TOL {
            if dev < 1e-4 {
                let svd = orientation.svd(true, true);
                orientation = svd.u.unwrap() * svd.v_t.unwrap();
            } else {
                return Err(Error::GeometryMismatch {
                    detail: format!("affine directions not orthonormal (deviation {dev:.3e})"),
                });
            }
        }
        Geometry::new(
            spacing,
            Vector3::new(affine[(0, 3)], affine[(1, 3)], affine[(2, 3)]),
            orientation,
        )
    }

    pub fn approx_eq(&self, other: &Geometry, tol: f64) -> bool {
        self.spacing
            .iter()
            .zip(other.spacing.iter())
            .all(|(a, b)| (a - b).abs() <= tol)
            && (self.origin - other.origin).abs().max() <= tol
            && (self.orientation - other.orientation).abs().max() <= tol
    }
}

/// A sampling grid: voxel counts plus geometry. Used as the target of
/// resampling and rigid-transform application.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub dims: [usize; 3],
    pub geom: Geometry,
}

impl Grid {
    pub fn new(dims: [usize; 3], geom: Geometry) -> Self {
        Grid { dims, geom }
    }
}

/// Proper rigid motion in world space: `world' = rotation * world + translation`.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let t = RigidTransform {
            rotation,
            translation,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let gram = self.rotation.transpose() * self.rotation;
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev >= ORTHONORMAL_TOL {
            return Err(Error::InvalidTransform {
                detail: format!("rotation not orthonormal (deviation {dev:.3e})"),
            });
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() >= 1e-9 {
            return Err(Error::InvalidTransform {
                detail: format!("rotation determinant {det} is not +1"),
            });
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidTransform {
                detail: "translation not finite".to_string(),
            });
        }
        Ok(())
    }

    pub fn translation_only(translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation by `angle_rad` about `axis`, passing through world point `center`.
    pub fn rotation_about(axis: Vector3<f64>, angle_rad: f64, center: Vector3<f64>) -> Self {
        let rotation = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(axis),
            angle_rad,
        )
        .into_inner();
        let translation = center - rotation * center;
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn apply(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rot_inv = self.rotation.transpose();
        RigidTransform {
            rotation: rot_inv,
            translation: -(rot_inv * self.translation),
        }
    }

    /// `self` after `first`: maps p to self(first(p)).
    pub fn compose(&self, first: &RigidTransform) -> Self {
        RigidTransform {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }

    /// Rotation angle in radians (0..=pi).
    pub fn angle(&self) -> f64 {
        let trace = self.rotation.trace();
        (((trace - 1.0) / 2.0).clamp(-1.0, 1.0)).acos()
    }
}
