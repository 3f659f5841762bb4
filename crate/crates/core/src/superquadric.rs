//! Superquadric value types and the implicit inside-outside function.
//!
//! A superquadric is described by two shape exponents, three semi-axis
//! lengths and a rigid pose. In its local frame the surface is the level set
//! `f(p) = 1` of
//!
//! ```text
//! f(x, y, z) = (|x/ax|^(2/e2) + |y/ay|^(2/e2))^(e2/e1) + |z/az|^(2/e1)
//! ```
//!
//! All lengths are millimetres. Only the convex family is supported, so both
//! exponents live in `[EPS_MIN, EPS_MAX]`.

use std::cmp::Ordering;

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;

/// Smallest admissible shape exponent. Below this the exponents `2/eps`
/// overflow for points only moderately outside the surface.
pub const EPS_MIN: f64 = 0.1;
/// Largest admissible shape exponent (convex region).
pub const EPS_MAX: f64 = 2.0;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeParams {
    eps1: f64,
    eps2: f64,
}

impl ShapeParams {
    pub fn new(eps1: f64, eps2: f64) -> Result<Self> {
        for (name, v) in [("eps1", eps1), ("eps2", eps2)] {
            if !(EPS_MIN..=EPS_MAX).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {v} outside [{EPS_MIN}, {EPS_MAX}]"
                )));
            }
        }
        Ok(Self { eps1, eps2 })
    }

    /// Clamps both exponents into the admissible range.
    pub fn clamped(eps1: f64, eps2: f64) -> Self {
        Self {
            eps1: eps1.clamp(EPS_MIN, EPS_MAX),
            eps2: eps2.clamp(EPS_MIN, EPS_MAX),
        }
    }

    pub fn eps1(&self) -> f64 {
        self.eps1
    }

    pub fn eps2(&self) -> f64 {
        self.eps2
    }

    fn swapped(&self) -> Self {
        Self {
            eps1: self.eps2,
            eps2: self.eps1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleParams {
    ax: f64,
    ay: f64,
    az: f64,
}

impl ScaleParams {
    pub fn new(ax: f64, ay: f64, az: f64) -> Result<Self> {
        for (name, v) in [("ax", ax), ("ay", ay), ("az", az)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "scale {name} = {v} must be finite and positive"
                )));
            }
        }
        Ok(Self { ax, ay, az })
    }

    pub fn ax(&self) -> f64 {
        self.ax
    }

    pub fn ay(&self) -> f64 {
        self.ay
    }

    pub fn az(&self) -> f64 {
        self.az
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.ax, self.ay, self.az]
    }

    pub fn min(&self) -> f64 {
        self.ax.min(self.ay).min(self.az)
    }

    pub fn max(&self) -> f64 {
        self.ax.max(self.ay).max(self.az)
    }

    pub fn mean(&self) -> f64 {
        (self.ax + self.ay + self.az) / 3.0
    }
}

/// Rigid placement of the superquadric's local frame in the world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Rotation3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose from a rotation matrix, checking orthonormality and
    /// handedness.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite translation".into()));
        }
        let gram_err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if !(gram_err <= ORTHONORMAL_TOL) {
            return Err(Error::InvalidParameter(format!(
                "rotation is not orthonormal (max |RᵀR - I| = {gram_err:e})"
            )));
        }
        let det = rotation.determinant();
        if !((det - 1.0).abs() <= ORTHONORMAL_TOL) {
            return Err(Error::InvalidParameter(format!(
                "rotation determinant is {det}, expected +1"
            )));
        }
        Ok(Self {
            rotation: Rotation3::from_matrix_unchecked(rotation),
            translation,
        })
    }

    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !axis_angle.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite rotation".into()));
        }
        Self::new(*Rotation3::new(axis_angle).matrix(), translation)
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self {
            rotation: iso.rotation.to_rotation_matrix(),
            translation: iso.translation.vector,
        }
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn axis_angle(&self) -> Vector3<f64> {
        self.rotation.scaled_axis()
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::from(self.translation),
            UnitQuaternion::from_rotation_matrix(&self.rotation),
        )
    }

    /// World point to local frame: `Rᵀ(p - t)`.
    #[inline]
    pub fn to_local(&self, p: &Point3) -> Vector3<f64> {
        self.rotation.inverse_transform_vector(&(p.coords - self.translation))
    }

    #[inline]
    pub fn to_world(&self, local: &Vector3<f64>) -> Point3 {
        Point3::from(self.rotation * local + self.translation)
    }

    /// Pose of `g ∘ self`.
    pub fn premultiply(&self, g: &Isometry3<f64>) -> Self {
        let gr = g.rotation.to_rotation_matrix();
        Self {
            rotation: Rotation3::from_matrix_unchecked(gr.matrix() * self.rotation.matrix()),
            translation: gr * self.translation + g.translation.vector,
        }
    }

    fn with_local_relabel(&self, q: &Matrix3<f64>) -> Self {
        Self {
            rotation: Rotation3::from_matrix_unchecked(self.rotation.matrix() * q),
            translation: self.translation,
        }
    }
}

/// Serialized form of a superquadric; the interchange format of every
/// command-line tool.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ThetaJson {
    pub eps1: f64,
    pub eps2: f64,
    pub scale: [f64; 3],
    pub rotation_axis_angle: [f64; 3],
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ThetaJson", into = "ThetaJson")]
pub struct Superquadric {
    shape: ShapeParams,
    scale: ScaleParams,
    pose: Pose,
}

impl TryFrom<ThetaJson> for Superquadric {
    type Error = Error;

    fn try_from(j: ThetaJson) -> Result<Self> {
        Ok(Self::new(
            ShapeParams::new(j.eps1, j.eps2)?,
            ScaleParams::new(j.scale[0], j.scale[1], j.scale[2])?,
            Pose::from_axis_angle(j.rotation_axis_angle.into(), j.translation.into())?,
        ))
    }
}

impl From<Superquadric> for ThetaJson {
    fn from(sq: Superquadric) -> Self {
        let v = sq.to_vector();
        ThetaJson {
            eps1: v[0],
            eps2: v[1],
            scale: [v[2], v[3], v[4]],
            rotation_axis_angle: [v[5], v[6], v[7]],
            translation: [v[8], v[9], v[10]],
        }
    }
}

/// Number of degrees of freedom in the flattened parameter vector.
pub const PARAM_DIM: usize = 11;

impl Superquadric {
    pub fn new(shape: ShapeParams, scale: ScaleParams, pose: Pose) -> Self {
        Self { shape, scale, pose }
    }

    /// Convenience constructor with an axis-angle rotation.
    pub fn from_parts(
        eps1: f64,
        eps2: f64,
        scale: [f64; 3],
        axis_angle: [f64; 3],
        translation: [f64; 3],
    ) -> Result<Self> {
        Ok(Self::new(
            ShapeParams::new(eps1, eps2)?,
            ScaleParams::new(scale[0], scale[1], scale[2])?,
            Pose::from_axis_angle(axis_angle.into(), translation.into())?,
        ))
    }

    pub fn unit_sphere() -> Self {
        Self::sphere(1.0, Vector3::zeros())
    }

    pub fn sphere(radius: f64, center: Vector3<f64>) -> Self {
        Self {
            shape: ShapeParams { eps1: 1.0, eps2: 1.0 },
            scale: ScaleParams {
                ax: radius,
                ay: radius,
                az: radius,
            },
            pose: Pose {
                rotation: Rotation3::identity(),
                translation: center,
            },
        }
    }

    /// Flattened parameter vector
    /// `(eps1, eps2, ax, ay, az, rx, ry, rz, tx, ty, tz)` with the rotation as
    /// an axis-angle vector in radians.
    pub fn to_vector(&self) -> [f64; PARAM_DIM] {
        let r = self.pose.axis_angle();
        let t = self.pose.translation;
        [
            self.shape.eps1,
            self.shape.eps2,
            self.scale.ax,
            self.scale.ay,
            self.scale.az,
            r.x,
            r.y,
            r.z,
            t.x,
            t.y,
            t.z,
        ]
    }

    pub fn from_vector(v: &[f64; PARAM_DIM]) -> Result<Self> {
        Self::from_parts(
            v[0],
            v[1],
            [v[2], v[3], v[4]],
            [v[5], v[6], v[7]],
            [v[8], v[9], v[10]],
        )
    }

    /// Builds a superquadric without range checks on the exponents and scales.
    /// Used by the fitter to evaluate finite-difference probes just outside
    /// the admissible box; the evaluation formulas stay defined for any
    /// positive values.
    pub(crate) fn new_unchecked(
        eps1: f64,
        eps2: f64,
        scale: [f64; 3],
        rotation: Rotation3<f64>,
        translation: Vector3<f64>,
    ) -> Self {
        Self {
            shape: ShapeParams { eps1, eps2 },
            scale: ScaleParams {
                ax: scale[0],
                ay: scale[1],
                az: scale[2],
            },
            pose: Pose {
                rotation,
                translation,
            },
        }
    }

    pub fn shape(&self) -> &ShapeParams {
        &self.shape
    }

    pub fn scale(&self) -> &ScaleParams {
        &self.scale
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    pub fn with_shape(mut self, shape: ShapeParams) -> Self {
        self.shape = shape;
        self
    }

    pub fn with_scale(mut self, scale: ScaleParams) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_pose(mut self, pose: Pose) -> Self {
        self.pose = pose;
        self
    }

    /// The same solid moved by the rigid motion `g`.
    pub fn transformed(&self, g: &Isometry3<f64>) -> Self {
        self.with_pose(self.pose.premultiply(g))
    }

    /// Evaluates the inside-outside function at a world point.
    /// `< 1` inside, `= 1` on the surface, `> 1` outside.
    pub fn inside_outside(&self, p: &Point3) -> f64 {
        self.inside_outside_local(&self.pose.to_local(p))
    }

    pub fn inside_outside_local(&self, local: &Vector3<f64>) -> f64 {
        match self.normalized(local) {
            Some((m, fn_)) => m.powf(2.0 / self.shape.eps1) * fn_,
            None => 0.0,
        }
    }

    /// Radial distance to the surface: distance from `p` to the point where
    /// the ray from the local origin through `p` crosses the surface.
    /// At the local origin itself the smallest semi-axis is returned.
    pub fn radial_distance(&self, p: &Point3) -> f64 {
        match self.signed_radial_local(&self.pose.to_local(p)) {
            Some(d) => d.abs(),
            None => self.scale.min(),
        }
    }

    /// Signed radial distance in the local frame, positive outside.
    /// `None` at the local origin.
    #[inline]
    pub fn signed_radial_local(&self, local: &Vector3<f64>) -> Option<f64> {
        let (m, fn_) = self.normalized(local)?;
        let norm = local.norm();
        // f^(-e1/2) = (m^(2/e1) * fn)^(-e1/2) = fn^(-e1/2) / m
        let ratio = fn_.powf(-0.5 * self.shape.eps1) / m;
        Some(norm * (1.0 - ratio))
    }

    /// Splits `f` into `m^(2/e1) * fn` where `m` is the largest normalized
    /// coordinate, so the exponentiation never sees bases above one.
    #[inline]
    fn normalized(&self, local: &Vector3<f64>) -> Option<(f64, f64)> {
        let u = (local.x / self.scale.ax).abs();
        let v = (local.y / self.scale.ay).abs();
        let w = (local.z / self.scale.az).abs();
        let m = u.max(v).max(w);
        if m == 0.0 {
            return None;
        }
        let (e1, e2) = (self.shape.eps1, self.shape.eps2);
        let (u, v, w) = (u / m, v / m, w / m);
        let xy = (u.powf(2.0 / e2) + v.powf(2.0 / e2)).powf(e2 / e1);
        Some((m, xy + w.powf(2.0 / e1)))
    }

    /// Axis-aligned world bounding box `(min, max)`.
    pub fn bounding_box(&self) -> (Point3, Point3) {
        let r = self.pose.rotation.matrix();
        let a = Vector3::new(self.scale.ax, self.scale.ay, self.scale.az);
        let half = r.abs() * a;
        let c = self.pose.translation;
        (Point3::from(c - half), Point3::from(c + half))
    }

    fn relabeled(&self, q: &LocalRelabel) -> Self {
        let s = self.scale.as_array();
        let scale = ScaleParams {
            ax: s[q.perm[0]],
            ay: s[q.perm[1]],
            az: s[q.perm[2]],
        };
        let shape = if q.perm[2] == 2 {
            self.shape
        } else {
            self.shape.swapped()
        };
        Self {
            shape,
            scale,
            pose: self.pose.with_local_relabel(&q.matrix),
        }
    }

    /// Switching candidates: the identity, the relabelings that carry the
    /// local z axis onto x and onto y (exponents swapped, scales permuted),
    /// and the quarter turn about z that swaps `ax` and `ay`.
    ///
    /// Only the last one always describes the same solid; the axis-swapping
    /// pair does so only when `eps1 == eps2`. They are restart points for the
    /// fitter, not equivalences.
    pub fn duality_candidates(&self) -> Vec<Superquadric> {
        [
            LocalRelabel::identity(),
            LocalRelabel::z_onto_x(),
            LocalRelabel::z_onto_y(),
            LocalRelabel::quarter_turn_z(),
        ]
        .iter()
        .map(|q| self.relabeled(q))
        .collect()
    }

    /// Deterministic representative among the parameter vectors that
    /// describe exactly this solid: over all axis relabelings that leave the
    /// surface unchanged, the one with the smallest rotation angle, ties
    /// (within 1e-9 rad) going to the lexicographically smallest vector.
    pub fn canonicalize(&self) -> Self {
        let mut best = *self;
        let mut best_angle = self.pose.rotation.angle();
        let mut best_v = self.to_vector();
        for q in LocalRelabel::symmetries(&self.shape) {
            let c = self.relabeled(&q);
            let angle = c.pose.rotation.angle();
            let v = c.to_vector();
            let better = if (angle - best_angle).abs() > CANONICAL_ANGLE_TOL {
                angle < best_angle
            } else {
                lex_cmp(&v, &best_v) == Ordering::Less
            };
            if better {
                best = c;
                best_angle = angle;
                best_v = v;
            }
        }
        best
    }
}

const CANONICAL_ANGLE_TOL: f64 = 1e-9;

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// A signed permutation of local axes with determinant +1. Column `i` of
/// `matrix` is the old-frame direction of new axis `i`, which is
/// `±e_{perm[i]}`.
struct LocalRelabel {
    matrix: Matrix3<f64>,
    perm: [usize; 3],
}

impl LocalRelabel {
    fn from_columns(cols: [(usize, f64); 3]) -> Self {
        let mut matrix = Matrix3::zeros();
        for (i, (axis, sign)) in cols.iter().enumerate() {
            matrix[(*axis, i)] = *sign;
        }
        Self {
            matrix,
            perm: [cols[0].0, cols[1].0, cols[2].0],
        }
    }

    fn identity() -> Self {
        Self::from_columns([(0, 1.0), (1, 1.0), (2, 1.0)])
    }

    fn z_onto_x() -> Self {
        Self::from_columns([(2, 1.0), (1, 1.0), (0, -1.0)])
    }

    fn z_onto_y() -> Self {
        Self::from_columns([(0, -1.0), (2, 1.0), (1, 1.0)])
    }

    fn quarter_turn_z() -> Self {
        Self::from_columns([(1, 1.0), (0, -1.0), (2, 1.0)])
    }

    /// Relabelings that map the solid onto itself: the eight that keep the
    /// z axis, or all 24 when the exponents coincide.
    fn symmetries(shape: &ShapeParams) -> Vec<Self> {
        const PERMS: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let all_axes = shape.eps1 == shape.eps2;
        let mut out = Vec::with_capacity(24);
        for perm in PERMS {
            if !all_axes && perm[2] != 2 {
                continue;
            }
            for signs in 0..8u32 {
                let s = |bit: u32| if signs & (1 << bit) == 0 { 1.0 } else { -1.0 };
                let q = Self::from_columns([(perm[0], s(0)), (perm[1], s(1)), (perm[2], s(2))]);
                if q.matrix.determinant() > 0.0 {
                    out.push(q);
                }
            }
        }
        out
    }
}
