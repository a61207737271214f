//! Rigid transforms and the object-centric re-anchoring used for spatial
//! randomization of a demonstration.
//!
//! A demonstrated end-effector motion is expressed in the frame of the object's
//! initial pose, then replayed against a perturbed object pose. A short blend
//! segment bridges the end-effector reset pose and the first re-anchored pose.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit quaternion `(w, x, y, z)`, canonicalized to the `w >= 0` hemisphere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", from = "[f64; 4]")]
pub struct Rotation {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl From<Rotation> for [f64; 4] {
    fn from(r: Rotation) -> Self {
        [r.w, r.x, r.y, r.z]
    }
}

impl From<[f64; 4]> for Rotation {
    fn from(q: [f64; 4]) -> Self {
        Rotation::from_wxyz(q[0], q[1], q[2], q[3])
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes and canonicalizes. A zero quaternion maps to the identity.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Self {
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Self::IDENTITY;
        }
        let (mut w, mut x, mut y, mut z) = (w / norm, x / norm, y / norm, z / norm);
        // w == 0 leaves a residual sign ambiguity; fix it on the first
        // non-zero vector component.
        let flip = if w != 0.0 {
            w < 0.0
        } else if x != 0.0 {
            x < 0.0
        } else if y != 0.0 {
            y < 0.0
        } else {
            z < 0.0
        };
        if flip {
            w = -w;
            x = -x;
            y = -y;
            z = -z;
        }
        Rotation { w: w + 0.0, x, y, z }
    }

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (angle / 2.0).sin_cos();
        Self::from_wxyz(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    /// Rotation about the world z axis.
    pub fn about_z(yaw: f64) -> Self {
        Self::from_axis_angle([0.0, 0.0, 1.0], yaw)
    }

    pub fn wxyz(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Hamilton product `self * other` (apply `other` first).
    pub fn compose(&self, other: &Rotation) -> Rotation {
        let (a, b) = (self, other);
        Rotation::from_wxyz(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    pub fn inverse(&self) -> Rotation {
        Rotation::from_wxyz(self.w, -self.x, -self.y, -self.z)
    }

    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        // v' = v + 2w (u x v) + 2 u x (u x v)
        let u = [self.x, self.y, self.z];
        let uv = cross(u, v);
        let uuv = cross(u, uv);
        [
            v[0] + 2.0 * (self.w * uv[0] + uuv[0]),
            v[1] + 2.0 * (self.w * uv[1] + uuv[1]),
            v[2] + 2.0 * (self.w * uv[2] + uuv[2]),
        ]
    }

    fn dot(&self, other: &Rotation) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Geodesic angle between two rotations, in `[0, pi]`.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        // atan2 form stays accurate near zero, unlike acos of the dot product
        let r = self.inverse().compose(other);
        2.0 * (r.x * r.x + r.y * r.y + r.z * r.z).sqrt().atan2(r.w.abs())
    }

    /// Rotation angle about z, assuming the rotation is (close to) planar.
    pub fn yaw(&self) -> f64 {
        let siny = 2.0 * (self.w * self.z + self.x * self.y);
        let cosy = 1.0 - 2.0 * (self.y * self.y + self.z * self.z);
        siny.atan2(cosy)
    }

    pub fn approx_eq(&self, other: &Rotation, tol: f64) -> bool {
        // q and -q are the same rotation
        self.angle_to(other) <= tol
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Spherical linear interpolation along the shorter arc.
pub fn slerp(r0: &Rotation, r1: &Rotation, alpha: f64) -> Rotation {
    let alpha = alpha.clamp(0.0, 1.0);
    let mut q1 = r1.wxyz();
    let mut d = r0.dot(r1);
    if d < 0.0 {
        q1 = q1.map(|c| -c);
        d = -d;
    }
    let q0 = r0.wxyz();
    let (s0, s1) = if d > 1.0 - 1e-12 {
        // Nearly parallel: linear interpolation is exact to rounding.
        (1.0 - alpha, alpha)
    } else {
        let theta = d.acos();
        let sin_theta = theta.sin();
        (
            ((1.0 - alpha) * theta).sin() / sin_theta,
            (alpha * theta).sin() / sin_theta,
        )
    };
    if alpha == 0.0 {
        return *r0;
    }
    if alpha == 1.0 {
        return *r1;
    }
    Rotation::from_wxyz(
        s0 * q0[0] + s1 * q1[0],
        s0 * q0[1] + s1 * q1[1],
        s0 * q0[2] + s1 * q1[2],
        s0 * q0[3] + s1 * q1[3],
    )
}

/// Rigid transform: rotate, then translate (meters).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: [f64; 3],
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        rotation: Rotation::IDENTITY,
        translation: [0.0; 3],
    };

    pub fn new(rotation: Rotation, translation: [f64; 3]) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Pose::new(Rotation::IDENTITY, t)
    }

    /// Pose in the z = 0 plane with heading `yaw`.
    pub fn planar(x: f64, y: f64, yaw: f64) -> Self {
        Pose::new(Rotation::about_z(yaw), [x, y, 0.0])
    }

    /// `self ∘ other`: the transform that applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        let t = self.rotation.rotate(other.translation);
        Pose {
            rotation: self.rotation.compose(&other.rotation),
            translation: [
                t[0] + self.translation[0],
                t[1] + self.translation[1],
                t[2] + self.translation[2],
            ],
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        let t = inv.rotate(self.translation);
        Pose {
            rotation: inv,
            translation: [-t[0], -t[1], -t[2]],
        }
    }

    pub fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotation.rotate(p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    pub fn approx_eq(&self, other: &Pose, tol: f64) -> bool {
        self.rotation.approx_eq(&other.rotation, tol)
            && self
                .translation
                .iter()
                .zip(other.translation)
                .all(|(a, b)| (a - b).abs() <= tol)
    }
}

/// A non-empty, time-indexed sequence of poses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Pose>", into = "Vec<Pose>")]
pub struct PoseSequence(Vec<Pose>);

impl TryFrom<Vec<Pose>> for PoseSequence {
    type Error = Error;

    fn try_from(poses: Vec<Pose>) -> Result<Self> {
        PoseSequence::new(poses)
    }
}

impl From<PoseSequence> for Vec<Pose> {
    fn from(s: PoseSequence) -> Self {
        s.0
    }
}

impl PoseSequence {
    pub fn new(poses: Vec<Pose>) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::invalid("pose sequence must contain at least one pose"));
        }
        Ok(PoseSequence(poses))
    }

    pub fn poses(&self) -> &[Pose] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn first(&self) -> &Pose {
        &self.0[0]
    }

    pub fn last(&self) -> &Pose {
        &self.0[self.0.len() - 1]
    }

    /// Concatenate, dropping `other`'s first pose when it duplicates our last.
    pub fn join(&self, other: &PoseSequence) -> PoseSequence {
        let mut poses = self.0.clone();
        let skip = usize::from(poses.last() == Some(other.first()));
        poses.extend_from_slice(&other.0[skip..]);
        PoseSequence(poses)
    }
}

/// Per-axis translation bounds (meters) and a yaw bound (radians).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRange {
    pub translation: [f64; 3],
    pub yaw: f64,
}

/// Sample `ΔT = [R_z(Δθ) Δp; 0 1]` with each `Δp_i` uniform in
/// `±translation[i]` and `Δθ` uniform in `±yaw`.
pub fn sample_object_perturbation<R: Rng + ?Sized>(
    range: &PerturbationRange,
    rng: &mut R,
) -> Result<Pose> {
    if range.translation.iter().any(|b| !(*b >= 0.0)) || !(range.yaw >= 0.0) {
        return Err(Error::invalid("perturbation bounds must be non-negative"));
    }
    let mut uniform = |bound: f64| {
        if bound == 0.0 {
            0.0
        } else {
            rng.random_range(-bound..=bound)
        }
    };
    let dp = [
        uniform(range.translation[0]),
        uniform(range.translation[1]),
        uniform(range.translation[2]),
    ];
    let dtheta = uniform(range.yaw);
    Ok(Pose::new(Rotation::about_z(dtheta), dp))
}

/// Replay a demonstrated end-effector sequence against a new initial object
/// pose: `new_obj0 ∘ demo_obj0⁻¹ ∘ ee_t` for every `t`.
pub fn reanchor_trajectory(
    demo_ee: &PoseSequence,
    demo_obj0: &Pose,
    new_obj0: &Pose,
) -> PoseSequence {
    let delta = new_obj0.compose(&demo_obj0.inverse());
    PoseSequence(demo_ee.poses().iter().map(|p| delta.compose(p)).collect())
}

/// `l_blend + 1` poses from `reset` to `first`: translation linear, rotation slerped.
pub fn blend_prefix(reset: &Pose, first: &Pose, l_blend: usize) -> Result<PoseSequence> {
    if l_blend == 0 {
        return Err(Error::invalid("blend length must be at least 1"));
    }
    let poses = (0..=l_blend)
        .map(|l| {
            if l == 0 {
                return *reset;
            }
            if l == l_blend {
                return *first;
            }
            let a = l as f64 / l_blend as f64;
            let p0 = reset.translation;
            let p1 = first.translation;
            Pose::new(
                slerp(&reset.rotation, &first.rotation, a),
                [
                    (1.0 - a) * p0[0] + a * p1[0],
                    (1.0 - a) * p0[1] + a * p1[1],
                    (1.0 - a) * p0[2] + a * p1[2],
                ],
            )
        })
        .collect();
    Ok(PoseSequence(poses))
}
