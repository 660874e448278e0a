//! Geometry helpers on top of `glam`'s double-precision types.

pub use glam::{DAffine3, DMat3, DQuat, DVec2, DVec3};
use serde::{Deserialize, Serialize};

/// Rotation followed by translation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rigid {
    pub rotation: DQuat,
    pub translation: DVec3,
}

impl Default for Rigid {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Rigid {
    pub const IDENTITY: Rigid = Rigid { rotation: DQuat::IDENTITY, translation: DVec3::ZERO };

    pub fn new(rotation: DQuat, translation: DVec3) -> Self {
        Rigid { rotation, translation }
    }

    pub fn point(&self, p: DVec3) -> DVec3 {
        self.rotation * p + self.translation
    }

    pub fn vector(&self, v: DVec3) -> DVec3 {
        self.rotation * v
    }

    /// `self ∘ other`
    pub fn then(&self, other: &Rigid) -> Rigid {
        Rigid {
            rotation: self.rotation * other.rotation,
            translation: self.point(other.translation),
        }
    }

    pub fn inverse(&self) -> Rigid {
        let inv = self.rotation.inverse();
        Rigid { rotation: inv, translation: -(inv * self.translation) }
    }

    pub fn affine(&self) -> DAffine3 {
        DAffine3::from_rotation_translation(self.rotation, self.translation)
    }
}

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: DVec3,
    pub max: DVec3,
}

impl Aabb {
    pub const EMPTY: Aabb = Aabb { min: DVec3::splat(f64::INFINITY), max: DVec3::splat(f64::NEG_INFINITY) };

    pub fn from_points(points: impl IntoIterator<Item = DVec3>) -> Aabb {
        points.into_iter().fold(Aabb::EMPTY, |b, p| b.grow(p))
    }

    pub fn grow(&self, p: DVec3) -> Aabb {
        Aabb { min: self.min.min(p), max: self.max.max(p) }
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        Aabb { min: self.min.min(o.min), max: self.max.max(o.max) }
    }

    pub fn contains(&self, o: &Aabb) -> bool {
        self.min.cmple(o.min).all() && self.max.cmpge(o.max).all()
    }

    pub fn extent(&self) -> DVec3 {
        self.max - self.min
    }

    pub fn center(&self) -> DVec3 {
        (self.min + self.max) * 0.5
    }

    /// Entry/exit parameters of a ray against the box, if it is hit in `[t_min, t_max]`.
    pub fn ray_interval(&self, origin: DVec3, inv_dir: DVec3, t_min: f64, t_max: f64) -> Option<(f64, f64)> {
        let t0 = (self.min - origin) * inv_dir;
        let t1 = (self.max - origin) * inv_dir;
        let lo = t0.min(t1);
        let hi = t0.max(t1);
        // NaN from 0 * inf (origin on a slab with a parallel ray) must not widen the interval.
        let enter = [lo.x, lo.y, lo.z].iter().fold(t_min, |a, &b| if b > a { b } else { a });
        let exit = [hi.x, hi.y, hi.z].iter().fold(t_max, |a, &b| if b < a { b } else { a });
        (enter <= exit).then_some((enter, exit))
    }
}

/// Rotation taking local axes to the given orthonormal columns.
pub fn frame(tangent: DVec3, bitangent: DVec3, normal: DVec3) -> DMat3 {
    DMat3::from_cols(tangent, bitangent, normal)
}

/// Orthonormality error `max |RᵀR - I|`.
pub fn orthonormality_error(r: &DMat3) -> f64 {
    let d = r.transpose() * *r - DMat3::IDENTITY;
    [d.x_axis, d.y_axis, d.z_axis].iter().map(|c| c.abs().max_element()).fold(0.0, f64::max)
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}
