//! Vector and ray primitives plus the exact ray/primitive intersection
//! routines shared by the scene, instrument and renderer.
//!
//! All lengths are millimetres in instrument space.

use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub};

/// Offset applied as `t_min` for secondary rays to avoid re-hitting the
/// surface they just left.
pub const SECONDARY_T_MIN: f64 = 1e-6;

/// Rays whose direction is this close to parallel with a plane miss it.
pub const PARALLEL_EPS: f64 = 1e-12;

/// Triangles with area at or below this (mm²) are treated as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn splat(v: f64) -> Self {
        Self::new(v, v, v)
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn length_squared(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn length(self) -> f64 {
        self.length_squared().sqrt()
    }

    #[inline]
    pub fn normalized(self) -> Vec3 {
        self / self.length()
    }

    #[inline]
    pub fn abs(self) -> Vec3 {
        Vec3::new(self.x.abs(), self.y.abs(), self.z.abs())
    }

    #[inline]
    pub fn min(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    #[inline]
    pub fn max(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    #[inline]
    pub fn max_component(self) -> f64 {
        self.x.max(self.y).max(self.z)
    }

    /// Index of the component with the largest value.
    #[inline]
    pub fn max_dimension(self) -> usize {
        if self.x > self.y {
            if self.x > self.z {
                0
            } else {
                2
            }
        } else if self.y > self.z {
            1
        } else {
            2
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn is_unit(self) -> bool {
        (self.length() - 1.0).abs() <= 1e-12
    }

    /// Two unit vectors completing an orthonormal basis with `self`
    /// (branchless construction of Duff et al.).
    #[inline]
    pub fn orthonormal_basis(self) -> (Vec3, Vec3) {
        let sign = 1.0_f64.copysign(self.z);
        let a = -1.0 / (sign + self.z);
        let b = self.x * self.y * a;
        (
            Vec3::new(1.0 + sign * self.x * self.x * a, sign * b, -sign * self.x),
            Vec3::new(b, sign + self.y * self.y * a, -self.y),
        )
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    #[inline]
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    #[inline]
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn div(self, s: f64) -> Vec3 {
        let inv = 1.0 / s;
        self * inv
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// A parametric ray `origin + t * direction`, `t in [t_min, t_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit direction.
    pub direction: Vec3,
    pub t_min: f64,
    pub t_max: f64,
    /// Number of interactions the ray has gone through.
    pub depth: u32,
    /// Refractive index of the medium the ray currently travels in.
    pub medium_index: f64,
}

impl Ray {
    /// Primary ray in air with an unbounded extent.
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Self {
            origin,
            direction,
            t_min: 0.0,
            t_max: f64::INFINITY,
            depth: 0,
            medium_index: 1.0,
        }
    }

    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    /// Continues this ray from `origin` in a new direction, bumping the depth.
    #[inline]
    pub fn spawn(&self, origin: Vec3, direction: Vec3, medium_index: f64) -> Ray {
        Ray {
            origin,
            direction,
            t_min: SECONDARY_T_MIN,
            t_max: f64::INFINITY,
            depth: self.depth + 1,
            medium_index,
        }
    }

    pub fn with_range(mut self, t_min: f64, t_max: f64) -> Self {
        self.t_min = t_min;
        self.t_max = t_max;
        self
    }
}

/// Nearest intersection of a ray with a surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitRecord {
    pub t: f64,
    pub point: Vec3,
    /// Unit normal oriented against the ray direction.
    pub normal: Vec3,
    pub object_id: usize,
    /// Primitive index within the object (triangle index for meshes).
    pub prim_id: usize,
    /// True when the ray arrived on the side the outward normal points to.
    pub is_front_face: bool,
}

impl HitRecord {
    pub(crate) fn oriented(ray: &Ray, t: f64, outward: Vec3) -> HitRecord {
        let is_front_face = outward.dot(ray.direction) < 0.0;
        HitRecord {
            t,
            point: ray.at(t),
            normal: if is_front_face { outward } else { -outward },
            object_id: 0,
            prim_id: 0,
            is_front_face,
        }
    }
}

/// 3×3 row-major matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    #[inline]
    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(r)
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Rotation by `angle` radians about the unit `axis` (Rodrigues).
    pub fn rotation(axis: Vec3, angle: f64) -> Mat3 {
        let a = axis.normalized();
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Mat3([
            [t * a.x * a.x + c, t * a.x * a.y - s * a.z, t * a.x * a.z + s * a.y],
            [t * a.x * a.y + s * a.z, t * a.y * a.y + c, t * a.y * a.z - s * a.x],
            [t * a.x * a.z - s * a.y, t * a.y * a.z + s * a.x, t * a.z * a.z + c],
        ])
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TransformError {
    #[error("rotation is not orthonormal (max |RᵀR − I| = {0:e})")]
    NotOrthonormal(f64),
    #[error("rotation has determinant {0}, expected +1")]
    Improper(f64),
}

/// Rotation followed by translation: `p' = R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    rotation: Mat3,
    translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: Mat3::IDENTITY,
        translation: Vec3::ZERO,
    };

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, TransformError> {
        let rtr = rotation.transpose().mul_mat(&rotation);
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let id = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((rtr.0[i][j] - id).abs());
            }
        }
        if worst > 1e-10 {
            return Err(TransformError::NotOrthonormal(worst));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > 1e-10 {
            return Err(TransformError::Improper(det));
        }
        Ok(Self { rotation, translation })
    }

    pub fn translation(t: Vec3) -> Self {
        Self { rotation: Mat3::IDENTITY, translation: t }
    }

    pub fn rotation_about(axis: Vec3, angle: f64, translation: Vec3) -> Self {
        Self { rotation: Mat3::rotation(axis, angle), translation }
    }

    pub fn rotation_matrix(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation_vector(&self) -> Vec3 {
        self.translation
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == Mat3::IDENTITY && self.translation == Vec3::ZERO
    }

    #[inline]
    pub fn apply_point(&self, p: Vec3) -> Vec3 {
        self.rotation.mul_vec(p) + self.translation
    }

    #[inline]
    pub fn apply_vector(&self, v: Vec3) -> Vec3 {
        self.rotation.mul_vec(v)
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -rt.mul_vec(self.translation) }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation.mul_mat(&other.rotation),
            translation: self.apply_point(other.translation),
        }
    }

    pub fn apply_ray(&self, ray: &Ray) -> Ray {
        Ray {
            origin: self.apply_point(ray.origin),
            direction: self.apply_vector(ray.direction),
            ..*ray
        }
    }

    pub fn apply_hit(&self, hit: &HitRecord) -> HitRecord {
        HitRecord {
            point: self.apply_point(hit.point),
            normal: self.apply_vector(hit.normal),
            ..*hit
        }
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub const EMPTY: Aabb = Aabb {
        min: Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
        max: Vec3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
    };

    pub fn from_points(points: &[Vec3]) -> Aabb {
        points.iter().fold(Aabb::EMPTY, |b, &p| b.grow(p))
    }

    #[inline]
    pub fn grow(self, p: Vec3) -> Aabb {
        Aabb { min: self.min.min(p), max: self.max.max(p) }
    }

    #[inline]
    pub fn union(self, o: Aabb) -> Aabb {
        Aabb { min: self.min.min(o.min), max: self.max.max(o.max) }
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x || self.min.y > self.max.y || self.min.z > self.max.z
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn centroid(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn surface_area(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let e = self.extent();
        2.0 * (e.x * e.y + e.y * e.z + e.z * e.x)
    }

    pub fn inflate(&self, eps: f64) -> Aabb {
        Aabb { min: self.min - Vec3::splat(eps), max: self.max + Vec3::splat(eps) }
    }

    pub fn contains_point(&self, p: Vec3, eps: f64) -> bool {
        p.x >= self.min.x - eps
            && p.y >= self.min.y - eps
            && p.z >= self.min.z - eps
            && p.x <= self.max.x + eps
            && p.y <= self.max.y + eps
            && p.z <= self.max.z + eps
    }

    pub fn contains_box(&self, o: &Aabb, eps: f64) -> bool {
        self.contains_point(o.min, eps) && self.contains_point(o.max, eps)
    }

    /// Slab test returning the entry distance. The far distance is widened by
    /// a few ulps so that rays grazing a face are never rejected.
    #[inline]
    pub fn hit(&self, origin: Vec3, inv_dir: Vec3, t_min: f64, t_max: f64) -> Option<f64> {
        const WIDEN: f64 = 1.0 + 2.0 * 3.0 * f64::EPSILON;
        let mut t0 = t_min;
        let mut t1 = t_max;
        for axis in 0..3 {
            let mut near = (self.min[axis] - origin[axis]) * inv_dir[axis];
            let mut far = (self.max[axis] - origin[axis]) * inv_dir[axis];
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            far *= WIDEN;
            // NaN (0 * inf) leaves the interval untouched.
            if near > t0 {
                t0 = near;
            }
            if far < t1 {
                t1 = far;
            }
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

/// Nearest intersection with a sphere, if any, inside the ray's range.
pub fn intersect_sphere(ray: &Ray, center: Vec3, radius: f64) -> Option<HitRecord> {
    let oc = ray.origin - center;
    let d = ray.direction;
    let half_b = oc.dot(d);
    // Discriminant from the perpendicular offset is stable for far origins.
    let perp = oc - d * half_b;
    let disc = radius * radius - perp.length_squared();
    if disc < 0.0 {
        return None;
    }
    let c = oc.length_squared() - radius * radius;
    let q = -half_b - disc.sqrt().copysign(half_b);
    let (mut t0, mut t1) = if q != 0.0 { (c / q, q) } else { (0.0, 0.0) };
    if t0 > t1 {
        std::mem::swap(&mut t0, &mut t1);
    }
    let t = if t0 >= ray.t_min && t0 <= ray.t_max {
        t0
    } else if t1 >= ray.t_min && t1 <= ray.t_max {
        t1
    } else {
        return None;
    };
    let outward = (ray.at(t) - center) / radius;
    Some(HitRecord::oriented(ray, t, outward))
}

/// Watertight ray/triangle test. Returns `(t, b0, b1, b2)`.
///
/// Edge functions are evaluated in a ray-aligned shear frame so that a ray
/// crossing an edge shared by two triangles reports a hit on at least one of
/// them; points exactly on an edge are inclusive.
#[inline]
pub fn triangle_hit(ray: &Ray, v0: Vec3, v1: Vec3, v2: Vec3) -> Option<(f64, f64, f64, f64)> {
    let d = ray.direction;
    let kz = d.abs().max_dimension();
    let mut kx = if kz == 2 { 0 } else { kz + 1 };
    let mut ky = if kx == 2 { 0 } else { kx + 1 };
    if d[kz] < 0.0 {
        std::mem::swap(&mut kx, &mut ky);
    }
    let sx = d[kx] / d[kz];
    let sy = d[ky] / d[kz];
    let sz = 1.0 / d[kz];

    let a = v0 - ray.origin;
    let b = v1 - ray.origin;
    let c = v2 - ray.origin;
    let ax = a[kx] - sx * a[kz];
    let ay = a[ky] - sy * a[kz];
    let bx = b[kx] - sx * b[kz];
    let by = b[ky] - sy * b[kz];
    let cx = c[kx] - sx * c[kz];
    let cy = c[ky] - sy * c[kz];

    let u = cx * by - cy * bx;
    let v = ax * cy - ay * cx;
    let w = bx * ay - by * ax;
    if (u < 0.0 || v < 0.0 || w < 0.0) && (u > 0.0 || v > 0.0 || w > 0.0) {
        return None;
    }
    let det = u + v + w;
    if det == 0.0 {
        return None;
    }
    let t_scaled = u * (sz * a[kz]) + v * (sz * b[kz]) + w * (sz * c[kz]);
    let inv_det = 1.0 / det;
    let t = t_scaled * inv_det;
    if !(t >= ray.t_min && t <= ray.t_max) {
        return None;
    }
    Some((t, u * inv_det, v * inv_det, w * inv_det))
}

/// Geometric (unnormalized) normal from counter-clockwise winding.
#[inline]
pub fn triangle_normal(v0: Vec3, v1: Vec3, v2: Vec3) -> Vec3 {
    (v1 - v0).cross(v2 - v0)
}

pub fn triangle_area(v0: Vec3, v1: Vec3, v2: Vec3) -> f64 {
    0.5 * triangle_normal(v0, v1, v2).length()
}

/// Ray/triangle intersection; degenerate triangles never report a hit.
pub fn intersect_triangle(ray: &Ray, v0: Vec3, v1: Vec3, v2: Vec3) -> Option<HitRecord> {
    let n = triangle_normal(v0, v1, v2);
    if 0.5 * n.length() <= DEGENERATE_AREA {
        return None;
    }
    let (t, ..) = triangle_hit(ray, v0, v1, v2)?;
    Some(HitRecord::oriented(ray, t, n.normalized()))
}

/// Intersection with the infinite plane through `point` with unit `normal`.
pub fn intersect_plane(ray: &Ray, point: Vec3, normal: Vec3) -> Option<HitRecord> {
    let denom = ray.direction.dot(normal);
    if denom.abs() < PARALLEL_EPS {
        return None;
    }
    let t = (point - ray.origin).dot(normal) / denom;
    if !(t >= ray.t_min && t <= ray.t_max) {
        return None;
    }
    Some(HitRecord::oriented(ray, t, normal))
}
