//! Light–matter interaction kernels: Lambertian emission and scattering,
//! Snell refraction with total internal reflection, specular reflection and
//! Henyey–Greenstein surface scattering.
//!
//! Every function takes unit vectors and returns unit vectors. Normals passed
//! to the kernels are oriented against the incident direction
//! (`incident · normal < 0`), which is what [`HitRecord`](crate::geometry::HitRecord)
//! provides.

use crate::geometry::Vec3;
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Resampling attempts before a below-surface HG sample is mirrored.
pub const HG_MAX_ATTEMPTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MaterialModel {
    /// Transparent medium with refractive index `n` (air outside).
    Dielectric { n: f64 },
    Mirror,
    /// Opaque, non-absorbing surface scattering with HG roughness `g`.
    #[serde(rename = "hg_surface")]
    HgSurface { g: f64 },
    Absorber,
    Emitter,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MaterialError {
    #[error("refractive index must be >= 1, got {0}")]
    Index(f64),
    #[error("HG roughness g must lie in [0, 1], got {0}")]
    Roughness(f64),
}

impl MaterialModel {
    pub fn validate(&self) -> Result<(), MaterialError> {
        match *self {
            MaterialModel::Dielectric { n } if !(n >= 1.0 && n.is_finite()) => Err(MaterialError::Index(n)),
            MaterialModel::HgSurface { g } if !(0.0..=1.0).contains(&g) => Err(MaterialError::Roughness(g)),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScatterKind {
    Reflected,
    Refracted,
    Scattered,
    Absorbed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterEvent {
    pub outgoing_direction: Vec3,
    pub kind: ScatterKind,
}

impl ScatterEvent {
    fn new(outgoing_direction: Vec3, kind: ScatterKind) -> Self {
        Self { outgoing_direction, kind }
    }
}

/// Mirror direction `i − 2(i·n)n`.
#[inline]
pub fn mirror(incident: Vec3, normal: Vec3) -> Vec3 {
    incident - normal * (2.0 * incident.dot(normal))
}

pub fn reflect_specular(incident: Vec3, normal: Vec3) -> ScatterEvent {
    ScatterEvent::new(mirror(incident, normal), ScatterKind::Reflected)
}

/// Snell refraction from index `n1` into `n2`; total internal reflection
/// yields the mirror direction with kind [`ScatterKind::Reflected`].
pub fn refract(incident: Vec3, normal: Vec3, n1: f64, n2: f64) -> ScatterEvent {
    if n1 == n2 {
        return ScatterEvent::new(incident, ScatterKind::Refracted);
    }
    let eta = n1 / n2;
    let cos_i = -incident.dot(normal);
    let sin2_t = eta * eta * (1.0 - cos_i * cos_i).max(0.0);
    if sin2_t > 1.0 {
        return reflect_specular(incident, normal);
    }
    let cos_t = (1.0 - sin2_t).sqrt();
    let out = incident * eta + normal * (eta * cos_i - cos_t);
    ScatterEvent::new(out.normalized(), ScatterKind::Refracted)
}

/// Direction with polar cosine `cos_theta` and azimuth `phi` about `axis`.
#[inline]
pub fn direction_about(axis: Vec3, cos_theta: f64, phi: f64) -> Vec3 {
    let (t, b) = axis.orthonormal_basis();
    let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    let (s, c) = phi.sin_cos();
    (t * (sin_theta * c) + b * (sin_theta * s) + axis * cos_theta).normalized()
}

/// Cosine-weighted hemisphere sample about `normal` (`cos θ = √ξ`).
pub fn sample_lambertian(normal: Vec3, rng: &mut RngStream) -> Vec3 {
    let cos_theta = rng.uniform().sqrt();
    let phi = 2.0 * PI * rng.uniform();
    let d = direction_about(normal, cos_theta, phi);
    if d.dot(normal) > 0.0 {
        d
    } else {
        // ξ = 0 gives a tangent direction; nudge it into the hemisphere
        (d + normal * 1e-9).normalized()
    }
}

/// Inverse CDF of the Henyey–Greenstein distribution of `cos θ` for
/// `g in (0, 1]`.
#[inline]
pub fn hg_cos_theta(g: f64, xi: f64) -> f64 {
    let s = (1.0 - g * g) / (1.0 - g + 2.0 * g * xi);
    ((1.0 + g * g - s * s) / (2.0 * g)).clamp(-1.0, 1.0)
}

/// HG probability density of `cos θ` (integrates to one over `[-1, 1]`).
pub fn hg_pdf_cos(g: f64, cos_theta: f64) -> f64 {
    let denom = 1.0 + g * g - 2.0 * g * cos_theta;
    0.5 * (1.0 - g * g) / (denom * denom.sqrt())
}

/// Full-sphere HG lobe about `axis`; `g = 0` is isotropic.
pub fn sample_hg_lobe(axis: Vec3, g: f64, rng: &mut RngStream) -> Vec3 {
    let xi = rng.uniform();
    let cos_theta = if g == 0.0 { 1.0 - 2.0 * xi } else { hg_cos_theta(g, xi) };
    let phi = 2.0 * PI * rng.uniform();
    direction_about(axis, cos_theta, phi)
}

/// HG scattering adapted to an opaque surface.
///
/// The lobe is centred on the specular direction. `g = 0` is the Lambertian
/// limit and `g = 1` is exact specular reflection. Samples that end up below
/// the surface are redrawn; after [`HG_MAX_ATTEMPTS`] the last one is mirrored
/// through the tangent plane.
pub fn sample_hg_surface_scatter(incident: Vec3, normal: Vec3, g: f64, rng: &mut RngStream) -> ScatterEvent {
    if g >= 1.0 {
        return reflect_specular(incident, normal);
    }
    if g <= 0.0 {
        return ScatterEvent::new(sample_lambertian(normal, rng), ScatterKind::Scattered);
    }
    let specular = mirror(incident, normal);
    let mut d = specular;
    for _ in 0..HG_MAX_ATTEMPTS {
        d = sample_hg_lobe(specular, g, rng);
        if d.dot(normal) > 0.0 {
            return ScatterEvent::new(d, ScatterKind::Scattered);
        }
    }
    let flipped = mirror(d, normal);
    let out = if flipped.dot(normal) > 0.0 { flipped } else { specular };
    ScatterEvent::new(out, ScatterKind::Scattered)
}
