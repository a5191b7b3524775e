//! Parametric focus-variation microscope: circular Lambertian source, lens
//! elements, beamsplitter, mirrors, stops and a pixelated detector arranged
//! as a coaxial epi-illumination train.
//!
//! Instrument space is in millimetres. The optical axis is `+z`, the sample
//! focal plane is `z = 0` and the detector sits at the top of the train
//! looking down. The illumination arm enters along `+x` through a
//! beamsplitter tilted at 45°.

use crate::geometry::{HitRecord, Ray, Vec3, PARALLEL_EPS, SECONDARY_T_MIN};
use crate::optics::{reflect_specular, refract, sample_lambertian, ScatterKind};
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InstrumentError {
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("infeasible design: {0}")]
    Infeasible(String),
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> InstrumentError {
    InstrumentError::Invalid { field: field.into(), message: message.into() }
}

fn check_unit(field: &str, v: Vec3) -> Result<(), InstrumentError> {
    if v.is_finite() && (v.length() - 1.0).abs() < UNIT_TOL {
        Ok(())
    } else {
        Err(invalid(field, "must be a unit vector"))
    }
}

fn check_positive(field: &str, v: f64) -> Result<(), InstrumentError> {
    if v > 0.0 && !v.is_nan() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive, got {v}")))
    }
}

/// Flat circular Lambertian emitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightSource {
    pub center: Vec3,
    /// Emission axis.
    pub axis: Vec3,
    pub radius: f64,
}

impl LightSource {
    pub fn validate(&self) -> Result<(), InstrumentError> {
        check_unit("source.axis", self.axis)?;
        check_positive("source.radius", self.radius)
    }

    /// Area-uniform origin on the disk, cosine-weighted direction about the
    /// axis.
    pub fn emit_ray(&self, rng: &mut RngStream) -> Ray {
        let r = self.radius * rng.uniform().sqrt();
        let phi = 2.0 * PI * rng.uniform();
        let (u, v) = self.axis.orthonormal_basis();
        let (s, c) = phi.sin_cos();
        let origin = self.center + u * (r * c) + v * (r * s);
        let direction = sample_lambertian(self.axis, rng);
        Ray::new(origin, direction).with_range(SECONDARY_T_MIN, f64::INFINITY)
    }
}

/// Square pixelated detector. `axis` is the sensitive-face normal (towards
/// the incoming light); `u_axis` and `v_axis` span the face and give the
/// pixel column and row directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub center: Vec3,
    pub axis: Vec3,
    pub u_axis: Vec3,
    pub v_axis: Vec3,
    pub side_length: f64,
    pub pixels_x: usize,
    pub pixels_y: usize,
}

impl Detector {
    pub fn validate(&self) -> Result<(), InstrumentError> {
        check_unit("detector.axis", self.axis)?;
        check_unit("detector.u_axis", self.u_axis)?;
        check_unit("detector.v_axis", self.v_axis)?;
        if self.axis.dot(self.u_axis).abs() > UNIT_TOL
            || self.axis.dot(self.v_axis).abs() > UNIT_TOL
            || self.u_axis.dot(self.v_axis).abs() > UNIT_TOL
        {
            return Err(invalid("detector", "axis, u_axis and v_axis must be mutually orthogonal"));
        }
        check_positive("detector.side_length", self.side_length)?;
        if self.pixels_x == 0 || self.pixels_y == 0 {
            return Err(invalid("detector.pixels", "pixel counts must be at least 1"));
        }
        Ok(())
    }

    pub fn pixel_pitch(&self) -> (f64, f64) {
        (self.side_length / self.pixels_x as f64, self.side_length / self.pixels_y as f64)
    }

    /// Floor binning of a point on the detector plane; points on the upper
    /// boundary fall into the last pixel, points outside return `None`.
    pub fn pixel_of(&self, p: Vec3) -> Option<(usize, usize)> {
        let d = p - self.center;
        let half = 0.5 * self.side_length;
        let a = d.dot(self.u_axis) + half;
        let b = d.dot(self.v_axis) + half;
        if !(0.0..=self.side_length).contains(&a) || !(0.0..=self.side_length).contains(&b) {
            return None;
        }
        let ix = ((a / self.side_length * self.pixels_x as f64) as usize).min(self.pixels_x - 1);
        let iy = ((b / self.side_length * self.pixels_y as f64) as usize).min(self.pixels_y - 1);
        Some((ix, iy))
    }

    /// Centre of pixel `(ix, iy)` in instrument space.
    pub fn pixel_center(&self, ix: usize, iy: usize) -> Vec3 {
        let (px, py) = self.pixel_pitch();
        let half = 0.5 * self.side_length;
        self.center + self.u_axis * ((ix as f64 + 0.5) * px - half) + self.v_axis * ((iy as f64 + 0.5) * py - half)
    }
}

/// Integer hit counter for one detector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectorAccumulator {
    pub width: usize,
    pub height: usize,
    pub counts: Vec<u64>,
    pub spill: u64,
}

impl DetectorAccumulator {
    pub fn new(detector: &Detector) -> Self {
        Self { width: detector.pixels_x, height: detector.pixels_y, counts: vec![0; detector.pixels_x * detector.pixels_y], spill: 0 }
    }

    /// Increments the pixel under `hit_point`; returns false (and counts a
    /// spill) when the point is outside the detector face.
    pub fn record(&mut self, detector: &Detector, hit_point: Vec3) -> bool {
        match detector.pixel_of(hit_point) {
            Some((ix, iy)) => {
                self.counts[iy * self.width + ix] += 1;
                true
            }
            None => {
                self.spill += 1;
                false
            }
        }
    }

    pub fn add_pixel(&mut self, ix: usize, iy: usize) {
        self.counts[iy * self.width + ix] += 1;
    }

    pub fn merge(&mut self, other: &DetectorAccumulator) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.spill += other.spill;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

fn flat() -> f64 {
    f64::INFINITY
}

/// Thick lens with two spherical (or flat, `R = ∞`) surfaces. `position` is
/// the vertex of the first surface; the second vertex is `thickness` further
/// along `axis`. Radii are signed: positive when the centre of curvature lies
/// on the `+axis` side of the vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensElement {
    pub position: Vec3,
    pub axis: Vec3,
    pub r1: f64,
    pub r2: f64,
    pub thickness: f64,
    pub aperture: f64,
    pub n: f64,
    /// Outer radius of the opaque mount around the clear aperture.
    #[serde(default = "flat")]
    pub mount_radius: f64,
}

impl LensElement {
    fn validate(&self, field: &str) -> Result<(), InstrumentError> {
        check_unit(&format!("{field}.axis"), self.axis)?;
        check_positive(&format!("{field}.aperture"), self.aperture)?;
        check_positive(&format!("{field}.thickness"), self.thickness)?;
        if !(self.n > 1.0) {
            return Err(invalid(format!("{field}.n"), format!("glass index must exceed 1, got {}", self.n)));
        }
        for (name, r) in [("r1", self.r1), ("r2", self.r2)] {
            if r == 0.0 || r.is_nan() {
                return Err(invalid(format!("{field}.{name}"), "radius must be non-zero (use inf for flat)"));
            }
            if r.is_finite() && r.abs() <= self.aperture {
                return Err(invalid(format!("{field}.{name}"), "radius must exceed the aperture radius"));
            }
        }
        if self.mount_radius < self.aperture {
            return Err(invalid(format!("{field}.mount_radius"), "mount must not be smaller than the aperture"));
        }
        Ok(())
    }

    /// Effective focal length from the thick-lens equation.
    pub fn focal_length(&self) -> f64 {
        -1.0 / lens_matrix(self).c
    }
}

/// Ideal thin lens acting in slope space: a ray at lateral offset `p` from
/// the centre with slope `s` leaves with slope `s − p/f`, imaging every
/// object-space point perfectly regardless of aperture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdealLens {
    pub center: Vec3,
    pub axis: Vec3,
    pub focal_length: f64,
    pub aperture: f64,
    #[serde(default = "flat")]
    pub mount_radius: f64,
}

/// Thin planar partially reflecting plate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamSplitter {
    pub center: Vec3,
    pub normal: Vec3,
    pub aperture: f64,
    /// Transmission probability ρ.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneMirror {
    pub center: Vec3,
    pub normal: Vec3,
    pub aperture: f64,
}

/// Opaque annulus between `aperture` and `outer_radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stop {
    pub center: Vec3,
    pub axis: Vec3,
    pub aperture: f64,
    #[serde(default = "flat")]
    pub outer_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Element {
    Lens(LensElement),
    IdealLens(IdealLens),
    BeamSplitter(BeamSplitter),
    Mirror(PlaneMirror),
    Stop(Stop),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentConfig {
    pub source: LightSource,
    pub elements: Vec<Element>,
    pub detector: Detector,
    /// Objective numerical aperture.
    pub na: f64,
    /// Lateral magnification from the sample focal plane to the detector.
    pub magnification: f64,
    /// Stage height in µm; the sample is shifted by `−sample_stage_z`.
    #[serde(default)]
    pub sample_stage_z: f64,
}

impl InstrumentConfig {
    pub fn validate(&self) -> Result<(), InstrumentError> {
        self.source.validate()?;
        self.detector.validate()?;
        if !(self.na > 0.0 && self.na < 1.0) {
            return Err(invalid("na", format!("numerical aperture must lie in (0, 1), got {}", self.na)));
        }
        check_positive("magnification", self.magnification)?;
        if !self.sample_stage_z.is_finite() {
            return Err(invalid("sample_stage_z", "must be finite"));
        }
        for (i, e) in self.elements.iter().enumerate() {
            let field = format!("elements[{i}]");
            match e {
                Element::Lens(l) => l.validate(&field)?,
                Element::IdealLens(l) => {
                    check_unit(&format!("{field}.axis"), l.axis)?;
                    check_positive(&format!("{field}.aperture"), l.aperture)?;
                    if l.focal_length == 0.0 || !l.focal_length.is_finite() {
                        return Err(invalid(format!("{field}.focal_length"), "must be finite and non-zero"));
                    }
                }
                Element::BeamSplitter(b) => {
                    check_unit(&format!("{field}.normal"), b.normal)?;
                    check_positive(&format!("{field}.aperture"), b.aperture)?;
                    if !(b.ratio > 0.0 && b.ratio < 1.0) {
                        return Err(invalid(format!("{field}.ratio"), "split ratio must lie in (0, 1)"));
                    }
                }
                Element::Mirror(m) => {
                    check_unit(&format!("{field}.normal"), m.normal)?;
                    check_positive(&format!("{field}.aperture"), m.aperture)?;
                }
                Element::Stop(s) => {
                    check_unit(&format!("{field}.axis"), s.axis)?;
                    check_positive(&format!("{field}.aperture"), s.aperture)?;
                    if s.outer_radius <= s.aperture {
                        return Err(invalid(format!("{field}.outer_radius"), "must exceed the aperture"));
                    }
                }
            }
        }
        self.check_axial_overlap()
    }

    /// Lenses and stops on the optical axis must not overlap axially.
    fn check_axial_overlap(&self) -> Result<(), InstrumentError> {
        let mut spans: Vec<(f64, f64, usize)> = self
            .elements
            .iter()
            .enumerate()
            .filter_map(|(i, e)| match e {
                Element::Lens(l) if on_axis(l.position, l.axis) => {
                    let a = l.position.z;
                    let b = a + l.axis.z * l.thickness;
                    Some((a.min(b), a.max(b), i))
                }
                Element::IdealLens(l) if on_axis(l.center, l.axis) => Some((l.center.z, l.center.z, i)),
                _ => None,
            })
            .collect();
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in spans.windows(2) {
            if w[1].0 <= w[0].1 {
                return Err(invalid(format!("elements[{}]", w[1].2), format!("overlaps elements[{}] along the axis", w[0].2)));
            }
        }
        Ok(())
    }

    /// Lateral size of one detector pixel projected onto the sample, mm.
    pub fn object_pixel(&self) -> f64 {
        self.detector.pixel_pitch().0 / self.magnification
    }

    /// Side of the detector field of view projected onto the sample, mm.
    pub fn field_of_view(&self) -> f64 {
        self.detector.side_length / self.magnification
    }

    /// Paraxial imaging check of the on-axis train from the focal plane to
    /// the detector.
    pub fn paraxial_report(&self) -> ParaxialReport {
        let mut lenses: Vec<(f64, f64, Abcd)> = Vec::new();
        for e in &self.elements {
            match e {
                Element::Lens(l) if on_axis(l.position, l.axis) => {
                    let m = lens_matrix(l);
                    let (a, b) = (l.position.z, l.position.z + l.axis.z * l.thickness);
                    // a lens mounted upside down presents its surfaces in reverse order
                    let m = if l.axis.z > 0.0 { m } else { lens_matrix(&reversed(l)) };
                    lenses.push((a.min(b), a.max(b), m));
                }
                Element::IdealLens(l) if on_axis(l.center, l.axis) => {
                    lenses.push((l.center.z, l.center.z, Abcd::thin(l.focal_length)));
                }
                _ => {}
            }
        }
        lenses.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut m = Abcd::IDENTITY;
        let mut z = 0.0;
        for (start, end, lens) in lenses.iter().filter(|l| l.0 > 0.0 && l.1 < self.detector.center.z) {
            m = lens.mul(&Abcd::gap(start - z)).mul(&m);
            z = *end;
        }
        let before_detector = m;
        m = Abcd::gap(self.detector.center.z - z).mul(&m);
        // image plane where B vanishes, measured from the last surface
        let image_distance = -before_detector.b / before_detector.d;
        let defocus = (self.detector.center.z - z) - image_distance;
        ParaxialReport { magnification: m.a, image_defocus: defocus, b_term: m.b }
    }

    pub fn check_paraxial(&self, tolerance: f64) -> Result<ParaxialReport, InstrumentError> {
        let r = self.paraxial_report();
        if (r.magnification.abs() - self.magnification).abs() > tolerance * self.magnification {
            return Err(InstrumentError::Infeasible(format!(
                "paraxial magnification {} differs from requested {}",
                r.magnification.abs(),
                self.magnification
            )));
        }
        if r.image_defocus.abs() > tolerance * self.detector.pixel_pitch().0.max(1e-6) * 100.0 {
            return Err(InstrumentError::Infeasible(format!("detector is {} mm from the paraxial image plane", r.image_defocus)));
        }
        Ok(r)
    }

    pub fn compile(&self) -> Result<Optics, InstrumentError> {
        self.validate()?;
        Ok(Optics::new(self))
    }
}

fn on_axis(p: Vec3, axis: Vec3) -> bool {
    p.x.abs() < 1e-9 && p.y.abs() < 1e-9 && (axis.z.abs() - 1.0).abs() < 1e-12
}

fn reversed(l: &LensElement) -> LensElement {
    LensElement { r1: -l.r2, r2: -l.r1, ..l.clone() }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParaxialReport {
    /// Signed lateral magnification (negative for an inverted image).
    pub magnification: f64,
    /// Detector distance minus paraxial image distance, mm.
    pub image_defocus: f64,
    /// B element of the focal-plane-to-detector matrix.
    pub b_term: f64,
}

/// Paraxial ray-transfer matrix acting on `(height, reduced angle)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Abcd {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Abcd {
    pub const IDENTITY: Abcd = Abcd { a: 1.0, b: 0.0, c: 0.0, d: 1.0 };

    pub fn gap(distance: f64) -> Abcd {
        Abcd { a: 1.0, b: distance, c: 0.0, d: 1.0 }
    }

    pub fn thin(f: f64) -> Abcd {
        Abcd { a: 1.0, b: 0.0, c: -1.0 / f, d: 1.0 }
    }

    /// Refraction at a surface of radius `r` from `n1` into `n2`, acting on
    /// reduced angles `n·u`.
    pub fn surface(r: f64, n1: f64, n2: f64) -> Abcd {
        Abcd { a: 1.0, b: 0.0, c: -(n2 - n1) / r, d: 1.0 }
    }

    /// Translation through a medium of index `n` (reduced thickness).
    pub fn medium(distance: f64, n: f64) -> Abcd {
        Abcd::gap(distance / n)
    }

    /// `self · o` (apply `o` first).
    pub fn mul(&self, o: &Abcd) -> Abcd {
        Abcd {
            a: self.a * o.a + self.b * o.c,
            b: self.a * o.b + self.b * o.d,
            c: self.c * o.a + self.d * o.c,
            d: self.c * o.b + self.d * o.d,
        }
    }
}

/// Vertex-to-vertex matrix of a thick lens in air.
pub fn lens_matrix(l: &LensElement) -> Abcd {
    Abcd::surface(l.r2, l.n, 1.0).mul(&Abcd::medium(l.thickness, l.n)).mul(&Abcd::surface(l.r1, 1.0, l.n))
}

/// Front and back focal distances (from the first and last vertex) and the
/// effective focal length of a system matrix.
pub fn focal_distances(m: &Abcd) -> (f64, f64, f64) {
    (-m.d / m.c, -m.a / m.c, -1.0 / m.c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    /// Disk of `radius` about `center` in the plane with `normal`.
    Disk { center: Vec3, normal: Vec3, radius: f64 },
    Annulus { center: Vec3, normal: Vec3, inner: f64, outer: f64 },
    /// Spherical cap with signed radius `r` and clear `aperture`.
    Cap { vertex: Vec3, axis: Vec3, r: f64, aperture: f64 },
    /// Unbounded plane.
    Plane { center: Vec3, normal: Vec3 },
}

impl Shape {
    /// Nearest hit with a geometric normal pointing to the `-axis` side.
    fn intersect(&self, ray: &Ray) -> Option<(f64, Vec3)> {
        match *self {
            Shape::Disk { center, normal, radius } => {
                let t = plane_t(ray, center, normal)?;
                ((ray.at(t) - center).length_squared() <= radius * radius).then_some((t, -normal))
            }
            Shape::Annulus { center, normal, inner, outer } => {
                let t = plane_t(ray, center, normal)?;
                let r2 = (ray.at(t) - center).length_squared();
                (r2 > inner * inner && r2 <= outer * outer).then_some((t, -normal))
            }
            Shape::Plane { center, normal } => plane_t(ray, center, normal).map(|t| (t, -normal)),
            Shape::Cap { vertex, axis, r, aperture } => {
                let c = vertex + axis * r;
                let oc = ray.origin - c;
                let half_b = oc.dot(ray.direction);
                let perp = oc - ray.direction * half_b;
                let disc = r * r - perp.length_squared();
                if disc < 0.0 {
                    return None;
                }
                let q = -half_b - disc.sqrt().copysign(half_b);
                let cc = oc.length_squared() - r * r;
                let (mut t0, mut t1) = if q != 0.0 { (cc / q, q) } else { (0.0, 0.0) };
                if t0 > t1 {
                    std::mem::swap(&mut t0, &mut t1);
                }
                for t in [t0, t1] {
                    if t < ray.t_min || t > ray.t_max {
                        continue;
                    }
                    let p = ray.at(t);
                    let w = p - c;
                    let axial = w.dot(axis);
                    let lateral2 = w.length_squared() - axial * axial;
                    // only the half of the sphere that contains the vertex
                    if axial * r < 0.0 && lateral2 <= aperture * aperture {
                        return Some((t, w / r));
                    }
                }
                None
            }
        }
    }
}

#[inline]
fn plane_t(ray: &Ray, center: Vec3, normal: Vec3) -> Option<f64> {
    let denom = ray.direction.dot(normal);
    if denom.abs() < PARALLEL_EPS {
        return None;
    }
    let t = (center - ray.origin).dot(normal) / denom;
    (t >= ray.t_min && t <= ray.t_max).then_some(t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Action {
    /// Snell refraction; `n_before` is the index on the `-axis` side.
    Refract { n_before: f64, n_after: f64 },
    Ideal { center: Vec3, axis: Vec3, u: Vec3, v: Vec3, f: f64 },
    Split { ratio: f64 },
    Reflect,
    Record,
    Absorb,
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Surface {
    shape: Shape,
    action: Action,
    element: Option<usize>,
}

/// What happened when a ray met an instrument surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Interaction {
    Continue(Ray),
    /// Reached the detector plane at this point.
    Detector(Vec3),
    /// Stopped by a mount or stop.
    Blocked,
    /// Absorbed by the source housing.
    Absorbed,
}

/// Hit on an instrument surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticsHit {
    pub t: f64,
    pub surface: usize,
    pub record: HitRecord,
}

/// Instrument compiled to a flat list of surfaces for tracing.
#[derive(Debug, Clone)]
pub struct Optics {
    pub source: LightSource,
    pub detector: Detector,
    surfaces: Vec<Surface>,
}

impl Optics {
    fn new(cfg: &InstrumentConfig) -> Self {
        let mut surfaces = Vec::new();
        let src = &cfg.source;
        surfaces.push(Surface {
            shape: Shape::Disk { center: src.center, normal: src.axis, radius: src.radius },
            action: Action::Absorb,
            element: None,
        });
        for (i, e) in cfg.elements.iter().enumerate() {
            let el = Some(i);
            match e {
                Element::Lens(l) => {
                    let v2 = l.position + l.axis * l.thickness;
                    for (vertex, r, before, after) in [(l.position, l.r1, 1.0, l.n), (v2, l.r2, l.n, 1.0)] {
                        let shape = if r.is_finite() {
                            Shape::Cap { vertex, axis: l.axis, r, aperture: l.aperture }
                        } else {
                            Shape::Disk { center: vertex, normal: l.axis, radius: l.aperture }
                        };
                        surfaces.push(Surface { shape, action: Action::Refract { n_before: before, n_after: after }, element: el });
                    }
                    if l.mount_radius > l.aperture {
                        surfaces.push(Surface {
                            shape: Shape::Annulus {
                                center: l.position + l.axis * (0.5 * l.thickness),
                                normal: l.axis,
                                inner: l.aperture,
                                outer: l.mount_radius,
                            },
                            action: Action::Block,
                            element: el,
                        });
                    }
                }
                Element::IdealLens(l) => {
                    let (u, v) = l.axis.orthonormal_basis();
                    surfaces.push(Surface {
                        shape: Shape::Disk { center: l.center, normal: l.axis, radius: l.aperture },
                        action: Action::Ideal { center: l.center, axis: l.axis, u, v, f: l.focal_length },
                        element: el,
                    });
                    if l.mount_radius > l.aperture {
                        surfaces.push(Surface {
                            shape: Shape::Annulus { center: l.center, normal: l.axis, inner: l.aperture, outer: l.mount_radius },
                            action: Action::Block,
                            element: el,
                        });
                    }
                }
                Element::BeamSplitter(b) => surfaces.push(Surface {
                    shape: Shape::Disk { center: b.center, normal: b.normal, radius: b.aperture },
                    action: Action::Split { ratio: b.ratio },
                    element: el,
                }),
                Element::Mirror(m) => surfaces.push(Surface {
                    shape: Shape::Disk { center: m.center, normal: m.normal, radius: m.aperture },
                    action: Action::Reflect,
                    element: el,
                }),
                Element::Stop(s) => surfaces.push(Surface {
                    shape: Shape::Annulus { center: s.center, normal: s.axis, inner: s.aperture, outer: s.outer_radius },
                    action: Action::Block,
                    element: el,
                }),
            }
        }
        surfaces.push(Surface {
            shape: Shape::Plane { center: cfg.detector.center, normal: cfg.detector.axis },
            action: Action::Record,
            element: None,
        });
        Self { source: cfg.source.clone(), detector: cfg.detector.clone(), surfaces }
    }

    pub fn surface_count(&self) -> usize {
        self.surfaces.len()
    }

    /// Element index owning surface `s`, if any (the source and detector are
    /// not elements).
    pub fn element_of(&self, s: usize) -> Option<usize> {
        self.surfaces[s].element
    }

    /// Nearest instrument surface along the ray; ties go to the lowest
    /// surface index.
    pub fn intersect(&self, ray: &Ray) -> Option<OpticsHit> {
        let mut best: Option<(f64, usize, Vec3)> = None;
        let mut probe = *ray;
        for (i, s) in self.surfaces.iter().enumerate() {
            if let Some((t, n)) = s.shape.intersect(&probe) {
                if best.is_none_or(|b| t < b.0) {
                    best = Some((t, i, n));
                    probe.t_max = t;
                }
            }
        }
        best.map(|(t, surface, n)| OpticsHit { t, surface, record: HitRecord::oriented(ray, t, n) })
    }

    /// Applies the surface's optical action to a ray that hit it.
    pub fn interact(&self, ray: &Ray, hit: &OpticsHit, rng: &mut RngStream) -> Interaction {
        let p = hit.record.point;
        let n = hit.record.normal;
        match self.surfaces[hit.surface].action {
            Action::Refract { n_before, n_after } => {
                let (n1, n2) = if hit.record.is_front_face { (n_before, n_after) } else { (n_after, n_before) };
                let ev = refract(ray.direction, n, n1, n2);
                let medium = if ev.kind == ScatterKind::Refracted { n2 } else { n1 };
                Interaction::Continue(ray.spawn(p, ev.outgoing_direction, medium))
            }
            Action::Ideal { center, axis, u, v, f } => {
                let d = ray.direction;
                let dz = d.dot(axis);
                if dz.abs() < PARALLEL_EPS {
                    return Interaction::Blocked;
                }
                let local = p - center;
                let su = d.dot(u) / dz.abs() - local.dot(u) / f;
                let sv = d.dot(v) / dz.abs() - local.dot(v) / f;
                let out = (u * su + v * sv + axis * dz.signum()).normalized();
                Interaction::Continue(ray.spawn(p, out, ray.medium_index))
            }
            Action::Split { ratio } => {
                if rng.chance(ratio) {
                    Interaction::Continue(ray.spawn(p, ray.direction, ray.medium_index))
                } else {
                    Interaction::Continue(ray.spawn(p, reflect_specular(ray.direction, n).outgoing_direction, ray.medium_index))
                }
            }
            Action::Reflect => Interaction::Continue(ray.spawn(p, reflect_specular(ray.direction, n).outgoing_direction, ray.medium_index)),
            Action::Record => Interaction::Detector(p),
            Action::Absorb => Interaction::Absorbed,
            Action::Block => Interaction::Blocked,
        }
    }
}

/// Lens technology used by [`build_default_instrument`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LensModel {
    /// Plano-convex spherical glass lenses; the objective is a doublet.
    #[default]
    Spherical,
    /// Aberration-free slope-space lenses of the same paraxial layout.
    Ideal,
}

/// Design inputs for the generic coaxial microscope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstrumentParams {
    pub na: f64,
    pub magnification: f64,
    /// Sample focal plane to the first objective vertex, mm.
    pub working_distance: f64,
    pub detector_side: f64,
    pub pixels: usize,
    pub lens_model: LensModel,
    pub glass_index: f64,
    pub split_ratio: f64,
    /// Collector focal length relative to the objective focal length.
    pub collector_ratio: f64,
    /// Illuminated radius on the sample relative to the half-diagonal of
    /// the field of view.
    pub illumination_fill: f64,
}

impl Default for InstrumentParams {
    fn default() -> Self {
        Self {
            na: 0.15,
            magnification: 5.0,
            working_distance: 3.0,
            detector_side: 2.56,
            pixels: 256,
            lens_model: LensModel::Spherical,
            glass_index: 1.5168,
            split_ratio: 0.5,
            collector_ratio: 2.0,
            illumination_fill: 1.25,
        }
    }
}

impl InstrumentParams {
    pub fn validate(&self) -> Result<(), InstrumentError> {
        if !(self.na > 0.0 && self.na < 1.0) {
            return Err(invalid("na", format!("numerical aperture must lie in (0, 1), got {}", self.na)));
        }
        check_positive("magnification", self.magnification)?;
        check_positive("working_distance", self.working_distance)?;
        check_positive("detector_side", self.detector_side)?;
        if self.pixels == 0 {
            return Err(invalid("pixels", "must be at least 1"));
        }
        if !(self.glass_index > 1.0) {
            return Err(invalid("glass_index", "must exceed 1"));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(invalid("split_ratio", "must lie in (0, 1)"));
        }
        check_positive("collector_ratio", self.collector_ratio)?;
        check_positive("illumination_fill", self.illumination_fill)
    }
}

/// Plano-convex lens with the flat face first along `axis` and the given
/// curved-face radius; thickness leaves a minimum edge of 10% of the
/// aperture.
fn plano_convex(position: Vec3, axis: Vec3, radius: f64, aperture: f64, n: f64, flat_first: bool) -> LensElement {
    let sag = radius.abs() - (radius * radius - aperture * aperture).max(0.0).sqrt();
    let thickness = sag + 0.1 * aperture;
    let (r1, r2) = if flat_first { (f64::INFINITY, -radius.abs()) } else { (radius.abs(), f64::INFINITY) };
    LensElement { position, axis, r1, r2, thickness, aperture, n, mount_radius: f64::INFINITY }
}

/// Largest aperture-to-radius ratio accepted for a spherical lens.
const MAX_APERTURE_RATIO: f64 = 0.9;

struct ObjectiveDesign {
    lenses: Vec<LensElement>,
    top: f64,
    efl: f64,
}

/// Objective doublet of two identical plano-convex lenses, flat faces towards
/// the sample, scaled so that its front focal distance equals the working
/// distance.
fn design_objective(p: &InstrumentParams) -> Result<ObjectiveDesign, InstrumentError> {
    let n = p.glass_index;
    let wd = p.working_distance;
    let a1 = wd * p.na.asin().tan();
    let a2 = 1.15 * a1;
    let gap = 0.05 * a1;
    let build = |radius: f64| -> Option<(ObjectiveDesign, f64)> {
        if a2 > MAX_APERTURE_RATIO * radius {
            return None;
        }
        let l1 = plano_convex(Vec3::new(0.0, 0.0, wd), Vec3::Z, radius, a1, n, true);
        let z2 = wd + l1.thickness + gap;
        let l2 = plano_convex(Vec3::new(0.0, 0.0, z2), Vec3::Z, radius, a2, n, true);
        let m = lens_matrix(&l2).mul(&Abcd::gap(gap)).mul(&lens_matrix(&l1));
        let (ffd, _, efl) = focal_distances(&m);
        let top = z2 + l2.thickness;
        Some((ObjectiveDesign { lenses: vec![l1, l2], top, efl }, ffd))
    };
    let ffd_of = |radius: f64| build(radius).map(|d| d.1);
    // front focal distance grows monotonically with the radius
    let mut lo = a2 / MAX_APERTURE_RATIO;
    let f_lo = ffd_of(lo).ok_or_else(|| InstrumentError::Infeasible("objective aperture exceeds lens radius".into()))?;
    if f_lo > wd {
        return Err(InstrumentError::Infeasible(format!(
            "NA {} needs aperture radius {:.4} mm at working distance {} mm, beyond what a spherical doublet of front focal distance {} mm can clear",
            p.na, a1, wd, wd
        )));
    }
    let mut hi = lo * 2.0;
    while ffd_of(hi).is_some_and(|f| f < wd) {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        match ffd_of(mid) {
            Some(f) if f < wd => lo = mid,
            _ => hi = mid,
        }
    }
    build(0.5 * (lo + hi)).map(|d| d.0).ok_or_else(|| InstrumentError::Infeasible("objective solve failed".into()))
}

/// Paraxially solved coaxial epi-illumination microscope: source →
/// collector → beamsplitter → objective → sample → objective → beamsplitter
/// → tube lens → detector. The source is imaged onto the sample focal plane
/// and the focal plane onto the detector at the requested magnification.
pub fn build_default_instrument(p: &InstrumentParams) -> Result<InstrumentConfig, InstrumentError> {
    p.validate()?;
    let n = p.glass_index;
    let tan_na = p.na.asin().tan();
    let fov_half_diag = 0.5 * p.detector_side / p.magnification * std::f64::consts::SQRT_2;

    let (objective, obj_top, f_o, a_o) = match p.lens_model {
        LensModel::Spherical => {
            let d = design_objective(p)?;
            let a = d.lenses[1].aperture;
            let top = d.top;
            let efl = d.efl;
            (d.lenses.into_iter().map(Element::Lens).collect::<Vec<_>>(), top, efl, a)
        }
        LensModel::Ideal => {
            let f = p.working_distance;
            let a = f * tan_na;
            let lens = IdealLens { center: Vec3::new(0.0, 0.0, f), axis: Vec3::Z, focal_length: f, aperture: a, mount_radius: f64::INFINITY };
            (vec![Element::IdealLens(lens)], f, f, a)
        }
    };
    // collimated beam radius above the objective, including field walk-off
    let beam = a_o + fov_half_diag * p.illumination_fill;

    let f_t = p.magnification * f_o;
    let f_c = p.collector_ratio * f_o;
    let z_bs = obj_top + 2.0 * beam + 0.5 * f_o;
    let bs_aperture = 2.0 * beam;
    let splitter = BeamSplitter {
        center: Vec3::new(0.0, 0.0, z_bs),
        normal: Vec3::new(1.0, 0.0, -1.0).normalized(),
        aperture: bs_aperture,
        ratio: p.split_ratio,
    };

    let tube_start = z_bs + 2.0 * beam;
    let source_radius = p.illumination_fill * fov_half_diag * f_c / f_o;
    let coll_start = 2.0 * beam;
    let arm = coll_start + (z_bs - obj_top);
    let walk = source_radius / f_c * arm;
    let a_t = 1.2 * (a_o + fov_half_diag * p.magnification * 2.0);
    let a_c = 1.2 * (a_o + walk);

    let mut elements = objective;
    let (tube, detector_z, collector, source_x) = match p.lens_model {
        LensModel::Spherical => {
            // curved face towards the collimated beam
            let radius = f_t * (n - 1.0);
            if a_t > MAX_APERTURE_RATIO * radius {
                return Err(InstrumentError::Infeasible(format!("tube lens aperture {a_t:.4} mm exceeds its radius {radius:.4} mm")));
            }
            let tube = plano_convex(Vec3::new(0.0, 0.0, tube_start), Vec3::Z, radius, a_t, n, false);
            let bfd = focal_distances(&lens_matrix(&tube)).1;
            let det_z = tube_start + tube.thickness + bfd;

            let rc = f_c * (n - 1.0);
            if a_c > MAX_APERTURE_RATIO * rc {
                return Err(InstrumentError::Infeasible(format!(
                    "collector aperture {a_c:.4} mm exceeds its radius {rc:.4} mm; lower the NA or raise collector_ratio"
                )));
            }
            // light travels -x: flat face towards the source, curved face towards the splitter
            let mut coll = plano_convex(Vec3::ZERO, -Vec3::X, rc, a_c, n, true);
            coll.position = Vec3::new(coll_start + coll.thickness, 0.0, z_bs);
            let ffd = focal_distances(&lens_matrix(&coll)).0;
            let src_x = coll.position.x + ffd;
            (Element::Lens(tube), det_z, Element::Lens(coll), src_x)
        }
        LensModel::Ideal => {
            let tube = IdealLens {
                center: Vec3::new(0.0, 0.0, tube_start),
                axis: Vec3::Z,
                focal_length: f_t,
                aperture: a_t,
                mount_radius: f64::INFINITY,
            };
            let coll = IdealLens {
                center: Vec3::new(coll_start, 0.0, z_bs),
                axis: -Vec3::X,
                focal_length: f_c,
                aperture: a_c,
                mount_radius: f64::INFINITY,
            };
            (Element::IdealLens(tube), tube_start + f_t, Element::IdealLens(coll), coll_start + f_c)
        }
    };
    elements.push(Element::BeamSplitter(splitter));
    elements.push(tube);
    elements.push(collector);

    let detector = Detector {
        center: Vec3::new(0.0, 0.0, detector_z),
        axis: -Vec3::Z,
        // the train inverts the image; flipped axes give an upright picture
        u_axis: -Vec3::X,
        v_axis: -Vec3::Y,
        side_length: p.detector_side,
        pixels_x: p.pixels,
        pixels_y: p.pixels,
    };
    let source = LightSource { center: Vec3::new(source_x, 0.0, z_bs), axis: -Vec3::X, radius: source_radius };
    let cfg = InstrumentConfig { source, elements, detector, na: p.na, magnification: p.magnification, sample_stage_z: 0.0 };
    cfg.validate()?;
    cfg.check_paraxial(1e-6)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(i: u64) -> RngStream {
        RngStream::from_parts(11, 0, i)
    }

    fn square_detector(pixels: usize) -> Detector {
        Detector {
            center: Vec3::new(0.0, 0.0, 10.0),
            axis: -Vec3::Z,
            u_axis: Vec3::X,
            v_axis: -Vec3::Y,
            side_length: 2.0,
            pixels_x: pixels,
            pixels_y: pixels,
        }
    }

    #[test]
    fn emitted_rays_on_disk_and_centred() {
        let s = LightSource { center: Vec3::new(1.0, 2.0, 3.0), axis: Vec3::new(0.0, 1.0, 1.0).normalized(), radius: 0.5 };
        let n = 1_000_000;
        let mut sum = Vec3::ZERO;
        let mut sum_sq = 0.0;
        for i in 0..n {
            let r = s.emit_ray(&mut rng(i));
            let d = r.origin - s.center;
            assert!(d.length() <= 0.5 + 1e-12);
            assert!(d.dot(s.axis).abs() < 1e-12);
            assert!(r.direction.dot(s.axis) > 0.0);
            sum = sum + d;
            sum_sq += d.length_squared();
        }
        let mean = sum / n as f64;
        // per-component variance of an area-uniform disk is R²/4 split over two axes
        let se = (sum_sq / n as f64 / 2.0).sqrt() / (n as f64).sqrt();
        assert!(mean.length() < 3.0 * se * 1.5, "mean offset {mean:?}");
    }

    #[test]
    fn emitted_radius_matches_area_law() {
        let s = LightSource { center: Vec3::ZERO, axis: Vec3::Z, radius: 2.0 };
        let n = 100_000;
        let mut r: Vec<f64> = (0..n).map(|i| s.emit_ray(&mut rng(i)).origin.length() / 2.0).collect();
        r.sort_by(f64::total_cmp);
        let d = r
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = x * x;
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < 1.6276 / (n as f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn detector_binning_rules() {
        let det = square_detector(4);
        let mut acc = DetectorAccumulator::new(&det);
        assert!(acc.record(&det, det.center));
        assert_eq!(det.pixel_of(det.center), Some((2, 2)));
        // upper corner along +u and +v lands in the last pixel
        let corner = det.center + det.u_axis + det.v_axis;
        assert_eq!(det.pixel_of(corner), Some((3, 3)));
        let lower = det.center - det.u_axis - det.v_axis;
        assert_eq!(det.pixel_of(lower), Some((0, 0)));
        assert!(!acc.record(&det, det.center + det.u_axis * 1.01));
        assert_eq!(acc.spill, 1);
        assert_eq!(acc.total(), 1);
    }

    #[test]
    fn detector_uniformity_chi_square() {
        let det = square_detector(8);
        let mut acc = DetectorAccumulator::new(&det);
        let mut r = rng(5);
        let n = 100_000;
        for _ in 0..n {
            let p = det.center + det.u_axis * (2.0 * r.uniform() - 1.0) + det.v_axis * (2.0 * r.uniform() - 1.0);
            acc.record(&det, p);
        }
        let expected = n as f64 / 64.0;
        let chi2: f64 = acc.counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // upper 1% point of chi-square with 63 degrees of freedom
        assert!(chi2 < 92.01, "chi2 {chi2}");
    }

    fn single(elements: Vec<Element>) -> Optics {
        let cfg = InstrumentConfig {
            source: LightSource { center: Vec3::new(0.0, 0.0, -50.0), axis: Vec3::Z, radius: 0.1 },
            elements,
            detector: square_detector(4),
            na: 0.5,
            magnification: 1.0,
            sample_stage_z: 0.0,
        };
        cfg.compile().unwrap()
    }

    fn run(optics: &Optics, mut ray: Ray, rng: &mut RngStream) -> Option<Ray> {
        for _ in 0..16 {
            let hit = optics.intersect(&ray)?;
            match optics.interact(&ray, &hit, rng) {
                Interaction::Continue(r) => ray = r,
                Interaction::Detector(_) => return Some(ray),
                _ => return None,
            }
        }
        None
    }

    #[test]
    fn flat_plate_preserves_direction() {
        let plate = LensElement {
            position: Vec3::new(0.0, 0.0, 1.0),
            axis: Vec3::Z,
            r1: f64::INFINITY,
            r2: f64::INFINITY,
            thickness: 2.0,
            aperture: 3.0,
            n: 1.5,
            mount_radius: 3.0,
        };
        let optics = single(vec![Element::Lens(plate)]);
        let d = Vec3::new(0.3, -0.2, 1.0).normalized();
        let out = run(&optics, Ray::new(Vec3::ZERO, d), &mut rng(0)).unwrap();
        assert!((out.direction - d).length() < 1e-12);
        // lateral offset inside the glass differs from a straight line
        let straight = d * ((10.0) / d.z);
        let at_det = out.at((10.0 - out.origin.z) / out.direction.z);
        assert!((at_det - straight).length() > 1e-3);
    }

    #[test]
    fn beamsplitter_transmits_fraction() {
        let bs = BeamSplitter { center: Vec3::new(0.0, 0.0, 1.0), normal: Vec3::Z, aperture: 1.0, ratio: 0.5 };
        let optics = single(vec![Element::BeamSplitter(bs)]);
        let ray = Ray::new(Vec3::ZERO, Vec3::Z);
        let hit = optics.intersect(&ray).unwrap();
        let n = 1_000_000;
        let mut transmitted = 0;
        for i in 0..n {
            if let Interaction::Continue(r) = optics.interact(&ray, &hit, &mut rng(i)) {
                if r.direction.z > 0.0 {
                    transmitted += 1;
                }
            }
        }
        let frac = transmitted as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.002, "{frac}");
    }

    #[test]
    fn biconvex_focuses_at_lensmaker_focal_length() {
        let (r1, r2, t, n) = (50.0, -50.0, 4.0, 1.5);
        // thick-lens lensmaker equation
        let power = (n - 1.0) * (1.0 / r1 - 1.0 / r2 + (n - 1.0) * t / (n * r1 * r2));
        let f = 1.0 / power;
        let bfd = f * (1.0 - (n - 1.0) * t / (n * r1));
        let lens = LensElement { position: Vec3::ZERO, axis: Vec3::Z, r1, r2, thickness: t, aperture: 10.0, n, mount_radius: 10.0 };
        assert!((lens.focal_length() - f).abs() < 1e-9 * f);
        let optics = single(vec![Element::Lens(lens)]);
        let h = 0.1 * 10.0;
        let ray = Ray::new(Vec3::new(h, 0.0, -5.0), Vec3::Z);
        let mut r = rng(0);
        let mut ray = ray;
        for _ in 0..2 {
            let hit = optics.intersect(&ray).unwrap();
            match optics.interact(&ray, &hit, &mut r) {
                Interaction::Continue(next) => ray = next,
                other => panic!("{other:?}"),
            }
        }
        let t_axis = -ray.origin.x / ray.direction.x;
        let crossing = ray.at(t_axis).z - t;
        assert!((crossing - bfd).abs() < 0.01 * f, "crossing {crossing} vs {bfd}");
    }

    #[test]
    fn ideal_lens_images_points() {
        let f = 4.0;
        let lens = IdealLens { center: Vec3::new(0.0, 0.0, f), axis: Vec3::Z, focal_length: f, aperture: 100.0, mount_radius: 100.0 };
        let optics = single(vec![Element::IdealLens(lens)]);
        let h = 0.3;
        let mut r = rng(1);
        for i in 0..100 {
            let d = sample_lambertian(Vec3::Z, &mut rng(i));
            let ray = Ray::new(Vec3::new(h, 0.0, 0.0), d);
            let hit = optics.intersect(&ray).unwrap();
            let Interaction::Continue(out) = optics.interact(&ray, &hit, &mut r) else { panic!() };
            // a point in the front focal plane leaves as a collimated beam
            let expected = Vec3::new(-h / f, 0.0, 1.0).normalized();
            assert!((out.direction - expected).length() < 1e-12);
        }
    }

    #[test]
    fn ideal_lens_symmetric_in_direction() {
        let lens = IdealLens { center: Vec3::ZERO, axis: Vec3::Z, focal_length: 2.0, aperture: 5.0, mount_radius: 5.0 };
        let optics = single(vec![Element::IdealLens(lens)]);
        let ray = Ray::new(Vec3::new(0.5, 0.0, 1.0), -Vec3::Z);
        let hit = optics.intersect(&ray).unwrap();
        let Interaction::Continue(out) = optics.interact(&ray, &hit, &mut rng(0)) else { panic!() };
        // converges to the axis two units beyond the lens
        let t = -out.origin.x / out.direction.x;
        assert!((out.at(t).z + 2.0).abs() < 1e-12);
    }

    #[test]
    fn mount_blocks_outside_aperture() {
        let lens = IdealLens { center: Vec3::new(0.0, 0.0, 1.0), axis: Vec3::Z, focal_length: 2.0, aperture: 1.0, mount_radius: f64::INFINITY };
        let optics = single(vec![Element::IdealLens(lens)]);
        let ray = Ray::new(Vec3::new(1.5, 0.0, 0.0), Vec3::Z);
        let hit = optics.intersect(&ray).unwrap();
        assert_eq!(optics.interact(&ray, &hit, &mut rng(0)), Interaction::Blocked);
    }

    #[test]
    fn abcd_thin_lens_imaging() {
        // 2f–2f imaging with unit magnification
        let f = 3.0;
        let m = Abcd::gap(2.0 * f).mul(&Abcd::thin(f)).mul(&Abcd::gap(2.0 * f));
        assert!(m.b.abs() < 1e-12);
        assert!((m.a + 1.0).abs() < 1e-12);
    }

    #[test]
    fn default_instrument_passes_paraxial_check() {
        let cfg = build_default_instrument(&InstrumentParams::default()).unwrap();
        let r = cfg.paraxial_report();
        assert!((r.magnification + 5.0).abs() < 5e-6, "{r:?}");
        assert!(r.image_defocus.abs() < 1e-9);
        let ideal = build_default_instrument(&InstrumentParams { lens_model: LensModel::Ideal, ..Default::default() }).unwrap();
        assert!((ideal.paraxial_report().magnification + 5.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_requests_rejected() {
        for na in [1.0, 1.2, 0.0] {
            let e = build_default_instrument(&InstrumentParams { na, ..Default::default() }).unwrap_err();
            assert!(matches!(e, InstrumentError::Invalid { ref field, .. } if field == "na"), "{e:?}");
        }
        let e = build_default_instrument(&InstrumentParams { na: 0.9, ..Default::default() }).unwrap_err();
        assert!(matches!(e, InstrumentError::Infeasible(_)), "{e:?}");
        assert!(build_default_instrument(&InstrumentParams { magnification: -2.0, ..Default::default() }).is_err());
    }

    fn spot(cfg: &InstrumentConfig, rays: u64) -> (Vec3, f64, usize) {
        let optics = cfg.compile().unwrap();
        let mut pts = Vec::new();
        for i in 0..rays {
            let mut r = RngStream::from_parts(3, 0, i);
            let d = sample_lambertian(Vec3::Z, &mut r);
            let mut ray = Ray::new(Vec3::ZERO, d).with_range(SECONDARY_T_MIN, f64::INFINITY);
            for _ in 0..32 {
                let Some(hit) = optics.intersect(&ray) else { break };
                match optics.interact(&ray, &hit, &mut r) {
                    Interaction::Continue(next) => ray = next,
                    Interaction::Detector(p) => {
                        pts.push(p);
                        break;
                    }
                    _ => break,
                }
            }
        }
        let c = pts.iter().fold(Vec3::ZERO, |a, &p| a + p) / pts.len() as f64;
        let rms = (pts.iter().map(|&p| (p - c).length_squared()).sum::<f64>() / pts.len() as f64).sqrt();
        (c, rms, pts.len())
    }

    #[test]
    fn focal_point_spot_within_two_pixels() {
        let cfg = build_default_instrument(&InstrumentParams::default()).unwrap();
        let pitch = cfg.detector.pixel_pitch().0;
        let (c, rms, n) = spot(&cfg, 100_000);
        assert!(n > 1000, "only {n} rays reached the detector");
        assert!(rms <= 2.0 * pitch, "rms {rms} vs pitch {pitch}");
        let (c2, _, _) = spot(&cfg, 200_000);
        assert!((c - c2).length() < 0.5 * pitch);
        assert!((c - cfg.detector.center).length() < 0.5 * pitch);
    }

    #[test]
    fn ideal_instrument_spot_is_sharp() {
        let cfg = build_default_instrument(&InstrumentParams { lens_model: LensModel::Ideal, na: 0.5, ..Default::default() }).unwrap();
        let (_, rms, n) = spot(&cfg, 20_000);
        assert!(n > 1000);
        assert!(rms < 1e-9, "{rms}");
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = build_default_instrument(&InstrumentParams::default()).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back: InstrumentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
