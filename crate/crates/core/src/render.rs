//! Forward Monte Carlo tracing from the light source through the instrument
//! and sample onto the detector.

use crate::geometry::{Ray, Vec3};
use crate::grid::Grid;
use crate::instrument::{DetectorAccumulator, InstrumentConfig, InstrumentError, Interaction, Optics};
use crate::optics::{reflect_specular, refract, sample_hg_surface_scatter, MaterialModel, ScatterKind};
use crate::rng::RngStream;
use crate::scene::{Scene, SceneError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

pub const DEFAULT_MAX_DEPTH: u32 = 16;
pub const DEFAULT_BATCH_SIZE: u64 = 1 << 16;

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("invalid render job: {0}")]
    InvalidJob(String),
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Clone, Copy)]
pub struct RenderJob<'a> {
    pub instrument: &'a InstrumentConfig,
    pub scene: &'a Scene,
    pub n_rays: u64,
    pub global_seed: u64,
    pub max_depth: u32,
    pub batch_size: u64,
}

impl<'a> RenderJob<'a> {
    pub fn new(instrument: &'a InstrumentConfig, scene: &'a Scene, n_rays: u64, global_seed: u64) -> Self {
        Self { instrument, scene, n_rays, global_seed, max_depth: DEFAULT_MAX_DEPTH, batch_size: DEFAULT_BATCH_SIZE }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if self.n_rays == 0 {
            return Err(RenderError::InvalidJob("n_rays must be at least 1".into()));
        }
        if self.max_depth == 0 {
            return Err(RenderError::InvalidJob("max_depth must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(RenderError::InvalidJob("batch_size must be at least 1".into()));
        }
        self.instrument.validate()?;
        self.scene.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub n_rays: u64,
    pub seed: u64,
    pub batch_size: u64,
    /// µm.
    pub sample_stage_z: f64,
    /// Seconds.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorImage {
    /// Hit counts, `width × height`.
    pub counts: Grid,
    pub meta: ImageMeta,
}

impl DetectorImage {
    pub fn width(&self) -> usize {
        self.counts.width()
    }

    pub fn height(&self) -> usize {
        self.counts.height()
    }

    pub fn total(&self) -> f64 {
        self.counts.sum()
    }
}

/// Ray census. Every emitted ray ends in exactly one of the outcome fields.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RenderStats {
    pub rays_emitted: u64,
    pub rays_detected: u64,
    /// Reached the detector plane outside the pixel area.
    pub rays_spilled: u64,
    /// Left the system without hitting anything.
    pub rays_escaped: u64,
    /// Stopped by a mount, stop or aperture edge.
    pub rays_lost_aperture: u64,
    pub rays_absorbed: u64,
    pub rays_terminated_depth: u64,
    pub wall_time: f64,
    pub rays_per_second: f64,
}

impl RenderStats {
    pub fn census_balanced(&self) -> bool {
        self.rays_emitted
            == self.rays_detected
                + self.rays_spilled
                + self.rays_escaped
                + self.rays_lost_aperture
                + self.rays_absorbed
                + self.rays_terminated_depth
    }

    fn count(&mut self, outcome: &PathOutcome) {
        match outcome {
            PathOutcome::Detected(_) => self.rays_detected += 1,
            PathOutcome::Spilled => self.rays_spilled += 1,
            PathOutcome::Escaped => self.rays_escaped += 1,
            PathOutcome::Blocked => self.rays_lost_aperture += 1,
            PathOutcome::Absorbed => self.rays_absorbed += 1,
            PathOutcome::DepthExceeded => self.rays_terminated_depth += 1,
        }
    }

    fn merge(&mut self, o: &RenderStats) {
        self.rays_emitted += o.rays_emitted;
        self.rays_detected += o.rays_detected;
        self.rays_spilled += o.rays_spilled;
        self.rays_escaped += o.rays_escaped;
        self.rays_lost_aperture += o.rays_lost_aperture;
        self.rays_absorbed += o.rays_absorbed;
        self.rays_terminated_depth += o.rays_terminated_depth;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathOutcome {
    /// Detector-plane hit point inside the pixel area.
    Detected(Vec3),
    Spilled,
    Escaped,
    Blocked,
    Absorbed,
    DepthExceeded,
}

/// Follows one ray through sample and instrument until it is detected or
/// terminated. Every interaction increments the ray depth; a ray that would
/// need an interaction beyond `max_depth` is terminated.
pub fn trace_path(mut ray: Ray, scene: &Scene, optics: &Optics, rng: &mut RngStream, max_depth: u32) -> PathOutcome {
    loop {
        let inst = optics.intersect(&ray);
        let limited = match &inst {
            Some(h) => ray.with_range(ray.t_min, h.t),
            None => ray,
        };
        let sample = scene.intersect(&limited);
        if let Some((hit, material)) = sample {
            if ray.depth >= max_depth {
                return PathOutcome::DepthExceeded;
            }
            let p = hit.point;
            let d = ray.direction;
            let next = match scene.materials[material] {
                MaterialModel::HgSurface { g } => sample_hg_surface_scatter(d, hit.normal, g, rng).outgoing_direction,
                MaterialModel::Mirror => reflect_specular(d, hit.normal).outgoing_direction,
                MaterialModel::Dielectric { n } => {
                    let (n1, n2) = if hit.is_front_face { (ray.medium_index, n) } else { (n, 1.0) };
                    let ev = refract(d, hit.normal, n1, n2);
                    let medium = if ev.kind == ScatterKind::Refracted { n2 } else { n1 };
                    ray = ray.spawn(p, ev.outgoing_direction, medium);
                    continue;
                }
                MaterialModel::Absorber | MaterialModel::Emitter => return PathOutcome::Absorbed,
            };
            ray = ray.spawn(p, next, ray.medium_index);
            continue;
        }
        let Some(h) = inst else { return PathOutcome::Escaped };
        match optics.interact(&ray, &h, rng) {
            Interaction::Detector(p) => {
                return if optics.detector.pixel_of(p).is_some() { PathOutcome::Detected(p) } else { PathOutcome::Spilled };
            }
            Interaction::Blocked => return PathOutcome::Blocked,
            Interaction::Absorbed => return PathOutcome::Absorbed,
            Interaction::Continue(next) => {
                if ray.depth >= max_depth {
                    return PathOutcome::DepthExceeded;
                }
                ray = next;
            }
        }
    }
}

struct BatchResult {
    acc: DetectorAccumulator,
    stats: RenderStats,
}

fn trace_batch(job: &RenderJob, scene: &Scene, optics: &Optics, batch: u64) -> BatchResult {
    let start = batch * job.batch_size;
    let end = (start + job.batch_size).min(job.n_rays);
    let mut acc = DetectorAccumulator::new(&optics.detector);
    let mut stats = RenderStats::default();
    for ray_id in 0..end - start {
        let mut rng = RngStream::from_parts(job.global_seed, batch, ray_id);
        let ray = optics.source.emit_ray(&mut rng);
        let outcome = trace_path(ray, scene, optics, &mut rng, job.max_depth);
        stats.rays_emitted += 1;
        stats.count(&outcome);
        match outcome {
            PathOutcome::Detected(p) => {
                if let Some((ix, iy)) = optics.detector.pixel_of(p) {
                    acc.add_pixel(ix, iy);
                }
            }
            PathOutcome::Spilled => acc.spill += 1,
            _ => {}
        }
    }
    BatchResult { acc, stats }
}

/// Scene as seen by the instrument at its current stage height: the sample
/// is displaced by `−sample_stage_z` (µm).
pub fn staged_scene(scene: &Scene, instrument: &InstrumentConfig) -> Scene {
    if instrument.sample_stage_z == 0.0 {
        scene.clone()
    } else {
        scene.translated(Vec3::new(0.0, 0.0, -instrument.sample_stage_z * 1e-3))
    }
}

/// Renders one detector image. Rays are split into fixed batches whose
/// streams depend only on `(seed, batch, ray)`; partial images are merged in
/// ascending batch order, so the result does not depend on the number of
/// worker threads.
pub fn render_image(job: &RenderJob) -> Result<(DetectorImage, RenderStats), RenderError> {
    job.validate()?;
    let optics = job.instrument.compile()?;
    let scene = staged_scene(job.scene, job.instrument);
    let started = Instant::now();
    let n_batches = job.n_rays.div_ceil(job.batch_size);
    let mut acc = DetectorAccumulator::new(&optics.detector);
    let mut stats = RenderStats::default();
    let group = (rayon::current_num_threads() as u64 * 4).max(1);
    let mut first = 0;
    while first < n_batches {
        let last = (first + group).min(n_batches);
        let parts: Vec<BatchResult> = (first..last).into_par_iter().map(|b| trace_batch(job, &scene, &optics, b)).collect();
        for p in &parts {
            acc.merge(&p.acc);
            stats.merge(&p.stats);
        }
        first = last;
    }
    let wall = started.elapsed().as_secs_f64();
    stats.wall_time = wall;
    stats.rays_per_second = if wall > 0.0 { job.n_rays as f64 / wall } else { f64::INFINITY };
    let counts = Grid::from_vec(acc.width, acc.height, acc.counts.iter().map(|&c| c as f64).collect());
    let meta = ImageMeta {
        n_rays: job.n_rays,
        seed: job.global_seed,
        batch_size: job.batch_size,
        sample_stage_z: job.instrument.sample_stage_z,
        wall_time: wall,
    };
    Ok((DetectorImage { counts, meta }, stats))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSummary {
    pub mean: Grid,
    /// Per-pixel sample standard deviation over mean; zero where the mean is
    /// zero.
    pub relative_std: Grid,
    /// Mean relative std over pixels brighter than 10% of the brightest mean.
    pub summary: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NoiseError {
    #[error("noise estimation needs at least two images, got {0}")]
    TooFewImages(usize),
    #[error("image {0} has different dimensions from image 0")]
    DimensionMismatch(usize),
}

pub fn estimate_noise(images: &[DetectorImage]) -> Result<NoiseSummary, NoiseError> {
    if images.len() < 2 {
        return Err(NoiseError::TooFewImages(images.len()));
    }
    let first = &images[0].counts;
    if let Some(i) = images.iter().position(|im| !im.counts.same_shape(first)) {
        return Err(NoiseError::DimensionMismatch(i));
    }
    let k = images.len() as f64;
    let (w, h) = (first.width(), first.height());
    let mean = Grid::from_fn(w, h, |x, y| images.iter().map(|im| im.counts.get(x, y)).sum::<f64>() / k);
    let relative_std = Grid::from_fn(w, h, |x, y| {
        let m = mean.get(x, y);
        if m <= 0.0 {
            return 0.0;
        }
        let var = images.iter().map(|im| (im.counts.get(x, y) - m).powi(2)).sum::<f64>() / (k - 1.0);
        var.sqrt() / m
    });
    let threshold = 0.1 * mean.max();
    let (sum, n) = mean
        .data()
        .iter()
        .zip(relative_std.data())
        .filter(|(m, _)| **m > threshold)
        .fold((0.0, 0usize), |(s, n), (_, r)| (s + r, n + 1));
    let summary = if n > 0 { sum / n as f64 } else { 0.0 };
    Ok(NoiseSummary { mean, relative_std, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::{build_default_instrument, Detector, Element, InstrumentParams, LensModel, LightSource, PlaneMirror};
    use crate::scene::{Geometry, SceneObject};

    fn fold_instrument() -> InstrumentConfig {
        // two 45° mirrors fold +z → -x → -z onto a detector the source cannot see
        let m1 = PlaneMirror { center: Vec3::new(0.0, 0.0, 1.0), normal: Vec3::new(1.0, 0.0, 1.0).normalized(), aperture: 0.5 };
        let m2 = PlaneMirror { center: Vec3::new(-1.0, 0.0, 1.0), normal: Vec3::new(1.0, 0.0, -1.0).normalized(), aperture: 0.5 };
        InstrumentConfig {
            source: LightSource { center: Vec3::ZERO, axis: Vec3::Z, radius: 1e-3 },
            elements: vec![Element::Mirror(m1), Element::Mirror(m2)],
            detector: Detector {
                center: Vec3::new(-1.0, 0.0, -3.0),
                axis: Vec3::Z,
                u_axis: Vec3::X,
                v_axis: Vec3::Y,
                side_length: 1.0,
                pixels_x: 10,
                pixels_y: 10,
            },
            na: 0.1,
            magnification: 1.0,
            sample_stage_z: 0.0,
        }
    }

    #[test]
    fn mirror_fold_reaches_mirrored_point() {
        let inst = fold_instrument();
        let optics = inst.compile().unwrap();
        let scene = Scene::default();
        let ray = Ray::new(Vec3::new(0.1, 0.05, 0.0), Vec3::Z);
        let out = trace_path(ray, &scene, &optics, &mut RngStream::from_parts(0, 0, 0), 16);
        let PathOutcome::Detected(p) = out else { panic!("{out:?}") };
        // folds at (0.1, 0.05, 0.9) and (-1.1, 0.05, 0.9), then straight down
        assert!((p - Vec3::new(-1.1, 0.05, -3.0)).length() < 1e-12, "{p:?}");
        let out = trace_path(ray, &scene, &optics, &mut RngStream::from_parts(0, 0, 0), 1);
        assert_eq!(out, PathOutcome::DepthExceeded);
    }

    #[test]
    fn absorber_terminates() {
        let inst = fold_instrument();
        let optics = inst.compile().unwrap();
        let scene = Scene::new(
            vec![SceneObject::new(Geometry::Plane { point: Vec3::new(0.0, 0.0, 0.5), normal: Vec3::Z }, 0)],
            vec![MaterialModel::Absorber],
        )
        .unwrap();
        let ray = Ray::new(Vec3::ZERO, Vec3::Z);
        assert_eq!(trace_path(ray, &scene, &optics, &mut RngStream::from_parts(0, 0, 0), 16), PathOutcome::Absorbed);
    }

    #[test]
    fn fold_render_zero_hits_with_depth_one() {
        let inst = fold_instrument();
        let scene = Scene::default();
        let job = RenderJob { max_depth: 1, ..RenderJob::new(&inst, &scene, 10_000, 3) };
        let (img, stats) = render_image(&job).unwrap();
        assert_eq!(img.total(), 0.0);
        assert!(stats.census_balanced());
        let job = RenderJob { max_depth: 2, ..job };
        let (img, stats) = render_image(&job).unwrap();
        assert!(img.total() > 0.0);
        assert_eq!(img.total() as u64, stats.rays_detected);
    }

    fn plane_scene(g: f64) -> Scene {
        Scene::new(
            vec![SceneObject::new(Geometry::Plane { point: Vec3::ZERO, normal: Vec3::Z }, 0)],
            vec![MaterialModel::HgSurface { g }],
        )
        .unwrap()
    }

    fn small_instrument() -> InstrumentConfig {
        build_default_instrument(&InstrumentParams {
            lens_model: LensModel::Ideal,
            na: 0.4,
            pixels: 16,
            detector_side: 0.16,
            magnification: 10.0,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_rays_rejected() {
        let inst = small_instrument();
        let scene = plane_scene(0.5);
        assert!(matches!(render_image(&RenderJob::new(&inst, &scene, 0, 1)), Err(RenderError::InvalidJob(_))));
    }

    #[test]
    fn worker_count_does_not_change_image() {
        let inst = small_instrument();
        let scene = plane_scene(0.5);
        let job = RenderJob { batch_size: 1000, ..RenderJob::new(&inst, &scene, 20_000, 9) };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| render_image(&job).unwrap())
        };
        let (a, sa) = run(1);
        let (b, sb) = run(4);
        assert_eq!(a.counts, b.counts);
        assert_eq!(sa.rays_detected, sb.rays_detected);
        assert!(sa.census_balanced());
        assert!(sa.rays_detected <= sa.rays_emitted);
        assert!(sa.rays_detected > 0);
    }

    #[test]
    fn seed_changes_pixels_not_expectation() {
        let inst = small_instrument();
        let scene = plane_scene(0.8);
        let (a, sa) = render_image(&RenderJob::new(&inst, &scene, 50_000, 1)).unwrap();
        let (b, sb) = render_image(&RenderJob::new(&inst, &scene, 50_000, 2)).unwrap();
        assert_ne!(a.counts, b.counts);
        let p = sa.rays_detected as f64 / 50_000.0;
        let sigma = (50_000.0 * p * (1.0 - p)).sqrt();
        assert!((sa.rays_detected as f64 - sb.rays_detected as f64).abs() < 5.0 * sigma * 2f64.sqrt());
    }

    fn image(values: Vec<f64>) -> DetectorImage {
        DetectorImage {
            counts: Grid::from_vec(2, 2, values),
            meta: ImageMeta { n_rays: 1, seed: 0, batch_size: 1, sample_stage_z: 0.0, wall_time: 0.0 },
        }
    }

    #[test]
    fn noise_estimation_contract() {
        let a = image(vec![1.0, 2.0, 3.0, 4.0]);
        let n = estimate_noise(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(n.summary, 0.0);
        assert!(matches!(estimate_noise(&[a.clone()]), Err(NoiseError::TooFewImages(1))));
        let odd = DetectorImage { counts: Grid::new(3, 2), ..a.clone() };
        assert!(matches!(estimate_noise(&[a.clone(), odd]), Err(NoiseError::DimensionMismatch(1))));
        let b = image(vec![3.0, 2.0, 3.0, 4.0]);
        let n = estimate_noise(&[a, b]).unwrap();
        // pixel 0: mean 2, sample std √2
        assert!((n.relative_std.get(0, 0) - 2f64.sqrt() / 2.0).abs() < 1e-12);
        assert!((n.summary - 2f64.sqrt() / 2.0 / 4.0).abs() < 1e-12);
    }
}
