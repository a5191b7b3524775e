//! Vertical scanning: one rendered image per focal-plane position.

use crate::instrument::InstrumentConfig;
use crate::render::{render_image, DetectorImage, RenderError, RenderJob, RenderStats, DEFAULT_BATCH_SIZE, DEFAULT_MAX_DEPTH};
use crate::scene::Scene;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// Every image uses the base seed.
    #[default]
    Fixed,
    /// Image `k` uses `seed + k`.
    PerImage,
}

/// Stage positions in µm: `z_start, z_start + Δz, …` up to `z_end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub z_start: f64,
    pub z_end: f64,
    pub delta_z: f64,
    pub rays_per_image: u64,
    #[serde(default)]
    pub seed_policy: SeedPolicy,
    #[serde(default = "default_depth")]
    pub max_depth: u32,
    #[serde(default = "default_batch")]
    pub batch_size: u64,
}

fn default_depth() -> u32 {
    DEFAULT_MAX_DEPTH
}

fn default_batch() -> u64 {
    DEFAULT_BATCH_SIZE
}

#[derive(Debug, thiserror::Error)]
pub enum ScanError {
    #[error("scan.{field}: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("render failed at z = {z} µm: {source}")]
    Render { z: f64, source: RenderError },
}

impl ScanConfig {
    pub fn new(z_start: f64, z_end: f64, delta_z: f64, rays_per_image: u64) -> Self {
        Self {
            z_start,
            z_end,
            delta_z,
            rays_per_image,
            seed_policy: SeedPolicy::Fixed,
            max_depth: DEFAULT_MAX_DEPTH,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }

    fn invalid(field: &'static str, message: impl Into<String>) -> ScanError {
        ScanError::Invalid { field, message: message.into() }
    }

    pub fn validate(&self) -> Result<(), ScanError> {
        if !self.z_start.is_finite() || !self.z_end.is_finite() {
            return Err(Self::invalid("z_start", "range must be finite"));
        }
        if !(self.delta_z > 0.0) || !self.delta_z.is_finite() {
            return Err(Self::invalid("delta_z", "must be positive"));
        }
        if !(self.z_end > self.z_start) {
            return Err(Self::invalid("z_end", "must exceed z_start"));
        }
        if self.image_count() < 3 {
            return Err(Self::invalid("delta_z", format!("range yields {} images, need at least 3", self.image_count())));
        }
        if self.rays_per_image == 0 {
            return Err(Self::invalid("rays_per_image", "must be at least 1"));
        }
        if self.max_depth == 0 {
            return Err(Self::invalid("max_depth", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Self::invalid("batch_size", "must be at least 1"));
        }
        Ok(())
    }

    pub fn image_count(&self) -> usize {
        ((self.z_end - self.z_start) / self.delta_z + 1e-9).floor() as usize + 1
    }

    pub fn z_positions(&self) -> Vec<f64> {
        (0..self.image_count()).map(|k| self.z_start + k as f64 * self.delta_z).collect()
    }

    pub fn seed_for(&self, base: u64, index: usize) -> u64 {
        match self.seed_policy {
            SeedPolicy::Fixed => base,
            SeedPolicy::PerImage => base.wrapping_add(index as u64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    pub images: Vec<DetectorImage>,
    /// Stage positions in µm, increasing.
    pub z_positions: Vec<f64>,
}

impl ImageStack {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// One line per image: `filename z n_rays seed`.
    pub fn manifest(&self, filenames: &[String]) -> String {
        let mut out = String::from("# file z_um n_rays seed\n");
        for ((name, z), im) in filenames.iter().zip(&self.z_positions).zip(&self.images) {
            writeln!(out, "{name} {z} {} {}", im.meta.n_rays, im.meta.seed).unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub file: String,
    pub z: f64,
    pub n_rays: u64,
    pub seed: u64,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, String> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = |what: &str| format!("manifest line {}: {what}", no + 1);
        if f.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        out.push(ManifestEntry {
            file: f[0].to_string(),
            z: f[1].parse().map_err(|_| bad("bad z"))?,
            n_rays: f[2].parse().map_err(|_| bad("bad n_rays"))?,
            seed: f[3].parse().map_err(|_| bad("bad seed"))?,
        });
    }
    Ok(out)
}

/// Render the whole stack. The scan position is written to the
/// instrument's stage offset for each image.
pub fn acquire_stack(instrument: &InstrumentConfig, scene: &Scene, scan: &ScanConfig, seed: u64) -> Result<(ImageStack, Vec<RenderStats>), ScanError> {
    scan.validate()?;
    let z_positions = scan.z_positions();
    let mut images = Vec::with_capacity(z_positions.len());
    let mut stats = Vec::with_capacity(z_positions.len());
    let mut inst = instrument.clone();
    for (k, &z) in z_positions.iter().enumerate() {
        inst.sample_stage_z = z;
        let job = RenderJob {
            max_depth: scan.max_depth,
            batch_size: scan.batch_size,
            ..RenderJob::new(&inst, scene, scan.rays_per_image, scan.seed_for(seed, k))
        };
        let (image, st) = render_image(&job).map_err(|source| ScanError::Render { z, source })?;
        log::debug!("z = {z:.4} µm: {} detected", st.rays_detected);
        images.push(image);
        stats.push(st);
    }
    Ok((ImageStack { images, z_positions }, stats))
}
