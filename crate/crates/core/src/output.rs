//! Artifact export: 16-bit PNG detector images with JSON sidecars, raw
//! count grids, topographies and reports.

use crate::grid::Grid;
use crate::render::{DetectorImage, ImageMeta};
use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

/// Provenance and raw scale of an exported image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub raw_max: f64,
    pub width: usize,
    pub height: usize,
    pub n_rays: u64,
    pub seed: u64,
    pub batch_size: u64,
    /// Stage position, µm.
    pub z: f64,
    pub config_sha256: String,
    pub code_version: String,
}

pub fn sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("json")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io { path: path.to_path_buf(), source }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), OutputError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| OutputError::Json { path: path.to_path_buf(), source })?;
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, OutputError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| OutputError::Json { path: path.to_path_buf(), source })
}

/// Linear map of `[0, max]` onto `[0, 65535]`.
pub fn normalize_u16(counts: &Grid) -> (Vec<u16>, f64) {
    let max = counts.max().max(0.0);
    let px = counts
        .data()
        .iter()
        .map(|&v| if max > 0.0 { (v.max(0.0) / max * 65535.0).round() as u16 } else { 0 })
        .collect();
    (px, max)
}

pub fn denormalize_u16(px: &[u16], raw_max: f64) -> Vec<f64> {
    px.iter().map(|&v| v as f64 / 65535.0 * raw_max).collect()
}

/// Writes `<path>` (16-bit grayscale PNG) and its sidecar `<path>.json`.
pub fn write_image(path: &Path, image: &DetectorImage, config_sha256: &str) -> Result<Sidecar, OutputError> {
    let (px, raw_max) = normalize_u16(&image.counts);
    let (w, h) = (image.width(), image.height());
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(w as u32, h as u32, px).expect("buffer matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|source| OutputError::Image { path: path.to_path_buf(), source })?;
    let meta = &image.meta;
    let sidecar = Sidecar {
        raw_max,
        width: w,
        height: h,
        n_rays: meta.n_rays,
        seed: meta.seed,
        batch_size: meta.batch_size,
        z: meta.sample_stage_z,
        config_sha256: config_sha256.to_string(),
        code_version: CODE_VERSION.to_string(),
    };
    write_json(&sidecar_path(path), &sidecar)?;
    Ok(sidecar)
}

/// Reads a PNG and its sidecar back into raw counts. Integer counts up to
/// 65535 are recovered exactly after rounding.
pub fn read_image(path: &Path) -> Result<(DetectorImage, Sidecar), OutputError> {
    let sidecar: Sidecar = read_json(&sidecar_path(path))?;
    let img = image::open(path).map_err(|source| OutputError::Image { path: path.to_path_buf(), source })?.into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    if (w, h) != (sidecar.width, sidecar.height) {
        return Err(OutputError::Format { path: path.to_path_buf(), message: "image and sidecar sizes differ".into() });
    }
    let counts = Grid::from_vec(w, h, denormalize_u16(img.as_raw(), sidecar.raw_max));
    let meta = ImageMeta { n_rays: sidecar.n_rays, seed: sidecar.seed, batch_size: sidecar.batch_size, sample_stage_z: sidecar.z, wall_time: 0.0 };
    Ok((DetectorImage { counts, meta }, sidecar))
}

/// Whitespace-separated rows, one text line per image row.
pub fn write_grid_text(path: &Path, g: &Grid) -> Result<(), OutputError> {
    let mut out = String::with_capacity(g.len() * 8);
    for y in 0..g.height() {
        let row: Vec<String> = g.row(y).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(io_err(path))
}

pub fn create_dir(dir: &Path) -> Result<(), OutputError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}
