//! Experiment harness behind the command-line subcommands: single images,
//! factorial sweeps, virtual measurements and PSF post-processing.

use crate::config::{ConfigError, Mode, RunConfig};
use crate::focus::{compare_topography, reconstruct_topography, FocusError, Profile};
use crate::optics::MaterialModel;
use crate::output::{create_dir, read_image, write_grid_text, write_image, write_json, OutputError, CODE_VERSION};
use crate::psf::{apply_psf, PsfError};
use crate::render::{estimate_noise, render_image, DetectorImage, RenderError, RenderJob, RenderStats};
use crate::scan::{acquire_stack, ScanError};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Scan(#[from] ScanError),
    #[error(transparent)]
    Focus(#[from] FocusError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error(transparent)]
    Psf(#[from] PsfError),
}

impl ExperimentError {
    /// Configuration problems, as opposed to failures during a run.
    pub fn is_validation(&self) -> bool {
        matches!(self, ExperimentError::Config(ConfigError::Invalid { .. } | ConfigError::Parse { .. }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub stats: RenderStats,
    pub census_balanced: bool,
    pub total_counts: f64,
    pub config_sha256: String,
    pub code_version: String,
}

#[derive(Debug, Clone)]
pub struct SingleRun {
    pub image: DetectorImage,
    pub stats: RenderStats,
    pub image_path: PathBuf,
}

fn job<'a>(cfg: &RunConfig, inst: &'a crate::instrument::InstrumentConfig, scene: &'a crate::scene::Scene, n_rays: u64, seed: u64) -> RenderJob<'a> {
    RenderJob { max_depth: cfg.render.max_depth, batch_size: cfg.render.batch_size, ..RenderJob::new(inst, scene, n_rays, seed) }
}

/// Renders one image; writes `image.png`, its sidecar, `counts.txt` and
/// `stats.json` into `out`.
pub fn run_single_image(cfg: &RunConfig, out: &Path) -> Result<SingleRun, ExperimentError> {
    cfg.validate(Mode::Render)?;
    let inst = cfg.build_instrument()?;
    let scene = cfg.build_scene()?;
    let (image, stats) = render_image(&job(cfg, &inst, &scene, cfg.render.n_rays, cfg.render.seed))?;
    create_dir(out)?;
    let hash = cfg.hash();
    let image_path = out.join("image.png");
    write_image(&image_path, &image, &hash)?;
    write_grid_text(&out.join("counts.txt"), &image.counts)?;
    let report = StatsReport {
        census_balanced: stats.census_balanced(),
        total_counts: image.total(),
        stats: stats.clone(),
        config_sha256: hash,
        code_version: CODE_VERSION.into(),
    };
    write_json(&out.join("stats.json"), &report)?;
    log::info!("{} rays, {} detected, {:.3e} rays/s", stats.rays_emitted, stats.rays_detected, stats.rays_per_second);
    Ok(SingleRun { image, stats, image_path })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub n_rays: u64,
    pub g: f64,
    pub noise_summary: Option<f64>,
    pub total_counts: Option<f64>,
    pub image: Option<PathBuf>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
    pub warnings: Vec<String>,
    pub config_sha256: String,
    pub code_version: String,
}

impl SweepReport {
    pub fn cell(&self, n_rays: u64, g: f64) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.n_rays == n_rays && c.g == g)
    }
}

/// Flags every g whose noise does not strictly fall with the ray count.
pub fn noise_trend_warnings(cells: &[SweepCell]) -> Vec<String> {
    let mut gs: Vec<f64> = cells.iter().map(|c| c.g).collect();
    gs.sort_by(f64::total_cmp);
    gs.dedup();
    let mut warnings = Vec::new();
    for g in gs {
        let mut row: Vec<(u64, f64)> = cells.iter().filter(|c| c.g == g).filter_map(|c| c.noise_summary.map(|s| (c.n_rays, s))).collect();
        row.sort_by_key(|r| r.0);
        for w in row.windows(2) {
            if !(w[1].1 < w[0].1) {
                warnings.push(format!(
                    "g = {g}: noise does not decrease from {} rays ({:.4}) to {} rays ({:.4})",
                    w[0].0, w[0].1, w[1].0, w[1].1
                ));
            }
        }
    }
    warnings
}

/// One cell per (N_rays, g); `repeats` renders with seeds `seed, seed+1, …`
/// feed the noise estimate and the first is written as the cell image.
pub fn run_sweep(cfg: &RunConfig, out: &Path) -> Result<SweepReport, ExperimentError> {
    cfg.validate(Mode::Sweep)?;
    let sweep = cfg.sweep.as_ref().expect("validated");
    let inst = cfg.build_instrument()?;
    create_dir(out)?;
    let hash = cfg.hash();
    let mut cells = Vec::new();
    for &g in &sweep.g {
        let mut materials = cfg.materials.clone();
        materials[sweep.material] = MaterialModel::HgSurface { g };
        let scene = cfg.build_scene_with(&materials);
        for &n in &sweep.n_rays {
            let mut cell = SweepCell { n_rays: n, g, noise_summary: None, total_counts: None, image: None, error: None };
            let result = scene.as_ref().map_err(|e| e.to_string()).and_then(|scene| {
                let mut images = Vec::with_capacity(sweep.repeats);
                for r in 0..sweep.repeats {
                    let (im, _) = render_image(&job(cfg, &inst, scene, n, cfg.render.seed.wrapping_add(r as u64))).map_err(|e| e.to_string())?;
                    images.push(im);
                }
                let path = out.join(format!("n{n}_g{g}.png"));
                write_image(&path, &images[0], &hash).map_err(|e| e.to_string())?;
                let noise = estimate_noise(&images).map_err(|e| e.to_string())?;
                Ok((images[0].total(), noise.summary, path))
            });
            match result {
                Ok((total, noise, path)) => {
                    cell.total_counts = Some(total);
                    cell.noise_summary = Some(noise);
                    cell.image = Some(path);
                }
                Err(e) => {
                    log::error!("sweep cell n_rays={n}, g={g} failed: {e}");
                    cell.error = Some(e);
                }
            }
            cells.push(cell);
        }
    }
    let warnings = noise_trend_warnings(&cells);
    for w in &warnings {
        log::warn!("{w}");
    }
    let report = SweepReport { cells, warnings, config_sha256: hash, code_version: CODE_VERSION.into() };
    write_json(&out.join("sweep_report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub rms_deviation: f64,
    pub max_deviation: f64,
    pub piston: f64,
    pub valid_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub images: usize,
    pub z_positions: Vec<f64>,
    pub valid_pixels: usize,
    pub pixel_size_um: f64,
    pub comparison: Option<ComparisonSummary>,
    pub notice: Option<String>,
    pub config_sha256: String,
    pub code_version: String,
}

fn write_profile(path: &Path, p: &Profile) -> Result<(), OutputError> {
    let mut text = String::from("position_um,measured_um,reference_um\n");
    for ((x, m), r) in p.position.iter().zip(&p.measured).zip(&p.reference) {
        text.push_str(&format!("{x},{m},{r}\n"));
    }
    std::fs::write(path, text).map_err(|source| OutputError::Io { path: path.to_path_buf(), source })
}

/// Acquires the stack, reconstructs the topography and, when a reference
/// is configured, compares against it. Writes the stack (`stack/`), its
/// manifest, `topography.txt`, `valid.txt`, profiles and `measure_report.json`.
pub fn run_measurement(cfg: &RunConfig, out: &Path) -> Result<MeasureReport, ExperimentError> {
    cfg.validate(Mode::Measure)?;
    let scan = cfg.scan.as_ref().expect("validated");
    let inst = cfg.build_instrument()?;
    let scene = cfg.build_scene()?;
    let reference = cfg.reference_heightfield()?;
    let (stack, _stats) = acquire_stack(&inst, &scene, scan, cfg.render.seed)?;

    let hash = cfg.hash();
    let stack_dir = out.join("stack");
    create_dir(&stack_dir)?;
    let mut names = Vec::with_capacity(stack.len());
    for (k, im) in stack.images.iter().enumerate() {
        let name = format!("img_{k:04}.png");
        write_image(&stack_dir.join(&name), im, &hash)?;
        names.push(name);
    }
    let manifest = stack_dir.join("manifest.txt");
    std::fs::write(&manifest, stack.manifest(&names)).map_err(|source| OutputError::Io { path: manifest, source })?;

    let dx = inst.object_pixel() * 1e3;
    let topo = reconstruct_topography(&stack, &cfg.reconstruction, dx)?;
    topo.to_heightfield().save(out.join("topography.txt")).map_err(|e| OutputError::Format { path: out.join("topography.txt"), message: e.to_string() })?;
    let mask = crate::grid::Grid::from_vec(topo.width(), topo.height(), topo.valid.iter().map(|&v| v as u8 as f64).collect());
    write_grid_text(&out.join("valid.txt"), &mask)?;

    let (comparison, notice) = match &reference {
        Some(r) => match compare_topography(&topo, r) {
            Ok(c) => {
                write_profile(&out.join("profile_row.csv"), &c.row_profile(topo.height() / 2, dx))?;
                write_profile(&out.join("profile_column.csv"), &c.column_profile(topo.width() / 2, dx))?;
                (
                    Some(ComparisonSummary {
                        rms_deviation: c.rms_deviation,
                        max_deviation: c.max_deviation,
                        piston: c.piston,
                        valid_pixels: c.valid_pixels,
                    }),
                    None,
                )
            }
            Err(e) => (None, Some(format!("comparison skipped: {e}"))),
        },
        None => (None, Some("no reference heightfield configured; comparison skipped".to_string())),
    };
    if let Some(n) = &notice {
        log::warn!("{n}");
    }
    let report = MeasureReport {
        images: stack.len(),
        z_positions: stack.z_positions.clone(),
        valid_pixels: topo.valid_count(),
        pixel_size_um: dx,
        comparison,
        notice,
        config_sha256: hash,
        code_version: CODE_VERSION.into(),
    };
    write_json(&out.join("measure_report.json"), &report)?;
    Ok(report)
}

/// Applies the configured PSF to the configured input image and writes
/// `psf.png` with its sidecar.
pub fn run_psf(cfg: &RunConfig, out: &Path) -> Result<DetectorImage, ExperimentError> {
    cfg.validate(Mode::Psf)?;
    let psf = cfg.psf_model()?;
    let input = cfg.psf.as_ref().and_then(|p| p.input.as_ref()).expect("validated");
    let (image, sidecar) = read_image(input)?;
    let blurred = apply_psf(&image, &psf)?;
    create_dir(out)?;
    write_image(&out.join("psf.png"), &blurred, &sidecar.config_sha256)?;
    write_grid_text(&out.join("psf_counts.txt"), &blurred.counts)?;
    Ok(blurred)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(n: u64, g: f64, s: Option<f64>) -> SweepCell {
        SweepCell { n_rays: n, g, noise_summary: s, total_counts: None, image: None, error: None }
    }

    #[test]
    fn trend_warnings() {
        let cells = vec![cell(10, 0.3, Some(0.5)), cell(100, 0.3, Some(0.2)), cell(10, 1.0, Some(0.4)), cell(100, 1.0, Some(0.45))];
        let w = noise_trend_warnings(&cells);
        assert_eq!(w.len(), 1);
        assert!(w[0].starts_with("g = 1"));
        assert!(noise_trend_warnings(&[cell(10, 0.3, None), cell(100, 0.3, Some(0.1))]).is_empty());
    }
}
