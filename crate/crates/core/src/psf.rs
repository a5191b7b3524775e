//! Optional detector post-processing with a point spread function.

use crate::grid::{gaussian_kernel_1d, Grid};
use crate::render::DetectorImage;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum PsfError {
    #[error("gaussian sigma must be positive and finite, got {0}")]
    Sigma(f64),
    #[error("kernel entry ({x}, {y}) = {value} is negative or not finite")]
    BadEntry { x: usize, y: usize, value: f64 },
    #[error("kernel sums to zero")]
    ZeroSum,
    #[error("kernel dimensions must be odd, got {0}×{1}")]
    EvenSize(usize, usize),
    #[error("kernel file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("kernel file {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Psf {
    /// Isotropic Gaussian with σ in pixels.
    Gaussian { sigma: f64 },
    /// Explicit kernel, centred on its middle entry.
    Kernel(Grid),
}

impl Psf {
    pub fn validate(&self) -> Result<(), PsfError> {
        match self {
            Psf::Gaussian { sigma } if !(*sigma > 0.0 && sigma.is_finite()) => Err(PsfError::Sigma(*sigma)),
            Psf::Gaussian { .. } => Ok(()),
            Psf::Kernel(k) => {
                if k.width() % 2 == 0 || k.height() % 2 == 0 {
                    return Err(PsfError::EvenSize(k.width(), k.height()));
                }
                for y in 0..k.height() {
                    for x in 0..k.width() {
                        let value = k.get(x, y);
                        if !(value >= 0.0 && value.is_finite()) {
                            return Err(PsfError::BadEntry { x, y, value });
                        }
                    }
                }
                if k.sum() <= 0.0 {
                    return Err(PsfError::ZeroSum);
                }
                Ok(())
            }
        }
    }

    pub fn load(path: &Path) -> Result<Psf, PsfError> {
        let text = std::fs::read_to_string(path).map_err(|source| PsfError::Io { path: path.display().to_string(), source })?;
        let k = parse_kernel(&text)?;
        let psf = Psf::Kernel(k);
        psf.validate()?;
        Ok(psf)
    }
}

/// Whitespace-separated rows of numbers; blank lines and `#` comments skipped.
pub fn parse_kernel(text: &str) -> Result<Grid, PsfError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| PsfError::Parse { line: no + 1, message: format!("bad number {t:?}") }))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(PsfError::Parse { line: no + 1, message: format!("expected {} values, got {}", first.len(), row.len()) });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(PsfError::Parse { line: 0, message: "empty kernel".into() });
    }
    let w = rows[0].len();
    Ok(Grid::from_vec(w, rows.len(), rows.concat()))
}

/// Spread every pixel by the kernel; contributions that would leave the
/// detector are clamped onto the nearest edge pixel, so the total is kept.
pub fn spread(g: &Grid, kernel: &Grid) -> Grid {
    let (w, h) = (g.width() as isize, g.height() as isize);
    let (rx, ry) = (kernel.width() as isize / 2, kernel.height() as isize / 2);
    let mut out = Grid::new(g.width(), g.height());
    for y in 0..h {
        for x in 0..w {
            let v = g.get(x as usize, y as usize);
            if v == 0.0 {
                continue;
            }
            for ky in 0..kernel.height() {
                let ty = (y + ky as isize - ry).clamp(0, h - 1) as usize;
                for kx in 0..kernel.width() {
                    let tx = (x + kx as isize - rx).clamp(0, w - 1) as usize;
                    out.add(tx, ty, v * kernel.get(kx, ky));
                }
            }
        }
    }
    out
}

/// Blur the raw counts with the unit-sum-normalised PSF.
pub fn apply_psf(image: &DetectorImage, psf: &Psf) -> Result<DetectorImage, PsfError> {
    psf.validate()?;
    let counts = match psf {
        Psf::Gaussian { sigma } => {
            let k = gaussian_kernel_1d(*sigma);
            let n = k.len();
            let row = Grid::from_vec(n, 1, k.clone());
            let col = Grid::from_vec(1, n, k);
            spread(&spread(&image.counts, &row), &col)
        }
        Psf::Kernel(k) => {
            let s = k.sum();
            spread(&image.counts, &k.map(|v| v / s))
        }
    };
    Ok(DetectorImage { counts, meta: image.meta.clone() })
}
