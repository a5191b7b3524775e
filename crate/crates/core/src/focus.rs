//! Shape from focus: per-pixel focus metrics over an image stack, sub-step
//! peak localisation, and comparison of reconstructed topographies against
//! reference heightfields.

use crate::grid::{gaussian_kernel_1d, Grid};
use crate::scan::ImageStack;
use crate::scene::Heightfield;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FocusError {
    #[error("focus window must be odd and at least 3, got {0}")]
    BadWindow(usize),
    #[error("focus window {window} is larger than the {width}×{height} image")]
    WindowTooLarge { window: usize, width: usize, height: usize },
    #[error("stack needs at least 3 images, got {0}")]
    TooFewImages(usize),
    #[error("stack z positions must be strictly increasing")]
    NotIncreasing,
    #[error("stack images differ in size")]
    ShapeMismatch,
    #[error("no valid pixels to compare")]
    NoValidPixels,
}

/// Per-pixel sharpness measure of one image.
pub trait FocusMetric: Sync {
    fn evaluate(&self, image: &Grid) -> Result<Grid, FocusError>;
}

/// Sum-modified-Laplacian accumulated over a square window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SumModifiedLaplacian {
    pub window: usize,
}

impl FocusMetric for SumModifiedLaplacian {
    fn evaluate(&self, image: &Grid) -> Result<Grid, FocusError> {
        focus_metric(image, self.window)
    }
}

/// Local grey-level variance over a square window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalVariance {
    pub window: usize,
}

impl FocusMetric for LocalVariance {
    fn evaluate(&self, image: &Grid) -> Result<Grid, FocusError> {
        check_window(image, self.window)?;
        let r = (self.window / 2) as isize;
        let n = (self.window * self.window) as f64;
        Ok(Grid::from_fn(image.width(), image.height(), |x, y| {
            let (mut s, mut s2) = (0.0, 0.0);
            for dy in -r..=r {
                for dx in -r..=r {
                    let v = image.get_clamped(x as isize + dx, y as isize + dy);
                    s += v;
                    s2 += v * v;
                }
            }
            (s2 / n - (s / n).powi(2)).max(0.0)
        }))
    }
}

fn check_window(image: &Grid, window: usize) -> Result<(), FocusError> {
    if window < 3 || window % 2 == 0 {
        return Err(FocusError::BadWindow(window));
    }
    if window > image.width() || window > image.height() {
        return Err(FocusError::WindowTooLarge { window, width: image.width(), height: image.height() });
    }
    Ok(())
}

/// Modified Laplacian `|2I − I(x−1) − I(x+1)| + |2I − I(y−1) − I(y+1)|`,
/// edges replicated.
pub fn modified_laplacian(image: &Grid) -> Grid {
    Grid::from_fn(image.width(), image.height(), |x, y| {
        let (x, y) = (x as isize, y as isize);
        let c = 2.0 * image.get_clamped(x, y);
        (c - image.get_clamped(x - 1, y) - image.get_clamped(x + 1, y)).abs()
            + (c - image.get_clamped(x, y - 1) - image.get_clamped(x, y + 1)).abs()
    })
}

/// Sum-modified-Laplacian over a `window × window` neighbourhood with edge
/// replication.
pub fn focus_metric(image: &Grid, window: usize) -> Result<Grid, FocusError> {
    check_window(image, window)?;
    let ml = modified_laplacian(image);
    let ones = vec![1.0; window];
    Ok(crate::grid::convolve_separable(&ml, &ones, &ones))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructionParams {
    /// Focus-metric window (odd).
    pub window: usize,
    /// Relative peak prominence `(max − min)/max` below which a pixel is
    /// marked invalid.
    pub prominence: f64,
    /// Standard deviation, in stack steps, of an optional Gaussian applied
    /// to each focus curve before peak search; zero disables it.
    pub curve_smoothing: f64,
}

impl Default for ReconstructionParams {
    fn default() -> Self {
        Self { window: 5, prominence: 0.1, curve_smoothing: 0.0 }
    }
}

/// Reconstructed heights (µm) on the detector pixel grid with a validity
/// mask. Pixel `(i, j)` sits at the centred lateral position
/// `((i − (nx−1)/2)·dx, (j − (ny−1)/2)·dx)` in µm.
#[derive(Debug, Clone, PartialEq)]
pub struct Topography {
    pub heights: Grid,
    pub valid: Vec<bool>,
    /// Lateral pixel size on the sample, µm.
    pub dx: f64,
    pub z_range: (f64, f64),
}

impl Topography {
    pub fn width(&self) -> usize {
        self.heights.width()
    }

    pub fn height(&self) -> usize {
        self.heights.height()
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width() + x]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn x(&self, i: usize) -> f64 {
        (i as f64 - 0.5 * (self.width() - 1) as f64) * self.dx
    }

    pub fn y(&self, j: usize) -> f64 {
        (j as f64 - 0.5 * (self.height() - 1) as f64) * self.dx
    }

    pub fn valid_heights(&self) -> Vec<f64> {
        self.heights.data().iter().zip(&self.valid).filter(|(_, &v)| v).map(|(&h, _)| h).collect()
    }

    /// Heightfield export; invalid pixels are filled with the median valid
    /// height.
    pub fn to_heightfield(&self) -> Heightfield {
        let fill = median(&self.valid_heights()).unwrap_or(0.0);
        let data = self.heights.data().iter().zip(&self.valid).map(|(&h, &v)| if v { h } else { fill }).collect();
        Heightfield::new(self.dx, self.dx, Grid::from_vec(self.width(), self.height(), data)).expect("topography grid is valid")
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Vertex of the parabola through three points.
pub fn parabola_vertex(z: [f64; 3], f: [f64; 3]) -> f64 {
    let (d1, d2) = (z[1] - z[0], z[2] - z[1]);
    let s1 = (f[1] - f[0]) / d1;
    let s2 = (f[2] - f[1]) / d2;
    let curvature = (s2 - s1) / (z[2] - z[0]);
    if curvature == 0.0 {
        return z[1];
    }
    // derivative of the interpolant vanishes at the vertex
    0.5 * (z[0] + z[1]) - s1 / (2.0 * curvature)
}

fn smooth_curve(curve: &[f64], kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let n = curve.len() as isize;
    (0..n)
        .map(|i| kernel.iter().enumerate().map(|(k, w)| w * curve[(i + k as isize - r).clamp(0, n - 1) as usize]).sum())
        .collect()
}

/// Peak height of one focus curve, or `None` when the peak lies on the
/// stack boundary or is not prominent enough.
pub fn locate_peak(curve: &[f64], z: &[f64], prominence: f64) -> Option<f64> {
    let (mut best, mut lo) = (0usize, f64::INFINITY);
    for (i, &v) in curve.iter().enumerate() {
        if v > curve[best] {
            best = i;
        }
        lo = lo.min(v);
    }
    let peak = curve[best];
    if best == 0 || best + 1 == curve.len() || !(peak > 0.0) || (peak - lo) / peak < prominence {
        return None;
    }
    let zz = [z[best - 1], z[best], z[best + 1]];
    Some(parabola_vertex(zz, [curve[best - 1], peak, curve[best + 1]]).clamp(zz[0], zz[2]))
}

/// Reconstruction from precomputed focus-metric maps, one per z.
pub fn reconstruct_from_metrics(metrics: &[Grid], z: &[f64], params: &ReconstructionParams, dx: f64) -> Result<Topography, FocusError> {
    if metrics.len() < 3 {
        return Err(FocusError::TooFewImages(metrics.len()));
    }
    if z.windows(2).any(|w| !(w[1] > w[0])) || z.len() != metrics.len() {
        return Err(FocusError::NotIncreasing);
    }
    if metrics.iter().any(|m| !m.same_shape(&metrics[0])) {
        return Err(FocusError::ShapeMismatch);
    }
    let (w, h) = (metrics[0].width(), metrics[0].height());
    let kernel = (params.curve_smoothing > 0.0).then(|| gaussian_kernel_1d(params.curve_smoothing));
    let peaks: Vec<Option<f64>> = (0..w * h)
        .into_par_iter()
        .map(|k| {
            let curve: Vec<f64> = metrics.iter().map(|m| m.data()[k]).collect();
            let curve = match &kernel {
                Some(kern) => smooth_curve(&curve, kern),
                None => curve,
            };
            locate_peak(&curve, z, params.prominence)
        })
        .collect();
    let heights = Grid::from_vec(w, h, peaks.iter().map(|p| p.unwrap_or(f64::NAN)).collect());
    let valid = peaks.iter().map(Option::is_some).collect();
    Ok(Topography { heights, valid, dx, z_range: (z[0], z[z.len() - 1]) })
}

/// Shape-from-focus reconstruction with the sum-modified-Laplacian metric.
pub fn reconstruct_topography(stack: &ImageStack, params: &ReconstructionParams, dx: f64) -> Result<Topography, FocusError> {
    reconstruct_with(stack, &SumModifiedLaplacian { window: params.window }, params, dx)
}

pub fn reconstruct_with(stack: &ImageStack, metric: &dyn FocusMetric, params: &ReconstructionParams, dx: f64) -> Result<Topography, FocusError> {
    if stack.images.len() < 3 {
        return Err(FocusError::TooFewImages(stack.images.len()));
    }
    let metrics = stack.images.iter().map(|im| metric.evaluate(&im.counts)).collect::<Result<Vec<_>, _>>()?;
    reconstruct_from_metrics(&metrics, &stack.z_positions, params, dx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rms_deviation: f64,
    pub max_deviation: f64,
    /// Mean of measured − reference over valid pixels, removed before the
    /// statistics.
    pub piston: f64,
    pub valid_pixels: usize,
    /// Piston-corrected measured heights; NaN where invalid.
    pub measured: Grid,
    /// Reference resampled onto the measured grid.
    pub reference: Grid,
}

/// Matching row or column of measured and reference heights.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub position: Vec<f64>,
    pub measured: Vec<f64>,
    pub reference: Vec<f64>,
}

impl Comparison {
    pub fn row_profile(&self, y: usize, dx: f64) -> Profile {
        let w = self.measured.width();
        Profile {
            position: (0..w).map(|i| (i as f64 - 0.5 * (w - 1) as f64) * dx).collect(),
            measured: self.measured.row(y).to_vec(),
            reference: self.reference.row(y).to_vec(),
        }
    }

    pub fn column_profile(&self, x: usize, dx: f64) -> Profile {
        let h = self.measured.height();
        Profile {
            position: (0..h).map(|j| (j as f64 - 0.5 * (h - 1) as f64) * dx).collect(),
            measured: self.measured.column(x),
            reference: self.reference.column(x),
        }
    }
}

/// RMS and maximum deviation after piston removal, over valid pixels.
pub fn compare_topography(measured: &Topography, reference: &Heightfield) -> Result<Comparison, FocusError> {
    let (w, h) = (measured.width(), measured.height());
    let reference = Grid::from_fn(w, h, |i, j| reference.sample(measured.x(i), measured.y(j)));
    let diffs: Vec<f64> = (0..w * h)
        .filter(|&k| measured.valid[k])
        .map(|k| measured.heights.data()[k] - reference.data()[k])
        .collect();
    if diffs.is_empty() {
        return Err(FocusError::NoValidPixels);
    }
    let piston = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let rms = (diffs.iter().map(|d| (d - piston).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
    let max = diffs.iter().map(|d| (d - piston).abs()).fold(0.0, f64::max);
    let corrected = Grid::from_fn(w, h, |i, j| if measured.is_valid(i, j) { measured.heights.get(i, j) - piston } else { f64::NAN });
    Ok(Comparison { rms_deviation: rms, max_deviation: max, piston, valid_pixels: diffs.len(), measured: corrected, reference })
}

/// Least-squares plane `z = a + b·x + c·y` through the valid pixels.
pub fn fit_plane(t: &Topography) -> Option<[f64; 3]> {
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for j in 0..t.height() {
        for i in 0..t.width() {
            if !t.is_valid(i, j) {
                continue;
            }
            let row = [1.0, t.x(i), t.y(j)];
            let z = t.heights.get(i, j);
            for r in 0..3 {
                atb[r] += row[r] * z;
                for c in 0..3 {
                    ata[r][c] += row[r] * row[c];
                }
            }
        }
    }
    solve3(ata, atb)
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..3 {
            let f = a[r][col] / a[col][col];
            for c in col..3 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        x[r] = (b[r] - (r + 1..3).map(|c| a[r][c] * x[c]).sum::<f64>()) / a[r][r];
    }
    Some(x)
}

/// RMS residual of the valid pixels from their least-squares plane.
pub fn plane_residual_rms(t: &Topography) -> Option<f64> {
    let [a, b, c] = fit_plane(t)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for j in 0..t.height() {
        for i in 0..t.width() {
            if t.is_valid(i, j) {
                sum += (t.heights.get(i, j) - (a + b * t.x(i) + c * t.y(j))).powi(2);
                n += 1;
            }
        }
    }
    Some((sum / n as f64).sqrt())
}
