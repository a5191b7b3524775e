//! Regular-grid heightfields in micrometres: procedural test surfaces,
//! seeded micro-roughness, triangulation and the plain-text grid format.
//!
//! Grids are centred on the optical axis: node `(i, j)` sits at
//! `x = (i − (nx − 1)/2)·dx`, `y = (j − (ny − 1)/2)·dy`.

use super::mesh::TriangleMesh;
use crate::geometry::Vec3;
use crate::grid::{convolve_separable, gaussian_kernel_1d, Grid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

/// µm → mm.
pub const UM_TO_MM: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum HeightfieldError {
    #[error("grid must be at least 2×2, got {0}×{1}")]
    TooSmall(usize, usize),
    #[error("grid spacing must be positive, got dx={0}, dy={1}")]
    Spacing(f64, f64),
    #[error("height at node ({0}, {1}) is not finite")]
    NonFinite(usize, usize),
    #[error("surface parameter `{name}` must be positive, got {value}")]
    Parameter { name: &'static str, value: f64 },
    #[error("invalid surface parameter: {0}")]
    Invalid(String),
    #[error("heightfield text line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("heightfield I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heightfield {
    pub dx: f64,
    pub dy: f64,
    /// Heights in µm, `nx × ny`.
    pub heights: Grid,
}

/// Grid geometry for generated surfaces (µm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
}

impl GridSpec {
    pub fn square(n: usize, spacing: f64) -> Self {
        Self { nx: n, ny: n, dx: spacing, dy: spacing }
    }

    pub fn validate(&self) -> Result<(), HeightfieldError> {
        if self.nx < 2 || self.ny < 2 {
            return Err(HeightfieldError::TooSmall(self.nx, self.ny));
        }
        if !(self.dx > 0.0 && self.dy > 0.0) {
            return Err(HeightfieldError::Spacing(self.dx, self.dy));
        }
        Ok(())
    }

    pub fn x(&self, i: usize) -> f64 {
        (i as f64 - 0.5 * (self.nx - 1) as f64) * self.dx
    }

    pub fn y(&self, j: usize) -> f64 {
        (j as f64 - 0.5 * (self.ny - 1) as f64) * self.dy
    }
}

impl Heightfield {
    pub fn new(dx: f64, dy: f64, heights: Grid) -> Result<Self, HeightfieldError> {
        let spec = GridSpec { nx: heights.width(), ny: heights.height(), dx, dy };
        spec.validate()?;
        if let Some(k) = heights.data().iter().position(|h| !h.is_finite()) {
            return Err(HeightfieldError::NonFinite(k % spec.nx, k / spec.nx));
        }
        Ok(Self { dx, dy, heights })
    }

    pub fn nx(&self) -> usize {
        self.heights.width()
    }

    pub fn ny(&self) -> usize {
        self.heights.height()
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec { nx: self.nx(), ny: self.ny(), dx: self.dx, dy: self.dy }
    }

    pub fn height(&self, i: usize, j: usize) -> f64 {
        self.heights.get(i, j)
    }

    /// Bilinear interpolation at lateral position `(x, y)` in µm; positions
    /// outside the grid are clamped to the border.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let spec = self.spec();
        let fx = (x / self.dx + 0.5 * (spec.nx - 1) as f64).clamp(0.0, (spec.nx - 1) as f64);
        let fy = (y / self.dy + 0.5 * (spec.ny - 1) as f64).clamp(0.0, (spec.ny - 1) as f64);
        let i0 = (fx.floor() as usize).min(spec.nx - 2);
        let j0 = (fy.floor() as usize).min(spec.ny - 2);
        let (tx, ty) = (fx - i0 as f64, fy - j0 as f64);
        let h = |i, j| self.heights.get(i, j);
        (1.0 - ty) * ((1.0 - tx) * h(i0, j0) + tx * h(i0 + 1, j0))
            + ty * ((1.0 - tx) * h(i0, j0 + 1) + tx * h(i0 + 1, j0 + 1))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {} {} {}\n", self.nx(), self.ny(), self.dx, self.dy);
        for j in 0..self.ny() {
            let row: Vec<String> = self.heights.row(j).iter().map(|h| format!("{h}")).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, HeightfieldError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (hl, header) = lines.next().ok_or(HeightfieldError::Parse { line: 1, message: "empty file".into() })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let bad = |message: String| HeightfieldError::Parse { line: hl + 1, message };
        if fields.len() != 4 {
            return Err(bad(format!("header must be `nx ny dx dy`, got {} fields", fields.len())));
        }
        let nx: usize = fields[0].parse().map_err(|_| bad(format!("bad nx '{}'", fields[0])))?;
        let ny: usize = fields[1].parse().map_err(|_| bad(format!("bad ny '{}'", fields[1])))?;
        let dx: f64 = fields[2].parse().map_err(|_| bad(format!("bad dx '{}'", fields[2])))?;
        let dy: f64 = fields[3].parse().map_err(|_| bad(format!("bad dy '{}'", fields[3])))?;
        let mut values = Vec::with_capacity(nx * ny);
        for (ln, line) in lines {
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| HeightfieldError::Parse { line: ln + 1, message: format!("bad height '{tok}'") })?;
                values.push(v);
            }
        }
        if values.len() != nx * ny {
            return Err(HeightfieldError::Parse {
                line: text.lines().count(),
                message: format!("expected {} heights, found {}", nx * ny, values.len()),
            });
        }
        if nx < 2 || ny < 2 {
            return Err(HeightfieldError::TooSmall(nx, ny));
        }
        Heightfield::new(dx, dy, Grid::from_vec(nx, ny, values))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HeightfieldError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HeightfieldError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Procedural test structures. All lengths and heights in µm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurfaceKind {
    Plane { height: f64 },
    InclinedPlane { height: f64, slope_x: f64, slope_y: f64 },
    /// `base` for `x < edge_x`, `base + step_height` otherwise.
    Step { base: f64, step_height: f64, edge_x: f64 },
    /// Spherical cap of curvature `radius` with its apex on the axis.
    SphereCap { radius: f64, apex: f64 },
    /// `offset + amplitude·sin(2πx/wavelength)`.
    Sinusoid { amplitude: f64, wavelength: f64, offset: f64 },
    /// Linear chirp: local wavelength sweeps from `wavelength_start` at the
    /// left grid edge to `wavelength_end` at the right edge. With
    /// `u = x − x_min` and `L` the grid width, the phase is
    /// `2π(u/λ₀ + (1/λ₁ − 1/λ₀)·u²/(2L))`.
    Chirp { amplitude: f64, wavelength_start: f64, wavelength_end: f64, offset: f64 },
    /// Raised letter-like strokes at several levels, overlaid with a seeded
    /// irregular faceted structure: cones around jittered seed points spaced
    /// `irregular_correlation` apart, scaled to the given RMS amplitude.
    Plateau { levels: Vec<f64>, irregular_amplitude: f64, irregular_correlation: f64, seed: u64 },
}

fn positive(name: &'static str, value: f64) -> Result<(), HeightfieldError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(HeightfieldError::Parameter { name, value })
    }
}

pub fn generate_surface(kind: &SurfaceKind, grid: GridSpec) -> Result<Heightfield, HeightfieldError> {
    grid.validate()?;
    let width = (grid.nx - 1) as f64 * grid.dx;
    let x_min = grid.x(0);
    let eval = |f: &dyn Fn(f64, f64) -> f64| Grid::from_fn(grid.nx, grid.ny, |i, j| f(grid.x(i), grid.y(j)));
    let heights = match kind {
        SurfaceKind::Plane { height } => Grid::filled(grid.nx, grid.ny, *height),
        SurfaceKind::InclinedPlane { height, slope_x, slope_y } => eval(&|x, y| height + slope_x * x + slope_y * y),
        SurfaceKind::Step { base, step_height, edge_x } => {
            positive("step_height", *step_height)?;
            eval(&|x, _| if x >= *edge_x { base + step_height } else { *base })
        }
        SurfaceKind::SphereCap { radius, apex } => {
            positive("radius", *radius)?;
            eval(&|x, y| {
                let r2 = (x * x + y * y).min(radius * radius);
                apex - (radius - (radius * radius - r2).sqrt())
            })
        }
        SurfaceKind::Sinusoid { amplitude, wavelength, offset } => {
            positive("amplitude", *amplitude)?;
            positive("wavelength", *wavelength)?;
            eval(&|x, _| offset + amplitude * (2.0 * PI * x / wavelength).sin())
        }
        SurfaceKind::Chirp { amplitude, wavelength_start, wavelength_end, offset } => {
            positive("amplitude", *amplitude)?;
            positive("wavelength_start", *wavelength_start)?;
            positive("wavelength_end", *wavelength_end)?;
            let k0 = 1.0 / wavelength_start;
            let k1 = 1.0 / wavelength_end;
            eval(&|x, _| {
                let u = x - x_min;
                offset + amplitude * (2.0 * PI * (k0 * u + (k1 - k0) * u * u / (2.0 * width))).sin()
            })
        }
        SurfaceKind::Plateau { levels, irregular_amplitude, irregular_correlation, seed } => {
            if levels.is_empty() {
                return Err(HeightfieldError::Invalid("plateau needs at least one level".into()));
            }
            if *irregular_amplitude < 0.0 {
                return Err(HeightfieldError::Parameter { name: "irregular_amplitude", value: *irregular_amplitude });
            }
            positive("irregular_correlation", *irregular_correlation)?;
            plateau_heights(grid, levels, *irregular_amplitude, *irregular_correlation, *seed)
        }
    };
    Heightfield::new(grid.dx, grid.dy, heights)
}

/// Stroke layout: vertical bars across the field (one per level, separated
/// by base-level gaps) joined by a crossbar at the highest level through the
/// middle fifth, resembling raised lettering.
fn plateau_heights(grid: GridSpec, levels: &[f64], amp: f64, corr: f64, seed: u64) -> Grid {
    let n = levels.len();
    let bands = 2 * n + 1;
    let top = levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut base = Grid::from_fn(grid.nx, grid.ny, |i, j| {
        let band = i * bands / grid.nx;
        let in_crossbar = (2 * grid.ny..3 * grid.ny).contains(&(5 * j)) && band > 0 && band < bands - 1;
        if band % 2 == 1 {
            levels[band / 2]
        } else if in_crossbar {
            top
        } else {
            0.0
        }
    });
    if amp > 0.0 {
        let facets = faceted_relief(grid, corr, seed);
        let mean = facets.mean();
        let rms = (facets.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / facets.len() as f64).sqrt();
        for (h, v) in base.data_mut().iter_mut().zip(facets.data()) {
            *h += amp * (v - mean) / rms;
        }
    }
    base
}

/// Distance to the nearest seed of a jittered lattice with spacing `cell`:
/// inverted cones of constant flank slope meeting along irregular ridges.
fn faceted_relief(grid: GridSpec, cell: f64, seed: u64) -> Grid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x0, y0) = (grid.x(0) - cell, grid.y(0) - cell);
    let cx = ((grid.x(grid.nx - 1) - x0) / cell).ceil() as usize + 2;
    let cy = ((grid.y(grid.ny - 1) - y0) / cell).ceil() as usize + 2;
    let seeds: Vec<(f64, f64)> = (0..cx * cy)
        .map(|k| {
            let (i, j) = ((k % cx) as f64, (k / cx) as f64);
            (x0 + (i + rng.random::<f64>()) * cell, y0 + (j + rng.random::<f64>()) * cell)
        })
        .collect();
    Grid::from_fn(grid.nx, grid.ny, |i, j| {
        let (x, y) = (grid.x(i), grid.y(j));
        let (ci, cj) = (((x - x0) / cell) as isize, ((y - y0) / cell) as isize);
        let mut best = f64::INFINITY;
        for dj in -1..=1 {
            for di in -1..=1 {
                let (a, b) = (ci + di, cj + dj);
                if a < 0 || b < 0 || a >= cx as isize || b >= cy as isize {
                    continue;
                }
                let (sx, sy) = seeds[b as usize * cx + a as usize];
                best = best.min((x - sx).hypot(y - sy));
            }
        }
        best
    })
}

/// Gaussian-filtered Gaussian noise added on top of a surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroRoughnessParams {
    /// µm.
    pub noise_mean: f64,
    /// µm.
    pub noise_sigma: f64,
    /// Standard deviation of the smoothing kernel, µm.
    pub kernel_sigma: f64,
    pub rng_seed: u64,
}

impl MicroRoughnessParams {
    pub fn validate(&self) -> Result<(), HeightfieldError> {
        if !(self.noise_sigma >= 0.0) || !self.noise_mean.is_finite() {
            return Err(HeightfieldError::Parameter { name: "noise_sigma", value: self.noise_sigma });
        }
        positive("kernel_sigma", self.kernel_sigma)
    }

    /// Whether the kernel is narrower than half a grid cell, in which case the
    /// filter is close to the identity.
    pub fn kernel_degenerate(&self, dx: f64, dy: f64) -> bool {
        self.kernel_sigma < 0.5 * dx.min(dy)
    }

    /// Predicted standard deviation of the filtered noise away from the
    /// borders: `σ·sqrt(Σw²)` over the separable kernel weights.
    pub fn predicted_sigma(&self, dx: f64, dy: f64) -> f64 {
        let sq = |k: Vec<f64>| k.iter().map(|w| w * w).sum::<f64>();
        self.noise_sigma * (sq(gaussian_kernel_1d(self.kernel_sigma / dx)) * sq(gaussian_kernel_1d(self.kernel_sigma / dy))).sqrt()
    }
}

/// Adds seeded `N(µ, σ²)` noise per node, smoothed by a Gaussian kernel of
/// std `kernel_sigma` (truncated at 4σ, unit sum, edges replicated).
pub fn add_micro_roughness(h: &Heightfield, p: &MicroRoughnessParams) -> Result<Heightfield, HeightfieldError> {
    p.validate()?;
    if p.kernel_degenerate(h.dx, h.dy) {
        log::warn!(
            "micro-roughness kernel sigma {} µm is below half the grid spacing; the filter is nearly the identity",
            p.kernel_sigma
        );
    }
    if p.noise_sigma == 0.0 {
        return Heightfield::new(h.dx, h.dy, h.heights.map(|z| z + p.noise_mean));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.rng_seed);
    let normal = Normal::new(p.noise_mean, p.noise_sigma).expect("validated sigma");
    let noise = Grid::from_vec(h.nx(), h.ny(), (0..h.heights.len()).map(|_| normal.sample(&mut rng)).collect());
    let kx = gaussian_kernel_1d(p.kernel_sigma / h.dx);
    let ky = gaussian_kernel_1d(p.kernel_sigma / h.dy);
    let smooth = convolve_separable(&noise, &kx, &ky);
    let mut out = h.heights.clone();
    for (z, n) in out.data_mut().iter_mut().zip(smooth.data()) {
        *z += n;
    }
    Heightfield::new(h.dx, h.dy, out)
}

/// Triangulates the grid, splitting every cell along its `(i,j)–(i+1,j+1)`
/// diagonal. Output is in millimetres with upward-facing winding.
pub fn mesh_heightfield(h: &Heightfield) -> TriangleMesh {
    mesh_heightfield_cells(h, |_, _| true).expect("a full grid has cells")
}

/// Like [`mesh_heightfield`] but keeps only the cells `(i, j)` (lower-left
/// corner indices) for which `keep` holds; `None` if no cell is kept.
pub fn mesh_heightfield_cells(h: &Heightfield, keep: impl Fn(usize, usize) -> bool) -> Option<TriangleMesh> {
    let spec = h.spec();
    let (nx, ny) = (spec.nx, spec.ny);
    let mut vertices = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            vertices.push(Vec3::new(spec.x(i), spec.y(j), h.height(i, j)) * UM_TO_MM);
        }
    }
    let id = |i: usize, j: usize| (j * nx + i) as u32;
    let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            if keep(i, j) {
                triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
    }
    if triangles.is_empty() {
        return None;
    }
    Some(TriangleMesh::new(vertices, triangles).expect("grid cells are never degenerate for positive spacing"))
}

/// Random binary cell pattern: Gaussian noise smoothed with a kernel of
/// `correlation` cells and thresholded at zero, so about half the cells
/// are set. Index `j * (nx − 1) + i` for cell `(i, j)` of an `nx × ny`
/// vertex grid.
pub fn random_cell_mask(nx: usize, ny: usize, correlation: f64, seed: u64) -> Vec<bool> {
    let (cx, cy) = (nx.saturating_sub(1), ny.saturating_sub(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Grid::from_vec(cx, cy, (0..cx * cy).map(|_| -> f64 { rand_distr::StandardNormal.sample(&mut rng) }).collect());
    let k = gaussian_kernel_1d(correlation);
    convolve_separable(&noise, &k, &k).data().iter().map(|&v| v > 0.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn grid() -> GridSpec {
        GridSpec { nx: 41, ny: 21, dx: 0.5, dy: 0.25 }
    }

    #[test]
    fn plane_is_constant() {
        let h = generate_surface(&SurfaceKind::Plane { height: 5.0 }, grid()).unwrap();
        assert!(h.heights.data().iter().all(|&z| z == 5.0));
    }

    #[test]
    fn sinusoid_quarter_period_max() {
        // grid centred on x = 0 with 0.5 µm spacing puts a node at x = 2.5 µm
        let h = generate_surface(&SurfaceKind::Sinusoid { amplitude: 1.0, wavelength: 10.0, offset: 0.0 }, grid()).unwrap();
        let i = (0..41).find(|&i| (grid().x(i) - 2.5).abs() < 1e-12).unwrap();
        assert!((h.height(i, 3) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn step_height_exact() {
        let h = generate_surface(&SurfaceKind::Step { base: -1.0, step_height: 2.0, edge_x: 0.3 }, grid()).unwrap();
        assert_eq!(h.heights.max() - h.heights.min(), 2.0);
    }

    #[test]
    fn chirp_local_wavelength_sweeps() {
        let spec = GridSpec { nx: 4001, ny: 2, dx: 0.01, dy: 1.0 };
        let kind = SurfaceKind::Chirp { amplitude: 1.0, wavelength_start: 4.0, wavelength_end: 1.0, offset: 0.0 };
        let h = generate_surface(&kind, spec).unwrap();
        let row = h.heights.row(0);
        let crossings: Vec<usize> = (1..row.len()).filter(|&i| row[i - 1] < 0.0 && row[i] >= 0.0).collect();
        let first = (crossings[1] - crossings[0]) as f64 * spec.dx;
        let last = (crossings[crossings.len() - 1] - crossings[crossings.len() - 2]) as f64 * spec.dx;
        assert!(first > 2.5 && last < 1.2, "periods {first} {last}");
    }

    #[test]
    fn sphere_cap_apex() {
        let h = generate_surface(&SurfaceKind::SphereCap { radius: 50.0, apex: 2.0 }, GridSpec::square(11, 1.0)).unwrap();
        assert_eq!(h.height(5, 5), 2.0);
        assert!((h.height(0, 5) - (2.0 - (50.0 - (2500.0f64 - 25.0).sqrt()))).abs() < 1e-12);
    }

    #[test]
    fn parameter_errors() {
        let g = grid();
        assert!(generate_surface(&SurfaceKind::Sinusoid { amplitude: 0.0, wavelength: 1.0, offset: 0.0 }, g).is_err());
        assert!(generate_surface(&SurfaceKind::Sinusoid { amplitude: 1.0, wavelength: -1.0, offset: 0.0 }, g).is_err());
        assert!(generate_surface(&SurfaceKind::Plane { height: 0.0 }, GridSpec::square(1, 1.0)).is_err());
        assert!(generate_surface(&SurfaceKind::Plane { height: 0.0 }, GridSpec::square(4, 0.0)).is_err());
    }

    #[test]
    fn plateau_has_levels_and_is_seeded() {
        let kind = SurfaceKind::Plateau { levels: vec![2.0, 4.0], irregular_amplitude: 0.0, irregular_correlation: 1.0, seed: 1 };
        let h = generate_surface(&kind, GridSpec::square(50, 1.0)).unwrap();
        let mut levels: Vec<f64> = h.heights.data().to_vec();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        assert_eq!(levels, vec![0.0, 2.0, 4.0]);
        let rough = SurfaceKind::Plateau { levels: vec![2.0, 4.0], irregular_amplitude: 0.5, irregular_correlation: 2.0, seed: 9 };
        let a = generate_surface(&rough, GridSpec::square(50, 1.0)).unwrap();
        let b = generate_surface(&rough, GridSpec::square(50, 1.0)).unwrap();
        assert_eq!(a, b);
        let diff: Vec<f64> = a.heights.data().iter().zip(h.heights.data()).map(|(p, q)| p - q).collect();
        let rms = (diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64).sqrt();
        assert!((rms - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_sigma_roughness_is_identity() {
        let h = generate_surface(&SurfaceKind::Sinusoid { amplitude: 1.0, wavelength: 7.0, offset: 0.3 }, grid()).unwrap();
        let p = MicroRoughnessParams { noise_mean: 0.0, noise_sigma: 0.0, kernel_sigma: 1.0, rng_seed: 3 };
        assert_eq!(add_micro_roughness(&h, &p).unwrap(), h);
    }

    #[test]
    fn roughness_is_repeatable_and_seed_dependent() {
        let h = generate_surface(&SurfaceKind::Plane { height: 0.0 }, grid()).unwrap();
        let p = MicroRoughnessParams { noise_mean: 0.0, noise_sigma: 0.1, kernel_sigma: 1.0, rng_seed: 3 };
        let a = add_micro_roughness(&h, &p).unwrap();
        let b = add_micro_roughness(&h, &p).unwrap();
        assert_eq!(a.heights.data(), b.heights.data());
        let c = add_micro_roughness(&h, &MicroRoughnessParams { rng_seed: 4, ..p }).unwrap();
        assert_ne!(a.heights.data(), c.heights.data());
    }

    #[test]
    fn roughness_reduces_variance_on_flat_plane() {
        let spec = GridSpec::square(256, 0.25);
        let h = generate_surface(&SurfaceKind::Plane { height: 0.0 }, spec).unwrap();
        let p = MicroRoughnessParams { noise_mean: 0.0, noise_sigma: 0.1, kernel_sigma: 1.0, rng_seed: 12 };
        let out = add_micro_roughness(&h, &p).unwrap();
        let n = out.heights.len() as f64;
        let mean = out.heights.mean();
        let std = (out.heights.data().iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() <= 3.0 * 0.1 / n.sqrt() * 4.0 * 4.0, "mean {mean}");
        assert!(std < 0.1);
        assert!(std > 0.0);
    }

    #[test]
    fn degenerate_kernel_flag() {
        let p = MicroRoughnessParams { noise_mean: 0.0, noise_sigma: 0.1, kernel_sigma: 0.1, rng_seed: 0 };
        assert!(p.kernel_degenerate(0.5, 0.5));
        assert!(!p.kernel_degenerate(0.1, 0.1));
    }

    #[test]
    fn mesh_counts_normals_and_area() {
        let spec = GridSpec { nx: 2, ny: 2, dx: 1.0, dy: 1.0 };
        let m = mesh_heightfield(&generate_surface(&SurfaceKind::Plane { height: 0.0 }, spec).unwrap());
        assert_eq!(m.len(), 2);
        let h = generate_surface(&SurfaceKind::Plane { height: 3.0 }, grid()).unwrap();
        let m = mesh_heightfield(&h);
        assert_eq!(m.len(), 2 * 40 * 20);
        assert!(m.normals().iter().all(|&n| (n - Vec3::Z).length() < 1e-12));
        let expected = (40.0 * 0.5) * (20.0 * 0.25) * UM_TO_MM * UM_TO_MM;
        assert!((m.area() - expected).abs() < 1e-12 * expected.max(1.0));
    }

    #[test]
    fn mesh_interior_edges_shared_twice() {
        let h = generate_surface(&SurfaceKind::Sinusoid { amplitude: 1.0, wavelength: 3.0, offset: 0.0 }, grid()).unwrap();
        let m = mesh_heightfield(&h);
        let mut edges: HashMap<(u32, u32), usize> = HashMap::new();
        for t in m.triangles() {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let nx = h.nx() as u32;
        let on_border = |v: u32| {
            let (i, j) = (v % nx, v / nx);
            i == 0 || j == 0 || i == nx - 1 || j == h.ny() as u32 - 1
        };
        for (&(a, b), &count) in &edges {
            let border_edge = on_border(a) && on_border(b) && {
                let (ia, ja, ib, jb) = (a % nx, a / nx, b % nx, b / nx);
                (ia == ib && (ia == 0 || ia == nx - 1)) || (ja == jb && (ja == 0 || ja == h.ny() as u32 - 1))
            };
            assert_eq!(count, if border_edge { 1 } else { 2 }, "edge {a}-{b}");
        }
    }

    #[test]
    fn text_round_trip_and_errors() {
        let h = generate_surface(&SurfaceKind::Sinusoid { amplitude: 1.5, wavelength: 3.0, offset: 0.1 }, grid()).unwrap();
        let back = Heightfield::from_text(&h.to_text()).unwrap();
        assert_eq!(back, h);
        assert!(matches!(Heightfield::from_text("2 2 1 1\n0 0 0\n"), Err(HeightfieldError::Parse { .. })));
        assert!(matches!(Heightfield::from_text("2 2 1\n0 0 0 0\n"), Err(HeightfieldError::Parse { line: 1, .. })));
        assert!(matches!(Heightfield::from_text("2 2 1 1\n0 0 x 0\n"), Err(HeightfieldError::Parse { line: 2, .. })));
    }

    #[test]
    fn bilinear_sample_reproduces_planes() {
        let kind = SurfaceKind::InclinedPlane { height: 1.0, slope_x: 0.2, slope_y: -0.1 };
        let h = generate_surface(&kind, grid()).unwrap();
        for (x, y) in [(0.0, 0.0), (1.37, -0.4), (-4.1, 2.2)] {
            assert!((h.sample(x, y) - (1.0 + 0.2 * x - 0.1 * y)).abs() < 1e-12);
        }
    }
}
