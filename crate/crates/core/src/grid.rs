//! Dense row-major 2-D arrays and the edge-replicating convolutions used for
//! heightfield smoothing, PSF blurring and focus metrics.

use serde::{Deserialize, Serialize};

/// Row-major `width × height` array; `data[y * width + x]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "grid data length mismatch");
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Value with edge replication for out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.data[cy * self.width + cx]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn add(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] += v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn column(&self, x: usize) -> Vec<f64> {
        (0..self.height).map(|y| self.get(x, y)).collect()
    }
}

/// Sampled 1-D Gaussian truncated at `4σ` and normalized to unit sum.
pub fn gaussian_kernel_1d(sigma: f64) -> Vec<f64> {
    assert!(sigma > 0.0, "Gaussian sigma must be positive");
    let radius = (4.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable convolution with odd-length kernels, replicating edges.
pub fn convolve_separable(g: &Grid, kx: &[f64], ky: &[f64]) -> Grid {
    assert!(kx.len() % 2 == 1 && ky.len() % 2 == 1, "kernels must have odd length");
    let (w, h) = (g.width(), g.height());
    let rx = (kx.len() / 2) as isize;
    let ry = (ky.len() / 2) as isize;
    let mut tmp = Grid::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &k) in kx.iter().enumerate() {
                acc += k * g.get_clamped(x as isize + i as isize - rx, y as isize);
            }
            tmp.set(x, y, acc);
        }
    }
    let mut out = Grid::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, &k) in ky.iter().enumerate() {
                acc += k * tmp.get_clamped(x as isize, y as isize + j as isize - ry);
            }
            out.set(x, y, acc);
        }
    }
    out
}

/// Full 2-D convolution with an odd-sized kernel grid (centre at the middle),
/// replicating edges. The kernel is applied as a correlation of its
/// point-reflection, i.e. a true convolution.
pub fn convolve_2d(g: &Grid, kernel: &Grid) -> Grid {
    assert!(kernel.width() % 2 == 1 && kernel.height() % 2 == 1, "kernel must have odd dimensions");
    let rx = (kernel.width() / 2) as isize;
    let ry = (kernel.height() / 2) as isize;
    Grid::from_fn(g.width(), g.height(), |x, y| {
        let mut acc = 0.0;
        for j in 0..kernel.height() {
            for i in 0..kernel.width() {
                let k = kernel.get(i, j);
                if k != 0.0 {
                    acc += k * g.get_clamped(x as isize + rx - i as isize, y as isize + ry - j as isize);
                }
            }
        }
        acc
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_normalized_and_truncated() {
        let k = gaussian_kernel_1d(2.0);
        assert_eq!(k.len(), 17);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(k[8] > k[7] && (k[7] - k[9]).abs() < 1e-18);
    }

    #[test]
    fn separable_preserves_constant() {
        let g = Grid::filled(7, 5, 3.25);
        let k = gaussian_kernel_1d(1.3);
        let out = convolve_separable(&g, &k, &k);
        assert!(out.data().iter().all(|&v| (v - 3.25).abs() < 1e-13));
    }

    #[test]
    fn full_2d_matches_separable_for_product_kernel() {
        let g = Grid::from_fn(9, 8, |x, y| ((x * 7 + y * 3) % 5) as f64);
        let k = gaussian_kernel_1d(0.8);
        let n = k.len();
        let k2 = Grid::from_fn(n, n, |i, j| k[i] * k[j]);
        let a = convolve_separable(&g, &k, &k);
        let b = convolve_2d(&g, &k2);
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn convolution_orientation() {
        // asymmetric kernel shifts an impulse in the kernel's direction
        let mut g = Grid::new(5, 5);
        g.set(2, 2, 1.0);
        let mut k = Grid::new(3, 3);
        k.set(2, 1, 1.0);
        let out = convolve_2d(&g, &k);
        assert_eq!(out.get(3, 2), 1.0);
    }
}
