//! Uniform cell-centred grids, grid functions and zero-padded FFT convolution.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Box [-H, H]^N split into `points` cells per axis. Row-major, last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    half_width: f64,
    points: usize,
}

impl Grid {
    pub fn new(dim: usize, half_width: f64, points: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Parameter(format!("grid dimension {dim} not in 1..=3")));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::Parameter(format!("half-width {half_width} must be positive")));
        }
        if points == 0 {
            return Err(Error::Parameter("grid needs at least one point per axis".into()));
        }
        Ok(Self { dim, half_width, points })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.points as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Centre of cell i along one axis.
    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.spacing()
    }

    pub fn multi_index(&self, flat: usize) -> [usize; 3] {
        let n = self.points;
        let mut out = [0usize; 3];
        let mut rem = flat;
        for a in (0..self.dim).rev() {
            out[a] = rem % n;
            rem /= n;
        }
        out
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().take(self.dim).fold(0, |acc, &i| acc * self.points + i)
    }

    /// Cell centre; unused trailing components are zero.
    pub fn center(&self, flat: usize) -> [f64; 3] {
        let idx = self.multi_index(flat);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.coord(idx[a]);
        }
        x
    }

    /// Index of the cell containing `x` along one axis, if inside the box.
    pub fn locate(&self, x: f64) -> Option<usize> {
        let i = ((x + self.half_width) / self.spacing()).floor();
        if i >= 0.0 && (i as usize) < self.points {
            Some(i as usize)
        } else {
            None
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().take(self.dim).all(|v| v.abs() <= self.half_width)
    }
}

/// Cell values on a grid plus an additive constant carried analytically.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub background: f64,
    pub time: f64,
    pub warnings: Vec<String>,
}

impl GridFunction {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
            background: 0.0,
            time: 0.0,
            warnings: Vec::new(),
        }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>, background: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Parameter(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Domain(format!("grid values must be finite and nonnegative, found {v}")));
        }
        if !(background.is_finite() && background >= 0.0) {
            return Err(Error::Domain(format!("background {background} must be finite and nonnegative")));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
            background,
            time: 0.0,
            warnings: Vec::new(),
        })
    }

    /// Total value (cell value plus background) at a flat index.
    #[inline]
    pub fn total(&self, i: usize) -> f64 {
        self.values[i] + self.background
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())) + self.background.abs()
    }

    pub fn totals(&self) -> Vec<f64> {
        self.values.iter().map(|v| v + self.background).collect()
    }
}

/// Linear convolution on a grid through zero padding to twice the size per axis.
pub struct Convolver {
    dim: usize,
    n: usize,
    padded: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Convolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Convolver")
            .field("dim", &self.dim)
            .field("n", &self.n)
            .field("padded", &self.padded)
            .finish()
    }
}

impl Convolver {
    pub fn new(grid: &Grid) -> Self {
        let n = grid.points();
        let padded = 2 * n;
        let mut planner = FftPlanner::new();
        Self {
            dim: grid.dim(),
            n,
            padded,
            forward: planner.plan_fft_forward(padded),
            inverse: planner.plan_fft_inverse(padded),
        }
    }

    pub fn padded_len(&self) -> usize {
        self.padded.pow(self.dim as u32)
    }

    fn transform(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let p = self.padded;
        let mut line = vec![Complex64::new(0.0, 0.0); p];
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        for axis in 0..self.dim {
            let stride = p.pow((self.dim - 1 - axis) as u32);
            if stride == 1 {
                for chunk in data.chunks_exact_mut(p) {
                    fft.process_with_scratch(chunk, &mut scratch);
                }
                continue;
            }
            let block = stride * p;
            for outer in (0..data.len()).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for k in 0..p {
                        line[k] = data[base + k * stride];
                    }
                    fft.process_with_scratch(&mut line, &mut scratch);
                    for k in 0..p {
                        data[base + k * stride] = line[k];
                    }
                }
            }
        }
    }

    /// Spectrum of grid values placed in the low corner of the padded array.
    pub fn spectrum_of_values(&self, values: &[f64]) -> Vec<Complex64> {
        assert_eq!(values.len(), self.n.pow(self.dim as u32));
        let p = self.padded;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.padded_len()];
        for (flat, v) in values.iter().enumerate() {
            let mut rem = flat;
            let mut idx = 0;
            let mut mult = 1;
            for _ in 0..self.dim {
                idx += (rem % self.n) * mult;
                rem /= self.n;
                mult *= p;
            }
            buf[idx] = Complex64::new(*v, 0.0);
        }
        self.transform(&mut buf, &self.forward);
        buf
    }

    /// Spectrum of a kernel given by its value at integer offsets d with |d_a| < n.
    pub fn spectrum_of_offsets<F: Fn(&[isize]) -> f64>(&self, weight: F) -> Vec<Complex64> {
        let p = self.padded as isize;
        let n = self.n as isize;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.padded_len()];
        let span = (2 * n - 1) as usize;
        let total = span.pow(self.dim as u32);
        let mut d = [0isize; 3];
        for flat in 0..total {
            let mut rem = flat;
            for a in (0..self.dim).rev() {
                d[a] = (rem % span) as isize - (n - 1);
                rem /= span;
            }
            let w = weight(&d[..self.dim]);
            if w == 0.0 {
                continue;
            }
            let mut idx = 0usize;
            for a in 0..self.dim {
                idx = idx * p as usize + d[a].rem_euclid(p) as usize;
            }
            buf[idx] = Complex64::new(w, 0.0);
        }
        self.transform(&mut buf, &self.forward);
        buf
    }

    /// Inverse transform and crop back to the grid.
    pub fn inverse_crop(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut spec, &self.inverse);
        let scale = 1.0 / self.padded_len() as f64;
        let p = self.padded;
        let total = self.n.pow(self.dim as u32);
        (0..total)
            .map(|flat| {
                let mut rem = flat;
                let mut idx = 0;
                let mut mult = 1;
                for _ in 0..self.dim {
                    idx += (rem % self.n) * mult;
                    rem /= self.n;
                    mult *= p;
                }
                spec[idx].re * scale
            })
            .collect()
    }

    /// out_i = Σ_j values_j · W_{i−j}.
    pub fn convolve(&self, values: &[f64], kernel_spectrum: &[Complex64]) -> Vec<f64> {
        let mut spec = self.spectrum_of_values(values);
        for (a, b) in spec.iter_mut().zip(kernel_spectrum) {
            *a *= b;
        }
        self.inverse_crop(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_and_multi_index_roundtrip() {
        let g = Grid::new(3, 1.0, 5).unwrap();
        for flat in [0, 7, 33, 124] {
            let idx = g.multi_index(flat);
            assert_eq!(g.flat_index(&idx), flat);
        }
        assert!((g.spacing() - 0.4).abs() < 1e-15);
        assert!((g.coord(2)).abs() < 1e-15);
    }

    fn direct(grid: &Grid, v: &[f64], w: impl Fn(&[isize]) -> f64) -> Vec<f64> {
        (0..grid.len())
            .map(|i| {
                let ii = grid.multi_index(i);
                (0..grid.len())
                    .map(|j| {
                        let jj = grid.multi_index(j);
                        let d: Vec<isize> = (0..grid.dim()).map(|a| ii[a] as isize - jj[a] as isize).collect();
                        v[j] * w(&d)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn fft_matches_direct_convolution() {
        for dim in 1..=3 {
            let g = Grid::new(dim, 1.0, 5).unwrap();
            let v: Vec<f64> = (0..g.len()).map(|i| ((i * 7919) % 13) as f64).collect();
            let w = |d: &[isize]| {
                let s: isize = d.iter().map(|x| x * x).sum();
                (-(s as f64) * 0.3).exp() + if d[0] > 0 { 0.1 } else { 0.0 }
            };
            let conv = Convolver::new(&g);
            let fast = conv.convolve(&v, &conv.spectrum_of_offsets(w));
            let slow = direct(&g, &v, w);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "dim {dim}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn rejects_negative_values() {
        let g = Grid::new(1, 1.0, 3).unwrap();
        assert!(GridFunction::from_values(&g, vec![1.0, -1.0, 0.0], 0.0).is_err());
    }
}
