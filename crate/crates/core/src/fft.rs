//! Thin wrappers over `rustfft` for 1D real series and 2D images.

use std::sync::Arc;

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Full complex DFT of a real series (unnormalized).
pub fn dft_real(series: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = series.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    if buf.is_empty() {
        return buf;
    }
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// Inverse DFT with 1/N normalization. Returns the real part and the largest
/// imaginary magnitude that was discarded.
pub fn idft_to_real(spectrum: &[Complex64]) -> (Vec<f64>, f64) {
    let n = spectrum.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let mut buf = spectrum.to_vec();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    let imag = buf.iter().map(|c| (c.im * scale).abs()).fold(0.0, f64::max);
    (buf.iter().map(|c| c.re * scale).collect(), imag)
}

/// Number of one-sided bins for a real series of length `n`.
pub fn one_sided_len(n: usize) -> usize {
    n / 2 + 1
}

/// Rebuilds the full conjugate-symmetric spectrum of a real series of length
/// `n` from its one-sided half. DC and (for even `n`) Nyquist are forced real.
pub fn hermitian_extend(half: &[Complex64], n: usize) -> Vec<Complex64> {
    assert_eq!(half.len(), one_sided_len(n));
    let mut full = vec![Complex64::new(0.0, 0.0); n];
    for (f, v) in half.iter().enumerate() {
        full[f] = *v;
        if f > 0 && f < n - f {
            full[n - f] = v.conj();
        }
    }
    full[0] = Complex64::new(full[0].re, 0.0);
    if n.is_multiple_of(2) && n > 0 {
        full[n / 2] = Complex64::new(full[n / 2].re, 0.0);
    }
    full
}

/// Planned forward and inverse 2D transforms for a fixed shape.
#[derive(Clone)]
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn transform(&self, data: &mut Array2<Complex64>, row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.dim(), (self.rows, self.cols));
        // Standard layout: each row is contiguous.
        for mut line in data.axis_iter_mut(Axis(0)) {
            let slice = line.as_slice_mut().expect("row-major image");
            row.process(slice);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); self.rows];
        for c in 0..self.cols {
            for r in 0..self.rows {
                column[r] = data[[r, c]];
            }
            col.process(&mut column);
            for r in 0..self.rows {
                data[[r, c]] = column[r];
            }
        }
    }

    pub fn forward_real(&self, image: &Array2<f64>) -> Array2<Complex64> {
        let mut data = image.mapv(|v| Complex64::new(v, 0.0));
        if !data.is_standard_layout() {
            data = data.as_standard_layout().to_owned();
        }
        self.transform(&mut data, &self.row_fwd, &self.col_fwd);
        data
    }

    /// Inverse transform with 1/(rows*cols) normalization, keeping the real part.
    pub fn inverse_real(&self, spectrum: Array2<Complex64>) -> Array2<f64> {
        let mut data = spectrum.as_standard_layout().to_owned();
        self.transform(&mut data, &self.row_inv, &self.col_inv);
        let scale = 1.0 / (self.rows * self.cols) as f64;
        data.mapv(|c| c.re * scale)
    }
}

/// Circular 2D convolution with a fixed kernel (zero shift at `[0, 0]`).
#[derive(Clone)]
pub struct CircularConvolution {
    fft: Fft2,
    kernel_hat: Array2<Complex64>,
}

impl std::fmt::Debug for CircularConvolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CircularConvolution")
            .field("shape", &self.shape())
            .finish()
    }
}

impl CircularConvolution {
    pub fn new(kernel: &Array2<f64>) -> Self {
        let (rows, cols) = kernel.dim();
        let fft = Fft2::new(rows, cols);
        let kernel_hat = fft.forward_real(kernel);
        Self { fft, kernel_hat }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.fft.shape()
    }

    pub fn kernel_spectrum(&self) -> &Array2<Complex64> {
        &self.kernel_hat
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut spec = self.fft.forward_real(x);
        spec.zip_mut_with(&self.kernel_hat, |s, k| *s *= k);
        self.fft.inverse_real(spec)
    }

    /// Correlation with the kernel, the adjoint of [`apply`](Self::apply).
    pub fn apply_adjoint(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut spec = self.fft.forward_real(x);
        spec.zip_mut_with(&self.kernel_hat, |s, k| *s *= k.conj());
        self.fft.inverse_real(spec)
    }

    /// `C^T C x` in a single forward/inverse pair.
    pub fn apply_normal(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut spec = self.fft.forward_real(x);
        spec.zip_mut_with(&self.kernel_hat, |s, k| *s *= k.norm_sqr());
        self.fft.inverse_real(spec)
    }
}
