//! ZeroShot Plug-and-Play deconvolution of a core-operator image.
//!
//! Half quadratic splitting alternates a Tikhonov data step
//! `rho1 = argmin |u - C rho1|^2 + nu |rho1 - rho2|^2` with a denoising step at
//! the noise level estimated from `rho1`. The coupling follows
//! `lambda = nu0 sigma_0^2` (fixed after the first iteration) and
//! `nu_k = lambda / sigma_k^2`.

use ndarray::{s, Array2};

use crate::cg::{conjugate_gradient, CgSettings};
use crate::denoise::{denoise, DenoiserRef};
use crate::error::{Error, Result};
use crate::fft::CircularConvolution;
use crate::grid::GridGeometry;
use crate::physics::{sample_kernel, KernelSelector, KernelSpec};

/// Convolution `C` with a kernel image. With a kernel larger than the image,
/// `C` zero-extends its input, convolves circularly on the larger domain and
/// crops, which removes wrap-around for up to the size difference.
#[derive(Clone, Debug)]
pub struct DeconvolutionOperator {
    conv: CircularConvolution,
    shape: (usize, usize),
}

impl DeconvolutionOperator {
    /// Circular convolution on the image grid; `kernel` is in FFT layout
    /// (zero offset at `[0, 0]`).
    pub fn circular(kernel: &Array2<f64>) -> Self {
        Self {
            conv: CircularConvolution::new(kernel),
            shape: kernel.dim(),
        }
    }

    /// Convolution on a `shape` image through a larger FFT-layout kernel.
    pub fn cropped(kernel: &Array2<f64>, shape: (usize, usize)) -> Result<Self> {
        let (kr, kc) = kernel.dim();
        if kr < shape.0 || kc < shape.1 {
            return Err(Error::GeometryMismatch(format!(
                "kernel {:?} is smaller than the image {:?}",
                kernel.dim(),
                shape
            )));
        }
        Ok(Self {
            conv: CircularConvolution::new(kernel),
            shape,
        })
    }

    /// Kernel image of the selected MPI kernel entry on `grid`, scaled by the
    /// pixel area and then normalized as requested. Returns the operator and
    /// the normalization factor, so that `u / gain` is the matching data.
    pub fn from_kernel(
        grid: &GridGeometry,
        gradient: [f64; 2],
        spec: &KernelSpec,
        selector: KernelSelector,
        padding: usize,
        normalization: KernelNormalization,
    ) -> Result<(Self, f64)> {
        grid.validate()?;
        let (rows, cols) = grid.shape();
        let mut kernel = sample_kernel(rows + padding, cols + padding, grid.spacing, gradient, spec, selector)?;
        let total = match normalization {
            KernelNormalization::UnitPeak => kernel.iter().copied().fold(0.0, |m: f64, v| m.max(v.abs())),
            KernelNormalization::UnitSum => kernel.sum(),
        };
        let gain = total * grid.pixel_area();
        if !(gain.is_finite() && gain.abs() > 0.0) {
            return Err(Error::invalid("kernel", "kernel image normalizes to zero"));
        }
        kernel.mapv_inplace(|v| v / total);
        Ok((Self::cropped(&kernel, (rows, cols))?, gain))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    fn embed(&self, x: &Array2<f64>) -> Array2<f64> {
        if x.dim() == self.conv.shape() {
            return x.clone();
        }
        let mut big = Array2::zeros(self.conv.shape());
        big.slice_mut(s![..self.shape.0, ..self.shape.1]).assign(x);
        big
    }

    fn crop(&self, x: Array2<f64>) -> Array2<f64> {
        if x.dim() == self.shape {
            return x;
        }
        x.slice(s![..self.shape.0, ..self.shape.1]).to_owned()
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        self.crop(self.conv.apply(&self.embed(x)))
    }

    pub fn apply_adjoint(&self, x: &Array2<f64>) -> Array2<f64> {
        self.crop(self.conv.apply_adjoint(&self.embed(x)))
    }

    pub fn apply_normal(&self, x: &Array2<f64>) -> Array2<f64> {
        self.apply_adjoint(&self.apply(x))
    }
}

/// Scale of the kernel image handed to the data step; `nu` is measured
/// against it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KernelNormalization {
    /// Taps sum to 1, so the operator norm is at most 1.
    #[default]
    UnitSum,
    /// Largest tap equals 1.
    UnitPeak,
}

/// Default coupling for a unit-sum kernel. Chosen by sweeping the two-bar
/// simulation; other normalizations shift the useful range.
pub const DEFAULT_NU0: f64 = 3e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct PnPConfig {
    pub nu0: f64,
    pub n_iterations: usize,
    /// Lower-clipping percentile applied to every data-step iterate.
    pub trim_percentile: f64,
    pub cg: CgSettings,
    pub denoiser: DenoiserRef,
}

impl Default for PnPConfig {
    fn default() -> Self {
        Self {
            nu0: DEFAULT_NU0,
            n_iterations: 10,
            trim_percentile: 5.0,
            cg: CgSettings::default(),
            denoiser: DenoiserRef::default(),
        }
    }
}

impl PnPConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu0 > 0.0 && self.nu0.is_finite()) {
            return Err(Error::invalid("nu0", "must be finite and > 0"));
        }
        if !(0.0..50.0).contains(&self.trim_percentile) {
            return Err(Error::invalid("trim_percentile", "must lie in [0, 50)"));
        }
        if !(self.cg.tolerance > 0.0) {
            return Err(Error::invalid("cg_tolerance", "must be > 0"));
        }
        self.denoiser.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PnPState {
    pub rho1: Array2<f64>,
    pub rho2: Array2<f64>,
    pub sigma: f64,
    pub nu: f64,
    /// Set once, after the first noise estimate.
    pub lambda: Option<f64>,
}

/// Bookkeeping of one HQS iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Coupling used in this iteration's data step.
    pub nu: f64,
    /// Noise level estimated from the trimmed data-step iterate.
    pub sigma: f64,
    pub lambda: f64,
    /// Coupling for the next data step, `lambda / sigma^2`.
    pub nu_next: f64,
    pub cg_iterations: usize,
    pub cg_relative_residual: f64,
    pub cg_converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PnPResult {
    pub image: Array2<f64>,
    pub state: PnPState,
    pub iterations: Vec<IterationRecord>,
    /// The loop stopped because an iterate had zero spread.
    pub early_termination: bool,
}

impl PnPResult {
    /// Largest relative deviation from the coupling schedule
    /// (`lambda = nu0 sigma_0^2`, `nu_next sigma_k^2 = lambda`).
    pub fn schedule_deviation(&self, nu0: f64) -> f64 {
        let Some(first) = self.iterations.first() else {
            return 0.0;
        };
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
        let mut worst = rel(first.lambda, nu0 * first.sigma * first.sigma);
        for rec in &self.iterations {
            worst = worst.max(rel(rec.nu_next * rec.sigma * rec.sigma, rec.lambda));
            worst = worst.max(rel(rec.lambda, first.lambda));
        }
        worst
    }
}

/// Outcome of one data step.
#[derive(Clone, Debug, PartialEq)]
pub struct TikhonovOutcome {
    pub image: Array2<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Solves `(C^T C + nu I) rho1 = C^T u + nu rho2`. The solve runs on the
/// increment `rho1 - rho2`, so the tolerance is relative to the gradient of the
/// objective at `rho2`.
pub fn tikhonov_step(
    u: &Array2<f64>,
    rho2: &Array2<f64>,
    nu: f64,
    op: &DeconvolutionOperator,
    cg: CgSettings,
) -> Result<TikhonovOutcome> {
    if u.dim() != op.shape() || rho2.dim() != op.shape() {
        return Err(Error::GeometryMismatch(format!(
            "data {:?}, iterate {:?}, operator {:?}",
            u.dim(),
            rho2.dim(),
            op.shape()
        )));
    }
    if !(nu > 0.0) {
        return Err(Error::invalid("nu", "must be > 0"));
    }
    let shape = op.shape();
    let rhs = op.apply_adjoint(&(u - &op.apply(rho2)));
    let b: Vec<f64> = rhs.iter().copied().collect();
    let mut delta = vec![0.0; b.len()];
    let report = conjugate_gradient(
        |v, out| {
            let x = Array2::from_shape_vec(shape, v.to_vec()).expect("shape");
            let y = op.apply_normal(&x);
            for ((o, yi), vi) in out.iter_mut().zip(y.iter()).zip(v) {
                *o = yi + nu * vi;
            }
        },
        &b,
        &mut delta,
        cg,
    );
    let delta = Array2::from_shape_vec(shape, delta).expect("shape");
    Ok(TikhonovOutcome {
        image: rho2 + &delta,
        iterations: report.iterations,
        relative_residual: report.relative_residual,
        converged: report.converged,
    })
}

/// Population standard deviation of the pixel values.
pub fn estimate_noise(image: &Array2<f64>) -> f64 {
    if image.is_empty() {
        return 0.0;
    }
    let n = image.len() as f64;
    let mean = image.sum() / n;
    (image.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// `p`-th percentile with linear interpolation between order statistics at
/// rank `p / 100 * (n - 1)`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("values"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = rank - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// Raises every value below the `p`-th percentile to the percentile value.
pub fn percentile_trim(image: &Array2<f64>, p: f64) -> Result<Array2<f64>> {
    if !(0.0..50.0).contains(&p) {
        return Err(Error::invalid("trim_percentile", "must lie in [0, 50)"));
    }
    if p == 0.0 || image.is_empty() {
        return Ok(image.clone());
    }
    let values: Vec<f64> = image.iter().copied().collect();
    let floor = percentile(&values, p)?;
    Ok(image.mapv(|v| v.max(floor)))
}

/// Runs the ZeroShot-PnP loop on data `u`.
pub fn zero_shot_pnp(u: &Array2<f64>, op: &DeconvolutionOperator, config: &PnPConfig) -> Result<PnPResult> {
    config.validate()?;
    if u.dim() != op.shape() {
        return Err(Error::GeometryMismatch(format!(
            "data {:?} vs operator {:?}",
            u.dim(),
            op.shape()
        )));
    }
    let mut state = PnPState {
        rho1: Array2::zeros(u.dim()),
        rho2: Array2::zeros(u.dim()),
        sigma: 0.0,
        nu: config.nu0,
        lambda: None,
    };
    let mut records = Vec::with_capacity(config.n_iterations);
    let mut early_termination = false;

    for k in 0..config.n_iterations {
        let step = tikhonov_step(u, &state.rho2, state.nu, op, config.cg)?;
        if !step.converged {
            log::warn!(
                "PnP iteration {k}: data step stopped at relative residual {:.3e}",
                step.relative_residual
            );
        }
        state.rho1 = percentile_trim(&step.image, config.trim_percentile)?;
        let sigma = estimate_noise(&state.rho1);
        if !(sigma > 0.0) {
            early_termination = true;
            break;
        }
        state.sigma = sigma;
        let lambda = *state.lambda.get_or_insert(config.nu0 * sigma * sigma);
        state.rho2 = denoise(&state.rho1, sigma, &config.denoiser)?;
        let nu_used = state.nu;
        state.nu = lambda / (sigma * sigma);
        records.push(IterationRecord {
            iteration: k,
            nu: nu_used,
            sigma,
            lambda,
            nu_next: state.nu,
            cg_iterations: step.iterations,
            cg_relative_residual: step.relative_residual,
            cg_converged: step.converged,
        });
    }

    Ok(PnPResult {
        image: state.rho2.clone(),
        state,
        iterations: records,
        early_termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cg::KrylovMethod;

    fn tight() -> CgSettings {
        CgSettings {
            tolerance: 1e-12,
            max_iterations: 2000,
            method: KrylovMethod::ConjugateResidual,
        }
    }

    fn blur_kernel(rows: usize, cols: usize) -> Array2<f64> {
        let mut k = Array2::zeros((rows, cols));
        k[[0, 0]] = 0.5;
        k[[0, 1]] = 0.125;
        k[[0, cols - 1]] = 0.125;
        k[[1, 0]] = 0.125;
        k[[rows - 1, 0]] = 0.125;
        k
    }

    fn test_image(rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |(r, c)| ((r * 13 + c * 7) % 9) as f64 * 0.25 - 0.3)
    }

    #[test]
    fn consistent_pair_is_fixed() {
        let op = DeconvolutionOperator::circular(&blur_kernel(8, 9));
        let rho2 = test_image(8, 9);
        let u = op.apply(&rho2);
        let out = tikhonov_step(&u, &rho2, 0.3, &op, tight()).unwrap();
        assert_eq!(out.image, rho2);
    }

    #[test]
    fn large_coupling_pins_to_rho2() {
        let op = DeconvolutionOperator::circular(&blur_kernel(8, 9));
        let rho2 = test_image(8, 9);
        let u = Array2::from_elem((8, 9), 1.0);
        let out = tikhonov_step(&u, &rho2, 1e12, &op, tight()).unwrap();
        for (a, b) in out.image.iter().zip(rho2.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn delta_kernel_closed_form() {
        let mut k = Array2::zeros((5, 6));
        k[[0, 0]] = 1.0;
        let op = DeconvolutionOperator::circular(&k);
        let rho2 = test_image(5, 6);
        let u = test_image(6, 5).t().to_owned().mapv(|v| 2.0 - v);
        let out = tikhonov_step(&u, &rho2, 1.0, &op, tight()).unwrap();
        for ((o, a), b) in out.image.iter().zip(u.iter()).zip(rho2.iter()) {
            assert!((o - 0.5 * (a + b)).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_estimates() {
        assert_eq!(estimate_noise(&Array2::from_elem((3, 3), 4.0)), 0.0);
        let two = Array2::from_shape_vec((1, 2), vec![0.0, 2.0]).unwrap();
        assert_eq!(estimate_noise(&two), 1.0);
        let checker = Array2::from_shape_fn((4, 4), |(r, c)| if (r + c) % 2 == 0 { 1.5 } else { -1.5 });
        assert_eq!(estimate_noise(&checker), 1.5);
    }

    #[test]
    fn percentile_convention() {
        let img = Array2::from_shape_fn((10, 10), |(r, c)| (r * 10 + c + 1) as f64);
        let trimmed = percentile_trim(&img, 5.0).unwrap();
        for (a, b) in trimmed.iter().zip(img.iter()) {
            if *b < 5.95 {
                assert!((a - 5.95).abs() < 1e-12);
            } else {
                assert_eq!(a, b);
            }
        }
        assert_eq!(percentile_trim(&img, 0.0).unwrap(), img);

        // 21 pixels put the 5% rank on an order statistic, where the clipped
        // image is its own 5th-percentile floor.
        let img = Array2::from_shape_fn((3, 7), |(r, c)| ((r * 7 + c) * 37 % 21) as f64 - 4.0);
        let trimmed = percentile_trim(&img, 5.0).unwrap();
        let floor = percentile(trimmed.as_slice().unwrap(), 5.0).unwrap();
        assert!(trimmed.iter().all(|v| *v >= floor));
        assert_eq!(percentile_trim(&trimmed, 5.0).unwrap(), trimmed);
        assert!(percentile_trim(&img, 50.0).is_err());
    }

    #[test]
    fn zero_data_terminates_early() {
        let op = DeconvolutionOperator::circular(&blur_kernel(6, 6));
        let result = zero_shot_pnp(&Array2::zeros((6, 6)), &op, &PnPConfig::default()).unwrap();
        assert!(result.early_termination);
        assert!(result.image.iter().all(|v| *v == 0.0));
        assert!(result.iterations.is_empty());
    }

    #[test]
    fn schedule_bookkeeping() {
        let op = DeconvolutionOperator::circular(&blur_kernel(10, 10));
        let u = op.apply(&test_image(10, 10));
        let config = PnPConfig {
            nu0: 1e-2,
            ..PnPConfig::default()
        };
        let result = zero_shot_pnp(&u, &op, &config).unwrap();
        assert_eq!(result.iterations.len(), 10);
        assert!(result.schedule_deviation(config.nu0) < 1e-12);
        assert_eq!(result.iterations[0].nu, config.nu0);
        assert!((result.iterations[0].nu_next / config.nu0 - 1.0).abs() < 1e-15);
        assert_eq!(result.state.lambda, Some(result.iterations[0].lambda));
    }

    #[test]
    fn config_validation() {
        let mut c = PnPConfig {
            nu0: 0.0,
            ..PnPConfig::default()
        };
        assert!(c.validate().is_err());
        c.nu0 = 1e-5;
        c.trim_percentile = 50.0;
        assert!(c.validate().is_err());
        c.trim_percentile = -1.0;
        assert!(c.validate().is_err());
    }
}
