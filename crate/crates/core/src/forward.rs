//! Forward model: core operator by kernel convolution, signal synthesis along a
//! trajectory, analog filtering and noise.
//!
//! Signals are scale-free: the physical prefactor `-mu0 m R` is fixed to 1 and
//! velocities enter in m/s.

use std::collections::BTreeMap;

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::fft::{dft_real, idft_to_real, CircularConvolution};
use crate::grid::{ConcentrationImage, GridGeometry};
use crate::interp::{stencil, InterpolationScheme, Stencil};
use crate::physics::{sample_kernel, KernelSelector, KernelSpec};
use crate::scanner::{ScannerConfig, Trajectory};

/// Matrix-valued core operator sampled on a grid. Partial fields hold only a
/// subset of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct CoreOperatorField {
    pub entries: BTreeMap<(usize, usize), Array2<f64>>,
    pub dimension: usize,
    pub geometry: GridGeometry,
    pub populated_rows: Vec<usize>,
}

impl CoreOperatorField {
    pub fn entry(&self, row: usize, col: usize) -> Result<&Array2<f64>> {
        self.entries.get(&(row, col)).ok_or(Error::MissingEntry(row, col))
    }
}

/// Per-channel time series over one period.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanSignal {
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: f64,
}

impl ScanSignal {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: f64) -> Result<Self> {
        let len = channels.first().map(Vec::len).ok_or(Error::Empty("signal channels"))?;
        for ch in &channels {
            if ch.len() != len {
                return Err(Error::LengthMismatch {
                    expected: len,
                    actual: ch.len(),
                });
            }
            if ch.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("signal", "non-finite sample"));
            }
        }
        Ok(Self { channels, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    /// Keeps only the listed channels, in the given order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<Self> {
        let picked = channels
            .iter()
            .map(|&c| {
                self.channels
                    .get(c)
                    .cloned()
                    .ok_or_else(|| Error::invalid("channels", format!("channel {c} not present")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(picked, self.sample_rate)
    }
}

pub fn rms(series: &[f64]) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    (series.iter().map(|v| v * v).sum::<f64>() / series.len() as f64).sqrt()
}

/// Linear convolution of `rho` with a sampled kernel function, evaluated on the
/// image grid and scaled by the pixel area. `padding` extra pixels per axis are
/// added before the circular FFT; `padding >= max(rows, cols) - 1` makes the
/// result exactly the linear (non-wrapping) convolution.
pub fn convolve_with_kernel(
    rho: &ConcentrationImage,
    gradient: [f64; 2],
    spec: &KernelSpec,
    selector: KernelSelector,
    padding: usize,
) -> Result<Array2<f64>> {
    let grid = &rho.geometry;
    grid.validate()?;
    let (rows, cols) = grid.shape();
    let (pr, pc) = (rows + padding.min(rows - 1), cols + padding.min(cols - 1));
    let kernel = sample_kernel(pr, pc, grid.spacing, gradient, spec, selector)?;
    let mut padded = Array2::zeros((pr, pc));
    padded.slice_mut(s![..rows, ..cols]).assign(&rho.values);
    let conv = CircularConvolution::new(&kernel);
    let full = conv.apply(&padded);
    let area = grid.pixel_area();
    Ok(full.slice(s![..rows, ..cols]).mapv(|v| v * area))
}

/// Padding that yields exact linear convolution on `grid`.
pub fn full_padding(grid: &GridGeometry) -> usize {
    grid.rows.max(grid.cols).saturating_sub(1)
}

/// `A_h[rho] = K_h * rho` for every matrix entry, with the spatial offset mapped
/// to field units through the selection-field gradient.
pub fn core_operator(rho: &ConcentrationImage, spec: &KernelSpec, config: &ScannerConfig) -> Result<CoreOperatorField> {
    core_operator_padded(rho, spec, config, full_padding(&rho.geometry))
}

pub fn core_operator_padded(
    rho: &ConcentrationImage,
    spec: &KernelSpec,
    config: &ScannerConfig,
    padding: usize,
) -> Result<CoreOperatorField> {
    if spec.dimension != 2 {
        return Err(Error::GeometryMismatch(format!(
            "kernel dimension {} on a 2D grid",
            spec.dimension
        )));
    }
    if rho.values.dim() != rho.geometry.shape() {
        return Err(Error::GeometryMismatch("image and geometry disagree".into()));
    }
    config.validate()?;
    let gradient = config.gradient_field();
    let mut entries = BTreeMap::new();
    for row in 0..2 {
        for col in row..2 {
            let image = convolve_with_kernel(rho, gradient, spec, KernelSelector::Entry(row, col), padding)?;
            if col != row {
                entries.insert((col, row), image.clone());
            }
            entries.insert((row, col), image);
        }
    }
    Ok(CoreOperatorField {
        entries,
        dimension: 2,
        geometry: rho.geometry.clone(),
        populated_rows: vec![0, 1],
    })
}

/// Interpolation stencils for every trajectory sample.
pub fn trajectory_stencils(
    grid: &GridGeometry,
    trajectory: &Trajectory,
    scheme: InterpolationScheme,
) -> Result<Vec<Stencil>> {
    trajectory.positions.iter().map(|&p| stencil(grid, p, scheme)).collect()
}

/// `s_i(t_k) = sum_j I[A_ij](r_k) v_j(t_k)` for each requested row `i`.
pub fn sample_field(
    field: &CoreOperatorField,
    trajectory: &Trajectory,
    scheme: InterpolationScheme,
    rows: &[usize],
) -> Result<ScanSignal> {
    let stencils = trajectory_stencils(&field.geometry, trajectory, scheme)?;
    let mut channels = Vec::with_capacity(rows.len());
    for &row in rows {
        let flats = (0..field.dimension)
            .map(|col| {
                let e = field.entry(row, col)?;
                Ok(e.as_standard_layout().iter().copied().collect::<Vec<f64>>())
            })
            .collect::<Result<Vec<_>>>()?;
        let series = stencils
            .iter()
            .zip(&trajectory.velocities)
            .map(|(st, v)| flats.iter().zip(v).map(|(f, vj)| st.apply(f) * vj).sum())
            .collect();
        channels.push(series);
    }
    ScanSignal::new(channels, trajectory.sample_rate())
}

/// Noise-free signal of concentration `rho` along `trajectory`, both channels.
pub fn simulate_signal(
    rho: &ConcentrationImage,
    trajectory: &Trajectory,
    spec: &KernelSpec,
    config: &ScannerConfig,
    scheme: InterpolationScheme,
) -> Result<ScanSignal> {
    let field = core_operator(rho, spec, config)?;
    sample_field(&field, trajectory, scheme, &[0, 1])
}

/// Circular convolution of each channel with a periodic filter kernel. A single
/// kernel is applied to every channel; otherwise one kernel per channel.
pub fn apply_analog_filter(signal: &ScanSignal, kernels: &[Vec<f64>]) -> Result<ScanSignal> {
    if kernels.len() != 1 && kernels.len() != signal.channel_count() {
        return Err(Error::LengthMismatch {
            expected: signal.channel_count(),
            actual: kernels.len(),
        });
    }
    let n = signal.len();
    let mut channels = Vec::with_capacity(signal.channel_count());
    for (c, series) in signal.channels.iter().enumerate() {
        let kernel = &kernels[if kernels.len() == 1 { 0 } else { c }];
        if kernel.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: kernel.len(),
            });
        }
        let mut spec = dft_real(series);
        for (s, k) in spec.iter_mut().zip(dft_real(kernel)) {
            *s *= k;
        }
        channels.push(idft_to_real(&spec).0);
    }
    ScanSignal::new(channels, signal.sample_rate)
}

/// Periodic impulse response of a first-order low-pass with -3 dB frequency
/// `cutoff`, `h[k] = (1 - a) a^k / (1 - a^n)` with `a = exp(-2 pi cutoff / fs)`.
/// The taps sum to 1.
pub fn first_order_lowpass(n: usize, cutoff: f64, sample_rate: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Empty("filter kernel"));
    }
    if !(cutoff > 0.0 && cutoff.is_finite() && sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(Error::invalid(
            "filter_cutoff",
            "cutoff and sample rate must be finite and > 0",
        ));
    }
    let a = (-2.0 * std::f64::consts::PI * cutoff / sample_rate).exp();
    let norm = (1.0 - a) / (1.0 - a.powi(n as i32));
    Ok((0..n).map(|k| norm * a.powi(k as i32)).collect())
}

/// Adds white Gaussian noise with standard deviation `relative_level * RMS`
/// per channel, reproducible from `seed`.
pub fn add_noise(signal: &ScanSignal, relative_level: f64, seed: u64) -> Result<ScanSignal> {
    if !(relative_level >= 0.0 && relative_level.is_finite()) {
        return Err(Error::invalid("relative_level", "must be finite and >= 0"));
    }
    if relative_level == 0.0 {
        return Ok(signal.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels = signal
        .channels
        .iter()
        .map(|series| {
            let std = relative_level * rms(series);
            let normal = Normal::new(0.0, std).map_err(|e| Error::invalid("relative_level", e.to_string()))?;
            Ok(series.iter().map(|v| v + normal.sample(&mut rng)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    ScanSignal::new(channels, signal.sample_rate)
}
