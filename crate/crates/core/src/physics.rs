//! Langevin-model quantities: the Langevin function, the matrix-valued MPI
//! kernel, its trace, and the saturation field.
//!
//! All kernel evaluations work in normalized field coordinates `y / h`. For
//! arguments below the series cutoff, Taylor series of `coth(z) - 1/z`
//! replace the closed forms, which lose relative precision to cancellation as
//! `z -> 0`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::GridGeometry;

pub const BOLTZMANN: f64 = 1.380_648_52e-23;
pub const VACUUM_PERMEABILITY: f64 = 4.0 * PI * 1e-7;

/// Default magnitude below which the Taylor series is used.
pub const DEFAULT_TAYLOR_CUTOFF: f64 = 0.5;

/// Largest supported cutoff. The series has radius of convergence pi; at 1 the
/// 20 retained terms are accurate far beyond double precision.
pub const MAX_TAYLOR_CUTOFF: f64 = 1.0;

const SERIES_TERMS: usize = 20;

/// Coefficients `c_n` of `coth(z) - 1/z = sum_{n>=1} c_n z^(2n-1)`, with
/// `c_n = (-1)^(n+1) 2 zeta(2n) / pi^(2n)`.
fn series_coefficients() -> &'static [f64; SERIES_TERMS] {
    static COEFFS: OnceLock<[f64; SERIES_TERMS]> = OnceLock::new();
    COEFFS.get_or_init(|| {
        // Exact rationals for the leading terms; zeta(2n) summed directly beyond.
        let exact = [
            1.0 / 3.0,
            -1.0 / 45.0,
            2.0 / 945.0,
            -1.0 / 4725.0,
            2.0 / 93555.0,
            -1382.0 / 638_512_875.0,
            4.0 / 18_243_225.0,
            -3617.0 / 162_820_783_125.0,
            87734.0 / 38_979_295_480_125.0,
            -349_222.0 / 1_531_329_465_290_625.0,
        ];
        let mut c = [0.0; SERIES_TERMS];
        c[..exact.len()].copy_from_slice(&exact);
        for (i, slot) in c.iter_mut().enumerate().skip(exact.len()) {
            let n = (i + 1) as i32;
            let zeta: f64 = (1..=40).map(|k| (k as f64).powi(-2 * n)).sum();
            let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
            *slot = sign * 2.0 * zeta / PI.powi(2 * n);
        }
        c
    })
}

/// `sum_n c_n z^(2n-2)`, i.e. `L(z)/z` near zero.
fn langevin_over_z_series(z: f64) -> f64 {
    let z2 = z * z;
    series_coefficients().iter().rev().fold(0.0, |acc, &c| acc * z2 + c)
}

/// `sum_n (2n-1) c_n z^(2n-2)`, i.e. `L'(z)` near zero.
fn langevin_prime_series(z: f64) -> f64 {
    let z2 = z * z;
    series_coefficients()
        .iter()
        .enumerate()
        .rev()
        .fold(0.0, |acc, (i, &c)| acc * z2 + (2 * i + 1) as f64 * c)
}

/// Langevin function `L(z) = coth(z) - 1/z` with the default cutoff.
pub fn langevin(z: f64) -> f64 {
    langevin_with_cutoff(z, DEFAULT_TAYLOR_CUTOFF)
}

pub fn langevin_with_cutoff(z: f64, cutoff: f64) -> f64 {
    if z.abs() < cutoff {
        z * langevin_over_z_series(z)
    } else {
        1.0 / z.tanh() - 1.0 / z
    }
}

/// `L'(z) = 1/z^2 - 1/sinh^2(z)` with the default cutoff.
pub fn langevin_prime(z: f64) -> f64 {
    langevin_prime_with_cutoff(z, DEFAULT_TAYLOR_CUTOFF)
}

pub fn langevin_prime_with_cutoff(z: f64, cutoff: f64) -> f64 {
    if z.abs() < cutoff {
        langevin_prime_series(z)
    } else {
        let s = z.sinh();
        1.0 / (z * z) - 1.0 / (s * s)
    }
}

/// `L(z)/z`, continuous at zero with limit 1/3.
pub fn langevin_over_z_with_cutoff(z: f64, cutoff: f64) -> f64 {
    if z.abs() < cutoff {
        langevin_over_z_series(z)
    } else {
        langevin_with_cutoff(z, cutoff) / z
    }
}

/// Physical parameters of the particle ensemble (SI units).
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleModel {
    /// Kelvin.
    pub temperature: f64,
    /// J / (m^3 T).
    pub saturation_magnetization: f64,
    /// Meters.
    pub core_diameter: f64,
    pub boltzmann_constant: f64,
    pub vacuum_permeability: f64,
}

impl ParticleModel {
    pub fn new(temperature: f64, saturation_magnetization: f64, core_diameter: f64) -> Result<Self> {
        let model = Self {
            temperature,
            saturation_magnetization,
            core_diameter,
            boltzmann_constant: BOLTZMANN,
            vacuum_permeability: VACUUM_PERMEABILITY,
        };
        model.validate()?;
        Ok(model)
    }

    /// Tracer used with the preclinical Lissajous scanner: 293 K, 4.74e5 J/(m^3 T), 21 nm.
    pub fn reference() -> Self {
        Self::new(293.0, 4.74e5, 21e-9).expect("reference particle model is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("temperature", self.temperature),
            ("saturation_magnetization", self.saturation_magnetization),
            ("core_diameter", self.core_diameter),
            ("boltzmann_constant", self.boltzmann_constant),
            ("vacuum_permeability", self.vacuum_permeability),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid(name, format!("{value} must be finite and > 0")));
            }
        }
        let h = hsat(self);
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::invalid("hsat", format!("derived value {h} is not positive")));
        }
        Ok(())
    }
}

/// Saturation field `k_B T / (mu0 M_sat (pi/6) d^3)` in A/m.
pub fn hsat(model: &ParticleModel) -> f64 {
    let volume = PI / 6.0 * model.core_diameter.powi(3);
    model.boltzmann_constant * model.temperature / (model.vacuum_permeability * model.saturation_magnetization * volume)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpec {
    /// Resolution parameter in A/m, usually the saturation field.
    pub h: f64,
    pub dimension: usize,
    pub taylor_cutoff: f64,
}

impl KernelSpec {
    pub fn new(h: f64, dimension: usize) -> Result<Self> {
        let spec = Self {
            h,
            dimension,
            taylor_cutoff: DEFAULT_TAYLOR_CUTOFF,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(Error::invalid("h", format!("{} must be > 0", self.h)));
        }
        if !(1..=3).contains(&self.dimension) {
            return Err(Error::invalid("dimension", format!("{} not in 1..=3", self.dimension)));
        }
        if !(self.taylor_cutoff > 0.0 && self.taylor_cutoff <= MAX_TAYLOR_CUTOFF) {
            return Err(Error::invalid(
                "taylor_cutoff",
                format!("{} not in (0, {MAX_TAYLOR_CUTOFF}]", self.taylor_cutoff),
            ));
        }
        Ok(())
    }

    /// Radial and transverse eigenvalues of `K(y/h)` (before the 1/h factor)
    /// together with the normalized argument.
    fn coefficients(&self, y: &[f64]) -> (f64, f64, f64) {
        let r = y.iter().map(|v| (v / self.h).powi(2)).sum::<f64>().sqrt();
        let radial = langevin_prime_with_cutoff(r, self.taylor_cutoff);
        let transverse = langevin_over_z_with_cutoff(r, self.taylor_cutoff);
        (r, radial, transverse)
    }

    fn entry_unchecked(&self, y: &[f64], row: usize, col: usize) -> f64 {
        let (r, radial, transverse) = self.coefficients(y);
        let diag = if row == col { transverse } else { 0.0 };
        let projector = if r > 0.0 {
            (y[row] / self.h) * (y[col] / self.h) / (r * r)
        } else {
            0.0
        };
        ((radial - transverse) * projector + diag) / self.h
    }
}

fn check_dimension(y: &[f64], spec: &KernelSpec) {
    assert_eq!(
        y.len(),
        spec.dimension,
        "field vector length must match the kernel dimension"
    );
}

/// The rescaled MPI kernel `K_h(y) = K(y/h)/h` as an `n x n` matrix.
pub fn kernel_matrix(y: &[f64], spec: &KernelSpec) -> Array2<f64> {
    check_dimension(y, spec);
    let n = spec.dimension;
    Array2::from_shape_fn((n, n), |(i, j)| spec.entry_unchecked(y, i, j))
}

/// Trace of the rescaled kernel, `(L'(r) + (n-1) L(r)/r) / h` with `r = |y/h|`.
pub fn trace_kernel(y: &[f64], spec: &KernelSpec) -> f64 {
    check_dimension(y, spec);
    let (_, radial, transverse) = spec.coefficients(y);
    (radial + (spec.dimension - 1) as f64 * transverse) / spec.h
}

pub fn kernel_entry(y: &[f64], row: usize, col: usize, spec: &KernelSpec) -> Result<f64> {
    check_dimension(y, spec);
    if row >= spec.dimension || col >= spec.dimension {
        return Err(Error::IndexOutOfRange {
            row,
            col,
            dimension: spec.dimension,
        });
    }
    Ok(spec.entry_unchecked(y, row, col))
}

/// Which scalar function of the kernel to sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelSelector {
    Trace,
    Entry(usize, usize),
}

impl KernelSelector {
    fn evaluate(self, y: &[f64], spec: &KernelSpec) -> Result<f64> {
        match self {
            KernelSelector::Trace => Ok(trace_kernel(y, spec)),
            KernelSelector::Entry(r, c) => kernel_entry(y, r, c, spec),
        }
    }
}

/// Signed offset represented by index `i` of a periodic axis of length `n`
/// (zero shift at index 0, negative shifts wrapped to the end).
pub fn wrapped_offset(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// Samples a kernel function on a `rows x cols` periodic domain with the given
/// pixel spacing. Pixel offsets are mapped to field space through the diagonal
/// selection-field gradient (A/m per meter) before evaluation. The zero-shift
/// sample sits at `[0, 0]`.
pub fn sample_kernel(
    rows: usize,
    cols: usize,
    spacing: [f64; 2],
    gradient: [f64; 2],
    spec: &KernelSpec,
    selector: KernelSelector,
) -> Result<Array2<f64>> {
    spec.validate()?;
    if spec.dimension != 2 {
        return Err(Error::invalid("dimension", "discretized kernels are two-dimensional"));
    }
    if !(spacing.iter().all(|s| *s > 0.0)) {
        return Err(Error::DegenerateGrid("zero spacing".into()));
    }
    if gradient.iter().any(|g| *g == 0.0 || !g.is_finite()) {
        return Err(Error::invalid("gradient", "diagonal entries must be nonzero"));
    }
    // Validate the selector once rather than per pixel.
    selector.evaluate(&[0.0, 0.0], spec)?;
    let mut out = Array2::zeros((rows, cols));
    for ((r, c), v) in out.indexed_iter_mut() {
        let dx = wrapped_offset(c, cols) * spacing[0];
        let dy = wrapped_offset(r, rows) * spacing[1];
        let y = [gradient[0] * dx, gradient[1] * dy];
        *v = selector.evaluate(&y, spec)?;
    }
    Ok(out)
}

/// Kernel image with the same pixel count as `grid`, laid out for circular
/// convolution (peak at `[0, 0]`). Values are raw point samples; multiply by
/// the pixel area to approximate the convolution integral.
pub fn discretize_kernel(
    grid: &GridGeometry,
    gradient: [f64; 2],
    spec: &KernelSpec,
    selector: KernelSelector,
) -> Result<Array2<f64>> {
    grid.validate()?;
    sample_kernel(grid.rows, grid.cols, grid.spacing, gradient, spec, selector)
}

/// Moves the zero-shift sample from `[0, 0]` to the image center for display.
pub fn fftshift(image: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = image.dim();
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        image[[(r + rows - rows / 2) % rows, (c + cols - cols / 2) % cols]]
    })
}
