//! Field-free-point scanner geometry and trajectories.
//!
//! Field quantities follow the usual MPI convention of quoting `mu0 * H` in
//! tesla: the gradient is stored as `mu0 G` (T/m) and drive amplitudes as
//! `mu0 A` (T). Position-space amplitudes are `A / |G|` per axis.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::physics::VACUUM_PERMEABILITY;

#[derive(Clone, Debug, PartialEq)]
pub struct Excitation {
    /// `mu0 A_e`, tesla.
    pub amplitude: f64,
    /// Hertz.
    pub frequency: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScannerConfig {
    /// Diagonal of `mu0 G`, T/m.
    pub gradient: [f64; 2],
    /// `mu0 A` per axis, tesla.
    pub drive_amplitudes: [f64; 2],
    pub drive_frequencies: [f64; 2],
    /// Optional high-frequency excitation superposed on the x drive.
    pub excitation: Option<Excitation>,
    pub sample_rate: f64,
    pub repetition_time: f64,
    /// Constant receive-coil sensitivity `R`.
    pub sensitivity: [[f64; 2]; 2],
}

impl ScannerConfig {
    /// Preclinical Lissajous scanner: base frequency 2.5 MHz with dividers
    /// 102/96, 12 mT drive amplitudes, `mu0 G = diag(-1, -1)` T/m and 1632
    /// samples per 6.528e-4 s repetition.
    pub fn preclinical() -> Self {
        Self {
            gradient: [-1.0, -1.0],
            drive_amplitudes: [0.012, 0.012],
            drive_frequencies: [2.5e6 / 102.0, 2.5e6 / 96.0],
            excitation: None,
            sample_rate: 2.5e6,
            repetition_time: 6.528e-4,
            sensitivity: [[1.0, 0.0], [0.0, 1.0]],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for g in self.gradient {
            if g == 0.0 || !g.is_finite() {
                return Err(Error::invalid("gradient", "diagonal entries must be nonzero"));
            }
        }
        if !(self.sample_rate > 0.0 && self.repetition_time > 0.0) {
            return Err(Error::invalid(
                "sample_rate",
                "sample rate and repetition time must be > 0",
            ));
        }
        let samples = self.sample_rate * self.repetition_time;
        if (samples - samples.round()).abs() > 1e-6 * samples.max(1.0) || samples.round() < 1.0 {
            return Err(Error::invalid(
                "sample_rate",
                format!("sample_rate * repetition_time = {samples} is not a positive integer"),
            ));
        }
        Ok(())
    }

    /// Samples in one repetition period.
    pub fn samples_per_period(&self) -> usize {
        (self.sample_rate * self.repetition_time).round() as usize
    }

    /// Diagonal of `G` in (A/m)/m.
    pub fn gradient_field(&self) -> [f64; 2] {
        [
            self.gradient[0] / VACUUM_PERMEABILITY,
            self.gradient[1] / VACUUM_PERMEABILITY,
        ]
    }

    /// Drive amplitudes converted to meters.
    pub fn position_amplitudes(&self) -> Result<[f64; 2]> {
        self.validate_gradient()?;
        Ok([
            self.drive_amplitudes[0] / self.gradient[0].abs(),
            self.drive_amplitudes[1] / self.gradient[1].abs(),
        ])
    }

    fn validate_gradient(&self) -> Result<()> {
        if self.gradient.contains(&0.0) {
            return Err(Error::invalid("gradient", "zero gradient entry"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectorySource {
    Analytic,
    Sampled,
}

/// FFP positions (m) and velocities (m/s) at sample times (s).
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
    pub source: TrajectorySource,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Mean sample rate implied by the time stamps.
    pub fn sample_rate(&self) -> f64 {
        let n = self.len();
        if n < 2 {
            return 0.0;
        }
        (n - 1) as f64 / (self.times[n - 1] - self.times[0])
    }

    /// Total path length in meters.
    pub fn path_length(&self) -> f64 {
        self.positions
            .windows(2)
            .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
            .sum()
    }

    /// Per-axis (min, max) of the positions.
    pub fn bounds(&self) -> [[f64; 2]; 2] {
        let mut b = [[f64::INFINITY, f64::NEG_INFINITY]; 2];
        for p in &self.positions {
            for axis in 0..2 {
                b[axis][0] = b[axis][0].min(p[axis]);
                b[axis][1] = b[axis][1].max(p[axis]);
            }
        }
        b
    }
}

fn uniform_times(period: f64, sample_count: usize) -> Vec<f64> {
    let dt = period / sample_count as f64;
    (0..sample_count).map(|k| k as f64 * dt).collect()
}

/// Co-sinusoidal Lissajous trajectory `r_i(t) = A_i cos(2 pi f_i t)` sampled
/// uniformly over one repetition period.
pub fn lissajous(config: &ScannerConfig, sample_count: usize) -> Result<Trajectory> {
    let amp = config.position_amplitudes()?;
    if sample_count == 0 {
        return Err(Error::invalid("sample_count", "must be > 0"));
    }
    let w = [
        2.0 * PI * config.drive_frequencies[0],
        2.0 * PI * config.drive_frequencies[1],
    ];
    let times = uniform_times(config.repetition_time, sample_count);
    let positions = times
        .iter()
        .map(|&t| [amp[0] * (w[0] * t).cos(), amp[1] * (w[1] * t).cos()])
        .collect();
    let velocities = times
        .iter()
        .map(|&t| [-amp[0] * w[0] * (w[0] * t).sin(), -amp[1] * w[1] * (w[1] * t).sin()])
        .collect();
    Ok(Trajectory {
        times,
        positions,
        velocities,
        source: TrajectorySource::Analytic,
    })
}

/// Sinusoidal drive with a superposed excitation on x:
/// `r_x = A_x sin(2 pi f_x t) + A_e sin(2 pi f_e t)`, `r_y = A_y sin(2 pi f_y t)`.
pub fn excited_trajectory(config: &ScannerConfig, sample_count: usize) -> Result<Trajectory> {
    let amp = config.position_amplitudes()?;
    let excitation = config
        .excitation
        .as_ref()
        .ok_or_else(|| Error::invalid("excitation", "excitation amplitude/frequency not set"))?;
    if sample_count == 0 {
        return Err(Error::invalid("sample_count", "must be > 0"));
    }
    let amp_e = excitation.amplitude / config.gradient[0].abs();
    let w = [
        2.0 * PI * config.drive_frequencies[0],
        2.0 * PI * config.drive_frequencies[1],
    ];
    let we = 2.0 * PI * excitation.frequency;
    let times = uniform_times(config.repetition_time, sample_count);
    let positions = times
        .iter()
        .map(|&t| {
            [
                amp[0] * (w[0] * t).sin() + amp_e * (we * t).sin(),
                amp[1] * (w[1] * t).sin(),
            ]
        })
        .collect();
    let velocities = times
        .iter()
        .map(|&t| {
            [
                amp[0] * w[0] * (w[0] * t).cos() + amp_e * we * (we * t).cos(),
                amp[1] * w[1] * (w[1] * t).cos(),
            ]
        })
        .collect();
    Ok(Trajectory {
        times,
        positions,
        velocities,
        source: TrajectorySource::Analytic,
    })
}

/// Trajectory from measured positions; velocities by forward differences, the
/// last sample repeating the final difference.
pub fn trajectory_from_samples(positions: Vec<[f64; 2]>, times: Vec<f64>) -> Result<Trajectory> {
    if positions.len() != times.len() {
        return Err(Error::LengthMismatch {
            expected: times.len(),
            actual: positions.len(),
        });
    }
    if times.len() < 2 {
        return Err(Error::invalid("times", "at least two samples are required"));
    }
    if let Some(k) = times.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::NonMonotoneTimes(k + 1));
    }
    let mut velocities: Vec<[f64; 2]> = positions
        .windows(2)
        .zip(times.windows(2))
        .map(|(p, t)| {
            let dt = t[1] - t[0];
            [(p[1][0] - p[0][0]) / dt, (p[1][1] - p[0][1]) / dt]
        })
        .collect();
    let last = *velocities.last().expect("at least one difference");
    velocities.push(last);
    Ok(Trajectory {
        times,
        positions,
        velocities,
        source: TrajectorySource::Sampled,
    })
}

/// Keeps every `keep_every`-th sample starting with the first. Velocities are
/// carried over unchanged.
pub fn decimate(trajectory: &Trajectory, keep_every: usize) -> Result<Trajectory> {
    if keep_every == 0 {
        return Err(Error::invalid("keep_every", "must be >= 1"));
    }
    if trajectory.is_empty() {
        return Err(Error::Empty("decimated trajectory"));
    }
    let pick = |v: &[[f64; 2]]| v.iter().step_by(keep_every).copied().collect::<Vec<_>>();
    Ok(Trajectory {
        times: trajectory.times.iter().step_by(keep_every).copied().collect(),
        positions: pick(&trajectory.positions),
        velocities: pick(&trajectory.velocities),
        source: trajectory.source,
    })
}

/// Applied field `G (x - r(t))` in A/m.
pub fn field_at(config: &ScannerConfig, x: [f64; 2], t_index: usize, trajectory: &Trajectory) -> [f64; 2] {
    let g = config.gradient_field();
    let r = trajectory.positions[t_index];
    [g[0] * (x[0] - r[0]), g[1] * (x[1] - r[1])]
}
