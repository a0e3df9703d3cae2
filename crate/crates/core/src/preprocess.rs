//! Frequency-domain signal conditioning: transfer-function estimation and
//! correction, per-bin SNR estimation and thresholding.
//!
//! All spectra here are one-sided: `n/2 + 1` bins for a real series of length
//! `n`. Operations that return time series rebuild the conjugate-symmetric
//! spectrum before the inverse transform, so their output is real.
//!
//! SNR is defined per bin as fitted-signal power over residual power of the
//! complex least-squares fit `measured ~ a * simulated` across a set of spectra
//! pairs.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{dft_real, hermitian_extend, idft_to_real, one_sided_len};
use crate::forward::ScanSignal;

/// Spectra for one acquisition: `channels x bins`.
pub type MultiSpectrum = Vec<Vec<Complex64>>;

/// Finite stand-in for an infinite SNR (zero residual).
pub const SNR_CAP: f64 = 1e15;

/// Bins whose least-squares denominator falls below this fraction of the
/// channel's largest one are unusable.
pub const DENOMINATOR_GUARD: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct TransferFunction {
    /// Per channel, one-sided complex response.
    pub spectra: Vec<Vec<Complex64>>,
    /// Per channel and bin, whether division is well defined.
    pub usable: Vec<Vec<bool>>,
}

impl TransferFunction {
    pub fn bin_count(&self) -> usize {
        self.spectra.first().map_or(0, Vec::len)
    }

    /// Response built directly from known spectra; zero bins are unusable.
    pub fn from_spectra(spectra: Vec<Vec<Complex64>>) -> Self {
        let usable = spectra
            .iter()
            .map(|ch| {
                let max = ch.iter().map(|c| c.norm_sqr()).fold(0.0, f64::max);
                ch.iter()
                    .map(|c| max > 0.0 && c.norm_sqr() > DENOMINATOR_GUARD * max)
                    .collect()
            })
            .collect();
        Self { spectra, usable }
    }

    /// Response of a periodic filter kernel per channel.
    pub fn from_filter(kernels: &[Vec<f64>]) -> Self {
        Self::from_spectra(kernels.iter().map(|k| one_sided_spectrum(k)).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnrProfile {
    /// Per channel, SNR per one-sided bin.
    pub snr: Vec<Vec<f64>>,
    /// Per-channel threshold; bins with SNR below it are discarded.
    pub thresholds: Vec<f64>,
}

impl SnrProfile {
    pub fn with_thresholds(mut self, thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.len() != self.snr.len() {
            return Err(Error::LengthMismatch {
                expected: self.snr.len(),
                actual: thresholds.len(),
            });
        }
        if thresholds.iter().any(|t| t.is_nan() || *t < 0.0) {
            return Err(Error::invalid("thresholds", "must be >= 0"));
        }
        self.thresholds = thresholds;
        Ok(self)
    }

    pub fn bin_count(&self) -> usize {
        self.snr.first().map_or(0, Vec::len)
    }

    /// Geometric mean of the SNR of `channel` over `bins`, ignoring zero bins.
    pub fn geometric_mean(&self, channel: usize, bins: std::ops::Range<usize>) -> f64 {
        let vals: Vec<f64> = self.snr[channel][bins].iter().copied().filter(|v| *v > 0.0).collect();
        if vals.is_empty() {
            return 0.0;
        }
        (vals.iter().map(|v| v.ln()).sum::<f64>() / vals.len() as f64).exp()
    }
}

pub fn one_sided_spectrum(series: &[f64]) -> Vec<Complex64> {
    let mut full = dft_real(series);
    full.truncate(one_sided_len(series.len()));
    full
}

pub fn signal_spectrum(signal: &ScanSignal) -> MultiSpectrum {
    signal.channels.iter().map(|c| one_sided_spectrum(c)).collect()
}

fn check_pairs(measured: &[MultiSpectrum], simulated: &[MultiSpectrum]) -> Result<(usize, usize)> {
    if measured.is_empty() {
        return Err(Error::Empty("spectra set"));
    }
    if measured.len() != simulated.len() {
        return Err(Error::LengthMismatch {
            expected: measured.len(),
            actual: simulated.len(),
        });
    }
    let channels = measured[0].len();
    let bins = measured[0].first().map_or(0, Vec::len);
    for spectrum in measured.iter().chain(simulated) {
        if spectrum.len() != channels {
            return Err(Error::LengthMismatch {
                expected: channels,
                actual: spectrum.len(),
            });
        }
        for ch in spectrum {
            if ch.len() != bins {
                return Err(Error::LengthMismatch {
                    expected: bins,
                    actual: ch.len(),
                });
            }
        }
    }
    if channels == 0 || bins == 0 {
        return Err(Error::Empty("spectrum bins"));
    }
    Ok((channels, bins))
}

struct Fit {
    coefficient: Complex64,
    denominator: f64,
}

fn fit_bin(measured: &[MultiSpectrum], simulated: &[MultiSpectrum], ch: usize, f: usize) -> Fit {
    let mut num = Complex64::new(0.0, 0.0);
    let mut den = 0.0;
    for (m, s) in measured.iter().zip(simulated) {
        num += m[ch][f] * s[ch][f].conj();
        den += s[ch][f].norm_sqr();
    }
    let coefficient = if den > 0.0 { num / den } else { Complex64::new(0.0, 0.0) };
    Fit {
        coefficient,
        denominator: den,
    }
}

/// Per-bin complex least squares `a_f = sum m conj(s) / sum |s|^2`.
pub fn estimate_transfer_function(measured: &[MultiSpectrum], simulated: &[MultiSpectrum]) -> Result<TransferFunction> {
    let (channels, bins) = check_pairs(measured, simulated)?;
    let mut spectra = vec![vec![Complex64::new(0.0, 0.0); bins]; channels];
    let mut usable = vec![vec![false; bins]; channels];
    let mut any = false;
    for ch in 0..channels {
        let fits: Vec<Fit> = (0..bins).map(|f| fit_bin(measured, simulated, ch, f)).collect();
        let max_den = fits.iter().map(|f| f.denominator).fold(0.0, f64::max);
        for (f, fit) in fits.iter().enumerate() {
            let ok = max_den > 0.0 && fit.denominator > DENOMINATOR_GUARD * max_den;
            usable[ch][f] = ok;
            if ok {
                spectra[ch][f] = fit.coefficient;
                any = true;
            }
        }
    }
    if !any {
        return Err(Error::invalid("simulated_spectra", "all-zero denominator on every bin"));
    }
    Ok(TransferFunction { spectra, usable })
}

/// Divides the signal spectrum by the transfer function. Unusable bins are
/// zeroed when `zero_fill` is set and rejected otherwise.
pub fn correct_transfer_function(signal: &ScanSignal, tf: &TransferFunction, zero_fill: bool) -> Result<ScanSignal> {
    let n = signal.len();
    let bins = one_sided_len(n);
    if tf.bin_count() != bins {
        return Err(Error::LengthMismatch {
            expected: bins,
            actual: tf.bin_count(),
        });
    }
    if tf.spectra.len() != signal.channel_count() {
        return Err(Error::LengthMismatch {
            expected: signal.channel_count(),
            actual: tf.spectra.len(),
        });
    }
    let mut channels = Vec::with_capacity(signal.channel_count());
    for (ch, series) in signal.channels.iter().enumerate() {
        let mut half = one_sided_spectrum(series);
        for (f, value) in half.iter_mut().enumerate() {
            if tf.usable[ch][f] {
                *value /= tf.spectra[ch][f];
            } else if zero_fill {
                *value = Complex64::new(0.0, 0.0);
            } else {
                return Err(Error::UnusableBin { channel: ch, bin: f });
            }
        }
        channels.push(idft_to_real(&hermitian_extend(&half, n)).0);
    }
    ScanSignal::new(channels, signal.sample_rate)
}

/// Zeroes bins with SNR below the channel threshold, and always the DC bin.
pub fn snr_threshold(signal: &ScanSignal, profile: &SnrProfile) -> Result<ScanSignal> {
    let n = signal.len();
    let bins = one_sided_len(n);
    if profile.bin_count() != bins {
        return Err(Error::LengthMismatch {
            expected: bins,
            actual: profile.bin_count(),
        });
    }
    if profile.snr.len() != signal.channel_count() || profile.thresholds.len() != signal.channel_count() {
        return Err(Error::LengthMismatch {
            expected: signal.channel_count(),
            actual: profile.snr.len().min(profile.thresholds.len()),
        });
    }
    let mut channels = Vec::with_capacity(signal.channel_count());
    for (ch, series) in signal.channels.iter().enumerate() {
        let mut half = one_sided_spectrum(series);
        let theta = profile.thresholds[ch];
        for (f, value) in half.iter_mut().enumerate() {
            if f == 0 || profile.snr[ch][f] < theta {
                *value = Complex64::new(0.0, 0.0);
            }
        }
        channels.push(idft_to_real(&hermitian_extend(&half, n)).0);
    }
    ScanSignal::new(channels, signal.sample_rate)
}

/// Per-bin ratio of fitted power to residual power of the least-squares fit
/// used by [`estimate_transfer_function`]. Thresholds default to zero.
pub fn compute_snr(measured: &[MultiSpectrum], simulated: &[MultiSpectrum]) -> Result<SnrProfile> {
    let (channels, bins) = check_pairs(measured, simulated)?;
    let mut snr = vec![vec![0.0; bins]; channels];
    for (ch, row) in snr.iter_mut().enumerate() {
        for (f, out) in row.iter_mut().enumerate() {
            let fit = fit_bin(measured, simulated, ch, f);
            if fit.denominator == 0.0 {
                continue;
            }
            let mut fitted = 0.0;
            let mut residual = 0.0;
            for (m, s) in measured.iter().zip(simulated) {
                let model = fit.coefficient * s[ch][f];
                fitted += model.norm_sqr();
                residual += (m[ch][f] - model).norm_sqr();
            }
            *out = if residual > 0.0 {
                (fitted / residual).min(SNR_CAP)
            } else if fitted > 0.0 {
                SNR_CAP
            } else {
                0.0
            };
        }
    }
    Ok(SnrProfile {
        thresholds: vec![0.0; channels],
        snr,
    })
}
