//! Denoisers plugged into the PnP loop and the external denoiser protocol.
//!
//! Every denoiser sees the image affinely mapped to `[0, 1]` with `sigma`
//! expressed in that range; [`denoise`] performs the mapping and its inverse.
//!
//! External protocol (all little-endian), request on the child's stdin and
//! response on its stdout:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "ZSPD"
//! 4       4     u32 version (1)
//! 8       4     u32 height
//! 12      4     u32 width
//! 16      8     f64 sigma (normalized range)
//! 24      8*h*w f64 pixels, row-major, in [0, 1]
//! ```
//!
//! The response repeats the header (same version, height and width) followed by
//! the denoised pixels.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const PROTOCOL_MAGIC: &[u8; 4] = b"ZSPD";
pub const PROTOCOL_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

#[derive(Clone, Debug, PartialEq)]
pub enum DenoiserRef {
    /// Returns its input; isolates the data step in experiments.
    Identity,
    /// Gaussian blur with standard deviation `width_per_sigma * sigma` pixels.
    GaussianBlur {
        width_per_sigma: f64,
    },
    /// ROF total-variation proximal map with weight `weight_per_sigma2 * sigma^2`.
    TotalVariation {
        weight_per_sigma2: f64,
        iterations: usize,
    },
    External(ExternalDenoiser),
}

impl Default for DenoiserRef {
    fn default() -> Self {
        DenoiserRef::GaussianBlur { width_per_sigma: 1.0 }
    }
}

impl DenoiserRef {
    pub fn validate(&self) -> Result<()> {
        match self {
            DenoiserRef::Identity => Ok(()),
            DenoiserRef::GaussianBlur { width_per_sigma } => {
                if !(*width_per_sigma >= 0.0 && width_per_sigma.is_finite()) {
                    return Err(Error::invalid("width_per_sigma", "must be finite and >= 0"));
                }
                Ok(())
            }
            DenoiserRef::TotalVariation {
                weight_per_sigma2,
                iterations,
            } => {
                if !(*weight_per_sigma2 >= 0.0 && weight_per_sigma2.is_finite()) {
                    return Err(Error::invalid("weight_per_sigma2", "must be finite and >= 0"));
                }
                if *iterations == 0 {
                    return Err(Error::invalid("tv_iterations", "must be > 0"));
                }
                Ok(())
            }
            DenoiserRef::External(ext) => ext.validate(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DenoiserRef::Identity => "identity",
            DenoiserRef::GaussianBlur { .. } => "gaussian-blur",
            DenoiserRef::TotalVariation { .. } => "total-variation",
            DenoiserRef::External(_) => "external",
        }
    }
}

/// Denoises `image` at noise level `sigma` (image units). The image is mapped
/// to `[0, 1]`, denoised with `sigma / (max - min)`, and mapped back. Constant
/// images are returned unchanged.
pub fn denoise(image: &Array2<f64>, sigma: f64, denoiser: &DenoiserRef) -> Result<Array2<f64>> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid("sigma", "must be >= 0"));
    }
    if image.is_empty() {
        return Err(Error::Empty("image"));
    }
    let lo = image.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = image.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return Ok(image.clone());
    }
    let normalized = image.mapv(|v| (v - lo) / range);
    let s = sigma / range;
    let out = match denoiser {
        DenoiserRef::Identity => normalized,
        DenoiserRef::GaussianBlur { width_per_sigma } => gaussian_blur(&normalized, width_per_sigma * s),
        DenoiserRef::TotalVariation {
            weight_per_sigma2,
            iterations,
        } => tv_denoise(&normalized, weight_per_sigma2 * s * s, *iterations),
        DenoiserRef::External(ext) => ext.denoise(&normalized, s)?,
    };
    Ok(out.mapv(|v| v * range + lo))
}

fn gaussian_taps(width: f64) -> Vec<f64> {
    let radius = (3.0 * width).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * width * width)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable Gaussian blur with replicated edges. Widths below 1e-3 pixels are
/// treated as identity.
pub fn gaussian_blur(image: &Array2<f64>, width: f64) -> Array2<f64> {
    if !(width > 1e-3) {
        return image.clone();
    }
    let taps = gaussian_taps(width);
    let radius = (taps.len() / 2) as isize;
    let (rows, cols) = image.dim();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = Array2::<f64>::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            tmp[[r, c]] = taps
                .iter()
                .enumerate()
                .map(|(t, w)| w * image[[r, clamp(c as isize + t as isize - radius, cols)]])
                .sum();
        }
    }
    let mut out = Array2::<f64>::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            out[[r, c]] = taps
                .iter()
                .enumerate()
                .map(|(t, w)| w * tmp[[clamp(r as isize + t as isize - radius, rows), c]])
                .sum();
        }
    }
    out
}

/// Forward-difference gradient, zero across the last row/column.
fn gradient(u: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (rows, cols) = u.dim();
    let mut gx = Array2::zeros((rows, cols));
    let mut gy = Array2::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                gx[[r, c]] = u[[r, c + 1]] - u[[r, c]];
            }
            if r + 1 < rows {
                gy[[r, c]] = u[[r + 1, c]] - u[[r, c]];
            }
        }
    }
    (gx, gy)
}

/// Divergence, the negative adjoint of [`gradient`].
fn divergence(px: &Array2<f64>, py: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = px.dim();
    let mut d = Array2::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            let mut v = 0.0;
            if c + 1 < cols {
                v += px[[r, c]];
            }
            if c > 0 {
                v -= px[[r, c - 1]];
            }
            if r + 1 < rows {
                v += py[[r, c]];
            }
            if r > 0 {
                v -= py[[r - 1, c]];
            }
            d[[r, c]] = v;
        }
    }
    d
}

/// Isotropic total variation with forward differences.
pub fn total_variation(u: &Array2<f64>) -> f64 {
    let (gx, gy) = gradient(u);
    gx.iter().zip(gy.iter()).map(|(a, b)| a.hypot(*b)).sum()
}

/// `argmin_u 0.5 |u - f|^2 + weight * TV(u)` by Chambolle's dual projection.
pub fn tv_denoise(f: &Array2<f64>, weight: f64, iterations: usize) -> Array2<f64> {
    if !(weight > 0.0) {
        return f.clone();
    }
    const TAU: f64 = 0.125;
    let (rows, cols) = f.dim();
    let mut px = Array2::zeros((rows, cols));
    let mut py = Array2::zeros((rows, cols));
    for _ in 0..iterations {
        let div = divergence(&px, &py);
        let (gx, gy) = gradient(&(div - f / weight));
        for ((p, q), (a, b)) in px.iter_mut().zip(py.iter_mut()).zip(gx.iter().zip(gy.iter())) {
            let denom = 1.0 + TAU * a.hypot(*b);
            *p = (*p + TAU * a) / denom;
            *q = (*q + TAU * b) / denom;
        }
    }
    f - &(divergence(&px, &py) * weight)
}

/// Child process speaking the ZSPD protocol, one process per request.
#[derive(Clone, Debug, PartialEq)]
pub struct ExternalDenoiser {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl ExternalDenoiser {
    /// Resolves `program` (a path, or a name searched on `PATH`) and checks that
    /// it is an executable file.
    pub fn new(program: impl AsRef<Path>, args: Vec<String>, timeout: Duration) -> Result<Self> {
        let program = resolve_program(program.as_ref())?;
        let ext = Self { program, args, timeout };
        ext.validate()?;
        Ok(ext)
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout.is_zero() {
            return Err(Error::invalid("denoiser_timeout", "must be > 0"));
        }
        if !is_executable(&self.program) {
            return Err(Error::Denoiser(format!(
                "{} is not an executable file",
                self.program.display()
            )));
        }
        Ok(())
    }

    pub fn denoise(&self, image: &Array2<f64>, sigma: f64) -> Result<Array2<f64>> {
        let request = encode_request(image, sigma)?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Denoiser(format!("spawning {}: {e}", self.program.display())))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let mut stdout = child.stdout.take().expect("piped stdout");
        let writer = thread::spawn(move || stdin.write_all(&request));
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut buf = Vec::new();
            let res = stdout.read_to_end(&mut buf).map(|_| buf);
            let _ = tx.send(res);
        });
        let reply = match rx.recv_timeout(self.timeout) {
            Ok(r) => r,
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Denoiser(format!("no reply within {:?}", self.timeout)));
            }
        };
        let status = child
            .wait()
            .map_err(|e| Error::Denoiser(format!("waiting for denoiser: {e}")))?;
        let _ = writer.join();
        let reply = reply.map_err(|e| Error::Denoiser(format!("reading reply: {e}")))?;
        if !status.success() {
            return Err(Error::Denoiser(format!("denoiser exited with {status}")));
        }
        let (rows, cols) = image.dim();
        let (_, out) = decode_message(&reply)?;
        if out.dim() != (rows, cols) {
            return Err(Error::Denoiser(format!(
                "reply shape {:?} does not match request {:?}",
                out.dim(),
                (rows, cols)
            )));
        }
        Ok(out)
    }
}

fn is_executable(path: &Path) -> bool {
    let Ok(meta) = std::fs::metadata(path) else {
        return false;
    };
    if !meta.is_file() {
        return false;
    }
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        meta.permissions().mode() & 0o111 != 0
    }
    #[cfg(not(unix))]
    {
        true
    }
}

fn resolve_program(program: &Path) -> Result<PathBuf> {
    if program.components().count() > 1 || program.is_absolute() {
        return Ok(program.to_path_buf());
    }
    let path = std::env::var_os("PATH").unwrap_or_default();
    std::env::split_paths(&path)
        .map(|dir| dir.join(program))
        .find(|candidate| is_executable(candidate))
        .ok_or_else(|| Error::Denoiser(format!("{} not found on PATH", program.display())))
}

/// Serializes a protocol message.
pub fn encode_request(image: &Array2<f64>, sigma: f64) -> Result<Vec<u8>> {
    let (rows, cols) = image.dim();
    let h = u32::try_from(rows).map_err(|_| Error::invalid("image", "too many rows"))?;
    let w = u32::try_from(cols).map_err(|_| Error::invalid("image", "too many columns"))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * rows * cols);
    buf.extend_from_slice(PROTOCOL_MAGIC);
    buf.extend_from_slice(&PROTOCOL_VERSION.to_le_bytes());
    buf.extend_from_slice(&h.to_le_bytes());
    buf.extend_from_slice(&w.to_le_bytes());
    buf.extend_from_slice(&sigma.to_le_bytes());
    for v in image.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

/// Parses a protocol message into `(sigma, image)`.
pub fn decode_message(bytes: &[u8]) -> Result<(f64, Array2<f64>)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Denoiser(format!(
            "message of {} bytes is shorter than the header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != PROTOCOL_MAGIC {
        return Err(Error::Denoiser("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != PROTOCOL_VERSION {
        return Err(Error::Denoiser(format!("unsupported protocol version {version}")));
    }
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    let sigma = f64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    let expected = HEADER_LEN + 8 * rows * cols;
    if bytes.len() != expected {
        return Err(Error::Denoiser(format!(
            "message has {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let pixels: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
        return Err(Error::Denoiser(format!("pixel {i} is not finite")));
    }
    let image = Array2::from_shape_vec((rows, cols), pixels).expect("length checked");
    Ok((sigma, image))
}
