//! Plain-text file formats. The byte layouts are specified in `docs/formats.md`.
//!
//! Floats are written with `{:e}` (shortest round-trip digits, scientific
//! notation), so a write/read cycle reproduces every value bit for bit.
//! Readers accept any float syntax that `str::parse::<f64>` does.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::forward::{CoreOperatorField, ScanSignal};
use crate::grid::{GridGeometry, Image};
use crate::preprocess::{SnrProfile, TransferFunction};
use crate::profile::Profile;
use crate::scanner::{trajectory_from_samples, Trajectory, TrajectorySource};

pub const IMAGE_MAGIC: &str = "mpirecon-image 1";
pub const CORE_MAGIC: &str = "mpirecon-core 1";
pub const CORE_MANIFEST: &str = "core.manifest";

/// Relative deviation from uniform sample spacing tolerated in signal files.
pub const TIME_GRID_TOLERANCE: f64 = 1e-6;

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `contents`, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn parse_error(context: &str, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        context: context.to_string(),
        line,
        reason: reason.into(),
    }
}

fn parse_f64(token: &str, context: &str, line: usize) -> Result<f64> {
    token
        .trim()
        .parse::<f64>()
        .map_err(|_| parse_error(context, line, format!("`{token}` is not a number")))
}

fn parse_usize(token: &str, context: &str, line: usize) -> Result<usize> {
    token
        .trim()
        .parse::<usize>()
        .map_err(|_| parse_error(context, line, format!("`{token}` is not an unsigned integer")))
}

/// Non-blank lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// Numeric CSV body under an exact header. Returns rows of floats.
fn parse_csv(text: &str, context: &str, headers: &[&[&str]]) -> Result<(usize, Vec<Vec<f64>>)> {
    let mut lines = content_lines(text);
    let (hline, header) = lines.next().ok_or_else(|| parse_error(context, 1, "missing header"))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let variant = headers.iter().position(|h| *h == columns.as_slice()).ok_or_else(|| {
        let expected: Vec<String> = headers.iter().map(|h| h.join(",")).collect();
        parse_error(context, hline, format!("header `{header}` is not one of {expected:?}"))
    })?;
    let width = columns.len();
    let mut rows = Vec::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(parse_error(
                context,
                n,
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        rows.push(
            fields
                .iter()
                .map(|f| parse_f64(f, context, n))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok((variant, rows))
}

pub fn format_trajectory_csv(trajectory: &Trajectory, with_velocities: bool) -> String {
    let mut out = String::from(if with_velocities { "t,x,y,vx,vy\n" } else { "t,x,y\n" });
    for k in 0..trajectory.len() {
        let [x, y] = trajectory.positions[k];
        let _ = write!(out, "{:e},{:e},{:e}", trajectory.times[k], x, y);
        if with_velocities {
            let [vx, vy] = trajectory.velocities[k];
            let _ = write!(out, ",{vx:e},{vy:e}");
        }
        out.push('\n');
    }
    out
}

/// Velocities are taken from the file when present, otherwise by forward
/// differences.
pub fn parse_trajectory_csv(text: &str) -> Result<Trajectory> {
    let context = "trajectory csv";
    let (variant, rows) = parse_csv(text, context, &[&["t", "x", "y"], &["t", "x", "y", "vx", "vy"]])?;
    let times: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let positions: Vec<[f64; 2]> = rows.iter().map(|r| [r[1], r[2]]).collect();
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("trajectory", "non-finite value"));
    }
    let mut trajectory = trajectory_from_samples(positions, times)?;
    if variant == 1 {
        trajectory.velocities = rows.iter().map(|r| [r[3], r[4]]).collect();
    }
    trajectory.source = TrajectorySource::Sampled;
    Ok(trajectory)
}

pub fn write_trajectory_csv(path: &Path, trajectory: &Trajectory, with_velocities: bool) -> Result<()> {
    write_text(path, &format_trajectory_csv(trajectory, with_velocities))
}

pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory> {
    parse_trajectory_csv(&read_text(path)?)
}

/// Sample `k` is written at `t = k / sample_rate`.
pub fn format_signal_csv(signal: &ScanSignal) -> Result<String> {
    let header = match signal.channel_count() {
        1 => "t,s_x\n",
        2 => "t,s_x,s_y\n",
        n => {
            return Err(Error::invalid(
                "signal",
                format!("{n} channels cannot be written; 1 or 2 supported"),
            ))
        }
    };
    let mut out = String::from(header);
    for k in 0..signal.len() {
        let _ = write!(out, "{:e}", k as f64 / signal.sample_rate);
        for ch in &signal.channels {
            let _ = write!(out, ",{:e}", ch[k]);
        }
        out.push('\n');
    }
    Ok(out)
}

/// The sample rate is recovered from the first and last time stamps; the
/// time column must be uniform to [`TIME_GRID_TOLERANCE`].
pub fn parse_signal_csv(text: &str) -> Result<ScanSignal> {
    let context = "signal csv";
    let (variant, rows) = parse_csv(text, context, &[&["t", "s_x"], &["t", "s_x", "s_y"]])?;
    if rows.len() < 2 {
        return Err(Error::invalid("signal", "at least two samples are required"));
    }
    let n = rows.len();
    let dt = (rows[n - 1][0] - rows[0][0]) / (n - 1) as f64;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::NonMonotoneTimes(1));
    }
    for (k, r) in rows.iter().enumerate() {
        let expected = rows[0][0] + k as f64 * dt;
        if (r[0] - expected).abs() > TIME_GRID_TOLERANCE * dt {
            return Err(parse_error(context, k + 2, "time column is not uniformly spaced"));
        }
    }
    let channels = (0..=variant).map(|c| rows.iter().map(|r| r[c + 1]).collect()).collect();
    ScanSignal::new(channels, 1.0 / dt)
}

pub fn write_signal_csv(path: &Path, signal: &ScanSignal) -> Result<()> {
    write_text(path, &format_signal_csv(signal)?)
}

pub fn read_signal_csv(path: &Path) -> Result<ScanSignal> {
    parse_signal_csv(&read_text(path)?)
}

pub fn format_image(image: &Image) -> String {
    let g = &image.geometry;
    let mut out = format!(
        "{IMAGE_MAGIC}\nrows {}\ncols {}\norigin {:e} {:e}\nspacing {:e} {:e}\n",
        g.rows, g.cols, g.origin[0], g.origin[1], g.spacing[0], g.spacing[1]
    );
    for row in image.values.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

fn keyed<'a>(line: Option<(usize, &'a str)>, key: &str, context: &str) -> Result<(usize, Vec<&'a str>)> {
    let (n, line) = line.ok_or_else(|| parse_error(context, 0, format!("missing `{key}` line")))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(parse_error(context, n, format!("expected `{key}`")));
    }
    Ok((n, parts.collect()))
}

fn pair(values: &[&str], context: &str, line: usize) -> Result<[f64; 2]> {
    if values.len() != 2 {
        return Err(parse_error(context, line, "expected two numbers"));
    }
    Ok([
        parse_f64(values[0], context, line)?,
        parse_f64(values[1], context, line)?,
    ])
}

pub fn parse_image(text: &str) -> Result<Image> {
    let context = "image";
    let mut lines = content_lines(text);
    match lines.next() {
        Some((_, l)) if l.trim() == IMAGE_MAGIC => {}
        Some((n, _)) => return Err(parse_error(context, n, format!("expected `{IMAGE_MAGIC}`"))),
        None => return Err(parse_error(context, 1, "empty file")),
    }
    let single = |(n, v): (usize, Vec<&str>)| -> Result<usize> {
        match v.as_slice() {
            [x] => parse_usize(x, context, n),
            _ => Err(parse_error(context, n, "expected one integer")),
        }
    };
    let rows = single(keyed(lines.next(), "rows", context)?)?;
    let cols = single(keyed(lines.next(), "cols", context)?)?;
    let (n, v) = keyed(lines.next(), "origin", context)?;
    let origin = pair(&v, context, n)?;
    let (n, v) = keyed(lines.next(), "spacing", context)?;
    let spacing = pair(&v, context, n)?;
    let geometry = GridGeometry::new(rows, cols, origin, spacing)?;
    let mut values = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (n, line) in lines {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| parse_f64(t, context, n))
            .collect::<Result<_>>()?;
        if row.len() != cols {
            return Err(parse_error(
                context,
                n,
                format!("expected {cols} values, found {}", row.len()),
            ));
        }
        values.extend(row);
        seen += 1;
    }
    if seen != rows {
        return Err(parse_error(
            context,
            0,
            format!("expected {rows} rows of values, found {seen}"),
        ));
    }
    let values = Array2::from_shape_vec((rows, cols), values).expect("length checked");
    Image::new(values, geometry)
}

/// 8-bit plain PGM preview, min-max normalized; row 0 of the image is the
/// first raster row. A constant image maps to 0.
pub fn format_pgm(values: &Array2<f64>) -> String {
    let (rows, cols) = values.dim();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let mut out = format!("P2\n# min {lo:e} max {hi:e}\n{cols} {rows}\n255\n");
    for row in values.rows() {
        let line: Vec<String> = row
            .iter()
            .map(|v| {
                let level = if range > 0.0 {
                    ((v - lo) / range * 255.0).round()
                } else {
                    0.0
                };
                (level as u8).to_string()
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Gray levels of a plain PGM file, with its maxval.
pub fn parse_pgm(text: &str) -> Result<(Array2<u16>, u16)> {
    let context = "pgm";
    let tokens: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .flat_map(|(i, l)| {
            let l = l.split('#').next().unwrap_or("");
            l.split_whitespace().map(move |t| (i + 1, t))
        })
        .collect();
    let mut it = tokens.into_iter();
    match it.next() {
        Some((_, "P2")) => {}
        Some((n, _)) => return Err(parse_error(context, n, "expected magic `P2`")),
        None => return Err(parse_error(context, 1, "empty file")),
    }
    let mut header = [0usize; 3];
    for h in header.iter_mut() {
        let (n, t) = it.next().ok_or_else(|| parse_error(context, 0, "truncated header"))?;
        *h = parse_usize(t, context, n)?;
    }
    let [cols, rows, maxval] = header;
    if maxval == 0 || maxval > u16::MAX as usize {
        return Err(parse_error(context, 0, format!("maxval {maxval} out of range")));
    }
    let mut levels = Vec::with_capacity(rows * cols);
    for (n, t) in it {
        let v = parse_usize(t, context, n)?;
        if v > maxval {
            return Err(parse_error(context, n, format!("level {v} exceeds maxval {maxval}")));
        }
        levels.push(v as u16);
    }
    if levels.len() != rows * cols {
        return Err(parse_error(
            context,
            0,
            format!("expected {} levels, found {}", rows * cols, levels.len()),
        ));
    }
    let levels = Array2::from_shape_vec((rows, cols), levels).expect("length checked");
    Ok((levels, maxval as u16))
}

/// Writes `<stem>.img` (full precision) and `<stem>.pgm` (preview).
pub fn write_image(stem: &Path, image: &Image) -> Result<Vec<PathBuf>> {
    let data = stem.with_extension("img");
    let preview = stem.with_extension("pgm");
    write_text(&data, &format_image(image))?;
    write_text(&preview, &format_pgm(&image.values))?;
    Ok(vec![data, preview])
}

pub fn read_image(path: &Path) -> Result<Image> {
    parse_image(&read_text(path)?)
}

fn entry_stem(row: usize, col: usize) -> String {
    format!("core_{row}_{col}")
}

/// One image pair per populated entry plus [`CORE_MANIFEST`], all in `dir`.
pub fn write_core_field(dir: &Path, field: &CoreOperatorField) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let rows: Vec<String> = field.populated_rows.iter().map(usize::to_string).collect();
    let mut manifest = format!("{CORE_MAGIC}\ndimension {}\nrows {}\n", field.dimension, rows.join(" "));
    for (&(r, c), values) in &field.entries {
        let stem = entry_stem(r, c);
        let image = Image::new(values.clone(), field.geometry.clone())?;
        written.extend(write_image(&dir.join(&stem), &image)?);
        let _ = writeln!(manifest, "entry {r} {c} {stem}.img");
    }
    let path = dir.join(CORE_MANIFEST);
    write_text(&path, &manifest)?;
    written.push(path);
    Ok(written)
}

/// Reads a field from its manifest; entry paths are relative to the manifest.
pub fn read_core_field(manifest: &Path) -> Result<CoreOperatorField> {
    let context = "core manifest";
    let text = read_text(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut lines = content_lines(&text);
    match lines.next() {
        Some((_, l)) if l.trim() == CORE_MAGIC => {}
        Some((n, _)) => return Err(parse_error(context, n, format!("expected `{CORE_MAGIC}`"))),
        None => return Err(parse_error(context, 1, "empty file")),
    }
    let (n, v) = keyed(lines.next(), "dimension", context)?;
    let dimension = match v.as_slice() {
        [d] => parse_usize(d, context, n)?,
        _ => return Err(parse_error(context, n, "expected one integer")),
    };
    let (n, v) = keyed(lines.next(), "rows", context)?;
    let populated_rows = v
        .iter()
        .map(|t| parse_usize(t, context, n))
        .collect::<Result<Vec<_>>>()?;
    let mut entries = std::collections::BTreeMap::new();
    let mut geometry: Option<GridGeometry> = None;
    for (n, line) in lines {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [key, r, c, file] = parts.as_slice() else {
            return Err(parse_error(context, n, "expected `entry ROW COL FILE`"));
        };
        if *key != "entry" {
            return Err(parse_error(context, n, format!("unknown key `{key}`")));
        }
        let (r, c) = (parse_usize(r, context, n)?, parse_usize(c, context, n)?);
        if r >= dimension || c >= dimension || !populated_rows.contains(&r) {
            return Err(parse_error(
                context,
                n,
                format!("entry ({r}, {c}) outside the populated rows"),
            ));
        }
        let image = read_image(&base.join(file))?;
        match &geometry {
            Some(g) if *g != image.geometry => {
                return Err(Error::GeometryMismatch(format!(
                    "entry ({r}, {c}) has a different grid"
                )));
            }
            Some(_) => {}
            None => geometry = Some(image.geometry.clone()),
        }
        entries.insert((r, c), image.values);
    }
    for &r in &populated_rows {
        for c in 0..dimension {
            if !entries.contains_key(&(r, c)) {
                return Err(Error::MissingEntry(r, c));
            }
        }
    }
    let geometry = geometry.ok_or(Error::Empty("core manifest entries"))?;
    Ok(CoreOperatorField {
        entries,
        dimension,
        geometry,
        populated_rows,
    })
}

/// Unusable bins are written as `NaN` and read back as unusable zeros.
pub fn format_transfer_function_csv(tf: &TransferFunction) -> String {
    let mut out = String::from("bin,channel,re,im\n");
    for b in 0..tf.bin_count() {
        for (c, (spec, usable)) in tf.spectra.iter().zip(&tf.usable).enumerate() {
            if usable[b] {
                let _ = writeln!(out, "{b},{c},{:e},{:e}", spec[b].re, spec[b].im);
            } else {
                let _ = writeln!(out, "{b},{c},NaN,NaN");
            }
        }
    }
    out
}

/// Rows `(bin, channel)` must cover a dense `bins x channels` table, in any order.
fn dense_table<T: Clone>(rows: Vec<(usize, usize, T)>, fill: T, context: &str) -> Result<Vec<Vec<T>>> {
    let bins = rows
        .iter()
        .map(|r| r.0 + 1)
        .max()
        .ok_or_else(|| parse_error(context, 1, "no rows"))?;
    let channels = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    if rows.len() != bins * channels {
        return Err(parse_error(
            context,
            0,
            format!(
                "expected {} rows for {bins} bins x {channels} channels, found {}",
                bins * channels,
                rows.len()
            ),
        ));
    }
    let mut table = vec![vec![None; bins]; channels];
    for (b, c, v) in rows {
        if table[c][b].replace(v).is_some() {
            return Err(parse_error(
                context,
                0,
                format!("duplicate row for bin {b}, channel {c}"),
            ));
        }
    }
    Ok(table
        .into_iter()
        .map(|ch| ch.into_iter().map(|v| v.unwrap_or_else(|| fill.clone())).collect())
        .collect())
}

fn index_of(value: f64, what: &str, context: &str, line: usize) -> Result<usize> {
    if value >= 0.0 && value.fract() == 0.0 && value < u32::MAX as f64 {
        Ok(value as usize)
    } else {
        Err(parse_error(context, line, format!("{what} `{value}` is not an index")))
    }
}

pub fn parse_transfer_function_csv(text: &str) -> Result<TransferFunction> {
    let context = "transfer function csv";
    let (_, rows) = parse_csv(text, context, &[&["bin", "channel", "re", "im"]])?;
    let mut cells = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let b = index_of(r[0], "bin", context, i + 2)?;
        let c = index_of(r[1], "channel", context, i + 2)?;
        let usable = r[2].is_finite() && r[3].is_finite();
        let value = if usable {
            Complex64::new(r[2], r[3])
        } else {
            Complex64::new(0.0, 0.0)
        };
        cells.push((b, c, (value, usable)));
    }
    let table = dense_table(cells, (Complex64::new(0.0, 0.0), false), context)?;
    Ok(TransferFunction {
        spectra: table.iter().map(|ch| ch.iter().map(|v| v.0).collect()).collect(),
        usable: table.iter().map(|ch| ch.iter().map(|v| v.1).collect()).collect(),
    })
}

pub fn write_transfer_function_csv(path: &Path, tf: &TransferFunction) -> Result<()> {
    write_text(path, &format_transfer_function_csv(tf))
}

pub fn read_transfer_function_csv(path: &Path) -> Result<TransferFunction> {
    parse_transfer_function_csv(&read_text(path)?)
}

/// Thresholds are not part of the file; they come from configuration.
pub fn format_snr_csv(profile: &SnrProfile) -> String {
    let mut out = String::from("bin,channel,snr\n");
    for b in 0..profile.bin_count() {
        for (c, ch) in profile.snr.iter().enumerate() {
            let _ = writeln!(out, "{b},{c},{:e}", ch[b]);
        }
    }
    out
}

/// Thresholds are zero until set with [`SnrProfile::with_thresholds`].
pub fn parse_snr_csv(text: &str) -> Result<SnrProfile> {
    let context = "snr csv";
    let (_, rows) = parse_csv(text, context, &[&["bin", "channel", "snr"]])?;
    let mut cells = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let b = index_of(r[0], "bin", context, i + 2)?;
        let c = index_of(r[1], "channel", context, i + 2)?;
        if !(r[2] >= 0.0) {
            return Err(parse_error(context, i + 2, "snr must be >= 0"));
        }
        cells.push((b, c, r[2]));
    }
    let snr = dense_table(cells, 0.0, context)?;
    let thresholds = vec![0.0; snr.len()];
    Ok(SnrProfile { snr, thresholds })
}

pub fn write_snr_csv(path: &Path, profile: &SnrProfile) -> Result<()> {
    write_text(path, &format_snr_csv(profile))
}

pub fn read_snr_csv(path: &Path) -> Result<SnrProfile> {
    parse_snr_csv(&read_text(path)?)
}

pub fn format_profile_csv(profile: &Profile) -> String {
    let mut out = String::from("position,value\n");
    for (p, v) in profile.coordinates.iter().zip(&profile.values) {
        let _ = writeln!(out, "{p:e},{v:e}");
    }
    out
}
