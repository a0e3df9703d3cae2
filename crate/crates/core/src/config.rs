//! Pipeline configuration: a line-oriented `key = value` format with
//! `[section]` headers. The grammar and every key are listed in
//! `docs/config.md`.
//!
//! Keys carry their unit as a suffix (`_mm`, `_hz`, `_t_per_m`, ...). Lists are
//! comma separated. Relative paths resolve against the directory of the
//! config file. Unknown sections and keys are errors, so a typo cannot
//! silently fall back to a default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::cg::{CgSettings, KrylovMethod};
use crate::core_stage::LaplacianBoundary;
use crate::denoise::{DenoiserRef, ExternalDenoiser};
use crate::error::{Error, Result};
use crate::grid::GridGeometry;
use crate::interp::InterpolationScheme;
use crate::phantom::PhantomKind;
use crate::physics::{hsat, KernelSelector, ParticleModel};
use crate::pnp::{KernelNormalization, PnPConfig};
use crate::scanner::ScannerConfig;

const MM: f64 = 1e-3;

/// A parsed config file: sections of `key -> (line, value)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Document {
    sections: BTreeMap<String, BTreeMap<String, (usize, String)>>,
}

impl Document {
    /// Grammar, per line after trimming whitespace:
    /// empty, `# comment`, `; comment`, `[section]`, or `key = value`.
    /// A `#` or `;` preceded by whitespace starts a trailing comment.
    /// Keys before the first header belong to section `pipeline`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = Document::default();
        let mut section = String::from("pipeline");
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = strip_inline_comment(raw).trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| parse_error(line_no, "unterminated section header"))?
                    .trim();
                if !is_identifier(name) {
                    return Err(parse_error(line_no, format!("bad section name `{name}`")));
                }
                section = name.to_string();
                doc.sections.entry(section.clone()).or_default();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_error(line_no, "expected `key = value`"))?;
            let key = key.trim();
            if !is_identifier(key) {
                return Err(parse_error(line_no, format!("bad key `{key}`")));
            }
            let entries = doc.sections.entry(section.clone()).or_default();
            if let Some((first, _)) = entries.get(key) {
                return Err(parse_error(line_no, format!("`{key}` already set on line {first}")));
            }
            entries.insert(key.to_string(), (line_no, value.trim().to_string()));
        }
        Ok(doc)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(|(_, v)| v.as_str())
    }
}

fn strip_inline_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    for i in 1..bytes.len() {
        if (bytes[i] == b'#' || bytes[i] == b';') && bytes[i - 1].is_ascii_whitespace() {
            return &line[..i];
        }
    }
    line
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn parse_error(line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        context: "config".into(),
        line,
        reason: reason.into(),
    }
}

/// Typed access to one section that records which keys were read.
struct Section<'a> {
    name: &'a str,
    entries: Option<&'a BTreeMap<String, (usize, String)>>,
    used: Vec<&'static str>,
}

impl<'a> Section<'a> {
    fn new(doc: &'a Document, name: &'a str) -> Self {
        Self {
            name,
            entries: doc.sections.get(name),
            used: Vec::new(),
        }
    }

    fn raw(&mut self, key: &'static str) -> Option<(usize, &'a str)> {
        self.used.push(key);
        self.entries?.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    fn err(&self, line: usize, key: &str, reason: impl std::fmt::Display) -> Error {
        parse_error(line, format!("[{}] {key}: {reason}", self.name))
    }

    fn string(&mut self, key: &'static str) -> Option<(usize, &'a str)> {
        self.raw(key)
    }

    fn f64(&mut self, key: &'static str) -> Result<Option<f64>> {
        match self.raw(key) {
            None => Ok(None),
            Some((l, v)) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| self.err(l, key, format!("`{v}` is not a number"))),
        }
    }

    fn f64_or(&mut self, key: &'static str, default: f64) -> Result<f64> {
        Ok(self.f64(key)?.unwrap_or(default))
    }

    fn usize_or(&mut self, key: &'static str, default: usize) -> Result<usize> {
        match self.raw(key) {
            None => Ok(default),
            Some((l, v)) => v
                .parse::<usize>()
                .map_err(|_| self.err(l, key, format!("`{v}` is not an unsigned integer"))),
        }
    }

    fn bool_or(&mut self, key: &'static str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some((_, "true")) => Ok(true),
            Some((_, "false")) => Ok(false),
            Some((l, v)) => Err(self.err(l, key, format!("`{v}` is not true or false"))),
        }
    }

    fn f64_list(&mut self, key: &'static str) -> Result<Option<Vec<f64>>> {
        let Some((l, v)) = self.raw(key) else {
            return Ok(None);
        };
        split_list(v)
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| self.err(l, key, format!("`{t}` is not a number")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn f64_pair(&mut self, key: &'static str) -> Result<Option<[f64; 2]>> {
        let line = self.entries.and_then(|e| e.get(key)).map_or(0, |(l, _)| *l);
        match self.f64_list(key)? {
            None => Ok(None),
            Some(v) if v.len() == 2 => Ok(Some([v[0], v[1]])),
            Some(v) => Err(self.err(line, key, format!("expected 2 values, found {}", v.len()))),
        }
    }

    fn usize_list(&mut self, key: &'static str) -> Result<Option<Vec<usize>>> {
        let Some((l, v)) = self.raw(key) else {
            return Ok(None);
        };
        split_list(v)
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| self.err(l, key, format!("`{t}` is not an unsigned integer")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn choice<T: Copy>(&mut self, key: &'static str, options: &[(&str, T)], default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some((l, v)) => options
                .iter()
                .find(|(name, _)| *name == v)
                .map(|(_, t)| *t)
                .ok_or_else(|| {
                    let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                    self.err(l, key, format!("`{v}` is not one of {names:?}"))
                }),
        }
    }

    /// Errors on any key that was never read.
    fn finish(self) -> Result<()> {
        if let Some(entries) = self.entries {
            for (key, (line, _)) in entries {
                if !self.used.contains(&key.as_str()) {
                    return Err(parse_error(*line, format!("[{}] unknown key `{key}`", self.name)));
                }
            }
        }
        Ok(())
    }
}

fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|t| !t.is_empty())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Simulate,
    Preprocess,
    Core,
    Deconvolve,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Simulate, Stage::Preprocess, Stage::Core, Stage::Deconvolve];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Preprocess => "preprocess",
            Stage::Core => "core",
            Stage::Deconvolve => "deconvolve",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrajectorySource {
    /// Analytic Lissajous curve over one repetition, `samples` points.
    Lissajous {
        samples: usize,
    },
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub enum PhantomSource {
    Generated(PhantomKind),
    File(PathBuf),
}

/// Receive-chain filter applied to simulated signals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AnalogFilter {
    None,
    /// Periodic first-order low-pass with the given -3 dB frequency, Hz.
    FirstOrder {
        cutoff: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulateSettings {
    pub interpolation: InterpolationScheme,
    /// Noise standard deviation relative to each channel's RMS.
    pub noise: f64,
    pub filter: AnalogFilter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessSettings {
    /// Transfer function file; when absent, a simulated filter's own response
    /// is divided out.
    pub transfer_function: Option<PathBuf>,
    pub zero_fill: bool,
    pub snr: Option<PathBuf>,
    pub snr_thresholds: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoreSettings {
    pub gamma: f64,
    pub cg: CgSettings,
    pub rows: Vec<usize>,
    pub boundary: LaplacianBoundary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeconvolveSettings {
    pub kernel: KernelSelector,
    /// Zero padding per axis; `None` pads to the full linear convolution.
    pub padding: Option<usize>,
    pub normalization: KernelNormalization,
    pub pnp: PnPConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepScore {
    /// Dip metric for two-bar phantoms, residual otherwise.
    Auto,
    Dip,
    Residual,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSettings {
    pub h_sat: Vec<f64>,
    pub nu0: Vec<f64>,
    /// Worker threads; 0 uses the available parallelism.
    pub jobs: usize,
    pub score: SweepScore,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InputPaths {
    pub signal: Option<PathBuf>,
    pub core: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub stages: Vec<Stage>,
    pub seed: u64,
    pub grid: GridGeometry,
    pub scanner: ScannerConfig,
    pub particle: ParticleModel,
    /// Kernel resolution parameter in A/m; the particle's saturation field
    /// unless overridden.
    pub h_sat: f64,
    pub trajectory: TrajectorySource,
    pub phantom: PhantomSource,
    pub simulate: SimulateSettings,
    pub preprocess: PreprocessSettings,
    pub core: CoreSettings,
    pub deconvolve: DeconvolveSettings,
    pub input: InputPaths,
    pub sweep: SweepSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let grid = GridGeometry::centered(33, 33, [0.024, 0.024]).expect("default grid is valid");
        let particle = ParticleModel::reference();
        Self {
            stages: Stage::ALL.to_vec(),
            seed: 0,
            grid,
            scanner: ScannerConfig::preclinical(),
            h_sat: hsat(&particle),
            particle,
            trajectory: TrajectorySource::Lissajous { samples: 131072 },
            phantom: PhantomSource::Generated(PhantomKind::TwoBar {
                lengths: [20.0, 17.5],
                width: 1.5,
                separation: 2.25,
                center: [0.0, 0.0],
            }),
            simulate: SimulateSettings {
                interpolation: InterpolationScheme::Cosine,
                noise: 0.0,
                filter: AnalogFilter::None,
            },
            preprocess: PreprocessSettings {
                transfer_function: None,
                zero_fill: true,
                snr: None,
                snr_thresholds: Vec::new(),
            },
            core: CoreSettings {
                gamma: 1e-7,
                cg: CgSettings::default(),
                rows: vec![0, 1],
                boundary: LaplacianBoundary::Replicate,
            },
            deconvolve: DeconvolveSettings {
                kernel: KernelSelector::Trace,
                padding: None,
                normalization: KernelNormalization::UnitSum,
                pnp: PnPConfig::default(),
            },
            input: InputPaths::default(),
            sweep: SweepSettings {
                h_sat: Vec::new(),
                nu0: Vec::new(),
                jobs: 0,
                score: SweepScore::Auto,
            },
        }
    }
}

const SECTIONS: [&str; 13] = [
    "pipeline",
    "grid",
    "scanner",
    "particle",
    "kernel",
    "trajectory",
    "phantom",
    "simulate",
    "preprocess",
    "core",
    "deconvolve",
    "input",
    "sweep",
];

const METHODS: [(&str, KrylovMethod); 2] = [
    ("conjugate-residual", KrylovMethod::ConjugateResidual),
    ("conjugate-gradient", KrylovMethod::ConjugateGradient),
];

fn cg_settings(s: &mut Section, default: CgSettings) -> Result<CgSettings> {
    Ok(CgSettings {
        tolerance: s.f64_or("cg_tolerance", default.tolerance)?,
        max_iterations: s.usize_or("cg_max_iterations", default.max_iterations)?,
        method: s.choice("cg_method", &METHODS, default.method)?,
    })
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = crate::io::read_text(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_str_with_base(&text, base)
    }

    /// Parses `text`, resolving relative paths against `base`. Does not
    /// validate; call [`PipelineConfig::validate`] before running.
    pub fn from_str_with_base(text: &str, base: &Path) -> Result<Self> {
        let doc = Document::parse(text)?;
        for (name, entries) in &doc.sections {
            if !SECTIONS.contains(&name.as_str()) {
                let line = entries.values().map(|(l, _)| *l).min().unwrap_or(0);
                return Err(parse_error(line, format!("unknown section [{name}]")));
            }
        }
        let mut c = PipelineConfig::default();

        let mut s = Section::new(&doc, "pipeline");
        if let Some((l, v)) = s.string("stages") {
            c.stages = split_list(v)
                .map(|t| Stage::from_name(t).ok_or_else(|| s.err(l, "stages", format!("unknown stage `{t}`"))))
                .collect::<Result<Vec<_>>>()?;
        }
        c.seed = s.usize_or("seed", 0)? as u64;
        s.finish()?;

        let mut s = Section::new(&doc, "grid");
        let rows = s.usize_or("rows", c.grid.rows)?;
        let cols = s.usize_or("cols", c.grid.cols)?;
        let extent = s.f64_pair("extent_mm")?.unwrap_or([24.0, 24.0]);
        s.finish()?;
        c.grid = GridGeometry::centered(rows, cols, [extent[0] * MM, extent[1] * MM])?;

        let mut s = Section::new(&doc, "scanner");
        match s.string("preset") {
            None | Some((_, "preclinical")) => {}
            Some((l, v)) => return Err(s.err(l, "preset", format!("unknown preset `{v}`"))),
        }
        if let Some(g) = s.f64_pair("gradient_t_per_m")? {
            c.scanner.gradient = g;
        }
        if let Some(a) = s.f64_pair("drive_amplitude_mt")? {
            c.scanner.drive_amplitudes = [a[0] * MM, a[1] * MM];
        }
        if let Some(f) = s.f64_pair("drive_frequency_hz")? {
            c.scanner.drive_frequencies = f;
        }
        c.scanner.sample_rate = s.f64_or("sample_rate_hz", c.scanner.sample_rate)?;
        c.scanner.repetition_time = s.f64_or("repetition_time_s", c.scanner.repetition_time)?;
        s.finish()?;

        let mut s = Section::new(&doc, "particle");
        let temperature = s.f64("temperature_k")?;
        let magnetization = s.f64("saturation_magnetization_j_per_m3_t")?;
        let diameter = s.f64("core_diameter_nm")?;
        if temperature.is_some() || magnetization.is_some() || diameter.is_some() {
            let p = &c.particle;
            c.particle = ParticleModel::new(
                temperature.unwrap_or(p.temperature),
                magnetization.unwrap_or(p.saturation_magnetization),
                diameter.map_or(p.core_diameter, |d| d * 1e-9),
            )?;
        }
        s.finish()?;

        let mut s = Section::new(&doc, "kernel");
        c.h_sat = s.f64("h_sat_a_per_m")?.unwrap_or_else(|| hsat(&c.particle));
        s.finish()?;

        let mut s = Section::new(&doc, "trajectory");
        c.trajectory = match s.choice("source", &[("lissajous", false), ("file", true)], false)? {
            false => TrajectorySource::Lissajous {
                samples: s.usize_or("samples", 131072)?,
            },
            true => match s.string("path") {
                Some((_, p)) => TrajectorySource::File(resolve(base, p)),
                None => return Err(s.err(0, "path", "required when source = file")),
            },
        };
        s.finish()?;

        let mut s = Section::new(&doc, "phantom");
        c.phantom = phantom_source(&mut s, base)?;
        s.finish()?;

        let mut s = Section::new(&doc, "simulate");
        c.simulate.interpolation = s.choice(
            "interpolation",
            &[
                ("cosine", InterpolationScheme::Cosine),
                ("bilinear", InterpolationScheme::Bilinear),
            ],
            InterpolationScheme::Cosine,
        )?;
        c.simulate.noise = s.f64_or("noise", 0.0)?;
        c.simulate.filter = match s.choice("filter", &[("none", false), ("first-order", true)], false)? {
            false => AnalogFilter::None,
            true => AnalogFilter::FirstOrder {
                cutoff: s
                    .f64("filter_cutoff_hz")?
                    .ok_or_else(|| s.err(0, "filter_cutoff_hz", "required for filter = first-order"))?,
            },
        };
        s.finish()?;

        let mut s = Section::new(&doc, "preprocess");
        c.preprocess.transfer_function = s.string("transfer_function").map(|(_, p)| resolve(base, p));
        c.preprocess.zero_fill = s.bool_or("zero_fill", true)?;
        c.preprocess.snr = s.string("snr").map(|(_, p)| resolve(base, p));
        c.preprocess.snr_thresholds = s.f64_list("snr_thresholds")?.unwrap_or_default();
        s.finish()?;

        let mut s = Section::new(&doc, "core");
        c.core.gamma = s.f64_or("gamma", c.core.gamma)?;
        c.core.cg = cg_settings(&mut s, c.core.cg)?;
        if let Some(rows) = s.usize_list("rows")? {
            c.core.rows = rows;
        }
        c.core.boundary = s.choice(
            "boundary",
            &[
                ("replicate", LaplacianBoundary::Replicate),
                ("zero", LaplacianBoundary::Zero),
            ],
            LaplacianBoundary::Replicate,
        )?;
        s.finish()?;

        let mut s = Section::new(&doc, "deconvolve");
        c.deconvolve = deconvolve_settings(&mut s, base)?;
        s.finish()?;

        let mut s = Section::new(&doc, "input");
        c.input.signal = s.string("signal").map(|(_, p)| resolve(base, p));
        c.input.core = s.string("core").map(|(_, p)| resolve(base, p));
        s.finish()?;

        let mut s = Section::new(&doc, "sweep");
        c.sweep.h_sat = s.f64_list("h_sat_a_per_m")?.unwrap_or_default();
        c.sweep.nu0 = s.f64_list("nu0")?.unwrap_or_default();
        c.sweep.jobs = s.usize_or("jobs", 0)?;
        c.sweep.score = s.choice(
            "score",
            &[
                ("auto", SweepScore::Auto),
                ("dip", SweepScore::Dip),
                ("residual", SweepScore::Residual),
            ],
            SweepScore::Auto,
        )?;
        s.finish()?;

        Ok(c)
    }

    /// Checks parameter ranges, stage order, stage inputs, and that every
    /// referenced file exists.
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::invalid("stages", "no stage selected"));
        }
        if self.stages.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "stages",
                "stages must be listed once each, in pipeline order",
            ));
        }
        let first = self.stages[0];
        let last = *self.stages.last().expect("nonempty");
        if Stage::ALL.iter().filter(|s| **s >= first && **s <= last).count() != self.stages.len() {
            return Err(Error::invalid("stages", "selected stages must be consecutive"));
        }
        self.grid.validate()?;
        self.scanner.validate()?;
        self.particle.validate()?;
        if !(self.h_sat.is_finite() && self.h_sat > 0.0) {
            return Err(Error::invalid("h_sat_a_per_m", "must be finite and > 0"));
        }
        if let TrajectorySource::Lissajous { samples } = self.trajectory {
            if samples < 2 {
                return Err(Error::invalid("samples", "must be >= 2"));
            }
        }
        if !(self.simulate.noise >= 0.0 && self.simulate.noise.is_finite()) {
            return Err(Error::invalid("noise", "must be finite and >= 0"));
        }
        if let AnalogFilter::FirstOrder { cutoff } = self.simulate.filter {
            if !(cutoff > 0.0 && cutoff.is_finite()) {
                return Err(Error::invalid("filter_cutoff_hz", "must be > 0"));
            }
        }
        if self.preprocess.snr.is_some() && self.preprocess.snr_thresholds.is_empty() {
            return Err(Error::invalid(
                "snr_thresholds",
                "required when an snr profile is given",
            ));
        }
        let mut core = crate::core_stage::CoreStageConfig::new(self.grid.clone());
        core.gamma = self.core.gamma;
        core.cg = self.core.cg;
        core.rows = self.core.rows.clone();
        core.boundary = self.core.boundary;
        core.validate()?;
        if let KernelSelector::Entry(r, c) = self.deconvolve.kernel {
            if r > 1 || c > 1 {
                return Err(Error::invalid("kernel_entry", "indices must be 0 or 1"));
            }
            if self.stages.contains(&Stage::Core) && !self.core.rows.contains(&r) {
                return Err(Error::invalid("kernel_entry", format!("row {r} is not reconstructed")));
            }
        } else if self.stages.contains(&Stage::Core) && self.core.rows.len() != 2 {
            return Err(Error::invalid(
                "kernel",
                "the trace needs rows = 0, 1; use kernel = entry for partial data",
            ));
        }
        self.deconvolve.pnp.validate()?;
        for v in self.sweep.h_sat.iter().chain(&self.sweep.nu0) {
            if !(v.is_finite() && *v > 0.0) {
                return Err(Error::invalid("sweep", format!("value {v} must be finite and > 0")));
            }
        }

        if first == Stage::Preprocess || first == Stage::Core {
            if self.input.signal.is_none() {
                return Err(Error::invalid(
                    "input.signal",
                    format!("required when the pipeline starts at `{}`", first.name()),
                ));
            }
            if !matches!(self.trajectory, TrajectorySource::File(_)) && first == Stage::Core {
                log::debug!("core stage will regenerate the analytic trajectory");
            }
        }
        if first == Stage::Deconvolve && self.input.core.is_none() {
            return Err(Error::invalid(
                "input.core",
                "required when the pipeline starts at `deconvolve`",
            ));
        }
        for path in self.referenced_files() {
            if !path.is_file() {
                return Err(Error::io(
                    path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file does not exist"),
                ));
            }
        }
        Ok(())
    }

    /// Input files the selected stages will read.
    pub fn referenced_files(&self) -> Vec<&Path> {
        let mut files = Vec::new();
        let uses = |s: Stage| self.stages.contains(&s);
        if uses(Stage::Simulate) || uses(Stage::Core) {
            if let TrajectorySource::File(p) = &self.trajectory {
                files.push(p.as_path());
            }
        }
        if uses(Stage::Simulate) {
            if let PhantomSource::File(p) = &self.phantom {
                files.push(p.as_path());
            }
        }
        if uses(Stage::Preprocess) {
            files.extend(self.preprocess.transfer_function.as_deref());
            files.extend(self.preprocess.snr.as_deref());
        }
        if !uses(Stage::Simulate) && (uses(Stage::Preprocess) || uses(Stage::Core)) {
            files.extend(self.input.signal.as_deref());
        }
        if self.stages == [Stage::Deconvolve] {
            files.extend(self.input.core.as_deref());
        }
        if let DenoiserRef::External(ext) = &self.deconvolve.pnp.denoiser {
            files.push(ext.program.as_path());
        }
        files
    }

    /// Zero padding used by the deconvolution operator.
    pub fn padding(&self) -> usize {
        self.deconvolve
            .padding
            .unwrap_or_else(|| crate::forward::full_padding(&self.grid))
    }
}

fn phantom_source(s: &mut Section, base: &Path) -> Result<PhantomSource> {
    let kind = s.string("kind").map_or("two-bar", |(_, v)| v);
    let center = s.f64_pair("center_mm")?.unwrap_or([0.0, 0.0]);
    let line = s.entries.and_then(|e| e.get("kind")).map_or(0, |(l, _)| *l);
    let kind = match kind {
        "file" => {
            let (_, p) = s
                .string("path")
                .ok_or_else(|| s.err(line, "path", "required when kind = file"))?;
            return Ok(PhantomSource::File(resolve(base, p)));
        }
        "empty" => PhantomKind::Empty,
        "dot" => PhantomKind::Dot {
            center,
            radius: s.f64_or("radius_mm", 0.75)?,
        },
        "two-bar" => PhantomKind::TwoBar {
            lengths: s.f64_pair("lengths_mm")?.unwrap_or([20.0, 17.5]),
            width: s.f64_or("width_mm", 1.5)?,
            separation: s.f64_or("separation_mm", 2.25)?,
            center,
        },
        "snake" => PhantomKind::Snake {
            rod_length: s.f64_or("rod_length_mm", 6.0)?,
            width: s.f64_or("width_mm", 1.5)?,
            center,
        },
        "ice-cream" => PhantomKind::IceCream {
            radius: s.f64_or("radius_mm", 4.0)?,
            cone_height: s.f64_or("cone_height_mm", 8.0)?,
            center,
        },
        "snail" => PhantomKind::Snail {
            turns: s.f64_or("turns", 2.5)?,
            outer_radius: s.f64_or("outer_radius_mm", 9.0)?,
            width: s.f64_or("width_mm", 1.5)?,
            center,
        },
        other => return Err(s.err(line, "kind", format!("unknown phantom kind `{other}`"))),
    };
    Ok(PhantomSource::Generated(kind))
}

fn deconvolve_settings(s: &mut Section, base: &Path) -> Result<DeconvolveSettings> {
    let defaults = PnPConfig::default();
    let kernel = match s.choice("kernel", &[("trace", false), ("entry", true)], false)? {
        false => KernelSelector::Trace,
        true => {
            let line = s.entries.and_then(|e| e.get("kernel_entry")).map_or(0, |(l, _)| *l);
            match s.usize_list("kernel_entry")?.as_deref() {
                None => KernelSelector::Entry(0, 0),
                Some([r, c]) => KernelSelector::Entry(*r, *c),
                Some(_) => return Err(s.err(line, "kernel_entry", "expected `ROW, COL`")),
            }
        }
    };
    let padding = match s.string("padding") {
        None | Some((_, "full")) => None,
        Some((l, v)) => Some(
            v.parse::<usize>()
                .map_err(|_| s.err(l, "padding", format!("`{v}` is neither `full` nor an integer")))?,
        ),
    };
    let normalization = s.choice(
        "normalization",
        &[
            ("unit-sum", KernelNormalization::UnitSum),
            ("unit-peak", KernelNormalization::UnitPeak),
        ],
        KernelNormalization::UnitSum,
    )?;
    let denoiser = match s.string("denoiser").map_or("gaussian", |(_, v)| v) {
        "identity" => DenoiserRef::Identity,
        "gaussian" => DenoiserRef::GaussianBlur {
            width_per_sigma: s.f64_or("gaussian_width_per_sigma", 1.0)?,
        },
        "tv" => DenoiserRef::TotalVariation {
            weight_per_sigma2: s.f64_or("tv_weight_per_sigma2", 0.1)?,
            iterations: s.usize_or("tv_iterations", 100)?,
        },
        "external" => {
            let (l, program) = s
                .string("external_command")
                .ok_or_else(|| s.err(0, "external_command", "required for denoiser = external"))?;
            let args = s
                .string("external_args")
                .map(|(_, v)| split_list(v).map(String::from).collect())
                .unwrap_or_default();
            let timeout = s.f64_or("external_timeout_s", 30.0)?;
            if !(timeout > 0.0 && timeout.is_finite()) {
                return Err(s.err(l, "external_timeout_s", "must be > 0"));
            }
            let program = if program.contains('/') {
                resolve(base, program)
            } else {
                PathBuf::from(program)
            };
            DenoiserRef::External(ExternalDenoiser::new(program, args, Duration::from_secs_f64(timeout))?)
        }
        other => return Err(s.err(0, "denoiser", format!("unknown denoiser `{other}`"))),
    };
    let pnp = PnPConfig {
        nu0: s.f64_or("nu0", defaults.nu0)?,
        n_iterations: s.usize_or("iterations", defaults.n_iterations)?,
        trim_percentile: s.f64_or("trim_percentile", defaults.trim_percentile)?,
        cg: cg_settings(s, defaults.cg)?,
        denoiser,
    };
    Ok(DeconvolveSettings {
        kernel,
        padding,
        normalization,
        pnp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<PipelineConfig> {
        PipelineConfig::from_str_with_base(text, Path::new("/base"))
    }

    #[test]
    fn document_grammar() {
        let doc = Document::parse("seed = 3\n# c\n; c\n[grid]\n  rows = 21 \n\n[grid]\ncols=4\n").unwrap();
        assert_eq!(doc.get("pipeline", "seed"), Some("3"));
        assert_eq!(doc.get("grid", "rows"), Some("21"));
        assert_eq!(doc.get("grid", "cols"), Some("4"));
        let doc = Document::parse("[a]\nx = 1 # note\ny = p#q\nz = 2\t; note\n  # indented\n").unwrap();
        assert_eq!(doc.get("a", "x"), Some("1"));
        assert_eq!(doc.get("a", "y"), Some("p#q"));
        assert_eq!(doc.get("a", "z"), Some("2"));
        for bad in ["[grid\n", "rows 3\n", "[a b]\n", "x = 1\nx = 2\n", "bad key = 1\n"] {
            assert!(Document::parse(bad).is_err(), "{bad:?}");
        }
        let err = Document::parse("a = 1\na = 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn empty_text_gives_defaults() {
        let c = parse("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        c.validate().unwrap();
        assert_eq!(c.padding(), 32);
    }

    #[test]
    fn typed_sections() {
        let c = parse(
            "[pipeline]\nstages = core, deconvolve\nseed = 9\n\
             [grid]\nrows = 21\ncols = 25\nextent_mm = 20, 24\n\
             [phantom]\nkind = dot\ncenter_mm = 6, 6\n\
             [core]\nrows = 0\ncg_method = conjugate-gradient\n\
             [deconvolve]\nkernel = entry\nkernel_entry = 0, 0\npadding = 4\ndenoiser = tv\nnu0 = 1e-6\n\
             [input]\nsignal = sig.csv\n\
             [sweep]\nh_sat_a_per_m = 1400, 7957.7\nnu0 = 1e-7, 4e-2\n",
        )
        .unwrap();
        assert_eq!(c.stages, vec![Stage::Core, Stage::Deconvolve]);
        assert_eq!(c.seed, 9);
        assert_eq!(c.grid.shape(), (21, 25));
        assert!((c.grid.spacing[0] - 20e-3 / 24.0).abs() < 1e-15);
        assert!(matches!(
            c.phantom,
            PhantomSource::Generated(PhantomKind::Dot { center: [6.0, 6.0], .. })
        ));
        assert_eq!(c.core.rows, vec![0]);
        assert_eq!(c.core.cg.method, KrylovMethod::ConjugateGradient);
        assert_eq!(c.deconvolve.kernel, KernelSelector::Entry(0, 0));
        assert_eq!(c.padding(), 4);
        assert!(matches!(c.deconvolve.pnp.denoiser, DenoiserRef::TotalVariation { .. }));
        assert_eq!(c.deconvolve.pnp.nu0, 1e-6);
        assert_eq!(c.input.signal, Some(PathBuf::from("/base/sig.csv")));
        assert_eq!(c.sweep.nu0, vec![1e-7, 4e-2]);
        // The signal file does not exist.
        assert!(matches!(c.validate(), Err(Error::Io { .. })));
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        for bad in [
            "[grdi]\nrows = 3\n",
            "[grid]\nrow = 3\n",
            "[grid]\nrows = -3\n",
            "[grid]\nextent_mm = 1, 2, 3\n",
            "[phantom]\nkind = cube\n",
            "[deconvolve]\ndenoiser = bm3d\n",
            "[deconvolve]\npadding = some\n",
            "[pipeline]\nstages = simulate, reconstruct\n",
            "[core]\ncg_method = gmres\n",
            "[simulate]\nfilter = first-order\n",
        ] {
            assert!(parse(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn stage_selection_rules() {
        let ok = |t: &str| parse(t).unwrap().validate();
        assert!(ok("stages = simulate, core\n").is_err());
        assert!(ok("stages = core, simulate\n").is_err());
        assert!(ok("stages = deconvolve\n").is_err());
        assert!(ok("stages = simulate, preprocess, core\n").is_ok());
        assert!(ok("[core]\nrows = 0\n").is_err());
        assert!(ok("[core]\nrows = 0\n[deconvolve]\nkernel = entry\n").is_ok());
        assert!(ok("[core]\nrows = 1\n[deconvolve]\nkernel = entry\nkernel_entry = 0, 0\n").is_err());
        assert!(ok("[preprocess]\nsnr = x.csv\n").is_err());
    }
}
