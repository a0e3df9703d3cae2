//! End-to-end driver: simulate, preprocess, Core Stage, deconvolution, and the
//! parameter sweep. Every stage writes its artifacts into one output directory
//! and records them in `manifest.txt`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::config::{AnalogFilter, PhantomSource, PipelineConfig, Stage, SweepScore, TrajectorySource};
use crate::core_stage::{
    extract_entry, extract_trace, solve_core_stage, CoreSamples, CoreStageConfig, CoreStageSolution,
};
use crate::error::{Error, Result};
use crate::forward::{
    add_noise, apply_analog_filter, first_order_lowpass, simulate_signal, CoreOperatorField, ScanSignal,
};
use crate::grid::{l2_norm, ConcentrationImage, Image};
use crate::io;
use crate::phantom::{generate_phantom, PhantomKind, PhantomSpec};
use crate::physics::{KernelSelector, KernelSpec};
use crate::pnp::{zero_shot_pnp, DeconvolutionOperator, PnPResult};
use crate::preprocess::{correct_transfer_function, snr_threshold, TransferFunction};
use crate::profile::{dip_ratio, extract_profile, Axis, Profile};
use crate::scanner::{lissajous, Trajectory};

pub const RUN_MAGIC: &str = "mpirecon-run 1";
pub const SWEEP_MAGIC: &str = "mpirecon-sweep 1";

/// Runs `f` and tags any error with the stage name.
fn staged<T>(stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| e.in_stage(stage))
}

pub fn build_phantom(config: &PipelineConfig) -> Result<ConcentrationImage> {
    match &config.phantom {
        PhantomSource::Generated(kind) => generate_phantom(&PhantomSpec {
            kind: kind.clone(),
            grid: config.grid.clone(),
        }),
        PhantomSource::File(path) => {
            let image = io::read_image(path)?;
            if image.geometry.shape() != config.grid.shape() {
                return Err(Error::GeometryMismatch(format!(
                    "phantom {:?} vs grid {:?}",
                    image.geometry.shape(),
                    config.grid.shape()
                )));
            }
            Ok(image)
        }
    }
}

pub fn build_trajectory(config: &PipelineConfig) -> Result<Trajectory> {
    match &config.trajectory {
        TrajectorySource::Lissajous { samples } => lissajous(&config.scanner, *samples),
        TrajectorySource::File(path) => io::read_trajectory_csv(path),
    }
}

/// Filter kernels of the simulated receive chain, one per channel.
pub fn filter_kernels(config: &PipelineConfig, n: usize, sample_rate: f64) -> Result<Option<Vec<Vec<f64>>>> {
    match config.simulate.filter {
        AnalogFilter::None => Ok(None),
        AnalogFilter::FirstOrder { cutoff } => {
            let k = first_order_lowpass(n, cutoff, sample_rate)?;
            Ok(Some(vec![k.clone(), k]))
        }
    }
}

/// Noise-free signal, then the configured filter, then noise seeded by
/// `config.seed`.
pub fn simulate(config: &PipelineConfig, phantom: &ConcentrationImage, trajectory: &Trajectory) -> Result<ScanSignal> {
    let spec = KernelSpec::new(config.h_sat, 2)?;
    let mut signal = simulate_signal(
        phantom,
        trajectory,
        &spec,
        &config.scanner,
        config.simulate.interpolation,
    )?;
    if let Some(kernels) = filter_kernels(config, signal.len(), signal.sample_rate)? {
        signal = apply_analog_filter(&signal, &kernels)?;
    }
    add_noise(&signal, config.simulate.noise, config.seed)
}

/// Transfer function to divide out: the configured file, else the simulated
/// filter when the signal was simulated here.
pub fn transfer_function(
    config: &PipelineConfig,
    signal: &ScanSignal,
    simulated: bool,
) -> Result<Option<TransferFunction>> {
    if let Some(path) = &config.preprocess.transfer_function {
        return io::read_transfer_function_csv(path).map(Some);
    }
    if !simulated {
        return Ok(None);
    }
    Ok(filter_kernels(config, signal.len(), signal.sample_rate)?.map(|k| TransferFunction::from_filter(&k)))
}

pub fn preprocess(config: &PipelineConfig, signal: &ScanSignal, tf: Option<&TransferFunction>) -> Result<ScanSignal> {
    let mut out = match tf {
        Some(tf) => correct_transfer_function(signal, tf, config.preprocess.zero_fill)?,
        None => signal.clone(),
    };
    if let Some(path) = &config.preprocess.snr {
        let mut thresholds = config.preprocess.snr_thresholds.clone();
        if thresholds.len() == 1 {
            thresholds = vec![thresholds[0]; out.channel_count()];
        }
        let profile = io::read_snr_csv(path)?.with_thresholds(thresholds)?;
        out = snr_threshold(&out, &profile)?;
    }
    Ok(out)
}

/// Channels feeding the configured Core Stage rows. A one-channel signal is
/// the x channel and can only feed row 0.
pub fn core_channels(config: &PipelineConfig, signal: &ScanSignal) -> Result<ScanSignal> {
    match signal.channel_count() {
        2 => signal.select_channels(&config.core.rows),
        1 if config.core.rows == [0] => Ok(signal.clone()),
        n => Err(Error::invalid(
            "rows",
            format!("a {n}-channel signal cannot feed rows {:?}", config.core.rows),
        )),
    }
}

pub fn core(config: &PipelineConfig, signal: &ScanSignal, trajectory: &Trajectory) -> Result<CoreStageSolution> {
    let selected = core_channels(config, signal)?;
    let samples = CoreSamples::new(&selected, trajectory)?;
    let mut stage = CoreStageConfig::new(config.grid.clone());
    stage.gamma = config.core.gamma;
    stage.cg = config.core.cg;
    stage.rows = config.core.rows.clone();
    stage.boundary = config.core.boundary;
    solve_core_stage(&samples, &stage, config.simulate.interpolation)
}

#[derive(Clone, Debug)]
pub struct Deconvolution {
    /// Kernel-convolved data the deconvolution starts from, in the units of the
    /// core field.
    pub data: Image,
    pub result: PnPResult,
    pub image: Image,
    /// `|| K x - u / gain || / || u / gain ||` of the final image.
    pub relative_residual: f64,
}

/// Deconvolves the selected kernel image of `field` with the given `h_sat`
/// and `nu0`; all other settings come from `config`.
pub fn deconvolve(config: &PipelineConfig, field: &CoreOperatorField, h_sat: f64, nu0: f64) -> Result<Deconvolution> {
    let grid = &field.geometry;
    if grid.shape() != config.grid.shape() {
        return Err(Error::GeometryMismatch(format!(
            "core field {:?} vs grid {:?}",
            grid.shape(),
            config.grid.shape()
        )));
    }
    let data = match config.deconvolve.kernel {
        KernelSelector::Trace => extract_trace(field)?,
        KernelSelector::Entry(r, c) => extract_entry(field, r, c)?,
    };
    let spec = KernelSpec::new(h_sat, 2)?;
    let (op, gain) = DeconvolutionOperator::from_kernel(
        grid,
        config.scanner.gradient_field(),
        &spec,
        config.deconvolve.kernel,
        config.padding(),
        config.deconvolve.normalization,
    )?;
    let u = data.mapv(|v| v / gain);
    let mut pnp = config.deconvolve.pnp.clone();
    pnp.nu0 = nu0;
    let result = zero_shot_pnp(&u, &op, &pnp)?;
    let residual = &op.apply(&result.image) - &u;
    let norm = l2_norm(&u);
    let relative_residual = if norm > 0.0 {
        l2_norm(&residual) / norm
    } else {
        l2_norm(&residual)
    };
    Ok(Deconvolution {
        data: Image::new(data, grid.clone())?,
        image: Image::new(result.image.clone(), grid.clone())?,
        result,
        relative_residual,
    })
}

/// Row through the phantom's center, or the middle row.
pub fn profile_row(config: &PipelineConfig) -> usize {
    let center = match &config.phantom {
        PhantomSource::Generated(kind) => match kind {
            PhantomKind::Dot { center, .. }
            | PhantomKind::TwoBar { center, .. }
            | PhantomKind::Snake { center, .. }
            | PhantomKind::IceCream { center, .. }
            | PhantomKind::Snail { center, .. } => Some([center[0] * 1e-3, center[1] * 1e-3]),
            PhantomKind::Empty => None,
        },
        PhantomSource::File(_) => None,
    };
    let rows = config.grid.rows;
    center
        .map(|c| config.grid.fractional_index(c)[1].round())
        .filter(|r| *r >= 0.0 && (*r as usize) < rows)
        .map_or(rows / 2, |r| r as usize)
}

fn is_two_bar(config: &PipelineConfig) -> bool {
    matches!(config.phantom, PhantomSource::Generated(PhantomKind::TwoBar { .. }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dip {
    pub value: f64,
    pub peaks: Option<(usize, usize)>,
    pub row: usize,
}

pub fn measure_dip(config: &PipelineConfig, image: &Image) -> Result<(Profile, Dip)> {
    let row = profile_row(config);
    let profile = extract_profile(&image.values, &image.geometry, Axis::Row, row)?;
    let (value, peaks) = dip_ratio(&profile.values);
    Ok((profile, Dip { value, peaks, row }))
}

/// Collects written files relative to the output directory.
struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn record(&mut self, paths: impl IntoIterator<Item = PathBuf>) {
        for p in paths {
            let rel = p.strip_prefix(&self.dir).map(Path::to_path_buf).unwrap_or(p);
            self.files.push(rel);
        }
    }

    fn text(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.path(name);
        io::write_text(&path, contents)?;
        self.record([path]);
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub timings: Vec<(Stage, Duration)>,
    pub phantom: Option<ConcentrationImage>,
    pub core: Option<CoreStageSolution>,
    pub deconvolution: Option<Deconvolution>,
    pub dip: Option<Dip>,
}

/// State carried from one stage to the next.
#[derive(Default)]
struct Carry {
    phantom: Option<ConcentrationImage>,
    trajectory: Option<Trajectory>,
    signal: Option<ScanSignal>,
    simulated: bool,
    core: Option<CoreStageSolution>,
}

impl Carry {
    fn trajectory(&mut self, config: &PipelineConfig) -> Result<&Trajectory> {
        if self.trajectory.is_none() {
            self.trajectory = Some(build_trajectory(config)?);
        }
        Ok(self.trajectory.as_ref().expect("just set"))
    }

    fn signal(&mut self, config: &PipelineConfig) -> Result<&ScanSignal> {
        if self.signal.is_none() {
            let path = config
                .input
                .signal
                .as_ref()
                .ok_or_else(|| Error::invalid("input.signal", "no signal available"))?;
            self.signal = Some(io::read_signal_csv(path)?);
        }
        Ok(self.signal.as_ref().expect("just set"))
    }
}

fn run_stage(stage: Stage, config: &PipelineConfig, carry: &mut Carry, out: &mut Outputs) -> Result<()> {
    match stage {
        Stage::Simulate => {
            let phantom = build_phantom(config)?;
            out.record(io::write_image(&out.path("phantom"), &phantom)?);
            let trajectory = carry.trajectory(config)?.clone();
            let path = out.path("trajectory.csv");
            io::write_trajectory_csv(&path, &trajectory, true)?;
            out.record([path]);
            let signal = simulate(config, &phantom, &trajectory)?;
            let path = out.path("signal.csv");
            io::write_signal_csv(&path, &signal)?;
            out.record([path]);
            carry.phantom = Some(phantom);
            carry.signal = Some(signal);
            carry.simulated = true;
        }
        Stage::Preprocess => {
            let simulated = carry.simulated;
            let signal = carry.signal(config)?.clone();
            let tf = transfer_function(config, &signal, simulated)?;
            if let Some(tf) = &tf {
                let path = out.path("transfer_function.csv");
                io::write_transfer_function_csv(&path, tf)?;
                out.record([path]);
            }
            let corrected = preprocess(config, &signal, tf.as_ref())?;
            let path = out.path("signal_preprocessed.csv");
            io::write_signal_csv(&path, &corrected)?;
            out.record([path]);
            carry.signal = Some(corrected);
        }
        Stage::Core => {
            let signal = carry.signal(config)?.clone();
            let trajectory = carry.trajectory(config)?;
            if signal.len() != trajectory.len() {
                return Err(Error::LengthMismatch {
                    expected: trajectory.len(),
                    actual: signal.len(),
                });
            }
            let solution = core(config, &signal, trajectory)?;
            out.record(io::write_core_field(&out.path("core"), &solution.field)?);
            let mut report = String::from("row,cg_iterations,relative_residual,converged\n");
            for (row, r) in &solution.report.rows {
                writeln!(
                    report,
                    "{row},{},{:e},{}",
                    r.iterations, r.relative_residual, r.converged
                )
                .expect("string write");
            }
            out.text("core_report.csv", &report)?;
            if solution.field.populated_rows.len() == 2 {
                let trace = Image::new(extract_trace(&solution.field)?, solution.field.geometry.clone())?;
                out.record(io::write_image(&out.path("trace"), &trace)?);
            }
            carry.core = Some(solution);
        }
        Stage::Deconvolve => unreachable!("deconvolution is run by the caller"),
    }
    Ok(())
}

/// Runs the stages up to and including Core Stage and returns the core field.
fn run_front(
    config: &PipelineConfig,
    out: &mut Outputs,
    timings: &mut Vec<(Stage, Duration)>,
) -> Result<(Carry, CoreOperatorField)> {
    let mut carry = Carry::default();
    for &stage in config.stages.iter().filter(|s| **s != Stage::Deconvolve) {
        let start = Instant::now();
        staged(stage.name(), || run_stage(stage, config, &mut carry, out))?;
        timings.push((stage, start.elapsed()));
    }
    let field = match &carry.core {
        Some(solution) => solution.field.clone(),
        None => {
            let path = config
                .input
                .core
                .as_ref()
                .ok_or_else(|| Error::invalid("input.core", "required when the pipeline starts at `deconvolve`"))
                .map_err(|e| e.in_stage("deconvolve"))?;
            staged("deconvolve", || io::read_core_field(path))?
        }
    };
    Ok((carry, field))
}

fn write_deconvolution(config: &PipelineConfig, d: &Deconvolution, out: &mut Outputs) -> Result<Dip> {
    out.record(io::write_image(&out.path("kernel_data"), &d.data)?);
    out.record(io::write_image(&out.path("reconstruction"), &d.image)?);
    let (profile, dip) = measure_dip(config, &d.image)?;
    out.text("profile.csv", &io::format_profile_csv(&profile))?;
    let mut diag = String::from("iteration,nu,sigma,lambda,nu_next,cg_iterations,cg_relative_residual,cg_converged\n");
    for r in &d.result.iterations {
        writeln!(
            diag,
            "{},{:e},{:e},{:e},{:e},{},{:e},{}",
            r.iteration, r.nu, r.sigma, r.lambda, r.nu_next, r.cg_iterations, r.cg_relative_residual, r.cg_converged
        )
        .expect("string write");
    }
    out.text("diagnostics.csv", &diag)?;
    Ok(dip)
}

/// Runs the configured stages, writing every artifact into `out_dir`.
pub fn run_pipeline(config: &PipelineConfig, out_dir: &Path) -> Result<RunSummary> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    let mut out = Outputs::new(out_dir)?;
    let mut timings = Vec::new();
    let mut deconvolution = None;
    let mut dip = None;
    let carry = if config.stages.contains(&Stage::Deconvolve) {
        let (carry, field) = run_front(config, &mut out, &mut timings)?;
        let start = Instant::now();
        let d = staged("deconvolve", || {
            deconvolve(config, &field, config.h_sat, config.deconvolve.pnp.nu0)
        })?;
        dip = Some(staged("deconvolve", || write_deconvolution(config, &d, &mut out))?);
        timings.push((Stage::Deconvolve, start.elapsed()));
        deconvolution = Some(d);
        carry
    } else {
        let mut carry = Carry::default();
        for &stage in &config.stages {
            let start = Instant::now();
            staged(stage.name(), || run_stage(stage, config, &mut carry, &mut out))?;
            timings.push((stage, start.elapsed()));
        }
        carry
    };

    let mut stages = String::from("stage,seconds\n");
    for (stage, t) in &timings {
        writeln!(stages, "{},{:e}", stage.name(), t.as_secs_f64()).expect("string write");
    }
    out.text("stages.csv", &stages)?;

    let mut manifest = format!("{RUN_MAGIC}\n");
    let names: Vec<&str> = config.stages.iter().map(|s| s.name()).collect();
    writeln!(manifest, "stages {}", names.join(",")).expect("string write");
    writeln!(manifest, "seed {}", config.seed).expect("string write");
    writeln!(manifest, "h_sat_a_per_m {:e}", config.h_sat).expect("string write");
    if let Some(d) = &deconvolution {
        writeln!(manifest, "nu0 {:e}", config.deconvolve.pnp.nu0).expect("string write");
        writeln!(manifest, "early_termination {}", d.result.early_termination).expect("string write");
        writeln!(manifest, "relative_residual {:e}", d.relative_residual).expect("string write");
    }
    if let Some(dip) = &dip {
        writeln!(manifest, "profile_row {}", dip.row).expect("string write");
        writeln!(manifest, "dip {:e}", dip.value).expect("string write");
        if let Some((a, b)) = dip.peaks {
            writeln!(manifest, "dip_peaks {a} {b}").expect("string write");
        }
    }
    out.files.push(PathBuf::from("manifest.txt"));
    for f in &out.files {
        writeln!(manifest, "file {}", f.display()).expect("string write");
    }
    io::write_text(&out.path("manifest.txt"), &manifest)?;

    Ok(RunSummary {
        files: out.files,
        timings,
        phantom: carry.phantom,
        core: carry.core,
        deconvolution,
        dip,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepEntry {
    pub h_sat: f64,
    pub nu0: f64,
    /// Score, or the error message of a failed deconvolution.
    pub outcome: std::result::Result<f64, String>,
    /// Output directory relative to the sweep directory.
    pub dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    pub score: SweepScore,
    /// Entries best first; failures last.
    pub ranking: Vec<SweepEntry>,
}

/// Directory name of one grid point; `{:e}` is the shortest exact form.
pub fn sweep_dir_name(h_sat: f64, nu0: f64) -> String {
    format!("h_sat={h_sat:e}_nu0={nu0:e}")
}

fn sorted_unique(values: &[f64], fallback: f64) -> Vec<f64> {
    let mut v = if values.is_empty() {
        vec![fallback]
    } else {
        values.to_vec()
    };
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Orders entries best first. Ties and the failure block are ordered by
/// `(h_sat, nu0)`, so the ranking does not depend on input order.
pub fn rank(entries: &mut [SweepEntry], score: SweepScore) {
    let key = |e: &SweepEntry| (e.h_sat, e.nu0);
    entries.sort_by(|a, b| {
        let by_value = match (&a.outcome, &b.outcome) {
            (Ok(x), Ok(y)) => match score {
                SweepScore::Residual => x.total_cmp(y),
                _ => y.total_cmp(x),
            },
            (Ok(_), Err(_)) => std::cmp::Ordering::Less,
            (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
            (Err(_), Err(_)) => std::cmp::Ordering::Equal,
        };
        by_value
            .then(key(a).0.total_cmp(&key(b).0))
            .then(key(a).1.total_cmp(&key(b).1))
    });
}

/// Runs the stages before deconvolution once, then deconvolves for every
/// `(h_sat, nu0)` pair in parallel, each into its own subdirectory.
pub fn sweep(config: &PipelineConfig, out_dir: &Path) -> Result<SweepSummary> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    if !config.stages.contains(&Stage::Deconvolve) {
        return Err(Error::invalid("stages", "a sweep needs the deconvolve stage"));
    }
    let mut out = Outputs::new(out_dir)?;
    let mut timings = Vec::new();
    let (_, field) = run_front(config, &mut out, &mut timings)?;

    let score = match config.sweep.score {
        SweepScore::Auto if is_two_bar(config) => SweepScore::Dip,
        SweepScore::Auto => SweepScore::Residual,
        s => s,
    };
    let hs = sorted_unique(&config.sweep.h_sat, config.h_sat);
    let nus = sorted_unique(&config.sweep.nu0, config.deconvolve.pnp.nu0);
    let pairs: Vec<(f64, f64)> = hs.iter().flat_map(|h| nus.iter().map(move |n| (*h, *n))).collect();

    let jobs = match config.sweep.jobs {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        j => j,
    }
    .min(pairs.len())
    .max(1);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<SweepEntry>>> = Mutex::new(vec![None; pairs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(h_sat, nu0)) = pairs.get(i) else {
                    break;
                };
                let dir = PathBuf::from(sweep_dir_name(h_sat, nu0));
                let outcome =
                    sweep_point(config, &field, h_sat, nu0, score, &out_dir.join(&dir)).map_err(|e| e.to_string());
                if let Err(msg) = &outcome {
                    log::warn!("sweep point h_sat={h_sat:e} nu0={nu0:e} failed: {msg}");
                }
                results.lock().expect("no worker panics while holding the lock")[i] = Some(SweepEntry {
                    h_sat,
                    nu0,
                    outcome,
                    dir,
                });
            });
        }
    });
    let mut ranking: Vec<SweepEntry> = results
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|e| e.expect("every pair is processed"))
        .collect();
    rank(&mut ranking, score);

    let mut csv = String::from("rank,h_sat_a_per_m,nu0,score,status,dir\n");
    for (i, e) in ranking.iter().enumerate() {
        let (value, status) = match &e.outcome {
            Ok(v) => (format!("{v:e}"), "ok".to_string()),
            Err(msg) => ("NaN".into(), format!("\"error: {}\"", msg.replace('"', "'"))),
        };
        writeln!(
            csv,
            "{},{:e},{:e},{value},{status},{}",
            i + 1,
            e.h_sat,
            e.nu0,
            e.dir.display()
        )
        .expect("string write");
    }
    out.text("sweep.csv", &csv)?;
    let mut manifest = format!("{SWEEP_MAGIC}\nscore {}\npoints {}\n", score_name(score), ranking.len());
    for f in &out.files {
        writeln!(manifest, "file {}", f.display()).expect("string write");
    }
    io::write_text(&out.path("manifest.txt"), &manifest)?;
    Ok(SweepSummary { score, ranking })
}

pub fn score_name(score: SweepScore) -> &'static str {
    match score {
        SweepScore::Auto => "auto",
        SweepScore::Dip => "dip",
        SweepScore::Residual => "residual",
    }
}

fn sweep_point(
    config: &PipelineConfig,
    field: &CoreOperatorField,
    h_sat: f64,
    nu0: f64,
    score: SweepScore,
    dir: &Path,
) -> Result<f64> {
    let d = deconvolve(config, field, h_sat, nu0)?;
    let mut out = Outputs::new(dir)?;
    let dip = write_deconvolution(config, &d, &mut out)?;
    let value = match score {
        SweepScore::Residual => d.relative_residual,
        _ => dip.value,
    };
    if !value.is_finite() {
        return Err(Error::invalid("score", format!("non-finite score {value}")));
    }
    Ok(value)
}

/// Reconstruction profile helper for the CLI: row or column `index` of an
/// image file.
pub fn image_profile(image: &Image, axis: Axis, index: usize) -> Result<(Profile, f64)> {
    let profile = extract_profile(&image.values, &image.geometry, axis, index)?;
    let dip = dip_ratio(&profile.values).0;
    Ok((profile, dip))
}
