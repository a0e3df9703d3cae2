use std::path::Path;

use mpirecon::config::{PipelineConfig, Stage};
use mpirecon::io;
use mpirecon::pipeline::{run_pipeline, sweep};
use mpirecon::Error;

fn small(extra: &str) -> PipelineConfig {
    let text = format!(
        "[grid]\nrows = 21\ncols = 21\nextent_mm = 24, 24\n[trajectory]\nsamples = 32768\n\
         [simulate]\nnoise = 0.01\nfilter = first-order\nfilter_cutoff_hz = 400000\n{extra}"
    );
    PipelineConfig::from_str_with_base(&text, Path::new(".")).unwrap()
}

fn manifest_value(dir: &Path, key: &str) -> Option<String> {
    let text = std::fs::read_to_string(dir.join("manifest.txt")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')).map(String::from))
}

#[test]
fn full_run_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let summary = run_pipeline(&small(""), tmp.path()).unwrap();
    let stages: Vec<Stage> = summary.timings.iter().map(|(s, _)| *s).collect();
    assert_eq!(stages, Stage::ALL.to_vec());
    for f in &summary.files {
        assert!(tmp.path().join(f).is_file(), "{}", f.display());
    }
    for name in [
        "phantom.img",
        "phantom.pgm",
        "trajectory.csv",
        "signal.csv",
        "transfer_function.csv",
        "signal_preprocessed.csv",
        "core/core.manifest",
        "core_report.csv",
        "trace.img",
        "kernel_data.img",
        "reconstruction.img",
        "reconstruction.pgm",
        "profile.csv",
        "diagnostics.csv",
        "stages.csv",
        "manifest.txt",
    ] {
        assert!(
            summary.files.iter().any(|f| f == Path::new(name)),
            "{name} not in manifest"
        );
    }
    let dip: f64 = manifest_value(tmp.path(), "dip").unwrap().parse().unwrap();
    assert_eq!(Some(dip), summary.dip.map(|d| d.value));
    let diag = std::fs::read_to_string(tmp.path().join("diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().count(), 11);
}

#[test]
fn same_seed_same_result_and_resume_from_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_pipeline(&small("[pipeline]\nseed = 4\n"), a.path()).unwrap();
    let rb = run_pipeline(&small("[pipeline]\nseed = 4\n"), b.path()).unwrap();
    let (ia, ib) = (ra.deconvolution.unwrap().image, rb.deconvolution.unwrap().image);
    assert_eq!(ia, ib);
    let c = tempfile::tempdir().unwrap();
    let rc = run_pipeline(&small("[pipeline]\nseed = 5\n"), c.path()).unwrap();
    assert_ne!(rc.deconvolution.unwrap().image, ia);

    // Deconvolve only, from the written core field.
    let d = tempfile::tempdir().unwrap();
    let manifest = a.path().join("core/core.manifest");
    let cfg = small(&format!(
        "[pipeline]\nstages = deconvolve\n[input]\ncore = {}\n",
        manifest.display()
    ));
    let rd = run_pipeline(&cfg, d.path()).unwrap();
    let id = rd.deconvolution.unwrap().image;
    let diff = (&id.values - &ia.values).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(diff <= 1e-9 * ia.max(), "text round trip changed the result by {diff}");

    // Core onwards, from the preprocessed signal.
    let e = tempfile::tempdir().unwrap();
    let cfg = small(&format!(
        "[pipeline]\nstages = core, deconvolve\n[input]\nsignal = {}\n",
        a.path().join("signal_preprocessed.csv").display()
    ));
    let re = run_pipeline(&cfg, e.path()).unwrap();
    let ie = re.deconvolution.unwrap().image;
    let diff = (&ie.values - &ia.values).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(diff <= 1e-6 * ia.max(), "resumed run differs by {diff}");
}

#[test]
fn stage_failures_name_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "t,s_x\n0,1\n1,oops\n").unwrap();
    let cfg = small(&format!(
        "[pipeline]\nstages = core, deconvolve\n[input]\nsignal = {}\n",
        bad.display()
    ));
    let err = run_pipeline(&cfg, &tmp.path().join("out")).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "core", .. }), "{err}");

    let missing = small("[pipeline]\nstages = deconvolve\n[input]\ncore = /nonexistent/core.manifest\n");
    let err = run_pipeline(&missing, tmp.path()).unwrap_err();
    assert!(
        matches!(&err, Error::Stage { stage: "config", error } if matches!(**error, Error::Io { .. })),
        "{err}"
    );
}

#[test]
fn sweep_is_isolated_and_order_invariant() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sa = sweep(
        &small("[sweep]\nh_sat_a_per_m = 1400.6, 2000\nnu0 = 3e-7, 1e-5\njobs = 3\n"),
        a.path(),
    )
    .unwrap();
    let sb = sweep(
        &small("[sweep]\nh_sat_a_per_m = 2000, 1400.6\nnu0 = 1e-5, 3e-7, 1e-5\njobs = 1\n"),
        b.path(),
    )
    .unwrap();
    assert_eq!(sa, sb);
    assert_eq!(sa.ranking.len(), 4);
    for e in &sa.ranking {
        assert!(e.outcome.is_ok());
        assert!(a.path().join(&e.dir).join("reconstruction.img").is_file());
    }
    assert_eq!(
        std::fs::read_to_string(a.path().join("sweep.csv")).unwrap(),
        std::fs::read_to_string(b.path().join("sweep.csv")).unwrap()
    );
    let img = io::read_image(&a.path().join(&sa.ranking[0].dir).join("reconstruction.img")).unwrap();
    assert_eq!(img.geometry.shape(), (21, 21));
}
