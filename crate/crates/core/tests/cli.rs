use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use raybundle::harness::{artifacts, VERSION};
use raybundle::RunReport;

fn raybundle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_raybundle"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Vec<u8> {
    let out = raybundle(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

#[test]
fn version_is_the_report_build_id() {
    let out = ok(&["--version"]);
    assert_eq!(String::from_utf8(out).unwrap().trim(), VERSION);
}

#[test]
fn usage_errors_exit_1_with_schema() {
    let out = raybundle(&[]);
    assert_eq!(code(&out), 1);
    let out = raybundle(&["pipeline", "--frobnicate"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("config keys"));
    assert_eq!(code(&raybundle(&["--threads", "0", "pipeline"])), 1);
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"seed": 3, "ray": {"k": 8, "rays_per_layer": 4}}"#).unwrap();
    let out = raybundle(&["pipeline", "--config", p(&cfg)]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("rays_per_layer"), "{err}");

    let out = raybundle(&["pipeline", "--set", "phantom.radius=4"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("radius"));
}

#[test]
fn dice_geometry_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.mask");
    let b = dir.path().join("b.mask");
    for (path, dims) in [(&a, [4, 4, 4]), (&b, [4, 4, 5])] {
        let g = raybundle::GridGeometry::unit(dims).unwrap();
        raybundle::save_volume(&raybundle::Mask::empty(g).unwrap().into(), path).unwrap();
    }
    let out = raybundle(&["dice", p(&a), p(&b)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("geometry"));
    assert_eq!(String::from_utf8(ok(&["dice", p(&a), p(&a)])).unwrap().trim(), "1");
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = raybundle(&["fit", "--dwi", p(&dir.path().join("nope.raw")), "--out", p(&dir.path().join("x"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn pipeline_report_is_json_and_honors_overrides() {
    let report: RunReport = serde_json::from_slice(&ok(&["pipeline", "--set", "seed=7", "--set", "ray.k=8"])).unwrap();
    assert_eq!(report.seed, 7);
    assert_eq!(report.noise_seed, 9);
    assert_eq!(report.config.ray.k, 8);
    assert_eq!(report.version, VERSION);
    assert!(report.timings_ms.is_none());
    assert!((0.0..=1.0).contains(&report.dsc));

    let timed: RunReport = serde_json::from_slice(&ok(&["pipeline", "--timings"])).unwrap();
    let stages: Vec<String> = timed.timings_ms.unwrap().into_iter().map(|t| t.stage).collect();
    assert_eq!(
        stages,
        ["phantom", "simulate", "noise", "fit", "centerline", "boundary", "mesh", "voxelize", "dice"]
    );
}

/// Runs the subcommand chain into `chain/` and the pipeline with
/// intermediates into `pipe/`, then compares them.
fn chain_matches_pipeline(extra: &[&str], tracked: bool) {
    let dir = tempfile::tempdir().unwrap();
    let chain = dir.path().join("chain");
    let pipe = dir.path().join("pipe");
    let c = |name: &str| chain.join(name).to_str().unwrap().to_owned();
    let with_cfg = |args: &[&str]| -> Vec<String> {
        let mut v: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        for e in extra {
            v.push("--set".into());
            v.push(e.to_string());
        }
        v
    };
    let run = |args: Vec<String>| {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(&refs)
    };

    run(with_cfg(&["phantom", "--out-dir", p(&chain)]));
    run(with_cfg(&["simulate", "--tensors", &c(artifacts::PHANTOM_TENSORS), "--out", &c(artifacts::DWI)]));
    run(with_cfg(&["noise", "--dwi", &c(artifacts::DWI), "--out", &c(artifacts::DWI_NOISY)]));
    run(vec!["fit".into(), "--dwi".into(), c(artifacts::DWI_NOISY), "--out".into(), c(artifacts::FIT_TENSORS)]);
    let centerline = if tracked {
        run(with_cfg(&["track", "--tensors", &c(artifacts::FIT_TENSORS), "--out", &c(artifacts::FIBERS)]));
        run(with_cfg(&["centerline", "--fibers", &c(artifacts::FIBERS), "--out", &c(artifacts::CENTERLINE)]));
        c(artifacts::CENTERLINE)
    } else {
        c(artifacts::ANALYTIC_CENTERLINE)
    };
    run(with_cfg(&[
        "boundary",
        "--tensors",
        &c(artifacts::FIT_TENSORS),
        "--centerline",
        &centerline,
        "--out",
        &c(artifacts::BOUNDARY),
    ]));
    run(vec!["mesh".into(), "--boundary".into(), c(artifacts::BOUNDARY), "--out".into(), c(artifacts::MESH)]);
    run(vec![
        "voxelize".into(),
        "--mesh".into(),
        c(artifacts::MESH),
        "--like".into(),
        c(artifacts::TRUTH_MASK),
        "--out".into(),
        c(artifacts::ESTIMATE_MASK),
    ]);
    let dsc: f64 = String::from_utf8(run(vec!["dice".into(), c(artifacts::TRUTH_MASK), c(artifacts::ESTIMATE_MASK)]))
        .unwrap()
        .trim()
        .parse()
        .unwrap();

    let mut args = with_cfg(&["pipeline", "--set", "keep_intermediates=true"]);
    args.push("--set".into());
    args.push(format!("intermediates_dir={}", p(&pipe)));
    let report: RunReport = serde_json::from_slice(&run(args)).unwrap();

    assert_eq!(report.dsc.to_bits(), dsc.to_bits(), "pipeline {} vs chain {dsc}", report.dsc);
    let mut files = vec![
        artifacts::PHANTOM_TENSORS,
        artifacts::TRUTH_MASK,
        artifacts::ANALYTIC_CENTERLINE,
        artifacts::DWI,
        artifacts::DWI_NOISY,
        artifacts::FIT_TENSORS,
        artifacts::BOUNDARY,
        artifacts::MESH,
        artifacts::ESTIMATE_MASK,
    ];
    if tracked {
        files.extend([artifacts::FIBERS, artifacts::CENTERLINE]);
    }
    for f in files {
        let a = fs::read(chain.join(f)).unwrap();
        let b = fs::read(pipe.join(f)).unwrap_or_else(|e| panic!("{f}: {e}"));
        assert!(a == b, "{f} differs between chain and pipeline");
    }
}

#[test]
fn pipeline_equals_chained_subcommands() {
    chain_matches_pipeline(&["seed=11"], false);
}

#[test]
fn pipeline_equals_chained_subcommands_noise_free() {
    chain_matches_pipeline(&["phantom.snr=null", "ray.n=33", "ray.k=8"], false);
}

#[test]
fn pipeline_equals_chained_subcommands_tracked() {
    chain_matches_pipeline(&["seed=4", "use_analytic_centerline=false"], true);
}

#[test]
fn sweep_writes_cells_and_means() {
    let out = ok(&[
        "sweep",
        "--set",
        "sweep.n=[33,65]",
        "--set",
        "sweep.k=[16]",
        "--set",
        "sweep.d=[0.5]",
        "--set",
        "sweep.seeds=[1,2,3]",
    ]);
    let text = String::from_utf8(out).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(rows.headers().unwrap(), vec!["n", "k", "d", "seed", "dsc", "runtime_ms"]);
    let rows: Vec<csv::StringRecord> = rows.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 8);
    assert_eq!(rows.iter().filter(|r| &r[3] == "mean").count(), 2);
    for r in &rows {
        let dsc: f64 = r[4].parse().unwrap();
        assert!((0.0..=1.0).contains(&dsc));
    }
}

#[test]
fn sweep_records_failing_cells() {
    // nothing passes fa_min = 0.99, so every layer collapses onto its center
    let out = ok(&[
        "sweep",
        "--set",
        "criteria.fa_min=0.99",
        "--set",
        "sweep.n=[33]",
        "--set",
        "sweep.k=[8]",
        "--set",
        "sweep.d=[0.5,0.75]",
        "--set",
        "sweep.seeds=[1]",
    ]);
    let text = String::from_utf8(out).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 4, "{text}");
    assert!(rows.iter().all(|r| r.contains("error:")), "{text}");
}
