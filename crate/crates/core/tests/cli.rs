use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/dp26-trial6/scenario.toml")
}

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plume-pf"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn text(out: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    )
}

#[test]
fn validate_shipped_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["validate", scenario_path().to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", text(&out));
    assert!(text(&out).contains("90 samplers, 14 windows"));
}

#[test]
fn config_errors_exit_with_one_and_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let original = std::fs::read_to_string(scenario_path()).unwrap();
    let broken = original.replace("nx = 61", "nx = 61\nbogus = 3");
    let line = broken.lines().position(|l| l.starts_with("bogus")).unwrap() + 1;
    let path = dir.path().join("scenario.toml");
    std::fs::write(&path, broken).unwrap();
    std::fs::copy(
        scenario_path().with_file_name("winds.csv"),
        dir.path().join("winds.csv"),
    )
    .unwrap();
    let out = run(&["validate", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1), "{}", text(&out));
    assert!(text(&out).contains(&format!("line {line}")), "{}", text(&out));

    let out = run(
        &["forecast", dir.path().join("missing.toml").to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let out = run(
        &["--particles", "1", "validate", scenario_path().to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn forecast_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = run(&["forecast", scenario_path().to_str().unwrap()], d);
        assert!(out.status.success(), "{}", text(&out));
    }
    for f in ["forecast.csv", "manifest.toml"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let header = std::fs::read_to_string(a.join("forecast.csv")).unwrap();
    assert!(header.starts_with("sampler_id,line,window_k,dose_ppt_hr\n"));
    assert_eq!(header.lines().count(), 1 + 90 * 12);
    let manifest = std::fs::read_to_string(a.join("manifest.toml")).unwrap();
    assert!(manifest.contains("config_sha256") && manifest.contains("seed = 26"));
}

#[test]
fn truth_assimilate_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let scenario = scenario_path();
    let scenario = scenario.to_str().unwrap();
    let out = run(&["truth", scenario], &d.join("truth"));
    assert!(out.status.success(), "{}", text(&out));
    let obs = d.join("truth/observations.csv");
    let obs = obs.to_str().unwrap();

    let out = run(
        &[
            "--particles",
            "10",
            "--seed",
            "3",
            "assimilate",
            scenario,
            "--observations",
            obs,
            "--snapshot",
        ],
        &d.join("pf"),
    );
    assert!(out.status.success(), "{}", text(&out));
    for f in [
        "forecast.csv",
        "estimates.csv",
        "diagnostics.csv",
        "snapshots.csv",
        "scatter.csv",
        "metrics.csv",
    ] {
        assert!(d.join("pf").join(f).exists(), "{f}");
    }
    let diag = std::fs::read_to_string(d.join("pf/diagnostics.csv")).unwrap();
    assert!(diag.starts_with("k,ess,resampled,underflow_flag,min_w,max_w\n"));
    assert_eq!(diag.lines().count(), 15);
    let scatter = std::fs::read_to_string(d.join("pf/scatter.csv")).unwrap();
    assert!(scatter.starts_with("sampler_id,window_k,observed,predicted,source\n"));
    assert!(scatter.contains("particle_filter_test"));

    let est = d.join("pf/estimates.csv");
    let out = run(
        &["evaluate", "--observed", obs, "--predicted", est.to_str().unwrap()],
        &d.join("eval"),
    );
    assert!(out.status.success(), "{}", text(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    for name in ["FB", "MG", "NMSE", "VG", "FAC2", "FAC3"] {
        assert!(stdout.lines().any(|l| l.starts_with(name)), "{stdout}");
    }
}

#[test]
fn evaluate_reproduces_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let out = run(
        &[
            "evaluate",
            "--observed",
            data.join("fixture_observed.csv").to_str().unwrap(),
            "--predicted",
            data.join("fixture_predicted.csv").to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", text(&out));
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.contains("FAC2,18.75,48"), "{metrics}");
}

#[test]
fn mc_report_and_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenario_path();
    let out = run(
        &["--particles", "5", "mc", scenario.to_str().unwrap(), "--runs", "2"],
        &dir.path().join("mc"),
    );
    assert!(out.status.success(), "{}", text(&out));
    let report = std::fs::read_to_string(dir.path().join("mc/report.csv")).unwrap();
    let metrics: Vec<&str> = report.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert!(report.starts_with("metric,process_model,particle_filter,ci_lo,ci_hi\n"));
    assert_eq!(metrics, ["FB", "MG", "NMSE", "VG", "FAC2", "FAC3"]);

    // nothing on the held-out line reaches the cutoff
    let obs = dir.path().join("obs.csv");
    std::fs::write(
        &obs,
        "sampler_id,line,window_k,dose_ppt_hr\nL1-15,1,1,500\nL3-15,3,5,2\n",
    )
    .unwrap();
    let out = run(
        &[
            "--particles",
            "5",
            "mc",
            scenario.to_str().unwrap(),
            "--runs",
            "2",
            "--observations",
            obs.to_str().unwrap(),
        ],
        &dir.path().join("mc2"),
    );
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
}
