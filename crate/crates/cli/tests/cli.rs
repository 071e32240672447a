use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ristrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ristrack"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SHORT_DESK: &str = r#"
base = "desk"

[timescale]
duration_s = 0.3
n_r = 5

[optimizer]
n_bcd = 3
n_samples = 50

[campaign]
runs = 3
"#;

#[test]
fn lists_presets() {
    let out = ristrack(&["presets"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        text.lines().collect::<Vec<_>>(),
        ["default", "single", "desk"]
    );
}

#[test]
fn run_writes_per_policy_files_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT_DESK);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = ristrack(&[
            "run",
            "-c",
            &cfg,
            "-o",
            out.to_str().unwrap(),
            "--runs",
            "2",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for p in ["opt-ao", "focus"] {
        for f in [
            "stats.csv",
            "cdf.csv",
            "trace.csv",
            "trajectory.csv",
            "peb.csv",
            "runs.csv",
        ] {
            assert_eq!(
                fs::read(a.join(p).join(f)).unwrap(),
                fs::read(b.join(p).join(f)).unwrap(),
                "{p}/{f}"
            );
        }
    }
    let manifest = fs::read_to_string(a.join("manifest.json")).unwrap();
    assert!(manifest.contains("config_sha256"));
    assert_eq!(
        fs::read_to_string(a.join("opt-ao").join("runs.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );
}

#[test]
fn only_reproduces_one_campaign_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT_DESK);
    let (all, one) = (dir.path().join("all"), dir.path().join("one"));
    assert!(ristrack(&[
        "run",
        "-c",
        &cfg,
        "-o",
        all.to_str().unwrap(),
        "--policies",
        "FOCUS"
    ])
    .status
    .success());
    assert!(ristrack(&[
        "run",
        "-c",
        &cfg,
        "-o",
        one.to_str().unwrap(),
        "--policies",
        "FOCUS",
        "--only",
        "2"
    ])
    .status
    .success());
    let rows = |p: &Path| {
        fs::read_to_string(p.join("focus").join("runs.csv"))
            .unwrap()
            .lines()
            .map(str::to_string)
            .collect::<Vec<_>>()
    };
    assert_eq!(rows(&one)[1], rows(&all)[3]);
}

#[test]
fn single_strip_preset_emits_trajectories_and_power_maps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
base = "single"

[timescale]
duration_s = 0.06
n_r = 2

[optimizer]
n_bcd = 2
n_samples = 30

[campaign]
map_step_m = 2.0
"#,
    );
    let out = dir.path().join("out");
    let o = ristrack(&["run", "-c", &cfg, "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for p in ["opt-ao", "focus", "opt"] {
        for f in ["trajectory.csv", "powermap.csv"] {
            let text = fs::read_to_string(out.join(p).join(f)).unwrap();
            assert!(text.lines().count() > 1, "{p}/{f}");
        }
    }
}

#[test]
fn map_and_config_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT_DESK);
    let out = dir.path().join("maps");
    let o = ristrack(&[
        "map",
        "-c",
        &cfg,
        "-o",
        out.to_str().unwrap(),
        "--step",
        "1.0",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("focus").join("powermap.csv").exists());
    let o = ristrack(&["config", "-c", &cfg, "--kappa-b", "100"]);
    assert!(String::from_utf8(o.stdout)
        .unwrap()
        .contains("kappa_b = 100.0"));
}

#[test]
fn sweep_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT_DESK);
    let out = dir.path().join("sweep");
    let o = ristrack(&[
        "sweep",
        "-c",
        &cfg,
        "-o",
        out.to_str().unwrap(),
        "--runs",
        "1",
        "--policies",
        "FOCUS",
        "--param",
        "kappa_b",
        "--values",
        "2,100",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read_to_string(out.join("sweep.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );
}

#[test]
fn bad_input_fails_with_a_named_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "base = \"desk\"\n[timescale]\nduration_s = -1.0\n[campaign]\nrunz = 3\n",
    );
    let o = ristrack(&[
        "run",
        "-c",
        &cfg,
        "-o",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("runz"));

    let cfg = write_config(
        dir.path(),
        "base = \"desk\"\n[timescale]\nduration_s = -1.0\n",
    );
    let o = ristrack(&["run", "-c", &cfg]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("duration"));
}

#[test]
fn mismatched_external_profiles_are_rejected_up_front() {
    let dir = tempfile::tempdir().unwrap();
    // three elements for an 80-element surface
    fs::write(
        dir.path().join("profiles.json"),
        "[[[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]]",
    )
    .unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{SHORT_DESK}policies = [\"EXTERNAL\"]\nexternal_profiles = \"profiles.json\"\n"),
    );
    let o = ristrack(&[
        "run",
        "-c",
        &cfg,
        "-o",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("external_profiles"));
    assert!(!dir.path().join("x").exists());
}
