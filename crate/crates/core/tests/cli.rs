use omnisweep::experiment::{ExperimentConfig, GridSpec, Manifest, SuiteSpec};
use omnisweep::metrics::{parse_report, CSV_HEADER};
use omnisweep::scene::canned_suite;
use std::path::Path;
use std::process::{Command, Output};

fn omnisweep(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_omnisweep"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

/// One-scene config on a coarse grid, written next to its scene file.
fn small_config(dir: &Path) -> std::path::PathBuf {
    let scenes = vec![canned_suite(3).remove(2)];
    std::fs::write(dir.join("scenes.json"), serde_json::to_string(&scenes).unwrap()).unwrap();
    let cfg = ExperimentConfig {
        suite: SuiteSpec::File("scenes.json".into()),
        grid: Some(GridSpec {
            erp_width: 64,
            erp_height: 32,
            num_bins: 16,
            d_min: 0.5,
            d_max: 20.0,
        }),
        output_dir: "out".into(),
        ..Default::default()
    };
    let p = dir.join("config.json");
    cfg.save(&p).unwrap();
    p
}

#[test]
fn generate_run_ablate_report() {
    let dir = tempfile::tempdir().unwrap();
    small_config(dir.path());
    let ok = |args: &[&str]| {
        let out = omnisweep(args, dir.path());
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };

    ok(&["generate", "--config", "config.json"]);
    let data = dir.path().join("out/data");
    let manifest = Manifest::load(&data).unwrap();
    assert_eq!(manifest.samples.len(), 1);
    let s = &manifest.samples[0];
    assert_eq!(s.images.len(), 4);
    for p in s.images.iter().chain([&s.ground_truth]) {
        assert!(data.join(p).is_file(), "{p}");
    }
    let pgms = std::fs::read_dir(data.join(&s.name)).unwrap().filter(|e| {
        e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm")
    });
    assert_eq!(pgms.count(), 4);

    let stdout = ok(&["run", "--config", "config.json"]);
    assert!(stdout.starts_with(CSV_HEADER));
    let metrics = std::fs::read_to_string(dir.path().join("out/run/metrics.csv")).unwrap();
    let rows = parse_report(&metrics).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1].0, "summary");
    assert_eq!(rows[0].1, rows[1].1);
    assert!(dir.path().join(format!("out/run/{}.pfm", s.name)).is_file());

    ok(&["ablate", "--config", "config.json"]);
    let ablation = parse_report(&std::fs::read_to_string(dir.path().join("out/ablation.csv")).unwrap()).unwrap();
    let labels: Vec<&str> = ablation.iter().map(|(l, _)| l.as_str()).collect();
    assert_eq!(labels, ["k1", "k2", "k3", "no-topk", "no-vct", "no-smoothing"]);
    // the configured run is the k = 3 variant
    assert_eq!(ablation[2].1, rows[1].1);

    let report = ok(&["report", "--config", "config.json"]);
    let parsed = parse_report(&report).unwrap();
    assert_eq!(parsed.len(), 7);
    assert_eq!(parsed[0].0, "run");
    assert_eq!(report, std::fs::read_to_string(dir.path().join("out/report.csv")).unwrap());
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    small_config(dir.path());
    let out = omnisweep(
        &["generate", "--config", "config.json", "--output-dir", "other", "--corrupt", "--noise-amplitude", "0.8"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = Manifest::load(&dir.path().join("other/data")).unwrap();
    assert!(m.corrupted);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    small_config(dir.path());
    let cases: [&[&str]; 4] = [
        &["run", "--config", "missing.json"],
        &["run", "--config", "config.json"],
        &["generate", "--config", "config.json", "--k", "9"],
        &["report", "--config", "config.json"],
    ];
    for args in cases {
        let out = omnisweep(args, dir.path());
        assert!(!out.status.success(), "{args:?} succeeded");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.lines().count(), 1, "{args:?}: {err}");
        assert!(err.starts_with("error: "), "{err}");
    }
}
