use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gevd_mimo::harness::NmseResult;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gevd-mimo"))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn tiny_overrides() -> Vec<String> {
    [
        "system.antennas=8",
        "system.ues_per_cell=2",
        "system.tau_p=4",
        "system.eval_blocks=10",
        "monte_carlo_runs=2",
        "sweep.values=[30, 60]",
        r#"estimators=[{kind="ls_fixed"}, {kind="mmse_random"}, {kind="gevd", rank=3}]"#,
    ]
    .iter()
    .flat_map(|o| ["--set".to_string(), o.to_string()])
    .collect()
}

fn run(args: &[String]) -> Output {
    bin().args(args).output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn shipped_configs_validate() {
    let mut found = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            found += 1;
            let out = bin()
                .arg("validate")
                .arg("--config")
                .arg(&path)
                .output()
                .unwrap();
            assert!(
                out.status.success(),
                "{}: {}",
                path.display(),
                text(&out.stderr)
            );
            assert!(text(&out.stdout).starts_with("OK:"));
        }
    }
    assert!(found >= 2);
}

#[test]
fn run_writes_all_outputs_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "run".to_string(),
        "--config".to_string(),
        configs_dir()
            .join("blocks_sweep.toml")
            .display()
            .to_string(),
        "--seed".to_string(),
        "7".to_string(),
        "--output".to_string(),
        dir.path().join("a").display().to_string(),
    ];
    args.extend(tiny_overrides());
    let out = run(&args);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("gevd_3"));

    let csv = std::fs::read_to_string(dir.path().join("a/results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/results.json")).unwrap())
            .unwrap();
    assert_eq!(json["master_seed"], 7);
    let rows: Vec<NmseResult> = serde_json::from_value(json["results"]["rows"].clone()).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.nmse > 0.0 && r.runs_aggregated == 2));
    assert!(dir.path().join("a/summary.txt").exists());

    // feeding results.json back as the config reproduces the run
    let again = run(&[
        "run".to_string(),
        "--config".to_string(),
        dir.path().join("a/results.json").display().to_string(),
        "--output".to_string(),
        dir.path().join("b").display().to_string(),
    ]);
    assert!(again.status.success(), "{}", text(&again.stderr));
    assert_eq!(
        csv,
        std::fs::read_to_string(dir.path().join("b/results.csv")).unwrap()
    );
}

#[test]
fn bad_input_exits_with_config_code() {
    let cases: Vec<Vec<String>> = vec![
        vec![
            "run".into(),
            "--config".into(),
            "/nonexistent/config.toml".into(),
        ],
        vec![
            "validate".into(),
            "--set".into(),
            "system.num_cells=3".into(),
        ],
        vec![
            "validate".into(),
            "--set".into(),
            "system.no_such_key=1".into(),
        ],
        vec![
            "validate".into(),
            "--set".into(),
            "monte_carlo_runs=0".into(),
        ],
        vec!["frobnicate".into()],
    ];
    for args in cases {
        let out = run(&args);
        assert_eq!(
            out.status.code(),
            Some(1),
            "{args:?}: {}",
            text(&out.stderr)
        );
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn list_estimators_names_every_kind() {
    let out = bin().arg("list-estimators").output().unwrap();
    assert!(out.status.success());
    let listing = text(&out.stdout);
    for kind in gevd_mimo::EstimatorKind::ALL {
        assert!(listing.contains(kind.name()), "{}", kind.name());
    }
}
