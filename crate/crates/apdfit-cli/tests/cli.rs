use std::path::Path;
use std::process::Command;

fn apdfit() -> Command {
    Command::new(env!("CARGO_BIN_EXE_apdfit"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn apdfit");
    assert!(
        out.status.success(),
        "command failed: {}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth_into(dir: &Path, k: usize, dims: &str, seed: u64) {
    run_ok(apdfit()
        .args(["synth", "--k", &k.to_string(), "--dims", dims])
        .args(["--seed", &seed.to_string()])
        .arg("--out")
        .arg(dir));
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    synth_into(&a, 4, "12,12,12", 9);
    synth_into(&b, 4, "12,12,12", 9);
    assert_eq!(
        std::fs::read(a.join("scan.raw")).unwrap(),
        std::fs::read(b.join("scan.raw")).unwrap()
    );
    assert_eq!(
        std::fs::read(a.join("truth_diagram.json")).unwrap(),
        std::fs::read(b.join("truth_diagram.json")).unwrap()
    );
}

#[test]
fn fit_eval_cross_path_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth_into(&data, 4, "16,16,16", 5);

    let config = dir.path().join("config.json");
    let out = dir.path().join("out");
    std::fs::write(
        &config,
        format!(
            r#"{{
  "schema_version": 1,
  "input": {{"header": {h:?}, "data": {d:?}}},
  "method": "sgbpd",
  "out_dir": {o:?}
}}"#,
            h = data.join("scan.json"),
            d = data.join("scan.raw"),
            o = out
        ),
    )
    .unwrap();
    run_ok(apdfit().arg("fit").arg("--config").arg(&config));

    for name in [
        "diagram.json",
        "predicted.json",
        "predicted.raw",
        "report.json",
        "report.txt",
        "timings.json",
        "truth_slice.ppm",
        "predicted_slice.ppm",
    ] {
        assert!(out.join(name).exists(), "missing {name}");
    }

    // Metrics recomputed through the eval subcommand match the report.
    let report_path = dir.path().join("eval.json");
    run_ok(apdfit()
        .args(["eval"])
        .arg("--truth-header")
        .arg(data.join("scan.json"))
        .arg("--truth-data")
        .arg(data.join("scan.raw"))
        .arg("--pred-header")
        .arg(out.join("predicted.json"))
        .arg("--pred-data")
        .arg(out.join("predicted.raw"))
        .arg("--out")
        .arg(&report_path));
    let from_fit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let from_eval: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(from_fit, from_eval);
}

#[test]
fn fit_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth_into(&data, 3, "12,12,12", 11);
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        format!(
            r#"{{
  "schema_version": 1,
  "input": {{"header": {h:?}, "data": {d:?}}},
  "method": "sgbpd",
  "support": {{"strategy": "resolution", "tau": [6, 6, 6]}},
  "out_dir": "unused"
}}"#,
            h = data.join("scan.json"),
            d = data.join("scan.raw"),
        ),
    )
    .unwrap();
    let out1 = dir.path().join("out1");
    let out2 = dir.path().join("out2");
    run_ok(apdfit().arg("fit").arg("--config").arg(&config).arg("--out").arg(&out1));
    run_ok(apdfit().arg("fit").arg("--config").arg(&config).arg("--out").arg(&out2));
    for name in ["diagram.json", "report.json", "predicted.raw"] {
        assert_eq!(
            std::fs::read(out1.join(name)).unwrap(),
            std::fs::read(out2.join(name)).unwrap(),
            "{name} differs between runs"
        );
    }
}

#[test]
fn rasterize_round_trips_the_truth_diagram() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth_into(&data, 4, "12,12,12", 21);
    let out = dir.path().join("raster");
    run_ok(apdfit()
        .args(["rasterize", "--dims", "12,12,12", "--tie-tol", "0"])
        .arg("--diagram")
        .arg(data.join("truth_diagram.json"))
        .arg("--out")
        .arg(&out));
    // The rasterization of the generating diagram is the scan itself.
    assert_eq!(
        std::fs::read(out.join("predicted.raw")).unwrap(),
        std::fs::read(data.join("scan.raw")).unwrap()
    );
}

#[test]
fn exit_codes() {
    // Config error: missing file.
    let status = apdfit()
        .args(["fit", "--config", "/nonexistent/config.json"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));

    // Data error: scan files missing.
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(
        &config,
        r#"{"schema_version":1,"input":{"header":"/nope.json","data":"/nope.raw"},"method":"sgbpd","out_dir":"/tmp/x"}"#,
    )
    .unwrap();
    let status = apdfit().arg("fit").arg("--config").arg(&config).output().unwrap();
    assert_eq!(status.status.code(), Some(3));

    // Config error: bad axis on slice.
    let data = dir.path().join("data");
    synth_into(&data, 3, "8,8,8", 1);
    let status = apdfit()
        .args(["slice", "--axis", "w", "--index", "0"])
        .arg("--header")
        .arg(data.join("scan.json"))
        .arg("--data")
        .arg(data.join("scan.raw"))
        .arg("--out")
        .arg(dir.path().join("s.ppm"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));

    // Data error: slice index out of range.
    let status = apdfit()
        .args(["slice", "--axis", "z", "--index", "99"])
        .arg("--header")
        .arg(data.join("scan.json"))
        .arg("--data")
        .arg(data.join("scan.raw"))
        .arg("--out")
        .arg(dir.path().join("s.ppm"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(3));
}

#[test]
fn stats_subcommand_reports_grains() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth_into(&data, 4, "10,10,10", 2);
    let stdout = run_ok(apdfit()
        .arg("stats")
        .arg("--header")
        .arg(data.join("scan.json"))
        .arg("--data")
        .arg(data.join("scan.raw")));
    let doc: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(doc["k"], 4);
    let total: u64 = doc["grains"]
        .as_array()
        .unwrap()
        .iter()
        .map(|g| g["kappa"].as_u64().unwrap())
        .sum();
    assert_eq!(total, 1000);
}
