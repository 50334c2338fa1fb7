use std::path::Path;
use std::process::{Command, Output};

fn transport(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_transport"))
        .current_dir(dir)
        .env_remove("TRANSPORT_WORKERS")
        .args(args)
        .output()
        .unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

const SMALL: &str = "[solver]\nkernel = \"biot-savart-2d\"\ngamma = 0.5\nh = \"1/8\"\ndt = 0.1\nT = 0.3\n\
                     [simulate]\ncheckpoint_times = [0.17]\n";

#[test]
fn simulate_writes_schema_stamped_outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    let o = transport(dir.path(), &["simulate", "-c", "run.toml", "--out", "res"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let res = dir.path().join("res");
    let markers = std::fs::read_to_string(res.join("markers.csv")).unwrap();
    assert!(markers.starts_with("# schema: markers v1\nstep,t,label_1,label_2,X_1,X_2,rho0,det\n"));
    assert!(markers.ends_with('\n'));
    let steps: std::collections::BTreeSet<&str> =
        markers.lines().skip(2).map(|l| l.split(',').next().unwrap()).collect();
    // t = 0, the checkpoint at 0.17 (nearest step: 2) and the final step.
    assert_eq!(steps.into_iter().collect::<Vec<_>>(), ["0", "2", "3"]);
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(res.join("metadata.json")).unwrap()).unwrap();
    let cp = &meta["checkpoints"][0];
    assert_eq!(cp[0].as_f64(), Some(0.17));
    assert_eq!(cp[1], 2);
    assert!((cp[2].as_f64().unwrap() - 0.2).abs() < 1e-12);
    let m = manifest(&res);
    let names: Vec<&str> = m["files"].as_array().unwrap().iter().map(|f| f["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["markers.csv", "monitors.csv", "metadata.json"]);
    assert_eq!(m["command"], "simulate");
    assert!(m["halt"].is_null());
}

#[test]
fn rerun_gives_identical_digests() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    let digests = |sub: &str, workers: &str| {
        let o = transport(dir.path(), &["simulate", "-c", "run.toml", "--out", sub, "--workers", workers]);
        assert_eq!(o.status.code(), Some(0));
        manifest(&dir.path().join(sub))["files"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|f| f["name"].as_str().unwrap().ends_with(".csv"))
            .map(|f| f["sha256"].as_str().unwrap().to_string())
            .collect::<Vec<_>>()
    };
    let a = digests("a", "1");
    assert_eq!(a, digests("b", "1"));
    assert_eq!(a, digests("c", "2"));
}

#[test]
fn config_errors_exit_2_with_every_problem_listed() {
    let dir = tempfile::tempdir().unwrap();
    let o = transport(
        dir.path(),
        &["simulate", "--set", "solver.gamma=1.0", "--set", "solver.dt=-1", "--set", "solver.colour=1"],
    );
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("colour"), "{err}");
    let o = transport(dir.path(), &["simulate", "--set", "solver.gamma=1.0", "--set", "solver.dt=-1"]);
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(o.status.code(), Some(2));
    assert!(err.contains("open interval (0, 1)") && err.contains("dt must be positive"), "{err}");
    let o = transport(dir.path(), &["simulate", "--set", "solver.kernel=qg-3d", "--set", "solver.n=2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("3-dimensional"));
    assert!(!dir.path().join("out").exists() || std::fs::read_dir(dir.path().join("out")).unwrap().count() == 0);
}

#[test]
fn leaving_the_admissible_set_exits_3_after_writing_outputs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    let o = transport(dir.path(), &["simulate", "-c", "run.toml", "--set", "solver.delta=1e-6"]);
    assert_eq!(o.status.code(), Some(3));
    let m = manifest(&dir.path().join("out"));
    assert_eq!(m["halt"], "left U_δ");
    assert_eq!(m["files"].as_array().unwrap().len(), 3);
}

#[test]
fn missing_config_file_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = transport(dir.path(), &["lemmas", "-c", "nope.toml"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn norms_reads_lattice_csv_and_rejects_header_only_input() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("x_1,x_2,value\n");
    for i in -4..=4 {
        for j in -4..=4 {
            let (x, y) = (i as f64 * 0.25, j as f64 * 0.25);
            csv.push_str(&format!("{x},{y},{}\n", (x * x + y * y).sqrt()));
        }
    }
    std::fs::write(dir.path().join("abs.csv"), csv).unwrap();
    let o = transport(dir.path(), &["norms", "--input", "abs.csv", "--gamma", "0.5", "--h-levels", "0.5,0.25"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/norm_report.json")).unwrap()).unwrap();
    assert_eq!(r["points"], 81);
    assert_eq!(r["zygmund_seminorm"].as_f64(), Some(2.0));
    assert_eq!(r["vanishing_modulus"].as_array().unwrap().len(), 2);

    std::fs::write(dir.path().join("empty.csv"), "x_1,x_2,value\n").unwrap();
    let o = transport(dir.path(), &["norms", "--input", "empty.csv", "--out", "e"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no samples"));
}

#[test]
fn validate_kernels_and_sio_emit_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = transport(dir.path(), &["validate-kernels", "--set", "kernels.kernels=[\"biot-savart-2d\"]"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/kernels.json")).unwrap()).unwrap();
    assert_eq!(r[0]["kernel"], "biot-savart-2d");
    assert_eq!(r[0]["passed"], true);
    assert!((r[0]["c_matrix"][0][1].as_f64().unwrap() - 0.5).abs() < 1e-8);

    let o = transport(
        dir.path(),
        &["validate-sio", "--out", "sio", "--set", "sio.h=0.125", "--set", "sio.fields=[\"gaussian\", \"bump\"]"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("sio/sio.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# schema: sio v1"));
    assert_eq!(
        lines.next(),
        Some("kernel,i,j,field_id,epsilon,h,sup_S,seminorm_S,implied_c_eps,implied_c_sna")
    );
    assert_eq!(lines.count(), 2);
}

#[test]
fn lemmas_with_zero_trials_is_empty_and_passing() {
    let dir = tempfile::tempdir().unwrap();
    let o = transport(dir.path(), &["lemmas", "--set", "lemmas.trials=0", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0));
    let r: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/lemmas.json")).unwrap()).unwrap();
    assert_eq!(r["seed"], 7);
    assert_eq!(r["passed"], true);
}
