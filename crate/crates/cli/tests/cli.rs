use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qvdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qvdp")).args(args).env("QVDP_THREADS", "1").output().unwrap()
}

fn out_dir(root: &Path, name: &str) -> String {
    root.join(name).to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_csv(path: impl AsRef<Path>) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn steady_writes_manifest_field_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(tmp.path(), "steady");
    let o = qvdp(&["steady", "-o", &dir, "-n", "8", "-e", "0.5", "--grid-points", "41"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(format!("{dir}/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["mode"], "steady");
    assert_eq!(manifest["system"]["omega"], 2.0);
    assert_eq!(manifest["system"]["epsilon_over_k1"], 0.5);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(format!("{dir}/steady.json")).unwrap()).unwrap();
    assert_eq!(summary["n_max"], 8);
    assert!(summary["negativity"].as_f64().is_some());
    let bytes = fs::read(format!("{dir}/wigner.bin")).unwrap();
    assert_eq!(&bytes[..4], b"QVPF");
}

#[test]
fn sweep_is_byte_deterministic_and_reproducible_from_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let a = out_dir(tmp.path(), "a");
    let b = out_dir(tmp.path(), "b");
    let args = |d: &str| {
        vec!["sweep", "-o", d, "-n", "6", "--grid-points", "41", "-s", "epsilon_over_k1:0.2:1.8:3"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>()
    };
    for d in [&a, &b] {
        let args = args(d);
        let o = qvdp(&args.iter().map(String::as_str).collect::<Vec<_>>());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let first = fs::read(format!("{a}/sweep.csv")).unwrap();
    assert_eq!(first, fs::read(format!("{b}/sweep.csv")).unwrap());

    // rerun from the manifest alone, redirected to a fresh directory
    let c = out_dir(tmp.path(), "c");
    let o = qvdp(&["sweep", "-c", &format!("{a}/manifest.json"), "-o", &c]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(first, fs::read(format!("{c}/sweep.csv")).unwrap());

    let (header, rows) = read_csv(format!("{a}/sweep.csv"));
    assert_eq!(
        header,
        ["epsilon_over_k1", "delta_y", "classification", "n_maxima", "maxima_y", "n_max", "cutoff_converged", "status"]
    );
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[7] == "ok"));
    assert!(rows.iter().all(|r| ["Osc", "QAD", "QOD", "unknown"].contains(&r[2].as_str())));
}

#[test]
fn unknown_config_key_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "mode = \"steady\"\n[system]\nkappa = 0.3\n").unwrap();
    let o = qvdp(&["steady", "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("kappa"), "{}", stderr(&o));
}

#[test]
fn single_point_sweep_is_rejected() {
    let o = qvdp(&["sweep", "-s", "K:0:1:1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(">= 2"), "{}", stderr(&o));
    let o = qvdp(&["sweep", "-s", "kappa:0:1:3"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("kappa"));
}

#[test]
fn mode_mismatch_with_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "mode = \"sde\"\n").unwrap();
    let o = qvdp(&["steady", "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_points_give_nonzero_exit_and_status_column() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(tmp.path(), "neg");
    let cfg = tmp.path().join("run.toml");
    let text = format!(
        "mode = \"negativity\"\noutput_dir = {dir:?}\n[system]\nn_max = 5\n[solver]\nmethod = \"krylov\"\nkrylov_restart = 1\nkrylov_max_iterations = 1\n[[sweep]]\nparameter = \"epsilon_over_k1\"\nmin = 0.5\nmax = 1.0\ncount = 2\n"
    );
    fs::write(&cfg, text).unwrap();
    let o = qvdp(&["negativity", "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let (header, rows) = read_csv(format!("{dir}/negativity.csv"));
    assert_eq!(header, ["epsilon_over_k1", "negativity", "n_max", "cutoff_converged", "status"]);
    assert!(rows.iter().all(|r| r[4].starts_with("failed")));
}

#[test]
fn negativity_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(tmp.path(), "neg");
    let o = qvdp(&["negativity", "-o", &dir, "-n", "5", "-s", "epsilon_over_k1:0:1:2", "-s", "K:0:0.5:2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = read_csv(format!("{dir}/negativity.csv"));
    assert_eq!(header[..2], ["epsilon_over_k1", "K"]);
    assert_eq!(rows.len(), 4);
    assert!(rows[0][2].parse::<f64>().unwrap().abs() < 1e-6);
}

#[test]
fn phase2d_with_boundary_check() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(tmp.path(), "p2");
    let o = qvdp(&[
        "phase2d", "-o", &dir, "-n", "5", "--grid-points", "33", "-s", "epsilon_over_k1:0.5:2:2", "-s", "K:0:0.5:2",
        "--check-monotone", "--dump-fields",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let boundary: serde_json::Value = serde_json::from_str(&fs::read_to_string(format!("{dir}/boundary.json")).unwrap()).unwrap();
    assert_eq!(boundary["kerr"].as_array().unwrap().len(), 2);
    assert!(boundary["monotone"].is_boolean());
    assert_eq!(fs::read_dir(format!("{dir}/fields")).unwrap().count(), 4);
}

#[test]
fn sde_histogram_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(tmp.path(), "sde");
    let o = qvdp(&["sde", "-o", &dir, "-e", "1.99", "--sde-steps", "20000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = read_csv(format!("{dir}/sde.csv"));
    assert_eq!(header, ["modes", "delta_y", "peaks", "samples", "status"]);
    assert_eq!(rows[0][3], (8 * 18000).to_string());
    let (header, rows) = read_csv(format!("{dir}/histograms/y1_0000.csv"));
    assert_eq!(header, ["bin_lo", "bin_hi", "count", "density"]);
    assert_eq!(rows.len(), 60);
}

#[test]
fn chimera_writes_profile_and_husimi_per_oscillator() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(tmp.path(), "ring");
    let o = qvdp(&[
        "chimera", "-o", &dir, "--oscillators", "6", "--range", "1", "--coherent-count", "3", "-n", "10", "--t-final", "0.05",
        "--grid-points", "17",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = read_csv(format!("{dir}/profile_0000.csv"));
    assert_eq!(header, ["index", "angle", "anisotropy"]);
    assert_eq!(rows.len(), 6);
    assert_eq!(fs::read_dir(format!("{dir}/husimi_0000")).unwrap().count(), 6);
    let (header, _) = read_csv(format!("{dir}/chimera.csv"));
    assert_eq!(header, ["cv_coherent", "cv_incoherent", "mean_anisotropy", "status"]);
}

#[test]
fn evolve_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(tmp.path(), "ev");
    let o = qvdp(&["evolve", "-o", &dir, "-n", "6", "--t-final", "0.2", "--grid-points", "17"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = read_csv(format!("{dir}/evolve.csv"));
    assert_eq!(header, ["t", "n_0", "n_1"]);
    assert_eq!(rows.first().unwrap()[1], "0");
}

#[test]
fn bad_thread_count() {
    let o = Command::new(env!("CARGO_BIN_EXE_qvdp")).args(["steady", "-n", "4"]).env("QVDP_THREADS", "zero").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
