use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rccm::nn::{weights, Hyper, Mlp, NeuralCertificate};
use rccm::system::{ControlAffineModel, Quadrotor};

fn rccm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rccm")).args(args).current_dir(dir).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn csv_rows(path: &Path) -> (csv::StringRecord, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().clone();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

/// Certificate with `Θ = 0` and zero controller networks.
fn zero_weights(dir: &Path) -> PathBuf {
    let q = Quadrotor::default();
    let mut c = NeuralCertificate::new(q.dims(), 4, &[8], Hyper::default(), &mut ChaCha8Rng::seed_from_u64(0));
    c.theta_w = Mlp::zeros(&c.theta_w.widths());
    c.theta_k1 = Mlp::zeros(&c.theta_k1.widths());
    c.theta_k2 = Mlp::zeros(&c.theta_k2.widths());
    let path = dir.join("zero.json");
    weights::save(&c, &path).unwrap();
    path
}

#[test]
fn plan_writes_consistent_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let o = rccm(&["plan", "--t0", "0", "--t1", "20", "--dt", "0.002", "--out", "a"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = csv_rows(&dir.path().join("a/trajectory.csv"));
    assert_eq!(rows.len(), 10001);
    assert_eq!(&header[header.len() - 1], "residual");
    let worst = rows.iter().map(|r| *r.last().unwrap()).fold(0.0, f64::max);
    assert!(worst <= 1e-5, "{worst}");
    assert!(dir.path().join("a/manifest.json").exists());
    rccm(&["plan", "--out", "b"], dir.path());
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("a/trajectory.csv"), read("b/trajectory.csv"));
    assert_eq!(code(&rccm(&["plan", "--dt", "0"], dir.path())), 2);
    assert_eq!(code(&rccm(&["plan", "--t0", "2", "--t1", "1"], dir.path())), 2);
}

#[test]
fn plan_default_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&rccm(&["plan", "--t1", "1", "--seed", "7"], dir.path())), 0);
    assert!(dir.path().join("runs/plan-7/trajectory.csv").exists());
}

#[test]
fn train_and_verify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"n_samples": 64, "epochs": 2, "batch_size": 32, "hidden": [8], "h_k": 4, "seed": 5}"#;
    std::fs::write(dir.path().join("cfg.json"), cfg).unwrap();
    let o = rccm(&["train", "cfg.json", "--out", "t"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["weights.json", "train_log.csv", "config.json", "manifest.json"] {
        assert!(dir.path().join("t").join(f).exists(), "{f}");
    }
    let (header, rows) = csv_rows(&dir.path().join("t/train_log.csv"));
    assert_eq!(
        header.iter().collect::<Vec<_>>().join(","),
        "epoch,mean_loss,lpd_R1,lpd_R2,lpd_C1,frob_C2,frob_C3,lpd_bound,relu_alpha,alpha,mu"
    );
    assert_eq!(rows.len(), 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("t/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["artifacts"]["weights.json"].as_str().unwrap().len(), 64);

    // CCM mode keeps α and μ fixed.
    assert_eq!(code(&rccm(&["train", "cfg.json", "--mode", "ccm", "--out", "c"], dir.path())), 0);
    let (_, rows) = csv_rows(&dir.path().join("c/train_log.csv"));
    assert!(rows.iter().all(|r| r[9] == rows[0][9] && r[10] == rows[0][10]));

    // Same inputs, same bytes.
    assert_eq!(code(&rccm(&["train", "cfg.json", "--out", "t2"], dir.path())), 0);
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("t/train_log.csv"), read("t2/train_log.csv"));
    assert_eq!(read("t/weights.json"), read("t2/weights.json"));

    let o = rccm(&["verify", "t/weights.json", "--n", "32", "--seed", "3", "--out", "v"], dir.path());
    assert!([0, 1].contains(&code(&o)));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("v/verify_report.json")).unwrap()).unwrap();
    assert_eq!(report["n_check"], 32);
    assert!(report["violations"]["R1"].is_u64());
}

#[test]
fn train_rejects_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&rccm(&["train", "missing.json"], dir.path())), 2);
    std::fs::write(dir.path().join("typo.json"), r#"{"learnin_rate": 0.1}"#).unwrap();
    assert_eq!(code(&rccm(&["train", "typo.json"], dir.path())), 2);
    std::fs::write(dir.path().join("zero.json"), r#"{"epochs": 0}"#).unwrap();
    assert_eq!(code(&rccm(&["train", "zero.json"], dir.path())), 2);
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    zero_weights(dir.path());
    assert_eq!(code(&rccm(&["verify", "zero.json", "--n", "64", "--out", "v"], dir.path())), 1);
    std::fs::write(dir.path().join("corrupt.json"), "{\"format_version\": 1, \"hyper\": ").unwrap();
    assert_eq!(code(&rccm(&["verify", "corrupt.json"], dir.path())), 2);
    assert_eq!(code(&rccm(&["verify", "absent.json"], dir.path())), 2);
}

#[test]
fn simulate_cases() {
    let dir = tempfile::tempdir().unwrap();
    zero_weights(dir.path());
    std::fs::write(dir.path().join("sim.json"), r#"{"duration": 1.0}"#).unwrap();
    let o = rccm(&["simulate", "--case", "geometric", "--config", "sim.json", "--out", "g"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = csv_rows(&dir.path().join("g/trace_geometric.csv"));
    assert_eq!(
        header.iter().collect::<Vec<_>>().join(","),
        "t,dev,px,py,pz,px_star,py_star,pz_star,ft,wx,wy,wz,fd_hat_x,fd_hat_y,fd_hat_z,fd_true_x,fd_true_y,fd_true_z"
    );
    assert_eq!(rows.len(), 501);
    assert!(dir.path().join("g/summary_geometric.json").exists());

    assert_eq!(code(&rccm(&["simulate", "--case", "rccm", "--config", "sim.json"], dir.path())), 2);

    let o = rccm(&["simulate", "--case", "rccm_ude", "--weights", "zero.json", "--config", "sim.json", "--out", "u"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = csv_rows(&dir.path().join("u/trace_rccm_ude.csv"));
    assert!(rows[1..].iter().all(|r| r[12..15].iter().any(|v| *v != 0.0)));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("u/summary_rccm_ude.json")).unwrap()).unwrap();
    assert!(summary["bound"].as_f64().unwrap() > 0.0);
    assert_eq!(code(&rccm(&["simulate", "--case", "lqr"], dir.path())), 2);
}
