//! The `freqcl` binary: flags, files and exit codes.

use std::path::Path;
use std::process::Command;

const TINY: &[&str] = &[
    "backbone.base_width=8",
    "synthetic.samples_per_class=12",
    "synthetic.test_per_class=6",
    "synthetic.image_size=16",
    "epochs=1",
    "batch_size=8",
    "buffer_capacity=10",
];

fn freqcl(args: &[&str], overrides: &[&str]) -> std::process::Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_freqcl"));
    cmd.args(args);
    for o in overrides {
        cmd.arg("--override").arg(o);
    }
    cmd.output().unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn run_writes_reports_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = freqcl(&["--out", out.to_str().unwrap(), "--seed", "3"], &[TINY, &["precision=f64", "tasks=2"]].concat());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (header, rows) = read_csv(&a.join("metrics.csv"));
    assert_eq!(header, ["after_task", "eval_task", "class_il_acc", "task_il_acc"]);
    assert_eq!(rows.len(), 3);
    let (_, curves) = read_csv(&a.join("curves.csv"));
    assert_eq!(curves.len(), 2);
    assert_eq!(
        std::fs::read(a.join("metrics.csv")).unwrap(),
        std::fs::read(b.join("metrics.csv")).unwrap()
    );
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert!(summary["acc_final_class_il"].as_f64().is_some());
    assert!(summary["flops_train"].as_u64().unwrap() > 0);
    for f in ["config.txt", "model.ckpt", "buffer.bin"] {
        assert!(a.join(f).exists(), "{f}");
    }

    let o = freqcl(&["--mode", "inspect-buffer", "--out", a.to_str().unwrap()], TINY);
    assert!(o.status.success());
    let info: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(info["entries"], 10);
    assert_eq!(info["seen"], 48);
}

#[test]
fn four_tasks_give_ten_metric_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = freqcl(
        &["--out", dir.path().to_str().unwrap()],
        &[TINY, &["synthetic.classes=8", "tasks=4"]].concat(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_csv(&dir.path().join("metrics.csv")).1.len(), 10);
}

#[test]
fn config_file_and_count_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, "# desk run\ndataset = synthetic\ntasks = 2\nbuffer_capacity = 125\n").unwrap();
    let o = freqcl(&["--config", cfg.to_str().unwrap(), "--mode", "count", "--out", dir.path().to_str().unwrap()], &[]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let ratio = v["backbone_param_ratio"].as_f64().unwrap();
    assert!((0.18..=0.26).contains(&ratio));
    assert!(dir.path().join("count.json").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "dataset = synthetic\nbuffersize = 3\ntasks = 2\n").unwrap();
    let o = freqcl(&["--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let o = freqcl(&["--mode", "count"], &["tasks=3"]);
    assert_eq!(o.status.code(), Some(2));

    let missing = dir.path().join("nothing");
    let o = freqcl(&[], &["dataset=cifar10", &format!("data_dir={}", missing.display())]);
    assert_eq!(o.status.code(), Some(3));

    let trunc = dir.path().join("cifar");
    std::fs::create_dir_all(&trunc).unwrap();
    std::fs::write(trunc.join("data_batch_1.bin"), vec![0u8; 3073 + 5]).unwrap();
    let o = freqcl(&[], &["dataset=cifar10", &format!("data_dir={}", trunc.display())]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("byte 3073"));

    let out = dir.path().join("nan");
    let o = freqcl(&["--out", out.to_str().unwrap()], &[TINY, &["lr=1e38", "epochs=3"]].concat());
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}
