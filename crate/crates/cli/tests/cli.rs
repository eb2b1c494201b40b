use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_widesparse"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_idx(dir: &Path, images: &str, labels: &str, n: usize, seed: u32) {
    let mut img = Vec::new();
    img.extend_from_slice(&0x0803u32.to_be_bytes());
    img.extend_from_slice(&(n as u32).to_be_bytes());
    img.extend_from_slice(&28u32.to_be_bytes());
    img.extend_from_slice(&28u32.to_be_bytes());
    let mut lab = Vec::new();
    lab.extend_from_slice(&0x0801u32.to_be_bytes());
    lab.extend_from_slice(&(n as u32).to_be_bytes());
    let mut state = seed;
    for i in 0..n {
        let label = (i % 10) as u8;
        lab.push(label);
        for p in 0..784u32 {
            state = state.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
            let signal = if p / 78 == u32::from(label) { 160 } else { 0 };
            img.push((signal + (state >> 26)) as u8);
        }
    }
    std::fs::write(dir.join(images), img).unwrap();
    std::fs::write(dir.join(labels), lab).unwrap();
}

fn fake_mnist() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_idx(dir.path(), "train-images-idx3-ubyte", "train-labels-idx1-ubyte", 120, 7);
    write_idx(dir.path(), "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", 40, 9);
    dir
}

fn sweep_config(dir: &Path, lr: f64) -> String {
    let path = dir.join("sweep.json");
    let cfg = format!(
        r#"{{"name":"tiny","family":"sparse","budget":3970,"widths":[5,10,20],"repeats":2,
            "train":{{"epochs":2,"batch_size":40,"learning_rate":{lr}}}}}"#
    );
    std::fs::write(&path, cfg).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn allocate_worked_example() {
    let o = run(&["allocate", "--sizes", "10,6,3", "--freeze", "7"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let freeze: Vec<u64> = v["layers"].as_array().unwrap().iter().map(|l| l["freeze"].as_u64().unwrap()).collect();
    assert_eq!(freeze, [6, 1, 0]);
    assert_eq!(v["total_frozen"], 7);
    assert_eq!(v["layers"][0]["name"], "layer1");
}

#[test]
fn allocate_mnist_width_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("plan.json");
    let o = run(&["allocate", "--width", "80", "--budget", "3970", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out).unwrap()).unwrap();
    assert_eq!(v["total_frozen"], 59550);
    assert_eq!(v["layers"][1]["freeze"], 0);
    assert_eq!(v["layers"][0]["name"], "fc1");
}

#[test]
fn allocate_rejects_invalid_combination() {
    let o = run(&["allocate", "--sizes", "62720,800", "--budget", "500", "--last-layer-connectivity", "1.0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["allocate", "--sizes", "3,2"]).status.code(), Some(2));
}

#[test]
fn dry_run_lists_the_fig4_grid() {
    let o = run(&["scan", "--preset", "fig4-relu", "--dry-run"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("\"allocation\": \"staggered\""));
    assert!(text.contains("skipped"));
    let valid = text.lines().filter(|l| l.starts_with("width") && !l.contains("skipped")).count();
    let skipped = text.lines().filter(|l| l.contains("skipped")).count();
    assert_eq!(valid + skipped, 80);
}

#[test]
fn missing_data_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["scan", "--preset", "fig7", "--data-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("MNIST files not found"));
}

#[test]
fn scan_resume_export_and_thread_independence() {
    let data = fake_mnist();
    let work = tempfile::tempdir().unwrap();
    let cfg = sweep_config(work.path(), 0.1);
    let a = work.path().join("a");
    let b = work.path().join("b");
    let args = |out: &Path, threads: &str| -> Output {
        run(&[
            "scan",
            "--config",
            &cfg,
            "--data-dir",
            data.path().to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--threads",
            threads,
            "--seed",
            "3",
        ])
    };
    let first = args(&a, "1");
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(stdout(&first).contains("6 records (0 resumed)"));
    let again = args(&a, "1");
    assert!(stdout(&again).contains("6 records (6 resumed)"));
    assert!(args(&b, "3").status.success());
    assert_eq!(
        std::fs::read(a.join("summary.csv")).unwrap(),
        std::fs::read(b.join("summary.csv")).unwrap()
    );
    let summary = std::fs::read_to_string(a.join("summary.csv")).unwrap();
    assert!(summary.starts_with("run_id,width,connectivity,best_train_acc,best_test_acc,seed"));
    assert_eq!(summary.lines().count(), 7);

    let e = run(&["export", "--out", a.to_str().unwrap()]);
    assert!(e.status.success());
    for f in ["accuracy_vs_width.csv", "accuracy_vs_width.svg", "accuracy_heatmap_2d.svg"] {
        assert!(a.join("figures").join(f).is_file(), "{f}");
    }
    let e = run(&["export", "--out", a.to_str().unwrap(), "--kind", "distance_vs_width"]);
    assert_eq!(e.status.code(), Some(2));
}

#[test]
fn failed_cells_give_exit_1() {
    let data = fake_mnist();
    let work = tempfile::tempdir().unwrap();
    let cfg = sweep_config(work.path(), 1e300);
    let o = run(&[
        "scan",
        "--config",
        &cfg,
        "--widths",
        "5",
        "--repeats",
        "1",
        "--data-dir",
        data.path().to_str().unwrap(),
        "--out",
        work.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_writes_record_and_checkpoint() {
    let data = fake_mnist();
    let out = tempfile::tempdir().unwrap();
    let o = run(&[
        "train",
        "--width",
        "40",
        "--budget",
        "3970",
        "--epochs",
        "2",
        "--batch-size",
        "30",
        "--data-dir",
        data.path().to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let names: Vec<String> = std::fs::read_dir(out.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert!(names.iter().any(|n| n.ends_with(".bin")));
    assert!(names.iter().any(|n| n.ends_with(".bin.json")));
    let record = names.iter().find(|n| n.ends_with(".json") && !n.ends_with(".bin.json")).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out.path().join(record)).unwrap()).unwrap();
    assert_eq!(v["record"]["param_count"], 3970);
    let sidecar = names.iter().find(|n| n.ends_with(".bin.json")).unwrap();
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(out.path().join(sidecar)).unwrap()).unwrap();
    let header = &meta["masks"][0];
    for key in ["shape", "mode", "seed", "keep_count"] {
        assert!(header.get(key).is_some(), "{key}");
    }
}

#[test]
fn kernel_sweep_on_small_data() {
    let data = fake_mnist();
    let out = tempfile::tempdir().unwrap();
    let o = run(&[
        "kernel",
        "--widths",
        "16,64",
        "--pairs",
        "50",
        "--inits",
        "2",
        "--reference-width",
        "300",
        "--threads",
        "2",
        "--data-dir",
        data.path().to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.path().join("kernel.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(run(&["export", "--out", out.path().to_str().unwrap(), "--kind", "distance_vs_width"])
        .status
        .success());
}
