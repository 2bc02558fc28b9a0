use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lipbarrier"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["train", "--mode", "sideways"])), 3);
    assert_eq!(code(&run(&["frobnicate"])), 3);
    assert_eq!(code(&run(&["train", "--set", "epochs"])), 3);
    assert_eq!(code(&run(&["train", "--set", "epochs=1", "--lipschitz", "1e-9"])), 2);
    assert_eq!(code(&run(&["certify", "--model", "/nonexistent/model.json"])), 3);
    assert_eq!(code(&run(&["wgan", "--method", "magic"])), 3);
}

#[test]
fn config_file_with_overrides_trains_and_certifies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# small run\ndims = 2,6,3\nepochs = 50\nlipschitz = 4\n").unwrap();
    let model = dir.path().join("model.json");
    let metrics = dir.path().join("metrics.csv");
    let out = run(&[
        "train",
        "--config",
        path_str(&cfg),
        "--set",
        "epochs=3",
        "--set",
        "certify=full,scalar",
        "--out",
        path_str(&model),
        "--metrics",
        path_str(&metrics),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&metrics).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let out = run(&["certify", "--model", path_str(&model), "--mode", "scalar"]);
    assert_eq!(code(&out), 0);
    assert!(!out.stdout.is_empty());

    std::fs::write(&cfg, "dims = 2,6,3\nbogus = 1\n").unwrap();
    assert_eq!(code(&run(&["train", "--config", path_str(&cfg)])), 3);
}

#[test]
fn metrics_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let files: Vec<_> = (0..4).map(|i| dir.path().join(format!("m{i}.csv"))).collect();
    for f in &files[..2] {
        let out = run(&["train", "--set", "epochs=4", "--seed", "7", "--metrics", path_str(f)]);
        assert_eq!(code(&out), 0);
    }
    for f in &files[2..] {
        let out = run(&["wgan", "--epochs", "2", "--n", "64", "--out-metrics", path_str(f)]);
        assert_eq!(code(&out), 0);
    }
    let read = |i: usize| std::fs::read(&files[i]).unwrap();
    assert_eq!(read(0), read(1));
    assert_eq!(read(2), read(3));
    assert!(!read(0).is_empty() && !read(2).is_empty());
}

#[test]
fn generated_blobs_match_shipped_file() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("blobs.csv");
    assert_eq!(code(&run(&["gen-2d", "--out", path_str(&out_path)])), 0);
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/blobs2d.csv");
    assert_eq!(std::fs::read(out_path).unwrap(), std::fs::read(shipped).unwrap());
}

#[test]
fn bench_writes_rows() {
    let out = run(&["bench", "--sizes", "2x4,3x8", "--reps", "2"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() >= 3, "{text}");
}
