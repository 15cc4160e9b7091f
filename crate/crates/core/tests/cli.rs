use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mlvc::io::{load_checkpoint, read_metrics};

fn mlvc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlvc"))
        .args(args)
        .env("MLVC_THREADS", "1")
        .output()
        .expect("spawn mlvc")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new(dtype: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let text: String = (0..3000)
            .map(|i| ["to be ", "or not ", "that is ", "the question\n"][i % 7 % 4])
            .collect();
        std::fs::write(dir.path().join("corpus.txt"), text).unwrap();
        let config = format!(
            r#"{{"model": {{"num_layers": 2, "num_heads": 2, "head_dim": 4}},
                "train": {{"total_steps": 8, "warmup_steps": 2, "e_small": 4, "batch_size": 2,
                           "seq_len": 8, "eval_interval": 4, "val_batches": 1, "dtype": "{dtype}"}}}}"#
        );
        std::fs::write(dir.path().join("exp.json"), config).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, mode: &str, out: &str) -> Output {
        let (corpus, config, out) = (
            self.path("corpus.txt"),
            self.path("exp.json"),
            self.path(out),
        );
        mlvc(&[
            "train",
            mode,
            "--corpus",
            s(&corpus),
            "--config",
            s(&config),
            "--out-dir",
            s(&out),
            "--quiet",
        ])
    }
}

#[test]
fn train_writes_run_directory_and_rerun_from_manifest_is_identical() {
    let f = Fixture::new("f64");
    let o = f.train("vcycle", "v");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["metrics.csv", "checkpoint.mlvc", "manifest.json"] {
        assert!(f.path("v").join(name).exists(), "{name}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.path("v/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["mode"], "vcycle");
    assert_eq!(manifest["corpus"]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["summary"]["steps"], 2 + 4 + 8);

    let (corpus, m, out) = (
        f.path("corpus.txt"),
        f.path("v/manifest.json"),
        f.path("again"),
    );
    let o = mlvc(&[
        "train",
        "vcycle",
        "--corpus",
        s(&corpus),
        "--config",
        s(&m),
        "--out-dir",
        s(&out),
        "--quiet",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (a, b) = (
        read_metrics(&f.path("v/metrics.csv")).unwrap(),
        read_metrics(&f.path("again/metrics.csv")).unwrap(),
    );
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
        assert_eq!(x.val_loss.map(f64::to_bits), y.val_loss.map(f64::to_bits));
    }
    let (p, q) = (
        load_checkpoint(&f.path("v/checkpoint.mlvc")).unwrap(),
        load_checkpoint(&f.path("again/checkpoint.mlvc")).unwrap(),
    );
    assert_eq!(p.params.cast::<f64>(), q.params.cast::<f64>());
}

#[test]
fn train_exit_codes() {
    let f = Fixture::new("f32");
    let out = f.path("x");
    let o = mlvc(&[
        "train",
        "baseline",
        "--config",
        s(&f.path("exp.json")),
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));

    let missing = f.path("nope.txt");
    let o = mlvc(&[
        "train",
        "baseline",
        "--corpus",
        s(&missing),
        "--config",
        s(&f.path("exp.json")),
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(3));

    std::fs::write(f.path("bad.json"), r#"{"model": {"num_layers": 2, "num_heads": 3, "head_dim": 4}, "train": {"total_steps": 1}}"#).unwrap();
    let o = mlvc(&[
        "train",
        "vcycle",
        "--corpus",
        s(&f.path("corpus.txt")),
        "--config",
        s(&f.path("bad.json")),
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2), "odd head count cannot be halved");

    std::fs::write(f.path("hot.json"), r#"{"model": {"num_layers": 1, "num_heads": 1, "head_dim": 4}, "train": {"total_steps": 30, "peak_lr": 1e300, "warmup_steps": 0, "batch_size": 2, "seq_len": 8, "grad_clip": 0}}"#).unwrap();
    let o = mlvc(&[
        "train",
        "baseline",
        "--corpus",
        s(&f.path("corpus.txt")),
        "--config",
        s(&f.path("hot.json")),
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("step"));
}

#[test]
fn transform_roundtrip_and_interpolation_endpoints() {
    let f = Fixture::new("f64");
    assert!(f.train("baseline", "b").status.success());
    let ck = f.path("b/checkpoint.mlvc");
    let (small, large, back) = (f.path("s.mlvc"), f.path("l.mlvc"), f.path("s2.mlvc"));

    let o = mlvc(&["transform", "coalesce", "--in", s(&ck), "--out", s(&small)]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("params"));
    assert!(mlvc(&[
        "transform",
        "decoalesce",
        "--in",
        s(&small),
        "--out",
        s(&large)
    ])
    .status
    .success());
    assert!(mlvc(&[
        "transform",
        "coalesce",
        "--in",
        s(&large),
        "--out",
        s(&back)
    ])
    .status
    .success());
    let o = mlvc(&[
        "verify",
        "--sizes",
        "tiny",
        "--checkpoint",
        s(&back),
        "--against",
        s(&small),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));

    let zero = f.path("zero.mlvc");
    let o = mlvc(&[
        "transform",
        "interpolate",
        "--in",
        s(&ck),
        "--in",
        s(&large),
        "--alpha",
        "0",
        "--out",
        s(&zero),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        load_checkpoint(&zero).unwrap().params.cast::<f64>(),
        load_checkpoint(&ck).unwrap().params.cast::<f64>()
    );

    let o = mlvc(&[
        "transform",
        "interpolate",
        "--in",
        s(&ck),
        "--in",
        s(&small),
        "--alpha",
        "0.5",
        "--out",
        s(&zero),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = mlvc(&[
        "transform",
        "coalesce",
        "--in",
        s(&f.path("none.mlvc")),
        "--out",
        s(&zero),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn verify_exit_codes() {
    let o = mlvc(&["verify", "--sizes", "tiny"]);
    assert_eq!(o.status.code(), Some(0));
    for p in ["P1", "P2", "P3", "P4", "P5", "P6", "P7"] {
        assert!(stdout(&o).contains(&format!("PASS {p}")), "{p}");
    }
    let o = mlvc(&["verify", "--sizes", "tiny", "--break-symmetry-check"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL P6"));

    let f = Fixture::new("f32");
    assert!(f.train("baseline", "b").status.success());
    let mut bytes = std::fs::read(f.path("b/checkpoint.mlvc")).unwrap();
    bytes[0] = b'X';
    std::fs::write(f.path("bad.mlvc"), bytes).unwrap();
    let o = mlvc(&[
        "verify",
        "--sizes",
        "tiny",
        "--checkpoint",
        s(&f.path("bad.mlvc")),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn report_saving_markers_and_errors() {
    let f = Fixture::new("f32");
    assert!(f.train("baseline", "b").status.success());
    assert!(f.train("vcycle", "v").status.success());
    let (b, v, merged) = (
        f.path("b/metrics.csv"),
        f.path("v/metrics.csv"),
        f.path("merged.csv"),
    );

    let o = mlvc(&[
        "report",
        "--baseline",
        s(&b),
        "--vcycle",
        s(&b),
        "--target-loss",
        "100",
    ]);
    assert!(o.status.success());
    assert!(
        stdout(&o).contains("saving (FLOPs): 0.0%"),
        "{}",
        stdout(&o)
    );

    let o = mlvc(&[
        "report",
        "--baseline",
        s(&b),
        "--vcycle",
        s(&v),
        "--target-loss",
        "0.01",
        "--out",
        s(&merged),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("not-reached"));
    assert!(std::fs::read_to_string(&merged)
        .unwrap()
        .starts_with("run,step,"));

    std::fs::write(f.path("junk.csv"), "a,b,c\n1,2\n").unwrap();
    let o = mlvc(&[
        "report",
        "--baseline",
        s(&f.path("junk.csv")),
        "--vcycle",
        s(&v),
        "--target-loss",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(3));
}
