use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use dds_core::dataset::SplitSpec;
use tempfile::TempDir;

struct Work {
    dir: TempDir,
}

impl Work {
    /// A scratch directory holding a tiny run configuration.
    fn new(extra: &str) -> Work {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().display().to_string();
        let text = format!(
            r#"seed = 7
[data]
corpus = "{root}/corpus"
split = "{root}/split.json"
[generate]
num_videos = 24
frames_per_video = 2
image_size = 16
max_objects_per_frame = 3
[split]
holdout_count = 1
test_fraction = 0.3
[model]
d_model = 16
num_queries = 3
num_heads = 2
ffn_dim = 32
image_height = 16
image_width = 16
backbone_channels = [8, 16]
[train]
steps = 6
videos_per_step = 2
[eval]
recall_ks = [5, 20]
{extra}"#
        );
        std::fs::write(dir.path().join("run.toml"), text).unwrap();
        Work { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn dds(&self, args: &[&str]) -> Output {
        let cfg = self.path("run.toml");
        Command::new(env!("CARGO_BIN_EXE_dds"))
            .arg("--config")
            .arg(&cfg)
            .args(args)
            .current_dir(self.dir.path())
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let o = self.dds(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    }

    fn fails(&self, args: &[&str], code: i32) -> String {
        let o = self.dds(args);
        assert_eq!(o.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&o.stdout));
        String::from_utf8(o.stderr).unwrap()
    }

    fn prepared(extra: &str) -> Work {
        let w = Work::new(extra);
        w.ok(&["gen-data"]);
        w.ok(&["make-split"]);
        w
    }
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn split(w: &Work) -> SplitSpec {
    serde_json::from_slice(&read(&w.path("split.json"))).unwrap()
}

#[test]
fn gen_data_is_deterministic_and_fast() {
    let w = Work::new("");
    let start = Instant::now();
    w.ok(&["gen-data", "--out", "a"]);
    assert!(start.elapsed().as_secs_f64() < 5.0);
    w.ok(&["gen-data", "--out", "b"]);
    for f in ["annotations.jsonl", "header.json", "manifest.json", "frames/v0003/001.png"] {
        assert_eq!(read(&w.path("a").join(f)), read(&w.path("b").join(f)), "{f}");
    }
    w.ok(&["gen-data", "--out", "c", "--seed", "8"]);
    assert_ne!(read(&w.path("a/annotations.jsonl")), read(&w.path("c/annotations.jsonl")));
}

#[test]
fn gen_data_rejects_a_small_vocabulary() {
    let w = Work::new("");
    let text = std::fs::read_to_string(w.path("run.toml")).unwrap();
    std::fs::write(w.path("run.toml"), text.replace("image_size = 16", "image_size = 16\nnum_objects = 5")).unwrap();
    let err = w.fails(&["gen-data"], 2);
    assert!(err.contains("num_objects"), "{err}");
    assert!(!w.path("corpus/annotations.jsonl").exists());
}

#[test]
fn make_split_variants() {
    let w = Work::new("");
    w.ok(&["gen-data"]);
    let out = w.ok(&["make-split", "--holdout-count", "0"]);
    assert!(out.contains("0 unseen classes"), "{out}");
    assert!(split(&w).unseen.is_empty());

    w.ok(&["make-split", "--holdout-count", "2"]);
    let s = split(&w);
    assert_eq!(s.unseen.len(), 2);
    assert!(s.unseen.iter().all(|c| !s.seen.contains(c)));

    let c = s.unseen[0];
    let explicit = format!("{},{},{}", c.subject, c.object, c.relation);
    w.ok(&["make-split", "--holdout", &explicit, "--out", "one.json"]);
    let one: SplitSpec = serde_json::from_slice(&read(&w.path("one.json"))).unwrap();
    assert_eq!(one.unseen, vec![c]);

    let err = w.fails(&["make-split", "--holdout-count", "500"], 2);
    assert!(err.contains("infeasible"), "{err}");
    w.fails(&["make-split", "--holdout", "0,1,99"], 2);
    w.fails(&["make-split", "--corpus", "nowhere"], 2);
}

#[test]
fn train_logs_every_step_and_resumes_exactly() {
    let w = Work::prepared("");
    w.ok(&["train", "--out", "full"]);
    let log = String::from_utf8(read(&w.path("full/loss.csv"))).unwrap();
    assert_eq!(log.lines().count(), 1 + 6);
    assert!(log.starts_with("step,total,giou,l1,obj,rel\n"));

    w.ok(&["train", "--out", "half", "--steps", "3"]);
    let out = w.ok(&["train", "--out", "half", "--resume", "half/final"]);
    assert!(out.contains("step 6"), "{out}");
    assert_eq!(read(&w.path("full/final/params.bin")), read(&w.path("half/final/params.bin")));
    assert_eq!(read(&w.path("full/loss.csv")), read(&w.path("half/loss.csv")));

    let err = w.fails(&["train", "--out", "other", "--resume", "half/final", "--seed", "9"], 2);
    assert!(err.contains("seed"), "{err}");
    w.fails(&["train", "--out", "other", "--resume", "missing"], 2);
}

#[test]
fn divergence_exits_with_code_three() {
    let w = Work::prepared("");
    let text = std::fs::read_to_string(w.path("run.toml")).unwrap();
    let text = text.replace("steps = 6", "steps = 6\nlr = 1e300\nbackbone_lr = 1e300\ngrad_clip = 0.0");
    std::fs::write(w.path("run.toml"), text).unwrap();
    let err = w.fails(&["train", "--out", "boom"], 3);
    assert!(err.contains("non-finite"), "{err}");
}

#[test]
fn eval_is_byte_stable() {
    let w = Work::prepared("");
    w.ok(&["train", "--out", "run"]);
    w.ok(&["eval", "--checkpoint", "run/final", "--out", "e1"]);
    w.ok(&["eval", "--checkpoint", "run/final", "--out", "e2", "--videos", "test"]);
    for f in ["report.txt", "report.json", "classes.csv", "predictions.jsonl"] {
        assert_eq!(read(&w.path("e1").join(f)), read(&w.path("e2").join(f)), "{f}");
    }
    let text = String::from_utf8(read(&w.path("e1/report.txt"))).unwrap();
    assert!(text.contains("[recall]") && text.contains("[mAP]"), "{text}");
    w.ok(&["eval", "--checkpoint", "run/final", "--out", "e3", "--videos", "train"]);

    let err = w.fails(&["eval", "--checkpoint", "run/final", "--split", "absent.json"], 2);
    assert!(err.contains("absent.json"), "{err}");
    w.fails(&["eval", "--checkpoint", "nope"], 2);
}

#[test]
fn ablation_tables() {
    let w = Work::prepared("");
    let out = w.ok(&["ablate", "--variants", "base", "dds", "--out", "ab"]);
    let rows: Vec<&str> = out.lines().collect();
    assert_eq!(rows.len(), 3, "{out}");
    assert!(rows[1].starts_with("base,7,") && rows[2].starts_with("dds,7,"));
    let hash = |r: &str| r.rsplit(',').next().unwrap().to_string();
    assert_eq!(hash(rows[1]), hash(rows[2]));
    assert_eq!(read(&w.path("ab/ablation.csv")), out.as_bytes());

    let out = w.ok(&["ablate", "--variants", "depth:3,3", "depth:6,3", "--out", "depth"]);
    assert_eq!(out.lines().count(), 3);

    let err = w.fails(&["ablate", "--variants", "dds", "wide"], 2);
    assert!(err.contains("supported") && err.contains("o-to-r"), "{err}");
}

#[test]
fn plots() {
    let w = Work::prepared("");
    w.ok(&["train", "--out", "run"]);
    let out = w.ok(&["plot", "run/loss.csv", "--out", "p1"]);
    assert_eq!(out.lines().count(), 5, "{out}");
    for m in ["total", "giou", "l1", "obj", "rel"] {
        assert!(w.path(&format!("p1/{m}.svg")).exists(), "{m}");
    }
    w.ok(&["plot", "run/loss.csv", "--out", "p2"]);
    assert_eq!(read(&w.path("p1/total.svg")), read(&w.path("p2/total.svg")));

    std::fs::write(w.path("empty.csv"), "step,total\n").unwrap();
    let err = w.fails(&["plot", "empty.csv"], 2);
    assert!(err.contains("empty"), "{err}");
}

#[test]
fn unknown_config_keys_are_refused() {
    let w = Work::new("[extra]\nx = 1\n");
    w.fails(&["gen-data"], 2);
    let w = Work::new("");
    let o = Command::new(env!("CARGO_BIN_EXE_dds"))
        .args(["--config", "missing.toml", "gen-data"])
        .current_dir(w.dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
