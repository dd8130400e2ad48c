use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use amfusion::dataio::{load_gray, save_image, to_tensor};
use amfusion::metrics::{GrayImageU8, MetricReport};
use amfusion::nn::{autoencode, save_weights, ArchConfig, ModelParams};
use amfusion::synthetic::complementary_pair;

fn amfuse(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_amfuse"));
    cmd.args(args).env_remove("AMFUSE_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    model: PathBuf,
}

impl Workspace {
    /// Two pairs (one PGM, one PNG) plus a randomly initialized tiny model.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        for sub in ["ir", "vis", "fused"] {
            std::fs::create_dir_all(root.join(sub)).unwrap();
        }
        for (k, ext) in ["pgm", "png"].iter().enumerate() {
            let (_, a, b) = complementary_pair(24, 40 + k as u64, 2);
            save_image(&a, root.join("ir").join(format!("p{k}.{ext}"))).unwrap();
            save_image(&b, root.join("vis").join(format!("p{k}.{ext}"))).unwrap();
        }
        let arch = ArchConfig { base_channels: 2, ca_reduction: 2, image_side: 24, attention: true };
        let model = root.join("model.amfw");
        save_weights(&ModelParams::<f32>::init(arch, 11).unwrap(), &model).unwrap();
        Self { _dir: dir, root, model }
    }

    fn p(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn fuse(&self, id: &str, ext: &str, strategy: &str, out: &Path) -> Output {
        let (ir, vis) = (self.p(&format!("ir/{id}.{ext}")), self.p(&format!("vis/{id}.{ext}")));
        amfuse(
            &["fuse", "--model", s(&self.model), "--ir", s(&ir), "--vis", s(&vis), "--strategy", strategy, "--out", s(out)],
            &[],
        )
    }
}

#[test]
fn fuse_eval_rank_end_to_end() {
    let ws = Workspace::new();
    for strategy in ["avg", "l1", "mean"] {
        let out = ws.p(&format!("{strategy}.pgm"));
        let o = ws.fuse("p0", "pgm", strategy, &out);
        assert!(o.status.success(), "{strategy}: {}", stderr(&o));
        let fused = load_gray(&out).unwrap();
        assert_eq!((fused.width(), fused.height()), (24, 24));
        let again = ws.p(&format!("{strategy}_again.pgm"));
        assert!(ws.fuse("p0", "pgm", strategy, &again).status.success());
        assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());
    }
    for (id, ext) in [("p0", "pgm"), ("p1", "png")] {
        let o = ws.fuse(id, ext, "l1", &ws.p(&format!("fused/{id}.{ext}")));
        assert!(o.status.success(), "{}", stderr(&o));
    }

    let (report, ir, vis, fused) = (ws.p("report.csv"), ws.p("ir"), ws.p("vis"), ws.p("fused"));
    let args = ["eval", "--ir-dir", s(&ir), "--vis-dir", s(&vis), "--fused-dir", s(&fused), "--out", s(&report)];
    let o = amfuse(&args, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = std::fs::read(&report).unwrap();
    let rows = MetricReport::read_csv(&report).unwrap();
    assert_eq!(rows.rows().iter().map(|r| r.0.as_str()).collect::<Vec<_>>(), ["p0", "p1"]);

    for threads in ["1", "3"] {
        let o = amfuse(&args, &[("AMFUSE_THREADS", threads)]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(std::fs::read(&report).unwrap(), first, "AMFUSE_THREADS={threads}");
    }
    let o = amfuse(&args, &[("AMFUSE_THREADS", "zero")]);
    assert_eq!(o.status.code(), Some(2));

    // An untrained model can score a negative SCD, which the index refuses.
    let ranking = ws.p("rank.csv");
    if rows.mean().unwrap().iter().any(|&v| v <= 0.0) {
        let o = amfuse(&["rank", "--reports", s(&report), "--out", s(&ranking)], &[]);
        assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    }
    let positive = ws.p("positive.csv");
    let mut fake = MetricReport::new();
    fake.push("p0", [6.5, 2.0, 3.0, 30.0, 4.0, 0.5, 0.7, 0.4, 1.5]);
    fake.push("p1", [7.0, 2.5, 3.5, 35.0, 5.0, 0.6, 0.8, 0.5, 1.7]);
    fake.write_csv(&positive).unwrap();
    let o = amfuse(&["rank", "--reports", s(&positive), "--names", "ours", "--out", s(&ranking)], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&ranking).unwrap();
    let row = text.lines().nth(1).unwrap();
    assert!(row.starts_with("ours,") && row.ends_with(",9.0000,1"), "{row}");
}

#[test]
fn average_fusion_of_identical_inputs_is_the_reconstruction() {
    let ws = Workspace::new();
    let out = ws.p("self.pgm");
    let ir = ws.p("ir/p0.pgm");
    let o = amfuse(
        &["fuse", "--model", s(&ws.model), "--ir", s(&ir), "--vis", s(&ir), "--strategy", "avg", "--out", s(&out)],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let params = amfusion::nn::load_weights(&ws.model, ArchConfig::toy()).unwrap();
    let recon = autoencode::<f32>(&to_tensor(&load_gray(&ir).unwrap()), &params).unwrap();
    assert_eq!(load_gray(&out).unwrap(), GrayImageU8::from_tensor(&recon).unwrap());
}

#[test]
fn train_with_config_file_and_overrides() {
    let ws = Workspace::new();
    let cfg = ws.p("train.cfg");
    std::fs::write(&cfg, "# tiny run\nbase_channels = 2\nca_reduction = 2\nimage_side = 24\nmsssim_scales = 2\niterations = 5\n").unwrap();
    let out = ws.p("trained.amfw");
    let run = || {
        amfuse(
            &["train", "--config", s(&cfg), "--ir-dir", s(&ws.p("ir")), "--vis-dir", s(&ws.p("vis")), "--out", s(&out), "--set", "iterations=2", "--set", "seed=5"],
            &[],
        )
    };
    let o = run();
    assert!(o.status.success(), "{}", stderr(&o));
    let trace = std::fs::read_to_string(ws.p("trained.amfw.trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 3, "{trace}");
    let (w1, t1) = (std::fs::read(&out).unwrap(), trace);
    assert!(run().status.success());
    assert_eq!(std::fs::read(&out).unwrap(), w1);
    assert_eq!(std::fs::read_to_string(ws.p("trained.amfw.trace.csv")).unwrap(), t1);

    let fused = ws.p("from_trained.pgm");
    let o = amfuse(
        &["fuse", "--model", s(&out), "--ir", s(&ws.p("ir/p1.png")), "--vis", s(&ws.p("vis/p1.png")), "--out", s(&fused)],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn errors_map_to_exit_codes() {
    let ws = Workspace::new();
    let missing = ws.p("nope.amfw");
    let o = amfuse(&["fuse", "--model", s(&missing), "--ir", s(&ws.p("ir/p0.pgm")), "--vis", s(&ws.p("vis/p0.pgm")), "--out", s(&ws.p("x.pgm"))], &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error[io]"), "{}", stderr(&o));

    let cfg = ws.p("bad.cfg");
    std::fs::write(&cfg, "seed = 1\nwidth = 3\n").unwrap();
    let o = amfuse(&["train", "--config", s(&cfg), "--ir-dir", s(&ws.p("ir")), "--vis-dir", s(&ws.p("vis")), "--out", s(&ws.p("m.amfw"))], &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error[config]") && err.contains("line 2"), "{err}");

    let small = ws.p("small.pgm");
    save_image(&GrayImageU8::new(30, 30, vec![7; 900]).unwrap(), &small).unwrap();
    let o = amfuse(&["fuse", "--model", s(&ws.model), "--ir", s(&ws.p("ir/p0.pgm")), "--vis", s(&small), "--out", s(&ws.p("y.pgm"))], &[]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));

    let o = amfuse(&["fuse", "--strategy", "max"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(amfuse(&["--help"], &[]).status.code(), Some(0));
}
