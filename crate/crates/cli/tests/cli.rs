use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scenelift::bundle::SceneBundle;
use scenelift::formats::write_png_mask;
use scenelift::refine::read_history_csv;
use scenelift::synth::{GT_DIR, PROVIDERS_FILE};
use scenelift::ImageBuffer;

fn scenelift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scenelift"))
        .args(args)
        .args(["--log-level", "warn"])
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Every file under `dir`, keyed by relative path.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

struct Case {
    _temp: tempfile::TempDir,
    root: PathBuf,
}

impl Case {
    fn synth(seed: u64) -> Self {
        let temp = tempfile::tempdir().unwrap();
        let root = temp.path().to_path_buf();
        let out = scenelift(&["synth", "--seed", &seed.to_string(), "--out", s(&root.join("synth"))]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        Self { _temp: temp, root }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn config(&self, json: &str) -> PathBuf {
        let p = self.path("config.json");
        std::fs::write(&p, json).unwrap();
        p
    }

    fn reconstruct(&self, out: &str, extra: &[&str]) -> Output {
        let image = self.path("synth/image.png");
        let masks = self.path("synth/masks");
        let providers = self.path("synth").join(PROVIDERS_FILE);
        let out = self.path(out);
        let mut args = vec![
            "reconstruct",
            "--image",
            s(&image),
            "--masks",
            s(&masks),
            "--providers",
            s(&providers),
            "--out",
            s(&out),
        ];
        args.extend_from_slice(extra);
        scenelift(&args)
    }
}

#[test]
fn synth_is_deterministic_per_seed() {
    let a = Case::synth(5);
    let temp = tempfile::tempdir().unwrap();
    let out = scenelift(&["synth", "--seed", "5", "--out", s(temp.path())]);
    assert_eq!(code(&out), 0);
    assert_eq!(tree(&a.path("synth")), tree(temp.path()));
}

#[test]
fn skip_refine_then_render_matches_the_reconstruction_render() {
    let c = Case::synth(1);
    let out = c.reconstruct("coarse", &["--skip-refine"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let bundle = SceneBundle::load(&c.path("coarse")).unwrap();
    assert!(!bundle.objects.is_empty());
    assert!(c.path("coarse/stages/depth_metric.pfm").is_file());
    assert!(!c.path("coarse/loss.csv").exists());

    let out = scenelift(&["render", s(&c.path("coarse")), "--out", s(&c.path("frames"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let frame = std::fs::read(c.path("frames/frame_000.png")).unwrap();
    assert_eq!(frame, std::fs::read(c.path("coarse/render.png")).unwrap());

    let out = scenelift(&["render", s(&c.path("coarse")), "--spiral", "1", "--out", s(&c.path("spiral1"))]);
    assert_eq!(code(&out), 0);
    assert_eq!(frame, std::fs::read(c.path("spiral1/frame_000.png")).unwrap());

    let out = scenelift(&["render", s(&c.path("coarse")), "--spiral", "8", "--out", s(&c.path("spiral8"))]);
    assert_eq!(code(&out), 0);
    let frames = tree(&c.path("spiral8"));
    assert_eq!(frames.keys().filter(|k| k.extension().is_some_and(|e| e == "png")).count(), 8);
}

#[test]
fn reconstruct_refine_and_resume() {
    let c = Case::synth(2);
    let cfg = c.config(r#"{"refine": {"iterations": 30, "edit_every": 10}}"#);
    let out = c.reconstruct("full", &["--config", s(&cfg)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let history = read_history_csv(&c.path("full/loss.csv")).unwrap();
    assert_eq!(history.len(), 31);
    assert_eq!(history.iter().filter(|r| r.diff.is_some()).count(), 3);

    let providers = c.path("synth").join(PROVIDERS_FILE);
    let out = scenelift(&[
        "refine",
        s(&c.path("full")),
        "--providers",
        s(&providers),
        "--config",
        s(&cfg),
        "--out",
        s(&c.path("resumed")),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let resumed = read_history_csv(&c.path("resumed/loss.csv")).unwrap();
    assert_eq!(resumed.len(), 31);
    // Resuming starts from the refined bundle, not the coarse one. Rows with
    // the same iteration share the coverage schedule, so they compare.
    assert!(resumed[0].total < history[0].total, "{} vs {}", resumed[0].total, history[0].total);
}

#[test]
fn mask_errors_are_usage_errors() {
    let c = Case::synth(3);
    let empty = c.path("no_masks");
    std::fs::create_dir_all(&empty).unwrap();
    let image = c.path("synth/image.png");
    let providers = c.path("synth").join(PROVIDERS_FILE);
    let run = |masks: &Path| {
        scenelift(&[
            "reconstruct",
            "--image",
            s(&image),
            "--masks",
            s(masks),
            "--providers",
            s(&providers),
            "--out",
            s(&c.path("out")),
            "--skip-refine",
        ])
    };
    let out = run(&empty);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    let overlap = c.path("overlap");
    std::fs::create_dir_all(&overlap).unwrap();
    let mut m = ImageBuffer::filled(128, 128, 1, 0.0);
    for x in 10..40 {
        m.set(x, 20, 0, 1.0);
    }
    write_png_mask(&overlap.join("obj_00.png"), &m).unwrap();
    write_png_mask(&overlap.join("obj_03.png"), &m).unwrap();
    let out = run(&overlap);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("obj_00") && err.contains("obj_03"), "{err}");
}

#[test]
fn provider_failure_exits_3_and_names_the_stage() {
    let c = Case::synth(0);
    let providers = c.path("fail.json");
    std::fs::write(
        &providers,
        r#"{"version": 1, "providers": {"depth_normal": {"mock": {"mode": "fail", "message": "no weights"}}}}"#,
    )
    .unwrap();
    let out = scenelift(&[
        "reconstruct",
        "--image",
        s(&c.path("synth/image.png")),
        "--masks",
        s(&c.path("synth/masks")),
        "--providers",
        s(&providers),
        "--out",
        s(&c.path("out")),
    ]);
    assert_eq!(code(&out), 3);
    let err = stderr(&out);
    assert!(err.contains("depth") && err.contains("no weights"), "{err}");
}

#[test]
fn non_finite_loss_exits_4() {
    let c = Case::synth(0);
    let cfg = c.config(r#"{"refine": {"iterations": 5, "loss_weights": {"mask": 1e308, "rgb": 1e308, "depth": 1e308, "diff": 1}}}"#);
    let out = c.reconstruct("out", &["--config", s(&cfg)]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(c.path("out/stages/partial/manifest.json").is_file());
}

#[test]
fn edit_writes_a_copy() {
    let c = Case::synth(4);
    let src = c.path("synth/scene");
    let before = tree(&src);
    let script = c.path("edit.json");
    std::fs::write(
        &script,
        r#"{"operations": [{"op": "move", "id": 0, "delta": [0.1, 0, 0]}, {"op": "delete", "id": 1}]}"#,
    )
    .unwrap();
    let out = scenelift(&["edit", s(&src), s(&script), "--out", s(&c.path("edited"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(tree(&src), before);
    let a = SceneBundle::load(&src).unwrap();
    let b = SceneBundle::load(&c.path("edited")).unwrap();
    assert!(b.object_index(1).is_none());
    let moved = b.objects[b.object_index(0).unwrap()].affine.translation;
    assert_eq!(moved, a.objects[0].affine.translation + scenelift::Vec3::new(0.1, 0.0, 0.0));

    let out = scenelift(&["edit", s(&src), s(&script), "--out", s(&src)]);
    assert_eq!(code(&out), 2);
    std::fs::write(&script, r#"{"operations": [{"op": "delete", "id": 42}]}"#).unwrap();
    let out = scenelift(&["edit", s(&src), s(&script), "--out", s(&c.path("e2"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn eval_against_own_ground_truth_is_perfect() {
    let c = Case::synth(6);
    let gt = c.path("synth").join(GT_DIR).join("gt.json");
    let out = scenelift(&["eval", s(&c.path("synth/scene")), "--gt", s(&gt), "--samples", "2000", "--out", s(&c.path("ev"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(c.path("ev/report.json")).unwrap()).unwrap();
    assert_eq!(report["mean_psnr"], "inf");
    assert_eq!(report["mean_ssim"], 1.0);
    assert_eq!(report["mean_chamfer"], 0.0);
    assert_eq!(report["mean_f_score"], 100.0);
    assert!(c.path("ev/report.txt").is_file());

    std::fs::remove_file(c.path("synth/gt/views/view_002.png")).unwrap();
    std::fs::remove_file(c.path("synth/gt/meshes/obj_00.ply")).unwrap();
    let out = scenelift(&["eval", s(&c.path("synth/scene")), "--gt", s(&gt)]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("view_002.png") && err.contains("obj_00.ply"), "{err}");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&scenelift(&["synth"])), 2);
    assert_eq!(code(&scenelift(&["frobnicate"])), 2);
    assert_eq!(code(&scenelift(&["mock-provider", "{\"mode\": \"nope\"}", "."])), 2);
    let temp = tempfile::tempdir().unwrap();
    let bad = temp.path().join("cfg.json");
    std::fs::write(&bad, r#"{"refine": {"iterations": 1, "bogus": 2}}"#).unwrap();
    let out = scenelift(&["refine", s(temp.path()), "--config", s(&bad), "--out", s(&temp.path().join("o"))]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}
