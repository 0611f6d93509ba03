use std::path::Path;

use scenelift::bundle::SceneBundle;
use scenelift::edit::{apply_edits, EditOp, EditScript, RecolorMode};
use scenelift::formats::{read_png_rgb, quantize};
use scenelift::metrics::{psnr, sample_surface};
use scenelift::pipeline::{
    check_masks, evaluate, read_mask_dir, reconstruct, render_view, spiral_poses, write_frames, EvalConfig,
    GroundTruth, PipelineConfig, GT_FILE,
};
use scenelift::providers::{ProtocolProviders, ProvidersConfig};
use scenelift::refine::RefineConfig;
use scenelift::scene::{apply_affine, spiral_offset, SceneBounds};
use scenelift::synth::{synthesize, Synthetic, SynthConfig, GT_DIR, PROVIDERS_FILE};
use scenelift::{Error, ImageBuffer, Vec3};

fn synth_dir(seed: u64, dir: &Path) -> Synthetic {
    let cfg = SynthConfig::default();
    let s = synthesize(seed, &cfg).unwrap();
    s.write(dir, &cfg).unwrap();
    s
}

fn oracle_providers(dir: &Path) -> ProtocolProviders {
    let cfg = ProvidersConfig::load(&dir.join(PROVIDERS_FILE)).unwrap();
    ProtocolProviders::new(cfg, &dir.join("work")).unwrap()
}

fn config(iterations: usize) -> PipelineConfig {
    PipelineConfig {
        refine: RefineConfig {
            iterations,
            ..RefineConfig::default()
        },
        ..PipelineConfig::default()
    }
}

fn hash(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "masks", "meshes"] {
        let d = dir.join(sub);
        let mut names: Vec<_> = std::fs::read_dir(&d).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names.into_iter().filter(|p| p.is_file()) {
            out.push((p.display().to_string(), std::fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn oracle_reconstruction_reaches_30_db() {
    let tmp = tempfile::tempdir().unwrap();
    let s = synth_dir(2, tmp.path());
    let masks = read_mask_dir(&tmp.path().join("masks")).unwrap();
    assert_eq!(masks.len(), s.masks.len());
    let image = read_png_rgb(&tmp.path().join("image.png")).unwrap();
    let mut p = oracle_providers(tmp.path());
    let stages = tmp.path().join("stages");
    let r = reconstruct(&image, &masks, &s.camera, &mut p, &config(1500), false, Some(&stages)).unwrap();
    assert_eq!(r.critic_calls, 150);
    let render = render_view(&r.bundle.scene(), &r.bundle.camera);
    let db = psnr(&quantize(&render.color), &r.bundle.image).unwrap();
    assert!(db >= 30.0, "input-view PSNR {db:.2} dB");
    assert!(stages.join("coarse").join("manifest.json").is_file());
    assert!(stages.join("background.ply").is_file());
}

#[test]
fn skip_refine_returns_the_coarse_assembly() {
    let tmp = tempfile::tempdir().unwrap();
    let s = synth_dir(4, tmp.path());
    let masks = read_mask_dir(&tmp.path().join("masks")).unwrap();
    let mut p = oracle_providers(tmp.path());
    let r = reconstruct(&s.image, &masks, &s.camera, &mut p, &config(10), true, None).unwrap();
    assert!(r.history.is_empty());
    assert_eq!(r.bundle.scene(), r.coarse);
    assert_eq!(r.bundle.caption.as_deref(), Some(s.caption.as_str()));
}

#[test]
fn mask_errors_are_usage_or_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let s = synth_dir(5, tmp.path());
    let mut p = oracle_providers(tmp.path());
    let err = reconstruct(&s.image, &[], &s.camera, &mut p, &config(1), true, None).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)), "{err}");

    let mut masks = read_mask_dir(&tmp.path().join("masks")).unwrap();
    let grown = masks[0].1.map(|_| 1.0);
    masks.push((9, grown));
    let err = check_masks(&s.image, &masks).unwrap_err().to_string();
    assert!(err.contains("obj_00") && err.contains("obj_09"), "{err}");
}

#[test]
fn stage_failures_name_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let s = synth_dir(6, tmp.path());
    let masks = read_mask_dir(&tmp.path().join("masks")).unwrap();
    let mut p = ProtocolProviders::temporary(ProvidersConfig::default()).unwrap();
    let err = reconstruct(&s.image, &masks, &s.camera, &mut p, &config(1), true, None).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "depth", .. }), "{err}");
    assert!(matches!(err.root(), Error::Provider(_)));
}

fn small_bundle(seed: u64) -> (tempfile::TempDir, SceneBundle) {
    let tmp = tempfile::tempdir().unwrap();
    let s = synth_dir(seed, tmp.path());
    (tmp, s.bundle().unwrap())
}

#[test]
fn delete_hides_only_the_deleted_object() {
    let (_tmp, b) = small_bundle(1);
    let victim = b.objects[0].id;
    let before = render_view(&b.scene(), &b.camera);
    let edited = apply_edits(&b, &EditScript::new(vec![EditOp::Delete { id: victim }])).unwrap();
    assert!(edited.object_index(victim).is_none());
    let after = render_view(&edited.scene(), &edited.camera);
    let gone = before.object_masks[0].mask_bits();
    for k in 0..gone.len() {
        if !gone[k] {
            assert_eq!(before.color.rgb(k), after.color.rgb(k), "pixel {k}");
        }
    }
    assert_eq!(after.object_masks.len(), before.object_masks.len() - 1);
}

#[test]
fn move_and_recolor_are_exact() {
    let (_tmp, b) = small_bundle(1);
    let id = b.objects[1].id;
    let script = EditScript::new(vec![
        EditOp::Move {
            id,
            delta: [0.1, 0.0, 0.0],
        },
        EditOp::Recolor {
            id,
            mode: RecolorMode::Multiply,
            rgb: [0.5, 0.5, 0.5],
        },
    ]);
    let e = apply_edits(&b, &script).unwrap();
    let (o0, o1) = (&b.objects[1], &e.objects[1]);
    assert_eq!(o1.affine.translation, o0.affine.translation + Vec3::new(0.1, 0.0, 0.0));
    let m0 = b.manifest().objects[1].affine.translation;
    let m1 = e.manifest().objects[1].affine.translation;
    assert_eq!([m1[0] - m0[0], m1[1] - m0[1], m1[2] - m0[2]], [o1.affine.translation.x - o0.affine.translation.x, 0.0, 0.0]);
    let mut expected = o0.mesh.colors.clone();
    for c in expected.iter_mut() {
        for v in c.iter_mut() {
            *v *= 0.5;
        }
    }
    assert_eq!(o1.mesh.colors, expected);
    assert_eq!(e.objects[0], b.objects[0]);
}

#[test]
fn edit_validation_follows_deletions() {
    let (_tmp, b) = small_bundle(1);
    let id = b.objects[0].id;
    let twice = EditScript::new(vec![EditOp::Delete { id }, EditOp::Move { id, delta: [0.0; 3] }]);
    assert!(matches!(apply_edits(&b, &twice), Err(Error::Validation(_))));
    let bad = EditScript::new(vec![EditOp::Recolor {
        id,
        mode: RecolorMode::Replace,
        rgb: [1.5, 0.0, 0.0],
    }]);
    assert!(apply_edits(&b, &bad).is_err());
    assert!(apply_edits(&b, &EditScript::new(vec![EditOp::Delete { id: 99 }])).is_err());
}

#[test]
fn edits_leave_the_source_bundle_untouched() {
    let (tmp, b) = small_bundle(3);
    let src = tmp.path().join("src");
    b.save(&src).unwrap();
    let before = hash(&src);
    let loaded = SceneBundle::load(&src).unwrap();
    let script = EditScript::new(vec![
        EditOp::Delete { id: loaded.objects[0].id },
        EditOp::Recolor {
            id: loaded.objects.last().unwrap().id,
            mode: RecolorMode::Replace,
            rgb: [0.2, 0.9, 0.1],
        },
    ]);
    apply_edits(&loaded, &script).unwrap().save(&tmp.path().join("dst")).unwrap();
    assert_eq!(hash(&src), before);
    assert_eq!(SceneBundle::load(&src).unwrap(), loaded);
}

#[test]
fn spiral_one_is_the_input_frame() {
    let (tmp, b) = small_bundle(2);
    let poses = spiral_poses(&b, 1).unwrap();
    assert_eq!(poses, vec![b.camera]);
    let out = tmp.path().join("frames");
    write_frames(&out, &b.scene(), &poses).unwrap();
    let frame = read_png_rgb(&out.join("frame_000.png")).unwrap();
    assert_eq!(frame, quantize(&render_view(&b.scene(), &b.camera).color));
}

#[test]
fn spiral_centers_match_the_formula() {
    let (tmp, b) = small_bundle(2);
    let bounds = SceneBounds::new(Vec3::zeros(), Vec3::repeat(1.0)).unwrap();
    let poses = scenelift::scene::spiral_trajectory(&b.camera, &bounds, 8).unwrap();
    let records = write_frames(&tmp.path().join("f"), &b.scene(), &poses).unwrap();
    assert_eq!(records.len(), 8);
    let c0 = b.camera.center();
    for (k, r) in records.iter().enumerate() {
        // One turn: x = 0.4 sin θ, y = 0.4 (cos θ - 1), z = 0.16 sin 2θ.
        let th = 2.0 * std::f64::consts::PI * k as f64 / 8.0;
        let want = c0 + Vec3::new(0.4 * th.sin(), 0.4 * (th.cos() - 1.0), 0.16 * (2.0 * th).sin());
        let got = Vec3::from(r.center);
        assert!((got - want).norm() < 1e-12, "pose {k}: {got:?} vs {want:?}");
        assert!((spiral_offset(&Vec3::repeat(1.0), k, 8) + c0 - want).norm() < 1e-12);
    }
}

#[test]
fn self_evaluation_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let s = synth_dir(7, tmp.path());
    let gt_dir = tmp.path().join(GT_DIR);
    let gt = GroundTruth::load(&gt_dir.join(GT_FILE)).unwrap();
    let cfg = EvalConfig { samples: 2000, seed: 3 };
    let report = evaluate(&s.bundle().unwrap(), &gt, &gt_dir, &cfg).unwrap();
    assert_eq!(report.views.len(), 8);
    for v in &report.views {
        assert_eq!(v.psnr, f64::INFINITY);
        assert!((v.ssim - 1.0).abs() < 1e-12);
    }
    assert_eq!(report.mean_psnr, f64::INFINITY);
    for o in &report.objects {
        assert_eq!(o.chamfer, 0.0);
        assert_eq!(o.f_score, 100.0);
    }
    let json = serde_json::to_string(&report).unwrap();
    assert!(json.contains("\"inf\""));
    assert!(report.to_text().contains("mean chamfer"));
}

fn brute_chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
    let one = |p: &[Vec3], q: &[Vec3]| {
        p.iter().map(|x| q.iter().map(|y| (x - y).norm()).fold(f64::INFINITY, f64::min)).sum::<f64>() / p.len() as f64
    };
    0.5 * (one(a, b) + one(b, a))
}

#[test]
fn moved_object_chamfer_matches_brute_force() {
    let tmp = tempfile::tempdir().unwrap();
    let s = synth_dir(8, tmp.path());
    let gt_dir = tmp.path().join(GT_DIR);
    let gt = GroundTruth::load(&gt_dir.join(GT_FILE)).unwrap();
    let b = s.bundle().unwrap();
    let id = b.objects[0].id;
    let moved = apply_edits(&b, &EditScript::new(vec![EditOp::Move { id, delta: [0.05, 0.0, 0.0] }])).unwrap();
    let cfg = EvalConfig { samples: 1500, seed: 11 };
    let report = evaluate(&moved, &gt, &gt_dir, &cfg).unwrap();

    let truth = scenelift::formats::read_ply(&gt_dir.join(&gt.objects[0].mesh)).unwrap();
    let bounds = truth.bounds().unwrap();
    let (c, d) = (bounds.center(), bounds.diagonal());
    let o = &moved.objects[0];
    let p: Vec<Vec3> = sample_surface(&apply_affine(&o.affine, &o.mesh), 1500, 11).unwrap().iter().map(|v| (v - c) / d).collect();
    let t: Vec<Vec3> = sample_surface(&truth, 1500, 11).unwrap().iter().map(|v| (v - c) / d).collect();
    let want = brute_chamfer(&p, &t);
    assert!((report.objects[0].chamfer - want).abs() < 1e-6, "{} vs {want}", report.objects[0].chamfer);
    assert!(report.objects[0].chamfer > 0.0);
    assert_eq!(report.objects[1].chamfer, 0.0);
}

#[test]
fn missing_ground_truth_files_are_listed() {
    let tmp = tempfile::tempdir().unwrap();
    synth_dir(9, tmp.path());
    let gt_dir = tmp.path().join(GT_DIR);
    std::fs::remove_file(gt_dir.join("views/view_002.png")).unwrap();
    std::fs::remove_file(gt_dir.join("meshes/obj_00.ply")).unwrap();
    match GroundTruth::load(&gt_dir.join(GT_FILE)) {
        Err(Error::MissingFiles(v)) => {
            assert_eq!(v.len(), 2);
            assert!(v[0].ends_with("views/view_002.png") && v[1].ends_with("meshes/obj_00.ply"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn mask_dir_ignores_other_files() {
    let tmp = tempfile::tempdir().unwrap();
    let m = ImageBuffer::from_mask_bits(4, 4, &[true; 16]);
    scenelift::formats::write_png_mask(&tmp.path().join("obj_03.png"), &m).unwrap();
    scenelift::formats::write_png_mask(&tmp.path().join("obj_01.png"), &m).unwrap();
    std::fs::write(tmp.path().join("notes.txt"), "x").unwrap();
    scenelift::formats::write_png_mask(&tmp.path().join("objx.png"), &m).unwrap();
    let ids: Vec<usize> = read_mask_dir(tmp.path()).unwrap().into_iter().map(|(i, _)| i).collect();
    assert_eq!(ids, vec![1, 3]);
}
