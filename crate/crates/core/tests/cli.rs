use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel).to_string_lossy().into_owned()
}

fn tiertrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tiertrack")).args(args).output().unwrap()
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn track_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.txt");
    let run = tiertrack(&[
        "track",
        "--dets",
        &fixture("seq10/dets.txt"),
        "--config",
        &fixture("seq10/config.cfg"),
        "--out",
        &path_str(&out),
        "--format",
        "mot",
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stderr).contains("fps"));
    let golden = std::fs::read(fixture("seq10/expected.txt")).unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), golden);
}

#[test]
fn eval_of_ground_truth_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    // Ground-truth rows rewritten in result format.
    let gt = std::fs::read_to_string(fixture("seq10/gt.txt")).unwrap();
    let pred: String = gt
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            format!("{},{},{},{},{},{},1,-1,-1,-1\n", f[0], f[1], f[2], f[3], f[4], f[5])
        })
        .collect();
    let pred_path = dir.path().join("pred.txt");
    std::fs::write(&pred_path, pred).unwrap();
    let json_path = dir.path().join("report.json");
    let run = tiertrack(&["eval", "--gt", &fixture("seq10/gt.txt"), "--pred", &path_str(&pred_path), "--json", &path_str(&json_path)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let table = String::from_utf8(run.stdout).unwrap();
    assert!(table.contains("MOTA") && table.contains("100.0"), "{table}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    for key in ["mota", "idf1", "hota"] {
        assert_eq!(report[key].as_f64(), Some(1.0), "{key}");
    }
    for key in ["fp", "fn", "ids"] {
        assert_eq!(report[key].as_u64(), Some(0), "{key}");
    }
    assert!(report["top1"].is_null() && report["top3"].is_null());
}

#[test]
fn unknown_flag_exits_one_with_usage() {
    let run = tiertrack(&["track", "--frobnicate"]);
    assert_eq!(run.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&run.stderr).contains("Usage"));
    assert_eq!(tiertrack(&["eval", "--gt", "a", "--pred", "b", "--iou-thresh", "1.5"]).status.code(), Some(1));
}

#[test]
fn malformed_detections_exit_two_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let dets = dir.path().join("bad.txt");
    std::fs::write(&dets, "1,-1,0,0,10,10,0.9,-1,-1,-1\n2,-1,0,0,10\n").unwrap();
    let out = dir.path().join("out.txt");
    let run = tiertrack(&["track", "--dets", &path_str(&dets), "--config", &fixture("configs/n2.cfg"), "--out", &path_str(&out)]);
    assert_eq!(run.status.code(), Some(2));
    let err = String::from_utf8_lossy(&run.stderr);
    assert!(err.contains("bad.txt") && err.contains("line 2"), "{err}");
    assert!(!out.exists());
}

#[test]
fn malformed_config_exits_two_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "tiers.thresholds = 1.0, 0.6\nfeatures.warp = true\n").unwrap();
    let run = tiertrack(&["synth", "--config", &path_str(&cfg), "--out-dir", &path_str(dir.path())]);
    assert_eq!(run.status.code(), Some(2));
    let err = String::from_utf8_lossy(&run.stderr);
    assert!(err.contains("bad.cfg") && err.contains("line 1"), "{err}");
}

#[test]
fn reid_on_mot_input_reports_missing_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("reid.cfg");
    std::fs::write(&cfg, "features.reid = true\n").unwrap();
    let run = tiertrack(&[
        "track",
        "--dets",
        &fixture("seq10/dets.txt"),
        "--config",
        &path_str(&cfg),
        "--out",
        &path_str(&dir.path().join("o.txt")),
    ]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("embedding"));
}

fn synth_small(dir: &Path) -> (PathBuf, PathBuf) {
    let cfg = dir.join("synth.cfg");
    std::fs::write(&cfg, "synth.seed = 3\nsynth.n_frames = 60\nsynth.n_targets = 4\nsynth.crossing_pairs = 2\n").unwrap();
    let out_dir = dir.join("seq");
    let run = tiertrack(&["synth", "--config", &path_str(&cfg), "--out-dir", &path_str(&out_dir)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    (out_dir.join("gt.txt"), out_dir.join("dets.jsonl"))
}

#[test]
fn synth_track_infer_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (gt, dets) = synth_small(dir.path());
    let tracks = dir.path().join("tracks.txt");
    let run = tiertrack(&["track", "--dets", &path_str(&dets), "--config", &fixture("occlusion/n2.cfg"), "--out", &path_str(&tracks)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    for scheme in ["majority", "logitsum", "image"] {
        let json = dir.path().join(format!("{scheme}.json"));
        let run = tiertrack(&[
            "infer",
            "--tracks",
            &path_str(&tracks),
            "--dets",
            &path_str(&dets),
            "--gt",
            &path_str(&gt),
            "--scheme",
            scheme,
            "--json",
            &path_str(&json),
        ]);
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
        let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
        let top1 = report["top1"].as_f64().unwrap();
        let top3 = report["top3"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&top1) && top1 <= top3, "{scheme}: {top1} {top3}");
        assert!(report["mota"].is_null());
    }
}

#[test]
fn synth_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (gt_a, dets_a) = synth_small(a.path());
    let (gt_b, dets_b) = synth_small(b.path());
    assert_eq!(std::fs::read(gt_a).unwrap(), std::fs::read(gt_b).unwrap());
    assert_eq!(std::fs::read(dets_a).unwrap(), std::fs::read(dets_b).unwrap());
}
