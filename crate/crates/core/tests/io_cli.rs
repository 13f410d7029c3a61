use std::path::Path;
use std::process::{Command, Output};

use semvox::eval::Difficulty;
use semvox::geometry::Calibration;
use semvox::io::kitti::{decode_labels, encode_labels};
use semvox::io::{
    read_featuremap, read_labels, read_painted, read_scene, synth_scene, SynthSceneSpec,
};
use semvox::painting::NUM_CLASSES;

fn semvox(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semvox"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = semvox(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn desk_model(dir: &Path, scheme: &str) {
    ok(
        dir,
        &[
            "init",
            "--seed",
            "1",
            "--scheme",
            scheme,
            "--depth",
            "desk",
            "--grid",
            "desk",
            "--out",
            "model.svck",
        ],
    );
}

#[test]
fn synth_then_forward_writes_well_formed_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(
        dir,
        &[
            "synth", "--seed", "5", "--peds", "3", "--poles", "2", "--out", "scene",
        ],
    );
    for scheme in ["early", "middle", "late"] {
        desk_model(dir, scheme);
        ok(
            dir,
            &[
                "forward",
                "--scene",
                "scene",
                "--scheme",
                scheme,
                "--weights",
                "model.svck",
                "--grid",
                "desk",
                "--out",
                "dets.txt",
            ],
        );
        let text = std::fs::read_to_string(dir.join("dets.txt")).unwrap();
        for line in text.lines() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            assert_eq!(fields.len(), 16, "{line}");
            assert_eq!(fields[0], "Pedestrian");
            let score: f64 = fields[15].parse().unwrap();
            assert!((0.3..=1.0).contains(&score));
            assert!(fields[1..]
                .iter()
                .all(|f| f.parse::<f64>().unwrap().is_finite()));
        }
        let calib = semvox::io::read_calib(&dir.join("scene/calib/000000.txt")).unwrap();
        let parsed = read_labels(&dir.join("dets.txt"), &calib).unwrap();
        assert!(parsed.iter().all(|l| l.score.is_some()));
    }
}

#[test]
fn forward_over_a_directory_uses_workers() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "--seed", "6", "--out", "scene"]);
    desk_model(dir, "late");
    for sub in [
        "velodyne/{}.bin",
        "calib/{}.txt",
        "scores/{}.svsm",
        "label_2/{}.txt",
    ] {
        let (from, to) = (sub.replace("{}", "000000"), sub.replace("{}", "000001"));
        std::fs::copy(dir.join("scene").join(from), dir.join("scene").join(to)).unwrap();
    }
    let out = Command::new(env!("CARGO_BIN_EXE_semvox"))
        .current_dir(dir)
        .env("SEMVOX_THREADS", "2")
        .args([
            "forward",
            "--scene",
            "scene",
            "--weights",
            "model.svck",
            "--grid",
            "desk",
            "--workers",
            "4",
            "--out",
            "dets",
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let a = std::fs::read(dir.join("dets/000000.txt")).unwrap();
    assert_eq!(a, std::fs::read(dir.join("dets/000001.txt")).unwrap());
}

#[test]
fn eval_of_ground_truth_against_itself_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(
        dir,
        &["synth", "--seed", "7", "--peds", "4", "--out", "scene"],
    );
    for mode in ["11", "40"] {
        let table = ok(
            dir,
            &[
                "eval",
                "--dets",
                "scene",
                "--gts",
                "scene",
                "--mode",
                mode,
                "--out",
                "report.txt",
            ],
        );
        assert!(table.contains("100.00"), "{table}");
        let report = std::fs::read_to_string(dir.join("report.txt")).unwrap();
        for level in Difficulty::LEVELS {
            for kind in ["bev", "3d"] {
                let key = format!("{}.ap_{kind}=", level.name());
                let line = report
                    .lines()
                    .find(|l| l.starts_with(&key))
                    .unwrap_or_else(|| panic!("{key} missing"));
                let ap: f64 = line[key.len()..].parse().unwrap();
                assert_eq!(ap, 100.0, "{line}");
            }
        }
    }
}

#[test]
fn paint_and_encode_outputs_match_the_library() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "--seed", "8", "--out", "scene"]);
    ok(dir, &["paint", "--scene", "scene", "--out", "painted.svpc"]);
    let bundle = read_scene(&dir.join("scene"), "000000").unwrap();
    assert_eq!(
        read_painted(&dir.join("painted.svpc")).unwrap(),
        bundle.painted().unwrap()
    );

    desk_model(dir, "middle");
    ok(
        dir,
        &[
            "encode",
            "--scene",
            "scene",
            "--weights",
            "model.svck",
            "--grid",
            "desk",
            "--out",
            "features",
        ],
    );
    let geo = read_featuremap(&dir.join("features/geometric.svfm")).unwrap();
    let sem = read_featuremap(&dir.join("features/semantic.svfm")).unwrap();
    assert_eq!((geo.height, geo.width, geo.channels), (80, 80, 16));
    assert_eq!((sem.height, sem.width, sem.channels), (80, 80, 8));
}

#[test]
fn gradcheck_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["gradcheck", "--seed", "11", "--scenes", "10"]);
    assert!(out.contains("0 mismatches"), "{out}");
}

#[test]
fn bad_inputs_exit_non_zero_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "--seed", "9", "--out", "scene"]);
    desk_model(dir, "early");

    std::fs::write(dir.join("garbage.svck"), b"NOPE").unwrap();
    std::fs::write(dir.join("scene/velodyne/000001.bin"), [0u8; 17]).unwrap();
    std::fs::copy(
        dir.join("scene/calib/000000.txt"),
        dir.join("scene/calib/000001.txt"),
    )
    .unwrap();
    std::fs::copy(
        dir.join("scene/scores/000000.svsm"),
        dir.join("scene/scores/000001.svsm"),
    )
    .unwrap();
    std::fs::write(dir.join("broken.txt"), "Pedestrian 0 0 0 1 2 3\n").unwrap();
    std::fs::create_dir(dir.join("gts")).unwrap();
    std::fs::copy(dir.join("broken.txt"), dir.join("gts/000000.txt")).unwrap();

    let cases: [&[&str]; 6] = [
        &[
            "forward",
            "--scene",
            "scene",
            "--frame",
            "000000",
            "--weights",
            "garbage.svck",
            "--grid",
            "desk",
            "--out",
            "d.txt",
        ],
        &[
            "forward",
            "--scene",
            "missing",
            "--frame",
            "000000",
            "--weights",
            "model.svck",
            "--grid",
            "desk",
            "--out",
            "d.txt",
        ],
        &[
            "forward",
            "--scene",
            "scene",
            "--frame",
            "000000",
            "--scheme",
            "late",
            "--weights",
            "model.svck",
            "--grid",
            "desk",
            "--out",
            "d.txt",
        ],
        &[
            "paint", "--scene", "scene", "--frame", "000001", "--out", "p.svpc",
        ],
        &["eval", "--dets", "scene", "--gts", "gts", "--out", "r.txt"],
        &["synth", "--fidelity", "1.5", "--out", "other"],
    ];
    for args in cases {
        let out = semvox(dir, args);
        assert!(!out.status.success(), "{args:?} should fail");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.starts_with("error: "), "{args:?}: {err}");
    }
}

#[test]
fn synthetic_labels_survive_a_text_round_trip() {
    let bundle = synth_scene(&SynthSceneSpec {
        seed: 21,
        pedestrians: 5,
        ..SynthSceneSpec::default()
    })
    .unwrap();
    let labels = bundle.labels.unwrap();
    let text = encode_labels(&labels, &bundle.calib);
    let back = decode_labels(&text, Path::new("mem"), &bundle.calib).unwrap();
    assert_eq!(back.len(), labels.len());
    for (a, b) in labels.iter().zip(&back) {
        assert_eq!(a.difficulty(), b.difficulty());
        let (x, y) = (a.bbox, b.bbox);
        for (p, q) in [
            (x.x, y.x),
            (x.y, y.y),
            (x.z, y.z),
            (x.l, y.l),
            (x.w, y.w),
            (x.h, y.h),
        ] {
            assert!((p - q).abs() < 1e-5);
        }
        let dt = (x.theta - y.theta).rem_euclid(std::f64::consts::TAU);
        assert!(dt.min(std::f64::consts::TAU - dt) < 1e-5);
    }
}

#[test]
fn scoremap_in_a_bundle_is_a_distribution() {
    let bundle = synth_scene(&SynthSceneSpec {
        seed: 2,
        fidelity: 0.7,
        ..SynthSceneSpec::default()
    })
    .unwrap();
    assert_ne!(bundle.calib, Calibration::canonical());
    for px in bundle.scores.scores() {
        assert_eq!(px.len(), NUM_CLASSES);
        assert!((px.iter().sum::<f32>() - 1.0).abs() < 1e-5);
    }
}
