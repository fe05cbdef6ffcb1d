mod common;

use std::collections::BTreeMap;
use std::process::Command;

use common::{bone_fixture, mshand, path_str, stderr, Files};
use mshand::io::{self, ExcitationsFile};
use mshand::kinematics::{KinematicTree, Pose};
use mshand::musculature::Musculature;
use mshand::training::gen_trajectories;

#[test]
fn eval_of_identical_trajectories_reports_zero_error() {
    let f = Files::new();
    let tree = KinematicTree::default_hand();
    let t = f.trajectory("gt.jsonl", &gen_trajectories(&tree, 1, 12, 0).unwrap()[0]);
    let report = f.path("report.json");
    let o = mshand(&["eval", "--pred", path_str(&t), "--gt", path_str(&t), "-o", path_str(&report)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(r["mpjpe_mm"], 0.0);
    assert_eq!(r["ae_mm_s2"], 0.0);
    assert_eq!(r["frames"], 12);
    assert_eq!(r["per_frame"].as_array().unwrap().len(), 12);
    assert!((r["auc"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(mshand(&["eval", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(mshand(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(mshand(&["eval", "--pred", "a.jsonl"]).status.code(), Some(2));
}

#[test]
fn module_errors_exit_with_one_and_a_single_line() {
    let f = Files::new();
    let o = mshand(&["eval", "--pred", "/nonexistent/a.jsonl", "--gt", "/nonexistent/b.jsonl", "-o", path_str(&f.path("r"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "));

    // A 47-component pose names its line.
    let tree = KinematicTree::default_hand();
    let good = f.trajectory("good.jsonl", &gen_trajectories(&tree, 1, 4, 0).unwrap()[0]);
    let text = std::fs::read_to_string(&good).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut rec: serde_json::Value = serde_json::from_str(&lines[2]).unwrap();
    rec["pose"].as_array_mut().unwrap().pop();
    lines[2] = rec.to_string();
    let bad = f.path("bad.jsonl");
    std::fs::write(&bad, lines.join("\n")).unwrap();
    let o = mshand(&["eval", "--pred", path_str(&bad), "--gt", path_str(&good), "-o", path_str(&f.path("r"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.jsonl:3:"), "{}", stderr(&o));
}

#[test]
fn zero_excitation_from_rest_stays_put() {
    let f = Files::new();
    let tree = KinematicTree::default_hand();
    let musc = Musculature::default_hand(&tree).unwrap();
    let exc = f.excitations(&ExcitationsFile::sequence(vec![vec![0.0; musc.len()]; 30]));
    let out = f.path("traj.jsonl");
    let o = mshand(&[
        "simulate",
        "--muscles",
        path_str(&f.muscles()),
        "--excitations",
        path_str(&exc),
        "--init",
        path_str(&f.pose(&Pose::zeros())),
        "-o",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t = io::load_trajectory(&out).unwrap();
    assert_eq!(t.len(), 31);
    assert!(t.poses().all(|p| *p == Pose::zeros()));
}

#[test]
fn sustained_ring_flexor_gives_rising_curves() {
    let f = Files::new();
    let exc = f.excitations(&ExcitationsFile::sustained(BTreeMap::from([("FDP4".to_string(), 1.0)]), 60));
    let traj = f.path("traj.jsonl");
    let o = mshand(&[
        "simulate",
        "--muscles",
        path_str(&f.muscles()),
        "--excitations",
        path_str(&exc),
        "--init",
        path_str(&f.pose(&Pose::zeros())),
        "-o",
        path_str(&traj),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv_path = f.path("curves.csv");
    let o = mshand(&["plot-data", "--traj", path_str(&traj), "--joints", "ring1,ring2,ring3", "-o", path_str(&csv_path)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("frame,t,ring1,ring2,ring3"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 61);
    assert!(rows[0][2..].iter().all(|&v| v == 0.0));
    for c in 2..5 {
        assert!(rows.iter().any(|r| r[c] == 1.0));
        assert!(rows.iter().all(|r| r[c] <= 1.0));
    }
    let o = mshand(&["plot-data", "--traj", path_str(&traj), "--joints", "ring9", "-o", path_str(&csv_path)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn map_muscles_recovers_joint_centric_offsets() {
    let f = Files::new();
    let tree = KinematicTree::default_hand();
    let (model, muscles) = bone_fixture(&tree);
    let (bones, atts) = (f.path("bones.json"), f.path("atts.json"));
    io::save_bones(&model, &bones).unwrap();
    io::save_attachments(&muscles, &atts).unwrap();
    let out = f.path("mapped.json");
    let o = mshand(&["map-muscles", "--bones", path_str(&bones), "--attachments", path_str(&atts), "-o", path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mapped = io::load_musculature(&tree, &out).unwrap();
    let original = Musculature::default_hand(&tree).unwrap();
    for (a, b) in mapped.muscles().iter().zip(original.muscles()) {
        for (p, q) in a.path.iter().zip(&b.path) {
            assert_eq!(p.joint, q.joint);
            assert!((p.offset - q.offset).norm() < 1e-15);
        }
    }

    let first = muscles[0].path[0].point_id.clone();
    let far = f.path("far.json");
    std::fs::write(&far, format!("{{\"format\":\"mshand-overrides\",\"version\":1,\"overrides\":{{\"{first}\":[0.05,0,0]}}}}")).unwrap();
    let o = mshand(&[
        "map-muscles",
        "--bones",
        path_str(&bones),
        "--attachments",
        path_str(&atts),
        "--override",
        path_str(&far),
        "-o",
        path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_comes_from_the_environment_when_not_given() {
    let f = Files::new();
    let cfg = f.path("cfg.json");
    std::fs::write(&cfg, "{\"format\":\"mshand-config\",\"version\":1,\"dynamics\":{\"dt\":-1.0}}").unwrap();
    let exc = f.excitations(&ExcitationsFile::sequence(vec![vec![0.0; 31]; 2]));
    let (muscles, init, out) = (f.muscles(), f.pose(&Pose::zeros()), f.path("t.jsonl"));
    let args = [
        "simulate",
        "--muscles",
        path_str(&muscles),
        "--excitations",
        path_str(&exc),
        "--init",
        path_str(&init),
        "-o",
        path_str(&out),
    ];
    assert!(mshand(&args).status.success());
    let o = Command::new(env!("CARGO_BIN_EXE_mshand")).args(args).env("MSHAND_CONFIG", &cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn bundled_configs_load() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let hand = io::load_config(&dir.join("hand.json")).unwrap();
    assert_eq!((hand.train.idnet_batch, hand.train.idnet_updates, hand.train.refinenet_iters), (1024, 200, 4500));
    assert_eq!(hand.data.trajectories, 250);
    let toy = io::load_config(&dir.join("toy.json")).unwrap();
    assert_eq!(toy.system, io::System::Toy);
    assert!(toy.system().is_ok());
}
