use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tad_core::ingest::load_annotations;
use tad_core::postproc::{soft_nms, validate_submission, NmsConfig, Submission, VideoDetections};
use tad_core::propgen::HeadWeights;
use tad_core::relation::{PoolConfig, RelationWeights};
use tad_core::segment::sort_ranked;
use tad_core::Detection;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    /// A fresh directory holding a small synthetic dataset.
    fn with_synth(videos: usize) -> Self {
        let ws = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        ws.ok(&["synth", "--synth.videos", &videos.to_string(), "--seed", "5"]);
        ws
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_tad"))
            .args(args)
            .current_dir(self.dir.path())
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "tad {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn code(&self, args: &[&str]) -> i32 {
        let out = self.run(args);
        assert!(!out.stderr.is_empty(), "failures must explain themselves on stderr");
        out.status.code().unwrap()
    }

    fn json(&self, rel: &str) -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(self.path(rel)).unwrap()).unwrap()
    }

    fn save_head(&self, rel: &str, t: usize, d_max: usize, seed: u64) {
        HeadWeights::seeded(t, 8, 6, d_max, seed).save(self.path(rel)).unwrap();
    }
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn oracle_proposals_reach_full_recall() {
    let ws = Workspace::with_synth(12);
    ws.ok(&["propose", "--oracle"]);
    let table = ws.ok(&["eval-proposals"]);
    assert!(table.contains("AR@100"), "{table}");
    let report = ws.json("out/proposal_eval.json");
    assert_eq!(report["AR@100"], 1.0);
    assert!(report["AUC"].as_f64().unwrap() >= 0.99);
    let csv = std::fs::read_to_string(ws.path("out/ar_an.csv")).unwrap();
    assert!(csv.starts_with("an,ar\n1,"));
    assert_eq!(csv.lines().count(), 101);
}

#[test]
fn missing_features_directory_is_an_io_error() {
    let ws = Workspace::with_synth(2);
    ws.save_head("head.json", 100, 100, 1);
    let code = ws.code(&[
        "propose",
        "--paths.head_weights",
        "head.json",
        "--paths.features_dir",
        "absent",
    ]);
    assert_eq!(code, 3);
}

#[test]
fn head_length_mismatch_is_a_shape_error() {
    let ws = Workspace::with_synth(2);
    ws.save_head("head.json", 100, 100, 1);
    let code = ws.code(&["propose", "--paths.head_weights", "head.json", "--propgen.t", "50"]);
    assert_eq!(code, 4);
}

#[test]
fn bad_settings_are_config_errors() {
    let ws = Workspace::with_synth(2);
    assert_eq!(ws.code(&["propose", "--oracle", "--propgen.nonsense", "1"]), 2);
    assert_eq!(ws.code(&["propose", "--oracle", "--postproc.sigma=-1"]), 2);
    std::fs::write(ws.path("bad.toml"), "[propgen]\nt = \"long\"\n").unwrap();
    assert_eq!(ws.code(&["propose", "--oracle", "--config", "bad.toml"]), 2);
    assert_eq!(ws.code(&["propose", "--oracle", "--config", "missing.toml"]), 3);
}

#[test]
fn learned_head_path_writes_valid_proposals() {
    let ws = Workspace::with_synth(3);
    ws.save_head("head.json", 100, 100, 1);
    ws.ok(&[
        "propose",
        "--paths.head_weights",
        "head.json",
        "--propgen.max_proposals",
        "7",
    ]);
    let doc = ws.json("out/proposals.json");
    let videos = doc.as_object().unwrap();
    assert_eq!(videos.len(), 3);
    for list in videos.values() {
        let list = list.as_array().unwrap();
        assert!(!list.is_empty() && list.len() <= 7);
        assert!(list[0]["components"]["p_start"].is_number());
    }
}

#[test]
fn perfect_detections_score_full_map() {
    let ws = Workspace::with_synth(6);
    let gt = load_annotations(ws.path("data/annotations.json")).unwrap();
    let dets: VideoDetections = gt
        .videos
        .iter()
        .map(|(vid, v)| {
            let list = v
                .annotations
                .iter()
                .map(|a| Detection {
                    segment: a.segment,
                    label: a.label.clone(),
                    score: 1.0,
                })
                .collect();
            (vid.clone(), list)
        })
        .collect();
    let sub = Submission::from_detections(&dets, &gt).unwrap();
    std::fs::write(ws.path("perfect.json"), serde_json::to_string(&sub).unwrap()).unwrap();
    let table = ws.ok(&["eval-detections", "--paths.detections", "perfect.json"]);
    assert!(table.contains("average mAP 1.0000"), "{table}");
    assert_eq!(ws.json("out/detection_eval.json")["average_mAP"], 1.0);
}

#[test]
fn zero_epoch_training_writes_the_initialization() {
    let ws = Workspace::with_synth(4);
    ws.ok(&["propose", "--oracle"]);
    let args = [
        "train-relation",
        "--relation.epochs",
        "0",
        "--seed",
        "9",
        "--relation.d_att",
        "5",
        "--relation.hidden",
        "3",
    ];
    ws.ok(&args);
    let init = tempfile::tempdir().unwrap();
    RelationWeights::seeded(PoolConfig::default().dim(), 5, 3, 9)
        .save(init.path().join("relation.json"))
        .unwrap();
    let mut written = dir_bytes(&ws.path("out"));
    written.retain(|name, _| name.starts_with("relation"));
    assert_eq!(written, dir_bytes(init.path()));
    let loss = std::fs::read_to_string(ws.path("out/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 2);
}

#[test]
fn training_then_rescoring_keeps_every_proposal() {
    let ws = Workspace::with_synth(6);
    ws.ok(&["propose", "--oracle"]);
    ws.ok(&[
        "train-relation",
        "--relation.epochs",
        "15",
        "--relation.d_att",
        "8",
        "--relation.hidden",
        "8",
    ]);
    let loss = std::fs::read_to_string(ws.path("out/loss.csv")).unwrap();
    let mse: Vec<f64> = loss
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(mse.last().unwrap() < &mse[0]);
    ws.ok(&["relate", "--paths.relation_weights", "out/relation.json"]);
    let before = ws.json("out/proposals.json");
    let after = ws.json("out/proposals_rescored.json");
    for (vid, list) in before.as_object().unwrap() {
        let rescored = after[vid].as_array().unwrap();
        assert_eq!(rescored.len(), list.as_array().unwrap().len());
        assert!(rescored.iter().all(|p| p["refined_score"].is_number()));
    }
    // Weights trained with another pooling size cannot be applied.
    assert_eq!(
        ws.code(&[
            "relate",
            "--paths.relation_weights",
            "out/relation.json",
            "--relation.bins",
            "4"
        ]),
        4
    );
}

#[test]
fn singleton_ensemble_is_per_label_soft_nms() {
    let ws = Workspace::with_synth(5);
    ws.ok(&["propose", "--oracle"]);
    ws.ok(&["detect"]);
    ws.ok(&[
        "ensemble",
        "--postproc.ensemble_inputs",
        "[\"out/detections.json\"]",
        "--postproc.ensemble_weights",
        "[1.0]",
    ]);

    let gt = load_annotations(ws.path("data/annotations.json")).unwrap();
    let run = validate_submission(&ws.json("out/detections.json"))
        .unwrap()
        .to_detections(&gt)
        .unwrap();
    let expected: VideoDetections = run
        .into_iter()
        .map(|(vid, dets)| {
            let mut by_label: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
            for d in dets {
                by_label.entry(d.label.clone()).or_default().push(d);
            }
            let mut all: Vec<Detection> = by_label
                .values()
                .flat_map(|g| soft_nms(g, &NmsConfig::default()))
                .collect();
            sort_ranked(&mut all);
            (vid, all)
        })
        .collect();
    let expected = serde_json::to_value(Submission::from_detections(&expected, &gt).unwrap()).unwrap();
    assert_eq!(ws.json("out/detections_ensemble.json"), expected);
}

#[test]
fn single_head_map_ensemble_matches_propose() {
    let ws = Workspace::with_synth(3);
    ws.save_head("a.json", 100, 100, 1);
    ws.save_head("b.json", 100, 100, 2);
    ws.ok(&["propose", "--paths.head_weights", "a.json"]);
    ws.ok(&[
        "ensemble",
        "--postproc.ensemble_mode",
        "maps",
        "--postproc.ensemble_inputs",
        "[\"a.json\"]",
    ]);
    assert_eq!(ws.json("out/proposals.json"), ws.json("out/proposals_ensemble.json"));

    let two = [
        "ensemble",
        "--postproc.ensemble_mode",
        "maps",
        "--postproc.ensemble_inputs",
        "[\"a.json\", \"b.json\"]",
    ];
    ws.ok(&[&two[..], &["--postproc.ensemble_weights", "[2.0, 1.0]"]].concat());
    assert_ne!(ws.json("out/proposals.json"), ws.json("out/proposals_ensemble.json"));
    assert_eq!(
        ws.code(&[&two[..], &["--postproc.ensemble_weights", "[1.0]"]].concat()),
        2
    );
}

#[test]
fn augment_appends_shifted_copies() {
    let ws = Workspace::with_synth(3);
    ws.ok(&["augment"]);
    let names: Vec<String> = dir_bytes(&ws.path("out/features_augmented")).into_keys().collect();
    assert_eq!(names.len(), 6);
    assert!(names.contains(&"synth_0000__shift.bin".to_string()));
    ws.ok(&["augment", "--augment.mode", "replace", "--paths.output_dir", "rep"]);
    assert_eq!(dir_bytes(&ws.path("rep/features_augmented")).len(), 3);
    assert_eq!(ws.code(&["augment", "--augment.step", "1000"]), 4);
}

#[test]
fn commands_are_idempotent_and_independent_of_thread_count() {
    let ws = Workspace::with_synth(8);
    let pipeline = |out: &str, threads: &str| {
        let common = ["--paths.output_dir", out, "--parallelism", threads];
        let props = format!("{out}/proposals.json");
        ws.ok(&[&["propose", "--oracle"][..], &common].concat());
        ws.ok(&[
            &[
                "train-relation",
                "--relation.epochs",
                "5",
                "--relation.d_att",
                "6",
                "--paths.proposals",
                &props,
            ][..],
            &common,
        ]
        .concat());
        let weights = format!("{out}/relation.json");
        ws.ok(&[
            &[
                "relate",
                "--paths.proposals",
                &props,
                "--paths.relation_weights",
                &weights,
            ][..],
            &common,
        ]
        .concat());
        ws.ok(&[&["detect", "--paths.proposals", &props][..], &common].concat());
        dir_bytes(&ws.path(out))
    };
    let first = pipeline("run1", "1");
    assert_eq!(first, pipeline("run1", "1"));
    assert_eq!(first, pipeline("run2", "4"));
}

#[test]
fn synth_is_seeded() {
    let a = Workspace::with_synth(3);
    let b = Workspace::with_synth(3);
    assert_eq!(dir_bytes(&a.path("data/features")), dir_bytes(&b.path("data/features")));
    b.ok(&["synth", "--synth.videos", "3", "--seed", "6"]);
    assert_ne!(dir_bytes(&a.path("data/features")), dir_bytes(&b.path("data/features")));
}

#[test]
fn committed_example_config_is_current() {
    let ws = Workspace::with_synth(1);
    let printed = ws.ok(&["config-example"]);
    let committed = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../config.example")).unwrap();
    assert_eq!(printed, committed);
    // The example is a usable config file in its own right.
    std::fs::write(ws.path("c.toml"), &committed).unwrap();
    ws.ok(&["propose", "--oracle", "--config", "c.toml"]);
}
