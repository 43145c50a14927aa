//! Behaviour of the `occam` binary on small synthetic datasets.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    /// Training split, common/counter splits and a fitted toy ensemble.
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        let f = Fixture { _tmp: tmp, root };
        f.ok(&["--seed", "3", "synth", "--n", "60"], "train");
        f.ok(
            &["--seed", "4", "synth", "--n", "40", "--counter-split"],
            "splits",
        );
        let train = f.path("train/manifest.json");
        f.ok(&["fit-toy", "--manifest", &train, "--crop", "32"], "ens");
        f
    }

    fn path(&self, rel: &str) -> String {
        self.root.join(rel).to_string_lossy().into_owned()
    }

    fn run(&self, args: &[&str], out: &str) -> Output {
        Command::new(env!("CARGO_BIN_EXE_occam"))
            .arg("--out")
            .arg(self.root.join(out))
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str], out: &str) {
        let o = self.run(args, out);
        assert!(
            o.status.success(),
            "occam {args:?} failed: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }

    fn report(&self, rel: &str) -> Value {
        serde_json::from_str(&std::fs::read_to_string(self.root.join(rel)).unwrap()).unwrap()
    }

    fn counter(&self) -> String {
        self.path("splits/counter/manifest.json")
    }

    fn common(&self) -> String {
        self.path("splits/common/manifest.json")
    }

    fn ensemble(&self) -> String {
        self.path("ens/ensemble.json")
    }
}

fn num(v: &Value) -> f64 {
    v.as_f64().unwrap_or_else(|| panic!("not a number: {v}"))
}

fn row<'a>(rows: &'a Value, source: &str, strategy: &str) -> &'a Value {
    rows.as_array()
        .unwrap()
        .iter()
        .find(|r| r["mask_source"] == source && r["strategy"] == strategy)
        .unwrap_or_else(|| panic!("no row {source}/{strategy}"))
}

#[test]
fn discover_eval_gt_predictions_score_perfectly_and_order_does_not_matter() {
    let f = Fixture::new();
    let m = f.counter();
    f.ok(
        &["discover-eval", "--manifest", &m, "--pred-source", "gt"],
        "gt",
    );
    let r = f.report("gt/discover.json");
    assert_eq!(num(&r["fg_ari"]), 100.0);
    assert_eq!(num(&r["mbo"]), 100.0);

    f.ok(&["discover-eval", "--manifest", &m], "plain");
    f.ok(
        &[
            "--seed",
            "99",
            "discover-eval",
            "--manifest",
            &m,
            "--shuffle",
        ],
        "shuffled",
    );
    let (a, b) = (
        f.report("plain/discover.json"),
        f.report("shuffled/discover.json"),
    );
    assert_eq!(a["fg_ari"], b["fg_ari"]);
    assert_eq!(a["mbo"], b["mbo"]);
    assert_eq!(a["n_samples"], 40);
}

#[test]
fn discover_eval_without_ground_truth_reports_failures() {
    let f = Fixture::new();
    // strip gt_seg from the manifest
    let text = std::fs::read_to_string(f.counter()).unwrap();
    let mut manifest: Value = serde_json::from_str(&text).unwrap();
    for s in manifest["samples"].as_array_mut().unwrap() {
        let s = s.as_object_mut().unwrap();
        s.remove("gt_seg");
        s.remove("fg_instance");
    }
    let stripped = f.root.join("splits/counter/no-gt.json");
    std::fs::write(&stripped, serde_json::to_string(&manifest).unwrap()).unwrap();
    let o = f.run(
        &["discover-eval", "--manifest", stripped.to_str().unwrap()],
        "nogt",
    );
    assert_eq!(o.status.code(), Some(1));
    let r = f.report("nogt/discover.json");
    assert_eq!(r["n_errors"], 40);
    assert!(r["fg_ari"].is_null());
}

#[test]
fn fg_eval_oracle_strategy_is_perfect_and_class_aided_beats_entropy() {
    let f = Fixture::new();
    let (m, e) = (f.counter(), f.ensemble());
    f.ok(
        &[
            "--format",
            "csv",
            "fg-eval",
            "--manifest",
            &m,
            "--scores-from",
            &e,
            "--crop",
            "32",
            "--strategy",
            "ground-truth-iou,class-aided,single-entropy",
        ],
        "fg",
    );
    let r = f.report("fg/fg-eval.json");
    let auroc = |s: &str| {
        num(&r["rows"]
            .as_array()
            .unwrap()
            .iter()
            .find(|x| x["strategy"] == s)
            .unwrap()["auroc"])
    };
    assert_eq!(auroc("ground-truth-iou"), 100.0);
    assert!(auroc("class-aided") >= auroc("single-entropy"));
    for s in ["ground-truth-iou", "class-aided", "single-entropy"] {
        let csv = std::fs::read_to_string(f.root.join(format!("fg/roc-{s}.csv"))).unwrap();
        assert!(csv.starts_with("fpr,tpr\n0,0\n"));
        assert!(csv.trim_end().ends_with("1,1"));
    }
    assert!(f.root.join("fg/fg-eval.csv").is_file());
}

#[test]
fn classify_eval_grid_and_audit_logs() {
    let f = Fixture::new();
    let (m, e) = (f.counter(), f.ensemble());
    f.ok(
        &[
            "--format",
            "csv",
            "classify-eval",
            "--manifest",
            &m,
            "--ensemble",
            &e,
            "--crop",
            "32",
            "--mask-model",
            "none,gt,candidates",
            "--strategy",
            "class-aided,max-prob",
        ],
        "ce",
    );
    let r = f.report("ce/classify.json");
    let rows = &r["rows"];
    assert_eq!(rows.as_array().unwrap().len(), 5);
    let base = num(&row(rows, "none", "-")["accuracy"]);
    let gt = num(&row(rows, "gt", "class-aided")["accuracy"]);
    assert!(gt >= base);
    assert_eq!(row(rows, "none", "-")["n_fallback"], 40);
    let wga = num(&row(rows, "gt", "class-aided")["wga"]);
    assert!(wga <= gt);

    let audit =
        std::fs::read_to_string(f.root.join("ce/audit/gray-bg-crop_gt_class-aided.jsonl")).unwrap();
    let lines: Vec<Value> = audit
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 40);
    for l in &lines {
        let sel = l["selected"].as_u64().unwrap();
        let best = l["scores"]
            .as_array()
            .unwrap()
            .iter()
            .max_by(|a, b| num(&a["score"]).total_cmp(&num(&b["score"])))
            .unwrap();
        assert_eq!(
            num(&best["score"]),
            num(&l["scores"]
                .as_array()
                .unwrap()
                .iter()
                .find(|s| s["mask"] == sel)
                .unwrap()["score"])
        );
    }
    let csv = std::fs::read_to_string(f.root.join("ce/classify.csv")).unwrap();
    assert!(csv.starts_with("mode,mask_source,strategy,"));
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn deploy_refuses_class_aided_but_runs_label_free_strategies() {
    let f = Fixture::new();
    let (m, e) = (f.counter(), f.ensemble());
    let o = f.run(
        &[
            "classify-eval",
            "--manifest",
            &m,
            "--ensemble",
            &e,
            "--crop",
            "32",
            "--deploy",
        ],
        "refused",
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("evaluation mode"));
    f.ok(
        &[
            "classify-eval",
            "--manifest",
            &m,
            "--ensemble",
            &e,
            "--crop",
            "32",
            "--deploy",
            "--strategy",
            "ensemble-entropy",
        ],
        "deployed",
    );
    assert_eq!(f.report("deployed/classify.json")["evaluation_mode"], false);
}

#[test]
fn gap_collapses_with_ground_truth_masks() {
    let f = Fixture::new();
    let (c, k, e) = (f.common(), f.counter(), f.ensemble());
    f.ok(
        &[
            "gap",
            "--manifest-common",
            &c,
            "--manifest-counter",
            &k,
            "--ensemble",
            &e,
            "--crop",
            "32",
        ],
        "gap",
    );
    let r = &f.report("gap/gap.json")["rows"][0];
    assert!(num(&r["gap"]) >= 25.0, "{r}");
    assert!(num(&r["gap_fg"]).abs() < 2.0, "{r}");
    assert_eq!(r["strategy"], "class-aided");
}

#[test]
fn data_root_from_environment_resolves_relative_paths() {
    let f = Fixture::new();
    let elsewhere = f.root.join("elsewhere");
    std::fs::create_dir(&elsewhere).unwrap();
    let moved = elsewhere.join("manifest.json");
    std::fs::copy(f.counter(), &moved).unwrap();
    let args = [
        "discover-eval",
        "--manifest",
        moved.to_str().unwrap(),
        "--pred-source",
        "gt",
    ];

    assert_eq!(f.run(&args, "noroot").status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_occam"))
        .env("OCCAM_DATA_ROOT", f.root.join("splits/counter"))
        .arg("--out")
        .arg(f.root.join("withroot"))
        .args(args)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bad_invocations_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let occam = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_occam"))
            .args(args)
            .current_dir(tmp.path())
            .output()
            .unwrap()
    };
    assert_eq!(occam(&["synth", "--frobnicate"]).status.code(), Some(2));
    let missing_parent = tmp.path().join("no/such/dir");
    let o = occam(&[
        "--out",
        missing_parent.to_str().unwrap(),
        "synth",
        "--n",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!Path::new(&missing_parent).exists());
    assert_eq!(
        occam(&[
            "fg-eval",
            "--manifest",
            "x.json",
            "--ensemble",
            "e.json",
            "--strategy",
            "psychic"
        ])
        .status
        .code(),
        Some(2)
    );
}
