use ihc_core::mask::BinaryMask;
use ihc_core::roi::{RoiMask, RoiProvenance};
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ihcq(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ihcq"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn synth(dir: &Path, preset: &str, count: &str) -> PathBuf {
    let o = ihcq(dir, &["synth", "--preset", preset, "--count", count, "--workers", "2", "--out", "s"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir.join("s")
}

fn files_under(root: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    out.sort();
    out
}

/// Every file in the run directory except the manifest itself is listed in it.
fn assert_all_recorded(dir: &Path) {
    let m = json(dir.join("run_manifest.json"));
    let outputs = m["outputs"].as_object().unwrap();
    for f in files_under(dir) {
        if f != "run_manifest.json" {
            assert!(outputs.contains_key(&f), "{f} missing from {}", dir.display());
        }
    }
    assert_eq!(outputs.len() + 1, files_under(dir).len());
}

#[test]
fn score_happy_path_and_rerun_is_identical() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "er", "1");
    let args = [
        "score", "--marker", "er", "--slide", "s/synth_000/slide.tiff", "--roi", "s/synth_000/roi.png", "--id", "a", "--out",
    ];
    let o = ihcq(t.path(), &[&args[..], &["r1"]].concat());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = json(t.path().join("r1/a.score.json"));
    assert_eq!(s["scores"]["TS"], 6);
    assert_eq!(s["counts"]["n_moderate"], 240);
    assert_eq!(s["category"], "positive");
    assert_eq!(s["roi_provenance"], "external");
    let m = json(t.path().join("r1/run_manifest.json"));
    assert_eq!(m["status"], "ok");
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["inputs"].as_object().unwrap().len(), 2);
    assert_all_recorded(&t.path().join("r1"));

    let o = ihcq(t.path(), &[&args[..], &["r2", "--workers", "3"]].concat());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["a.score.json", "scores.csv"] {
        assert_eq!(
            std::fs::read(t.path().join("r1").join(f)).unwrap(),
            std::fs::read(t.path().join("r2").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn empty_roi_is_a_qc_rejection() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "er", "1");
    let roi = RoiMask::new(BinaryMask::new(384, 384, 1), 4.0, RoiProvenance::External);
    roi.write_png(t.path().join("empty.png")).unwrap();
    let o = ihcq(
        t.path(),
        &["score", "--marker", "er", "--slide", "s/synth_000/slide.tiff", "--roi", "empty.png", "--out", "r"],
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("EmptySlide"));
    let qc = json(t.path().join("r/qc.json"));
    assert_eq!(qc[0]["code"], "EmptySlide");
    assert_eq!(json(t.path().join("r/run_manifest.json"))["status"], "qc-rejected");
}

#[test]
fn eval_length_mismatch_exits_1() {
    let t = tempfile::tempdir().unwrap();
    let head = "slide_id,marker,IS,PS,TS,PRS,her2,category,rater_id\n";
    std::fs::write(
        t.path().join("gt.csv"),
        format!("{head}s1,er,2,4,6,,,positive,r1\ns2,er,0,0,0,,,negative,r1\n"),
    )
    .unwrap();
    std::fs::write(t.path().join("pred.csv"), format!("{head}s1,er,2,4,6,,,positive,algorithm\n")).unwrap();
    let o = ihcq(t.path(), &["eval", "--gt", "gt.csv", "--pred", "pred.csv", "--out", "e"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("LengthMismatch"), "{}", stderr(&o));
}

#[test]
fn eval_with_raters_writes_reports() {
    let t = tempfile::tempdir().unwrap();
    let head = "slide_id,marker,IS,PS,TS,PRS,her2,category,rater_id\n";
    let gt = [
        "s1,er,2,4,6,,,positive,r1",
        "s2,er,0,0,0,,,negative,r1",
        "s3,er,1,1,2,,,negative,r1",
        "s1,er,2,4,6,,,positive,r2",
        "s2,er,2,2,4,,,positive,r2",
        "s3,er,1,1,2,,,negative,r2",
        "s1,er,2,4,6,,,positive,r3",
        "s2,er,0,0,0,,,negative,r3",
        "s3,er,1,2,3,,,positive,r3",
    ];
    std::fs::write(t.path().join("gt.csv"), format!("{head}{}\n", gt.join("\n"))).unwrap();
    let pred = "s1,er,2,4,6,,,positive,algorithm\ns2,er,0,0,0,,,negative,algorithm\ns3,er,1,1,2,,,negative,algorithm\n";
    std::fs::write(t.path().join("pred.csv"), format!("{head}{pred}")).unwrap();
    let o = ihcq(
        t.path(),
        &["eval", "--gt", "gt.csv", "--pred", "pred.csv", "--auc-field", "TS", "--out", "e"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let e = json(t.path().join("e/eval.json"));
    assert_eq!(e["report"]["pa"], 100.0);
    assert_eq!(e["report"]["auc"], 1.0);
    assert_eq!(e["raters"].as_array().unwrap().len(), 3);
    let a = json(t.path().join("e/agreement.json"));
    let names: Vec<&str> = a["names"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(names, ["r1", "r2", "r3", "algorithm"]);
    let r2 = names.iter().position(|n| *n == "r2").unwrap();
    let pa = a["pa"][r2][3].as_f64().unwrap();
    assert!((pa - 200.0 / 3.0).abs() < 1e-9, "{pa}");
    assert!(std::fs::read_to_string(t.path().join("e/confusion.txt")).unwrap().contains("positive"));
}

#[test]
fn unknown_config_key_is_named() {
    let t = tempfile::tempdir().unwrap();
    std::fs::write(t.path().join("c.toml"), "[pipeline.stain]\ndelta_uu = 0.2\n").unwrap();
    let o = ihcq(t.path(), &["--config", "c.toml", "verify", "--manifest", "m.json"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("delta_uu"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&ihcq(t.path(), &["frobnicate"])), 1);
    assert_eq!(code(&ihcq(t.path(), &["score", "--bogus"])), 1);
    assert_eq!(code(&ihcq(t.path(), &["--help"])), 0);
    assert_eq!(code(&ihcq(t.path(), &["--version"])), 0);
}

#[test]
fn synth_batch_score_then_verify() {
    let t = tempfile::tempdir().unwrap();
    let s = synth(t.path(), "ki67", "2");
    assert_all_recorded(&s);
    let o = ihcq(t.path(), &["score", "--batch", "s/index.csv", "--workers", "2", "--out", "b"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_all_recorded(&t.path().join("b"));
    for id in ["synth_000", "synth_001"] {
        let m = format!("s/{id}/manifest.json");
        let sc = format!("b/{id}.score.json");
        let o = ihcq(t.path(), &["verify", "--manifest", &m, "--score", &sc, "--out", &format!("v_{id}")]);
        assert_eq!(code(&o), 0, "{}{}", stderr(&o), String::from_utf8_lossy(&o.stdout));
        assert_eq!(json(t.path().join(format!("v_{id}/verify.json")))["consistent"], true);
    }
    let e = ihcq(t.path(), &["eval", "--gt", "s/truth.csv", "--pred", "b/scores.csv", "--out", "e"]);
    assert_eq!(code(&e), 0, "{}", stderr(&e));
    assert_eq!(json(t.path().join("e/eval.json"))["report"]["pa"], 100.0);

    // a stale expectation is reported and exits 2
    let path = s.join("synth_000/manifest.json");
    let mut m = json(&path);
    m["expected_counts"]["n_unstained"] = Value::from(m["expected_counts"]["n_unstained"].as_u64().unwrap() + 1);
    std::fs::write(t.path().join("bad.json"), serde_json::to_string(&m).unwrap()).unwrap();
    let o = ihcq(t.path(), &["verify", "--manifest", "bad.json"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("n_unstained"));
}

#[test]
fn her2_train_predict_is_reproducible() {
    let t = tempfile::tempdir().unwrap();
    std::fs::write(t.path().join("c.toml"), "[her2.forest]\nn_trees = 25\n").unwrap();
    let run = |args: &[&str]| {
        let o = ihcq(t.path(), &[&["--config", "c.toml", "--seed", "11"][..], args].concat());
        assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
    };
    run(&["synth", "--preset", "her2", "--count", "40", "--out", "h"]);
    run(&["her2-features", "--regions", "h/regions.csv", "--out", "f"]);
    for d in ["t1", "t2"] {
        run(&["her2-train", "--features", "f/features.csv", "--out", d]);
    }
    let read = |p: &str| std::fs::read(t.path().join(p)).unwrap();
    assert_eq!(read("t1/model.json"), read("t2/model.json"));
    assert_eq!(read("t1/cv_report.json"), read("t2/cv_report.json"));
    let cv = json(t.path().join("t1/cv_report.json"));
    assert!(cv["mean_kappa"].as_f64().unwrap() >= 0.9, "{cv}");

    run(&["her2-predict", "--model", "t1/model.json", "--features", "f/features.csv", "--out", "p"]);
    let scores = String::from_utf8(read("p/scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 41);
    run(&["eval", "--gt", "h/truth.csv", "--pred", "p/scores.csv", "--field", "her2", "--out", "e"]);
    assert!(json(t.path().join("e/eval.json"))["report"]["kappa_quadratic"].as_f64().unwrap() >= 0.9);
    for d in ["h", "f", "t1", "p", "e"] {
        assert_all_recorded(&t.path().join(d));
    }
}

#[test]
fn calibrate_writes_a_loadable_stain_table() {
    let t = tempfile::tempdir().unwrap();
    let rows = [
        "class,c,m,y,k",
        "unstained,0.7,0.5,0.0,0.3",
        "unstained,0.7,0.5,0.0,0.4",
        "light,0.0,0.5,1.0,0.2",
        "moderate,0.0,0.5,1.0,0.5",
        "dark,0.0,0.5,1.0,0.8",
    ];
    std::fs::write(t.path().join("cal.csv"), rows.join("\n") + "\n").unwrap();
    let o = ihcq(t.path(), &["calibrate", "--samples", "cal.csv", "--out", "c"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cal = json(t.path().join("c/calibration.json"));
    assert_eq!(cal["samples_per_class"]["unstained"], 2, "{cal}");
    let th = &cal["thresholds"];
    let k = |v: &Value| v.as_f64().unwrap();
    assert!(k(&th["delta_sl"]) > 0.2 && k(&th["delta_sl"]) < 0.5, "{th}");
    assert!(k(&th["delta_su"]) > 0.5 && k(&th["delta_su"]) < 0.8, "{th}");
    let o = ihcq(t.path(), &["--config", "c/stain.toml", "verify", "--manifest", "missing.json"]);
    assert!(!stderr(&o).contains("invalid config"), "{}", stderr(&o));
}
