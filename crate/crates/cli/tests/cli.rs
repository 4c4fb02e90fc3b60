use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn artqa(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_artqa"))
        .current_dir(root)
        .args(args)
        .env_remove("ARTQA_DATA_DIR")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(root: &Path, args: &[&str]) -> String {
    let o = artqa(root, args);
    assert!(o.status.success(), "artqa {args:?}: {}", stderr(&o));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn sample(root: &Path) {
    ok(root, &["sample", "--seed", "7", "--out", "raw"]);
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn unknown_format_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = artqa(tmp.path(), &["import", "--format", "foo", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("foo"));
}

#[test]
fn missing_data_dir_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let o = artqa(tmp.path(), &["train", "qa", "--seed", "1", "--data-dir", "nowhere"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("data"), "{}", stderr(&o));
}

#[test]
fn bad_config_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.toml"), "seed = 1\n[qa]\nmax_len = 0\n").unwrap();
    let o = artqa(tmp.path(), &["eval", "pipeline", "--stub", "--config", "run.toml"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("error: qa") && err.contains("max_len"), "{err}");

    fs::write(tmp.path().join("typo.toml"), "seed = 1\n[vqa]\nhiden = 3\n").unwrap();
    let o = artqa(tmp.path(), &["eval", "pipeline", "--stub", "--config", "typo.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("hiden"), "{}", stderr(&o));
}

#[test]
fn seed_required_for_training() {
    let tmp = tempfile::tempdir().unwrap();
    let o = artqa(tmp.path(), &["eval", "pipeline", "--stub"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"));
}

#[test]
fn ask_without_checkpoints_reports_model_not_loaded() {
    let tmp = tempfile::tempdir().unwrap();
    sample(tmp.path());
    ok(tmp.path(), &["import", "--format", "artpedia", "raw"]);
    let o = artqa(tmp.path(), &["ask", "--artwork", "s01", "who painted it ?", "--checkpoint-dir", "ck"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("MODEL_NOT_LOADED"), "{}", stderr(&o));
}

#[test]
fn import_is_byte_identical_on_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    sample(tmp.path());
    ok(tmp.path(), &["import", "--format", "artpedia", "raw", "--out", "a"]);
    ok(tmp.path(), &["import", "--format", "artpedia", "raw", "--out", "b"]);
    let (a, b) = (tree(&tmp.path().join("a")), tree(&tmp.path().join("b")));
    assert!(!a.is_empty());
    assert_eq!(a, b);

    // canonical input re-imports to the same files
    ok(tmp.path(), &["import", "--format", "canonical", "a", "--out", "c"]);
    let c = tree(&tmp.path().join("c"));
    let jsonl = |t: &[(String, Vec<u8>)]| -> Vec<(String, Vec<u8>)> {
        t.iter().filter(|(n, _)| n.ends_with(".jsonl")).cloned().collect()
    };
    assert_eq!(jsonl(&a), jsonl(&c));
}

#[test]
fn training_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    sample(root);
    ok(root, &["import", "--format", "artpedia", "raw"]);
    ok(root, &["features"]);
    fs::write(
        root.join("fast.toml"),
        "seed = 3\n[qa.training]\nepochs = 2\n[vqa]\nhidden = 16\nembed_dim = 8\n[vqa.training]\nepochs = 2\n",
    )
    .unwrap();
    for ck in ["ck1", "ck2"] {
        for module in ["qa", "vqa"] {
            ok(root, &["train", module, "--config", "fast.toml", "--checkpoint-dir", ck]);
        }
    }
    assert_eq!(tree(&root.join("ck1")), tree(&root.join("ck2")));
}

#[test]
fn stub_eval_reproduces_reference_mixture() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["eval", "pipeline", "--stub", "--seed", "7", "--out", "rep"]);
    assert!(out.contains("pipeline"), "{out}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("rep/pipeline-stub.json")).unwrap()).unwrap();
    let r = &json["result"];
    let (measured, analytic, sigma) = (
        r["measured"].as_f64().unwrap(),
        r["analytic"].as_f64().unwrap(),
        r["sigma"].as_f64().unwrap(),
    );
    assert!((analytic - 0.604).abs() < 1e-12);
    assert!((measured - analytic).abs() <= 2.0 * sigma);

    // a spec file overrides the reference accuracies
    fs::write(
        tmp.path().join("stub.toml"),
        "confusion = [[1.0, 0.0], [0.0, 1.0]]\naccuracy = [[1.0, 0.0], [0.0, 1.0]]\nseed = 1\n",
    )
    .unwrap();
    ok(tmp.path(), &["eval", "pipeline", "--stub", "stub.toml", "--seed", "7", "--out", "rep2"]);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("rep2/pipeline-stub.json")).unwrap()).unwrap();
    assert_eq!(json["result"]["measured"].as_f64(), Some(1.0));

    let o = artqa(tmp.path(), &["eval", "qa", "--stub", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(2));
}
