use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn genbias(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_genbias"))
        .current_dir(root)
        .args(args)
        .output()
        .unwrap()
}

fn ok(root: &Path, args: &[&str]) -> String {
    let out = genbias(root, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(root: &Path, args: &[&str], kind: &str) {
    let out = genbias(root, args);
    assert!(!out.status.success(), "{args:?} should fail");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error kind={kind} message=\"")), "{err}");
}

const CONFIG: &str = r#"
run_id = "cfg"
images_per_prompt = 10
base_seed = 3
detectors = ["clip", "clip-enhance"]

[[backends]]
id = "skewed"
kind = "mock"
[backends.config]
width = 120
height = 100
pattern = ["M", "M", "M", "M", "M", "M", "M", "F", "F", "F"]

[[backends]]
id = "balanced"
kind = "mock"
[backends.config]
width = 120
height = 100
pattern = ["M", "F", "noface:M", "noperson"]
"#;

#[test]
fn full_pipeline_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let words = "category,word\nprofession,doctor\nprofession,nurse\nplace,library\n";
    fs::write(root.join("words.csv"), words).unwrap();
    fs::write(root.join("run.toml"), CONFIG).unwrap();
    let c = ["--config", "run.toml"];

    let out = ok(root, &[&c[..], &["gen-prompts", "--words", "words.csv"]].concat());
    assert!(out.contains("prompts=3"), "{out}");
    let out = ok(root, &[&c[..], &["generate"]].concat());
    assert!(out.contains("backend=skewed images=30"), "{out}");
    let run = root.join("runs/cfg");
    assert!(run.join("truth/planted.csv").exists());
    assert!(run.join("run.json").exists());

    ok(root, &[&c[..], &["detect"]].concat());
    let first = fs::read(run.join("verdicts/clip-enhance.jsonl")).unwrap();
    let out = ok(root, &[&c[..], &["detect", "--detector", "clip-enhance"]].concat());
    assert!(out.contains("reused=60 computed=0"), "{out}");
    assert_eq!(fs::read(run.join("verdicts/clip-enhance.jsonl")).unwrap(), first);

    let out = ok(root, &[&c[..], &["score"]].concat());
    assert!(out.contains("backend=skewed source=truth model_bias=0.400000"), "{out}");
    assert!(out.contains("backend=skewed detector=clip-enhance model_bias=0.400000 pct_difference=0.000000 pbs_difference=0.000000"), "{out}");
    let score: serde_json::Value = serde_json::from_slice(&fs::read(run.join("reports/score.json")).unwrap()).unwrap();
    assert_eq!(score.as_array().unwrap().len(), 2);

    ok(root, &[&c[..], &["report"]].concat());
    for f in ["compare.md", "compare.json", "heatmap.csv", "dataset_summary.csv"] {
        assert!(run.join("reports").join(f).exists(), "{f}");
    }
    let heat = fs::read_to_string(run.join("reports/heatmap.csv")).unwrap();
    assert_eq!(heat.lines().next().unwrap(), "prompt,category,balanced,skewed,avg");
    assert!(heat.contains("doctor,profession,0.00,0.40,0.20"), "{heat}");
    let md = fs::read_to_string(run.join("reports/compare.md")).unwrap();
    assert!(md.contains("| Ground Truth |") && md.contains("| CLIP-Enhance |"));
    let summary = fs::read_to_string(run.join("reports/dataset_summary.csv")).unwrap();
    assert!(summary.contains("balanced,30,"), "{summary}");
}

#[test]
fn resumed_detection_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    for id in ["a", "b"] {
        ok(root, &["--run-id", id, "gen-prompts"]);
        ok(root, &["--run-id", id, "generate", "--images-per-prompt", "2"]);
    }
    ok(root, &["--run-id", "a", "detect", "--detector", "fairface"]);
    let out = ok(root, &["--run-id", "b", "detect", "--detector", "fairface", "--stop-after", "70"]);
    assert!(out.contains("complete=false"), "{out}");
    let out = ok(root, &["--run-id", "b", "detect", "--detector", "fairface"]);
    assert!(out.contains("reused=70"), "{out}");
    assert_eq!(
        fs::read(root.join("runs/a/verdicts/fairface.jsonl")).unwrap(),
        fs::read(root.join("runs/b/verdicts/fairface.jsonl")).unwrap()
    );
}

#[test]
fn failures_are_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fails(root, &["--run-id", "x", "score"], "missing_manifest");
    fs::create_dir_all(root.join("runs/x")).unwrap();
    fs::write(root.join("runs/x/manifest.jsonl"), "").unwrap();
    fails(root, &["--run-id", "x", "score"], "empty_manifest");
    fails(root, &["--run-id", "x", "detect", "--detector", "dalle"], "unknown_detector");
    fails(root, &["--run-id", "x", "generate"], "missing_prompts");
    fails(root, &["--run-id", "x", "frobnicate"], "usage");
    fails(root, &["--run-id", "../up", "score"], "bad_run_id");
    fs::write(root.join("runs/x/run.json"), r#"{"schema_version": 99}"#).unwrap();
    fails(root, &["--run-id", "x", "score"], "schema_version");
    fs::write(root.join("bad.toml"), "images_per_prompt = \"many\"").unwrap();
    fails(root, &["--config", "bad.toml", "score"], "bad_config");
}

#[test]
fn import_annotations_adjudicates() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let t = "2026-01-01T00:00:00.000Z";
    let mut csv = String::from("image_id,annotator_id,category,reason,timestamp\n");
    for (img, a, b) in [("i1", "male", "male"), ("i2", "female", "male"), ("i3", "female", "female")] {
        csv += &format!("{img},ann1,{a},,{t}\n{img},ann2,{b},,{t}\n");
    }
    fs::write(root.join("labels.csv"), &csv).unwrap();
    fs::write(root.join("res.csv"), "image_id,final,source\ni2,female,discussion\n").unwrap();

    let out = ok(root, &["--run-id", "h", "import-labels", "--truth", "labels.csv", "--resolutions", "res.csv"]);
    assert!(out.contains("kappa="), "{out}");
    let adj = fs::read_to_string(root.join("runs/h/truth/adjudicated.csv")).unwrap();
    assert!(adj.contains("i2,female,discussion"), "{adj}");
    assert!(adj.contains("i1,male,agreement"), "{adj}");

    let released = "image_id,backend_id,category,reason\nr1,sdxl,male,\nr2,sdxl,female,\nr3,sd3,low_quality,blurred\nr4,sd3,others,cartoon\n";
    fs::write(root.join("released.csv"), released).unwrap();
    ok(root, &["--run-id", "rel", "import-labels", "--truth", "released.csv", "--format", "released"]);
    ok(root, &["--run-id", "rel", "report"]);
    let summary = fs::read_to_string(root.join("runs/rel/reports/dataset_summary.csv")).unwrap();
    assert!(summary.contains("sdxl,2,50.00,50.00,0.00,0"), "{summary}");
    assert!(summary.contains("sd3,1,0.00,0.00,100.00,1"), "{summary}");
}
