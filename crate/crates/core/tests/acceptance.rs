//! Acceptance suite: one PASS/FAIL/SKIP line per criterion.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

use genbias::cli;
use genbias::detectors::runner::RunOptions;
use genbias::detectors::{
    clip_enhance_region, detect_clip, detect_clip_enhance, run_detector, DetectorConfig, DetectorId,
    DetectorVerdict, FilterReason, Outcome,
};
use genbias::gender::GenderLabel;
use genbias::generation::{self, mock::MockConfig, BackendDescriptor, ImageRecord};
use genbias::groundtruth::{
    cohens_kappa, dataset_summary, import_released_labels, kappa_from_pairs, CategoryKind, LabelCategory,
    LowQualityReason,
};
use genbias::imaging::{BBox, ImageView};
use genbias::inference::stub::StubBackend;
use genbias::inference::Capabilities;
use genbias::metrics::{
    category_bias_score, filtering_metrics, mean_abs_score, model_bias_pct_difference, model_bias_score,
    prompt_bias_score, GenderCounts,
};
use genbias::prompts::{build_suite, bundled_word_lists, PromptCategory};
use genbias::reference::{model_column, reference_rows, MODELS};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || format!("{name}: got {got:.6}, want {want} ± {tol}"))
}

struct Suite {
    failed: usize,
}

impl Suite {
    fn run(&mut self, id: &str, title: &str, budget: Option<Duration>, f: impl FnOnce() -> Option<Check>) {
        let start = Instant::now();
        let result = f();
        let elapsed = start.elapsed();
        let over = budget.filter(|b| elapsed > *b);
        let (status, detail) = match (result, over) {
            (None, _) => ("SKIP", String::new()),
            (Some(Err(e)), _) => ("FAIL", e),
            (Some(Ok(_)), Some(b)) => ("FAIL", format!("took {elapsed:.2?}, budget {b:.0?}")),
            (Some(Ok(d)), None) => ("PASS", d),
        };
        if status == "FAIL" {
            self.failed += 1;
        }
        println!("{status} [{id}] {title} ({:.3}s) {detail}", elapsed.as_secs_f64());
    }
}

fn c1() -> Check {
    let a = prompt_bias_score(&GenderCounts::new("a", 20, 0, 0));
    let b = prompt_bias_score(&GenderCounts::new("b", 8, 12, 0));
    ensure(a == Some(1.0), || format!("(20,0) -> {a:?}"))?;
    ensure(b == Some(-0.2), || format!("(8,12) -> {b:?}"))?;
    Ok("(20,0)=1.0 (8,12)=-0.2".into())
}

fn c2() -> Check {
    let rows = reference_rows();
    let mut out = Vec::new();
    for (i, want) in [0.752, 0.730, 0.631].into_iter().enumerate() {
        let m = mean_abs_score(&model_column(&rows, i)).map_err(|e| e.to_string())?;
        within(MODELS[i], m.value, want, 0.01)?;
        out.push(format!("{}={:.4}", MODELS[i], m.value));
    }
    Ok(out.join(" "))
}

const CATEGORY_TABLE: [[f64; 5]; 3] = [
    [0.907, 0.649, 0.802, 0.572, 0.576],
    [0.861, 0.593, 0.755, 0.706, 0.619],
    [0.713, 0.560, 0.500, 0.724, 0.554],
];

fn c3() -> Check {
    let rows = reference_rows();
    let mut worst: f64 = 0.0;
    for (m, table) in CATEGORY_TABLE.iter().enumerate() {
        for (c, want) in PromptCategory::ALL.into_iter().zip(table) {
            let scores: Vec<Option<f64>> =
                rows.iter().filter(|r| r.category == c).map(|r| Some(r.scores()[m])).collect();
            let got = mean_abs_score(&scores).map_err(|e| e.to_string())?.value;
            within(&format!("{} {}", MODELS[m], c.as_str()), got, *want, 0.01)?;
            worst = worst.max((got - want).abs());
        }
    }
    Ok(format!("15 cells, max deviation {worst:.4}"))
}

fn c4() -> Check {
    let a = model_bias_pct_difference(0.686, 0.752).map_err(|e| e.to_string())?;
    let b = model_bias_pct_difference(0.801, 0.631).map_err(|e| e.to_string())?;
    within("(0.686,0.752)", a, -8.78, 0.01)?;
    within("(0.801,0.631)", b, 26.95, 0.02)?;
    let arrows = (genbias::report::fmt_score_with_arrow(Some(0.686), Some(a)), genbias::report::fmt_score_with_arrow(Some(0.801), Some(b)));
    ensure(arrows.0.contains('↓') && arrows.1.contains('↑'), || format!("arrows {arrows:?}"))?;
    Ok(format!("{a:.4}% {b:.4}% {} | {}", arrows.0, arrows.1))
}

fn random_outcome(rng: &mut StdRng) -> Outcome {
    const REASONS: [FilterReason; 7] = [
        FilterReason::NoFace,
        FilterReason::NoPerson,
        FilterReason::MultiplePeople,
        FilterReason::LowConfidence,
        FilterReason::Uncertain,
        FilterReason::UnparseableAnswer,
        FilterReason::ProviderError,
    ];
    if rng.random_bool(0.6) {
        let gender = if rng.random_bool(0.5) { GenderLabel::Male } else { GenderLabel::Female };
        Outcome::Classified { gender, confidence: rng.random() }
    } else {
        Outcome::Filtered(REASONS[rng.random_range(0..REASONS.len())])
    }
}

fn random_truth(rng: &mut StdRng) -> LabelCategory {
    match rng.random_range(0..4) {
        0 => LabelCategory::Male,
        1 => LabelCategory::Female,
        2 => LabelCategory::LowQuality(Some(LowQualityReason::Blurred)),
        _ => LabelCategory::Others("cartoon".into()),
    }
}

fn c5() -> Check {
    let mut rng = StdRng::seed_from_u64(5);
    for instance in 0..1000 {
        let n = rng.random_range(0..=200);
        let mut verdicts = Vec::new();
        let mut truth = HashMap::new();
        for i in 0..n {
            let id = format!("i{i}");
            verdicts.push(DetectorVerdict { image_id: id.clone(), detector_id: DetectorId::Clip, outcome: random_outcome(&mut rng) });
            truth.insert(id, random_truth(&mut rng));
        }
        // brute force: enumerate every (decision, truth) cell
        let mut cells: BTreeMap<(&str, &str), u64> = BTreeMap::new();
        for v in &verdicts {
            let decision = match v.outcome {
                Outcome::Filtered(FilterReason::ProviderError) => continue,
                Outcome::Filtered(_) => "filtered",
                Outcome::Classified { .. } => "passed",
            };
            let t = match truth[&v.image_id] {
                LabelCategory::Male | LabelCategory::Female => "clear",
                LabelCategory::LowQuality(_) => "low",
                LabelCategory::Others(_) => continue,
            };
            *cells.entry((decision, t)).or_default() += 1;
        }
        let cell = |d, t| *cells.get(&(d, t)).unwrap_or(&0) as f64;
        let (tp, fp, tn, fn_) = (cell("passed", "clear"), cell("passed", "low"), cell("filtered", "low"), cell("filtered", "clear"));
        let div = |a: f64, b: f64| (b > 0.0).then(|| a / b);
        let p = div(tp, tp + fp);
        let r = div(tp, tp + fn_);
        let f1 = match (p, r) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        let fr = div(tn, tn + fp);
        let got = filtering_metrics(&verdicts, &truth);
        let want = (p, r, f1, fr);
        let have = (got.precision, got.recall, got.f1, got.filter_rate);
        ensure(have == want, || format!("instance {instance}: got {have:?}, oracle {want:?}"))?;
    }

    let mut verdicts = Vec::new();
    let mut truth = HashMap::new();
    for i in 0..6000 {
        let id = format!("c{i}");
        let label = if i < 5251 { LabelCategory::Male } else { LabelCategory::LowQuality(None) };
        verdicts.push(DetectorVerdict {
            image_id: id.clone(),
            detector_id: DetectorId::Clip,
            outcome: Outcome::Classified { gender: GenderLabel::Male, confidence: 1.0 },
        });
        truth.insert(id, label);
    }
    let m = filtering_metrics(&verdicts, &truth);
    let pct = |x: Option<f64>| x.map(|v| v * 100.0).ok_or("undefined metric".to_string());
    let (p, r, fr) = (pct(m.precision)?, pct(m.recall)?, pct(m.filter_rate)?);
    within("precision", p, 87.52, 0.01)?;
    within("recall", r, 100.0, 0.01)?;
    within("filter rate", fr, 0.0, 0.01)?;
    Ok(format!("1000 instances exact; pass-all P={p:.2} R={r:.2} FR={fr:.2}"))
}

fn c6() -> Check {
    let mut rng = StdRng::seed_from_u64(6);
    for set in 0..1000 {
        let n = rng.random_range(1..=100);
        let counts: Vec<GenderCounts> = (0..n)
            .map(|i| GenderCounts::new(format!("p{i}"), rng.random_range(0..30), rng.random_range(0..30), rng.random_range(0..10)))
            .collect();
        let scores: Vec<f64> = counts.iter().filter_map(prompt_bias_score).map(f64::abs).collect();
        match model_bias_score(&counts) {
            Ok(m) => {
                let oracle = scores.iter().sum::<f64>() / scores.len() as f64;
                ensure((m.value - oracle).abs() <= 1e-12, || format!("set {set}: {} vs {oracle}", m.value))?;
                ensure(m.excluded == n - scores.len(), || format!("set {set}: excluded {}", m.excluded))?;
            }
            Err(_) => ensure(scores.is_empty(), || format!("set {set}: spurious error"))?,
        }
        // category score is the same mean over a subset
        let half = &counts[..n.div_ceil(2)];
        if let (Ok(c), Ok(m)) = (category_bias_score(half), model_bias_score(half)) {
            ensure(c.value == m.value, || format!("set {set}: category {} vs {}", c.value, m.value))?;
        }
    }
    Ok("1000 count sets".into())
}

fn c7() -> Check {
    use CategoryKind::*;
    let mut fixture = Vec::new();
    for (n, pair) in [(45, (Male, Male)), (5, (Male, Female)), (15, (Female, Male)), (35, (Female, Female))] {
        fixture.extend(std::iter::repeat_n(pair, n));
    }
    let k = kappa_from_pairs(&fixture);
    ensure(k.is_some_and(|k| (k - 0.6).abs() < 1e-15), || format!("fixture kappa {k:?}"))?;

    let mut rng = StdRng::seed_from_u64(7);
    let kinds = [Male, Female, LowQuality, Others];
    for round in 0..500 {
        let n = rng.random_range(2..80);
        let mut pairs: Vec<(CategoryKind, CategoryKind)> =
            (0..n).map(|_| (kinds[rng.random_range(0..4)], kinds[rng.random_range(0..4)])).collect();
        let own: Vec<_> = pairs.iter().map(|p| (p.0, p.0)).collect();
        let distinct = own.iter().map(|p| p.0.as_str()).collect::<std::collections::BTreeSet<_>>().len();
        let self_k = kappa_from_pairs(&own);
        ensure(distinct < 2 || self_k == Some(1.0), || format!("round {round}: self kappa {self_k:?}"))?;
        let k = kappa_from_pairs(&pairs);
        let swapped: Vec<_> = pairs.iter().map(|(a, b)| (*b, *a)).collect();
        ensure(kappa_from_pairs(&swapped) == k, || format!("round {round}: annotator swap changes kappa"))?;
        pairs.shuffle(&mut rng);
        ensure(kappa_from_pairs(&pairs) == k, || format!("round {round}: item order changes kappa"))?;
    }

    // the map-based entry point agrees with the pairwise one
    let a: BTreeMap<String, LabelCategory> =
        (0..100).map(|i| (format!("i{i}"), if i < 50 { LabelCategory::Male } else { LabelCategory::Female })).collect();
    let b: BTreeMap<String, LabelCategory> = (0..100)
        .map(|i| (format!("i{i}"), if i < 45 || (50..65).contains(&i) { LabelCategory::Male } else { LabelCategory::Female }))
        .collect();
    let k = cohens_kappa(&a, &b).map_err(|e| e.to_string())?;
    ensure(k.is_some_and(|k| (k - 0.6).abs() < 1e-15), || format!("labelled fixture kappa {k:?}"))?;
    Ok("fixture=0.6, 500 random permutation checks".into())
}

fn boxed(x: u32, y: u32, w: u32, h: u32) -> Value {
    json!({"x": x, "y": y, "w": w, "h": h, "confidence": 0.9})
}

fn c8() -> Check {
    // largest 100x100 = 10000; seconds of 5100 and 5000 straddle the 0.5 ratio
    let script = json!({
        "r51": {"faces": [boxed(10, 10, 20, 20)], "persons": [boxed(0, 0, 100, 100), boxed(100, 0, 51, 100)]},
        "r50": {"faces": [boxed(10, 10, 20, 20)], "persons": [boxed(0, 0, 100, 100), boxed(100, 0, 50, 100)],
                "crop": {"sims": {"male": 0.2, "female": 0.8}}},
        "noface": {"faces": [], "persons": [boxed(0, 0, 100, 100)]},
        "geom": {"faces": [boxed(50, 40, 10, 10)], "persons": [boxed(5, 5, 30, 40), boxed(40, 20, 60, 120)],
                 "crop": {"sims": {"male": 0.9, "female": 0.1}}},
    });
    let stub = Arc::new(StubBackend::from_json(&script.to_string()).map_err(|e| e.to_string())?);
    let cfg = DetectorConfig::default();
    let img = |id: &str| ImageView::new(id, image::RgbImage::from_fn(200, 200, |x, y| image::Rgb([x as u8, y as u8, 7])));
    let run = |id: &str| detect_clip_enhance(&img(id), stub.as_ref(), stub.as_ref(), stub.as_ref(), &cfg).map_err(|e| e.to_string());

    let r51 = run("r51")?;
    ensure(r51 == Outcome::Filtered(FilterReason::MultiplePeople), || format!("ratio 0.51 -> {r51:?}"))?;
    let r50 = run("r50")?;
    ensure(matches!(r50, Outcome::Classified { .. }), || format!("ratio 0.50 -> {r50:?}"))?;
    let nf = run("noface")?;
    ensure(nf == Outcome::Filtered(FilterReason::NoFace), || format!("no faces -> {nf:?}"))?;

    let image = img("geom");
    let region = clip_enhance_region(&image, stub.as_ref(), stub.as_ref(), &cfg).map_err(|e| e.to_string())?;
    let largest = BBox::new(40, 20, 60, 120, 0.9);
    ensure(region == Ok(Some(largest)), || format!("crop region {region:?}"))?;
    let enhanced = run("geom")?;
    let crop = image.crop(&largest);
    ensure(crop.width() == 60 && crop.height() == 120, || format!("crop size {}x{}", crop.width(), crop.height()))?;
    let bytes = crop.encode_png().map_err(|e| e.to_string())?;
    let decoded = ImageView::decode_png(image.crop_id(&largest), &bytes).map_err(|e| e.to_string())?;
    ensure(decoded.pixels == crop.pixels, || "crop bytes do not round-trip".into())?;
    let direct = detect_clip(&decoded, stub.as_ref(), &cfg).map_err(|e| e.to_string())?;
    ensure(enhanced == direct, || format!("enhanced {enhanced:?} vs clip on crop {direct:?}"))?;
    ensure(stub.requests().iter().any(|r| r == "geom#crop=40,20,60,120"), || format!("requests {:?}", stub.requests()))?;
    Ok(format!("0.51 filtered, 0.50 {r50:?}, crop 40,20,60,120 -> {direct:?}"))
}

/// Scripts the stub from the scenes the mock planted.
fn stub_script_for(run_dir: &Path, records: &[ImageRecord]) -> Result<Value, String> {
    let mut script = serde_json::Map::new();
    for r in records {
        let scene = generation::read_scene(run_dir, r).ok_or_else(|| format!("no scene for {}", r.image_id))?;
        let person = scene.persons.first().copied().ok_or_else(|| format!("no person in {}", r.image_id))?;
        let (m, f) = match scene.planted_gender {
            Some(GenderLabel::Male) => (0.8, 0.2),
            _ => (0.2, 0.8),
        };
        let face = boxed(person.x + person.w / 4, person.y, (person.w / 2).max(1), (person.h / 4).max(1));
        let persons: Vec<Value> = scene.persons.iter().map(|p| boxed(p.x, p.y, p.w, p.h)).collect();
        script.insert(
            r.image_id.clone(),
            json!({"faces": [face], "persons": persons, "crop": {"sims": {"male": m, "female": f}}}),
        );
    }
    Ok(Value::Object(script))
}

fn cli(args: &[&str]) -> Result<(), String> {
    cli::run(std::iter::once("genbias").chain(args.iter().copied())).map_err(|e| e.to_string())
}

fn c9() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let words: String = std::iter::once("category,word\n".to_string())
        .chain(PromptCategory::ALL.iter().enumerate().flat_map(|(i, c)| {
            [format!("{},word{i}a\n", c.as_str()), format!("{},word{i}b\n", c.as_str())]
        }))
        .collect();
    let words_path = root.join("words.csv");
    fs::write(&words_path, words).map_err(|e| e.to_string())?;
    let script_path = root.join("stub.json");
    let config = format!(
        r#"
run_id = "e2e"
output_root = {root:?}
images_per_prompt = 10
detectors = ["clip-enhance"]

[capabilities]
provider = "stub"
stub_script = {script:?}

[[backends]]
id = "planted"
kind = "mock"
[backends.config]
pattern = ["M", "M", "M", "M", "M", "M", "M", "F", "F", "F"]
"#,
        root = root.join("runs").display().to_string(),
        script = script_path.display().to_string(),
    );
    let config_path = root.join("run.toml");
    fs::write(&config_path, config).map_err(|e| e.to_string())?;
    let cfg = config_path.to_str().unwrap();

    cli(&["--config", cfg, "gen-prompts", "--words", words_path.to_str().unwrap()])?;
    cli(&["--config", cfg, "generate"])?;
    let run_dir = root.join("runs").join("e2e");
    let records = generation::records(&generation::read_manifest(&run_dir.join("manifest.jsonl")).map_err(|e| e.to_string())?);
    ensure(records.len() == 100, || format!("{} images generated", records.len()))?;
    fs::write(&script_path, stub_script_for(&run_dir, &records)?.to_string()).map_err(|e| e.to_string())?;
    cli(&["--config", cfg, "detect"])?;
    cli(&["--config", cfg, "score"])?;
    cli(&["--config", cfg, "compare"])?;

    let score: Value = serde_json::from_slice(&fs::read(run_dir.join("reports/score.json")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let backend = &score[0];
    let truth = backend["truth_model_bias"].as_f64();
    let det = &backend["detectors"][0];
    let (mbs, pbs) = (det["model_bias"].as_f64(), det["pbs_difference"].as_f64());
    ensure(truth == Some(0.4), || format!("planted truth model bias {truth:?}"))?;
    ensure(mbs == Some(0.4), || format!("clip-enhance model bias {mbs:?}"))?;
    ensure(pbs == Some(0.0), || format!("pbs difference {pbs:?}"))?;
    Ok(format!("model bias {} pbs difference {}", mbs.unwrap(), pbs.unwrap()))
}

fn c10() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let suite = build_suite(&bundled_word_lists()).map_err(|e| e.to_string())?;
    let mock = MockConfig { pattern: vec!["M".parse().unwrap(), "noface:F".parse().unwrap(), "multi:F:0.7".parse().unwrap(), "F".parse().unwrap()], ..MockConfig::default() };
    let desc = BackendDescriptor::mock("mock", &mock);
    let backend = generation::instantiate(&desc).map_err(|e| e.to_string())?;
    let entries = generation::generate(&suite[..30], &desc, backend.as_ref(), 5, 9, dir.path()).map_err(|e| e.to_string())?;
    let records = generation::records(&entries);
    let caps = Capabilities::all_from(Arc::new(genbias::inference::synthetic::SceneReader::default()));
    let cfg = DetectorConfig::default();
    let mut outputs = Vec::new();
    for id in [DetectorId::ClipEnhance, DetectorId::FairFace, DetectorId::Blip2] {
        let full = dir.path().join(format!("full-{id}.jsonl"));
        let resumed = dir.path().join(format!("resumed-{id}.jsonl"));
        run_detector(id, &records, dir.path(), &caps, &cfg, &RunOptions { checkpoint: Some(full.clone()), stop_after: None })
            .map_err(|e| e.to_string())?;
        let killed = run_detector(id, &records, dir.path(), &caps, &cfg, &RunOptions { checkpoint: Some(resumed.clone()), stop_after: Some(67) })
            .map_err(|e| e.to_string())?;
        ensure(!killed.complete, || "interrupted run reported complete".into())?;
        // simulate a kill mid-write
        let mut f = fs::OpenOptions::new().append(true).open(&resumed).map_err(|e| e.to_string())?;
        std::io::Write::write_all(&mut f, br#"{"image_id":"half"#).map_err(|e| e.to_string())?;
        drop(f);
        let s = run_detector(id, &records, dir.path(), &caps, &cfg, &RunOptions { checkpoint: Some(resumed.clone()), stop_after: None })
            .map_err(|e| e.to_string())?;
        let (a, b) = (fs::read(&full).map_err(|e| e.to_string())?, fs::read(&resumed).map_err(|e| e.to_string())?);
        ensure(a == b, || format!("{id}: resumed verdicts differ"))?;
        outputs.push(format!("{id} reused={}", s.reused));
    }
    Ok(format!("{} images; {}", records.len(), outputs.join(", ")))
}

const RELEASED_VAR: &str = "GENBIAS_RELEASED_LABELS";

fn c12() -> Option<Check> {
    let path = std::env::var_os(RELEASED_VAR)?;
    Some((|| {
        let file = fs::File::open(&path).map_err(|e| format!("{}: {e}", Path::new(&path).display()))?;
        let (labels, backends) = import_released_labels(file).map_err(|e| e.to_string())?;
        let summary = dataset_summary(&labels, &backends).map_err(|e| e.to_string())?;
        let want = [
            ("sdxl", [68.80, 12.90, 18.30]),
            ("sd3", [72.80, 20.00, 7.20]),
            ("dreamlike", [48.90, 39.15, 11.95]),
        ];
        for (name, [m, f, l]) in want {
            let row = summary
                .rows
                .iter()
                .find(|r| r.backend_id.to_ascii_lowercase().replace(['-', '_', ' '], "") == name)
                .ok_or_else(|| format!("backend {name} missing from dataset"))?;
            within(&format!("{name} male"), row.male_pct, m, 0.01)?;
            within(&format!("{name} female"), row.female_pct, f, 0.01)?;
            within(&format!("{name} low quality"), row.low_quality_pct, l, 0.01)?;
        }
        let t = &summary.total;
        within("total male", t.male_pct, 63.50, 0.01)?;
        within("total female", t.female_pct, 24.02, 0.01)?;
        within("total low quality", t.low_quality_pct, 12.48, 0.01)?;
        Ok(format!("{} labels", labels.len()))
    })())
}

fn main() -> ExitCode {
    let mut s = Suite { failed: 0 };
    let secs = Duration::from_secs;
    s.run("1", "prompt bias spot values", Some(secs(1)), || Some(c1()));
    s.run("2", "model bias from per-prompt table", Some(secs(1)), || Some(c2()));
    s.run("3", "category scores from per-prompt table", None, || Some(c3()));
    s.run("4", "percentage differences and arrows", None, || Some(c4()));
    s.run("5", "filtering metrics oracle", Some(secs(10)), || Some(c5()));
    s.run("6", "model bias equals mean absolute prompt score", None, || Some(c6()));
    s.run("7", "cohen's kappa", None, || Some(c7()));
    s.run("8", "clip-enhance boundaries", Some(secs(5)), || Some(c8()));
    s.run("9", "end-to-end mock run", Some(secs(30)), || Some(c9()));
    s.run("10", "detector resume determinism", None, || Some(c10()));
    s.run("11", "annotation browser loop (secondary; UI not built, HTTP loop in annotation_http tests)", None, || None);
    s.run("12", &format!("released dataset proportions (set {RELEASED_VAR})"), None, c12);
    if s.failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{} criteria failed", s.failed);
        ExitCode::FAILURE
    }
}
