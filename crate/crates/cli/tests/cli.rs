use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use shapelinker::aligner::{evaluate, AlignerModel};
use shapelinker::nn::Checkpoint;
use shapelinker::PointCloud;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_shapelinker"));
    c.env_remove("SHAPELINKER_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert_eq!(o.status.code(), Some(0), "stderr: {}", stderr(o));
}

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(rel)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

/// Config for a cheap scorer and a tiny RL run.
const FAST: &str = r#"{
  "scoring": { "conformers": 1, "surface": { "seeds_per_atom": 16 } },
  "surface": { "seeds_per_atom": 64 },
  "synthetic": { "pairs": 6, "points": 24 },
  "train": { "epochs": 1 },
  "pretrain": { "epochs": 1, "hidden": 16, "embedding_dim": 8, "batch_size": 8 },
  "rl": { "epochs": 2, "batch_size": 4 },
  "samples": 8
}"#;

#[test]
fn surface_of_one_atom_is_a_sphere_and_reproducible() {
    let tmp = TempDir::new().unwrap();
    let input = write(tmp.path(), "c.xyz", "1\ncarbon\nC 0 0 0\n");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["surface", "--input", p(&input), "--out", p(out), "--seed", "5"]);
        assert_ok(&o);
        assert!(String::from_utf8_lossy(&o.stdout).contains("points"));
    }
    let text = fs::read_to_string(a.join("surface.xyz")).unwrap();
    assert_eq!(text, fs::read_to_string(b.join("surface.xyz")).unwrap());
    let cloud = PointCloud::from_xyz(&text).unwrap();
    assert!(cloud.len() > 10);
    for q in &cloud.points {
        assert!((q.norm() - 2.6).abs() < 0.05, "{}", q.norm());
    }
    assert!(a.join("config.json").exists());
}

#[test]
fn empty_atom_file_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    let input = write(tmp.path(), "empty.xyz", "");
    let o = run(&["surface", "--input", p(&input), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no atoms"), "{}", stderr(&o));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", r#"{"surface": {"levle": 1.0}}"#);
    let input = write(tmp.path(), "c.xyz", "1\n\nC 0 0 0\n");
    let o = run(&["surface", "--config", p(&cfg), "--input", p(&input), "--out", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
}

fn load_aligner(path: &Path) -> AlignerModel {
    AlignerModel::from_checkpoint(&Checkpoint::from_json(&fs::read_to_string(path).unwrap()).unwrap()).unwrap()
}

fn val_pairs() -> Vec<(PointCloud, PointCloud)> {
    (20..24)
        .map(|i| {
            let read = |kind: &str| {
                PointCloud::from_xyz(&fs::read_to_string(data(&format!("synthetic/pairs/{kind}_{i:04}.xyz"))).unwrap())
                    .unwrap()
            };
            (read("query"), read("reference"))
        })
        .collect()
}

fn loss_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["epoch", "train_loss", "val_loss"]);
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn training_on_the_bundled_manifest_lowers_validation_loss() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    let o = run(&["train-aligner", "--manifest", p(&data("synthetic/manifest.json")), "--out", p(&out), "--threads", "1"]);
    assert_ok(&o);
    let rows = loss_rows(&out.join("loss.csv"));
    assert_eq!(rows.len(), 51);
    let first: f64 = rows[0][2].parse().unwrap();
    let last: f64 = rows[50][2].parse().unwrap();
    assert!(last < first, "{first} -> {last}");
    let model = load_aligner(&out.join("aligner.json"));
    assert!((evaluate(&model, &val_pairs()).unwrap() - last).abs() < 1e-9);
}

#[test]
fn zero_epochs_keeps_the_initialisation() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", r#"{"train": {"epochs": 0}}"#);
    let manifest = data("synthetic/manifest.json");
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        assert_ok(&run(&["train-aligner", "--manifest", p(&manifest), "--config", p(&cfg), "--out", p(&out)]));
    }
    let a = fs::read_to_string(tmp.path().join("a/aligner.json")).unwrap();
    assert_eq!(a, fs::read_to_string(tmp.path().join("b/aligner.json")).unwrap());
    let rows = loss_rows(&tmp.path().join("a/loss.csv"));
    assert_eq!(rows.len(), 1);
    let model = load_aligner(&tmp.path().join("a/aligner.json"));
    let v: f64 = rows[0][2].parse().unwrap();
    assert!((evaluate(&model, &val_pairs()).unwrap() - v).abs() < 1e-12);
}

#[test]
fn missing_manifest_file_is_named() {
    let tmp = TempDir::new().unwrap();
    let manifest = write(
        tmp.path(),
        "m.json",
        r#"[{"query_xyz_path": "nowhere_q.xyz", "reference_xyz_path": "nowhere_r.xyz"}]"#,
    );
    let o = run(&["train-aligner", "--manifest", p(&manifest), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere_q.xyz"), "{}", stderr(&o));
}

#[test]
fn divergent_training_exits_with_numeric_failure() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", r#"{"train": {"epochs": 3, "lr": 1e300}}"#);
    let o = run(&[
        "train-aligner",
        "--manifest",
        p(&data("synthetic/manifest.json")),
        "--config",
        p(&cfg),
        "--out",
        p(&tmp.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

fn untrained_checkpoint(dir: &Path) -> PathBuf {
    let cfg = write(dir, "zero.json", r#"{"train": {"epochs": 0}}"#);
    let out = dir.join("ck");
    assert_ok(&run(&["train-aligner", "--manifest", p(&data("synthetic/manifest.json")), "--config", p(&cfg), "--out", p(&out)]));
    out.join("aligner.json")
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn align_reports_learned_and_ransac_side_by_side() {
    let tmp = TempDir::new().unwrap();
    let ck = untrained_checkpoint(tmp.path());
    let cloud = data("synthetic/pairs/reference_0000.xyz");
    let args = ["align", "--checkpoint", p(&ck), "--query", p(&cloud), "--reference", p(&cloud), "--ransac", "--iters", "1"];
    let o = run(&args);
    assert_ok(&o);
    let v = json(&o);
    assert_eq!(v["method"], "aligner");
    assert!(v["chamfer"].as_f64().unwrap().is_finite());
    assert_eq!(v["ransac"]["iterations"], 1);
    assert!(v["ransac"]["chamfer"].as_f64().unwrap() >= 0.0);
    assert_eq!(v["rotation"].as_array().unwrap().len(), 3);
    assert_eq!(o.stdout, run(&args).stdout);
}

#[test]
fn align_rejects_bad_inputs() {
    let tmp = TempDir::new().unwrap();
    let ck = untrained_checkpoint(tmp.path());
    let two = write(tmp.path(), "two.xyz", "2\n\nX 0 0 0\nX 1 0 0\n");
    let cloud = data("synthetic/pairs/reference_0000.xyz");
    let o = run(&["align", "--checkpoint", p(&ck), "--query", p(&two), "--reference", p(&cloud)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let bad = write(tmp.path(), "bad.json", r#"{"kind": "aligner"}"#);
    let o = run(&["align", "--checkpoint", p(&bad), "--query", p(&cloud), "--reference", p(&cloud)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

/// (SMILES, rotatable-bond ratio, linker-length ratio), enumerated by hand
/// over the bonds between non-placeholder atoms.
const SCORE_FIXTURE: [(&str, f64, f64); 10] = [
    ("*CC*", 100.0, 100.0),
    ("*CCCC*", 100.0, 100.0),
    ("*CCOCC*", 100.0, 100.0),
    ("*CC(C)CC*", 75.0, 100.0),
    ("*CC(CCC)C*", 80.0, 50.0),
    ("*c1ccc(cc1)*", 0.0, 100.0),
    ("*c1cccc(c1)*", 0.0, 200.0 / 3.0),
    ("*C#CC*", 50.0, 100.0),
    ("*C(=O)NC*", 200.0 / 3.0, 200.0 / 3.0),
    ("*CC(C)(C)C*", 50.0, 100.0),
];

#[test]
fn score_csv_matches_hand_values_and_is_stable() {
    let tmp = TempDir::new().unwrap();
    let ck = untrained_checkpoint(tmp.path());
    let cfg = write(tmp.path(), "fast.json", FAST);
    let mut text: String = SCORE_FIXTURE.iter().map(|(s, _, _)| format!("{s}\n")).collect();
    text.push_str("not_a_smiles\n");
    let smiles = write(tmp.path(), "in.smi", &text);
    let cloud = data("synthetic/pairs/reference_0000.xyz");
    let score = |out: &str| {
        let out = tmp.path().join(out);
        let o = run(&[
            "score", "--smiles", p(&smiles), "--reference", p(&cloud), "--checkpoint", p(&ck), "--config", p(&cfg),
            "--out", p(&out),
        ]);
        assert_ok(&o);
        fs::read_to_string(out.join("scores.csv")).unwrap()
    };
    let csv_text = score("a");
    assert_eq!(csv_text, score("b"));

    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let h = r.headers().unwrap().clone();
    let col = |name: &str| h.iter().position(|x| x == name).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 11);
    for (row, (s, rot, len)) in rows.iter().zip(SCORE_FIXTURE) {
        assert_eq!(&row[col("smiles")], s);
        let rot_raw: f64 = row[col("rot_raw")].parse().unwrap();
        let len_raw: f64 = row[col("length_raw")].parse().unwrap();
        assert!((rot_raw - rot).abs() < 1e-9, "{s}: rot {rot_raw}");
        assert!((len_raw - len).abs() < 1e-9, "{s}: length {len_raw}");
        let in_band = |x: f64, lo: f64, hi: f64| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 };
        assert_eq!(row[col("rot")].parse::<f64>().unwrap(), in_band(rot, 0.0, 30.0));
        assert_eq!(row[col("length")].parse::<f64>().unwrap(), in_band(len, 100.0, 100.0));
    }
    let bad = &rows[10];
    assert_eq!(&bad[col("smiles")], "not_a_smiles");
    assert_eq!(bad[col("composite")].parse::<f64>().unwrap(), 0.0);
    assert_eq!(&bad[col("note")], "parse error");
}

#[test]
fn score_accepts_annotations_for_full_molecules() {
    let tmp = TempDir::new().unwrap();
    let ck = untrained_checkpoint(tmp.path());
    let cfg = write(tmp.path(), "fast.json", FAST);
    // benzene-CH2CH2-benzene with the ethylene bridge as linker
    let smiles = write(tmp.path(), "in.smi", "c1ccccc1CCc1ccccc1\n*CC*\n");
    let ann = write(
        tmp.path(),
        "ann.json",
        r#"[{"linker_atoms": [6, 7], "attachments": [6, 7]}, null]"#,
    );
    let out = tmp.path().join("o");
    let o = run(&[
        "score", "--smiles", p(&smiles), "--annotations", p(&ann), "--reference",
        p(&data("synthetic/pairs/reference_0000.xyz")), "--checkpoint", p(&ck), "--config", p(&cfg), "--out", p(&out),
    ]);
    assert_ok(&o);
    let mut r = csv::Reader::from_path(out.join("scores.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    // the ethylene bridge: one rotatable bond, path equal to diameter
    for row in &rows {
        assert_eq!(&row[4], "100");
        assert_eq!(&row[6], "100");
    }
    assert!(rows[0][2].parse::<f64>().unwrap() >= 0.0);
    let short = write(tmp.path(), "short.json", "[null]");
    let o = run(&[
        "score", "--smiles", p(&smiles), "--annotations", p(&short), "--reference",
        p(&data("synthetic/pairs/reference_0000.xyz")), "--checkpoint", p(&ck), "--out", p(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

fn rl_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn rl_pipeline_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "corpus.smi", "*CC*\n*CCO*\n*CCOC*\n*c1ccc(cc1)*\n*CN(C)C*\n*CCN*\n");
    let cfg = FAST.replacen('{', r#"{ "inputs": { "corpus": "corpus.smi" },"#, 1);
    let cfg = write(tmp.path(), "rl.json", &cfg);
    for name in ["a", "b"] {
        let o = run(&["rl", "--config", p(&cfg), "--seed", "3", "--out", p(&tmp.path().join(name))]);
        assert_ok(&o);
    }
    let a = rl_files(&tmp.path().join("a"));
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    for f in [
        "agent.json", "aligner.json", "aligner_loss.csv", "config.json", "learning_curve.csv", "pretrain.csv",
        "prior.json", "reference.xyz", "samples.smi", "summary.json",
    ] {
        assert!(names.contains(&f), "{f} missing from {names:?}");
    }
    assert_eq!(a, rl_files(&tmp.path().join("b")));
    let samples = fs::read_to_string(tmp.path().join("a/samples.smi")).unwrap();
    assert_eq!(samples.lines().count(), 8);
    let curve = fs::read_to_string(tmp.path().join("a/learning_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);
    assert!(curve.starts_with("epoch,mean_score,"));
}

#[test]
fn rl_with_no_samples_reports_null_validity() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "corpus.smi", "*CC*\n*CCO*\n");
    let cfg = FAST
        .replacen('{', r#"{ "inputs": { "corpus": "corpus.smi" },"#, 1)
        .replace(r#""samples": 8"#, r#""samples": 0"#)
        .replace(r#""epochs": 2, "batch_size": 4"#, r#""epochs": 0"#);
    let cfg = write(tmp.path(), "rl.json", &cfg);
    let out = tmp.path().join("o");
    assert_ok(&run(&["rl", "--config", p(&cfg), "--out", p(&out)]));
    assert_eq!(fs::read_to_string(out.join("samples.smi")).unwrap(), "");
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["generation"]["validity"].is_null());
    assert_eq!(summary["generation"]["samples"], 0);
    assert!(summary["first_window_mean_score"].is_null());
}

#[test]
fn eval_fixture_triple() {
    let tmp = TempDir::new().unwrap();
    // 10 samples: 8 valid, 6 unique canonical forms, 1 of them known
    let samples = write(
        tmp.path(),
        "s.smi",
        "CCO\nOCC\nCCN\nNCC\nCCC\nc1ccccc1\nC1CC1\nCOC\nnot_a_smiles\nC(\n",
    );
    let known = write(tmp.path(), "k.smi", "C(C)O\n");
    let cd = write(tmp.path(), "cd.csv", "cd,similarity\n1,0\n2,0.5\n3,1\n");
    let o = run(&["eval", "--smiles", p(&samples), "--reference-smiles", p(&known), "--cd", p(&cd)]);
    assert_ok(&o);
    let v = json(&o);
    assert_eq!(v["validity"].as_f64().unwrap(), 0.8);
    assert_eq!(v["uniqueness"].as_f64().unwrap(), 0.75);
    assert_eq!(v["novelty"].as_f64().unwrap(), 5.0 / 6.0);
    assert_eq!(v["mean_cd"].as_f64().unwrap(), 2.0);
    assert_eq!(v["mean_sn"].as_f64().unwrap(), 1.25 / 3.0);

    let empty = write(tmp.path(), "empty.smi", "");
    let o = run(&["eval", "--smiles", p(&samples), "--reference-smiles", p(&empty)]);
    assert_ok(&o);
    let v = json(&o);
    assert_eq!(v["novelty"].as_f64().unwrap(), 1.0);
    assert!(v["mean_cd"].is_null());
}

#[test]
fn eval_single_row_and_similarity_from_smiles() {
    let tmp = TempDir::new().unwrap();
    let samples = write(tmp.path(), "s.smi", "*CCOCC*\n");
    let one = write(tmp.path(), "one.csv", "smiles,cd\n*CCOCC*,2.5\n");
    let o = run(&[
        "eval", "--smiles", p(&samples), "--reference-smiles", p(&samples), "--cd", p(&one), "--linker", "*CCCCC*",
    ]);
    assert_ok(&o);
    let v = json(&o);
    let sim = {
        use shapelinker::chem::{fingerprint, parse_smiles, tanimoto};
        let f = |s: &str| fingerprint(&parse_smiles(s).unwrap());
        tanimoto(&f("*CCOCC*"), &f("*CCCCC*"))
    };
    assert!(sim > 0.0 && sim < 1.0);
    assert_eq!(v["mean_sn"].as_f64().unwrap(), 1.0 - sim);
    assert_eq!(v["novelty"].as_f64().unwrap(), 0.0);
    let o = run(&["eval", "--out", p(&tmp.path().join("o")), "--smiles", p(&samples), "--reference-smiles", p(&samples), "--cd", p(&one), "--linker", "*CCCCC*"]);
    assert_ok(&o);
    assert!(tmp.path().join("o/metrics.json").exists());
}

#[test]
fn eval_rejects_malformed_csv() {
    let tmp = TempDir::new().unwrap();
    let samples = write(tmp.path(), "s.smi", "CCO\n");
    for text in ["cd,similarity\n1,abc\n", "x,y\n1,2\n", "cd,similarity\n1\n", "cd\n1\n"] {
        let cd = write(tmp.path(), "bad.csv", text);
        let o = run(&["eval", "--smiles", p(&samples), "--reference-smiles", p(&samples), "--cd", p(&cd)]);
        assert_eq!(o.status.code(), Some(2), "{text:?}: {}", stderr(&o));
    }
}

#[test]
fn thread_count_from_environment() {
    let tmp = TempDir::new().unwrap();
    let input = write(tmp.path(), "c.xyz", "1\n\nC 0 0 0\n");
    let o = bin()
        .env("SHAPELINKER_THREADS", "2")
        .args(["surface", "--input", p(&input), "--out", p(&tmp.path().join("o"))])
        .output()
        .unwrap();
    assert_ok(&o);
}
