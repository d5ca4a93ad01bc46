use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use reif::artifacts::{self as art, InfluenceRow};

fn reif(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reif")).args(args).env("REIF_WORKERS", "2").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &str = r#"
name = "cli"
output_dir = "out"

[data]
num_relations = 3
feature_dim = 3
num_bags = 60
num_test_bags = 40
seed = 7

[run]
epochs = 3
validation_sum = true

[grid]
strategies = ["REIF-P-BiB", "FULL"]
ratios = [0.2]
seeds = [1]
"#;

#[test]
fn generate_is_reproducible_and_counts_add_up() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    let first = reif(&["generate", "--out", p(&a), "--seed", "3", "--num-bags", "50", "--num-test-bags", "20"]);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let second = reif(&["generate", "--out", p(&b), "--seed", "3", "--num-bags", "50", "--num-test-bags", "20"]);
    assert_eq!(code(&second), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let table = String::from_utf8(first.stdout).unwrap();
    let instances: usize = table
        .lines()
        .filter(|l| l.starts_with("train") || l.starts_with("test"))
        .map(|l| l.split_whitespace().nth(2).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(instances, fs::read_to_string(&a).unwrap().lines().count());
}

#[test]
fn run_influence_evaluate_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    fs::write(&config, SMALL).unwrap();
    let run = reif(&["run", "--experiment", p(&config)]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));

    let out = dir.path().join("out");
    let model = out.join("runs").join("REIF-P-BiB_r0.2_s1").join("model.json");
    let dataset = out.join("dataset.jsonl");
    assert!(model.is_file() && dataset.is_file());

    let infl = dir.path().join("infl.csv");
    let r = reif(&["influence", "--model", p(&model), "--dataset", p(&dataset), "--out", p(&infl), "--solver", "exact"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let rows: Vec<InfluenceRow> = art::read_csv(&infl).unwrap();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.phi.is_finite() && r.pi > 0.0 && r.pi < 1.0));
    assert_eq!(art::csv_string(&rows).unwrap(), fs::read_to_string(&infl).unwrap());

    let eval_dir = dir.path().join("eval");
    let e = reif(&["evaluate", "--model", p(&model), "--dataset", p(&dataset), "--out-dir", p(&eval_dir), "--patn", "5,10"]);
    assert_eq!(code(&e), 0);
    assert!(String::from_utf8(e.stdout).unwrap().contains("P@5"));
    assert!(eval_dir.join(art::PR_CURVE).is_file());

    let rep = reif(&["report", "--dir", p(&out)]);
    assert_eq!(code(&rep), 0);
    let table = String::from_utf8(rep.stdout).unwrap();
    assert!(table.contains("REIF-P-BiB") && table.contains("FULL"));

    // A pairwise request over the cap is a configuration problem.
    let pw = reif(&[
        "influence", "--model", p(&model), "--dataset", p(&dataset), "--out", p(&infl),
        "--pairwise", "--pairwise-out", p(&dir.path().join("pw.csv")), "--pairwise-cap", "1",
    ]);
    assert_eq!(code(&pw), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "output_dir = 'x'\nbogus = 1\n").unwrap();
    assert_eq!(code(&reif(&["run", "--experiment", p(&config)])), 2);

    let data = dir.path().join("d.jsonl");
    assert_eq!(code(&reif(&["generate", "--out", p(&data), "--num-bags", "20", "--num-test-bags", "10"])), 0);
    let text = fs::read_to_string(&data).unwrap();
    let tampered = text.replacen("{", "{\"extra\":1,", 1);
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, tampered).unwrap();

    let model = dir.path().join("m.json");
    let ds = reif::dataset_io::read_dataset(&data, Default::default()).unwrap().dataset;
    let zero = reif_core::model::SoftmaxModel::zeros(ds.dim(), ds.num_classes()).unwrap();
    reif::runner::write_model(&model, &zero).unwrap();

    let out = dir.path().join("i.csv");
    let strict = reif(&["influence", "--model", p(&model), "--dataset", p(&bad), "--out", p(&out)]);
    assert_eq!(code(&strict), 3);
    assert!(String::from_utf8(strict.stderr).unwrap().contains("line 1"));
    let lenient = reif(&["influence", "--model", p(&model), "--dataset", p(&bad), "--out", p(&out), "--lenient"]);
    assert_eq!(code(&lenient), 0, "{}", String::from_utf8_lossy(&lenient.stderr));
    let rows: Vec<InfluenceRow> = art::read_csv(&out).unwrap();
    assert!(rows.iter().all(|r| r.phi.is_finite()));
}
