use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn chronorank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chronorank")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn ap_fixture(dir: &Path) -> (String, String) {
    let run = dir.join("a.run");
    let qrels = dir.join("qrels.txt");
    fs::write(&run, "1 Q0 r1 1 3.0 x\n1 Q0 n1 2 2.0 x\n1 Q0 r2 3 1.0 x\n").unwrap();
    fs::write(&qrels, "1 0 r1 1\n1 0 n1 0\n1 0 r2 1\n").unwrap();
    (p(&run).to_string(), p(&qrels).to_string())
}

#[test]
fn eval_prints_ap_of_the_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let (run, qrels) = ap_fixture(dir.path());
    let out = chronorank(&["eval", "--run", &run, "--qrels", &qrels]);
    assert!(out.status.success(), "{out:?}");
    let text = stdout(&out);
    assert!(text.contains("1\tap\t0.8333\n"), "{text}");
    assert!(text.contains("all\tap\t0.8333\n"), "{text}");
    assert!(text.contains("all\tp15\t0.1333\n"), "{text}");
    assert!(text.contains("\"ap\": 0.8333"), "{text}");
}

#[test]
fn eval_compare_with_sigtest_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let (run, qrels) = ap_fixture(dir.path());
    let other = dir.path().join("b.run");
    fs::write(&other, "1 Q0 n1 1 3.0 y\n1 Q0 r1 2 2.0 y\n1 Q0 r2 3 1.0 y\n").unwrap();
    fs::write(dir.path().join("qrels.txt"), "1 0 r1 1\n1 0 n1 0\n1 0 r2 1\n2 0 r1 1\n").unwrap();
    fs::write(dir.path().join("a.run"), "1 Q0 r1 1 3.0 x\n1 Q0 n1 2 2.0 x\n1 Q0 r2 3 1.0 x\n2 Q0 r1 1 1.0 x\n").unwrap();
    let summary = dir.path().join("summary.json");
    let out = chronorank(&[
        "eval", "--run", &run, "--qrels", &qrels, "--metrics", "ap", "--compare", p(&other), "--sigtest", "--summary",
        p(&summary),
    ]);
    assert!(out.status.success(), "{out:?}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(json["topics"], 2);
    let p_value = json["compare"]["ap"]["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p_value));
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    let out = chronorank(&["eval", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(chronorank(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(chronorank(&[]).status.code(), Some(1));
    let help = chronorank(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("rerank-neural"));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.run");
    let out = chronorank(&["eval", "--run", p(&missing), "--qrels", p(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    let bad = dir.path().join("bad.run");
    fs::write(&bad, "1 Q0 d1 1 2.5 x\n1 Q0 d2 3 2.0 x\n").unwrap();
    let (_, qrels) = ap_fixture(dir.path());
    let out = chronorank(&["eval", "--run", p(&bad), "--qrels", &qrels]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.run:2:"), "{out:?}");
}

const SMALL_SYNTH: &str = "n_topics: 8\nn_train_topics: 4\npool_size: 60\nn_relevant: 8\nbackground_terms: 300\n";

const SMALL_EXPERIMENT: &str = "\
corpus: data/corpus.jsonl
topics_train: data/topics-train.tsv
topics_test: data/topics-test.tsv
qrels: data/qrels.txt
embeddings: data/embeddings.txt
output: out
permutations: 2000
train:
  max_epochs: 2
  lr0: 0.005
  lexical:
    embedding_dim: 32
    filters: 4
    filter_width: 3
  temporal:
    hidden: 4
    head_hidden: 4
";

fn synth_dir(dir: &Path) {
    let config = dir.join("synth.yaml");
    fs::write(&config, SMALL_SYNTH).unwrap();
    let out = chronorank(&["synth", "--config", p(&config), "--seed", "3", "--out", p(&dir.join("data"))]);
    assert!(out.status.success(), "{out:?}");
    fs::write(dir.join("exp.yaml"), SMALL_EXPERIMENT).unwrap();
}

#[test]
fn staged_commands_compose() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_dir(d);
    let data = d.join("data");
    let index = d.join("index.json");
    assert!(chronorank(&["index", "--corpus", p(&data.join("corpus.jsonl")), "--out", p(&index)]).status.success());

    let ql = d.join("ql.run");
    let out = chronorank(&[
        "search", "--index", p(&index), "--topics", p(&data.join("topics-test.tsv")), "--depth", "50", "--out", p(&ql),
    ]);
    assert!(out.status.success(), "{out:?}");
    let lines = fs::read_to_string(&ql).unwrap().lines().count();
    assert!(lines > 4 * 8 && lines <= 4 * 50, "{lines}");

    let kde = d.join("kde.run");
    let qrels = data.join("qrels.txt");
    let out = chronorank(&[
        "rerank-kde", "--index", p(&index), "--run", p(&ql), "--scheme", "oracle", "--qrels", p(&qrels), "--alpha", "0.6",
        "--out", p(&kde),
    ]);
    assert!(out.status.success(), "{out:?}");
    assert!(fs::read_to_string(&kde).unwrap().contains(" kde-oracle\n"));
    let out = chronorank(&["rerank-kde", "--index", p(&index), "--run", p(&ql), "--scheme", "oracle", "--out", p(&kde)]);
    assert_eq!(out.status.code(), Some(2));

    let model = d.join("model");
    let out = chronorank(&["train", "--config", p(&d.join("exp.yaml")), "--model", "sm", "--out", p(&model)]);
    assert!(out.status.success(), "{out:?}");
    assert!(model.join("model.json").exists());
    assert_eq!(fs::read_to_string(model.join("training.jsonl")).unwrap().lines().count(), 2);

    let neural = d.join("neural.run");
    let out = chronorank(&[
        "rerank-neural", "--corpus", p(&data.join("corpus.jsonl")), "--model-dir", p(&model), "--topics",
        p(&data.join("topics-test.tsv")), "--run", p(&ql), "--out", p(&neural),
    ]);
    assert!(out.status.success(), "{out:?}");
    assert!(fs::read_to_string(&neural).unwrap().contains(" sm-temporal\n"));

    let out = chronorank(&["sigtest", "--run-a", p(&neural), "--run-b", p(&ql), "--qrels", p(&qrels), "--metric", "ap"]);
    assert!(out.status.success(), "{out:?}");
    let r: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(r["exact"], true);
}

#[test]
fn pipeline_report_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_dir(d);
    let config = d.join("exp.yaml");
    let first = chronorank(&["pipeline", "--config", p(&config)]);
    assert!(first.status.success(), "{first:?}");
    let report = stdout(&first);
    for method in ["QL", "KDE uniform", "KDE score", "KDE rank", "KDE oracle", "SM", "SM + Temporal"] {
        assert!(report.contains(&format!("| {method} |")), "{report}");
    }
    let again = chronorank(&["pipeline", "--config", p(&config), "--output", p(&d.join("out2"))]);
    assert!(again.status.success());
    assert_eq!(stdout(&again), report);
    for file in ["report.md", "summary.json", "runs/sm-temporal.run", "model/temporal.bin"] {
        assert_eq!(fs::read(d.join("out").join(file)).unwrap(), fs::read(d.join("out2").join(file)).unwrap(), "{file}");
    }
}
