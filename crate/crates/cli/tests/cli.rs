use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use tempfile::TempDir;
use xling::align;
use xling::corpus::{self, validate_iob};
use xling::embed;
use xling::seeded_rng;
use xling::synth::{self, NerSynthConfig};
use xling::tagger;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn xling<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xling"))
        .args(args)
        .stdin(Stdio::null())
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Exit code, plus a check that standard error is one diagnostic line.
fn failure(out: &Output) -> (i32, String) {
    let err = String::from_utf8_lossy(&out.stderr).to_string();
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("xling: ")).collect();
    assert_eq!(lines.len(), 1, "stderr: {err}");
    assert!(lines[0].starts_with("xling: error["), "stderr: {err}");
    (out.status.code().unwrap(), lines[0].to_string())
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

/// Source corpus and vectors, their renamed and rotated copies, and a
/// translation dictionary, written to a temp dir.
fn world() -> TempDir {
    let dir = TempDir::new().unwrap();
    let source = synth::ner_corpus(&NerSynthConfig {
        sentences: 60,
        dim: 12,
        seed: 41,
        ..NerSynthConfig::default()
    })
    .unwrap();
    let r = synth::random_orthogonal(12, &mut seeded_rng(42));
    let (target, dictionary) = synth::translate(&source, &r, "tg_").unwrap();
    let write = |name: &str, f: &dyn Fn(&mut Vec<u8>)| {
        let mut b = Vec::new();
        f(&mut b);
        fs::write(dir.path().join(name), b).unwrap();
    };
    write("source.vec", &|b| embed::write_embeddings(&source.store, b).unwrap());
    write("target.vec", &|b| embed::write_embeddings(&target.store, b).unwrap());
    write("dict.tsv", &|b| align::write_dictionary(&dictionary, b).unwrap());
    write("source.conll", &|b| corpus::write_conll(&source.sentences, &source.scheme, b).unwrap());
    write("target.conll", &|b| corpus::write_conll(&target.sentences, &target.scheme, b).unwrap());
    let tokens: String = target
        .sentences
        .iter()
        .map(|s| s.tokens.join("\n") + "\n\n")
        .collect();
    fs::write(dir.path().join("target.txt"), tokens).unwrap();
    dir
}

fn train_model(w: &TempDir, name: &str, seed: &str) {
    ok(&xling(&[
        "train",
        "--corpus",
        &p(w, "source.conll"),
        "--embeddings",
        &p(w, "source.vec"),
        "--model",
        &p(w, name),
        "--epochs",
        "8",
        "--learning-rate",
        "0.05",
        "--hidden",
        "12",
        "--seed",
        seed,
    ]));
}

fn fit_map(w: &TempDir, method: &str) -> String {
    let out = xling(&[
        "align",
        "--source",
        &p(w, "source.vec"),
        "--target",
        &p(w, "target.vec"),
        "--dictionary",
        &p(w, "dict.tsv"),
        "--method",
        method,
        "--output",
        &p(w, &format!("{method}.map")),
        "--seed",
        "5",
    ]);
    ok(&out);
    fs::read_to_string(p(w, &format!("{method}.map.diag.txt"))).unwrap()
}

fn diag_value(diag: &str, key: &str) -> String {
    diag.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} ")))
        .unwrap_or_else(|| panic!("{key} missing from {diag}"))
        .to_string()
}

fn average_f1(csv: &Path) -> f64 {
    let text = fs::read_to_string(csv).unwrap();
    let row = text.lines().find(|l| l.starts_with("Average scores")).unwrap();
    row.split(',').nth(3).unwrap().parse().unwrap()
}

#[test]
fn embed_train_round_trips_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let run = |prefix: &str| {
        ok(&xling(&[
            "embed-train",
            "--corpus",
            data("tiny_corpus.txt").to_str().unwrap(),
            "--output",
            &p(&dir, &format!("{prefix}.vec")),
            "--dim",
            "6",
            "--epochs",
            "3",
            "--window",
            "2",
            "--seed",
            "9",
        ]));
    };
    run("a");
    run("b");
    for suffix in [".vec", ".vec.ngrams", ".vec.loss.csv"] {
        let a = fs::read(p(&dir, &format!("a{suffix}"))).unwrap();
        let b = fs::read(p(&dir, &format!("b{suffix}"))).unwrap();
        assert_eq!(a, b, "{suffix} differs between runs");
    }
    let store = embed::load_embeddings(fs::read(p(&dir, "a.vec")).unwrap().as_slice(), None).unwrap();
    assert_eq!(store.dim(), 6);
    assert!(store.contains("river") && store.contains("stone"));
    let (table, dim) = embed::load_ngram_table(fs::read(p(&dir, "a.vec.ngrams")).unwrap().as_slice()).unwrap();
    assert_eq!(dim, 6);
    assert!(!table.is_empty());
    let log = fs::read_to_string(p(&dir, "a.vec.loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert_eq!(log.lines().next(), Some("epoch,mean_objective"));
}

#[test]
fn missing_corpus_exits_2_without_output() {
    let dir = TempDir::new().unwrap();
    let out = xling(&["embed-train", "--corpus", &p(&dir, "nope.txt"), "--output", &p(&dir, "x.vec")]);
    let (code, line) = failure(&out);
    assert_eq!(code, 2);
    assert!(line.contains("nope.txt"));
    assert!(!dir.path().join("x.vec").exists());
}

#[test]
fn unknown_flag_is_a_single_line_diagnostic() {
    let (code, _) = failure(&xling(&["train", "--bogus"]));
    assert_eq!(code, 2);
}

#[test]
fn config_file_supplies_settings() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        format!(
            "# tiny run\nseed = 9\ndim = 6\nepochs = 1\nembed-train.corpus = {}\nngram-min = 0\n",
            data("tiny_corpus.txt").display()
        ),
    )
    .unwrap();
    ok(&xling(&["--config", cfg.to_str().unwrap(), "embed-train", "--output", &p(&dir, "c.vec")]));
    let store = embed::load_embeddings(fs::read(p(&dir, "c.vec")).unwrap().as_slice(), None).unwrap();
    assert_eq!(store.dim(), 6);
    assert!(!dir.path().join("c.vec.ngrams").exists());
    // a flag beats the file
    ok(&xling(&[
        "--config",
        cfg.to_str().unwrap(),
        "embed-train",
        "--output",
        &p(&dir, "d.vec"),
        "--dim",
        "4",
    ]));
    let store = embed::load_embeddings(fs::read(p(&dir, "d.vec")).unwrap().as_slice(), None).unwrap();
    assert_eq!(store.dim(), 4);
}

#[test]
fn align_recovers_the_rotation() {
    let w = world();
    let diag = fit_map(&w, "svd");
    let orth: f64 = diag_value(&diag, "orthogonality_error").parse().unwrap();
    assert!(orth < 1e-8, "{diag}");
    assert_eq!(diag_value(&diag, "precision@1"), "1");
    assert_eq!(diag_value(&diag, "pairs_dropped"), "0");

    let sgd = fit_map(&w, "sgd");
    assert!(diag_value(&sgd, "orthogonality_error").parse::<f64>().unwrap().is_finite());
    let map = align::load_map(fs::read(p(&w, "sgd.map")).unwrap().as_slice()).unwrap();
    assert_eq!(map.dim(), 12);
}

#[test]
fn empty_dictionary_after_filtering_exits_3() {
    let w = world();
    fs::write(p(&w, "oov.tsv"), "zzz\tqqq\nyyy\tppp\n").unwrap();
    let out = xling(&[
        "align",
        "--source",
        &p(&w, "source.vec"),
        "--target",
        &p(&w, "target.vec"),
        "--dictionary",
        &p(&w, "oov.tsv"),
        "--output",
        &p(&w, "empty.map"),
    ]);
    assert_eq!(failure(&out).0, 3);
    assert!(!w.path().join("empty.map").exists());
    assert!(!w.path().join("empty.map.diag.txt").exists());
}

#[test]
fn train_is_deterministic_and_resume_with_zero_epochs_is_identity() {
    let w = world();
    train_model(&w, "a.model", "3");
    train_model(&w, "b.model", "3");
    let a = fs::read(p(&w, "a.model")).unwrap();
    assert_eq!(a, fs::read(p(&w, "b.model")).unwrap());
    assert_eq!(
        fs::read(p(&w, "a.model.loss.csv")).unwrap(),
        fs::read(p(&w, "b.model.loss.csv")).unwrap()
    );

    let trace = fs::read_to_string(p(&w, "a.model.loss.csv")).unwrap();
    let loss = |kind: &str| -> f64 {
        let row = trace.lines().find(|l| l.split(',').nth(1) == Some(kind)).unwrap();
        row.rsplit(',').next().unwrap().parse().unwrap()
    };
    assert!(loss("final") < loss("initial"), "{trace}");
    assert_eq!(trace.lines().filter(|l| l.contains(",epoch,")).count(), 8);

    ok(&xling(&[
        "train",
        "--corpus",
        &p(&w, "source.conll"),
        "--embeddings",
        &p(&w, "source.vec"),
        "--resume",
        &p(&w, "a.model"),
        "--model",
        &p(&w, "c.model"),
        "--epochs",
        "0",
    ]));
    assert_eq!(a, fs::read(p(&w, "c.model")).unwrap());
}

#[test]
fn invalid_tag_in_corpus_reports_its_line() {
    let w = world();
    let out = xling(&[
        "train",
        "--corpus",
        data("bad_scheme.conll").to_str().unwrap(),
        "--embeddings",
        &p(&w, "source.vec"),
        "--model",
        &p(&w, "bad.model"),
    ]);
    let (code, line) = failure(&out);
    assert_eq!(code, 2);
    assert!(line.contains("line 7"), "{line}");
    assert!(!w.path().join("bad.model").exists());
}

#[test]
fn tagging_with_and_without_the_map() {
    let w = world();
    train_model(&w, "m.model", "1");
    fit_map(&w, "svd");
    let tag = |extra: &[&str], output: &str| {
        let mut args = vec![
            "tag".to_string(),
            "--model".into(),
            p(&w, "m.model"),
            "--embeddings".into(),
            p(&w, "target.vec"),
            "--input".into(),
            p(&w, "target.txt"),
            "--output".into(),
            p(&w, output),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        ok(&xling(&args));
        fs::read_to_string(p(&w, output)).unwrap()
    };
    let plain = tag(&[], "plain.conll");
    let svd_map = p(&w, "svd.map");
    let aligned = tag(&["--align", &svd_map], "aligned.conll");
    assert_ne!(plain, aligned);

    let model = tagger::load_model(fs::read(p(&w, "m.model")).unwrap().as_slice()).unwrap();
    let parsed = corpus::parse_conll(aligned.as_bytes(), model.scheme()).unwrap();
    assert_eq!(parsed.len(), 60);
    for s in &parsed {
        assert!(validate_iob(&s.tags, model.scheme()).is_empty());
    }
}

#[test]
fn empty_tag_input_gives_empty_output() {
    let w = world();
    train_model(&w, "m.model", "1");
    let out = xling(&[
        "tag",
        "--model",
        &p(&w, "m.model"),
        "--embeddings",
        &p(&w, "source.vec"),
        "--input",
        "-",
    ]);
    ok(&out);
    assert!(out.stdout.is_empty());
}

#[test]
fn gold_against_itself_scores_one_in_both_modes() {
    let dir = TempDir::new().unwrap();
    let gold = data("gold.conll");
    ok(&xling(&[
        "eval",
        "--gold",
        gold.to_str().unwrap(),
        "--pred",
        gold.to_str().unwrap(),
        "--output-dir",
        &p(&dir, "reports"),
    ]));
    for mode in ["entity", "token"] {
        for ext in ["txt", "csv", "json"] {
            assert!(dir.path().join(format!("reports/report-{mode}.{ext}")).is_file());
        }
        let csv = fs::read_to_string(dir.path().join(format!("reports/report-{mode}.csv"))).unwrap();
        for row in csv.lines().skip(1) {
            let fields: Vec<&str> = row.split(',').collect();
            for v in &fields[1..4] {
                assert_eq!(v.parse::<f64>().unwrap(), 1.0, "{mode}: {row}");
            }
        }
        let json = fs::read_to_string(dir.path().join(format!("reports/report-{mode}.json"))).unwrap();
        assert!(json.contains(&format!("\"mode\": \"{mode}\"")));
    }
    assert!(!dir.path().join("reports/roc.svg").exists());
}

#[test]
fn eval_with_a_model_shows_the_alignment_gap() {
    let w = world();
    train_model(&w, "m.model", "2");
    fit_map(&w, "svd");
    let run = |dir: &str, aligned: bool| {
        let mut args = vec![
            "eval".to_string(),
            "--gold".into(),
            p(&w, "target.conll"),
            "--model".into(),
            p(&w, "m.model"),
            "--embeddings".into(),
            p(&w, "target.vec"),
            "--mode".into(),
            "entity".into(),
            "--output-dir".into(),
            p(&w, dir),
        ];
        if aligned {
            args.extend(["--align".to_string(), p(&w, "svd.map")]);
        }
        ok(&xling(&args));
        average_f1(&w.path().join(dir).join("report-entity.csv"))
    };
    let with_map = run("aligned", true);
    let without = run("unaligned", false);
    assert!(with_map > without + 0.3, "aligned {with_map}, unaligned {without}");
    let svg = fs::read_to_string(w.path().join("aligned/roc.svg")).unwrap();
    assert!(svg.contains("ROC curve for PER class"));
    assert!(!w.path().join("aligned/report-token.csv").exists());
}
