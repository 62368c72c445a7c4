use std::fmt::Write as _;
use std::io::{self, BufRead, Read, Write};
use std::path::{Path, PathBuf};

use xling::align::{self, AlignmentMap, DictionaryPairs};
use xling::corpus::{self, canonicalize_iob, LabelScheme, LabeledSequence};
use xling::embed::{self, EmbeddingStore, SkipgramConfig};
use xling::eval::{self, EvalReport, MetricMode, ReportFormat};
use xling::tagger::{self, TaggerModel, TrainConfig};
use xling::Error;

use crate::config::Scoped;
use crate::error::{CliError, Kind};
use crate::output::{open, require_files, sibling, Outputs};
use crate::{AlignArgs, EmbedTrainArgs, EvalArgs, TagArgs, TrainArgs};

fn load_store(path: &Path, ngrams: Option<&Path>, limit: Option<usize>) -> Result<EmbeddingStore, CliError> {
    let store = embed::load_embeddings(open(path)?, limit).map_err(|e| CliError::core(path.display(), e))?;
    let Some(np) = ngrams else {
        return Ok(store);
    };
    let (table, dim) = embed::load_ngram_table(open(np)?).map_err(|e| CliError::core(np.display(), e))?;
    if dim != store.dim() {
        return Err(CliError::input(format!(
            "{}: n-gram dimension {dim} does not match embedding dimension {}",
            np.display(),
            store.dim()
        )));
    }
    store.with_ngrams(table).map_err(|e| CliError::core(np.display(), e))
}

fn load_map(path: Option<&Path>) -> Result<Option<AlignmentMap>, CliError> {
    path.map(|p| align::load_map(open(p)?).map_err(|e| CliError::core(p.display(), e)))
        .transpose()
}

fn load_corpus(path: &Path, scheme: &LabelScheme) -> Result<Vec<LabeledSequence>, CliError> {
    corpus::parse_conll(open(path)?, scheme).map_err(|e| CliError::core(path.display(), e))
}

fn infer(path: &Path) -> Result<LabelScheme, CliError> {
    corpus::infer_scheme(open(path)?).map_err(|e| CliError::core(path.display(), e))
}

fn parse_scheme(list: &str) -> Result<LabelScheme, CliError> {
    LabelScheme::parse(list).map_err(|e| CliError::core("--scheme", e))
}

fn check_dim(store: &EmbeddingStore, model: &TaggerModel, path: &Path) -> Result<(), CliError> {
    if store.dim() != model.embed_dim() {
        return Err(CliError::input(format!(
            "{}: embedding dimension {} but the model expects {}",
            path.display(),
            store.dim(),
            model.embed_dim()
        )));
    }
    Ok(())
}

fn optional_paths(paths: &[&Option<PathBuf>]) -> Vec<PathBuf> {
    paths.iter().filter_map(|p| (*p).clone()).collect()
}

fn validate_paths(required: &[&Path], optional: &[PathBuf]) -> Result<(), CliError> {
    let mut all: Vec<&Path> = required.to_vec();
    all.extend(optional.iter().map(PathBuf::as_path));
    require_files(&all)
}

pub fn embed_train(a: &EmbedTrainArgs, s: &Scoped, seed: u64) -> Result<(), CliError> {
    let corpus_path: PathBuf = s.require(a.corpus.clone(), "corpus")?;
    let output: PathBuf = s.require(a.output.clone(), "output")?;
    require_files(&[&corpus_path])?;
    let d = SkipgramConfig::default();
    let config = SkipgramConfig {
        dim: s.get(a.dim, "dim", d.dim)?,
        window: s.get(a.window, "window", d.window)?,
        negatives: s.get(a.negatives, "negatives", d.negatives)?,
        noise_exponent: s.get(a.noise_exponent, "noise-exponent", d.noise_exponent)?,
        epochs: s.get(a.epochs, "epochs", d.epochs)?,
        learning_rate: s.get(a.learning_rate, "learning-rate", d.learning_rate)?,
        ngram_min: s.get(a.ngram_min, "ngram-min", d.ngram_min)?,
        ngram_max: s.get(a.ngram_max, "ngram-max", d.ngram_max)?,
        bracket_ngrams: s.switch(a.bracket_ngrams, "bracket-ngrams")?,
        seed,
    };
    config.validate().map_err(|e| CliError::core("embed-train", e))?;
    let ngrams_path = s.get(a.ngrams_output.clone(), "ngrams-output", sibling(&output, ".ngrams"))?;
    let loss_path = s.get(a.loss_log.clone(), "loss-log", sibling(&output, ".loss.csv"))?;

    let mut sentences = Vec::new();
    for line in open(&corpus_path)?.lines() {
        let line = line.map_err(|e| CliError::input(format!("{}: {e}", corpus_path.display())))?;
        let tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if !tokens.is_empty() {
            sentences.push(tokens);
        }
    }
    log::info!("{} sentences from {}", sentences.len(), corpus_path.display());
    let (store, model) =
        embed::train_skipgram(&sentences, &config).map_err(|e| CliError::core(corpus_path.display(), e))?;

    let mut out = Outputs::new();
    let mut vectors = Vec::new();
    embed::write_embeddings(&store, &mut vectors).map_err(|e| CliError::core(output.display(), e))?;
    out.add(&output, &vectors)?;
    if let Some(table) = store.ngrams() {
        let mut bytes = Vec::new();
        embed::write_ngram_table(table, store.dim(), &mut bytes)
            .map_err(|e| CliError::core(ngrams_path.display(), e))?;
        out.add(&ngrams_path, &bytes)?;
    }
    let mut log_csv = String::from("epoch,mean_objective\n");
    for (epoch, v) in (1..).zip(&model.history) {
        let _ = writeln!(log_csv, "{epoch},{v}");
    }
    out.add(&loss_path, log_csv.as_bytes())?;
    out.commit()
}

fn precision_line(result: xling::Result<f64>) -> Result<String, CliError> {
    match result {
        Ok(p) => Ok(p.to_string()),
        Err(Error::Empty(_)) => Ok("n/a".into()),
        Err(e) => Err(CliError::core("precision", e)),
    }
}

pub fn align(a: &AlignArgs, s: &Scoped, seed: u64) -> Result<(), CliError> {
    let source_path: PathBuf = s.require(a.source.clone(), "source")?;
    let target_path: PathBuf = s.require(a.target.clone(), "target")?;
    let dict_path: PathBuf = s.require(a.dictionary.clone(), "dictionary")?;
    let output: PathBuf = s.require(a.output.clone(), "output")?;
    let test_path: Option<PathBuf> = s.opt(a.test_dictionary.clone(), "test-dictionary")?;
    let diag_path = s.get(a.diagnostics.clone(), "diagnostics", sibling(&output, ".diag.txt"))?;
    let method: String = s.get(a.method.clone(), "method", "svd".to_string())?;
    if method != "svd" && method != "sgd" {
        return Err(CliError::input(format!("--method must be svd or sgd, not {method:?}")));
    }
    let held_out: f64 = s.get(a.held_out, "held-out", 0.2)?;
    if !(0.0..1.0).contains(&held_out) {
        return Err(CliError::input(format!("--held-out must lie in [0, 1), not {held_out}")));
    }
    let learning_rate: f64 = s.get(a.learning_rate, "learning-rate", 0.05)?;
    let epochs: usize = s.get(a.epochs, "epochs", 50)?;
    let project = s.switch(a.project, "project")?;
    let limit: Option<usize> = s.opt(a.max_vocab, "max-vocab")?;
    validate_paths(&[&source_path, &target_path, &dict_path], &optional_paths(&[&test_path]))?;

    let source = load_store(&source_path, None, limit)?;
    let target = load_store(&target_path, None, limit)?;
    let pairs = align::load_dictionary(open(&dict_path)?).map_err(|e| CliError::core(dict_path.display(), e))?;
    let (fit_pairs, test_pairs) = match &test_path {
        Some(p) => {
            let test = align::load_dictionary(open(p)?).map_err(|e| CliError::core(p.display(), e))?;
            (pairs, test)
        }
        None if pairs.is_empty() => (pairs, Vec::new()),
        None => {
            let (fit, _, test) = corpus::split_dataset(&pairs, (1.0 - held_out, 0.0, held_out), seed)
                .map_err(|e| CliError::core("--held-out", e))?;
            (fit, test)
        }
    };
    let dict = match DictionaryPairs::build(&fit_pairs, &target, &source) {
        Ok(d) => d,
        Err(Error::Empty(m)) => {
            return Err(CliError {
                kind: Kind::EmptyDictionary,
                message: format!("{}: {m}", dict_path.display()),
            })
        }
        Err(e) => return Err(CliError::core(dict_path.display(), e)),
    };
    if dict.dropped() > 0 {
        log::warn!("dropped {} out-of-vocabulary dictionary pairs", dict.dropped());
    }
    let mut map = if method == "svd" {
        align::fit_orthogonal(&dict)
    } else {
        align::fit_sgd(&dict, learning_rate, epochs, seed)
    }
    .map_err(|e| CliError::core("align", e))?;
    if project && method == "sgd" {
        map = map.nearest_orthogonal().map_err(|e| CliError::core("align", e))?;
    }

    let fit = map.diagnostics().cloned();
    let mut report = String::new();
    let _ = writeln!(report, "method {method}{}", if project && method == "sgd" { "+project" } else { "" });
    if let Some(f) = &fit {
        let _ = writeln!(report, "pairs_used {}", f.pairs_used);
        let _ = writeln!(report, "pairs_dropped {}", f.pairs_dropped);
        let _ = writeln!(report, "near_zero_singular_values {}", f.near_zero_singular_values);
        let _ = writeln!(report, "final_loss {}", f.final_loss);
    }
    let _ = writeln!(report, "orthogonality_error {}", map.orthogonality_error());
    let _ = writeln!(report, "test_pairs {}", test_pairs.len());
    for k in [1, 5] {
        let p = precision_line(align::translation_precision(&map, &test_pairs, &target, &source, k))?;
        let _ = writeln!(report, "precision@{k} {p}");
    }

    let mut bytes = Vec::new();
    align::write_map(&map, &mut bytes).map_err(|e| CliError::core(output.display(), e))?;
    let mut out = Outputs::new();
    out.add(&output, &bytes)?;
    out.add(&diag_path, report.as_bytes())?;
    out.commit()?;
    print!("{report}");
    Ok(())
}

pub fn train(a: &TrainArgs, s: &Scoped, seed: u64) -> Result<(), CliError> {
    let corpus_path: PathBuf = s.require(a.corpus.clone(), "corpus")?;
    let emb_path: PathBuf = s.require(a.embeddings.clone(), "embeddings")?;
    let model_path: PathBuf = s.require(a.model.clone(), "model")?;
    let ngrams: Option<PathBuf> = s.opt(a.ngrams.clone(), "ngrams")?;
    let map_path: Option<PathBuf> = s.opt(a.align.clone(), "align")?;
    let resume: Option<PathBuf> = s.opt(a.resume.clone(), "resume")?;
    let scheme_list: Option<String> = s.opt(a.scheme.clone(), "scheme")?;
    let trace_path = s.get(a.loss_trace.clone(), "loss-trace", sibling(&model_path, ".loss.csv"))?;
    let d = TrainConfig::default();
    let config = TrainConfig {
        epochs: s.get(a.epochs, "epochs", d.epochs)?,
        learning_rate: s.get(a.learning_rate, "learning-rate", d.learning_rate)?,
        grad_clip: s.get(a.grad_clip, "grad-clip", d.grad_clip)?,
        hidden_units: s.get(a.hidden, "hidden", d.hidden_units)?,
        layers: s.get(a.layers, "layers", d.layers)?,
        seed,
        shuffle: !s.switch(a.no_shuffle, "no-shuffle")?,
        constrained: s.switch(a.constrained, "constrained")?,
    };
    config.validate().map_err(|e| CliError::core("train", e))?;
    let limit: Option<usize> = s.opt(a.max_vocab, "max-vocab")?;
    validate_paths(
        &[&corpus_path, &emb_path],
        &optional_paths(&[&ngrams, &map_path, &resume]),
    )?;

    let resumed = match &resume {
        Some(p) => {
            let m = tagger::load_model(open(p)?).map_err(|e| CliError::core(p.display(), e))?;
            Some(m)
        }
        None => None,
    };
    let scheme = match (&scheme_list, &resumed) {
        (Some(list), _) => parse_scheme(list)?,
        (None, Some(m)) => m.scheme().clone(),
        (None, None) => infer(&corpus_path)?,
    };
    let sentences = load_corpus(&corpus_path, &scheme)?;
    let store = load_store(&emb_path, ngrams.as_deref(), limit)?;
    let map = load_map(map_path.as_deref())?;

    let model = match resumed {
        Some(mut m) => {
            let p = resume.as_deref().unwrap_or(Path::new("-"));
            if m.scheme() != &scheme {
                return Err(CliError::input(format!(
                    "{}: model entity types {:?} differ from {:?}",
                    p.display(),
                    m.scheme().entity_types(),
                    scheme.entity_types()
                )));
            }
            if a.hidden.is_some() || a.layers.is_some() {
                log::warn!("ignoring --hidden/--layers; the resumed model keeps its own shape");
            }
            if config.constrained {
                m.crf.set_constrained(true);
            }
            check_dim(&store, &m, &emb_path)?;
            m
        }
        None => TaggerModel::new(scheme, store.dim(), &config).map_err(|e| CliError::core("train", e))?,
    };
    let (model, report) = tagger::train(model, &sentences, &store, map.as_ref(), &config)
        .map_err(|e| CliError::core(corpus_path.display(), e))?;
    log::info!(
        "loss {:.6} -> {:.6} over {} epochs",
        report.initial_loss,
        report.final_loss,
        config.epochs
    );

    let mut bytes = Vec::new();
    tagger::save_model(&model, &mut bytes).map_err(|e| CliError::core(model_path.display(), e))?;
    let mut trace = String::from("epoch,kind,loss\n");
    let _ = writeln!(trace, "0,initial,{}", report.initial_loss);
    for (epoch, l) in (1..).zip(&report.epoch_losses) {
        let _ = writeln!(trace, "{epoch},epoch,{l}");
    }
    let _ = writeln!(trace, "{},final,{}", config.epochs, report.final_loss);
    let mut out = Outputs::new();
    out.add(&model_path, &bytes)?;
    out.add(&trace_path, trace.as_bytes())?;
    out.commit()
}

/// Token-per-line text: blank lines separate sentences, `-DOCSTART-` lines
/// are skipped, and only the first tab-separated field of a line is kept, so
/// CoNLL files can be tagged directly.
fn read_sentences<R: BufRead>(source: R, origin: &Path) -> Result<Vec<Vec<String>>, CliError> {
    let mut sentences = Vec::new();
    let mut current = Vec::new();
    for line in source.lines() {
        let line = line.map_err(|e| CliError::input(format!("{}: {e}", origin.display())))?;
        let token = line.split('\t').next().unwrap_or_default().trim();
        if token.is_empty() {
            if !current.is_empty() {
                sentences.push(std::mem::take(&mut current));
            }
        } else if token != "-DOCSTART-" {
            current.push(token.to_string());
        }
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    Ok(sentences)
}

pub fn tag(a: &TagArgs, s: &Scoped) -> Result<(), CliError> {
    let model_path: PathBuf = s.require(a.model.clone(), "model")?;
    let emb_path: PathBuf = s.require(a.embeddings.clone(), "embeddings")?;
    let input: PathBuf = s.get(a.input.clone(), "input", PathBuf::from("-"))?;
    let output: Option<PathBuf> = s.opt(a.output.clone(), "output")?;
    let ngrams: Option<PathBuf> = s.opt(a.ngrams.clone(), "ngrams")?;
    let map_path: Option<PathBuf> = s.opt(a.align.clone(), "align")?;
    let limit: Option<usize> = s.opt(a.max_vocab, "max-vocab")?;
    validate_paths(&[&model_path, &emb_path, &input], &optional_paths(&[&ngrams, &map_path]))?;

    let model = tagger::load_model(open(&model_path)?).map_err(|e| CliError::core(model_path.display(), e))?;
    let store = load_store(&emb_path, ngrams.as_deref(), limit)?;
    check_dim(&store, &model, &emb_path)?;
    let map = load_map(map_path.as_deref())?;
    let sentences = if input.as_os_str() == "-" {
        let mut text = String::new();
        io::stdin()
            .read_to_string(&mut text)
            .map_err(|e| CliError::input(format!("standard input: {e}")))?;
        read_sentences(text.as_bytes(), &input)?
    } else {
        read_sentences(open(&input)?, &input)?
    };

    let scheme = model.scheme();
    let mut tagged = Vec::with_capacity(sentences.len());
    for tokens in sentences {
        let t = tagger::tag(&model, &store, map.as_ref(), &tokens).map_err(|e| CliError::core("tag", e))?;
        let tags = canonicalize_iob(&t.tags, scheme);
        tagged.push(LabeledSequence::new(tokens, tags).map_err(|e| CliError::core("tag", e))?);
    }
    let mut bytes = Vec::new();
    corpus::write_conll(&tagged, scheme, &mut bytes).map_err(|e| CliError::core("tag", e))?;
    match output {
        Some(p) => {
            let mut out = Outputs::new();
            out.add(&p, &bytes)?;
            out.commit()
        }
        None => {
            let mut stdout = io::stdout().lock();
            stdout
                .write_all(&bytes)
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::failure(format!("standard output: {e}")))
        }
    }
}

fn parse_modes(text: &str) -> Result<Vec<MetricMode>, CliError> {
    match text {
        "both" => Ok(vec![MetricMode::Entity, MetricMode::Token]),
        other => other
            .parse::<MetricMode>()
            .map(|m| vec![m])
            .map_err(|_| CliError::input(format!("--mode must be entity, token or both, not {other:?}"))),
    }
}

/// Entity types of `gold` followed by any extra types seen in `pred`.
fn joint_scheme(gold: &Path, pred: &Path) -> Result<LabelScheme, CliError> {
    let mut types = infer(gold)?.entity_types().to_vec();
    for t in infer(pred)?.entity_types() {
        if !types.contains(t) {
            types.push(t.clone());
        }
    }
    LabelScheme::new(&types).map_err(|e| CliError::core(gold.display(), e))
}

pub fn eval(a: &EvalArgs, s: &Scoped) -> Result<(), CliError> {
    let gold_path: PathBuf = s.require(a.gold.clone(), "gold")?;
    let out_dir: PathBuf = s.require(a.output_dir.clone(), "output-dir")?;
    let pred_path: Option<PathBuf> = s.opt(a.pred.clone(), "pred")?;
    let model_path: Option<PathBuf> = s.opt(a.model.clone(), "model")?;
    let emb_path: Option<PathBuf> = s.opt(a.embeddings.clone(), "embeddings")?;
    let ngrams: Option<PathBuf> = s.opt(a.ngrams.clone(), "ngrams")?;
    let map_path: Option<PathBuf> = s.opt(a.align.clone(), "align")?;
    let scheme_list: Option<String> = s.opt(a.scheme.clone(), "scheme")?;
    let modes = parse_modes(&s.get(a.mode.clone(), "mode", "both".to_string())?)?;
    let limit: Option<usize> = s.opt(a.max_vocab, "max-vocab")?;
    match (&pred_path, &model_path, &emb_path) {
        (Some(_), Some(_), _) => return Err(CliError::input("give either --pred or --model, not both")),
        (None, None, _) => return Err(CliError::input("one of --pred or --model is required")),
        (None, Some(_), None) => return Err(CliError::input("--model needs --embeddings")),
        _ => {}
    }
    validate_paths(
        &[&gold_path],
        &optional_paths(&[&pred_path, &model_path, &emb_path, &ngrams, &map_path]),
    )?;

    let mut out = Outputs::new();
    let (scheme, gold, predictions) = if let Some(mp) = &model_path {
        let model = match &scheme_list {
            Some(list) => tagger::load_model_for(open(mp)?, &parse_scheme(list)?),
            None => tagger::load_model(open(mp)?),
        }
        .map_err(|e| CliError::core(mp.display(), e))?;
        let ep = emb_path.as_deref().unwrap_or(Path::new("-"));
        let store = load_store(ep, ngrams.as_deref(), limit)?;
        check_dim(&store, &model, ep)?;
        let map = load_map(map_path.as_deref())?;
        let scheme = model.scheme().clone();
        let gold = load_corpus(&gold_path, &scheme)?;
        let mut predictions = Vec::with_capacity(gold.len());
        let mut marginals = Vec::with_capacity(gold.len());
        for g in &gold {
            let t = tagger::tag(&model, &store, map.as_ref(), &g.tokens).map_err(|e| CliError::core("eval", e))?;
            predictions.push(t.tags);
            marginals.push(t.marginals);
        }
        let inputs = eval::class_roc_inputs(&marginals, &gold, &scheme).map_err(|e| CliError::core("eval", e))?;
        let mut curves = Vec::new();
        for (class, scores, flags) in inputs {
            match eval::roc_curve(&scores, &flags) {
                Ok(c) => curves.push((class, c)),
                Err(e) => log::warn!("no ROC curve for {class}: {e}"),
            }
        }
        if !curves.is_empty() {
            let svg = eval::emit_roc_plot(&curves).map_err(|e| CliError::core("eval", e))?;
            out.add(&out_dir.join("roc.svg"), svg.as_bytes())?;
        }
        (scheme, gold, predictions)
    } else {
        let pp = pred_path.as_deref().unwrap_or(Path::new("-"));
        let scheme = match &scheme_list {
            Some(list) => parse_scheme(list)?,
            None => joint_scheme(&gold_path, pp)?,
        };
        let gold = load_corpus(&gold_path, &scheme)?;
        let pred = load_corpus(pp, &scheme)?;
        if gold.len() != pred.len() {
            return Err(CliError::input(format!(
                "{}: {} sentences but the gold file has {}",
                pp.display(),
                pred.len(),
                gold.len()
            )));
        }
        for (i, (g, p)) in gold.iter().zip(&pred).enumerate() {
            if g.len() != p.len() {
                return Err(CliError::input(format!(
                    "{}: sentence {} has {} tokens but the gold sentence has {}",
                    pp.display(),
                    i + 1,
                    p.len(),
                    g.len()
                )));
            }
            if g.tokens != p.tokens {
                log::warn!("sentence {}: predicted tokens differ from gold", i + 1);
            }
        }
        let predictions = pred.into_iter().map(|p| p.tags).collect();
        (scheme, gold, predictions)
    };

    let mut summary: Option<EvalReport> = None;
    for mode in modes {
        let report = eval::score_entities(&gold, &predictions, &scheme, mode).map_err(|e| CliError::core("eval", e))?;
        for (format, ext) in [
            (ReportFormat::Table, "txt"),
            (ReportFormat::Csv, "csv"),
            (ReportFormat::Json, "json"),
        ] {
            let bytes = eval::emit_report(&report, format).map_err(|e| CliError::core("eval", e))?;
            out.add(&out_dir.join(format!("report-{}.{ext}", mode.name())), &bytes)?;
        }
        summary.get_or_insert(report);
    }
    out.commit()?;
    if let Some(report) = summary {
        let table = eval::emit_report(&report, ReportFormat::Table).map_err(|e| CliError::core("eval", e))?;
        io::stdout()
            .write_all(&table)
            .map_err(|e| CliError::failure(format!("standard output: {e}")))?;
    }
    Ok(())
}
