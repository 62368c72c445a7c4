//! BiLSTM-CRF tagger: embedding lookup, optional alignment, training,
//! decoding and the binary model file.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;

use crate::align::AlignmentMap;
use crate::corpus::{LabelScheme, LabeledSequence};
use crate::crf::{self, CrfParams};
use crate::embed::EmbeddingStore;
use crate::linalg::{self, Matrix};
use crate::net::{BilstmParams, Encoder};
use crate::{seeded_rng, Error, Result};

pub const MODEL_HEADER: &str = "xling-tagger v1";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Upper bound on the L2 norm of each per-sentence gradient.
    pub grad_clip: f64,
    pub hidden_units: usize,
    pub layers: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Hard IOB transition mask in the CRF.
    pub constrained: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            learning_rate: 0.01,
            grad_clip: 5.0,
            hidden_units: 256,
            layers: 1,
            seed: 0,
            shuffle: true,
            constrained: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.grad_clip > 0.0
            && self.hidden_units > 0
            && self.layers > 0;
        if !ok {
            return Err(Error::InvalidArgument(format!("bad training config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerModel {
    pub encoder: Encoder,
    pub crf: CrfParams,
    scheme: LabelScheme,
}

/// Loss trace of one training run. Losses are mean negative
/// log-likelihoods per sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub initial_loss: f64,
    /// Running mean over each epoch, measured while parameters change.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tagging {
    pub tags: Vec<usize>,
    /// `N × K` posterior label probabilities.
    pub marginals: Matrix,
}

/// Per-token vectors: lookup, unit-normalize, then `W · v` when a map is given.
pub fn embed_sequence<S: AsRef<str>>(
    store: &EmbeddingStore,
    map: Option<&AlignmentMap>,
    tokens: &[S],
) -> Result<Vec<Vec<f64>>> {
    if let Some(m) = map {
        if m.dim() != store.dim() {
            return Err(Error::Dimension {
                expected: store.dim(),
                found: m.dim(),
            });
        }
    }
    tokens
        .iter()
        .map(|t| {
            let mut v = store.lookup(t.as_ref());
            linalg::normalize_in_place(&mut v);
            match map {
                Some(m) => m.apply(&v),
                None => Ok(v),
            }
        })
        .collect()
}

impl TaggerModel {
    /// Seeded initialization from `config.seed`.
    pub fn new(scheme: LabelScheme, embed_dim: usize, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if embed_dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        let mut rng = seeded_rng(config.seed);
        let encoder = Encoder::init(embed_dim, config.hidden_units, config.layers, &mut rng);
        let mut crf = CrfParams::init(scheme.tags().to_vec(), encoder.output_dim(), &mut rng)?;
        crf.set_constrained(config.constrained);
        Ok(TaggerModel { encoder, crf, scheme })
    }

    /// All-zero parameters.
    pub fn zeros(scheme: LabelScheme, embed_dim: usize, hidden: usize, layers: usize) -> Result<Self> {
        let layers = (0..layers.max(1))
            .map(|l| BilstmParams::zeros(if l == 0 { embed_dim } else { 2 * hidden }, hidden))
            .collect();
        let encoder = Encoder { layers };
        let crf = CrfParams::zeros(scheme.tags().to_vec(), 2 * hidden)?;
        Ok(TaggerModel { encoder, crf, scheme })
    }

    pub fn scheme(&self) -> &LabelScheme {
        &self.scheme
    }

    pub fn embed_dim(&self) -> usize {
        self.encoder.input()
    }

    pub fn hidden(&self) -> usize {
        self.encoder.hidden()
    }

    /// Parameter blocks with names and shapes, in file order.
    fn named_blocks(&self) -> Vec<(String, (usize, usize), &[f64])> {
        let mut out = Vec::new();
        for (l, layer) in self.encoder.layers.iter().enumerate() {
            for (dir, p) in [("forward", &layer.forward), ("backward", &layer.backward)] {
                out.push((format!("layer{l}.{dir}.weights"), p.weights.shape(), p.weights.as_slice()));
                out.push((format!("layer{l}.{dir}.bias"), (p.bias.len(), 1), p.bias.as_slice()));
            }
        }
        let c = &self.crf;
        out.push(("crf.emission".into(), c.emission.shape(), c.emission.as_slice()));
        out.push(("crf.transitions".into(), c.transitions.shape(), c.transitions.as_slice()));
        out.push(("crf.start".into(), (c.start.len(), 1), c.start.as_slice()));
        out.push(("crf.stop".into(), (c.stop.len(), 1), c.stop.as_slice()));
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.encoder.layers {
            out.extend(layer.blocks_mut());
        }
        out.extend(self.crf.blocks_mut());
        out
    }

    fn check_input(&self, xs: &[Vec<f64>]) -> Result<()> {
        if let Some(x) = xs.iter().find(|x| x.len() != self.embed_dim()) {
            return Err(Error::Dimension {
                expected: self.embed_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Negative log-likelihood of the gold tags.
    pub fn loss(&self, xs: &[Vec<f64>], gold: &[usize]) -> Result<f64> {
        self.check_input(xs)?;
        let feats = self.encoder.forward(xs)?;
        let lattice = self.crf.emissions(&feats)?;
        Ok(-crf::log_likelihood(&self.crf, &lattice, gold)?)
    }

    /// Loss and its gradient in [`TaggerModel::named_blocks`] order.
    fn loss_and_gradient(&self, xs: &[Vec<f64>], gold: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
        self.check_input(xs)?;
        let tape = self.encoder.forward_tape(xs)?;
        let feats = tape.outputs();
        let lattice = self.crf.emissions(feats)?;
        let ll = crf::log_likelihood(&self.crf, &lattice, gold)?;
        let (cg, du) = crf::crf_gradients(&self.crf, &lattice, gold)?;
        let mut d_emission = Matrix::zeros(self.crf.num_labels(), self.crf.feature_dim());
        let d_feats = self.crf.emissions_backward(feats, &du, &mut d_emission);
        let (eg, _) = self.encoder.backward_tape(&tape, &d_feats)?;

        let mut grads: Vec<Vec<f64>> = Vec::new();
        for layer in &eg {
            grads.extend(layer.blocks().iter().map(|b| b.to_vec()));
        }
        grads.push(d_emission.into_vec());
        grads.push(cg.transitions.into_vec());
        grads.push(cg.start);
        grads.push(cg.stop);
        // ascent direction on ll is descent on the loss
        for g in &mut grads {
            g.iter_mut().for_each(|v| *v = -*v);
        }
        Ok((-ll, grads))
    }

    fn sgd_step(&mut self, grads: &[Vec<f64>], lr: f64, clip: f64) {
        let norm = grads.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        let scale = if norm > clip { clip / norm } else { 1.0 };
        for (p, g) in self.blocks_mut().into_iter().zip(grads) {
            linalg::axpy(-lr * scale, g, p);
        }
    }

    /// Viterbi tags and posterior marginals for pre-embedded input.
    pub fn tag_vectors(&self, xs: &[Vec<f64>]) -> Result<Tagging> {
        if xs.is_empty() {
            return Err(Error::Empty("token sequence".into()));
        }
        self.check_input(xs)?;
        let feats = self.encoder.forward(xs)?;
        let lattice = self.crf.emissions(&feats)?;
        let (tags, _) = crf::viterbi(&self.crf, &lattice)?;
        let marginals = crf::marginals(&self.crf, &lattice)?;
        Ok(Tagging { tags, marginals })
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Per-sentence SGD on the negative log-likelihood with gradient-norm
/// clipping. Embeddings stay frozen. An existing model can be passed in to
/// resume training.
pub fn train(
    mut model: TaggerModel,
    corpus: &[LabeledSequence],
    store: &EmbeddingStore,
    map: Option<&AlignmentMap>,
    config: &TrainConfig,
) -> Result<(TaggerModel, TrainReport)> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus".into()));
    }
    if let Some(s) = corpus.iter().find(|s| s.is_empty()) {
        return Err(Error::Empty(format!("training sentence {:?}", s.tokens)));
    }
    let inputs = corpus
        .iter()
        .map(|s| embed_sequence(store, map, &s.tokens))
        .collect::<Result<Vec<_>>>()?;
    let full_pass = |m: &TaggerModel, epoch: usize| -> Result<f64> {
        let mut losses = Vec::with_capacity(corpus.len());
        for (i, (xs, s)) in inputs.iter().zip(corpus).enumerate() {
            let l = m.loss(xs, &s.tags)?;
            if !l.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    item: Some(i),
                    message: format!("loss {l}"),
                });
            }
            losses.push(l);
        }
        Ok(mean(&losses))
    };

    let initial_loss = full_pass(&model, 0)?;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = seeded_rng(config.seed ^ 0x0005_4A6F_1E5E);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for &i in &order {
            let (loss, grads) = model.loss_and_gradient(&inputs[i], &corpus[i].tags)?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    item: Some(i),
                    message: format!("loss {loss}"),
                });
            }
            total += loss;
            model.sgd_step(&grads, config.learning_rate, config.grad_clip);
        }
        let epoch_loss = total / corpus.len() as f64;
        log::info!("epoch {epoch}: mean loss {epoch_loss:.6}");
        epoch_losses.push(epoch_loss);
    }
    let final_loss = if config.epochs == 0 {
        initial_loss
    } else {
        full_pass(&model, config.epochs)?
    };
    Ok((
        model,
        TrainReport {
            initial_loss,
            epoch_losses,
            final_loss,
        },
    ))
}

/// Tags after embedding `tokens` with the store and optional map.
pub fn tag<S: AsRef<str>>(
    model: &TaggerModel,
    store: &EmbeddingStore,
    map: Option<&AlignmentMap>,
    tokens: &[S],
) -> Result<Tagging> {
    if tokens.is_empty() {
        return Err(Error::Empty("token sequence".into()));
    }
    if store.dim() != model.embed_dim() {
        return Err(Error::Dimension {
            expected: model.embed_dim(),
            found: store.dim(),
        });
    }
    model.tag_vectors(&embed_sequence(store, map, tokens)?)
}

/// Text manifest followed by little-endian f64 blocks:
///
/// ```text
/// xling-tagger v1
/// types PER,LOC,ORG
/// labels 7
/// embed_dim 50
/// hidden 256
/// layers 1
/// constrained 0
/// block layer0.forward.weights 1024 306
/// ...
/// data
/// <raw bytes>
/// ```
pub fn save_model<W: Write>(model: &TaggerModel, mut sink: W) -> Result<()> {
    writeln!(sink, "{MODEL_HEADER}")?;
    writeln!(sink, "types {}", model.scheme.entity_types().join(","))?;
    writeln!(sink, "labels {}", model.scheme.len())?;
    writeln!(sink, "embed_dim {}", model.embed_dim())?;
    writeln!(sink, "hidden {}", model.hidden())?;
    writeln!(sink, "layers {}", model.encoder.layers.len())?;
    writeln!(sink, "constrained {}", u8::from(model.crf.constrained()))?;
    let blocks = model.named_blocks();
    for (name, (r, c), _) in &blocks {
        writeln!(sink, "block {name} {r} {c}")?;
    }
    writeln!(sink, "data")?;
    let mut bytes = Vec::new();
    for (_, _, data) in &blocks {
        for v in *data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    sink.write_all(&bytes)?;
    Ok(())
}

fn read_field<R: BufRead>(source: &mut R, key: &str, line: &mut usize) -> Result<String> {
    let mut buf = String::new();
    if source.read_line(&mut buf)? == 0 {
        return Err(Error::Truncated(format!("model manifest ends before {key}")));
    }
    *line += 1;
    let text = buf.trim_end_matches(['\n', '\r']);
    match text.split_once(' ') {
        Some((k, v)) if k == key => Ok(v.to_string()),
        None if text == key => Ok(String::new()),
        _ => Err(Error::format(*line, format!("expected {key}, found {text:?}"))),
    }
}

fn parse_num(text: &str, line: usize) -> Result<usize> {
    text.trim()
        .parse()
        .map_err(|_| Error::format(line, format!("expected an integer, found {text:?}")))
}

pub fn load_model<R: BufRead>(mut source: R) -> Result<TaggerModel> {
    let mut header = String::new();
    source.read_line(&mut header)?;
    let header = header.trim_end_matches(['\n', '\r']);
    if header != MODEL_HEADER {
        return Err(Error::Version(format!("expected {MODEL_HEADER:?}, found {header:?}")));
    }
    let mut line = 1;
    let types = read_field(&mut source, "types", &mut line)?;
    let scheme = LabelScheme::parse(&types)?;
    let labels = parse_num(&read_field(&mut source, "labels", &mut line)?, line)?;
    if labels != scheme.len() {
        return Err(Error::Shape(format!(
            "manifest declares {labels} labels but its types give {}",
            scheme.len()
        )));
    }
    let embed_dim = parse_num(&read_field(&mut source, "embed_dim", &mut line)?, line)?;
    let hidden = parse_num(&read_field(&mut source, "hidden", &mut line)?, line)?;
    let layers = parse_num(&read_field(&mut source, "layers", &mut line)?, line)?;
    let constrained = parse_num(&read_field(&mut source, "constrained", &mut line)?, line)? != 0;
    if embed_dim == 0 || hidden == 0 || layers == 0 {
        return Err(Error::Shape("zero-sized model".into()));
    }
    let mut model = TaggerModel::zeros(scheme, embed_dim, hidden, layers)?;
    model.crf.set_constrained(constrained);

    let expected: Vec<(String, (usize, usize))> =
        model.named_blocks().into_iter().map(|(n, s, _)| (n, s)).collect();
    for (name, shape) in &expected {
        let decl = read_field(&mut source, "block", &mut line)?;
        let parts: Vec<&str> = decl.split(' ').collect();
        let found = match parts.as_slice() {
            [n, r, c] => (n.to_string(), (parse_num(r, line)?, parse_num(c, line)?)),
            _ => return Err(Error::format(line, format!("bad block declaration {decl:?}"))),
        };
        if &found.0 != name || found.1 != *shape {
            return Err(Error::Shape(format!(
                "block {} {:?} does not match expected {name} {shape:?}",
                found.0, found.1
            )));
        }
    }
    read_field(&mut source, "data", &mut line)?;

    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let needed: usize = expected.iter().map(|(_, (r, c))| r * c).sum::<usize>() * 8;
    if bytes.len() < needed {
        return Err(Error::Truncated(format!(
            "model data has {} bytes, expected {needed}",
            bytes.len()
        )));
    }
    if bytes.len() > needed {
        return Err(Error::Shape(format!(
            "model data has {} trailing bytes",
            bytes.len() - needed
        )));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    for block in model.blocks_mut() {
        for v in block.iter_mut() {
            *v = values.next().expect("length checked above");
        }
    }
    if model.named_blocks().iter().any(|(_, _, b)| b.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("model parameters".into()));
    }
    Ok(model)
}

/// [`load_model`], then checks that the file's label set matches `scheme`.
pub fn load_model_for<R: BufRead>(source: R, scheme: &LabelScheme) -> Result<TaggerModel> {
    let model = load_model(source)?;
    if model.scheme.len() != scheme.len() {
        return Err(Error::Shape(format!(
            "model has {} labels, scheme has {}",
            model.scheme.len(),
            scheme.len()
        )));
    }
    if model.scheme != *scheme {
        return Err(Error::Shape(format!(
            "model types {:?} differ from scheme types {:?}",
            model.scheme.entity_types(),
            scheme.entity_types()
        )));
    }
    Ok(model)
}
