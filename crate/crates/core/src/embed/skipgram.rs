//! Skip-gram with negative sampling and optional character n-gram
//! composition of the centre word.

use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;

use crate::linalg::{self, Matrix};
use crate::{seeded_rng, Error, Result, Rng};

use super::ngrams::char_ngrams_with;
use super::store::{EmbeddingStore, NgramTable};

#[derive(Debug, Clone, PartialEq)]
pub struct SkipgramConfig {
    pub dim: usize,
    /// Context words on each side of the centre word.
    pub window: usize,
    /// Noise words drawn per (centre, context) pair.
    pub negatives: usize,
    /// Unigram counts are raised to this power to form the noise
    /// distribution. 1.0 is the plain unigram distribution.
    pub noise_exponent: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// 0 in either bound disables subwords.
    pub ngram_min: usize,
    pub ngram_max: usize,
    /// Wrap words in `<`/`>` before extracting n-grams.
    pub bracket_ngrams: bool,
    pub seed: u64,
}

impl Default for SkipgramConfig {
    fn default() -> Self {
        SkipgramConfig {
            dim: 300,
            window: 5,
            negatives: 5,
            noise_exponent: 0.75,
            epochs: 5,
            learning_rate: 0.05,
            ngram_min: 3,
            ngram_max: 4,
            bracket_ngrams: false,
            seed: 0,
        }
    }
}

impl SkipgramConfig {
    pub fn subwords_enabled(&self) -> bool {
        self.ngram_min > 0 && self.ngram_max > 0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if self.window == 0 {
            return bad("window must be positive");
        }
        if !(0.0..=1.0).contains(&self.noise_exponent) {
            return bad("noise_exponent must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.subwords_enabled() && self.ngram_min > self.ngram_max {
            return bad("ngram_min must not exceed ngram_max");
        }
        Ok(())
    }
}

/// One (centre, context, negatives) training example, as vocabulary indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegSample {
    pub center: usize,
    pub context: usize,
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SkipgramModel {
    pub vocab: Vec<String>,
    pub counts: Vec<u64>,
    /// Word vectors of centre words, |vocab| × dim.
    pub input: Matrix,
    /// Word vectors of predicted context words, |vocab| × dim.
    pub output: Matrix,
    pub ngram_vocab: Vec<String>,
    /// One row per entry of `ngram_vocab`; zero rows when subwords are off.
    pub ngrams: Matrix,
    /// Indices into `ngram_vocab` for each vocabulary word.
    pub word_ngrams: Vec<Vec<usize>>,
    pub config: SkipgramConfig,
    /// Mean objective of the samples seen in each epoch.
    pub history: Vec<f64>,
    index: HashMap<String, usize>,
}

/// Dense gradient of the negative-sampling objective with respect to every
/// parameter of a model.
#[derive(Debug, Clone)]
pub struct SkipgramGradient {
    pub input: Matrix,
    pub output: Matrix,
    pub ngrams: Matrix,
}

/// Sparse gradient: the gradient with respect to the composed centre vector
/// plus per-row gradients of output vectors.
struct SparseGradient {
    center: Vec<f64>,
    output: Vec<(usize, Vec<f64>)>,
    objective: f64,
}

impl SkipgramModel {
    /// Builds the vocabulary and the seeded initial parameters.
    ///
    /// Vocabulary order is descending frequency, ties by first occurrence.
    /// Input and n-gram vectors are uniform in ±0.5/dim; output vectors are
    /// zero.
    pub fn initialize<S: AsRef<str>>(corpus: &[Vec<S>], config: &SkipgramConfig) -> Result<Self> {
        config.validate()?;
        let mut first_seen: HashMap<&str, (usize, u64)> = HashMap::new();
        let mut order = 0usize;
        for sentence in corpus {
            for tok in sentence {
                let e = first_seen.entry(tok.as_ref()).or_insert_with(|| {
                    order += 1;
                    (order, 0)
                });
                e.1 += 1;
            }
        }
        if first_seen.is_empty() {
            return Err(Error::Empty("skip-gram corpus has no tokens".into()));
        }
        let mut words: Vec<(&str, usize, u64)> =
            first_seen.into_iter().map(|(w, (o, c))| (w, o, c)).collect();
        words.sort_by(|a, b| b.2.cmp(&a.2).then(a.1.cmp(&b.1)));
        let vocab: Vec<String> = words.iter().map(|w| w.0.to_string()).collect();
        let counts: Vec<u64> = words.iter().map(|w| w.2).collect();
        let index: HashMap<String, usize> =
            vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();

        let mut ngram_vocab = Vec::new();
        let mut word_ngrams = Vec::with_capacity(vocab.len());
        if config.subwords_enabled() {
            let mut ngram_index: HashMap<String, usize> = HashMap::new();
            for w in &vocab {
                let grams =
                    char_ngrams_with(w, config.ngram_min, config.ngram_max, config.bracket_ngrams);
                let ids = grams
                    .into_iter()
                    .map(|g| {
                        *ngram_index.entry(g.clone()).or_insert_with(|| {
                            ngram_vocab.push(g);
                            ngram_vocab.len() - 1
                        })
                    })
                    .collect();
                word_ngrams.push(ids);
            }
        } else {
            word_ngrams.resize(vocab.len(), Vec::new());
        }

        let mut rng = seeded_rng(config.seed);
        let bound = 0.5 / config.dim as f64;
        let input = Matrix::random_uniform(vocab.len(), config.dim, bound, &mut rng);
        let ngrams = Matrix::random_uniform(ngram_vocab.len(), config.dim, bound, &mut rng);
        let output = Matrix::zeros(vocab.len(), config.dim);
        Ok(SkipgramModel {
            vocab,
            counts,
            input,
            output,
            ngram_vocab,
            ngrams,
            word_ngrams,
            config: config.clone(),
            history: Vec::new(),
            index,
        })
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    /// Centre representation of a word: its input vector plus the vectors of
    /// its n-grams.
    pub fn composed(&self, word: usize) -> Vec<f64> {
        let mut v = self.input.row(word).to_vec();
        for &g in &self.word_ngrams[word] {
            linalg::axpy(1.0, self.ngrams.row(g), &mut v);
        }
        v
    }

    /// Word vectors as a store: composed centre vectors for every vocabulary
    /// word, plus the n-gram table when subwords are enabled.
    pub fn to_store(&self) -> EmbeddingStore {
        let rows: Vec<Vec<f64>> = (0..self.vocab.len()).map(|w| self.composed(w)).collect();
        let vectors = Matrix::from_rows(&rows);
        let store = EmbeddingStore::new(self.dim(), self.vocab.clone(), vectors)
            .expect("vocabulary is unique by construction");
        if !self.config.subwords_enabled() {
            return store;
        }
        let mut table = NgramTable::new(
            self.config.ngram_min,
            self.config.ngram_max,
            self.config.bracket_ngrams,
        );
        for (g, row) in self.ngram_vocab.iter().zip(self.ngrams.iter_rows()) {
            table.insert(g.clone(), row.to_vec());
        }
        store
            .with_ngrams(table)
            .expect("n-gram rows share the model dimension")
    }

    fn sparse_gradient(&self, sample: &NegSample) -> SparseGradient {
        let v = self.composed(sample.center);
        let mut center = vec![0.0; self.dim()];
        let mut output = Vec::with_capacity(sample.negatives.len() + 1);

        let u = self.output.row(sample.context);
        let score = linalg::dot(u, &v);
        let mut objective = linalg::log_sigmoid(score);
        // d/dx log σ(x) = 1 - σ(x)
        let g = 1.0 - linalg::sigmoid(score);
        linalg::axpy(g, u, &mut center);
        output.push((sample.context, v.iter().map(|x| g * x).collect()));

        for &n in &sample.negatives {
            let u = self.output.row(n);
            let score = linalg::dot(u, &v);
            objective += linalg::log_sigmoid(-score);
            // d/dx log σ(-x) = -σ(x)
            let g = -linalg::sigmoid(score);
            linalg::axpy(g, u, &mut center);
            output.push((n, v.iter().map(|x| g * x).collect()));
        }
        SparseGradient {
            center,
            output,
            objective,
        }
    }

    /// Exact gradient of [`skipgram_neg_objective`] for one sample.
    pub fn gradient(&self, sample: &NegSample) -> SkipgramGradient {
        let sparse = self.sparse_gradient(sample);
        let mut input = Matrix::zeros(self.input.rows(), self.dim());
        let mut output = Matrix::zeros(self.output.rows(), self.dim());
        let mut ngrams = Matrix::zeros(self.ngrams.rows(), self.dim());
        linalg::axpy(1.0, &sparse.center, input.row_mut(sample.center));
        for &g in &self.word_ngrams[sample.center] {
            linalg::axpy(1.0, &sparse.center, ngrams.row_mut(g));
        }
        for (row, grad) in &sparse.output {
            linalg::axpy(1.0, grad, output.row_mut(*row));
        }
        SkipgramGradient {
            input,
            output,
            ngrams,
        }
    }

    /// One gradient-ascent step on a single sample. Returns the objective
    /// before the step.
    pub fn step(&mut self, sample: &NegSample, learning_rate: f64) -> f64 {
        let sparse = self.sparse_gradient(sample);
        for (row, grad) in &sparse.output {
            linalg::axpy(learning_rate, grad, self.output.row_mut(*row));
        }
        linalg::axpy(learning_rate, &sparse.center, self.input.row_mut(sample.center));
        for &g in &self.word_ngrams[sample.center] {
            linalg::axpy(learning_rate, &sparse.center, self.ngrams.row_mut(g));
        }
        sparse.objective
    }

    pub fn objective(&self, sample: &NegSample) -> f64 {
        skipgram_neg_objective(self, sample.center, sample.context, &sample.negatives)
    }

    pub fn mean_objective(&self, samples: &[NegSample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        samples.iter().map(|s| self.objective(s)).sum::<f64>() / samples.len() as f64
    }

    fn noise(&self) -> WeightedIndex<f64> {
        let weights: Vec<f64> = self
            .counts
            .iter()
            .map(|&c| (c as f64).powf(self.config.noise_exponent))
            .collect();
        WeightedIndex::new(weights).expect("counts are positive")
    }

    fn draw_negatives(
        &self,
        noise: &WeightedIndex<f64>,
        context: usize,
        rng: &mut Rng,
    ) -> Vec<usize> {
        (0..self.config.negatives)
            .map(|_| {
                let mut n = noise.sample(rng);
                // a few redraws when the noise word is the true context word;
                // with a one-word vocabulary this cannot be avoided
                for _ in 0..8 {
                    if n != context {
                        break;
                    }
                    n = noise.sample(rng);
                }
                n
            })
            .collect()
    }

    /// Every (centre, context) pair in `corpus` within the window, in corpus
    /// order. Out-of-vocabulary tokens are skipped.
    fn pairs<'a, S: AsRef<str>>(
        &'a self,
        corpus: &'a [Vec<S>],
    ) -> impl Iterator<Item = (usize, usize)> + 'a {
        let window = self.config.window;
        corpus.iter().flat_map(move |sentence| {
            let ids: Vec<usize> = sentence
                .iter()
                .filter_map(|t| self.index_of(t.as_ref()))
                .collect();
            let n = ids.len();
            (0..n).flat_map(move |t| {
                let lo = t.saturating_sub(window);
                let hi = (t + window).min(n.saturating_sub(1));
                let ids = ids.clone();
                (lo..=hi)
                    .filter(move |&j| j != t)
                    .map(move |j| (ids[t], ids[j]))
            })
        })
    }

    /// A fixed, seeded sample of training examples drawn from `corpus`, for
    /// tracking the objective across training.
    pub fn probe_set<S: AsRef<str>>(
        &self,
        corpus: &[Vec<S>],
        count: usize,
        seed: u64,
    ) -> Vec<NegSample> {
        let all: Vec<(usize, usize)> = self.pairs(corpus).collect();
        if all.is_empty() {
            return Vec::new();
        }
        let noise = self.noise();
        let mut rng = seeded_rng(seed);
        (0..count)
            .map(|_| {
                let (center, context) = all[rng.random_range(0..all.len())];
                NegSample {
                    center,
                    context,
                    negatives: self.draw_negatives(&noise, context, &mut rng),
                }
            })
            .collect()
    }

    /// Runs `epochs` passes of per-pair stochastic gradient ascent.
    pub fn train<S: AsRef<str>>(&mut self, corpus: &[Vec<S>], epochs: usize) -> Result<()> {
        let noise = self.noise();
        // separate stream from initialization so epochs=0 leaves the
        // initial parameters untouched
        let mut rng = seeded_rng(self.config.seed ^ 0x005E_ED0F_5A3B_u64);
        let lr = self.config.learning_rate;
        let pairs: Vec<(usize, usize)> = self.pairs(corpus).collect();
        for epoch in 0..epochs {
            let mut total = 0.0;
            for &(center, context) in &pairs {
                let negatives = self.draw_negatives(&noise, context, &mut rng);
                let sample = NegSample {
                    center,
                    context,
                    negatives,
                };
                total += self.step(&sample, lr);
            }
            let mean = if pairs.is_empty() {
                0.0
            } else {
                total / pairs.len() as f64
            };
            if !mean.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    item: None,
                    message: "skip-gram objective is not finite".into(),
                });
            }
            self.history.push(mean);
        }
        Ok(())
    }
}

/// Negative-sampling objective of a single example:
/// `log σ(u_ctx · v) + Σ log σ(-u_neg · v)`, where `v` is the composed centre
/// vector. Always ≤ 0.
pub fn skipgram_neg_objective(
    model: &SkipgramModel,
    center: usize,
    context: usize,
    negatives: &[usize],
) -> f64 {
    let v = model.composed(center);
    let pos = linalg::log_sigmoid(linalg::dot(model.output.row(context), &v));
    let neg: f64 = negatives
        .iter()
        .map(|&n| linalg::log_sigmoid(-linalg::dot(model.output.row(n), &v)))
        .sum();
    pos + neg
}

/// Trains skip-gram embeddings on a tokenized corpus. Deterministic in
/// `config.seed`.
pub fn train_skipgram<S: AsRef<str>>(
    corpus: &[Vec<S>],
    config: &SkipgramConfig,
) -> Result<(EmbeddingStore, SkipgramModel)> {
    let mut model = SkipgramModel::initialize(corpus, config)?;
    model.train(corpus, config.epochs)?;
    Ok((model.to_store(), model))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(dim: usize, subwords: bool) -> SkipgramConfig {
        SkipgramConfig {
            dim,
            window: 2,
            negatives: 2,
            epochs: 1,
            learning_rate: 0.05,
            ngram_min: if subwords { 2 } else { 0 },
            ngram_max: if subwords { 3 } else { 0 },
            seed: 11,
            ..SkipgramConfig::default()
        }
    }

    fn tiny_corpus() -> Vec<Vec<&'static str>> {
        vec![
            vec!["alpha", "beta", "gamma", "delta"],
            vec!["beta", "gamma", "eps"],
            vec!["alpha", "eps", "delta"],
        ]
    }

    /// Direct transcription of the objective with scalar loops.
    fn oracle_objective(m: &SkipgramModel, s: &NegSample) -> f64 {
        let d = m.dim();
        let mut v = vec![0.0; d];
        for k in 0..d {
            v[k] = m.input[(s.center, k)];
            for &g in &m.word_ngrams[s.center] {
                v[k] += m.ngrams[(g, k)];
            }
        }
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut dotp = 0.0;
        for k in 0..d {
            dotp += m.output[(s.context, k)] * v[k];
        }
        let mut total = sig(dotp).ln();
        for &n in &s.negatives {
            let mut dn = 0.0;
            for k in 0..d {
                dn += m.output[(n, k)] * v[k];
            }
            total += sig(-dn).ln();
        }
        total
    }

    fn randomize(m: &mut SkipgramModel, seed: u64) {
        let mut rng = seeded_rng(seed);
        m.input = Matrix::random_uniform(m.input.rows(), m.dim(), 0.6, &mut rng);
        m.output = Matrix::random_uniform(m.output.rows(), m.dim(), 0.6, &mut rng);
        m.ngrams = Matrix::random_uniform(m.ngrams.rows(), m.dim(), 0.3, &mut rng);
    }

    #[test]
    fn zero_model_objective() {
        let mut m = SkipgramModel::initialize(&tiny_corpus(), &cfg(4, false)).unwrap();
        m.input = Matrix::zeros(m.input.rows(), 4);
        let v = skipgram_neg_objective(&m, 0, 1, &[2]);
        assert!((v - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((v + 1.3863).abs() < 1e-4);
        let only_pos = skipgram_neg_objective(&m, 0, 1, &[]);
        assert!((only_pos - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_scalar_oracle() {
        for subwords in [false, true] {
            let mut m = SkipgramModel::initialize(&tiny_corpus(), &cfg(4, subwords)).unwrap();
            randomize(&mut m, 3);
            let s = NegSample {
                center: 1,
                context: 3,
                negatives: vec![0, 4, 4],
            };
            let got = m.objective(&s);
            assert!((got - oracle_objective(&m, &s)).abs() < 1e-12);
            assert!(got <= 0.0);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        for subwords in [false, true] {
            let mut m = SkipgramModel::initialize(&tiny_corpus(), &cfg(4, subwords)).unwrap();
            assert_eq!(m.vocab.len(), 5);
            randomize(&mut m, 17);
            let s = NegSample {
                center: 2,
                context: 0,
                negatives: vec![3, 1, 3],
            };
            let grad = m.gradient(&s);
            let h = 1e-4;
            fn param(mm: &mut SkipgramModel, which: usize) -> &mut [f64] {
                match which {
                    0 => mm.input.as_mut_slice(),
                    1 => mm.output.as_mut_slice(),
                    _ => mm.ngrams.as_mut_slice(),
                }
            }
            let check = |which: usize, analytic: &Matrix| {
                for idx in 0..analytic.as_slice().len() {
                    let mut plus = m.clone();
                    let mut minus = m.clone();
                    param(&mut plus, which)[idx] += h;
                    param(&mut minus, which)[idx] -= h;
                    let numeric = (plus.objective(&s) - minus.objective(&s)) / (2.0 * h);
                    let a = analytic.as_slice()[idx];
                    let denom = a.abs().max(numeric.abs()).max(1e-8);
                    assert!(
                        (a - numeric).abs() / denom < 1e-4 || (a - numeric).abs() < 1e-10,
                        "param block {which} index {idx}: analytic {a} numeric {numeric}"
                    );
                }
            };
            check(0, &grad.input);
            check(1, &grad.output);
            check(2, &grad.ngrams);
        }
    }

    #[test]
    fn small_step_increases_objective() {
        let mut m = SkipgramModel::initialize(&tiny_corpus(), &cfg(4, true)).unwrap();
        randomize(&mut m, 5);
        let s = NegSample {
            center: 0,
            context: 2,
            negatives: vec![4],
        };
        let before = m.objective(&s);
        let reported = m.step(&s, 1e-3);
        assert_eq!(before, reported);
        assert!(m.objective(&s) > before);
    }

    #[test]
    fn zero_epochs_is_initialization() {
        let mut c = cfg(6, true);
        c.epochs = 0;
        let (store, model) = train_skipgram(&tiny_corpus(), &c).unwrap();
        let init = SkipgramModel::initialize(&tiny_corpus(), &c).unwrap();
        assert_eq!(store, init.to_store());
        assert!(model.history.is_empty());
    }

    #[test]
    fn empty_corpus_rejected() {
        let corpus: Vec<Vec<&str>> = vec![vec![]];
        assert!(matches!(
            train_skipgram(&corpus, &cfg(4, false)),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn vocabulary_order_is_frequency_then_first_seen() {
        let m = SkipgramModel::initialize(&tiny_corpus(), &cfg(4, false)).unwrap();
        assert_eq!(m.vocab, vec!["alpha", "beta", "gamma", "delta", "eps"]);
        assert_eq!(m.counts, vec![2, 2, 2, 2, 2]);
    }

    #[test]
    fn same_seed_same_store() {
        let mut c = cfg(8, true);
        c.epochs = 3;
        let (a, _) = train_skipgram(&tiny_corpus(), &c).unwrap();
        let (b, _) = train_skipgram(&tiny_corpus(), &c).unwrap();
        let bits = |s: &EmbeddingStore| -> Vec<u64> {
            s.vectors().as_slice().iter().map(|x| x.to_bits()).collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a, b);
    }

    #[test]
    fn cooccurring_words_end_up_closer() {
        // "a" and "b" always appear together; "z" only with "y" and "x"
        let mut corpus = Vec::new();
        for i in 0..200 {
            if i % 2 == 0 {
                corpus.push(vec!["a", "b", "c"]);
            } else {
                corpus.push(vec!["z", "y", "x"]);
            }
        }
        let c = SkipgramConfig {
            dim: 10,
            window: 2,
            negatives: 3,
            epochs: 5,
            learning_rate: 0.05,
            ngram_min: 0,
            ngram_max: 0,
            seed: 2,
            ..SkipgramConfig::default()
        };
        let (store, model) = train_skipgram(&corpus, &c).unwrap();
        let a = store.get("a").unwrap();
        let b = store.get("b").unwrap();
        let z = store.get("z").unwrap();
        assert!(linalg::cosine(a, b) > linalg::cosine(a, z));
        let probes = model.probe_set(&corpus, 50, 9);
        let init = SkipgramModel::initialize(&corpus, &c).unwrap();
        assert!(model.mean_objective(&probes) > init.mean_objective(&probes));
    }
}
