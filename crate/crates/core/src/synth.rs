//! Deterministic synthetic data: random rotations, clustered embedding
//! spaces and IOB-tagged corpora.

use rand::Rng as _;

use crate::corpus::{LabelScheme, LabeledSequence};
use crate::embed::EmbeddingStore;
use crate::linalg::{self, Matrix};
use crate::{seeded_rng, Error, Result, Rng};

/// Haar-distributed random orthogonal matrix (Gram-Schmidt on Gaussian
/// columns with the sign of each diagonal of R made positive).
pub fn random_orthogonal(d: usize, rng: &mut Rng) -> Matrix {
    let g = Matrix::random_normal(d, d, rng);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    for j in 0..d {
        let mut c = g.column(j);
        for _ in 0..2 {
            for b in &cols {
                let p = linalg::dot(&c, b);
                linalg::axpy(-p, b, &mut c);
            }
        }
        linalg::normalize_in_place(&mut c);
        cols.push(c);
    }
    let mut q = Matrix::zeros(d, d);
    for (j, c) in cols.iter().enumerate() {
        for i in 0..d {
            q[(i, j)] = c[i];
        }
    }
    q
}

/// Settings for [`ner_corpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct NerSynthConfig {
    pub sentences: usize,
    pub vocab_size: usize,
    pub types: Vec<String>,
    pub entity_words_per_type: usize,
    pub triggers_per_type: usize,
    pub dim: usize,
    /// Spread of word vectors around their class centroid.
    pub noise: f64,
    pub seed: u64,
}

impl Default for NerSynthConfig {
    fn default() -> Self {
        NerSynthConfig {
            sentences: 200,
            vocab_size: 300,
            types: vec!["PER".into(), "LOC".into(), "ORG".into()],
            entity_words_per_type: 40,
            triggers_per_type: 4,
            dim: 32,
            noise: 0.6,
            seed: 0,
        }
    }
}

/// A tagged corpus with a matching embedding store.
#[derive(Debug, Clone)]
pub struct SyntheticNer {
    pub scheme: LabelScheme,
    pub sentences: Vec<LabeledSequence>,
    pub store: EmbeddingStore,
}

fn unit_gaussian(d: usize, rng: &mut Rng) -> Vec<f64> {
    let mut v = Matrix::random_normal(1, d, rng).into_vec();
    linalg::normalize_in_place(&mut v);
    v
}

fn around(centroid: &[f64], noise: f64, rng: &mut Rng) -> Vec<f64> {
    let d = centroid.len();
    let mut v = centroid.to_vec();
    let e = unit_gaussian(d, rng);
    linalg::axpy(noise, &e, &mut v);
    linalg::normalize_in_place(&mut v);
    v
}

/// Template sentences: filler words, entity mentions of one to three words,
/// and type-specific trigger words that often precede a mention. Entity
/// words and filler words are unit vectors scattered around one centroid
/// per class, so the tagger can generalize across words of a class.
pub fn ner_corpus(config: &NerSynthConfig) -> Result<SyntheticNer> {
    let types = config.types.len();
    let entity_words = types * config.entity_words_per_type;
    let triggers = types * config.triggers_per_type;
    if config.dim == 0 || entity_words + triggers >= config.vocab_size || config.entity_words_per_type == 0 {
        return Err(Error::InvalidArgument(format!("vocabulary too small for {config:?}")));
    }
    let scheme = LabelScheme::new(&config.types)?;
    let mut rng = seeded_rng(config.seed);

    let mut vocab = Vec::with_capacity(config.vocab_size);
    let mut rows = Vec::with_capacity(config.vocab_size);
    let centroids: Vec<Vec<f64>> = (0..=types).map(|_| unit_gaussian(config.dim, &mut rng)).collect();
    let mut class_words: Vec<Vec<usize>> = vec![Vec::new(); types];
    let mut trigger_words: Vec<Vec<usize>> = vec![Vec::new(); types];
    for t in 0..types {
        for _ in 0..config.entity_words_per_type {
            class_words[t].push(vocab.len());
            vocab.push(format!("w{}", vocab.len()));
            rows.push(around(&centroids[t], config.noise, &mut rng));
        }
    }
    // triggers and fillers share the non-entity centroid
    let other = &centroids[types];
    for triggers in trigger_words.iter_mut() {
        for _ in 0..config.triggers_per_type {
            triggers.push(vocab.len());
            vocab.push(format!("w{}", vocab.len()));
            rows.push(around(other, 1.5 * config.noise, &mut rng));
        }
    }
    let fillers: Vec<usize> = (vocab.len()..config.vocab_size).collect();
    while vocab.len() < config.vocab_size {
        vocab.push(format!("w{}", vocab.len()));
        rows.push(around(other, 1.5 * config.noise, &mut rng));
    }
    let store = EmbeddingStore::new(config.dim, vocab.clone(), Matrix::from_rows(&rows))?;

    let mut sentences = Vec::with_capacity(config.sentences);
    for _ in 0..config.sentences {
        let mut tokens = Vec::new();
        let mut tags = Vec::new();
        let push = |w: usize, tag: usize, tokens: &mut Vec<String>, tags: &mut Vec<usize>| {
            tokens.push(vocab[w].clone());
            tags.push(tag);
        };
        for _ in 0..rng.random_range(0..3) {
            push(fillers[rng.random_range(0..fillers.len())], 0, &mut tokens, &mut tags);
        }
        for _ in 0..rng.random_range(1..=3) {
            let t = rng.random_range(0..types);
            if rng.random_bool(0.6) {
                let w = trigger_words[t][rng.random_range(0..trigger_words[t].len())];
                push(w, 0, &mut tokens, &mut tags);
            }
            let len = [1, 1, 2, 2, 3][rng.random_range(0..5)];
            for k in 0..len {
                let w = class_words[t][rng.random_range(0..class_words[t].len())];
                let tag = if k == 0 { scheme.begin(t) } else { scheme.inside(t) };
                push(w, tag, &mut tokens, &mut tags);
            }
            for _ in 0..rng.random_range(1..4) {
                push(fillers[rng.random_range(0..fillers.len())], 0, &mut tokens, &mut tags);
            }
        }
        sentences.push(LabeledSequence::new(tokens, tags)?);
    }
    Ok(SyntheticNer {
        scheme,
        sentences,
        store,
    })
}

/// A "target language" copy of `source`: every token renamed with `prefix`
/// and every vector rotated by `rotation`. Also returns the full
/// `(target, source)` dictionary in vocabulary order.
pub fn translate(source: &SyntheticNer, rotation: &Matrix, prefix: &str) -> Result<(SyntheticNer, Vec<(String, String)>)> {
    let d = source.store.dim();
    if rotation.shape() != (d, d) {
        return Err(Error::Dimension {
            expected: d,
            found: rotation.rows(),
        });
    }
    let rename = |w: &str| format!("{prefix}{w}");
    let vocab: Vec<String> = source.store.vocab().iter().map(|w| rename(w)).collect();
    let rows: Vec<Vec<f64>> = source.store.vectors().iter_rows().map(|v| rotation.matvec(v)).collect();
    let store = EmbeddingStore::new(d, vocab.clone(), Matrix::from_rows(&rows))?;
    let sentences = source
        .sentences
        .iter()
        .map(|s| LabeledSequence::new(s.tokens.iter().map(|t| rename(t)).collect(), s.tags.clone()))
        .collect::<Result<Vec<_>>>()?;
    let dictionary = vocab.into_iter().zip(source.store.vocab().iter().cloned()).collect();
    Ok((
        SyntheticNer {
            scheme: source.scheme.clone(),
            sentences,
            store,
        },
        dictionary,
    ))
}

/// Topic-structured sentences for skip-gram checks. Each sentence draws
/// most of its words from one topic plus a couple of shared function words;
/// words of a topic co-occur, words of different topics rarely do. Returns
/// the corpus and the topic of every content word.
pub fn topic_corpus(
    sentences: usize,
    topics: usize,
    words_per_topic: usize,
    seed: u64,
) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let mut rng = seeded_rng(seed);
    let topic_words: Vec<Vec<String>> = (0..topics)
        .map(|t| (0..words_per_topic).map(|k| format!("t{t}w{k}")).collect())
        .collect();
    let function_words: Vec<String> = (0..8).map(|k| format!("f{k}")).collect();
    let corpus = (0..sentences)
        .map(|_| {
            let t = rng.random_range(0..topics);
            let len = rng.random_range(6..10);
            (0..len)
                .map(|_| {
                    if rng.random_bool(0.2) {
                        function_words[rng.random_range(0..function_words.len())].clone()
                    } else {
                        topic_words[t][rng.random_range(0..words_per_topic)].clone()
                    }
                })
                .collect()
        })
        .collect();
    (corpus, topic_words)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate_iob;

    #[test]
    fn rotation_is_orthogonal() {
        let mut rng = seeded_rng(3);
        for d in [1, 4, 16] {
            let q = random_orthogonal(d, &mut rng);
            assert!(q.transpose().matmul(&q).max_abs_diff(&Matrix::identity(d)) < 1e-12);
        }
    }

    #[test]
    fn ner_corpus_shape() {
        let s = ner_corpus(&NerSynthConfig::default()).unwrap();
        assert_eq!(s.sentences.len(), 200);
        assert_eq!(s.store.len(), 300);
        assert_eq!(s.scheme.len(), 7);
        for seq in &s.sentences {
            assert!(validate_iob(&seq.tags, &s.scheme).is_empty());
            assert!(seq.tokens.iter().all(|t| s.store.contains(t)));
        }
        let again = ner_corpus(&NerSynthConfig::default()).unwrap();
        assert_eq!(again.sentences, s.sentences);
        assert_eq!(again.store, s.store);
    }

    #[test]
    fn translation_rotates_and_renames() {
        let s = ner_corpus(&NerSynthConfig::default()).unwrap();
        let r = random_orthogonal(32, &mut seeded_rng(1));
        let (t, dict) = translate(&s, &r, "x_").unwrap();
        assert_eq!(dict.len(), 300);
        let (tw, sw) = &dict[7];
        assert_eq!(tw, &format!("x_{sw}"));
        let back = r.matvec_transposed(t.store.get(tw).unwrap());
        let orig = s.store.get(sw).unwrap();
        assert!(back.iter().zip(orig).all(|(a, b)| (a - b).abs() < 1e-12));
        assert_eq!(t.sentences[0].tags, s.sentences[0].tags);
    }

    #[test]
    fn topic_corpus_is_seeded() {
        let (a, topics) = topic_corpus(20, 3, 4, 1);
        assert_eq!(a, topic_corpus(20, 3, 4, 1).0);
        assert_eq!(topics.len(), 3);
        assert!(a.iter().all(|s| s.len() >= 6));
    }
}
