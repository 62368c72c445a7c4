use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use crate::linalg::{self, Matrix};
use crate::{Error, Result};

use super::ngrams::char_ngrams_with;

/// Character n-gram vectors used to compose vectors for out-of-vocabulary
/// words.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramTable {
    pub min_n: usize,
    pub max_n: usize,
    pub bracketed: bool,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl NgramTable {
    pub fn new(min_n: usize, max_n: usize, bracketed: bool) -> Self {
        NgramTable {
            min_n,
            max_n,
            bracketed,
            vectors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, gram: impl Into<String>, vector: Vec<f64>) {
        self.vectors.insert(gram.into(), vector);
    }

    pub fn get(&self, gram: &str) -> Option<&[f64]> {
        self.vectors.get(gram).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Entries in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Sum of the vectors of every n-gram of `word` present in the table.
    fn compose(&self, word: &str, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for gram in char_ngrams_with(word, self.min_n, self.max_n, self.bracketed) {
            if let Some(v) = self.vectors.get(&gram) {
                linalg::axpy(1.0, v, &mut out);
            }
        }
        out
    }
}

/// Vocabulary-indexed table of word vectors.
///
/// Immutable once built; every operation that changes vectors returns a new
/// store.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Matrix,
    ngrams: Option<NgramTable>,
}

impl EmbeddingStore {
    /// Fails on a duplicate token or when `vectors` is not `vocab.len() × dim`.
    pub fn new(dim: usize, vocab: Vec<String>, vectors: Matrix) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        if vectors.cols() != dim {
            return Err(Error::Dimension {
                expected: dim,
                found: vectors.cols(),
            });
        }
        if vectors.rows() != vocab.len() {
            return Err(Error::Dimension {
                expected: vocab.len(),
                found: vectors.rows(),
            });
        }
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, w) in vocab.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token {w:?}")));
            }
        }
        Ok(EmbeddingStore {
            dim,
            vocab,
            index,
            vectors,
            ngrams: None,
        })
    }

    pub fn with_ngrams(mut self, table: NgramTable) -> Result<Self> {
        if let Some((gram, v)) = table.iter().find(|(_, v)| v.len() != self.dim) {
            return Err(Error::InvalidArgument(format!(
                "n-gram {gram:?} has {} entries, store dimension is {}",
                v.len(),
                self.dim
            )));
        }
        self.ngrams = Some(table);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn ngrams(&self) -> Option<&NgramTable> {
        self.ngrams.as_ref()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// Stored row of an in-vocabulary word.
    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index_of(word).map(|i| self.vectors.row(i))
    }

    /// Vector for any word. Out-of-vocabulary words are composed from their
    /// character n-grams when an n-gram table is present and are the zero
    /// vector otherwise.
    pub fn lookup(&self, word: &str) -> Vec<f64> {
        if let Some(v) = self.get(word) {
            return v.to_vec();
        }
        match &self.ngrams {
            Some(table) => table.compose(word, self.dim),
            None => vec![0.0; self.dim],
        }
    }

    /// Every non-zero row divided by its L2 norm. The n-gram table is kept
    /// as is.
    pub fn normalize(&self) -> EmbeddingStore {
        let mut out = self.clone();
        for i in 0..out.vectors.rows() {
            linalg::normalize_in_place(out.vectors.row_mut(i));
        }
        out
    }

    /// Top `k` words by cosine similarity to `query`, best first. Ties keep
    /// vocabulary order. `k` larger than the vocabulary returns every word.
    pub fn nearest(&self, query: &[f64], k: usize) -> Vec<(String, f64)> {
        let mut scored: Vec<(usize, f64)> = self
            .vectors
            .iter_rows()
            .map(|row| linalg::cosine(row, query))
            .enumerate()
            .collect();
        // stable sort preserves vocabulary order among equal scores
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        scored
            .into_iter()
            .take(k)
            .map(|(i, s)| (self.vocab[i].clone(), s))
            .collect()
    }
}

struct Header {
    count: usize,
    dim: usize,
    extra: Vec<usize>,
}

fn parse_header(line: &str) -> Result<Header> {
    let fields: Vec<&str> = line.trim_end().split(' ').collect();
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(1, format!("malformed header {line:?}")))
    };
    if fields.len() < 2 {
        return Err(Error::format(1, format!("malformed header {line:?}")));
    }
    let count = parse(fields[0])?;
    let dim = parse(fields[1])?;
    if dim == 0 {
        return Err(Error::format(1, "dimension must be positive"));
    }
    let extra = fields[2..].iter().map(|s| parse(s)).collect::<Result<_>>()?;
    Ok(Header { count, dim, extra })
}

/// Reads `<token> <v1> ... <vdim>` rows after the header. Trailing
/// whitespace on a row is tolerated.
fn read_rows<R: BufRead>(
    source: R,
    want: usize,
    dim: usize,
    mut row: impl FnMut(usize, String, Vec<f64>) -> Result<()>,
) -> Result<()> {
    // the header is line 1
    let mut lines = source.lines().zip(2..);
    for _ in 0..want {
        let (line, line_no) = lines
            .next()
            .ok_or_else(|| Error::Truncated(format!("expected {want} rows")))?;
        let line = line?;
        let line = line.trim_end();
        let mut fields = line.split(' ');
        let token = fields.next().unwrap_or_default();
        if token.is_empty() {
            return Err(Error::format(line_no, "missing token"));
        }
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::format(line_no, format!("invalid real {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != dim {
            return Err(Error::format(
                line_no,
                format!("expected {dim} values, found {}", values.len()),
            ));
        }
        row(line_no, token.to_string(), values)?;
    }
    Ok(())
}

fn first_line<R: BufRead>(source: &mut R) -> Result<String> {
    let mut header = String::new();
    if source.read_line(&mut header)? == 0 {
        return Err(Error::format(1, "missing header"));
    }
    Ok(header)
}

/// Parses a word vector file: a `<count> <dim>` header followed by one
/// `<token> <dim reals>` row per word. At most `limit` rows are read.
pub fn load_embeddings<R: BufRead>(mut source: R, limit: Option<usize>) -> Result<EmbeddingStore> {
    let header = parse_header(&first_line(&mut source)?)?;
    let want = limit.map_or(header.count, |l| l.min(header.count));
    let mut vocab = Vec::with_capacity(want);
    let mut data = Vec::with_capacity(want * header.dim);
    let mut seen = HashMap::with_capacity(want);
    read_rows(source, want, header.dim, |line_no, token, values| {
        if let Some(first) = seen.insert(token.clone(), line_no) {
            return Err(Error::format(
                line_no,
                format!("duplicate token {token:?} (first seen at line {first})"),
            ));
        }
        vocab.push(token);
        data.extend(values);
        Ok(())
    })?;
    let vectors = Matrix::from_vec(vocab.len(), header.dim, data);
    EmbeddingStore::new(header.dim, vocab, vectors)
}

fn write_row<W: Write>(sink: &mut W, token: &str, values: &[f64]) -> Result<()> {
    sink.write_all(token.as_bytes())?;
    for v in values {
        // Display for f64 is the shortest representation that parses back
        // to the same bits
        write!(sink, " {v}")?;
    }
    sink.write_all(b"\n")?;
    Ok(())
}

/// Writes the store in the vector file format. Output is byte-identical for
/// identical stores.
pub fn write_embeddings<W: Write>(store: &EmbeddingStore, mut sink: W) -> Result<()> {
    writeln!(sink, "{} {}", store.len(), store.dim())?;
    for (token, row) in store.vocab.iter().zip(store.vectors.iter_rows()) {
        write_row(&mut sink, token, row)?;
    }
    sink.flush()?;
    Ok(())
}

/// Writes an n-gram sidecar file: header `<count> <dim> <min_n> <max_n>
/// <bracketed>` then rows keyed by n-gram string, in key order.
pub fn write_ngram_table<W: Write>(table: &NgramTable, dim: usize, mut sink: W) -> Result<()> {
    writeln!(
        sink,
        "{} {} {} {} {}",
        table.len(),
        dim,
        table.min_n,
        table.max_n,
        u8::from(table.bracketed)
    )?;
    for (gram, v) in table.iter() {
        write_row(&mut sink, gram, v)?;
    }
    sink.flush()?;
    Ok(())
}

/// Reads an n-gram sidecar file. A plain `<count> <dim>` header is accepted;
/// the n-gram range is then inferred from the key lengths, unbracketed.
pub fn load_ngram_table<R: BufRead>(mut source: R) -> Result<(NgramTable, usize)> {
    let header = parse_header(&first_line(&mut source)?)?;
    let mut entries = BTreeMap::new();
    read_rows(source, header.count, header.dim, |line_no, gram, values| {
        if entries.insert(gram.clone(), values).is_some() {
            return Err(Error::format(line_no, format!("duplicate n-gram {gram:?}")));
        }
        Ok(())
    })?;
    let (min_n, max_n, bracketed) = match header.extra.as_slice() {
        [lo, hi, b] => (*lo, *hi, *b != 0),
        [lo, hi] => (*lo, *hi, false),
        [] => {
            let lens = entries.keys().map(|k| k.chars().count());
            let lo = lens.clone().min().unwrap_or(0);
            let hi = lens.max().unwrap_or(0);
            (lo, hi, false)
        }
        _ => return Err(Error::format(1, "malformed n-gram header")),
    };
    let mut table = NgramTable::new(min_n, max_n, bracketed);
    table.vectors = entries;
    Ok((table, header.dim))
}
