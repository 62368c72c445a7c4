//! IOB-tagged corpora in a two-column CoNLL-style format.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;

use crate::{Error, Result};

/// Tag inventory `O, B-T₁, I-T₁, B-T₂, I-T₂, …`: `O` is 0, `B-Tₜ` is
/// `1 + 2t` and `I-Tₜ` is `2 + 2t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelScheme {
    types: Vec<String>,
    tags: Vec<String>,
}

impl LabelScheme {
    pub fn new<S: AsRef<str>>(types: &[S]) -> Result<Self> {
        let mut out: Vec<String> = Vec::with_capacity(types.len());
        for t in types {
            let t = t.as_ref();
            if t.is_empty() || t.chars().any(char::is_whitespace) || t.contains(',') {
                return Err(Error::InvalidArgument(format!("bad entity type {t:?}")));
            }
            if out.iter().any(|o| o == t) {
                return Err(Error::InvalidArgument(format!("duplicate entity type {t}")));
            }
            out.push(t.to_string());
        }
        let mut tags = vec!["O".to_string()];
        for t in &out {
            tags.push(format!("B-{t}"));
            tags.push(format!("I-{t}"));
        }
        Ok(LabelScheme { types: out, tags })
    }

    /// Parses a comma-separated type list such as `PER,LOC,ORG,MISC`.
    pub fn parse(list: &str) -> Result<Self> {
        let types: Vec<&str> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        Self::new(&types)
    }

    pub fn entity_types(&self) -> &[String] {
        &self.types
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    /// Tag count `K = 1 + 2·types`.
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index_of(&self, tag: &str) -> Option<usize> {
        if tag == "O" {
            return Some(0);
        }
        let (prefix, t) = tag.split_at_checked(2)?;
        let pos = self.types.iter().position(|x| x == t)?;
        match prefix {
            "B-" => Some(1 + 2 * pos),
            "I-" => Some(2 + 2 * pos),
            _ => None,
        }
    }

    pub fn tag(&self, index: usize) -> &str {
        &self.tags[index]
    }

    pub fn begin(&self, etype: usize) -> usize {
        1 + 2 * etype
    }

    pub fn inside(&self, etype: usize) -> usize {
        2 + 2 * etype
    }

    /// Entity type index of a B- or I- tag.
    pub fn type_of(&self, tag: usize) -> Option<usize> {
        (tag > 0).then(|| (tag - 1) / 2)
    }

    pub fn is_inside(&self, tag: usize) -> bool {
        tag > 0 && tag.is_multiple_of(2)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSequence {
    pub tokens: Vec<String>,
    pub tags: Vec<usize>,
}

impl LabeledSequence {
    pub fn new(tokens: Vec<String>, tags: Vec<usize>) -> Result<Self> {
        if tokens.len() != tags.len() {
            return Err(Error::Dimension {
                expected: tokens.len(),
                found: tags.len(),
            });
        }
        Ok(LabeledSequence { tokens, tags })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Half-open token range `[start, end)` of one entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub etype: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// `I-T` at the start or after `O`.
    OrphanInside,
    /// `I-T` after a tag of another type.
    TypeSwitch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub position: usize,
    pub kind: ViolationKind,
}

pub fn validate_iob(tags: &[usize], scheme: &LabelScheme) -> Vec<Violation> {
    let mut out = Vec::new();
    for (t, &tag) in tags.iter().enumerate() {
        if !scheme.is_inside(tag) {
            continue;
        }
        let prev = if t == 0 { None } else { scheme.type_of(tags[t - 1]) };
        match prev {
            None => out.push(Violation {
                position: t,
                kind: ViolationKind::OrphanInside,
            }),
            Some(p) if Some(p) != scheme.type_of(tag) => out.push(Violation {
                position: t,
                kind: ViolationKind::TypeSwitch,
            }),
            _ => {}
        }
    }
    out
}

/// Rewrites each invalid `I-T` to `B-T`.
pub fn canonicalize_iob(tags: &[usize], scheme: &LabelScheme) -> Vec<usize> {
    let mut out = tags.to_vec();
    for v in validate_iob(tags, scheme) {
        out[v.position] -= 1;
    }
    out
}

pub fn entity_spans(tags: &[usize], scheme: &LabelScheme) -> Result<Vec<EntitySpan>> {
    if let Some(v) = validate_iob(tags, scheme).first() {
        return Err(Error::InvalidIob {
            position: v.position,
            message: format!("{:?} at tag {}", v.kind, scheme.tag(tags[v.position])),
        });
    }
    let mut spans = Vec::new();
    let mut t = 0;
    while t < tags.len() {
        match scheme.type_of(tags[t]) {
            None => t += 1,
            Some(etype) => {
                let start = t;
                t += 1;
                while t < tags.len() && tags[t] == scheme.inside(etype) {
                    t += 1;
                }
                spans.push(EntitySpan { start, end: t, etype });
            }
        }
    }
    Ok(spans)
}

/// Inverse of [`entity_spans`] for non-overlapping spans.
pub fn spans_to_tags(spans: &[EntitySpan], len: usize, scheme: &LabelScheme) -> Result<Vec<usize>> {
    let mut tags = vec![0; len];
    for s in spans {
        if s.start >= s.end || s.end > len || s.etype >= scheme.entity_types().len() {
            return Err(Error::InvalidArgument(format!("bad span {s:?} for length {len}")));
        }
        if tags[s.start..s.end].iter().any(|&t| t != 0) {
            return Err(Error::InvalidArgument(format!("overlapping span {s:?}")));
        }
        tags[s.start] = scheme.begin(s.etype);
        tags[s.start + 1..s.end].iter_mut().for_each(|t| *t = scheme.inside(s.etype));
    }
    Ok(tags)
}

#[derive(Clone, Copy, PartialEq)]
enum Separator {
    Tab,
    Space,
}

/// Splits one data line into token and tag. With more than two columns the
/// first is the token and the last the tag.
fn split_line(line: &str, sep: Separator, number: usize) -> Result<(&str, &str)> {
    // a tab file needs a tab on every line; a space file must have none
    let (c, mixed) = match sep {
        Separator::Tab => ('\t', !line.contains('\t')),
        Separator::Space => (' ', line.contains('\t')),
    };
    if mixed {
        return Err(Error::format(number, "mixed column separators"));
    }
    let mut fields = line.split(c);
    let token = fields.next().unwrap_or_default();
    let tag = fields.next_back();
    match tag {
        Some(tag) if !token.is_empty() && !tag.is_empty() => Ok((token, tag)),
        _ => Err(Error::format(number, "expected <token><separator><tag>")),
    }
}

/// Reads sentences separated by blank lines. Lines starting with
/// `-DOCSTART-` are skipped. Tags are canonicalized to IOB2.
pub fn parse_conll<R: BufRead>(source: R, scheme: &LabelScheme) -> Result<Vec<LabeledSequence>> {
    let mut out = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut sep = None;
    let mut flush = |tokens: &mut Vec<String>, tags: &mut Vec<usize>| {
        if !tokens.is_empty() {
            let canonical = canonicalize_iob(tags, scheme);
            out.push(LabeledSequence {
                tokens: std::mem::take(tokens),
                tags: canonical,
            });
            tags.clear();
        }
    };
    for (line, number) in source.lines().zip(1..) {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags);
            continue;
        }
        if line.starts_with("-DOCSTART-") {
            continue;
        }
        let s = *sep.get_or_insert(if line.contains('\t') {
            Separator::Tab
        } else {
            Separator::Space
        });
        let (token, tag) = split_line(line, s, number)?;
        let index = scheme
            .index_of(tag)
            .ok_or_else(|| Error::format(number, format!("unknown tag {tag}")))?;
        tokens.push(token.to_string());
        tags.push(index);
    }
    flush(&mut tokens, &mut tags);
    Ok(out)
}

/// Entity types named by the tags of a CoNLL-style file, in order of first
/// appearance. Tags other than `O`, `B-T` and `I-T` are rejected with their
/// line number.
pub fn infer_scheme<R: BufRead>(source: R) -> Result<LabelScheme> {
    let mut types: Vec<String> = Vec::new();
    let mut sep = None;
    for (line, number) in source.lines().zip(1..) {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() || line.starts_with("-DOCSTART-") {
            continue;
        }
        let s = *sep.get_or_insert(if line.contains('\t') {
            Separator::Tab
        } else {
            Separator::Space
        });
        let (_, tag) = split_line(line, s, number)?;
        if tag == "O" {
            continue;
        }
        let etype = tag
            .strip_prefix("B-")
            .or_else(|| tag.strip_prefix("I-"))
            .filter(|t| !t.is_empty())
            .ok_or_else(|| Error::format(number, format!("tag {tag:?} is not O, B-T or I-T")))?;
        if !types.iter().any(|t| t == etype) {
            types.push(etype.to_string());
        }
    }
    LabelScheme::new(&types)
}

/// Tab-separated output with a blank line after each sentence.
pub fn write_conll<W: Write>(sequences: &[LabeledSequence], scheme: &LabelScheme, mut sink: W) -> Result<()> {
    for seq in sequences {
        for (token, &tag) in seq.tokens.iter().zip(&seq.tags) {
            if token.is_empty() || token.contains(['\t', '\n', '\r']) {
                return Err(Error::InvalidArgument(format!("token {token:?} cannot be written")));
            }
            writeln!(sink, "{token}\t{}", scheme.tag(tag))?;
        }
        writeln!(sink)?;
    }
    Ok(())
}

/// Seeded shuffle, then contiguous train/dev/test partition. Dev and test
/// get `floor(n·f)` items, train takes the remainder.
pub fn split_dataset<T: Clone>(
    data: &[T],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (train, dev, test) = fractions;
    let valid = [train, dev, test].iter().all(|f| f.is_finite() && *f >= 0.0)
        && train > 0.0
        && (train + dev + test - 1.0).abs() <= 1e-9;
    if !valid {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be non-negative, train positive, and sum to 1: {fractions:?}"
        )));
    }
    let n = data.len();
    let count = |f: f64| ((n as f64 * f + 1e-9).floor() as usize).min(n);
    let n_dev = count(dev);
    let n_test = count(test).min(n - n_dev);
    let mut items = data.to_vec();
    items.shuffle(&mut crate::seeded_rng(seed));
    let rest = items.split_off(n - n_dev - n_test);
    let (d, t) = rest.split_at(n_dev);
    Ok((items, d.to_vec(), t.to_vec()))
}
