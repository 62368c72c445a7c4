//! Orthogonal alignment of a target embedding space onto a source space.
//!
//! Given dictionary pairs `(xᵢ, yᵢ)` of unit target and source vectors, the
//! orthogonal map maximizing `Σ yᵢᵀ W xᵢ` is `W = U Vᵀ` where
//! `Yᵀ X = U Σ Vᵀ`. A least-squares SGD fit is kept as a baseline.

mod svd;

pub use svd::{svd, SvdResult};

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;

use crate::embed::EmbeddingStore;
use crate::linalg::{self, Matrix};
use crate::{seeded_rng, Error, Result};

/// Singular values below this are reported as rank deficiency.
pub const NEAR_ZERO_SINGULAR_VALUE: f64 = 1e-10;

/// Loaded maps further than this from orthogonal trigger a warning.
pub const LOAD_ORTHOGONALITY_TOLERANCE: f64 = 1e-6;

const MAP_HEADER: &str = "xling-align v1";

/// Row-aligned dictionary matrices: row `i` of `x` (target) translates to
/// row `i` of `y` (source). Rows are unit length.
#[derive(Debug, Clone)]
pub struct DictionaryPairs {
    x: Matrix,
    y: Matrix,
    pairs: Vec<(String, String)>,
    dropped: usize,
}

impl DictionaryPairs {
    /// Looks up every `(target, source)` pair, dropping pairs with an
    /// out-of-vocabulary token on either side. Duplicates are kept.
    pub fn build(
        pairs: &[(String, String)],
        target: &EmbeddingStore,
        source: &EmbeddingStore,
    ) -> Result<Self> {
        if target.dim() != source.dim() {
            return Err(Error::Dimension {
                expected: source.dim(),
                found: target.dim(),
            });
        }
        let mut kept = Vec::new();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (t, s) in pairs {
            if let (Some(x), Some(y)) = (target.get(t), source.get(s)) {
                xs.push(x.to_vec());
                ys.push(y.to_vec());
                kept.push((t.clone(), s.clone()));
            }
        }
        let dropped = pairs.len() - kept.len();
        if kept.is_empty() {
            return Err(Error::Empty(format!(
                "no dictionary pairs left after dropping {dropped} out-of-vocabulary pairs"
            )));
        }
        let mut dict = Self::from_matrices(Matrix::from_rows(&xs), Matrix::from_rows(&ys))?;
        dict.pairs = kept;
        dict.dropped = dropped;
        Ok(dict)
    }

    /// Uses the given rows directly, normalizing each to unit length.
    pub fn from_matrices(mut x: Matrix, mut y: Matrix) -> Result<Self> {
        if x.shape() != y.shape() {
            return Err(Error::InvalidArgument(format!(
                "dictionary shapes differ: {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
        if x.rows() == 0 {
            return Err(Error::Empty("dictionary has no pairs".into()));
        }
        for i in 0..x.rows() {
            linalg::normalize_in_place(x.row_mut(i));
            linalg::normalize_in_place(y.row_mut(i));
        }
        Ok(DictionaryPairs {
            x,
            y,
            pairs: Vec::new(),
            dropped: 0,
        })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Token pairs kept by [`DictionaryPairs::build`]; empty when built from
    /// matrices.
    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }

    /// Same pairs with the roles of source and target exchanged.
    pub fn swapped(&self) -> DictionaryPairs {
        DictionaryPairs {
            x: self.y.clone(),
            y: self.x.clone(),
            pairs: self.pairs.iter().map(|(t, s)| (s.clone(), t.clone())).collect(),
            dropped: self.dropped,
        }
    }

    /// `Σ yᵢᵀ W xᵢ`, the quantity the orthogonal fit maximizes.
    pub fn objective(&self, w: &Matrix) -> f64 {
        self.x
            .iter_rows()
            .zip(self.y.iter_rows())
            .map(|(x, y)| linalg::dot(y, &w.matvec(x)))
            .sum()
    }

    /// `Σ ‖W xᵢ − yᵢ‖²`, the least-squares loss.
    pub fn squared_loss(&self, w: &Matrix) -> f64 {
        self.x
            .iter_rows()
            .zip(self.y.iter_rows())
            .map(|(x, y)| {
                let wx = w.matvec(x);
                wx.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMethod {
    Svd,
    Sgd,
    /// Read from a map file.
    Loaded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitDiagnostics {
    pub method: FitMethod,
    pub pairs_used: usize,
    pub pairs_dropped: usize,
    /// Singular values of the cross-correlation matrix below
    /// [`NEAR_ZERO_SINGULAR_VALUE`]; zero for SGD fits.
    pub near_zero_singular_values: usize,
    /// Least-squares loss of the fitted map on the fitting dictionary.
    pub final_loss: f64,
}

/// Square matrix mapping target vectors into the source space (`y ≈ W x`).
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentMap {
    w: Matrix,
    factors: Option<SvdResult>,
    diagnostics: Option<FitDiagnostics>,
}

impl AlignmentMap {
    /// Wraps an arbitrary square matrix. No factors or diagnostics.
    pub fn from_matrix(w: Matrix) -> Result<Self> {
        if w.rows() != w.cols() || w.rows() == 0 {
            return Err(Error::InvalidArgument(format!(
                "alignment map must be square and non-empty, got {:?}",
                w.shape()
            )));
        }
        Ok(AlignmentMap {
            w,
            factors: None,
            diagnostics: None,
        })
    }

    pub fn identity(dim: usize) -> Self {
        AlignmentMap {
            w: Matrix::identity(dim),
            factors: None,
            diagnostics: None,
        }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.w
    }

    pub fn dim(&self) -> usize {
        self.w.rows()
    }

    /// SVD factors `U`, `Vᵀ` with `W = U Vᵀ`, for SVD-fitted and loaded maps.
    pub fn factors(&self) -> Option<&SvdResult> {
        self.factors.as_ref()
    }

    pub fn diagnostics(&self) -> Option<&FitDiagnostics> {
        self.diagnostics.as_ref()
    }

    /// `W · v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(v.len())?;
        Ok(self.w.matvec(v))
    }

    /// `Wᵀ · v`, mapping source vectors back to the target space.
    pub fn apply_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(v.len())?;
        Ok(self.w.matvec_transposed(v))
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                found: len,
            });
        }
        Ok(())
    }

    /// Largest absolute entry of `WᵀW − I`.
    pub fn orthogonality_error(&self) -> f64 {
        self.w
            .transpose()
            .matmul(&self.w)
            .max_abs_diff(&Matrix::identity(self.dim()))
    }

    /// The orthogonal matrix closest to `W` in Frobenius norm.
    pub fn nearest_orthogonal(&self) -> Result<AlignmentMap> {
        let f = svd(&self.w)?;
        Ok(AlignmentMap {
            w: f.u.matmul(&f.vt),
            factors: Some(f),
            diagnostics: self.diagnostics.clone(),
        })
    }

    /// Similarity of source `y` and target `x` computed in the shared space:
    /// `(Uᵀy) · (Vᵀx)`. Equal to `yᵀ W x` for SVD-fitted maps.
    pub fn shared_space_similarity(&self, y: &[f64], x: &[f64]) -> Result<f64> {
        self.check_dim(y.len())?;
        self.check_dim(x.len())?;
        let f = self
            .factors
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("map has no SVD factors".into()))?;
        let uy = f.u.matvec_transposed(y);
        let vx = f.vt.matvec(x);
        Ok(linalg::dot(&uy, &vx))
    }
}

/// Exact orthogonal Procrustes fit: `W = U Vᵀ` from the SVD of `Yᵀ X`.
pub fn fit_orthogonal(dict: &DictionaryPairs) -> Result<AlignmentMap> {
    if dict.is_empty() {
        return Err(Error::Empty("dictionary has no pairs".into()));
    }
    let d = dict.dim();
    let mut m = Matrix::zeros(d, d);
    for (x, y) in dict.x.iter_rows().zip(dict.y.iter_rows()) {
        m.add_outer(1.0, y, x);
    }
    let f = svd(&m)?;
    let w = f.u.matmul(&f.vt);
    let diagnostics = FitDiagnostics {
        method: FitMethod::Svd,
        pairs_used: dict.len(),
        pairs_dropped: dict.dropped,
        near_zero_singular_values: f.near_zero(NEAR_ZERO_SINGULAR_VALUE),
        final_loss: dict.squared_loss(&w),
    };
    Ok(AlignmentMap {
        w,
        factors: Some(f),
        diagnostics: Some(diagnostics),
    })
}

/// Unconstrained least-squares fit by per-pair gradient descent on
/// `‖W xᵢ − yᵢ‖²`. Pair order is reshuffled every epoch.
pub fn fit_sgd(
    dict: &DictionaryPairs,
    learning_rate: f64,
    epochs: usize,
    seed: u64,
) -> Result<AlignmentMap> {
    if dict.is_empty() {
        return Err(Error::Empty("dictionary has no pairs".into()));
    }
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(Error::InvalidArgument("learning rate must be positive".into()));
    }
    let d = dict.dim();
    let mut rng = seeded_rng(seed);
    let bound = (6.0 / (2 * d) as f64).sqrt();
    let mut w = Matrix::random_uniform(d, d, bound, &mut rng);
    let mut order: Vec<usize> = (0..dict.len()).collect();
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let x = dict.x.row(i);
            let y = dict.y.row(i);
            let residual: Vec<f64> = w.matvec(x).iter().zip(y).map(|(a, b)| a - b).collect();
            w.add_outer(-2.0 * learning_rate, &residual, x);
        }
        let loss = dict.squared_loss(&w);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                item: None,
                message: "least-squares loss is not finite".into(),
            });
        }
    }
    let diagnostics = FitDiagnostics {
        method: FitMethod::Sgd,
        pairs_used: dict.len(),
        pairs_dropped: dict.dropped,
        near_zero_singular_values: 0,
        final_loss: dict.squared_loss(&w),
    };
    Ok(AlignmentMap {
        w,
        factors: None,
        diagnostics: Some(diagnostics),
    })
}

/// Fraction of `(target, source)` test pairs whose source word is among the
/// `k` nearest source neighbours of the mapped target vector. Pairs with an
/// out-of-vocabulary token are skipped.
pub fn translation_precision(
    map: &AlignmentMap,
    test_pairs: &[(String, String)],
    target: &EmbeddingStore,
    source: &EmbeddingStore,
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let mut total = 0usize;
    let mut hits = 0usize;
    for (t, s) in test_pairs {
        let (Some(x), true) = (target.get(t), source.contains(s)) else {
            continue;
        };
        total += 1;
        let mapped = map.apply(x)?;
        if source.nearest(&mapped, k).iter().any(|(w, _)| w == s) {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(Error::Empty("no usable test pairs".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// Reads `target<TAB>source` lines; `#` comment lines and blank lines are
/// skipped.
pub fn load_dictionary<R: BufRead>(source: R) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (line, line_no) in source.lines().zip(1..) {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (t, s) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(line_no, "expected target<TAB>source"))?;
        if t.is_empty() || s.is_empty() || s.contains('\t') {
            return Err(Error::format(line_no, "expected target<TAB>source"));
        }
        pairs.push((t.to_string(), s.to_string()));
    }
    Ok(pairs)
}

pub fn write_dictionary<W: Write>(pairs: &[(String, String)], mut sink: W) -> Result<()> {
    for (t, s) in pairs {
        writeln!(sink, "{t}\t{s}")?;
    }
    sink.flush()?;
    Ok(())
}

/// Writes `xling-align v1 <d>` then `d` rows of `W`.
pub fn write_map<W: Write>(map: &AlignmentMap, mut sink: W) -> Result<()> {
    writeln!(sink, "{MAP_HEADER} {}", map.dim())?;
    for row in map.w.iter_rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(sink, "{}", line.join(" "))?;
    }
    sink.flush()?;
    Ok(())
}

/// Reads a map file. Maps that are not orthogonal within
/// [`LOAD_ORTHOGONALITY_TOLERANCE`] load with a warning.
pub fn load_map<R: BufRead>(source: R) -> Result<AlignmentMap> {
    let mut lines = source.lines().zip(1..);
    let (header, _) = lines
        .next()
        .ok_or_else(|| Error::format(1, "missing alignment map header"))?;
    let header = header?;
    let d: usize = header
        .trim_end()
        .strip_prefix(MAP_HEADER)
        .and_then(|rest| rest.strip_prefix(' '))
        .and_then(|n| n.parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::format(1, format!("expected \"{MAP_HEADER} <d>\", got {header:?}")))?;
    let mut data = Vec::with_capacity(d * d);
    for _ in 0..d {
        let (line, line_no) = lines
            .next()
            .ok_or_else(|| Error::Truncated(format!("alignment map expects {d} rows")))?;
        let line = line?;
        let row = line
            .split_whitespace()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::format(line_no, format!("invalid real {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != d {
            return Err(Error::format(
                line_no,
                format!("expected {d} values, found {}", row.len()),
            ));
        }
        data.extend(row);
    }
    let w = Matrix::from_vec(d, d, data);
    let mut map = AlignmentMap::from_matrix(w)?;
    let err = map.orthogonality_error();
    if err.is_nan() || err > LOAD_ORTHOGONALITY_TOLERANCE {
        log::warn!("loaded alignment map is not orthogonal: max |WᵀW − I| = {err:e}");
    }
    map.factors = Some(svd(&map.w)?);
    map.diagnostics = Some(FitDiagnostics {
        method: FitMethod::Loaded,
        pairs_used: 0,
        pairs_dropped: 0,
        near_zero_singular_values: 0,
        final_loss: f64::NAN,
    });
    Ok(map)
}
