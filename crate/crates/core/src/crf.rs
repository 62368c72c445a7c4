//! Linear-chain CRF over per-position label scores.
//!
//! All recursions run in log space. Score of a labeling `z`:
//! `start[z₁] + Σ unary[t][z_t] + Σ trans[z_{t-1}][z_t] + stop[z_N]`.

use crate::linalg::{self, Matrix};
use crate::{Error, Result, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams {
    labels: Vec<String>,
    /// `K × F`: projects encoder features to unary label scores.
    pub emission: Matrix,
    /// Entry `(a, b)` scores label `b` following label `a`.
    pub transitions: Matrix,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
    /// Hard IOB mask: forbids `I-X` at the start, after `O` and after a
    /// different type.
    constrained: bool,
    allowed: Vec<bool>,
    allowed_start: Vec<bool>,
}

/// Gradients of the log-likelihood with respect to the structural scores.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfGradients {
    pub transitions: Matrix,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
}

/// Per-position label scores, `N × K` with `N ≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub unary: Matrix,
}

impl Lattice {
    pub fn new(unary: Matrix) -> Result<Self> {
        if unary.rows() == 0 || unary.cols() == 0 {
            return Err(Error::Empty("lattice".into()));
        }
        if !unary.is_finite() {
            return Err(Error::NonFinite("lattice scores".into()));
        }
        Ok(Lattice { unary })
    }

    pub fn len(&self) -> usize {
        self.unary.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.unary.rows() == 0
    }
}

fn inside_type(label: &str) -> Option<&str> {
    label.strip_prefix("I-")
}

fn span_type(label: &str) -> Option<&str> {
    label.strip_prefix("B-").or_else(|| label.strip_prefix("I-"))
}

impl CrfParams {
    /// Zero-initialized parameters for the given label set and feature width.
    pub fn zeros(labels: Vec<String>, features: usize) -> Result<Self> {
        let k = labels.len();
        if k == 0 {
            return Err(Error::Empty("label set".into()));
        }
        for (i, a) in labels.iter().enumerate() {
            if labels[..i].contains(a) {
                return Err(Error::InvalidArgument(format!("duplicate label {a}")));
            }
        }
        let mut p = CrfParams {
            labels,
            emission: Matrix::zeros(k, features),
            transitions: Matrix::zeros(k, k),
            start: vec![0.0; k],
            stop: vec![0.0; k],
            constrained: false,
            allowed: vec![true; k * k],
            allowed_start: vec![true; k],
        };
        p.rebuild_mask();
        Ok(p)
    }

    /// Glorot-uniform emission weights; structural scores start at zero.
    pub fn init(labels: Vec<String>, features: usize, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(labels, features)?;
        let bound = (6.0 / (p.num_labels() + features) as f64).sqrt();
        p.emission = Matrix::random_uniform(p.num_labels(), features, bound, rng);
        Ok(p)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.emission.cols()
    }

    pub fn constrained(&self) -> bool {
        self.constrained
    }

    pub fn set_constrained(&mut self, on: bool) {
        self.constrained = on;
        self.rebuild_mask();
    }

    fn rebuild_mask(&mut self) {
        let k = self.labels.len();
        for a in 0..k {
            for b in 0..k {
                self.allowed[a * k + b] = !self.constrained
                    || match inside_type(&self.labels[b]) {
                        None => true,
                        Some(t) => span_type(&self.labels[a]) == Some(t),
                    };
            }
        }
        for b in 0..k {
            self.allowed_start[b] = !self.constrained || inside_type(&self.labels[b]).is_none();
        }
    }

    /// Whether the hard mask permits `b` after `a`.
    pub fn transition_allowed(&self, a: usize, b: usize) -> bool {
        self.allowed[a * self.labels.len() + b]
    }

    fn trans(&self, a: usize, b: usize) -> f64 {
        if self.allowed[a * self.labels.len() + b] {
            self.transitions[(a, b)]
        } else {
            f64::NEG_INFINITY
        }
    }

    fn start_score(&self, k: usize) -> f64 {
        if self.allowed_start[k] {
            self.start[k]
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn blocks(&self) -> [&[f64]; 4] {
        [self.emission.as_slice(), self.transitions.as_slice(), &self.start, &self.stop]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.emission.as_mut_slice(),
            self.transitions.as_mut_slice(),
            &mut self.start,
            &mut self.stop,
        ]
    }

    /// Unary scores `emission · f_t` for each feature vector.
    pub fn emissions(&self, features: &[Vec<f64>]) -> Result<Lattice> {
        let k = self.num_labels();
        let mut unary = Matrix::zeros(features.len(), k);
        for (t, f) in features.iter().enumerate() {
            if f.len() != self.feature_dim() {
                return Err(Error::Dimension {
                    expected: self.feature_dim(),
                    found: f.len(),
                });
            }
            unary.row_mut(t).copy_from_slice(&self.emission.matvec(f));
        }
        Lattice::new(unary)
    }

    /// Backward pass of [`CrfParams::emissions`]: accumulates the emission
    /// gradient into `grad` and returns feature gradients.
    pub fn emissions_backward(
        &self,
        features: &[Vec<f64>],
        lattice_grad: &Matrix,
        grad: &mut Matrix,
    ) -> Vec<Vec<f64>> {
        features
            .iter()
            .enumerate()
            .map(|(t, f)| {
                let g = lattice_grad.row(t);
                grad.add_outer(1.0, g, f);
                self.emission.matvec_transposed(g)
            })
            .collect()
    }

    fn check(&self, lattice: &Lattice) -> Result<()> {
        if lattice.unary.cols() != self.num_labels() {
            return Err(Error::Dimension {
                expected: self.num_labels(),
                found: lattice.unary.cols(),
            });
        }
        Ok(())
    }

    fn check_labels(&self, lattice: &Lattice, labels: &[usize]) -> Result<()> {
        self.check(lattice)?;
        if labels.len() != lattice.len() {
            return Err(Error::Dimension {
                expected: lattice.len(),
                found: labels.len(),
            });
        }
        if let Some(&z) = labels.iter().find(|&&z| z >= self.num_labels()) {
            return Err(Error::InvalidArgument(format!(
                "label {z} out of range for {} labels",
                self.num_labels()
            )));
        }
        Ok(())
    }

    /// `alpha[t][k]`: log-sum of scores of prefixes ending in `k` at `t`.
    fn forward_scores(&self, lattice: &Lattice) -> Matrix {
        let (n, k) = lattice.unary.shape();
        let mut alpha = Matrix::zeros(n, k);
        for j in 0..k {
            alpha.row_mut(0)[j] = self.start_score(j) + lattice.unary[(0, j)];
        }
        let mut buf = vec![0.0; k];
        for t in 1..n {
            for b in 0..k {
                for a in 0..k {
                    buf[a] = alpha[(t - 1, a)] + self.trans(a, b);
                }
                alpha.row_mut(t)[b] = lattice.unary[(t, b)] + linalg::log_sum_exp(&buf);
            }
        }
        alpha
    }

    /// `beta[t][k]`: log-sum of scores of suffixes after `t` given `k` at `t`.
    fn backward_scores(&self, lattice: &Lattice) -> Matrix {
        let (n, k) = lattice.unary.shape();
        let mut beta = Matrix::zeros(n, k);
        beta.row_mut(n - 1).copy_from_slice(&self.stop);
        let mut buf = vec![0.0; k];
        for t in (0..n - 1).rev() {
            for a in 0..k {
                for b in 0..k {
                    buf[b] = self.trans(a, b) + lattice.unary[(t + 1, b)] + beta[(t + 1, b)];
                }
                beta.row_mut(t)[a] = linalg::log_sum_exp(&buf);
            }
        }
        beta
    }

    fn log_z(&self, alpha: &Matrix) -> f64 {
        let n = alpha.rows();
        let last: Vec<f64> = alpha.row(n - 1).iter().zip(&self.stop).map(|(a, s)| a + s).collect();
        linalg::log_sum_exp(&last)
    }
}

/// Unnormalized log score of one labeling.
pub fn sequence_score(params: &CrfParams, lattice: &Lattice, labels: &[usize]) -> Result<f64> {
    params.check_labels(lattice, labels)?;
    let mut s = params.start_score(labels[0]);
    for (t, &z) in labels.iter().enumerate() {
        s += lattice.unary[(t, z)];
        if t > 0 {
            s += params.trans(labels[t - 1], z);
        }
    }
    Ok(s + params.stop[labels[labels.len() - 1]])
}

/// Log of the sum of `exp(score)` over every labeling.
pub fn log_partition(params: &CrfParams, lattice: &Lattice) -> Result<f64> {
    params.check(lattice)?;
    Ok(params.log_z(&params.forward_scores(lattice)))
}

pub fn log_likelihood(params: &CrfParams, lattice: &Lattice, labels: &[usize]) -> Result<f64> {
    let s = sequence_score(params, lattice, labels)?;
    Ok(s - log_partition(params, lattice)?)
}

/// Posterior probability of each label at each position, `N × K`.
pub fn marginals(params: &CrfParams, lattice: &Lattice) -> Result<Matrix> {
    params.check(lattice)?;
    let alpha = params.forward_scores(lattice);
    let beta = params.backward_scores(lattice);
    let z = params.log_z(&alpha);
    let (n, k) = lattice.unary.shape();
    let mut m = Matrix::zeros(n, k);
    for t in 0..n {
        for j in 0..k {
            m.row_mut(t)[j] = (alpha[(t, j)] + beta[(t, j)] - z).exp();
        }
    }
    Ok(m)
}

/// Highest-scoring labeling and its score. Ties go to the lowest label index.
pub fn viterbi(params: &CrfParams, lattice: &Lattice) -> Result<(Vec<usize>, f64)> {
    params.check(lattice)?;
    let (n, k) = lattice.unary.shape();
    let mut delta: Vec<f64> = (0..k).map(|j| params.start_score(j) + lattice.unary[(0, j)]).collect();
    let mut back = vec![0usize; n * k];
    for t in 1..n {
        let mut next = vec![0.0; k];
        for b in 0..k {
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (a, &d) in delta.iter().enumerate() {
                let s = d + params.trans(a, b);
                if s > best_score {
                    best_score = s;
                    best = a;
                }
            }
            back[t * k + b] = best;
            next[b] = best_score + lattice.unary[(t, b)];
        }
        delta = next;
    }
    let mut last = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (j, (&d, &s)) in delta.iter().zip(&params.stop).enumerate() {
        if d + s > best_score {
            best_score = d + s;
            last = j;
        }
    }
    let mut path = vec![0; n];
    path[n - 1] = last;
    for t in (1..n).rev() {
        path[t - 1] = back[t * k + path[t]];
    }
    Ok((path, best_score))
}

/// Gradient of [`log_likelihood`]: empirical minus expected counts. The
/// lattice gradient has rows `onehot(gold_t) − marginal_t`.
pub fn crf_gradients(
    params: &CrfParams,
    lattice: &Lattice,
    labels: &[usize],
) -> Result<(CrfGradients, Matrix)> {
    params.check_labels(lattice, labels)?;
    let (n, k) = lattice.unary.shape();
    let alpha = params.forward_scores(lattice);
    let beta = params.backward_scores(lattice);
    let z = params.log_z(&alpha);

    let mut g = CrfGradients {
        transitions: Matrix::zeros(k, k),
        start: vec![0.0; k],
        stop: vec![0.0; k],
    };
    let mut du = Matrix::zeros(n, k);
    for t in 0..n {
        for j in 0..k {
            du.row_mut(t)[j] = -(alpha[(t, j)] + beta[(t, j)] - z).exp();
        }
        du.row_mut(t)[labels[t]] += 1.0;
    }
    for j in 0..k {
        g.start[j] = -du_expected(&du, 0, j, labels[0]);
        g.stop[j] = -du_expected(&du, n - 1, j, labels[n - 1]);
    }
    g.start[labels[0]] += 1.0;
    g.stop[labels[n - 1]] += 1.0;
    for t in 1..n {
        for a in 0..k {
            for b in 0..k {
                if !params.transition_allowed(a, b) {
                    continue;
                }
                let p = (alpha[(t - 1, a)] + params.trans(a, b) + lattice.unary[(t, b)] + beta[(t, b)] - z).exp();
                g.transitions.row_mut(a)[b] -= p;
            }
        }
        g.transitions.row_mut(labels[t - 1])[labels[t]] += 1.0;
    }
    Ok((g, du))
}

/// Recovers the marginal at `(t, j)` from a lattice-gradient row.
fn du_expected(du: &Matrix, t: usize, j: usize, gold: usize) -> f64 {
    let indicator = if j == gold { 1.0 } else { 0.0 };
    indicator - du[(t, j)]
}
