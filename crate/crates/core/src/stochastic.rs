//! Dense kernels over probability vectors and (sub)stochastic matrices.
//!
//! Everything uses the row-vector convention: a belief state `s` is advanced by
//! `s · M`, and row `i` of a transition matrix is the next-state distribution
//! from state `i`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, PfaError, Result};

/// Slack allowed on simplex sums.
pub const SUM_TOL: f64 = 1e-9;
/// Slack allowed below zero on individual entries.
pub const NONNEG_TOL: f64 = 1e-12;

/// Seedable generator used for every random draw in the crate.
///
/// ChaCha with 8 rounds; its output stream is fixed by the algorithm, so a
/// seed reproduces the same instances across platforms and runs.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Row-major dense real matrix. Carries no stochasticity guarantee.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim(rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            check_dim(cols, row.len())?;
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// Plain matrix product `self · rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        check_dim(self.cols, rhs.rows)?;
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · rhsᵀ`.
    pub fn matmul_transpose_rhs(&self, rhs: &Matrix) -> Result<Matrix> {
        check_dim(self.cols, rhs.cols)?;
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..rhs.rows {
                out.data[i * rhs.rows + j] = a.iter().zip(rhs.row(j)).map(|(x, y)| x * y).sum();
            }
        }
        Ok(out)
    }

    /// `selfᵀ · rhs`.
    pub fn transpose_matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        check_dim(self.rows, rhs.rows)?;
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            let b = rhs.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &bj) in out_row.iter_mut().zip(b) {
                    *o += a * bj;
                }
            }
        }
        Ok(out)
    }

    /// `acc += self`, entrywise.
    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        check_dim(self.data.len(), other.data.len())?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Row vector times matrix: `out[j] = Σ_i v[i]·m[i][j]`.
pub fn row_times(v: &[f64], m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    row_times_into(v, m, &mut out);
    out
}

/// In-place variant of [`row_times`]; `out` must have `m.cols()` entries.
#[inline]
pub fn row_times_into(v: &[f64], m: &Matrix, out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for (i, &vi) in v.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        for (o, &mij) in out.iter_mut().zip(m.row(i)) {
            *o += vi * mij;
        }
    }
}

/// Whether a probability vector is a full distribution or may have lost mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    Normalized,
    Subnormalized,
}

/// A belief state over automaton states.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    entries: Vec<f64>,
    kind: Normalization,
}

impl ProbVector {
    /// A distribution summing to one within [`SUM_TOL`].
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        Self::with_kind(entries, Normalization::Normalized)
    }

    /// A vector whose mass may be below one.
    pub fn subnormalized(entries: Vec<f64>) -> Result<Self> {
        Self::with_kind(entries, Normalization::Subnormalized)
    }

    pub fn with_kind(entries: Vec<f64>, kind: Normalization) -> Result<Self> {
        validate_entries(&entries, "probability vector")?;
        let sum: f64 = entries.iter().sum();
        match kind {
            Normalization::Normalized if (sum - 1.0).abs() > SUM_TOL => {
                return Err(PfaError::InvalidProbability(format!(
                    "normalized vector sums to {sum}"
                )))
            }
            Normalization::Subnormalized if sum > 1.0 + SUM_TOL => {
                return Err(PfaError::InvalidProbability(format!(
                    "subnormalized vector sums to {sum}"
                )))
            }
            _ => {}
        }
        Ok(Self { entries, kind })
    }

    /// Skips validation; callers guarantee the invariants from the arithmetic.
    pub(crate) fn from_raw(entries: Vec<f64>, kind: Normalization) -> Self {
        Self { entries, kind }
    }

    pub fn one_hot(n: usize, index: usize) -> Result<Self> {
        if index >= n {
            return Err(PfaError::InvalidArgument(format!(
                "one-hot index {index} out of range for {n} states"
            )));
        }
        let mut entries = vec![0.0; n];
        entries[index] = 1.0;
        Ok(Self {
            entries,
            kind: Normalization::Normalized,
        })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            entries: vec![1.0 / n as f64; n],
            kind: Normalization::Normalized,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn kind(&self) -> Normalization {
        self.kind
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.entries
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().sum()
    }

    pub fn dot(&self, weights: &[f64]) -> f64 {
        self.entries.iter().zip(weights).map(|(a, b)| a * b).sum()
    }

    /// True when every entry lies in `[0, 1]` and the sum is one, both within tolerance.
    pub fn is_on_simplex(&self) -> bool {
        is_simplex_point(&self.entries)
    }

    pub fn max_abs_diff(&self, other: &[f64]) -> f64 {
        self.entries
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Simplex check on a raw slice using the crate-wide tolerances.
pub fn is_simplex_point(v: &[f64]) -> bool {
    let in_range = v
        .iter()
        .all(|&x| x.is_finite() && (-NONNEG_TOL..=1.0 + NONNEG_TOL).contains(&x));
    let sum: f64 = v.iter().sum();
    in_range && (sum - 1.0).abs() < SUM_TOL
}

fn validate_entries(entries: &[f64], what: &str) -> Result<()> {
    for &x in entries {
        if !x.is_finite() {
            return Err(PfaError::NonFinite(what.to_string()));
        }
        if !(-NONNEG_TOL..=1.0 + NONNEG_TOL).contains(&x) {
            return Err(PfaError::InvalidProbability(format!(
                "{what} entry {x} outside [0, 1]"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StochasticKind {
    RowStochastic,
    RowSubstochastic,
}

/// A square transition operator whose rows are (sub)distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    matrix: Matrix,
    kind: StochasticKind,
}

impl StochasticMatrix {
    pub fn new(matrix: Matrix, kind: StochasticKind) -> Result<Self> {
        if !matrix.is_square() {
            return Err(PfaError::DimensionMismatch {
                expected: matrix.rows(),
                found: matrix.cols(),
            });
        }
        validate_entries(matrix.as_slice(), "stochastic matrix")?;
        for (i, sum) in matrix.row_sums().into_iter().enumerate() {
            let ok = match kind {
                StochasticKind::RowStochastic => (sum - 1.0).abs() <= SUM_TOL,
                StochasticKind::RowSubstochastic => sum <= 1.0 + SUM_TOL,
            };
            if !ok {
                return Err(PfaError::InvalidProbability(format!(
                    "row {i} sums to {sum} for {kind:?}"
                )));
            }
        }
        Ok(Self { matrix, kind })
    }

    pub fn row_stochastic(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?, StochasticKind::RowStochastic)
    }

    pub fn row_substochastic(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?, StochasticKind::RowSubstochastic)
    }

    pub(crate) fn from_raw(matrix: Matrix, kind: StochasticKind) -> Self {
        Self { matrix, kind }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            matrix: Matrix::identity(n),
            kind: StochasticKind::RowStochastic,
        }
    }

    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    pub fn kind(&self) -> StochasticKind {
        self.kind
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.matrix.row(i)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.matrix.to_rows()
    }

    /// Probability of taking no transition from each row: `1 − Σ_j M[i][j]`, floored at zero.
    pub fn rest_mass(&self) -> Vec<f64> {
        self.matrix
            .row_sums()
            .into_iter()
            .map(|s| (1.0 - s).max(0.0))
            .collect()
    }
}

/// 0/1 indicator over states marking the accepting set. An empty set is allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcceptIndicator {
    bits: Vec<bool>,
}

impl AcceptIndicator {
    pub fn from_states(n: usize, states: &[usize]) -> Result<Self> {
        let mut bits = vec![false; n];
        for &q in states {
            if q >= n {
                return Err(PfaError::InvalidArgument(format!(
                    "accepting state {q} out of range for {n} states"
                )));
            }
            bits[q] = true;
        }
        Ok(Self { bits })
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn empty(n: usize) -> Self {
        Self {
            bits: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn contains(&self, state: usize) -> bool {
        self.bits[state]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn states(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&q| self.bits[q]).collect()
    }

    /// The indicator as a real vector `1_F`.
    pub fn weights(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// `result[j] = Σ_i v[i]·M[i][j]`.
pub fn vec_mat_mul(v: &ProbVector, m: &StochasticMatrix) -> Result<ProbVector> {
    check_dim(m.n(), v.len())?;
    let kind = if v.kind == Normalization::Normalized && m.kind == StochasticKind::RowStochastic {
        Normalization::Normalized
    } else {
        Normalization::Subnormalized
    };
    Ok(ProbVector::from_raw(row_times(&v.entries, &m.matrix), kind))
}

/// Product of two transition operators; row-stochastic only when both factors are.
pub fn mat_mul(a: &StochasticMatrix, b: &StochasticMatrix) -> Result<StochasticMatrix> {
    check_dim(a.n(), b.n())?;
    let kind = if a.kind == StochasticKind::RowStochastic && b.kind == StochasticKind::RowStochastic
    {
        StochasticKind::RowStochastic
    } else {
        StochasticKind::RowSubstochastic
    };
    Ok(StochasticMatrix::from_raw(a.matrix.matmul(&b.matrix)?, kind))
}

/// `Σ_{m=0}^{n_terms−1} M^m`, returned as a raw matrix since it is generally not stochastic.
pub fn power_sum(m: &StochasticMatrix, n_terms: usize) -> Result<Matrix> {
    if n_terms == 0 {
        return Err(PfaError::InvalidArgument(
            "power_sum needs at least one term".into(),
        ));
    }
    let n = m.n();
    let mut acc = Matrix::identity(n);
    let mut power = Matrix::identity(n);
    for _ in 1..n_terms {
        power = power.matmul(&m.matrix)?;
        acc.add_assign(&power)?;
    }
    Ok(acc)
}

/// Max-shifted softmax of one row, written into `out`.
pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// Row-wise softmax projection of a logit matrix onto row-stochastic matrices.
pub fn softmax_rows(logits: &Matrix) -> Result<StochasticMatrix> {
    if !logits.is_square() {
        return Err(PfaError::DimensionMismatch {
            expected: logits.rows(),
            found: logits.cols(),
        });
    }
    if logits.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(PfaError::NonFinite("logit matrix".into()));
    }
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        softmax_into(logits.row(i), out.row_mut(i));
    }
    Ok(StochasticMatrix::from_raw(out, StochasticKind::RowStochastic))
}

/// One Dirichlet(alpha, …, alpha) draw over `n` coordinates.
///
/// Draws `n` independent Gamma(alpha, 1) variates and normalizes by their sum.
/// `rand_distr::Gamma` uses Marsaglia–Tsang for `alpha ≥ 1` and the
/// `Gamma(alpha + 1)·U^{1/alpha}` boost below one.
pub fn sample_dirichlet_row<R: rand::Rng + ?Sized>(
    n: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<ProbVector> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(PfaError::InvalidArgument(format!(
            "Dirichlet concentration must be positive, got {alpha}"
        )));
    }
    if n == 0 {
        return Err(PfaError::InvalidArgument(
            "Dirichlet dimension must be at least 1".into(),
        ));
    }
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| PfaError::InvalidArgument(format!("gamma({alpha}): {e}")))?;
    loop {
        let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        // Tiny alpha can underflow every draw to zero; redraw rather than divide by zero.
        if total > 0.0 && total.is_finite() {
            return Ok(ProbVector::from_raw(
                draws.into_iter().map(|g| g / total).collect(),
                Normalization::Normalized,
            ));
        }
    }
}
