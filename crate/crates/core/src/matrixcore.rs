//! Dense symmetric linear algebra used throughout the crate.
//!
//! Everything here is a pure function of its inputs. Eigenvalues are always
//! returned in non-increasing order, and every eigenvector is sign-normalised
//! so that its largest-magnitude entry is positive.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Absolute tolerance on `|a_ij - a_ji|` accepted by [`SymMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Relative floor on the smallest eigenvalue of a matrix treated as positive
/// definite: `lambda_min > RANK_TOL * lambda_max`.
pub const RANK_TOL: f64 = 1e-10;

/// A real symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps `m`, rejecting non-square input and asymmetry above [`SYMMETRY_TOL`].
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Shape(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let gap = (m[(i, j)] - m[(j, i)]).abs();
                if gap.is_nan() || gap > SYMMETRY_TOL {
                    return Err(Error::SymmetryViolation {
                        row: i,
                        col: j,
                        gap,
                    });
                }
            }
        }
        Ok(SymMatrix(m))
    }

    /// Returns `(m + m^T) / 2`. Used for products such as `X^T X` that are
    /// symmetric in exact arithmetic but not bit-for-bit after rounding.
    pub fn symmetrize(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Shape(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let t = m.transpose();
        Ok(SymMatrix((m + t) * 0.5))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        SymMatrix(&self.0 * c)
    }

    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix> {
        if self.dim() != other.dim() {
            return Err(Error::Shape(format!(
                "cannot add {0}x{0} and {1}x{1}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(SymMatrix(&self.0 + &other.0))
    }

    /// `B^T S B`, symmetrised.
    pub fn congruence(&self, basis: &DMatrix<f64>) -> Result<SymMatrix> {
        if basis.nrows() != self.dim() {
            return Err(Error::Shape(format!(
                "congruence basis has {} rows, matrix is {}x{}",
                basis.nrows(),
                self.dim(),
                self.dim()
            )));
        }
        SymMatrix::symmetrize(basis.transpose() * &self.0 * basis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenKind {
    Standard,
    Generalized,
}

/// Ordered eigenpairs. Column `j` of `vectors` pairs with `values[j]`.
#[derive(Debug, Clone)]
pub struct EigenSolution {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
    pub kind: EigenKind,
}

impl EigenSolution {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// The first `m` eigenvectors as a `dim x m` matrix.
    pub fn leading_vectors(&self, m: usize) -> DMatrix<f64> {
        self.vectors.columns(0, m.min(self.dim())).into_owned()
    }
}

/// Flips each column so its largest-magnitude entry is positive. Among entries
/// whose magnitudes agree to rounding, the first one decides.
fn normalize_signs(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        let amax = col.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if amax == 0.0 {
            continue;
        }
        let pivot = col
            .iter()
            .copied()
            .find(|v| v.abs() >= amax * (1.0 - 1e-12))
            .unwrap_or(amax);
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
}

/// Sorts eigenpairs by value, largest first. The sort is stable, so the
/// solver's order among exact ties is preserved.
fn sorted_pairs(values: &DVector<f64>, vectors: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let sorted_values = order.iter().map(|&i| values[i]).collect();
    let columns: Vec<_> = order.iter().map(|&i| vectors.column(i)).collect();
    let sorted_vectors = if columns.is_empty() {
        DMatrix::zeros(vectors.nrows(), 0)
    } else {
        DMatrix::from_columns(&columns)
    };
    (sorted_values, sorted_vectors)
}

/// Spectral decomposition `m = V diag(values) V^T` with orthonormal `V`.
pub fn sym_eig(m: &SymMatrix) -> EigenSolution {
    let eig = m.as_matrix().clone().symmetric_eigen();
    let (values, mut vectors) = sorted_pairs(&eig.eigenvalues, &eig.eigenvectors);
    normalize_signs(&mut vectors);
    EigenSolution {
        values,
        vectors,
        kind: EigenKind::Standard,
    }
}

/// Whitening map `A L^{-1/2}` of a positive definite matrix `m = A L A^T`,
/// together with its eigen-decomposition. Fails if the smallest eigenvalue
/// does not exceed [`RANK_TOL`] times the largest.
pub(crate) fn inverse_sqrt_map(m: &SymMatrix) -> std::result::Result<(EigenSolution, DMatrix<f64>), (usize, f64, f64)> {
    let eig = sym_eig(m);
    let largest = eig.values.first().copied().unwrap_or(0.0);
    if let Some((index, &value)) = eig
        .values
        .iter()
        .enumerate()
        .find(|(_, &v)| !(largest > 0.0 && v > RANK_TOL * largest))
    {
        return Err((index, value, largest));
    }
    let mut map = eig.vectors.clone();
    for (j, mut col) in map.column_iter_mut().enumerate() {
        col /= eig.values[j].sqrt();
    }
    Ok((eig, map))
}

/// Solves `k_mat v = lambda m_mat v` for symmetric `k_mat` and symmetric
/// positive definite `m_mat`.
///
/// With `m_mat = A L A^T` the problem is reduced to the standard problem for
/// `(L^{-1/2} A^T) k_mat (L^{-1/2} A^T)^T`, whose eigenvectors are mapped back
/// through `A L^{-1/2}`. The returned vectors satisfy `V^T m_mat V = I`.
pub fn gen_eig(k_mat: &SymMatrix, m_mat: &SymMatrix) -> Result<EigenSolution> {
    if k_mat.dim() != m_mat.dim() {
        return Err(Error::Shape(format!(
            "generalized eigenproblem needs equal sizes, got {} and {}",
            k_mat.dim(),
            m_mat.dim()
        )));
    }
    let (_, whitening) = inverse_sqrt_map(m_mat).map_err(|(index, value, largest)| {
        Error::NotPositiveDefinite {
            index,
            value,
            largest,
        }
    })?;
    let reduced = k_mat.congruence(&whitening)?;
    let inner = sym_eig(&reduced);
    let mut vectors = whitening * inner.vectors;
    normalize_signs(&mut vectors);
    Ok(EigenSolution {
        values: inner.values,
        vectors,
        kind: EigenKind::Generalized,
    })
}

pub fn frobenius_norm(m: &SymMatrix) -> f64 {
    m.as_matrix().norm()
}

/// Largest absolute eigenvalue.
pub fn spectral_norm(m: &SymMatrix) -> f64 {
    sym_eig(m)
        .values
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn column_means(data: &DMatrix<f64>) -> DVector<f64> {
    let n = data.nrows().max(1) as f64;
    DVector::from_iterator(data.ncols(), data.column_iter().map(|c| c.sum() / n))
}

/// The `n x n` centering operator `F = I - (1/n) 1 1^T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CenteringOperator {
    n: usize,
}

impl CenteringOperator {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "centering operator needs n >= 1".into(),
            ));
        }
        Ok(CenteringOperator { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn materialize(&self) -> DMatrix<f64> {
        let off = -1.0 / self.n as f64;
        DMatrix::from_fn(self.n, self.n, |i, j| if i == j { 1.0 + off } else { off })
    }

    /// `F * data` without forming `F`.
    pub fn apply(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if data.nrows() != self.n {
            return Err(Error::Shape(format!(
                "centering operator of size {} applied to {} rows",
                self.n,
                data.nrows()
            )));
        }
        let means = column_means(data);
        let mut out = data.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.add_scalar_mut(-means[j]);
        }
        Ok(out)
    }
}

/// Subtracts column means: `F * data`.
pub fn apply_centering(data: &DMatrix<f64>) -> DMatrix<f64> {
    let means = column_means(data);
    let mut out = data.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    out
}

/// Projector onto the span of the cluster indicator columns,
/// `H = E (E^T E)^{-1} E^T`. Applying it replaces every row by the mean of
/// its cluster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HatMatrix {
    labels: Vec<usize>,
    counts: Vec<usize>,
}

impl HatMatrix {
    /// `labels[i]` is the 0-based cluster of row `i`; every cluster in `0..k`
    /// must occur.
    pub fn new(labels: &[usize], k: usize) -> Result<Self> {
        let counts = cluster_counts(labels, k)?;
        Ok(HatMatrix {
            labels: labels.to_vec(),
            counts,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Equal to `k` for a projector of rank `k`.
    pub fn trace(&self) -> f64 {
        self.labels
            .iter()
            .map(|&l| 1.0 / self.counts[l] as f64)
            .sum()
    }

    pub fn materialize(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| {
            if self.labels[i] == self.labels[j] {
                1.0 / self.counts[self.labels[i]] as f64
            } else {
                0.0
            }
        })
    }

    /// `F H F = H - 11^T / n`: the projector onto the centered cluster
    /// indicators. Between-cluster scatter of any `n x d` matrix `X` is
    /// `X^T (F H F) X`, whether or not `X` is centered.
    pub fn materialize_centered(&self) -> DMatrix<f64> {
        let n = self.n();
        self.materialize().add_scalar(-1.0 / n as f64)
    }

    /// `H * data` without forming `H`.
    pub fn apply(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if data.nrows() != self.n() {
            return Err(Error::Shape(format!(
                "hat matrix of size {} applied to {} rows",
                self.n(),
                data.nrows()
            )));
        }
        let means = cluster_means(data, &self.labels, &self.counts);
        Ok(DMatrix::from_fn(data.nrows(), data.ncols(), |i, j| {
            means[(self.labels[i], j)]
        }))
    }

    pub fn apply_vec(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let m = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
        Ok(self.apply(&m)?.column(0).into_owned())
    }
}

pub fn hat_matrix(labels: &[usize], k: usize) -> Result<HatMatrix> {
    HatMatrix::new(labels, k)
}

/// Per-cluster row counts; errors on out-of-range labels and empty clusters.
pub(crate) fn cluster_counts(labels: &[usize], k: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; k];
    for &l in labels {
        if l >= k {
            return Err(Error::LabelOutOfRange { label: l, k });
        }
        counts[l] += 1;
    }
    if let Some(label) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingCluster { label });
    }
    Ok(counts)
}

/// `k x d` matrix of cluster means (row `l` is the mean of cluster `l`).
pub(crate) fn cluster_means(data: &DMatrix<f64>, labels: &[usize], counts: &[usize]) -> DMatrix<f64> {
    let mut sums = DMatrix::zeros(counts.len(), data.ncols());
    for (i, &l) in labels.iter().enumerate() {
        let mut row = sums.row_mut(l);
        row += data.row(i);
    }
    for (l, &c) in counts.iter().enumerate() {
        let mut row = sums.row_mut(l);
        row /= c as f64;
    }
    sums
}
