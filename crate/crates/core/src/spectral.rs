//! Covariance construction, spectrum extraction, matrix entropy and effective rank.
//!
//! A sentence's representation is an `N x d` matrix of token hidden states. Its
//! covariance is built from centered rows that have each been scaled to unit
//! length, so the covariance has trace one and its eigenvalues form a
//! probability distribution. Matrix entropy is the Shannon entropy (nats) of
//! that distribution and the effective rank is its exponential.
//!
//! Two routes produce the covariance spectrum. The dense route decomposes the
//! `d x d` covariance. The Gram route decomposes the `N' x N'` matrix of
//! inner products between the normalized rows, whose nonzero eigenvalues are
//! the same; it is much cheaper when a sentence has fewer tokens than the
//! hidden size.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::sum::{pairwise_sum, pairwise_sum_by};

/// Rows whose centered norm falls below this fraction of the largest centered
/// norm are dropped before normalization.
pub const ZERO_ROW_RELATIVE_TOL: f64 = 1e-12;

/// Largest allowed deviation of the clipped eigenvalue sum from one.
pub const SPECTRUM_SUM_TOL: f64 = 1e-6;

/// Token hidden states for one sentence: `rows` tokens by `dim` features,
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationSet {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl RepresentationSet {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::InvalidShape(format!(
                "representation set must be at least 1x1, got {rows}x{dim}"
            )));
        }
        if data.len() != rows * dim {
            return Err(Error::InvalidShape(format!(
                "{rows}x{dim} representation set needs {} values, got {}",
                rows * dim,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(RepresentationSet { rows, dim, data })
    }

    /// Builds a set from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        if let Some(bad) = rows.iter().position(|r| r.as_ref().len() != dim) {
            return Err(Error::InvalidShape(format!(
                "row {bad} has {} values, expected {dim}",
                rows[bad].as_ref().len()
            )));
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(rows.len(), dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// Centered rows scaled to unit length, with near-zero rows removed.
#[derive(Debug, Clone)]
pub struct NormalizedRows {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
    dropped: usize,
}

impl NormalizedRows {
    pub fn from_reps(reps: &RepresentationSet) -> Result<Self> {
        let (n, d) = (reps.rows, reps.dim);
        let mean: Vec<f64> = (0..d)
            .map(|j| pairwise_sum_by(n, |i| reps.data[i * d + j]) / n as f64)
            .collect();

        let mut centered = reps.data.clone();
        for row in centered.chunks_exact_mut(d) {
            for (v, m) in row.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        let norms: Vec<f64> = centered
            .chunks_exact(d)
            .map(|row| pairwise_sum_by(d, |j| row[j] * row[j]).sqrt())
            .collect();
        let max_norm = norms.iter().copied().fold(0.0_f64, f64::max);
        let cutoff = ZERO_ROW_RELATIVE_TOL * max_norm;

        let mut data = Vec::with_capacity(centered.len());
        for (row, &norm) in centered.chunks_exact(d).zip(&norms) {
            if norm > 0.0 && norm >= cutoff {
                data.extend(row.iter().map(|v| v / norm));
            }
        }
        let survivors = data.len() / d;
        if survivors < 2 {
            return Err(Error::DegenerateInput { rows: n, survivors });
        }
        Ok(NormalizedRows {
            rows: survivors,
            dim: d,
            data,
            dropped: n - survivors,
        })
    }

    /// Number of surviving rows, `N'`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dropped_rows(&self) -> usize {
        self.dropped
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn dot(&self, a: usize, b: usize) -> f64 {
        let (ra, rb) = (self.row(a), self.row(b));
        pairwise_sum_by(self.dim, |j| ra[j] * rb[j])
    }

    /// `(1/N') * sum_i u_i u_i^T` as a dense `d x d` matrix.
    pub fn covariance(&self) -> CovarianceMatrix {
        let (n, d) = (self.rows, self.dim);
        let scale = 1.0 / n as f64;
        let mut data = vec![0.0; d * d];
        for a in 0..d {
            for b in a..d {
                let v = pairwise_sum_by(n, |i| self.data[i * d + a] * self.data[i * d + b]) * scale;
                data[a * d + b] = v;
                data[b * d + a] = v;
            }
        }
        CovarianceMatrix {
            dim: d,
            data,
            dropped_rows: self.dropped,
        }
    }

    /// `G_ij = u_i . u_j / N'`.
    pub fn gram(&self) -> DMatrix<f64> {
        let n = self.rows;
        let scale = 1.0 / n as f64;
        let mut g = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.dot(i, j) * scale;
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }
}

/// Trace-one covariance of normalized centered token representations.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    dim: usize,
    data: Vec<f64>,
    dropped_rows: usize,
}

impl CovarianceMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major `d x d` entries.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.dim + col]
    }

    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    pub fn trace(&self) -> f64 {
        pairwise_sum_by(self.dim, |i| self.get(i, i))
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }

    /// Eigenvalues of the covariance as a probability spectrum.
    pub fn spectrum(&self) -> Result<Spectrum> {
        let eig = SymmetricEigen::new(self.to_dmatrix());
        Spectrum::from_eigenvalues(eig.eigenvalues.iter().copied(), self.dim)
    }
}

/// Builds the covariance of a sentence's token representations.
pub fn build_covariance(reps: &RepresentationSet) -> Result<CovarianceMatrix> {
    Ok(NormalizedRows::from_reps(reps)?.covariance())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumKind {
    CovarianceEigenvalues,
    SingularValues,
}

/// Non-increasing, non-negative values summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    values: Vec<f64>,
    kind: SpectrumKind,
}

impl Spectrum {
    /// Sorts descending, clips negatives, keeps the `keep` largest values and
    /// renormalizes to unit sum.
    pub(crate) fn from_eigenvalues(eigenvalues: impl Iterator<Item = f64>, keep: usize) -> Result<Self> {
        let mut values: Vec<f64> = eigenvalues.collect();
        // stable: equal eigenvalues keep solver order
        values.sort_by(|a, b| b.total_cmp(a));
        values.truncate(keep);
        for v in &mut values {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let sum = pairwise_sum(&values);
        if !sum.is_finite() || (sum - 1.0).abs() > SPECTRUM_SUM_TOL {
            return Err(Error::SpectrumDivergence { sum });
        }
        for v in &mut values {
            *v /= sum;
        }
        Ok(Spectrum {
            values,
            kind: SpectrumKind::CovarianceEigenvalues,
        })
    }

    /// Wraps an arbitrary probability vector, e.g. a hand-built test spectrum.
    /// Values are sorted descending; they must be non-negative, finite and sum
    /// to one within `1e-9`.
    pub fn from_probabilities(mut values: Vec<f64>, kind: SpectrumKind) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidShape("empty spectrum".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidShape(format!(
                "spectrum value {pos} is {}, expected finite and >= 0",
                values[pos]
            )));
        }
        let sum = pairwise_sum(&values);
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::SpectrumDivergence { sum });
        }
        values.sort_by(|a, b| b.total_cmp(a));
        Ok(Spectrum { values, kind })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> SpectrumKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Shannon entropy in nats, with `0 ln 0 = 0`.
    pub fn entropy(&self) -> f64 {
        let v = &self.values;
        let h = -pairwise_sum_by(v.len(), |i| {
            let p = v[i];
            if p > 0.0 {
                p * p.ln()
            } else {
                0.0
            }
        });
        // -sum p ln p is a sum of non-negative terms; rounding may leave -0.0
        h.max(0.0)
    }

    /// `exp(entropy)`.
    pub fn erank(&self) -> f64 {
        self.entropy().exp()
    }
}

/// Which decomposition produces a representation set's covariance spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpectrumRoute {
    /// Gram when `N' < d`, dense otherwise.
    #[default]
    Auto,
    Dense,
    Gram,
}

/// Covariance spectrum of a representation set together with the number of
/// rows dropped during centering.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpectrum {
    pub spectrum: Spectrum,
    pub rows_used: usize,
    pub dropped_rows: usize,
}

/// Spectrum of a representation set's covariance by the chosen route.
pub fn covariance_spectrum(reps: &RepresentationSet, route: SpectrumRoute) -> Result<CovarianceSpectrum> {
    let rows = NormalizedRows::from_reps(reps)?;
    let (n, d) = (rows.rows(), rows.dim());
    let use_gram = match route {
        SpectrumRoute::Auto => n < d,
        SpectrumRoute::Dense => false,
        SpectrumRoute::Gram => true,
    };
    let spectrum = if use_gram {
        let eig = SymmetricEigen::new(rows.gram());
        Spectrum::from_eigenvalues(eig.eigenvalues.iter().copied(), n.min(d))?
    } else {
        rows.covariance().spectrum()?
    };
    Ok(CovarianceSpectrum {
        spectrum,
        rows_used: n,
        dropped_rows: rows.dropped_rows(),
    })
}

/// Matrix entropy (nats) of a spectrum.
pub fn matrix_entropy(spectrum: &Spectrum) -> f64 {
    spectrum.entropy()
}

/// Effective rank of a trace-one covariance: `exp(H)`.
pub fn erank_of_covariance(spectrum: &Spectrum) -> f64 {
    spectrum.erank()
}

/// Normalized singular-value spectrum of an arbitrary non-zero matrix, of
/// length `min(rows, cols)`.
pub fn singular_value_spectrum(matrix: &DMatrix<f64>) -> Result<Spectrum> {
    let (r, c) = matrix.shape();
    if r == 0 || c == 0 {
        return Err(Error::InvalidShape(format!("empty {r}x{c} matrix")));
    }
    for i in 0..r {
        for j in 0..c {
            if !matrix[(i, j)].is_finite() {
                return Err(Error::NonFiniteInput { row: i, col: j });
            }
        }
    }
    if matrix.iter().all(|v| *v == 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let svd = matrix.clone().svd(false, false);
    let mut sigma: Vec<f64> = svd.singular_values.iter().map(|s| s.max(0.0)).collect();
    sigma.sort_by(|a, b| b.total_cmp(a));
    let total = pairwise_sum(&sigma);
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::ZeroMatrix);
    }
    for s in &mut sigma {
        *s /= total;
    }
    Ok(Spectrum {
        values: sigma,
        kind: SpectrumKind::SingularValues,
    })
}

/// Effective rank of any non-zero matrix from its normalized singular values.
pub fn erank_general(matrix: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_value_spectrum(matrix)?.erank())
}
