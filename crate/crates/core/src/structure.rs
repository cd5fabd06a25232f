//! Scatter matrices, the Fisher eigenproblem and structure distinctness.
//!
//! Distinctness of a labelled dataset is the mean of the `k - 1` largest
//! eigenvalues of `B v = lambda T v`, where `T` is the total scatter and `B`
//! the between-cluster scatter. The eigenvalues lie in `[0, 1]` and are
//! invariant to any invertible linear change of coordinates.
//!
//! This module also carries the machinery for checking how much the weighting
//! step moves distinctness: a first-order eigenvalue predictor, the
//! closed-form bound on the change, and a Monte-Carlo overlap coefficient for
//! two-component mixtures.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrixcore::{apply_centering, cluster_counts, cluster_means, column_means, gen_eig, hat_matrix, EigenSolution, SymMatrix};
use crate::mixture::{derive_seed, seeded_rng, LabeledDataset, MixtureSpec};
use crate::subspace::SubspaceBasis;
use crate::transform::{squared_row_norms, IsotropicDataset, PipelineOutput};

/// Total and between-cluster scatter of a labelled dataset.
#[derive(Debug, Clone)]
pub struct ScatterPair {
    pub total: SymMatrix,
    pub between: SymMatrix,
}

impl ScatterPair {
    /// `W = T - B`.
    pub fn within(&self) -> SymMatrix {
        SymMatrix::symmetrize(self.total.as_matrix() - self.between.as_matrix()).expect("square")
    }
}

/// `T = X_0^T X_0` and `B = sum_l n_l (m_l - m)(m_l - m)^T`.
pub fn scatter_matrices(data: &LabeledDataset) -> Result<ScatterPair> {
    let x = data.data();
    let counts = cluster_counts(data.labels(), data.k())?;
    let centered = apply_centering(x);
    let total = SymMatrix::symmetrize(centered.transpose() * &centered)?;
    let grand = column_means(x);
    let means = cluster_means(x, data.labels(), &counts);
    let d = x.ncols();
    let mut between = DMatrix::zeros(d, d);
    for (l, &nl) in counts.iter().enumerate() {
        let dev = means.row(l).transpose() - &grand;
        between += &dev * dev.transpose() * nl as f64;
    }
    Ok(ScatterPair {
        total,
        between: SymMatrix::symmetrize(between)?,
    })
}

#[derive(Debug, Clone)]
pub struct FisherSolution {
    pub eigen: EigenSolution,
    /// Mean of the `k - 1` largest eigenvalues, clamped to `[0, 1]`.
    pub distinctness: f64,
    pub fisher_basis: SubspaceBasis,
    pub k: usize,
}

impl FisherSolution {
    /// Smallest of the `k - 1` leading eigenvalues.
    pub fn min_nonzero_eigenvalue(&self) -> f64 {
        self.eigen.values[..self.k - 1]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Solves `B v = lambda T v` and summarises the `k - 1` leading pairs.
///
/// The mean always divides by `k - 1`, so numerically zero eigenvalues
/// among the leading ones pull distinctness down.
pub fn fisher_solve(s: &ScatterPair, k: usize) -> Result<FisherSolution> {
    let d = s.total.dim();
    if k < 2 || k > d {
        return Err(Error::InvalidParameter(format!(
            "Fisher subspace needs 2 <= k <= d, got k = {k}, d = {d}"
        )));
    }
    let eigen = gen_eig(&s.between, &s.total)?;
    let m = k - 1;
    let mean = eigen.values[..m].iter().sum::<f64>() / m as f64;
    let fisher_basis = SubspaceBasis::new(eigen.leading_vectors(m))?;
    Ok(FisherSolution {
        eigen,
        distinctness: mean.clamp(0.0, 1.0),
        fisher_basis,
        k,
    })
}

/// Fisher eigenvalues straight from a labelled dataset.
pub fn fisher_of(data: &LabeledDataset) -> Result<FisherSolution> {
    fisher_solve(&scatter_matrices(data)?, data.k())
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

pub const MIN_MC_SAMPLES: usize = 10_000;
pub const DEFAULT_MC_SAMPLES: usize = 200_000;
const MC_BATCH: usize = 10_000;

/// `1 - integral min(f_1/2, f_2/2)` for a two-component mixture.
///
/// Points are drawn from the mixture `g` itself and `min(f_1/2, f_2/2) / g`
/// is averaged; the ratio lies in `[0, 1/2]`, so the estimator's variance is
/// bounded. Work is split into fixed-size batches with their own derived
/// seeds, and partial sums are combined in batch order, so the result does
/// not depend on the number of threads.
pub fn sdist_overlap(spec: &MixtureSpec, mc_samples: usize, seed: u64) -> Result<OverlapEstimate> {
    if spec.k() != 2 {
        return Err(Error::UnsupportedComponentCount(spec.k()));
    }
    if mc_samples < MIN_MC_SAMPLES {
        return Err(Error::InvalidParameter(format!(
            "overlap estimate needs at least {MIN_MC_SAMPLES} samples, got {mc_samples}"
        )));
    }
    let batches = mc_samples.div_ceil(MC_BATCH);
    let partial: Vec<(f64, f64)> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let count = MC_BATCH.min(mc_samples - b * MC_BATCH);
            let mut rng = seeded_rng(derive_seed(seed, &[b as u64]));
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..count {
                let l = rng.random_range(0..2usize);
                let x = spec.draw_component(l, &mut rng);
                let gap = (spec.component_ln_pdf(0, &x) - spec.component_ln_pdf(1, &x)).abs();
                // min(a, b) / (a + b) for log-densities differing by `gap`
                let r = 1.0 / (1.0 + gap.exp());
                sum += r;
                sum_sq += r * r;
            }
            (sum, sum_sq)
        })
        .collect();
    let (sum, sum_sq) = partial
        .iter()
        .fold((0.0, 0.0), |(a, b), (s, q)| (a + s, b + q));
    let n = mc_samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(OverlapEstimate {
        value: (1.0 - mean).clamp(0.0, 1.0),
        std_error: (var / n).sqrt(),
        samples: mc_samples,
    })
}

/// A solved generalized problem `K0 a = lambda M0 a` to be perturbed.
#[derive(Debug, Clone)]
pub struct PerturbationBase {
    pub k0: SymMatrix,
    pub m0: SymMatrix,
    pub solution: EigenSolution,
}

impl PerturbationBase {
    pub fn solve(k0: SymMatrix, m0: SymMatrix) -> Result<Self> {
        let solution = gen_eig(&k0, &m0)?;
        Ok(PerturbationBase { k0, m0, solution })
    }
}

/// First-order eigenvalues of `(K0 + dK, M0 + dM)`:
/// `lambda_j + a_j^T (dK - lambda_j dM) a_j` with `M0`-orthonormal `a_j`.
pub fn perturb_eigs_first_order(base: &PerturbationBase, delta_k: &SymMatrix, delta_m: &SymMatrix) -> Result<Vec<f64>> {
    let d = base.k0.dim();
    if delta_k.dim() != d || delta_m.dim() != d {
        return Err(Error::Shape(format!(
            "perturbations must be {d}x{d}, got {} and {}",
            delta_k.dim(),
            delta_m.dim()
        )));
    }
    let sol = &base.solution;
    Ok(sol
        .values
        .iter()
        .enumerate()
        .map(|(j, &lambda)| {
            let a = sol.vectors.column(j);
            let shift = delta_k.as_matrix() - delta_m.as_matrix() * lambda;
            lambda + (a.transpose() * shift * a)[(0, 0)]
        })
        .collect())
}

/// Linearised changes of the scatter matrices caused by weighting data in
/// isotropic position, with `Delta = diag(||y_i||^2) / (2 alpha)`:
/// `dT = -2 Y^T Delta Y` and `dB = -(Y^T H Delta Y + Y^T Delta H Y)`.
pub fn linearized_scatter_deltas(y: &IsotropicDataset, alpha: f64) -> Result<(SymMatrix, SymMatrix)> {
    let yd = y.data();
    let scale = squared_row_norms(yd) / (2.0 * alpha);
    let mut delta_y = yd.clone();
    for (mut row, s) in delta_y.row_iter_mut().zip(scale.iter()) {
        row *= *s;
    }
    let hat = hat_matrix(y.labels(), y.dataset().k())?;
    let hy = hat.apply(yd)?;
    let delta_t = SymMatrix::symmetrize(yd.transpose() * &delta_y * -2.0)?;
    let cross = hy.transpose() * &delta_y;
    let delta_b = SymMatrix::symmetrize(-(&cross + cross.transpose()))?;
    Ok((delta_t, delta_b))
}

/// Upper bound on `|distinctness(Z) - distinctness(X)|`:
/// `(1 / sqrt(n)) (d / alpha) (lambda_bar + sqrt(k))`.
pub fn distinctness_bound(n: usize, d: usize, k: usize, alpha: f64, lambda_bar_x: f64) -> f64 {
    (1.0 / (n as f64).sqrt()) * (d as f64 / alpha) * (lambda_bar_x + (k as f64).sqrt())
}

/// Outcome of comparing distinctness before and after weighting.
#[derive(Debug, Clone, Serialize)]
pub struct PerturbationReport {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub alpha: f64,
    pub lambda_x: f64,
    pub lambda_z: f64,
    pub observed_delta: f64,
    pub bound_rhs: f64,
    pub bound_satisfied: bool,
    /// First-order predictions of all Fisher eigenvalues of `Z_0`.
    pub predicted_values: Vec<f64>,
    /// Mean of the `k - 1` leading predicted eigenvalues.
    pub predicted_lambda_z: f64,
    /// Population standard deviation of `||y_i||^2`.
    pub empirical_sd_norm: f64,
    /// Whether `empirical_sd_norm <= d / n`, the premise of the bound.
    pub sd_premise_holds: bool,
}

impl PerturbationReport {
    pub const CSV_HEADER: [&'static str; 9] = [
        "n", "d", "k", "alpha", "lambda_x", "lambda_z", "delta", "bound", "satisfied",
    ];

    pub fn csv_record(&self) -> [String; 9] {
        [
            self.n.to_string(),
            self.d.to_string(),
            self.k.to_string(),
            self.alpha.to_string(),
            self.lambda_x.to_string(),
            self.lambda_z.to_string(),
            self.observed_delta.to_string(),
            self.bound_rhs.to_string(),
            self.bound_satisfied.to_string(),
        ]
    }

    /// Header plus one row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::CSV_HEADER)?;
        w.write_record(self.csv_record())?;
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Population standard deviation of the squared row norms.
pub fn squared_norm_sd(y: &DMatrix<f64>) -> f64 {
    let s: DVector<f64> = squared_row_norms(y);
    let mean = s.mean();
    (s.map(|v| (v - mean).powi(2)).sum() / s.len() as f64).sqrt()
}

/// Measures the change in distinctness caused by the pipeline that produced
/// `out` from `x`. A bound violation is recorded in the report, never
/// raised.
pub fn distinctness_delta_check(x: &LabeledDataset, out: &PipelineOutput) -> Result<PerturbationReport> {
    if x.labels() != out.z0.labels() || x.labels() != out.y.labels() {
        return Err(Error::Shape("pipeline output labels differ from the input".into()));
    }
    let (n, d, k) = (x.n(), x.d(), x.k());
    let alpha = out.w.alpha;
    let lambda_x = fisher_of(x)?.distinctness;
    let lambda_z = fisher_of(&out.z0)?.distinctness;

    let base_scatter = scatter_matrices(out.y.dataset())?;
    let base = PerturbationBase::solve(base_scatter.between, base_scatter.total)?;
    let (delta_t, delta_b) = linearized_scatter_deltas(&out.y, alpha)?;
    let predicted_values = perturb_eigs_first_order(&base, &delta_b, &delta_t)?;
    let mut leading = predicted_values.clone();
    leading.sort_by(|a, b| b.total_cmp(a));
    let predicted_lambda_z = leading[..k - 1].iter().sum::<f64>() / (k - 1) as f64;

    let observed_delta = (lambda_z - lambda_x).abs();
    let bound_rhs = distinctness_bound(n, d, k, alpha, lambda_x);
    let empirical_sd_norm = squared_norm_sd(out.y.data());
    let sd_premise_holds = empirical_sd_norm <= d as f64 / n as f64;
    let bound_satisfied = observed_delta <= bound_rhs;
    if !bound_satisfied {
        log::warn!(
            "distinctness moved by {observed_delta:.3e} > bound {bound_rhs:.3e} (n={n}, d={d}, k={k}, sd(|y|^2)={empirical_sd_norm:.3e} vs d/n={:.3e})",
            d as f64 / n as f64
        );
    }
    Ok(PerturbationReport {
        n,
        d,
        k,
        alpha,
        lambda_x,
        lambda_z,
        observed_delta,
        bound_rhs,
        bound_satisfied,
        predicted_values,
        predicted_lambda_z,
        empirical_sd_norm,
        sd_premise_holds,
    })
}
