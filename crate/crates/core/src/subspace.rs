//! Principal-component and Fisher subspaces, and the similarity coefficient
//! between two subspaces (mean squared cosine of their principal angles).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrixcore::{column_means, sym_eig, SymMatrix};
use crate::mixture::LabeledDataset;
use crate::structure::fisher_of;

/// Columns whose unit-normalised smallest singular value is at or below this
/// are rejected as linearly dependent.
pub const INDEPENDENCE_TOL: f64 = 1e-10;
/// Up to this value a basis is accepted but flagged as ill-conditioned.
pub const CONDITIONING_WARN: f64 = 1e-6;
/// Relative gap below which eigenvalues `m` and `m + 1` count as tied.
pub const EIGENGAP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum SubspaceWarning {
    /// The `m`-th and `(m+1)`-th eigenvalues coincide, so the subspace is not
    /// uniquely determined.
    AmbiguousEigengap { m: usize, lower: f64, upper: f64 },
    IllConditioned { min_singular_value: f64 },
}

/// A `d x m` matrix of linearly independent columns, `m < d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    columns: DMatrix<f64>,
    warnings: Vec<SubspaceWarning>,
}

impl SubspaceBasis {
    /// Independence is judged on unit-normalised columns so the check does
    /// not depend on column scale.
    pub fn new(columns: DMatrix<f64>) -> Result<Self> {
        let (d, m) = columns.shape();
        if m == 0 || m >= d {
            return Err(Error::Shape(format!(
                "subspace basis must have 1 <= m < d columns, got {d}x{m}"
            )));
        }
        let mut unit = columns.clone();
        for mut col in unit.column_iter_mut() {
            let norm = col.norm();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::InvalidParameter("basis has a zero or non-finite column".into()));
            }
            col /= norm;
        }
        let min_sv = unit
            .singular_values()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_sv <= INDEPENDENCE_TOL {
            return Err(Error::InvalidParameter(format!(
                "basis columns are linearly dependent (smallest singular value {min_sv:e})"
            )));
        }
        let mut warnings = Vec::new();
        if min_sv <= CONDITIONING_WARN {
            warnings.push(SubspaceWarning::IllConditioned {
                min_singular_value: min_sv,
            });
        }
        Ok(SubspaceBasis { columns, warnings })
    }

    pub fn ambient_dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn dim(&self) -> usize {
        self.columns.ncols()
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn warnings(&self) -> &[SubspaceWarning] {
        &self.warnings
    }

    /// Orthonormal basis of the same subspace.
    pub fn orthonormal(&self) -> DMatrix<f64> {
        self.columns.clone().qr().q()
    }

    /// `Q * columns`, for rotating a subspace along with its data.
    pub fn transformed(&self, q: &DMatrix<f64>) -> Result<SubspaceBasis> {
        SubspaceBasis::new(q * &self.columns)
    }
}

/// Top-`m` eigenvectors of `data^T data` for centered `data`.
pub fn pc_subspace(data: &DMatrix<f64>, m: usize) -> Result<SubspaceBasis> {
    let d = data.ncols();
    if m == 0 || m >= d {
        return Err(Error::InvalidParameter(format!(
            "principal subspace needs 1 <= m < d, got m = {m}, d = {d}"
        )));
    }
    let scale = data.amax().max(1.0);
    if let Some((column, &mean)) = column_means(data)
        .iter()
        .enumerate()
        .find(|(_, v)| v.abs() > 1e-8 * scale)
    {
        return Err(Error::NotCentered { column, mean });
    }
    let scatter = SymMatrix::symmetrize(data.transpose() * data)?;
    let eig = sym_eig(&scatter);
    let mut basis = SubspaceBasis::new(eig.leading_vectors(m))?;
    let (upper, lower) = (eig.values[m - 1], eig.values[m]);
    if (upper - lower).abs() <= EIGENGAP_TOL * eig.values[0].abs() {
        basis.warnings.push(SubspaceWarning::AmbiguousEigengap { m, lower, upper });
    }
    Ok(basis)
}

/// Span of the `k - 1` leading generalized eigenvectors of `(B, T)`.
pub fn fisher_subspace(data: &LabeledDataset) -> Result<SubspaceBasis> {
    Ok(fisher_of(data)?.fisher_basis)
}

/// Mean squared cosine of the principal angles between `span(v)` and
/// `span(a)`: both bases are orthonormalised, and the singular values of
/// `Q_v^T Q_a` are the cosines.
pub fn sss(v: &SubspaceBasis, a: &SubspaceBasis) -> Result<f64> {
    if v.ambient_dim() != a.ambient_dim() || v.dim() != a.dim() {
        return Err(Error::Shape(format!(
            "subspaces must share shape, got {}x{} and {}x{}",
            v.ambient_dim(),
            v.dim(),
            a.ambient_dim(),
            a.dim()
        )));
    }
    let cross = v.orthonormal().transpose() * a.orthonormal();
    let sv = cross.singular_values();
    Ok(sv.iter().map(|s| s.min(1.0).powi(2)).sum::<f64>() / sv.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrixcore::apply_centering;
    use crate::mixture::{make_separation_family, random_orthonormal, sample, seeded_rng, MixtureSpec};
    use crate::transform::isotropize;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::Rng;

    fn basis(d: usize, cols: &[&[f64]]) -> SubspaceBasis {
        let flat: Vec<f64> = cols.iter().flat_map(|c| c.iter().copied()).collect();
        SubspaceBasis::new(DMatrix::from_column_slice(d, cols.len(), &flat)).unwrap()
    }

    /// Squared canonical correlations from the eigenproblem
    /// `(V^T V)^{-1} V^T A (A^T A)^{-1} A^T V u = l^2 u`, solved as the
    /// symmetric-definite pair `(V^T A (A^T A)^{-1} A^T V, V^T V)`.
    fn sss_eigen_route(v: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
        let ata_inv = (a.transpose() * a).try_inverse().unwrap();
        let k = SymMatrix::symmetrize(v.transpose() * a * ata_inv * a.transpose() * v).unwrap();
        let m = SymMatrix::symmetrize(v.transpose() * v).unwrap();
        let e = crate::matrixcore::gen_eig(&k, &m).unwrap();
        e.values.iter().sum::<f64>() / e.dim() as f64
    }

    fn random_basis(d: usize, m: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        DMatrix::from_fn(d, m, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn closed_form_cases() {
        let e1 = basis(3, &[&[1.0, 0.0, 0.0]]);
        let e2 = basis(3, &[&[0.0, 1.0, 0.0]]);
        assert_abs_diff_eq!(sss(&e1, &e1).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sss(&e1, &e2).unwrap(), 0.0, epsilon = 1e-12);
        let t = std::f64::consts::FRAC_PI_6;
        let p1 = basis(2, &[&[1.0, 0.0]]);
        let pt = basis(2, &[&[t.cos(), t.sin()]]);
        assert_abs_diff_eq!(sss(&p1, &pt).unwrap(), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let a = basis(3, &[&[1.0, 0.0, 0.0]]);
        let b = basis(4, &[&[1.0, 0.0, 0.0, 0.0]]);
        let c = basis(3, &[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        assert!(matches!(sss(&a, &b), Err(Error::Shape(_))));
        assert!(matches!(sss(&a, &c), Err(Error::Shape(_))));
    }

    #[test]
    fn basis_validation() {
        assert!(SubspaceBasis::new(DMatrix::zeros(3, 0)).is_err());
        assert!(SubspaceBasis::new(DMatrix::identity(3, 3)).is_err());
        let dependent = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(SubspaceBasis::new(dependent).is_err());
        let near = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1e-8, 0.0]);
        let b = SubspaceBasis::new(near).unwrap();
        assert!(matches!(b.warnings(), [SubspaceWarning::IllConditioned { .. }]));
        let tiny = DMatrix::from_column_slice(3, 2, &[1e-9, 0.0, 0.0, 0.0, 1e-9, 0.0]);
        assert!(SubspaceBasis::new(tiny).unwrap().warnings().is_empty());
    }

    #[test]
    fn eigen_route_agrees() {
        let mut rng = seeded_rng(4);
        for _ in 0..100 {
            let d = rng.random_range(3..9);
            let m = rng.random_range(1..d);
            let v = random_basis(d, m, &mut rng);
            let a = random_basis(d, m, &mut rng);
            let svd_route = sss(&SubspaceBasis::new(v.clone()).unwrap(), &SubspaceBasis::new(a.clone()).unwrap()).unwrap();
            assert_abs_diff_eq!(svd_route, sss_eigen_route(&v, &a), epsilon = 1e-8);
        }
    }

    #[test]
    fn pc_subspace_recovers_known_covariance() {
        let spec = MixtureSpec::new(
            vec![DVector::zeros(3)],
            vec![SymMatrix::from_diagonal(&[3.0, 2.0, 1.0])],
        )
        .unwrap();
        let x = sample(&spec, 100_000, 1).unwrap();
        let pc = pc_subspace(&apply_centering(x.data()), 2).unwrap();
        let target = basis(3, &[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        assert!(sss(&pc, &target).unwrap() > 0.999);
        assert!(pc.warnings().is_empty());
    }

    #[test]
    fn isotropic_data_has_ambiguous_principal_subspace() {
        let spec = make_separation_family(4, 2, 1.0, 1.0, 2).unwrap();
        let x = sample(&spec, 50, 3).unwrap();
        let y = isotropize(&x).unwrap();
        let pc = pc_subspace(y.data(), 1).unwrap();
        assert!(pc
            .warnings()
            .iter()
            .any(|w| matches!(w, SubspaceWarning::AmbiguousEigengap { m: 1, .. })));
    }

    #[test]
    fn pc_subspace_requires_centered_data() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 3.0, 3.0, 5.0]);
        assert!(matches!(pc_subspace(&x, 1), Err(Error::NotCentered { column: 0, .. })));
        assert!(pc_subspace(&apply_centering(&x), 2).is_err());
    }

    #[test]
    fn pc_subspace_is_rotation_equivariant() {
        let spec = make_separation_family(5, 3, 3.0, 1.0, 5).unwrap();
        let x = apply_centering(sample(&spec, 100, 6).unwrap().data());
        let q = random_orthonormal(5, 5, &mut seeded_rng(7));
        let rotated = &x * q.transpose();
        let a = pc_subspace(&x, 2).unwrap().transformed(&q).unwrap();
        let b = pc_subspace(&rotated, 2).unwrap();
        assert_abs_diff_eq!(sss(&a, &b).unwrap(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn fisher_subspace_of_point_clusters() {
        // clusters have no spread along e1, so e1 separates them perfectly
        let mut rng = seeded_rng(8);
        let n = 20;
        let mut data = DMatrix::zeros(2 * n, 3);
        let mut labels = Vec::new();
        for i in 0..2 * n {
            let l = i / n;
            data[(i, 0)] = if l == 0 { -1.0 } else { 1.0 };
            data[(i, 1)] = rng.random_range(-1.0..1.0);
            data[(i, 2)] = rng.random_range(-1.0..1.0);
            labels.push(l);
        }
        let ds = LabeledDataset::new(data, labels, 2).unwrap();
        let f = fisher_subspace(&ds).unwrap();
        assert_abs_diff_eq!(sss(&f, &basis(3, &[&[1.0, 0.0, 0.0]])).unwrap(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn fisher_subspace_equals_intermean_subspace_in_isotropic_position() {
        let spec = make_separation_family(6, 3, 2.0, 1.0, 9).unwrap();
        let x = sample(&spec, 200, 10).unwrap();
        let y = isotropize(&x).unwrap();
        let f = fisher_subspace(y.dataset()).unwrap();
        let counts = crate::matrixcore::cluster_counts(y.labels(), 3).unwrap();
        let means = crate::matrixcore::cluster_means(y.data(), y.labels(), &counts);
        // grand mean is zero; two independent mean deviations span the intermean space
        let intermean = DMatrix::from_columns(&[means.row(0).transpose(), means.row(1).transpose()]);
        let s = sss(&f, &SubspaceBasis::new(intermean).unwrap()).unwrap();
        assert!(s > 1.0 - 1e-6, "{s}");
    }

    #[test]
    fn fisher_subspace_ignores_row_order_within_clusters() {
        let spec = make_separation_family(4, 3, 2.0, 1.0, 11).unwrap();
        let x = sample(&spec, 30, 12).unwrap();
        let n = x.n();
        let perm: Vec<usize> = (0..n).rev().collect();
        let data = DMatrix::from_fn(n, x.d(), |i, j| x.data()[(perm[i], j)]);
        let labels = perm.iter().map(|&i| x.labels()[i]).collect();
        let shuffled = LabeledDataset::new(data, labels, 3).unwrap();
        let a = fisher_subspace(&x).unwrap();
        let b = fisher_subspace(&shuffled).unwrap();
        assert_abs_diff_eq!(sss(&a, &b).unwrap(), 1.0, epsilon = 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn range_and_symmetry(seed in any::<u64>(), d in 2usize..8) {
            let mut rng = seeded_rng(seed);
            let m = rng.random_range(1..d);
            let v = SubspaceBasis::new(random_basis(d, m, &mut rng)).unwrap();
            let a = SubspaceBasis::new(random_basis(d, m, &mut rng)).unwrap();
            let s = sss(&v, &a).unwrap();
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&s));
            prop_assert!((s - sss(&a, &v).unwrap()).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn invariant_to_change_of_basis(seed in any::<u64>()) {
            let mut rng = seeded_rng(seed);
            let (d, m) = (6, 3);
            let v = random_basis(d, m, &mut rng);
            let a = random_basis(d, m, &mut rng);
            let g = random_basis(m, m, &mut rng) + DMatrix::identity(m, m) * 2.0;
            let base = sss(&SubspaceBasis::new(v.clone()).unwrap(), &SubspaceBasis::new(a.clone()).unwrap()).unwrap();
            let mixed = sss(&SubspaceBasis::new(&v * &g).unwrap(), &SubspaceBasis::new(a.clone()).unwrap()).unwrap();
            let mixed2 = sss(&SubspaceBasis::new(v).unwrap(), &SubspaceBasis::new(&a * g).unwrap()).unwrap();
            prop_assert!((base - mixed).abs() < 1e-10);
            prop_assert!((base - mixed2).abs() < 1e-10);
        }
    }
}
