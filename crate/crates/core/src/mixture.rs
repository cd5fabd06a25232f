//! Equal-weight Gaussian mixtures: parameters, exact moments and seeded
//! stratified sampling.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrixcore::{cluster_counts, SymMatrix};

/// The generator behind every seeded draw in the crate.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a master seed with stream indices (splitmix64 finalizer per step) so
/// that independent streams can be handed to parallel workers.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(master.wrapping_add(0x9e37_79b9_7f4a_7c15)), |acc, &p| {
        mix(acc ^ mix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)))
    })
}

/// Minimum ratio of observations to dimension accepted at generation time.
pub const MIN_ROWS_PER_DIM: usize = 10;

/// A mixture of `k` Gaussians in `d` dimensions with mixing factors `1/k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureSpecDoc", into = "MixtureSpecDoc")]
pub struct MixtureSpec {
    means: Vec<DVector<f64>>,
    covariances: Vec<SymMatrix>,
    chol: Vec<DMatrix<f64>>,
}

/// On-disk form: plain arrays of arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MixtureSpecDoc {
    means: Vec<Vec<f64>>,
    covariances: Vec<Vec<Vec<f64>>>,
    /// Written for readers; on input it may be omitted but must equal `1/k` if present.
    #[serde(default)]
    mixing: Vec<f64>,
}

impl TryFrom<MixtureSpecDoc> for MixtureSpec {
    type Error = Error;

    fn try_from(doc: MixtureSpecDoc) -> Result<Self> {
        let k = doc.means.len();
        if !doc.mixing.is_empty()
            && (doc.mixing.len() != k
                || doc.mixing.iter().any(|p| (p - 1.0 / k as f64).abs() > 1e-12))
        {
            return Err(Error::InvalidParameter(
                "only equal mixing factors 1/k are supported".into(),
            ));
        }
        let means = doc
            .means
            .into_iter()
            .map(DVector::from_vec)
            .collect::<Vec<_>>();
        let covariances = doc
            .covariances
            .into_iter()
            .map(|rows| {
                let d = rows.len();
                if rows.iter().any(|r| r.len() != d) {
                    return Err(Error::Shape("covariance rows must all have length d".into()));
                }
                let flat: Vec<f64> = rows.into_iter().flatten().collect();
                SymMatrix::new(DMatrix::from_row_slice(d, d, &flat))
            })
            .collect::<Result<Vec<_>>>()?;
        MixtureSpec::new(means, covariances)
    }
}

impl From<MixtureSpec> for MixtureSpecDoc {
    fn from(spec: MixtureSpec) -> Self {
        let k = spec.k();
        MixtureSpecDoc {
            means: spec.means.iter().map(|m| m.iter().copied().collect()).collect(),
            covariances: spec
                .covariances
                .iter()
                .map(|c| {
                    c.as_matrix()
                        .row_iter()
                        .map(|r| r.iter().copied().collect())
                        .collect()
                })
                .collect(),
            mixing: vec![1.0 / k as f64; k],
        }
    }
}

impl MixtureSpec {
    pub fn new(means: Vec<DVector<f64>>, covariances: Vec<SymMatrix>) -> Result<Self> {
        let k = means.len();
        if k == 0 {
            return Err(Error::InvalidParameter("mixture needs at least one component".into()));
        }
        if covariances.len() != k {
            return Err(Error::Shape(format!(
                "{k} means but {} covariances",
                covariances.len()
            )));
        }
        let d = means[0].len();
        if means.iter().any(|m| m.len() != d) || covariances.iter().any(|c| c.dim() != d) {
            return Err(Error::Shape("all means and covariances must share dimension d".into()));
        }
        if d < k {
            return Err(Error::InvalidParameter(format!(
                "dimension d = {d} must exceed k - 1 = {}",
                k - 1
            )));
        }
        let chol = covariances
            .iter()
            .enumerate()
            .map(|(component, c)| {
                c.as_matrix()
                    .clone()
                    .cholesky()
                    .map(|ch| ch.l())
                    .ok_or(Error::Cholesky { component })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MixtureSpec {
            means,
            covariances,
            chol,
        })
    }

    pub fn d(&self) -> usize {
        self.means[0].len()
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn mixing(&self) -> f64 {
        1.0 / self.k() as f64
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[SymMatrix] {
        &self.covariances
    }

    /// Lower Cholesky factor of component `l`'s covariance.
    pub fn cholesky_factor(&self, l: usize) -> &DMatrix<f64> {
        &self.chol[l]
    }

    /// Draws one point from component `l`.
    pub fn draw_component(&self, l: usize, rng: &mut impl Rng) -> DVector<f64> {
        let z = DVector::from_iterator(self.d(), (0..self.d()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        &self.means[l] + &self.chol[l] * z
    }

    /// Log-density of component `l` at `x`.
    pub fn component_ln_pdf(&self, l: usize, x: &DVector<f64>) -> f64 {
        let d = self.d() as f64;
        let lower = &self.chol[l];
        let diff = x - &self.means[l];
        let z = lower
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        let ln_det_half: f64 = lower.diagonal().iter().map(|v| v.ln()).sum();
        -0.5 * z.norm_squared() - ln_det_half - 0.5 * d * (2.0 * std::f64::consts::PI).ln()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// An `n x d` observation matrix with 0-based cluster labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    data: DMatrix<f64>,
    labels: Vec<usize>,
    k: usize,
}

impl LabeledDataset {
    /// Requires `labels.len() == data.nrows()` and every cluster in `0..k` present.
    pub fn new(data: DMatrix<f64>, labels: Vec<usize>, k: usize) -> Result<Self> {
        if labels.len() != data.nrows() {
            return Err(Error::Shape(format!(
                "{} labels for {} rows",
                labels.len(),
                data.nrows()
            )));
        }
        cluster_counts(&labels, k)?;
        Ok(LabeledDataset { data, labels, k })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn per_cluster_n(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Same labels, new observations.
    pub fn with_data(&self, data: DMatrix<f64>) -> Result<Self> {
        LabeledDataset::new(data, self.labels.clone(), self.k)
    }

    /// Writes `x1,...,xd,label` with 1-based labels.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.d()).map(|j| format!("x{j}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for (i, row) in self.data.row_iter().enumerate() {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push((self.labels[i] + 1).to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// Reads the format produced by [`write_csv`](Self::write_csv). `k` is the
    /// largest label present.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let d = header.len().checked_sub(1).filter(|&d| d > 0).ok_or_else(|| {
            Error::Parse("dataset header must be x1,...,xd,label".into())
        })?;
        if &header[d] != "label" {
            return Err(Error::Parse(format!(
                "last column must be `label`, found `{}`",
                &header[d]
            )));
        }
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != d + 1 {
                return Err(Error::Parse(format!("row {} has {} fields", line + 1, rec.len())));
            }
            for field in rec.iter().take(d) {
                values.push(field.trim().parse::<f64>().map_err(|e| {
                    Error::Parse(format!("row {}: bad value `{field}`: {e}", line + 1))
                })?);
            }
            let label: usize = rec[d].trim().parse().map_err(|e| {
                Error::Parse(format!("row {}: bad label `{}`: {e}", line + 1, &rec[d]))
            })?;
            if label == 0 {
                return Err(Error::Parse(format!("row {}: labels are 1-based", line + 1)));
            }
            labels.push(label - 1);
        }
        let n = labels.len();
        let k = labels.iter().max().map_or(0, |m| m + 1);
        LabeledDataset::new(DMatrix::from_row_slice(n, d, &values), labels, k)
    }
}

/// Population mean and covariance of an equal-weight mixture, split into
/// its within- and between-component parts.
#[derive(Debug, Clone)]
pub struct MixtureMoments {
    pub grand_mean: DVector<f64>,
    pub grand_cov: SymMatrix,
    pub within: SymMatrix,
    pub between: SymMatrix,
}

pub fn population_moments(spec: &MixtureSpec) -> MixtureMoments {
    let d = spec.d();
    let w = spec.mixing();
    let grand_mean = spec
        .means()
        .iter()
        .fold(DVector::zeros(d), |acc, m| acc + m)
        * w;
    let within = spec
        .covariances()
        .iter()
        .fold(DMatrix::zeros(d, d), |acc, c| acc + c.as_matrix())
        * w;
    let between = spec.means().iter().fold(DMatrix::zeros(d, d), |acc, m| {
        let dev = m - &grand_mean;
        acc + &dev * dev.transpose()
    }) * w;
    let within = SymMatrix::symmetrize(within).expect("square");
    let between = SymMatrix::symmetrize(between).expect("square");
    let grand_cov = within.add(&between).expect("same size");
    MixtureMoments {
        grand_mean,
        grand_cov,
        within,
        between,
    }
}

/// Draws exactly `n_per_cluster` rows from every component, cluster-major.
///
/// Each row is `mu_l + L_l z` with `L_l` the Cholesky factor of `Sigma_l`
/// and `z` i.i.d. standard normal. Identical seeds give identical datasets.
pub fn sample(spec: &MixtureSpec, n_per_cluster: usize, seed: u64) -> Result<LabeledDataset> {
    let (d, k) = (spec.d(), spec.k());
    let n = n_per_cluster * k;
    let required = MIN_ROWS_PER_DIM * d;
    if n_per_cluster == 0 || n < required {
        return Err(Error::SampleSize { n, d, required });
    }
    let mut rng = seeded_rng(seed);
    let mut data = DMatrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for l in 0..k {
        for r in 0..n_per_cluster {
            let x = spec.draw_component(l, &mut rng);
            data.row_mut(l * n_per_cluster + r).copy_from(&x.transpose());
            labels.push(l);
        }
    }
    LabeledDataset::new(data, labels, k)
}

/// Random `rows x cols` matrix with orthonormal columns (`cols <= rows`),
/// Haar-distributed via QR of a Gaussian matrix with sign correction.
pub(crate) fn random_orthonormal(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col.neg_mut();
        }
    }
    q
}

/// Largest eigenvalue ratio of the covariances built by
/// [`make_separation_family`].
pub const FAMILY_MAX_CONDITION: f64 = 10.0;

/// A mixture whose means sit on a regular simplex with pairwise distance
/// exactly `separation`, placed on a random `k`-frame. All components share
/// the covariance `dispersion^2 * R D R^T` with random rotation `R` and
/// log-uniform `D` in `[1/10, 1]`.
///
/// The frame and covariance shapes depend only on `seed`, so varying
/// `separation` or `dispersion` with a fixed seed moves along one family.
pub fn make_separation_family(
    d: usize,
    k: usize,
    separation: f64,
    dispersion: f64,
    seed: u64,
) -> Result<MixtureSpec> {
    if k == 0 || d < k {
        return Err(Error::InvalidParameter(format!(
            "need k >= 1 and d > k - 1, got d = {d}, k = {k}"
        )));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "separation must be finite and >= 0, got {separation}"
        )));
    }
    if !(dispersion > 0.0 && dispersion.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "dispersion must be finite and > 0, got {dispersion}"
        )));
    }
    let mut rng = seeded_rng(seed);
    // d >= k, so a k-column frame always fits
    let frame = random_orthonormal(d, k, &mut rng);
    let scale = separation / std::f64::consts::SQRT_2;
    let means = (0..k)
        .map(|l| {
            let vertex = DVector::from_fn(k, |i, _| {
                let e = if i == l { 1.0 } else { 0.0 };
                e - 1.0 / k as f64
            });
            &frame * vertex * scale
        })
        .collect();
    let w2 = dispersion * dispersion;
    let rot = random_orthonormal(d, d, &mut rng);
    let diag = DVector::from_fn(d, |_, _| {
        let u: f64 = rng.random();
        w2 * FAMILY_MAX_CONDITION.powf(-u)
    });
    let shared = SymMatrix::symmetrize(&rot * DMatrix::from_diagonal(&diag) * rot.transpose())?;
    let covariances = vec![shared; k];
    MixtureSpec::new(means, covariances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrixcore::{apply_centering, sym_eig};
    use approx::assert_abs_diff_eq;

    fn sample_mean_cov(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let n = x.nrows() as f64;
        let mean = crate::matrixcore::column_means(x);
        let c = apply_centering(x);
        (mean, c.transpose() * c / n)
    }

    fn standard(d: usize) -> MixtureSpec {
        MixtureSpec::new(vec![DVector::zeros(d)], vec![SymMatrix::identity(d)]).unwrap()
    }

    #[test]
    fn rejects_invalid_specs() {
        let two_in_1d = MixtureSpec::new(
            vec![DVector::zeros(1), DVector::zeros(1)],
            vec![SymMatrix::identity(1), SymMatrix::identity(1)],
        );
        assert!(matches!(two_in_1d, Err(Error::InvalidParameter(_))));
        let indefinite = MixtureSpec::new(
            vec![DVector::zeros(2)],
            vec![SymMatrix::from_diagonal(&[1.0, -1.0])],
        );
        assert!(matches!(indefinite, Err(Error::Cholesky { component: 0 })));
        assert!(MixtureSpec::new(vec![], vec![]).is_err());
    }

    #[test]
    fn law_of_large_numbers() {
        let ds = sample(&standard(2), 5000, 42).unwrap();
        let (mean, cov) = sample_mean_cov(ds.data());
        assert!(mean.amax() < 0.05);
        assert!((cov - DMatrix::identity(2, 2)).amax() < 0.1);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let spec = make_separation_family(4, 3, 2.0, 1.0, 9).unwrap();
        let a = sample(&spec, 50, 7).unwrap();
        let b = sample(&spec, 50, 7).unwrap();
        assert_eq!(a, b);
        let c = sample(&spec, 50, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn exact_balanced_counts() {
        let spec = make_separation_family(3, 3, 2.0, 1.0, 1).unwrap();
        let ds = sample(&spec, 17, 0).unwrap();
        assert_eq!(ds.per_cluster_n(), vec![17, 17, 17]);
        assert_eq!(ds.n(), 51);
    }

    #[test]
    fn too_small_sample_is_rejected() {
        let spec = make_separation_family(5, 2, 2.0, 1.0, 1).unwrap();
        assert!(matches!(
            sample(&spec, 24, 0),
            Err(Error::SampleSize { n: 48, d: 5, required: 50 })
        ));
        assert!(sample(&spec, 25, 0).is_ok());
    }

    #[test]
    fn moments_hand_example() {
        let spec = MixtureSpec::new(
            vec![DVector::from_vec(vec![-1.0, 0.0]), DVector::from_vec(vec![1.0, 0.0])],
            vec![SymMatrix::identity(2), SymMatrix::identity(2)],
        )
        .unwrap();
        let m = population_moments(&spec);
        assert_eq!(m.grand_mean, DVector::zeros(2));
        assert_eq!(m.grand_cov.as_matrix(), &DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0])));
    }

    #[test]
    fn moments_equal_means() {
        let mu = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let covs = vec![
            SymMatrix::from_diagonal(&[1.0, 2.0, 3.0]),
            SymMatrix::from_diagonal(&[3.0, 2.0, 1.0]),
        ];
        let spec = MixtureSpec::new(vec![mu.clone(), mu.clone()], covs).unwrap();
        let m = population_moments(&spec);
        assert!((m.grand_mean - mu).amax() < 1e-15);
        assert!((m.grand_cov.as_matrix() - DMatrix::from_diagonal_element(3, 3, 2.0)).amax() < 1e-15);
        assert!(m.between.as_matrix().amax() < 1e-15);
    }

    #[test]
    fn moment_decomposition_identity() {
        let spec = make_separation_family(5, 4, 3.0, 1.3, 21).unwrap();
        let m = population_moments(&spec);
        let diff = m.grand_cov.as_matrix() - m.within.as_matrix() - m.between.as_matrix();
        assert!(diff.amax() < 1e-14);
        assert!(sym_eig(&m.grand_cov).values.last().unwrap() > &0.0);
    }

    #[test]
    fn moments_match_monte_carlo() {
        let spec = make_separation_family(4, 3, 3.0, 1.0, 5).unwrap();
        let m = population_moments(&spec);
        let ds = sample(&spec, 333_334, 77).unwrap();
        let (mean, cov) = sample_mean_cov(ds.data());
        let scale = m.grand_cov.as_matrix().amax();
        assert!((cov - m.grand_cov.as_matrix()).amax() < 0.02 * scale);
        assert!((mean - &m.grand_mean).amax() < 0.02 * scale.sqrt());
    }

    #[test]
    fn zero_separation_collapses_means() {
        let spec = make_separation_family(4, 3, 0.0, 1.0, 2).unwrap();
        for mu in spec.means() {
            assert_eq!(mu.amax(), 0.0);
        }
    }

    #[test]
    fn separation_is_linear_and_exact() {
        let a = make_separation_family(6, 4, 1.5, 1.0, 3).unwrap();
        let b = make_separation_family(6, 4, 3.0, 1.0, 3).unwrap();
        for i in 0..4 {
            for j in (i + 1)..4 {
                let da = (&a.means()[i] - &a.means()[j]).norm();
                let db = (&b.means()[i] - &b.means()[j]).norm();
                assert_abs_diff_eq!(da, 1.5, epsilon = 1e-12);
                assert_abs_diff_eq!(db, 2.0 * da, epsilon = 1e-12);
            }
        }
        assert_eq!(a.covariances(), b.covariances());
    }

    #[test]
    fn family_covariances_are_bounded() {
        let spec = make_separation_family(8, 3, 1.0, 2.0, 13).unwrap();
        for c in spec.covariances() {
            let e = sym_eig(c);
            let (hi, lo) = (e.values[0], *e.values.last().unwrap());
            assert!(hi <= 4.0 * (1.0 + 1e-12));
            assert!(lo >= 0.4 * (1.0 - 1e-12));
            assert!(hi / lo <= FAMILY_MAX_CONDITION * (1.0 + 1e-10));
        }
    }

    #[test]
    fn label_independent_statistics_ignore_label_order() {
        let spec = make_separation_family(3, 3, 2.0, 1.0, 4).unwrap();
        let ds = sample(&spec, 40, 1).unwrap();
        let shuffled: Vec<usize> = ds.labels().iter().map(|l| (l + 1) % 3).collect();
        let other = LabeledDataset::new(ds.data().clone(), shuffled, 3).unwrap();
        let (m1, c1) = sample_mean_cov(ds.data());
        let (m2, c2) = sample_mean_cov(other.data());
        assert_eq!(m1, m2);
        assert_eq!(c1, c2);
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = make_separation_family(3, 2, 2.5, 0.7, 6).unwrap();
        let json = spec.to_json().unwrap();
        assert!(json.contains("\"means\""));
        assert!(json.contains("\"mixing\""));
        let back = MixtureSpec::from_json(&json).unwrap();
        assert_eq!(back, spec);
        let bad = r#"{"means": [[0, 0]], "covariances": [[[1, 0], [0, -1]]]}"#;
        assert!(MixtureSpec::from_json(bad).is_err());
    }

    #[test]
    fn dataset_csv_round_trip() {
        let spec = make_separation_family(3, 2, 2.5, 0.7, 6).unwrap();
        let ds = sample(&spec, 20, 3).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,x3,label\n"));
        assert!(text.lines().nth(1).unwrap().ends_with(",1"));
        let back = LabeledDataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn dataset_rejects_bad_labels() {
        let x = DMatrix::zeros(3, 2);
        assert!(matches!(
            LabeledDataset::new(x.clone(), vec![0, 0, 2], 3),
            Err(Error::MissingCluster { label: 1 })
        ));
        assert!(LabeledDataset::new(x, vec![0, 1], 2).is_err());
        assert!(LabeledDataset::read_csv("x1,x2,label\n1,2,0\n".as_bytes()).is_err());
    }

    #[test]
    fn component_density_matches_closed_form() {
        let spec = standard(2);
        let x = DVector::from_vec(vec![1.0, -1.0]);
        let expected = -1.0 - (2.0 * std::f64::consts::PI).ln();
        assert_abs_diff_eq!(spec.component_ln_pdf(0, &x), expected, epsilon = 1e-14);
    }
}
