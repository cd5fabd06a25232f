//! Isotropization (`X -> Y`) and observation weighting (`Y -> Z_0`).

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrixcore::{apply_centering, column_means, inverse_sqrt_map, SymMatrix};
use crate::mixture::LabeledDataset;

/// Default weighting parameter.
pub const DEFAULT_ALPHA: f64 = 0.5;

/// Data in isotropic position: zero column means and `Y^T Y = I`.
///
/// `center` and `whitening` record the affine map `Y = (X - 1 center^T) W`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsotropicDataset {
    dataset: LabeledDataset,
    center: DVector<f64>,
    whitening: DMatrix<f64>,
}

impl IsotropicDataset {
    pub fn data(&self) -> &DMatrix<f64> {
        self.dataset.data()
    }

    pub fn dataset(&self) -> &LabeledDataset {
        &self.dataset
    }

    pub fn labels(&self) -> &[usize] {
        self.dataset.labels()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    /// `A L^{-1/2}` from the spectral decomposition of the centered scatter.
    pub fn whitening(&self) -> &DMatrix<f64> {
        &self.whitening
    }

    /// Applies the stored map to raw observations (rows of `x`).
    pub fn map(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.center.len() {
            return Err(Error::Shape(format!(
                "map expects {} columns, got {}",
                self.center.len(),
                x.ncols()
            )));
        }
        let mut shifted = x.clone();
        for mut row in shifted.row_iter_mut() {
            row -= self.center.transpose();
        }
        Ok(shifted * &self.whitening)
    }

    /// Squared row norms `||y_i||^2`.
    pub fn squared_norms(&self) -> DVector<f64> {
        squared_row_norms(self.data())
    }
}

pub(crate) fn squared_row_norms(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.norm_squared()))
}

/// Centers `x` and whitens it with `A L^{-1/2}`, where `A L A^T` is the
/// spectral decomposition of `X_0^T X_0`.
pub fn isotropize(x: &LabeledDataset) -> Result<IsotropicDataset> {
    let center = column_means(x.data());
    let centered = apply_centering(x.data());
    let scatter = SymMatrix::symmetrize(centered.transpose() * &centered)?;
    let (_, whitening) = inverse_sqrt_map(&scatter).map_err(|(index, value, largest)| {
        Error::RankDeficient {
            index,
            value,
            largest,
        }
    })?;
    let y = centered * &whitening;
    Ok(IsotropicDataset {
        dataset: x.with_data(y)?,
        center,
        whitening,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightScheme {
    /// `sqrt(1 / (1 + ||y||^2 / alpha))`
    #[default]
    Hyperbolic,
    /// `exp(-||y||^2 / alpha)`
    Exponential,
}

impl WeightScheme {
    pub fn weight(self, squared_norm: f64, alpha: f64) -> f64 {
        match self {
            WeightScheme::Hyperbolic => (1.0 / (1.0 + squared_norm / alpha)).sqrt(),
            WeightScheme::Exponential => (-squared_norm / alpha).exp(),
        }
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightScheme::Hyperbolic => "hyperbolic",
            WeightScheme::Exponential => "exponential",
        })
    }
}

impl FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hyperbolic" => Ok(WeightScheme::Hyperbolic),
            "exponential" => Ok(WeightScheme::Exponential),
            other => Err(Error::InvalidParameter(format!(
                "unknown weighting scheme `{other}` (expected hyperbolic or exponential)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub weights: DVector<f64>,
    pub alpha: f64,
    pub scheme: WeightScheme,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && !alpha.is_nan() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("alpha must be > 0, got {alpha}")))
    }
}

/// Per-row weights from the squared norms of `y`.
pub fn compute_weights(y: &IsotropicDataset, alpha: f64, scheme: WeightScheme) -> Result<WeightVector> {
    check_alpha(alpha)?;
    let weights = y.squared_norms().map(|s| scheme.weight(s, alpha));
    Ok(WeightVector {
        weights,
        alpha,
        scheme,
    })
}

/// `Z_0 = F diag(w) Y`, labels preserved.
pub fn apply_weights(y: &IsotropicDataset, w: &WeightVector) -> Result<LabeledDataset> {
    if w.weights.len() != y.data().nrows() {
        return Err(Error::Shape(format!(
            "{} weights for {} rows",
            w.weights.len(),
            y.data().nrows()
        )));
    }
    let mut z = y.data().clone();
    for (mut row, &wi) in z.row_iter_mut().zip(w.weights.iter()) {
        row *= wi;
    }
    y.dataset().with_data(apply_centering(&z))
}

/// All intermediates of the two-step transformation.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub y: IsotropicDataset,
    pub z0: LabeledDataset,
    pub w: WeightVector,
}

pub fn transform_pipeline(x: &LabeledDataset, alpha: f64, scheme: WeightScheme) -> Result<PipelineOutput> {
    check_alpha(alpha)?;
    let y = isotropize(x)?;
    let w = compute_weights(&y, alpha, scheme)?;
    let z0 = apply_weights(&y, &w)?;
    Ok(PipelineOutput { y, z0, w })
}
