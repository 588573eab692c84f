use super::NumericsError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerKind {
    MinMax,
    Standard,
}

/// Per-feature affine scaler: `scaled = (x - offset) / divisor`.
///
/// Degenerate features (zero range or zero stddev) keep their offset and use
/// a divisor of 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub kind: ScalerKind,
    offset: Vec<f64>,
    divisor: Vec<f64>,
}

impl Scaler {
    /// Fits on `rows`, each row holding one value per feature.
    pub fn fit(kind: ScalerKind, rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let Some(first) = rows.first() else {
            return Err(NumericsError::Contract("cannot fit a scaler on no data".into()));
        };
        let features = first.len();
        if features == 0 || rows.iter().any(|r| r.len() != features) {
            return Err(NumericsError::Shape("ragged scaler fit data".into()));
        }
        let mut offset = Vec::with_capacity(features);
        let mut divisor = Vec::with_capacity(features);
        for j in 0..features {
            let col = rows.iter().map(|r| r[j]);
            let (o, d) = match kind {
                ScalerKind::MinMax => {
                    let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                    (lo, hi - lo)
                }
                ScalerKind::Standard => {
                    let n = rows.len() as f64;
                    let mean = col.clone().sum::<f64>() / n;
                    let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    (mean, var.sqrt())
                }
            };
            offset.push(o);
            divisor.push(if d > 0.0 && d.is_finite() { d } else { 1.0 });
        }
        Ok(Self { kind, offset, divisor })
    }

    /// Fits a single-feature scaler on a series.
    pub fn fit_series(kind: ScalerKind, values: &[f64]) -> Result<Self, NumericsError> {
        let rows: Vec<Vec<f64>> = values.iter().map(|v| vec![*v]).collect();
        Self::fit(kind, &rows)
    }

    /// Builds a scaler from stored statistics.
    pub fn from_parts(kind: ScalerKind, offset: Vec<f64>, divisor: Vec<f64>) -> Result<Self, NumericsError> {
        if offset.len() != divisor.len() || offset.is_empty() {
            return Err(NumericsError::Shape("scaler offset/divisor length mismatch".into()));
        }
        if divisor.iter().any(|d| !(*d > 0.0)) {
            return Err(NumericsError::Contract("scaler divisor must be positive".into()));
        }
        Ok(Self { kind, offset, divisor })
    }

    pub fn features(&self) -> usize {
        self.offset.len()
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn divisor(&self) -> &[f64] {
        &self.divisor
    }

    pub fn apply(&self, feature: usize, x: f64) -> f64 {
        (x - self.offset[feature]) / self.divisor[feature]
    }

    pub fn invert(&self, feature: usize, scaled: f64) -> f64 {
        scaled * self.divisor[feature] + self.offset[feature]
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter().enumerate().map(|(j, v)| self.apply(j, *v)).collect()
    }

    pub fn invert_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter().enumerate().map(|(j, v)| self.invert(j, *v)).collect()
    }
}
