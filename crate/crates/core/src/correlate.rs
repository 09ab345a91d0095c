//! Pearson correlation between metric columns.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CorrelateError {
    #[error("need at least 3 rows, got {0}")]
    InsufficientRows(usize),
    #[error("need at least 2 columns, got {0}")]
    TooFewColumns(usize),
    #[error("row {row} has {got} values, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
    #[error("row {row}, column `{column}`: non-finite value")]
    NonFinite { row: usize, column: String },
}

/// Single-pass (Welford) Pearson coefficient. `None` when either series is
/// constant or the series are shorter than two.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "series lengths differ");
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, (&a, &b)) in x.iter().zip(y).enumerate() {
        let n = (i + 1) as f64;
        let dx = a - mx;
        let dy = b - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (a - mx);
        syy += dy * (b - my);
        sxy += dx * (b - my);
    }
    if x.len() < 2 || sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix {
    pub columns: Vec<String>,
    /// `values[i][j]` correlates column `i` with column `j`.
    pub values: Vec<Vec<Option<f64>>>,
}

/// Correlates every pair of columns. `rows[r][c]` is the value of column `c`
/// in row `r`.
pub fn correlation_matrix(columns: &[String], rows: &[Vec<f64>]) -> Result<CorrelationMatrix, CorrelateError> {
    if columns.len() < 2 {
        return Err(CorrelateError::TooFewColumns(columns.len()));
    }
    if rows.len() < 3 {
        return Err(CorrelateError::InsufficientRows(rows.len()));
    }
    for (r, row) in rows.iter().enumerate() {
        if row.len() != columns.len() {
            return Err(CorrelateError::Ragged { row: r, got: row.len(), expected: columns.len() });
        }
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(CorrelateError::NonFinite { row: r, column: columns[c].clone() });
        }
    }
    let series: Vec<Vec<f64>> = (0..columns.len()).map(|c| rows.iter().map(|r| r[c]).collect()).collect();
    let values = series.iter().map(|a| series.iter().map(|b| pearson(a, b)).collect()).collect();
    Ok(CorrelationMatrix { columns: columns.to_vec(), values })
}
