//! Ridge least squares with an unpenalized intercept.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub weights: Vec<f64>,
    /// The normal equations were singular and the minimum-norm solution was used.
    #[serde(default)]
    pub rank_deficient: bool,
}

impl LinearFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

/// Squared expansion of a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expansion {
    /// `x` followed by `x_j^2` for each `j`.
    #[default]
    SquaresOnly,
    /// `x` followed by `x_j x_k` for every `j <= k`.
    FullInteractions,
}

pub fn expand_quadratic(x: &[f64], mode: Expansion) -> Vec<f64> {
    let p = x.len();
    let mut out = Vec::with_capacity(match mode {
        Expansion::SquaresOnly => 2 * p,
        Expansion::FullInteractions => p + p * (p + 1) / 2,
    });
    out.extend_from_slice(x);
    match mode {
        Expansion::SquaresOnly => out.extend(x.iter().map(|v| v * v)),
        Expansion::FullInteractions => {
            for j in 0..p {
                for k in j..p {
                    out.push(x[j] * x[k]);
                }
            }
        }
    }
    out
}

/// Minimizes `|y - Xw - w0|^2 + ridge |w|^2`.
///
/// Solved through the centered normal equations with a Cholesky factorization,
/// or through the `n x n` dual system when features outnumber rows. Singular
/// systems fall back to the SVD minimum-norm solution.
pub fn fit_ridge(x: &[Vec<f64>], y: &[f64], ridge: f64) -> Result<LinearFit> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::validation(format!(
            "{n} feature rows for {} targets",
            y.len()
        )));
    }
    if n < 2 {
        return Err(Error::validation(format!(
            "regression needs at least 2 rows, got {n}"
        )));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::validation(format!(
            "ridge strength {ridge} must be finite and >= 0"
        )));
    }
    let p = x[0].len();
    if let Some(r) = x.iter().find(|r| r.len() != p) {
        return Err(Error::validation(format!(
            "ragged feature matrix: {} vs {p} columns",
            r.len()
        )));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "non-finite value in regression inputs".into(),
        ));
    }
    let y_mean = y.iter().sum::<f64>() / n as f64;
    if p == 0 {
        return Ok(LinearFit {
            intercept: y_mean,
            weights: Vec::new(),
            rank_deficient: false,
        });
    }
    let mut means = vec![0.0; p];
    for r in x {
        for (m, v) in means.iter_mut().zip(r) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    let xc = DMatrix::from_fn(n, p, |i, j| x[i][j] - means[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));

    let (w, rank_deficient) = if p <= n {
        let mut a = xc.tr_mul(&xc);
        for j in 0..p {
            a[(j, j)] += ridge;
        }
        let b = xc.tr_mul(&yc);
        match spd_solve(a, &b) {
            Some(w) => (w, false),
            None => (min_norm(&xc, &yc, ridge), true),
        }
    } else {
        let mut k = &xc * xc.transpose();
        for i in 0..n {
            k[(i, i)] += ridge;
        }
        match spd_solve(k, &yc) {
            Some(alpha) => (xc.tr_mul(&alpha), false),
            None => (min_norm(&xc, &yc, ridge), true),
        }
    };
    if rank_deficient {
        log::warn!("singular regression system; using the minimum-norm solution");
    }
    let weights: Vec<f64> = w.iter().copied().collect();
    let intercept = y_mean - weights.iter().zip(&means).map(|(a, b)| a * b).sum::<f64>();
    Ok(LinearFit {
        intercept,
        weights,
        rank_deficient,
    })
}

/// Cholesky solve, rejecting numerically singular matrices.
fn spd_solve(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = (0..a.nrows()).map(|i| a[(i, i)]).fold(0.0f64, f64::max);
    if scale <= 0.0 {
        return None;
    }
    let chol = a.cholesky()?;
    let l = chol.l_dirty();
    let min_pivot = (0..l.nrows())
        .map(|i| l[(i, i)] * l[(i, i)])
        .fold(f64::INFINITY, f64::min);
    if min_pivot < scale * 1e-12 {
        return None;
    }
    Some(chol.solve(b))
}

/// Minimum-norm solution of the ridge problem through an SVD of the
/// (augmented) design matrix.
fn min_norm(xc: &DMatrix<f64>, yc: &DVector<f64>, ridge: f64) -> DVector<f64> {
    let (n, p) = xc.shape();
    let (a, b) = if ridge > 0.0 {
        let s = ridge.sqrt();
        let a = DMatrix::from_fn(n + p, p, |i, j| {
            if i < n {
                xc[(i, j)]
            } else if i - n == j {
                s
            } else {
                0.0
            }
        });
        let b = DVector::from_fn(n + p, |i, _| if i < n { yc[i] } else { 0.0 });
        (a, b)
    } else {
        (xc.clone(), yc.clone())
    };
    let svd = a.svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0f64, f64::max);
    let eps = smax * (n.max(p) as f64) * f64::EPSILON;
    svd.solve(&b, eps).unwrap_or_else(|_| DVector::zeros(p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_target_gives_intercept_only() {
        let x = vec![vec![1.0, 2.0], vec![3.0, 1.0], vec![0.0, 5.0]];
        let f = fit_ridge(&x, &[4.0, 4.0, 4.0], 0.0).unwrap();
        assert!(f.weights.iter().all(|w| w.abs() < 1e-12));
        assert!((f.intercept - 4.0).abs() < 1e-12);
    }

    #[test]
    fn exact_line() {
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..5).map(|i| 2.0 * i as f64 + 3.0).collect();
        let f = fit_ridge(&x, &y, 0.0).unwrap();
        assert!((f.weights[0] - 2.0).abs() < 1e-6);
        assert!((f.intercept - 3.0).abs() < 1e-6);
    }

    #[test]
    fn huge_ridge_shrinks_to_mean() {
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let y = [1.0, 3.0, 2.0, 5.0, 4.0];
        let f = fit_ridge(&x, &y, 1e12).unwrap();
        assert!(f.weights[0].abs() < 1e-9);
        assert!((f.intercept - 3.0).abs() < 1e-6);
    }

    #[test]
    fn duplicated_column_falls_back_to_min_norm() {
        let x: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64, i as f64]).collect();
        let y: Vec<f64> = (0..4).map(|i| i as f64).collect();
        let f = fit_ridge(&x, &y, 0.0).unwrap();
        assert!(f.rank_deficient);
        assert!((f.weights[0] - 0.5).abs() < 1e-9);
        assert!((f.weights[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn wide_problem_uses_dual() {
        let x = vec![vec![1.0, 0.0, 2.0], vec![0.0, 1.0, 1.0]];
        let f = fit_ridge(&x, &[1.0, 2.0], 0.0).unwrap();
        for (r, t) in x.iter().zip([1.0, 2.0]) {
            assert!((f.predict(r) - t).abs() < 1e-9);
        }
    }

    #[test]
    fn quadratic_expansion() {
        assert_eq!(
            expand_quadratic(&[0.0, 0.0], Expansion::SquaresOnly),
            [0.0; 4]
        );
        assert_eq!(
            expand_quadratic(&[2.0, 3.0], Expansion::SquaresOnly),
            [2.0, 3.0, 4.0, 9.0]
        );
        assert_eq!(
            expand_quadratic(&[2.0, 3.0], Expansion::FullInteractions),
            [2.0, 3.0, 4.0, 6.0, 9.0]
        );
    }

    #[test]
    fn interpolates_parabola() {
        let x: Vec<Vec<f64>> = (0..4)
            .map(|i| expand_quadratic(&[i as f64], Expansion::SquaresOnly))
            .collect();
        let y: Vec<f64> = (0..4).map(|i| (i * i) as f64).collect();
        let f = fit_ridge(&x, &y, 0.0).unwrap();
        assert!((f.weights[1] - 1.0).abs() < 1e-6);
        assert!(f.weights[0].abs() < 1e-6);
        assert!(f.intercept.abs() < 1e-6);
    }
}
