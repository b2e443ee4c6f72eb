//! Deterministic 2-D PCA for coordinate export.

use ndarray::{Array1, Array2};

pub struct Pca2d {
    /// n×2 projected coordinates.
    pub scores: Array2<f64>,
    /// Fraction of total variance captured by each of the two components.
    pub explained: [f64; 2],
}

/// Projects rows of `x` onto their top two principal components. Component
/// signs are fixed so the largest-magnitude loading is positive, making
/// repeated runs identical.
pub fn pca_2d(x: &Array2<f64>) -> Result<Pca2d, String> {
    let (n, d) = x.dim();
    if d < 2 {
        return Err(format!("need at least 2 dimensions, got {d}"));
    }
    if n < 2 {
        return Err(format!("need at least 2 rows, got {n}"));
    }
    let mut mean = Array1::<f64>::zeros(d);
    for row in x.rows() {
        mean.zip_mut_with(&row.to_owned(), |m, &v| *m += v);
    }
    mean.mapv_inplace(|v| v / n as f64);
    let mut centered = x.clone();
    for mut row in centered.rows_mut() {
        row.zip_mut_with(&mean, |v, &m| *v -= m);
    }

    let mut cov = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in i..d {
            let mut s = 0.0;
            for r in 0..n {
                s += centered[[r, i]] * centered[[r, j]];
            }
            s /= (n - 1) as f64;
            cov[[i, j]] = s;
            cov[[j, i]] = s;
        }
    }

    let (eigvals, eigvecs) = jacobi_eigen(cov);
    let total: f64 = eigvals.iter().map(|v| v.max(0.0)).sum();
    if total <= 1e-12 {
        return Err("covariance is numerically zero".into());
    }

    let mut loadings = Array2::<f64>::zeros((d, 2));
    let mut explained = [0.0; 2];
    for comp in 0..2 {
        let mut col: Vec<f64> = (0..d).map(|i| eigvecs[[i, comp]]).collect();
        let mut dominant = 0.0_f64;
        for &v in &col {
            if v.abs() > dominant.abs() {
                dominant = v;
            }
        }
        if dominant < 0.0 {
            for v in col.iter_mut() {
                *v = -*v;
            }
        }
        for i in 0..d {
            loadings[[i, comp]] = col[i];
        }
        explained[comp] = eigvals[comp].max(0.0) / total;
    }

    Ok(Pca2d {
        scores: centered.dot(&loadings),
        explained,
    })
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix; returns
/// (eigenvalues, eigenvector columns) sorted by decreasing eigenvalue.
fn jacobi_eigen(mut a: Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let d = a.nrows();
    let mut v = Array2::<f64>::from_shape_fn((d, d), |(i, j)| if i == j { 1.0 } else { 0.0 });
    let off = |a: &Array2<f64>| -> f64 {
        let mut s = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                s += a[[i, j]] * a[[i, j]];
            }
        }
        s
    };
    let scale: f64 = (0..d).map(|i| a[[i, i]].abs()).fold(0.0, f64::max).max(1e-300);
    for _ in 0..100 {
        if off(&a) <= (1e-15 * scale) * (1e-15 * scale) * d as f64 {
            break;
        }
        let mut rotated = false;
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[[p, q]];
                if apq.abs() <= 1e-18 * scale {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..d {
                    let aip = a[[i, p]];
                    let aiq = a[[i, q]];
                    a[[i, p]] = c * aip - s * aiq;
                    a[[i, q]] = s * aip + c * aiq;
                }
                for j in 0..d {
                    let apj = a[[p, j]];
                    let aqj = a[[q, j]];
                    a[[p, j]] = c * apj - s * aqj;
                    a[[q, j]] = s * apj + c * aqj;
                }
                for i in 0..d {
                    let vip = v[[i, p]];
                    let viq = v[[i, q]];
                    v[[i, p]] = c * vip - s * viq;
                    v[[i, q]] = s * vip + c * viq;
                }
                rotated = true;
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[[j, j]].partial_cmp(&a[[i, i]]).expect("finite eigenvalues"));
    let eigvals: Vec<f64> = order.iter().map(|&i| a[[i, i]]).collect();
    let eigvecs = Array2::from_shape_fn((d, d), |(i, j)| v[[i, order[j]]]);
    (eigvals, eigvecs)
}
