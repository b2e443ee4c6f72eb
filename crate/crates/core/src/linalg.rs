//! Internal dense linear-algebra helpers shared by the spectral and probe code.
//!
//! The SVD is one-sided Jacobi (Hestenes): rotations orthogonalize the
//! columns until A = U·Σ, with V accumulated from the rotations. For the
//! thin matrices this crate decomposes (d × num_groups cross-covariances)
//! it is fast, fully deterministic, and — unlike bidiagonalization-based
//! routines — accurate on nearly rank-deficient inputs, which is the common
//! case here: a centered binary attribute makes Ω exactly rank one.

use ndarray::{Array1, Array2};

pub(crate) fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

#[cfg(test)]
pub(crate) fn frobenius_norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn identity(d: usize) -> Array2<f64> {
    Array2::from_shape_fn((d, d), |(i, j)| if i == j { 1.0 } else { 0.0 })
}

pub(crate) fn dot(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &Array1<f64>) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
pub(crate) fn max_abs_diff_vec(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Thin SVD with singular values sorted nonincreasing and a deterministic
/// sign convention: in each left singular vector the entry of largest
/// magnitude (lowest index on ties) is nonnegative.
pub(crate) struct ThinSvd {
    pub u_cols: Vec<Array1<f64>>,
    pub sigma: Vec<f64>,
    pub v_cols: Vec<Array1<f64>>,
}

const MAX_JACOBI_SWEEPS: usize = 60;
// skip a rotation once the column pair is orthogonal to |cos| <= 1e-14
const JACOBI_COS_TOL_SQ: f64 = 1e-28;

pub(crate) fn thin_svd(a: &Array2<f64>) -> ThinSvd {
    let (d, m) = a.dim();
    let r = d.min(m);

    // column-major working copies of A and V
    let mut cols: Vec<Vec<f64>> = (0..m).map(|j| (0..d).map(|i| a[[i, j]]).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..m)
        .map(|j| (0..m).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..m {
            for q in (p + 1)..m {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for i in 0..d {
                        alpha += cp[i] * cp[i];
                        beta += cq[i] * cq[i];
                        gamma += cp[i] * cq[i];
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0 || gamma * gamma <= JACOBI_COS_TOL_SQ * alpha * beta {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                } else {
                    -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut cols, p, q, c, s, d);
                rotate_pair(&mut v, p, q, c, s, m);
                rotated = true;
            }
        }
        if !rotated {
            break;
        }
    }

    // singular values are the column norms; order nonincreasing
    let sig_all: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| sig_all[j].partial_cmp(&sig_all[i]).expect("finite norms"));

    let mut u_cols: Vec<Array1<f64>> = Vec::with_capacity(r);
    let mut sigma = Vec::with_capacity(r);
    let mut v_cols = Vec::with_capacity(r);
    let mut pending_zero = Vec::new();
    for (slot, &idx) in order.iter().take(r).enumerate() {
        let s = sig_all[idx];
        sigma.push(s);
        let mut vc = Array1::from(v[idx].clone());
        if s > 0.0 {
            let mut uc = Array1::from_iter(cols[idx].iter().map(|x| x / s));
            if dominant_entry(&uc) < 0.0 {
                uc.mapv_inplace(|x| -x);
                vc.mapv_inplace(|x| -x);
            }
            u_cols.push(uc);
        } else {
            // exactly-null column: direction is undefined, fill in later
            u_cols.push(Array1::zeros(d));
            pending_zero.push(slot);
        }
        v_cols.push(vc);
    }
    for slot in pending_zero {
        let existing: Vec<Array1<f64>> = u_cols
            .iter()
            .filter(|c| norm(c) > 0.5)
            .cloned()
            .collect();
        u_cols[slot] = complete_one(&existing, d);
    }

    ThinSvd {
        u_cols,
        sigma,
        v_cols,
    }
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64, len: usize) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for i in 0..len {
        let ap = cp[i];
        let aq = cq[i];
        cp[i] = c * ap - s * aq;
        cq[i] = s * ap + c * aq;
    }
}

fn dominant_entry(v: &Array1<f64>) -> f64 {
    let mut best = 0.0_f64;
    for &x in v.iter() {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    best
}

/// Removes from `v` its components along each (orthonormal) column in `basis`.
/// Two passes keep the result orthogonal to working precision.
pub(crate) fn orthogonalize_against(v: &mut Array1<f64>, basis: &[Array1<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = dot(v, q);
            v.zip_mut_with(q, |x, &y| *x -= c * y);
        }
    }
}

/// One unit vector orthogonal to everything in `existing`, built from the
/// most independent canonical seed.
pub(crate) fn complete_one(existing: &[Array1<f64>], d: usize) -> Array1<f64> {
    let mut best: Option<(f64, Array1<f64>)> = None;
    for seed in 0..d {
        let mut w = Array1::zeros(d);
        w[seed] = 1.0;
        orthogonalize_against(&mut w, existing);
        let n = norm(&w);
        if best.as_ref().map_or(true, |(bn, _)| n > *bn) {
            best = Some((n, w));
        }
    }
    let (n, mut w) = best.expect("d > 0");
    debug_assert!(n > 1e-8, "no independent canonical seed found");
    w.mapv_inplace(|x| x / n);
    w
}

/// Extends orthonormal `cols` (each length `d`) to a full orthonormal basis
/// of R^d.
pub(crate) fn complete_basis(cols: &mut Vec<Array1<f64>>, d: usize) {
    while cols.len() < d {
        let w = complete_one(cols, d);
        cols.push(w);
    }
}

/// Column means accumulated in the caller-supplied index order.
pub(crate) fn column_means_ordered(x: &Array2<f64>, order: &[usize]) -> Array1<f64> {
    let d = x.ncols();
    let mut mean = Array1::<f64>::zeros(d);
    for &i in order {
        mean.zip_mut_with(&x.row(i).to_owned(), |m, &v| *m += v);
    }
    let n = order.len() as f64;
    mean.mapv_inplace(|v| v / n);
    mean
}
