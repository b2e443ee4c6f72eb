//! Cross-covariance accumulation, single spectral erasure steps, and the
//! iterative composition of the erasure matrix P*.
//!
//! One step works on the masked cross-covariance P·Ω between embeddings and
//! the one-hot protected attribute: the top-k left singular directions are
//! the directions that agree most with the attribute, and the step projects
//! them away, P ← (I − U_k U_kᵀ)·P. A fit runs one step per language subset
//! of the plan, in plan order, starting from the identity. P* stays an
//! orthogonal projection throughout: internally the fit tracks the
//! orthonormal basis B of every removed direction and materializes
//! P* = I − BBᵀ, which keeps symmetry and idempotence at working precision
//! regardless of how many steps compose.
//!
//! Directions whose singular value is below `sigma_tol` relative to the
//! largest are never removed: a numerically-null covariance carries no
//! attribute signal, and erasing its "directions" would throw away random
//! subspace instead.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataio::{self, EmbeddingDataset};
use crate::linalg;
use crate::planner::{plan_fingerprint, ErasurePlan, PlanMode, SubsetOrder};

/// Relative singular-value floor: directions with σ ≤ sigma_tol·σ_max stay.
pub const DEFAULT_SIGMA_TOL: f64 = 1e-10;

/// Absolute σ_max floor below which a whole step is a no-op.
const NOOP_SIGMA_MAX: f64 = 1e-12;

/// Relative gap under which the spectrum cut is recorded as degenerate.
const DEGENERATE_GAP_REL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("input has no rows")]
    EmptyInput,
    #[error("row {row} of the indicator matrix is not one-hot")]
    NonOneHotRow { row: usize },
    #[error("matrix is not a symmetric idempotent projection: {0}")]
    NonProjectionInput(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("language {language:?} has no samples in the dataset")]
    MissingLanguage { language: String },
    #[error("plan has no subsets")]
    EmptyPlan,
    #[error("degenerate data: all samples are identical")]
    DegenerateData,
    #[error("artifact checksum mismatch: sidecar {expected}, blob {actual}")]
    ChecksumMismatch { expected: String, actual: String },
    #[error("artifact is corrupt: {0}")]
    Corrupt(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Unnormalized cross-covariance Ω = XᵀZ between embeddings and the one-hot
/// protected attribute; column g holds the embedding sum of group g.
#[derive(Debug, Clone)]
pub struct CrossCovariance {
    omega: Array2<f64>,
    n_samples: usize,
}

impl CrossCovariance {
    pub fn new(omega: Array2<f64>, n_samples: usize) -> Result<Self, SpectralError> {
        if omega.iter().any(|v| !v.is_finite()) {
            return Err(SpectralError::ShapeMismatch(
                "cross-covariance has non-finite entries".into(),
            ));
        }
        Ok(CrossCovariance { omega, n_samples })
    }

    pub fn omega(&self) -> &Array2<f64> {
        &self.omega
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn embedding_dim(&self) -> usize {
        self.omega.nrows()
    }

    pub fn num_groups(&self) -> usize {
        self.omega.ncols()
    }
}

/// Full SVD factors of a cross-covariance: U is d×d orthogonal, sigma holds
/// the min(d, d') singular values nonincreasing, V is d'×d' orthogonal.
#[derive(Debug, Clone)]
pub struct SingularTriple {
    pub u: Array2<f64>,
    pub sigma: Vec<f64>,
    pub v: Array2<f64>,
}

impl SingularTriple {
    pub fn decompose(a: &Array2<f64>) -> Result<Self, SpectralError> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(SpectralError::ShapeMismatch(
                "matrix has non-finite entries".into(),
            ));
        }
        let (d, dp) = a.dim();
        let thin = linalg::thin_svd(a);
        let r = thin.sigma.len();

        let mut u_cols = thin.u_cols;
        linalg::complete_basis(&mut u_cols, d);
        let u = Array2::from_shape_fn((d, d), |(i, j)| u_cols[j][i]);

        // right factor: columns with σ > 0 come from the SVD, the rest from
        // basis completion
        let mut v_cols: Vec<Array1<f64>> = thin.v_cols.into_iter().take(r.min(dp)).collect();
        v_cols.truncate(dp);
        linalg::complete_basis(&mut v_cols, dp);
        let v = Array2::from_shape_fn((dp, dp), |(i, j)| v_cols[j][i]);

        Ok(SingularTriple {
            u,
            sigma: thin.sigma,
            v,
        })
    }
}

/// Ω ← Σᵢ xᵢ zᵢᵀ accumulated row by row in input order.
pub fn cross_covariance(
    x: &Array2<f64>,
    z_onehot: &Array2<f64>,
) -> Result<CrossCovariance, SpectralError> {
    let n = x.nrows();
    if n == 0 {
        return Err(SpectralError::EmptyInput);
    }
    if z_onehot.nrows() != n {
        return Err(SpectralError::ShapeMismatch(format!(
            "x has {} rows, z_onehot has {}",
            n,
            z_onehot.nrows()
        )));
    }
    let groups = group_ids(z_onehot)?;
    Ok(CrossCovariance {
        omega: accumulate_cross_cov(x, &groups, &(0..n).collect::<Vec<_>>(), z_onehot.ncols()),
        n_samples: n,
    })
}

fn group_ids(z_onehot: &Array2<f64>) -> Result<Vec<usize>, SpectralError> {
    let mut groups = Vec::with_capacity(z_onehot.nrows());
    for (row_idx, row) in z_onehot.rows().into_iter().enumerate() {
        let mut hot = None;
        for (j, &v) in row.iter().enumerate() {
            if v == 1.0 {
                if hot.replace(j).is_some() {
                    return Err(SpectralError::NonOneHotRow { row: row_idx });
                }
            } else if v != 0.0 {
                return Err(SpectralError::NonOneHotRow { row: row_idx });
            }
        }
        groups.push(hot.ok_or(SpectralError::NonOneHotRow { row: row_idx })?);
    }
    Ok(groups)
}

fn accumulate_cross_cov(
    x: &Array2<f64>,
    groups: &[usize],
    order: &[usize],
    n_groups: usize,
) -> Array2<f64> {
    let d = x.ncols();
    let mut omega = Array2::<f64>::zeros((d, n_groups));
    for &i in order {
        let g = groups[i];
        let row = x.row(i);
        for (j, &v) in row.iter().enumerate() {
            omega[[j, g]] += v;
        }
    }
    omega
}

/// Top singular directions of `m` above the relative floor, at most `k`.
/// Returns (directions, their singular values, degenerate-cut flag); empty
/// when σ_max is at or below `noop_floor` — the masked covariance is then a
/// numerical ghost of the original and its "directions" are cancellation
/// noise, not attribute signal.
fn select_erasure_directions(
    m: &Array2<f64>,
    k: usize,
    sigma_tol: f64,
    noop_floor: f64,
) -> (Vec<Array1<f64>>, Vec<f64>, bool) {
    let svd = linalg::thin_svd(m);
    let sigma_max = svd.sigma.first().copied().unwrap_or(0.0);
    if sigma_max <= noop_floor {
        return (Vec::new(), Vec::new(), false);
    }
    let significant = svd
        .sigma
        .iter()
        .take_while(|&&s| s > sigma_tol * sigma_max)
        .count();
    let take = k.min(significant);
    let degenerate = take >= 1
        && take < svd.sigma.len()
        && (svd.sigma[take - 1] - svd.sigma[take]) <= DEGENERATE_GAP_REL * svd.sigma[take - 1];
    let dirs: Vec<Array1<f64>> = svd.u_cols.into_iter().take(take).collect();
    let sigmas: Vec<f64> = svd.sigma.into_iter().take(take).collect();
    (dirs, sigmas, degenerate)
}

/// One spectral erasure update: removes from the range of `p` the top-k left
/// singular directions of P·Ω and returns the updated projection. Directions
/// with σ ≤ sigma_tol·σ_max are left alone; if σ_max itself is numerically
/// null the step is a no-op.
pub fn erasure_step(
    p: &Array2<f64>,
    omega: &CrossCovariance,
    k: usize,
    sigma_tol: f64,
) -> Result<Array2<f64>, SpectralError> {
    let d = p.nrows();
    if p.ncols() != d {
        return Err(SpectralError::DimensionMismatch(format!(
            "projection must be square, got {}x{}",
            d,
            p.ncols()
        )));
    }
    if omega.embedding_dim() != d {
        return Err(SpectralError::DimensionMismatch(format!(
            "projection is {}-dimensional, cross-covariance is {}-dimensional",
            d,
            omega.embedding_dim()
        )));
    }
    if k == 0 || k >= d {
        return Err(SpectralError::DimensionMismatch(format!(
            "k must satisfy 1 <= k < d, got k={k}, d={d}"
        )));
    }
    check_projection(p)?;

    let masked = p.dot(omega.omega());
    let floor = noop_floor(omega.omega(), sigma_tol);
    let (dirs, _sigmas, _degenerate) = select_erasure_directions(&masked, k, sigma_tol, floor);
    if dirs.is_empty() {
        return Ok(p.clone());
    }

    // pin each direction inside range(p) before removal so the result stays
    // a projection even when σ is tiny relative to ‖Ω‖
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(dirs.len());
    for u in dirs {
        let mut w = p.dot(&u);
        linalg::orthogonalize_against(&mut w, &basis);
        let n = linalg::norm(&w);
        if n > 1e-8 {
            w.mapv_inplace(|v| v / n);
            basis.push(w);
        }
    }
    Ok(subtract_outer(p, &basis))
}

/// A masked P·Ω whose spectrum sits below sigma_tol relative to the raw Ω
/// scale has already been fully erased; treating it as live would remove
/// arbitrary directions made of rounding residue.
fn noop_floor(omega: &Array2<f64>, sigma_tol: f64) -> f64 {
    let fro = omega.iter().map(|v| v * v).sum::<f64>().sqrt();
    NOOP_SIGMA_MAX.max(sigma_tol * fro)
}

fn check_projection(p: &Array2<f64>) -> Result<(), SpectralError> {
    let sym = linalg::max_abs_diff(p, &p.t().to_owned());
    if sym > 1e-8 {
        return Err(SpectralError::NonProjectionInput(format!(
            "max |P - Pᵀ| = {sym:.3e}"
        )));
    }
    let idem = linalg::max_abs_diff(&p.dot(p), p);
    if idem > 1e-6 {
        return Err(SpectralError::NonProjectionInput(format!(
            "max |P² - P| = {idem:.3e}"
        )));
    }
    Ok(())
}

/// p − Σ wᵢwᵢᵀ, computed symmetrically.
fn subtract_outer(p: &Array2<f64>, basis: &[Array1<f64>]) -> Array2<f64> {
    let d = p.nrows();
    let mut out = p.clone();
    for i in 0..d {
        for j in i..d {
            let s: f64 = basis.iter().map(|w| w[i] * w[j]).sum();
            out[[i, j]] -= s;
            if i != j {
                out[[j, i]] = out[[i, j]];
            }
        }
    }
    out
}

/// Per-step fitting record: which subset, which singular values died, and
/// whether the spectrum cut was degenerate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub subset: Vec<String>,
    pub removed_sigma: Vec<f64>,
    pub degenerate_cut: bool,
    pub skipped: bool,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub sigma_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            sigma_tol: DEFAULT_SIGMA_TOL,
        }
    }
}

/// The fitted erasure: the d×d projection P*, the centering vector applied
/// at fit time, and per-step provenance.
#[derive(Debug, Clone)]
pub struct ErasureArtifact {
    p_star: Array2<f64>,
    k: usize,
    plan: ErasurePlan,
    plan_fingerprint: String,
    center: Array1<f64>,
    sigma_tol: f64,
    step_log: Vec<StepRecord>,
}

impl ErasureArtifact {
    pub fn p_star(&self) -> &Array2<f64> {
        &self.p_star
    }

    pub fn dim(&self) -> usize {
        self.p_star.nrows()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn plan(&self) -> &ErasurePlan {
        &self.plan
    }

    pub fn plan_fingerprint(&self) -> &str {
        &self.plan_fingerprint
    }

    pub fn center(&self) -> &Array1<f64> {
        &self.center
    }

    pub fn sigma_tol(&self) -> f64 {
        self.sigma_tol
    }

    pub fn step_log(&self) -> &[StepRecord] {
        &self.step_log
    }

    /// A no-op artifact (P* = I, zero center) over the given languages.
    pub fn identity<S: AsRef<str>>(dim: usize, languages: &[S]) -> Result<Self, SpectralError> {
        let plan = crate::planner::build_plan(
            languages,
            languages,
            PlanMode::FullyJoint,
            SubsetOrder::GlobalThenLocal,
            1,
        )
        .map_err(|e| SpectralError::Corrupt(e.to_string()))?;
        let fingerprint = plan_fingerprint(&plan);
        Ok(ErasureArtifact {
            p_star: linalg::identity(dim),
            k: plan.k,
            plan,
            plan_fingerprint: fingerprint,
            center: Array1::zeros(dim),
            sigma_tol: DEFAULT_SIGMA_TOL,
            step_log: vec![StepRecord {
                subset: Vec::new(),
                removed_sigma: Vec::new(),
                degenerate_cut: false,
                skipped: true,
            }],
        })
    }

    /// Writes the sidecar JSON at `json_path` and the raw 64-bit
    /// little-endian row-major P* blob next to it.
    pub fn save(&self, json_path: &Path) -> Result<PathBuf, SpectralError> {
        let stem = json_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "artifact".into());
        let blob_name = format!("{stem}.bin");
        let base = json_path.parent().unwrap_or_else(|| Path::new("."));
        let blob_path = base.join(&blob_name);

        let bytes: Vec<u8> = self.p_star.iter().flat_map(|v| v.to_le_bytes()).collect();
        let sha256: String = Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{:02x}", b))
            .collect();
        dataio::write_atomic(&blob_path, &bytes)?;

        let sidecar = ArtifactSidecar {
            dim: self.dim(),
            k: self.k,
            plan: self.plan.clone(),
            plan_fingerprint: self.plan_fingerprint.clone(),
            center: self.center.to_vec(),
            sigma_tol: self.sigma_tol,
            step_log: self.step_log.clone(),
            sha256,
            blob: blob_name,
        };
        let text = serde_json::to_string_pretty(&sidecar)?;
        dataio::write_atomic(json_path, text.as_bytes())?;
        Ok(blob_path)
    }

    pub fn load(json_path: &Path) -> Result<Self, SpectralError> {
        let text = fs::read_to_string(json_path)?;
        let sidecar: ArtifactSidecar = serde_json::from_str(&text)?;
        let base = json_path.parent().unwrap_or_else(|| Path::new("."));
        let bytes = fs::read(base.join(&sidecar.blob))?;
        if bytes.len() != sidecar.dim * sidecar.dim * 8 {
            return Err(SpectralError::Corrupt(format!(
                "blob holds {} bytes, expected {}",
                bytes.len(),
                sidecar.dim * sidecar.dim * 8
            )));
        }
        let actual: String = Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{:02x}", b))
            .collect();
        if actual != sidecar.sha256 {
            return Err(SpectralError::ChecksumMismatch {
                expected: sidecar.sha256,
                actual,
            });
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let p_star = Array2::from_shape_vec((sidecar.dim, sidecar.dim), values)
            .map_err(|e| SpectralError::Corrupt(e.to_string()))?;
        if sidecar.center.len() != sidecar.dim {
            return Err(SpectralError::Corrupt(
                "center length does not match dim".into(),
            ));
        }
        let artifact = ErasureArtifact {
            p_star,
            k: sidecar.k,
            plan: sidecar.plan,
            plan_fingerprint: sidecar.plan_fingerprint,
            center: Array1::from(sidecar.center),
            sigma_tol: sidecar.sigma_tol,
            step_log: sidecar.step_log,
        };
        artifact.check_invariants()?;
        Ok(artifact)
    }

    fn check_invariants(&self) -> Result<(), SpectralError> {
        let sym = linalg::max_abs_diff(&self.p_star, &self.p_star.t().to_owned());
        if sym > 1e-10 {
            return Err(SpectralError::Corrupt(format!(
                "P* is not symmetric: max |P - Pᵀ| = {sym:.3e}"
            )));
        }
        let idem = linalg::max_abs_diff(&self.p_star.dot(&self.p_star), &self.p_star);
        if idem > 1e-8 {
            return Err(SpectralError::Corrupt(format!(
                "P* is not idempotent: max |P² - P| = {idem:.3e}"
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ArtifactSidecar {
    dim: usize,
    k: usize,
    plan: ErasurePlan,
    plan_fingerprint: String,
    center: Vec<f64>,
    sigma_tol: f64,
    step_log: Vec<StepRecord>,
    sha256: String,
    blob: String,
}

/// Fits the composed erasure over the plan's subset sequence.
pub fn fit_erasure(
    dataset: &EmbeddingDataset,
    plan: &ErasurePlan,
) -> Result<ErasureArtifact, SpectralError> {
    fit_erasure_with(dataset, plan, &FitOptions::default())
}

pub fn fit_erasure_with(
    dataset: &EmbeddingDataset,
    plan: &ErasurePlan,
    opts: &FitOptions,
) -> Result<ErasureArtifact, SpectralError> {
    if plan.subsets.is_empty() {
        return Err(SpectralError::EmptyPlan);
    }
    if plan.k == 0 || plan.k >= dataset.dim() {
        return Err(SpectralError::DimensionMismatch(format!(
            "k must satisfy 1 <= k < d, got k={}, d={}",
            plan.k,
            dataset.dim()
        )));
    }
    let present = dataset.languages();
    for subset in &plan.subsets {
        for lang in subset {
            if !present.contains(lang) {
                return Err(SpectralError::MissingLanguage {
                    language: lang.clone(),
                });
            }
        }
    }
    if all_rows_identical(&dataset.x) {
        return Err(SpectralError::DegenerateData);
    }

    let d = dataset.dim();
    let (x_work, center) = if plan.center {
        let (centered, mean) = dataio::center_dataset(dataset);
        (centered.x, mean)
    } else {
        (dataset.x.clone(), Array1::zeros(d))
    };
    let n_groups = dataset.group_names.len();

    let mut removed: Vec<Array1<f64>> = Vec::new();
    let mut step_log = Vec::with_capacity(plan.subsets.len());

    for subset in &plan.subsets {
        let rows: Vec<usize> = (0..dataset.len())
            .filter(|&i| subset.contains(&dataset.language[i]))
            .collect();
        let order = dataio::canonical_row_order(dataset, &rows);
        let omega = accumulate_cross_cov(&x_work, &dataset.z, &order, n_groups);

        // mask: P·Ω with P = I − BBᵀ over the directions removed so far
        let mut masked = omega.clone();
        for w in &removed {
            let coeffs: Vec<f64> = (0..n_groups)
                .map(|g| {
                    (0..d)
                        .map(|i| w[i] * omega[[i, g]])
                        .sum::<f64>()
                })
                .collect();
            for g in 0..n_groups {
                for i in 0..d {
                    masked[[i, g]] -= coeffs[g] * w[i];
                }
            }
        }

        let floor = noop_floor(&omega, opts.sigma_tol);
        let (dirs, sigmas, degenerate_cut) =
            select_erasure_directions(&masked, plan.k, opts.sigma_tol, floor);
        let skipped = dirs.is_empty();
        for u in dirs {
            let mut w = u;
            linalg::orthogonalize_against(&mut w, &removed);
            let n = linalg::norm(&w);
            if n > 1e-8 {
                w.mapv_inplace(|v| v / n);
                removed.push(w);
            }
        }
        step_log.push(StepRecord {
            subset: subset.iter().cloned().collect(),
            removed_sigma: sigmas,
            degenerate_cut,
            skipped,
        });
    }

    let p_star = subtract_outer(&linalg::identity(d), &removed);
    let artifact = ErasureArtifact {
        p_star,
        k: plan.k,
        plan: plan.clone(),
        plan_fingerprint: plan_fingerprint(plan),
        center,
        sigma_tol: opts.sigma_tol,
        step_log,
    };
    debug_assert!(artifact.check_invariants().is_ok());
    Ok(artifact)
}

fn all_rows_identical(x: &Array2<f64>) -> bool {
    let first = x.row(0);
    x.rows().into_iter().all(|r| {
        r.iter()
            .zip(first.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits())
    })
}

/// (x − center)·P*ᵀ: subtracts the fit-time mean, projects, and leaves the
/// mean out. Probes are affine, so downstream evaluation is unaffected; use
/// [`apply_erasure_restoring_mean`] when exporting embeddings for other
/// consumers.
pub fn apply_erasure(
    artifact: &ErasureArtifact,
    x: &Array2<f64>,
) -> Result<Array2<f64>, SpectralError> {
    apply_impl(artifact, x, false)
}

/// Same projection, with the fit-time mean added back afterwards.
pub fn apply_erasure_restoring_mean(
    artifact: &ErasureArtifact,
    x: &Array2<f64>,
) -> Result<Array2<f64>, SpectralError> {
    apply_impl(artifact, x, true)
}

fn apply_impl(
    artifact: &ErasureArtifact,
    x: &Array2<f64>,
    restore_mean: bool,
) -> Result<Array2<f64>, SpectralError> {
    if x.ncols() != artifact.dim() {
        return Err(SpectralError::DimensionMismatch(format!(
            "x has {} columns, artifact is {}-dimensional",
            x.ncols(),
            artifact.dim()
        )));
    }
    let mut centered = x.clone();
    for mut row in centered.rows_mut() {
        row.zip_mut_with(&artifact.center, |v, &m| *v -= m);
    }
    let mut out = centered.dot(&artifact.p_star.t());
    if restore_mean {
        for mut row in out.rows_mut() {
            row.zip_mut_with(&artifact.center, |v, &m| *v += m);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::build_plan;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(v: Vec<f64>) -> Array1<f64> {
        let a = Array1::from(v);
        let n = linalg::norm(&a);
        a.mapv(|x| x / n)
    }

    #[test]
    fn cross_covariance_zero_input() {
        let x = Array2::<f64>::zeros((2, 2));
        let z = array![[1.0, 0.0], [0.0, 1.0]];
        let cc = cross_covariance(&x, &z).unwrap();
        assert_eq!(cc.omega(), &Array2::<f64>::zeros((2, 2)));
        assert_eq!(cc.n_samples(), 2);
    }

    #[test]
    fn cross_covariance_hand_sum() {
        let x = array![[1.0, 0.0], [-1.0, 0.0]];
        let z = array![[1.0, 0.0], [0.0, 1.0]];
        let cc = cross_covariance(&x, &z).unwrap();
        assert_eq!(cc.omega(), &array![[1.0, -1.0], [0.0, 0.0]]);
    }

    #[test]
    fn cross_covariance_is_linear_in_duplication() {
        let x = array![[1.5, -2.0], [0.5, 3.0], [2.0, 0.0]];
        let z = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        let once = cross_covariance(&x, &z).unwrap();

        let x2 = ndarray::concatenate![ndarray::Axis(0), x, x];
        let z2 = ndarray::concatenate![ndarray::Axis(0), z, z];
        let twice = cross_covariance(&x2, &z2).unwrap();
        let doubled = once.omega().mapv(|v| 2.0 * v);
        assert!(linalg::max_abs_diff(twice.omega(), &doubled) <= 1e-12);
    }

    #[test]
    fn cross_covariance_rejects_bad_input() {
        let x = array![[1.0, 0.0]];
        assert!(matches!(
            cross_covariance(&x, &array![[0.5, 0.5]]),
            Err(SpectralError::NonOneHotRow { row: 0 })
        ));
        assert!(matches!(
            cross_covariance(&x, &array![[1.0, 1.0]]),
            Err(SpectralError::NonOneHotRow { row: 0 })
        ));
        let empty_x = Array2::<f64>::zeros((0, 2));
        let empty_z = Array2::<f64>::zeros((0, 2));
        assert!(matches!(
            cross_covariance(&empty_x, &empty_z),
            Err(SpectralError::EmptyInput)
        ));
        let z3 = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        let x1 = array![[1.0, 0.0]];
        assert!(matches!(
            cross_covariance(&x1, &z3),
            Err(SpectralError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn erasure_step_null_omega_is_noop() {
        let p = linalg::identity(3);
        let cc = CrossCovariance::new(Array2::zeros((3, 2)), 4).unwrap();
        let p_new = erasure_step(&p, &cc, 1, DEFAULT_SIGMA_TOL).unwrap();
        assert_eq!(p_new, p);
    }

    #[test]
    fn erasure_step_rank_one_closed_form() {
        let u = unit(vec![3.0, 0.0, 4.0, 0.0]);
        let v = unit(vec![1.0, -1.0]);
        let omega = Array2::from_shape_fn((4, 2), |(i, j)| 2.5 * u[i] * v[j]);
        let cc = CrossCovariance::new(omega, 10).unwrap();
        let p_new = erasure_step(&linalg::identity(4), &cc, 1, DEFAULT_SIGMA_TOL).unwrap();

        let expected = Array2::from_shape_fn((4, 4), |(i, j)| {
            (if i == j { 1.0 } else { 0.0 }) - u[i] * u[j]
        });
        assert!(linalg::max_abs_diff(&p_new, &expected) <= 1e-12);
    }

    #[test]
    fn erasure_step_is_a_fixed_point_after_annihilation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let omega = Array2::from_shape_fn((6, 2), |_| rng.random::<f64>() - 0.5);
        let cc = CrossCovariance::new(omega, 12).unwrap();
        let p1 = erasure_step(&linalg::identity(6), &cc, 2, DEFAULT_SIGMA_TOL).unwrap();
        let p2 = erasure_step(&p1, &cc, 2, DEFAULT_SIGMA_TOL).unwrap();
        assert!(linalg::max_abs_diff(&p2, &p1) <= 1e-8);
        // the step drove P·Ω to numerical zero
        assert!(linalg::frobenius_norm(&p1.dot(cc.omega())) <= 1e-8 * linalg::frobenius_norm(cc.omega()));
    }

    #[test]
    fn erasure_step_rejects_non_projection() {
        let cc = CrossCovariance::new(Array2::zeros((2, 2)), 1).unwrap();
        let skew = array![[1.0, 0.5], [0.0, 1.0]];
        assert!(matches!(
            erasure_step(&skew, &cc, 1, DEFAULT_SIGMA_TOL),
            Err(SpectralError::NonProjectionInput(_))
        ));
        let scaled = array![[2.0, 0.0], [0.0, 2.0]];
        assert!(matches!(
            erasure_step(&scaled, &cc, 1, DEFAULT_SIGMA_TOL),
            Err(SpectralError::NonProjectionInput(_))
        ));
    }

    /// Two languages, each with its bias direction planted exactly and a
    /// balanced ± sign, no noise.
    fn planted_two_language(u_en: &Array1<f64>, u_de: &Array1<f64>, per_side: usize) -> EmbeddingDataset {
        let d = u_en.len();
        let mut rows = Vec::new();
        let mut language = Vec::new();
        let mut z = Vec::new();
        for (lang, dir) in [("en", u_en), ("de", u_de)] {
            for s in 0..(2 * per_side) {
                let sign = if s % 2 == 0 { 1.0 } else { -1.0 };
                rows.push(dir.mapv(|v| sign * v));
                language.push(lang.to_string());
                z.push(if sign > 0.0 { 1 } else { 0 });
            }
        }
        let n = rows.len();
        let x = Array2::from_shape_fn((n, d), |(i, j)| rows[i][j]);
        let y = vec![0; n]
            .iter()
            .enumerate()
            .map(|(i, _)| i % 2)
            .collect();
        EmbeddingDataset::new(
            x,
            language,
            z,
            y,
            vec!["g0".into(), "g1".into()],
            vec!["c0".into(), "c1".into()],
        )
        .unwrap()
    }

    #[test]
    fn fit_singleton_plan_matches_standalone_step() {
        let u_en = unit(vec![1.0, 2.0, 0.0, -1.0, 0.5]);
        let u_de = unit(vec![0.0, 0.0, 3.0, 0.0, 0.0]);
        let ds = planted_two_language(&u_en, &u_de, 8);
        let plan = build_plan(
            &["en", "de"],
            &["en"],
            PlanMode::Monolingual,
            SubsetOrder::GlobalThenLocal,
            2,
        )
        .unwrap();
        let artifact = fit_erasure(&ds, &plan).unwrap();

        // standalone: same centered data, same subset, one public step from I
        let (centered, _) = dataio::center_dataset(&ds);
        let rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.language[i] == "en").collect();
        let xe = centered.x.select(ndarray::Axis(0), &rows);
        let ze: Vec<usize> = rows.iter().map(|&i| ds.z[i]).collect();
        let cc = cross_covariance(&xe, &dataio::one_hot(&ze, 2).unwrap()).unwrap();
        let standalone = erasure_step(&linalg::identity(5), &cc, 2, DEFAULT_SIGMA_TOL).unwrap();

        assert!(linalg::max_abs_diff(artifact.p_star(), &standalone) <= 1e-8);
    }

    #[test]
    fn fit_orthogonal_bias_pair_closed_form() {
        let u_en = unit(vec![1.0, 0.0, 0.0, 0.0]);
        let u_de = unit(vec![0.0, 1.0, 0.0, 0.0]);
        let ds = planted_two_language(&u_en, &u_de, 10);
        let plan = ErasurePlan::custom(
            &[vec!["en"], vec!["de"]],
            &["en", "de"],
            &[] as &[&str],
            2,
            true,
        )
        .unwrap();
        let artifact = fit_erasure(&ds, &plan).unwrap();
        let expected = Array2::from_shape_fn((4, 4), |(i, j)| {
            let id = if i == j { 1.0 } else { 0.0 };
            id - u_en[i] * u_en[j] - u_de[i] * u_de[j]
        });
        assert!(linalg::max_abs_diff(artifact.p_star(), &expected) <= 1e-6);
        // annihilation carries to the final artifact for both subsets
        for (subset, lang) in [("en", "en"), ("de", "de")] {
            let _ = subset;
            let (centered, _) = dataio::center_dataset(&ds);
            let rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.language[i] == lang).collect();
            let xl = centered.x.select(ndarray::Axis(0), &rows);
            let zl: Vec<usize> = rows.iter().map(|&i| ds.z[i]).collect();
            let cc = cross_covariance(&xl, &dataio::one_hot(&zl, 2).unwrap()).unwrap();
            let residual = artifact.p_star().dot(cc.omega());
            assert!(
                linalg::frobenius_norm(&residual)
                    <= 1e-6 * linalg::frobenius_norm(cc.omega())
            );
        }
    }

    #[test]
    fn fit_reports_missing_language_and_empty_plan() {
        let u = unit(vec![1.0, 0.0]);
        let v = unit(vec![0.0, 1.0]);
        let ds = planted_two_language(&u, &v, 4);
        let plan = ErasurePlan::custom(&[vec!["fr"]], &["fr"], &[] as &[&str], 1, true).unwrap();
        assert!(matches!(
            fit_erasure(&ds, &plan),
            Err(SpectralError::MissingLanguage { .. })
        ));

        let mut empty = plan;
        empty.subsets.clear();
        assert!(matches!(
            fit_erasure(&ds, &empty),
            Err(SpectralError::EmptyPlan)
        ));
    }

    #[test]
    fn fit_rejects_identical_samples() {
        let x = Array2::from_shape_fn((6, 3), |(_, j)| j as f64);
        let ds = EmbeddingDataset::new(
            x,
            vec!["en".into(); 6],
            vec![0, 1, 0, 1, 0, 1],
            vec![0; 6],
            vec!["g0".into(), "g1".into()],
            vec!["c0".into()],
        )
        .unwrap();
        let plan = build_plan(
            &["en"],
            &["en"],
            PlanMode::FullyJoint,
            SubsetOrder::GlobalThenLocal,
            1,
        )
        .unwrap();
        assert!(matches!(
            fit_erasure(&ds, &plan),
            Err(SpectralError::DegenerateData)
        ));
    }

    #[test]
    fn apply_identity_artifact_is_identity() {
        let artifact = ErasureArtifact::identity(3, &["en"]).unwrap();
        let x = array![[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]];
        let out = apply_erasure(&artifact, &x).unwrap();
        assert!(linalg::max_abs_diff(&out, &x) <= 1e-15);
    }

    #[test]
    fn apply_sends_removed_direction_to_zero() {
        let u_en = unit(vec![1.0, 0.0, 0.0]);
        let u_de = unit(vec![0.0, 1.0, 0.0]);
        let ds = planted_two_language(&u_en, &u_de, 6);
        let plan = ErasurePlan::custom(
            &[vec!["en"], vec!["de"]],
            &["en", "de"],
            &[] as &[&str],
            1,
            true,
        )
        .unwrap();
        let artifact = fit_erasure(&ds, &plan).unwrap();
        let x = Array2::from_shape_fn((1, 3), |(_, j)| u_en[j]);
        let out = apply_erasure(&artifact, &x).unwrap();
        assert!(out.iter().all(|v| v.abs() <= 1e-8));
    }

    #[test]
    fn apply_twice_equals_once() {
        // zero-center artifact: projection alone, idempotent exactly
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u_en = unit(vec![2.0, -1.0, 0.5, 0.0]);
        let u_de = unit(vec![1.0, 2.0, 0.0, 1.0]);
        let ds = planted_two_language(&u_en, &u_de, 8);
        let mut plan = ErasurePlan::custom(
            &[vec!["en"], vec!["de"]],
            &["en", "de"],
            &[] as &[&str],
            2,
            false,
        )
        .unwrap();
        let artifact = fit_erasure(&ds, &plan).unwrap();
        let x = Array2::from_shape_fn((5, 4), |_| rng.random::<f64>() * 4.0 - 2.0);
        let once = apply_erasure(&artifact, &x).unwrap();
        let twice = apply_erasure(&artifact, &once).unwrap();
        assert!(linalg::max_abs_diff(&twice, &once) <= 1e-10);

        // with a nonzero center the mean-restoring map is the idempotent one
        plan.center = true;
        let shifted = {
            let mut c = ds.clone();
            c.x.mapv_inplace(|v| v + 0.75);
            c
        };
        let artifact = fit_erasure(&shifted, &plan).unwrap();
        let once = apply_erasure_restoring_mean(&artifact, &x).unwrap();
        let twice = apply_erasure_restoring_mean(&artifact, &once).unwrap();
        assert!(linalg::max_abs_diff(&twice, &once) <= 1e-10);
    }

    #[test]
    fn fit_is_permutation_invariant_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40;
        let d = 6;
        let x = Array2::from_shape_fn((n, d), |_| rng.random::<f64>() - 0.5);
        let language: Vec<String> = (0..n)
            .map(|i| if i % 2 == 0 { "en".into() } else { "de".into() })
            .collect();
        let z: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let y = vec![0usize; n];
        let ds = EmbeddingDataset::new(
            x,
            language,
            z,
            y,
            vec!["g0".into(), "g1".into()],
            vec!["c0".into()],
        )
        .unwrap();

        let mut shuffled_rows: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            shuffled_rows.swap(i, j);
        }
        let shuffled = ds.select(&shuffled_rows).unwrap();

        let plan = build_plan(
            &["en", "de"],
            &[] as &[&str],
            PlanMode::SubsetsWithTarget,
            SubsetOrder::GlobalThenLocal,
            2,
        )
        .unwrap();
        let a = fit_erasure(&ds, &plan).unwrap();
        let b = fit_erasure(&shuffled, &plan).unwrap();
        let identical = a
            .p_star()
            .iter()
            .zip(b.p_star().iter())
            .all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(identical, "P* must be bit-identical under row shuffles");
    }

    #[test]
    fn fit_is_scale_covariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 60;
        let d = 8;
        let x = Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 2.0 - 1.0);
        let language: Vec<String> = (0..n)
            .map(|i| if i < n / 2 { "en".into() } else { "de".into() })
            .collect();
        let z: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let ds = EmbeddingDataset::new(
            x,
            language,
            z,
            vec![0; n],
            vec!["g0".into(), "g1".into()],
            vec!["c0".into()],
        )
        .unwrap();
        let plan = build_plan(
            &["en", "de"],
            &[] as &[&str],
            PlanMode::SubsetsWithTarget,
            SubsetOrder::GlobalThenLocal,
            2,
        )
        .unwrap();
        let base = fit_erasure(&ds, &plan).unwrap();
        for c in [0.5, 10.0] {
            let mut scaled = ds.clone();
            scaled.x.mapv_inplace(|v| c * v);
            let fit = fit_erasure(&scaled, &plan).unwrap();
            assert!(
                linalg::max_abs_diff(fit.p_star(), base.p_star()) <= 1e-8,
                "P* must be invariant to embedding scale {c}"
            );
        }
    }

    #[test]
    fn fit_rank_budget_and_projection_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..10u64 {
            let n = 80;
            let d = 10;
            let x = Array2::from_shape_fn((n, d), |_| rng.random::<f64>() - 0.5);
            let language: Vec<String> = (0..n)
                .map(|i| format!("l{}", i % 3))
                .collect();
            let z: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let ds = EmbeddingDataset::new(
                x,
                language,
                z,
                vec![0; n],
                vec!["g0".into(), "g1".into()],
                vec!["c0".into()],
            )
            .unwrap();
            let k = 1 + (trial as usize % 2);
            let plan = build_plan(
                &["l0", "l1", "l2"],
                &[] as &[&str],
                PlanMode::SubsetsWithTarget,
                SubsetOrder::GlobalThenLocal,
                k,
            )
            .unwrap();
            let artifact = fit_erasure(&ds, &plan).unwrap();
            let p = artifact.p_star();
            assert!(linalg::max_abs_diff(p, &p.t().to_owned()) <= 1e-10);
            assert!(linalg::max_abs_diff(&p.dot(p), p) <= 1e-8);

            // rank at tolerance 1e-8 via the projection trace
            let trace: f64 = (0..d).map(|i| p[[i, i]]).sum();
            let rank = trace.round() as usize;
            assert!(rank >= d.saturating_sub(k * plan.len()));
        }
    }

    #[test]
    fn artifact_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let u_en = unit(vec![1.0, 1.0, 0.0]);
        let u_de = unit(vec![1.0, -1.0, 0.0]);
        let ds = planted_two_language(&u_en, &u_de, 5);
        let plan = build_plan(
            &["en", "de"],
            &[] as &[&str],
            PlanMode::FullyJoint,
            SubsetOrder::GlobalThenLocal,
            2,
        )
        .unwrap();
        let artifact = fit_erasure(&ds, &plan).unwrap();
        let path = dir.path().join("artifact.json");
        artifact.save(&path).unwrap();
        let loaded = ErasureArtifact::load(&path).unwrap();
        assert_eq!(loaded.plan_fingerprint(), artifact.plan_fingerprint());
        assert_eq!(loaded.k(), artifact.k());
        let identical = loaded
            .p_star()
            .iter()
            .zip(artifact.p_star().iter())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(identical);

        // corrupting the blob trips the checksum
        let blob = dir.path().join("artifact.bin");
        let mut bytes = fs::read(&blob).unwrap();
        bytes[0] ^= 0xff;
        fs::write(&blob, &bytes).unwrap();
        assert!(matches!(
            ErasureArtifact::load(&path),
            Err(SpectralError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn singular_triple_factors_are_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let a = Array2::from_shape_fn((7, 3), |_| rng.random::<f64>() - 0.5);
        let t = SingularTriple::decompose(&a).unwrap();
        assert_eq!(t.u.dim(), (7, 7));
        assert_eq!(t.v.dim(), (3, 3));
        assert_eq!(t.sigma.len(), 3);
        assert!(t.sigma.windows(2).all(|w| w[0] >= w[1]));

        let utu = t.u.t().dot(&t.u);
        assert!(linalg::max_abs_diff(&utu, &linalg::identity(7)) <= 1e-10);
        let vtv = t.v.t().dot(&t.v);
        assert!(linalg::max_abs_diff(&vtv, &linalg::identity(3)) <= 1e-10);

        // reconstruction through the full factors
        let mut recon = Array2::<f64>::zeros((7, 3));
        for (idx, &s) in t.sigma.iter().enumerate() {
            for i in 0..7 {
                for j in 0..3 {
                    recon[[i, j]] += s * t.u[[i, idx]] * t.v[[j, idx]];
                }
            }
        }
        assert!(linalg::max_abs_diff(&recon, &a) <= 1e-10);
    }
}
