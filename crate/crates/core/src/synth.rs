//! Seeded synthetic multilingual embedding datasets.
//!
//! Each language draws a latent state h, mixes a shared set of
//! meta-linguistic centroids with language-specific weights, and adds an
//! isotropic Gaussian around that mean. The protected label z contributes
//! only through a planted unit direction scaled by `signal_strength` and
//! signed by z, added outside the latent mixture — so the attribute signal
//! is exactly the rank-one term an erasure step can remove, and
//! `signal_strength = 0` makes z carry no embedding information at all.
//! The main-task label is the latent state itself.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::EmbeddingDataset;
use crate::linalg;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid mixture weights: {0}")]
    InvalidWeights(String),
    #[error("bias direction for {language:?} is not unit norm (got {norm})")]
    NonUnitBias { language: String, norm: f64 },
    #[error("dimension {d} too small (need at least {min})")]
    DimensionTooSmall { d: usize, min: usize },
    #[error("config is inconsistent: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub d: usize,
    pub languages: Vec<String>,
    /// C meta-linguistic centroid sets, each H×d: `centroids[c][h]` is the
    /// prototype for centroid c under latent state h.
    pub centroids: Vec<Vec<Vec<f64>>>,
    /// language → H×C mixture weights over centroids; rows sum to 1.
    pub zeta: BTreeMap<String, Vec<Vec<f64>>>,
    /// language → distribution over the H latent states; sums to 1.
    pub mu: BTreeMap<String, Vec<f64>>,
    /// language → planted unit direction carrying the z signal.
    pub bias_directions: BTreeMap<String, Vec<f64>>,
    pub signal_strength: f64,
    pub noise_sigma: f64,
    pub samples_per_language: usize,
    pub seed: u64,
}

const WEIGHT_TOL: f64 = 1e-12;

impl MixtureConfig {
    pub fn num_centroids(&self) -> usize {
        self.centroids.len()
    }

    pub fn num_states(&self) -> usize {
        self.centroids.first().map(|c| c.len()).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.d == 0 || self.languages.is_empty() {
            return Err(SynthError::Invalid("need d >= 1 and a language".into()));
        }
        if self.samples_per_language == 0 {
            return Err(SynthError::Invalid("samples_per_language must be >= 1".into()));
        }
        if !(self.noise_sigma > 0.0) {
            return Err(SynthError::Invalid("noise_sigma must be positive".into()));
        }
        if self.signal_strength < 0.0 {
            return Err(SynthError::Invalid("signal_strength must be >= 0".into()));
        }
        let c = self.num_centroids();
        let h = self.num_states();
        if c == 0 || h == 0 {
            return Err(SynthError::Invalid("need at least one centroid and state".into()));
        }
        for (ci, per_state) in self.centroids.iter().enumerate() {
            if per_state.len() != h {
                return Err(SynthError::Invalid(format!(
                    "centroid {ci} has {} states, expected {h}",
                    per_state.len()
                )));
            }
            for v in per_state {
                if v.len() != self.d {
                    return Err(SynthError::Invalid(format!(
                        "centroid {ci} has a vector of length {}, expected {}",
                        v.len(),
                        self.d
                    )));
                }
            }
        }
        for lang in &self.languages {
            let zeta = self
                .zeta
                .get(lang)
                .ok_or_else(|| SynthError::Invalid(format!("no zeta weights for {lang:?}")))?;
            if zeta.len() != h {
                return Err(SynthError::InvalidWeights(format!(
                    "zeta for {lang:?} has {} rows, expected {h}",
                    zeta.len()
                )));
            }
            for row in zeta {
                if row.len() != c {
                    return Err(SynthError::InvalidWeights(format!(
                        "zeta row for {lang:?} has {} entries, expected {c}",
                        row.len()
                    )));
                }
                check_simplex(row, lang)?;
            }
            let mu = self
                .mu
                .get(lang)
                .ok_or_else(|| SynthError::Invalid(format!("no mu weights for {lang:?}")))?;
            if mu.len() != h {
                return Err(SynthError::InvalidWeights(format!(
                    "mu for {lang:?} has {} entries, expected {h}",
                    mu.len()
                )));
            }
            check_simplex(mu, lang)?;
            let bias = self
                .bias_directions
                .get(lang)
                .ok_or_else(|| SynthError::Invalid(format!("no bias direction for {lang:?}")))?;
            if bias.len() != self.d {
                return Err(SynthError::Invalid(format!(
                    "bias direction for {lang:?} has length {}, expected {}",
                    bias.len(),
                    self.d
                )));
            }
            let norm = bias.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > WEIGHT_TOL {
                return Err(SynthError::NonUnitBias {
                    language: lang.clone(),
                    norm,
                });
            }
        }
        Ok(())
    }

    /// Randomly parameterized config: 3 centroid sets over 2 latent states,
    /// simplex weights, and mutually orthogonal bias directions when the
    /// dimension allows it.
    pub fn sampled<S: AsRef<str>>(
        languages: &[S],
        d: usize,
        samples_per_language: usize,
        signal_strength: f64,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<Self, SynthError> {
        if d < 2 {
            return Err(SynthError::DimensionTooSmall { d, min: 2 });
        }
        let languages: Vec<String> = languages
            .iter()
            .map(|s| s.as_ref().trim().to_lowercase())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = 3;
        let h = 2;
        let centroids: Vec<Vec<Vec<f64>>> = (0..c)
            .map(|_| {
                (0..h)
                    .map(|_| gaussian_vec(&mut rng, d).to_vec())
                    .collect()
            })
            .collect();

        let mut zeta = BTreeMap::new();
        let mut mu = BTreeMap::new();
        let mut bias_directions = BTreeMap::new();
        let mut bias_basis: Vec<Array1<f64>> = Vec::new();
        for lang in &languages {
            zeta.insert(
                lang.clone(),
                (0..h).map(|_| random_simplex(&mut rng, c)).collect(),
            );
            mu.insert(lang.clone(), random_simplex(&mut rng, h));

            let mut dir = gaussian_vec(&mut rng, d);
            if bias_basis.len() < d {
                linalg::orthogonalize_against(&mut dir, &bias_basis);
            }
            let n = linalg::norm(&dir);
            dir.mapv_inplace(|v| v / n);
            bias_basis.push(dir.clone());
            bias_directions.insert(lang.clone(), dir.to_vec());
        }

        let config = MixtureConfig {
            d,
            languages,
            centroids,
            zeta,
            mu,
            bias_directions,
            signal_strength,
            noise_sigma,
            samples_per_language,
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn to_json_file(&self, path: &Path) -> Result<(), SynthError> {
        let text = serde_json::to_string_pretty(self)?;
        crate::dataio::write_atomic(path, text.as_bytes())?;
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self, SynthError> {
        let text = fs::read_to_string(path)?;
        let config: MixtureConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }
}

fn check_simplex(row: &[f64], lang: &str) -> Result<(), SynthError> {
    if row.iter().any(|&w| w < 0.0) {
        return Err(SynthError::InvalidWeights(format!(
            "negative weight for {lang:?}"
        )));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_TOL {
        return Err(SynthError::InvalidWeights(format!(
            "weights for {lang:?} sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

fn random_simplex(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.random::<f64>() + 1e-3).collect();
    let sum: f64 = raw.iter().sum();
    let mut out: Vec<f64> = raw.iter().map(|v| v / sum).collect();
    // pin the row sum to exactly 1 so validation is bit-strict
    let correction: f64 = 1.0 - out.iter().sum::<f64>();
    out[0] += correction;
    out
}

/// Standard normals via Box–Muller; pairs are drawn per call, so the stream
/// depends only on the rng state and the requested length.
fn fill_gaussian(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let mut i = 0;
    while i < out.len() {
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        out[i] = r * theta.cos();
        i += 1;
        if i < out.len() {
            out[i] = r * theta.sin();
            i += 1;
        }
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    let mut v = vec![0.0; d];
    fill_gaussian(rng, &mut v);
    Array1::from(v)
}

fn categorical(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let draw: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if draw < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Generates the dataset described by `config`, deterministically per seed.
pub fn generate(config: &MixtureConfig) -> Result<EmbeddingDataset, SynthError> {
    config.validate()?;
    let d = config.d;
    let h_count = config.num_states();
    let c_count = config.num_centroids();
    let n = config.languages.len() * config.samples_per_language;

    // per-(language, state) mixture means
    let mut means: BTreeMap<&str, Vec<Array1<f64>>> = BTreeMap::new();
    for lang in &config.languages {
        let zeta = &config.zeta[lang];
        let mut per_state = Vec::with_capacity(h_count);
        for h in 0..h_count {
            let mut mean = Array1::<f64>::zeros(d);
            for c in 0..c_count {
                let w = zeta[h][c];
                for (i, &v) in config.centroids[c][h].iter().enumerate() {
                    mean[i] += w * v;
                }
            }
            per_state.push(mean);
        }
        means.insert(lang.as_str(), per_state);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut x = Array2::<f64>::zeros((n, d));
    let mut language = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut noise = vec![0.0; d];

    let mut row = 0;
    for lang in &config.languages {
        let mu = &config.mu[lang];
        let bias = &config.bias_directions[lang];
        for _ in 0..config.samples_per_language {
            let h = categorical(&mut rng, mu);
            let zi = usize::from(rng.random::<f64>() < 0.5);
            let sign = if zi == 1 { 1.0 } else { -1.0 };
            fill_gaussian(&mut rng, &mut noise);
            let mean = &means[lang.as_str()][h];
            for i in 0..d {
                x[[row, i]] = mean[i]
                    + config.signal_strength * sign * bias[i]
                    + config.noise_sigma * noise[i];
            }
            language.push(lang.clone());
            z.push(zi);
            y.push(h);
            row += 1;
        }
    }

    let class_names: Vec<String> = (0..h_count).map(|h| format!("h{h}")).collect();
    EmbeddingDataset::new(
        x,
        language,
        z,
        y,
        vec!["g0".into(), "g1".into()],
        class_names,
    )
    .map_err(|e| SynthError::Invalid(e.to_string()))
}

/// Two exactly-orthogonal unit vectors, seeded.
pub fn make_orthogonal_bias_pair(d: usize, seed: u64) -> Result<(Array1<f64>, Array1<f64>), SynthError> {
    if d < 2 {
        return Err(SynthError::DimensionTooSmall { d, min: 2 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = gaussian_vec(&mut rng, d);
    let nu = linalg::norm(&u);
    u.mapv_inplace(|v| v / nu);
    loop {
        let mut v = gaussian_vec(&mut rng, d);
        linalg::orthogonalize_against(&mut v, std::slice::from_ref(&u));
        let nv = linalg::norm(&v);
        if nv > 1e-6 {
            v.mapv_inplace(|x| x / nv);
            return Ok((u, v));
        }
    }
}
