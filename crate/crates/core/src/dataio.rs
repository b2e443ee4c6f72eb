//! Dataset loading, validation, and persistence.
//!
//! On-disk layout is a JSON manifest next to a raw little-endian row-major
//! embedding blob and a labels CSV (`id,language,z,y`). All paths in the
//! manifest are relative to the manifest's directory. Group and class
//! vocabularies are built lexicographically from the label strings, so row
//! order never changes the id assignment.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::linalg;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("checksum mismatch for {path}: manifest {expected}, blob {actual}")]
    ChecksumMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },
    #[error("blob holds {actual} bytes but manifest implies {expected} (n*d*{width})")]
    RaggedRows {
        expected: usize,
        actual: usize,
        width: usize,
    },
    #[error("unknown dtype {0:?} (expected f32le, f64le, or csv)")]
    UnknownDtype(String),
    #[error("labels CSV is missing column {0:?}")]
    MissingColumn(&'static str),
    #[error("label {label} out of range (limit {limit})")]
    LabelOutOfRange { label: usize, limit: usize },
    #[error("reputation percentile {0} outside [0, 100]")]
    InvalidPercentile(f64),
    #[error("dataset validation failed: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Rows of (embedding, language tag, protected label, main-task label).
#[derive(Debug, Clone)]
pub struct EmbeddingDataset {
    pub x: Array2<f64>,
    pub language: Vec<String>,
    pub z: Vec<usize>,
    pub y: Vec<usize>,
    pub group_names: Vec<String>,
    pub class_names: Vec<String>,
}

impl EmbeddingDataset {
    pub fn new(
        x: Array2<f64>,
        language: Vec<String>,
        z: Vec<usize>,
        y: Vec<usize>,
        group_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self, DataError> {
        let n = x.nrows();
        if n == 0 {
            return Err(DataError::Invalid("dataset has no rows".into()));
        }
        if language.len() != n || z.len() != n || y.len() != n {
            return Err(DataError::Invalid(format!(
                "parallel arrays disagree: x has {} rows, language {}, z {}, y {}",
                n,
                language.len(),
                z.len(),
                y.len()
            )));
        }
        if let Some(&bad) = z.iter().find(|&&g| g >= group_names.len()) {
            return Err(DataError::LabelOutOfRange {
                label: bad,
                limit: group_names.len(),
            });
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= class_names.len()) {
            return Err(DataError::LabelOutOfRange {
                label: bad,
                limit: class_names.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Invalid("embedding matrix has NaN/Inf".into()));
        }
        Ok(EmbeddingDataset {
            x,
            language,
            z,
            y,
            group_names,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Languages present, sorted.
    pub fn languages(&self) -> BTreeSet<String> {
        self.language.iter().cloned().collect()
    }

    /// Row subset as a new dataset (vocabularies preserved).
    pub fn select(&self, rows: &[usize]) -> Result<Self, DataError> {
        if rows.is_empty() {
            return Err(DataError::Invalid("row selection is empty".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.len()) {
            return Err(DataError::Invalid(format!(
                "row index {} out of range ({} rows)",
                bad,
                self.len()
            )));
        }
        let x = Array2::from_shape_fn((rows.len(), self.dim()), |(i, j)| self.x[[rows[i], j]]);
        Ok(EmbeddingDataset {
            x,
            language: rows.iter().map(|&r| self.language[r].clone()).collect(),
            z: rows.iter().map(|&r| self.z[r]).collect(),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            group_names: self.group_names.clone(),
            class_names: self.class_names.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlobDtype {
    #[serde(rename = "f32le")]
    F32Le,
    #[serde(rename = "f64le")]
    F64Le,
    #[serde(rename = "csv")]
    Csv,
}

impl BlobDtype {
    fn width(self) -> usize {
        match self {
            BlobDtype::F32Le => 4,
            BlobDtype::F64Le => 8,
            BlobDtype::Csv => 0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(default)]
    pub train: Vec<usize>,
    #[serde(default)]
    pub validation: Vec<usize>,
    #[serde(default)]
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n: usize,
    pub d: usize,
    pub dtype: BlobDtype,
    pub path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    pub labels: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub splits: Option<SplitSpec>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self, DataError> {
        if !path.exists() {
            return Err(DataError::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{:02x}", b))
        .collect()
}

/// Writes via a temp file in the same directory and renames into place, so
/// a failed run never leaves a partial artifact behind.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into())
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

struct LabelRow {
    id: usize,
    language: String,
    z: String,
    y: String,
}

fn read_labels_csv(path: &Path) -> Result<Vec<LabelRow>, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &'static str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or(DataError::MissingColumn(name))
    };
    let (ci, cl, cz, cy) = (col("id")?, col("language")?, col("z")?, col("y")?);
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let id: usize = record
            .get(ci)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| DataError::Invalid("non-integer id in labels CSV".into()))?;
        rows.push(LabelRow {
            id,
            language: record.get(cl).unwrap_or("").trim().to_lowercase(),
            z: record.get(cz).unwrap_or("").trim().to_string(),
            y: record.get(cy).unwrap_or("").trim().to_string(),
        });
    }
    Ok(rows)
}

fn read_blob(path: &Path, n: usize, d: usize, dtype: BlobDtype) -> Result<Array2<f64>, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    if dtype == BlobDtype::Csv {
        let mut reader = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
        let mut values = Vec::with_capacity(n * d);
        for record in reader.records() {
            let record = record?;
            for v in record.iter() {
                values.push(v.trim().parse::<f64>().map_err(|_| {
                    DataError::Invalid(format!("non-numeric value {:?} in embedding CSV", v))
                })?);
            }
        }
        if values.len() != n * d {
            return Err(DataError::RaggedRows {
                expected: n * d,
                actual: values.len(),
                width: 1,
            });
        }
        return Array2::from_shape_vec((n, d), values)
            .map_err(|e| DataError::Invalid(e.to_string()));
    }

    let bytes = fs::read(path)?;
    let width = dtype.width();
    if bytes.len() != n * d * width {
        return Err(DataError::RaggedRows {
            expected: n * d * width,
            actual: bytes.len(),
            width,
        });
    }
    let mut values = Vec::with_capacity(n * d);
    match dtype {
        BlobDtype::F32Le => {
            for chunk in bytes.chunks_exact(4) {
                values.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
            }
        }
        BlobDtype::F64Le => {
            for chunk in bytes.chunks_exact(8) {
                values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
        }
        BlobDtype::Csv => unreachable!(),
    }
    Array2::from_shape_vec((n, d), values).map_err(|e| DataError::Invalid(e.to_string()))
}

/// Loads a dataset from its manifest, verifying shapes and (when present)
/// the blob checksum. Vocabularies come out lexicographic regardless of row
/// order in the labels file.
pub fn load_dataset(manifest_path: &Path) -> Result<EmbeddingDataset, DataError> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let blob_path = base.join(&manifest.path);

    if let Some(expected) = &manifest.sha256 {
        if manifest.dtype != BlobDtype::Csv {
            let bytes = fs::read(&blob_path)
                .map_err(|_| DataError::MissingFile(blob_path.clone()))?;
            let actual = sha256_hex(&bytes);
            if &actual != expected {
                return Err(DataError::ChecksumMismatch {
                    path: blob_path.clone(),
                    expected: expected.clone(),
                    actual,
                });
            }
        }
    }

    let x = read_blob(&blob_path, manifest.n, manifest.d, manifest.dtype)?;
    let mut rows = read_labels_csv(&base.join(&manifest.labels))?;
    if rows.len() != manifest.n {
        return Err(DataError::Invalid(format!(
            "labels CSV has {} rows, manifest says n={}",
            rows.len(),
            manifest.n
        )));
    }
    rows.sort_by_key(|r| r.id);
    for (i, row) in rows.iter().enumerate() {
        if row.id != i {
            return Err(DataError::Invalid(format!(
                "label ids must be exactly 0..n-1; found {}",
                row.id
            )));
        }
    }

    let group_names: Vec<String> = rows
        .iter()
        .map(|r| r.z.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let class_names: Vec<String> = rows
        .iter()
        .map(|r| r.y.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let gid = |v: &str| group_names.iter().position(|g| g == v).unwrap();
    let cid = |v: &str| class_names.iter().position(|c| c == v).unwrap();

    EmbeddingDataset::new(
        x,
        rows.iter().map(|r| r.language.clone()).collect(),
        rows.iter().map(|r| gid(&r.z)).collect(),
        rows.iter().map(|r| cid(&r.y)).collect(),
        group_names,
        class_names,
    )
}

/// Writes manifest + blob + labels CSV. Blob bytes and label text are fully
/// determined by the dataset, so identical datasets produce identical files.
pub fn save_dataset(
    ds: &EmbeddingDataset,
    manifest_path: &Path,
    dtype: BlobDtype,
    splits: Option<&SplitSpec>,
) -> Result<(), DataError> {
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let stem = manifest_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());

    let blob_name = match dtype {
        BlobDtype::Csv => format!("{stem}.x.csv"),
        _ => format!("{stem}.x.bin"),
    };
    let labels_name = format!("{stem}.labels.csv");

    let blob_bytes: Vec<u8> = match dtype {
        BlobDtype::F32Le => ds
            .x
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect(),
        BlobDtype::F64Le => ds.x.iter().flat_map(|&v| v.to_le_bytes()).collect(),
        BlobDtype::Csv => {
            let mut text = String::new();
            for row in ds.x.rows() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                text.push_str(&cells.join(","));
                text.push('\n');
            }
            text.into_bytes()
        }
    };
    write_atomic(&base.join(&blob_name), &blob_bytes)?;

    let mut labels = String::from("id,language,z,y\n");
    for i in 0..ds.len() {
        labels.push_str(&format!(
            "{},{},{},{}\n",
            i, ds.language[i], ds.group_names[ds.z[i]], ds.class_names[ds.y[i]]
        ));
    }
    write_atomic(&base.join(&labels_name), labels.as_bytes())?;

    let manifest = DatasetManifest {
        n: ds.len(),
        d: ds.dim(),
        dtype,
        path: blob_name,
        sha256: (dtype != BlobDtype::Csv).then(|| sha256_hex(&blob_bytes)),
        labels: labels_name,
        splits: splits.cloned(),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    write_atomic(manifest_path, text.as_bytes())?;
    Ok(())
}

/// Canonical accumulation order: rows sorted by (language, z, y, embedding
/// bit patterns). Any permutation of the input rows maps to the same order,
/// which keeps floating-point sums bit-identical under row shuffles.
pub(crate) fn canonical_row_order(ds: &EmbeddingDataset, rows: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = rows.to_vec();
    order.sort_by(|&a, &b| {
        ds.language[a]
            .cmp(&ds.language[b])
            .then(ds.z[a].cmp(&ds.z[b]))
            .then(ds.y[a].cmp(&ds.y[b]))
            .then_with(|| {
                let ra = ds.x.row(a);
                let rb = ds.x.row(b);
                for (va, vb) in ra.iter().zip(rb.iter()) {
                    let c = va.to_bits().cmp(&vb.to_bits());
                    if c != std::cmp::Ordering::Equal {
                        return c;
                    }
                }
                std::cmp::Ordering::Equal
            })
    });
    order
}

/// Subtracts the pooled column mean; returns the centered dataset and the
/// mean vector. The mean is accumulated in canonical row order, so shuffled
/// inputs center to bit-identical values.
pub fn center_dataset(ds: &EmbeddingDataset) -> (EmbeddingDataset, Array1<f64>) {
    let all: Vec<usize> = (0..ds.len()).collect();
    let order = canonical_row_order(ds, &all);
    let mean = linalg::column_means_ordered(&ds.x, &order);
    let mut x = ds.x.clone();
    for mut row in x.rows_mut() {
        row.zip_mut_with(&mean, |v, &m| *v -= m);
    }
    let mut out = ds.clone();
    out.x = x;
    (out, mean)
}

/// One-hot encoding with `n_groups` columns.
pub fn one_hot(z: &[usize], n_groups: usize) -> Result<Array2<f64>, DataError> {
    if let Some(&bad) = z.iter().find(|&&g| g >= n_groups) {
        return Err(DataError::LabelOutOfRange {
            label: bad,
            limit: n_groups,
        });
    }
    let mut m = Array2::<f64>::zeros((z.len(), n_groups));
    for (i, &g) in z.iter().enumerate() {
        m[[i, g]] = 1.0;
    }
    Ok(m)
}

/// Labels posts from (author reputation percentile, upvote count) pairs:
/// the top 1% of reputation is the protected group (z = 1), four or more
/// upvotes means helpful (y = 1), zero upvotes means not helpful, and posts
/// with 1–3 upvotes fall between the two definitions and are masked out.
pub fn derive_reputation_labels(
    rows: &[(f64, u32)],
) -> Result<(Vec<usize>, Vec<usize>, Vec<bool>), DataError> {
    let mut z = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    let mut keep = Vec::with_capacity(rows.len());
    for &(percentile, upvotes) in rows {
        if !(0.0..=100.0).contains(&percentile) {
            return Err(DataError::InvalidPercentile(percentile));
        }
        z.push(usize::from(percentile >= 99.0));
        y.push(usize::from(upvotes >= 4));
        keep.push(!(1..=3).contains(&upvotes));
    }
    Ok((z, y, keep))
}
