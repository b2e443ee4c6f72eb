//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use erasure_core::{
    accuracy, apply_erasure, apply_erasure_restoring_mean, build_plan, fit_erasure_with, generate,
    load_dataset, save_dataset, save_probe, tpr_gap, train_probe, AggregateKind, BlobDtype,
    DatasetManifest, EmbeddingDataset, ErasureArtifact, ErasurePlan, EvalRow, FitOptions,
    MetricsError, MixtureConfig, PlanMode, ProbeConfig, SplitSpec, SubsetOrder,
};

use crate::context::{data, numeric, probe_err, spectral, synth_err, usage, CliError};
use crate::pca::pca_2d;

pub fn cmd_plan(
    source: &[String],
    target: &[String],
    mode: PlanMode,
    order: SubsetOrder,
    k: usize,
    center: bool,
    subsets: Option<&str>,
    output: &Path,
) -> Result<(), CliError> {
    let plan = if mode == PlanMode::Custom {
        let spec = subsets.ok_or_else(|| usage("--mode custom requires --subsets"))?;
        let parsed: Vec<Vec<String>> = spec
            .split(';')
            .map(|s| s.split(',').map(|l| l.trim().to_string()).collect())
            .collect();
        let mut plan = ErasurePlan::custom(&parsed, source, target, k, center).map_err(usage)?;
        plan.order = order;
        plan
    } else {
        let mut plan = build_plan(source, target, mode, order, k).map_err(usage)?;
        plan.center = center;
        plan
    };
    plan.to_json_file(output).map_err(data)?;
    println!(
        "plan: mode={:?} order={:?} k={} m={} center={}",
        plan.mode,
        plan.order,
        plan.k,
        plan.len(),
        plan.center
    );
    for (i, subset) in plan.subsets.iter().enumerate() {
        let langs: Vec<&str> = subset.iter().map(|s| s.as_str()).collect();
        println!("  step {}: [{}]", i + 1, langs.join(" "));
    }
    println!("wrote {}", output.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_synth(
    languages: &[String],
    dim: usize,
    samples: usize,
    signal: f64,
    noise: f64,
    seed: u64,
    mixture_config: Option<&Path>,
    output: &Path,
) -> Result<(), CliError> {
    let config = match mixture_config {
        Some(path) => MixtureConfig::from_json_file(path).map_err(synth_err)?,
        None => MixtureConfig::sampled(languages, dim, samples, signal, noise, seed)
            .map_err(synth_err)?,
    };
    let ds = generate(&config).map_err(synth_err)?;
    let splits = positional_splits(&ds, config.samples_per_language);
    save_dataset(&ds, output, BlobDtype::F64Le, Some(&splits)).map_err(data)?;

    let config_path = sibling(output, "mixture.json");
    config.to_json_file(&config_path).map_err(data)?;

    println!(
        "synth: n={} d={} languages=[{}] signal={} noise={} seed={}",
        ds.len(),
        ds.dim(),
        config.languages.join(" "),
        config.signal_strength,
        config.noise_sigma,
        config.seed
    );
    println!(
        "splits: train={} validation={} test={}",
        splits.train.len(),
        splits.validation.len(),
        splits.test.len()
    );
    println!("wrote {}", output.display());
    Ok(())
}

/// Deterministic 60/20/20 split by position within each language block.
fn positional_splits(ds: &EmbeddingDataset, samples_per_language: usize) -> SplitSpec {
    let mut splits = SplitSpec::default();
    for i in 0..ds.len() {
        match (i % samples_per_language) % 5 {
            0 | 1 | 2 => splits.train.push(i),
            3 => splits.validation.push(i),
            _ => splits.test.push(i),
        }
    }
    splits
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or_else(|| Path::new(".")).join(name)
}

pub fn cmd_fit(
    manifest: &Path,
    plan_path: &Path,
    sigma_tol: Option<f64>,
    output: &Path,
) -> Result<(), CliError> {
    let ds = load_dataset(manifest).map_err(data)?;
    let plan = ErasurePlan::from_json_file(plan_path).map_err(data)?;
    let opts = match sigma_tol {
        Some(tol) => FitOptions { sigma_tol: tol },
        None => FitOptions::default(),
    };
    let artifact = fit_erasure_with(&ds, &plan, &opts).map_err(spectral)?;

    for (i, step) in artifact.step_log().iter().enumerate() {
        let langs = step.subset.join(" ");
        if step.skipped {
            println!("step {}/{} [{}] skipped (numerically null)", i + 1, plan.len(), langs);
        } else {
            let sigmas: Vec<String> = step.removed_sigma.iter().map(|s| format!("{s:.6}")).collect();
            let marker = if step.degenerate_cut { " (degenerate cut)" } else { "" };
            println!(
                "step {}/{} [{}] removed sigma [{}]{}",
                i + 1,
                plan.len(),
                langs,
                sigmas.join(", "),
                marker
            );
        }
    }
    artifact.save(output).map_err(data)?;
    println!("wrote {}", output.display());
    Ok(())
}

pub fn cmd_apply(
    manifest: &Path,
    artifact_path: &Path,
    restore_mean: bool,
    output: &Path,
) -> Result<(), CliError> {
    let ds = load_dataset(manifest).map_err(data)?;
    let manifest_data = DatasetManifest::read(manifest).map_err(data)?;
    let artifact = ErasureArtifact::load(artifact_path).map_err(spectral)?;
    let erased = if restore_mean {
        apply_erasure_restoring_mean(&artifact, &ds.x).map_err(spectral)?
    } else {
        apply_erasure(&artifact, &ds.x).map_err(spectral)?
    };
    let mut out_ds = ds;
    out_ds.x = erased;
    save_dataset(&out_ds, output, BlobDtype::F64Le, manifest_data.splits.as_ref())
        .map_err(data)?;
    println!("wrote {}", output.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeLabel {
    Z,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Validation,
    Test,
    All,
}

fn split_rows(
    splits: Option<&SplitSpec>,
    name: SplitName,
    n: usize,
) -> Result<Vec<usize>, CliError> {
    let rows = match name {
        SplitName::All => (0..n).collect(),
        _ => {
            let s = splits.ok_or_else(|| data("manifest has no splits (SplitMissing)"))?;
            match name {
                SplitName::Train => s.train.clone(),
                SplitName::Validation => s.validation.clone(),
                SplitName::Test => s.test.clone(),
                SplitName::All => unreachable!(),
            }
        }
    };
    if rows.is_empty() {
        return Err(data(format!("split {name:?} is empty (SplitMissing)")));
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
        return Err(data(format!("split row {bad} out of range ({n} rows)")));
    }
    Ok(rows)
}

fn gather(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), x.ncols()), |(i, j)| x[[rows[i], j]])
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_probe(
    manifest: &Path,
    label: ProbeLabel,
    artifact_path: Option<&Path>,
    train_split: SplitName,
    eval_split: SplitName,
    probe_cfg: &ProbeConfig,
    output: &Path,
) -> Result<(), CliError> {
    let ds = load_dataset(manifest).map_err(data)?;
    let manifest_data = DatasetManifest::read(manifest).map_err(data)?;
    let x = match artifact_path {
        Some(p) => {
            let artifact = ErasureArtifact::load(p).map_err(spectral)?;
            apply_erasure(&artifact, &ds.x).map_err(spectral)?
        }
        None => ds.x.clone(),
    };
    let (labels, class_names): (&[usize], &[String]) = match label {
        ProbeLabel::Z => (&ds.z, &ds.group_names),
        ProbeLabel::Y => (&ds.y, &ds.class_names),
    };

    let train_rows = split_rows(manifest_data.splits.as_ref(), train_split, ds.len())?;
    let x_train = gather(&x, &train_rows);
    let l_train: Vec<usize> = train_rows.iter().map(|&i| labels[i]).collect();
    let model = train_probe(&x_train, &l_train, probe_cfg).map_err(probe_err)?;
    let train_acc = accuracy(
        &l_train,
        &erasure_core::predict(&model, &x_train).map_err(probe_err)?,
    )
    .map_err(data)?;
    println!("train accuracy: {train_acc:.4} ({} rows)", train_rows.len());

    if let Ok(eval_rows) = split_rows(manifest_data.splits.as_ref(), eval_split, ds.len()) {
        let x_eval = gather(&x, &eval_rows);
        let l_eval: Vec<usize> = eval_rows.iter().map(|&i| labels[i]).collect();
        let acc = accuracy(
            &l_eval,
            &erasure_core::predict(&model, &x_eval).map_err(probe_err)?,
        )
        .map_err(data)?;
        println!("eval accuracy:  {acc:.4} ({} rows)", eval_rows.len());
    }

    save_probe(&model, class_names, output).map_err(data)?;
    println!("wrote {}", output.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalDocument {
    pub aggregate_kind: AggregateKind,
    pub rows: Vec<EvalDetail>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalDetail {
    pub target: String,
    pub method: String,
    pub main_accuracy: f64,
    pub tpr_gap: Option<f64>,
    pub per_class_tpr_gap: BTreeMap<usize, f64>,
    pub excluded_classes: Vec<usize>,
    pub support: BTreeMap<usize, [usize; 2]>,
    pub z_accuracy: f64,
    pub z_majority: f64,
    pub delta_main: Option<f64>,
    pub delta_gap: Option<f64>,
}

impl EvalDetail {
    pub fn to_row(&self) -> EvalRow {
        EvalRow {
            target: self.target.clone(),
            method: self.method.clone(),
            main: self.main_accuracy,
            tpr_gap: self.tpr_gap,
            delta_main: self.delta_main,
            delta_gap: self.delta_gap,
        }
    }
}

/// Trains y- and z-probes on the train split (optionally erased) and scores
/// the test split per language and overall, with deltas against baseline.
pub fn evaluate_dataset(
    ds: &EmbeddingDataset,
    splits: Option<&SplitSpec>,
    artifact: Option<&ErasureArtifact>,
    probe_cfg: &ProbeConfig,
    kind: AggregateKind,
) -> Result<EvalDocument, CliError> {
    let train_rows = split_rows(splits, SplitName::Train, ds.len())?;
    let test_rows = split_rows(splits, SplitName::Test, ds.len())?;
    if let Some(a) = artifact {
        if a.dim() != ds.dim() {
            return Err(data(format!(
                "artifact dimension {} does not match dataset dimension {}",
                a.dim(),
                ds.dim()
            )));
        }
    }

    let mut feature_sets: Vec<(&str, Array2<f64>)> = vec![("baseline", ds.x.clone())];
    if let Some(a) = artifact {
        feature_sets.push(("erased", apply_erasure(a, &ds.x).map_err(spectral)?));
    }

    let mut targets: Vec<String> = vec!["all".into()];
    let mut langs: Vec<String> = test_rows
        .iter()
        .map(|&i| ds.language[i].clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    targets.append(&mut langs);

    let mut rows = Vec::new();
    let mut baselines: BTreeMap<String, (f64, Option<f64>)> = BTreeMap::new();
    for (method, x) in &feature_sets {
        let x_train = gather(x, &train_rows);
        let y_train: Vec<usize> = train_rows.iter().map(|&i| ds.y[i]).collect();
        let z_train: Vec<usize> = train_rows.iter().map(|&i| ds.z[i]).collect();
        let y_probe = train_probe(&x_train, &y_train, probe_cfg).map_err(probe_err)?;
        let z_probe = train_probe(&x_train, &z_train, probe_cfg).map_err(probe_err)?;

        for target in &targets {
            let rows_t: Vec<usize> = test_rows
                .iter()
                .copied()
                .filter(|&i| target == "all" || &ds.language[i] == target)
                .collect();
            if rows_t.is_empty() {
                continue;
            }
            let x_t = gather(x, &rows_t);
            let y_true: Vec<usize> = rows_t.iter().map(|&i| ds.y[i]).collect();
            let z_true: Vec<usize> = rows_t.iter().map(|&i| ds.z[i]).collect();
            let y_pred = erasure_core::predict(&y_probe, &x_t).map_err(probe_err)?;
            let z_pred = erasure_core::predict(&z_probe, &x_t).map_err(probe_err)?;

            let main_accuracy = accuracy(&y_true, &y_pred).map_err(data)?;
            let z_accuracy = accuracy(&z_true, &z_pred).map_err(data)?;
            let z_majority = majority_rate(&z_true);
            let gap = match tpr_gap(&y_true, &y_pred, &z_true, kind) {
                Ok(g) => Some(g),
                Err(MetricsError::SingleGroup(_)) | Err(MetricsError::EmptyClassBothGroups) => {
                    eprintln!("note: TPR gap undefined for target {target} ({method})");
                    None
                }
                Err(e) => return Err(data(e)),
            };

            let (delta_main, delta_gap) = match baselines.get(target) {
                Some(&(base_main, base_gap)) if *method != "baseline" => (
                    Some(main_accuracy - base_main),
                    match (gap.as_ref().map(|g| g.aggregate), base_gap) {
                        (Some(g), Some(b)) => Some(g - b),
                        _ => None,
                    },
                ),
                _ => (None, None),
            };
            if *method == "baseline" {
                baselines.insert(
                    target.clone(),
                    (main_accuracy, gap.as_ref().map(|g| g.aggregate)),
                );
            }

            rows.push(EvalDetail {
                target: target.clone(),
                method: method.to_string(),
                main_accuracy,
                tpr_gap: gap.as_ref().map(|g| g.aggregate),
                per_class_tpr_gap: gap.as_ref().map(|g| g.per_class_gap.clone()).unwrap_or_default(),
                excluded_classes: gap.as_ref().map(|g| g.excluded_classes.clone()).unwrap_or_default(),
                support: gap.as_ref().map(|g| g.support.clone()).unwrap_or_default(),
                z_accuracy,
                z_majority,
                delta_main,
                delta_gap,
            });
        }
    }

    Ok(EvalDocument {
        aggregate_kind: kind,
        rows,
    })
}

fn majority_rate(labels: &[usize]) -> f64 {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    counts.values().max().copied().unwrap_or(0) as f64 / labels.len() as f64
}

pub fn cmd_eval(
    manifest: &Path,
    artifact_path: Option<&Path>,
    probe_cfg: &ProbeConfig,
    kind: AggregateKind,
    out_dir: &Path,
    prefix: &str,
) -> Result<(), CliError> {
    let ds = load_dataset(manifest).map_err(data)?;
    let manifest_data = DatasetManifest::read(manifest).map_err(data)?;
    let artifact = match artifact_path {
        Some(p) => Some(ErasureArtifact::load(p).map_err(spectral)?),
        None => None,
    };
    let doc = evaluate_dataset(
        &ds,
        manifest_data.splits.as_ref(),
        artifact.as_ref(),
        probe_cfg,
        kind,
    )?;

    let json_path = out_dir.join(format!("{prefix}.json"));
    let csv_path = out_dir.join(format!("{prefix}.csv"));
    write_eval_document(&doc, &json_path)?;
    let rows: Vec<EvalRow> = doc.rows.iter().map(|r| r.to_row()).collect();
    erasure_core::metrics::write_rows_csv(&csv_path, &rows).map_err(data)?;

    print_table(&doc);
    println!("wrote {}", json_path.display());
    println!("wrote {}", csv_path.display());
    Ok(())
}

pub fn write_eval_document(doc: &EvalDocument, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(doc).map_err(data)?;
    atomic_write(path, text.as_bytes())
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(data)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into())
    ));
    fs::write(&tmp, bytes).map_err(data)?;
    fs::rename(&tmp, path).map_err(data)?;
    Ok(())
}

fn print_table(doc: &EvalDocument) {
    println!(
        "{:<10} {:<10} {:>8} {:>9} {:>9} {:>9} {:>8} {:>8}",
        "Target", "Method", "Main", "TPR-Gap", "ΔMain", "ΔGap", "z-acc", "z-maj"
    );
    let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:+.4}")).unwrap_or_else(|| "-".into());
    for row in &doc.rows {
        println!(
            "{:<10} {:<10} {:>8.4} {:>9} {:>9} {:>9} {:>8.4} {:>8.4}",
            row.target,
            row.method,
            row.main_accuracy,
            row.tpr_gap
                .map(|g| format!("{g:.4}"))
                .unwrap_or_else(|| "-".into()),
            fmt_opt(row.delta_main),
            fmt_opt(row.delta_gap),
            row.z_accuracy,
            row.z_majority,
        );
    }
}

pub fn cmd_export2d(
    manifest: &Path,
    artifact_path: Option<&Path>,
    output: &Path,
) -> Result<(), CliError> {
    let ds = load_dataset(manifest).map_err(data)?;
    let x = match artifact_path {
        Some(p) => {
            let artifact = ErasureArtifact::load(p).map_err(spectral)?;
            apply_erasure(&artifact, &ds.x).map_err(spectral)?
        }
        None => ds.x.clone(),
    };
    let pca = pca_2d(&x).map_err(numeric)?;

    let mut text = String::from("pc1,pc2,language,z\n");
    for i in 0..ds.len() {
        text.push_str(&format!(
            "{},{},{},{}\n",
            pca.scores[[i, 0]],
            pca.scores[[i, 1]],
            ds.language[i],
            ds.group_names[ds.z[i]]
        ));
    }
    atomic_write(output, text.as_bytes())?;
    println!(
        "explained variance: pc1={:.4} pc2={:.4}",
        pca.explained[0], pca.explained[1]
    );
    println!("wrote {}", output.display());
    Ok(())
}

pub fn cmd_report(inputs: &[PathBuf], output: &Path) -> Result<(), CliError> {
    if inputs.is_empty() {
        return Err(usage("report requires at least one eval JSON input"));
    }
    let mut all_rows = Vec::new();
    let mut kind = None;
    for path in inputs {
        let text = fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        let doc: EvalDocument =
            serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", path.display())))?;
        if let Some(k) = kind {
            if k != doc.aggregate_kind {
                return Err(data("eval inputs use different aggregate kinds"));
            }
        }
        kind = Some(doc.aggregate_kind);
        print_table(&doc);
        all_rows.extend(doc.rows.iter().map(|r| r.to_row()));
    }
    erasure_core::metrics::write_rows_csv(output, &all_rows).map_err(data)?;
    println!("wrote {}", output.display());
    Ok(())
}
