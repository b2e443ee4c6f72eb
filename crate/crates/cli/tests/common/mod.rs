//! Helpers shared by the CLI test suites.

use std::path::Path;
use std::process::{Command, Output};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use erasure_core::{
    predict, train_probe, EmbeddingDataset, ErasurePlan, PlanMode, ProbeConfig, SubsetOrder,
};

pub fn erase_bin() -> &'static str {
    env!("CARGO_BIN_EXE_erase")
}

pub fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(erase_bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("erase binary runs")
}

pub fn gather(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), x.ncols()), |(i, j)| x[[rows[i], j]])
}

pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

pub fn majority(labels: &[usize]) -> f64 {
    let mut counts = std::collections::BTreeMap::<usize, usize>::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    *counts.values().max().unwrap() as f64 / labels.len() as f64
}

/// Train on `train` rows, return accuracy on `test` rows.
pub fn train_eval_accuracy(
    x: &Array2<f64>,
    labels: &[usize],
    train: &[usize],
    test: &[usize],
) -> f64 {
    let l_train: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let model = train_probe(&gather(x, train), &l_train, &ProbeConfig::default()).unwrap();
    let pred = predict(&model, &gather(x, test)).unwrap();
    pred.iter()
        .zip(test.iter().map(|&i| labels[i]))
        .filter(|(a, b)| **a == *b)
        .count() as f64
        / test.len() as f64
}

/// Rows of one language, split 60/40 in row order.
pub fn language_split(ds: &EmbeddingDataset, lang: &str) -> (Vec<usize>, Vec<usize>) {
    let rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.language[i] == lang).collect();
    let cut = rows.len() * 3 / 5;
    (rows[..cut].to_vec(), rows[cut..].to_vec())
}

/// A random valid plan over the given languages: any mode, order, k in 1..=3,
/// centering on or off.
pub fn random_plan(rng: &mut ChaCha8Rng, languages: &[&str]) -> ErasurePlan {
    let order = if rng.random::<bool>() {
        SubsetOrder::GlobalThenLocal
    } else {
        SubsetOrder::LocalThenGlobal
    };
    let k = rng.random_range(1..=3);
    let center = rng.random::<bool>();
    let pick = |rng: &mut ChaCha8Rng| languages[rng.random_range(0..languages.len())];
    let mut plan = match rng.random_range(0..6) {
        0 => {
            let target = pick(rng);
            erasure_core::build_plan(languages, &[target], PlanMode::Monolingual, order, k).unwrap()
        }
        1 => {
            let source = pick(rng);
            let target = pick(rng);
            erasure_core::build_plan(&[source], &[target], PlanMode::CrossLingual, order, k)
                .unwrap()
        }
        2 => {
            let target = pick(rng);
            erasure_core::build_plan(languages, &[target], PlanMode::SubsetsWithoutTarget, order, k)
                .unwrap()
        }
        3 => erasure_core::build_plan(
            languages,
            &[] as &[&str],
            PlanMode::SubsetsWithTarget,
            order,
            k,
        )
        .unwrap(),
        4 => erasure_core::build_plan(languages, &[] as &[&str], PlanMode::FullyJoint, order, k)
            .unwrap(),
        _ => {
            let m = rng.random_range(1..=5);
            let subsets: Vec<Vec<&str>> = (0..m)
                .map(|_| {
                    let mut s: Vec<&str> = languages
                        .iter()
                        .copied()
                        .filter(|_| rng.random::<bool>())
                        .collect();
                    if s.is_empty() {
                        s.push(pick(rng));
                    }
                    s
                })
                .collect();
            ErasurePlan::custom(&subsets, languages, &[] as &[&str], k, center).unwrap()
        }
    };
    plan.center = center;
    plan
}

/// Two-language dataset with exactly balanced z and the attribute planted
/// along per-language unit directions: x = ±signal·u_lang + noise.
pub fn planted_balanced_dataset(
    u_by_lang: &[(&str, Array1<f64>)],
    per_language: usize,
    signal: f64,
    noise: f64,
    seed: u64,
) -> EmbeddingDataset {
    let d = u_by_lang[0].1.len();
    let n = per_language * u_by_lang.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::<f64>::zeros((n, d));
    let mut language = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut row = 0;
    for (lang, dir) in u_by_lang {
        for i in 0..per_language {
            let zi = i % 2;
            let sign = if zi == 1 { 1.0 } else { -1.0 };
            for j in 0..d {
                let g: f64 = {
                    // Box-Muller, first of the pair only; simple and seeded
                    let u1: f64 = 1.0 - rng.random::<f64>();
                    let u2: f64 = rng.random::<f64>();
                    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                };
                x[[row, j]] = signal * sign * dir[j] + noise * g;
            }
            language.push(lang.to_string());
            z.push(zi);
            y.push((i / 2) % 2);
            row += 1;
        }
    }
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
