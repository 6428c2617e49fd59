#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use occkit::metrics::{PredictionLog, PredictionRecord};
use occkit::modelio::write_log;
use occkit::{ImageTensor, LabeledDataset, Sample, Split};

/// Runs the CLI in-process; returns (exit code, stdout, stderr).
pub fn occkit(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut argv = vec!["occkit"];
    argv.extend_from_slice(args);
    let code = occkit::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `n` random 3×8×8 images with labels cycling through `k` classes.
pub fn random_dataset(n: usize, k: usize, seed: u64, split: Split) -> LabeledDataset {
    let mut rng = occkit::derive_stream(seed, "fixture", 0);
    let items = (0..n)
        .map(|i| {
            let img = ImageTensor::from_fn(3, 8, 8, |_, _, _| rng.uniform() as f32).unwrap();
            Sample::new(format!("{split}-{i:04}"), img, i % k)
        })
        .collect();
    LabeledDataset::new(items, k, split).unwrap()
}

pub fn save_dataset(ds: &LabeledDataset, dir: &Path) -> PathBuf {
    ds.save(dir).unwrap()
}

/// Log over `ds` where the first `correct` items are right and the rest
/// are predicted as `(label + 1) % k`.
pub fn log_with_accuracy(ds: &LabeledDataset, condition: &str, correct: usize) -> PredictionLog {
    let k = ds.num_classes();
    let recs = ds
        .items()
        .iter()
        .enumerate()
        .map(|(i, s)| PredictionRecord::new(s.id.clone(), s.label, if i < correct { s.label } else { (s.label + 1) % k }))
        .collect();
    PredictionLog::new(condition, k, recs).unwrap()
}

/// Log from explicit `(true, pred)` pairs with ids `s00000..`.
pub fn log_from_pairs(condition: &str, k: usize, pairs: &[(usize, usize)]) -> PredictionLog {
    let recs = pairs
        .iter()
        .enumerate()
        .map(|(i, &(t, p))| PredictionRecord::new(format!("s{i:05}"), t, p))
        .collect();
    PredictionLog::new(condition, k, recs).unwrap()
}

pub fn write(log: &PredictionLog, path: &Path) -> PathBuf {
    write_log(log, path).unwrap();
    path.to_path_buf()
}

/// Every file under `dir`, relative path and bytes, sorted.
pub fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

pub fn json(text: &str) -> serde_json::Value {
    serde_json::from_str(text).unwrap()
}
