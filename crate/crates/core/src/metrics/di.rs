//! Data Interference (DI) index.
//!
//! For run `r`, `c_j^r = K · max(0, m_j^dist − m_j^orig) / N` where `m_j` counts
//! misclassified records *predicted* as class `j`. With `ĉ` the class of
//! highest mean increase across runs,
//!
//! ```text
//! DI = mean_r'(c_ĉ^r') · mean_r(c_ĉ^r / Σ_j c_j^r)
//! ```
//!
//! A run whose increases are all zero contributes 0 to the second mean.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_paired, PredictionLog, RunEnsemble};
use crate::error::{Error, Result};
use crate::rng::derive_stream;

/// Per-class increase in misclassifications, scaled by `K / N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIncreases(pub Vec<f64>);

impl ClassIncreases {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

pub fn class_increases(orig: &PredictionLog, dist: &PredictionLog) -> Result<ClassIncreases> {
    check_paired(orig, dist)?;
    if orig.is_empty() {
        return Err(Error::Empty("prediction logs".into()));
    }
    Ok(increases_from_counts(
        &orig.errors_by_predicted(),
        &dist.errors_by_predicted(),
        orig.len(),
    ))
}

fn increases_from_counts(m_orig: &[u64], m_dist: &[u64], n: usize) -> ClassIncreases {
    let k = m_orig.len() as f64;
    ClassIncreases(
        m_orig
            .iter()
            .zip(m_dist)
            .map(|(&o, &d)| k * d.saturating_sub(o) as f64 / n as f64)
            .collect(),
    )
}

/// Order-independent sum (ascending), so permuting classes cannot change the result.
fn class_sum(c: &[f64]) -> f64 {
    let mut v = c.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

fn share(part: f64, total: f64) -> f64 {
    if total > 0.0 {
        part / total
    } else {
        0.0
    }
}

fn check_shape(increases: &[Vec<f64>]) -> Result<usize> {
    let k = increases
        .first()
        .ok_or_else(|| Error::Empty("run ensemble".into()))?
        .len();
    if k == 0 || increases.iter().any(|c| c.len() != k) {
        return Err(Error::shape("increase vectors must share a positive length"));
    }
    Ok(k)
}

/// Class with the highest mean increase across runs.
///
/// Means within a relative `1e-12` count as tied (increases are integer
/// multiples of `K/N`, so genuine differences are far larger). Ties go to the
/// larger mean share, then to the lexicographically larger per-run increase
/// vector. No step looks at the class index, so DI is invariant under class
/// relabeling.
pub fn dominant_class(increases: &[Vec<f64>]) -> Result<usize> {
    let k = check_shape(increases)?;
    let r = increases.len() as f64;
    let sums: Vec<f64> = increases.iter().map(|c| class_sum(c)).collect();
    let mean = |j: usize| increases.iter().map(|c| c[j]).sum::<f64>() / r;
    let mean_share = |j: usize| increases.iter().zip(&sums).map(|(c, &s)| share(c[j], s)).sum::<f64>() / r;
    let column = |j: usize| increases.iter().map(move |c| c[j]);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
    let mut best = 0;
    let (mut best_mean, mut best_share) = (mean(0), mean_share(0));
    for j in 1..k {
        let (m, s) = (mean(j), mean_share(j));
        let better = if !close(m, best_mean) {
            m > best_mean
        } else if !close(s, best_share) {
            s > best_share
        } else {
            column(j).partial_cmp(column(best)) == Some(std::cmp::Ordering::Greater)
        };
        if better {
            best = j;
            best_mean = m;
            best_share = s;
        }
    }
    Ok(best)
}

/// DI from per-run increase vectors.
pub fn di_from_increases(increases: &[Vec<f64>]) -> Result<f64> {
    let top = dominant_class(increases)?;
    let r = increases.len() as f64;
    let mean_top = increases.iter().map(|c| c[top]).sum::<f64>() / r;
    let mean_share = increases.iter().map(|c| share(c[top], class_sum(c))).sum::<f64>() / r;
    Ok(mean_top * mean_share)
}

/// Worst-case DI: the dominant class is replaced by each run's own maximum.
pub fn di_worst_case_from_increases(increases: &[Vec<f64>]) -> Result<f64> {
    check_shape(increases)?;
    let r = increases.len() as f64;
    let run_max = |c: &Vec<f64>| c.iter().cloned().fold(0.0, f64::max);
    let mean_max = increases.iter().map(run_max).sum::<f64>() / r;
    let mean_share = increases.iter().map(|c| share(run_max(c), class_sum(c))).sum::<f64>() / r;
    Ok(mean_max * mean_share)
}

fn ensemble_increases(e: &RunEnsemble) -> Result<Vec<Vec<f64>>> {
    e.runs()
        .iter()
        .map(|p| class_increases(&p.original, &p.distorted).map(|c| c.0))
        .collect()
}

pub fn di_index(e: &RunEnsemble) -> Result<f64> {
    di_from_increases(&ensemble_increases(e)?)
}

pub fn di_index_worst_case(e: &RunEnsemble) -> Result<f64> {
    di_worst_case_from_increases(&ensemble_increases(e)?)
}

/// How misclassified records are reassigned in the Monte-Carlo null.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullVariant {
    /// Each misclassified record independently gets a uniform class.
    PerExample,
    /// All misclassified records of a run get one uniformly drawn class.
    AllToOne,
}

impl std::str::FromStr for NullVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_example" => Ok(NullVariant::PerExample),
            "all_to_one" => Ok(NullVariant::AllToOne),
            _ => Err(Error::param(format!("unknown null variant {s:?} (per_example|all_to_one)"))),
        }
    }
}

impl std::fmt::Display for NullVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NullVariant::PerExample => "per_example",
            NullVariant::AllToOne => "all_to_one",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullStats {
    pub mean: f64,
    /// Sample standard deviation across trials (0 for a single trial).
    pub std: f64,
    pub trials: usize,
    pub variant: NullVariant,
    pub seed: u64,
    /// Which log of each pair has its errors reassigned.
    pub reassigned: String,
}

struct NullRun {
    m_orig: Vec<u64>,
    wrong_truth: Vec<usize>,
    n: usize,
}

/// Monte-Carlo null DI: distorted-log errors are reassigned at random and DI recomputed.
///
/// A reassigned prediction equal to the true label counts as correct. Trial
/// `t` draws from stream `(seed, "null", t)`.
pub fn di_null(e: &RunEnsemble, variant: NullVariant, trials: usize, seed: u64) -> Result<NullStats> {
    if trials == 0 {
        return Err(Error::param("trials must be at least 1"));
    }
    let k = e.num_classes();
    let runs: Vec<NullRun> = e
        .runs()
        .iter()
        .map(|p| NullRun {
            m_orig: p.original.errors_by_predicted(),
            wrong_truth: p
                .distorted
                .records()
                .iter()
                .filter(|r| !r.is_correct())
                .map(|r| r.true_label)
                .collect(),
            n: p.original.len(),
        })
        .collect();

    let values: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = derive_stream(seed, "null", t as u64);
            let incs: Vec<Vec<f64>> = runs
                .iter()
                .map(|run| {
                    let mut m = vec![0u64; k];
                    match variant {
                        NullVariant::PerExample => {
                            for &truth in &run.wrong_truth {
                                let j = rng.below(k);
                                if j != truth {
                                    m[j] += 1;
                                }
                            }
                        }
                        NullVariant::AllToOne => {
                            let j = rng.below(k);
                            m[j] = run.wrong_truth.iter().filter(|&&t| t != j).count() as u64;
                        }
                    }
                    increases_from_counts(&run.m_orig, &m, run.n).0
                })
                .collect();
            di_from_increases(&incs)
        })
        .collect::<Result<Vec<_>>>()?;

    let mean = values.iter().sum::<f64>() / trials as f64;
    let std = if trials > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(NullStats {
        mean,
        std,
        trials,
        variant,
        seed,
        reassigned: "distorted".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{PredictionRecord, RunPair};

    fn log(pairs: &[(usize, usize)], k: usize) -> PredictionLog {
        let recs = pairs
            .iter()
            .enumerate()
            .map(|(i, &(t, p))| PredictionRecord::new(format!("id{i}"), t, p))
            .collect();
        PredictionLog::new("c", k, recs).unwrap()
    }

    #[test]
    fn identical_logs_zero_increase() {
        let l = log(&[(0, 1), (1, 1), (1, 0)], 2);
        assert_eq!(class_increases(&l, &l).unwrap().0, vec![0.0, 0.0]);
    }

    #[test]
    fn increase_arithmetic() {
        // N = 10, K = 2; original has one error predicted as 0, distorted has three
        let mut orig = vec![(0, 0); 5];
        orig.extend(vec![(1, 1); 5]);
        orig[5] = (1, 0);
        let mut dist = orig.clone();
        dist[6] = (1, 0);
        dist[7] = (1, 0);
        let c = class_increases(&log(&orig, 2), &log(&dist, 2)).unwrap();
        assert!((c.0[0] - 0.4).abs() < 1e-15);
        assert_eq!(c.0[1], 0.0);
    }

    #[test]
    fn fewer_errors_clip_to_zero() {
        let orig = log(&[(0, 1), (0, 1), (1, 1)], 2);
        let dist = log(&[(0, 0), (0, 0), (1, 0)], 2);
        let c = class_increases(&orig, &dist).unwrap();
        assert_eq!(c.0[1], 0.0);
        assert!(c.0[0] > 0.0);
    }

    #[test]
    fn unpaired_rejected() {
        let a = log(&[(0, 1), (1, 1)], 2);
        let b = log(&[(1, 1), (1, 1)], 2);
        assert!(matches!(class_increases(&a, &b), Err(Error::Unpaired(_))));
    }

    #[test]
    fn di_examples() {
        assert_eq!(di_from_increases(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap(), 0.0);
        assert!((di_from_increases(&[vec![0.4, 0.0]]).unwrap() - 0.4).abs() < 1e-15);
        // mean(0.4, 0.2) * mean(0.8, 0.5) = 0.3 * 0.65
        let di = di_from_increases(&[vec![0.4, 0.1], vec![0.2, 0.2]]).unwrap();
        assert!((di - 0.195).abs() < 1e-12, "{di}");
        assert!(di_from_increases(&[]).is_err());
    }

    #[test]
    fn worst_case_examples() {
        let c = [vec![0.4, 0.1], vec![0.1, 0.3]];
        let worst = di_worst_case_from_increases(&c).unwrap();
        let std = di_from_increases(&c).unwrap();
        // mean(0.4, 0.3) * mean(0.8, 0.75) and mean(0.4, 0.1) * mean(0.8, 0.25)
        assert!((worst - 0.27125).abs() < 1e-12, "{worst}");
        assert!((std - 0.13125).abs() < 1e-12, "{std}");
        assert!(worst >= std);
        assert_eq!(di_worst_case_from_increases(&[vec![0.0; 3]]).unwrap(), 0.0);
        let single = [vec![0.5, 0.2, 0.1]];
        assert_eq!(di_worst_case_from_increases(&single).unwrap(), di_from_increases(&single).unwrap());
    }

    #[test]
    fn tie_break_is_relabeling_invariant() {
        // classes 0 and 1 tie on mean increase but differ in share
        let c = [vec![0.2, 0.4, 0.6], vec![0.4, 0.2, 0.0]];
        let swapped: Vec<Vec<f64>> = c.iter().map(|v| vec![v[1], v[0], v[2]]).collect();
        assert_eq!(di_from_increases(&c).unwrap(), di_from_increases(&swapped).unwrap());
    }

    #[test]
    fn null_zero_errors() {
        let l = log(&[(0, 0), (1, 1)], 2);
        let e = RunEnsemble::new(vec![RunPair { original: l.clone(), distorted: l }]).unwrap();
        for v in [NullVariant::PerExample, NullVariant::AllToOne] {
            let s = di_null(&e, v, 50, 1).unwrap();
            assert_eq!((s.mean, s.std), (0.0, 0.0));
        }
        assert!(di_null(&e, NullVariant::PerExample, 0, 1).is_err());
    }

    #[test]
    fn null_is_deterministic() {
        let orig = log(&[(0, 0), (1, 1), (2, 2), (0, 1), (1, 1), (2, 2)], 3);
        let dist = log(&[(0, 2), (1, 2), (2, 2), (0, 1), (1, 0), (2, 2)], 3);
        let e = RunEnsemble::new(vec![RunPair { original: orig, distorted: dist }]).unwrap();
        let a = di_null(&e, NullVariant::PerExample, 200, 9).unwrap();
        let b = di_null(&e, NullVariant::PerExample, 200, 9).unwrap();
        assert_eq!(a, b);
    }
}
