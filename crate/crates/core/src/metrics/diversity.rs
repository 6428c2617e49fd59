use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Augmented-test accuracy minus clean-test accuracy, both in percent.
///
/// Negative when the augmentation hurts the reference model.
pub fn affinity(acc_clean_test: f64, acc_aug_test: f64) -> Result<f64> {
    for v in [acc_clean_test, acc_aug_test] {
        if !(0.0..=100.0).contains(&v) {
            return Err(Error::param(format!("accuracy {v} outside [0, 100]")));
        }
    }
    Ok(acc_aug_test - acc_clean_test)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityScore {
    pub value: f64,
    /// Number of required probabilities that were clamped to [`PROB_FLOOR`].
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixRecord {
    pub probs: Vec<f64>,
    pub label_a: usize,
    pub label_b: usize,
    pub lambda: f64,
}

fn check_probs(p: &[f64]) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::param("probabilities must be finite and non-negative"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(Error::param(format!("probability vector sums to {s}, not 1")));
    }
    Ok(())
}

fn neg_log(p: &[f64], label: usize, clamped: &mut usize) -> Result<f64> {
    let v = *p
        .get(label)
        .ok_or_else(|| Error::param(format!("label {label} outside probability vector of length {}", p.len())))?;
    if v < PROB_FLOOR {
        *clamped += 1;
    }
    Ok(-v.max(PROB_FLOOR).ln())
}

/// Mean cross-entropy against the majority label.
pub fn diversity(records: &[(Vec<f64>, usize)]) -> Result<DiversityScore> {
    if records.is_empty() {
        return Err(Error::Empty("diversity records".into()));
    }
    let mut clamped = 0;
    let mut total = 0.0;
    for (p, label) in records {
        check_probs(p)?;
        total += neg_log(p, *label, &mut clamped)?;
    }
    Ok(DiversityScore {
        value: total / records.len() as f64,
        clamped,
    })
}

/// Mean `λ·CE(label_a) + (1−λ)·CE(label_b)`.
pub fn mix_diversity(records: &[MixRecord]) -> Result<DiversityScore> {
    if records.is_empty() {
        return Err(Error::Empty("diversity records".into()));
    }
    let mut clamped = 0;
    let mut total = 0.0;
    for r in records {
        check_probs(&r.probs)?;
        if !(0.0..=1.0).contains(&r.lambda) {
            return Err(Error::param(format!("lambda {} outside [0, 1]", r.lambda)));
        }
        let a = neg_log(&r.probs, r.label_a, &mut clamped)?;
        let b = neg_log(&r.probs, r.label_b, &mut clamped)?;
        total += r.lambda * a + (1.0 - r.lambda) * b;
    }
    Ok(DiversityScore {
        value: total / records.len() as f64,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affinity_examples() {
        assert_eq!(affinity(90.0, 90.0).unwrap(), 0.0);
        assert!((affinity(94.0, 81.42).unwrap() + 12.58).abs() < 1e-9);
        assert_eq!(affinity(70.0, 40.0).unwrap(), -affinity(40.0, 70.0).unwrap());
        assert!(affinity(101.0, 3.0).is_err());
    }

    #[test]
    fn diversity_examples() {
        let d = diversity(&[(vec![0.0, 1.0, 0.0], 1)]).unwrap();
        assert_eq!(d.value, 0.0);
        let k = 5;
        let d = diversity(&[(vec![1.0 / k as f64; k], 3)]).unwrap();
        assert!((d.value - (k as f64).ln()).abs() < 1e-12);
        assert!(diversity(&[(vec![0.5, 0.6], 0)]).is_err());
        let d = diversity(&[(vec![1.0, 0.0], 1)]).unwrap();
        assert_eq!(d.clamped, 1);
        assert!((d.value - (-PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn mix_with_unit_lambda_is_diversity() {
        let p = vec![0.2, 0.5, 0.3];
        let m = mix_diversity(&[MixRecord { probs: p.clone(), label_a: 2, label_b: 0, lambda: 1.0 }]).unwrap();
        let d = diversity(&[(p, 2)]).unwrap();
        assert_eq!(m.value, d.value);
    }
}
