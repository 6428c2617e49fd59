//! Bias and robustness measures over prediction logs.

mod di;
mod diversity;
mod occlusion;

pub use di::{
    class_increases, di_from_increases, di_index, di_index_worst_case, di_null, di_worst_case_from_increases,
    dominant_class, ClassIncreases, NullStats, NullVariant,
};
pub use diversity::{affinity, diversity, mix_diversity, DiversityScore, MixRecord, PROB_FLOOR};
pub use occlusion::{
    condition_tag, cut_occlusion, i_occlusion, i_occlusion_curve, AccuracyQuad, CurveConfig, CurvePoint,
    IOcclusionCurve, OcclusionSource,
};

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};

/// One prediction: sample id, true label, predicted label and optional logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    #[serde(rename = "true")]
    pub true_label: usize,
    pub pred: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub logits: Option<Vec<f64>>,
}

impl PredictionRecord {
    pub fn new(id: impl Into<String>, true_label: usize, pred: usize) -> Self {
        PredictionRecord {
            id: id.into(),
            true_label,
            pred,
            logits: None,
        }
    }

    pub fn is_correct(&self) -> bool {
        self.true_label == self.pred
    }
}

/// Predictions of one model run under one data condition.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionLog {
    condition: String,
    num_classes: usize,
    records: Vec<PredictionRecord>,
}

impl PredictionLog {
    pub fn new(condition: impl Into<String>, num_classes: usize, records: Vec<PredictionRecord>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::param("num_classes must be positive"));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            if r.true_label >= num_classes || r.pred >= num_classes {
                return Err(Error::param(format!(
                    "record {:?}: labels ({}, {}) outside 0..{num_classes}",
                    r.id, r.true_label, r.pred
                )));
            }
            if let Some(l) = &r.logits {
                if l.len() != num_classes {
                    return Err(Error::Schema(format!(
                        "record {:?}: {} logits for {num_classes} classes",
                        r.id,
                        l.len()
                    )));
                }
                if l.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Schema(format!("record {:?}: non-finite logit", r.id)));
                }
            }
        }
        Ok(PredictionLog {
            condition: condition.into(),
            num_classes,
            records,
        })
    }

    pub fn condition(&self) -> &str {
        &self.condition
    }
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
    pub fn records(&self) -> &[PredictionRecord] {
        &self.records
    }
    pub fn len(&self) -> usize {
        self.records.len()
    }
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
    pub fn has_logits(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.logits.is_some())
    }

    pub fn with_condition(mut self, condition: impl Into<String>) -> Self {
        self.condition = condition.into();
        self
    }

    /// Fraction of correct records.
    pub fn accuracy(&self) -> Result<f64> {
        if self.records.is_empty() {
            return Err(Error::Empty(format!("prediction log {:?}", self.condition)));
        }
        let correct = self.records.iter().filter(|r| r.is_correct()).count();
        Ok(correct as f64 / self.records.len() as f64)
    }

    /// Misclassification counts per *predicted* class.
    pub fn errors_by_predicted(&self) -> Vec<u64> {
        let mut m = vec![0u64; self.num_classes];
        for r in self.records.iter().filter(|r| !r.is_correct()) {
            m[r.pred] += 1;
        }
        m
    }
}

/// Restricts a log to `ids`, keeping the log's order.
pub fn subset_filter<'a>(log: &PredictionLog, ids: impl IntoIterator<Item = &'a str>) -> Result<PredictionLog> {
    let known: HashSet<&str> = log.records.iter().map(|r| r.id.as_str()).collect();
    let mut wanted = HashSet::new();
    for id in ids {
        if !known.contains(id) {
            return Err(Error::UnknownId(id.to_string()));
        }
        wanted.insert(id);
    }
    let records = log
        .records
        .iter()
        .filter(|r| wanted.contains(r.id.as_str()))
        .cloned()
        .collect();
    PredictionLog::new(log.condition.clone(), log.num_classes, records)
}

/// Accuracy (in percent) against the primary (shape) and secondary (texture) labels.
pub fn dual_label_accuracy(log: &PredictionLog, ds: &LabeledDataset) -> Result<(f64, f64)> {
    if !ds.is_dual_label() {
        return Err(Error::param("dataset has no secondary labels"));
    }
    if log.is_empty() {
        return Err(Error::Empty("prediction log".into()));
    }
    let by_id: HashMap<&str, (usize, usize)> = ds
        .items()
        .iter()
        .map(|s| (s.id.as_str(), (s.label, s.secondary_label.unwrap())))
        .collect();
    let (mut shape, mut texture) = (0usize, 0usize);
    for r in log.records() {
        let &(l1, l2) = by_id.get(r.id.as_str()).ok_or_else(|| Error::UnknownId(r.id.clone()))?;
        shape += (r.pred == l1) as usize;
        texture += (r.pred == l2) as usize;
    }
    let n = log.len() as f64;
    Ok((100.0 * shape as f64 / n, 100.0 * texture as f64 / n))
}

/// An (original, distorted) pair of logs from one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPair {
    pub original: PredictionLog,
    pub distorted: PredictionLog,
}

/// `R` paired logs from independently seeded runs of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunEnsemble {
    runs: Vec<RunPair>,
    num_classes: usize,
}

impl RunEnsemble {
    pub fn new(runs: Vec<RunPair>) -> Result<Self> {
        let first = runs.first().ok_or_else(|| Error::Empty("run ensemble".into()))?;
        let k = first.original.num_classes;
        let n = first.original.len();
        for (i, r) in runs.iter().enumerate() {
            if r.original.num_classes != k || r.distorted.num_classes != k {
                return Err(Error::Unpaired(format!("run {i} disagrees on the number of classes")));
            }
            if r.original.len() != n {
                return Err(Error::Unpaired(format!("run {i} has {} records, run 0 has {n}", r.original.len())));
            }
            check_paired(&r.original, &r.distorted).map_err(|e| match e {
                Error::Unpaired(m) => Error::Unpaired(format!("run {i}: {m}")),
                other => other,
            })?;
        }
        Ok(RunEnsemble { runs, num_classes: k })
    }

    pub fn runs(&self) -> &[RunPair] {
        &self.runs
    }
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
    pub fn len(&self) -> usize {
        self.runs.len()
    }
    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }
}

pub(crate) fn check_paired(orig: &PredictionLog, dist: &PredictionLog) -> Result<()> {
    if orig.num_classes != dist.num_classes {
        return Err(Error::Unpaired(format!(
            "{} vs {} classes",
            orig.num_classes, dist.num_classes
        )));
    }
    if orig.len() != dist.len() {
        return Err(Error::Unpaired(format!("{} vs {} records", orig.len(), dist.len())));
    }
    let truth: HashMap<&str, usize> = orig.records.iter().map(|r| (r.id.as_str(), r.true_label)).collect();
    for r in &dist.records {
        match truth.get(r.id.as_str()) {
            None => return Err(Error::Unpaired(format!("id {:?} missing from original log", r.id))),
            Some(&t) if t != r.true_label => {
                return Err(Error::Unpaired(format!("id {:?} has true labels {t} and {}", r.id, r.true_label)))
            }
            _ => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Sample, Split};
    use crate::tensor::ImageTensor;

    fn log(pairs: &[(usize, usize)], k: usize) -> PredictionLog {
        let recs = pairs
            .iter()
            .enumerate()
            .map(|(i, &(t, p))| PredictionRecord::new(format!("id{i}"), t, p))
            .collect();
        PredictionLog::new("c", k, recs).unwrap()
    }

    #[test]
    fn log_validation() {
        assert!(PredictionLog::new("c", 2, vec![PredictionRecord::new("a", 0, 2)]).is_err());
        assert!(PredictionLog::new(
            "c",
            2,
            vec![PredictionRecord::new("a", 0, 1), PredictionRecord::new("a", 1, 1)]
        )
        .is_err());
        let mut r = PredictionRecord::new("a", 0, 1);
        r.logits = Some(vec![0.0, f64::INFINITY]);
        assert!(PredictionLog::new("c", 2, vec![r]).is_err());
    }

    #[test]
    fn subset_filter_examples() {
        let l = log(&[(0, 0), (1, 0), (1, 1), (0, 1)], 2);
        let all: Vec<&str> = l.records().iter().map(|r| r.id.as_str()).collect();
        assert_eq!(subset_filter(&l, all).unwrap(), l);
        assert!(subset_filter(&l, std::iter::empty()).unwrap().is_empty());
        assert!(matches!(subset_filter(&l, ["nope"]), Err(Error::UnknownId(_))));
        let sub = subset_filter(&l, ["id3", "id0"]).unwrap();
        let ids: Vec<_> = sub.records().iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["id0", "id3"]);
        assert_eq!(sub.accuracy().unwrap(), 0.5);
    }

    fn dual_ds(labels: &[(usize, usize)]) -> LabeledDataset {
        let items = labels
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| Sample::new(format!("id{i}"), ImageTensor::zeros(1, 1, 1), a).with_secondary(b))
            .collect();
        LabeledDataset::new(items, 16, Split::Test).unwrap()
    }

    #[test]
    fn dual_label_examples() {
        let ds = dual_ds(&[(0, 0), (1, 2), (3, 3), (4, 5)]);
        let l = log(&[(0, 0), (1, 1), (3, 3), (4, 4)], 16);
        assert_eq!(dual_label_accuracy(&l, &ds).unwrap(), (100.0, 50.0));
        let wrong = log(&[(0, 7), (1, 7), (3, 7), (4, 7)], 16);
        assert_eq!(dual_label_accuracy(&wrong, &ds).unwrap(), (0.0, 0.0));

        let plain = LabeledDataset::new(vec![Sample::new("id0", ImageTensor::zeros(1, 1, 1), 0)], 2, Split::Test).unwrap();
        assert!(dual_label_accuracy(&log(&[(0, 0)], 2), &plain).is_err());
    }

    #[test]
    fn dual_label_uniform_random_predictions() {
        // N = 1000, p = 1/16: binomial sd = sqrt(1000 * 0.0625 * 0.9375) = 7.65 counts,
        // i.e. 0.765 percentage points; 3 sigma = 2.30 pp around 6.25.
        let mut r = crate::rng::derive_stream(5, "dual", 0);
        let labels: Vec<(usize, usize)> = (0..1000).map(|_| (r.below(16), r.below(16))).collect();
        let ds = dual_ds(&labels);
        let preds: Vec<(usize, usize)> = labels.iter().map(|&(a, _)| (a, r.below(16))).collect();
        let (s, t) = dual_label_accuracy(&log(&preds, 16), &ds).unwrap();
        for v in [s, t] {
            assert!((v - 6.25).abs() <= 3.0 * 0.765, "{v}");
        }
    }

    #[test]
    fn ensemble_pairing() {
        let a = log(&[(0, 0), (1, 1)], 2);
        let b = log(&[(0, 1), (1, 1)], 2);
        assert!(RunEnsemble::new(vec![RunPair { original: a.clone(), distorted: b.clone() }]).is_ok());
        let other_truth = log(&[(1, 1), (1, 1)], 2);
        assert!(RunEnsemble::new(vec![RunPair { original: a.clone(), distorted: other_truth }]).is_err());
        assert!(RunEnsemble::new(vec![]).is_err());
        let short = log(&[(0, 0)], 2);
        assert!(RunEnsemble::new(vec![RunPair { original: a, distorted: short }]).is_err());
    }
}
