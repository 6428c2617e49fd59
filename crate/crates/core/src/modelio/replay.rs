use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use super::{read_log, Batch, BatchLimit, PredictionProvider, Predictions, ProviderInfo};
use crate::error::{Error, Result};
use crate::metrics::PredictionLog;

/// Answers prediction requests from recorded logs, keyed by condition and sample id.
///
/// A provider built from a single log answers for every condition.
#[derive(Debug, Clone)]
pub struct ReplayProvider {
    name: String,
    num_classes: usize,
    tables: BTreeMap<String, HashMap<String, (usize, Option<Vec<f64>>)>>,
    returns_logits: bool,
}

impl ReplayProvider {
    pub fn from_logs(logs: Vec<PredictionLog>) -> Result<Self> {
        let first = logs.first().ok_or_else(|| Error::Empty("replay needs at least one log".into()))?;
        let num_classes = first.num_classes();
        let returns_logits = logs.iter().all(|l| l.has_logits());
        let mut tables = BTreeMap::new();
        for log in logs {
            if log.num_classes() != num_classes {
                return Err(Error::param(format!(
                    "log {:?} has {} classes, expected {num_classes}",
                    log.condition(),
                    log.num_classes()
                )));
            }
            let table = log
                .records()
                .iter()
                .map(|r| (r.id.clone(), (r.pred, r.logits.clone())))
                .collect();
            if tables.insert(log.condition().to_string(), table).is_some() {
                return Err(Error::param(format!("two logs for condition {:?}", log.condition())));
            }
        }
        let name = format!("replay:{}", tables.keys().cloned().collect::<Vec<_>>().join(","));
        Ok(ReplayProvider {
            name,
            num_classes,
            tables,
            returns_logits,
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_logs(vec![read_log(path)?])
    }

    /// Every `*.jsonl` in `dir`, one condition per file stem.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        Self::from_logs(paths.iter().map(read_log).collect::<Result<_>>()?)
    }

    pub fn conditions(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }

    fn table(&self, condition: &str) -> Result<&HashMap<String, (usize, Option<Vec<f64>>)>> {
        if self.tables.len() == 1 {
            return Ok(self.tables.values().next().expect("one table"));
        }
        self.tables
            .get(condition)
            .ok_or_else(|| Error::Provider(format!("no replay log for condition {condition:?}")))
    }
}

impl PredictionProvider for ReplayProvider {
    fn info(&self) -> ProviderInfo {
        ProviderInfo {
            name: self.name.clone(),
            num_classes: self.num_classes,
            input_shape: None,
            returns_logits: self.returns_logits,
            batch_limit: BatchLimit::Unlimited,
        }
    }

    fn predict(&self, batch: &Batch<'_>, want_logits: bool) -> Result<Predictions> {
        let table = self.table(batch.condition)?;
        let mut labels = Vec::with_capacity(batch.ids.len());
        let mut logits = Vec::new();
        for id in &batch.ids {
            let (pred, l) = table.get(*id).ok_or_else(|| Error::UnknownId(id.to_string()))?;
            labels.push(*pred);
            if want_logits {
                logits.push(
                    l.clone()
                        .ok_or_else(|| Error::Provider(format!("log has no logits for {id:?}")))?,
                );
            }
        }
        Ok(Predictions {
            labels,
            logits: want_logits.then_some(logits),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::PredictionRecord;
    use crate::tensor::ImageTensor;

    fn log(cond: &str, preds: &[usize]) -> PredictionLog {
        let recs = preds
            .iter()
            .enumerate()
            .map(|(i, &p)| PredictionRecord::new(format!("x{i}"), 0, p))
            .collect();
        PredictionLog::new(cond, 3, recs).unwrap()
    }

    #[test]
    fn answers_by_condition_and_id() {
        let p = ReplayProvider::from_logs(vec![log("train", &[0, 1]), log("test", &[2, 2])]).unwrap();
        let img = ImageTensor::zeros(1, 1, 1);
        let out = p
            .predict(&Batch { condition: "test", ids: vec!["x1", "x0"], images: vec![&img, &img] }, false)
            .unwrap();
        assert_eq!(out.labels, vec![2, 2]);
        let out = p
            .predict(&Batch { condition: "train", ids: vec!["x1"], images: vec![&img] }, false)
            .unwrap();
        assert_eq!(out.labels, vec![1]);
        assert!(p
            .predict(&Batch { condition: "other", ids: vec!["x1"], images: vec![&img] }, false)
            .is_err());
    }

    #[test]
    fn unknown_id_is_error() {
        let p = ReplayProvider::from_logs(vec![log("test", &[0])]).unwrap();
        let img = ImageTensor::zeros(1, 1, 1);
        let err = p
            .predict(&Batch { condition: "anything", ids: vec!["nope"], images: vec![&img] }, false)
            .unwrap_err();
        assert!(matches!(err, Error::UnknownId(_)));
    }
}
