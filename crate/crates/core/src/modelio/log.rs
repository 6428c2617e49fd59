//! JSONL prediction logs: one `{"id","true","pred","logits"?}` object per line.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{PredictionLog, PredictionRecord};

pub fn write_log(log: &PredictionLog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in log.records() {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a log; the class count comes from the logits length, or the largest label seen.
/// The condition is the file stem.
pub fn read_log(path: impl AsRef<Path>) -> Result<PredictionLog> {
    read_log_impl(path.as_ref(), None)
}

pub fn read_log_with_classes(path: impl AsRef<Path>, num_classes: usize) -> Result<PredictionLog> {
    read_log_impl(path.as_ref(), Some(num_classes))
}

fn read_log_impl(path: &Path, num_classes: Option<usize>) -> Result<PredictionLog> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::LogParse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut records = Vec::new();
    let mut first_line: HashMap<String, usize> = HashMap::new();
    let mut logit_len: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let r: PredictionRecord = serde_json::from_str(line).map_err(|e| parse_err(lineno, e.to_string()))?;
        if let Some(prev) = first_line.insert(r.id.clone(), lineno) {
            return Err(parse_err(lineno, format!("duplicate id {:?} (first seen on line {prev})", r.id)));
        }
        if let Some(l) = &r.logits {
            match logit_len {
                None => logit_len = Some(l.len()),
                Some(n) if n != l.len() => {
                    return Err(parse_err(lineno, format!("{} logits, earlier records have {n}", l.len())))
                }
                _ => {}
            }
            if l.iter().any(|v| !v.is_finite()) {
                return Err(parse_err(lineno, "non-finite logit".into()));
            }
        }
        if let Some(k) = num_classes.or(logit_len) {
            if r.true_label >= k || r.pred >= k {
                return Err(parse_err(lineno, format!("label outside 0..{k}")));
            }
        }
        records.push(r);
    }
    let k = num_classes.or(logit_len).unwrap_or_else(|| {
        records
            .iter()
            .map(|r| r.true_label.max(r.pred) + 1)
            .max()
            .unwrap_or(1)
    });
    let condition = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    PredictionLog::new(condition, k, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    fn sample_log(n: usize, logits: bool) -> PredictionLog {
        let mut r = derive_stream(1, "log", 0);
        let records = (0..n)
            .map(|i| PredictionRecord {
                id: format!("img{i:03}"),
                true_label: r.below(4),
                pred: r.below(4),
                logits: logits.then(|| (0..4).map(|_| r.normal()).collect()),
            })
            .collect();
        PredictionLog::new("test", 4, records).unwrap()
    }

    #[test]
    fn round_trip_100_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.jsonl");
        let log = sample_log(100, true);
        write_log(&log, &path).unwrap();
        assert_eq!(read_log(&path).unwrap(), log);
    }

    #[test]
    fn field_order_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        let log = PredictionLog::new("x", 2, vec![PredictionRecord::new("a", 1, 0)]).unwrap();
        write_log(&log, &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "{\"id\":\"a\",\"true\":1,\"pred\":0}\n");
    }

    #[test]
    fn missing_pred_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(&path, "{\"id\":\"a\",\"true\":1,\"pred\":0}\n{\"id\":\"b\",\"true\":1}\n").unwrap();
        let err = read_log(&path).unwrap_err();
        match &err {
            Error::LogParse { line, message, .. } => {
                assert_eq!(*line, 2);
                assert!(message.contains("pred"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.jsonl");
        fs::write(&path, "{\"id\":\"a\",\"true\":1,\"pred\":0}\n{\"id\":\"a\",\"true\":0,\"pred\":0}\n").unwrap();
        assert!(matches!(read_log(&path), Err(Error::LogParse { line: 2, .. })));
    }

    #[test]
    fn logits_optional() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nolog.jsonl");
        write_log(&sample_log(10, false), &path).unwrap();
        let log = read_log_with_classes(&path, 4).unwrap();
        assert!(!log.has_logits());
        assert_eq!(log.len(), 10);
    }
}
