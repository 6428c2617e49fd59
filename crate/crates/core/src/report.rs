//! Metric reports: stable JSON documents, CSV tables and a minimal SVG line plot.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::metrics::IOcclusionCurve;

/// One computed metric plus everything needed to reproduce it.
///
/// Field order and key order are fixed so reruns produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class_increases: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
    /// Secondary values (worst-case DI, null statistics, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, Value>,
}

impl MetricReport {
    pub fn new(metric: impl Into<String>, value: Option<f64>, config: impl Serialize) -> Result<Self> {
        Ok(MetricReport {
            metric: metric.into(),
            value,
            std: None,
            config: serde_json::to_value(config)?,
            seeds: BTreeMap::new(),
            per_class_increases: None,
            curve: None,
            status: None,
            extra: BTreeMap::new(),
        })
    }

    pub fn with_seed(mut self, name: impl Into<String>, seed: u64) -> Self {
        self.seeds.insert(name.into(), seed);
        self
    }

    pub fn with_extra(mut self, key: impl Into<String>, value: impl Serialize) -> Result<Self> {
        self.extra.insert(key.into(), serde_json::to_value(value)?);
        Ok(self)
    }

    pub fn with_curve(mut self, curve: &IOcclusionCurve) -> Result<Self> {
        self.curve = Some(serde_json::to_value(curve)?);
        Ok(self)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `run,class_0,...,class_{K-1}` with one row per run and a final `mean` row.
pub fn write_increases_csv(path: impl AsRef<Path>, increases: &[Vec<f64>]) -> Result<()> {
    let k = increases.first().map_or(0, Vec::len);
    let header: Vec<String> = std::iter::once("run".to_string())
        .chain((0..k).map(|j| format!("class_{j}")))
        .collect();
    let mut rows: Vec<Vec<String>> = increases
        .iter()
        .enumerate()
        .map(|(r, c)| std::iter::once(r.to_string()).chain(c.iter().map(|v| v.to_string())).collect())
        .collect();
    if !increases.is_empty() {
        let n = increases.len() as f64;
        let mean = (0..k).map(|j| (increases.iter().map(|c| c[j]).sum::<f64>() / n).to_string());
        rows.push(std::iter::once("mean".to_string()).chain(mean).collect());
    }
    write_rows(path.as_ref(), &header, &rows)
}

/// `p,acc_train_p,acc_test_p,i_occlusion`, one row per occlusion level.
pub fn write_curve_csv(path: impl AsRef<Path>, curve: &IOcclusionCurve) -> Result<()> {
    let header = ["p", "acc_train_p", "acc_test_p", "i_occlusion"].map(String::from);
    let rows: Vec<Vec<String>> = curve
        .points
        .iter()
        .map(|pt| {
            vec![
                pt.p.to_string(),
                pt.acc_train_p.to_string(),
                pt.acc_test_p.to_string(),
                pt.i_occlusion.to_string(),
            ]
        })
        .collect();
    write_rows(path.as_ref(), &header, &rows)
}

/// Line plot of iOcclusion against the occluded fraction.
pub fn curve_svg(curve: &IOcclusionCurve, title: &str) -> String {
    let (w, h) = (480.0, 320.0);
    let (left, right, top, bottom) = (56.0, 16.0, 32.0, 44.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let ymax = curve
        .points
        .iter()
        .map(|p| p.i_occlusion)
        .fold(1.0f64, f64::max);
    let ymax = (ymax * 4.0).ceil() / 4.0;
    let sx = |x: f64| left + x * pw;
    let sy = |y: f64| top + ph - y / ymax * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{:.1} {:.1} V{:.1} H{:.1}" fill="none" stroke="black"/>"#,
        left,
        top,
        top + ph,
        left + pw
    );
    for i in 0..=5 {
        let x = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="black"/><text x="{0:.1}" y="{3:.1}" text-anchor="middle">{4:.1}</text>"#,
            sx(x),
            top + ph,
            top + ph + 4.0,
            top + ph + 16.0,
            x
        );
        let y = ymax * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<line x1="{0:.1}" y1="{1:.1}" x2="{2:.1}" y2="{1:.1}" stroke="black"/><text x="{3:.1}" y="{4:.1}" text-anchor="end">{5:.2}</text>"#,
            left - 4.0,
            sy(y),
            left,
            left - 6.0,
            sy(y) + 4.0,
            y
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">occluded fraction p</text>"#,
        left + pw / 2.0,
        h - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(14 {:.1}) rotate(-90)" text-anchor="middle">iOcclusion</text>"#,
        top + ph / 2.0
    );
    if !curve.points.is_empty() {
        let pts: Vec<String> = curve
            .points
            .iter()
            .map(|p| format!("{:.1},{:.1}", sx(p.p), sy(p.i_occlusion)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
            pts.join(" ")
        );
        for p in &pts {
            let (x, y) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="3" fill="steelblue"/>"#);
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Reports side by side: one row per report, curve points spread into `p=...` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

pub fn merge_reports(reports: &[(String, MetricReport)]) -> ReportTable {
    let mut levels: BTreeSet<String> = BTreeSet::new();
    let mut curves: Vec<BTreeMap<String, f64>> = Vec::with_capacity(reports.len());
    for (_, r) in reports {
        let mut m = BTreeMap::new();
        if let Some(points) = r.curve.as_ref().and_then(|c| c["points"].as_array()) {
            for pt in points {
                if let (Some(p), Some(v)) = (pt["p"].as_f64(), pt["i_occlusion"].as_f64()) {
                    let key = format!("p={p}");
                    levels.insert(key.clone());
                    m.insert(key, v);
                }
            }
        }
        curves.push(m);
    }
    let mut columns: Vec<String> = ["name", "metric", "value", "std", "status"].map(String::from).to_vec();
    columns.extend(levels.iter().cloned());
    let rows = reports
        .iter()
        .zip(&curves)
        .map(|((name, r), curve)| {
            let mut row = vec![
                name.clone(),
                r.metric.clone(),
                fmt_opt(r.value),
                fmt_opt(r.std),
                r.status.clone().unwrap_or_default(),
            ];
            row.extend(levels.iter().map(|l| fmt_opt(curve.get(l).copied())));
            row
        })
        .collect();
    ReportTable { columns, rows }
}

impl ReportTable {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_rows(path.as_ref(), &self.columns, &self.rows)
    }

    /// Whitespace-aligned text rendering.
    pub fn to_text(&self) -> String {
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|i| {
                self.rows
                    .iter()
                    .map(|r| r[i].len())
                    .chain(std::iter::once(self.columns[i].len()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            parts.join("  ").trim_end().to_string() + "\n"
        };
        let mut out = line(&self.columns);
        for r in &self.rows {
            out.push_str(&line(r));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::CurvePoint;

    fn curve() -> IOcclusionCurve {
        IOcclusionCurve {
            acc_train: 1.0,
            acc_test: 0.9,
            source: "rect".into(),
            points: [0.1, 0.5]
                .iter()
                .map(|&p| CurvePoint {
                    p,
                    acc_train_p: 0.8,
                    acc_test_p: 0.75,
                    i_occlusion: 0.5,
                    spec: "x".into(),
                    train_seed: 1,
                    test_seed: 2,
                })
                .collect(),
        }
    }

    #[test]
    fn json_round_trip_and_stable_bytes() {
        let r = MetricReport::new("di", Some(0.195), serde_json::json!({"b": 1, "a": [1, 2]}))
            .unwrap()
            .with_seed("null", 7)
            .with_extra("worst_case", 0.3)
            .unwrap();
        let text = r.to_json().unwrap();
        assert_eq!(text, r.clone().to_json().unwrap());
        assert!(text.find("\"metric\"").unwrap() < text.find("\"value\"").unwrap());
        assert!(!text.contains("\"curve\""));
        let back: MetricReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn merge_two_reports() {
        let a = MetricReport::new("i_occlusion", None, ()).unwrap().with_curve(&curve()).unwrap();
        let b = MetricReport::new("affinity", Some(-3.0), ()).unwrap();
        let t = merge_reports(&[("mixup".into(), a), ("basic".into(), b)]);
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.columns, vec!["name", "metric", "value", "std", "status", "p=0.1", "p=0.5"]);
        assert_eq!(t.rows[0][5], "0.500000");
        assert_eq!(t.rows[1][2], "-3.000000");
        assert_eq!(t.to_text().lines().count(), 3);
    }

    #[test]
    fn svg_has_polyline() {
        let svg = curve_svg(&curve(), "a < b");
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("<polyline"));
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg.matches("<circle").count(), 2);
    }

    #[test]
    fn csv_outputs() {
        let dir = tempfile::tempdir().unwrap();
        write_increases_csv(dir.path().join("i.csv"), &[vec![0.4, 0.1], vec![0.2, 0.2]]).unwrap();
        let text = fs::read_to_string(dir.path().join("i.csv")).unwrap();
        assert_eq!(text, "run,class_0,class_1\n0,0.4,0.1\n1,0.2,0.2\nmean,0.30000000000000004,0.15000000000000002\n");
        write_curve_csv(dir.path().join("c.csv"), &curve()).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("c.csv")).unwrap().lines().count(), 3);
    }
}
