//! HTTP/JSON client for an external model service.
//!
//! `GET /v1/info`, `POST /v1/predict`, `POST /v1/saliency`. Every response is
//! checked against the expected shapes before it is handed back.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Batch, BatchLimit, PredictionProvider, Predictions, ProviderInfo, SaliencyProvider, SaliencyTarget};
use crate::error::{Error, Result};
use crate::mask::SaliencyMap;
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteInfo {
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub name: String,
}

#[derive(Debug, Clone)]
pub struct RemoteProvider {
    base: String,
    agent: ureq::Agent,
    info: RemoteInfo,
    max_batch: Option<usize>,
}

impl RemoteProvider {
    /// Connects and fetches `/v1/info`.
    pub fn connect(url: &str) -> Result<Self> {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(300)).build();
        let base = url.trim_end_matches('/').to_string();
        let v = get_json(&agent, &format!("{base}/v1/info"))?;
        let info: RemoteInfo =
            serde_json::from_value(v).map_err(|e| Error::Schema(format!("/v1/info: {e}")))?;
        if info.num_classes == 0 || info.input_shape.contains(&0) {
            return Err(Error::Schema(format!("/v1/info: degenerate shape or class count {info:?}")));
        }
        Ok(RemoteProvider {
            base,
            agent,
            info,
            max_batch: None,
        })
    }

    /// Caps the number of images sent per request.
    pub fn with_max_batch(mut self, n: usize) -> Self {
        self.max_batch = Some(n.max(1));
        self
    }

    pub fn remote_info(&self) -> &RemoteInfo {
        &self.info
    }

    fn check_images(&self, images: &[&ImageTensor]) -> Result<Value> {
        let [c, h, w] = self.info.input_shape;
        let mut out = Vec::with_capacity(images.len());
        for img in images {
            if img.shape() != (c, h, w) {
                return Err(Error::shape(format!(
                    "remote model expects {:?}, image is {:?}",
                    (c, h, w),
                    img.shape()
                )));
            }
            let nested: Vec<Vec<Vec<f32>>> = (0..c)
                .map(|ch| (0..h).map(|y| (0..w).map(|x| img.get(ch, y, x)).collect()).collect())
                .collect();
            out.push(nested);
        }
        Ok(serde_json::to_value(out)?)
    }
}

fn transport(e: ureq::Error) -> Error {
    match e {
        ureq::Error::Status(code, resp) => {
            let body = resp.into_string().unwrap_or_default();
            Error::Transport(format!("HTTP {code}: {}", body.chars().take(200).collect::<String>()))
        }
        ureq::Error::Transport(t) => Error::Transport(t.to_string()),
    }
}

fn get_json(agent: &ureq::Agent, url: &str) -> Result<Value> {
    let resp = agent.get(url).call().map_err(transport)?;
    resp.into_json().map_err(|e| Error::Schema(format!("{url}: body is not JSON: {e}")))
}

fn post_json(agent: &ureq::Agent, url: &str, body: &Value) -> Result<Value> {
    let resp = agent.post(url).send_json(body).map_err(transport)?;
    resp.into_json().map_err(|e| Error::Schema(format!("{url}: body is not JSON: {e}")))
}

fn array<'a>(v: &'a Value, what: &str, len: usize) -> Result<&'a Vec<Value>> {
    let a = v
        .as_array()
        .ok_or_else(|| Error::Schema(format!("{what} is not an array")))?;
    if a.len() != len {
        return Err(Error::Schema(format!("{what} has length {}, expected {len}", a.len())));
    }
    Ok(a)
}

fn finite(v: &Value, what: &str) -> Result<f64> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::Schema(format!("{what} is not a finite number")))
}

/// Validates a `/v1/predict` response for `n` images and `k` classes.
pub(crate) fn parse_predict(v: &Value, n: usize, k: usize, want_logits: bool) -> Result<Predictions> {
    let preds = array(&v["pred"], "pred", n)?;
    let labels = preds
        .iter()
        .map(|p| {
            p.as_u64()
                .map(|x| x as usize)
                .filter(|&x| x < k)
                .ok_or_else(|| Error::Schema(format!("pred entry {p} is not a label in 0..{k}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let logits = if want_logits {
        let rows = array(&v["logits"], "logits", n)?;
        Some(
            rows.iter()
                .enumerate()
                .map(|(i, row)| {
                    array(row, &format!("logits[{i}]"), k)?
                        .iter()
                        .map(|x| finite(x, &format!("logits[{i}] entry")))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok(Predictions { labels, logits })
}

/// Validates a `/v1/saliency` response for `n` maps of size `h×w`.
pub(crate) fn parse_saliency(v: &Value, n: usize, h: usize, w: usize) -> Result<Vec<SaliencyMap>> {
    array(&v["maps"], "maps", n)?
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut values = Vec::with_capacity(h * w);
            for (y, row) in array(m, &format!("maps[{i}]"), h)?.iter().enumerate() {
                for x in array(row, &format!("maps[{i}][{y}]"), w)? {
                    values.push(finite(x, &format!("maps[{i}] entry"))?);
                }
            }
            SaliencyMap::new(h, w, values).map_err(|e| Error::Schema(format!("maps[{i}]: {e}")))
        })
        .collect()
}

impl PredictionProvider for RemoteProvider {
    fn info(&self) -> ProviderInfo {
        let [c, h, w] = self.info.input_shape;
        ProviderInfo {
            name: format!("remote:{}", self.info.name),
            num_classes: self.info.num_classes,
            input_shape: Some((c, h, w)),
            returns_logits: true,
            batch_limit: self.max_batch.map_or(BatchLimit::Unlimited, BatchLimit::Max),
        }
    }

    fn predict(&self, batch: &Batch<'_>, want_logits: bool) -> Result<Predictions> {
        if batch.is_empty() {
            return Ok(Predictions {
                labels: vec![],
                logits: want_logits.then(Vec::new),
            });
        }
        let images = self.check_images(&batch.images)?;
        let body = json!({ "images": images, "return_logits": want_logits });
        let v = post_json(&self.agent, &format!("{}/v1/predict", self.base), &body)?;
        parse_predict(&v, batch.len(), self.info.num_classes, want_logits)
    }
}

impl SaliencyProvider for RemoteProvider {
    fn source(&self) -> String {
        format!("remote:{}", self.info.name)
    }

    fn saliency(&self, images: &[&ImageTensor], target: SaliencyTarget) -> Result<Vec<SaliencyMap>> {
        if images.is_empty() {
            return Ok(vec![]);
        }
        let body_images = self.check_images(images)?;
        let target = match target {
            SaliencyTarget::Predicted => json!("pred"),
            SaliencyTarget::Class(j) => json!(j),
        };
        let body = json!({ "images": body_images, "target": target });
        let v = post_json(&self.agent, &format!("{}/v1/saliency", self.base), &body)?;
        let [_, h, w] = self.info.input_shape;
        parse_saliency(&v, images.len(), h, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predict_schema() {
        let ok = json!({"pred": [0, 2], "logits": [[0.1, 0.2, 0.3], [1.0, -1.0, 2.0]]});
        let p = parse_predict(&ok, 2, 3, true).unwrap();
        assert_eq!(p.labels, vec![0, 2]);
        let short = json!({"pred": [0, 2], "logits": [[0.1, 0.2], [1.0, -1.0, 2.0]]});
        assert!(matches!(parse_predict(&short, 2, 3, true), Err(Error::Schema(_))));
        assert!(parse_predict(&json!({"pred": [3]}), 1, 3, false).is_err());
        assert!(parse_predict(&json!({"pred": [0]}), 2, 3, false).is_err());
        assert!(parse_predict(&json!({"pred": [0]}), 1, 3, true).is_err());
    }

    #[test]
    fn saliency_schema() {
        let ok = json!({"maps": [[[0.0, 1.0], [0.5, 0.25]]]});
        assert_eq!(parse_saliency(&ok, 1, 2, 2).unwrap()[0].values(), &[0.0, 1.0, 0.5, 0.25]);
        let unnormalized = json!({"maps": [[[0.0, 2.0], [0.5, 0.25]]]});
        assert!(parse_saliency(&unnormalized, 1, 2, 2).is_err());
        let wrong = json!({"maps": [[[0.0, 1.0]]]});
        assert!(parse_saliency(&wrong, 1, 2, 2).is_err());
    }
}
