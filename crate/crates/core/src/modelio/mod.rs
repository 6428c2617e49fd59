//! Prediction and saliency providers.
//!
//! Three providers ship with the crate: [`TinyModel`] (built-in trainable
//! classifier), [`ReplayProvider`] (answers from recorded prediction logs) and
//! [`RemoteProvider`] (HTTP/JSON client for an external model service).

mod log;
mod remote;
mod replay;
mod tiny;
mod train;

pub use log::{read_log, read_log_with_classes, write_log};
pub use remote::{RemoteInfo, RemoteProvider};
pub use replay::ReplayProvider;
pub use tiny::{input_gradient_saliency, Arch, TinyModel};
pub use train::{train_tiny, train_tiny_with_history, Donor, InterMix, LrSchedule, Msda, TrainConfig, TrainHistory};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::SaliencyMap;
use crate::metrics::{PredictionLog, PredictionRecord};
use crate::tensor::ImageTensor;
use crate::LabeledDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchLimit {
    Unlimited,
    Max(usize),
    /// Calls must not overlap; the harness sends one batch at a time.
    Serial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderInfo {
    pub name: String,
    pub num_classes: usize,
    pub input_shape: Option<(usize, usize, usize)>,
    pub returns_logits: bool,
    pub batch_limit: BatchLimit,
}

/// A batch of images plus the ids and data condition they were drawn from.
///
/// Model-backed providers only look at `images`; replay providers only look
/// at `condition` and `ids`.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub condition: &'a str,
    pub ids: Vec<&'a str>,
    pub images: Vec<&'a ImageTensor>,
}

impl<'a> Batch<'a> {
    pub fn len(&self) -> usize {
        self.images.len()
    }
    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Predictions {
    pub labels: Vec<usize>,
    pub logits: Option<Vec<Vec<f64>>>,
}

pub trait PredictionProvider: Send + Sync {
    fn info(&self) -> ProviderInfo;
    fn predict(&self, batch: &Batch<'_>, want_logits: bool) -> Result<Predictions>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaliencyTarget {
    Predicted,
    Class(usize),
}

pub trait SaliencyProvider: Send + Sync {
    /// Short description recorded in provenance (e.g. `input-gradient:tiny`).
    fn source(&self) -> String;
    fn saliency(&self, images: &[&ImageTensor], target: SaliencyTarget) -> Result<Vec<SaliencyMap>>;
}

/// Runs `provider` over `ds` and records a prediction log tagged `condition`.
pub fn predict_dataset(
    provider: &dyn PredictionProvider,
    ds: &LabeledDataset,
    condition: &str,
    want_logits: bool,
) -> Result<PredictionLog> {
    let info = provider.info();
    if let (Some(expected), Some(actual)) = (info.input_shape, ds.image_shape()) {
        if expected != actual {
            return Err(Error::shape(format!(
                "provider {} expects {expected:?}, dataset has {actual:?}",
                info.name
            )));
        }
    }
    let chunk = match info.batch_limit {
        BatchLimit::Max(n) if n > 0 => n,
        _ => 256,
    };
    let want_logits = want_logits && info.returns_logits;
    let mut records = Vec::with_capacity(ds.len());
    for items in ds.items().chunks(chunk) {
        let batch = Batch {
            condition,
            ids: items.iter().map(|s| s.id.as_str()).collect(),
            images: items.iter().map(|s| &s.image).collect(),
        };
        let out = provider.predict(&batch, want_logits)?;
        if out.labels.len() != items.len() {
            return Err(Error::Schema(format!(
                "{} predictions for {} images",
                out.labels.len(),
                items.len()
            )));
        }
        let mut logits = out.logits.map(|l| l.into_iter());
        for (s, &pred) in items.iter().zip(&out.labels) {
            records.push(PredictionRecord {
                id: s.id.clone(),
                true_label: s.label,
                pred,
                logits: logits.as_mut().and_then(|it| it.next()),
            });
        }
    }
    PredictionLog::new(condition, ds.num_classes(), records)
}

/// Fraction of `ds` the provider classifies correctly.
pub fn accuracy_on(provider: &dyn PredictionProvider, ds: &LabeledDataset, condition: &str) -> Result<f64> {
    predict_dataset(provider, ds, condition, false)?.accuracy()
}
