//! CutOcclusion and interplay occlusion (iOcclusion).

use serde::{Deserialize, Serialize};

use super::PredictionLog;
use crate::dataset::{LabeledDataset, Split};
use crate::distort::{distort_dataset, DistortContext, DistortionKind, DistortionSpec, Fill, MaskPolicy, SaliencyChoice};
use crate::error::{Error, Result};
use crate::mask::{Placement, DEFAULT_DECAY};
use crate::modelio::{accuracy_on, PredictionProvider, SaliencyProvider};
use crate::rng::SeededRng;

/// Accuracy of a (distorted) log, in percent.
pub fn cut_occlusion(dist: &PredictionLog) -> Result<f64> {
    Ok(100.0 * dist.accuracy()?)
}

/// Clean and occluded accuracies (fractions) at occlusion level `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyQuad {
    pub acc_train: f64,
    pub acc_test: f64,
    pub acc_train_p: f64,
    pub acc_test_p: f64,
    pub p: f64,
}

/// `|(A(train_p) − A(test_p)) / (A(train) − A(test))|`.
pub fn i_occlusion(q: &AccuracyQuad) -> Result<f64> {
    let gap = q.acc_train - q.acc_test;
    if gap == 0.0 {
        return Err(Error::ZeroGap);
    }
    Ok(((q.acc_train_p - q.acc_test_p) / gap).abs())
}

/// How `D^p` is built for each occlusion level.
#[derive(Clone, Copy)]
pub enum OcclusionSource<'a> {
    /// Most or least salient pixels, coin flipped per batch by default.
    Saliency {
        provider: &'a dyn SaliencyProvider,
        mode: SaliencyChoice,
    },
    /// Low-frequency Fourier masks.
    Fourier { decay: f64 },
    /// Randomly positioned rectangle of area `p` kept inside the image.
    Rect,
    /// Random tiles of a `g×g` grid.
    Grid { g: usize },
}

impl OcclusionSource<'_> {
    pub fn fourier() -> Self {
        OcclusionSource::Fourier { decay: DEFAULT_DECAY }
    }

    fn policy(&self, p: f64) -> MaskPolicy {
        match *self {
            OcclusionSource::Saliency { mode, .. } => MaskPolicy::Saliency { p, mode },
            OcclusionSource::Fourier { decay } => MaskPolicy::Fourier { p, decay },
            OcclusionSource::Rect => MaskPolicy::Rect {
                lo: p,
                hi: p,
                placement: Placement::Inside,
            },
            OcclusionSource::Grid { g } => MaskPolicy::Grid { g, frac: p },
        }
    }

    pub fn describe(&self) -> String {
        match self {
            OcclusionSource::Saliency { provider, mode } => format!("saliency:{}:{mode}", provider.source()),
            OcclusionSource::Fourier { decay } => format!("fourier:decay={decay}"),
            OcclusionSource::Rect => "rect".into(),
            OcclusionSource::Grid { g } => format!("grid:g={g}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveConfig {
    pub fractions: Vec<f64>,
    pub seed: u64,
    pub batch_size: usize,
    pub fill: Fill,
    pub workers: Option<usize>,
}

impl CurveConfig {
    pub fn new(fractions: Vec<f64>, seed: u64) -> Self {
        CurveConfig {
            fractions,
            seed,
            batch_size: crate::distort::DEFAULT_BATCH_SIZE,
            fill: Fill::Black,
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub p: f64,
    pub acc_train_p: f64,
    pub acc_test_p: f64,
    pub i_occlusion: f64,
    pub spec: String,
    pub train_seed: u64,
    pub test_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IOcclusionCurve {
    pub acc_train: f64,
    pub acc_test: f64,
    pub source: String,
    pub points: Vec<CurvePoint>,
}

/// Condition tag under which predictions for a split (and occlusion level) are requested.
///
/// Clean data is `"train"` / `"test"`; occluded data is e.g. `"test@p=0.3"`.
pub fn condition_tag(split: Split, p: Option<f64>) -> String {
    match p {
        None => split.to_string(),
        Some(p) => format!("{split}@p={p}"),
    }
}

/// iOcclusion at each fraction in `cfg.fractions`.
///
/// Clean accuracies are computed once. The train set at level `i` is distorted
/// with seed `child_seed("iocc_train", i)`, the test set with `("iocc_test", i)`.
pub fn i_occlusion_curve(
    predict: &dyn PredictionProvider,
    source: &OcclusionSource<'_>,
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &CurveConfig,
) -> Result<IOcclusionCurve> {
    if let Some(p) = cfg.fractions.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::param(format!("occlusion fraction {p} must lie in (0, 1)")));
    }
    if cfg.fractions.is_empty() {
        return Ok(IOcclusionCurve {
            acc_train: f64::NAN,
            acc_test: f64::NAN,
            source: source.describe(),
            points: Vec::new(),
        });
    }
    let acc_train = accuracy_on(predict, train, &condition_tag(Split::Train, None))?;
    let acc_test = accuracy_on(predict, test, &condition_tag(Split::Test, None))?;
    if acc_train == acc_test {
        return Err(Error::ZeroGap);
    }
    let root = SeededRng::new(cfg.seed);
    let ctx = DistortContext {
        donor: None,
        saliency: match source {
            OcclusionSource::Saliency { provider, .. } => Some(*provider),
            _ => None,
        },
        workers: cfg.workers,
    };
    let mut points = Vec::with_capacity(cfg.fractions.len());
    for (i, &p) in cfg.fractions.iter().enumerate() {
        let spec = DistortionSpec::new(DistortionKind::Occlude {
            policy: source.policy(p),
            fill: cfg.fill,
        })
        .with_batch_size(cfg.batch_size);
        let train_seed = root.child_seed("iocc_train", i as u64);
        let test_seed = root.child_seed("iocc_test", i as u64);
        let train_p = distort_dataset(train, &spec, train_seed, ctx)?;
        let test_p = distort_dataset(test, &spec, test_seed, ctx)?;
        let acc_train_p = accuracy_on(predict, &train_p.dataset, &condition_tag(Split::Train, Some(p)))?;
        let acc_test_p = accuracy_on(predict, &test_p.dataset, &condition_tag(Split::Test, Some(p)))?;
        let value = i_occlusion(&AccuracyQuad {
            acc_train,
            acc_test,
            acc_train_p,
            acc_test_p,
            p,
        })?;
        points.push(CurvePoint {
            p,
            acc_train_p,
            acc_test_p,
            i_occlusion: value,
            spec: spec.to_string(),
            train_seed,
            test_seed,
        });
    }
    Ok(IOcclusionCurve {
        acc_train,
        acc_test,
        source: source.describe(),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::PredictionRecord;

    fn quad(a: f64, b: f64, c: f64, d: f64) -> AccuracyQuad {
        AccuracyQuad {
            acc_train: a,
            acc_test: b,
            acc_train_p: c,
            acc_test_p: d,
            p: 0.3,
        }
    }

    #[test]
    fn i_occlusion_arithmetic() {
        let v = i_occlusion(&quad(1.00, 0.95, 0.90, 0.87)).unwrap();
        assert!((v - 0.6).abs() < 1e-12);
        assert_eq!(format!("{v:.6}"), "0.600000");
        assert_eq!(i_occlusion(&quad(1.0, 0.9, 0.5, 0.5)).unwrap(), 0.0);
        assert!(matches!(i_occlusion(&quad(0.9, 0.9, 0.5, 0.4)), Err(Error::ZeroGap)));
    }

    #[test]
    fn i_occlusion_gap_invariances() {
        let base = quad(0.97, 0.81, 0.66, 0.58);
        let v = i_occlusion(&base).unwrap();
        let shifted = quad(0.97 - 0.2, 0.81 - 0.2, 0.66 + 0.1, 0.58 + 0.1);
        assert!((i_occlusion(&shifted).unwrap() - v).abs() < 1e-12);
        let s = 0.37;
        let scaled = quad(0.97 * s, 0.81 * s, 0.66 * s, 0.58 * s);
        assert!((i_occlusion(&scaled).unwrap() - v).abs() < 1e-12);
    }

    #[test]
    fn cut_occlusion_examples() {
        let mk = |pairs: &[(usize, usize)]| {
            let recs = pairs
                .iter()
                .enumerate()
                .map(|(i, &(t, p))| PredictionRecord::new(format!("{i}"), t, p))
                .collect();
            PredictionLog::new("d", 3, recs).unwrap()
        };
        assert_eq!(cut_occlusion(&mk(&[(0, 0), (1, 1)])).unwrap(), 100.0);
        assert_eq!(cut_occlusion(&mk(&[(0, 0), (1, 2), (2, 0), (1, 0)])).unwrap(), 25.0);
        assert_eq!(cut_occlusion(&mk(&[(1, 0), (2, 0), (1, 2), (0, 0)])).unwrap(), 25.0);
        assert!(cut_occlusion(&mk(&[])).is_err());
    }

    #[test]
    fn condition_tags() {
        assert_eq!(condition_tag(Split::Train, None), "train");
        assert_eq!(condition_tag(Split::Test, Some(0.3)), "test@p=0.3");
    }
}
