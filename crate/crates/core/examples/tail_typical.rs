//! Two replayed models: one typical, one whose accuracies are all halved.
//! CutOcclusion separates them by 30 points; iOcclusion scores them the same,
//! since it only looks at how the generalisation gap scales.
//!
//!     cargo run --example tail_typical

use occkit::distort::{distort_dataset, DistortContext};
use occkit::metrics::{cut_occlusion, i_occlusion_curve, CurveConfig, OcclusionSource, PredictionLog, PredictionRecord};
use occkit::modelio::{predict_dataset, ReplayProvider};
use occkit::{ImageTensor, LabeledDataset, Result, Sample, Split};

fn dataset(split: Split) -> Result<LabeledDataset> {
    let items = (0..100).map(|i| Sample::new(format!("{split}-{i}"), ImageTensor::filled(1, 8, 8, 0.5), i % 2)).collect();
    LabeledDataset::new(items, 2, split)
}

fn log(ds: &LabeledDataset, cond: &str, correct: usize) -> Result<PredictionLog> {
    let recs = ds
        .items()
        .iter()
        .enumerate()
        .map(|(i, s)| PredictionRecord::new(s.id.clone(), s.label, if i < correct { s.label } else { 1 - s.label }))
        .collect();
    PredictionLog::new(cond, 2, recs)
}

fn main() -> Result<()> {
    let (train, test) = (dataset(Split::Train)?, dataset(Split::Test)?);
    for (name, acc) in [("typical", [96, 80, 72, 60]), ("tail", [48, 40, 36, 30])] {
        let provider = ReplayProvider::from_logs(vec![
            log(&train, "train", acc[0])?,
            log(&test, "test", acc[1])?,
            log(&train, "train@p=0.3", acc[2])?,
            log(&test, "test@p=0.3", acc[3])?,
        ])?;
        let curve = i_occlusion_curve(&provider, &OcclusionSource::Rect, &train, &test, &CurveConfig::new(vec![0.3], 1))?;
        let spec = "occlude:mask=rect,lo=0.3,hi=0.3,placement=inside".parse()?;
        let occluded = distort_dataset(&test, &spec, 1, DistortContext::default())?;
        let cut = cut_occlusion(&predict_dataset(&provider, &occluded.dataset, "test@p=0.3", false)?)?;
        println!("{name:<8} CutOcclusion {cut:5.1}%   iOcclusion {:.3}", curve.points[0].i_occlusion);
    }
    Ok(())
}
