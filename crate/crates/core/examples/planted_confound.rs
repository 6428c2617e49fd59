//! Plants a spurious cue (a black 8×8 square in every class-2 training image),
//! trains five tiny models, and measures DI under black rectangular occlusion
//! before and after training with that same occlusion as augmentation.
//!
//!     cargo run --release --example planted_confound

use occkit::distort::{augment_copies, distort_dataset, DistortContext, DistortionSpec};
use occkit::metrics::{di_index, di_null, NullStats, NullVariant, RunEnsemble, RunPair};
use occkit::modelio::{predict_dataset, train_tiny, TrainConfig};
use occkit::synth::BlobConfig;
use occkit::{Result, Split};

const OCCLUDER: &str = "occlude:mask=rect,lo=0.25,hi=0.25,placement=inside,fill=black";

fn ensemble(augment: bool) -> Result<RunEnsemble> {
    let blobs = BlobConfig::planted_confound(200);
    let test = blobs.generate(Split::Test, 1000)?;
    let spec: DistortionSpec = OCCLUDER.parse()?;
    let ctx = DistortContext::default();
    let mut runs = Vec::new();
    for r in 0..5u64 {
        let mut train = blobs.generate(Split::Train, r)?;
        if augment {
            train = augment_copies(&train, &spec, 2, 100 + r, ctx)?;
        }
        let model = train_tiny(&train, &TrainConfig { seed: r, ..TrainConfig::default().with_epochs(30) })?;
        let occluded = distort_dataset(&test, &spec, 200 + r, ctx)?;
        runs.push(RunPair {
            original: predict_dataset(&model, &test, "test", false)?,
            distorted: predict_dataset(&model, &occluded.dataset, "test@occluded", false)?,
        });
    }
    RunEnsemble::new(runs)
}

fn show(name: &str, e: &RunEnsemble, null: &NullStats) -> Result<f64> {
    let di = di_index(e)?;
    println!("{name:>9}: DI {di:.4}   null {:.4} ± {:.4}   DI/null {:.2}", null.mean, null.std, di / null.mean);
    for (i, r) in e.runs().iter().enumerate() {
        println!(
            "           run {i}: clean {:5.1}%  occluded {:5.1}%  errors by predicted class {:?}",
            100.0 * r.original.accuracy()?,
            100.0 * r.distorted.accuracy()?,
            r.distorted.errors_by_predicted()
        );
    }
    Ok(di)
}

fn main() -> Result<()> {
    let basic = ensemble(false)?;
    let augmented = ensemble(true)?;
    let basic_null = di_null(&basic, NullVariant::PerExample, 2000, 7)?;
    let aug_null = di_null(&augmented, NullVariant::PerExample, 2000, 7)?;
    let di_basic = show("basic", &basic, &basic_null)?;
    let di_aug = show("augmented", &augmented, &aug_null)?;
    println!();
    println!("basic DI > 5 x null:      {}", di_basic > 5.0 * basic_null.mean);
    println!("augmented DI < 2 x null:  {}", di_aug < 2.0 * basic_null.mean);
    Ok(())
}
