//! Trains the tiny classifier with each mixed-sample augmentation and reports
//! clean accuracy, affinity against the plain model and diversity (loss of
//! the plain model on the augmented data).
//!
//!     cargo run --release --example train_msda

use std::sync::Arc;

use occkit::distort::{distort_dataset, DistortContext, DistortionSpec};
use occkit::metrics::{affinity, diversity};
use occkit::modelio::{accuracy_on, train_tiny, Donor, InterMix, Msda, TinyModel, TrainConfig};
use occkit::synth::BlobConfig;
use occkit::{LabeledDataset, Result, Split};

fn softmax(l: &[f64]) -> Vec<f64> {
    let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = l.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn diversity_of(model: &TinyModel, ds: &LabeledDataset) -> Result<f64> {
    let recs = ds
        .items()
        .iter()
        .map(|s| Ok((softmax(&model.predict_image(&s.image)?.1), s.label)))
        .collect::<Result<Vec<_>>>()?;
    Ok(diversity(&recs)?.value)
}

fn main() -> Result<()> {
    let blobs = BlobConfig { per_class: 60, noise: 0.3, ..BlobConfig::default() };
    let train = blobs.generate(Split::Train, 1)?;
    let test = blobs.generate(Split::Test, 2)?;
    let donor = BlobConfig { classes: 5, ..blobs.clone() }.generate(Split::Train, 3)?;
    let base = TrainConfig::default().with_epochs(40);

    let plain = train_tiny(&train, &base)?;
    let clean = 100.0 * accuracy_on(&plain, &test, "test")?;
    println!("{:<34} test {clean:5.1}%", "none");

    let methods: Vec<(Msda, &str)> = vec![
        (Msda::Mixup { alpha: 1.0 }, "mixup:alpha=1"),
        (Msda::Cutmix { alpha: 1.0 }, "cutmix:alpha=1"),
        (Msda::Fmix { alpha: 1.0, decay: 3.0 }, "fmix:alpha=1,decay=3"),
        (Msda::Rm { k: 16, decay: 3.0, alpha: 1.0 }, "rm:k=16,decay=3,alpha=1"),
        (
            Msda::Interdataset {
                donor: Donor { description: "blobs-5".into(), data: Some(Arc::new(donor.clone())) },
                mix: InterMix::Mixup,
                alpha: 1.0,
                h: 1.0,
            },
            "mixup:alpha=1",
        ),
    ];
    for (msda, eval_spec) in methods {
        let label = match &msda {
            Msda::Interdataset { .. } => "interdataset mixup (5-class donor)".to_string(),
            _ => eval_spec.to_string(),
        };
        let model = train_tiny(&train, &TrainConfig { msda, ..base.clone() })?;
        let aug = 100.0 * accuracy_on(&model, &test, "test")?;
        let spec: DistortionSpec = eval_spec.parse()?;
        let ctx = DistortContext { donor: Some(&train), saliency: None, workers: None };
        let mixed = distort_dataset(&train, &spec, 4, ctx)?.dataset;
        println!(
            "{label:<34} test {aug:5.1}%  affinity {:+6.2}  diversity {:.3}",
            affinity(clean, aug)?,
            diversity_of(&plain, &mixed)?
        );
    }
    Ok(())
}
