//! Applies every distortion family to a small synthetic dataset and prints
//! what each one did. With an output directory, each result is saved with
//! its provenance sidecar.
//!
//!     cargo run --example distortions [OUT_DIR]

use occkit::distort::{distort_dataset, DistortContext, DistortionSpec};
use occkit::modelio::{Arch, TinyModel};
use occkit::synth::BlobConfig;
use occkit::{derive_stream, Result, Split};

const SPECS: &[&str] = &[
    "patch_shuffle:g=4",
    "occlude:mask=rect,lo=0.1,hi=0.3,placement=clip_resampled,fill=noise",
    "occlude:mask=fourier,p=0.3,decay=3",
    "occlude:mask=grid,g=4,frac=0.25,fill=donor",
    "occlude:mask=saliency,p=0.3,mode=coin,batch=16",
    "mixup:alpha=1",
    "cutmix:alpha=1",
    "fmix:alpha=1,decay=3",
    "rm:k=8,decay=3,alpha=1",
    "gaussian:lo=0.05,hi=0.2",
];

fn main() -> Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    let blobs = BlobConfig { per_class: 20, ..BlobConfig::default() };
    let data = blobs.generate(Split::Test, 1)?;
    let donor = blobs.generate(Split::Train, 2)?;
    let mut rng = derive_stream(0, "distortions-example", 0);
    let model = TinyModel::init(Arch::Linear, (1, 16, 16), blobs.classes, &mut rng)?;
    let ctx = DistortContext { donor: Some(&donor), saliency: Some(&model), workers: None };

    for s in SPECS {
        let spec: DistortionSpec = s.parse()?;
        let d = distort_dataset(&data, &spec, 7, ctx)?;
        let fr: Vec<f64> = d.realized_fractions().iter().flatten().copied().collect();
        let lam: Vec<f64> = d.provenance.lambdas.iter().flatten().copied().collect();
        let mean = |v: &[f64]| match v.len() {
            0 => "-".to_string(),
            n => format!("{:.3}", v.iter().sum::<f64>() / n as f64),
        };
        let changed = d.dataset.items().iter().zip(data.items()).filter(|(a, b)| a.image != b.image).count();
        println!(
            "{:<80} changed {changed:>2}/{}  mean fraction {:>5}  mean lambda {:>5}",
            spec.to_string(),
            data.len(),
            mean(&fr),
            mean(&lam)
        );
        if let Some(dir) = &out {
            d.save(dir.join(spec.to_string().replace([':', ',', '='], "_")))?;
        }
    }
    Ok(())
}
