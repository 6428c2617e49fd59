//! Trains a tiny model on blob images and traces its iOcclusion curve under
//! Fourier masks. Writes the curve as CSV and SVG.
//!
//!     cargo run --release --example iocc_curve [OUT_DIR]

use occkit::metrics::{i_occlusion_curve, CurveConfig, OcclusionSource};
use occkit::modelio::{train_tiny, TrainConfig};
use occkit::report::{curve_svg, write_curve_csv};
use occkit::synth::BlobConfig;
use occkit::{Result, Split};

fn main() -> Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "iocc_out".into()));
    let blobs = BlobConfig { per_class: 15, noise: 0.7, ..BlobConfig::default() };
    let train = blobs.generate(Split::Train, 1)?;
    let test = blobs.generate(Split::Test, 2)?;
    let model = train_tiny(&train, &TrainConfig::default().with_epochs(60))?;

    let cfg = CurveConfig::new(vec![0.1, 0.3, 0.5, 0.7, 0.9], 5);
    let curve = i_occlusion_curve(&model, &OcclusionSource::fourier(), &train, &test, &cfg)?;
    println!("clean: train {:.3}, test {:.3}", curve.acc_train, curve.acc_test);
    for pt in &curve.points {
        println!("p={:.1}  train {:.3}  test {:.3}  iOcclusion {:.3}", pt.p, pt.acc_train_p, pt.acc_test_p, pt.i_occlusion);
    }
    std::fs::create_dir_all(&out).map_err(|e| occkit::Error::io(&out, e))?;
    write_curve_csv(out.join("curve.csv"), &curve)?;
    let svg = out.join("curve.svg");
    std::fs::write(&svg, curve_svg(&curve, "iOcclusion, Fourier masks")).map_err(|e| occkit::Error::io(&svg, e))?;
    println!("wrote {}", out.display());
    Ok(())
}
