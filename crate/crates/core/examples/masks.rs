//! Draws one mask of each kind as ASCII art and saves them as `TEN1` tensors.
//!
//!     cargo run --example masks [OUT_DIR]

use occkit::mask::{
    grid_tile_mask, sample_fourier_mask, sample_rect_mask, saliency_mask, BinaryMask, Placement, SaliencyMap,
    SalientMode, DEFAULT_DECAY,
};
use occkit::{derive_stream, Result};

fn show(name: &str, m: &BinaryMask) {
    println!("{name}: {} of {} pixels ({:.3}), {} component(s)", m.covered(), m.area(), m.fraction(), m.component_count());
    for y in 0..m.height() {
        let row: String = (0..m.width()).map(|x| if m.get(y, x) { '#' } else { '.' }).collect();
        println!("  {row}");
    }
}

fn main() -> Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    let (h, w) = (16, 24);
    let mut rng = derive_stream(3, "masks-example", 0);

    let rect = sample_rect_mask(h, w, 0.2, 0.4, Placement::Inside, &mut rng)?;
    let fourier = sample_fourier_mask(h, w, 0.3, DEFAULT_DECAY, &mut rng)?;
    let grid = grid_tile_mask(h, w, 4, 0.5, &mut rng)?;
    // A radial ramp stands in for a model's saliency.
    let ramp: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64 - 7.5, (i % w) as f64 - 11.5);
            1.0 / (1.0 + (y * y + x * x).sqrt())
        })
        .collect();
    let salient = saliency_mask(&SaliencyMap::normalized(h, w, ramp)?, 0.25, SalientMode::Most)?;

    let all = [("rect", rect), ("fourier", fourier), ("grid", grid), ("saliency", salient)];
    for (name, m) in &all {
        show(name, m);
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir).map_err(|e| occkit::Error::io(&dir, e))?;
        for (name, m) in &all {
            m.to_raw().write(dir.join(format!("{name}.ten")))?;
        }
        println!("wrote {} masks to {}", all.len(), dir.display());
    }
    Ok(())
}
