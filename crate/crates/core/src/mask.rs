//! Binary mask samplers: rectangles, grid tiles, low-frequency Fourier masks,
//! saliency thresholds and fixed random-mask banks.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_stream, RngStream};
use crate::tensor::RawTensor;

/// Default spectral decay for Fourier-sampled masks.
pub const DEFAULT_DECAY: f64 = 3.0;

/// Number of pixels covered by a fraction `p` of `n` pixels: `⌈p·n⌉`.
///
/// Products that land within 1e-9 of an integer are snapped first, so
/// `0.3 * 100` gives 30 rather than 31.
pub fn count_for_fraction(p: f64, n: usize) -> usize {
    let x = p * n as f64;
    let r = x.round();
    let k = if (x - r).abs() <= 1e-9 * (n.max(1) as f64) {
        r
    } else {
        x.ceil()
    };
    (k.max(0.0) as usize).min(n)
}

fn check_fraction(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::param(format!("{name} = {p} is outside [0, 1]")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
    covered: usize,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape(format!(
                "{height}x{width} mask needs {} bits, got {}",
                height * width,
                bits.len()
            )));
        }
        let covered = bits.iter().filter(|&&b| b).count();
        Ok(BinaryMask {
            height,
            width,
            bits,
            covered,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            bits: vec![false; height * width],
            covered: 0,
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            bits: vec![true; height * width],
            covered: height * width,
        }
    }

    fn from_indices(height: usize, width: usize, idx: impl IntoIterator<Item = usize>) -> Self {
        let mut m = Self::empty(height, width);
        for i in idx {
            if !m.bits[i] {
                m.bits[i] = true;
                m.covered += 1;
            }
        }
        m
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
    pub fn covered(&self) -> usize {
        self.covered
    }
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }
    pub fn area(&self) -> usize {
        self.height * self.width
    }
    pub fn fraction(&self) -> f64 {
        if self.area() == 0 {
            0.0
        } else {
            self.covered as f64 / self.area() as f64
        }
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.len() == other.bits.len()
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Number of 4-connected components of covered pixels.
    pub fn component_count(&self) -> usize {
        let (h, w) = (self.height, self.width);
        let mut seen = vec![false; h * w];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..h * w {
            if !self.bits[start] || seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let (y, x) = (i / w, i % w);
                let mut visit = |j: usize| {
                    if self.bits[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if y > 0 {
                    visit(i - w);
                }
                if y + 1 < h {
                    visit(i + w);
                }
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < w {
                    visit(i + 1);
                }
            }
        }
        count
    }

    /// `TEN1` rank-2 tensor with values in {0, 1}.
    pub fn to_raw(&self) -> RawTensor {
        RawTensor {
            dims: vec![self.height, self.width],
            data: self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn from_raw(raw: &RawTensor) -> Result<Self> {
        let (h, w) = match raw.dims.as_slice() {
            &[h, w] | &[1, h, w] => (h, w),
            d => return Err(Error::shape(format!("mask tensors have shape HxW, got {d:?}"))),
        };
        let bits = raw
            .data
            .iter()
            .map(|&v| match v {
                v if v == 0.0 => Ok(false),
                v if v == 1.0 => Ok(true),
                v => Err(Error::param(format!("mask value {v} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(h, w, bits)
    }
}

/// How a rectangle is positioned relative to the image bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Rectangle fully inside the image; covered area is exact.
    Inside,
    /// Center uniform over the image, clipped at the bounds.
    Clip,
    /// As `Clip`, but placements whose realized fraction falls below the
    /// lower end of the size range are rejected and redrawn (up to 64 tries,
    /// then the rectangle is placed inside).
    ClipResampled,
}

impl std::str::FromStr for Placement {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inside" => Ok(Placement::Inside),
            "clip" => Ok(Placement::Clip),
            "clip_resampled" | "resample" => Ok(Placement::ClipResampled),
            _ => Err(Error::param(format!("unknown placement {s:?} (inside|clip|clip_resampled)"))),
        }
    }
}

impl std::fmt::Display for Placement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Placement::Inside => "inside",
            Placement::Clip => "clip",
            Placement::ClipResampled => "clip_resampled",
        })
    }
}

/// Rectangle dimensions for an area fraction `a`: `(round(h·√a), round(w·√a))`.
pub fn rect_dims(h: usize, w: usize, a: f64) -> (usize, usize) {
    let s = a.clamp(0.0, 1.0).sqrt();
    let rh = ((h as f64 * s).round() as usize).min(h);
    let rw = ((w as f64 * s).round() as usize).min(w);
    (rh, rw)
}

/// Rectangle of size `rh×rw` centred on pixel `(cy, cx)`, clipped to the image.
/// The top-left corner is `(cy - rh/2, cx - rw/2)` with integer division.
pub fn rect_mask_centered(h: usize, w: usize, rh: usize, rw: usize, cy: usize, cx: usize) -> BinaryMask {
    let y0 = cy as isize - (rh / 2) as isize;
    let x0 = cx as isize - (rw / 2) as isize;
    let ys = y0.clamp(0, h as isize) as usize..(y0 + rh as isize).clamp(0, h as isize) as usize;
    let xs = x0.clamp(0, w as isize) as usize..(x0 + rw as isize).clamp(0, w as isize) as usize;
    rect_from_ranges(h, w, ys, xs)
}

fn rect_from_ranges(
    h: usize,
    w: usize,
    ys: std::ops::Range<usize>,
    xs: std::ops::Range<usize>,
) -> BinaryMask {
    BinaryMask::from_indices(
        h,
        w,
        ys.flat_map(|y| xs.clone().map(move |x| y * w + x)),
    )
}

/// Rectangle with a fixed area fraction `a`.
pub fn rect_mask_with_area(
    h: usize,
    w: usize,
    a: f64,
    placement: Placement,
    rng: &mut RngStream,
) -> Result<BinaryMask> {
    if h == 0 || w == 0 {
        return Err(Error::param("mask dimensions must be positive"));
    }
    check_fraction("area fraction", a)?;
    let (rh, rw) = rect_dims(h, w, a);
    Ok(match placement {
        Placement::Inside => {
            let top = rng.below(h - rh + 1);
            let left = rng.below(w - rw + 1);
            rect_from_ranges(h, w, top..top + rh, left..left + rw)
        }
        Placement::Clip | Placement::ClipResampled => {
            let cy = rng.below(h);
            let cx = rng.below(w);
            rect_mask_centered(h, w, rh, rw, cy, cx)
        }
    })
}

/// Rectangle whose target area fraction is drawn from `Uniform[frac_lo, frac_hi]`.
pub fn sample_rect_mask(
    h: usize,
    w: usize,
    frac_lo: f64,
    frac_hi: f64,
    placement: Placement,
    rng: &mut RngStream,
) -> Result<BinaryMask> {
    if h == 0 || w == 0 {
        return Err(Error::param("mask dimensions must be positive"));
    }
    check_fraction("frac_lo", frac_lo)?;
    check_fraction("frac_hi", frac_hi)?;
    if frac_lo > frac_hi {
        return Err(Error::param(format!("frac_lo {frac_lo} > frac_hi {frac_hi}")));
    }
    if placement != Placement::ClipResampled {
        let a = rng.uniform_in(frac_lo, frac_hi);
        return rect_mask_with_area(h, w, a, placement, rng);
    }
    let floor = count_for_fraction(frac_lo, h * w);
    for _ in 0..64 {
        let a = rng.uniform_in(frac_lo, frac_hi);
        let m = rect_mask_with_area(h, w, a, Placement::Clip, rng)?;
        if m.covered() >= floor {
            return Ok(m);
        }
    }
    let a = rng.uniform_in(frac_lo, frac_hi);
    rect_mask_with_area(h, w, a, Placement::Inside, rng)
}

/// Signed integer frequency of bin `u` for an `n`-point DFT.
fn signed_freq(u: usize, n: usize) -> isize {
    if u < n.div_ceil(2) {
        u as isize
    } else {
        u as isize - n as isize
    }
}

/// Radial frequency (cycles per sample) of DFT bin `(u, v)`.
pub fn radial_frequency(u: usize, v: usize, h: usize, w: usize) -> f64 {
    let fu = signed_freq(u, h) as f64 / h as f64;
    let fv = signed_freq(v, w) as f64 / w as f64;
    (fu * fu + fv * fv).sqrt()
}

/// Smallest nonzero radial frequency of an `h×w` grid (1 for a 1×1 grid).
pub fn min_nonzero_frequency(h: usize, w: usize) -> f64 {
    [h, w]
        .into_iter()
        .filter(|&n| n > 1)
        .map(|n| 1.0 / n as f64)
        .fold(f64::INFINITY, f64::min)
        .min(1.0)
}

/// Random Hermitian spectrum with `1/f^decay` attenuation, row-major `h×w`.
pub fn fourier_spectrum(h: usize, w: usize, decay: f64, rng: &mut RngStream) -> Vec<Complex<f64>> {
    let raw: Vec<Complex<f64>> = (0..h * w)
        .map(|_| Complex::new(rng.normal(), rng.normal()))
        .collect();
    let f_min = min_nonzero_frequency(h, w);
    let mut spec = vec![Complex::new(0.0, 0.0); h * w];
    for u in 0..h {
        for v in 0..w {
            let mirror = ((h - u) % h) * w + (w - v) % w;
            let sym = (raw[u * w + v] + raw[mirror].conj()) * 0.5;
            let f = radial_frequency(u, v, h, w).max(f_min);
            spec[u * w + v] = sym / f.powf(decay);
        }
    }
    spec
}

fn fft2(buf: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    row.process(buf);
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = buf[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            buf[y * w + x] = column[y];
        }
    }
}

/// Forward 2-D DFT of a real row-major field (unnormalized).
pub fn dft2(field: &[f64], h: usize, w: usize) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = field.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft2(&mut buf, h, w, false);
    buf
}

/// Low-frequency grayscale field: inverse DFT of [`fourier_spectrum`], real part.
pub fn fourier_field(h: usize, w: usize, decay: f64, rng: &mut RngStream) -> Vec<f64> {
    let mut spec = fourier_spectrum(h, w, decay, rng);
    fft2(&mut spec, h, w, true);
    spec.into_iter().map(|c| c.re).collect()
}

/// Indices of the `k` most (or least) valued entries, ties by lower index.
fn select_extreme(values: &[f64], k: usize, highest: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let ord = values[a].total_cmp(&values[b]);
        let ord = if highest { ord.reverse() } else { ord };
        ord.then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// Mask of the `⌈p·h·w⌉` largest pixels of a low-frequency random field.
pub fn sample_fourier_mask(
    h: usize,
    w: usize,
    p: f64,
    decay: f64,
    rng: &mut RngStream,
) -> Result<BinaryMask> {
    check_fraction("p", p)?;
    if decay < 0.0 || !decay.is_finite() {
        return Err(Error::param(format!("decay {decay} must be finite and >= 0")));
    }
    if h == 0 || w == 0 {
        return Err(Error::param("mask dimensions must be positive"));
    }
    let field = fourier_field(h, w, decay, rng);
    let k = count_for_fraction(p, h * w);
    Ok(BinaryMask::from_indices(h, w, select_extreme(&field, k, true)))
}

/// Covers `round(tile_frac·g²)` distinct tiles of a `g×g` grid.
pub fn grid_tile_mask(h: usize, w: usize, g: usize, tile_frac: f64, rng: &mut RngStream) -> Result<BinaryMask> {
    if g == 0 || h % g != 0 || w % g != 0 {
        return Err(Error::param(format!(
            "grid size {g} must divide image height {h} and width {w}"
        )));
    }
    check_fraction("tile_frac", tile_frac)?;
    let tiles = g * g;
    let n = ((tile_frac * tiles as f64).round() as usize).min(tiles);
    let (th, tw) = (h / g, w / g);
    let chosen = rng.sample_indices(tiles, n);
    Ok(BinaryMask::from_indices(
        h,
        w,
        chosen.into_iter().flat_map(|t| {
            let (ty, tx) = (t / g, t % g);
            (ty * th..(ty + 1) * th).flat_map(move |y| (tx * tw..(tx + 1) * tw).map(move |x| y * w + x))
        }),
    ))
}

/// A per-pixel saliency raster normalized to max 1 (or identically zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    /// Validates an already-normalized map.
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        Self::check(height, width, &values)?;
        let max = values.iter().cloned().fold(0.0, f64::max);
        if values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::param("saliency values must lie in [0, 1]"));
        }
        if max != 0.0 && (max - 1.0).abs() > 1e-6 {
            return Err(Error::param(format!("saliency map max is {max}, expected 1")));
        }
        Ok(SaliencyMap {
            height,
            width,
            values,
        })
    }

    /// Divides non-negative raw scores by their maximum.
    pub fn normalized(height: usize, width: usize, raw: Vec<f64>) -> Result<Self> {
        Self::check(height, width, &raw)?;
        if raw.iter().any(|&v| v < 0.0) {
            return Err(Error::param("raw saliency must be non-negative"));
        }
        let max = raw.iter().cloned().fold(0.0, f64::max);
        let values = if max > 0.0 {
            raw.into_iter().map(|v| v / max).collect()
        } else {
            raw
        };
        Ok(SaliencyMap {
            height,
            width,
            values,
        })
    }

    fn check(height: usize, width: usize, values: &[f64]) -> Result<()> {
        if values.len() != height * width {
            return Err(Error::shape(format!(
                "{height}x{width} saliency map needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("saliency values must be finite"));
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SalientMode {
    Most,
    Least,
}

impl std::fmt::Display for SalientMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SalientMode::Most => "most",
            SalientMode::Least => "least",
        })
    }
}

/// Covers the `⌈p·h·w⌉` most or least salient pixels; ties go to the lower row-major index.
pub fn saliency_mask(s: &SaliencyMap, p: f64, mode: SalientMode) -> Result<BinaryMask> {
    check_fraction("p", p)?;
    let k = count_for_fraction(p, s.height * s.width);
    Ok(BinaryMask::from_indices(
        s.height,
        s.width,
        select_extreme(&s.values, k, mode == SalientMode::Most),
    ))
}

/// Distribution of the covered fraction for masks in a bank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FractionSampler {
    Fixed { p: f64 },
    Uniform { lo: f64, hi: f64 },
    /// `p = 1 - λ` with `λ ~ Beta(α, α)`.
    Beta { alpha: f64 },
}

impl FractionSampler {
    pub fn sample(&self, rng: &mut RngStream) -> Result<f64> {
        match *self {
            FractionSampler::Fixed { p } => {
                check_fraction("p", p)?;
                Ok(p)
            }
            FractionSampler::Uniform { lo, hi } => {
                check_fraction("lo", lo)?;
                check_fraction("hi", hi)?;
                Ok(rng.uniform_in(lo, hi))
            }
            FractionSampler::Beta { alpha } => Ok(1.0 - rng.beta(alpha, alpha)?),
        }
    }
}

/// A fixed set of Fourier masks sampled once, from which one is drawn per batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskBank {
    masks: Vec<BinaryMask>,
    creation_seed: u64,
}

impl MaskBank {
    pub fn masks(&self) -> &[BinaryMask] {
        &self.masks
    }
    pub fn creation_seed(&self) -> u64 {
        self.creation_seed
    }
    pub fn len(&self) -> usize {
        self.masks.len()
    }
    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Index of a uniformly chosen bank member.
    pub fn pick_index(&self, rng: &mut RngStream) -> usize {
        rng.below(self.masks.len())
    }

    pub fn pick(&self, rng: &mut RngStream) -> &BinaryMask {
        &self.masks[self.pick_index(rng)]
    }
}

/// Builds a bank of `k` Fourier masks; mask `i` uses stream `(seed, "rm_bank", i)`.
pub fn make_rm_bank(
    h: usize,
    w: usize,
    k: usize,
    fractions: FractionSampler,
    decay: f64,
    seed: u64,
) -> Result<MaskBank> {
    if k == 0 {
        return Err(Error::param("mask bank size k must be at least 1"));
    }
    let masks = (0..k)
        .map(|i| {
            let mut rng = derive_stream(seed, "rm_bank", i as u64);
            let p = fractions.sample(&mut rng)?;
            sample_fourier_mask(h, w, p, decay, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MaskBank {
        masks,
        creation_seed: seed,
    })
}

/// Uniformly picks a bank member for batch `batch_index` from the caller's stream.
pub fn pick_rm<'a>(bank: &'a MaskBank, _batch_index: usize, rng: &mut RngStream) -> &'a BinaryMask {
    bank.pick(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rng(i: u64) -> RngStream {
        derive_stream(11, "mask-test", i)
    }

    #[test]
    fn count_for_fraction_snaps_float_noise() {
        assert_eq!(count_for_fraction(0.3, 100), 30);
        assert_eq!(count_for_fraction(0.7, 10), 7);
        assert_eq!(count_for_fraction(0.01, 10), 1);
        assert_eq!(count_for_fraction(0.0, 10), 0);
        assert_eq!(count_for_fraction(1.0, 10), 10);
        assert_eq!(count_for_fraction(0.5, 5), 3);
    }

    #[test]
    fn rect_full_and_quarter() {
        let m = rect_mask_with_area(4, 4, 1.0, Placement::Inside, &mut rng(0)).unwrap();
        assert_eq!(m.covered(), 16);
        for i in 0..50 {
            let m = rect_mask_with_area(4, 4, 0.25, Placement::Inside, &mut rng(i)).unwrap();
            assert_eq!(m.covered(), 4);
            assert_eq!(m.component_count(), 1);
            // a 2x2 block: the bounding box of covered pixels is 2x2
            let ys: Vec<_> = (0..16).filter(|&j| m.bits()[j]).map(|j| j / 4).collect();
            let xs: Vec<_> = (0..16).filter(|&j| m.bits()[j]).map(|j| j % 4).collect();
            assert_eq!(ys.iter().max().unwrap() - ys.iter().min().unwrap(), 1);
            assert_eq!(xs.iter().max().unwrap() - xs.iter().min().unwrap(), 1);
        }
    }

    #[test]
    fn rect_rejects_zero_dims_and_bad_range() {
        assert!(sample_rect_mask(0, 4, 0.1, 0.2, Placement::Clip, &mut rng(0)).is_err());
        assert!(sample_rect_mask(4, 4, 0.5, 0.2, Placement::Clip, &mut rng(0)).is_err());
    }

    #[test]
    fn centered_rect_mid_image_covers_everything() {
        let m = rect_mask_centered(32, 32, 32, 32, 16, 16);
        assert_eq!(m.covered(), 1024);
        let m = rect_mask_centered(8, 8, 4, 4, 0, 0);
        assert_eq!(m.covered(), 4);
    }

    #[test]
    fn clip_resampled_respects_lower_bound() {
        for i in 0..200 {
            let m = sample_rect_mask(16, 16, 0.3, 0.5, Placement::ClipResampled, &mut rng(i)).unwrap();
            assert!(m.covered() >= count_for_fraction(0.3, 256));
        }
    }

    #[test]
    fn fourier_extremes() {
        assert_eq!(sample_fourier_mask(8, 8, 0.0, 3.0, &mut rng(0)).unwrap().covered(), 0);
        assert_eq!(sample_fourier_mask(8, 8, 1.0, 3.0, &mut rng(0)).unwrap().covered(), 64);
        assert!(sample_fourier_mask(8, 8, 1.5, 3.0, &mut rng(0)).is_err());
    }

    #[test]
    fn fourier_field_is_real() {
        // Hermitian symmetry leaves a negligible imaginary part after the inverse transform
        let mut r = rng(4);
        let mut spec = fourier_spectrum(6, 9, 2.0, &mut r);
        fft2(&mut spec, 6, 9, true);
        let max_re = spec.iter().map(|c| c.re.abs()).fold(0.0, f64::max);
        let max_im = spec.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
        assert!(max_im < 1e-9 * max_re.max(1.0), "{max_im} vs {max_re}");
    }

    #[test]
    fn radial_frequency_layout() {
        assert_eq!(radial_frequency(0, 0, 4, 4), 0.0);
        assert_eq!(radial_frequency(1, 0, 4, 4), 0.25);
        assert_eq!(radial_frequency(3, 0, 4, 4), 0.25);
        assert_eq!(radial_frequency(2, 0, 4, 4), 0.5);
        assert_eq!(min_nonzero_frequency(32, 16), 1.0 / 32.0);
        assert_eq!(min_nonzero_frequency(1, 1), 1.0);
    }

    #[test]
    fn grid_examples() {
        let m = grid_tile_mask(4, 4, 2, 0.5, &mut rng(0)).unwrap();
        assert_eq!(m.covered(), 8);
        let m = grid_tile_mask(4, 4, 2, 1.0, &mut rng(0)).unwrap();
        assert_eq!(m.covered(), 16);
        let err = grid_tile_mask(6, 4, 4, 0.5, &mut rng(0)).unwrap_err();
        assert!(err.to_string().contains("must divide"));
    }

    #[test]
    fn grid_masks_are_whole_tiles() {
        for i in 0..1000 {
            let m = grid_tile_mask(8, 8, 4, 0.25, &mut rng(i)).unwrap();
            assert_eq!(m.covered(), 16);
            for ty in 0..4 {
                for tx in 0..4 {
                    let vals: Vec<bool> = (0..4).map(|j| m.get(ty * 2 + j / 2, tx * 2 + j % 2)).collect();
                    assert!(vals.iter().all(|&v| v == vals[0]));
                }
            }
        }
    }

    #[test]
    fn saliency_examples() {
        let s = SaliencyMap::normalized(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(saliency_mask(&s, 0.0, SalientMode::Most).unwrap().covered(), 0);
        let m = saliency_mask(&s, 0.25, SalientMode::Most).unwrap();
        assert_eq!(m.bits(), &[false, false, false, true]);
        let m = saliency_mask(&s, 0.25, SalientMode::Least).unwrap();
        assert_eq!(m.bits(), &[true, false, false, false]);

        let u = SaliencyMap::new(3, 3, vec![1.0; 9]).unwrap();
        for mode in [SalientMode::Most, SalientMode::Least] {
            let m = saliency_mask(&u, 0.5, mode).unwrap();
            let expected: Vec<bool> = (0..9).map(|i| i < 5).collect();
            assert_eq!(m.bits(), expected.as_slice());
        }
    }

    #[test]
    fn saliency_map_validation() {
        assert!(SaliencyMap::new(1, 2, vec![0.5, 0.5]).is_err());
        assert!(SaliencyMap::new(1, 2, vec![0.0, 0.0]).is_ok());
        assert!(SaliencyMap::normalized(1, 2, vec![f64::NAN, 1.0]).is_err());
        assert_eq!(SaliencyMap::normalized(1, 2, vec![0.0, 0.0]).unwrap().values(), &[0.0, 0.0]);
    }

    #[test]
    fn rm_bank_examples() {
        assert!(make_rm_bank(8, 8, 0, FractionSampler::Fixed { p: 0.3 }, 3.0, 1).is_err());
        let one = make_rm_bank(8, 8, 1, FractionSampler::Fixed { p: 0.3 }, 3.0, 1).unwrap();
        let mut r = rng(0);
        for b in 0..20 {
            assert_eq!(pick_rm(&one, b, &mut r), &one.masks()[0]);
        }
        let a = make_rm_bank(8, 8, 3, FractionSampler::Beta { alpha: 1.0 }, 3.0, 99).unwrap();
        let b = make_rm_bank(8, 8, 3, FractionSampler::Beta { alpha: 1.0 }, 3.0, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rm_pick_is_uniform() {
        // 3000 picks, p = 1/3: sd = sqrt(3000 * 1/3 * 2/3) ~ 25.8, so ±150 is > 5 sigma
        let bank = make_rm_bank(8, 8, 3, FractionSampler::Fixed { p: 0.4 }, 3.0, 5).unwrap();
        let mut counts = [0usize; 3];
        for b in 0..3000u64 {
            counts[bank.pick_index(&mut derive_stream(5, "batch", b))] += 1;
        }
        for c in counts {
            assert!((850..=1150).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn mask_raw_round_trip() {
        let m = grid_tile_mask(4, 8, 2, 0.5, &mut rng(3)).unwrap();
        let back = BinaryMask::from_raw(&RawTensor::decode(&m.to_raw().encode().unwrap()).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn saliency_masks_are_nested(seed in any::<u64>(), p1 in 0.0f64..=1.0, p2 in 0.0f64..=1.0, most in any::<bool>()) {
            let mut r = derive_stream(seed, "s", 0);
            let vals: Vec<f64> = (0..36).map(|_| (r.below(5) as f64) / 4.0).collect();
            let s = SaliencyMap::normalized(6, 6, vals).unwrap();
            let mode = if most { SalientMode::Most } else { SalientMode::Least };
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let a = saliency_mask(&s, lo, mode).unwrap();
            let b = saliency_mask(&s, hi, mode).unwrap();
            prop_assert!(a.is_subset_of(&b));
        }

        #[test]
        fn fourier_exact_count(seed in any::<u64>(), h in 1usize..20, w in 1usize..20, p in 0.0f64..=1.0, decay in 0.0f64..4.0) {
            let m = sample_fourier_mask(h, w, p, decay, &mut derive_stream(seed, "f", 0)).unwrap();
            prop_assert_eq!(m.covered(), count_for_fraction(p, h * w));
        }
    }
}
