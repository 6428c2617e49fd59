//! Image distortions and dataset-level orchestration.
//!
//! Every random decision made by [`distort_dataset`] comes from a stream keyed
//! by the item or batch it belongs to: `(seed, "img", i)` per image,
//! `(seed, "batch", b)` for batch-level choices and `(seed, "donor", i)` for
//! donor selection. Output is therefore identical for any worker count.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::mask::{
    count_for_fraction, grid_tile_mask, make_rm_bank, rect_mask_with_area, sample_fourier_mask,
    sample_rect_mask, saliency_mask, BinaryMask, FractionSampler, MaskBank, Placement, SaliencyMap,
    SalientMode, DEFAULT_DECAY,
};
use crate::modelio::{SaliencyProvider, SaliencyTarget};
use crate::rng::{derive_stream, RngStream, SeededRng};
use crate::tensor::ImageTensor;

/// Default batch size for batch-level decisions (saliency coin, RM pick).
pub const DEFAULT_BATCH_SIZE: usize = 128;

/// Splits the image into a `g×g` grid and permutes the tiles uniformly at random.
pub fn patch_shuffle(img: &ImageTensor, g: usize, rng: &mut RngStream) -> Result<ImageTensor> {
    check_grid(img, g)?;
    let perm = rng.permutation(g * g);
    patch_shuffle_with_permutation(img, g, &perm)
}

/// Tile `t` of the output (row-major tile order) is tile `perm[t]` of the input.
pub fn patch_shuffle_with_permutation(img: &ImageTensor, g: usize, perm: &[usize]) -> Result<ImageTensor> {
    check_grid(img, g)?;
    if perm.len() != g * g {
        return Err(Error::param(format!("permutation of length {} for {} tiles", perm.len(), g * g)));
    }
    let (c, h, w) = img.shape();
    let (th, tw) = (h / g, w / g);
    ImageTensor::from_fn(c, h, w, |ch, y, x| {
        let src = perm[(y / th) * g + x / tw];
        let (sy, sx) = ((src / g) * th + y % th, (src % g) * tw + x % tw);
        img.get(ch, sy, sx)
    })
}

fn check_grid(img: &ImageTensor, g: usize) -> Result<()> {
    let (_, h, w) = img.shape();
    if g == 0 || h % g != 0 || w % g != 0 {
        return Err(Error::param(format!(
            "grid size {g} must divide image height {h} and width {w}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fill {
    Black,
    Donor,
    Noise,
}

impl FromStr for Fill {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "black" => Ok(Fill::Black),
            "donor" => Ok(Fill::Donor),
            "noise" => Ok(Fill::Noise),
            _ => Err(Error::param(format!("unknown fill {s:?} (black|donor|noise)"))),
        }
    }
}

impl fmt::Display for Fill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fill::Black => "black",
            Fill::Donor => "donor",
            Fill::Noise => "noise",
        })
    }
}

fn check_mask(img: &ImageTensor, mask: &BinaryMask) -> Result<()> {
    if (img.height(), img.width()) != (mask.height(), mask.width()) {
        return Err(Error::shape(format!(
            "mask {}x{} vs image {}x{}",
            mask.height(),
            mask.width(),
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

/// Replaces covered pixels (in every channel) with black, donor pixels or uniform noise.
pub fn occlude(
    img: &ImageTensor,
    mask: &BinaryMask,
    fill: Fill,
    donor: Option<&ImageTensor>,
    rng: Option<&mut RngStream>,
) -> Result<ImageTensor> {
    check_mask(img, mask)?;
    match fill {
        Fill::Donor => {
            let donor = donor.ok_or_else(|| Error::param("fill=donor requires a donor image"))?;
            fmix_blend(img, donor, mask)
        }
        Fill::Black => {
            let mut out = img.clone();
            let hw = img.pixels_per_channel();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                if mask.bits()[i % hw] {
                    *v = 0.0;
                }
            }
            Ok(out)
        }
        Fill::Noise => {
            let rng = rng.ok_or_else(|| Error::param("fill=noise requires a random stream"))?;
            let mut out = img.clone();
            let hw = img.pixels_per_channel();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                if mask.bits()[i % hw] {
                    *v = rng.uniform() as f32;
                }
            }
            Ok(out)
        }
    }
}

/// `λ·a + (1−λ)·b`.
pub fn mixup_blend(a: &ImageTensor, b: &ImageTensor, lambda: f64) -> Result<ImageTensor> {
    a.check_same_shape(b)?;
    check_lambda(lambda)?;
    let l = lambda as f32;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| l * x + (1.0 - l) * y)
        .collect();
    let (c, h, w) = a.shape();
    ImageTensor::new(c, h, w, data)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::param(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(())
}

/// Clipped rectangle of target area `(1−λ)·H·W`, center uniform over the image.
pub fn cutmix_mask(h: usize, w: usize, lambda: f64, rng: &mut RngStream) -> Result<BinaryMask> {
    check_lambda(lambda)?;
    rect_mask_with_area(h, w, 1.0 - lambda, Placement::Clip, rng)
}

/// Pastes a clipped rectangle of `b` into `a`; returns the image and the pasted fraction.
pub fn cutmix_blend(
    a: &ImageTensor,
    b: &ImageTensor,
    lambda: f64,
    rng: &mut RngStream,
) -> Result<(ImageTensor, f64)> {
    a.check_same_shape(b)?;
    let mask = cutmix_mask(a.height(), a.width(), lambda, rng)?;
    Ok((fmix_blend(a, b, &mask)?, mask.fraction()))
}

/// Pixels under the mask come from `b`, the rest from `a`.
pub fn fmix_blend(a: &ImageTensor, b: &ImageTensor, mask: &BinaryMask) -> Result<ImageTensor> {
    a.check_same_shape(b)?;
    check_mask(a, mask)?;
    let hw = a.pixels_per_channel();
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .enumerate()
        .map(|(i, (&x, &y))| if mask.bits()[i % hw] { y } else { x })
        .collect();
    let (c, h, w) = a.shape();
    ImageTensor::new(c, h, w, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LambdaMode {
    /// `λ ~ Beta(α, α)`.
    Symmetric,
    /// `λ ~ Beta(α + h, α)`: the label-retaining image dominates on average.
    Reformulated { h: f64 },
}

pub fn sample_lambda(alpha: f64, mode: LambdaMode, rng: &mut RngStream) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::param(format!("alpha {alpha} must be > 0")));
    }
    match mode {
        LambdaMode::Symmetric => rng.beta(alpha, alpha),
        LambdaMode::Reformulated { h } => {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::param(format!("imbalance h {h} must be > 0")));
            }
            rng.beta(alpha + h, alpha)
        }
    }
}

/// Adds `N(0, σ²)` noise with `σ ~ Uniform[σ_lo, σ_hi]`. No clamping.
pub fn gaussian_noise(img: &ImageTensor, sigma_lo: f64, sigma_hi: f64, rng: &mut RngStream) -> Result<ImageTensor> {
    if !(0.0 <= sigma_lo && sigma_lo <= sigma_hi) {
        return Err(Error::param(format!("need 0 <= sigma_lo <= sigma_hi, got {sigma_lo}, {sigma_hi}")));
    }
    let sigma = rng.uniform_in(sigma_lo, sigma_hi);
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let mut out = img.clone();
    for v in out.data_mut() {
        *v += (sigma * rng.normal()) as f32;
    }
    let (c, h, w) = out.shape();
    ImageTensor::new(c, h, w, out.into_data())
}

/// Which pixels a saliency-guided occluder removes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaliencyChoice {
    Most,
    Least,
    /// Fair coin per batch between most and least salient.
    Coin,
}

impl FromStr for SaliencyChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "most" => Ok(SaliencyChoice::Most),
            "least" => Ok(SaliencyChoice::Least),
            "coin" => Ok(SaliencyChoice::Coin),
            _ => Err(Error::param(format!("unknown saliency mode {s:?} (most|least|coin)"))),
        }
    }
}

impl fmt::Display for SaliencyChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SaliencyChoice::Most => "most",
            SaliencyChoice::Least => "least",
            SaliencyChoice::Coin => "coin",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mask", rename_all = "snake_case")]
pub enum MaskPolicy {
    Rect { lo: f64, hi: f64, placement: Placement },
    Fourier { p: f64, decay: f64 },
    Grid { g: usize, frac: f64 },
    Saliency { p: f64, mode: SaliencyChoice },
}

impl MaskPolicy {
    /// Exact covered fraction, for policies that guarantee one.
    pub fn exact_fraction(&self, h: usize, w: usize) -> Option<f64> {
        let hw = h * w;
        match *self {
            MaskPolicy::Fourier { p, .. } | MaskPolicy::Saliency { p, .. } => {
                Some(count_for_fraction(p, hw) as f64 / hw as f64)
            }
            MaskPolicy::Grid { g, frac } => {
                let tiles = g * g;
                Some(((frac * tiles as f64).round() as usize).min(tiles) as f64 / tiles as f64)
            }
            MaskPolicy::Rect { lo, hi, placement: Placement::Inside } if lo == hi => {
                let (rh, rw) = crate::mask::rect_dims(h, w, lo);
                Some((rh * rw) as f64 / hw as f64)
            }
            MaskPolicy::Rect { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistortionKind {
    PatchShuffle { g: usize },
    Occlude { policy: MaskPolicy, fill: Fill },
    Mixup { alpha: f64 },
    Cutmix { alpha: f64 },
    Fmix { alpha: f64, decay: f64 },
    /// Fixed bank of `k` Fourier masks (coverage `1−λ`, `λ ~ Beta(α, α)`), one picked per batch, donor fill.
    Rm { k: usize, alpha: f64, decay: f64 },
    Gaussian { sigma_lo: f64, sigma_hi: f64 },
}

/// A distortion plus the batch size used for batch-level decisions.
///
/// Parses from and prints to the `name:key=value,...` mini-grammar, e.g.
/// `patch_shuffle:g=4` or `occlude:mask=fourier,p=0.3,fill=black`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    pub batch_size: usize,
}

impl DistortionSpec {
    pub fn new(kind: DistortionKind) -> Self {
        DistortionSpec {
            kind,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn needs_donor(&self) -> bool {
        matches!(
            self.kind,
            DistortionKind::Occlude { fill: Fill::Donor, .. }
                | DistortionKind::Mixup { .. }
                | DistortionKind::Cutmix { .. }
                | DistortionKind::Fmix { .. }
                | DistortionKind::Rm { .. }
        )
    }

    pub fn needs_saliency(&self) -> bool {
        matches!(
            self.kind,
            DistortionKind::Occlude { policy: MaskPolicy::Saliency { .. }, .. }
        )
    }

    /// Checks sampler preconditions against an image shape.
    pub fn validate(&self, shape: (usize, usize, usize)) -> Result<()> {
        let (_, h, w) = shape;
        let frac = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::param(format!("{name} = {v} is outside [0, 1]")))
            }
        };
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(format!("{name} = {v} must be > 0")))
            }
        };
        let decay_ok = |v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(format!("decay = {v} must be >= 0")))
            }
        };
        let grid_ok = |g: usize| {
            if g == 0 || h % g != 0 || w % g != 0 {
                Err(Error::param(format!(
                    "grid size {g} must divide image height {h} and width {w}"
                )))
            } else {
                Ok(())
            }
        };
        if self.batch_size == 0 {
            return Err(Error::param("batch size must be positive"));
        }
        match self.kind {
            DistortionKind::PatchShuffle { g } => grid_ok(g),
            DistortionKind::Occlude { policy, .. } => match policy {
                MaskPolicy::Rect { lo, hi, .. } => {
                    frac("lo", lo)?;
                    frac("hi", hi)?;
                    if lo > hi {
                        return Err(Error::param(format!("lo {lo} > hi {hi}")));
                    }
                    Ok(())
                }
                MaskPolicy::Fourier { p, decay } => {
                    frac("p", p)?;
                    decay_ok(decay)
                }
                MaskPolicy::Grid { g, frac: f } => {
                    frac("frac", f)?;
                    grid_ok(g)
                }
                MaskPolicy::Saliency { p, .. } => frac("p", p),
            },
            DistortionKind::Mixup { alpha } | DistortionKind::Cutmix { alpha } => positive("alpha", alpha),
            DistortionKind::Fmix { alpha, decay } => {
                positive("alpha", alpha)?;
                decay_ok(decay)
            }
            DistortionKind::Rm { k, alpha, decay } => {
                if k == 0 {
                    return Err(Error::param("mask bank size k must be at least 1"));
                }
                positive("alpha", alpha)?;
                decay_ok(decay)
            }
            DistortionKind::Gaussian { sigma_lo, sigma_hi } => {
                if 0.0 <= sigma_lo && sigma_lo <= sigma_hi {
                    Ok(())
                } else {
                    Err(Error::param(format!(
                        "need 0 <= lo <= hi for gaussian, got {sigma_lo}, {sigma_hi}"
                    )))
                }
            }
        }
    }
}

pub(crate) struct SpecArgs {
    pub(crate) name: String,
    map: BTreeMap<String, String>,
}

impl SpecArgs {
    pub(crate) fn parse(s: &str) -> Result<Self> {
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut map = BTreeMap::new();
        for kv in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::param(format!("expected key=value, got {kv:?}")))?;
            if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::param(format!("duplicate key {k:?}")));
            }
        }
        Ok(SpecArgs {
            name: name.trim().to_string(),
            map,
        })
    }

    pub(crate) fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::param(format!("{}: bad value {v:?} for {key}", self.name))),
        }
    }

    pub(crate) fn req<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.take(key)?
            .ok_or_else(|| Error::param(format!("{}: missing required key {key}", self.name)))
    }

    pub(crate) fn or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub(crate) fn finish(self) -> Result<()> {
        match self.map.keys().next() {
            Some(k) => Err(Error::param(format!("{}: unknown key {k:?}", self.name))),
            None => Ok(()),
        }
    }
}

impl FromStr for DistortionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut a = SpecArgs::parse(s)?;
        let batch_size = a.or("batch", DEFAULT_BATCH_SIZE)?;
        let kind = match a.name.as_str() {
            "patch_shuffle" => DistortionKind::PatchShuffle { g: a.req("g")? },
            "occlude" => {
                let fill = a.or("fill", Fill::Black)?;
                let mask: String = a.req("mask")?;
                let policy = match mask.as_str() {
                    "rect" => MaskPolicy::Rect {
                        lo: a.req("lo")?,
                        hi: a.req("hi")?,
                        placement: a.or("placement", Placement::Clip)?,
                    },
                    "fourier" => MaskPolicy::Fourier {
                        p: a.req("p")?,
                        decay: a.or("decay", DEFAULT_DECAY)?,
                    },
                    "grid" => MaskPolicy::Grid {
                        g: a.req("g")?,
                        frac: a.req("frac")?,
                    },
                    "saliency" => MaskPolicy::Saliency {
                        p: a.req("p")?,
                        mode: a.or("mode", SaliencyChoice::Coin)?,
                    },
                    other => {
                        return Err(Error::param(format!(
                            "unknown mask policy {other:?} (rect|fourier|grid|saliency)"
                        )))
                    }
                };
                DistortionKind::Occlude { policy, fill }
            }
            "mixup" => DistortionKind::Mixup { alpha: a.or("alpha", 1.0)? },
            "cutmix" => DistortionKind::Cutmix { alpha: a.or("alpha", 1.0)? },
            "fmix" => DistortionKind::Fmix {
                alpha: a.or("alpha", 1.0)?,
                decay: a.or("decay", DEFAULT_DECAY)?,
            },
            "rm" => DistortionKind::Rm {
                k: a.or("k", 3)?,
                alpha: a.or("alpha", 1.0)?,
                decay: a.or("decay", DEFAULT_DECAY)?,
            },
            "gaussian" => DistortionKind::Gaussian {
                sigma_lo: a.or("lo", 0.0)?,
                sigma_hi: a.or("hi", 0.1)?,
            },
            other => {
                return Err(Error::param(format!(
                    "unknown distortion {other:?} (patch_shuffle|occlude|mixup|cutmix|fmix|rm|gaussian)"
                )))
            }
        };
        a.finish()?;
        Ok(DistortionSpec { kind, batch_size })
    }
}

impl fmt::Display for DistortionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            DistortionKind::PatchShuffle { g } => write!(f, "patch_shuffle:g={g}")?,
            DistortionKind::Occlude { policy, fill } => {
                f.write_str("occlude:")?;
                match policy {
                    MaskPolicy::Rect { lo, hi, placement } => {
                        write!(f, "mask=rect,lo={lo},hi={hi},placement={placement}")?
                    }
                    MaskPolicy::Fourier { p, decay } => write!(f, "mask=fourier,p={p},decay={decay}")?,
                    MaskPolicy::Grid { g, frac } => write!(f, "mask=grid,g={g},frac={frac}")?,
                    MaskPolicy::Saliency { p, mode } => write!(f, "mask=saliency,p={p},mode={mode}")?,
                }
                write!(f, ",fill={fill}")?
            }
            DistortionKind::Mixup { alpha } => write!(f, "mixup:alpha={alpha}")?,
            DistortionKind::Cutmix { alpha } => write!(f, "cutmix:alpha={alpha}")?,
            DistortionKind::Fmix { alpha, decay } => write!(f, "fmix:alpha={alpha},decay={decay}")?,
            DistortionKind::Rm { k, alpha, decay } => write!(f, "rm:k={k},alpha={alpha},decay={decay}")?,
            DistortionKind::Gaussian { sigma_lo, sigma_hi } => write!(f, "gaussian:lo={sigma_lo},hi={sigma_hi}")?,
        }
        write!(f, ",batch={}", self.batch_size)
    }
}

/// Optional inputs for [`distort_dataset`].
#[derive(Default, Clone, Copy)]
pub struct DistortContext<'a> {
    /// Donor images for donor fills and mixing; defaults to the dataset itself.
    pub donor: Option<&'a LabeledDataset>,
    /// Required by saliency-guided occlusion.
    pub saliency: Option<&'a dyn SaliencyProvider>,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

/// Per-dataset record of how each sample was distorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub spec: String,
    pub spec_detail: DistortionSpec,
    pub seed: u64,
    pub base_len: usize,
    pub realized_fractions: Vec<Option<f64>>,
    pub lambdas: Vec<Option<f64>>,
    pub donor_ids: Vec<Option<String>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub saliency_source: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub batch_modes: Vec<SalientMode>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub batch_rm_picks: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rm_bank_seed: Option<u64>,
}

/// A distorted copy of a dataset (same ids, order, labels and shapes) with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortedDataset {
    pub dataset: LabeledDataset,
    pub provenance: Provenance,
}

impl DistortedDataset {
    pub fn realized_fractions(&self) -> &[Option<f64>] {
        &self.provenance.realized_fractions
    }

    /// Writes `manifest.csv`, the `TEN1` files and `provenance.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.dataset.save(dir)?;
        let path = dir.join("provenance.json");
        let mut json = serde_json::to_string_pretty(&self.provenance)?;
        json.push('\n');
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

struct ItemOut {
    image: ImageTensor,
    fraction: Option<f64>,
    lambda: Option<f64>,
    donor: Option<usize>,
}

/// Training set made only of distorted copies of `ds`, Cutout style.
///
/// Copy `c` is distorted with seed `child_seed("augment", c)` and its ids get
/// the prefix `aug{c}-`.
pub fn augment_copies(
    ds: &LabeledDataset,
    spec: &DistortionSpec,
    copies: usize,
    seed: u64,
    ctx: DistortContext<'_>,
) -> Result<LabeledDataset> {
    if copies == 0 {
        return Err(Error::param("need at least one augmented copy"));
    }
    let root = SeededRng::new(seed);
    let mut out: Option<LabeledDataset> = None;
    for c in 0..copies {
        let d = distort_dataset(ds, spec, root.child_seed("augment", c as u64), ctx)?;
        let d = d.dataset.with_id_prefix(&format!("aug{c}-"));
        out = Some(match out {
            None => d,
            Some(acc) => acc.concat(&d)?,
        });
    }
    Ok(out.expect("copies >= 1"))
}

/// Distorts every image of `ds` according to `spec`.
pub fn distort_dataset(
    ds: &LabeledDataset,
    spec: &DistortionSpec,
    seed: u64,
    ctx: DistortContext<'_>,
) -> Result<DistortedDataset> {
    let shape = ds
        .image_shape()
        .ok_or_else(|| Error::Empty("cannot distort an empty dataset".into()))?;
    spec.validate(shape)?;
    let (_, h, w) = shape;
    let n = ds.len();
    let bs = spec.batch_size;
    let n_batches = n.div_ceil(bs);

    let donor_ds = ctx.donor.unwrap_or(ds);
    let self_donor = ctx.donor.is_none();
    if spec.needs_donor() {
        if donor_ds.image_shape() != Some(shape) {
            return Err(Error::shape(format!(
                "donor shape {:?} differs from dataset shape {shape:?}",
                donor_ds.image_shape()
            )));
        }
        if self_donor && n < 2 {
            return Err(Error::param("self-donation needs at least two images"));
        }
    }

    // batch-level decisions
    let mut batch_modes = Vec::new();
    let mut batch_rm_picks = Vec::new();
    let mut bank: Option<MaskBank> = None;
    let mut rm_bank_seed = None;
    let mut maps: Vec<SaliencyMap> = Vec::new();
    let mut saliency_source = None;
    match spec.kind {
        DistortionKind::Occlude {
            policy: MaskPolicy::Saliency { mode, .. },
            ..
        } => {
            let provider = ctx
                .saliency
                .ok_or_else(|| Error::param("saliency-guided occlusion requires a saliency provider"))?;
            saliency_source = Some(provider.source());
            for (b, chunk) in ds.items().chunks(bs).enumerate() {
                batch_modes.push(match mode {
                    SaliencyChoice::Most => SalientMode::Most,
                    SaliencyChoice::Least => SalientMode::Least,
                    SaliencyChoice::Coin => {
                        if derive_stream(seed, "batch", b as u64).coin() {
                            SalientMode::Most
                        } else {
                            SalientMode::Least
                        }
                    }
                });
                let images: Vec<&ImageTensor> = chunk.iter().map(|s| &s.image).collect();
                let got = provider.saliency(&images, SaliencyTarget::Predicted)?;
                if got.len() != images.len() {
                    return Err(Error::Schema(format!(
                        "{} saliency maps for {} images",
                        got.len(),
                        images.len()
                    )));
                }
                if let Some(bad) = got.iter().find(|m| (m.height(), m.width()) != (h, w)) {
                    return Err(Error::shape(format!(
                        "saliency map {}x{} for {h}x{w} images",
                        bad.height(),
                        bad.width()
                    )));
                }
                maps.extend(got);
            }
        }
        DistortionKind::Rm { k, alpha, decay } => {
            let bank_seed = SeededRng::new(seed).child_seed("rm_bank", 0);
            let b = make_rm_bank(h, w, k, FractionSampler::Beta { alpha }, decay, bank_seed)?;
            batch_rm_picks = (0..n_batches)
                .map(|i| b.pick_index(&mut derive_stream(seed, "batch", i as u64)))
                .collect();
            rm_bank_seed = Some(bank_seed);
            bank = Some(b);
        }
        _ => {}
    }

    let process = |i: usize| -> Result<ItemOut> {
        let img = &ds.items()[i].image;
        let mut rng = derive_stream(seed, "img", i as u64);
        let donor_idx = if spec.needs_donor() {
            let mut drng = derive_stream(seed, "donor", i as u64);
            Some(if self_donor {
                let j = drng.below(n - 1);
                if j >= i {
                    j + 1
                } else {
                    j
                }
            } else {
                drng.below(donor_ds.len())
            })
        } else {
            None
        };
        let donor = donor_idx.map(|j| &donor_ds.items()[j].image);
        let mut out = ItemOut {
            image: img.clone(),
            fraction: None,
            lambda: None,
            donor: donor_idx,
        };
        match spec.kind {
            DistortionKind::PatchShuffle { g } => out.image = patch_shuffle(img, g, &mut rng)?,
            DistortionKind::Occlude { policy, fill } => {
                let mask = match policy {
                    MaskPolicy::Rect { lo, hi, placement } => sample_rect_mask(h, w, lo, hi, placement, &mut rng)?,
                    MaskPolicy::Fourier { p, decay } => sample_fourier_mask(h, w, p, decay, &mut rng)?,
                    MaskPolicy::Grid { g, frac } => grid_tile_mask(h, w, g, frac, &mut rng)?,
                    MaskPolicy::Saliency { p, .. } => saliency_mask(&maps[i], p, batch_modes[i / bs])?,
                };
                out.fraction = Some(mask.fraction());
                out.image = occlude(img, &mask, fill, donor, Some(&mut rng))?;
            }
            DistortionKind::Mixup { alpha } => {
                let l = sample_lambda(alpha, LambdaMode::Symmetric, &mut rng)?;
                out.lambda = Some(l);
                out.image = mixup_blend(img, donor.unwrap(), l)?;
            }
            DistortionKind::Cutmix { alpha } => {
                let l = sample_lambda(alpha, LambdaMode::Symmetric, &mut rng)?;
                let (image, frac) = cutmix_blend(img, donor.unwrap(), l, &mut rng)?;
                out.lambda = Some(l);
                out.fraction = Some(frac);
                out.image = image;
            }
            DistortionKind::Fmix { alpha, decay } => {
                let l = sample_lambda(alpha, LambdaMode::Symmetric, &mut rng)?;
                let mask = sample_fourier_mask(h, w, 1.0 - l, decay, &mut rng)?;
                out.lambda = Some(l);
                out.fraction = Some(mask.fraction());
                out.image = fmix_blend(img, donor.unwrap(), &mask)?;
            }
            DistortionKind::Rm { .. } => {
                let bank = bank.as_ref().unwrap();
                let mask = &bank.masks()[batch_rm_picks[i / bs]];
                out.fraction = Some(mask.fraction());
                out.image = fmix_blend(img, donor.unwrap(), mask)?;
            }
            DistortionKind::Gaussian { sigma_lo, sigma_hi } => {
                out.image = gaussian_noise(img, sigma_lo, sigma_hi, &mut rng)?
            }
        }
        Ok(out)
    };

    let results: Vec<ItemOut> = match ctx.workers {
        Some(workers) => rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::param(format!("thread pool: {e}")))?
            .install(|| (0..n).into_par_iter().map(process).collect::<Result<Vec<_>>>())?,
        None => (0..n).into_par_iter().map(process).collect::<Result<Vec<_>>>()?,
    };

    let mut images = Vec::with_capacity(n);
    let mut realized_fractions = Vec::with_capacity(n);
    let mut lambdas = Vec::with_capacity(n);
    let mut donor_ids = Vec::with_capacity(n);
    for r in results {
        images.push(r.image);
        realized_fractions.push(r.fraction);
        lambdas.push(r.lambda);
        donor_ids.push(r.donor.map(|j| donor_ds.items()[j].id.clone()));
    }
    Ok(DistortedDataset {
        dataset: ds.with_images(images)?,
        provenance: Provenance {
            spec: spec.to_string(),
            spec_detail: *spec,
            seed,
            base_len: n,
            realized_fractions,
            lambdas,
            donor_ids,
            saliency_source,
            batch_modes,
            batch_rm_picks,
            rm_bank_seed,
        },
    })
}
