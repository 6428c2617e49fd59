use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::tiny::{argmax, flatten, Arch, TinyModel};
use crate::distort::{sample_lambda, LambdaMode};
use crate::error::{Error, Result};
use crate::mask::{make_rm_bank, rect_mask_with_area, sample_fourier_mask, BinaryMask, FractionSampler, MaskBank, Placement};
use crate::rng::{derive_stream, SeededRng};
use crate::LabeledDataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub value: f64,
    pub drop_epoch: Option<usize>,
    pub dropped_value: f64,
}

impl LrSchedule {
    pub fn constant(value: f64) -> Self {
        LrSchedule {
            value,
            drop_epoch: None,
            dropped_value: value,
        }
    }

    pub fn at(&self, epoch: usize) -> f64 {
        match self.drop_epoch {
            Some(d) if epoch >= d => self.dropped_value,
            _ => self.value,
        }
    }
}

/// How a donor image is combined with the primary image in inter-dataset training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InterMix {
    Mixup,
    Cutmix,
    Fmix { decay: f64 },
}

/// A donor dataset carried inside a config. Serializes as its description only.
#[derive(Debug, Clone)]
pub struct Donor {
    pub description: String,
    pub data: Option<Arc<LabeledDataset>>,
}

impl Donor {
    pub fn new(description: impl Into<String>, data: LabeledDataset) -> Self {
        Donor {
            description: description.into(),
            data: Some(Arc::new(data)),
        }
    }
}

impl PartialEq for Donor {
    fn eq(&self, other: &Self) -> bool {
        self.description == other.description
    }
}

impl Serialize for Donor {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.description)
    }
}

impl<'de> Deserialize<'de> for Donor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(Donor {
            description: String::deserialize(d)?,
            data: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Msda {
    None,
    Mixup { alpha: f64 },
    Cutmix { alpha: f64 },
    Fmix { alpha: f64, decay: f64 },
    /// One mask per batch from a fixed bank of `k` Fourier masks.
    Rm { k: usize, decay: f64, alpha: f64 },
    /// Mixes with donor images; the target stays the primary label.
    Interdataset { donor: Donor, mix: InterMix, alpha: f64, h: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Arch,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub momentum: f64,
    pub msda: Msda,
    pub seed: u64,
    /// Fixed mixing coefficient for every batch instead of a Beta draw.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: Arch::Linear,
            epochs: 100,
            batch_size: 32,
            lr: LrSchedule {
                value: 0.1,
                drop_epoch: Some(50),
                dropped_value: 0.001,
            },
            momentum: 0.9,
            msda: Msda::None,
            seed: 0,
            lambda: None,
        }
    }
}

impl TrainConfig {
    /// Default schedule scaled to `epochs`: the rate drops at half-time.
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        if self.lr.drop_epoch.is_some() {
            self.lr.drop_epoch = Some(epochs / 2);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::param("epochs and batch_size must be positive"));
        }
        if !(self.lr.value > 0.0 && self.lr.dropped_value > 0.0) || !self.lr.value.is_finite() {
            return Err(Error::param("learning rates must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if let Some(l) = self.lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::param(format!("lambda {l} outside [0, 1]")));
            }
        }
        let alpha_ok = |a: f64| a > 0.0 && a.is_finite();
        match &self.msda {
            Msda::None => Ok(()),
            Msda::Mixup { alpha } | Msda::Cutmix { alpha } if !alpha_ok(*alpha) => {
                Err(Error::param("alpha must be > 0"))
            }
            Msda::Fmix { alpha, .. } | Msda::Rm { alpha, .. } if !alpha_ok(*alpha) => {
                Err(Error::param("alpha must be > 0"))
            }
            Msda::Rm { k: 0, .. } => Err(Error::param("mask bank size k must be at least 1")),
            Msda::Interdataset { alpha, h, .. } if !alpha_ok(*alpha) || !(*h > 0.0) => {
                Err(Error::param("interdataset needs alpha > 0 and h > 0"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean loss over the (possibly mixed) samples seen in each epoch.
    pub epoch_loss: Vec<f64>,
    /// Cross-entropy on the unmixed training set after each epoch.
    pub clean_loss: Vec<f64>,
    pub train_accuracy: f64,
}

pub fn train_tiny(train: &LabeledDataset, cfg: &TrainConfig) -> Result<TinyModel> {
    train_tiny_with_history(train, cfg).map(|(m, _)| m)
}

struct Prepared {
    x: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

fn prepare(ds: &LabeledDataset) -> Prepared {
    Prepared {
        x: ds.items().iter().map(|s| flatten(&s.image)).collect(),
        labels: ds.items().iter().map(|s| s.label).collect(),
    }
}

fn mask_blend(a: &[f64], b: &[f64], mask: &BinaryMask) -> Vec<f64> {
    let hw = mask.area();
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (&x, &y))| if mask.bits()[i % hw] { y } else { x })
        .collect()
}

fn lerp(a: &[f64], b: &[f64], lambda: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| lambda * x + (1.0 - lambda) * y).collect()
}

/// Returns `(loss, dL/dlogits)` for a soft target.
fn soft_ce(logits: &[f64], target: &[(usize, f64)]) -> (f64, Vec<f64>) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let log_z = m + z.ln();
    let mut grad: Vec<f64> = logits.iter().map(|l| (l - log_z).exp()).collect();
    let mut loss = 0.0;
    for &(j, w) in target {
        if w != 0.0 {
            loss -= w * (logits[j] - log_z);
        }
        grad[j] -= w;
    }
    (loss, grad)
}

fn clean_stats(model: &TinyModel, data: &Prepared) -> (f64, f64) {
    let mut loss = 0.0;
    let mut correct = 0;
    for (x, &y) in data.x.iter().zip(&data.labels) {
        let logits = model.logits(x);
        loss += soft_ce(&logits, &[(y, 1.0)]).0;
        correct += usize::from(argmax(&logits) == y);
    }
    let n = data.x.len() as f64;
    (loss / n, correct as f64 / n)
}

pub fn train_tiny_with_history(train: &LabeledDataset, cfg: &TrainConfig) -> Result<(TinyModel, TrainHistory)> {
    cfg.validate()?;
    let shape = train
        .image_shape()
        .ok_or_else(|| Error::Empty("training dataset is empty".into()))?;
    let (_, h, w) = shape;
    let k = train.num_classes();
    let data = prepare(train);
    let n = data.x.len();

    let donor = match &cfg.msda {
        Msda::Interdataset { donor, .. } => {
            let d = donor
                .data
                .as_ref()
                .ok_or_else(|| Error::param(format!("donor dataset {:?} not loaded", donor.description)))?;
            if d.image_shape() != Some(shape) {
                return Err(Error::shape(format!(
                    "donor images {:?} do not match training images {shape:?}",
                    d.image_shape()
                )));
            }
            Some(prepare(d))
        }
        _ => None,
    };
    let bank: Option<MaskBank> = match cfg.msda {
        Msda::Rm { k: bank_k, decay, alpha } => Some(make_rm_bank(
            h,
            w,
            bank_k,
            FractionSampler::Beta { alpha },
            decay,
            SeededRng::new(cfg.seed).child_seed("rm_bank", 0),
        )?),
        _ => None,
    };

    let mut model = TinyModel::init(cfg.arch, shape, k, &mut derive_stream(cfg.seed, "init", 0))?;
    let np = model.params.len();
    let mut velocity = vec![0.0; np];
    let mut grad = vec![0.0; np];
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let mut history = TrainHistory {
        epoch_loss: Vec::with_capacity(cfg.epochs),
        clean_loss: Vec::with_capacity(cfg.epochs),
        train_accuracy: 0.0,
    };

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr.at(epoch);
        let order = derive_stream(cfg.seed, "shuffle", epoch as u64).permutation(n);
        let mut epoch_loss = 0.0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let global = (epoch * batches_per_epoch + bi) as u64;
            let mut mrng = derive_stream(cfg.seed, "msda", global);
            let draw_lambda = |rng: &mut _, alpha: f64, mode| match cfg.lambda {
                Some(l) => Ok(l),
                None => sample_lambda(alpha, mode, rng),
            };

            // (input, soft target) per sample.
            let samples: Vec<(Vec<f64>, Vec<(usize, f64)>)> = match &cfg.msda {
                Msda::None => idx.iter().map(|&i| (data.x[i].clone(), vec![(data.labels[i], 1.0)])).collect(),
                Msda::Interdataset { mix, alpha, h: imb, .. } => {
                    let d = donor.as_ref().expect("donor prepared");
                    let lambda = draw_lambda(&mut mrng, *alpha, LambdaMode::Reformulated { h: *imb })?;
                    let mask = match mix {
                        InterMix::Mixup => None,
                        InterMix::Cutmix => Some(rect_mask_with_area(h, w, 1.0 - lambda, Placement::Clip, &mut mrng)?),
                        InterMix::Fmix { decay } => Some(sample_fourier_mask(h, w, 1.0 - lambda, *decay, &mut mrng)?),
                    };
                    idx.iter()
                        .map(|&i| {
                            let b = &d.x[mrng.below(d.x.len())];
                            let x = match &mask {
                                None => lerp(&data.x[i], b, lambda),
                                Some(m) => mask_blend(&data.x[i], b, m),
                            };
                            (x, vec![(data.labels[i], 1.0)])
                        })
                        .collect()
                }
                msda => {
                    let partner = mrng.permutation(idx.len());
                    let (mask, lambda) = match *msda {
                        Msda::Mixup { alpha } => (None, draw_lambda(&mut mrng, alpha, LambdaMode::Symmetric)?),
                        Msda::Cutmix { alpha } => {
                            let l = draw_lambda(&mut mrng, alpha, LambdaMode::Symmetric)?;
                            let m = rect_mask_with_area(h, w, 1.0 - l, Placement::Clip, &mut mrng)?;
                            let eff = 1.0 - m.fraction();
                            (Some(m), eff)
                        }
                        Msda::Fmix { alpha, decay } => {
                            let l = draw_lambda(&mut mrng, alpha, LambdaMode::Symmetric)?;
                            let m = sample_fourier_mask(h, w, 1.0 - l, decay, &mut mrng)?;
                            let eff = 1.0 - m.fraction();
                            (Some(m), eff)
                        }
                        Msda::Rm { .. } => {
                            let m = bank.as_ref().expect("bank built").pick(&mut mrng).clone();
                            let eff = 1.0 - m.fraction();
                            (Some(m), eff)
                        }
                        Msda::None | Msda::Interdataset { .. } => unreachable!(),
                    };
                    idx.iter()
                        .zip(&partner)
                        .map(|(&i, &pj)| {
                            let j = idx[pj];
                            let x = match &mask {
                                None => lerp(&data.x[i], &data.x[j], lambda),
                                Some(m) => mask_blend(&data.x[i], &data.x[j], m),
                            };
                            (x, vec![(data.labels[i], lambda), (data.labels[j], 1.0 - lambda)])
                        })
                        .collect()
                }
            };

            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for (x, target) in &samples {
                let fwd = model.forward(x);
                let (loss, dlogits) = soft_ce(&fwd.logits, target);
                batch_loss += loss;
                model.backward(x, &fwd, &dlogits, &mut grad);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            epoch_loss += batch_loss;
            let scale = 1.0 / samples.len() as f64;
            for ((p, v), g) in model.params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v + g * scale;
                *p -= lr * *v;
            }
        }
        let (clean, _) = clean_stats(&model, &data);
        if !clean.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        history.epoch_loss.push(epoch_loss / n as f64);
        history.clean_loss.push(clean);
    }
    history.train_accuracy = clean_stats(&model, &data).1;
    model.training = Some(cfg.clone());
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Sample, Split};
    use crate::mask::DEFAULT_DECAY;
    use crate::tensor::ImageTensor;

    fn separable(n: usize, seed: u64) -> LabeledDataset {
        crate::synth::separable_points(n, seed, Split::Train)
    }

    /// Perceptron: converges on separable data, so it certifies the fixture.
    fn perceptron_separates(ds: &LabeledDataset) -> bool {
        let mut wv = [0.0f64; 3];
        for _ in 0..1000 {
            let mut mistakes = 0;
            for s in ds.items() {
                let x = [s.image.data()[0] as f64, s.image.data()[1] as f64, 1.0];
                let y = if s.label == 1 { 1.0 } else { -1.0 };
                let act: f64 = wv.iter().zip(&x).map(|(a, b)| a * b).sum();
                if y * act <= 0.0 {
                    mistakes += 1;
                    for (wi, xi) in wv.iter_mut().zip(&x) {
                        *wi += y * xi;
                    }
                }
            }
            if mistakes == 0 {
                return true;
            }
        }
        false
    }

    #[test]
    fn separable_fixture_is_learned() {
        let ds = separable(200, 1);
        assert!(perceptron_separates(&ds));
        let cfg = TrainConfig { seed: 4, ..TrainConfig::default() };
        let (_, hist) = train_tiny_with_history(&ds, &cfg).unwrap();
        assert!(hist.train_accuracy >= 0.99, "{}", hist.train_accuracy);
    }

    #[test]
    fn deterministic_given_seed() {
        let ds = separable(64, 2);
        let cfg = TrainConfig {
            arch: Arch::Mlp { hidden: 4 },
            msda: Msda::Fmix { alpha: 1.0, decay: 3.0 },
            seed: 9,
            ..TrainConfig::default().with_epochs(5)
        };
        let a = train_tiny(&ds, &cfg).unwrap();
        let b = train_tiny(&ds, &cfg).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn mixup_with_unit_lambda_matches_plain() {
        let ds = separable(50, 3);
        let base = TrainConfig { seed: 5, ..TrainConfig::default().with_epochs(10) };
        let plain = train_tiny(&ds, &base).unwrap();
        let mixed = train_tiny(
            &ds,
            &TrainConfig {
                msda: Msda::Mixup { alpha: 1.0 },
                lambda: Some(1.0),
                ..base.clone()
            },
        )
        .unwrap();
        assert_eq!(plain.params, mixed.params);
    }

    #[test]
    fn full_batch_loss_non_increasing() {
        let ds = separable(100, 4);
        let cfg = TrainConfig {
            batch_size: 100,
            momentum: 0.0,
            lr: LrSchedule::constant(0.1),
            ..TrainConfig::default()
        };
        let (_, hist) = train_tiny_with_history(&ds, &cfg).unwrap();
        for w in hist.clean_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn interdataset_ignores_donor_labels() {
        let ds = separable(40, 5);
        let donor = separable(30, 6);
        let relabeled = LabeledDataset::new(
            donor.items().iter().map(|s| Sample::new(s.id.clone(), s.image.clone(), 1 - s.label)).collect(),
            2,
            Split::Train,
        )
        .unwrap();
        let cfg = |d: LabeledDataset| TrainConfig {
            msda: Msda::Interdataset {
                donor: Donor::new("donor", d),
                mix: InterMix::Cutmix,
                alpha: 1.0,
                h: 1.0,
            },
            seed: 3,
            ..TrainConfig::default().with_epochs(5)
        };
        let a = train_tiny(&ds, &cfg(donor)).unwrap();
        let b = train_tiny(&ds, &cfg(relabeled)).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn donor_shape_mismatch_rejected() {
        let ds = separable(10, 7);
        let donor = LabeledDataset::new(
            vec![Sample::new("d", ImageTensor::zeros(1, 2, 2), 0)],
            2,
            Split::Train,
        )
        .unwrap();
        let cfg = TrainConfig {
            msda: Msda::Interdataset { donor: Donor::new("d", donor), mix: InterMix::Mixup, alpha: 1.0, h: 1.0 },
            ..TrainConfig::default()
        };
        assert!(matches!(train_tiny(&ds, &cfg), Err(Error::Shape(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let base = separable(10, 8);
        let images = base
            .items()
            .iter()
            .map(|s| ImageTensor::new(1, 1, 2, s.image.data().iter().map(|v| v * 1e30).collect()).unwrap())
            .collect();
        let ds = base.with_images(images).unwrap();
        let cfg = TrainConfig {
            lr: LrSchedule::constant(1e300),
            momentum: 0.0,
            ..TrainConfig::default().with_epochs(20)
        };
        assert!(matches!(train_tiny(&ds, &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn rm_and_cutmix_train() {
        let ds = separable(20, 9);
        for msda in [Msda::Cutmix { alpha: 1.0 }, Msda::Rm { k: 4, decay: DEFAULT_DECAY, alpha: 1.0 }] {
            let cfg = TrainConfig { msda, ..TrainConfig::default().with_epochs(3) };
            train_tiny(&ds, &cfg).unwrap();
        }
    }

    #[test]
    fn invalid_configs() {
        let ds = separable(10, 10);
        for cfg in [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { lr: LrSchedule::constant(0.0), ..TrainConfig::default() },
            TrainConfig { msda: Msda::Mixup { alpha: 0.0 }, ..TrainConfig::default() },
        ] {
            assert!(train_tiny(&ds, &cfg).is_err());
        }
    }
}
