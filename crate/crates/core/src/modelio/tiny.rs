use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Batch, BatchLimit, PredictionProvider, Predictions, ProviderInfo, SaliencyProvider, SaliencyTarget, TrainConfig};
use crate::error::{Error, Result};
use crate::mask::SaliencyMap;
use crate::rng::RngStream;
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Arch {
    Linear,
    /// One tanh hidden layer.
    Mlp { hidden: usize },
}

impl std::str::FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "linear" => Ok(Arch::Linear),
            None if s == "mlp" => Ok(Arch::Mlp { hidden: 32 }),
            Some(("mlp", rest)) => {
                let hidden = rest
                    .strip_prefix("hidden=")
                    .unwrap_or(rest)
                    .parse()
                    .map_err(|_| Error::param(format!("bad hidden width in {s:?}")))?;
                Ok(Arch::Mlp { hidden })
            }
            _ => Err(Error::param(format!("unknown arch {s:?} (linear|mlp:hidden=N)"))),
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Arch::Linear => f.write_str("linear"),
            Arch::Mlp { hidden } => write!(f, "mlp:hidden={hidden}"),
        }
    }
}

/// A small dense classifier over flattened `C×H×W` inputs.
///
/// Parameters are stored flat: `W [K×D], b [K]` for `Linear`;
/// `W1 [H×D], b1 [H], W2 [K×H], b2 [K]` for `Mlp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyModel {
    pub arch: Arch,
    pub input_shape: (usize, usize, usize),
    pub num_classes: usize,
    pub params: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub training: Option<TrainConfig>,
}

/// Intermediate values kept for backpropagation.
pub(crate) struct Forward {
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
}

impl TinyModel {
    pub fn param_count(arch: Arch, input_dim: usize, k: usize) -> usize {
        match arch {
            Arch::Linear => k * input_dim + k,
            Arch::Mlp { hidden } => hidden * input_dim + hidden + k * hidden + k,
        }
    }

    pub fn new(arch: Arch, input_shape: (usize, usize, usize), num_classes: usize, params: Vec<f64>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::param("num_classes must be positive"));
        }
        if let Arch::Mlp { hidden: 0 } = arch {
            return Err(Error::param("hidden width must be positive"));
        }
        let d = input_shape.0 * input_shape.1 * input_shape.2;
        let expected = Self::param_count(arch, d, num_classes);
        if params.len() != expected {
            return Err(Error::shape(format!(
                "{arch} over {d} inputs and {num_classes} classes needs {expected} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::param("parameters must be finite"));
        }
        Ok(TinyModel {
            arch,
            input_shape,
            num_classes,
            params,
            training: None,
        })
    }

    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn init(arch: Arch, input_shape: (usize, usize, usize), num_classes: usize, rng: &mut RngStream) -> Result<Self> {
        let d = input_shape.0 * input_shape.1 * input_shape.2;
        let mut params = vec![0.0; Self::param_count(arch, d, num_classes)];
        let mut fill = |slice: &mut [f64], fan_in: usize| {
            let s = 1.0 / (fan_in.max(1) as f64).sqrt();
            for v in slice {
                *v = rng.uniform_in(-s, s);
            }
        };
        match arch {
            Arch::Linear => fill(&mut params[..num_classes * d], d),
            Arch::Mlp { hidden } => {
                fill(&mut params[..hidden * d], d);
                let w2 = hidden * d + hidden;
                fill(&mut params[w2..w2 + num_classes * hidden], hidden);
            }
        }
        Self::new(arch, input_shape, num_classes, params)
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.0 * self.input_shape.1 * self.input_shape.2
    }

    pub(crate) fn forward(&self, x: &[f64]) -> Forward {
        let d = self.input_dim();
        let k = self.num_classes;
        let p = &self.params;
        match self.arch {
            Arch::Linear => {
                let (w, b) = p.split_at(k * d);
                let logits = (0..k).map(|j| b[j] + dot(&w[j * d..(j + 1) * d], x)).collect();
                Forward { hidden: Vec::new(), logits }
            }
            Arch::Mlp { hidden: nh } => {
                let (w1, rest) = p.split_at(nh * d);
                let (b1, rest) = rest.split_at(nh);
                let (w2, b2) = rest.split_at(k * nh);
                let hidden: Vec<f64> = (0..nh).map(|i| (b1[i] + dot(&w1[i * d..(i + 1) * d], x)).tanh()).collect();
                let logits = (0..k).map(|j| b2[j] + dot(&w2[j * nh..(j + 1) * nh], &hidden)).collect();
                Forward { hidden, logits }
            }
        }
    }

    /// Logits for a flattened input.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).logits
    }

    /// Accumulates `dL/dθ` into `grad` given `dL/dlogits`.
    pub(crate) fn backward(&self, x: &[f64], fwd: &Forward, dlogits: &[f64], grad: &mut [f64]) {
        let d = self.input_dim();
        let k = self.num_classes;
        match self.arch {
            Arch::Linear => {
                let (gw, gb) = grad.split_at_mut(k * d);
                for j in 0..k {
                    let g = dlogits[j];
                    gb[j] += g;
                    axpy(g, x, &mut gw[j * d..(j + 1) * d]);
                }
            }
            Arch::Mlp { hidden: nh } => {
                let w2 = &self.params[nh * d + nh..nh * d + nh + k * nh];
                let (gw1, rest) = grad.split_at_mut(nh * d);
                let (gb1, rest) = rest.split_at_mut(nh);
                let (gw2, gb2) = rest.split_at_mut(k * nh);
                let mut dhidden = vec![0.0; nh];
                for j in 0..k {
                    let g = dlogits[j];
                    gb2[j] += g;
                    axpy(g, &fwd.hidden, &mut gw2[j * nh..(j + 1) * nh]);
                    axpy(g, &w2[j * nh..(j + 1) * nh], &mut dhidden);
                }
                for i in 0..nh {
                    let da = dhidden[i] * (1.0 - fwd.hidden[i] * fwd.hidden[i]);
                    gb1[i] += da;
                    axpy(da, x, &mut gw1[i * d..(i + 1) * d]);
                }
            }
        }
    }

    /// `∂ logit_target / ∂ x`.
    pub fn input_gradient(&self, x: &[f64], target: usize) -> Vec<f64> {
        let d = self.input_dim();
        let k = self.num_classes;
        match self.arch {
            Arch::Linear => self.params[target * d..(target + 1) * d].to_vec(),
            Arch::Mlp { hidden: nh } => {
                let fwd = self.forward(x);
                let w1 = &self.params[..nh * d];
                let w2 = &self.params[nh * d + nh..nh * d + nh + k * nh];
                let mut g = vec![0.0; d];
                for i in 0..nh {
                    let coef = w2[target * nh + i] * (1.0 - fwd.hidden[i] * fwd.hidden[i]);
                    axpy(coef, &w1[i * d..(i + 1) * d], &mut g);
                }
                g
            }
        }
    }

    fn check_image(&self, img: &ImageTensor) -> Result<()> {
        if img.shape() != self.input_shape {
            return Err(Error::shape(format!(
                "model expects {:?}, image is {:?}",
                self.input_shape,
                img.shape()
            )));
        }
        Ok(())
    }

    pub fn predict_image(&self, img: &ImageTensor) -> Result<(usize, Vec<f64>)> {
        self.check_image(img)?;
        let logits = self.logits(&flatten(img));
        Ok((argmax(&logits), logits))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: TinyModel = serde_json::from_str(&text)?;
        let mut checked = Self::new(m.arch, m.input_shape, m.num_classes, m.params)?;
        checked.training = m.training;
        Ok(checked)
    }
}

pub(crate) fn flatten(img: &ImageTensor) -> Vec<f64> {
    img.data().iter().map(|&v| v as f64).collect()
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Absolute input gradient of the target logit, summed over channels and max-normalized.
pub fn input_gradient_saliency(m: &TinyModel, img: &ImageTensor, target: SaliencyTarget) -> Result<SaliencyMap> {
    m.check_image(img)?;
    let x = flatten(img);
    let class = match target {
        SaliencyTarget::Predicted => argmax(&m.logits(&x)),
        SaliencyTarget::Class(j) if j < m.num_classes => j,
        SaliencyTarget::Class(j) => {
            return Err(Error::param(format!("class {j} outside 0..{}", m.num_classes)))
        }
    };
    let g = m.input_gradient(&x, class);
    let (c, h, w) = m.input_shape;
    let hw = h * w;
    let raw: Vec<f64> = (0..hw).map(|i| (0..c).map(|ch| g[ch * hw + i].abs()).sum()).collect();
    SaliencyMap::normalized(h, w, raw)
}

impl PredictionProvider for TinyModel {
    fn info(&self) -> ProviderInfo {
        ProviderInfo {
            name: format!("tiny:{}", self.arch),
            num_classes: self.num_classes,
            input_shape: Some(self.input_shape),
            returns_logits: true,
            batch_limit: BatchLimit::Unlimited,
        }
    }

    fn predict(&self, batch: &Batch<'_>, want_logits: bool) -> Result<Predictions> {
        let mut labels = Vec::with_capacity(batch.len());
        let mut logits = Vec::with_capacity(if want_logits { batch.len() } else { 0 });
        for img in &batch.images {
            let (label, l) = self.predict_image(img)?;
            labels.push(label);
            if want_logits {
                logits.push(l);
            }
        }
        Ok(Predictions {
            labels,
            logits: want_logits.then_some(logits),
        })
    }
}

impl SaliencyProvider for TinyModel {
    fn source(&self) -> String {
        format!("input-gradient:tiny:{}", self.arch)
    }

    fn saliency(&self, images: &[&ImageTensor], target: SaliencyTarget) -> Result<Vec<SaliencyMap>> {
        images.iter().map(|img| input_gradient_saliency(self, img, target)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    #[test]
    fn linear_forward_by_hand() {
        // W = [[1, 0, -1, 2], [0.5, 0.5, 0.5, 0.5]], b = [0.1, -0.2]
        let params = vec![1.0, 0.0, -1.0, 2.0, 0.5, 0.5, 0.5, 0.5, 0.1, -0.2];
        let m = TinyModel::new(Arch::Linear, (1, 2, 2), 2, params).unwrap();
        let img = ImageTensor::new(1, 2, 2, vec![0.5, 1.0, 0.25, 0.75]).unwrap();
        // logit0 = 0.5 - 0.25 + 1.5 + 0.1 = 1.85; logit1 = 0.5*2.5 - 0.2 = 1.05
        let (label, logits) = m.predict_image(&img).unwrap();
        assert_eq!(label, 0);
        assert!((logits[0] - 1.85).abs() < 1e-12);
        assert!((logits[1] - 1.05).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_empty_output() {
        let m = TinyModel::init(Arch::Linear, (1, 2, 2), 3, &mut derive_stream(0, "init", 0)).unwrap();
        let out = m
            .predict(&Batch { condition: "test", ids: vec![], images: vec![] }, true)
            .unwrap();
        assert!(out.labels.is_empty());
        assert_eq!(out.logits, Some(vec![]));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let m = TinyModel::init(Arch::Linear, (1, 2, 2), 3, &mut derive_stream(0, "init", 0)).unwrap();
        assert!(m.predict_image(&ImageTensor::zeros(1, 3, 3)).is_err());
        assert!(TinyModel::new(Arch::Linear, (1, 2, 2), 3, vec![0.0; 5]).is_err());
    }

    #[test]
    fn linear_saliency_is_weight_pattern() {
        let mut r = derive_stream(1, "w", 0);
        let m = TinyModel::init(Arch::Linear, (2, 3, 3), 4, &mut r).unwrap();
        let img = ImageTensor::filled(2, 3, 3, 0.3);
        let s = input_gradient_saliency(&m, &img, SaliencyTarget::Class(2)).unwrap();
        let w = &m.params[2 * 18..3 * 18];
        let raw: Vec<f64> = (0..9).map(|i| w[i].abs() + w[9 + i].abs()).collect();
        let max = raw.iter().cloned().fold(0.0, f64::max);
        for (a, b) in s.values().iter().zip(&raw) {
            assert!((a - b / max).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_model_zero_map() {
        let m = TinyModel::new(Arch::Mlp { hidden: 3 }, (1, 2, 2), 2, vec![0.0; 3 * 4 + 3 + 2 * 3 + 2]).unwrap();
        let s = input_gradient_saliency(&m, &ImageTensor::filled(1, 2, 2, 0.5), SaliencyTarget::Predicted).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mut r = derive_stream(2, "fd", 0);
        let m = TinyModel::init(Arch::Mlp { hidden: 5 }, (1, 2, 3), 3, &mut r).unwrap();
        let x: Vec<f64> = (0..6).map(|_| r.uniform()).collect();
        let g = m.input_gradient(&x, 1);
        let h = 1e-5;
        for i in 0..6 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (m.logits(&xp)[1] - m.logits(&xm)[1]) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1e-3));
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = TinyModel::init(Arch::Mlp { hidden: 4 }, (1, 2, 2), 3, &mut derive_stream(3, "init", 0)).unwrap();
        m.save(dir.path().join("m.json")).unwrap();
        assert_eq!(TinyModel::load(dir.path().join("m.json")).unwrap(), m);
    }

    #[test]
    fn arch_parse() {
        assert_eq!("linear".parse::<Arch>().unwrap(), Arch::Linear);
        assert_eq!("mlp:hidden=8".parse::<Arch>().unwrap(), Arch::Mlp { hidden: 8 });
        assert_eq!("mlp:8".parse::<Arch>().unwrap(), Arch::Mlp { hidden: 8 });
        assert!("cnn".parse::<Arch>().is_err());
    }
}
