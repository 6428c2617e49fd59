//! Image tensors and the `TEN1` file format.
//!
//! `TEN1` layout: the bytes `TEN1`, a `u8` rank, `rank` little-endian `u32`
//! dimensions, then the row-major payload as little-endian `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TEN1_MAGIC: &[u8; 4] = b"TEN1";

/// A `C×H×W` raster stored row-major in `C, H, W` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let expected = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::shape(format!("{channels}x{height}x{width} overflows")))?;
        if data.len() != expected {
            return Err(Error::shape(format!(
                "{channels}x{height}x{width} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(format!("non-finite value at flat index {i}")));
        }
        Ok(ImageTensor {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        ImageTensor {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    /// Builds a tensor from a per-pixel function `(c, y, x) -> value`.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
    pub fn pixels_per_channel(&self) -> usize {
        self.height * self.width
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn check_same_shape(&self, other: &ImageTensor) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn to_raw(&self) -> RawTensor {
        RawTensor {
            dims: vec![self.channels, self.height, self.width],
            data: self.data.clone(),
        }
    }

    /// Accepts rank 3 (`C,H,W`) or rank 2 (`H,W`, read as one channel).
    pub fn from_raw(raw: RawTensor) -> Result<Self> {
        match raw.dims.as_slice() {
            &[c, h, w] => Self::new(c, h, w, raw.data),
            &[h, w] => Self::new(1, h, w, raw.data),
            d => Err(Error::shape(format!("image tensors have rank 2 or 3, got {d:?}"))),
        }
    }
}

/// An arbitrary-rank `f32` tensor, the in-memory form of a `TEN1` file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl RawTensor {
    pub fn encode(&self) -> Result<Vec<u8>> {
        if self.dims.len() > u8::MAX as usize {
            return Err(Error::param(format!("rank {} exceeds 255", self.dims.len())));
        }
        let n: usize = self.dims.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(format!(
                "dims {:?} need {n} values, got {}",
                self.dims,
                self.data.len()
            )));
        }
        let mut out = Vec::with_capacity(5 + 4 * self.dims.len() + 4 * n);
        out.extend_from_slice(TEN1_MAGIC);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            let d = u32::try_from(d).map_err(|_| Error::DimOverflow(vec![d as u64]))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 5 {
            return Err(Error::Truncated {
                expected: 5,
                found: bytes.len(),
            });
        }
        if &bytes[..4] != TEN1_MAGIC {
            return Err(Error::BadMagic {
                found: bytes[..4].try_into().unwrap(),
            });
        }
        let rank = bytes[4] as usize;
        let header = 5 + 4 * rank;
        if bytes.len() < header {
            return Err(Error::Truncated {
                expected: header,
                found: bytes.len(),
            });
        }
        let dims: Vec<u64> = bytes[5..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as u64)
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .filter(|n| n.checked_mul(4).and_then(|b| b.checked_add(header)).is_some())
            .ok_or_else(|| Error::DimOverflow(dims.clone()))?;
        let expected = header + 4 * count;
        if bytes.len() < expected {
            return Err(Error::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(Error::TrailingBytes(bytes.len() - expected));
        }
        let data = bytes[header..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(RawTensor {
            dims: dims.into_iter().map(|d| d as usize).collect(),
            data,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

pub fn write_tensor(path: impl AsRef<Path>, t: &ImageTensor) -> Result<()> {
    t.to_raw().write(path)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<ImageTensor> {
    ImageTensor::from_raw(RawTensor::read(path)?)
}

/// Loads an 8/16-bit PNG as a tensor with values scaled into `[0, 1]`.
pub fn read_png(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::param(format!("{}: {other}", path.display())),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, values): (usize, Vec<f32>) = if img.color().has_color() {
        let rgb = img.to_rgb32f();
        (3, rgb.into_raw())
    } else {
        let l = img.to_luma32f();
        (1, l.into_raw())
    };
    // interleaved HWC -> planar CHW
    ImageTensor::from_fn(channels, h, w, |c, y, x| values[(y * w + x) * channels + c])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_round_trip() {
        let t = ImageTensor::new(1, 2, 2, vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        let bytes = t.to_raw().encode().unwrap();
        assert_eq!(&bytes[..5], b"TEN1\x03");
        let back = ImageTensor::from_raw(RawTensor::decode(&bytes).unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = ImageTensor::zeros(1, 1, 1).to_raw().encode().unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(RawTensor::decode(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"TEN1");
        bytes.push(3);
        for d in [2u32, 2, 2] {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        for i in 0..7 {
            bytes.extend_from_slice(&(i as f32).to_le_bytes());
        }
        match RawTensor::decode(&bytes) {
            Err(Error::Truncated { expected, found }) => {
                assert_eq!(expected, 17 + 32);
                assert_eq!(found, 17 + 28);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn dim_overflow() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"TEN1");
        bytes.push(4);
        for _ in 0..4 {
            bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(RawTensor::decode(&bytes), Err(Error::DimOverflow(_))));
    }

    #[test]
    fn rejects_non_finite_and_bad_length() {
        assert!(ImageTensor::new(1, 1, 2, vec![0.0, f32::NAN]).is_err());
        assert!(ImageTensor::new(1, 2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ten");
        let t = ImageTensor::from_fn(3, 4, 5, |c, y, x| (c * 100 + y * 10 + x) as f32 / 1000.0).unwrap();
        write_tensor(&p, &t).unwrap();
        assert_eq!(read_tensor(&p).unwrap(), t);
    }

    proptest! {
        #[test]
        fn encode_decode_identity(c in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
            let mut s = crate::rng::derive_stream(seed, "t", 0);
            let t = ImageTensor::from_fn(c, h, w, |_, _, _| (s.normal() * 10.0) as f32).unwrap();
            let back = ImageTensor::from_raw(RawTensor::decode(&t.to_raw().encode().unwrap()).unwrap()).unwrap();
            prop_assert_eq!(back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back.shape(), t.shape());
        }
    }
}
