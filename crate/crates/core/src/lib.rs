//! Image distortions and bias/robustness metrics for image classifiers.
//!
//! The crate generates occlusion and mixing distortions ([`distort`],
//! [`mask`]), runs any classifier reachable through a [`modelio`] provider,
//! and scores the outcome ([`metrics`]): the Data Interference index,
//! CutOcclusion, iOcclusion, affinity and diversity.

pub mod dataset;
pub mod distort;
pub mod error;
pub mod mask;
pub mod metrics;
pub mod modelio;
pub mod report;
pub mod cli;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use dataset::{LabeledDataset, Sample, Split};
pub use error::{Error, Result};
pub use rng::{derive_stream, RngStream, SeededRng};
pub use tensor::{read_tensor, write_tensor, ImageTensor, RawTensor};
