//! Core library for brain-MRI tumor analysis: a 4-class tumor classifier with
//! a frozen feature-extractor backbone, a residual U-Net binary segmenter, the
//! preprocessing and augmentation they share, segmentation/classification
//! metrics, and a seeded training engine (Adam, reduce-on-plateau scheduling,
//! early stopping).
//!
//! Everything in this crate is pure computation on in-memory buffers. File
//! formats, PNG codecs, checkpoint directories, and the CLI live in the
//! companion `neuroscan` crate. The crate is `no_std`-compatible (requires
//! `alloc`); disable the default `std` feature for embedded or wasm use.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod classifier;
pub mod dataset;
pub mod nn;
pub mod error;
pub mod image;
pub mod metrics;
pub mod phantom;
pub mod preprocess;
pub mod rng;
pub mod segmenter;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use image::{ImageTensor, Mask, RawImage, RgbBuffer};
