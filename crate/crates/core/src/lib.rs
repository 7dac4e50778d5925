//! Speech data augmentation that moves formants independently by warping
//! the phases of LPC synthesis-filter poles.
//!
//! Each frame is analyzed with autocorrelation LPC, inverse-filtered to its
//! residual, and resynthesized through an all-pole filter whose conjugate
//! pole pairs have been rotated by per-utterance random factors. Pole
//! magnitudes are untouched, so the synthesis filter stays stable.
//!
//! ```
//! use lpcaug::augment::{augment_utterance, AugmentConfig, UtteranceSeed};
//! use lpcaug::synth::{synthetic_vowel, VowelSpec};
//!
//! let vowel = synthetic_vowel(&VowelSpec::with_formants(&[500.0, 1500.0, 2500.0]));
//! let seed = UtteranceSeed::new(0, "vowel", 1);
//! let out = augment_utterance(&vowel, &AugmentConfig::default(), &seed).unwrap();
//! assert_eq!(out.buffer.len(), vowel.len());
//! ```

pub mod augment;
pub mod cli;
pub mod corpus;
pub mod lpc;
pub mod poles;
pub mod signal;
pub mod synth;

pub use augment::{augment_frame, augment_utterance, AugmentConfig, UtteranceSeed};
pub use lpc::LpcModel;
pub use poles::{PoleSet, WarpPlan};
pub use signal::AudioBuffer;
