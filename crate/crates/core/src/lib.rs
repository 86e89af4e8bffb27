//! Label-free 3D semantic segmentation with adaptive noise correction.
//!
//! The pipeline turns class-indexed 2D label maps into per-point pseudo
//! labels ([`labelgen`]), trains a small per-point classifier on them
//! ([`trainer`]), watches each sample's learning curve ([`curvefit`]) and
//! prediction history ([`history`]) to decide when and where labels can be
//! trusted, and refurbishes the rest by cluster-level voting
//! ([`corrector`]). Training switches from a warmup loss to a robust
//! composite once a sample is corrected ([`loss`]).

pub mod cli;
pub mod corrector;
pub mod curvefit;
pub mod eval;
pub mod geometry;
pub mod history;
pub mod labelgen;
pub mod loss;
pub mod scene;
pub mod synth;
pub mod trainer;

pub use scene::{ClassVocabulary, SampleScene, UNLABELED};
