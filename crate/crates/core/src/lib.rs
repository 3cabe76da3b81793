//! Emotion inference for text chat from keystroke dynamics and message
//! content: event validation and segmentation, feature extraction, text
//! analysis, seeded classifiers, fusion, evaluation and a synthetic corpus
//! generator.

pub mod classifier;
pub mod corpus;
pub mod evaluation;
pub mod features;
pub mod fusion;
pub mod model;
pub mod seed;
pub mod synth;
pub mod text;
