//! Multi-object tracking by detection with iterative confidence-tier
//! association, observation-centric recovery and smoothing, plus MOT
//! evaluation metrics and a synthetic benchmark generator.

pub mod assignment;
pub mod cli;
pub mod config;
pub mod evaluation;
pub mod geometry;
pub mod motion;
pub mod pipeline;
pub mod reference;
pub mod synth;
