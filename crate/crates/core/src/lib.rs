//! Multi-agent LLM fusion over multimodal sensor windows: feature
//! extraction, prompt rendering, chat backends, ConSensus and baseline
//! protocols, and evaluation.

pub mod backend;
pub mod dataset;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod model;
pub mod prompts;
pub mod protocols;
