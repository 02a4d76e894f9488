pub mod annotate;
pub mod config;
pub mod eval;
pub mod ground;
pub mod infer;
pub mod kg;
pub mod learn;
pub mod rules;
