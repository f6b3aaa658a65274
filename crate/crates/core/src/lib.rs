//! Energy-based interpretation of black-box structured output models.
//!
//! Given a predictor that maps a feature vector to several coupled binary
//! outputs, an [`interpreter::Interpreter`] is trained to pick, for every
//! input, the `k` features that decide one target output. Training goes
//! through a surrogate energy network over `(x, y)`, which lets correlations
//! between outputs shape the explanation.
//!
//! The crate is `no_std` and only needs `alloc`.
#![no_std]

extern crate alloc;

pub mod blackbox;
pub mod diffnet;
pub mod error;
pub mod eval;
pub mod interpreter;
pub mod rng;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
