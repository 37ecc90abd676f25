pub mod calibrate;
pub mod cli;
pub mod completion;
pub mod diagnostics;
pub mod distcal;
pub mod error;
pub mod linalg;
pub mod matcore;
pub mod regress;
pub mod synth;

pub use error::{Error, Result};
