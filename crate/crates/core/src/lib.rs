//! Link-level simulation of RIS-assisted receive quadrature spatial
//! modulation (RQSM) with receive antenna selection.
//!
//! The crate is organized bottom-up:
//!
//! * [`channel`]: Rayleigh channels, COAS selection, subset labels and the
//!   feature vector seen by the learned selector.
//! * [`phy`]: QAM, bit mapping, RIS phase alignment, signal synthesis and ML
//!   detection.
//! * [`dnn`]: the fully connected antenna-selection classifier, its Adam
//!   training loop, dataset generation and checkpoints.
//! * [`complexity`]: real-multiplication counts of both selectors.
//! * [`sim`]: seeded Monte Carlo BER sweeps and CSV output.
//! * [`cli`]: the `rqsm` command line; [`selfcheck`] backs its quick
//!   invariant run.
//!
//! The `book/` directory next to the workspace walks through each of these
//! with runnable snippets; those snippets are compiled as doctests.

pub mod channel;
pub mod cli;
pub mod complexity;
pub mod dnn;
pub mod error;
pub mod phy;
pub mod selfcheck;
pub mod sim;

pub use error::{Error, Result};
pub use num_complex::Complex64;
