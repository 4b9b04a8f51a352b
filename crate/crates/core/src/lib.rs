//! Adversarially robust estimation of frequency moments over turnstile streams.
//!
//! The estimator keeps the frequency vector explicitly while it is sparse and
//! answers exactly; once the vector becomes dense it switches to rate-limited
//! queries against a differentially private ensemble of classical linear
//! sketches, and switches back through exact sparse recovery.
//!
//! Module map:
//! - [`stream`]: updates, sparse vectors, the exact moment oracle, flip number.
//! - [`oblivious`]: classical (non-robust) F0, F2 and p-stable sketches.
//! - [`recovery`]: exact k-sparse recovery by verified IBLT peeling.
//! - [`dp_median`]: exponential-mechanism private median over a value grid.
//! - [`wrapper`]: the q-query robust wrapper around an ensemble of sketches.
//! - [`robust`]: the regime-switching robust moment estimator.
//! - [`harness`]: the adaptive adversary game, built-in adversaries, transcripts.

pub mod dp_median;
pub mod error;

pub mod harness;
pub mod hashing;
pub mod oblivious;
pub mod par;
pub mod recovery;
pub mod robust;
pub mod stream;
pub mod wrapper;

pub use error::{Error, Result};
pub use stream::{SparseVector, StreamConfig, Update};
