//! Differentiable time-varying IIR filtering and trainable audio effects.
//!
//! The crate is built around an exact reverse pass for the time-varying
//! all-pole recursion ([`allpole`]): the gradient of a scalar loss with
//! respect to the filter input is itself one pass of the same recursion run
//! backwards with time-shifted coefficients, and the coefficient gradients
//! fall out of the retained output. Everything else layers on top of that
//! kernel:
//!
//! - [`tape`] — a reverse-mode autodiff tape whose nodes include the filtering
//!   kernels, so whole effect chains differentiate end to end;
//! - [`fs`] — a frequency-sampling approximation of the same filters (frozen
//!   per-frame responses, weighted overlap-add) used as a baseline;
//! - [`compressor`] — a feed-forward dynamic range compressor with a
//!   branch-recording attack/release smoother;
//! - [`loss`], [`optim`] — waveform and spectral losses and the optimisers
//!   used by the fitting experiments;
//! - [`experiment`], [`gradcheck`], [`bench`], [`config`] — the reproducible
//!   experiment harness driven by the `diffdsp-cli` binary.

pub mod allpole;
pub mod bench;
pub mod compressor;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod fs;
pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod phaser;
pub mod sigops;
pub mod signal;
pub mod synth;
pub mod tape;
pub mod wav;

pub use error::{FilterError, HarnessError, OptimError, TapeError};
pub use signal::{CoeffTrajectory, ControlSignal, Signal};
pub use tape::{Gradients, NodeId, Shape, Tape};
