//! Amplitude-level simulation of a high-speed tunable beam splitter: a
//! Mach-Zehnder interferometer whose splitting ratio is set by a pair of
//! electro-optic modulators driven with opposite polarities, operated on
//! heralded single photons with feed-forward gating.
//!
//! Module map:
//!
//! * [`quantum`]: single-photon mode states and transfer matrices.
//! * [`optics`]: beam splitters, modulators, mirrors and loss as matrices.
//! * [`tbs`]: the tunable splitter, fringe scans and visibility fits.
//! * [`two_photon`]: Hong-Ou-Mandel interference on the tunable splitter.
//! * [`timing`]: discrete-event feed-forward chain and modulator waveforms.
//! * [`phase_lock`]: closed-loop interferometer stabilization.
//! * [`detection`]: click sampling, coincidences and count tables.
//! * [`experiment`]: configuration, validation and artifact-writing runs.
//!
//! Monte Carlo work is spread over a rayon pool when the `parallel` feature
//! is enabled (the default) and runs sequentially otherwise. Random streams
//! are keyed by work-item index, so results do not depend on the number of
//! worker threads.

pub mod detection;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod optics;
pub mod phase_lock;
pub mod quantum;
pub mod tbs;
pub mod timing;
pub mod two_photon;

pub use error::{Error, Result};
pub use num_complex::Complex64;
