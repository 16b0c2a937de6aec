//! Kramers-Kronig (KK) detection of quantum light, with homodyne (HD) and
//! double-homodyne (DHD) references.
//!
//! * [`grid`]: sampled complex envelopes, Fourier conventions, mode algebra.
//! * [`dsp`]: principal-value Hilbert kernel and KK phase/field retrieval.
//! * [`states`]: coherent fields, truncated Fock vectors, single-photon
//!   wavepackets and discrete coherent mixtures.
//! * [`detectors`]: analytic moments and shot-noise Monte Carlo for HD, DHD
//!   and KK receivers.
//! * [`tomography`]: single-photon spectral tomography from click times.
//! * [`mixedphase`]: Stirling-series evaluation of the mean KK phase.
//!
//! Fourier convention: `F(a)(w) = ∫ a(t) e^{+iwt} dt`. A field `e^{-i w0 t}`
//! with `w0 > 0` therefore sits at positive frequency.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detectors;
pub mod dsp;
pub mod error;
pub mod grid;
pub mod io;
pub mod mixedphase;
pub mod states;
pub mod tomography;

pub use error::{KkError, Result};
pub use grid::{ComplexSignal, SpectralSignal, TimeGrid};
pub use num_complex::Complex64;
