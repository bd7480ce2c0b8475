//! Uncertainty-aware blood-pressure estimation from facial pulse signals.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! * [`signals`]: POS rPPG extraction, spatio-temporal maps, pulse derivatives.
//! * [`synth`]: a deterministic generator of subjects, recordings and labels.
//! * [`neural`]: small networks with hand-written reverse-mode gradients,
//!   MC dropout and heteroscedastic two-target heads.
//! * [`uncertainty`]: aleatoric/epistemic decomposition and uncertainty-driven fusion.
//! * [`pipeline`]: subject-disjoint folds, window sampling, training and inference.
//! * [`evaluation`]: MAE, Pearson, Suc10, MASE, BHS grades, confidence curves.

pub mod error;
pub mod evaluation;
pub mod rng;
pub mod signals;
pub mod neural;
pub mod pipeline;
pub mod synth;
pub mod uncertainty;

pub use error::{Error, Result};
