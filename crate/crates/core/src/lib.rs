//! Controllability analysis, control synthesis and Monte-Carlo verification
//! for linear mean-field SDEs driven by a scalar Brownian motion.
//!
//! The controlled state equation is
//!
//! ```text
//! dX = (A1 X + A2 E[X] + B1 u + B2 E[u]) dt + (C E[X] + D1 u + D2 E[u]) dW,   t ∈ [0, T].
//! ```
//!
//! Modules are layered bottom-up: [`linalg`], [`quadrature`] and [`ode`] are
//! numerical primitives; [`analysis`] decides controllability; [`moments`],
//! [`synthesis`], [`exactctrl`] and [`wbsde`] build and check controls;
//! [`simulate`] verifies them by particle Monte Carlo.

pub mod analysis;
pub mod error;
pub mod exactctrl;
pub mod linalg;
pub mod moments;
pub mod noise;
pub mod ode;
pub mod quadrature;
pub mod signal;
pub mod simulate;
pub mod synthesis;
pub mod wbsde;

pub use analysis::{FullSystem, MeanFieldSystem};
pub use error::{Error, Result};
pub use linalg::{GaussianLaw, RealMatrix, RealVector};
pub use noise::DEFAULT_SEED;
pub use signal::ControlSignal;
