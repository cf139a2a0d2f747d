//! Uniformly globally asymptotically stable ellipsoidal attractors for
//! linear state-feedback loops whose sensors go through a uniform quantizer.
//!
//! The crate is organized bottom-up:
//!
//! * [`linalg`] small dense numerics (spectra, Lyapunov and Riccati solvers);
//! * [`quantizer`] the uniform quantizer, its error map and sector conditions;
//! * [`sdp`] an LMI modeling layer with a self-contained log-barrier solver;
//! * [`analysis`] attractor certification for a given gain;
//! * [`synthesis`] alternating gain/shape design over the projection-lemma LMI;
//! * [`sim`] fixed-step simulation of the discontinuous closed loop.
//!
//! Independent solves (tau grids, trajectory batches) go through [`exec`],
//! which uses rayon when the `parallel` feature is enabled.

pub mod analysis;
pub mod error;
pub mod exec;
pub mod linalg;
pub mod quantizer;
pub mod sdp;
pub mod sim;
pub mod synthesis;
pub mod system;

pub use analysis::{AnalysisOptions, AnalysisResult, Ellipsoid, EllipsoidMetrics, Measure};
pub use error::{Error, Result};
pub use exec::ExecMode;
pub use linalg::{Matrix, SymMatrix, Vector};
pub use quantizer::{QuantizerSpec, SectorMultipliers};
pub use synthesis::{SynthesisConfig, SynthesisOutcome, SynthesisTrace};
pub use system::LtiSystem;
