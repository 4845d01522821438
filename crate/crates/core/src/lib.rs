//! Certification of polynomial dichotomies for nonautonomous linear
//! difference equations `x_{m+1} = A_m x_m` through admissibility.
//!
//! The pipeline works on a finite horizon `N`: [`system`] evaluates the
//! cocycle, [`dichotomy`] extracts the stable/unstable splitting and fits
//! the dichotomy constants, [`admissibility`] realises the operator `T_Z`
//! and its Green-kernel inverse, [`norms`] builds adapted norm families and
//! [`robustness`] checks persistence under small perturbations.

pub mod admissibility;
pub mod dichotomy;
pub mod error;
pub mod io;
pub mod linalg;
pub mod norms;
pub mod oracle;
pub mod robustness;
pub mod splitting;
pub mod system;

pub use admissibility::{BoundedSequence, InvertibilityReport, SpaceTag, TZOperator};
pub use dichotomy::{certify, DichotomyCertificate, DichotomyOptions, Flags};
pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use norms::{BaseNorm, NormKind, NormSequence, NormSpec};
pub use robustness::{PerturbationSpec, Regime, RobustnessReport};
pub use splitting::Splitting;
pub use system::{make_generator, Cocycle, GeneratorSpec, OperatorSequence};
