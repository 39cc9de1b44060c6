//! Probability functional descent.
//!
//! Minimizes functionals of probability measures on finite spaces by
//! repeatedly estimating an influence function and descending along it.
//! GAN, variational inference and reinforcement learning objectives are all
//! expressed as such functionals.

pub mod divergences;
pub mod engine;
pub mod error;
pub mod estimators;
pub mod functional;
pub mod mdp;
pub mod presets;
pub mod space;
pub mod transport;
pub mod verify;

pub use error::{PfdError, ProbeSide, Result};
pub use functional::{FunctionalHandle, InfluenceVector, ProbabilityFunctional};
pub use space::{FiniteSpace, LogitParam, PfdRng, ProbVector, SignedVector};
