//! Group testing with non-uniform item priors.
//!
//! Items are independent Bernoulli variables with known, possibly distinct,
//! probabilities of being defective. A test on a pool of items is positive iff
//! at least one pooled item is defective. The crate provides:
//!
//! * [`priors`]: the prior vector, its entropy and expected defective count,
//!   and the uniform/linear/exponential families used in experiments.
//! * [`partition`]: the pre-partitioned model (measure factor, skewness,
//!   squared-boundary intervals, ample subsets, concentration combining).
//! * [`adaptive`]: nested (laminar) test plans built by maximum-entropy
//!   splitting or from Shannon-Fano / Huffman code trees, and their executor.
//! * [`nonadaptive`]: coupon-collector and block test matrices with the
//!   negative-test elimination decoder.
//! * [`bounds`]: closed-form test-count and error-probability bounds.
//! * [`oracle`]: brute-force verifiers used as ground truth.
//! * [`sim`]: seeded Monte Carlo campaigns, success curves and trend tests.
//! * [`formats`]: JSON and CSV interchange formats.

pub mod adaptive;
pub mod bounds;
pub mod error;
pub mod formats;
pub mod nonadaptive;
pub mod oracle;
pub mod partition;
pub mod priors;
pub mod sim;

mod numeric;

pub use error::{Error, Result};
pub use priors::{PopulationVector, PriorFamily, PriorVector, RecoveredVector};
