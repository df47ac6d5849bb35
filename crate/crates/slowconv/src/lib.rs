//! Constructions that force ergodic averages to converge arbitrarily slowly,
//! together with machine-checked numeric certificates for every claimed
//! inequality.
//!
//! The library works on finite probability spaces: atoms `0..n` carrying
//! positive weights that sum to one. Dynamics are measure-preserving
//! permutations of the atoms (single maps, commuting tuples acting as a
//! `Z^d` group, or discretized flows). On top of these it provides
//!
//! * averaging operators — Cesàro averages along orbits, weighted group
//!   averages, flow-measure averages, truncated and kernel-smoothed time
//!   averages ([`averaging`]);
//! * structured set constructions — towers of disjoint translates, nearly
//!   flow-invariant bands, `(F, c)`-invariant cube unions on torus grids
//!   ([`towers`]);
//! * adversarial pipelines ([`adversary`]) which, given a target rate
//!   `a_n -> 0`, build sets or functions whose average deviations stay
//!   *above* `a_n` at prescribed indices, emitting a [`certificate::Certificate`]
//!   for each inequality actually verified on the realized model.
//!
//! Everything is deterministic: summation order is fixed, no parallelism is
//! used, and identical inputs produce bitwise-identical outputs.

pub mod adversary;
pub mod averaging;
pub mod certificate;
pub mod measure;
pub mod rates;
mod sum;
pub mod systems;
pub mod towers;

/// Hard cap on the number of atoms in a space. Permutations are stored as
/// `u32` tables, and pipeline runtimes grow linearly in the atom count, so
/// this bound keeps worst-case memory and time predictable.
pub const MAX_ATOMS: usize = 10_000_000;

/// Absolute tolerance for "the weights sum to one" checks.
pub const MASS_TOL: f64 = 1e-12;

/// Default strict-inequality margin for certificates: `lhs > rhs` is only
/// certified when `lhs > rhs + eta`.
pub const DEFAULT_ETA: f64 = 1e-10;

/// Errors shared by all constructions and pipelines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two objects built over different probability spaces were combined.
    #[error("operands live on different probability spaces")]
    SpaceMismatch,

    /// An argument fails its documented validity requirement.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Inputs are individually valid but violate a precondition of the
    /// operation (e.g. a map that does not preserve the measure).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The requested construction cannot be realized on the given model at
    /// the given parameters (the space is too small, the budget too tight,
    /// or a search exhausted its grid).
    #[error("construction infeasible: {0}")]
    Infeasible(String),

    /// A pipeline ran to completion but at least one certificate inequality
    /// failed on the realized model.
    #[error("certificate failure: {0}")]
    CertificateFailure(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
