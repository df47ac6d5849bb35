//! Adversarial pipelines: constructions that force averages to converge
//! slower than any prescribed rate, certified end to end.
//!
//! Each pipeline takes a rate sequence `a_n → 0`, plans a measure budget,
//! builds structured sets (bands, cube unions, towers), and then *measures*
//! every inequality the construction promises on the realized model,
//! emitting one [`Certificate`] per comparison:
//!
//! * [`theorem1_construct`] — time-measure averages along a flow: carves a
//!   target set `A` out of `A'` so the L1 deviation of the `ν_{n(k)}`
//!   average of `1_A` strictly exceeds `a_{n(k)}` at every prescribed
//!   index, using margin-eroded flow bands and truncation control.
//! * [`lemma_construct`] / [`theorem2_run`] — weighted averages over a
//!   `Z^d` action window: removes `(F_k, c)`-invariant cube unions so the
//!   deviation of *every* admissible weight vector exceeds the rate, with
//!   the average vanishing identically on the invariant cores.
//! * [`theorem3_construct`] — orbit averages of a nonnegative observable:
//!   stacks towers to cut the observable down to `f̃ = f · 1_Y` whose
//!   averages at the prescribed indices deviate from `∫f̃` on almost all
//!   of the space.
//!
//! All three run deterministically (given their inputs) and return
//! everything they measured; failures are carried as data — a run with a
//! failing certificate reports `pass = false` rather than discarding the
//! evidence. Construction-time impossibilities (budgets that cannot be
//! met, searches that exhaust the model) surface as
//! [`Error::Infeasible`](crate::Error::Infeasible) instead.

mod lemma;
mod theorem1;
mod theorem3;

pub use lemma::{
    lemma_construct, theorem2_run, LemmaRun, LemmaStageInput, LemmaStageReport, Theorem2Run,
};
pub use theorem1::{theorem1_construct, Theorem1Run, Theorem1Stage};
pub use theorem3::{
    theorem3_construct, ExceedanceSummary, Theorem3Options, Theorem3Run, Theorem3Stage,
};

use crate::certificate::Certificate;

/// The budget split a pipeline committed to before building anything.
#[derive(Debug, Clone)]
pub struct BudgetPlan {
    /// Total budget `ε` the per-stage amounts must stay strictly below.
    pub eps: f64,
    /// Per-stage amounts: the rate values `a_{n(k)}` for the deviation
    /// pipelines, a dyadic split of `ε` for the tower pipeline.
    pub eps_k: Vec<f64>,
    /// The prescribed indices `n(k)` (or window radii `j(k)`).
    pub indices: Vec<u64>,
    /// Truncation half-widths `L_k` in time units, when the pipeline
    /// truncates time averages (empty otherwise).
    pub l_windows: Vec<f64>,
}

/// Number of passing certificates in a batch — the headline exceedance
/// count a run reports (how many prescribed comparisons were won).
pub fn exceedance_count(certs: &[Certificate]) -> usize {
    crate::certificate::pass_count(certs)
}
