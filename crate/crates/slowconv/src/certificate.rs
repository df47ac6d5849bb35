//! Numeric certificates: one record per inequality actually checked.
//!
//! Every claim a pipeline makes is reduced to a comparison between two
//! realized numbers (never between symbolic bounds), recorded with the
//! comparison mode and margin used. A run passes only if every certificate
//! passes; failed certificates are kept, not discarded, so a failing run
//! shows exactly which inequality broke and by how much.

/// What a certificate asserts about `lhs` versus `rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertTest {
    /// `lhs > rhs + eta` — a strict exceedance with a safety margin.
    StrictAbove,
    /// `lhs ≥ rhs - eta` — a one-sided bound with tolerance.
    AtLeast,
    /// `|lhs - rhs| ≤ eta` — an equality within tolerance.
    Within,
    /// `lhs == rhs` bitwise (`eta` is ignored and conventionally 0).
    Exact,
}

/// Which pipeline claim a certificate checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertKind {
    /// Realized L1 deviation of an average exceeds the target rate.
    Deviation,
    /// The analytic lower bound for that deviation exceeds the target rate.
    AnalyticFloor,
    /// The prescribed rate values sum below the measure budget.
    Budget,
    /// A weighted average vanishes identically on a core set.
    Vanishing,
    /// A core keeps at least the required fraction of its set's measure
    /// under every window translate.
    Invariance,
    /// Two sets are disjoint (their intersection has measure zero).
    Disjoint,
    /// Mass of large deviations exceeds a concentration threshold.
    Concentration,
    /// A deviation threshold dominates the target rate at its index.
    RateDomination,
    /// Orbit averages have settled near the space average (setup check
    /// before a stage perturbs the observable).
    Birkhoff,
    /// A support or exceptional set has the required measure.
    Mass,
    /// An operator output stayed nonnegative.
    Positivity,
    /// An operator acted linearly within tolerance.
    Linearity,
    /// Consecutive rescaled orbit averages differ by the predicted gap.
    Telescope,
    /// Truncation dropped exactly the reported residual mass.
    Truncation,
}

impl CertKind {
    /// Stable lowercase name (used in reports and CSV output).
    pub fn as_str(&self) -> &'static str {
        match self {
            CertKind::Deviation => "deviation",
            CertKind::AnalyticFloor => "analytic_floor",
            CertKind::Budget => "budget",
            CertKind::Vanishing => "vanishing",
            CertKind::Invariance => "invariance",
            CertKind::Disjoint => "disjoint",
            CertKind::Concentration => "concentration",
            CertKind::RateDomination => "rate_domination",
            CertKind::Birkhoff => "birkhoff",
            CertKind::Mass => "mass",
            CertKind::Positivity => "positivity",
            CertKind::Linearity => "linearity",
            CertKind::Telescope => "telescope",
            CertKind::Truncation => "truncation",
        }
    }
}

impl std::fmt::Display for CertKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Optional realized quantities attached to a certificate for reporting.
/// `None` means "not applicable to this certificate".
#[derive(Debug, Clone, Copy, Default)]
pub struct CertContext {
    /// Truncation window half-width.
    pub l_window: Option<f64>,
    /// Stage deviation threshold.
    pub eps_k: Option<f64>,
    /// Stage tower height.
    pub h_k: Option<f64>,
    /// Measure of the stage's structured set (tower, band, or cube union).
    pub m_set: Option<f64>,
    /// Measure of its invariance core.
    pub m_core: Option<f64>,
    /// Measure of the constructed target set.
    pub m_a: Option<f64>,
    /// Mass dropped by truncation.
    pub residual: Option<f64>,
    /// Realized core-to-set measure ratio.
    pub ratio: Option<f64>,
    /// The ratio's required threshold.
    pub threshold: Option<f64>,
}

/// One checked inequality, with everything needed to re-check it.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub kind: CertKind,
    pub test: CertTest,
    /// Construction stage `k` (1-based); 0 for run-global certificates.
    pub stage: usize,
    /// Time index `n(k)` the certificate refers to, when applicable.
    pub n: Option<u64>,
    /// Random-weight trial number, when applicable.
    pub weight_trial: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
    pub eta: f64,
    /// Computed once at construction from `test`; any NaN operand fails.
    pub pass: bool,
    pub context: CertContext,
}

impl Certificate {
    /// Builds a certificate and evaluates its test. NaN on either side
    /// never passes.
    pub fn new(kind: CertKind, test: CertTest, lhs: f64, rhs: f64, eta: f64) -> Self {
        let pass = match test {
            CertTest::StrictAbove => lhs > rhs + eta,
            CertTest::AtLeast => lhs >= rhs - eta,
            CertTest::Within => (lhs - rhs).abs() <= eta,
            CertTest::Exact => lhs == rhs,
        };
        Certificate {
            kind,
            test,
            stage: 0,
            n: None,
            weight_trial: None,
            lhs,
            rhs,
            eta,
            pass,
            context: CertContext::default(),
        }
    }

    /// Tags the certificate with its construction stage.
    pub fn at_stage(mut self, k: usize) -> Self {
        self.stage = k;
        self
    }

    /// Tags the certificate with the time index it refers to.
    pub fn at_n(mut self, n: u64) -> Self {
        self.n = Some(n);
        self
    }

    /// Tags the certificate with a random-weight trial number.
    pub fn at_weight_trial(mut self, trial: usize) -> Self {
        self.weight_trial = Some(trial);
        self
    }

    /// Attaches realized context quantities.
    pub fn with_context(mut self, context: CertContext) -> Self {
        self.context = context;
        self
    }

    /// `lhs - rhs` (positive margins are good for exceedance tests).
    pub fn margin(&self) -> f64 {
        self.lhs - self.rhs
    }
}

/// Whether every certificate in a batch passed.
pub fn all_pass(certs: &[Certificate]) -> bool {
    certs.iter().all(|c| c.pass)
}

/// The first failing certificate, if any.
pub fn first_failure(certs: &[Certificate]) -> Option<&Certificate> {
    certs.iter().find(|c| !c.pass)
}

/// How many certificates in a batch passed.
pub fn pass_count(certs: &[Certificate]) -> usize {
    certs.iter().filter(|c| c.pass).count()
}
