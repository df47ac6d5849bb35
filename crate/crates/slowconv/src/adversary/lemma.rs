//! Slow convergence for weighted window averages over a `Z^d` action.
//!
//! The core lemma: if `V` is `(F, c)`-invariant — more than a `c` fraction
//! of `V` sits in atoms whose whole `F`-window stays inside `V` — and `A`
//! is disjoint from `V`, then *every* weighted average over `F` of `1_A`
//! vanishes identically on the invariant core minus `U = ∪_{g∈F} T_g⁻¹A`,
//! so its L1 deviation from `m(A)` is at least `m(core \ U) · m(A)`, which
//! strictly exceeds `c · m(V) · m(A)`. The weights never matter: each atom
//! of the core sees only window values outside `A`.
//!
//! [`lemma_construct`] takes prebuilt invariant sets (re-verifying their
//! invariance independently), carves `A = A' \ ∪ V_k`, and certifies the
//! vanishing, the analytic floor, and the deviation bound for every
//! supplied weight vector.
//!
//! [`theorem2_run`] drives the lemma from a rate sequence: a plain greedy
//! planner walks window radii `j = 1, 2, …`, keeps the radii whose cube
//! unions (of target measure `μ_j = 2 a_j / (c (m(A') − ε))`) fit the
//! remaining budget, and certifies on top of the lemma that each stage's
//! bound `c · m(V_k) · m(A)` strictly exceeds the rate value `a_{j(k)}`.

use crate::certificate::{all_pass, CertContext, CertKind, CertTest, Certificate};
use crate::measure::{MSet, Obs};
use crate::rates::RateSeq;
use crate::systems::{box_window, ZdAction};
use crate::towers::{build_fc_invariant, check_invariance_group, CubeUnion, InvarianceCert};
use crate::{Error, Result};

use super::BudgetPlan;

/// Tolerance when a certificate re-derives one quantity from independently
/// computed parts (analytic floors, decompositions).
const DECOMP_TOL: f64 = 1e-10;

/// Agreement tolerance between a constructor's invariance ratio and the
/// independent recheck of the same set.
const AGREE_TOL: f64 = 1e-12;

/// One prebuilt invariant set handed to [`lemma_construct`]: the window
/// `F_k` (which must contain the identity) and the set `V_k`.
#[derive(Debug, Clone)]
pub struct LemmaStageInput {
    /// Group window `F_k` as explicit elements of `Z^d`.
    pub window: Vec<Vec<i64>>,
    /// The `(F_k, c)`-invariant set `V_k`.
    pub set: MSet,
}

/// Everything [`lemma_construct`] measured about one stage.
#[derive(Debug, Clone)]
pub struct LemmaStageReport {
    /// The window `F_k`.
    pub window: Vec<Vec<i64>>,
    /// Measure of `V_k`.
    pub set_measure: f64,
    /// Independent invariance re-verification of `V_k`.
    pub invariance: InvarianceCert,
    /// Measure of the vanishing region `core_k \ U_k`.
    pub vanish_measure: f64,
    /// Realized L1 deviations, one per weight trial.
    pub deviations: Vec<f64>,
}

/// Result of [`lemma_construct`].
#[derive(Debug, Clone)]
pub struct LemmaRun {
    /// The carved set `A = A' \ ∪ V_k`.
    pub a: MSet,
    /// Measure of `A`.
    pub m_a: f64,
    /// Invariance fraction `c` shared by all stages.
    pub c: f64,
    /// Per-stage records.
    pub stages: Vec<LemmaStageReport>,
    /// Every certificate measured, tagged by stage and weight trial.
    pub certificates: Vec<Certificate>,
    /// Whether every certificate passed.
    pub pass: bool,
}

/// Carve `A ⊆ A'` away from prebuilt `(F_k, c)`-invariant sets and certify
/// that every supplied weighted window average of `1_A` deviates from
/// `m(A)` by strictly more than `c · m(V_k) · m(A)`.
///
/// `trials[t][k]` is the weight vector for stage `k` in trial `t`; its
/// length must match `stages[k].window`. Each window must contain the
/// identity element, and each set must actually pass the independent
/// `(F_k, c)`-invariance check — a set that fails it is a precondition
/// error, not a certificate failure.
pub fn lemma_construct(
    action: &ZdAction,
    stages: &[LemmaStageInput],
    c: f64,
    aprime: &MSet,
    trials: &[Vec<Vec<f64>>],
    eta: f64,
) -> Result<LemmaRun> {
    if !aprime.space().same_space(action.space()) {
        return Err(Error::SpaceMismatch);
    }
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "invariance fraction c must lie in (0, 1), got {c}"
        )));
    }
    let dim = action.dim();
    let identity = vec![0i64; dim];
    for (k, stage) in stages.iter().enumerate() {
        if !stage.set.space().same_space(action.space()) {
            return Err(Error::SpaceMismatch);
        }
        if !stage.window.iter().any(|g| *g == identity) {
            return Err(Error::Precondition(format!(
                "stage {} window must contain the identity element",
                k + 1
            )));
        }
    }
    for (t, trial) in trials.iter().enumerate() {
        if trial.len() != stages.len() {
            return Err(Error::InvalidArgument(format!(
                "trial {t} supplies {} weight vectors for {} stages",
                trial.len(),
                stages.len()
            )));
        }
        for (k, w) in trial.iter().enumerate() {
            if w.len() != stages[k].window.len() {
                return Err(Error::InvalidArgument(format!(
                    "trial {t} stage {}: {} weights for a window of {}",
                    k + 1,
                    w.len(),
                    stages[k].window.len()
                )));
            }
        }
    }

    // Independent invariance re-verification; a failing input is the
    // caller's mistake, not a measured outcome.
    let mut inv_certs: Vec<InvarianceCert> = Vec::with_capacity(stages.len());
    for (k, stage) in stages.iter().enumerate() {
        let cert = check_invariance_group(action, &stage.window, &stage.set, c, eta)?;
        if !cert.pass() {
            return Err(Error::Precondition(format!(
                "stage {} set is not (F, c)-invariant: core fraction {} is \
                 not above c = {c}",
                k + 1,
                cert.ratio()
            )));
        }
        inv_certs.push(cert);
    }

    let mut a = aprime.clone();
    for stage in stages {
        a = a.difference(&stage.set)?;
    }
    if a.count() == 0 {
        return Err(Error::Precondition(
            "removing the invariant sets left A empty; shrink their measures".into(),
        ));
    }
    let m_a = a.measure();
    let ind_a = a.indicator();

    let mut reports: Vec<LemmaStageReport> = Vec::with_capacity(stages.len());
    let mut certificates: Vec<Certificate> = Vec::new();
    for (k, stage) in stages.iter().enumerate() {
        let stage_no = k + 1;
        let cert = &inv_certs[k];
        let m_set = cert.set_measure();

        // U_k = union of the translate preimages of A over the window; on
        // core \ U every window value of 1_A is zero, whatever the weights.
        let mut u = MSet::empty(action.space());
        for g in &stage.window {
            u = u.union(&action.translate_preimage(&a, g)?)?;
        }
        let vanish_region = cert.core().difference(&u)?;
        let vanish_measure = vanish_region.measure();
        let rhs = c * m_set * m_a;
        let overlap = a.intersect(&stage.set)?.measure();

        let ctx = CertContext {
            m_set: Some(m_set),
            m_core: Some(cert.core_measure()),
            m_a: Some(m_a),
            ratio: Some(cert.ratio()),
            threshold: Some(c),
            ..CertContext::default()
        };

        let mut deviations: Vec<f64> = Vec::with_capacity(trials.len());
        for (t, trial) in trials.iter().enumerate() {
            let avg = crate::averaging::weighted_group_average(
                action,
                &stage.window,
                &trial[k],
                &ind_a,
            )?;
            let deviation = avg.l1_dev(m_a);
            let vanish_sup = sup_abs_on(&avg, &vanish_region);
            let floor = vanish_measure * m_a;
            deviations.push(deviation);

            certificates.push(
                Certificate::new(
                    CertKind::Deviation,
                    CertTest::StrictAbove,
                    deviation,
                    rhs,
                    eta,
                )
                .at_stage(stage_no)
                .at_weight_trial(t)
                .with_context(ctx),
            );
            certificates.push(
                Certificate::new(CertKind::Vanishing, CertTest::Exact, vanish_sup, 0.0, 0.0)
                    .at_stage(stage_no)
                    .at_weight_trial(t)
                    .with_context(ctx),
            );
            certificates.push(
                Certificate::new(
                    CertKind::AnalyticFloor,
                    CertTest::AtLeast,
                    deviation,
                    floor,
                    DECOMP_TOL,
                )
                .at_stage(stage_no)
                .at_weight_trial(t)
                .with_context(ctx),
            );
        }

        certificates.push(cert.to_certificate().at_stage(stage_no));
        certificates.push(
            Certificate::new(CertKind::Disjoint, CertTest::Exact, overlap, 0.0, 0.0)
                .at_stage(stage_no)
                .with_context(ctx),
        );

        reports.push(LemmaStageReport {
            window: stage.window.clone(),
            set_measure: m_set,
            invariance: cert.clone(),
            vanish_measure,
            deviations,
        });
    }

    let pass = all_pass(&certificates);
    Ok(LemmaRun {
        a,
        m_a,
        c,
        stages: reports,
        certificates,
        pass,
    })
}

/// Result of [`theorem2_run`]: the lemma run plus the planner's choices
/// and the rate-domination layer.
#[derive(Debug, Clone)]
pub struct Theorem2Run {
    /// The underlying lemma run (carved set, per-trial certificates).
    pub lemma: LemmaRun,
    /// The budget split: indices are the chosen radii `j(k)`, per-stage
    /// amounts are the realized set measures.
    pub plan: BudgetPlan,
    /// Rate values `a_{j(k)}`.
    pub rate_values: Vec<f64>,
    /// The cube unions the planner built.
    pub cubes: Vec<CubeUnion>,
    /// Constructor-side invariance certificates (the lemma re-verifies
    /// through the per-atom route).
    pub constructor_certs: Vec<InvarianceCert>,
    /// The weight vectors used, `trials[t][k]`.
    pub trials: Vec<Vec<Vec<f64>>>,
    /// Combined certificate list: the lemma's plus the rate layer.
    pub certificates: Vec<Certificate>,
    /// Number of stages whose certificates all passed.
    pub exceedance: usize,
    /// Whether every certificate passed.
    pub pass: bool,
}

/// Plan window radii from a rate sequence, build `(F_j, c)`-invariant cube
/// unions within a strict measure budget `ε`, and certify through
/// [`lemma_construct`] that every weighted average misses `m(A)` by more
/// than `a_{j(k)}` at each chosen radius.
///
/// `weights_for(t, k, len)` supplies the weight vector of length `len` for
/// trial `t` at stage `k`; `trial_count` of them are evaluated per stage.
/// Requires a torus grid model (cube unions need grid coordinates),
/// `0 < c < 1`, and `m(A') − ε > 0`.
#[allow(clippy::too_many_arguments)]
pub fn theorem2_run(
    action: &ZdAction,
    rates: &RateSeq,
    c: f64,
    aprime: &MSet,
    eps: f64,
    j_count: usize,
    trial_count: usize,
    mut weights_for: impl FnMut(usize, usize, usize) -> Vec<f64>,
    eta: f64,
) -> Result<Theorem2Run> {
    if !aprime.space().same_space(action.space()) {
        return Err(Error::SpaceMismatch);
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "budget eps must lie in (0, 1), got {eps}"
        )));
    }
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "invariance fraction c must lie in (0, 1), got {c}"
        )));
    }
    let side = action.side().ok_or_else(|| {
        Error::InvalidArgument(
            "cube-union construction needs a torus grid model".into(),
        )
    })?;
    let m_aprime = aprime.measure();
    let m_a_floor = m_aprime - eps;
    if m_a_floor <= 0.0 {
        return Err(Error::Precondition(format!(
            "host set too small: m(A') = {m_aprime} must exceed eps = {eps}"
        )));
    }

    // Plain greedy radius scan: take the smallest radii whose cube unions
    // fit the remaining budget; a candidate that overshoots or cannot be
    // built is skipped, never retried.
    let dim = action.dim();
    let n_atoms = action.space().len() as f64;
    let mut selected: Vec<(usize, Vec<Vec<i64>>, CubeUnion, InvarianceCert)> = Vec::new();
    let mut remaining = eps;
    let mut j = 1usize;
    while selected.len() < j_count {
        let a_j = rates.at(j);
        let mu_j = 2.0 * a_j / (c * m_a_floor);
        if mu_j * n_atoms < 0.5 {
            break; // rounds to zero atoms, and later radii only shrink
        }
        if 2 * j + 2 > side {
            break; // even a unit cube's stride cannot fit the grid
        }
        if mu_j < remaining {
            let window = box_window(dim, j as i64);
            match build_fc_invariant(action, &window, c, mu_j, eta) {
                Ok((cube, cert)) => {
                    let realized = cube.set().measure();
                    if realized < remaining {
                        remaining -= realized;
                        selected.push((j, window, cube, cert));
                    }
                }
                Err(Error::Infeasible(_)) => {}
                Err(other) => return Err(other),
            }
        }
        j += 1;
        if j > 1_000_000 {
            break;
        }
    }
    if selected.len() < j_count {
        return Err(Error::Infeasible(format!(
            "only {} of {j_count} window radii admit invariant cube unions \
             within the remaining budget (eps = {eps}, c = {c})",
            selected.len()
        )));
    }

    let stage_inputs: Vec<LemmaStageInput> = selected
        .iter()
        .map(|(_, window, cube, _)| LemmaStageInput {
            window: window.clone(),
            set: cube.set().clone(),
        })
        .collect();
    let trials: Vec<Vec<Vec<f64>>> = (0..trial_count)
        .map(|t| {
            selected
                .iter()
                .enumerate()
                .map(|(k, (_, window, _, _))| weights_for(t, k, window.len()))
                .collect()
        })
        .collect();

    let lemma = lemma_construct(action, &stage_inputs, c, aprime, &trials, eta)?;

    // Rate layer: each stage's lemma bound must clear its rate value, the
    // two invariance routes must agree, and the budget must hold strictly.
    let mut certificates = lemma.certificates.clone();
    let mut rate_values: Vec<f64> = Vec::with_capacity(selected.len());
    let mut indices: Vec<u64> = Vec::with_capacity(selected.len());
    let mut realized_measures: Vec<f64> = Vec::with_capacity(selected.len());
    for (k, (j, _, cube, cert)) in selected.iter().enumerate() {
        let stage_no = k + 1;
        let a_j = rates.at(*j);
        let m_set = lemma.stages[k].invariance.set_measure();
        let bound = c * m_set * lemma.m_a;
        let ctx = CertContext {
            m_set: Some(m_set),
            m_core: Some(cert.core_measure()),
            m_a: Some(lemma.m_a),
            ratio: Some(cert.ratio()),
            threshold: Some(c),
            ..CertContext::default()
        };
        certificates.push(
            Certificate::new(CertKind::RateDomination, CertTest::StrictAbove, bound, a_j, eta)
                .at_stage(stage_no)
                .at_n(*j as u64)
                .with_context(ctx),
        );
        certificates.push(cert.to_certificate().at_stage(stage_no).at_n(*j as u64));
        certificates.push(
            Certificate::new(
                CertKind::Invariance,
                CertTest::Within,
                cert.ratio(),
                lemma.stages[k].invariance.ratio(),
                AGREE_TOL,
            )
            .at_stage(stage_no)
            .at_n(*j as u64)
            .with_context(ctx),
        );
        rate_values.push(a_j);
        indices.push(*j as u64);
        realized_measures.push(cube.set().measure());
    }
    let spent: f64 = realized_measures.iter().sum();
    certificates.push(Certificate::new(
        CertKind::Budget,
        CertTest::StrictAbove,
        eps,
        spent,
        0.0,
    ));

    let exceedance = (1..=selected.len())
        .filter(|&stage_no| {
            certificates
                .iter()
                .filter(|cert| cert.stage == stage_no)
                .all(|cert| cert.pass)
        })
        .count();
    let pass = all_pass(&certificates);

    let (cubes, constructor_certs) = selected
        .into_iter()
        .map(|(_, _, cube, cert)| (cube, cert))
        .unzip();

    Ok(Theorem2Run {
        lemma,
        plan: BudgetPlan {
            eps,
            eps_k: realized_measures,
            indices,
            l_windows: Vec::new(),
        },
        rate_values,
        cubes,
        constructor_certs,
        trials,
        certificates,
        exceedance,
        pass,
    })
}

/// Largest `|g(x)|` over the atoms of `set`; `0.0` when `set` is empty.
fn sup_abs_on(g: &Obs, set: &MSet) -> f64 {
    let mut sup = 0.0f64;
    for (x, &inside) in set.bits().iter().enumerate() {
        if inside {
            sup = sup.max(g.value(x).abs());
        }
    }
    sup
}
