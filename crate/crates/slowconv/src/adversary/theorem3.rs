//! Slow convergence for orbit averages of a nonnegative observable.
//!
//! Given a single-cycle map `T`, an observable `f ≥ 0` with `∫f > 0`, a
//! rate `a_n → 0`, and a budget `ε`, the pipeline cuts `f` down to
//! `f̃ = f · 1_Y` with `m(Y) > 1 − ε` so that at `K` prescribed indices the
//! orbit averages of `f̃` sit far from `∫f̃` on almost the whole space:
//!
//! 1. stage budgets are the dyadic split `ε_k = ε / (3 · 2^k)`, so the
//!    towers' total measure `Σ 3ε_k` stays strictly below `ε`;
//! 2. stage `k` scans a geometric index grid for the smallest `n(k)` where
//!    the averages of the *current* observable concentrate — more than a
//!    `1 − ε_k` fraction of the space within `ε_k` of its integral — at
//!    `n(k)` and every later grid point, and where the side condition
//!    `a_{n(k)} < ε_k` holds;
//! 3. a tower of height `h_k = height_factor · n(k)` and measure `3ε_k` is
//!    stacked (avoiding earlier towers where possible); zeroing `f` on it
//!    drags the average at `n(k)` away from the integral for every atom
//!    that either sits inside the tower (average near zero) or sees the
//!    unchanged concentration (integral itself dropped by ≈ `3ε_k ∫f`);
//!    if the measured exceedance fraction misses `1 − ε_k`, the height is
//!    escalated tenfold and the stage retried while a tower still fits;
//! 4. after all `K` stages, every concentration certificate is re-measured
//!    against the final `f̃`, and a per-atom summary counts at how many
//!    prescribed indices each atom's deviation exceeds the rate value.
//!
//! The concentration certificates test two-sided deviation
//! `|avg − ∫f̃| > ε_k`: atoms inside stage `k`'s own tower see averages
//! near zero — *below* the integral — so a positive-side-only test could
//! never clear `1 − ε_k` once the tower holds measure `3ε_k > ε_k`. The
//! per-atom summary is two-sided by default for the same reason and can be
//! switched one-sided.

use crate::averaging::cesaro;
use crate::certificate::{all_pass, CertContext, CertKind, CertTest, Certificate};
use crate::measure::{MSet, Obs};
use crate::rates::RateSeq;
use crate::systems::Automorphism;
use crate::towers::{build_tower_avoiding, Tower};
use crate::{Error, Result, DEFAULT_ETA};

use super::BudgetPlan;

/// Tuning knobs for [`theorem3_construct`].
#[derive(Debug, Clone)]
pub struct Theorem3Options {
    /// Growth factor of the geometric index grid the concentration search
    /// walks (must exceed 1).
    pub grid_growth: f64,
    /// Tower height as a multiple of the stage index `n(k)`.
    pub height_factor: usize,
    /// Count only positive deviations `avg − ∫f̃ > a_{n(k)}` in the
    /// per-atom summary instead of two-sided ones.
    pub one_sided_summary: bool,
    /// Margin for strict certificate comparisons.
    pub eta: f64,
}

impl Default for Theorem3Options {
    fn default() -> Self {
        Theorem3Options {
            grid_growth: 1.5,
            height_factor: 100,
            one_sided_summary: false,
            eta: DEFAULT_ETA,
        }
    }
}

/// One stage of a [`Theorem3Run`].
#[derive(Debug, Clone)]
pub struct Theorem3Stage {
    /// Prescribed index `n(k)`.
    pub n: u64,
    /// Stage budget `ε_k = ε / (3 · 2^k)`.
    pub eps_k: f64,
    /// Rate value `a_{n(k)}`.
    pub rate_value: f64,
    /// Final tower height (after escalations).
    pub height: usize,
    /// Number of tenfold height escalations the stage needed.
    pub escalations: usize,
    /// Measure of the tower footprint (base and all levels).
    pub tower_measure: f64,
    /// Exceedance fraction measured right after the stage's tower was
    /// placed (the final certificates re-measure against the final `f̃`).
    pub provisional_fraction: f64,
}

/// Per-atom exceedance statistics of a [`Theorem3Run`].
#[derive(Debug, Clone)]
pub struct ExceedanceSummary {
    /// Whether deviations were counted one-sided.
    pub one_sided: bool,
    /// `tail_mass[c]` = measure of atoms whose deviation exceeds the rate
    /// value at `c` or more of the prescribed indices (`c = 0 ..= K`).
    pub tail_mass: Vec<f64>,
    /// Count the union bound guarantees: all `K` indices.
    pub threshold_count: usize,
    /// Measure of atoms exceeding at `threshold_count` or more indices.
    pub mass_at_threshold: f64,
    /// Measure of atoms exceeding at every prescribed index.
    pub mass_all_indices: f64,
}

/// Result of [`theorem3_construct`].
#[derive(Debug, Clone)]
pub struct Theorem3Run {
    /// The surviving set `Y` (complement of all tower footprints).
    pub y: MSet,
    /// The cut observable `f̃ = f · 1_Y`.
    pub f_tilde: Obs,
    /// Integral of `f̃`.
    pub integral: f64,
    /// The dyadic budget split and chosen indices.
    pub plan: BudgetPlan,
    /// Per-stage records.
    pub stages: Vec<Theorem3Stage>,
    /// The towers, in construction order.
    pub towers: Vec<Tower>,
    /// Every certificate measured against the final `f̃`.
    pub certificates: Vec<Certificate>,
    /// Per-atom exceedance statistics.
    pub summary: ExceedanceSummary,
    /// Whether every certificate passed.
    pub pass: bool,
}

/// Cut `f` down to `f̃ = f · 1_Y`, `m(Y) > 1 − ε`, so orbit averages of
/// `f̃` deviate from `∫f̃` by more than `ε_k > a_{n(k)}` on more than a
/// `1 − ε_k` fraction of the space at each of `k_stages` chosen indices.
///
/// Requires `f ≥ 0` with `∫f > 0`, `0 < ε < 1`, and a single-cycle map.
/// Stages whose concentration search or side condition cannot be satisfied
/// on the index grid surface as [`Error::Infeasible`] naming the blocking
/// condition; certificate failures that survive height escalation are
/// returned as a run with `pass = false`.
pub fn theorem3_construct(
    map: &Automorphism,
    f: &Obs,
    rates: &RateSeq,
    eps: f64,
    k_stages: usize,
    opts: &Theorem3Options,
) -> Result<Theorem3Run> {
    if !f.space().same_space(map.space()) {
        return Err(Error::SpaceMismatch);
    }
    if f.min_value() < 0.0 {
        return Err(Error::InvalidArgument(
            "observable must be nonnegative".into(),
        ));
    }
    if f.integral() <= 0.0 {
        return Err(Error::InvalidArgument(
            "observable must have positive integral".into(),
        ));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "budget eps must lie in (0, 1), got {eps}"
        )));
    }
    if !(opts.grid_growth > 1.0 && opts.grid_growth.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "grid growth must exceed 1, got {}",
            opts.grid_growth
        )));
    }
    if opts.height_factor == 0 {
        return Err(Error::InvalidArgument(
            "height factor must be at least 1".into(),
        ));
    }
    if !(opts.eta >= 0.0 && opts.eta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "margin eta must be finite and nonnegative, got {}",
            opts.eta
        )));
    }
    let space = map.space();
    if k_stages == 0 {
        return Ok(Theorem3Run {
            y: MSet::full(space),
            f_tilde: f.clone(),
            integral: f.integral(),
            plan: BudgetPlan {
                eps,
                eps_k: Vec::new(),
                indices: Vec::new(),
                l_windows: Vec::new(),
            },
            stages: Vec::new(),
            towers: Vec::new(),
            certificates: Vec::new(),
            summary: ExceedanceSummary {
                one_sided: opts.one_sided_summary,
                tail_mass: vec![1.0],
                threshold_count: 0,
                mass_at_threshold: 1.0,
                mass_all_indices: 1.0,
            },
            pass: true,
        });
    }
    if !map.is_single_cycle() {
        return Err(Error::Precondition(
            "map must act as a single cycle for tower placement".into(),
        ));
    }

    let n_atoms = space.len();
    let grid = index_grid(opts.grid_growth, n_atoms);
    let eta = opts.eta;

    let mut certificates: Vec<Certificate> = Vec::new();
    let mut stages: Vec<Theorem3Stage> = Vec::with_capacity(k_stages);
    let mut towers: Vec<Tower> = Vec::with_capacity(k_stages);
    let mut footprints = MSet::empty(space);
    let mut bases = MSet::empty(space);
    let mut eps_ks: Vec<f64> = Vec::with_capacity(k_stages);
    let mut indices: Vec<u64> = Vec::with_capacity(k_stages);

    for k in 1..=k_stages {
        let eps_k = eps / (3.0 * 2f64.powi(k as i32));
        eps_ks.push(eps_k);

        let y_k = footprints.complement();
        let f_k = f.restrict(&y_k)?;
        let integral_k = f_k.integral();
        if integral_k <= 0.0 {
            return Err(Error::Infeasible(format!(
                "stage {k}: earlier towers removed the observable's entire \
                 support"
            )));
        }

        // Concentration search: smallest grid index where this and every
        // later grid point keeps a > 1 - eps_k fraction within eps_k of
        // the integral, and where the rate has already dropped below eps_k.
        let fracs: Vec<f64> = grid
            .iter()
            .map(|&n| concentration_fraction(map, &f_k, integral_k, n, eps_k))
            .collect::<Result<_>>()?;
        let mut suffix_ok = vec![false; grid.len()];
        let mut all_later = true;
        for i in (0..grid.len()).rev() {
            all_later = all_later && fracs[i] > 1.0 - eps_k;
            suffix_ok[i] = all_later;
        }
        let first_concentrated = suffix_ok.iter().position(|&ok| ok).ok_or_else(|| {
            Error::Infeasible(format!(
                "stage {k}: orbit averages of the current observable never \
                 concentrate within eps_k = {eps_k} on the sampled index grid \
                 (largest grid index {})",
                grid.last().copied().unwrap_or(0)
            ))
        })?;
        let chosen = (first_concentrated..grid.len())
            .find(|&i| rates.at(grid[i]) < eps_k)
            .ok_or_else(|| {
                let best = rates.at(grid[grid.len() - 1]);
                Error::Infeasible(format!(
                    "stage {k}: side condition fails — the rate value stays at \
                     or above eps_k = {eps_k} at every concentrated index \
                     (smallest rate value on the grid: {best})"
                ))
            })?;
        let n_k = grid[chosen];
        let a_nk = rates.at(n_k);
        indices.push(n_k as u64);

        let ctx = CertContext {
            eps_k: Some(eps_k),
            ..CertContext::default()
        };
        certificates.push(
            Certificate::new(
                CertKind::Birkhoff,
                CertTest::StrictAbove,
                fracs[chosen],
                1.0 - eps_k,
                eta,
            )
            .at_stage(k)
            .at_n(n_k as u64)
            .with_context(ctx),
        );
        certificates.push(
            Certificate::new(CertKind::RateDomination, CertTest::StrictAbove, eps_k, a_nk, eta)
                .at_stage(k)
                .at_n(n_k as u64)
                .with_context(ctx),
        );

        // Tower placement with tenfold height escalation while the
        // provisional exceedance certificate fails and a tower still fits.
        let mut height = opts.height_factor.checked_mul(n_k).ok_or_else(|| {
            Error::InvalidArgument("tower height overflows".into())
        })?;
        let mut escalations = 0usize;
        let mut accepted: Option<(Tower, f64)> = None;
        loop {
            match build_tower_chain(map, height, 3.0 * eps_k, &footprints, &bases) {
                Ok(tower) => {
                    let trial_footprint =
                        footprints.union(&tower.base().union(tower.body())?)?;
                    let f_trial = f.restrict(&trial_footprint.complement())?;
                    let frac =
                        exceedance_fraction(map, &f_trial, f_trial.integral(), n_k, eps_k)?;
                    let ok = frac > 1.0 - eps_k + eta;
                    accepted = Some((tower, frac));
                    if ok {
                        break;
                    }
                }
                Err(Error::Infeasible(msg)) => {
                    if accepted.is_some() {
                        break; // keep the last tower; its certificate fails honestly
                    }
                    return Err(Error::Infeasible(format!(
                        "stage {k}: no tower of height {height} and measure \
                         {} fits: {msg}",
                        3.0 * eps_k
                    )));
                }
                Err(other) => return Err(other),
            }
            match height.checked_mul(10) {
                Some(next) if next <= n_atoms => {
                    height = next;
                    escalations += 1;
                }
                _ => break,
            }
        }
        let (tower, provisional_fraction) =
            accepted.expect("escalation loop always records a built tower");
        let footprint = tower.base().union(tower.body())?;
        footprints = footprints.union(&footprint)?;
        bases = bases.union(tower.base())?;
        stages.push(Theorem3Stage {
            n: n_k as u64,
            eps_k,
            rate_value: a_nk,
            height: tower.height(),
            escalations,
            tower_measure: footprint.measure(),
            provisional_fraction,
        });
        towers.push(tower);
    }

    // Final verification against the finished observable.
    let y = footprints.complement();
    let f_tilde = f.restrict(&y)?;
    let integral = f_tilde.integral();
    let m_y = y.measure();
    let eps_total: f64 = crate::sum::neumaier_sum(&eps_ks);

    certificates.push(
        Certificate::new(CertKind::Mass, CertTest::StrictAbove, m_y, 1.0 - eps, eta)
            .with_context(CertContext {
                m_set: Some(m_y),
                ..CertContext::default()
            }),
    );
    let spent: f64 =
        crate::sum::neumaier_sum(&stages.iter().map(|s| s.tower_measure).collect::<Vec<_>>());
    certificates.push(Certificate::new(
        CertKind::Budget,
        CertTest::StrictAbove,
        eps,
        spent,
        0.0,
    ));

    let mut exceed_counts = vec![0usize; n_atoms];
    for (k, stage) in stages.iter().enumerate() {
        let n_k = stage.n as usize;
        let eps_k = stage.eps_k;
        let avg = cesaro(map, &f_tilde, n_k)?;
        let frac = mass_where(space, |x| (avg.value(x) - integral).abs() > eps_k);
        certificates.push(
            Certificate::new(
                CertKind::Concentration,
                CertTest::StrictAbove,
                frac,
                1.0 - eps_k,
                eta,
            )
            .at_stage(k + 1)
            .at_n(stage.n)
            .with_context(CertContext {
                eps_k: Some(eps_k),
                h_k: Some(stage.height as f64),
                m_set: Some(stage.tower_measure),
                ..CertContext::default()
            }),
        );
        for (x, count) in exceed_counts.iter_mut().enumerate() {
            let dev = avg.value(x) - integral;
            let exceeds = if opts.one_sided_summary {
                dev > stage.rate_value
            } else {
                dev.abs() > stage.rate_value
            };
            if exceeds {
                *count += 1;
            }
        }
    }

    let tail_mass: Vec<f64> = (0..=k_stages)
        .map(|c| mass_where(space, |x| exceed_counts[x] >= c))
        .collect();
    let summary = ExceedanceSummary {
        one_sided: opts.one_sided_summary,
        tail_mass: tail_mass.clone(),
        threshold_count: k_stages,
        mass_at_threshold: tail_mass[k_stages],
        mass_all_indices: tail_mass[k_stages],
    };
    certificates.push(
        Certificate::new(
            CertKind::Mass,
            CertTest::AtLeast,
            summary.mass_all_indices,
            1.0 - eps_total,
            eta,
        )
        .with_context(CertContext {
            eps_k: Some(eps_total),
            ..CertContext::default()
        }),
    );

    let pass = all_pass(&certificates);
    Ok(Theorem3Run {
        y,
        f_tilde,
        integral,
        plan: BudgetPlan {
            eps,
            eps_k: eps_ks,
            indices,
            l_windows: Vec::new(),
        },
        stages,
        towers,
        certificates,
        summary,
        pass,
    })
}

/// Geometric index grid `1, …` growing by `growth` (at least +1 per step),
/// capped at the space size.
fn index_grid(growth: f64, n_atoms: usize) -> Vec<usize> {
    let mut grid = vec![1usize];
    loop {
        let last = *grid.last().expect("grid starts nonempty");
        let scaled = (last as f64 * growth).ceil() as usize;
        let next = scaled.max(last + 1);
        if next > n_atoms {
            return grid;
        }
        grid.push(next);
    }
}

/// Fraction of the space whose `n`-step orbit average of `f` lies strictly
/// within `eps_k` of `integral`.
fn concentration_fraction(
    map: &Automorphism,
    f: &Obs,
    integral: f64,
    n: usize,
    eps_k: f64,
) -> Result<f64> {
    let avg = cesaro(map, f, n)?;
    Ok(mass_where(map.space(), |x| {
        (avg.value(x) - integral).abs() < eps_k
    }))
}

/// Fraction of the space whose `n`-step orbit average of `f` deviates from
/// `integral` by strictly more than `eps_k`.
fn exceedance_fraction(
    map: &Automorphism,
    f: &Obs,
    integral: f64,
    n: usize,
    eps_k: f64,
) -> Result<f64> {
    let avg = cesaro(map, f, n)?;
    Ok(mass_where(map.space(), |x| {
        (avg.value(x) - integral).abs() > eps_k
    }))
}

fn mass_where(
    space: &crate::measure::ProbSpace,
    pred: impl FnMut(usize) -> bool,
) -> f64 {
    MSet::from_pred(space, pred).measure()
}

/// Builds a tower avoiding earlier footprints where possible: first all of
/// them, then just the bases, then nothing.
fn build_tower_chain(
    map: &Automorphism,
    height: usize,
    mu: f64,
    footprints: &MSet,
    bases: &MSet,
) -> Result<Tower> {
    if footprints.count() > 0 {
        match build_tower_avoiding(map, height, mu, footprints) {
            Ok(t) => return Ok(t),
            Err(Error::Infeasible(_)) => {}
            Err(e) => return Err(e),
        }
        match build_tower_avoiding(map, height, mu, bases) {
            Ok(t) => return Ok(t),
            Err(Error::Infeasible(_)) => {}
            Err(e) => return Err(e),
        }
    }
    build_tower_avoiding(map, height, mu, &MSet::empty(map.space()))
}
