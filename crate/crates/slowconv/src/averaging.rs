//! Averaging operators along orbits, group windows, and flows.
//!
//! All operators here are Markov: they send nonnegative functions to
//! nonnegative functions and (up to rounding) preserve constants, and each
//! is realized on the atoms so that every later inequality is checked
//! against what was actually computed.
//!
//! Orbit averages use the cycle decomposition of the map: values are laid
//! out in orbit order per cycle, a doubled compensated prefix table is
//! built once, and each atom's average becomes a window sum (plus
//! whole-cycle wraps), costing `O(atoms)` for the whole space instead of
//! `O(atoms · n)`. For 0/1-valued observables the window sums are exact
//! integers, so the only rounding is the final division.

use std::collections::BTreeMap;

use crate::measure::{MSet, Obs};
use crate::sum::{neumaier_sum_iter, CumSum};
use crate::systems::{Automorphism, DiscreteFlow, ZdAction};
use crate::{Error, Result, MASS_TOL};

/// Relative tolerance for a kernel's sampled mass `Σ h_i · delta` before it
/// is renormalized.
pub const KERNEL_MASS_TOL: f64 = 1e-9;

/// Cesàro average `(1/n) Σ_{i=1..n} f(T^i x)` for every atom `x`.
///
/// Errors if `n == 0` or the observable lives on a different space.
pub fn cesaro(map: &Automorphism, f: &Obs, n: usize) -> Result<Obs> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "a Cesàro average needs at least one term".into(),
        ));
    }
    if !map.space().same_space(f.space()) {
        return Err(Error::SpaceMismatch);
    }
    // Steps 1..=n starting one step ahead of each atom.
    let out = orbit_window_sums(map, f, &[(1, n as i64, 1.0)]);
    let inv = n as f64;
    Ok(Obs::raw(
        f.space(),
        out.into_iter().map(|s| s / inv).collect(),
    ))
}

/// The L1 gap `‖ (n/(n+1)) · P_n f  -  P_{n+1} f ‖₁` between consecutive
/// rescaled Cesàro averages, computed from the realized averages (not from
/// the closed form `‖f‖₁ / (n+1)` it telescopes to).
pub fn telescope_gap(map: &Automorphism, f: &Obs, n: usize) -> Result<f64> {
    let p_n = cesaro(map, f, n)?;
    let p_n1 = cesaro(map, f, n + 1)?;
    let scaled = p_n.scale(n as f64 / (n + 1) as f64)?;
    scaled.l1_distance(&p_n1)
}

/// Weighted average over a finite group window:
/// `(A f)(x) = Σ_g w_g · f(T_g x)`.
///
/// The window elements must be distinct; the weights must be nonnegative,
/// finite, and sum to 1 within [`MASS_TOL`]. Terms accumulate in window
/// order, so results are deterministic.
pub fn weighted_group_average(
    action: &ZdAction,
    window: &[Vec<i64>],
    weights: &[f64],
    f: &Obs,
) -> Result<Obs> {
    if window.is_empty() {
        return Err(Error::InvalidArgument("the averaging window is empty".into()));
    }
    if window.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "window has {} elements but {} weights were given",
            window.len(),
            weights.len()
        )));
    }
    if !action.space().same_space(f.space()) {
        return Err(Error::SpaceMismatch);
    }
    {
        let mut seen = std::collections::HashSet::new();
        for g in window {
            if !seen.insert(g.as_slice()) {
                return Err(Error::InvalidArgument(format!(
                    "window element {g:?} appears more than once"
                )));
            }
        }
    }
    if let Some((i, &w)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| !w.is_finite() || **w < 0.0)
    {
        return Err(Error::InvalidArgument(format!(
            "weight {i} is {w}; weights must be finite and nonnegative"
        )));
    }
    let total = neumaier_sum_iter(weights.iter().copied());
    if (total - 1.0).abs() > MASS_TOL {
        return Err(Error::InvalidArgument(format!(
            "weights sum to {total}, which is off from 1 by more than {MASS_TOL}"
        )));
    }

    let n = f.space().len();
    let vals = f.values();
    let mut out = vec![0.0f64; n];
    for (g, &w) in window.iter().zip(weights) {
        let t = action.translation(g)?;
        let table = t.forward_table();
        for (o, &y) in out.iter_mut().zip(table) {
            *o += w * vals[y as usize];
        }
    }
    Ok(Obs::raw(f.space(), out))
}

/// A finitely supported probability measure on real time points.
///
/// Times are kept sorted and strictly increasing; weights are nonnegative,
/// finite, and sum to 1 within [`MASS_TOL`].
#[derive(Debug, Clone)]
pub struct TimeMeasure {
    times: Vec<f64>,
    weights: Vec<f64>,
}

impl TimeMeasure {
    /// Creates a time measure from `(time, weight)` pairs (any order;
    /// duplicate times are rejected).
    pub fn new(pairs: Vec<(f64, f64)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("a time measure needs at least one atom".into()));
        }
        let mut pairs = pairs;
        for &(t, w) in &pairs {
            if !t.is_finite() {
                return Err(Error::InvalidArgument(format!("time {t} is not finite")));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "weight {w} at time {t} must be finite and nonnegative"
                )));
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pairs.windows(2).any(|p| p[0].0 == p[1].0) {
            return Err(Error::InvalidArgument("duplicate time point in measure".into()));
        }
        let total = neumaier_sum_iter(pairs.iter().map(|p| p.1));
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidArgument(format!(
                "time weights sum to {total}, which is off from 1 by more than {MASS_TOL}"
            )));
        }
        let (times, weights) = pairs.into_iter().unzip();
        Ok(TimeMeasure { times, weights })
    }

    /// The uniform measure on the integer times `a ..= b`.
    pub fn uniform_on_integer_interval(a: i64, b: i64) -> Result<Self> {
        if a > b {
            return Err(Error::InvalidArgument(format!(
                "empty integer interval {a} ..= {b}"
            )));
        }
        let count = (b - a + 1) as usize;
        let w = 1.0 / count as f64;
        Self::new((a..=b).map(|t| (t as f64, w)).collect())
    }

    /// Support points, strictly increasing.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Weights, aligned with [`TimeMeasure::times`].
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of support points.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    /// Always false (construction requires at least one atom).
    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Average against a time measure: `(A f)(x) = Σ_t ν(t) · f(φ_t x)`.
///
/// Times are realized as grid steps via [`DiscreteFlow::steps_for`]; times
/// that land on the same grid step are merged by adding their weights.
pub fn flow_measure_average(flow: &DiscreteFlow, nu: &TimeMeasure, f: &Obs) -> Result<Obs> {
    if !flow.space().same_space(f.space()) {
        return Err(Error::SpaceMismatch);
    }
    let mut by_step: BTreeMap<i64, f64> = BTreeMap::new();
    for (&t, &w) in nu.times().iter().zip(nu.weights()) {
        *by_step.entry(flow.steps_for(t)?).or_insert(0.0) += w;
    }
    Ok(step_weighted_average(flow.step(), &by_step, f))
}

/// Truncation of a time-measure average to the window `|t| ≤ l_window`
/// (inclusive): returns the *unnormalized* truncated average
/// `(Q f)(x) = Σ_{|t| ≤ L} ν(t) · f(φ_t x)` together with the residual mass
/// `Σ_{|t| > L} ν(t)` that was dropped.
pub fn truncated_average(
    flow: &DiscreteFlow,
    nu: &TimeMeasure,
    l_window: f64,
    f: &Obs,
) -> Result<(Obs, f64)> {
    if !(l_window.is_finite() && l_window >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "truncation window must be finite and nonnegative, got {l_window}"
        )));
    }
    if !flow.space().same_space(f.space()) {
        return Err(Error::SpaceMismatch);
    }
    let mut by_step: BTreeMap<i64, f64> = BTreeMap::new();
    let mut dropped: Vec<f64> = Vec::new();
    for (&t, &w) in nu.times().iter().zip(nu.weights()) {
        if t.abs() <= l_window {
            *by_step.entry(flow.steps_for(t)?).or_insert(0.0) += w;
        } else {
            dropped.push(w);
        }
    }
    let residual = neumaier_sum_iter(dropped.into_iter());
    if by_step.is_empty() {
        return Ok((Obs::raw(f.space(), vec![0.0; f.space().len()]), residual));
    }
    Ok((step_weighted_average(flow.step(), &by_step, f), residual))
}

/// A smoothing kernel sampled on a uniform real grid.
///
/// The grid nodes are `r_j = grid_start + j · spacing` for
/// `j = 0 .. heights.len()`, each carrying a height `h(r_j) ≥ 0`. The
/// quadrature mass `Σ_j h(r_j) · spacing` must be within
/// [`KERNEL_MASS_TOL`] of 1; the kernel then stores the *renormalized*
/// quadrature weights `w_j = h(r_j) · spacing / mass`, so averaging against
/// it preserves constants to within ordinary rounding rather than within
/// the sampling error.
#[derive(Debug, Clone)]
pub struct Kernel {
    grid_start: f64,
    spacing: f64,
    weights: Vec<f64>,
}

impl Kernel {
    /// Builds a kernel from heights on a uniform grid (see type docs).
    pub fn new(grid_start: f64, spacing: f64, heights: &[f64]) -> Result<Self> {
        if heights.is_empty() {
            return Err(Error::InvalidArgument("a kernel needs at least one grid node".into()));
        }
        if !grid_start.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "kernel grid start must be finite, got {grid_start}"
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "kernel grid spacing must be finite and positive, got {spacing}"
            )));
        }
        if let Some(&h) = heights.iter().find(|h| !h.is_finite() || **h < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "kernel height {h} must be finite and nonnegative"
            )));
        }
        let mass = neumaier_sum_iter(heights.iter().map(|&h| h * spacing));
        if (mass - 1.0).abs() > KERNEL_MASS_TOL {
            return Err(Error::InvalidArgument(format!(
                "kernel samples have mass {mass}, which is off from 1 by more than {KERNEL_MASS_TOL}"
            )));
        }
        let weights = heights.iter().map(|&h| h * spacing / mass).collect();
        Ok(Kernel {
            grid_start,
            spacing,
            weights,
        })
    }

    /// First grid node `r_0`.
    pub fn grid_start(&self) -> f64 {
        self.grid_start
    }

    /// Grid spacing `Δr`.
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Number of grid nodes.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    /// Always false (kernels have at least one node); provided for idiom.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Renormalized quadrature weights, one per grid node.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Grid node `r_j`.
    pub fn node(&self, j: usize) -> f64 {
        self.grid_start + j as f64 * self.spacing
    }
}

/// Kernel-smoothed average at time scale `t`:
/// `(P_t f)(x) = Σ_j w_j · f(φ_{r_j · t} x)`.
///
/// The grid nodes are pushed forward by `r ↦ r · t` and then realized as
/// flow steps; nodes landing on the same step are merged by adding their
/// weights. `t = 0` collapses every node to time zero and returns `f`
/// itself (the weights sum to 1 by construction).
pub fn kernel_average(flow: &DiscreteFlow, kernel: &Kernel, t: f64, f: &Obs) -> Result<Obs> {
    if !t.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "kernel time scale must be finite, got {t}"
        )));
    }
    if !flow.space().same_space(f.space()) {
        return Err(Error::SpaceMismatch);
    }
    if t == 0.0 {
        return Ok(f.clone());
    }
    let mut by_step: BTreeMap<i64, f64> = BTreeMap::new();
    for (j, &w) in kernel.weights.iter().enumerate() {
        *by_step.entry(flow.steps_for(kernel.node(j) * t)?).or_insert(0.0) += w;
    }
    Ok(step_weighted_average(flow.step(), &by_step, f))
}

/// Exceedance set of a deviation profile: the atoms where
/// `|g(x) - center| > threshold` (strict).
pub fn deviation_exceeds(g: &Obs, center: f64, threshold: f64) -> MSet {
    MSet::from_pred(g.space(), |x| (g.value(x) - center).abs() > threshold)
}

// ---------------------------------------------------------------------------
// Orbit-coordinate engine shared by the operators above.
// ---------------------------------------------------------------------------

/// Computes `out[x] = Σ_runs w · Σ_{i=a..=b} f(T^i x)` for a list of step
/// runs `(a, b, w)` (each a range of consecutive integer steps with one
/// weight), in one pass per cycle.
fn orbit_window_sums(map: &Automorphism, f: &Obs, runs: &[(i64, i64, f64)]) -> Vec<f64> {
    let idx = map.orbit_index();
    let vals = f.values();
    let mut out = vec![0.0f64; vals.len()];
    let mut buf: Vec<f64> = Vec::new();
    for c in 0..idx.num_cycles() {
        let span = idx.cycle_span(c);
        let len = span.len();
        // Cycle values in orbit order, doubled so any window of length
        // ≤ len is contiguous.
        buf.clear();
        buf.extend(span.clone().map(|p| vals[idx.atom_at(p)]));
        buf.extend_from_within(0..len);
        let cs = CumSum::new(buf.iter().copied(), buf.len());
        let cycle_total = cs.window(0, len);
        for &(a, b, w) in runs {
            let m = (b - a + 1) as usize; // run length (validated upstream)
            let q = m / len; // whole wraps around the cycle
            let r = m % len;
            for (off, p) in span.clone().enumerate() {
                let rel = (off as i64 + a).rem_euclid(len as i64) as usize;
                let partial = if r == 0 { 0.0 } else { cs.window(rel, rel + r) };
                let sum = if q == 0 {
                    partial
                } else {
                    (q as f64) * cycle_total + partial
                };
                out[idx.atom_at(p)] += w * sum;
            }
        }
    }
    out
}

/// Average against explicit per-step weights: `Σ_j w_j · f(T^j x)`.
/// Consecutive steps with bitwise-equal weights collapse into window sums;
/// isolated steps gather directly.
fn step_weighted_average(map: &Automorphism, by_step: &BTreeMap<i64, f64>, f: &Obs) -> Obs {
    // Split into maximal runs of consecutive steps with identical weights.
    let mut runs: Vec<(i64, i64, f64)> = Vec::new();
    for (&j, &w) in by_step {
        match runs.last_mut() {
            Some((_, b, rw)) if *b + 1 == j && rw.to_bits() == w.to_bits() => *b = j,
            _ => runs.push((j, j, w)),
        }
    }
    let out = orbit_window_sums(map, f, &runs);
    Obs::raw(f.space(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{MSet, ProbSpace};
    use crate::systems::cyclic_system;

    /// Brute-force reference: averages by explicit pullbacks.
    fn cesaro_naive(map: &Automorphism, f: &Obs, n: usize) -> Obs {
        let space = f.space();
        let mut acc = vec![0.0f64; space.len()];
        let mut g = f.clone();
        for _ in 0..n {
            g = map.pullback(&g).unwrap();
            for (a, v) in acc.iter_mut().zip(g.values()) {
                *a += v;
            }
        }
        Obs::raw(space, acc.into_iter().map(|s| s / n as f64).collect())
    }

    #[test]
    fn cesaro_profile_on_the_eight_cycle() {
        // Averaging the indicator of {0, 1, 2, 3} two steps ahead on the
        // 8-cycle: atoms whose next two steps both land inside average to 1,
        // split atoms to 1/2, far atoms to 0.
        let (space, t) = cyclic_system(8).unwrap();
        let f = MSet::from_indices(&space, [0, 1, 2, 3]).unwrap().indicator();
        let p2 = cesaro(&t, &f, 2).unwrap();
        assert_eq!(p2.values(), &[1.0, 1.0, 0.5, 0.0, 0.0, 0.0, 0.5, 1.0]);
        // And the deviation of that profile from the set's measure is 3/8.
        assert_eq!(p2.l1_dev(f.integral()), 0.375);
    }

    #[test]
    fn cesaro_matches_brute_force_across_wrap_counts() {
        // Two cycles of different lengths; n below, at, and beyond each
        // cycle length exercises the whole-wrap bookkeeping.
        let space = ProbSpace::uniform(7).unwrap();
        let t = Automorphism::new(&space, vec![2, 3, 4, 0, 1, 6, 5]).unwrap();
        let f = Obs::new(&space, vec![0.3, -1.5, 2.0, 0.25, -0.75, 4.0, 1.0]).unwrap();
        for n in [1usize, 2, 3, 4, 5, 7, 11, 23] {
            let fast = cesaro(&t, &f, n).unwrap();
            let slow = cesaro_naive(&t, &f, n);
            for (a, b) in fast.values().iter().zip(slow.values()) {
                assert!((a - b).abs() < 1e-14, "n = {n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn cesaro_rejects_bad_inputs() {
        let (space, t) = cyclic_system(4).unwrap();
        let f = MSet::full(&space).indicator();
        assert!(matches!(cesaro(&t, &f, 0), Err(Error::InvalidArgument(_))));
        let other = ProbSpace::uniform(4).unwrap();
        let g = MSet::full(&other).indicator();
        assert!(matches!(cesaro(&t, &g, 1), Err(Error::SpaceMismatch)));
    }

    #[test]
    fn telescope_gap_equals_the_closed_form() {
        // (n/(n+1)) P_n f - P_{n+1} f collapses to -f(T^{n+1} x)/(n+1), so
        // the gap is ‖f‖₁/(n+1). For the indicator of half the 8-cycle at
        // n = 2 that is (1/2)/3 = 1/6.
        let (space, t) = cyclic_system(8).unwrap();
        let f = MSet::from_indices(&space, [0, 1, 2, 3]).unwrap().indicator();
        let gap = telescope_gap(&t, &f, 2).unwrap();
        assert!((gap - 1.0 / 6.0).abs() < 1e-15);
        // Same identity on a lopsided space with a non-indicator profile.
        let space =
            ProbSpace::new(vec![0.125, 0.125, 0.25, 0.0625, 0.0625, 0.125, 0.125, 0.125]).unwrap();
        let t = Automorphism::new(&space, vec![1, 0, 2, 4, 3, 7, 5, 6]).unwrap();
        let f = Obs::new(&space, vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.25, -0.5, 2.0]).unwrap();
        for n in [1usize, 2, 3, 5, 9] {
            let gap = telescope_gap(&t, &f, n).unwrap();
            let expect = f.l1_norm() / (n + 1) as f64;
            assert!((gap - expect).abs() < 1e-14, "n = {n}: {gap} vs {expect}");
        }
    }

    #[test]
    fn group_average_on_the_four_cycle() {
        // Half weight one step ahead, half two steps ahead, applied to the
        // indicator of {0}: mass lands on atoms 3 and 2 respectively.
        let action = ZdAction::torus(4, 1).unwrap();
        let f = MSet::from_indices(action.space(), [0]).unwrap().indicator();
        let avg =
            weighted_group_average(&action, &[vec![1], vec![2]], &[0.5, 0.5], &f).unwrap();
        assert_eq!(avg.values(), &[0.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn group_average_validates_its_window_and_weights() {
        let action = ZdAction::torus(4, 1).unwrap();
        let f = MSet::full(action.space()).indicator();
        assert!(matches!(
            weighted_group_average(&action, &[], &[], &f),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            weighted_group_average(&action, &[vec![1], vec![1]], &[0.5, 0.5], &f),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            weighted_group_average(&action, &[vec![1], vec![2]], &[0.9, 0.2], &f),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            weighted_group_average(&action, &[vec![1], vec![2]], &[1.5, -0.5], &f),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn time_measure_validation_and_ordering() {
        let nu = TimeMeasure::new(vec![(2.0, 0.25), (-1.0, 0.5), (3.5, 0.25)]).unwrap();
        assert_eq!(nu.times(), &[-1.0, 2.0, 3.5]);
        assert_eq!(nu.weights(), &[0.5, 0.25, 0.25]);
        assert!(TimeMeasure::new(vec![(0.0, 0.5), (0.0, 0.5)]).is_err());
        assert!(TimeMeasure::new(vec![(0.0, 0.7), (1.0, 0.7)]).is_err());
        assert!(TimeMeasure::new(vec![(0.0, -0.5), (1.0, 1.5)]).is_err());
        let u = TimeMeasure::uniform_on_integer_interval(1, 4).unwrap();
        assert_eq!(u.times(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(u.weights(), &[0.25; 4]);
        assert!(TimeMeasure::uniform_on_integer_interval(4, 1).is_err());
    }

    #[test]
    fn uniform_flow_average_matches_the_cesaro_average() {
        // ν uniform on integer times 1..=2 with δ = 1 is exactly the 2-term
        // Cesàro average, produced through the same window engine, so the
        // two routes agree bitwise.
        let (space, t) = cyclic_system(5).unwrap();
        let flow = DiscreteFlow::new(t.clone(), 1.0).unwrap();
        let f = Obs::new(&space, vec![1.0, 0.0, 0.25, 0.75, 0.5]).unwrap();
        let nu = TimeMeasure::uniform_on_integer_interval(1, 2).unwrap();
        let via_flow = flow_measure_average(&flow, &nu, &f).unwrap();
        let via_cesaro = cesaro(&t, &f, 2).unwrap();
        assert_eq!(via_flow.values(), via_cesaro.values());
    }

    #[test]
    fn flow_average_merges_times_on_one_grid_step() {
        // With δ = 1, times 0.1 and 0.2 both round to step 0, and -0.6
        // rounds to step -1.
        let (space, t) = cyclic_system(4).unwrap();
        let flow = DiscreteFlow::new(t.clone(), 1.0).unwrap();
        let f = MSet::from_indices(&space, [0]).unwrap().indicator();
        let nu = TimeMeasure::new(vec![(0.1, 0.25), (0.2, 0.25), (-0.6, 0.5)]).unwrap();
        let avg = flow_measure_average(&flow, &nu, &f).unwrap();
        // 0.5 · f(x) + 0.5 · f(x - 1): atom 0 gets 0.5, atom 1 gets 0.5.
        assert_eq!(avg.values(), &[0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn truncation_reports_the_dropped_mass() {
        // Three quarters at time 0, one quarter far outside the window:
        // truncating at L = 1 keeps mass 3/4 and drops 1/4, so the
        // truncated and full averages differ by (1/4) · m(A) in L1.
        let (space, t) = cyclic_system(8).unwrap();
        let flow = DiscreteFlow::new(t, 1.0).unwrap();
        let a = MSet::from_indices(&space, [0, 3, 5]).unwrap();
        let f = a.indicator();
        let nu = TimeMeasure::new(vec![(0.0, 0.75), (10.0, 0.25)]).unwrap();
        let (q, residual) = truncated_average(&flow, &nu, 1.0, &f).unwrap();
        assert_eq!(residual, 0.25);
        let p = flow_measure_average(&flow, &nu, &f).unwrap();
        let gap = p.l1_distance(&q).unwrap();
        assert!((gap - 0.25 * a.measure()).abs() < 1e-15);
        // The window boundary is inclusive.
        let (_, residual) = truncated_average(&flow, &nu, 10.0, &f).unwrap();
        assert_eq!(residual, 0.0);
    }

    #[test]
    fn kernels_renormalize_their_sampled_mass() {
        let (_, t) = cyclic_system(6).unwrap();
        let flow = DiscreteFlow::new(t, 0.5).unwrap();
        // Box profile: height 0.5 on four grid nodes of spacing 0.5 has
        // quadrature mass 1 exactly.
        let k = Kernel::new(0.0, 0.5, &[0.5; 4]).unwrap();
        assert_eq!(k.weights(), &[0.25; 4]);
        assert_eq!(k.node(3), 1.5);
        // A profile whose quadrature mass is 0.9 is rejected outright...
        assert!(Kernel::new(0.0, 0.5, &[0.45; 4]).is_err());
        // ...but tiny sampling error is absorbed by renormalization, and
        // constants stay constant under the average.
        let k = Kernel::new(0.0, 0.5, &[0.5 + 1e-10, 0.5, 0.5 - 2e-10, 0.5]).unwrap();
        let one = Obs::constant(flow.space(), 1.0).unwrap();
        let avg = kernel_average(&flow, &k, 1.0, &one).unwrap();
        for &v in avg.values() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_averages_rescale_their_grid_by_the_time_parameter() {
        let (space, t) = cyclic_system(8).unwrap();
        let flow = DiscreteFlow::new(t, 1.0).unwrap();
        let f = MSet::from_indices(&space, [0]).unwrap().indicator();
        // Box kernel on nodes r = 0.25, 0.5, 0.75, 1.0 with Δr = 0.25.
        let k = Kernel::new(0.25, 0.25, &[1.0; 4]).unwrap();
        // At scale t = 4 the nodes land on flow times 1, 2, 3, 4, matching
        // a plain orbit average over four steps.
        let scaled = kernel_average(&flow, &k, 4.0, &f).unwrap();
        let plain = cesaro(flow.step(), &f, 4).unwrap();
        assert!(scaled.l1_distance(&plain).unwrap() < 1e-15);
        // At scale t = 1 all four nodes round to single grid steps 0, 1, 1,
        // 1 (ties away from zero), merging weights on step 1.
        let merged = kernel_average(&flow, &k, 1.0, &f).unwrap();
        assert!((merged.value(0) - 0.25).abs() < 1e-15);
        assert!((merged.value(7) - 0.75).abs() < 1e-15);
        // Scale zero returns the observable unchanged.
        let frozen = kernel_average(&flow, &k, 0.0, &f).unwrap();
        assert_eq!(frozen.values(), f.values());
        // Negative scales run the flow backward.
        let reversed = kernel_average(&flow, &k, -4.0, &f).unwrap();
        assert!((reversed.value(1) - 0.25).abs() < 1e-15);
        assert!(kernel_average(&flow, &k, f64::INFINITY, &f).is_err());
    }

    #[test]
    fn deviation_exceedance_is_strict() {
        let space = ProbSpace::uniform(4).unwrap();
        let g = Obs::new(&space, vec![0.0, 0.5, 1.0, 2.0]).unwrap();
        let e = deviation_exceeds(&g, 1.0, 0.5);
        assert_eq!(e.bits(), &[true, false, false, true]);
    }
}
