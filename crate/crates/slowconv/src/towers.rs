//! Structured sets: towers, flow bands, and invariant cube unions.
//!
//! Each invariance construction produces a set `V` together with an
//! [`InvarianceCert`]: the *core* `∩_g {x : T_g x ∈ V}` over a prescribed
//! window of translates, its measure ratio against `m(V)`, and a strict
//! pass/fail verdict against a threshold. The constructors size their sets
//! by counting (arc lengths, cube sides, shrink margins) so the ratio is
//! guaranteed to clear the threshold, but the certificate's core is always
//! the realized intersection on the realized set. The
//! [`check_invariance_flow`] / [`check_invariance_group`] verifiers
//! recompute the same core through different code paths (integer window
//! counts along orbits, per-atom translation walks) so a certificate can
//! be reproduced without trusting the constructor's bookkeeping.
//!
//! All constructions are deterministic: placement scans run in a fixed
//! order with no randomness.

use crate::certificate::{CertContext, CertKind, CertTest, Certificate};
use crate::measure::MSet;
use crate::systems::{Automorphism, DiscreteFlow, ZdAction};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Invariance certificates.
// ---------------------------------------------------------------------------

/// Certificate that a set has a large invariant core.
///
/// `core` is the intersection `∩_{g ∈ window} {x : T_g x ∈ V}` of the
/// translate preimages of the certified set over the window; `ratio` is
/// `m(core) / m(V)`; the certificate passes iff `ratio > threshold + eta`.
/// Whenever the window contains the identity, `core ⊆ V`.
#[derive(Debug, Clone)]
pub struct InvarianceCert {
    window: String,
    core: MSet,
    set_measure: f64,
    core_measure: f64,
    ratio: f64,
    threshold: f64,
    eta: f64,
    pass: bool,
    l_window: Option<f64>,
}

impl InvarianceCert {
    fn from_core(
        window: String,
        set: &MSet,
        core: MSet,
        threshold: f64,
        eta: f64,
        l_window: Option<f64>,
    ) -> Result<Self> {
        if set.count() == 0 {
            return Err(Error::InvalidArgument(
                "invariance certification needs a nonempty set".into(),
            ));
        }
        if !(threshold.is_finite() && eta.is_finite() && eta >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "invariance threshold {threshold} and margin {eta} must be finite, \
                 with a nonnegative margin"
            )));
        }
        let set_measure = set.measure();
        let core_measure = core.measure();
        let ratio = core_measure / set_measure;
        let pass = ratio.is_finite() && ratio > threshold + eta;
        Ok(InvarianceCert {
            window,
            core,
            set_measure,
            core_measure,
            ratio,
            threshold,
            eta,
            pass,
            l_window,
        })
    }

    /// Human-readable description of the translate window.
    pub fn window(&self) -> &str {
        &self.window
    }

    /// The realized invariant core `∩_g {x : T_g x ∈ V}`.
    pub fn core(&self) -> &MSet {
        &self.core
    }

    /// Measure of the certified set.
    pub fn set_measure(&self) -> f64 {
        self.set_measure
    }

    /// Measure of the core.
    pub fn core_measure(&self) -> f64 {
        self.core_measure
    }

    /// `m(core) / m(set)`.
    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// The ratio the certificate must strictly clear.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Strictness margin of the comparison.
    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Whether `ratio > threshold + eta`.
    pub fn pass(&self) -> bool {
        self.pass
    }

    /// The certificate as a generic row (for reports and CSV output).
    pub fn to_certificate(&self) -> Certificate {
        Certificate::new(
            CertKind::Invariance,
            CertTest::StrictAbove,
            self.ratio,
            self.threshold,
            self.eta,
        )
        .with_context(CertContext {
            l_window: self.l_window,
            m_set: Some(self.set_measure),
            m_core: Some(self.core_measure),
            ratio: Some(self.ratio),
            threshold: Some(self.threshold),
            ..CertContext::default()
        })
    }
}

// ---------------------------------------------------------------------------
// Towers: unions of consecutive forward translates of a base.
// ---------------------------------------------------------------------------

/// A tower: a base set `B` and the union `V = T(B) ∪ T²(B) ∪ … ∪ T^h(B)`
/// of its first `h` forward translates, with all `h` translates pairwise
/// disjoint.
#[derive(Debug, Clone)]
pub struct Tower {
    base: MSet,
    body: MSet,
    height: usize,
    base_positions: Vec<usize>,
}

impl Tower {
    /// The base `B`.
    pub fn base(&self) -> &MSet {
        &self.base
    }

    /// The body `V = ∪_{i=1..h} T^i B`.
    pub fn body(&self) -> &MSet {
        &self.body
    }

    /// The height `h`.
    pub fn height(&self) -> usize {
        self.height
    }

    /// Orbit positions of the base atoms, in placement order.
    pub fn base_positions(&self) -> &[usize] {
        &self.base_positions
    }

    /// Number of columns (base atoms).
    pub fn columns(&self) -> usize {
        self.base_positions.len()
    }
}

/// Builds a tower of height `height` whose body has measure as close to
/// `mu` as column granularity allows (`⌈mu·N/h⌉` columns, so at most one
/// column-weight above `mu`).
///
/// Requires a single-orbit map. Columns are placed greedily along the
/// orbit from position 0 at stride `h`, so consecutive columns share an
/// endpoint atom between one column's top and the next column's base —
/// the `h` *levels* stay pairwise disjoint.
pub fn build_tower(map: &Automorphism, height: usize, mu: f64) -> Result<Tower> {
    build_tower_avoiding(map, height, mu, &MSet::empty(map.space()))
}

/// Like [`build_tower`], but every level must also avoid the `occupied`
/// set (used to stack several towers). Candidate base positions advance by
/// the height on success and slide forward one position on collision.
pub fn build_tower_avoiding(
    map: &Automorphism,
    height: usize,
    mu: f64,
    occupied: &MSet,
) -> Result<Tower> {
    let space = map.space();
    if !space.same_space(occupied.space()) {
        return Err(Error::SpaceMismatch);
    }
    if height == 0 {
        return Err(Error::InvalidArgument("tower height must be positive".into()));
    }
    if !(mu.is_finite() && mu > 0.0 && mu <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tower measure target must lie in (0, 1], got {mu}"
        )));
    }
    if !map.is_single_cycle() {
        return Err(Error::Precondition(
            "tower construction needs a single-orbit map".into(),
        ));
    }
    let n = space.len();
    let columns = (mu * n as f64 / height as f64).ceil() as usize;
    if columns == 0 || columns * height > n {
        return Err(Error::Infeasible(format!(
            "a tower of {columns} columns of height {height} does not fit in {n} atoms"
        )));
    }

    let idx = map.orbit_index();
    // Occupation over orbit positions: levels of this tower plus the
    // caller's avoid set. Bases may sit on occupied atoms; levels may not.
    let mut taken = vec![false; n];
    for (x, &b) in occupied.bits().iter().enumerate() {
        if b {
            taken[idx.position_of(x)] = true;
        }
    }

    let mut base_positions = Vec::with_capacity(columns);
    let mut p = 0usize;
    while base_positions.len() < columns {
        if p + height > n - 1 {
            return Err(Error::Infeasible(format!(
                "ran out of room after placing {} of {columns} tower columns",
                base_positions.len()
            )));
        }
        if taken[p + 1..=p + height].iter().any(|&t| t) {
            p += 1; // collision: slide one position and retry
            continue;
        }
        for q in p + 1..=p + height {
            taken[q] = true;
        }
        base_positions.push(p);
        p += height;
    }

    let mut base_bits = vec![false; n];
    let mut body_bits = vec![false; n];
    for &bp in &base_positions {
        base_bits[idx.atom_at(bp)] = true;
        for q in bp + 1..=bp + height {
            body_bits[idx.atom_at(q)] = true;
        }
    }
    Ok(Tower {
        base: MSet::raw(space, base_bits),
        body: MSet::raw(space, body_bits),
        height,
        base_positions,
    })
}

// ---------------------------------------------------------------------------
// Flow bands: unions of orbit arcs with a margin-eroded core.
// ---------------------------------------------------------------------------

/// A union of disjoint orbit arcs, with a core shrunk by `j_steps` grid
/// steps at each arc end so that every flow translate up to `j_steps`
/// keeps the core inside the band.
#[derive(Debug, Clone)]
pub struct FlowBand {
    band: MSet,
    core: MSet,
    /// `(start_position, length)` of each arc, in placement order.
    arcs: Vec<(usize, usize)>,
    j_steps: usize,
}

impl FlowBand {
    /// The band (union of arcs).
    pub fn band(&self) -> &MSet {
        &self.band
    }

    /// The core (arcs shrunk by `j_steps` per side). For a union of
    /// disjoint arcs this *is* the intersection of the translate preimages
    /// over the window, so it coincides with the certificate's core.
    pub fn core(&self) -> &MSet {
        &self.core
    }

    /// Arc layout as `(start_position, length)` pairs.
    pub fn arcs(&self) -> &[(usize, usize)] {
        &self.arcs
    }

    /// The per-side shrink, in grid steps.
    pub fn j_steps(&self) -> usize {
        self.j_steps
    }
}

/// Builds a band of orbit arcs with total measure as close to `mu` as atom
/// granularity allows, certified to keep more than a `1 - eps` fraction of
/// its measure in the core under every flow translate with `|t| ≤ l_window`.
///
/// The shrink is `J = round(l_window / delta)` steps per arc side, so each
/// arc needs length at least `⌊2J/eps⌋ + 1` to lose no more than an `eps`
/// fraction to its margins; the atom budget `round(mu·M)` is split into the
/// largest number of arcs of at least that length, placed around the orbit
/// with evenly spread gaps. Returns the band with its passing certificate
/// (threshold `1 - eps`, margin `eta`).
pub fn build_flow_band(
    flow: &DiscreteFlow,
    l_window: f64,
    mu: f64,
    eps: f64,
    eta: f64,
) -> Result<(FlowBand, InvarianceCert)> {
    let mut family = build_flow_band_family(flow, &[(l_window, mu)], eps, eta)?;
    Ok(family.pop().expect("one request yields one band"))
}

/// Builds one band per `(l_window, mu)` request on a *shared* arc skeleton,
/// so the bands nest: every band's arcs start at the same orbit positions,
/// and a band with a smaller measure target lies inside any fatter one.
/// The measure of the union of all bands therefore stays at the largest
/// single target instead of growing with the sum — carving a set away from
/// all of them at once costs only the fattest band.
///
/// Each band still gets its own core (its arcs trimmed by its own window's
/// reach) and its own strict `1 - eps` invariance certificate, exactly as
/// [`build_flow_band`] — which is the one-request special case.
pub fn build_flow_band_family(
    flow: &DiscreteFlow,
    requests: &[(f64, f64)],
    eps: f64,
    eta: f64,
) -> Result<Vec<(FlowBand, InvarianceCert)>> {
    if requests.is_empty() {
        return Ok(Vec::new());
    }
    if !(eps.is_finite() && eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "band margin fraction must lie in (0, 1), got {eps}"
        )));
    }
    let map = flow.step();
    if !map.is_single_cycle() {
        return Err(Error::Precondition(
            "band construction needs a single-orbit flow".into(),
        ));
    }
    let m = map.space().len();

    // Per-request geometry: margin steps, atom budget, and the smallest
    // arc length whose two J-step margins are at most an eps fraction:
    // 2J/len ≤ eps  ⟺  len ≥ 2J/eps.
    let mut margins: Vec<usize> = Vec::with_capacity(requests.len());
    let mut atoms: Vec<usize> = Vec::with_capacity(requests.len());
    let mut min_lens: Vec<usize> = Vec::with_capacity(requests.len());
    for &(l_window, mu) in requests {
        if !(mu.is_finite() && mu > 0.0 && mu <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "band measure target must lie in (0, 1], got {mu}"
            )));
        }
        if !(l_window.is_finite() && l_window >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "band window must be finite and nonnegative, got {l_window}"
            )));
        }
        let j = flow.steps_for(l_window)? as usize;
        let atoms_total = (mu * m as f64).round() as usize;
        if atoms_total == 0 {
            return Err(Error::Infeasible(format!(
                "measure target {mu} rounds to zero atoms on {m}"
            )));
        }
        margins.push(j);
        atoms.push(atoms_total);
        min_lens.push(((2 * j) as f64 / eps).floor() as usize + 1);
    }

    // One arc count must serve every band, so it is capped by the thinnest
    // band's capacity; each band then meets its own length floor.
    let num_arcs = atoms
        .iter()
        .zip(&min_lens)
        .map(|(&a, &l)| a / l)
        .min()
        .expect("requests is nonempty")
        .max(1);
    for (i, (&atoms_total, &min_len)) in atoms.iter().zip(&min_lens).enumerate() {
        let base_len = atoms_total / num_arcs;
        if base_len < min_len {
            return Err(Error::Infeasible(format!(
                "band arcs of length {base_len} cannot keep a 1 - {eps} core with \
                 {}-step margins (need length at least {min_len})",
                margins[i]
            )));
        }
    }

    // The fattest band fixes the skeleton: its arcs and the gaps between
    // them tile the whole orbit, and every other band occupies prefixes of
    // those arcs. Lengths are base / base + 1 with the remainder given to
    // the earliest arcs, so a smaller atom budget always yields pointwise
    // shorter prefixes — that is what makes the family nested.
    let fattest = atoms.iter().max().copied().expect("requests is nonempty");
    let gap_total = m - fattest.min(m);
    if gap_total < num_arcs {
        return Err(Error::Infeasible(format!(
            "no room for gaps: {num_arcs} arcs need {num_arcs} spare atoms, \
             only {gap_total} remain"
        )));
    }
    let skel_base = fattest / num_arcs;
    let skel_rem = fattest % num_arcs;
    let gap_base = gap_total / num_arcs;
    let gap_rem = gap_total % num_arcs;
    let mut starts = Vec::with_capacity(num_arcs);
    let mut start = 0usize;
    for i in 0..num_arcs {
        starts.push(start);
        let len = skel_base + usize::from(i < skel_rem);
        start += len + gap_base + usize::from(i < gap_rem);
    }
    debug_assert_eq!(start, m);

    let idx = map.orbit_index();
    let mut out = Vec::with_capacity(requests.len());
    for (r, &(l_window, _)) in requests.iter().enumerate() {
        let j = margins[r];
        let base_len = atoms[r] / num_arcs;
        let len_rem = atoms[r] % num_arcs;
        let mut band_bits = vec![false; m];
        let mut core_bits = vec![false; m];
        let mut arcs = Vec::with_capacity(num_arcs);
        for (i, &s) in starts.iter().enumerate() {
            let len = base_len + usize::from(i < len_rem);
            for p in s..s + len {
                band_bits[idx.atom_at(p)] = true;
            }
            for p in s + j..s + len - j {
                core_bits[idx.atom_at(p)] = true;
            }
            arcs.push((s, len));
        }

        let band = MSet::raw(map.space(), band_bits);
        let core = MSet::raw(map.space(), core_bits);
        // The shrunk arcs are exactly the intersection of the ±J translate
        // preimages: an atom at least J positions from both ends of its arc
        // has its whole window inside the arc, while any closer atom (or
        // any gap atom) has a window touching a position outside the arc —
        // the skeleton keeps every inter-arc gap at length ≥ 1, and a
        // thinner band's arc is followed by skeleton atoms it does not
        // own, so membership breaks there too. The certificate core is
        // therefore realized, not merely claimed.
        let cert = InvarianceCert::from_core(
            format!("flow times |t| <= {l_window} ({j} grid steps per side)"),
            &band,
            core.clone(),
            1.0 - eps,
            eta,
            Some(l_window),
        )?;
        if !cert.pass() {
            return Err(Error::Infeasible(format!(
                "band core keeps only {} of the band against a 1 - {eps} threshold",
                cert.ratio()
            )));
        }
        out.push((
            FlowBand {
                band,
                core,
                arcs,
                j_steps: j,
            },
            cert,
        ));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Invariant cube unions on torus grids.
// ---------------------------------------------------------------------------

/// A union of equal axis-aligned cubes on a torus grid, with geometric
/// cores shrunk by the window's per-axis reach.
#[derive(Debug, Clone)]
pub struct CubeUnion {
    set: MSet,
    core: MSet,
    /// Corner coordinates of each cube, in placement order.
    corners: Vec<Vec<usize>>,
    cube_side: usize,
    radii: Vec<usize>,
}

impl CubeUnion {
    /// The union of cubes.
    pub fn set(&self) -> &MSet {
        &self.set
    }

    /// The union of geometrically shrunk cores (each cube pulled in by the
    /// window's reach on every axis). This is always *contained in* the
    /// certificate's core — the realized intersection — and equals it when
    /// the window is a full box of translates.
    pub fn core(&self) -> &MSet {
        &self.core
    }

    /// Cube corner coordinates, in placement order.
    pub fn corners(&self) -> &[Vec<usize>] {
        &self.corners
    }

    /// Side length of every cube.
    pub fn cube_side(&self) -> usize {
        self.cube_side
    }

    /// Per-axis reach of the window the cores were shrunk by.
    pub fn radii(&self) -> &[usize] {
        &self.radii
    }
}

/// Per-axis reach of a window under an action's shift vectors: the largest
/// circle distance any window element displaces each grid axis by.
fn window_axis_radii(action: &ZdAction, window: &[Vec<i64>]) -> Result<Vec<usize>> {
    let side = action.side().ok_or_else(|| {
        Error::Precondition("cube construction needs a torus grid action".into())
    })? as i64;
    let shifts = action.shifts().ok_or_else(|| {
        Error::Precondition("cube construction needs a torus grid action".into())
    })?;
    let axes = shifts[0].len();
    let mut radii = vec![0usize; axes];
    for g in window {
        if g.len() != shifts.len() {
            return Err(Error::InvalidArgument(format!(
                "group element has {} coordinates but the action has rank {}",
                g.len(),
                shifts.len()
            )));
        }
        for (a, r) in radii.iter_mut().enumerate() {
            let disp: i128 = g
                .iter()
                .zip(shifts)
                .map(|(&e, s)| e as i128 * s[a] as i128)
                .sum();
            let wrapped = disp.rem_euclid(side as i128) as i64;
            let dist = wrapped.min(side - wrapped) as usize;
            *r = (*r).max(dist);
        }
    }
    Ok(radii)
}

/// Builds a union of cubes on a torus-grid action, certified to keep more
/// than a `c` fraction of its measure in the invariant core under every
/// translate from `window`, with total measure as close to
/// `target_measure` as cube granularity allows.
///
/// Sizing is by counting: each cube side `s` loses the window's per-axis
/// reach `r_a` from both ends of axis `a`, keeping a fraction
/// `Π_a (s - 2 r_a)/s`. A single cube of side `round((target·N)^{1/e})`
/// (`e` grid axes) is preferred when its shrink ratio clears `c` and it
/// fits; otherwise the smallest side clearing `c` is used and the measure
/// target is met in cube count. Cube corners sit on a per-axis stride of
/// `s + 2 r_a + 1`, so no window translate bridges two cubes. The action
/// must be free on the window (verified by table walk).
///
/// The returned certificate's core is the realized intersection of the
/// translate preimages (computed set-by-set, not assumed from geometry),
/// so it is exact even for sparse windows; the certificate must pass with
/// threshold `c` and margin `eta` or the construction errors.
pub fn build_fc_invariant(
    action: &ZdAction,
    window: &[Vec<i64>],
    c: f64,
    target_measure: f64,
    eta: f64,
) -> Result<(CubeUnion, InvarianceCert)> {
    let side = action.side().ok_or_else(|| {
        Error::Precondition("cube construction needs a torus grid action".into())
    })?;
    if !(c.is_finite() && c > 0.0 && c < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "invariance fraction must lie in (0, 1), got {c}"
        )));
    }
    if !(target_measure.is_finite() && target_measure > 0.0 && target_measure <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "measure target must lie in (0, 1], got {target_measure}"
        )));
    }
    if window.is_empty() {
        return Err(Error::InvalidArgument("the invariance window is empty".into()));
    }
    action.check_free(window)?;
    let radii = window_axis_radii(action, window)?;
    let axes = radii.len();
    let max_r = *radii.iter().max().unwrap();

    let n = action.space().len();
    let shrink_ratio = |s: usize| -> f64 {
        radii
            .iter()
            .map(|&r| {
                if s <= 2 * r {
                    0.0
                } else {
                    ((s - 2 * r) as f64) / s as f64
                }
            })
            .product()
    };

    // Preferred side: one cube carrying the whole measure target.
    let single = (target_measure * n as f64)
        .powf(1.0 / axes as f64)
        .round() as usize;
    let single_fits = single >= 1
        && shrink_ratio(single) > c
        && radii.iter().all(|&r| single + 2 * r + 1 <= side);
    let (cube_side, count) = if single_fits {
        (single, 1usize)
    } else {
        // Smallest side whose shrink ratio clears c, by direct scan.
        let mut s = 2 * max_r + 1;
        while s <= side && shrink_ratio(s) <= c {
            s += 1;
        }
        if s > side {
            return Err(Error::Infeasible(format!(
                "no cube side up to the grid side {side} keeps a fraction above \
                 {c} against per-axis reach {radii:?}"
            )));
        }
        let count = ((target_measure * n as f64) / (s as f64).powi(axes as i32))
            .round()
            .max(1.0) as usize;
        (s, count)
    };

    let strides: Vec<usize> = radii.iter().map(|&r| cube_side + 2 * r + 1).collect();
    if let Some((a, &st)) = strides.iter().enumerate().find(|(_, &st)| st > side) {
        return Err(Error::Infeasible(format!(
            "cubes of side {cube_side} with reach-{} separation on axis {a} need \
             a grid side of at least {st}, but the torus side is {side}",
            radii[a]
        )));
    }
    let slots_per_axis: Vec<usize> = strides.iter().map(|&st| side / st).collect();
    let slots_total: u128 = slots_per_axis.iter().map(|&s| s as u128).product();
    if (count as u128) > slots_total {
        return Err(Error::Infeasible(format!(
            "need {count} cubes but only {slots_total} separated slots exist \
             on a side-{side} grid at strides {strides:?}"
        )));
    }

    // Corner of cube i: mixed-radix digits of i over the slot grid.
    let mut set_bits = vec![false; n];
    let mut core_bits = vec![false; n];
    let mut corners = Vec::with_capacity(count);
    let mut cube_offsets: Vec<usize> = vec![0];
    let mut core_offsets: Vec<usize> = vec![0];
    // Flattened offsets of a cube (and its geometric core) relative to its
    // corner.
    for axis in 0..axes {
        let place = (side as u128).pow(axis as u32) as usize;
        let extend = |offsets: &mut Vec<usize>, lo: usize, hi: usize| {
            let prev = std::mem::take(offsets);
            for o in prev {
                for coord in lo..hi {
                    offsets.push(o + coord * place);
                }
            }
        };
        extend(&mut cube_offsets, 0, cube_side);
        extend(&mut core_offsets, radii[axis], cube_side - radii[axis]);
    }
    for i in 0..count {
        let mut rem = i;
        let mut corner = Vec::with_capacity(axes);
        let mut corner_index = 0usize;
        for axis in 0..axes {
            let slot = rem % slots_per_axis[axis];
            rem /= slots_per_axis[axis];
            let coord = slot * strides[axis];
            corner.push(coord);
            corner_index += coord * (side as u128).pow(axis as u32) as usize;
        }
        for &o in &cube_offsets {
            set_bits[corner_index + o] = true;
        }
        for &o in &core_offsets {
            core_bits[corner_index + o] = true;
        }
        corners.push(corner);
    }

    let set = MSet::raw(action.space(), set_bits);
    let geometric_core = MSet::raw(action.space(), core_bits);

    // The certified core is the realized intersection of the translate
    // preimages — a fold over the window. For sparse windows it strictly
    // contains the geometric core, and the ratio only improves.
    let mut realized = MSet::full(action.space());
    for g in window {
        realized = realized.intersect(&action.translate_preimage(&set, g)?)?;
    }
    debug_assert_eq!(
        geometric_core
            .difference(&realized)
            .map(|d| d.count())
            .unwrap_or(usize::MAX),
        0
    );
    let cert = InvarianceCert::from_core(
        format!(
            "group window of {} elements, per-axis reach {:?}",
            window.len(),
            radii
        ),
        &set,
        realized,
        c,
        eta,
        None,
    )?;
    if !cert.pass() {
        return Err(Error::Infeasible(format!(
            "cube cores keep only {} of the set against a {c} threshold",
            cert.ratio()
        )));
    }
    Ok((
        CubeUnion {
            set,
            core: geometric_core,
            corners,
            cube_side,
            radii,
        },
        cert,
    ))
}

// ---------------------------------------------------------------------------
// Independent invariance verification (erosion on the realized sets).
// ---------------------------------------------------------------------------

/// Recomputes the invariant core of `set` under every flow translate with
/// `|t| ≤ l_window` and certifies its measure ratio against `threshold`
/// (strictly, with margin `eta`).
///
/// The core is recomputed from the realized set by integer window counts
/// along each orbit cycle: an atom survives iff all `2J + 1` positions
/// within `J` steps lie in the set. Nothing from any constructor's
/// bookkeeping is reused.
pub fn check_invariance_flow(
    flow: &DiscreteFlow,
    l_window: f64,
    set: &MSet,
    threshold: f64,
    eta: f64,
) -> Result<InvarianceCert> {
    if !flow.space().same_space(set.space()) {
        return Err(Error::SpaceMismatch);
    }
    let j = flow.steps_for(l_window.abs())? as usize;
    let idx = flow.step().orbit_index();
    let n = flow.space().len();
    let mut eroded = vec![false; n];
    let mut buf: Vec<f64> = Vec::new();
    for cyc in 0..idx.num_cycles() {
        let span = idx.cycle_span(cyc);
        let len = span.len();
        let w = 2 * j + 1;
        if w > len {
            // The window wraps the whole cycle: an atom survives only if
            // the entire cycle lies in the set.
            let all_in = span.clone().all(|p| set.contains(idx.atom_at(p)));
            if all_in {
                for p in span.clone() {
                    eroded[idx.atom_at(p)] = true;
                }
            }
            continue;
        }
        buf.clear();
        buf.extend(span.clone().map(|p| f64::from(set.contains(idx.atom_at(p)))));
        buf.extend_from_within(0..len);
        let cs = crate::sum::CumSum::new(buf.iter().copied(), buf.len());
        for (off, p) in span.clone().enumerate() {
            // Window [p - J, p + J] in cycle coordinates; counts of 0/1
            // values are exact integers, so the equality test is exact.
            let rel = (off as i64 - j as i64).rem_euclid(len as i64) as usize;
            if cs.window(rel, rel + w) == w as f64 {
                eroded[idx.atom_at(p)] = true;
            }
        }
    }
    InvarianceCert::from_core(
        format!("flow times |t| <= {l_window} ({j} grid steps per side)"),
        set,
        MSet::raw(flow.space(), eroded),
        threshold,
        eta,
        Some(l_window),
    )
}

/// Recomputes the invariant core of `set` under every group translate from
/// `window` and certifies its measure ratio against `threshold` (strictly,
/// with margin `eta`).
///
/// The core is recomputed atom by atom: `x` survives iff `T_g x ∈ set` for
/// every `g` in the window, walking the realized translation tables
/// directly (no set-level folding, no grid geometry).
pub fn check_invariance_group(
    action: &ZdAction,
    window: &[Vec<i64>],
    set: &MSet,
    threshold: f64,
    eta: f64,
) -> Result<InvarianceCert> {
    if !action.space().same_space(set.space()) {
        return Err(Error::SpaceMismatch);
    }
    if window.is_empty() {
        return Err(Error::InvalidArgument("the invariance window is empty".into()));
    }
    let translations = window
        .iter()
        .map(|g| action.translation(g))
        .collect::<Result<Vec<_>>>()?;
    let n = action.space().len();
    let eroded: Vec<bool> = (0..n)
        .map(|x| translations.iter().all(|t| set.contains(t.apply(x))))
        .collect();
    InvarianceCert::from_core(
        format!("group window of {} elements", window.len()),
        set,
        MSet::raw(action.space(), eroded),
        threshold,
        eta,
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{box_window, cyclic_system, torus_shift_action, ZdAction};

    #[test]
    fn tower_columns_tile_the_hundred_cycle() {
        // Height 10, measure 0.2 on 100 atoms: two columns based at orbit
        // positions 0 and 10, body = atoms 1..=20 exactly.
        let (_, t) = cyclic_system(100).unwrap();
        let tower = build_tower(&t, 10, 0.2).unwrap();
        assert_eq!(tower.base_positions(), &[0, 10]);
        assert_eq!(tower.columns(), 2);
        assert_eq!(tower.height(), 10);
        assert_eq!(tower.body().count(), 20);
        for x in 0..100 {
            assert_eq!(tower.body().contains(x), (1..=20).contains(&x));
        }
        assert!((tower.body().measure() - 0.2).abs() < 1e-15);
        // Levels are pairwise disjoint: body count equals columns · height.
        assert_eq!(tower.body().count(), tower.columns() * tower.height());
    }

    #[test]
    fn stacked_towers_slide_past_each_other() {
        let (_, t) = cyclic_system(100).unwrap();
        let first = build_tower(&t, 10, 0.1).unwrap();
        assert_eq!(first.base_positions(), &[0]);
        let second = build_tower_avoiding(&t, 10, 0.1, first.body()).unwrap();
        assert_eq!(second.base_positions(), &[10]);
        assert!(first.body().is_disjoint(second.body()).unwrap());
    }

    #[test]
    fn tower_capacity_limits() {
        let (_, t) = cyclic_system(100).unwrap();
        // Nine columns of height 10 fit (bases 0, 10, …, 80)…
        assert!(build_tower(&t, 10, 0.9).is_ok());
        // …but a tenth column would need levels beyond the orbit end.
        assert!(matches!(build_tower(&t, 10, 0.91), Err(Error::Infeasible(_))));
        assert!(matches!(build_tower(&t, 0, 0.5), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_tower(&t, 10, 0.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn single_arc_band_with_ten_percent_margin() {
        // 100 atoms, window 2 (J = 2 steps), measure 0.4, margin 0.2:
        // one 40-atom arc whose core drops 2 atoms per side, ratio 0.9.
        let (_, t) = cyclic_system(100).unwrap();
        let flow = DiscreteFlow::new(t, 1.0).unwrap();
        let (band, cert) = build_flow_band(&flow, 2.0, 0.4, 0.2, 1e-10).unwrap();
        assert_eq!(band.arcs(), &[(0, 40)]);
        assert_eq!(band.j_steps(), 2);
        assert_eq!(band.band().count(), 40);
        assert_eq!(band.core().count(), 36);
        assert!(cert.pass());
        assert!((cert.ratio() - 0.9).abs() < 1e-15);
        assert_eq!(cert.core().bits(), band.core().bits());

        // The independent verifier reproduces the certificate bit for bit.
        let check = check_invariance_flow(&flow, 2.0, band.band(), 0.8, 1e-10).unwrap();
        assert!(check.pass());
        assert_eq!(check.core().bits(), cert.core().bits());
        assert_eq!(check.ratio(), cert.ratio());
    }

    #[test]
    fn multi_arc_bands_split_the_budget_evenly() {
        let (_, t) = cyclic_system(1000).unwrap();
        let flow = DiscreteFlow::new(t, 1.0).unwrap();
        let (band, cert) = build_flow_band(&flow, 1.0, 0.5, 0.1, 1e-10).unwrap();
        // Budget 500 atoms, min length 21: 23 arcs.
        assert_eq!(band.arcs().len(), 23);
        let total: usize = band.arcs().iter().map(|&(_, l)| l).sum();
        assert_eq!(total, 500);
        assert_eq!(band.band().count(), 500);
        // Arc lengths differ by at most one.
        let lens: Vec<usize> = band.arcs().iter().map(|&(_, l)| l).collect();
        assert!(lens.iter().all(|&l| l == 21 || l == 22));
        // Core drops 2 atoms per arc.
        assert_eq!(band.core().count(), 500 - 2 * 23);
        assert!(cert.pass());
        let check = check_invariance_flow(&flow, 1.0, band.band(), 0.9, 1e-10).unwrap();
        assert!(check.pass());
        assert_eq!(check.core().bits(), band.core().bits());
        assert_eq!(check.ratio(), cert.ratio());
    }

    #[test]
    fn band_feasibility_limits() {
        let (_, t) = cyclic_system(100).unwrap();
        let flow = DiscreteFlow::new(t, 1.0).unwrap();
        // One arc of 40 atoms cannot afford 10-step margins at eps = 0.2.
        assert!(matches!(
            build_flow_band(&flow, 10.0, 0.4, 0.2, 1e-10),
            Err(Error::Infeasible(_))
        ));
        // No spare atom for a gap.
        assert!(matches!(
            build_flow_band(&flow, 1.0, 1.0, 0.5, 1e-10),
            Err(Error::Infeasible(_))
        ));
        assert!(build_flow_band(&flow, 1.0, 0.4, 0.0, 1e-10).is_err());
    }

    #[test]
    fn single_cube_on_the_thousand_torus() {
        // 1-dimensional grid of 1000 cells, window radius 2, target 0.1:
        // one cube (interval) of 100 cells, core 96, ratio 0.96 > 0.9.
        let action = ZdAction::torus(1000, 1).unwrap();
        let window = box_window(1, 2);
        let (v, cert) = build_fc_invariant(&action, &window, 0.9, 0.1, 1e-10).unwrap();
        assert_eq!(v.cube_side(), 100);
        assert_eq!(v.corners(), &[vec![0]]);
        assert_eq!(v.set().count(), 100);
        assert_eq!(v.core().count(), 96);
        assert!(cert.pass());
        assert!((cert.ratio() - 0.96).abs() < 1e-12);
        // Full-box window: geometric core equals the realized intersection.
        assert_eq!(cert.core().bits(), v.core().bits());
        let check = check_invariance_group(&action, &window, v.set(), 0.9, 1e-10).unwrap();
        assert!(check.pass());
        assert_eq!(check.core().bits(), cert.core().bits());
        assert_eq!(check.ratio(), cert.ratio());
    }

    #[test]
    fn single_square_on_the_hundred_torus() {
        // 2-dimensional grid of side 100, radius 1, target 0.04: one 20×20
        // square, core 18×18 = 324, ratio 0.81 > 0.8.
        let action = ZdAction::torus(100, 2).unwrap();
        let window = box_window(2, 1);
        let (v, cert) = build_fc_invariant(&action, &window, 0.8, 0.04, 1e-10).unwrap();
        assert_eq!(v.cube_side(), 20);
        assert_eq!(v.set().count(), 400);
        assert_eq!(v.core().count(), 324);
        assert!((cert.ratio() - 0.81).abs() < 1e-12);
        let check = check_invariance_group(&action, &window, v.set(), 0.8, 1e-10).unwrap();
        assert!(check.pass());
        assert_eq!(check.ratio(), cert.ratio());
    }

    #[test]
    fn demanding_invariance_grows_the_cube() {
        // At c = 0.97 the preferred 100-cell interval (ratio 0.96) is not
        // invariant enough; the side grows to 134 (ratio 130/134 ≈ 0.9701).
        let action = ZdAction::torus(1000, 1).unwrap();
        let window = box_window(1, 2);
        let (v, cert) = build_fc_invariant(&action, &window, 0.97, 0.1, 1e-10).unwrap();
        assert_eq!(v.cube_side(), 134);
        assert_eq!(v.corners().len(), 1);
        assert!(cert.pass());
    }

    #[test]
    fn sparse_windows_get_exact_intersection_cores() {
        // With the one-sided window {0, 5} the realized intersection of
        // translate preimages is larger than the geometric core, which
        // shrinks the cube by the reach on *both* sides; the certificate
        // uses the realized one, and the verifier reproduces it.
        let action = ZdAction::torus(1000, 1).unwrap();
        let sparse: Vec<Vec<i64>> = vec![vec![0], vec![5]];
        let (v, cert) = build_fc_invariant(&action, &sparse, 0.9, 0.1, 1e-10).unwrap();
        assert!(cert.core().count() > v.core().count());
        let check = check_invariance_group(&action, &sparse, v.set(), 0.9, 1e-10).unwrap();
        assert!(check.pass());
        assert_eq!(check.core().bits(), cert.core().bits());
        assert_eq!(check.ratio(), cert.ratio());
    }

    #[test]
    fn shifted_generators_widen_the_effective_reach() {
        // One generator shifting by 3 on a 1000-cell grid: the window
        // {-1, 0, 1} of *group* elements reaches 3 cells on the axis, so a
        // 100-cell interval keeps 94 cells, not 98.
        let action = torus_shift_action(1000, &[vec![3]], 1).unwrap();
        let window = box_window(1, 1);
        let (v, cert) = build_fc_invariant(&action, &window, 0.9, 0.1, 1e-10).unwrap();
        assert_eq!(v.radii(), &[3]);
        assert_eq!(v.cube_side(), 100);
        assert_eq!(cert.core().count(), 94);
        let check = check_invariance_group(&action, &window, v.set(), 0.9, 1e-10).unwrap();
        assert_eq!(check.ratio(), cert.ratio());
        assert_eq!(check.core().bits(), cert.core().bits());
    }

    #[test]
    fn cube_feasibility_limits() {
        // A tiny grid cannot hold a cube invariant at c = 0.9 under a
        // radius-2 window.
        let action = ZdAction::torus(10, 1).unwrap();
        let window = box_window(1, 2);
        assert!(matches!(
            build_fc_invariant(&action, &window, 0.9, 0.5, 1e-10),
            Err(Error::Infeasible(_))
        ));
        // A window spanning the whole torus breaks freeness.
        let action = ZdAction::torus(4, 1).unwrap();
        let wide: Vec<Vec<i64>> = (-4i64..=4).map(|e| vec![e]).collect();
        assert!(matches!(
            build_fc_invariant(&action, &wide, 0.5, 0.25, 1e-10),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn invariance_check_rejects_empty_sets() {
        let (space, t) = cyclic_system(10).unwrap();
        let flow = DiscreteFlow::new(t, 1.0).unwrap();
        let empty = MSet::empty(&space);
        assert!(matches!(
            check_invariance_flow(&flow, 1.0, &empty, 0.5, 0.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn invariance_certificates_export_as_rows() {
        let (space, t) = cyclic_system(10).unwrap();
        let flow = DiscreteFlow::new(t, 1.0).unwrap();
        let set = MSet::from_indices(&space, 0..5).unwrap();
        let cert = check_invariance_flow(&flow, 1.0, &set, 0.5, 1e-10).unwrap();
        // Erosion of a 5-arc by 1 per side keeps 3 atoms: ratio 0.6.
        assert!((cert.ratio() - 0.6).abs() < 1e-12);
        assert!(cert.pass());
        let row = cert.to_certificate();
        assert_eq!(row.kind, CertKind::Invariance);
        assert!(row.pass);
        assert_eq!(row.lhs, cert.ratio());
        assert_eq!(row.context.m_set, Some(cert.set_measure()));
    }
}
