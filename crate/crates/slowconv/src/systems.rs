//! Measure-preserving dynamics on finite spaces.
//!
//! Three flavors of dynamics share one backbone:
//!
//! * [`Automorphism`] — a single measure-preserving permutation `T` of the
//!   atoms, with composition, integer powers, pullbacks `(T f)(x) = f(T x)`,
//!   and a cached orbit (cycle) decomposition;
//! * [`ZdAction`] — a tuple of pairwise-commuting automorphisms generating a
//!   `Z^d` action, with group translations `T_g` for `g ∈ Z^d` and set
//!   translates `{x : T_g x ∈ V}`;
//! * [`DiscreteFlow`] — a flow sampled on a time grid of spacing `delta`:
//!   real times are rounded (half away from zero) to the nearest multiple
//!   of `delta` and realized as powers of the time-`delta` map.
//!
//! Measure preservation is checked *exactly* at construction: a permutation
//! is accepted only if every atom's weight equals its image's weight
//! bitwise. This is what later lets tower levels and set translates have
//! identical measures with no drift.

use std::ops::Range;
use std::sync::{Arc, OnceLock};

use crate::measure::{MSet, Obs, ProbSpace};
use crate::{Error, Result, MAX_ATOMS};

/// A measure-preserving permutation of the atoms of one space.
///
/// Cloning is cheap: the permutation tables and the lazily-built orbit
/// index are shared.
#[derive(Clone)]
pub struct Automorphism {
    space: ProbSpace,
    /// `forward[x] = T(x)`.
    forward: Arc<Vec<u32>>,
    /// `inverse[T(x)] = x`.
    inverse: Arc<Vec<u32>>,
    /// Cycle decomposition, built on first use and shared across clones.
    orbits: OnceLock<Arc<OrbitIndex>>,
}

impl std::fmt::Debug for Automorphism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Automorphism")
            .field("atoms", &self.space.len())
            .finish_non_exhaustive()
    }
}

impl Automorphism {
    /// Creates an automorphism from its forward table `forward[x] = T(x)`.
    ///
    /// Errors if the table is not a bijection of `0..n`, or if any atom's
    /// weight differs (bitwise) from its image's weight — the map must
    /// preserve the measure exactly.
    pub fn new(space: &ProbSpace, forward: Vec<u32>) -> Result<Self> {
        let n = space.len();
        if forward.len() != n {
            return Err(Error::InvalidArgument(format!(
                "map table length {} does not match atom count {}",
                forward.len(),
                n
            )));
        }
        let mut inverse = vec![u32::MAX; n];
        for (x, &y) in forward.iter().enumerate() {
            let y = y as usize;
            if y >= n {
                return Err(Error::InvalidArgument(format!(
                    "map sends atom {x} to {y}, out of range for {n} atoms"
                )));
            }
            if inverse[y] != u32::MAX {
                return Err(Error::Precondition(format!(
                    "map is not injective: atoms {} and {x} both map to {y}",
                    inverse[y]
                )));
            }
            inverse[y] = x as u32;
        }
        // Injective on a finite set of the right size is bijective; now the
        // exact measure-preservation check.
        for (x, &y) in forward.iter().enumerate() {
            let (wx, wy) = (space.weight(x), space.weight(y as usize));
            if wx != wy {
                return Err(Error::Precondition(format!(
                    "map does not preserve the measure: atom {x} has weight {wx} \
                     but its image {y} has weight {wy}"
                )));
            }
        }
        Ok(Automorphism {
            space: space.clone(),
            forward: Arc::new(forward),
            inverse: Arc::new(inverse),
            orbits: OnceLock::new(),
        })
    }

    /// The identity map.
    pub fn identity(space: &ProbSpace) -> Self {
        let n = space.len();
        Automorphism {
            space: space.clone(),
            forward: Arc::new((0..n as u32).collect()),
            inverse: Arc::new((0..n as u32).collect()),
            orbits: OnceLock::new(),
        }
    }

    /// The space this map acts on.
    pub fn space(&self) -> &ProbSpace {
        &self.space
    }

    /// `T(x)`.
    pub fn apply(&self, atom: usize) -> usize {
        self.forward[atom] as usize
    }

    /// `T^{-1}(x)`.
    pub fn preimage(&self, atom: usize) -> usize {
        self.inverse[atom] as usize
    }

    /// The forward table, indexed by atom.
    pub fn forward_table(&self) -> &[u32] {
        &self.forward
    }

    /// The inverse automorphism `T^{-1}` (shares this map's tables).
    pub fn inverse_map(&self) -> Automorphism {
        Automorphism {
            space: self.space.clone(),
            forward: Arc::clone(&self.inverse),
            inverse: Arc::clone(&self.forward),
            orbits: OnceLock::new(),
        }
    }

    /// Composition `self ∘ other` (apply `other` first). Errors unless both
    /// act on one space.
    pub fn compose(&self, other: &Automorphism) -> Result<Automorphism> {
        if !self.space.same_space(&other.space) {
            return Err(Error::SpaceMismatch);
        }
        let forward: Vec<u32> = other.forward.iter().map(|&y| self.forward[y as usize]).collect();
        let inverse: Vec<u32> = self.inverse.iter().map(|&y| other.inverse[y as usize]).collect();
        Ok(Automorphism {
            space: self.space.clone(),
            forward: Arc::new(forward),
            inverse: Arc::new(inverse),
            orbits: OnceLock::new(),
        })
    }

    /// Integer power `T^k` (negative `k` uses the inverse), by binary
    /// exponentiation on the tables: `O(n log |k|)`.
    pub fn pow(&self, k: i64) -> Automorphism {
        if k == 0 {
            return Automorphism::identity(&self.space);
        }
        let mut base = if k > 0 { self.clone() } else { self.inverse_map() };
        let mut e = k.unsigned_abs();
        let mut acc: Option<Automorphism> = None;
        while e > 0 {
            if e & 1 == 1 {
                acc = Some(match acc {
                    None => base.clone(),
                    // Same space by construction, so compose cannot fail.
                    Some(a) => a.compose(&base).expect("same space"),
                });
            }
            e >>= 1;
            if e > 0 {
                base = base.compose(&base).expect("same space");
            }
        }
        acc.expect("k != 0")
    }

    /// Pullback `(T f)(x) = f(T x)`. Errors unless `f` lives on this map's
    /// space.
    pub fn pullback(&self, f: &Obs) -> Result<Obs> {
        if !self.space.same_space(f.space()) {
            return Err(Error::SpaceMismatch);
        }
        let vals = f.values();
        Ok(Obs::raw(
            &self.space,
            self.forward.iter().map(|&y| vals[y as usize]).collect(),
        ))
    }

    /// Forward image `T(V) = {T(x) : x ∈ V}`.
    pub fn image_of_set(&self, set: &MSet) -> Result<MSet> {
        if !self.space.same_space(set.space()) {
            return Err(Error::SpaceMismatch);
        }
        let mut bits = vec![false; self.space.len()];
        for (x, &b) in set.bits().iter().enumerate() {
            if b {
                bits[self.forward[x] as usize] = true;
            }
        }
        Ok(MSet::raw(&self.space, bits))
    }

    /// Preimage `T^{-1}(V) = {x : T(x) ∈ V}`.
    pub fn preimage_of_set(&self, set: &MSet) -> Result<MSet> {
        if !self.space.same_space(set.space()) {
            return Err(Error::SpaceMismatch);
        }
        let bits = set.bits();
        Ok(MSet::raw(
            &self.space,
            self.forward.iter().map(|&y| bits[y as usize]).collect(),
        ))
    }

    /// Cycle decomposition, computed once and cached.
    pub fn orbit_index(&self) -> &OrbitIndex {
        self.orbits
            .get_or_init(|| Arc::new(OrbitIndex::build(&self.forward)))
    }

    /// Whether the whole space is one orbit.
    pub fn is_single_cycle(&self) -> bool {
        self.orbit_index().num_cycles() == 1
    }

    /// The forward orbit of one atom, starting at the atom itself and
    /// following `T` until it returns.
    pub fn orbit_of(&self, atom: usize) -> Vec<usize> {
        let mut orbit = vec![atom];
        let mut x = self.forward[atom] as usize;
        while x != atom {
            orbit.push(x);
            x = self.forward[x] as usize;
        }
        orbit
    }
}

/// Cycle decomposition of a permutation, in a layout that turns orbit
/// arithmetic into index arithmetic.
///
/// Atoms are relabeled by *orbit position*: positions are grouped by cycle,
/// and within a cycle, consecutive positions are consecutive under the map
/// (position `p + 1` holds the image of position `p`, wrapping at the cycle
/// end). Applying `T^j` to an atom is then a modular shift of its position,
/// and sums of a function along orbit segments become window sums over the
/// position order.
pub struct OrbitIndex {
    /// `order[p]` = atom at position `p`.
    order: Vec<u32>,
    /// `pos[x]` = position of atom `x` (inverse of `order`).
    pos: Vec<u32>,
    /// Cycle `c` occupies positions `starts[c] .. starts[c + 1]`.
    starts: Vec<u32>,
    /// `cycle_of[x]` = id of the cycle containing atom `x`.
    cycle_of: Vec<u32>,
}

impl OrbitIndex {
    fn build(forward: &[u32]) -> Self {
        let n = forward.len();
        let mut order = Vec::with_capacity(n);
        let mut pos = vec![u32::MAX; n];
        let mut cycle_of = vec![u32::MAX; n];
        let mut starts = vec![0u32];
        for x0 in 0..n {
            if pos[x0] != u32::MAX {
                continue;
            }
            let c = (starts.len() - 1) as u32;
            let mut x = x0;
            loop {
                pos[x] = order.len() as u32;
                cycle_of[x] = c;
                order.push(x as u32);
                x = forward[x] as usize;
                if x == x0 {
                    break;
                }
            }
            starts.push(order.len() as u32);
        }
        OrbitIndex {
            order,
            pos,
            starts,
            cycle_of,
        }
    }

    /// Number of cycles.
    pub fn num_cycles(&self) -> usize {
        self.starts.len() - 1
    }

    /// Position range of cycle `c`.
    pub fn cycle_span(&self, c: usize) -> Range<usize> {
        self.starts[c] as usize..self.starts[c + 1] as usize
    }

    /// Length of cycle `c`.
    pub fn cycle_len(&self, c: usize) -> usize {
        (self.starts[c + 1] - self.starts[c]) as usize
    }

    /// Atom at position `p`.
    pub fn atom_at(&self, p: usize) -> usize {
        self.order[p] as usize
    }

    /// Position of atom `x`.
    pub fn position_of(&self, x: usize) -> usize {
        self.pos[x] as usize
    }

    /// Id of the cycle containing atom `x`.
    pub fn cycle_of(&self, x: usize) -> usize {
        self.cycle_of[x] as usize
    }

    /// `T^j(x)` by modular position arithmetic (no table walks).
    pub fn shift(&self, x: usize, j: i64) -> usize {
        let c = self.cycle_of[x] as usize;
        let start = self.starts[c] as i64;
        let len = (self.starts[c + 1] as i64) - start;
        let rel = (self.pos[x] as i64 - start + j).rem_euclid(len);
        self.order[(start + rel) as usize] as usize
    }
}

/// Builds the cyclic rotation on `n` uniform atoms: `T(x) = x + 1 (mod n)`.
pub fn cyclic_system(n: usize) -> Result<(ProbSpace, Automorphism)> {
    let space = ProbSpace::uniform(n)?;
    let forward: Vec<u32> = (0..n).map(|x| ((x + 1) % n) as u32).collect();
    let map = Automorphism::new(&space, forward)?;
    Ok((space, map))
}

/// Builds the base-`b` odometer on `b^digits` uniform atoms: add one to the
/// least significant digit and propagate carries. Atom `x` encodes the
/// digit string of `x` in base `b`, least significant digit first, so the
/// map is the "+1 with carry" on digit strings.
pub fn odometer_system(base: usize, digits: u32) -> Result<(ProbSpace, Automorphism)> {
    if base < 2 {
        return Err(Error::InvalidArgument(format!(
            "odometer base must be at least 2, got {base}"
        )));
    }
    if digits == 0 {
        return Err(Error::InvalidArgument("odometer needs at least one digit".into()));
    }
    let n = (base as u128).checked_pow(digits).ok_or_else(|| {
        Error::InvalidArgument(format!("odometer size {base}^{digits} overflows"))
    })?;
    if n > MAX_ATOMS as u128 {
        return Err(Error::InvalidArgument(format!(
            "odometer size {base}^{digits} = {n} exceeds the maximum {MAX_ATOMS} atoms"
        )));
    }
    let n = n as usize;
    let space = ProbSpace::uniform(n)?;
    let mut forward = Vec::with_capacity(n);
    for x in 0..n {
        // Add one with carry, digit by digit.
        let mut y = x;
        let mut place = 1usize;
        for _ in 0..digits {
            let digit = (y / place) % base;
            if digit + 1 < base {
                y += place; // no carry out of this digit
                break;
            }
            y -= digit * place; // digit wraps to 0, carry continues
            place *= base;
        }
        if y == x {
            y = 0; // all digits were b - 1: wrap to the origin
        }
        forward.push(y as u32);
    }
    let map = Automorphism::new(&space, forward)?;
    Ok((space, map))
}

/// A `Z^d` action: `d` pairwise-commuting automorphisms of one space.
///
/// Group elements `g ∈ Z^d` act by `T_g = Π_j gen_j^{g_j}` (the order does
/// not matter because the generators commute — this is checked exactly at
/// construction).
pub struct ZdAction {
    space: ProbSpace,
    generators: Vec<Automorphism>,
    /// Grid side when built on a discrete torus; `None` for ad-hoc actions.
    side: Option<usize>,
    /// Shift vector of each generator on the torus grid (rows = generators,
    /// columns = grid axes); `None` for ad-hoc actions.
    shifts: Option<Vec<Vec<i64>>>,
}

impl ZdAction {
    /// Creates an action from explicit commuting generators (at least one).
    ///
    /// Errors if the generators act on different spaces or if any pair
    /// fails to commute (tables compared bitwise).
    pub fn new(generators: Vec<Automorphism>) -> Result<Self> {
        let first = generators
            .first()
            .ok_or_else(|| Error::InvalidArgument("an action needs at least one generator".into()))?;
        let space = first.space().clone();
        for g in &generators[1..] {
            if !g.space().same_space(&space) {
                return Err(Error::SpaceMismatch);
            }
        }
        for i in 0..generators.len() {
            for j in (i + 1)..generators.len() {
                let ab = generators[i].compose(&generators[j])?;
                let ba = generators[j].compose(&generators[i])?;
                if ab.forward_table() != ba.forward_table() {
                    return Err(Error::Precondition(format!(
                        "generators {i} and {j} do not commute"
                    )));
                }
            }
        }
        Ok(ZdAction {
            space,
            generators,
            side: None,
            shifts: None,
        })
    }

    /// The translation action on the `d`-dimensional discrete torus
    /// `(Z/side)^d` with uniform weights: generator `j` adds one to
    /// coordinate `j` (mod `side`). Atom index is `Σ_j x_j side^j` with
    /// coordinate 0 varying fastest.
    pub fn torus(side: usize, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("torus dimension must be positive".into()));
        }
        // Unit shifts: generator j is the standard basis vector e_j.
        let shifts: Vec<Vec<i64>> = (0..dim)
            .map(|j| (0..dim).map(|a| i64::from(a == j)).collect())
            .collect();
        torus_shift_action(side, &shifts, 1)
    }

    /// The space the action lives on.
    pub fn space(&self) -> &ProbSpace {
        &self.space
    }

    /// Rank `d` of the acting group.
    pub fn dim(&self) -> usize {
        self.generators.len()
    }

    /// Grid side, when the action was built on a discrete torus.
    pub fn side(&self) -> Option<usize> {
        self.side
    }

    /// Shift vectors of the generators on the torus grid, when the action
    /// was built by [`ZdAction::torus`] or [`torus_shift_action`]. Row `j`
    /// is the displacement generator `j` applies to the grid coordinates.
    pub fn shifts(&self) -> Option<&[Vec<i64>]> {
        self.shifts.as_deref()
    }

    /// Number of grid axes, when the action lives on a torus. This can
    /// exceed [`ZdAction::dim`]: two generators may act on a 3-axis grid.
    pub fn grid_dim(&self) -> Option<usize> {
        self.shifts.as_ref().map(|s| s[0].len())
    }

    /// The generators, in coordinate order.
    pub fn generators(&self) -> &[Automorphism] {
        &self.generators
    }

    fn check_coords(&self, g: &[i64]) -> Result<()> {
        if g.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "group element has {} coordinates but the action has rank {}",
                g.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// The translation `T_g = Π_j gen_j^{g_j}`.
    pub fn translation(&self, g: &[i64]) -> Result<Automorphism> {
        self.check_coords(g)?;
        let mut acc = Automorphism::identity(&self.space);
        for (gen, &e) in self.generators.iter().zip(g) {
            if e != 0 {
                acc = acc.compose(&gen.pow(e))?;
            }
        }
        Ok(acc)
    }

    /// Pullback along a group element: `(T_g f)(x) = f(T_g x)`.
    pub fn apply_group(&self, f: &Obs, g: &[i64]) -> Result<Obs> {
        self.translation(g)?.pullback(f)
    }

    /// Set translate `{x : T_g x ∈ V}` (the preimage of `V` under `T_g`).
    pub fn translate_preimage(&self, set: &MSet, g: &[i64]) -> Result<MSet> {
        self.translation(g)?.preimage_of_set(set)
    }

    /// Verifies the action is free on a finite window: every nonzero
    /// `g` in `window` must act with no fixed point. The check walks the
    /// realized translation tables; it does not trust any grid geometry.
    pub fn check_free(&self, window: &[Vec<i64>]) -> Result<()> {
        for g in window {
            self.check_coords(g)?;
            if g.iter().all(|&e| e == 0) {
                continue;
            }
            let t = self.translation(g)?;
            if let Some(x) = (0..self.space.len()).find(|&x| t.apply(x) == x) {
                return Err(Error::Precondition(format!(
                    "action is not free on the window: element {g:?} fixes atom {x}"
                )));
            }
        }
        Ok(())
    }
}

/// A `Z^d` action on the discrete torus `(Z/side)^e` with uniform weights,
/// where generator `j` translates the grid coordinates by `shifts[j]`
/// (reduced mod `side` on each axis). Atom index is `Σ_a x_a side^a` with
/// axis 0 varying fastest.
///
/// Freeness is not automatic for general shifts (a shift of order dividing
/// `side` on every axis has fixed points), so the constructor verifies the
/// action is free on the box `[-free_box_radius, free_box_radius]^d` by
/// walking the realized translation tables. Consumers that average over
/// larger windows re-check freeness on their own window.
///
/// Errors if the grid is degenerate, any shift vector is malformed, or the
/// freeness check fails.
pub fn torus_shift_action(
    side: usize,
    shifts: &[Vec<i64>],
    free_box_radius: i64,
) -> Result<ZdAction> {
    if side < 2 {
        return Err(Error::InvalidArgument(format!(
            "torus side must be at least 2, got {side}"
        )));
    }
    if shifts.is_empty() {
        return Err(Error::InvalidArgument("an action needs at least one shift vector".into()));
    }
    let grid_dim = shifts[0].len();
    if grid_dim == 0 {
        return Err(Error::InvalidArgument("shift vectors must have at least one axis".into()));
    }
    if let Some(bad) = shifts.iter().find(|s| s.len() != grid_dim) {
        return Err(Error::InvalidArgument(format!(
            "shift vectors disagree on the number of axes: {} vs {}",
            grid_dim,
            bad.len()
        )));
    }
    if free_box_radius < 0 {
        return Err(Error::InvalidArgument(format!(
            "freeness box radius must be nonnegative, got {free_box_radius}"
        )));
    }
    let n = (side as u128).checked_pow(grid_dim as u32).ok_or_else(|| {
        Error::InvalidArgument(format!("torus size {side}^{grid_dim} overflows"))
    })?;
    if n > MAX_ATOMS as u128 {
        return Err(Error::InvalidArgument(format!(
            "torus size {side}^{grid_dim} = {n} exceeds the maximum {MAX_ATOMS} atoms"
        )));
    }
    let n = n as usize;
    let space = ProbSpace::uniform(n)?;
    let side_i = side as i64;
    let generators = shifts
        .iter()
        .map(|shift| {
            // Nonnegative per-axis displacement; adding it never wraps i64
            // because every intermediate stays below side^e ≤ MAX_ATOMS.
            let disp: Vec<usize> = shift.iter().map(|&s| s.rem_euclid(side_i) as usize).collect();
            let forward: Vec<u32> = (0..n)
                .map(|x| {
                    let mut y = 0usize;
                    let mut rest = x;
                    let mut place = 1usize;
                    for &d in &disp {
                        let coord = rest % side;
                        rest /= side;
                        y += (coord + d) % side * place;
                        place *= side;
                    }
                    y as u32
                })
                .collect();
            Automorphism::new(&space, forward)
        })
        .collect::<Result<Vec<_>>>()?;
    // Route through `new` so the pairwise commutation check always runs,
    // then restore the grid metadata it strips.
    let mut action = ZdAction::new(generators)?;
    action.side = Some(side);
    action.shifts = Some(shifts.to_vec());
    action.check_free(&box_window(shifts.len(), free_box_radius))?;
    Ok(action)
}

/// Every lattice point of the box `[-radius, radius]^d`, in lexicographic
/// order. This is the default averaging window for `Z^d` actions.
pub fn box_window(dim: usize, radius: i64) -> Vec<Vec<i64>> {
    assert!(radius >= 0, "box radius must be nonnegative");
    let mut window = vec![vec![]];
    for _ in 0..dim {
        let mut next = Vec::with_capacity(window.len() * (2 * radius as usize + 1));
        for prefix in &window {
            for e in -radius..=radius {
                let mut v = prefix.clone();
                v.push(e);
                next.push(v);
            }
        }
        window = next;
    }
    window
}

/// A flow observed on a discrete time grid: real times act through the
/// time-`delta` map, with `t` rounded to `round(t / delta)` grid steps
/// (ties away from zero).
#[derive(Clone)]
pub struct DiscreteFlow {
    step: Automorphism,
    delta: f64,
}

impl DiscreteFlow {
    /// Wraps a time-`delta` map as a flow. `delta` must be finite and
    /// positive.
    pub fn new(step: Automorphism, delta: f64) -> Result<Self> {
        if !delta.is_finite() || delta <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "flow step size must be finite and positive, got {delta}"
            )));
        }
        Ok(DiscreteFlow { step, delta })
    }

    /// The time-`delta` map.
    pub fn step(&self) -> &Automorphism {
        &self.step
    }

    /// The grid spacing.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// The space the flow acts on.
    pub fn space(&self) -> &ProbSpace {
        self.step.space()
    }

    /// Number of grid steps realizing time `t`: `round(t / delta)`, ties
    /// away from zero. Errors if `t` is not finite or the step count
    /// overflows.
    pub fn steps_for(&self, t: f64) -> Result<i64> {
        if !t.is_finite() {
            return Err(Error::InvalidArgument(format!("flow time must be finite, got {t}")));
        }
        let steps = (t / self.delta).round();
        if steps.abs() >= i64::MAX as f64 {
            return Err(Error::InvalidArgument(format!(
                "flow time {t} spans too many grid steps"
            )));
        }
        Ok(steps as i64)
    }

    /// The map realizing time `t` (the `steps_for(t)`-th power of the step).
    pub fn at_time(&self, t: f64) -> Result<Automorphism> {
        Ok(self.step.pow(self.steps_for(t)?))
    }

    /// Set translate `{x : φ_t x ∈ V}`.
    pub fn translate(&self, set: &MSet, t: f64) -> Result<MSet> {
        self.at_time(t)?.preimage_of_set(set)
    }

    /// Pullback `(φ_t f)(x) = f(φ_t x)`.
    pub fn pullback(&self, f: &Obs, t: f64) -> Result<Obs> {
        self.at_time(t)?.pullback(f)
    }
}

/// A flow built over a base system under an integer-valued roof function.
///
/// The flow space has one column of `roof(x)` atoms above each base atom
/// `x`, carrying weight proportional to the base weight; the time-`delta`
/// map climbs each column one level per step and jumps from the top of
/// column `x` to the bottom of column `T_base(x)`.
pub struct SpecialFlowModel {
    space: ProbSpace,
    flow: DiscreteFlow,
    /// Column `x` occupies atoms `column_starts[x] .. column_starts[x + 1]`.
    column_starts: Vec<usize>,
}

impl SpecialFlowModel {
    /// The flow space (one atom per column level).
    pub fn space(&self) -> &ProbSpace {
        &self.space
    }

    /// The flow itself.
    pub fn flow(&self) -> &DiscreteFlow {
        &self.flow
    }

    /// Number of base atoms (columns).
    pub fn base_len(&self) -> usize {
        self.column_starts.len() - 1
    }

    /// Flow atom at `level` above base atom `x`.
    pub fn atom(&self, base_atom: usize, level: usize) -> usize {
        let r = self.column_starts[base_atom]..self.column_starts[base_atom + 1];
        assert!(level < r.len(), "level {level} out of range for column {base_atom}");
        r.start + level
    }

    /// Atom range of the column above one base atom.
    pub fn column(&self, base_atom: usize) -> Range<usize> {
        self.column_starts[base_atom]..self.column_starts[base_atom + 1]
    }
}

/// Builds the flow over `base_map` under the roof `roof` (positive integer
/// values, given as an observable on the base space), observed at grid
/// spacing `delta`.
pub fn special_flow(base_map: &Automorphism, roof: &Obs, delta: f64) -> Result<SpecialFlowModel> {
    let base = base_map.space();
    if !base.same_space(roof.space()) {
        return Err(Error::SpaceMismatch);
    }
    let mut heights = Vec::with_capacity(base.len());
    let mut total: usize = 0;
    for (x, &v) in roof.values().iter().enumerate() {
        if v < 1.0 || v.fract() != 0.0 || v > MAX_ATOMS as f64 {
            return Err(Error::InvalidArgument(format!(
                "roof value at base atom {x} is {v}; roof values must be positive integers"
            )));
        }
        let h = v as usize;
        total = total
            .checked_add(h)
            .filter(|&t| t <= MAX_ATOMS)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "roof total exceeds the maximum {MAX_ATOMS} atoms"
                ))
            })?;
        heights.push(h);
    }
    let mut column_starts = Vec::with_capacity(base.len() + 1);
    column_starts.push(0usize);
    for &h in &heights {
        column_starts.push(column_starts.last().unwrap() + h);
    }

    // Flow measure: base weight spread evenly over the column's levels is
    // w_x per level, normalized by Z = Σ_x w_x · roof(x).
    let normalizer = crate::sum::neumaier_sum_iter(
        base.weights()
            .iter()
            .zip(&heights)
            .map(|(&w, &h)| w * h as f64),
    );
    let mut weights = Vec::with_capacity(total);
    for (x, &h) in heights.iter().enumerate() {
        let w = base.weight(x) / normalizer;
        weights.extend(std::iter::repeat(w).take(h));
    }
    let space = ProbSpace::new(weights)?;

    let mut forward = Vec::with_capacity(total);
    for (x, &h) in heights.iter().enumerate() {
        let start = column_starts[x];
        for level in 0..h {
            if level + 1 < h {
                forward.push((start + level + 1) as u32);
            } else {
                forward.push(column_starts[base_map.apply(x)] as u32);
            }
        }
    }
    let step = Automorphism::new(&space, forward)?;
    let flow = DiscreteFlow::new(step, delta)?;
    Ok(SpecialFlowModel {
        space,
        flow,
        column_starts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cyclic_rotation_basics() {
        let (space, t) = cyclic_system(8).unwrap();
        assert_eq!(space.len(), 8);
        assert!(t.is_single_cycle());
        assert_eq!(t.apply(7), 0);
        assert_eq!(t.preimage(0), 7);
        for x in 0..8 {
            assert_eq!(t.preimage(t.apply(x)), x);
        }
    }

    #[test]
    fn odometer_orbit_is_plain_increment() {
        // Adding one with carry on least-significant-first digit strings is
        // exactly +1 mod b^digits, so the orbit of 0 is 0, 1, ..., n-1.
        let (space, t) = odometer_system(2, 3).unwrap();
        assert_eq!(space.len(), 8);
        assert_eq!(t.orbit_of(0), vec![0, 1, 2, 3, 4, 5, 6, 7]);
        assert!(t.is_single_cycle());
        for x in 0..8 {
            assert_eq!(t.apply(x), (x + 1) % 8);
        }
        let (_, t3) = odometer_system(3, 2).unwrap();
        for x in 0..9 {
            assert_eq!(t3.apply(x), (x + 1) % 9);
        }
    }

    #[test]
    fn powers_satisfy_the_group_law() {
        let (_, t) = cyclic_system(12).unwrap();
        assert_eq!(t.pow(0).forward_table(), Automorphism::identity(t.space()).forward_table());
        assert_eq!(t.pow(12).forward_table(), Automorphism::identity(t.space()).forward_table());
        assert_eq!(t.pow(-1).forward_table(), t.inverse_map().forward_table());
        let a = t.pow(5).compose(&t.pow(9)).unwrap();
        assert_eq!(a.forward_table(), t.pow(14).forward_table());
        assert_eq!(t.pow(14).apply(0), 2);
    }

    #[test]
    fn pullback_convention_composes_with_the_map() {
        // (T f)(x) = f(T x): on the 4-cycle, pulling back the indicator of
        // {0} lands on {3}.
        let (space, t) = cyclic_system(4).unwrap();
        let f = MSet::from_indices(&space, [0]).unwrap().indicator();
        let tf = t.pullback(&f).unwrap();
        assert_eq!(tf.values(), &[0.0, 0.0, 0.0, 1.0]);
        // Pullback of an indicator is the indicator of the preimage.
        let v = MSet::from_indices(&space, [0]).unwrap();
        let pre = t.preimage_of_set(&v).unwrap();
        assert_eq!(pre.bits(), &[false, false, false, true]);
        assert_eq!(t.image_of_set(&pre).unwrap().bits(), v.bits());
    }

    #[test]
    fn non_bijections_and_non_preserving_maps_are_rejected() {
        let space = ProbSpace::uniform(4).unwrap();
        assert!(matches!(
            Automorphism::new(&space, vec![0, 0, 1, 2]),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            Automorphism::new(&space, vec![0, 1, 2, 9]),
            Err(Error::InvalidArgument(_))
        ));
        // Swapping atoms of unequal weight does not preserve the measure.
        let lopsided = ProbSpace::new(vec![0.5, 0.25, 0.25]).unwrap();
        assert!(matches!(
            Automorphism::new(&lopsided, vec![1, 0, 2]),
            Err(Error::Precondition(_))
        ));
        // Swapping the two equal-weight atoms does.
        assert!(Automorphism::new(&lopsided, vec![0, 2, 1]).is_ok());
    }

    #[test]
    fn orbit_index_layout_and_shifts() {
        // Two 3-cycles: (0 2 4)(1 3 5).
        let space = ProbSpace::uniform(6).unwrap();
        let t = Automorphism::new(&space, vec![2, 3, 4, 5, 0, 1]).unwrap();
        let idx = t.orbit_index();
        assert_eq!(idx.num_cycles(), 2);
        assert_eq!(idx.cycle_len(0), 3);
        assert_eq!(idx.cycle_span(0), 0..3);
        // Consecutive positions are consecutive under the map.
        for c in 0..idx.num_cycles() {
            let span = idx.cycle_span(c);
            for p in span.clone() {
                let next = if p + 1 == span.end { span.start } else { p + 1 };
                assert_eq!(t.apply(idx.atom_at(p)), idx.atom_at(next));
            }
        }
        // Shifts agree with iterated application, including negative powers.
        for x in 0..6 {
            assert_eq!(idx.shift(x, 1), t.apply(x));
            assert_eq!(idx.shift(x, -1), t.preimage(x));
            assert_eq!(idx.shift(x, 3), x);
            assert_eq!(idx.shift(x, 100), t.pow(100).apply(x));
        }
    }

    #[test]
    fn torus_translations_commute_and_translate_sets() {
        let action = ZdAction::torus(4, 1).unwrap();
        let f = MSet::from_indices(action.space(), [0]).unwrap().indicator();
        let tf = action.apply_group(&f, &[1]).unwrap();
        assert_eq!(tf.values(), &[0.0, 0.0, 0.0, 1.0]);

        let action2 = ZdAction::torus(5, 2).unwrap();
        assert_eq!(action2.space().len(), 25);
        // T_(1,0) then T_(0,1) equals T_(1,1).
        let a = action2.translation(&[1, 0]).unwrap();
        let b = action2.translation(&[0, 1]).unwrap();
        let ab = a.compose(&b).unwrap();
        assert_eq!(
            ab.forward_table(),
            action2.translation(&[1, 1]).unwrap().forward_table()
        );
        // Atom (x0, x1) has index x0 + 5 x1; T_(1,1) sends (4, 4) to (0, 0).
        assert_eq!(ab.apply(24), 0);
        // Set translate is the preimage: {x : x + g ∈ V}.
        let v = MSet::from_indices(action2.space(), [0]).unwrap();
        let moved = action2.translate_preimage(&v, &[2, 1]).unwrap();
        // Solves x0 + 2 ≡ 0, x1 + 1 ≡ 0 (mod 5): atom (3, 4) = 3 + 20.
        assert_eq!(moved.count(), 1);
        assert!(moved.contains(23));
    }

    #[test]
    fn freeness_check_walks_the_window() {
        let action = ZdAction::torus(4, 1).unwrap();
        let small: Vec<Vec<i64>> = (-2i64..=2).map(|e| vec![e]).collect();
        assert!(action.check_free(&small).is_ok());
        // A window reaching ±4 hits the identity translation on (Z/4).
        let wide: Vec<Vec<i64>> = (-4i64..=4).map(|e| vec![e]).collect();
        assert!(matches!(action.check_free(&wide), Err(Error::Precondition(_))));
    }

    #[test]
    fn shifted_torus_actions_validate_freeness_at_construction() {
        // Standard basis shifts on (Z/5)^2: free on the box [-2, 2]^2.
        let unit = torus_shift_action(5, &[vec![1, 0], vec![0, 1]], 2).unwrap();
        assert_eq!(unit.space().len(), 25);
        assert_eq!(unit.side(), Some(5));
        assert_eq!(unit.shifts().unwrap(), &[vec![1, 0], vec![0, 1]]);

        // The diagonal shift (1, 2) on (Z/5)^2 composes with itself
        // coordinatewise: applying it twice lands on (2, 4).
        let diag = torus_shift_action(5, &[vec![1, 2]], 2).unwrap();
        assert_eq!(diag.dim(), 1);
        assert_eq!(diag.grid_dim(), Some(2));
        let t2 = diag.translation(&[2]).unwrap();
        assert_eq!(t2.apply(0), 2 + 5 * 4);

        // A shift of order 2 on (Z/4) fixes every atom at g = 2, so a
        // declared box of radius 2 must be rejected...
        assert!(matches!(
            torus_shift_action(4, &[vec![2]], 2),
            Err(Error::Precondition(_))
        ));
        // ...while radius 1 never reaches the degenerate element.
        assert!(torus_shift_action(4, &[vec![2]], 1).is_ok());

        // Negative shifts reduce mod side: -1 on (Z/4) is the inverse of +1.
        let back = torus_shift_action(4, &[vec![-1]], 1).unwrap();
        assert_eq!(back.translation(&[1]).unwrap().apply(0), 3);

        assert!(torus_shift_action(1, &[vec![1]], 1).is_err());
        assert!(torus_shift_action(4, &[], 1).is_err());
        assert!(torus_shift_action(4, &[vec![1, 0], vec![1]], 1).is_err());
    }

    #[test]
    fn box_windows_enumerate_the_cube() {
        assert_eq!(box_window(1, 2), vec![vec![-2], vec![-1], vec![0], vec![1], vec![2]]);
        assert_eq!(box_window(2, 1).len(), 9);
        assert_eq!(box_window(3, 2).len(), 125);
    }

    #[test]
    fn flow_rounds_times_to_grid_steps() {
        let (_, t) = cyclic_system(10).unwrap();
        let flow = DiscreteFlow::new(t, 0.5).unwrap();
        assert_eq!(flow.steps_for(1.0).unwrap(), 2);
        assert_eq!(flow.steps_for(0.74).unwrap(), 1);
        // Ties round away from zero.
        assert_eq!(flow.steps_for(0.25).unwrap(), 1);
        assert_eq!(flow.steps_for(-0.25).unwrap(), -1);
        assert_eq!(flow.steps_for(0.0).unwrap(), 0);
        assert!(flow.steps_for(f64::NAN).is_err());
        assert!(DiscreteFlow::new(flow.step().clone(), 0.0).is_err());
    }

    #[test]
    fn flow_satisfies_the_group_law_on_grid_times() {
        let (space, t) = cyclic_system(10).unwrap();
        let flow = DiscreteFlow::new(t, 0.25).unwrap();
        let v = MSet::from_indices(&space, [0, 1, 4]).unwrap();
        // φ_{s+t} V = φ_s (φ_t V) for grid multiples.
        let lhs = flow.translate(&v, 1.5).unwrap();
        let rhs = flow.translate(&flow.translate(&v, 1.0).unwrap(), 0.5).unwrap();
        assert_eq!(lhs.bits(), rhs.bits());
    }

    #[test]
    fn special_flow_over_a_two_cycle() {
        // Base: the 2-cycle; roof: 2 over atom 0, 3 over atom 1. The flow
        // space has 5 atoms in one cycle 0 → 1 → 2 → 3 → 4 → 0.
        let (base_space, swap) = cyclic_system(2).unwrap();
        let roof = Obs::new(&base_space, vec![2.0, 3.0]).unwrap();
        let model = special_flow(&swap, &roof, 1.0).unwrap();
        assert_eq!(model.space().len(), 5);
        assert!(model.flow().step().is_single_cycle());
        assert_eq!(model.flow().step().orbit_of(0), vec![0, 1, 2, 3, 4]);
        assert_eq!(model.column(0), 0..2);
        assert_eq!(model.column(1), 2..5);
        assert_eq!(model.atom(1, 2), 4);
        // Uniform base ⇒ each level carries weight 1/5.
        for x in 0..5 {
            assert_eq!(model.space().weight(x), 0.2);
        }
    }

    #[test]
    fn special_flow_rejects_bad_roofs() {
        let (base_space, swap) = cyclic_system(2).unwrap();
        for bad in [vec![0.0, 3.0], vec![2.5, 3.0], vec![-2.0, 3.0]] {
            let roof = Obs::new(&base_space, bad).unwrap();
            assert!(matches!(
                special_flow(&swap, &roof, 1.0),
                Err(Error::InvalidArgument(_))
            ));
        }
    }
}
