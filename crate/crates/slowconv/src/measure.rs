//! Finite probability spaces, measurable sets, and observables.
//!
//! A space is a list of atoms `0..n` with positive weights summing to one
//! (within [`crate::MASS_TOL`]). Sets are boolean masks over the atoms;
//! observables are real-valued functions on the atoms. All measures and
//! integrals use compensated summation in fixed atom order, so results are
//! deterministic down to the bit and accurate to one rounding of the exact
//! value per final operation.
//!
//! Spaces have *identity*, not just equal weights: combining sets or
//! observables from two independently constructed spaces is an error, even
//! if the weight vectors happen to coincide. This catches plumbing mistakes
//! (e.g. measuring a set against the wrong model) at the API boundary
//! instead of producing silently wrong numbers.

use std::sync::Arc;

use crate::sum::{neumaier_sum, neumaier_sum_iter};
use crate::{Error, Result, MASS_TOL, MAX_ATOMS};

#[derive(Debug)]
struct SpaceInner {
    weights: Vec<f64>,
    /// Compensated sum of all weights (within [`MASS_TOL`] of 1).
    total: f64,
}

/// A finite probability space: atoms `0..len()` with positive weights.
///
/// Cloning is cheap (shared storage), and two clones compare as the *same*
/// space; see [`ProbSpace::same_space`].
#[derive(Debug, Clone)]
pub struct ProbSpace {
    inner: Arc<SpaceInner>,
}

impl ProbSpace {
    /// Creates a space from explicit atom weights.
    ///
    /// Requirements: at least one atom, at most [`MAX_ATOMS`], every weight
    /// finite and strictly positive, and the total within [`MASS_TOL`] of 1.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("a space needs at least one atom".into()));
        }
        if weights.len() > MAX_ATOMS {
            return Err(Error::InvalidArgument(format!(
                "atom count {} exceeds the maximum {}",
                weights.len(),
                MAX_ATOMS
            )));
        }
        if let Some((i, &w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w <= 0.0)
        {
            return Err(Error::InvalidArgument(format!(
                "weight of atom {i} is {w}; weights must be finite and strictly positive"
            )));
        }
        let total = neumaier_sum(&weights);
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidArgument(format!(
                "weights sum to {total}, which is off from 1 by more than {MASS_TOL}"
            )));
        }
        Ok(ProbSpace {
            inner: Arc::new(SpaceInner { weights, total }),
        })
    }

    /// The uniform space on `n` atoms, each of weight `1/n`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("a space needs at least one atom".into()));
        }
        if n > MAX_ATOMS {
            return Err(Error::InvalidArgument(format!(
                "atom count {n} exceeds the maximum {MAX_ATOMS}"
            )));
        }
        let w = 1.0 / n as f64;
        // 1/n repeated n times always passes the mass check: the compensated
        // sum is within one ulp of 1.
        Self::new(vec![w; n])
    }

    /// Number of atoms.
    pub fn len(&self) -> usize {
        self.inner.weights.len()
    }

    /// Always false (spaces have at least one atom); provided for idiom.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Weight of one atom.
    pub fn weight(&self, atom: usize) -> f64 {
        self.inner.weights[atom]
    }

    /// All atom weights, in atom order.
    pub fn weights(&self) -> &[f64] {
        &self.inner.weights
    }

    /// Compensated total mass (within [`MASS_TOL`] of 1).
    pub fn total_mass(&self) -> f64 {
        self.inner.total
    }

    /// Whether `self` and `other` are the same space *object* (clones of one
    /// construction), not merely spaces with equal weights.
    pub fn same_space(&self, other: &ProbSpace) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    fn require_same(&self, other: &ProbSpace) -> Result<()> {
        if self.same_space(other) {
            Ok(())
        } else {
            Err(Error::SpaceMismatch)
        }
    }
}

/// A measurable set: a boolean mask over the atoms of one space.
#[derive(Debug, Clone)]
pub struct MSet {
    space: ProbSpace,
    bits: Vec<bool>,
}

impl MSet {
    /// The empty set.
    pub fn empty(space: &ProbSpace) -> Self {
        MSet {
            space: space.clone(),
            bits: vec![false; space.len()],
        }
    }

    /// The whole space.
    pub fn full(space: &ProbSpace) -> Self {
        MSet {
            space: space.clone(),
            bits: vec![true; space.len()],
        }
    }

    /// Set of the given atom indices. Errors if any index is out of range.
    pub fn from_indices(
        space: &ProbSpace,
        indices: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let mut bits = vec![false; space.len()];
        for i in indices {
            if i >= space.len() {
                return Err(Error::InvalidArgument(format!(
                    "atom index {i} out of range for a space of {} atoms",
                    space.len()
                )));
            }
            bits[i] = true;
        }
        Ok(MSet {
            space: space.clone(),
            bits,
        })
    }

    /// Crate-internal constructor for masks already known to be the right
    /// length (e.g. permutations of existing masks).
    pub(crate) fn raw(space: &ProbSpace, bits: Vec<bool>) -> Self {
        debug_assert_eq!(bits.len(), space.len());
        MSet {
            space: space.clone(),
            bits,
        }
    }

    /// Set from an explicit mask, which must have one entry per atom.
    pub fn from_bits(space: &ProbSpace, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != space.len() {
            return Err(Error::InvalidArgument(format!(
                "mask length {} does not match atom count {}",
                bits.len(),
                space.len()
            )));
        }
        Ok(MSet {
            space: space.clone(),
            bits,
        })
    }

    /// Set of all atoms satisfying a predicate.
    pub fn from_pred(space: &ProbSpace, mut pred: impl FnMut(usize) -> bool) -> Self {
        MSet {
            space: space.clone(),
            bits: (0..space.len()).map(|i| pred(i)).collect(),
        }
    }

    /// The space this set lives on.
    pub fn space(&self) -> &ProbSpace {
        &self.space
    }

    /// The underlying mask, indexed by atom.
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Membership of one atom.
    pub fn contains(&self, atom: usize) -> bool {
        self.bits[atom]
    }

    /// Number of atoms in the set.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Measure of the set: compensated sum of member weights in atom order.
    pub fn measure(&self) -> f64 {
        neumaier_sum_iter(
            self.bits
                .iter()
                .zip(self.space.weights())
                .filter_map(|(&b, &w)| b.then_some(w)),
        )
    }

    /// Complement within the space.
    pub fn complement(&self) -> MSet {
        MSet {
            space: self.space.clone(),
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    fn zip_bits(&self, other: &MSet, op: impl Fn(bool, bool) -> bool) -> Result<MSet> {
        self.space.require_same(&other.space)?;
        Ok(MSet {
            space: self.space.clone(),
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| op(a, b))
                .collect(),
        })
    }

    /// Union. Errors unless both sets share one space.
    pub fn union(&self, other: &MSet) -> Result<MSet> {
        self.zip_bits(other, |a, b| a || b)
    }

    /// Intersection. Errors unless both sets share one space.
    pub fn intersect(&self, other: &MSet) -> Result<MSet> {
        self.zip_bits(other, |a, b| a && b)
    }

    /// Set difference `self \ other`. Errors unless both sets share one space.
    pub fn difference(&self, other: &MSet) -> Result<MSet> {
        self.zip_bits(other, |a, b| a && !b)
    }

    /// Symmetric difference. Errors unless both sets share one space.
    pub fn symdiff(&self, other: &MSet) -> Result<MSet> {
        self.zip_bits(other, |a, b| a != b)
    }

    /// Whether the two sets share no atom. Errors unless both share one space.
    pub fn is_disjoint(&self, other: &MSet) -> Result<bool> {
        self.space.require_same(&other.space)?;
        Ok(self.bits.iter().zip(&other.bits).all(|(&a, &b)| !(a && b)))
    }

    /// The 0/1 indicator observable of the set.
    pub fn indicator(&self) -> Obs {
        Obs {
            space: self.space.clone(),
            values: self.bits.iter().map(|&b| b as u8 as f64).collect(),
        }
    }
}

/// An observable: a finite real value on every atom of one space.
#[derive(Debug, Clone)]
pub struct Obs {
    space: ProbSpace,
    values: Vec<f64>,
}

impl Obs {
    /// Creates an observable from explicit per-atom values, which must all
    /// be finite and match the atom count.
    pub fn new(space: &ProbSpace, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.len() {
            return Err(Error::InvalidArgument(format!(
                "value count {} does not match atom count {}",
                values.len(),
                space.len()
            )));
        }
        if let Some((i, &v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "value at atom {i} is {v}; observables must be finite"
            )));
        }
        Ok(Obs {
            space: space.clone(),
            values,
        })
    }

    /// The constant observable `c` (must be finite).
    pub fn constant(space: &ProbSpace, c: f64) -> Result<Self> {
        Self::new(space, vec![c; space.len()])
    }

    /// Crate-internal constructor for values already known to be finite and
    /// the right length (e.g. permutations or averages of existing values).
    pub(crate) fn raw(space: &ProbSpace, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), space.len());
        Obs {
            space: space.clone(),
            values,
        }
    }

    /// The space this observable lives on.
    pub fn space(&self) -> &ProbSpace {
        &self.space
    }

    /// Per-atom values, indexed by atom.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at one atom.
    pub fn value(&self, atom: usize) -> f64 {
        self.values[atom]
    }

    /// Integral against the space's measure: compensated sum of
    /// `weight(i) * value(i)` in atom order.
    pub fn integral(&self) -> f64 {
        neumaier_sum_iter(
            self.values
                .iter()
                .zip(self.space.weights())
                .map(|(&v, &w)| v * w),
        )
    }

    /// L1 norm `∫ |f| dμ`.
    pub fn l1_norm(&self) -> f64 {
        neumaier_sum_iter(
            self.values
                .iter()
                .zip(self.space.weights())
                .map(|(&v, &w)| v.abs() * w),
        )
    }

    /// L1 deviation from a constant: `∫ |f - c| dμ`.
    pub fn l1_dev(&self, c: f64) -> f64 {
        neumaier_sum_iter(
            self.values
                .iter()
                .zip(self.space.weights())
                .map(|(&v, &w)| (v - c).abs() * w),
        )
    }

    /// L1 distance `∫ |f - g| dμ`. Errors unless both share one space.
    pub fn l1_distance(&self, other: &Obs) -> Result<f64> {
        self.space.require_same(&other.space)?;
        Ok(neumaier_sum_iter(
            self.values
                .iter()
                .zip(&other.values)
                .zip(self.space.weights())
                .map(|((&a, &b), &w)| (a - b).abs() * w),
        ))
    }

    /// Pointwise scaling `c · f` (`c` must be finite).
    pub fn scale(&self, c: f64) -> Result<Obs> {
        Obs::new(&self.space, self.values.iter().map(|&v| v * c).collect())
    }

    /// Pointwise sum. Errors unless both share one space.
    pub fn add(&self, other: &Obs) -> Result<Obs> {
        self.space.require_same(&other.space)?;
        Obs::new(
            &self.space,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| a + b)
                .collect(),
        )
    }

    /// Pointwise difference. Errors unless both share one space.
    pub fn sub(&self, other: &Obs) -> Result<Obs> {
        self.space.require_same(&other.space)?;
        Obs::new(
            &self.space,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| a - b)
                .collect(),
        )
    }

    /// Restriction: keep values on `set`, zero elsewhere. Errors unless the
    /// set shares this observable's space.
    pub fn restrict(&self, set: &MSet) -> Result<Obs> {
        self.space.require_same(set.space())?;
        Ok(Obs {
            space: self.space.clone(),
            values: self
                .values
                .iter()
                .zip(set.bits())
                .map(|(&v, &b)| if b { v } else { 0.0 })
                .collect(),
        })
    }

    /// Sup norm `max |f(i)|`.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    /// Smallest value attained.
    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest value attained.
    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}
