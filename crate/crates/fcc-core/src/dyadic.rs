//! Step functions and strictly positive probabilities on dyadic partitions of `(0,1]`.
//!
//! Atoms at level `m` are the half-open intervals `((k-1)·2^-m, k·2^-m]`,
//! indexed left to right starting at 0. Values and atom probabilities are
//! run-length encoded, so a function at level 64 with a handful of distinct
//! plateaus costs a handful of runs, not `2^64` array entries. The dense
//! `{level, values}` JSON form is only materialized up to [`MAX_DENSE_LEVEL`].
//!
//! On this atom model every measure in the equivalence class gives every atom
//! strictly positive mass, so there are no nonempty null sets: statements that
//! hold almost surely on general probability spaces hold atomwise here, and
//! all "a.s." comparisons in this crate are literal pointwise comparisons on
//! atoms of the common refinement.
//!
//! Everything is immutable after construction and freely shared across
//! threads.

use std::fmt;

use num_traits::{One, Signed, Zero};
use serde::de::Error as DeError;
use serde::ser::Error as SerError;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::num::{format_ratio, from_u128, parse_ext, parse_ratio, pow2, ExtRational, Ratio};

/// Hard cap on partition depth; run lengths up to `2^64` fit in `u128`.
pub const MAX_LEVEL: u32 = 64;

/// Levels up to this bound may be expanded to dense arrays (serialization,
/// atom-index listings). Beyond it only run-length operations are available.
pub const MAX_DENSE_LEVEL: u32 = 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DyadicError {
    #[error("level {0} exceeds the supported maximum {MAX_LEVEL}")]
    LevelTooLarge(u32),
    #[error("cannot lower level {current} to {target}; lifting only refines")]
    CannotCoarsen { current: u32, target: u32 },
    #[error("level {0} is too fine for dense expansion (cap {MAX_DENSE_LEVEL})")]
    DenseGuard(u32),
    #[error("expected {expected} atoms at level {level}, got {got}")]
    WrongAtomCount {
        level: u32,
        expected: u128,
        got: u128,
    },
    #[error("negative value `{0}` is not allowed")]
    NegativeValue(String),
    #[error("operation rejects extended (+INF) inputs")]
    ExtendedInput,
    #[error("|INF - INF| is indeterminate")]
    IndeterminateDifference,
    #[error("conditional expectation target level {target} exceeds the function level {current}")]
    CondTargetTooFine { current: u32, target: u32 },
    #[error("atom probabilities must be strictly positive")]
    MeasureNotPositive,
    #[error("atom probabilities sum to {0}, expected exactly 1")]
    MeasureNotNormalized(String),
    #[error("density expectation is {0}, expected exactly 1")]
    DensityNotNormalized(String),
    #[error("density values must be strictly positive and finite")]
    DensityNotPositive,
    #[error("density base measure differs from the measure being transformed")]
    BaseMismatch,
    #[error("family of random variables must be nonempty")]
    EmptyFamily,
    #[error("indicator values must be exactly 0 or 1")]
    NotIndicator,
    #[error("atom range {start}..{end} is out of bounds for level {level}")]
    BadAtomRange { level: u32, start: u128, end: u128 },
    #[error("number format: {0}")]
    Number(#[from] crate::num::NumberError),
}

fn atoms_at(level: u32) -> u128 {
    1u128 << level
}

fn check_level(level: u32) -> Result<(), DyadicError> {
    if level > MAX_LEVEL {
        Err(DyadicError::LevelTooLarge(level))
    } else {
        Ok(())
    }
}

/// Run-length compress: merge adjacent equal values, drop empty runs.
fn compress<T: PartialEq>(runs: Vec<(u128, T)>) -> Vec<(u128, T)> {
    let mut out: Vec<(u128, T)> = Vec::with_capacity(runs.len());
    for (len, v) in runs {
        if len == 0 {
            continue;
        }
        match out.last_mut() {
            Some((last_len, last_v)) if *last_v == v => *last_len += len,
            _ => out.push((len, v)),
        }
    }
    out
}

/// Merge two run lists lifted to their common level.
pub(crate) fn zip2<A: Clone + PartialEq, B: Clone + PartialEq>(
    level_a: u32,
    runs_a: &[(u128, A)],
    level_b: u32,
    runs_b: &[(u128, B)],
) -> (u32, Vec<(u128, A, B)>) {
    let level = level_a.max(level_b);
    let sa = 1u128 << (level - level_a);
    let sb = 1u128 << (level - level_b);
    let mut out = Vec::with_capacity(runs_a.len() + runs_b.len());
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut rema = runs_a[0].0 * sa;
    let mut remb = runs_b[0].0 * sb;
    loop {
        let take = rema.min(remb);
        out.push((take, runs_a[ia].1.clone(), runs_b[ib].1.clone()));
        rema -= take;
        remb -= take;
        if rema == 0 {
            ia += 1;
            if ia == runs_a.len() {
                break;
            }
            rema = runs_a[ia].0 * sa;
        }
        if remb == 0 {
            ib += 1;
            if ib == runs_b.len() {
                break;
            }
            remb = runs_b[ib].0 * sb;
        }
    }
    (level, out)
}

pub(crate) fn zip3<A, B, C>(
    level_a: u32,
    runs_a: &[(u128, A)],
    level_b: u32,
    runs_b: &[(u128, B)],
    level_c: u32,
    runs_c: &[(u128, C)],
) -> (u32, Vec<(u128, A, B, C)>)
where
    A: Clone + PartialEq,
    B: Clone + PartialEq,
    C: Clone + PartialEq,
{
    let level = level_a.max(level_b).max(level_c);
    let sa = 1u128 << (level - level_a);
    let sb = 1u128 << (level - level_b);
    let sc = 1u128 << (level - level_c);
    let mut out = Vec::with_capacity(runs_a.len() + runs_b.len() + runs_c.len());
    let (mut ia, mut ib, mut ic) = (0usize, 0usize, 0usize);
    let mut rema = runs_a[0].0 * sa;
    let mut remb = runs_b[0].0 * sb;
    let mut remc = runs_c[0].0 * sc;
    loop {
        let take = rema.min(remb).min(remc);
        out.push((
            take,
            runs_a[ia].1.clone(),
            runs_b[ib].1.clone(),
            runs_c[ic].1.clone(),
        ));
        rema -= take;
        remb -= take;
        remc -= take;
        if rema == 0 {
            ia += 1;
            if ia == runs_a.len() {
                break;
            }
            rema = runs_a[ia].0 * sa;
        }
        if remb == 0 {
            ib += 1;
            if ib == runs_b.len() {
                break;
            }
            remb = runs_b[ib].0 * sb;
        }
        if remc == 0 {
            ic += 1;
            if ic == runs_c.len() {
                break;
            }
            remc = runs_c[ic].0 * sc;
        }
    }
    (level, out)
}

/// A nonnegative random variable that is piecewise constant on the level-`m`
/// dyadic partition of `(0,1]`, with `+INF` entries permitted.
#[derive(Clone, Debug)]
pub struct DyadicRV {
    level: u32,
    runs: Vec<(u128, ExtRational)>,
}

impl DyadicRV {
    pub fn from_values(level: u32, values: Vec<ExtRational>) -> Result<Self, DyadicError> {
        check_level(level)?;
        let expected = atoms_at(level);
        if values.len() as u128 != expected {
            return Err(DyadicError::WrongAtomCount {
                level,
                expected,
                got: values.len() as u128,
            });
        }
        let runs = compress(values.into_iter().map(|v| (1u128, v)).collect());
        let rv = DyadicRV { level, runs };
        rv.validate()?;
        Ok(rv)
    }

    pub fn from_runs(level: u32, runs: Vec<(u128, ExtRational)>) -> Result<Self, DyadicError> {
        check_level(level)?;
        let runs = compress(runs);
        let total: u128 = runs.iter().map(|(l, _)| *l).sum();
        let expected = atoms_at(level);
        if total != expected {
            return Err(DyadicError::WrongAtomCount {
                level,
                expected,
                got: total,
            });
        }
        let rv = DyadicRV { level, runs };
        rv.validate()?;
        Ok(rv)
    }

    fn validate(&self) -> Result<(), DyadicError> {
        for (_, v) in &self.runs {
            if let ExtRational::Finite(q) = v {
                if q.is_negative() {
                    return Err(DyadicError::NegativeValue(format_ratio(q)));
                }
            }
        }
        Ok(())
    }

    pub fn constant(level: u32, value: ExtRational) -> Result<Self, DyadicError> {
        check_level(level)?;
        if let ExtRational::Finite(q) = &value {
            if q.is_negative() {
                return Err(DyadicError::NegativeValue(format_ratio(q)));
            }
        }
        Ok(DyadicRV {
            level,
            runs: vec![(atoms_at(level), value)],
        })
    }

    pub fn zero(level: u32) -> Self {
        DyadicRV::constant(level, ExtRational::zero()).expect("zero is valid at any level")
    }

    /// `value` on atoms `start..end`, zero elsewhere.
    pub fn block(
        level: u32,
        start: u128,
        end: u128,
        value: ExtRational,
    ) -> Result<Self, DyadicError> {
        check_level(level)?;
        let n = atoms_at(level);
        if start > end || end > n {
            return Err(DyadicError::BadAtomRange { level, start, end });
        }
        DyadicRV::from_runs(
            level,
            vec![
                (start, ExtRational::zero()),
                (end - start, value),
                (n - end, ExtRational::zero()),
            ],
        )
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn num_atoms(&self) -> u128 {
        atoms_at(self.level)
    }

    pub fn runs(&self) -> &[(u128, ExtRational)] {
        &self.runs
    }

    pub fn is_extended(&self) -> bool {
        self.runs.iter().any(|(_, v)| v.is_infinite())
    }

    pub fn is_zero(&self) -> bool {
        self.runs.iter().all(|(_, v)| v.is_zero())
    }

    pub fn max_value(&self) -> ExtRational {
        self.runs
            .iter()
            .map(|(_, v)| v.clone())
            .max()
            .expect("runs are nonempty")
    }

    /// Dense atomwise values; guarded by [`MAX_DENSE_LEVEL`].
    pub fn values(&self) -> Result<Vec<ExtRational>, DyadicError> {
        if self.level > MAX_DENSE_LEVEL {
            return Err(DyadicError::DenseGuard(self.level));
        }
        let mut out = Vec::with_capacity(self.num_atoms() as usize);
        for (len, v) in &self.runs {
            for _ in 0..*len {
                out.push(v.clone());
            }
        }
        Ok(out)
    }

    /// Replicate each value `2^(target-level)` times. Expectations under any
    /// measure of level >= target are unchanged.
    pub fn lift(&self, target: u32) -> Result<Self, DyadicError> {
        check_level(target)?;
        if target < self.level {
            return Err(DyadicError::CannotCoarsen {
                current: self.level,
                target,
            });
        }
        let scale = 1u128 << (target - self.level);
        Ok(DyadicRV {
            level: target,
            runs: self
                .runs
                .iter()
                .map(|(l, v)| (l * scale, v.clone()))
                .collect(),
        })
    }

    fn zip_map(
        &self,
        other: &DyadicRV,
        f: impl Fn(&ExtRational, &ExtRational) -> ExtRational,
    ) -> DyadicRV {
        let (level, merged) = zip2(self.level, &self.runs, other.level, &other.runs);
        let runs = compress(merged.into_iter().map(|(l, a, b)| (l, f(&a, &b))).collect());
        DyadicRV { level, runs }
    }

    pub fn add(&self, other: &DyadicRV) -> DyadicRV {
        self.zip_map(other, |a, b| a.add(b))
    }

    pub fn scale(&self, factor: &Ratio) -> Result<DyadicRV, DyadicError> {
        if factor.is_negative() {
            return Err(DyadicError::NegativeValue(format_ratio(factor)));
        }
        Ok(DyadicRV {
            level: self.level,
            runs: compress(
                self.runs
                    .iter()
                    .map(|(l, v)| (*l, v.scale(factor)))
                    .collect(),
            ),
        })
    }

    /// `|self - other|` atomwise; rejects `INF` against `INF`.
    pub fn abs_diff(&self, other: &DyadicRV) -> Result<DyadicRV, DyadicError> {
        if self.is_extended() && other.is_extended() {
            // Only an error when infinities actually collide on an atom.
            let (_, merged) = zip2(self.level, &self.runs, other.level, &other.runs);
            if merged
                .iter()
                .any(|(_, a, b)| a.is_infinite() && b.is_infinite())
            {
                return Err(DyadicError::IndeterminateDifference);
            }
        }
        Ok(self.zip_map(other, |a, b| {
            a.abs_diff(b).expect("colliding infinities checked above")
        }))
    }

    /// `(self - other)_+` atomwise on finite inputs.
    pub fn pos_part_diff(&self, other: &DyadicRV) -> Result<DyadicRV, DyadicError> {
        if self.is_extended() || other.is_extended() {
            return Err(DyadicError::ExtendedInput);
        }
        Ok(self.zip_map(other, |a, b| {
            let (a, b) = (a.finite_ref().unwrap(), b.finite_ref().unwrap());
            if a > b {
                ExtRational::Finite(a - b)
            } else {
                ExtRational::zero()
            }
        }))
    }

    pub fn min_with(&self, other: &DyadicRV) -> DyadicRV {
        self.zip_map(other, |a, b| a.min_with(b))
    }

    pub fn max_with(&self, other: &DyadicRV) -> DyadicRV {
        self.zip_map(other, |a, b| a.max_with(b))
    }

    /// Atomwise product with the `0 * INF = 0` convention.
    pub fn mul_pointwise(&self, other: &DyadicRV) -> DyadicRV {
        self.zip_map(other, |a, b| a.mul(b))
    }

    /// Atomwise `self <= other`?
    pub fn dominated_by(&self, other: &DyadicRV) -> bool {
        let (_, merged) = zip2(self.level, &self.runs, other.level, &other.runs);
        merged.iter().all(|(_, a, b)| a <= b)
    }

    /// Atoms (at the common level) where `self > other`.
    pub fn violation_atoms(&self, other: &DyadicRV, cap: usize) -> (u32, Vec<u128>) {
        let (level, merged) = zip2(self.level, &self.runs, other.level, &other.runs);
        let mut atoms = Vec::new();
        let mut pos = 0u128;
        for (len, a, b) in merged {
            if a > b {
                let mut i = pos;
                while i < pos + len && atoms.len() < cap {
                    atoms.push(i);
                    i += 1;
                }
            }
            pos += len;
            if atoms.len() >= cap {
                break;
            }
        }
        (level, atoms)
    }
}

impl PartialEq for DyadicRV {
    fn eq(&self, other: &Self) -> bool {
        let (_, merged) = zip2(self.level, &self.runs, other.level, &other.runs);
        merged.iter().all(|(_, a, b)| a == b)
    }
}

impl Eq for DyadicRV {}

impl fmt::Display for DyadicRV {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "DyadicRV(level {}, {} runs)",
            self.level,
            self.runs.len()
        )
    }
}

/// A strictly positive probability measure on the level-`m` dyadic atoms.
/// Strict positivity means membership in the single equivalence class of
/// measures on this finite model.
#[derive(Clone, Debug)]
pub struct DyadicMeasure {
    level: u32,
    // Per-atom probability, run-length encoded.
    runs: Vec<(u128, Ratio)>,
}

impl DyadicMeasure {
    pub fn from_atom_probs(level: u32, probs: Vec<Ratio>) -> Result<Self, DyadicError> {
        check_level(level)?;
        let expected = atoms_at(level);
        if probs.len() as u128 != expected {
            return Err(DyadicError::WrongAtomCount {
                level,
                expected,
                got: probs.len() as u128,
            });
        }
        Self::from_runs(level, probs.into_iter().map(|p| (1u128, p)).collect())
    }

    pub fn from_runs(level: u32, runs: Vec<(u128, Ratio)>) -> Result<Self, DyadicError> {
        check_level(level)?;
        let runs = compress(runs);
        let total_atoms: u128 = runs.iter().map(|(l, _)| *l).sum();
        let expected = atoms_at(level);
        if total_atoms != expected {
            return Err(DyadicError::WrongAtomCount {
                level,
                expected,
                got: total_atoms,
            });
        }
        if runs.iter().any(|(_, p)| !p.is_positive()) {
            return Err(DyadicError::MeasureNotPositive);
        }
        let total: Ratio = runs
            .iter()
            .map(|(l, p)| from_u128(*l) * p)
            .fold(Ratio::zero(), |acc, x| acc + x);
        if !total.is_one() {
            return Err(DyadicError::MeasureNotNormalized(format_ratio(&total)));
        }
        Ok(DyadicMeasure { level, runs })
    }

    pub fn lebesgue(level: u32) -> Result<Self, DyadicError> {
        check_level(level)?;
        Ok(DyadicMeasure {
            level,
            runs: vec![(atoms_at(level), pow2(-(level as i64)))],
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn runs(&self) -> &[(u128, Ratio)] {
        &self.runs
    }

    pub fn atom_probs(&self) -> Result<Vec<Ratio>, DyadicError> {
        if self.level > MAX_DENSE_LEVEL {
            return Err(DyadicError::DenseGuard(self.level));
        }
        let mut out = Vec::with_capacity(atoms_at(self.level) as usize);
        for (len, p) in &self.runs {
            for _ in 0..*len {
                out.push(p.clone());
            }
        }
        Ok(out)
    }

    /// Refine to a finer level; each atom's mass splits uniformly.
    pub fn lift(&self, target: u32) -> Result<Self, DyadicError> {
        check_level(target)?;
        if target < self.level {
            return Err(DyadicError::CannotCoarsen {
                current: self.level,
                target,
            });
        }
        let shift = target - self.level;
        let scale = 1u128 << shift;
        let factor = pow2(-(shift as i64));
        Ok(DyadicMeasure {
            level: target,
            runs: self
                .runs
                .iter()
                .map(|(l, p)| (l * scale, p * &factor))
                .collect(),
        })
    }
}

impl PartialEq for DyadicMeasure {
    fn eq(&self, other: &Self) -> bool {
        // Compare atom masses at the common refinement.
        let level = self.level.max(other.level);
        let a = self.lift(level).expect("lift to max level");
        let b = other.lift(level).expect("lift to max level");
        let (_, merged) = zip2(level, &a.runs, level, &b.runs);
        merged.iter().all(|(_, p, q)| p == q)
    }
}

impl Eq for DyadicMeasure {}

/// `E_P[f]`; `+INF` exactly when some atom carries an infinite value
/// (every atom has positive mass here).
pub fn expect(f: &DyadicRV, p: &DyadicMeasure) -> ExtRational {
    let level = f.level.max(p.level);
    // Per-atom masses split uniformly when the measure is coarser.
    let needs_split = level > p.level;
    let split = pow2(-((level - p.level) as i64));
    let (_, merged) = zip2(f.level, &f.runs, p.level, &p.runs);
    let mut acc = Ratio::zero();
    for (len, v, prob) in merged {
        match v {
            ExtRational::Infinite => return ExtRational::Infinite,
            ExtRational::Finite(q) => {
                if !q.is_zero() {
                    let mut term = prob * q;
                    if len != 1 {
                        term *= from_u128(len);
                    }
                    if needs_split {
                        term *= &split;
                    }
                    acc += term;
                }
            }
        }
    }
    ExtRational::Finite(acc)
}

/// `E_P[f | F_target]`, the P-weighted block average at the coarser level.
pub fn cond_expect(f: &DyadicRV, target: u32, p: &DyadicMeasure) -> Result<DyadicRV, DyadicError> {
    if f.is_extended() {
        return Err(DyadicError::ExtendedInput);
    }
    if target > f.level {
        return Err(DyadicError::CondTargetTooFine {
            current: f.level,
            target,
        });
    }
    let level = f.level.max(p.level);
    let split = pow2(-((level - p.level) as i64));
    let (_, merged) = zip2(f.level, &f.runs, p.level, &p.runs);
    let block = 1u128 << (level - target);
    let mut out: Vec<(u128, ExtRational)> = Vec::new();
    let mut in_block = 0u128;
    let mut num = Ratio::zero();
    let mut den = Ratio::zero();
    for (mut len, v, prob) in merged {
        let v = v.finite_ref().expect("extended inputs rejected").clone();
        while len > 0 {
            let take = len.min(block - in_block);
            let mass = from_u128(take) * &prob * &split;
            num += &mass * &v;
            den += mass;
            in_block += take;
            len -= take;
            if in_block == block {
                out.push((1, ExtRational::Finite(&num / &den)));
                num = Ratio::zero();
                den = Ratio::zero();
                in_block = 0;
            }
        }
    }
    DyadicRV::from_runs(target, out)
}

/// `E_P[|exp(-f) - exp(-g)|]` in floating point. The induced topology does not
/// depend on the choice of measure in the equivalence class, though the value
/// does. Values beyond roughly 745 saturate the exponential at zero, so the
/// metric cannot numerically separate two functions that are both that large
/// on the same atoms; exact comparisons belong to [`l1_dist`].
pub fn metric_dp(f: &DyadicRV, g: &DyadicRV, p: &DyadicMeasure) -> f64 {
    let level = f.level.max(g.level).max(p.level);
    let split = pow2(-((level - p.level) as i64));
    let (_, merged) = zip3(f.level, &f.runs, g.level, &g.runs, p.level, &p.runs);
    let mut acc = 0.0;
    for (len, vf, vg, prob) in merged {
        let mass = crate::num::to_f64(&(from_u128(len) * prob * &split));
        acc += mass * (vf.exp_neg() - vg.exp_neg()).abs();
    }
    acc
}

/// `E_Q[|f - g|]` exactly; rejects extended inputs.
pub fn l1_dist(f: &DyadicRV, g: &DyadicRV, q: &DyadicMeasure) -> Result<Ratio, DyadicError> {
    if f.is_extended() || g.is_extended() {
        return Err(DyadicError::ExtendedInput);
    }
    let level = f.level.max(g.level).max(q.level);
    let needs_split = level > q.level;
    let split = pow2(-((level - q.level) as i64));
    let (_, merged) = zip3(f.level, &f.runs, g.level, &g.runs, q.level, &q.runs);
    let mut acc = Ratio::zero();
    for (len, vf, vg, prob) in merged {
        let d = (vf.finite_ref().unwrap() - vg.finite_ref().unwrap()).abs();
        if d.is_zero() {
            continue;
        }
        let mut term = prob * d;
        if len != 1 {
            term *= from_u128(len);
        }
        if needs_split {
            term *= &split;
        }
        acc += term;
    }
    Ok(acc)
}

/// `P[f > level_value]` exactly.
pub fn tail_prob(f: &DyadicRV, threshold: &Ratio, p: &DyadicMeasure) -> Ratio {
    let bound = ExtRational::Finite(threshold.clone());
    let level = f.level.max(p.level);
    let split = pow2(-((level - p.level) as i64));
    let (_, merged) = zip2(f.level, &f.runs, p.level, &p.runs);
    let mut acc = Ratio::zero();
    for (len, v, prob) in merged {
        if v > bound {
            acc += from_u128(len) * prob * &split;
        }
    }
    acc
}

/// For each threshold, the supremum of `P[f > l]` over the family.
/// The resulting table is nonincreasing in the threshold.
pub fn l0_bounded_profile(
    family: &[DyadicRV],
    thresholds: &[Ratio],
    p: &DyadicMeasure,
) -> Result<Vec<(Ratio, Ratio)>, DyadicError> {
    if family.is_empty() {
        return Err(DyadicError::EmptyFamily);
    }
    Ok(thresholds
        .iter()
        .map(|l| {
            let sup = family
                .iter()
                .map(|f| tail_prob(f, l, p))
                .max()
                .expect("family is nonempty");
            (l.clone(), sup)
        })
        .collect())
}

/// A strictly positive density `Z` with `E_base[Z] = 1`; the transform
/// `A -> E_base[Z·1_A]` yields another member of the equivalence class.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityTransform {
    base: DyadicMeasure,
    z: DyadicRV,
}

impl DensityTransform {
    pub fn new(base: DyadicMeasure, z: DyadicRV) -> Result<Self, DyadicError> {
        if z.is_extended() {
            return Err(DyadicError::DensityNotPositive);
        }
        if z.runs
            .iter()
            .any(|(_, v)| !v.finite_ref().unwrap().is_positive())
        {
            return Err(DyadicError::DensityNotPositive);
        }
        match expect(&z, &base) {
            ExtRational::Finite(total) if total.is_one() => Ok(DensityTransform { base, z }),
            ExtRational::Finite(total) => {
                Err(DyadicError::DensityNotNormalized(format_ratio(&total)))
            }
            ExtRational::Infinite => Err(DyadicError::DensityNotPositive),
        }
    }

    pub fn base(&self) -> &DyadicMeasure {
        &self.base
    }

    pub fn density(&self) -> &DyadicRV {
        &self.z
    }
}

/// `Q[A] = E_P[Z·1_A]` atom by atom. The result stays strictly positive.
pub fn apply_density(
    p: &DyadicMeasure,
    transform: &DensityTransform,
) -> Result<DyadicMeasure, DyadicError> {
    if transform.base() != p {
        return Err(DyadicError::BaseMismatch);
    }
    let z = &transform.z;
    let level = z.level.max(p.level);
    let split = pow2(-((level - p.level) as i64));
    let (_, merged) = zip2(z.level, &z.runs, p.level, &p.runs);
    let runs = merged
        .into_iter()
        .map(|(len, v, prob)| (len, prob * &split * v.finite_ref().expect("finite density")))
        .collect();
    DyadicMeasure::from_runs(level, runs)
}

/// Atomwise `dQ/dP` for two measures on the same model.
pub fn density_between(q: &DyadicMeasure, p: &DyadicMeasure) -> DyadicRV {
    let level = q.level.max(p.level);
    let split_q = pow2(-((level - q.level) as i64));
    let split_p = pow2(-((level - p.level) as i64));
    let (_, merged) = zip2(q.level, &q.runs, p.level, &p.runs);
    let runs = merged
        .into_iter()
        .map(|(len, qp, pp)| (len, ExtRational::Finite(qp * &split_q / (pp * &split_p))))
        .collect();
    DyadicRV::from_runs(level, runs).expect("densities of positive measures are positive")
}

/// A set of atoms, stored as its 0/1 indicator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AtomSet {
    ind: DyadicRV,
}

impl AtomSet {
    pub fn full(level: u32) -> Result<Self, DyadicError> {
        Ok(AtomSet {
            ind: DyadicRV::constant(level, ExtRational::Finite(Ratio::one()))?,
        })
    }

    pub fn empty(level: u32) -> Result<Self, DyadicError> {
        check_level(level)?;
        Ok(AtomSet {
            ind: DyadicRV::zero(level),
        })
    }

    pub fn from_indicator(ind: DyadicRV) -> Result<Self, DyadicError> {
        let one = ExtRational::Finite(Ratio::one());
        let zero = ExtRational::zero();
        if ind.runs.iter().any(|(_, v)| *v != one && *v != zero) {
            return Err(DyadicError::NotIndicator);
        }
        Ok(AtomSet { ind })
    }

    /// The atoms `start..end` at `level`.
    pub fn from_atom_range(level: u32, start: u128, end: u128) -> Result<Self, DyadicError> {
        Ok(AtomSet {
            ind: DyadicRV::block(level, start, end, ExtRational::Finite(Ratio::one()))?,
        })
    }

    pub fn indicator(&self) -> &DyadicRV {
        &self.ind
    }

    pub fn level(&self) -> u32 {
        self.ind.level
    }

    pub fn complement(&self) -> AtomSet {
        let one = ExtRational::Finite(Ratio::one());
        let runs = self
            .ind
            .runs
            .iter()
            .map(|(l, v)| {
                (
                    *l,
                    if v.is_zero() {
                        one.clone()
                    } else {
                        ExtRational::zero()
                    },
                )
            })
            .collect();
        AtomSet {
            ind: DyadicRV::from_runs(self.ind.level, runs).expect("complement keeps atom count"),
        }
    }

    pub fn union(&self, other: &AtomSet) -> AtomSet {
        AtomSet {
            ind: self.ind.max_with(&other.ind),
        }
    }

    pub fn intersect(&self, other: &AtomSet) -> AtomSet {
        AtomSet {
            ind: self.ind.min_with(&other.ind),
        }
    }

    pub fn minus(&self, other: &AtomSet) -> AtomSet {
        self.intersect(&other.complement())
    }

    pub fn mass(&self, p: &DyadicMeasure) -> Ratio {
        match expect(&self.ind, p) {
            ExtRational::Finite(q) => q,
            ExtRational::Infinite => unreachable!("indicators are finite"),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.ind.is_zero()
    }

    pub fn is_full(&self) -> bool {
        self.ind.runs.iter().all(|(_, v)| !v.is_zero())
    }

    pub fn subset_of(&self, other: &AtomSet) -> bool {
        self.ind.dominated_by(&other.ind)
    }

    /// Sorted atom indices; guarded by [`MAX_DENSE_LEVEL`].
    pub fn atom_indices(&self) -> Result<Vec<u64>, DyadicError> {
        if self.ind.level > MAX_DENSE_LEVEL {
            return Err(DyadicError::DenseGuard(self.ind.level));
        }
        let mut out = Vec::new();
        let mut pos = 0u128;
        for (len, v) in &self.ind.runs {
            if !v.is_zero() {
                for i in pos..pos + len {
                    out.push(i as u64);
                }
            }
            pos += len;
        }
        Ok(out)
    }
}

impl DyadicRV {
    /// `f · 1_A`; with the `0 * INF = 0` convention an extended value masked
    /// away by the set disappears.
    pub fn restrict(&self, set: &AtomSet) -> DyadicRV {
        self.mul_pointwise(set.indicator())
    }
}

// --- serialization -----------------------------------------------------------
//
// DyadicRV: {"level": m, "values": ["p/q" | "INF", ...]} with 2^m entries.
// DyadicMeasure: {"level": m, "atom_probs": ["p/q", ...]}.
// Emission is canonical (reduced fractions), so emitted documents round-trip
// bit-exactly. Dense forms are refused above MAX_DENSE_LEVEL.

#[derive(Serialize, Deserialize)]
struct RvRepr {
    level: u32,
    values: Vec<String>,
}

impl Serialize for DyadicRV {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let values = self
            .values()
            .map_err(|e| S::Error::custom(e.to_string()))?
            .iter()
            .map(|v| v.to_string())
            .collect();
        RvRepr {
            level: self.level,
            values,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DyadicRV {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = RvRepr::deserialize(deserializer)?;
        if repr.level > MAX_DENSE_LEVEL {
            return Err(D::Error::custom(
                DyadicError::DenseGuard(repr.level).to_string(),
            ));
        }
        let values = repr
            .values
            .iter()
            .map(|s| parse_ext(s))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| D::Error::custom(e.to_string()))?;
        DyadicRV::from_values(repr.level, values).map_err(|e| D::Error::custom(e.to_string()))
    }
}

impl Serialize for DensityTransform {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        // The base measure is context; the density carries the content.
        self.z.serialize(serializer)
    }
}

#[derive(Serialize, Deserialize)]
struct MeasureRepr {
    level: u32,
    atom_probs: Vec<String>,
}

impl Serialize for DyadicMeasure {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let atom_probs = self
            .atom_probs()
            .map_err(|e| S::Error::custom(e.to_string()))?
            .iter()
            .map(format_ratio)
            .collect();
        MeasureRepr {
            level: self.level,
            atom_probs,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DyadicMeasure {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = MeasureRepr::deserialize(deserializer)?;
        if repr.level > MAX_DENSE_LEVEL {
            return Err(D::Error::custom(
                DyadicError::DenseGuard(repr.level).to_string(),
            ));
        }
        let probs = repr
            .atom_probs
            .iter()
            .map(|s| parse_ratio(s))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| D::Error::custom(e.to_string()))?;
        DyadicMeasure::from_atom_probs(repr.level, probs)
            .map_err(|e| D::Error::custom(e.to_string()))
    }
}
