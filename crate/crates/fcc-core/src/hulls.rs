//! Forward convex combinations and hull queries.
//!
//! A sequence of forward convex combinations assigns to each output index `n`
//! a convex combination of tail elements `f_n, f_{n+1}, ...`. This module
//! holds the schedule type and its validation, hull and solid-hull membership
//! and L1 projection as exact linear programs, the polar functional, a
//! conditional-gradient maximizer for concave utilities over forward windows,
//! and the extraction of a convergent sequence of combinations.
//!
//! The extraction engine only ever produces finite-valued limit estimates; a
//! diverging Cauchy profile is reported as an inconclusive verdict rather
//! than synthesized into a `+INF`-valued estimate.
//!
//! Solves are independent across output indices and share no mutable state;
//! pivoting and vertex selection are deterministic, so results do not depend
//! on evaluation order.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::de::Error as DeError;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::dyadic::{metric_dp, DyadicError, DyadicMeasure, DyadicRV, MAX_DENSE_LEVEL};
use crate::num::{
    format_ratio, from_u128, parse_nonnegative_ratio, pow2, ratio, ExtRational, Ratio,
};
use crate::profile::tail_decreasing_below_f64;
use crate::simplex::{solve, solve_from_basis, LpError, LpOutcome, StandardLp};

#[derive(Debug, Error)]
pub enum HullError {
    #[error("generator list must be nonempty")]
    EmptyGenerators,
    #[error("operation rejects extended (+INF) inputs")]
    ExtendedInput,
    #[error("schedule output {output} draws on past index {past}")]
    Forwardness { output: usize, past: usize },
    #[error("schedule output {output} weights sum to {sum}, expected exactly 1")]
    WeightsNotNormalized { output: usize, sum: String },
    #[error("schedule output {output} carries a negative weight")]
    NegativeWeight { output: usize },
    #[error("schedule output {output} has no entries")]
    EmptyEntry { output: usize },
    #[error("schedule output {output} uses index {index} beyond horizon {horizon}")]
    SourceBeyondHorizon {
        output: usize,
        index: usize,
        horizon: usize,
    },
    #[error("window {start}..={end} is empty or out of range for horizon {horizon}")]
    BadWindow {
        start: usize,
        end: usize,
        horizon: usize,
    },
    #[error("simplex point supported at {index}, beyond truncation {truncation}")]
    SupportBeyondTruncation { index: usize, truncation: usize },
    #[error("simplex point weights exceed total mass 1")]
    WeightMassExceedsOne,
    #[error("simplex point carries a negative or duplicated entry at index {0}")]
    BadSimplexEntry(usize),
    #[error("common level {0} is too fine for the dense gradient engine (cap {MAX_DENSE_LEVEL})")]
    DenseGuard(u32),
    #[error("tolerance/growth parameter must be positive, got {0}")]
    BadTolerance(f64),
    #[error(
        "conditional gradient missed the duality-gap target within {iterations} iterations (gap {gap:.3e})"
    )]
    NonConvergence { gap: f64, iterations: usize },
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Dyadic(#[from] DyadicError),
}

// --- schedules ---------------------------------------------------------------

/// Per-output convex weights over future indices. Output and source indices
/// are 1-based, matching sequence indexing everywhere in this crate.
/// Consecutive outputs frequently share one combination (block schedules,
/// probe fills), so entries are reference-counted and validation and
/// evaluation treat each distinct entry once.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardSchedule {
    entries: Vec<Arc<Vec<(usize, Ratio)>>>,
}

impl ForwardSchedule {
    pub fn new(entries: Vec<Vec<(usize, Ratio)>>) -> Result<Self, HullError> {
        Self::from_shared(entries.into_iter().map(Arc::new).collect())
    }

    pub fn from_shared(entries: Vec<Arc<Vec<(usize, Ratio)>>>) -> Result<Self, HullError> {
        let schedule = ForwardSchedule { entries };
        schedule.validate()?;
        Ok(schedule)
    }

    /// Forwardness, nonnegativity, and exact normalization of every entry.
    /// Weight sums and minimal sources are computed once per distinct entry.
    pub fn validate(&self) -> Result<(), HullError> {
        let mut seen: HashMap<*const Vec<(usize, Ratio)>, usize> = HashMap::new();
        for (i, entry) in self.entries.iter().enumerate() {
            let output = i + 1;
            if entry.is_empty() {
                return Err(HullError::EmptyEntry { output });
            }
            let key = Arc::as_ptr(entry);
            let min_source = match seen.get(&key) {
                Some(min) => *min,
                None => {
                    let mut sum = Ratio::zero();
                    let mut min = usize::MAX;
                    for (source, weight) in entry.iter() {
                        if weight.is_negative() {
                            return Err(HullError::NegativeWeight { output });
                        }
                        min = min.min(*source);
                        sum += weight;
                    }
                    if !sum.is_one() {
                        return Err(HullError::WeightsNotNormalized {
                            output,
                            sum: format_ratio(&sum),
                        });
                    }
                    seen.insert(key, min);
                    min
                }
            };
            if min_source < output {
                return Err(HullError::Forwardness {
                    output,
                    past: min_source,
                });
            }
        }
        Ok(())
    }

    pub fn identity(outputs: usize) -> Self {
        ForwardSchedule {
            entries: (1..=outputs)
                .map(|n| Arc::new(vec![(n, Ratio::one())]))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Arc<Vec<(usize, Ratio)>>] {
        &self.entries
    }
}

#[derive(Serialize, Deserialize)]
struct EntryRepr {
    k: usize,
    w: String,
}

impl Serialize for ForwardSchedule {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let repr: Vec<Vec<EntryRepr>> = self
            .entries
            .iter()
            .map(|entry| {
                entry
                    .iter()
                    .map(|(k, w)| EntryRepr {
                        k: *k,
                        w: format_ratio(w),
                    })
                    .collect()
            })
            .collect();
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ForwardSchedule {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr: Vec<Vec<EntryRepr>> = Vec::deserialize(deserializer)?;
        let entries = repr
            .into_iter()
            .map(|entry| {
                entry
                    .into_iter()
                    .map(|e| {
                        Ok((
                            e.k,
                            parse_nonnegative_ratio(&e.w).map_err(D::Error::custom)?,
                        ))
                    })
                    .collect::<Result<Vec<_>, D::Error>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        ForwardSchedule::new(entries).map_err(|e| D::Error::custom(e.to_string()))
    }
}

/// Evaluate `h_n = sum_k w_k f_k` exactly for every output index; distinct
/// entries are evaluated once and shared outputs are cloned.
pub fn apply_schedule(
    schedule: &ForwardSchedule,
    seq: &[DyadicRV],
) -> Result<Vec<DyadicRV>, HullError> {
    schedule.validate()?;
    let horizon = seq.len();
    let mut cache: HashMap<*const Vec<(usize, Ratio)>, DyadicRV> = HashMap::new();
    let mut outputs = Vec::with_capacity(schedule.len());
    for (i, entry) in schedule.entries.iter().enumerate() {
        let output = i + 1;
        if let Some(h) = cache.get(&Arc::as_ptr(entry)) {
            outputs.push(h.clone());
            continue;
        }
        let mut acc: Option<DyadicRV> = None;
        for (source, weight) in entry.iter() {
            if *source > horizon {
                return Err(HullError::SourceBeyondHorizon {
                    output,
                    index: *source,
                    horizon,
                });
            }
            let f = &seq[source - 1];
            if f.is_extended() {
                return Err(HullError::ExtendedInput);
            }
            let term = f.scale(weight)?;
            acc = Some(match acc {
                None => term,
                Some(sum) => sum.add(&term),
            });
        }
        let h = acc.expect("entries are nonempty");
        cache.insert(Arc::as_ptr(entry), h.clone());
        outputs.push(h);
    }
    Ok(outputs)
}

// --- simplex points ----------------------------------------------------------

/// Finitely supported weights `alpha_n >= 0` with `sum alpha_n <= 1`; the
/// remainder `1 - sum alpha_n` is carried by a designated limit element.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexPoint {
    weights: Vec<(usize, Ratio)>,
}

impl SimplexPoint {
    /// Entries must use strictly increasing 1-based indices.
    pub fn new(weights: Vec<(usize, Ratio)>) -> Result<Self, HullError> {
        let mut total = Ratio::zero();
        let mut last = 0usize;
        for (index, w) in &weights {
            if *index == 0 || *index <= last || w.is_negative() {
                return Err(HullError::BadSimplexEntry(*index));
            }
            last = *index;
            total += w;
        }
        if total > Ratio::one() {
            return Err(HullError::WeightMassExceedsOne);
        }
        Ok(SimplexPoint { weights })
    }

    pub fn unit(index: usize) -> Self {
        SimplexPoint {
            weights: vec![(index, Ratio::one())],
        }
    }

    pub fn empty() -> Self {
        SimplexPoint {
            weights: Vec::new(),
        }
    }

    pub fn weights(&self) -> &[(usize, Ratio)] {
        &self.weights
    }

    pub fn total_mass(&self) -> Ratio {
        self.weights
            .iter()
            .fold(Ratio::zero(), |acc, (_, w)| acc + w)
    }

    pub fn support_max(&self) -> usize {
        self.weights.last().map(|(i, _)| *i).unwrap_or(0)
    }

    pub fn weight_at(&self, index: usize) -> Ratio {
        self.weights
            .iter()
            .find(|(i, _)| *i == index)
            .map(|(_, w)| w.clone())
            .unwrap_or_else(Ratio::zero)
    }
}

/// `sum alpha_n f_n + (1 - sum alpha_n) f`, evaluated exactly.
pub fn simplex_limit_point(
    alpha: &SimplexPoint,
    seq: &[DyadicRV],
    limit: &DyadicRV,
    truncation: usize,
) -> Result<DyadicRV, HullError> {
    if alpha.support_max() > truncation {
        return Err(HullError::SupportBeyondTruncation {
            index: alpha.support_max(),
            truncation,
        });
    }
    if truncation > seq.len() {
        return Err(HullError::BadWindow {
            start: 1,
            end: truncation,
            horizon: seq.len(),
        });
    }
    let remainder = Ratio::one() - alpha.total_mass();
    let mut acc = limit.scale(&remainder)?;
    for (index, w) in alpha.weights() {
        if seq[index - 1].is_extended() {
            return Err(HullError::ExtendedInput);
        }
        acc = acc.add(&seq[index - 1].scale(w)?);
    }
    Ok(acc)
}

// --- common refinement for the LP builders ------------------------------------

fn require_finite(fns: &[&DyadicRV]) -> Result<(), HullError> {
    if fns.iter().any(|f| f.is_extended()) {
        return Err(HullError::ExtendedInput);
    }
    Ok(())
}

/// Segments of the common refinement of `fns` (and the measure's runs when
/// given), with each function's constant value per segment. `mass` is the
/// total probability of the segment, or its atom count when no measure is
/// supplied.
struct Refinement {
    segments: Vec<(Ratio, Vec<Ratio>)>,
}

fn refine(
    fns: &[&DyadicRV],
    measure: Option<&DyadicMeasure>,
    level_floor: u32,
) -> Result<Refinement, HullError> {
    require_finite(fns)?;
    let mut level = level_floor;
    for f in fns {
        level = level.max(f.level());
    }
    if let Some(p) = measure {
        level = level.max(p.level());
    }
    // Fold one function at a time into the segment list.
    let mut segs: Vec<(u128, Vec<Ratio>)> = vec![(1u128 << level, Vec::new())];
    for f in fns {
        let (_, merged) = crate::dyadic::zip2(level, &segs, f.level(), f.runs());
        segs = merged
            .into_iter()
            .map(|(len, mut vals, v)| {
                vals.push(v.finite_ref().expect("finite checked").clone());
                (len, vals)
            })
            .collect();
    }
    let segments = match measure {
        Some(p) => {
            let split = pow2(-((level - p.level()) as i64));
            let (_, merged) = crate::dyadic::zip2(level, &segs, p.level(), p.runs());
            merged
                .into_iter()
                .map(|(len, vals, prob)| (from_u128(len) * prob * &split, vals))
                .collect()
        }
        None => segs
            .into_iter()
            .map(|(len, vals)| (from_u128(len), vals))
            .collect(),
    };
    Ok(Refinement { segments })
}

// --- membership and projection -------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub enum HullMembership {
    Feasible(Vec<Ratio>),
    Infeasible,
}

/// Exact feasibility of `g = sum lambda_i gens_i` over the simplex.
pub fn hull_member(
    g: &DyadicRV,
    gens: &[DyadicRV],
    level_floor: u32,
) -> Result<HullMembership, HullError> {
    if gens.is_empty() {
        return Err(HullError::EmptyGenerators);
    }
    let mut fns: Vec<&DyadicRV> = gens.iter().collect();
    fns.push(g);
    let refinement = refine(&fns, None, level_floor)?;
    let k = gens.len();

    // Identical (values, target) rows collapse to one equality constraint.
    let mut unique: BTreeMap<Vec<Ratio>, ()> = BTreeMap::new();
    for (_, vals) in &refinement.segments {
        unique.entry(vals.clone()).or_insert(());
    }
    let mut rows = Vec::with_capacity(unique.len() + 1);
    let mut rhs = Vec::with_capacity(unique.len() + 1);
    for vals in unique.keys() {
        rows.push(vals[..k].to_vec());
        rhs.push(vals[k].clone());
    }
    rows.push(vec![Ratio::one(); k]);
    rhs.push(Ratio::one());

    let lp = StandardLp {
        objective: vec![Ratio::zero(); k],
        rows,
        rhs,
    };
    match solve(&lp)? {
        LpOutcome::Optimal { x, .. } => Ok(HullMembership::Feasible(x)),
        LpOutcome::Infeasible => Ok(HullMembership::Infeasible),
        LpOutcome::Unbounded => unreachable!("feasibility program with zero objective"),
    }
}

/// Membership in the solid hull: some simplex point dominates `g` atomwise.
pub fn solid_hull_member(g: &DyadicRV, gens: &[DyadicRV]) -> Result<HullMembership, HullError> {
    if gens.is_empty() {
        return Err(HullError::EmptyGenerators);
    }
    let mut fns: Vec<&DyadicRV> = gens.iter().collect();
    fns.push(g);
    let refinement = refine(&fns, None, 0)?;
    let k = gens.len();

    let mut unique: BTreeMap<Vec<Ratio>, ()> = BTreeMap::new();
    for (_, vals) in &refinement.segments {
        unique.entry(vals.clone()).or_insert(());
    }
    let r = unique.len();
    // Variables: lambda (k), then one surplus per unique row.
    let mut rows = Vec::with_capacity(r + 1);
    let mut rhs = Vec::with_capacity(r + 1);
    for (j, vals) in unique.keys().enumerate() {
        let mut row = vec![Ratio::zero(); k + r];
        row[..k].clone_from_slice(&vals[..k]);
        row[k + j] = -Ratio::one();
        rows.push(row);
        rhs.push(vals[k].clone());
    }
    let mut norm = vec![Ratio::zero(); k + r];
    for entry in norm.iter_mut().take(k) {
        *entry = Ratio::one();
    }
    rows.push(norm);
    rhs.push(Ratio::one());

    let lp = StandardLp {
        objective: vec![Ratio::zero(); k + r],
        rows,
        rhs,
    };
    match solve(&lp)? {
        LpOutcome::Optimal { x, .. } => Ok(HullMembership::Feasible(x[..k].to_vec())),
        LpOutcome::Infeasible => Ok(HullMembership::Infeasible),
        LpOutcome::Unbounded => unreachable!("feasibility program with zero objective"),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct L1Projection {
    /// Convex weights over the window `start..=end`, in window order.
    pub weights: Vec<Ratio>,
    /// Exact optimal value of `E_P|sum lambda_k f_k - g|`.
    pub residual: Ratio,
}

/// Minimize `E_P|sum lambda_k f_k - g|` over convex weights on the window,
/// reformulated with one positive/negative deviation pair per refinement
/// segment. The program is always feasible.
pub fn l1_project_forward(
    seq: &[DyadicRV],
    start: usize,
    end: usize,
    g: &DyadicRV,
    p: &DyadicMeasure,
) -> Result<L1Projection, HullError> {
    if start == 0 || start > end || end > seq.len() {
        return Err(HullError::BadWindow {
            start,
            end,
            horizon: seq.len(),
        });
    }
    let window: Vec<&DyadicRV> = seq[start - 1..end].iter().collect();
    let w = window.len();
    let mut fns = window;
    fns.push(g);
    let refinement = refine(&fns, Some(p), 0)?;

    // Collapse identical rows, accumulating their probability mass in the
    // objective.
    let mut unique: BTreeMap<Vec<Ratio>, Ratio> = BTreeMap::new();
    for (mass, vals) in refinement.segments {
        unique
            .entry(vals)
            .and_modify(|m| *m += &mass)
            .or_insert(mass);
    }
    let r = unique.len();
    // Variables: lambda (w), then u_j = (h-g)_+ and v_j = (h-g)_- per row.
    let mut objective = vec![Ratio::zero(); w + 2 * r];
    let mut rows = Vec::with_capacity(r + 1);
    let mut rhs = Vec::with_capacity(r + 1);
    for (j, (vals, mass)) in unique.iter().enumerate() {
        let mut row = vec![Ratio::zero(); w + 2 * r];
        row[..w].clone_from_slice(&vals[..w]);
        row[w + j] = -Ratio::one();
        row[w + r + j] = Ratio::one();
        rows.push(row);
        rhs.push(vals[w].clone());
        objective[w + j] = mass.clone();
        objective[w + r + j] = mass.clone();
    }
    let mut norm = vec![Ratio::zero(); w + 2 * r];
    for entry in norm.iter_mut().take(w) {
        *entry = Ratio::one();
    }
    rows.push(norm);
    rhs.push(Ratio::one());

    // The point lambda = e_1 with its deviations is basic feasible: per
    // segment the matching positive or negative part carries |f_first - g|.
    let mut basis = Vec::with_capacity(r + 1);
    for (j, (vals, _)) in unique.iter().enumerate() {
        if vals[0] >= vals[w] {
            basis.push(w + j);
        } else {
            basis.push(w + r + j);
        }
    }
    basis.push(0);

    let lp = StandardLp {
        objective,
        rows,
        rhs,
    };
    match solve_from_basis(&lp, &basis)? {
        LpOutcome::Optimal { x, objective } => Ok(L1Projection {
            weights: x[..w].to_vec(),
            residual: objective,
        }),
        LpOutcome::Infeasible => unreachable!("the weight simplex is nonempty"),
        LpOutcome::Unbounded => unreachable!("the objective is bounded below by zero"),
    }
}

// --- polar ---------------------------------------------------------------------

/// `max_i E_P[g · gens_i]`; the supremum of the linear functional over the
/// hull is attained at a vertex. Membership in the polar means the value is
/// at most one.
pub fn polar_value(g: &DyadicRV, gens: &[DyadicRV], p: &DyadicMeasure) -> Result<Ratio, HullError> {
    if gens.is_empty() {
        return Err(HullError::EmptyGenerators);
    }
    require_finite(&gens.iter().collect::<Vec<_>>())?;
    if g.is_extended() {
        return Err(HullError::ExtendedInput);
    }
    let mut best: Option<Ratio> = None;
    for f in gens {
        let value = match crate::dyadic::expect(&g.mul_pointwise(f), p) {
            ExtRational::Finite(q) => q,
            ExtRational::Infinite => unreachable!("finite inputs"),
        };
        best = Some(match best {
            None => value,
            Some(b) => b.max(value),
        });
    }
    Ok(best.expect("generators are nonempty"))
}

pub fn polar_member(g: &DyadicRV, gens: &[DyadicRV], p: &DyadicMeasure) -> Result<bool, HullError> {
    Ok(polar_value(g, gens, p)? <= Ratio::one())
}

// --- conditional gradient over a forward window ----------------------------------

/// Result of one concave maximization over a forward window.
#[derive(Clone, Debug)]
pub struct FwSolve {
    /// 1-based sequence indices paired with exact convex weights.
    pub weights: Vec<(usize, Ratio)>,
    pub objective: f64,
    pub gap: f64,
    pub iterations: usize,
    /// Objective after each accepted iterate, starting from the uniform
    /// initial point. Nondecreasing by construction.
    pub trace: Vec<f64>,
}

fn dense_masses(p: &DyadicMeasure, level: u32) -> Vec<f64> {
    let scale = 1u128 << (level - p.level());
    let split = pow2(-((level - p.level()) as i64));
    let mut out = Vec::with_capacity(1usize << level);
    for (len, prob) in p.runs() {
        let mass = crate::num::to_f64(&(prob * &split));
        for _ in 0..(*len * scale) {
            out.push(mass);
        }
    }
    out
}

/// Add `weight * f` onto a dense accumulator, walking run boundaries.
fn add_scaled(acc: &mut [f64], f: &DyadicRV, level: u32, weight: f64) {
    let scale = 1usize << (level - f.level());
    let mut pos = 0usize;
    for (len, v) in f.runs() {
        let span = *len as usize * scale;
        let value = v.to_f64();
        if value != 0.0 {
            for cell in &mut acc[pos..pos + span] {
                *cell += weight * value;
            }
        }
        pos += span;
    }
}

/// Inner product of `f` with a per-atom vector given by its prefix sums.
fn dot_with_prefix(f: &DyadicRV, level: u32, prefix: &[f64]) -> f64 {
    let scale = 1usize << (level - f.level());
    let mut pos = 0usize;
    let mut acc = 0.0;
    for (len, v) in f.runs() {
        let span = *len as usize * scale;
        let value = v.to_f64();
        if value != 0.0 {
            acc += value * (prefix[pos + span] - prefix[pos]);
        }
        pos += span;
    }
    acc
}

/// Maximize `E_P[1 - exp(-h)]` over convex combinations of the window
/// `seq[start..=end]`, by conditional gradient from the uniform point. The
/// step starts at `2/(t+2)` and halves until the objective does not drop, so
/// the recorded trace is nondecreasing and the exact weights stay rational.
/// Stops once the duality gap is at most `tol`. Vertex ties break toward the
/// lowest index.
pub fn concave_maximize_forward(
    seq: &[DyadicRV],
    start: usize,
    end: usize,
    p: &DyadicMeasure,
    tol: f64,
) -> Result<FwSolve, HullError> {
    concave_maximize_with_cap(seq, start, end, p, tol, 10_000)
}

pub fn concave_maximize_with_cap(
    seq: &[DyadicRV],
    start: usize,
    end: usize,
    p: &DyadicMeasure,
    tol: f64,
    cap: usize,
) -> Result<FwSolve, HullError> {
    if tol <= 0.0 || tol.is_nan() {
        return Err(HullError::BadTolerance(tol));
    }
    if start == 0 || start > end || end > seq.len() {
        return Err(HullError::BadWindow {
            start,
            end,
            horizon: seq.len(),
        });
    }
    let window: Vec<&DyadicRV> = seq[start - 1..end].iter().collect();
    require_finite(&window)?;
    let mut level = p.level();
    for f in &window {
        level = level.max(f.level());
    }
    if level > MAX_DENSE_LEVEL {
        return Err(HullError::DenseGuard(level));
    }
    let atoms = 1usize << level;
    let masses = dense_masses(p, level);
    let j = window.len();

    // Exact weights with a float mirror of the current combination.
    let mut weights = vec![Ratio::new(1.into(), (j as i64).into()); j];
    let mut current = vec![0.0f64; atoms];
    let uniform = 1.0 / j as f64;
    for f in &window {
        add_scaled(&mut current, f, level, uniform);
    }

    let objective_of = |combo: &[f64]| -> f64 {
        masses
            .iter()
            .zip(combo.iter())
            .map(|(m, x)| m * (1.0 - (-x).exp()))
            .sum()
    };

    let mut objective = objective_of(&current);
    let mut trace = vec![objective];
    let mut gap = f64::INFINITY;

    for t in 0..cap {
        // Measure-weighted gradient, via prefix sums over atoms.
        let mut prefix = Vec::with_capacity(atoms + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for (mass, x) in masses.iter().zip(current.iter()) {
            acc += mass * (-x).exp();
            prefix.push(acc);
        }
        let grads: Vec<f64> = window
            .iter()
            .map(|f| dot_with_prefix(f, level, &prefix))
            .collect();
        let mut best = 0usize;
        for (idx, g) in grads.iter().enumerate() {
            if *g > grads[best] {
                best = idx;
            }
        }
        let inner: f64 = grads
            .iter()
            .zip(weights.iter())
            .map(|(g, w)| g * crate::num::to_f64(w))
            .sum();
        gap = grads[best] - inner;
        if gap <= tol {
            return Ok(FwSolve {
                weights: attach_indices(start, weights),
                objective,
                gap,
                iterations: t,
                trace,
            });
        }

        let mut accepted = false;
        for halving in 0..60u32 {
            let gamma = 2.0 / (t as f64 + 2.0) / f64::powi(2.0, halving as i32);
            let mut candidate: Vec<f64> = current.iter().map(|x| x * (1.0 - gamma)).collect();
            add_scaled(&mut candidate, window[best], level, gamma);
            let cand_obj = objective_of(&candidate);
            if cand_obj >= objective {
                let gamma_exact = ratio(2, (t as i64) + 2) * pow2(-(halving as i64));
                let keep = Ratio::one() - &gamma_exact;
                for w in weights.iter_mut() {
                    *w *= &keep;
                }
                weights[best] += &gamma_exact;
                current = candidate;
                objective = cand_obj;
                trace.push(objective);
                accepted = true;
                break;
            }
        }
        if !accepted {
            // Numerically stationary above the gap target: no step of any
            // size improves, so the gap cannot close. Report instead of
            // looping.
            return Err(HullError::NonConvergence {
                gap,
                iterations: t,
            });
        }
    }
    Err(HullError::NonConvergence {
        gap,
        iterations: cap,
    })
}

fn attach_indices(start: usize, weights: Vec<Ratio>) -> Vec<(usize, Ratio)> {
    weights
        .into_iter()
        .enumerate()
        .map(|(i, w)| (start + i, w))
        .collect()
}

// --- extraction ------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct KomlosOptions {
    /// Cauchy threshold for the extracted profile; also the duality-gap
    /// target of each window solve.
    pub tol: f64,
    /// Window `[n, floor(n * growth)]`. Unbounded lookahead is impossible at
    /// a finite horizon, so the growth factor is explicit and configurable.
    pub window_growth: Ratio,
    pub fw_cap: usize,
}

impl Default for KomlosOptions {
    fn default() -> Self {
        KomlosOptions {
            tol: 1e-6,
            window_growth: ratio(2, 1),
            fw_cap: 10_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KomlosExtraction {
    pub schedule: ForwardSchedule,
    pub limit_estimate: DyadicRV,
    /// Start indices actually solved (geometric grid).
    pub probes: Vec<usize>,
    /// `metric_dP(h_i, h_{i+1})` over consecutive probes.
    pub cauchy_profile: Vec<f64>,
    pub solves: Vec<FwSolve>,
    /// Whether the Cauchy profile certifies convergence at `tol`; a negative
    /// answer is a verdict, not an error.
    pub conclusive: bool,
}

fn window_end(n: usize, growth: &Ratio) -> usize {
    let end = from_u128(n as u128) * growth;
    end.to_integer().to_usize().unwrap_or(usize::MAX)
}

/// Extract a convergent sequence of forward convex combinations by maximizing
/// the concave utility over geometrically growing windows. Probe solves fill
/// forward: an output index between probes reuses the next probe's weights,
/// which keeps every entry forward.
pub fn komlos_extract(
    seq: &[DyadicRV],
    p: &DyadicMeasure,
    opts: &KomlosOptions,
) -> Result<KomlosExtraction, HullError> {
    if seq.is_empty() {
        return Err(HullError::EmptyGenerators);
    }
    if opts.window_growth < Ratio::one() {
        return Err(HullError::BadTolerance(crate::num::to_f64(
            &opts.window_growth,
        )));
    }
    let horizon = seq.len();
    let mut probes = vec![1usize];
    let mut n = 2usize;
    while window_end(n, &opts.window_growth) <= horizon {
        probes.push(n);
        n *= 2;
    }

    let mut solves = Vec::with_capacity(probes.len());
    let mut outputs = Vec::with_capacity(probes.len());
    for &probe in &probes {
        let end = window_end(probe, &opts.window_growth)
            .min(horizon)
            .max(probe);
        let solve = concave_maximize_with_cap(seq, probe, end, p, opts.tol, opts.fw_cap)?;
        let h = apply_schedule(&ForwardSchedule::new(vec![solve.weights.clone()])?, seq)
            .map(|mut v| v.pop().expect("one output"))?;
        outputs.push(h);
        solves.push(solve);
    }

    let cauchy_profile: Vec<f64> = outputs
        .windows(2)
        .map(|w| metric_dp(&w[0], &w[1], p))
        .collect();
    let conclusive =
        !cauchy_profile.is_empty() && tail_decreasing_below_f64(&cauchy_profile, opts.tol);

    let last_probe = *probes.last().expect("probes nonempty");
    let shared: Vec<Arc<Vec<(usize, Ratio)>>> =
        solves.iter().map(|s| Arc::new(s.weights.clone())).collect();
    let mut entries = Vec::with_capacity(last_probe);
    for out in 1..=last_probe {
        let i = probes
            .iter()
            .position(|&probe| probe >= out)
            .expect("last probe bounds the outputs");
        entries.push(Arc::clone(&shared[i]));
    }
    let schedule = ForwardSchedule::from_shared(entries)?;

    Ok(KomlosExtraction {
        schedule,
        limit_estimate: outputs.last().expect("probes nonempty").clone(),
        probes,
        cauchy_profile,
        solves,
        conclusive,
    })
}
