//! Canonical sequence families and custom sequence ingestion.
//!
//! The sliding hump sweeps tall thin indicators across dyadic blocks: for
//! `n = 2^(m-1) + k - 1` with `1 <= k <= 2^(m-1)` the n-th element is
//! `(m-1)·2^(m-1)` on the k-th level-`(m-1)` atom. It converges to zero in
//! probability while its means grow without bound.
//!
//! The Rademacher shift realizes a `{0,2}`-valued family with unit mean and
//! pairwise independent coordinates as `1 + w_n`, where `w_n` is the product
//! of the base Rademacher functions selected by the binary digits of `n`
//! (`w_1 = r_1`, `w_2 = r_2`, `w_3 = r_1·r_2`, `w_4 = r_3`, ...). Indices that
//! are powers of two reproduce the plain Rademacher functions, and the level
//! of the n-th element grows like `log2 n`, which keeps long horizons
//! representable. Pairwise products still integrate to one exactly.

use std::fs;
use std::path::PathBuf;

use num_traits::One;
use thiserror::Error;

use crate::dyadic::{DyadicError, DyadicRV, MAX_DENSE_LEVEL, MAX_LEVEL};
use crate::num::{from_u128, pow2, ExtRational, Ratio};

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error("index {index} needs partition level {level}, beyond the supported maximum")]
    IndexTooLarge { index: u64, level: u32 },
    #[error("shifted-hump base must be finite-valued")]
    ExtendedBase,
    #[error("failed to read custom sequence `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("custom sequence `{path}`: entry {index} is malformed: {message}")]
    MalformedEntry {
        path: String,
        index: usize,
        message: String,
    },
    #[error("custom sequence `{path}` has {got} entries, horizon needs {needed}")]
    TooShort {
        path: String,
        needed: usize,
        got: usize,
    },
    #[error(transparent)]
    Dyadic(#[from] DyadicError),
}

/// Block coordinates of the sliding hump: `n = 2^(m-1) + k - 1`.
pub fn hump_block(n: u64) -> (u32, u64) {
    assert!(n >= 1, "sequence indices start at 1");
    let m = 64 - n.leading_zeros();
    let k = n - (1u64 << (m - 1)) + 1;
    (m, k)
}

/// The n-th sliding-hump element, at level `m - 1`.
pub fn sliding_hump(n: u64) -> Result<DyadicRV, GeneratorError> {
    let (m, k) = hump_block(n);
    let level = m - 1;
    if level > MAX_LEVEL {
        return Err(GeneratorError::IndexTooLarge { index: n, level });
    }
    let coeff = from_u128((m - 1) as u128) * pow2(level as i64);
    Ok(DyadicRV::block(
        level,
        (k - 1) as u128,
        k as u128,
        ExtRational::Finite(coeff),
    )?)
}

/// `2^n` on `(0, 2^-n]`, at level `n`. Unit expectation under Lebesgue for
/// every `n`, with the supporting set shrinking to nothing.
pub fn spike(n: u64) -> Result<DyadicRV, GeneratorError> {
    assert!(n >= 1, "sequence indices start at 1");
    if n as u32 > MAX_LEVEL {
        return Err(GeneratorError::IndexTooLarge {
            index: n,
            level: n as u32,
        });
    }
    Ok(DyadicRV::block(
        n as u32,
        0,
        1,
        ExtRational::Finite(pow2(n as i64)),
    )?)
}

/// The n-th Rademacher shift, values in `{0, 2}` at level `bit_length(n)`.
pub fn rademacher_shift(n: u64) -> Result<DyadicRV, GeneratorError> {
    assert!(n >= 1, "sequence indices start at 1");
    let level = 64 - n.leading_zeros();
    if level > MAX_DENSE_LEVEL {
        return Err(GeneratorError::IndexTooLarge { index: n, level });
    }
    // Atom-bit mask: digit b of n (1-indexed from the least significant end)
    // selects the base function alternating with half-period 2^(level-b).
    let mut mask: u64 = 0;
    for b in 1..=level {
        if n & (1 << (b - 1)) != 0 {
            mask |= 1 << (level - b);
        }
    }
    let two = ExtRational::Finite(Ratio::one() + Ratio::one());
    let zero = ExtRational::Finite(Ratio::from_integer(0.into()));
    let values = (0..(1u64 << level))
        .map(|i| {
            if (i & mask).count_ones().is_multiple_of(2) {
                two.clone()
            } else {
                zero.clone()
            }
        })
        .collect();
    Ok(DyadicRV::from_values(level, values)?)
}

pub fn shifted_hump(base: &DyadicRV, n: u64) -> Result<DyadicRV, GeneratorError> {
    if base.is_extended() {
        return Err(GeneratorError::ExtendedBase);
    }
    Ok(base.add(&sliding_hump(n)?))
}

#[derive(Clone, Debug, PartialEq)]
pub enum SequenceKind {
    SlidingHump,
    Spike,
    RademacherShift,
    ShiftedHump(DyadicRV),
    Custom(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSpec {
    pub kind: SequenceKind,
    pub horizon: usize,
}

impl SequenceSpec {
    pub fn new(kind: SequenceKind, horizon: usize) -> Self {
        SequenceSpec { kind, horizon }
    }
}

/// Instantiate the first `horizon` elements of the family.
pub fn materialize(spec: &SequenceSpec) -> Result<Vec<DyadicRV>, GeneratorError> {
    if spec.horizon == 0 {
        return Err(GeneratorError::EmptyHorizon);
    }
    let indices = 1..=(spec.horizon as u64);
    match &spec.kind {
        SequenceKind::SlidingHump => indices.map(sliding_hump).collect(),
        SequenceKind::Spike => indices.map(spike).collect(),
        SequenceKind::RademacherShift => indices.map(rademacher_shift).collect(),
        SequenceKind::ShiftedHump(base) => indices.map(|n| shifted_hump(base, n)).collect(),
        SequenceKind::Custom(path) => {
            let display = path.display().to_string();
            let text = fs::read_to_string(path).map_err(|source| GeneratorError::Io {
                path: display.clone(),
                source,
            })?;
            let raw: Vec<serde_json::Value> =
                serde_json::from_str(&text).map_err(|e| GeneratorError::MalformedEntry {
                    path: display.clone(),
                    index: 0,
                    message: format!("not a JSON array: {e}"),
                })?;
            if raw.len() < spec.horizon {
                return Err(GeneratorError::TooShort {
                    path: display,
                    needed: spec.horizon,
                    got: raw.len(),
                });
            }
            raw.into_iter()
                .take(spec.horizon)
                .enumerate()
                .map(|(i, value)| {
                    serde_json::from_value::<DyadicRV>(value).map_err(|e| {
                        GeneratorError::MalformedEntry {
                            path: display.clone(),
                            index: i,
                            message: e.to_string(),
                        }
                    })
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::{expect, l1_dist, metric_dp, tail_prob, DyadicMeasure};
    use crate::num::{int, to_f64};

    #[test]
    fn hump_block_decomposition_is_unique() {
        assert_eq!(hump_block(1), (1, 1));
        assert_eq!(hump_block(2), (2, 1));
        assert_eq!(hump_block(3), (2, 2));
        assert_eq!(hump_block(4), (3, 1));
        assert_eq!(hump_block(7), (3, 4));
        for n in 1..=512u64 {
            let (m, k) = hump_block(n);
            assert!(1 <= k && k <= 1 << (m - 1));
            assert_eq!(n, (1 << (m - 1)) + k - 1);
        }
    }

    #[test]
    fn sliding_hump_first_elements() {
        assert_eq!(sliding_hump(1).unwrap(), DyadicRV::zero(0));
        let f2 = sliding_hump(2).unwrap();
        assert_eq!(
            f2,
            DyadicRV::block(1, 0, 1, ExtRational::Finite(int(2))).unwrap()
        );
        let f4 = sliding_hump(4).unwrap();
        assert_eq!(
            f4,
            DyadicRV::block(2, 0, 1, ExtRational::Finite(int(8))).unwrap()
        );
    }

    #[test]
    fn sliding_hump_tail_and_mean_formulas() {
        // Exact over the whole range used by the diagnostics. The distance
        // to zero in the mean coincides with the mean itself.
        for n in 1..=(1u64 << 14) {
            let (m, _) = hump_block(n);
            let f = sliding_hump(n).unwrap();
            let leb = DyadicMeasure::lebesgue(f.level()).unwrap();
            let tail = tail_prob(&f, &int(0), &leb);
            if m >= 2 {
                assert_eq!(tail, pow2(-((m - 1) as i64)));
            } else {
                assert_eq!(tail, int(0));
            }
            let mean = int((m - 1) as i64);
            assert_eq!(expect(&f, &leb), ExtRational::Finite(mean.clone()));
            if n <= 1 << 8 {
                assert_eq!(l1_dist(&f, &DyadicRV::zero(0), &leb).unwrap(), mean);
            }
        }
    }

    #[test]
    fn spike_examples() {
        let s1 = spike(1).unwrap();
        assert_eq!(
            s1,
            DyadicRV::block(1, 0, 1, ExtRational::Finite(int(2))).unwrap()
        );
        for n in 1..=10u64 {
            let s = spike(n).unwrap();
            let leb = DyadicMeasure::lebesgue(s.level()).unwrap();
            assert_eq!(expect(&s, &leb), ExtRational::Finite(int(1)));
            assert_eq!(tail_prob(&s, &int(0), &leb), pow2(-(n as i64)));
        }
        // The metric to zero decays monotonically.
        let leb = DyadicMeasure::lebesgue(10).unwrap();
        let mut last = f64::INFINITY;
        for n in 1..=10u64 {
            let d = metric_dp(&spike(n).unwrap(), &DyadicRV::zero(0), &leb);
            assert!(d < last);
            last = d;
        }
    }

    #[test]
    fn rademacher_shift_first_element_and_residual() {
        let r1 = rademacher_shift(1).unwrap();
        assert_eq!(
            r1.values().unwrap(),
            vec![ExtRational::Finite(int(2)), ExtRational::Finite(int(0))]
        );
        let one = DyadicRV::constant(0, ExtRational::Finite(int(1))).unwrap();
        for n in [1u64, 2, 3, 7, 12, 64] {
            let f = rademacher_shift(n).unwrap();
            let q = DyadicMeasure::lebesgue(f.level()).unwrap();
            assert_eq!(l1_dist(&f, &one, &q).unwrap(), int(1));
        }
    }

    #[test]
    fn rademacher_pairwise_products_integrate_to_one() {
        let leb = DyadicMeasure::lebesgue(7).unwrap();
        for n in 1..=64u64 {
            for m in (n + 1)..=64u64 {
                let prod = rademacher_shift(n)
                    .unwrap()
                    .mul_pointwise(&rademacher_shift(m).unwrap());
                assert_eq!(
                    expect(&prod, &leb),
                    ExtRational::Finite(int(1)),
                    "pair ({n},{m})"
                );
            }
        }
    }

    #[test]
    fn rademacher_powers_of_two_alternate_on_consecutive_atoms() {
        for j in 0..5u32 {
            let f = rademacher_shift(1 << j).unwrap();
            assert_eq!(f.level(), j + 1);
            let vals = f.values().unwrap();
            for (i, v) in vals.iter().enumerate() {
                let expected = if i % 2 == 0 { int(2) } else { int(0) };
                assert_eq!(v, &ExtRational::Finite(expected));
            }
        }
    }

    #[test]
    fn materialize_sliding_hump_horizon_three() {
        let seq = materialize(&SequenceSpec::new(SequenceKind::SlidingHump, 3)).unwrap();
        assert_eq!(seq[0], DyadicRV::zero(0));
        assert_eq!(
            seq[1],
            DyadicRV::block(1, 0, 1, ExtRational::Finite(int(2))).unwrap()
        );
        assert_eq!(
            seq[2],
            DyadicRV::block(1, 1, 2, ExtRational::Finite(int(2))).unwrap()
        );
    }

    #[test]
    fn materialize_custom_round_trip() {
        let seq = materialize(&SequenceSpec::new(SequenceKind::SlidingHump, 3)).unwrap();
        let dir = std::env::temp_dir().join("fcc-core-custom-seq-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("seq.json");
        fs::write(&path, serde_json::to_string(&seq).unwrap()).unwrap();
        let back = materialize(&SequenceSpec::new(SequenceKind::Custom(path.clone()), 3)).unwrap();
        assert_eq!(back, seq);

        fs::write(
            &path,
            r#"[{"level":0,"values":["1/1"]}, {"level":0,"values":["-1/1"]}]"#,
        )
        .unwrap();
        let err =
            materialize(&SequenceSpec::new(SequenceKind::Custom(path.clone()), 2)).unwrap_err();
        match err {
            GeneratorError::MalformedEntry { index, .. } => assert_eq!(index, 1),
            other => panic!("unexpected error {other:?}"),
        }
        let err = materialize(&SequenceSpec::new(SequenceKind::Custom(path), 5)).unwrap_err();
        assert!(matches!(
            err,
            GeneratorError::TooShort {
                needed: 5,
                got: 2,
                ..
            }
        ));
    }

    #[test]
    fn shifted_hump_first_index_is_the_base() {
        let base = DyadicRV::block(1, 0, 1, ExtRational::Finite(int(1))).unwrap();
        let seq = materialize(&SequenceSpec::new(
            SequenceKind::ShiftedHump(base.clone()),
            4,
        ))
        .unwrap();
        assert_eq!(seq[0], base);
        assert_eq!(seq[1], base.add(&sliding_hump(2).unwrap()));
    }

    #[test]
    fn hump_metric_to_zero_decays_like_block_width() {
        let leb = DyadicMeasure::lebesgue(6).unwrap();
        for n in [2u64, 4, 8, 16, 32, 64] {
            let (m, _) = hump_block(n);
            let f = sliding_hump(n).unwrap();
            let d = metric_dp(&f, &DyadicRV::zero(0), &leb);
            let width = to_f64(&pow2(-((m - 1) as i64)));
            let coeff = ((m - 1) as f64) * to_f64(&pow2((m - 1) as i64));
            let expected = width * (1.0 - (-coeff).exp());
            assert!((d - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn spike_tail_thresholds_decay_on_powers_of_two() {
        let family: Vec<DyadicRV> = (1..=8u64).map(|n| spike(n).unwrap()).collect();
        let leb = DyadicMeasure::lebesgue(8).unwrap();
        for j in 0..5i64 {
            let sup = family
                .iter()
                .map(|f| tail_prob(f, &pow2(j), &leb))
                .max()
                .unwrap();
            assert_eq!(sup, pow2(-(j + 1)));
        }
    }
}
