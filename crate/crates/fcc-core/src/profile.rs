//! Finite-horizon tail verdicts.
//!
//! Asymptotic statements ("the profile tends to zero") become: the last
//! quartile of the recorded profile is nonincreasing and sits below the
//! declared threshold. Raw profiles always travel with the verdict so the
//! cutoff can be re-audited.

use crate::num::Ratio;

/// Index where the last quartile starts; at least one entry is inspected.
pub fn tail_start(len: usize) -> usize {
    len - (len / 4).max(1)
}

pub fn tail_certified_f64(profile: &[f64], threshold: f64) -> bool {
    if profile.is_empty() {
        return false;
    }
    let start = tail_start(profile.len());
    let tail = &profile[start..];
    tail.windows(2).all(|w| w[1] <= w[0] + 1e-12) && tail.iter().all(|v| *v < threshold)
}

pub fn tail_certified_ratio(profile: &[Ratio], threshold: &Ratio) -> bool {
    if profile.is_empty() {
        return false;
    }
    let start = tail_start(profile.len());
    let tail = &profile[start..];
    tail.windows(2).all(|w| w[1] <= w[0]) && tail.iter().all(|v| v < threshold)
}

/// Weaker rule for short diagnostic profiles (Cauchy records over probe
/// grids): the last quartile is nonincreasing and the profile has dropped
/// below the threshold by its end.
pub fn tail_decreasing_below_f64(profile: &[f64], threshold: f64) -> bool {
    if profile.is_empty() {
        return false;
    }
    let start = tail_start(profile.len());
    let tail = &profile[start..];
    tail.windows(2).all(|w| w[1] <= w[0] + 1e-12)
        && profile.last().map(|v| *v < threshold).unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::{int, ratio};

    #[test]
    fn quartile_boundaries() {
        assert_eq!(tail_start(1), 0);
        assert_eq!(tail_start(4), 3);
        assert_eq!(tail_start(8), 6);
        assert_eq!(tail_start(100), 75);
    }

    #[test]
    fn float_tail_rule() {
        assert!(tail_certified_f64(&[1.0, 0.5, 0.1, 0.01], 0.5));
        // Non-monotone inside the last quartile.
        assert!(!tail_certified_f64(
            &[1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.01, 0.1],
            0.5
        ));
        assert!(!tail_certified_f64(&[1.0, 0.5, 0.1, 0.01], 0.001));
        assert!(!tail_certified_f64(&[], 1.0));
    }

    #[test]
    fn exact_tail_rule() {
        let profile = vec![int(1), ratio(1, 2), ratio(1, 8), ratio(1, 8)];
        assert!(tail_certified_ratio(&profile, &ratio(1, 4)));
        assert!(!tail_certified_ratio(&profile, &ratio(1, 8)));
    }
}
