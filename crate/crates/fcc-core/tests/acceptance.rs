//! Acceptance suite: one test per criterion, each printing a pass line and
//! enforcing its stated tolerances and runtime budget. Run with
//! `cargo test -p fcc-core --test acceptance -- --nocapture` to see the
//! per-criterion lines.

use std::time::Instant;

use num_traits::{One, Signed, Zero};

use fcc_core::analysis::{
    certify_fcc, escape_scan, limit_set_probe, refute_fcc, reports_mutually_exclusive, steer,
    AnalysisConfig, AnalysisError, SteerStrategy, Verdict,
};
use fcc_core::dyadic::{expect, l1_dist, metric_dp, tail_prob, AtomSet, DyadicMeasure, DyadicRV};
use fcc_core::generators::{hump_block, materialize, SequenceKind, SequenceSpec};
use fcc_core::hulls::{
    hull_member, komlos_extract, solid_hull_member, HullMembership, KomlosOptions, SimplexPoint,
};
use fcc_core::measure_search::{
    build_q, find_window_sets, verify_certificate_bounds, WindowSearchOptions,
};
use fcc_core::num::{int, pow2, ratio, to_f64, ExtRational, Ratio};
use fcc_core::rng::SplitMix64;

fn lebesgue(level: u32) -> DyadicMeasure {
    DyadicMeasure::lebesgue(level).unwrap()
}

fn constant_one() -> DyadicRV {
    DyadicRV::constant(0, ExtRational::Finite(int(1))).unwrap()
}

fn sequence(kind: SequenceKind, horizon: usize) -> Vec<DyadicRV> {
    materialize(&SequenceSpec::new(kind, horizon)).unwrap()
}

fn finish(criterion: usize, name: &str, started: Instant, budget_secs: u64) {
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < budget_secs,
        "criterion {criterion} exceeded its {budget_secs}s budget: {elapsed:?}"
    );
    println!("acceptance {criterion} ({name}): PASS in {elapsed:.2?}");
}

#[test]
fn criterion_1_sliding_hump_diagnostics() {
    let started = Instant::now();
    let horizon = 1usize << 13;
    let mut last_metric_block = f64::INFINITY;
    let mut last_m = 0;
    for n in 1..=horizon as u64 {
        let (m, _) = hump_block(n);
        let f = fcc_core::generators::sliding_hump(n).unwrap();
        let leb = lebesgue(f.level());
        // Exact tail and mean.
        let tail = tail_prob(&f, &Ratio::zero(), &leb);
        if m >= 2 {
            assert_eq!(tail, pow2(-((m - 1) as i64)), "tail at n = {n}");
        } else {
            assert_eq!(tail, Ratio::zero());
        }
        assert_eq!(
            expect(&f, &leb),
            ExtRational::Finite(int((m - 1) as i64)),
            "mean at n = {n}"
        );
        // Metric to zero: constant on blocks, strictly decreasing across
        // blocks from m = 2, below 1e-3 once m reaches 12.
        let metric = metric_dp(&f, &DyadicRV::zero(0), &leb);
        if m != last_m {
            if last_m >= 2 {
                assert!(
                    metric < last_metric_block,
                    "metric fails to decrease entering block {m}"
                );
            }
            last_metric_block = metric;
            last_m = m;
        } else {
            assert!((metric - last_metric_block).abs() <= 1e-15);
        }
        if m >= 12 {
            assert!(metric < 1e-3, "metric {metric} at n = {n} (block {m})");
        }
    }
    finish(1, "sliding-hump diagnostics", started, 30);
}

#[test]
fn criterion_2_steering_fast_path_divergence() {
    let started = Instant::now();
    let horizon = 1usize << 13;
    let seq = sequence(SequenceKind::SlidingHump, horizon);
    let p = lebesgue(13);
    let out = steer(
        &seq,
        &constant_one(),
        &p,
        horizon,
        SteerStrategy::PaperFastPath,
    )
    .unwrap();
    assert!(out.outputs.len() >= (1 << 11));
    for (i, l1) in out.l1_curve.iter().enumerate() {
        let (m, _) = hump_block(i as u64 + 1);
        // Exact divergence in the mean while the metric collapses.
        assert_eq!(*l1, int(m as i64 - 1), "L1 at output {}", i + 1);
    }
    for (i, metric) in out.metric_curve.iter().enumerate() {
        let (m, _) = hump_block(i as u64 + 1);
        if m >= 12 {
            assert!(*metric < 1e-3, "metric {metric} at output {}", i + 1);
        }
        // The block-width bound with the documented float slack.
        assert!(*metric <= to_f64(&pow2(-(m as i64))) + 1e-12);
    }
    finish(2, "steering to one in probability only", started, 60);
}

#[test]
fn criterion_3_measure_certificate_on_spikes() {
    let started = Instant::now();
    let horizon = 64usize;
    let seq = sequence(SequenceKind::Spike, horizon);
    let p = lebesgue(64);
    let opts = WindowSearchOptions {
        threshold: ratio(1, 1_000_000),
        start_grid: (0..=6).map(|j| 1usize << j).collect(),
    };
    let eps_grid: Vec<Ratio> = (1..=46i64).map(|j| pow2(-j)).collect();
    let windows = find_window_sets(&seq, &p, &eps_grid, &opts).unwrap();
    let (plan, transform) = build_q(&p, &seq, &windows).unwrap();

    // E_P[Z] == 1 exactly.
    assert_eq!(
        expect(transform.density(), &p),
        ExtRational::Finite(Ratio::one())
    );
    // Per-index certificate bound, exact for every n <= 64.
    let rows = verify_certificate_bounds(&plan, &transform, &p, &seq).unwrap();
    assert_eq!(rows.len(), horizon);
    for row in &rows {
        assert!(row.holds, "certificate bound fails at n = {}", row.n);
    }
    // E_Q[f_n] < 1e-6 by n = 40.
    let threshold = ratio(1, 1_000_000);
    for row in &rows[39..] {
        assert!(
            row.lhs < threshold,
            "E_Q[f_{}] = {} misses 1e-6",
            row.n,
            to_f64(&row.lhs)
        );
    }
    finish(3, "spike measure certificate", started, 10);
}

#[test]
fn criterion_4_rademacher_impossibility() {
    let started = Instant::now();
    let horizon = 64usize;
    let seq = sequence(SequenceKind::RademacherShift, horizon);
    let one = constant_one();

    // Fifty seeded strictly positive densities at level 10: the residual to
    // the constant 1 is exactly 1 under every one of them.
    let mut rng = SplitMix64::new(0x4AD3_0001);
    for _ in 0..50 {
        let weights: Vec<Ratio> = (0..(1usize << 10))
            .map(|_| int(rng.below(255) as i64 + 1))
            .collect();
        let total: Ratio = weights.iter().fold(Ratio::zero(), |acc, w| acc + w);
        let probs: Vec<Ratio> = weights.into_iter().map(|w| w / &total).collect();
        let q = DyadicMeasure::from_atom_probs(10, probs).unwrap();
        for f in &seq {
            assert_eq!(l1_dist(f, &one, &q).unwrap(), Ratio::one());
        }
    }

    // Certification must not go through; the limit is nonzero and the
    // sequence does not converge in probability.
    let p = lebesgue(7);
    let cfg = AnalysisConfig::for_horizon(horizon);
    match certify_fcc(&seq, &one, &p, &cfg) {
        Err(AnalysisError::ConvergencePrecondition { .. }) => {}
        Ok(report) => assert_ne!(report.verdict, Verdict::Certified),
        Err(other) => panic!("unexpected error {other}"),
    }

    // Escape toward 1 + indicator of the left half: every window keeps an
    // exact residual at least 1/2 (the mean gap bound).
    let bump = AtomSet::from_atom_range(1, 0, 1).unwrap();
    let target = one.add(bump.indicator());
    let scan = escape_scan(&seq, &[target], &p, horizon, &cfg).unwrap();
    let floor = ratio(1, 2) - ratio(1, 1_000_000_000);
    for w in &scan.rows[0].windows {
        assert!(
            w.residual >= floor,
            "window [{}, {}] residual {}",
            w.start,
            w.end,
            to_f64(&w.residual)
        );
    }
    finish(4, "rademacher impossibility", started, 30);
}

#[test]
fn criterion_5_mutual_exclusion_and_minimality() {
    let started = Instant::now();

    // Sliding hump: refuted with the explicit witness, never certified.
    {
        let horizon = 1usize << 13;
        let seq = sequence(SequenceKind::SlidingHump, horizon);
        let p = lebesgue(13);
        let zero = DyadicRV::zero(0);
        let mut cfg = AnalysisConfig::for_horizon(horizon);
        cfg.tau = ratio(1, 1000);
        let certify = certify_fcc(&seq, &zero, &p, &cfg).unwrap();
        let refute = refute_fcc(&seq, &zero, &p, &[constant_one()], &cfg).unwrap();
        assert!(reports_mutually_exclusive(&certify, &refute));
        assert_eq!(certify.verdict, Verdict::Inconclusive);
        assert_eq!(refute.verdict, Verdict::Refuted);
        let witness = refute.witness.as_ref().unwrap();
        assert!(zero.dominated_by(&witness.alternate_limit));
    }

    // Spikes: certified, never refuted.
    {
        let horizon = 64usize;
        let seq = sequence(SequenceKind::Spike, horizon);
        let p = lebesgue(64);
        let zero = DyadicRV::zero(0);
        let cfg = AnalysisConfig::for_horizon(horizon);
        let certify = certify_fcc(&seq, &zero, &p, &cfg).unwrap();
        let refute = refute_fcc(&seq, &zero, &p, &[], &cfg).unwrap();
        assert!(reports_mutually_exclusive(&certify, &refute));
        assert_eq!(certify.verdict, Verdict::Certified);
        assert_eq!(refute.verdict, Verdict::Inconclusive);
    }

    // Rademacher shifts: neither side succeeds.
    {
        let horizon = 64usize;
        let seq = sequence(SequenceKind::RademacherShift, horizon);
        let p = lebesgue(7);
        let one = constant_one();
        let cfg = AnalysisConfig::for_horizon(horizon);
        let certified = match certify_fcc(&seq, &one, &p, &cfg) {
            Err(AnalysisError::ConvergencePrecondition { .. }) => false,
            Ok(report) => report.verdict == Verdict::Certified,
            Err(other) => panic!("unexpected error {other}"),
        };
        assert!(!certified);
        let refute = refute_fcc(&seq, &one, &p, &[], &cfg).unwrap();
        assert_eq!(refute.verdict, Verdict::Inconclusive);
    }

    // Shifted hump: refuted above the base, never certified; the witness
    // dominates the reference limit atomwise.
    {
        let horizon = 1usize << 13;
        let base = AtomSet::from_atom_range(1, 0, 1)
            .unwrap()
            .indicator()
            .clone();
        let seq = sequence(SequenceKind::ShiftedHump(base.clone()), horizon);
        let p = lebesgue(13);
        let mut cfg = AnalysisConfig::for_horizon(horizon);
        cfg.tau = ratio(1, 1000);
        let certify = certify_fcc(&seq, &base, &p, &cfg).unwrap();
        let target = base.add(&constant_one());
        let refute = refute_fcc(&seq, &base, &p, &[target], &cfg).unwrap();
        assert!(reports_mutually_exclusive(&certify, &refute));
        assert_ne!(certify.verdict, Verdict::Certified);
        assert_eq!(refute.verdict, Verdict::Refuted);
        let witness = refute.witness.as_ref().unwrap();
        assert!(base.dominated_by(&witness.alternate_limit));
    }

    finish(5, "mutual exclusion and minimality", started, 120);
}

// --- criterion 6: grid oracle ---------------------------------------------------

/// All simplex grid points with the given step denominator.
fn simplex_grid(k: usize, steps: i64) -> Vec<Vec<Ratio>> {
    let mut out = Vec::new();
    let mut stack = vec![(Vec::<i64>::new(), steps)];
    while let Some((prefix, left)) = stack.pop() {
        if prefix.len() == k - 1 {
            let mut point = prefix.clone();
            point.push(left);
            out.push(point.into_iter().map(|c| ratio(c, steps)).collect());
            continue;
        }
        for c in 0..=left {
            let mut next = prefix.clone();
            next.push(c);
            stack.push((next, left - c));
        }
    }
    out
}

fn combo(gens: &[DyadicRV], weights: &[Ratio]) -> DyadicRV {
    let mut acc: Option<DyadicRV> = None;
    for (g, w) in gens.iter().zip(weights) {
        let term = g.scale(w).unwrap();
        acc = Some(match acc {
            None => term,
            Some(sum) => sum.add(&term),
        });
    }
    acc.unwrap()
}

fn linf_close(a: &[Ratio], b: &[Ratio], bound: &Ratio) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= *bound)
}

#[test]
fn criterion_6_hull_oracle_equivalence() {
    let started = Instant::now();
    let mut rng = SplitMix64::new(0x6A11_0006);
    let grid2 = simplex_grid(2, 16);
    let grid3 = simplex_grid(3, 16);
    let eighth = ratio(1, 8);

    let mut feasible_seen = 0usize;
    for round in 0..200 {
        let k = 2 + (rng.below(2) as usize);
        let level = rng.below(3) as u32;
        let atoms = 1usize << level;
        let gens: Vec<DyadicRV> = (0..k)
            .map(|_| {
                let vals = (0..atoms)
                    .map(|_| ExtRational::Finite(ratio(rng.below(9) as i64, 2)))
                    .collect();
                DyadicRV::from_values(level, vals).unwrap()
            })
            .collect();

        // Half the rounds aim at a reachable target, half at a random one.
        let target = if round % 2 == 0 {
            let grid = if k == 2 { &grid2 } else { &grid3 };
            let pick = &grid[rng.below(grid.len() as u64) as usize];
            combo(&gens, pick)
        } else {
            let vals = (0..atoms)
                .map(|_| ExtRational::Finite(ratio(rng.below(9) as i64, 2)))
                .collect();
            DyadicRV::from_values(level, vals).unwrap()
        };

        let grid = if k == 2 { &grid2 } else { &grid3 };

        // Exact hull membership vs. grid search.
        match hull_member(&target, &gens, level).unwrap() {
            HullMembership::Feasible(witness) => {
                feasible_seen += 1;
                assert!(
                    grid.iter()
                        .any(|point| linf_close(point, &witness, &eighth)),
                    "round {round}: no grid point within 1/8 of the witness"
                );
            }
            HullMembership::Infeasible => {
                for point in grid {
                    assert_ne!(
                        combo(&gens, point),
                        target,
                        "round {round}: grid found an exact representation"
                    );
                }
            }
        }

        // Solid hull: domination instead of equality.
        match solid_hull_member(&target, &gens).unwrap() {
            HullMembership::Feasible(witness) => {
                assert!(
                    grid.iter()
                        .any(|point| linf_close(point, &witness, &eighth)),
                    "round {round}: no grid point within 1/8 of the solid witness"
                );
            }
            HullMembership::Infeasible => {
                for point in grid {
                    assert!(
                        !target.dominated_by(&combo(&gens, point)),
                        "round {round}: grid found a dominating combination"
                    );
                }
            }
        }
    }
    assert!(
        feasible_seen >= 50,
        "the instance mix lost its feasible half"
    );
    finish(6, "hull membership grid oracle", started, 60);
}

#[test]
fn criterion_7_komlos_extraction() {
    let started = Instant::now();
    let horizon = 1usize << 12;
    let seq = sequence(SequenceKind::RademacherShift, horizon);
    let p = lebesgue(13);
    let opts = KomlosOptions {
        tol: 1e-3,
        ..KomlosOptions::default()
    };
    let extraction = komlos_extract(&seq, &p, &opts).unwrap();
    extraction.schedule.validate().unwrap();

    // The estimate settles within 1e-3 of the constant one.
    let d = metric_dp(&extraction.limit_estimate, &constant_one(), &p);
    assert!(d <= 1e-3, "limit estimate metric {d}");

    // The recorded objective never decreases inside any solve.
    for solve in &extraction.solves {
        for pair in solve.trace.windows(2) {
            assert!(pair[1] >= pair[0], "objective dipped inside a solve");
        }
    }
    assert!(extraction.conclusive);
    finish(7, "forward extraction on rademacher shifts", started, 120);
}

#[test]
fn criterion_8_topology_agreement() {
    let started = Instant::now();
    let horizon = 64usize;
    let seq = sequence(SequenceKind::Spike, horizon);
    let p = lebesgue(64);
    let cfg = AnalysisConfig::for_horizon(horizon);
    let zero = DyadicRV::zero(0);
    let report = certify_fcc(&seq, &zero, &p, &cfg).unwrap();
    assert_eq!(report.verdict, Verdict::Certified);
    let cert = report.certificate.unwrap();

    let threshold = ratio(1, 10_000);
    let mut rng = SplitMix64::new(0x8ADF_0008);
    for sample in 0..20 {
        // A seeded base point plus dyadically decaying perturbations: a
        // coordinatewise convergent subsequence by construction.
        let support = 3 + rng.below(5) as usize;
        let base: Vec<(usize, Ratio)> = (0..support)
            .map(|i| {
                let idx = 1 + i * 2 + rng.below(2) as usize;
                (idx, Ratio::new(1.into(), ((support * 4) as i64).into()))
            })
            .collect();
        let mut base_sorted = base;
        base_sorted.sort_by_key(|(i, _)| *i);
        base_sorted.dedup_by_key(|(i, _)| *i);
        let pert_index = 20 + rng.below(8) as usize;
        let alphas: Vec<SimplexPoint> = (1..=12u32)
            .map(|k| {
                let mut weights = base_sorted.clone();
                weights.push((pert_index, pow2(-(k as i64 + 2))));
                SimplexPoint::new(weights).unwrap()
            })
            .collect();
        let probe = limit_set_probe(&seq, &zero, &cert, &alphas, 32, &threshold).unwrap();
        assert!(
            probe.verdicts_agree,
            "sample {sample}: metric and L1 verdicts disagree"
        );
        assert!(
            probe.l1_converged,
            "sample {sample}: L1 profile misses 1e-4"
        );
        assert!(
            probe.metric_converged,
            "sample {sample}: metric profile misses 1e-4"
        );
        // Both profiles sit below the threshold from the predicted depth on.
        for row in &probe.l1_profile[probe.predicted_depth..] {
            assert!(row.value < threshold);
        }
        for row in &probe.metric_profile[probe.predicted_depth..] {
            assert!(row.value < 1e-4);
        }
    }
    finish(
        8,
        "topology agreement on the certified fixture",
        started,
        60,
    );
}
