use anytime_core::bounds::{eta_sum_upper, GuaranteeEnvelope};
use anytime_core::schedules::{doubling_block_of, parse_descriptor, StepSchedule};
use proptest::prelude::*;

fn builtins() -> Vec<StepSchedule> {
    vec![
        StepSchedule::sqrt_decay(2.0, 1.0).unwrap(),
        StepSchedule::sqrt_decay(0.3, 7.0).unwrap(),
        StepSchedule::constant(0.0).unwrap(),
        StepSchedule::constant(0.5).unwrap(),
        StepSchedule::doubling_concat(|n| vec![1.0 / (n as f64).sqrt(); n], 64).unwrap(),
    ]
}

#[test]
fn builtin_steps_nonnegative_through_1e5() {
    for s in builtins() {
        let etas = s.etas(100_001);
        assert!(etas.iter().all(|e| *e >= 0.0), "{}", s.label());
    }
}

#[test]
fn prefix_sum_differences_are_steps() {
    for s in builtins() {
        let sums = s.prefix_sums(5000);
        for t in 0..4999 {
            let diff = sums[t + 1] - sums[t];
            let eta = s.eta(t as u64);
            let ulp = f64::EPSILON * sums[t + 1].abs().max(eta);
            assert!((diff - eta).abs() <= ulp, "{} t={t}: {diff} vs {eta}", s.label());
            assert_eq!(sums[t], s.prefix_sum(t as u64));
        }
    }
}

#[test]
fn step_sum_bound_all_pairs() {
    let s = StepSchedule::sqrt_decay(2.0, 1.0).unwrap();
    let n = 10_000usize;
    // prefix[k] = Σ_{j<k} η_j, accumulated here from 2/sqrt(j+1) directly
    let mut prefix = vec![0.0f64; n + 2];
    for j in 0..=n {
        prefix[j + 1] = prefix[j] + 2.0 / ((j + 1) as f64).sqrt();
    }
    let roots: Vec<f64> = (0..=n).map(|t| (t as f64).sqrt()).collect();
    let phi: Vec<f64> = (0..=n + 1).map(|t| 8.0 + 4.0 * (t.max(1) as f64).ln()).collect();
    let mut worst = f64::INFINITY;
    for t2 in 2..=n {
        let cap = 2.0 * phi[t2 + 1];
        for t1 in 1..t2 {
            let lhs = prefix[t2 + 1] - prefix[t1];
            let rhs = cap * (roots[t2] - roots[t1]);
            worst = worst.min(rhs - lhs);
            assert!(lhs <= rhs, "t1={t1} t2={t2}: {lhs} > {rhs}");
        }
    }
    assert!(worst > 0.0);

    let phi = GuaranteeEnvelope::example31();
    for (t1, t2) in [(1, 2), (1, 10_000), (17, 18), (4999, 5001), (9999, 10_000)] {
        let ineq = eta_sum_upper(&s, t1, t2, &phi).unwrap();
        let oracle = prefix[t2 as usize + 1] - prefix[t1 as usize];
        assert!((ineq.lhs - oracle).abs() <= 1e-12 * oracle);
        assert!(ineq.pass);
    }
}

#[test]
fn table_descriptor_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("steps.csv");
    std::fs::write(&path, "# header comment\nt,eta\n0,0.5\n1,0.25\n2,0.125\n").unwrap();
    let s = parse_descriptor(&format!("table:{}", path.display())).unwrap();
    assert_eq!(s.etas(5), vec![0.5, 0.25, 0.125, 0.0, 0.0]);
    assert_eq!(s.support(), Some(3));

    std::fs::write(&path, "t,eta\n0,0.5\n2,0.25\n").unwrap();
    assert!(parse_descriptor(&format!("table:{}", path.display())).is_err());
    std::fs::write(&path, "t,eta\n0,-0.5\n").unwrap();
    assert!(parse_descriptor(&format!("table:{}", path.display())).is_err());
}

proptest! {
    #[test]
    fn doubling_blocks_partition(t in 0u64..(1u64 << 40)) {
        let (k, off) = doubling_block_of(t);
        let start = (1u64 << k) - 1;
        prop_assert!(off < (1u64 << k));
        prop_assert_eq!(start + off, t);
        // no other block contains t
        for other in 0..41usize {
            let lo = (1u64 << other) - 1;
            let hi = (1u64 << (other + 1)) - 2;
            prop_assert_eq!((lo..=hi).contains(&t), other == k);
        }
    }

    #[test]
    fn doubling_reads_builder_block(t in 0u64..5000) {
        let s = StepSchedule::doubling_concat(|n| (0..n).map(|i| (n * 10_000 + i) as f64).collect(), 8).unwrap();
        let (k, off) = doubling_block_of(t);
        prop_assert_eq!(s.eta(t), ((1u64 << k) * 10_000 + off) as f64);
    }

    #[test]
    fn steps_are_repeatable(t in 0u64..1_000_000, d in 0.01f64..10.0, g in 0.01f64..10.0) {
        let s = StepSchedule::sqrt_decay(d, g).unwrap();
        let first = s.eta(t);
        prop_assert!(first >= 0.0);
        prop_assert_eq!(first.to_bits(), s.eta(t).to_bits());
        prop_assert_eq!(first.to_bits(), StepSchedule::sqrt_decay(d, g).unwrap().eta(t).to_bits());
    }

    #[test]
    fn table_override_shadows_generator(values in proptest::collection::vec(0.0f64..5.0, 1..50), t in 0u64..100) {
        let s = StepSchedule::constant(0.7).unwrap().with_table_override(values.clone()).unwrap();
        let expected = values.get(t as usize).copied().unwrap_or(0.7);
        prop_assert_eq!(s.eta(t), expected);
    }
}
