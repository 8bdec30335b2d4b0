use dsm_core::lemma::*;
use proptest::prelude::*;

fn admissible() -> impl Strategy<Value = (f64, Vec<f64>, Vec<f64>)> {
    (1usize..60).prop_flat_map(|n| {
        (
            0.0..10.0f64,
            prop::collection::vec(1e-6..=0.5f64, n),
            prop::collection::vec(0.0..1.0f64, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

    #[test]
    fn simulated_sequence_respects_both_bounds((g1, a, b) in admissible()) {
        let trace = RecursionTrace::new(g1, a, b).unwrap();
        prop_assert!(trace.certified(1e-12), "worst excess {}", trace.worst_excess());
    }

    #[test]
    fn constant_log_p_majorant_is_a_power_sum(
        p in 1.0001..=std::f64::consts::E.sqrt(),
        g1 in 0.0..5.0f64,
        b in prop::collection::vec(0.0..1.0f64, 1..40),
    ) {
        let n = b.len();
        let a = vec![p.ln(); n];
        let ib = induction_bound(g1, &a, &b, n).unwrap();
        let direct = b[n - 1] + weighted_tail_constant_p(&b, p, n) + g1 * p.powi(-(n as i32));
        prop_assert!((ib.majorant - direct).abs() <= 1e-12 * direct.max(1.0));
    }
}

#[test]
fn harmonic_forcing_with_constant_rate() {
    let n = 200;
    let a = SequenceSpec::Constant { value: 0.5 }.generate(n).unwrap();
    let b = SequenceSpec::Harmonic { scale: 1.0 }.generate(n).unwrap();
    let report = check_lemma_conditions(&a, &b, n).unwrap();
    assert!(report.divergent_trend);
    assert!(report.tail_decreasing);
    assert!(report.tail_sum < 0.02);
    let g = simulate_recursion(1.0, &a, &b).unwrap();
    assert!(g[n] < 0.02);
}
