//! Property-based checks of the structural invariants: quantizer range,
//! transition-matrix feasibility, the discrete-dynamics round trip,
//! posterior normalization, and weighted-estimate invariances.

use driftfit::hmm::{
    dynamics_from_transitions, emission_from_cell_average, forward_backward, quantize,
    transitions_from_dynamics, Hmm, QuantizerSpec,
};
use driftfit::mbw::{build_transition, FourierParams};
use driftfit::pf::weighted_histogram;
use proptest::prelude::*;

/// A strictly feasible one-harmonic parameter set: the DC terms dominate
/// the harmonic amplitudes, so every off-diagonal entry and every diagonal
/// stays inside the open unit interval.
fn feasible_params(n: usize) -> impl Strategy<Value = FourierParams> {
    (
        0.05f64..0.3,
        0.05f64..0.3,
        -1.0f64..1.0,
        -1.0f64..1.0,
        -1.0f64..1.0,
        -1.0f64..1.0,
    )
        .prop_map(move |(c0p, c0m, a, b, c, d)| {
            let plus = vec![c0p, 0.4 * c0p * a, 0.4 * c0p * b];
            let minus = vec![c0m, 0.4 * c0m * c, 0.4 * c0m * d];
            FourierParams::new(n, plus, minus).unwrap()
        })
}

proptest! {
    #[test]
    fn quantizer_output_is_always_in_range(
        m in 2usize..64,
        lo in -3.0f64..1.0,
        span in 0.1f64..4.0,
        ys in proptest::collection::vec(-10.0f64..10.0, 1..50),
    ) {
        let q = QuantizerSpec { n_symbols: m, lo, hi: lo + span };
        let symbols = quantize(&ys, &q).unwrap();
        for &s in &symbols {
            prop_assert!(s < m);
        }
    }

    #[test]
    fn dynamics_round_trip_is_identity(
        pairs in proptest::collection::vec(
            (0.001f64..0.9).prop_flat_map(|ap| {
                (Just(ap), 0.001f64..(0.995 - ap))
            }),
            3..12,
        ),
        d0 in 0.1f64..4.0,
        dx in 0.2f64..3.0,
    ) {
        let a_plus: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let a_minus: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let (drift, diffusion) = dynamics_from_transitions(&a_plus, &a_minus, d0, dx).unwrap();
        let (rp, rm) = transitions_from_dynamics(&drift, &diffusion, d0, dx).unwrap();
        for i in 0..a_plus.len() {
            prop_assert!((rp[i] - a_plus[i]).abs() < 1e-12);
            prop_assert!((rm[i] - a_minus[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn built_transition_is_stochastic_and_banded(params in feasible_params(12)) {
        let n = 12;
        let t = build_transition(&params).unwrap();
        for i in 0..n {
            let row = &t[i * n..(i + 1) * n];
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            for (j, &v) in row.iter().enumerate() {
                let neighbor = j == i || j == (i + 1) % n || j == (i + n - 1) % n;
                if neighbor {
                    prop_assert!(v > 0.0 && v < 1.0);
                } else {
                    prop_assert!(v == 0.0);
                }
            }
        }
    }

    #[test]
    fn mirrored_params_build_the_relabeled_matrix(params in feasible_params(10)) {
        // Mirroring the parameters must equal mirroring the states of the
        // built matrix: a'[i -> i+1] = a[(n-i) -> (n-i)-1].
        let n = 10;
        let direct = build_transition(&params).unwrap();
        let mirrored = build_transition(&params.mirrored()).unwrap();
        for i in 0..n {
            let r = (n - i) % n;
            let up = mirrored[i * n + (i + 1) % n];
            let down_at_reflection = direct[r * n + (r + n - 1) % n];
            prop_assert!((up - down_at_reflection).abs() < 1e-12);
        }
    }

    #[test]
    fn cell_average_emission_rows_are_distributions(
        n in 2usize..24,
        m in 2usize..40,
        sigma in 0.0f64..0.05,
    ) {
        let q = QuantizerSpec { n_symbols: m, lo: -1.0, hi: 1.0 };
        let emission = emission_from_cell_average(n, &q, sigma).unwrap();
        prop_assert_eq!(emission.len(), n * m);
        for i in 0..n {
            let row = &emission[i * m..(i + 1) * m];
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            for &v in row {
                prop_assert!(v >= 0.0);
            }
        }
    }

    #[test]
    fn forward_backward_posteriors_normalize(
        pairs in proptest::collection::vec(
            (0.05f64..0.4, 0.05f64..0.4),
            4..=4,
        ),
        emission_seed in proptest::collection::vec(0.05f64..1.0, 8),
        symbols in proptest::collection::vec(0usize..2, 2..10),
    ) {
        let n = 4;
        let m = 2;
        let mut transition = vec![0.0; n * n];
        for i in 0..n {
            let (p, mi) = pairs[i];
            transition[i * n + (i + 1) % n] = p;
            transition[i * n + (i + n - 1) % n] = mi;
            transition[i * n + i] = 1.0 - p - mi;
        }
        let mut emission = emission_seed;
        for i in 0..n {
            let row = &mut emission[i * m..(i + 1) * m];
            let sum: f64 = row.iter().sum();
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let hmm = Hmm::new(n, m, transition, emission, vec![0.25; n]).unwrap();
        let fb = forward_backward(&hmm, &symbols).unwrap();
        for t in 0..symbols.len() {
            let row_sum: f64 = fb.gamma[t * n..(t + 1) * n].iter().sum();
            prop_assert!((row_sum - 1.0).abs() < 1e-10);
        }
        let xi_total: f64 = fb.xi_sums.iter().sum();
        prop_assert!((xi_total - (symbols.len() as f64 - 1.0)).abs() < 1e-9);
    }

    #[test]
    fn histogram_mass_is_conserved(
        xs in proptest::collection::vec(-5.0f64..5.0, 1..40),
        bins in 1usize..30,
    ) {
        let n = xs.len();
        let weights = vec![1.0 / n as f64; n];
        let hist = weighted_histogram(&xs, &weights, -2.0, 2.0, bins).unwrap();
        let total: f64 = hist.iter().map(|&(_, mass)| mass).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }
}
