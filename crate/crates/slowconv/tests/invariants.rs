//! Property tests for the measure, system, and averaging layers: algebraic
//! identities that must hold for every model, not just the worked examples.

use proptest::prelude::*;
use slowconv::averaging::{cesaro, flow_measure_average, telescope_gap, truncated_average, TimeMeasure};
use slowconv::measure::{MSet, Obs, ProbSpace};
use slowconv::systems::{cyclic_system, Automorphism, DiscreteFlow};
use slowconv::towers::{build_flow_band, build_tower_avoiding, check_invariance_flow};

/// Sums of `count / 2^k` are exact in binary floating point, so identities
/// on dyadic-uniform spaces must hold bitwise.
fn dyadic_space() -> impl Strategy<Value = ProbSpace> {
    (3u32..9).prop_map(|k| ProbSpace::uniform(1usize << k).unwrap())
}

fn bits(len: usize) -> impl Strategy<Value = Vec<bool>> {
    proptest::collection::vec(any::<bool>(), len)
}

fn values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..1.0, len)
}

fn permutation(len: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..len).collect::<Vec<usize>>()).prop_shuffle()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn symmetric_difference_measure_is_exact_on_dyadic_spaces(
        (space, s_bits, t_bits) in dyadic_space().prop_flat_map(|space| {
            let n = space.len();
            (Just(space), bits(n), bits(n))
        })
    ) {
        let s = MSet::from_bits(&space, s_bits).unwrap();
        let t = MSet::from_bits(&space, t_bits).unwrap();
        let lhs = s.symdiff(&t).unwrap().measure();
        let rhs = s.measure() + t.measure() - 2.0 * s.intersect(&t).unwrap().measure();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn disjoint_unions_add_their_measures(
        (space, s_bits, t_bits) in dyadic_space().prop_flat_map(|space| {
            let n = space.len();
            (Just(space), bits(n), bits(n))
        })
    ) {
        let s = MSet::from_bits(&space, s_bits).unwrap();
        // Carve t out of the complement so the two sets are disjoint.
        let t = MSet::from_bits(&space, t_bits).unwrap().difference(&s).unwrap();
        prop_assert!(s.is_disjoint(&t).unwrap());
        let together = s.union(&t).unwrap().measure();
        prop_assert!((together - (s.measure() + t.measure())).abs() <= 1e-12);
    }

    #[test]
    fn automorphisms_preserve_set_measures(
        (space, forward, s_bits) in dyadic_space().prop_flat_map(|space| {
            let n = space.len();
            (Just(space), permutation(n), bits(n))
        })
    ) {
        let map = Automorphism::new(&space, forward.iter().map(|&x| x as u32).collect()).unwrap();
        let s = MSet::from_bits(&space, s_bits).unwrap();
        let image = map.image_of_set(&s).unwrap();
        let preimage = map.preimage_of_set(&s).unwrap();
        prop_assert_eq!(image.count(), s.count());
        prop_assert_eq!(image.measure(), s.measure());
        prop_assert_eq!(preimage.count(), s.count());
        // The preimage of the image is the set itself.
        let roundtrip = map.preimage_of_set(&image).unwrap();
        prop_assert_eq!(roundtrip.bits(), s.bits());
    }

    #[test]
    fn flow_times_compose_additively(
        n in 5usize..60,
        s in -5i64..=5,
        t in -5i64..=5,
    ) {
        let (_, step) = cyclic_system(n).unwrap();
        let flow = DiscreteFlow::new(step, 0.5).unwrap();
        let first = flow.at_time(0.5 * t as f64).unwrap();
        let second = flow.at_time(0.5 * s as f64).unwrap();
        let fused = flow.at_time(0.5 * (s + t) as f64).unwrap();
        for x in 0..n {
            prop_assert_eq!(second.apply(first.apply(x)), fused.apply(x));
        }
    }

    #[test]
    fn orbit_averaging_is_linear_positive_and_mass_preserving(
        (n, steps, f_vals, g_vals, a, b) in (5usize..80).prop_flat_map(|n| {
            (Just(n), 1usize..50, values(n), values(n), -2.0f64..2.0, -2.0f64..2.0)
        })
    ) {
        let (space, map) = cyclic_system(n).unwrap();
        let f = Obs::new(&space, f_vals).unwrap();
        let g = Obs::new(&space, g_vals).unwrap();
        let mixed = f.scale(a).unwrap().add(&g.scale(b).unwrap()).unwrap();
        let combined = cesaro(&map, &mixed, steps).unwrap();
        let separate = cesaro(&map, &f, steps).unwrap().scale(a).unwrap()
            .add(&cesaro(&map, &g, steps).unwrap().scale(b).unwrap()).unwrap();
        prop_assert!(combined.sub(&separate).unwrap().sup_norm() <= 1e-12);

        let averaged = cesaro(&map, &f, steps).unwrap();
        prop_assert!(averaged.min_value() >= -1e-10);
        prop_assert!((averaged.integral() - f.integral()).abs() <= 1e-10);
    }

    #[test]
    fn telescoping_gap_matches_the_norm_identity(
        (n, steps, f_vals) in (5usize..80).prop_flat_map(|n| {
            (Just(n), 1usize..40, values(n))
        })
    ) {
        let (space, map) = cyclic_system(n).unwrap();
        let f = Obs::new(&space, f_vals).unwrap();
        let gap = telescope_gap(&map, &f, steps).unwrap();
        prop_assert!((gap * (steps + 1) as f64 - f.l1_norm()).abs() <= 1e-10);
    }

    #[test]
    fn full_period_averages_collapse_to_the_integral(
        (n, q, f_vals) in (5usize..40).prop_flat_map(|n| {
            (Just(n), 1usize..4, values(n))
        })
    ) {
        let (space, map) = cyclic_system(n).unwrap();
        let f = Obs::new(&space, f_vals).unwrap();
        let averaged = cesaro(&map, &f, n * q).unwrap();
        prop_assert!(averaged.l1_dev(f.integral()) <= 1e-14);
    }

    #[test]
    fn truncation_residual_is_exactly_the_dropped_tail_mass(
        n in 1u64..40,
        l in 0u64..50,
    ) {
        let nu = TimeMeasure::uniform_on_integer_interval(-(n as i64), n as i64).unwrap();
        let (space, step) = cyclic_system(97).unwrap();
        let flow = DiscreteFlow::new(step, 1.0).unwrap();
        let f = MSet::from_indices(&space, 0..48).unwrap().indicator();
        let (_, residual) = truncated_average(&flow, &nu, l as f64, &f).unwrap();
        // All weights equal 1/(2n+1), so the dropped mass is an exact
        // count times that weight.
        let dropped_count = nu.times().iter().filter(|t| t.abs() > l as f64).count();
        let dropped = dropped_count as f64 / (2 * n + 1) as f64;
        prop_assert!((residual - dropped).abs() <= 1e-15);
        if l >= n {
            prop_assert_eq!(residual, 0.0);
            let full = flow_measure_average(&flow, &nu, &f).unwrap();
            let (truncated, _) = truncated_average(&flow, &nu, l as f64, &f).unwrap();
            prop_assert!(full.sub(&truncated).unwrap().sup_norm() <= 1e-15);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tower_levels_tile_without_touching_the_occupied_set(
        (height, mu, occ_stride) in (2usize..20, 0.05f64..0.35, 7usize..23)
    ) {
        let (space, map) = cyclic_system(2_000).unwrap();
        let occupied = MSet::from_pred(&space, |x| x % occ_stride == 0);
        if let Ok(tower) = build_tower_avoiding(&map, height, mu, &occupied) {
            prop_assert_eq!(tower.body().count(), tower.columns() * height);
            prop_assert!(tower.body().is_disjoint(&occupied).unwrap());
        }
    }

    #[test]
    fn band_certificates_reproduce_bitwise_through_the_checker(
        (l, mu) in (1usize..15, 0.2f64..0.6)
    ) {
        let (_, step) = cyclic_system(2_000).unwrap();
        let flow = DiscreteFlow::new(step, 1.0).unwrap();
        if let Ok((band, cert)) = build_flow_band(&flow, l as f64, mu, 0.2, 1e-10) {
            let check = check_invariance_flow(&flow, l as f64, band.band(), 0.8, 1e-10).unwrap();
            prop_assert!(cert.pass() && check.pass());
            prop_assert_eq!(check.ratio(), cert.ratio());
            prop_assert_eq!(check.core().bits(), cert.core().bits());
        }
    }

    #[test]
    fn wider_windows_only_shrink_invariant_cores(
        (l, extra, mu) in (1usize..12, 1usize..10, 0.2f64..0.6)
    ) {
        let (_, step) = cyclic_system(2_000).unwrap();
        let flow = DiscreteFlow::new(step, 1.0).unwrap();
        if let Ok((band, _)) = build_flow_band(&flow, l as f64, mu, 0.2, 1e-10) {
            let narrow = check_invariance_flow(&flow, l as f64, band.band(), 0.1, 0.0).unwrap();
            let wide = check_invariance_flow(&flow, (l + extra) as f64, band.band(), 0.1, 0.0).unwrap();
            prop_assert!(wide.ratio() <= narrow.ratio());
            prop_assert!(wide.core().difference(narrow.core()).unwrap().count() == 0);
        }
    }
}
