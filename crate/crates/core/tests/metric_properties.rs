use driftguard_core::gmm::ClassId;
use driftguard_core::metrics::{mann_whitney_u, rsm, rsm_windows, utility, UtilityModel};
use driftguard_core::ranking::{rank_means, PreferenceOrder};
use driftguard_core::sim::QualityPoint;
use proptest::prelude::*;

fn brute_force_cles(a: &[f64], b: &[f64]) -> f64 {
    let mut wins = 0.0;
    for x in a {
        for y in b {
            wins += if x > y {
                1.0
            } else if x == y {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (a.len() * b.len()) as f64
}

/// Rank pairs with `r >= r*`, both in `1..=m`.
fn rank_pairs(m: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    prop::collection::vec((1..=m, 0..m), 1..40)
        .prop_map(move |v| v.into_iter().map(|(s, d)| ((s + d).min(m), s)).unzip())
}

proptest! {
    #[test]
    fn utility_is_bounded(pl in 0.0f64..=100.0, ec in 0.0f64..30.0) {
        for order in PreferenceOrder::ALL {
            let u = UtilityModel::for_preference(order).utility(QualityPoint::new(pl, ec));
            prop_assert!((0.0..=1.0).contains(&u));
        }
    }

    #[test]
    fn utility_never_rewards_worse_qualities(pl in 0.0f64..=100.0, ec in 10.0f64..20.0, dpl in 0.0f64..50.0, dec in 0.0f64..3.0) {
        let worse = QualityPoint::new((pl + dpl).min(100.0), ec + dec);
        prop_assert!(utility(worse) <= utility(QualityPoint::new(pl, ec)));
    }

    #[test]
    fn rsm_matches_its_definition((r, s) in rank_pairs(6)) {
        let expect = r.iter().zip(&s).map(|(a, b)| (a - b) as f64).sum::<f64>() / (r.len() as f64 * 5.0);
        let got = rsm(&r, &s, 6).unwrap();
        prop_assert!((got - expect).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn rsm_ignores_a_common_shift((r, s) in rank_pairs(5), t in 0usize..4) {
        let shift = |v: &[usize]| v.iter().map(|x| x + t).collect::<Vec<_>>();
        // Only the displacement matters, not where the ranks sit.
        let base = rsm(&r, &s, 9).unwrap();
        let shifted = rsm(&shift(&r), &shift(&s), 9).unwrap();
        prop_assert!((base - shifted).abs() < 1e-12);
    }

    #[test]
    fn windows_average_to_the_whole_run(k in 1usize..6, (r, s) in rank_pairs(4)) {
        let n = r.len() * k;
        let r: Vec<usize> = r.iter().cycle().take(n).copied().collect();
        let s: Vec<usize> = s.iter().cycle().take(n).copied().collect();
        let w = rsm_windows(&r, &s, 4, k).unwrap();
        prop_assert_eq!(w.len(), n / k);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        prop_assert!((mean - rsm(&r, &s, 4).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn mann_whitney_matches_pairwise_counting(
        a in prop::collection::vec(0u8..8, 1..25),
        b in prop::collection::vec(0u8..8, 1..25),
    ) {
        // Small integer values force plenty of ties.
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let u = mann_whitney_u(&a, &b).unwrap();
        prop_assert!((u - brute_force_cles(&a, &b)).abs() < 1e-9);
        prop_assert!((u + mann_whitney_u(&b, &a).unwrap() - 1.0).abs() < 1e-9);
    }
}

/// Means whose leading-axis values are at least 2 apart, so no pair ties.
fn spread_means(order: PreferenceOrder) -> impl Strategy<Value = Vec<(ClassId, [f64; 2])>> {
    prop::collection::vec((2.1f64..6.0, 0.0f64..20.0), 1..8).prop_map(move |v| {
        let [a, _] = order.axes();
        let mut lead = 0.0;
        v.into_iter()
            .enumerate()
            .map(|(i, (gap, other))| {
                lead += gap;
                let mut m = [other, other];
                m[a] = lead;
                (ClassId(i as u32), m)
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn ranking_follows_the_leading_axis_and_ignores_scale(
        means in spread_means(PreferenceOrder::PacketLossFirst),
        c in 0.25f64..8.0,
        rotate in 0usize..8,
    ) {
        let order = PreferenceOrder::PacketLossFirst;
        let ranked = rank_means(&means, order);
        let expect: Vec<ClassId> = means.iter().map(|(id, _)| *id).collect();
        prop_assert_eq!(&ranked, &expect);

        let mut scaled: Vec<(ClassId, [f64; 2])> = means.iter().map(|(id, m)| (*id, [m[0] * c, m[1] * c])).collect();
        let k = rotate % scaled.len();
        scaled.rotate_left(k);
        prop_assert_eq!(rank_means(&scaled, order), expect);
    }

    #[test]
    fn ranking_is_a_permutation(
        raw in prop::collection::vec((0.0f64..100.0, 12.0f64..16.0), 0..10),
        energy_first in any::<bool>(),
    ) {
        let order = if energy_first { PreferenceOrder::EnergyFirst } else { PreferenceOrder::PacketLossFirst };
        let means: Vec<(ClassId, [f64; 2])> = raw.iter().enumerate().map(|(i, (p, e))| (ClassId(i as u32), [*p, *e])).collect();
        let mut ranked = rank_means(&means, order);
        ranked.sort();
        prop_assert_eq!(ranked, means.iter().map(|(id, _)| *id).collect::<Vec<_>>());
    }
}
