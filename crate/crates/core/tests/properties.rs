mod common;

use std::collections::BTreeSet;

use deepdemand_core::eval::{geh, make_folds, metrics, Protocol};
use deepdemand_core::graph::{edge_travel_time, RoadClass, RoadGraph, TargetEdge};
use deepdemand_core::od::{screen_od_pairs, two_source_dijkstra, Scratch, Side, DEFAULT_EPSILON_S};
use proptest::prelude::*;

fn class() -> impl Strategy<Value = RoadClass> {
    (0..RoadClass::ALL.len()).prop_map(|i| RoadClass::ALL[i])
}

fn targets(n: usize, regions: usize) -> Vec<TargetEdge> {
    (0..n)
        .map(|i| TargetEdge {
            edge: i as u64,
            tail: 0,
            head: 1,
            travel_time_s: 1.0,
            volume: Some(1.0),
            region: Some(format!("R{}", i % regions)),
        })
        .collect()
}

fn territory_sizes(g: &RoadGraph, t: &TargetEdge, cutoff: f64) -> (BTreeSet<usize>, BTreeSet<usize>) {
    let p = two_source_dijkstra(g, t, cutoff, &vec![true; g.node_count()]).unwrap();
    (p.territory(Side::Origin).collect(), p.territory(Side::Destination).collect())
}

proptest! {
    #[test]
    fn travel_time_grows_with_length(a in 1.0f64..1e5, b in 1.0f64..1e5, c in class(),
                                     posted in proptest::option::of(5.0f64..90.0)) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(edge_travel_time(lo, c, posted) <= edge_travel_time(hi, c, posted));
        prop_assert!(edge_travel_time(lo, c, posted) > 0.0);
    }

    #[test]
    fn search_matches_replay(seed in any::<u64>(), cutoff in 0.0f64..2000.0, ints in any::<bool>()) {
        let case = common::random_case(seed, 30, ints);
        let cutoff = if ints { cutoff.floor() / 50.0 } else { cutoff };
        let p = two_source_dijkstra(&case.graph, &case.target, cutoff, &case.has_features).unwrap();
        let bad = common::partition_violations(&case.graph, &p, cutoff, &case.has_features);
        prop_assert!(bad.is_empty(), "{bad:?}");
    }

    #[test]
    fn territories_grow_with_cutoff(seed in any::<u64>(), a in 0.0f64..1500.0, b in 0.0f64..1500.0) {
        let case = common::random_case(seed, 30, false);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (o_lo, d_lo) = territory_sizes(&case.graph, &case.target, lo);
        let (o_hi, d_hi) = territory_sizes(&case.graph, &case.target, hi);
        // claims are decided in time order, so raising the cutoff only adds later claims
        prop_assert!(o_lo.is_subset(&o_hi));
        prop_assert!(d_lo.is_subset(&d_hi));
        prop_assert!(o_hi.is_disjoint(&d_hi));
    }

    #[test]
    fn screening_matches_enumeration(seed in any::<u64>(), ints in any::<bool>()) {
        let case = common::random_case(seed, 10, ints);
        let p = two_source_dijkstra(&case.graph, &case.target, 1e9, &case.has_features).unwrap();
        let mut scratch = Scratch::new(case.graph.node_count());
        let got: BTreeSet<_> = screen_od_pairs(&case.graph, &p, DEFAULT_EPSILON_S, &mut scratch)
            .iter()
            .map(|q| (q.origin, q.destination))
            .collect();
        prop_assert_eq!(got, common::screening_reference(&case.graph, &p, DEFAULT_EPSILON_S));
    }

    #[test]
    fn screened_times_are_consistent(seed in any::<u64>()) {
        let case = common::random_case(seed, 20, false);
        let p = two_source_dijkstra(&case.graph, &case.target, 1e9, &case.has_features).unwrap();
        let mut scratch = Scratch::new(case.graph.node_count());
        let t_edge = case.target.travel_time_s;
        for q in screen_od_pairs(&case.graph, &p, DEFAULT_EPSILON_S, &mut scratch) {
            prop_assert!((q.t_origin + t_edge + q.t_dest - q.t_od).abs() <= DEFAULT_EPSILON_S);
            let o = case.graph.node_index(q.origin).unwrap();
            let d = case.graph.node_index(q.destination).unwrap();
            // summation order differs between the two searches
            let slack = 1e-9 * (1.0 + q.t_od);
            prop_assert!(q.t_origin <= p.t_origin[o] + slack && q.t_dest <= p.t_dest[d] + slack);
        }
    }

    #[test]
    fn folds_partition_the_edges(n in 2usize..80, k in 2usize..8, regions in 1usize..6, seed in any::<u64>()) {
        let t = targets(n, regions);
        for protocol in [Protocol::RandomKFold { k: k.min(n) }, Protocol::Spatial] {
            let Ok(plan) = make_folds(&t, protocol.clone(), seed) else {
                // a single region cannot be held out against anything
                prop_assert!(protocol == Protocol::Spatial && regions.min(n) < 2);
                continue;
            };
            let mut seen = vec![0usize; n];
            for f in 0..plan.fold_count() {
                let test = plan.test_indices(f);
                let train = plan.train_indices(f);
                prop_assert_eq!(test.len() + train.len(), n);
                prop_assert!(test.iter().all(|i| !train.contains(i)));
                for i in test {
                    seen[i] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn geh_is_symmetric_and_non_negative(y in 0.0f64..1e6, y_hat in 0.0f64..1e6) {
        prop_assert_eq!(geh(y, y_hat), geh(y_hat, y));
        prop_assert!(geh(y, y_hat) >= 0.0);
    }

    #[test]
    fn metric_bounds(pairs in proptest::collection::vec((0.0f64..1e4, 0.0f64..1e4), 1..50), scale in 0.1f64..10.0) {
        let m = metrics(&pairs).unwrap();
        prop_assert!(m.mae >= 0.0 && m.mgeh >= 0.0);
        if let Some(r2) = m.r2 {
            prop_assert!(r2 <= 1.0 + 1e-12);
        }
        // scaling every residual about y scales the MAE
        let scaled: Vec<_> = pairs.iter().map(|&(y, p)| (y, y + scale * (p - y))).collect();
        let s = metrics(&scaled).unwrap();
        prop_assert!((s.mae - scale * m.mae).abs() <= 1e-9 * (1.0 + m.mae * scale));
    }
}

mod model {
    use deepdemand_core::features::{FeatureBank, FeatureTable};
    use deepdemand_core::model::{Architecture, ModelParams, PreparedEdge};
    use proptest::prelude::*;

    fn edge() -> impl Strategy<Value = (PreparedEdge, u64)> {
        (1usize..4, 1usize..4, proptest::collection::vec((0u32..4, 0u32..4, 0.0f64..1e4), 0..20), any::<u64>())
            .prop_map(|(no, nd, pairs, seed)| {
                let k = 3;
                let ox = (0..no * k).map(|i| ((i as f64) * 0.37).sin() * 3.0).collect();
                let dx = (0..nd * k).map(|i| ((i as f64) * 0.91).cos() * 3.0).collect();
                let pairs: Vec<_> = pairs.into_iter().map(|(o, d, t)| (o % no as u32, d % nd as u32, t)).collect();
                (PreparedEdge::from_parts(0, k, ox, dx, &pairs), seed)
            })
    }

    proptest! {
        #[test]
        fn predictions_are_non_negative((e, seed) in edge()) {
            let params = ModelParams::init(&Architecture::new(3), seed);
            let y = params.predict(&e);
            prop_assert!(y >= 0.0 && y.is_finite());
        }

        #[test]
        fn pair_order_is_irrelevant((e, seed) in edge(), rot in 0usize..20) {
            let params = ModelParams::init(&Architecture::new(3), seed);
            let mut r = e.clone();
            let n = r.pair_count();
            if n > 0 {
                r.pair_origin.rotate_left(rot % n);
                r.pair_dest.rotate_left(rot % n);
                r.t_od.rotate_left(rot % n);
            }
            prop_assert_eq!(params.predict(&e), params.predict(&r));
        }

        #[test]
        fn full_rank_pca_round_trips(rows in proptest::collection::vec(proptest::collection::vec(-100.0f64..100.0, 3), 6..20)) {
            let table = FeatureTable {
                names: vec!["a".into(), "b".into(), "c".into()],
                area_ids: (0..rows.len()).map(|i| format!("A{i}")).collect(),
                rows: rows.clone(),
            };
            let bank = FeatureBank::fit_transform(&table, 3).unwrap();
            for (a, row) in rows.iter().enumerate() {
                let back = bank.reconstruct(bank.vector(a));
                let z = bank.standardize(row);
                for (x, y) in z.iter().zip(&back) {
                    prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()), "{z:?} {back:?}");
                }
            }
        }
    }
}
