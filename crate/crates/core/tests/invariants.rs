//! Property tests over random inputs.

use std::path::Path;

use proptest::prelude::*;

use tearnet::downstream::{stratified_folds, CodewordRow, CodewordTable};
use tearnet::geometry::{
    alive_faces, connected_components, graph_filter, grid_graph, make_grid, tear_graph, GraphConfig, GridSpacing,
    TearMode,
};
use tearnet::metrics::{brute_nearest_sq, chamfer_aug, emd, IndexKind, NNIndex};
use tearnet::{Cloud64, Model, ModelConfig, PointCloud3, Variant};

fn point() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-2.0f64..2.0)
}

fn cloud(max: usize) -> impl Strategy<Value = Cloud64> {
    prop::collection::vec(point(), 1..=max).prop_map(PointCloud3::new)
}

fn weight5d(eps: f64) -> GraphConfig {
    GraphConfig {
        eps,
        threshold: 1e-12,
        mode: TearMode::Weight5d,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chamfer_is_symmetric_and_vanishes_on_itself(x in cloud(40), y in cloud(40)) {
        let a = chamfer_aug(&x, &y).unwrap();
        prop_assert_eq!(a, chamfer_aug(&y, &x).unwrap());
        prop_assert!(a >= 0.0);
        prop_assert_eq!(chamfer_aug(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_never_exceeds_emd(pairs in prop::collection::vec((point(), point()), 1..=12)) {
        let x = PointCloud3::new(pairs.iter().map(|p| p.0).collect());
        let y = PointCloud3::new(pairs.iter().map(|p| p.1).collect());
        // every directed nearest-neighbor mean is at most the matched mean
        prop_assert!(chamfer_aug(&x, &y).unwrap() <= emd(&x, &y).unwrap() + 1e-12);
    }

    #[test]
    fn emd_ignores_point_order(x in cloud(10), seed in any::<u64>()) {
        let n = x.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.rotate_left((seed as usize) % n);
        let y = x.select(&idx);
        prop_assert!(emd(&x, &y).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kd_tree_agrees_with_brute_force(x in cloud(200), queries in prop::collection::vec(point(), 1..50)) {
        let index = NNIndex::build(&x.points, IndexKind::KdTree);
        for q in &queries {
            prop_assert_eq!(index.nearest_sq(q), brute_nearest_sq(&x.points, q));
        }
    }

    #[test]
    fn tearing_only_removes_edges(n in 2usize..9, offsets in prop::collection::vec(prop::array::uniform5(-1.0f64..1.0), 81)) {
        let cfg = weight5d(0.2);
        let grid = make_grid::<f64>(n, GridSpacing::EndpointInclusive).unwrap();
        let g0 = grid_graph(&grid, &cfg).unwrap();
        let pos: Vec<[f64; 5]> = grid.points.iter().zip(&offsets).map(|(u, o)| {
            [u[0] + o[0], u[1] + o[1], o[2], o[3], o[4]]
        }).collect();
        let torn = tear_graph(&g0, &pos, &cfg).unwrap();
        for e in &torn.edges {
            prop_assert!(g0.has_edge(e.i, e.j));
            prop_assert!(e.w > 0.0 && e.w <= 1.0);
        }
        let (_, components) = connected_components(&torn);
        prop_assert!(components >= 1 && components <= n * n);
        let alive = alive_faces(n, &torn).unwrap();
        prop_assert_eq!(alive.len(), (n - 1) * (n - 1));
    }

    #[test]
    fn filter_preserves_the_centroid(x in cloud(64), lambda in 0.0f64..1.0) {
        let n = (x.len() as f64).sqrt() as usize;
        prop_assume!(n >= 2);
        let x = x.select(&(0..n * n).collect::<Vec<_>>());
        let grid = make_grid::<f64>(n, GridSpacing::EndpointInclusive).unwrap();
        let g = grid_graph(&grid, &weight5d(0.5)).unwrap();
        let y = graph_filter(&x, &g, lambda).unwrap();
        for k in 0..3 {
            let a: f64 = x.points.iter().map(|p| p[k]).sum();
            let b: f64 = y.points.iter().map(|p| p[k]).sum();
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn folds_are_balanced_per_label(labels in prop::collection::vec(1usize..5, 8..60), folds in 2usize..5, seed in any::<u64>()) {
        let ids: Vec<String> = (0..labels.len()).map(|i| format!("s{i:03}")).collect();
        let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let assign = stratified_folds(&id_refs, &labels, folds, seed).unwrap();
        for l in 1..5 {
            let mut sizes = vec![0usize; folds];
            for (a, &lab) in assign.iter().zip(&labels) {
                if lab == l {
                    sizes[*a] += 1;
                }
            }
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
        }
    }

    #[test]
    fn codeword_csv_round_trips(rows in prop::collection::vec((1usize..10, any::<bool>(), prop::collection::vec(-1e3f64..1e3, 4)), 1..12)) {
        let table = CodewordTable::new(
            vec!["torus".into()],
            rows.iter().enumerate().map(|(i, (k, t, c))| CodewordRow {
                scene_id: format!("test-{i}"),
                count: *k,
                presence: vec![*t],
                code: c.clone(),
            }).collect(),
        ).unwrap();
        let back = CodewordTable::parse_csv(&table.to_csv(), Path::new("mem.csv")).unwrap();
        prop_assert_eq!(back, table);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn encoder_ignores_point_order(x in cloud(30), shift in 1usize..29) {
        let model = Model::<f64>::new(ModelConfig::tiny(Variant::TearingNet), 11).unwrap();
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.rotate_left(shift % x.len());
        let a = model.encode(&x).unwrap();
        let b = model.encode(&x.select(&idx)).unwrap();
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
        }
    }
}
