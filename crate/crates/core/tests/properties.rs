mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rvseg_core::dataio::{self, Dataset};
use rvseg_core::eval::ConfusionMatrix;
use rvseg_core::geometry::relative_chain;
use rvseg_core::refine::{
    knn_refine, mvp_push, nla_refine, KnnParams, NlaParams, ScanWindow, SparseVoteGrid, WindowEntry,
};
use rvseg_core::tca::{self, AttentionParams, FeatureGrid};
use rvseg_core::*;

fn transform() -> impl Strategy<Value = RigidTransform> {
    (
        prop::array::uniform3(-1.0f64..1.0),
        -3.2f64..3.2,
        prop::array::uniform3(-10.0f64..10.0),
    )
        .prop_map(|(axis, angle, t)| {
            let axis = if axis.iter().all(|a| a.abs() < 1e-3) {
                [1.0, 0.0, 0.0]
            } else {
                axis
            };
            RigidTransform::from_axis_angle(axis, angle, t).unwrap()
        })
}

fn point() -> impl Strategy<Value = Point3> {
    prop::array::uniform3(-30.0f64..30.0).prop_map(|[x, y, z]| Point3::new(x, y, z))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chain_composition_splits_anywhere(chain in prop::collection::vec(transform(), 0..8), a in 0usize..8, b in 0usize..8, c in 0usize..8) {
        let n = chain.len();
        let mut idx = [a % (n + 1), b % (n + 1), c % (n + 1)];
        idx.sort();
        let [from, mid, to] = idx;
        let whole = compose_chain(&chain, from, to).unwrap();
        let split = compose_chain(&chain, mid, to).unwrap().compose(&compose_chain(&chain, from, mid).unwrap());
        prop_assert!(whole.max_abs_diff(&split) < 1e-9);
    }

    #[test]
    fn transforms_preserve_distances(t in transform(), p in point(), q in point()) {
        let d0 = p.distance(&q);
        let d1 = t.apply(&p).distance(&t.apply(&q));
        prop_assert!((d0 - d1).abs() < 1e-9 * (1.0 + d0));
        prop_assert!(t.compose(&t.invert()).max_abs_diff(&RigidTransform::identity()) < 1e-12);
    }

    #[test]
    fn relative_chain_recovers_poses(poses in prop::collection::vec(transform(), 1..6)) {
        let chain = relative_chain(&poses);
        prop_assert_eq!(chain.len(), poses.len() - 1);
        for j in 0..poses.len() {
            for t in j..poses.len() {
                // pose_t * T(j -> t) == pose_j
                let lhs = poses[t].compose(&compose_chain(&chain, j, t).unwrap());
                prop_assert!(lhs.max_abs_diff(&poses[j]) < 1e-9);
            }
        }
    }

    #[test]
    fn projection_ignores_point_order(points in prop::collection::vec(point(), 1..300), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let cfg = ProjectionConfig::new(8, 32, 3.0, -25.0).unwrap();
        let cloud = PointCloud::from_points(points.clone()).unwrap();
        let mut shuffled = points;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let other = PointCloud::from_points(shuffled).unwrap();
        let a = project(&cloud, &cfg).unwrap();
        let b = project(&other, &cfg).unwrap();
        prop_assert_eq!(&a.pixels, &b.pixels);
        let (sa, sb) = (occlusion_stats(&a), occlusion_stats(&b));
        prop_assert_eq!(sa, sb);
        // One winner per non-empty pixel.
        prop_assert_eq!(sa.projected_points - sa.occluded_points, a.valid_pixel_count());
    }

    #[test]
    fn grid_stays_equal_to_batch_accumulation(
        cap in 1usize..6,
        scans in prop::collection::vec(prop::collection::vec((prop::array::uniform3(-0.25f64..0.25), 0u16..4), 0..30), 1..12),
    ) {
        let mut window = ScanWindow::new(cap).unwrap();
        let mut grid = SparseVoteGrid::new(0.1, 4, Some(0)).unwrap();
        for (frame_id, scan) in scans.into_iter().enumerate() {
            let points = scan.iter().map(|(p, _)| Point3::new(p[0], p[1], p[2])).collect();
            let labels = scan.iter().map(|&(_, l)| l).collect();
            mvp_push(&mut window, &mut grid, WindowEntry { frame_id, points, labels }).unwrap();
            prop_assert!(window.len() <= cap);
            let mut fresh = SparseVoteGrid::new(0.1, 4, Some(0)).unwrap();
            for e in window.entries() {
                fresh.add_scan(&e.points, &e.labels).unwrap();
            }
            prop_assert_eq!(fresh.snapshot(), grid.snapshot());
        }
    }

    #[test]
    fn attention_rows_are_distributions(seed in any::<u64>(), h in 1usize..4, w in 1usize..4, heads in prop::sample::select(vec![1usize, 2, 4])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = AttentionParams::seeded(4, Some(8), seed);
        params.heads = heads;
        let cur = FeatureGrid::random(h, w, 4, &mut rng);
        let prev = FeatureGrid::random(w, h, 4, &mut rng);
        let out = tca::cross_attention_detailed(&cur, &prev, &params).unwrap();
        prop_assert_eq!(out.weights.len(), heads);
        for head in &out.weights {
            for row in head.chunks(out.keys) {
                prop_assert!(row.iter().all(|&x| x >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn confusion_merge_is_order_free(gt in prop::collection::vec(0u16..4, 0..200), pr_seed in any::<u64>(), cut in 0usize..200) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(pr_seed);
        let pr: Vec<u16> = gt.iter().map(|_| rng.gen_range(0..4)).collect();
        let cut = cut.min(gt.len());
        let mut a = ConfusionMatrix::new(4, Some(0)).unwrap();
        a.accumulate(&gt[..cut], &pr[..cut]).unwrap();
        let mut b = ConfusionMatrix::new(4, Some(0)).unwrap();
        b.accumulate(&gt[cut..], &pr[cut..]).unwrap();
        let mut ab = a.clone();
        ab.merge(&b).unwrap();
        let mut ba = b.clone();
        ba.merge(&a).unwrap();
        let mut whole = ConfusionMatrix::new(4, Some(0)).unwrap();
        whole.accumulate(&gt, &pr).unwrap();
        prop_assert_eq!(&ab, &ba);
        prop_assert_eq!(&ab, &whole);
        if let Ok(r) = whole.iou(false) {
            prop_assert!((0.0..=1.0).contains(&r.miou));
            prop_assert!(r.per_class[0].is_none());
        }
    }

    #[test]
    fn image_refiners_match_naive_references(points in prop::collection::vec(point(), 1..200), label_seed in any::<u64>(), k in 1usize..8, window in prop::sample::select(vec![1usize, 3, 5]), cutoff in 0.0f64..3.0, tau in 0.01f64..3.0) {
        use rand::Rng;
        let cfg = ProjectionConfig::new(6, 24, 3.0, -25.0).unwrap();
        let cloud = PointCloud::from_points(points).unwrap();
        let image = project(&cloud, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(label_seed);
        let labels: Vec<ClassId> = (0..cloud.len()).map(|_| rng.gen_range(0..5)).collect();
        let li = image.winner_labels(&labels, 0).unwrap();
        let kp = KnnParams { k, window, cutoff };
        let np = NlaParams { patch: window + 2, tau };
        prop_assert_eq!(knn_refine(&image, &li, &kp, 0).unwrap(), common::naive_knn(&image, &li, &kp, 0));
        prop_assert_eq!(nla_refine(&image, &li, &np, 0).unwrap(), common::naive_nla(&image, &li, &np, 0));
    }

    #[test]
    fn scan_and_label_files_round_trip(raw in prop::collection::vec((prop::array::uniform4(-1e3f32..1e3), 0usize..20), 0..100)) {
        let dir = tempfile::tempdir().unwrap();
        let map = Dataset::SemanticKitti.label_map();
        let scan = dataio::LabeledScan {
            frame_id: 0,
            points: raw.iter().map(|(p, _)| *p).collect(),
            labels: Some(raw.iter().map(|&(_, l)| l as ClassId).collect()),
        };
        let (bin, label) = (dir.path().join("s.bin"), dir.path().join("s.label"));
        dataio::write_scan(&bin, &scan).unwrap();
        let back = dataio::read_scan(&bin).unwrap();
        prop_assert_eq!(&back.points, &scan.points);
        let labels = scan.labels.clone().unwrap();
        dataio::write_labels(&label, &labels, &map).unwrap();
        prop_assert_eq!(dataio::read_labels(&label, &map).unwrap(), labels);
    }
}
