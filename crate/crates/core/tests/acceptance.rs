//! End-to-end acceptance checks. Runs sequentially in one test so the timing
//! budgets are not skewed by sibling tests, and prints one line per criterion.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rvseg_core::dataio::{self, Dataset, SequenceDir};
use rvseg_core::eval::ConfusionMatrix;
use rvseg_core::geometry::relative_chain;
use rvseg_core::pipeline::{refine_sequence, Classes, Method, SequenceRefiner};
use rvseg_core::refine::{
    knn_refine, mvp_push, nla_refine, vote_argmax, KnnParams, NlaParams, RefineParams, ScanWindow, SparseVoteGrid,
    TieBreak, WindowEntry,
};
use rvseg_core::synth::{self, Scene, SensorModel};
use rvseg_core::tca::{self, AttentionParams, FeatureGrid};
use rvseg_core::*;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Outcome;

fn fail_if(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn pose_chain() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_direct = 0.0f64;
    let mut worst_split = 0.0f64;
    for _ in 0..100 {
        let chain: Vec<_> = (0..10).map(|_| common::random_transform(&mut rng)).collect();
        let mut direct = RigidTransform::identity();
        for t in &chain {
            let m = common::naive_product(t, &direct);
            let flat: Vec<f64> = m.iter().flat_map(|r| r.iter().copied()).collect();
            direct = RigidTransform::from_matrix(nalgebra::Matrix4::from_row_slice(&flat)).unwrap();
        }
        let full = compose_chain(&chain, 0, 10).unwrap();
        worst_direct = worst_direct.max(full.max_abs_diff(&direct));
        for from in 0..=10 {
            for to in from..=10 {
                let whole = compose_chain(&chain, from, to).unwrap();
                for mid in from..=to {
                    let split = compose_chain(&chain, mid, to)
                        .unwrap()
                        .compose(&compose_chain(&chain, from, mid).unwrap());
                    worst_split = worst_split.max(whole.max_abs_diff(&split));
                }
            }
        }
    }
    let el = t0.elapsed();
    fail_if(
        worst_direct <= 1e-9 && worst_split <= 1e-9 && el < Duration::from_secs(1),
        format!(
            "max_direct_err={worst_direct:e} max_split_err={worst_split:e} runtime_s={:.3}",
            secs(el)
        ),
    )
}

fn many_to_one() -> Outcome {
    let t0 = Instant::now();
    let cfg = ProjectionConfig::new(64, 512, 3.0, -25.0).unwrap();
    let seq = synth::billboard_drive(20, cfg, 2).unwrap();
    let mut mismatched = 0;
    let mut occluded = 0;
    for (scan, oracle) in seq.scans.iter().zip(&seq.occluded) {
        let image = project(&scan.cloud, &cfg).unwrap();
        let got: Vec<usize> = (0..image.num_points()).filter(|&i| image.point_occluded[i]).collect();
        let want: Vec<usize> = oracle.iter().map(|o| o.index).collect();
        occluded += want.len();
        if got != want {
            mismatched += 1;
        }
    }
    let el = t0.elapsed();
    fail_if(
        mismatched == 0 && occluded > 0 && el < Duration::from_secs(10),
        format!(
            "frames=20 mismatched_frames={mismatched} occluded_points={occluded} runtime_s={:.3}",
            secs(el)
        ),
    )
}

fn real_occlusion() -> Outcome {
    let Some(root) = std::env::var_os("SEMANTICKITTI_ROOT").map(PathBuf::from) else {
        return Outcome::Skip("SEMANTICKITTI_ROOT not set".into());
    };
    let cfg = ProjectionConfig::default();
    let mut stats = OcclusionStats::default();
    let mut scans = 0;
    for seq in ["00", "01", "02", "03", "04", "05", "06", "07", "08", "09", "10"] {
        let dir = SequenceDir::new(&root, seq);
        let Ok(frames) = dir.frames() else { continue };
        for &f in frames.iter().step_by((frames.len() / 5).max(1)).take(5 - scans.min(5)) {
            let scan = match dataio::read_scan(dir.scan(f)).and_then(|s| s.to_cloud()) {
                Ok(c) => c,
                Err(e) => return Outcome::Fail(format!("cannot read {}: {e}", dir.scan(f).display())),
            };
            stats = stats.merge(&occlusion_stats(&project(&scan, &cfg).unwrap()));
            scans += 1;
        }
        if scans >= 5 {
            break;
        }
    }
    if scans < 5 {
        return Outcome::Skip(format!("only {scans} scans found under {}", root.display()));
    }
    let f = stats.occluded_fraction;
    fail_if(
        (0.15..=0.30).contains(&f),
        format!("scans={scans} occluded_fraction={f}"),
    )
}

fn incremental_grid() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut grid_mismatch = 0;
    for _ in 0..200 {
        let cap = rng.gen_range(1..=10);
        let mut window = ScanWindow::new(cap).unwrap();
        let mut grid = SparseVoteGrid::new(0.1, 6, Some(0)).unwrap();
        let pushes = rng.gen_range(1..=25);
        for frame_id in 0..pushes {
            let n = rng.gen_range(0..60);
            let points: Vec<_> = (0..n)
                .map(|_| {
                    Point3::new(
                        rng.gen_range(-0.3..0.3),
                        rng.gen_range(-0.3..0.3),
                        rng.gen_range(-0.2..0.2),
                    )
                })
                .collect();
            let labels = (0..n).map(|_| rng.gen_range(0..6)).collect();
            mvp_push(
                &mut window,
                &mut grid,
                WindowEntry {
                    frame_id,
                    points,
                    labels,
                },
            )
            .unwrap();
            let mut fresh = SparseVoteGrid::new(0.1, 6, Some(0)).unwrap();
            for e in window.entries() {
                fresh.add_scan(&e.points, &e.labels).unwrap();
            }
            if fresh.snapshot() != grid.snapshot() {
                grid_mismatch += 1;
            }
        }
    }
    let mut vote_mismatch = 0;
    for _ in 0..1000 {
        let c = rng.gen_range(1..8usize);
        let hist: Vec<u32> = (0..c).map(|_| rng.gen_range(0..4)).collect();
        let current = rng.gen_range(0..c) as ClassId;
        let ignore = if rng.gen_bool(0.5) { Some(0) } else { None };
        for tb in [TieBreak::KeepCurrent, TieBreak::LowestId] {
            let eligible: Vec<ClassId> = (0..c as ClassId).filter(|&k| Some(k) != ignore).collect();
            let top = eligible.iter().map(|&k| hist[k as usize]).max().unwrap_or(0);
            let want = if top == 0 {
                current
            } else {
                let tied: Vec<ClassId> = eligible.into_iter().filter(|&k| hist[k as usize] == top).collect();
                if tb == TieBreak::KeepCurrent && tied.contains(&current) {
                    current
                } else {
                    tied[0]
                }
            };
            if vote_argmax(&hist, current, ignore, tb) != want {
                vote_mismatch += 1;
            }
        }
    }
    fail_if(
        grid_mismatch == 0 && vote_mismatch == 0,
        format!("sequences=200 grid_mismatches={grid_mismatch} histograms=1000 vote_mismatches={vote_mismatch}"),
    )
}

fn error_correction() -> Outcome {
    let t0 = Instant::now();
    let cfg = ProjectionConfig::default();
    let seq = synth::billboard_drive(20, cfg, 2).unwrap();
    let clouds: Vec<PointCloud> = seq.scans.iter().map(|s| s.cloud.clone()).collect();
    let gt: Vec<Vec<ClassId>> = seq.scans.iter().map(|s| s.labels().to_vec()).collect();
    let pred: Vec<Vec<ClassId>> = seq
        .scans
        .iter()
        .map(|s| synth::reprojected_ground_truth(s, &cfg, 0).unwrap())
        .collect();
    let classes = Classes { count: 20, ignore: 0 };
    let miou = |out: &[Vec<ClassId>]| {
        let mut cm = ConfusionMatrix::new(20, Some(0)).unwrap();
        for (g, o) in gt.iter().zip(out) {
            cm.accumulate(g, o).unwrap();
        }
        cm.iou(false).unwrap().miou
    };
    let t_mvp = Instant::now();
    let mvp = refine_sequence(
        Method::Mvp(RefineParams::default()),
        &cfg,
        classes,
        &clouds,
        &pred,
        &seq.poses,
    )
    .unwrap();
    let mvp_time = t_mvp.elapsed();
    let knn = refine_sequence(
        Method::Knn(KnnParams::default()),
        &cfg,
        classes,
        &clouds,
        &pred,
        &seq.poses,
    )
    .unwrap();
    let (mut corrupted, mut fixed) = (0usize, 0usize);
    for f in 0..gt.len() {
        for i in 0..gt[f].len() {
            if pred[f][i] != gt[f][i] {
                corrupted += 1;
                fixed += (mvp[f][i] == gt[f][i]) as usize;
            }
        }
    }
    let rate = fixed as f64 / corrupted.max(1) as f64;
    let (m_none, m_mvp, m_knn) = (miou(&pred), miou(&mvp), miou(&knn));
    let el = t0.elapsed();
    fail_if(
        corrupted > 0 && rate >= 0.5 && m_mvp > m_none && m_mvp > m_knn && el < Duration::from_secs(30),
        format!(
            "corrupted={corrupted} corrected={fixed} rate={rate:.4} miou_none={m_none:.4} miou_mvp={m_mvp:.4} \
             miou_knn={m_knn:.4} mvp_s={:.2} runtime_s={:.2}",
            secs(mvp_time),
            secs(el)
        ),
    )
}

fn baseline_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = ProjectionConfig::new(32, 256, 3.0, -25.0).unwrap();
    let model = SensorModel::new(cfg, 80.0).unwrap();
    let scene = Scene::enclosed_billboard(25.0);
    let palette = [0, 9, 13, 17, 18, 19];
    let (mut knn_bad, mut nla_bad, mut points) = (0, 0, 0);
    for _ in 0..50 {
        let pose = RigidTransform::from_yaw_translation(
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-6.0..6.0),
            rng.gen_range(1.0..2.5),
        );
        let scan = synth::raycast_scan_dense(&scene, &pose, &model, rng.gen_range(1..=3)).unwrap();
        let image = project(&scan.cloud, &cfg).unwrap();
        let point_labels: Vec<ClassId> = (0..scan.cloud.len())
            .map(|_| palette[rng.gen_range(0..palette.len())])
            .collect();
        let labels = image.winner_labels(&point_labels, 0).unwrap();
        let kp = KnnParams {
            k: rng.gen_range(1..=9),
            window: [1, 3, 5, 7][rng.gen_range(0..4)],
            cutoff: rng.gen_range(0.05..2.0),
        };
        let np = NlaParams {
            patch: [1, 3, 5, 7][rng.gen_range(0..4)],
            tau: rng.gen_range(0.05..2.0),
        };
        knn_bad +=
            (knn_refine(&image, &labels, &kp, 0).unwrap() != common::naive_knn(&image, &labels, &kp, 0)) as usize;
        nla_bad +=
            (nla_refine(&image, &labels, &np, 0).unwrap() != common::naive_nla(&image, &labels, &np, 0)) as usize;
        points += scan.cloud.len();
    }
    fail_if(
        knn_bad == 0 && nla_bad == 0,
        format!("frames=50 points={points} knn_mismatched_frames={knn_bad} nla_mismatched_frames={nla_bad}"),
    )
}

fn tca_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let d = 4;
    let params = AttentionParams::seeded(d, None, tca::DEFAULT_SEED);
    let cur = FeatureGrid::random(3, 3, d, &mut rng);
    let prev = FeatureGrid::random(3, 3, d, &mut rng);
    let det = tca::cross_attention_detailed(&cur, &prev, &params).unwrap();
    let row_err = det.weights[0]
        .chunks(det.keys)
        .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);

    let oracle = common::naive_attention(&cur, &prev, &params);
    let mut oracle_err = 0.0f64;
    for (i, want) in oracle.iter().enumerate() {
        for (a, b) in det.output.cell(i).iter().zip(want) {
            oracle_err = oracle_err.max((a - b).abs());
        }
    }

    let mut constant = FeatureGrid::zeros(3, 3, d);
    let fill: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for i in 0..constant.cells() {
        constant.cell_mut(i).copy_from_slice(&fill);
    }
    let v = params.value.apply(&fill);
    let out = tca::cross_attention(&cur, &constant, &params).unwrap();
    let const_err = (0..out.cells())
        .flat_map(|i| {
            out.cell(i)
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b).abs())
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max);

    let mut perm: Vec<usize> = (0..prev.cells()).collect();
    perm.reverse();
    perm.swap(0, 4);
    let mut shuffled = FeatureGrid::zeros(3, 3, d);
    for (dst, &src) in perm.iter().enumerate() {
        shuffled.cell_mut(dst).copy_from_slice(prev.cell(src));
    }
    let a = tca::cross_attention(&cur, &prev, &params).unwrap();
    let b = tca::cross_attention(&cur, &shuffled, &params).unwrap();
    let perm_err = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);

    let zero = AttentionParams::zeros(d, 4 * d);
    let ffn_identity = tca::feed_forward(&cur, &zero.ffn).unwrap() == cur;

    fail_if(
        row_err <= 1e-6 && const_err <= 1e-6 && perm_err <= 1e-6 && ffn_identity && oracle_err <= 1e-6,
        format!(
            "row_sum_err={row_err:e} constant_err={const_err:e} permutation_err={perm_err:e} \
             zero_ffn_identity={ffn_identity} oracle_err={oracle_err:e}"
        ),
    )
}

fn metrics() -> Outcome {
    let mut diag = ConfusionMatrix::new(4, None).unwrap();
    diag.accumulate(&[0, 1, 2, 3, 3], &[0, 1, 2, 3, 3]).unwrap();
    let diag_ok = diag.iou(false).unwrap().miou == 1.0;
    let hand = ConfusionMatrix::from_counts(2, None, vec![3, 1, 1, 3])
        .unwrap()
        .iou(false)
        .unwrap();
    let hand_ok = hand.per_class == vec![Some(0.6), Some(0.6)] && hand.miou == 0.6;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut assoc_ok = true;
    for _ in 0..50 {
        let n = rng.gen_range(0..300);
        let gt: Vec<ClassId> = (0..n).map(|_| rng.gen_range(0..5)).collect();
        let pr: Vec<ClassId> = (0..n).map(|_| rng.gen_range(0..5)).collect();
        let mut cuts = [rng.gen_range(0..=n), rng.gen_range(0..=n)];
        cuts.sort();
        let part = |lo: usize, hi: usize| {
            let mut cm = ConfusionMatrix::new(5, Some(0)).unwrap();
            cm.accumulate(&gt[lo..hi], &pr[lo..hi]).unwrap();
            cm
        };
        let (a, b, c) = (part(0, cuts[0]), part(cuts[0], cuts[1]), part(cuts[1], n));
        let mut left = a.clone();
        left.merge(&b).unwrap();
        left.merge(&c).unwrap();
        let mut bc = b.clone();
        bc.merge(&c).unwrap();
        let mut right = a.clone();
        right.merge(&bc).unwrap();
        assoc_ok &= left == right && left == part(0, n);
    }
    fail_if(
        diag_ok && hand_ok && assoc_ok,
        format!("diagonal={diag_ok} two_class_0.6={hand_ok} merge_associative={assoc_ok}"),
    )
}

fn round_trips() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ProjectionConfig::new(64, 512, 3.0, -25.0).unwrap();
    let seq = synth::billboard_drive(6, cfg, 1).unwrap();
    let map = Dataset::SemanticKitti.label_map();
    let sd = seq.write(dir.path(), "00", &map, false).unwrap();

    let mut bytes_ok = true;
    for f in 0..seq.scans.len() {
        let scan = dataio::read_scan(sd.scan(f)).unwrap();
        let again = dir.path().join(format!("again_{f}.bin"));
        dataio::write_scan(&again, &scan).unwrap();
        bytes_ok &= std::fs::read(sd.scan(f)).unwrap() == std::fs::read(&again).unwrap();
        let labels = dataio::read_labels(sd.labels(f), &map).unwrap();
        bytes_ok &= labels == seq.scans[f].labels();
        let again = dir.path().join(format!("again_{f}.label"));
        dataio::write_labels(&again, &labels, &map).unwrap();
        bytes_ok &= std::fs::read(sd.labels(f)).unwrap() == std::fs::read(&again).unwrap();
    }

    let poses = dataio::read_poses(sd.poses(), sd.calib()).unwrap();
    let chain = relative_chain(&poses);
    let scene = Scene::billboard();
    let mut align_err = 0.0f64;
    for t in 0..seq.scans.len() {
        for j in 0..=t {
            let to_t = compose_chain(&chain, j, t).unwrap();
            let scan = &seq.scans[j];
            for (p, &prim) in scan.cloud.points.iter().zip(&scan.primitive) {
                let world = seq.poses[t].apply(&to_t.apply(p));
                align_err = align_err.max(scene.primitives[prim].shape.surface_distance(&world));
            }
        }
    }
    fail_if(
        bytes_ok && align_err < 1e-6,
        format!("byte_exact={bytes_ok} max_alignment_err_m={align_err:e}"),
    )
}

fn throughput() -> Outcome {
    let cfg = ProjectionConfig::default();
    let model = SensorModel::new(cfg, 80.0).unwrap();
    let traj = synth::drive_by_trajectory(15, -3.5, 0.5, 0.0, synth::DRIVE_HEIGHT);
    let seq = synth::generate_sequence(&Scene::enclosed_billboard(30.0), &traj, &model, 1).unwrap();
    let classes = Classes { count: 20, ignore: 0 };
    let mut refiner = SequenceRefiner::new(Method::Mvp(RefineParams::default()), cfg, classes).unwrap();
    let mut times = Vec::new();
    for (scan, pose) in seq.scans.iter().zip(&seq.poses) {
        let t0 = Instant::now();
        refiner.process(&scan.cloud, scan.labels(), pose).unwrap();
        times.push(t0.elapsed());
    }
    let points = seq.scans[0].cloud.len();
    let mean_ms = times.iter().map(|t| t.as_secs_f64()).sum::<f64>() / times.len() as f64 * 1e3;
    let max_ms = times.iter().max().unwrap().as_secs_f64() * 1e3;
    fail_if(
        mean_ms < 250.0,
        format!(
            "points_per_frame={points} frames={} mean_ms={mean_ms:.1} max_ms={max_ms:.1}",
            times.len()
        ),
    )
}

/// Runs without the libtest harness so the per-criterion lines are always shown.
fn main() {
    let checks: [(&str, Check); 10] = [
        ("pose_chain", pose_chain),
        ("many_to_one_reproduction", many_to_one),
        ("real_occlusion_magnitude", real_occlusion),
        ("mvp_incremental_grid", incremental_grid),
        ("mvp_error_correction", error_correction),
        ("baseline_oracles", baseline_oracles),
        ("tca_invariants", tca_invariants),
        ("metric_correctness", metrics),
        ("format_round_trips", round_trips),
        ("mvp_throughput", throughput),
    ];
    let mut failed = Vec::new();
    for (n, (name, check)) in checks.iter().enumerate() {
        let (tag, detail) = match check() {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed.push(*name);
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {:>2} {name}: {tag} {detail}", n + 1);
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
