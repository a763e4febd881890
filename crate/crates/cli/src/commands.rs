use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rvseg_core::dataio::{self, frames_in, SequenceDir};
use rvseg_core::eval::ConfusionMatrix;
use rvseg_core::pipeline::{Classes, Method, SequenceRefiner};
use rvseg_core::synth::{self, Scene, SensorModel};
use rvseg_core::tca::{self, AttentionParams, FeatureGrid};
use rvseg_core::{
    occlusion_stats, project as project_cloud, ClassId, Error, OcclusionStats, PointCloud, RigidTransform,
};

use crate::{BenchArgs, DataArgs, EvalArgs, Failure, ProjectArgs, RefineArgs, StatsArgs, SynthArgs, TcaArgs};

type Result<T> = std::result::Result<T, Failure>;

fn sequence_dir(data: &DataArgs) -> Result<SequenceDir> {
    let root = data
        .root
        .as_ref()
        .ok_or_else(|| Failure::usage("no dataset root: pass --root or set SEMANTICKITTI_ROOT"))?;
    Ok(SequenceDir::new(root, &data.sequence))
}

fn select(data: &DataArgs, all: Vec<usize>, what: &Path) -> Result<Vec<usize>> {
    if all.is_empty() {
        return Err(Failure::data(format!("no frames in {}", what.display())));
    }
    let picked: Vec<usize> = match data.frames {
        Some(r) => all.into_iter().filter(|&f| r.contains(f)).collect(),
        None => all,
    };
    if picked.is_empty() {
        return Err(Failure::usage("frame range selects no frames"));
    }
    Ok(picked)
}

fn scan_frames(data: &DataArgs, seq: &SequenceDir) -> Result<Vec<usize>> {
    select(data, seq.frames()?, &seq.dir.join("velodyne"))
}

fn load_cloud(seq: &SequenceDir, frame: usize) -> Result<PointCloud> {
    Ok(dataio::read_scan(seq.scan(frame))?.to_cloud()?)
}

fn print_lines(lines: &[String]) {
    for l in lines {
        emit!("{l}");
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn frame_prefix(f: usize) -> String {
    format!("frame_{f:06}.")
}

pub fn project(a: &ProjectArgs) -> Result<()> {
    let cfg = a.proj.config()?;
    let seq = sequence_dir(&a.data)?;
    let frames = scan_frames(&a.data, &seq)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for f in frames {
        let image = project_cloud(&load_cloud(&seq, f)?, &cfg)?;
        image.write_dump(a.out.join(format!("{f:06}.rngi")))?;
        let p = frame_prefix(f);
        emit!("{p}points={}", image.num_points());
        emit!("{p}valid_pixels={}", image.valid_pixel_count());
    }
    Ok(())
}

pub fn stats(a: &StatsArgs) -> Result<()> {
    let cfg = a.proj.config()?;
    let seq = sequence_dir(&a.data)?;
    let mut total = OcclusionStats::default();
    for f in scan_frames(&a.data, &seq)? {
        let s = occlusion_stats(&project_cloud(&load_cloud(&seq, f)?, &cfg)?);
        print_lines(&s.report_lines(&frame_prefix(f)));
        total = total.merge(&s);
    }
    print_lines(&total.report_lines("total."));
    Ok(())
}

fn classes(data: &DataArgs, map: &dataio::LabelMap) -> Classes {
    Classes {
        count: data.num_classes(map),
        ignore: data.dataset().ignore(),
    }
}

/// Absolute poses indexed by frame number, when the method needs them.
fn poses_for(method: &Method, seq: &SequenceDir, frames_on_disk: usize) -> Result<Option<Vec<RigidTransform>>> {
    if !matches!(method, Method::Mvp(_)) {
        return Ok(None);
    }
    let poses = dataio::read_poses(seq.poses(), seq.calib())?;
    if poses.len() != frames_on_disk {
        return Err(Failure::data(format!(
            "{} has {} poses for {frames_on_disk} scans",
            seq.poses().display(),
            poses.len()
        )));
    }
    Ok(Some(poses))
}

pub fn refine(a: &RefineArgs) -> Result<()> {
    let cfg = a.proj.config()?;
    let map = a.data.label_map()?;
    let seq = sequence_dir(&a.data)?;
    let all = seq.frames()?;
    let method = a.method.method();
    let poses = poses_for(&method, &seq, all.len())?;
    let frames = select(&a.data, all, &seq.dir.join("velodyne"))?;
    let mut refiner = SequenceRefiner::new(method, cfg, classes(&a.data, &map))?;
    let (mut points, mut changed) = (0usize, 0usize);
    let mut busy = Duration::ZERO;
    for &f in &frames {
        let cloud = load_cloud(&seq, f)?;
        let input = dataio::read_labels(seq.labels_in(&a.input, f), &map)?;
        let pose = match &poses {
            Some(p) => *p
                .get(f)
                .ok_or_else(|| Failure::data(format!("no pose for frame {f}")))?,
            None => RigidTransform::identity(),
        };
        let (out, timing) = refiner.process(&cloud, &input, &pose)?;
        busy += timing.total();
        points += out.len();
        changed += out.iter().zip(&input).filter(|(a, b)| a != b).count();
        dataio::write_labels(seq.labels_in(&a.output, f), &out, &map)?;
    }
    emit!("method={}", a.method.method.name());
    emit!("frames={}", frames.len());
    emit!("points={points}");
    emit!("changed_labels={changed}");
    emit!("mean_frame_ms={}", ms(busy) / frames.len() as f64);
    emit!("output={}", seq.dir.join(&a.output).display());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let map = a.data.label_map()?;
    let (gt_dir, pred_dir) = match (&a.gt, &a.pred) {
        (Some(g), Some(p)) => (g.clone(), p.clone()),
        (g, p) => {
            let seq = sequence_dir(&a.data)?;
            (
                g.clone().unwrap_or_else(|| seq.dir.join("labels")),
                p.clone().unwrap_or_else(|| seq.dir.join("refined")),
            )
        }
    };
    let frames = select(&a.data, frames_in(&gt_dir, "label")?, &gt_dir)?;
    let label_file = |dir: &PathBuf, f: usize| dir.join(format!("{f:06}.label"));
    let mut cm = ConfusionMatrix::new(a.data.num_classes(&map), Some(a.data.dataset().ignore()))?;
    for f in frames {
        let gt = dataio::read_labels(label_file(&gt_dir, f), &map)?;
        let pred = dataio::read_labels(label_file(&pred_dir, f), &map)?;
        if gt.len() != pred.len() {
            return Err(Failure::data(format!(
                "frame {f}: {} ground-truth labels vs {} predictions",
                gt.len(),
                pred.len()
            )));
        }
        cm.accumulate(&gt, &pred)?;
    }
    let report = cm.iou(a.include_absent_classes)?;
    emit!("{}", report.table(&a.data.dataset().class_names()).trim_end());
    if let Some(out) = &a.out {
        let mut text = report.key_value_lines().join("\n");
        text.push('\n');
        fs::write(out, text).map_err(|e| Error::io(out, e))?;
    }
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    if a.num_frames == 0 {
        return Err(Failure::usage("--num-frames must be at least 1"));
    }
    let cfg = a.proj.config()?;
    let seq = synth::billboard_drive(a.num_frames, cfg, a.densify)?;
    let map = dataio::Dataset::SemanticKitti.label_map();
    let dir = seq.write(&a.root, &a.sequence, &map, a.predictions)?;
    let points: usize = seq.scans.iter().map(|s| s.cloud.len()).sum();
    let occluded: usize = seq.occluded.iter().map(|o| o.len()).sum();
    emit!("frames={}", seq.scans.len());
    emit!("points={points}");
    emit!("occluded_points={occluded}");
    emit!("path={}", dir.dir.display());
    Ok(())
}

struct BenchFrame {
    cloud: PointCloud,
    labels: Vec<ClassId>,
    pose: RigidTransform,
}

fn synthetic_bench_frames(n: usize, a: &BenchArgs) -> Result<Vec<BenchFrame>> {
    if n == 0 {
        return Err(Failure::usage("--synthetic needs at least one frame"));
    }
    let cfg = a.proj.config()?;
    let model = SensorModel::new(cfg, 80.0)?;
    let trajectory = synth::drive_by_trajectory(n, -0.25 * n as f64, 0.5, 0.0, synth::DRIVE_HEIGHT);
    let seq = synth::generate_sequence(&Scene::enclosed_billboard(30.0), &trajectory, &model, 1)?;
    Ok(seq
        .scans
        .into_iter()
        .zip(seq.poses)
        .map(|(s, pose)| {
            let labels = s.labels().to_vec();
            BenchFrame {
                cloud: s.cloud,
                labels,
                pose,
            }
        })
        .collect())
}

fn dataset_bench_frames(a: &BenchArgs, method: &Method) -> Result<Vec<BenchFrame>> {
    let map = a.data.label_map()?;
    let seq = sequence_dir(&a.data)?;
    let all = seq.frames()?;
    let poses = poses_for(method, &seq, all.len())?;
    select(&a.data, all, &seq.dir.join("velodyne"))?
        .into_iter()
        .map(|f| {
            Ok(BenchFrame {
                cloud: load_cloud(&seq, f)?,
                labels: dataio::read_labels(seq.labels_in(&a.input, f), &map)?,
                pose: poses.as_ref().map_or(RigidTransform::identity(), |p| p[f]),
            })
        })
        .collect()
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let cfg = a.proj.config()?;
    let method = a.method.method();
    let (frames, classes) = match a.synthetic {
        Some(n) => (synthetic_bench_frames(n, a)?, Classes { count: 20, ignore: 0 }),
        None => {
            let map = a.data.label_map()?;
            (dataset_bench_frames(a, &method)?, classes(&a.data, &map))
        }
    };
    let mut refiner = SequenceRefiner::new(method, cfg, classes)?;
    let (mut proj, mut refine, mut total_max, mut refine_max) =
        (Duration::ZERO, Duration::ZERO, Duration::ZERO, Duration::ZERO);
    for fr in &frames {
        let t0 = Instant::now();
        std::hint::black_box(project_cloud(&fr.cloud, &cfg)?);
        let p = t0.elapsed();
        let t1 = Instant::now();
        refiner.process(&fr.cloud, &fr.labels, &fr.pose)?;
        let r = t1.elapsed();
        proj += p;
        refine += r;
        refine_max = refine_max.max(r);
        total_max = total_max.max(p + r);
    }
    let n = frames.len() as f64;
    let points: usize = frames.iter().map(|f| f.cloud.len()).sum();
    emit!("method={}", a.method.method.name());
    emit!("frames={}", frames.len());
    emit!("points_per_frame={}", points as f64 / n);
    emit!("project_ms={}", ms(proj) / n);
    emit!("refine_ms={}", ms(refine) / n);
    emit!("total_ms={}", ms(proj + refine) / n);
    emit!("refine_ms_max={}", ms(refine_max));
    emit!("total_ms_max={}", ms(total_max));
    Ok(())
}

pub fn tca_demo(a: &TcaArgs) -> Result<()> {
    let mut params = AttentionParams::seeded(a.channels, None, a.seed);
    params.heads = a.heads;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let current = FeatureGrid::random(a.height, a.width, a.channels, &mut rng);
    let previous = FeatureGrid::random(a.height, a.width, a.channels, &mut rng);
    let detailed = tca::cross_attention_detailed(&current, &previous, &params)?;

    let row_err = detailed
        .weights
        .iter()
        .flat_map(|h| h.chunks(detailed.keys))
        .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);

    let mut constant = previous.clone();
    let first = previous.cell(0).to_vec();
    for i in 0..constant.cells() {
        constant.cell_mut(i).copy_from_slice(&first);
    }
    let v = params.value.apply(&first);
    let attended = tca::cross_attention(&current, &constant, &params)?;
    let const_err = (0..attended.cells())
        .flat_map(|i| {
            attended
                .cell(i)
                .iter()
                .zip(&v)
                .map(|(x, y)| (x - y).abs())
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max);

    let mut reversed = previous.clone();
    let n = previous.cells();
    for i in 0..n {
        reversed.cell_mut(i).copy_from_slice(previous.cell(n - 1 - i));
    }
    let b = tca::cross_attention(&current, &reversed, &params)?;
    let perm_err = detailed
        .output
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);

    let zero = AttentionParams::zeros(a.channels, 4 * a.channels);
    let identity = tca::feed_forward(&current, &zero.ffn)? == current;
    let fused = tca::temporal_fusion(&current, &previous, &params)?;
    let mean_abs = fused.data.iter().map(|x| x.abs()).sum::<f64>() / fused.data.len() as f64;

    let ok = row_err <= 1e-6 && const_err <= 1e-6 && perm_err <= 1e-6 && identity;
    emit!("cells={}", current.cells());
    emit!("channels={}", a.channels);
    emit!("heads={}", a.heads);
    emit!("row_sum_max_err={row_err:e}");
    emit!("constant_value_max_err={const_err:e}");
    emit!("permutation_max_err={perm_err:e}");
    emit!("zero_ffn_identity={identity}");
    emit!("fused_mean_abs={mean_abs}");
    emit!("invariants_hold={ok}");
    if ok {
        Ok(())
    } else {
        Err(Failure::data("attention invariants violated"))
    }
}
