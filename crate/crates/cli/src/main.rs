//! `rvseg`: projection statistics, label refinement, evaluation, synthetic
//! data and benchmarks over SemanticKITTI-layout sequences.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error.

/// `println!` that tolerates a closed stdout (e.g. piped into `head`).
macro_rules! emit {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rvseg_core::dataio::{Dataset, LabelMap};
use rvseg_core::refine::{KnnParams, NlaParams, RefineParams, TieBreak};
use rvseg_core::{Error, ProjectionConfig};

#[derive(Parser, Debug)]
#[command(name = "rvseg", version, about = "Range-view LiDAR segmentation post-processing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Project scans to range images and write RNGI dumps.
    Project(ProjectArgs),
    /// Per-frame and aggregate many-to-one occlusion statistics.
    Stats(StatsArgs),
    /// Refine predicted labels with MVP, k-NN or NLA.
    Refine(RefineArgs),
    /// Per-class IoU and mIoU of predicted against ground-truth labels.
    Eval(EvalArgs),
    /// Generate the synthetic billboard sequence.
    Synth(SynthArgs),
    /// Time projection and refinement per frame.
    Bench(BenchArgs),
    /// Run the temporal cross-attention layer and check its invariants.
    TcaDemo(TcaArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Dataset root holding `sequences/`.
    #[arg(long, env = "SEMANTICKITTI_ROOT")]
    root: Option<PathBuf>,
    #[arg(long, default_value = "00")]
    sequence: String,
    /// Half-open frame range `start:end`; either side may be omitted.
    #[arg(long, value_parser = parse_frames)]
    frames: Option<FrameRange>,
    #[arg(long, value_enum, default_value_t = DatasetArg::SemanticKitti)]
    dataset: DatasetArg,
    /// `raw train` label map overriding the dataset's shipped one.
    #[arg(long)]
    label_map: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Copy)]
struct ProjArgs {
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 2048)]
    width: usize,
    /// Degrees.
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    fov_up: f64,
    /// Degrees.
    #[arg(long, default_value_t = -25.0, allow_negative_numbers = true)]
    fov_down: f64,
    /// Skip points outside the vertical field of view instead of clamping them.
    #[arg(long)]
    drop_out_of_fov: bool,
}

impl ProjArgs {
    fn config(&self) -> Result<ProjectionConfig, Error> {
        let mut cfg = ProjectionConfig::new(self.height, self.width, self.fov_up, self.fov_down)?;
        cfg.drop_out_of_fov = self.drop_out_of_fov;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone, Copy)]
struct MethodArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Mvp)]
    method: MethodArg,
    /// MVP voxel edge in meters.
    #[arg(long, default_value_t = 0.10)]
    voxel: f64,
    /// MVP window length in scans.
    #[arg(long, default_value_t = 10)]
    window_scans: usize,
    /// Break MVP vote ties toward the lowest class id instead of keeping the prediction.
    #[arg(long)]
    lowest_id_ties: bool,
    #[arg(long, default_value_t = 5)]
    knn_k: usize,
    #[arg(long, default_value_t = 5)]
    knn_window: usize,
    /// Meters.
    #[arg(long, default_value_t = 1.0)]
    knn_cutoff: f64,
    #[arg(long, default_value_t = 7)]
    nla_patch: usize,
    /// Meters.
    #[arg(long, default_value_t = 1.0)]
    nla_tau: f64,
}

impl MethodArgs {
    fn method(&self) -> rvseg_core::pipeline::Method {
        use rvseg_core::pipeline::Method;
        match self.method {
            MethodArg::None => Method::None,
            MethodArg::Mvp => Method::Mvp(RefineParams {
                voxel: self.voxel,
                window_scans: self.window_scans,
                tie_break: if self.lowest_id_ties {
                    TieBreak::LowestId
                } else {
                    TieBreak::KeepCurrent
                },
            }),
            MethodArg::Knn => Method::Knn(KnnParams {
                k: self.knn_k,
                window: self.knn_window,
                cutoff: self.knn_cutoff,
            }),
            MethodArg::Nla => Method::Nla(NlaParams {
                patch: self.nla_patch,
                tau: self.nla_tau,
            }),
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum MethodArg {
    None,
    Mvp,
    Knn,
    Nla,
}

impl MethodArg {
    fn name(self) -> String {
        self.to_possible_value()
            .expect("no skipped variants")
            .get_name()
            .to_owned()
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum DatasetArg {
    SemanticKitti,
    SemanticPoss,
}

impl DataArgs {
    fn dataset(&self) -> Dataset {
        match self.dataset {
            DatasetArg::SemanticKitti => Dataset::SemanticKitti,
            DatasetArg::SemanticPoss => Dataset::SemanticPoss,
        }
    }

    fn label_map(&self) -> Result<LabelMap, Error> {
        match &self.label_map {
            Some(p) => LabelMap::from_file(p),
            None => Ok(self.dataset().label_map()),
        }
    }

    fn num_classes(&self, map: &LabelMap) -> usize {
        self.dataset().num_classes().max(map.num_classes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct FrameRange {
    start: Option<usize>,
    end: Option<usize>,
}

impl FrameRange {
    fn contains(&self, f: usize) -> bool {
        self.start.is_none_or(|s| f >= s) && self.end.is_none_or(|e| f < e)
    }
}

fn parse_frames(s: &str) -> Result<FrameRange, String> {
    let (a, b) = s.split_once(':').ok_or("expected `start:end`")?;
    let num = |t: &str| -> Result<Option<usize>, String> {
        if t.is_empty() {
            Ok(None)
        } else {
            t.parse().map(Some).map_err(|_| format!("bad frame number `{t}`"))
        }
    };
    let r = FrameRange {
        start: num(a)?,
        end: num(b)?,
    };
    if let (Some(s), Some(e)) = (r.start, r.end) {
        if e <= s {
            return Err(format!("empty frame range {s}:{e}"));
        }
    }
    Ok(r)
}

#[derive(Args, Debug)]
struct ProjectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    proj: ProjArgs,
    /// Directory for `FFFFFF.rngi` dumps.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    proj: ProjArgs,
}

#[derive(Args, Debug)]
struct RefineArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    proj: ProjArgs,
    #[command(flatten)]
    method: MethodArgs,
    /// Sequence subdirectory with the labels to refine.
    #[arg(long, default_value = "predictions")]
    input: String,
    /// Sequence subdirectory for the refined labels.
    #[arg(long, default_value = "refined")]
    output: String,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Ground-truth `.label` directory; defaults to the sequence's `labels/`.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Predicted `.label` directory; defaults to the sequence's `refined/`.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Count classes absent from both ground truth and predictions as IoU 0.
    #[arg(long)]
    include_absent_classes: bool,
    /// Write the key=value report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output dataset root.
    #[arg(long, env = "SEMANTICKITTI_ROOT")]
    root: PathBuf,
    #[arg(long, default_value = "00")]
    sequence: String,
    #[arg(long, default_value_t = 20)]
    num_frames: usize,
    /// Rays per pixel.
    #[arg(long, default_value_t = 2)]
    densify: usize,
    #[command(flatten)]
    proj: ProjArgs,
    /// Also write re-projected ground truth to `predictions/`.
    #[arg(long)]
    predictions: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    proj: ProjArgs,
    #[command(flatten)]
    method: MethodArgs,
    /// Sequence subdirectory with the labels to refine.
    #[arg(long, default_value = "predictions")]
    input: String,
    /// Benchmark on this many generated full-coverage scans instead of a dataset.
    #[arg(long)]
    synthetic: Option<usize>,
}

#[derive(Args, Debug)]
struct TcaArgs {
    #[arg(long, default_value_t = 8)]
    height: usize,
    #[arg(long, default_value_t = 16)]
    width: usize,
    #[arg(long, default_value_t = 4)]
    channels: usize,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    #[arg(long, default_value_t = rvseg_core::tca::DEFAULT_SEED)]
    seed: u64,
}

/// A failure with its exit code.
pub struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_data_error() || matches!(e, Error::UndefinedMean) {
            2
        } else {
            1
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Project(a) => commands::project(&a),
        Command::Stats(a) => commands::stats(&a),
        Command::Refine(a) => commands::refine(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::TcaDemo(a) => commands::tca_demo(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("rvseg: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
