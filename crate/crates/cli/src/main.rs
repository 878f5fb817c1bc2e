//! `rotokin` command-line tool.
//!
//! Every command reads and writes the library's file formats: tree JSON,
//! pose-sequence JSONL and JSON/TOML config files. Failures print one JSON
//! error record on stderr and exit with a nonzero status.

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use rotokin::bench::{run_bench, BenchConfig, BenchMode};
use rotokin::ik::{generate_pseudo_labels, solve_sequence, IkConfig, PSEUDO_LABEL_PROVENANCE};
use rotokin::io as rio;
use rotokin::kinematics::{
    forward_kinematics, BodyShape, Flip, KinematicTree, Pose3D, PoseSequence, WeakPerspective,
};
use rotokin::metrics::{MetricAccumulator, RotationFrame, SubsetPreset};
use rotokin::so3::{LossKind, Representation};
use rotokin::testbed::{
    generate_synthetic, run_grid, standard_grid, train_regressor, Head, Regressor,
    RegressorConfig, SyntheticSpec,
};
use rotokin::Error;

#[derive(Parser)]
#[command(name = "rotokin", version, about = "Rotations, kinematics and pose metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Re-encode the rotations of a sequence in another representation.
    Convert {
        #[command(flatten)]
        io: SeqIo,
        #[arg(long, alias = "representation")]
        to: Representation,
    },
    /// Fill in joint positions from joint rotations.
    Fk {
        #[command(flatten)]
        io: SeqIo,
        #[command(flatten)]
        body: Body,
        /// Output rotation encoding; defaults to the input's.
        #[arg(long)]
        representation: Option<Representation>,
    },
    /// Fill in 2D keypoints by weak-perspective projection of the 3D joints.
    Project {
        #[command(flatten)]
        io: SeqIo,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, num_args = 2, value_names = ["X", "Y"], allow_negative_numbers = true)]
        offset: Option<Vec<f64>>,
        #[arg(long)]
        representation: Option<Representation>,
    },
    /// Mirror a sequence horizontally.
    Flip {
        #[command(flatten)]
        io: SeqIo,
        #[arg(long)]
        tree: Option<String>,
        #[arg(long)]
        representation: Option<Representation>,
    },
    /// Fit joint rotations to the 3D joints of one sequence.
    Ik {
        #[command(flatten)]
        io: SeqIo,
        #[command(flatten)]
        body: Body,
        #[command(flatten)]
        solver: Solver,
        #[arg(long, default_value = "matrix")]
        representation: Representation,
    },
    /// Generate IK rotation labels for a whole dataset.
    PseudoLabel {
        /// JSONL files or directories of them.
        #[arg(long = "in", required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// Output directory; files keep their names.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        body: Body,
        #[command(flatten)]
        solver: Solver,
        #[arg(long, default_value = "matrix")]
        representation: Representation,
    },
    /// MPJPE and MPJAE of a prediction against ground truth.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        tree: Option<String>,
        #[arg(long, value_enum)]
        subset: Option<SubsetArg>,
        /// Joint indices for `--subset custom`, comma separated.
        #[arg(long, value_delimiter = ',')]
        joints: Vec<usize>,
        /// Compare world rotations instead of parent-relative ones.
        #[arg(long)]
        global: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset, one JSONL file per sequence.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        sequences: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "matrix")]
        representation: Representation,
    },
    /// Train one regressor and report its metrics.
    Train {
        #[command(flatten)]
        data: TrainData,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Train the 12-cell representation × loss × WBA grid.
    Grid {
        #[command(flatten)]
        data: TrainData,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Time warm IK, cold IK and direct regression per frame.
    Bench {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        body: Body,
        #[arg(long, value_delimiter = ',')]
        modes: Vec<BenchMode>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long, default_value = "matrix")]
        representation: Representation,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        solver: Solver,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SeqIo {
    #[arg(long = "in")]
    input: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Body {
    /// Tree JSON file or preset name (`body22`, `body26`).
    #[arg(long)]
    tree: Option<String>,
    /// JSON file with `bone_scales`.
    #[arg(long)]
    shape: Option<PathBuf>,
}

#[derive(Args)]
struct Solver {
    /// IK config file (JSON or TOML); flags override it.
    #[arg(long = "ik-config")]
    ik_config: Option<PathBuf>,
    #[arg(long)]
    prior_weight: Option<f64>,
    #[arg(long)]
    warm_start: Option<bool>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    optimize_scales: bool,
}

#[derive(Args)]
struct TrainData {
    #[arg(long, required = true, num_args = 1..)]
    train: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    val: Vec<PathBuf>,
    #[arg(long)]
    tree: Option<String>,
    /// Report JSON destination.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    /// Regressor config file (JSON or TOML); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    representation: Option<Representation>,
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    wba: bool,
    #[arg(long, value_enum)]
    head: Option<HeadArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SubsetArg {
    Body22,
    Body26,
    Custom,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadArg {
    Naive,
    Fk,
}

fn load_tree(arg: Option<&str>) -> rotokin::Result<KinematicTree> {
    let name = arg.unwrap_or("body22");
    match KinematicTree::preset(name) {
        Some(tree) => Ok(tree),
        None => rio::read_tree(Path::new(name)),
    }
}

impl Body {
    fn load(&self) -> rotokin::Result<(KinematicTree, BodyShape)> {
        let tree = load_tree(self.tree.as_deref())?;
        let shape = match &self.shape {
            Some(p) => {
                let s: BodyShape = rio::read_config(p)?;
                BodyShape::new(s.bone_scales)?
            }
            None => BodyShape::uniform(tree.len()),
        };
        shape.check(&tree)?;
        Ok((tree, shape))
    }
}

impl Solver {
    fn config(&self) -> rotokin::Result<IkConfig> {
        let mut cfg: IkConfig = match &self.ik_config {
            Some(p) => rio::read_config(p)?,
            None => IkConfig::default(),
        };
        if let Some(w) = self.prior_weight {
            cfg.prior_weight = w;
        }
        if let Some(w) = self.warm_start {
            cfg.warm_start = w;
        }
        if let Some(n) = self.max_iterations {
            cfg.max_iterations = n;
        }
        cfg.optimize_scales |= self.optimize_scales;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ModelArgs {
    fn config(&self) -> rotokin::Result<RegressorConfig> {
        let mut cfg: RegressorConfig = match &self.config {
            Some(p) => rio::read_config(p)?,
            None => RegressorConfig::default(),
        };
        if let Some(r) = self.representation {
            cfg.representation = r;
        }
        if let Some(l) = self.loss {
            cfg.loss = l;
        }
        cfg.wba |= self.wba;
        if let Some(h) = self.head {
            cfg.head = match h {
                HeadArg::Naive => Head::Naive,
                HeadArg::Fk => Head::Fk,
            };
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(lr) = self.learning_rate {
            cfg.learning_rate = lr;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads a sequence together with the encoding its outputs should use:
/// the requested one, else the input's own, else matrices.
fn read_with_representation(
    path: &Path,
    requested: Option<Representation>,
) -> rotokin::Result<(PoseSequence, Representation)> {
    let (seq, tag) = rio::read_sequence_tagged(BufReader::new(rio::open_file(path)?))?;
    Ok((seq, requested.or(tag).unwrap_or(Representation::Matrix)))
}

/// Prints to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> rotokin::Result<()> {
    let mut out = io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn emit_json(value: &impl serde::Serialize, pretty: bool) -> rotokin::Result<()> {
    let mut text = rio::to_json_string(value, pretty)?;
    text.push('\n');
    emit(&text)
}

fn write_seq(out: Option<&Path>, seq: &PoseSequence, repr: Representation) -> rotokin::Result<()> {
    match out {
        Some(p) => rio::write_sequence_file(p, seq, repr),
        None => match rio::write_sequence(io::stdout().lock(), seq, repr) {
            Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
            other => other,
        },
    }
}

fn write_report(out: Option<&Path>, value: &impl serde::Serialize) -> rotokin::Result<()> {
    if let Some(p) = out {
        let mut text = rio::to_json_string(value, true)?;
        text.push('\n');
        fs::write(p, text).map_err(rio::located(p))?;
    }
    Ok(())
}

fn needs_pose3d(seq: &PoseSequence, what: &str) -> rotokin::Result<Vec<Pose3D>> {
    seq.frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            f.pose3d
                .clone()
                .ok_or_else(|| Error::InvalidSequence(format!("{what}: frame {i} has no pose3d")))
        })
        .collect()
}

fn check_joints(tree: &KinematicTree, seq: &PoseSequence) -> rotokin::Result<()> {
    seq.validate(Some(tree.len()))
}

fn run(cli: Cli) -> rotokin::Result<()> {
    match cli.command {
        Command::Convert { io, to } => {
            let seq = rio::read_sequence_file(&io.input)?;
            write_seq(io.out.as_deref(), &seq, to)
        }
        Command::Fk {
            io,
            body,
            representation,
        } => {
            let (tree, shape) = body.load()?;
            let (mut seq, repr) = read_with_representation(&io.input, representation)?;
            check_joints(&tree, &seq)?;
            for (i, frame) in seq.frames.iter_mut().enumerate() {
                let rotations = frame.rotations.as_ref().ok_or_else(|| {
                    Error::InvalidSequence(format!("fk: frame {i} has no rotations"))
                })?;
                frame.pose3d = Some(forward_kinematics(&tree, &shape, rotations)?.positions);
            }
            write_seq(io.out.as_deref(), &seq, repr)
        }
        Command::Project {
            io,
            scale,
            offset,
            representation,
        } => {
            let (mut seq, repr) = read_with_representation(&io.input, representation)?;
            let offset = offset.map_or([0.0, 0.0], |o| [o[0], o[1]]);
            let camera = WeakPerspective::new(scale, offset);
            let poses = needs_pose3d(&seq, "project")?;
            for (frame, pose) in seq.frames.iter_mut().zip(&poses) {
                frame.pose2d = camera.project(pose);
            }
            write_seq(io.out.as_deref(), &seq, repr)
        }
        Command::Flip {
            io,
            tree,
            representation,
        } => {
            let tree = load_tree(tree.as_deref())?;
            let (seq, repr) = read_with_representation(&io.input, representation)?;
            check_joints(&tree, &seq)?;
            write_seq(io.out.as_deref(), &seq.flipped(&tree), repr)
        }
        Command::Ik {
            io,
            body,
            solver,
            representation,
        } => {
            let (tree, shape) = body.load()?;
            let cfg = solver.config()?;
            let mut seq = rio::read_sequence_file(&io.input)?;
            check_joints(&tree, &seq)?;
            let targets = needs_pose3d(&seq, "ik")?;
            let results = solve_sequence(&tree, &shape, &targets, &cfg)?;
            for (frame, res) in seq.frames.iter_mut().zip(&results) {
                frame.rotations = Some(res.pose.rotations.clone());
                frame.provenance = Some(PSEUDO_LABEL_PROVENANCE.to_string());
                frame.ik = Some(res.frame_info());
            }
            write_seq(io.out.as_deref(), &seq, representation)?;
            if io.out.is_some() {
                let n = results.len().max(1) as f64;
                let summary = json!({
                    "frames": results.len(),
                    "converged": results.iter().filter(|r| r.converged).count(),
                    "mean_residual_mm": results.iter().map(|r| r.final_residual_mm).sum::<f64>() / n,
                    "mean_iterations": results.iter().map(|r| r.iterations_used as f64).sum::<f64>() / n,
                });
                emit_json(&summary, false)?;
            }
            Ok(())
        }
        Command::PseudoLabel {
            input,
            out,
            body,
            solver,
            representation,
        } => {
            let (tree, shape) = body.load()?;
            let cfg = solver.config()?;
            let files = rio::dataset_files(&input)?;
            let sequences = files
                .iter()
                .map(|f| rio::read_sequence_file(f))
                .collect::<rotokin::Result<Vec<_>>>()?;
            for s in &sequences {
                check_joints(&tree, s)?;
            }
            let labelled = generate_pseudo_labels(&tree, &shape, &sequences, &cfg)?;
            fs::create_dir_all(&out).map_err(rio::located(&out))?;
            let (mut frames, mut converged) = (0usize, 0usize);
            for (file, seq) in files.iter().zip(&labelled) {
                let name = file
                    .file_name()
                    .ok_or_else(|| Error::InvalidConfig(format!("bad input path {}", file.display())))?;
                rio::write_sequence_file(&out.join(name), seq, representation)?;
                frames += seq.len();
                converged += seq
                    .frames
                    .iter()
                    .filter(|f| f.ik.is_some_and(|i| i.converged))
                    .count();
            }
            let summary = json!({"sequences": labelled.len(), "frames": frames, "converged": converged});
            emit_json(&summary, false)?;
            Ok(())
        }
        Command::Metrics {
            pred,
            gt,
            tree,
            subset,
            joints,
            global,
            out,
        } => {
            let tree = load_tree(tree.as_deref())?;
            let subset = match subset {
                None => (0..tree.len()).collect(),
                Some(SubsetArg::Body22) => SubsetPreset::Body22.indices(&tree)?,
                Some(SubsetArg::Body26) => SubsetPreset::Body26.indices(&tree)?,
                Some(SubsetArg::Custom) => joints,
            };
            let pred = rio::read_sequence_file(&pred)?;
            let gt = rio::read_sequence_file(&gt)?;
            check_joints(&tree, &pred)?;
            check_joints(&tree, &gt)?;
            if pred.len() != gt.len() {
                return Err(Error::LengthMismatch {
                    what: "frames",
                    expected: gt.len(),
                    found: pred.len(),
                });
            }
            let frame = if global {
                RotationFrame::Global
            } else {
                RotationFrame::ParentRelative
            };
            let mut acc = MetricAccumulator::new(subset, frame)?;
            for (p, g) in pred.frames.iter().zip(&gt.frames) {
                if let (Some(a), Some(b)) = (&p.pose3d, &g.pose3d) {
                    acc.add_positions(a, b)?;
                }
                if let (Some(a), Some(b)) = (&p.rotations, &g.rotations) {
                    acc.add_rotations(&tree, a, b)?;
                }
                acc.end_frame();
            }
            let report = acc.finish();
            emit_json(&report, true)?;
            write_report(out.as_deref(), &report)
        }
        Command::Synth {
            config,
            seed,
            sequences,
            frames,
            noise,
            out,
            representation,
        } => {
            let mut spec: SyntheticSpec = match &config {
                Some(p) => rio::read_config(p)?,
                None => SyntheticSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            if let Some(n) = sequences {
                spec.num_sequences = n;
            }
            if let Some(n) = frames {
                spec.frames_per_sequence = n;
            }
            if let Some(n) = noise {
                spec.noise_std_2d = n;
            }
            let data = generate_synthetic(&spec)?;
            let paths = rio::write_dataset(&out, &data, representation)?;
            let summary = json!({"sequences": paths.len(), "frames": data.iter().map(PoseSequence::len).sum::<usize>()});
            emit_json(&summary, false)?;
            Ok(())
        }
        Command::Train { data, model } => {
            let tree = load_tree(data.tree.as_deref())?;
            let cfg = model.config()?;
            let train = rio::read_dataset(&data.train)?;
            let val = rio::read_dataset(&data.val)?;
            let report = train_regressor(&tree, &train, &val, &cfg)?;
            emit(&rotokin::metrics::format_table(&[report.table_row()]))?;
            write_report(data.out.as_deref(), &report)
        }
        Command::Grid { data, model } => {
            let tree = load_tree(data.tree.as_deref())?;
            let base = model.config()?;
            let train = rio::read_dataset(&data.train)?;
            let val = rio::read_dataset(&data.val)?;
            let report = run_grid(&tree, &train, &val, &standard_grid(&base))?;
            emit(&report.table())?;
            write_report(data.out.as_deref(), &report)
        }
        Command::Bench {
            input,
            body,
            modes,
            samples,
            warmup,
            representation,
            seed,
            solver,
            out,
        } => {
            let (tree, shape) = body.load()?;
            let seq = rio::read_sequence_file(&input)?;
            check_joints(&tree, &seq)?;
            let mut cfg = BenchConfig {
                ik: solver.config()?,
                ..BenchConfig::default()
            };
            if !modes.is_empty() {
                cfg.modes = modes;
            }
            if let Some(n) = samples {
                cfg.min_samples = n;
            }
            if let Some(n) = warmup {
                cfg.warmup = n;
            }
            let hidden = RegressorConfig::default().hidden_width;
            let model = Regressor::new(&tree, representation, Head::Naive, hidden, seed);
            let report = run_bench(&tree, &shape, &seq, &model, &cfg)?;
            emit(&report.table())?;
            write_report(out.as_deref(), &report)
        }
    }
}

fn configure_threads() -> rotokin::Result<()> {
    let Ok(value) = std::env::var("ROTOKIN_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidConfig(format!("ROTOKIN_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidConfig(e.to_string()))
}

fn error_record(kind: &str, err: &dyn std::fmt::Display, extra: Option<(usize, &str)>) -> String {
    let mut record = json!({"error": kind, "message": err.to_string()});
    if let Some((line, path)) = extra {
        record["line"] = json!(line);
        record["path"] = json!(path);
    }
    record.to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            eprintln!("{}", error_record("usage", &message.trim_end(), None));
            return ExitCode::from(2);
        }
    };
    match configure_threads().and_then(|()| run(cli)) {
        Ok(()) => {
            let _ = io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            let extra = match &e {
                Error::Parse { line, path, .. } => Some((*line, path.as_str())),
                _ => None,
            };
            eprintln!("{}", error_record(e.kind(), &e, extra));
            ExitCode::FAILURE
        }
    }
}

