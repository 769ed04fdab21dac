use std::error::Error;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use quadwatch::classify::{load_weights, save_weights, train, NetConfig, ToyNet, TrainConfig};
use quadwatch::detect::DetectParams;
use quadwatch::eval::{run_experiment, EvalReport};
use quadwatch::imgcore::{encode_pgm, load_image, save_image, GrayImage, QuadFrame};
use quadwatch::pipeline::{
    benchmark, load_frames, open_source, run_pipeline, with_threads, CsvSink, FramesSink, Mode, Session, Settings,
    Sink, SocketSink,
};
use quadwatch::roi::{default_config, load_roi_config, RoiConfig};
use quadwatch::synth::{
    random_scenario, render, shape_dataset, stop_and_hold_scenario, write_scenario, GroundTruth, ScenarioSpec,
    SHAPE_CLASSES,
};
use quadwatch::track::{TrackParams, TRANSITION_CSV_HEADER};

type Res<T> = Result<T, Box<dyn Error>>;
type Dataset = (Vec<String>, Vec<(GrayImage, usize)>);

#[derive(Parser)]
#[command(name = "quadwatch", version, about = "Quad-view moving-object detection and ROI classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Process a frame sequence and emit per-frame verdicts.
    Run(RunArgs),
    /// Time each pipeline stage over a sequence.
    Bench(BenchArgs),
    /// Score a mode against a ground-truth CSV.
    Eval(EvalArgs),
    /// Synthetic scenes and datasets.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Train the ROI classifier on a `label_name/*.pgm` directory.
    Train(TrainArgs),
    /// ROI layout helpers.
    #[command(subcommand)]
    Roi(RoiCommand),
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMode {
    Detect,
    DetectTrack,
    Classify,
    Full,
}

impl From<CliMode> for Mode {
    fn from(m: CliMode) -> Mode {
        match m {
            CliMode::Detect => Mode::DetectOnly,
            CliMode::DetectTrack => Mode::DetectTrack,
            CliMode::Classify => Mode::ClassifyOnly,
            CliMode::Full => Mode::Full,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct Common {
    /// Directory of PGM/PPM frames (sorted by name) or a .y4m file.
    #[arg(long)]
    input: PathBuf,
    /// ROI layout JSON; defaults to the built-in layout for the frame size.
    #[arg(long)]
    roi: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "detect-track")]
    mode: CliMode,
    /// Classifier weights (TNW1); required by classify and full modes.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Override the mode's tracking default.
    #[arg(long, value_enum)]
    tracking: Option<Switch>,
    #[command(flatten)]
    detect: DetectArgs,
    #[command(flatten)]
    track: TrackArgs,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long, default_value_t = 25)]
    diff_threshold: u8,
    #[arg(long, default_value_t = 2)]
    mask_dilation_radius: usize,
    #[arg(long, default_value_t = 20)]
    fast_threshold: u8,
    #[arg(long, default_value_t = 50)]
    max_features_per_roi: usize,
    #[arg(long, default_value_t = 21)]
    lk_window: usize,
    #[arg(long, default_value_t = 3)]
    lk_levels: usize,
    #[arg(long, default_value_t = 30)]
    lk_max_iters: usize,
    #[arg(long, default_value_t = 0.01)]
    lk_epsilon: f32,
    #[arg(long, default_value_t = 1e-4)]
    lk_min_eigen: f32,
    #[arg(long, default_value_t = 20.0)]
    lk_max_residual: f32,
    #[arg(long, default_value_t = 6.0)]
    motion_threshold: f64,
    #[arg(long, default_value_t = 3)]
    min_features: usize,
    /// Threshold the mean displacement instead of the vector sum.
    #[arg(long)]
    motion_normalize: bool,
}

impl DetectArgs {
    fn params(&self) -> DetectParams {
        DetectParams {
            diff_threshold: self.diff_threshold,
            mask_dilation_radius: self.mask_dilation_radius,
            fast_threshold: self.fast_threshold,
            max_features_per_roi: self.max_features_per_roi,
            lk_window: self.lk_window,
            lk_levels: self.lk_levels,
            lk_max_iters: self.lk_max_iters,
            lk_epsilon: self.lk_epsilon,
            lk_min_eigen: self.lk_min_eigen,
            lk_max_residual: self.lk_max_residual,
            motion_threshold: self.motion_threshold,
            min_features: self.min_features,
            motion_normalize: self.motion_normalize,
            ..DetectParams::default()
        }
    }
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long, default_value_t = 1.5)]
    latch_motion_max: f64,
    #[arg(long, default_value_t = 0.5)]
    latch_min_survivors: f64,
    #[arg(long, default_value_t = 1.0)]
    fb_error_max: f32,
    /// Never re-verify a latched ROI; it clears only when motion resumes.
    #[arg(long)]
    latch_strict_paper: bool,
}

impl TrackArgs {
    fn params(&self) -> TrackParams {
        TrackParams {
            latch_motion_max: self.latch_motion_max,
            latch_min_survivors: self.latch_min_survivors,
            fb_error_max: self.fb_error_max,
            strict_latch: self.latch_strict_paper,
        }
    }
}

impl Common {
    fn settings(&self) -> Settings {
        let mut s = Settings::new(self.mode.into());
        if let Some(t) = self.tracking {
            s.tracking = matches!(t, Switch::On);
        }
        s.detect = self.detect.params();
        s.track = self.track.params();
        s
    }

    fn net(&self) -> Res<Option<ToyNet>> {
        let mode = Mode::from(self.mode);
        match (&self.weights, mode.classifies()) {
            (Some(p), true) => Ok(Some(load_weights(p)?)),
            (None, true) => Err(format!("mode {} needs --weights", mode.name()).into()),
            _ => Ok(None),
        }
    }

    fn config_for(&self, width: usize, height: usize) -> Res<RoiConfig> {
        let config = match &self.roi {
            Some(p) => load_roi_config(p)?,
            None => default_config(width, height)?,
        };
        if (config.frame_width(), config.frame_height()) != (width, height) {
            return Err(format!(
                "roi layout is for {}x{}, frames are {width}x{height}",
                config.frame_width(),
                config.frame_height()
            )
            .into());
        }
        Ok(config)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// `csv` (stdout), `csv:<file>`, `socket://host:port` or `frames:<dir>`; repeatable.
    #[arg(long, default_value = "csv")]
    emit: Vec<String>,
    /// Write each frame's motion mask as mask_NNNNN.pgm into this directory.
    #[arg(long)]
    dump_mask: Option<PathBuf>,
    /// Write every LK track as CSV.
    #[arg(long)]
    dump_tracks: Option<PathBuf>,
    /// Write ROI state transitions as CSV.
    #[arg(long)]
    log_transitions: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Ground truth CSV (`frame,roi,class,moving`).
    #[arg(long)]
    truth: PathBuf,
    /// Also write the report row as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Render a scenario JSON to numbered PGMs plus truth.csv.
    Render {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a built-in scenario as JSON.
    Scenario {
        #[arg(long, value_enum, default_value = "stop-and-hold")]
        kind: ScenarioKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 60)]
        frames: usize,
    },
    /// Write the labelled shape dataset as `label/NNNNN.pgm`.
    Dataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        per_class: usize,
        #[arg(long, default_value_t = 32)]
        side: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioKind {
    StopAndHold,
    Random,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory with one subdirectory of PGMs per class.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0.02)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Every n-th sample is held out for validation; 0 disables.
    #[arg(long, default_value_t = 5)]
    holdout_every: usize,
    #[arg(long, default_value = "net.tnw")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum RoiCommand {
    /// Print the built-in 12-ROI layout as JSON.
    Default {
        #[arg(long, default_value_t = 1280)]
        width: usize,
        #[arg(long, default_value_t = 720)]
        height: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(c) => cmd_synth(c),
        Command::Train(a) => cmd_train(a),
        Command::Roi(RoiCommand::Default { width, height }) => {
            default_config(width, height).map(|c| println!("{}", c.to_json())).map_err(Into::into)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn open_sinks(emit: &[String], config: &RoiConfig, names: &[String]) -> Res<Vec<Box<dyn Sink>>> {
    let mut sinks: Vec<Box<dyn Sink>> = Vec::new();
    for e in emit {
        if e == "csv" {
            sinks.push(Box::new(CsvSink::new(BufWriter::new(io::stdout()), names.to_vec())?));
        } else if let Some(path) = e.strip_prefix("csv:") {
            sinks.push(Box::new(CsvSink::new(BufWriter::new(fs::File::create(path)?), names.to_vec())?));
        } else if let Some(addr) = e.strip_prefix("socket://") {
            sinks.push(Box::new(SocketSink::connect(addr)?));
        } else if let Some(dir) = e.strip_prefix("frames:") {
            sinks.push(Box::new(FramesSink::new(dir, config.clone(), names.to_vec())?));
        } else {
            return Err(format!("unknown --emit target `{e}`").into());
        }
    }
    Ok(sinks)
}

fn cmd_run(a: RunArgs) -> Res<()> {
    let mut source = open_source(&a.common.input)?.peekable();
    let (w, h) = match source.peek() {
        Some(Ok(f)) => (f.image.width(), f.image.height()),
        Some(Err(_)) => return Err(source.next().unwrap().unwrap_err().into()),
        None => return Err("input has no frames".into()),
    };
    let config = a.common.config_for(w, h)?;
    let mut session = Session::new(config.clone(), a.common.settings(), a.common.net()?)?;
    let names = session.class_names();
    let mut sinks = open_sinks(&a.emit, &config, &names)?;

    if let Some(d) = &a.dump_mask {
        fs::create_dir_all(d)?;
    }
    let mut tracks_out = match &a.dump_tracks {
        Some(p) => {
            let mut f = BufWriter::new(fs::File::create(p)?);
            writeln!(f, "frame,roi,x0,y0,x1,y1,status,residual")?;
            Some(f)
        }
        None => None,
    };
    let mut transitions_out = match &a.log_transitions {
        Some(p) => {
            let mut f = BufWriter::new(fs::File::create(p)?);
            writeln!(f, "{TRANSITION_CSV_HEADER}")?;
            Some(f)
        }
        None => None,
    };

    let summary = with_threads(a.threads, || {
        run_pipeline(source, &mut session, &mut sinks, |frame, step| {
            let k = frame.frame_index;
            if let (Some(dir), Some(mask)) = (&a.dump_mask, &step.mask) {
                save_image(&mask.to_image(), dir.join(format!("mask_{k:05}.pgm")))?;
            }
            if let Some(f) = tracks_out.as_mut() {
                for t in &step.tracks {
                    let roi = config.locate(t.origin.x, t.origin.y).map(|r| r.to_string()).unwrap_or_default();
                    writeln!(
                        f,
                        "{k},{roi},{:.3},{:.3},{:.3},{:.3},{},{:.4}",
                        t.origin.x,
                        t.origin.y,
                        t.tracked_x,
                        t.tracked_y,
                        t.status.as_str(),
                        t.residual
                    )?;
                }
            }
            if let Some(f) = transitions_out.as_mut() {
                for t in &step.transitions {
                    writeln!(f, "{}", t.csv_row())?;
                }
            }
            Ok(())
        })
    })?;
    if let Some(mut f) = tracks_out {
        f.flush()?;
    }
    if let Some(mut f) = transitions_out {
        f.flush()?;
    }
    eprintln!(
        "{} frames, {} verdicts, {} classifier passes, {:.1} fps",
        summary.frames,
        summary.verdicts,
        summary.forward_passes,
        summary.verdicts as f64 / summary.processing.as_secs_f64().max(1e-12)
    );
    Ok(())
}

fn load_all(common: &Common) -> Res<(Vec<QuadFrame>, RoiConfig)> {
    let frames = load_frames(&common.input)?;
    let first = frames.first().ok_or("input has no frames")?;
    let config = common.config_for(first.image.width(), first.image.height())?;
    Ok((frames, config))
}

fn cmd_bench(a: BenchArgs) -> Res<()> {
    let (frames, config) = load_all(&a.common)?;
    if frames.len() < 30 {
        return Err(format!("benchmark needs at least 30 frames, got {}", frames.len()).into());
    }
    let mut session = Session::new(config, a.common.settings(), a.common.net()?)?;
    let report = with_threads(a.threads, || benchmark(&frames, &mut session))?;
    println!("mode {}  threads {}", Mode::from(a.common.mode).name(), a.threads);
    println!("{report}");
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Res<()> {
    let (frames, config) = load_all(&a.common)?;
    let truth = GroundTruth::from_csv(&fs::read_to_string(&a.truth)?, frames.len())?;
    let net = a.common.net()?;
    let settings = a.common.settings();
    let (report, _) = with_threads(a.threads, || run_experiment(&frames, &truth, &config, &settings, net.as_ref()))?;
    println!("{report}");
    if let Some(p) = &a.csv {
        fs::write(p, format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row()))?;
    }
    Ok(())
}

fn cmd_synth(c: SynthCommand) -> Res<()> {
    match c {
        SynthCommand::Render { spec, out } => {
            let spec = ScenarioSpec::from_json(&fs::read_to_string(spec)?)?;
            let (frames, truth) = render(&spec)?;
            write_scenario(&out, &frames, &truth)?;
            eprintln!("wrote {} frames to {}", frames.len(), out.display());
        }
        SynthCommand::Scenario { kind, seed, frames } => {
            let spec = match kind {
                ScenarioKind::StopAndHold => stop_and_hold_scenario(seed),
                ScenarioKind::Random => random_scenario(seed, frames),
            };
            println!("{}", spec.to_json());
        }
        SynthCommand::Dataset {
            out,
            per_class,
            side,
            seed,
        } => {
            for name in SHAPE_CLASSES {
                fs::create_dir_all(out.join(name))?;
            }
            for (i, (img, class)) in shape_dataset(seed, per_class, side).iter().enumerate() {
                fs::write(out.join(SHAPE_CLASSES[*class]).join(format!("{i:05}.pgm")), encode_pgm(img))?;
            }
            eprintln!("wrote {} images to {}", per_class * SHAPE_CLASSES.len(), out.display());
        }
    }
    Ok(())
}

/// Reads `dir/label/*.pgm`; labels are the sorted subdirectory names.
fn read_dataset(dir: &Path) -> Res<Dataset> {
    let mut labels: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    labels.sort();
    let mut samples = Vec::new();
    for (id, label) in labels.iter().enumerate() {
        let mut files: Vec<PathBuf> = fs::read_dir(dir.join(label))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "pgm" || x == "ppm"))
            .collect();
        files.sort();
        for f in files {
            samples.push((load_image(&f)?, id));
        }
    }
    if labels.len() < 2 || samples.is_empty() {
        return Err(format!("{} needs at least two non-empty class directories", dir.display()).into());
    }
    Ok((labels, samples))
}

fn cmd_train(a: TrainArgs) -> Res<()> {
    let (labels, samples) = read_dataset(&a.data)?;
    let mut net = ToyNet::new(NetConfig::default(), labels.clone(), a.seed)?;
    let data: Vec<_> = samples.iter().map(|(img, l)| (net.preprocess(img), *l)).collect();
    let (mut fit, mut held) = (Vec::new(), Vec::new());
    for (i, s) in data.into_iter().enumerate() {
        if a.holdout_every > 0 && i % a.holdout_every == 0 {
            held.push(s);
        } else {
            fit.push(s);
        }
    }
    eprintln!("{} classes {:?}, {} training / {} held-out samples", labels.len(), labels, fit.len(), held.len());
    let cfg = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        batch_size: a.batch_size,
        seed: a.seed,
        momentum: a.momentum,
        ..TrainConfig::default()
    };
    train(&mut net, &fit, &cfg, |epoch, loss| eprintln!("epoch {:>3}  loss {loss:.4}", epoch + 1))?;
    if !held.is_empty() {
        eprintln!("held-out accuracy {:.2}%", net.accuracy(&held)? * 100.0);
    }
    save_weights(&net, &a.out)?;
    eprintln!("saved {}", a.out.display());
    Ok(())
}
