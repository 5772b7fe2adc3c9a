//! `headgen`: command-line front end for the talking-head pipeline.
//!
//! Dataset layout written by `synth` and read by `features --data` / `train`:
//!
//! ```text
//! DIR/dataset.txt            seed, clips, fps, sample_rate
//! DIR/clip_000/audio.wav
//! DIR/clip_000/params.csv
//! DIR/clip_000/reference.png first frame
//! DIR/clip_000/frames/       %06d.png + manifest.txt
//! DIR/clip_000/features.chft written by `features --data DIR`
//! ```

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use headgen::audio::extract_features;
use headgen::driver::forward;
use headgen::ensemble::{ensemble_predict, EnsembleKind, SELF_ENSEMBLE_SIZE};
use headgen::fusion::{fuse_sequence, fuse_with_masks};
use headgen::io::{self, FrameManifest, MaskDir};
use headgen::metrics::{exp_distance, frame_stats, frechet_distance, psnr_sequence};
use headgen::synth::{SynthConfig, SynthSpec, BACKGROUND_COLOR};
use headgen::training::{train, TrainClip};
use headgen::{
    AttitudeCondition, DriverConfig, EnsembleSpec, Frame, MetricsReport, Mode, Renderer,
    ThresholdSegmenter, ToyRenderer, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "headgen",
    version,
    about = "Audio-driven head parameter generation and rendering"
)]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 1 gives bit-reproducible output. 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of paired audio, parameters and frames.
    Synth(SynthArgs),
    /// Extract 45-dim audio features from WAV (or raw f32) audio.
    Features(FeaturesArgs),
    /// Train a driver on a dataset directory.
    Train(TrainArgs),
    /// Predict a parameter sequence from features.
    Infer(InferArgs),
    /// Render frames from parameters and a reference image.
    Render(RenderArgs),
    /// Paste the reference background over generated frames.
    Fuse(FuseArgs),
    /// Compare frame directories and/or parameter files.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    clips: usize,
    #[arg(long, default_value_t = 6.0)]
    seconds: f64,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    #[arg(long, default_value_t = 16_000)]
    sample_rate: u32,
    #[arg(long, default_value_t = 64)]
    image_size: usize,
    /// Pass smoothed features through tanh before the linear map.
    #[arg(long)]
    nonlinear: bool,
}

#[derive(Args)]
struct FeaturesArgs {
    /// Input audio file.
    #[arg(long, conflicts_with = "data", requires = "out")]
    wav: Option<PathBuf>,
    /// Output feature file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Process every clip directory of a dataset instead.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    /// Treat the input as headerless little-endian f32 at this rate.
    #[arg(long)]
    raw_rate: Option<u32>,
    /// Attitude category appended as a one-hot block.
    #[arg(long, requires = "attitude_categories")]
    attitude: Option<usize>,
    #[arg(long)]
    attitude_categories: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 256)]
    hidden: usize,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 0.2)]
    dropout: f64,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    #[arg(long, default_value_t = 90)]
    clip_length: usize,
    #[arg(long, default_value_t = 5e-3)]
    lr_max: f64,
    #[arg(long, default_value_t = 1e-4)]
    lr_min: f64,
    #[arg(long, default_value_t = 0.05)]
    weight_decay: f64,
    #[arg(long, default_value_t = 500)]
    snapshot_every: usize,
    /// Attitude categories expected in the feature files (0 = none).
    #[arg(long, default_value_t = 0)]
    attitude_categories: usize,
    /// Frame rate the feature files were extracted at.
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
}

#[derive(Args)]
struct InferArgs {
    /// Checkpoint (.chdr) or ensemble manifest.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Parameter CSV whose first row is the reference frame.
    #[arg(long)]
    reference_params: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Background color for threshold segmentation, as r,g,b in [0, 1].
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = BACKGROUND_COLOR)]
    background: Vec<f64>,
    /// Per-channel tolerance of the threshold segmenter.
    #[arg(long, default_value_t = 0.08)]
    tol: f64,
    /// Directory of external masks (`%06d.png` plus `reference.png`).
    #[arg(long, conflicts_with_all = ["background", "tol"])]
    masks: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, requires = "frames_ref")]
    frames: Option<PathBuf>,
    #[arg(long)]
    frames_ref: Option<PathBuf>,
    #[arg(long, requires = "params_ref")]
    params: Option<PathBuf>,
    #[arg(long)]
    params_ref: Option<PathBuf>,
    /// Emit a CSV header and row with this label instead of key=value lines.
    #[arg(long)]
    csv: Option<String>,
}

fn clip_dirs(data: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(data)
        .with_context(|| format!("reading dataset {}", data.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("clip_"))
        })
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no clip_* directories in {}", data.display());
    }
    Ok(dirs)
}

fn synth(args: &SynthArgs, seed: u64) -> Result<()> {
    let config = SynthConfig {
        n_clips: args.clips,
        clip_seconds: args.seconds,
        fps: args.fps,
        sample_rate: args.sample_rate,
        image_size: args.image_size,
        nonlinear: args.nonlinear,
        ..SynthConfig::default()
    };
    let spec = SynthSpec::with_config(seed, config)?;
    std::fs::create_dir_all(&args.out)?;
    for i in 0..args.clips {
        let clip = spec.gen_clip(i)?;
        let dir = args.out.join(format!("clip_{i:03}"));
        std::fs::create_dir_all(&dir)?;
        io::save_wav(dir.join("audio.wav"), &clip.audio)?;
        io::save_params(dir.join("params.csv"), &clip.params)?;
        io::save_png(dir.join("reference.png"), &clip.frames[0])?;
        let manifest = FrameManifest {
            fps: args.fps,
            frames: clip.frames.len(),
            reference: Some("../reference.png".into()),
        };
        io::save_frame_dir(dir.join("frames"), &clip.frames, &manifest)?;
    }
    let meta = format!(
        "seed={seed}\nclips={}\nfps={}\nsample_rate={}\n",
        args.clips, args.fps, args.sample_rate
    );
    std::fs::write(args.out.join("dataset.txt"), meta)?;
    println!("wrote {} clips to {}", args.clips, args.out.display());
    Ok(())
}

fn features_one(wav: &Path, out: &Path, args: &FeaturesArgs) -> Result<usize> {
    let clip = match args.raw_rate {
        Some(rate) => io::load_raw_f32(wav, rate)?,
        None => io::load_wav(wav)?,
    };
    let feats = extract_features(&clip, args.fps)?;
    let attitude = match (args.attitude, args.attitude_categories) {
        (Some(i), Some(n)) => Some(AttitudeCondition::new(i, n)?),
        _ => None,
    };
    io::save_features(out, &feats, attitude.as_ref())?;
    Ok(feats.len())
}

fn features(args: &FeaturesArgs) -> Result<()> {
    match (&args.wav, &args.out, &args.data) {
        (Some(wav), Some(out), None) => {
            let n = features_one(wav, out, args)?;
            println!("wrote {n} frames to {}", out.display());
        }
        (None, _, Some(data)) => {
            let dirs = clip_dirs(data)?;
            for dir in &dirs {
                features_one(&dir.join("audio.wav"), &dir.join("features.chft"), args)?;
            }
            println!("wrote features for {} clips", dirs.len());
        }
        _ => bail!("pass either --wav with --out, or --data"),
    }
    Ok(())
}

fn load_dataset(data: &Path, fps: f64) -> Result<Vec<TrainClip>> {
    clip_dirs(data)?
        .iter()
        .map(|dir| {
            let fpath = dir.join("features.chft");
            if !fpath.exists() {
                bail!("{} missing; run `headgen features --data`", fpath.display());
            }
            let (feats, attitude) = io::load_features(&fpath, fps)?;
            let params = io::load_params(dir.join("params.csv"))?;
            Ok(TrainClip::new(feats, params, attitude)?)
        })
        .collect()
}

fn train_cmd(args: &TrainArgs, seed: u64) -> Result<()> {
    let dataset = load_dataset(&args.data, args.fps)?;
    let driver = DriverConfig::default()
        .with_hidden(args.hidden)
        .with_layers(args.layers)
        .with_dropout(args.dropout)
        .with_attitude(args.attitude_categories);
    let config = TrainConfig {
        clip_length: args.clip_length,
        batch_size: args.batch,
        steps: args.steps,
        lr_max: args.lr_max,
        lr_min: args.lr_min,
        weight_decay: args.weight_decay,
        seed,
        snapshot_every: args.snapshot_every,
        ..TrainConfig::default()
    };
    let outcome = train(&dataset, &driver, &config)?;
    std::fs::create_dir_all(&args.out)?;
    let mut snapshot_names = Vec::new();
    for (step, ckpt) in &outcome.snapshots {
        let name = PathBuf::from(format!("step_{step:06}.chdr"));
        io::save_checkpoint(args.out.join(&name), ckpt)?;
        snapshot_names.push(name);
    }
    io::save_checkpoint(args.out.join("final.chdr"), &outcome.checkpoint)?;
    io::save_loss_csv(args.out.join("loss.csv"), &outcome.history)?;
    let skip = snapshot_names.len().saturating_sub(SELF_ENSEMBLE_SIZE);
    let mut members = snapshot_names[skip..].to_vec();
    if members.is_empty() {
        members.push("final.chdr".into());
    }
    std::fs::write(
        args.out.join("self_ensemble.txt"),
        io::ensemble_manifest(EnsembleKind::SelfEnsemble, &members),
    )?;
    if let (Some(first), Some(last)) = (outcome.history.first(), outcome.history.last()) {
        println!(
            "trained {} steps: loss {} -> {}",
            args.steps,
            first.loss.total(),
            last.loss.total()
        );
    }
    Ok(())
}

fn is_checkpoint(path: &Path) -> Result<bool> {
    use std::io::Read;
    let mut magic = [0u8; 4];
    let mut f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(f.read_exact(&mut magic).is_ok() && &magic == io::binary::CHECKPOINT_MAGIC)
}

fn infer(args: &InferArgs) -> Result<()> {
    let (feats, attitude) = io::load_features(&args.features, args.fps)?;
    let reference = *io::load_params(&args.reference_params)?.first();
    let seq = if is_checkpoint(&args.model)? {
        let ckpt = io::load_checkpoint(&args.model)?;
        forward(
            ckpt.weights(),
            &feats,
            &reference,
            Mode::Infer,
            attitude.as_ref(),
        )?
    } else {
        let spec: EnsembleSpec = io::load_ensemble(&args.model)?;
        ensemble_predict(&spec, &feats, &reference, attitude.as_ref())?
    };
    io::save_params(&args.out, &seq)?;
    println!("wrote {} frames to {}", seq.len(), args.out.display());
    Ok(())
}

fn render(args: &RenderArgs) -> Result<()> {
    let params = io::load_params(&args.params)?;
    let reference = io::load_png(&args.reference)?;
    let frames = ToyRenderer.render_sequence(&reference, params.frames())?;
    let manifest = FrameManifest {
        fps: args.fps,
        frames: frames.len(),
        reference: Some(args.reference.display().to_string()),
    };
    io::save_frame_dir(&args.out, &frames, &manifest)?;
    println!("rendered {} frames to {}", frames.len(), args.out.display());
    Ok(())
}

fn fuse(args: &FuseArgs) -> Result<()> {
    let (generated, manifest) = io::load_frame_dir(&args.frames)?;
    let reference = io::load_png(&args.reference)?;
    let fused: Vec<Frame> = match &args.masks {
        Some(dir) => {
            let masks = MaskDir { dir: dir.clone() };
            let per_frame = (0..generated.len())
                .map(|i| masks.load(i))
                .collect::<headgen::Result<Vec<_>>>()?;
            fuse_with_masks(&generated, &reference, per_frame, masks.load_reference()?)?
        }
        None => {
            let bg: [f64; 3] = args
                .background
                .as_slice()
                .try_into()
                .map_err(|_| anyhow!("--background needs three values"))?;
            let seg = ThresholdSegmenter::new(bg, args.tol)?;
            fuse_sequence(&generated, &reference, &seg)?
        }
    };
    let out_manifest = FrameManifest {
        reference: Some(args.reference.display().to_string()),
        ..manifest
    };
    io::save_frame_dir(&args.out, &fused, &out_manifest)?;
    println!("fused {} frames to {}", fused.len(), args.out.display());
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let mut report = MetricsReport::default();
    if let (Some(a), Some(b)) = (&args.frames, &args.frames_ref) {
        let (fa, _) = io::load_frame_dir(a)?;
        let (fb, _) = io::load_frame_dir(b)?;
        report.psnr = Some(psnr_sequence(&fa, &fb, 1.0)?);
        if fa.len() >= 2 && fb.len() >= 2 {
            report.frechet = Some(frechet_distance(&frame_stats(&fa)?, &frame_stats(&fb)?)?);
        }
    }
    if let (Some(a), Some(b)) = (&args.params, &args.params_ref) {
        report.expfd = Some(exp_distance(&io::load_params(a)?, &io::load_params(b)?)?);
    }
    if report == MetricsReport::default() {
        bail!("nothing to evaluate; pass --frames/--frames-ref and/or --params/--params-ref");
    }
    match &args.csv {
        Some(label) => println!(
            "{}\n{}",
            MetricsReport::csv_header(),
            report.to_csv_row(label)
        ),
        None => print!("{}", report.to_key_values()),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Synth(a) => synth(a, cli.seed),
        Command::Features(a) => features(a),
        Command::Train(a) => train_cmd(a, cli.seed),
        Command::Infer(a) => infer(a),
        Command::Render(a) => render(a),
        Command::Fuse(a) => fuse(a),
        Command::Eval(a) => eval(a),
    }
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .replace('\\', "\\\\")
        .replace('"', "\\\"")
}

/// The error chain joined with ": ", skipping causes their parent already quotes.
fn chain_message(err: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !parts.last().is_some_and(|p| p.contains(&text)) {
            parts.push(text);
        }
    }
    parts.join(": ")
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| {
            e.downcast_ref::<headgen::Error>()
                .map(|h| h.kind())
                .or_else(|| e.downcast_ref::<std::io::Error>().map(|_| "io"))
        })
        .unwrap_or("invalid_argument")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error: kind=usage msg=\"{}\"", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "error: kind={} msg=\"{}\"",
                error_kind(&e),
                one_line(&chain_message(&e))
            );
            ExitCode::FAILURE
        }
    }
}
