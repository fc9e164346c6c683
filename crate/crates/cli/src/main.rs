use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dmvfn_core::data::{gen_moving_shapes, load_sequence, save_frames, ClipRecord, Manifest, ManifestEntry, SynthConfig};
use dmvfn_core::eval::{evaluate, usage_rate, GroupBy};
use dmvfn_core::flops::count_flops;
use dmvfn_core::net::{named_schedule, predict_sequence, Dmvfn};
use dmvfn_core::objective::Supervision;
use dmvfn_core::params::Session;
use dmvfn_core::routing::{make_routing, Phase, RoutingMode};
use dmvfn_core::train::{load_model, train, Checkpoint, TrainConfig};
use dmvfn_core::{Error, Frame, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "dmvfn", version, about = "Dynamic multi-scale voxel flow network for video frame prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON config; flags override config keys.
    Train(TrainArgs),
    /// Predict the next k frames after the last two frames of a directory.
    Predict(PredictArgs),
    /// Report MS-SSIM and PSNR per horizon next to the copy-last baseline.
    Eval(EvalArgs),
    /// Report static, dynamic and expected FLOPs per frame.
    Flops(FlopsArgs),
    /// Report per-block usage rates per subset.
    RouteStats(RouteStatsArgs),
    /// Write synthetic moving-shape clips as PNG directories plus a manifest.
    GenData(GenDataArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ModeArg {
    AlwaysOn,
    Random,
    Gumbel,
    Stebs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SupervisionArg {
    Full,
    Single,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ByArg {
    Motion,
    Interval,
}

/// Routing overrides shared by several subcommands.
#[derive(Args, Clone, Debug, Default)]
struct RoutingArgs {
    /// Routing mode; defaults to the configured one.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// STEBS budget β.
    #[arg(long)]
    beta: Option<f32>,
    /// Keep probability of random routing.
    #[arg(long)]
    p: Option<f32>,
}

impl RoutingArgs {
    fn apply(&self, base: &RoutingMode) -> RoutingMode {
        let mode = match self.mode {
            None => base.clone(),
            Some(ModeArg::AlwaysOn) => RoutingMode::AlwaysOn,
            Some(ModeArg::Random) => RoutingMode::Random { p: 0.5 },
            Some(ModeArg::Gumbel) => match base {
                RoutingMode::Gumbel { .. } => base.clone(),
                _ => RoutingMode::gumbel(),
            },
            Some(ModeArg::Stebs) => match base {
                RoutingMode::Stebs { .. } => base.clone(),
                _ => RoutingMode::default(),
            },
        };
        let mode = match (mode, self.p) {
            (RoutingMode::Random { .. }, Some(p)) => RoutingMode::Random { p },
            (m, _) => m,
        };
        match self.beta {
            Some(b) => mode.with_beta(b),
            None => mode,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// JSON training config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue the run stored in this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    lr_start: Option<f32>,
    #[arg(long)]
    lr_end: Option<f32>,
    #[arg(long)]
    weight_decay: Option<f32>,
    #[arg(long)]
    gamma: Option<f32>,
    #[arg(long)]
    pyramid_levels: Option<usize>,
    #[arg(long, value_enum)]
    supervision: Option<SupervisionArg>,
    #[command(flatten)]
    routing: RoutingArgs,
    /// Scaling schedule, e.g. `4,2,1` or nine explicit factors.
    #[arg(long)]
    schedule: Option<String>,
    /// Disable the spatial path of every block.
    #[arg(long)]
    no_spatial: bool,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    synthetic_clips: Option<usize>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Directory of PNG frames; the last two are the inputs.
    #[arg(long)]
    frames: PathBuf,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[command(flatten)]
    routing: RoutingArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    horizons: Vec<usize>,
    #[command(flatten)]
    routing: RoutingArgs,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FlopsArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    routing: RoutingArgs,
    /// Sample set for the dynamic columns; synthetic clips at the trained patch size otherwise.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Number of synthetic samples when no manifest is given.
    #[arg(long, default_value_t = 64)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RouteStatsArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "motion")]
    by: ByArg,
    #[command(flatten)]
    routing: RoutingArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    clips: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 7)]
    frames: usize,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) => 3,
        Error::Data(_) | Error::File { .. } | Error::Io(_) | Error::Checkpoint(_) => 2,
        _ => 1,
    }
}

fn load_checkpoint(path: &Path) -> Result<(TrainConfig, Dmvfn), Error> {
    load_model(&Checkpoint::load(path)?)
}

fn cmd_train(a: TrainArgs) -> Result<(), Error> {
    let resume = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    let mut cfg = match (&a.config, &resume) {
        (Some(path), _) => {
            let mut cfg = TrainConfig::load(path)?;
            cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
            cfg
        }
        (None, Some(ckpt)) => TrainConfig::from_json(&ckpt.config_json)?,
        (None, None) => TrainConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = a.$field.clone() { cfg.$field = v; })* };
    }
    set!(seed, steps, batch_size, patch_size, lr_start, lr_end, weight_decay, gamma, pyramid_levels, synthetic_clips, checkpoint_every);
    if let Some(s) = a.supervision {
        cfg.supervision = match s {
            SupervisionArg::Full => Supervision::Full,
            SupervisionArg::Single => Supervision::Single,
        };
    }
    cfg.routing = a.routing.apply(&cfg.routing);
    if let Some(s) = &a.schedule {
        cfg.model.schedule = named_schedule(s)?;
    }
    if a.no_spatial {
        cfg.model.spatial_path = false;
    }
    if a.manifest.is_some() {
        cfg.manifest = a.manifest.clone();
    }
    if a.checkpoint.is_some() {
        cfg.checkpoint = a.checkpoint.clone();
    }
    if a.log.is_some() {
        cfg.log = a.log.clone();
    }
    let resume = match resume {
        Some(mut ckpt) => {
            let stored = TrainConfig::from_json(&ckpt.config_json)?;
            let keep = TrainConfig { checkpoint: cfg.checkpoint.clone(), log: cfg.log.clone(), checkpoint_every: cfg.checkpoint_every, ..stored };
            ckpt.config_json = serde_json::to_string_pretty(&keep)?;
            Some(ckpt)
        }
        None => None,
    };
    let rows = train(cfg, resume.as_ref())?;
    if let Some(last) = rows.last() {
        eprintln!("finished {} steps (final loss {:.6})", last.step + 1, last.loss);
    }
    Ok(())
}

fn batch(f: &Frame) -> Result<Tensor, Error> {
    f.tensor().clone().reshape(&[1, 3, f.height(), f.width()])
}

fn cmd_predict(a: PredictArgs) -> Result<(), Error> {
    let (cfg, model) = load_checkpoint(&a.ckpt)?;
    let clip = load_sequence(&a.frames)?;
    let n = clip.len();
    let (prev, cur) = (&clip.frames[n - 2], &clip.frames[n - 1]);
    model.check_frame_size(cur.height(), cur.width())?;
    let mode = a.routing.apply(&cfg.routing);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let preds = predict_sequence(&model, &batch(prev)?, &batch(cur)?, a.k, &mode, &mut rng)?;
    let frames = preds.iter().map(|t| Frame::new(t.clone().reshape(&t.dims()[1..])?)).collect::<Result<Vec<_>, _>>()?;
    for path in save_frames(&frames, &a.out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Error> {
    let (cfg, model) = load_checkpoint(&a.ckpt)?;
    let clips = Manifest::load(&a.manifest)?.load_clips()?;
    let mode = a.routing.apply(&cfg.routing);
    let report = evaluate(&model, &clips, &a.horizons, &mode, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    match a.out {
        Some(path) => fs::write(&path, report.to_csv())?,
        None => print!("{}", report.to_csv()),
    }
    Ok(())
}

fn cmd_flops(a: FlopsArgs) -> Result<(), Error> {
    let (cfg, model) = load_checkpoint(&a.ckpt)?;
    let clips: Vec<ClipRecord> = match &a.manifest {
        Some(path) => Manifest::load(path)?.load_clips()?,
        None => {
            let size = cfg.patch_size;
            let synth = SynthConfig { height: size, width: size, seed: a.seed, ..cfg.synthetic.clone() };
            gen_moving_shapes(&synth, a.samples)?
        }
    };
    let (h, w) = (clips[0].height(), clips[0].width());
    let ledger = count_flops(&model, h, w)?;
    let mode = a.routing.apply(&cfg.routing);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (mut dynamic, mut probs) = (0.0, vec![0.0f64; model.len()]);
    for clip in &clips {
        if (clip.height(), clip.width()) != (h, w) {
            return Err(Error::Data(format!("clip {:?} is not {h}x{w}", clip.meta.name)));
        }
        let (prev, cur) = clip.inputs();
        let mut s = Session::new(&model.params, false);
        let (p, c) = (s.constant(batch(prev)?), s.constant(batch(cur)?));
        let r = make_routing(&mode, &model.router, &mut s, p, c, Phase::Infer, 1.0, &mut rng)?;
        let sel: Vec<bool> = r.v.data().iter().map(|&x| x >= 0.5).collect();
        dynamic += ledger.dynamic_total(&sel)? as f64;
        probs.iter_mut().zip(r.probs.data()).for_each(|(a, &b)| *a += b as f64);
    }
    let n = clips.len() as f64;
    let rates: Vec<f32> = probs.iter().map(|p| (p / n) as f32).collect();
    println!("metric,value");
    println!("height,{h}");
    println!("width,{w}");
    println!("routing_mode,{}", mode.name());
    println!("super_network_total,{}", ledger.super_network_total());
    println!("routing_total,{}", ledger.routing_total);
    println!("static_total,{}", ledger.static_total());
    println!("dynamic_mean,{:.1}", dynamic / n);
    println!("expected_total,{:.1}", ledger.expected_total(&rates)?);
    Ok(())
}

fn cmd_route_stats(a: RouteStatsArgs) -> Result<(), Error> {
    let (cfg, model) = load_checkpoint(&a.ckpt)?;
    let clips = Manifest::load(&a.manifest)?.load_clips()?;
    let mode = a.routing.apply(&cfg.routing);
    let by = match a.by {
        ByArg::Motion => GroupBy::Motion,
        ByArg::Interval => GroupBy::Interval,
    };
    let stats = usage_rate(&model, &clips, &mode, by, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    print!("{}", stats.to_csv());
    Ok(())
}

fn cmd_gen_data(a: GenDataArgs) -> Result<(), Error> {
    let cfg = SynthConfig { height: a.size, width: a.size, frames: a.frames, seed: a.seed, ..SynthConfig::default() };
    let mut entries = Vec::with_capacity(a.clips);
    for clip in gen_moving_shapes(&cfg, a.clips)? {
        let dir = a.out.join(&clip.meta.name);
        save_frames(&clip.frames, &dir)?;
        entries.push(ManifestEntry { path: dir, subset: clip.meta.motion_bin().map(|b| b.name().to_string()) });
    }
    let path = a.out.join("manifest.json");
    Manifest { entries }.save(&path)?;
    println!("{}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Flops(a) => cmd_flops(a),
        Command::RouteStats(a) => cmd_route_stats(a),
        Command::GenData(a) => cmd_gen_data(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
