//! Training loop, optimizer and checkpoints.

mod checkpoint;
mod optim;

pub use checkpoint::{Checkpoint, RngState, MAGIC, VERSION};
pub use optim::{adamw_step, cosine_lr, AdamW};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{gen_moving_shapes, sample_patch, ClipRecord, Manifest, SynthConfig};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::net::{Dmvfn, Mode, ModelConfig};
use crate::objective::{total_loss, LossConfig, Supervision, DEFAULT_GAMMA, DEFAULT_LEVELS};
use crate::params::Session;
use crate::routing::{make_routing, Phase, RoutingMode};

pub const LOG_HEADER: &str = "step,lr,loss,mean_w_sum,selected_blocks_mean";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub patch_size: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub lr_start: f32,
    pub lr_end: f32,
    pub weight_decay: f32,
    pub gamma: f32,
    pub pyramid_levels: usize,
    pub supervision: Supervision,
    pub routing: RoutingMode,
    pub model: ModelConfig,
    pub seed: u64,
    /// Clip directories to train on; synthetic clips are generated when absent.
    pub manifest: Option<PathBuf>,
    pub synthetic: SynthConfig,
    pub synthetic_clips: usize,
    pub checkpoint: Option<PathBuf>,
    /// Save every this many steps (0: only at the end).
    pub checkpoint_every: usize,
    pub log: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            patch_size: 64,
            batch_size: 8,
            steps: 2000,
            lr_start: 1e-4,
            lr_end: 1e-5,
            weight_decay: 1e-4,
            gamma: DEFAULT_GAMMA,
            pyramid_levels: DEFAULT_LEVELS,
            supervision: Supervision::Full,
            routing: RoutingMode::default(),
            model: ModelConfig::default(),
            seed: 0,
            manifest: None,
            synthetic: SynthConfig::default(),
            synthetic_clips: 256,
            checkpoint: None,
            checkpoint_every: 500,
            log: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end) {
            return Err(Error::Config(format!("need lr_start ≥ lr_end > 0, got {} and {}", self.lr_start, self.lr_end)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        let m = self.model.size_multiple();
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(m) {
            return Err(Error::Config(format!("patch_size {} must be a positive multiple of {m}", self.patch_size)));
        }
        if self.manifest.is_none() && self.synthetic_clips == 0 {
            return Err(Error::Config("no manifest and synthetic_clips = 0".into()));
        }
        self.loss().validate()?;
        self.routing.validate()?;
        self.model.validate()
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig { gamma: self.gamma, levels: self.pyramid_levels, supervision: self.supervision }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text).map_err(|e| Error::file(path, e))
    }

    /// Resolves relative data and output paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.manifest, &mut self.checkpoint, &mut self.log].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// The training clips named by the configuration.
    pub fn load_clips(&self) -> Result<Vec<ClipRecord>> {
        let clips = match &self.manifest {
            Some(path) => Manifest::load(path)?.load_clips()?,
            None => gen_moving_shapes(&self.synthetic, self.synthetic_clips)?,
        };
        if let Some(c) = clips.iter().find(|c| c.height().min(c.width()) < self.patch_size) {
            return Err(Error::Data(format!(
                "clip {:?} ({}x{}) is smaller than the {} px patch",
                c.meta.name,
                c.height(),
                c.width(),
                self.patch_size
            )));
        }
        if clips.is_empty() {
            return Err(Error::Data("no training clips".into()));
        }
        Ok(clips)
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub lr: f32,
    pub loss: f32,
    /// Batch mean of `Σ_i w̃_i`.
    pub mean_w_sum: f32,
    /// Batch mean of the number of selected blocks.
    pub selected_blocks_mean: f32,
}

impl LogRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.6e},{:.6},{:.4},{:.4}",
            self.step, self.lr, self.loss, self.mean_w_sum, self.selected_blocks_mean
        )
    }
}

/// Model, data and optimizer state of a training run.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Dmvfn,
    clips: Vec<ClipRecord>,
    rng: ChaCha8Rng,
    step: usize,
    opt: AdamW,
}

impl Trainer {
    /// Fresh run: weights from `config.seed`, data sampling from a separate stream.
    pub fn new(config: TrainConfig, clips: Vec<ClipRecord>) -> Result<Self> {
        config.validate()?;
        let model = Dmvfn::new(config.model.clone(), config.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let opt = AdamW { weight_decay: config.weight_decay, ..AdamW::default() };
        Ok(Self { config, model, clips, rng, step: 0, opt })
    }

    /// Continues the run stored in `ckpt`.
    pub fn resume(ckpt: &Checkpoint, clips: Vec<ClipRecord>) -> Result<Self> {
        let config = TrainConfig::from_json(&ckpt.config_json)?;
        let mut trainer = Self::new(config, clips)?;
        trainer.model.params.load_from(ckpt.params.clone())?;
        trainer.rng = ckpt.rng.restore();
        trainer.step = ckpt.step as usize;
        Ok(trainer)
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.steps
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            config_json: serde_json::to_string_pretty(&self.config)?,
            params: self.model.params.iter().cloned().collect(),
            rng: RngState::capture(&self.rng),
            step: self.step as u64,
        })
    }

    /// Samples a batch, runs forward/backward and applies one optimizer update.
    /// A non-finite loss or gradient leaves the parameters untouched and returns an error.
    pub fn train_step(&mut self) -> Result<LogRow> {
        let cfg = &self.config;
        let lr = cosine_lr(self.step, cfg.steps.max(1), cfg.lr_start, cfg.lr_end)?;
        let tau = cfg.routing.temperature(self.step, cfg.steps);

        let mut triplets = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let clip = &self.clips[self.rng.gen_range(0..self.clips.len())];
            let start = self.rng.gen_range(0..=clip.len() - 3);
            triplets.push(sample_patch(&clip.triplet(start)?, cfg.patch_size, &mut self.rng)?);
        }
        let stack = |i: usize| Frame::batch(&triplets.iter().map(|t| &t.frames[i]).collect::<Vec<_>>());

        let mut s = Session::new(&self.model.params, true);
        let prev = s.constant(stack(0)?);
        let cur = s.constant(stack(1)?);
        let target = s.constant(stack(2)?);
        let routing = make_routing(&cfg.routing, &self.model.router, &mut s, prev, cur, Phase::Train, tau, &mut self.rng)?;
        let out = self.model.forward(&mut s, prev, cur, routing.var, Mode::Train)?;
        let loss = total_loss(&mut s.tape, &out.frames, target, &cfg.loss(), routing.regularizer)?;
        let value = s.tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("loss is {value} at step {}", self.step)));
        }
        s.tape.backward(loss)?;
        let grads = s.param_grads();
        drop(s);
        if let Some((p, _)) = self.model.params.iter().zip(&grads).find(|(_, g)| !g.all_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient for {} at step {}", p.name, self.step)));
        }
        adamw_step(&mut self.model.params, &grads, lr, &self.opt)?;

        let n = cfg.batch_size as f32;
        let row = LogRow {
            step: self.step,
            lr,
            loss: value,
            mean_w_sum: routing.probs.sum() as f32 / n,
            selected_blocks_mean: routing.selected().iter().flatten().filter(|&&b| b).count() as f32 / n,
        };
        self.step += 1;
        Ok(row)
    }

    fn save(&self) -> Result<()> {
        if let Some(path) = &self.config.checkpoint {
            self.checkpoint()?.save(path)?;
        }
        Ok(())
    }

    /// Trains until `config.steps`, writing one CSV row per step to `log` and
    /// checkpoints at the configured cadence and at the end. On failure the last
    /// saved checkpoint is left in place.
    pub fn run(&mut self, log: &mut dyn Write) -> Result<Vec<LogRow>> {
        let mut rows = Vec::new();
        while !self.is_done() {
            let row = self.train_step()?;
            writeln!(log, "{}", row.to_csv())?;
            rows.push(row);
            let every = self.config.checkpoint_every;
            if every > 0 && self.step.is_multiple_of(every) && !self.is_done() {
                log.flush()?;
                self.save()?;
            }
        }
        log.flush()?;
        self.save()?;
        Ok(rows)
    }
}

/// Drops log rows at or beyond `step`, keeping the header.
fn truncate_log(path: &Path, step: usize) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let mut kept = String::new();
    for line in text.lines() {
        let keep = match line.split(',').next().and_then(|s| s.parse::<usize>().ok()) {
            Some(s) => s < step,
            None => true,
        };
        if keep {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept).map_err(|e| Error::file(path, e))
}

/// Runs (or resumes) training with logging to `config.log` when set.
pub fn train(config: TrainConfig, resume: Option<&Checkpoint>) -> Result<Vec<LogRow>> {
    let mut trainer = match resume {
        Some(ckpt) => {
            let stored = TrainConfig::from_json(&ckpt.config_json)?;
            let clips = stored.load_clips()?;
            Trainer::resume(ckpt, clips)?
        }
        None => {
            config.validate()?;
            let clips = config.load_clips()?;
            Trainer::new(config, clips)?
        }
    };
    let log_path = trainer.config.log.clone();
    match log_path {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
            }
            let resuming = resume.is_some() && path.exists();
            if resuming {
                truncate_log(&path, trainer.step())?;
            }
            let file = fs::OpenOptions::new()
                .create(true)
                .append(resuming)
                .write(true)
                .truncate(!resuming)
                .open(&path)
                .map_err(|e| Error::file(&path, e))?;
            let mut w = std::io::BufWriter::new(file);
            if !resuming {
                writeln!(w, "{LOG_HEADER}")?;
            }
            trainer.run(&mut w)
        }
        None => trainer.run(&mut std::io::sink()),
    }
}

/// Rebuilds the model stored in a checkpoint.
pub fn load_model(ckpt: &Checkpoint) -> Result<(TrainConfig, Dmvfn)> {
    let config = TrainConfig::from_json(&ckpt.config_json)?;
    let mut model = Dmvfn::new(config.model.clone(), config.seed)?;
    model.params.load_from(ckpt.params.clone())?;
    Ok((config, model))
}
