//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::data_io::SyntheticSceneConfig;
use crate::ddpm::{make_linear_schedule, NoiseSchedule, SigmaMode};
use crate::denoiser::DenoiserConfig;
use crate::error::{Error, Result};
use crate::patch::{BlendMode, PatchConfig};
use crate::temporal::{CollisionPolicy, RansacConfig, TemporalConfig};

/// Environment variable naming a profile file loaded before `--config`.
pub const PROFILE_ENV: &str = "TCPDM_PROFILE";

/// Which synthetic scene `synth` renders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    Toy,
    Random,
}

impl std::str::FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Self::Toy),
            "random" => Ok(Self::Random),
            _ => Err(Error::InvalidConfig(format!("unknown scene kind {s:?}"))),
        }
    }
}

impl std::fmt::Display for SceneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Toy => "toy",
            Self::Random => "random",
        })
    }
}

/// Every tunable of a run. Defaults follow the full-scale settings; the
/// desk profile scales them down.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub sigma_mode: SigmaMode,

    pub patch: usize,
    pub cell: usize,
    pub blend_mode: BlendMode,

    pub w_t: f64,
    pub omega: f64,
    pub collision: CollisionPolicy,
    pub ransac_iters: usize,
    pub ransac_threshold: f64,
    pub ransac_confidence: f64,
    pub min_motion: f64,

    pub classes: usize,
    pub base_width: usize,
    pub depth: usize,
    pub use_attention: bool,
    pub ir_replicate_3: bool,
    pub time_embed_dim: usize,
    pub num_groups: usize,

    pub lr: f64,
    pub n_images: usize,
    pub patches_per_image: usize,
    pub iters: usize,
    pub ema_momentum: f64,
    pub seed: u64,
    pub checkpoint_every: usize,

    pub use_ema: bool,

    pub scene: SceneKind,
    pub synth_height: usize,
    pub synth_width: usize,
    pub synth_frames: usize,
    pub synth_shapes: usize,
    pub synth_tau: f64,

    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            sigma_mode: SigmaMode::Beta,
            patch: 64,
            cell: 16,
            blend_mode: BlendMode::Denoised,
            w_t: 1.0,
            omega: 0.9,
            collision: CollisionPolicy::Average,
            ransac_iters: 1000,
            ransac_threshold: 1.0,
            ransac_confidence: 0.999,
            min_motion: 0.5,
            classes: 150,
            base_width: 32,
            depth: 2,
            use_attention: false,
            ir_replicate_3: false,
            time_embed_dim: 64,
            num_groups: 8,
            lr: 2e-5,
            n_images: 8,
            patches_per_image: 4,
            iters: 2_000_000,
            ema_momentum: 0.999,
            seed: 0,
            checkpoint_every: 10_000,
            use_ema: true,
            scene: SceneKind::Toy,
            synth_height: 32,
            synth_width: 32,
            synth_frames: 6,
            synth_shapes: 2,
            synth_tau: 0.25,
            dataset: PathBuf::from("data"),
            checkpoint: PathBuf::from("checkpoint"),
            output: PathBuf::from("out"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    /// Sets one key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "schedule.T" => self.steps = parse(key, v)?,
            "schedule.beta_start" => self.beta_start = parse(key, v)?,
            "schedule.beta_end" => self.beta_end = parse(key, v)?,
            "schedule.sigma_mode" => self.sigma_mode = v.parse()?,
            "patch.p" => self.patch = parse(key, v)?,
            "patch.r" => self.cell = parse(key, v)?,
            "patch.blend_mode" => self.blend_mode = v.parse()?,
            "temporal.w_T" => self.w_t = parse(key, v)?,
            "temporal.omega" => self.omega = parse(key, v)?,
            "temporal.collision" => self.collision = v.parse()?,
            "temporal.ransac.iters" => self.ransac_iters = parse(key, v)?,
            "temporal.ransac.threshold" => self.ransac_threshold = parse(key, v)?,
            "temporal.ransac.confidence" => self.ransac_confidence = parse(key, v)?,
            "temporal.min_motion" => self.min_motion = parse(key, v)?,
            "denoiser.L" => self.classes = parse(key, v)?,
            "denoiser.base_width" => self.base_width = parse(key, v)?,
            "denoiser.depth" => self.depth = parse(key, v)?,
            "denoiser.use_attention" => self.use_attention = parse(key, v)?,
            "denoiser.ir_replicate_3" => self.ir_replicate_3 = parse(key, v)?,
            "denoiser.time_embed_dim" => self.time_embed_dim = parse(key, v)?,
            "denoiser.num_groups" => self.num_groups = parse(key, v)?,
            "train.lr" => self.lr = parse(key, v)?,
            "train.n_images" => self.n_images = parse(key, v)?,
            "train.patches_per_image" => self.patches_per_image = parse(key, v)?,
            "train.iters" => self.iters = parse(key, v)?,
            "train.ema_momentum" => self.ema_momentum = parse(key, v)?,
            "train.seed" => self.seed = parse(key, v)?,
            "train.checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "translate.use_ema" => self.use_ema = parse(key, v)?,
            "synth.scene" => self.scene = v.parse()?,
            "synth.H" => self.synth_height = parse(key, v)?,
            "synth.W" => self.synth_width = parse(key, v)?,
            "synth.N" => self.synth_frames = parse(key, v)?,
            "synth.shapes" => self.synth_shapes = parse(key, v)?,
            "synth.tau" => self.synth_tau = parse(key, v)?,
            "paths.dataset" => self.dataset = PathBuf::from(v),
            "paths.checkpoint" => self.checkpoint = PathBuf::from(v),
            "paths.output" => self.output = PathBuf::from(v),
            other => return Err(Error::InvalidConfig(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// All keys with their current values, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("schedule.T", self.steps.to_string()),
            ("schedule.beta_start", self.beta_start.to_string()),
            ("schedule.beta_end", self.beta_end.to_string()),
            ("schedule.sigma_mode", self.sigma_mode.to_string()),
            ("patch.p", self.patch.to_string()),
            ("patch.r", self.cell.to_string()),
            ("patch.blend_mode", self.blend_mode.to_string()),
            ("temporal.w_T", self.w_t.to_string()),
            ("temporal.omega", self.omega.to_string()),
            ("temporal.collision", self.collision.to_string()),
            ("temporal.ransac.iters", self.ransac_iters.to_string()),
            ("temporal.ransac.threshold", self.ransac_threshold.to_string()),
            ("temporal.ransac.confidence", self.ransac_confidence.to_string()),
            ("temporal.min_motion", self.min_motion.to_string()),
            ("denoiser.L", self.classes.to_string()),
            ("denoiser.base_width", self.base_width.to_string()),
            ("denoiser.depth", self.depth.to_string()),
            ("denoiser.use_attention", self.use_attention.to_string()),
            ("denoiser.ir_replicate_3", self.ir_replicate_3.to_string()),
            ("denoiser.time_embed_dim", self.time_embed_dim.to_string()),
            ("denoiser.num_groups", self.num_groups.to_string()),
            ("train.lr", self.lr.to_string()),
            ("train.n_images", self.n_images.to_string()),
            ("train.patches_per_image", self.patches_per_image.to_string()),
            ("train.iters", self.iters.to_string()),
            ("train.ema_momentum", self.ema_momentum.to_string()),
            ("train.seed", self.seed.to_string()),
            ("train.checkpoint_every", self.checkpoint_every.to_string()),
            ("translate.use_ema", self.use_ema.to_string()),
            ("synth.scene", self.scene.to_string()),
            ("synth.H", self.synth_height.to_string()),
            ("synth.W", self.synth_width.to_string()),
            ("synth.N", self.synth_frames.to_string()),
            ("synth.shapes", self.synth_shapes.to_string()),
            ("synth.tau", self.synth_tau.to_string()),
            ("paths.dataset", self.dataset.display().to_string()),
            ("paths.checkpoint", self.checkpoint.display().to_string()),
            ("paths.output", self.output.display().to_string()),
        ]
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Applies an override of the form `key=value`.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("override {kv:?} is not key=value")))?;
        self.set(k, v)
    }

    /// Defaults, then the profile named by `TCPDM_PROFILE`, then `config`.
    pub fn load(config: Option<&Path>) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(profile) = std::env::var_os(PROFILE_ENV) {
            cfg.apply_file(PathBuf::from(profile))?;
        }
        if let Some(path) = config {
            cfg.apply_file(path)?;
        }
        Ok(cfg)
    }

    /// Canonical text, one `key = value` per line.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// SHA-256 of [`RunConfig::resolved`], hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.resolved().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn write_resolved(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("resolved_config.txt");
        fs::write(&path, self.resolved()).map_err(|e| Error::io(&path, e))
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        Ok(make_linear_schedule(self.steps, self.beta_start, self.beta_end)?.with_sigma_mode(self.sigma_mode))
    }

    pub fn denoiser(&self) -> DenoiserConfig {
        DenoiserConfig {
            patch_size: self.patch,
            num_classes: self.classes,
            base_width: self.base_width,
            depth: self.depth,
            time_embed_dim: self.time_embed_dim,
            use_attention: self.use_attention,
            num_groups: self.num_groups,
            ir_replicate_3: self.ir_replicate_3,
        }
    }

    pub fn patch_config(&self) -> PatchConfig {
        PatchConfig { patch: self.patch, cell: self.cell, blend: self.blend_mode }
    }

    pub fn ransac(&self) -> RansacConfig {
        RansacConfig {
            max_iters: self.ransac_iters,
            threshold: self.ransac_threshold,
            confidence: self.ransac_confidence,
            min_motion: self.min_motion,
            seed: self.seed,
        }
    }

    pub fn temporal(&self) -> TemporalConfig {
        TemporalConfig { w_t: self.w_t, omega: self.omega, collision: self.collision, ransac: self.ransac() }
    }

    pub fn scene(&self) -> Result<SyntheticSceneConfig> {
        let mut scene = match self.scene {
            SceneKind::Toy => SyntheticSceneConfig::toy(),
            SceneKind::Random => SyntheticSceneConfig::random(
                self.synth_height,
                self.synth_width,
                self.synth_frames,
                self.classes,
                self.synth_shapes,
                self.seed,
            )?,
        };
        scene.frames = self.synth_frames;
        scene.num_classes = self.classes;
        scene.tau = self.synth_tau;
        scene.seed = self.seed;
        Ok(scene)
    }

    /// Cross-field checks not covered by the individual parsers.
    pub fn validate(&self) -> Result<()> {
        self.denoiser().validate()?;
        self.schedule()?;
        if self.cell == 0 {
            return Err(Error::InvalidConfig("patch.r must be positive".into()));
        }
        for (name, x) in [("temporal.w_T", self.w_t), ("temporal.omega", self.omega), ("train.ema_momentum", self.ema_momentum)] {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::InvalidConfig(format!("{name} = {x} outside [0, 1]")));
            }
        }
        if !(self.lr > 0.0) || self.n_images == 0 || self.patches_per_image == 0 {
            return Err(Error::InvalidConfig("train.lr, n_images and patches_per_image must be positive".into()));
        }
        Ok(())
    }
}
