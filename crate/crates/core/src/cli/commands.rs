//! The four pipeline commands as library calls.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::RunConfig;
use crate::data_io::{
    frame_name, from_model_range, load_dataset, load_flows, load_png_frames, synth_scene, to_unit_range, write_dataset,
    write_png, Dataset, SyntheticScene,
};
use crate::ddpm::{training_loss, NoiseSchedule};
use crate::denoiser::{build_denoiser, ema_update, load_checkpoint, save_checkpoint, Checkpoint, Denoiser, OptimizerState};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::patch::random_patch_batch;
use crate::rng::stream;
use crate::temporal::{translate_video, VideoTranslation};

// Stream tags under the run seed.
const INIT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Renders the configured scene and writes it as a dataset directory.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<SyntheticScene> {
    let scene = synth_scene(&cfg.scene()?)?;
    write_dataset(out, &scene)?;
    Ok(scene)
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub denoiser: Denoiser,
    pub optimizer: OptimizerState,
    /// Pre-update loss of every iteration.
    pub losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.denoiser.config().clone(),
            weights: self.denoiser.weights().clone(),
            optimizer: self.optimizer.clone(),
        }
    }
}

/// Freshly initialized denoiser and optimizer for `cfg`.
pub fn init_training(cfg: &RunConfig) -> Result<(Denoiser, OptimizerState)> {
    cfg.validate()?;
    let denoiser: Denoiser = build_denoiser(&cfg.denoiser(), &mut stream(cfg.seed, &[INIT_STREAM]))?;
    let optimizer = OptimizerState::new(denoiser.net().param_count(), cfg.lr);
    Ok((denoiser, optimizer))
}

/// Runs `cfg.iters` optimizer steps with an EMA update after each.
/// `on_step(i, loss, state)` runs after step `i` (1-based) and may abort.
pub fn train(
    dataset: &Dataset,
    cfg: &RunConfig,
    mut on_step: impl FnMut(usize, f64, &Denoiser, &OptimizerState) -> Result<()>,
) -> Result<TrainOutcome> {
    if dataset.manifest.classes != cfg.classes {
        return Err(Error::ConfigMismatch(format!(
            "dataset has L={}, config has L={}",
            dataset.manifest.classes, cfg.classes
        )));
    }
    let schedule = cfg.schedule()?;
    let (mut denoiser, mut optimizer) = init_training(cfg)?;
    let mut rng = stream(cfg.seed, &[TRAIN_STREAM]);
    let mut losses = Vec::with_capacity(cfg.iters);
    for i in 1..=cfg.iters {
        let batch = random_patch_batch(dataset, cfg.n_images, cfg.patches_per_image, cfg.patch, &mut rng)?;
        let loss = denoiser.train_step(&mut optimizer, &batch, &schedule, &mut rng)?;
        let w = denoiser.weights_mut();
        ema_update(&mut w.ema, &w.params, cfg.ema_momentum)?;
        losses.push(loss);
        on_step(i, loss, &denoiser, &optimizer)?;
    }
    Ok(TrainOutcome { denoiser, optimizer, losses })
}

/// Mean noise-prediction loss over `batches` fixed batches drawn from a
/// stream independent of training.
pub fn evaluate_loss(denoiser: &Denoiser, dataset: &Dataset, schedule: &NoiseSchedule, cfg: &RunConfig, batches: usize) -> Result<f64> {
    let mut total = 0.0;
    for b in 0..batches {
        let mut rng = stream(cfg.seed, &[EVAL_STREAM, b as u64]);
        let batch = random_patch_batch(dataset, cfg.n_images, cfg.patches_per_image, cfg.patch, &mut rng)?;
        total += training_loss(&batch.visible, &batch.infrared, &batch.logits, denoiser, schedule, &mut rng)?;
    }
    Ok(total / batches.max(1) as f64)
}

fn loss_csv(losses: &[f64]) -> String {
    let mut s = String::from("iter,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(s, "{},{l}", i + 1);
    }
    s
}

/// Trains on `cfg.dataset` and writes the checkpoint to `cfg.checkpoint`
/// together with `loss.csv`. The initial weights are saved first, and
/// again every `train.checkpoint_every` steps, so a diverging run leaves the
/// last finite state behind.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let dataset = load_dataset(&cfg.dataset)?;
    let dir = cfg.checkpoint.clone();
    cfg.write_resolved(&dir)?;
    let (d0, o0) = init_training(cfg)?;
    save_checkpoint(&dir, &Checkpoint { config: d0.config().clone(), weights: d0.weights().clone(), optimizer: o0 })?;
    let mut seen = Vec::with_capacity(cfg.iters);
    let result = train(&dataset, cfg, |i, loss, d, o| {
        seen.push(loss);
        if cfg.checkpoint_every > 0 && i % cfg.checkpoint_every == 0 {
            save_checkpoint(&dir, &Checkpoint { config: d.config().clone(), weights: d.weights().clone(), optimizer: o.clone() })?;
        }
        Ok(())
    });
    write_file(&dir.join("loss.csv"), loss_csv(&seen))?;
    let outcome = result?;
    save_checkpoint(&dir, &outcome.checkpoint())?;
    Ok(outcome)
}

/// Loads a checkpoint as a denoiser, checking it against the dataset and config.
pub fn load_denoiser(cfg: &RunConfig, checkpoint: &Path, dataset: &Dataset) -> Result<Denoiser> {
    let ckpt: Checkpoint = load_checkpoint(checkpoint)?;
    if ckpt.config.num_classes != dataset.manifest.classes {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint expects L={}, dataset has L={}",
            ckpt.config.num_classes, dataset.manifest.classes
        )));
    }
    if ckpt.config.patch_size != cfg.patch {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint patch size {} vs patch.p = {}",
            ckpt.config.patch_size, cfg.patch
        )));
    }
    let mut d = Denoiser::from_parts(&ckpt.config, ckpt.weights)?;
    d.set_use_ema(cfg.use_ema);
    Ok(d)
}

/// Translates the dataset's infrared video with a denoiser already in memory.
pub fn translate_dataset(cfg: &RunConfig, denoiser: &Denoiser, dataset: &Dataset) -> Result<VideoTranslation> {
    translate_video(
        &dataset.infrared,
        &dataset.logits,
        &dataset.flows,
        denoiser,
        &cfg.schedule()?,
        &cfg.patch_config(),
        &cfg.temporal(),
        cfg.seed,
    )
}

/// Writes `gen/{i:05}.png` and `provenance.txt` under `out`.
pub fn cmd_translate(cfg: &RunConfig, checkpoint: &Path, dataset_dir: &Path, out: &Path) -> Result<VideoTranslation> {
    cfg.validate()?;
    let dataset = load_dataset(dataset_dir)?;
    let denoiser = load_denoiser(cfg, checkpoint, &dataset)?;
    let video = translate_dataset(cfg, &denoiser, &dataset)?;
    cfg.write_resolved(out)?;
    let gen = out.join("gen");
    fs::create_dir_all(&gen).map_err(|e| Error::io(&gen, e))?;
    for (i, f) in video.frames.iter().enumerate() {
        write_png(gen.join(frame_name(i, "png")), &from_model_range(f))?;
    }
    let mut prov = String::new();
    let _ = writeln!(prov, "seed={}", cfg.seed);
    let _ = writeln!(prov, "config_hash={}", cfg.hash());
    let _ = writeln!(prov, "threads={}", rayon::current_num_threads());
    let _ = writeln!(prov, "checkpoint={}", checkpoint.display());
    let _ = writeln!(prov, "dataset={}", dataset_dir.display());
    let _ = writeln!(prov, "frames={}", video.frames.len());
    let skipped: Vec<String> = video.skipped.iter().map(|s| s.to_string()).collect();
    let _ = writeln!(prov, "verification_skipped={}", skipped.join(","));
    write_file(&out.join("provenance.txt"), prov)?;
    Ok(video)
}

/// Scores `generated/{i:05}.png` against `reference/{i:05}.png`, with the
/// warped-frame error when a flow directory is given. Writes
/// `metrics.csv` and `metrics.txt` under `out`.
pub fn cmd_eval(generated: &Path, reference: &Path, flows: Option<&Path>, out: &Path) -> Result<MetricReport> {
    let gen: Vec<_> = load_png_frames(generated)?.iter().map(to_unit_range).collect();
    let refs: Vec<_> = load_png_frames(reference)?.iter().map(to_unit_range).collect();
    if gen.len() != refs.len() {
        return Err(Error::LengthMismatch(format!("{} generated vs {} reference frames", gen.len(), refs.len())));
    }
    let flow_fields = match flows {
        Some(dir) if gen.len() > 1 => Some(load_flows(dir, gen.len() - 1)?),
        _ => None,
    };
    let report = MetricReport::evaluate(&gen, &refs, flow_fields.as_deref())?;
    write_file(&out.join("metrics.csv"), report.csv())?;
    write_file(&out.join("metrics.txt"), report.summary())?;
    Ok(report)
}
