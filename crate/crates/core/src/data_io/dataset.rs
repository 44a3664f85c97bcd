//! On-disk dataset layout.
//!
//! ```text
//! ir/{i:05}.png  vis/{i:05}.png  logits/{i:05}.tct  flow/{i:05}.tct  masks/{i:05}.tct  manifest.txt
//! ```
//! `flow/{i}` relates frames `i` and `i + 1`; `manifest.txt` holds `H`, `W`, `N`, `L`.

use std::fs;
use std::path::{Path, PathBuf};

use super::color::{to_model_range, PixelImage};
use super::container::{read_tensor, write_tensor, Tensor, TensorData};
use super::image_io::{read_png, write_png};
use super::logits::SemanticLogits;
use super::synth::SyntheticScene;
use crate::error::{Error, Result};
use crate::temporal::FlowField;
use crate::tensor::FrameTensor;

pub fn frame_name(i: usize, ext: &str) -> String {
    format!("{i:05}.{ext}")
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Writes a rendered scene in the dataset layout.
pub fn write_dataset(dir: impl AsRef<Path>, scene: &SyntheticScene) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["ir", "vis", "logits", "flow", "masks"] {
        mkdir(&dir.join(sub))?;
    }
    let n = scene.visible.len();
    let (h, w) = (scene.visible[0].height, scene.visible[0].width);
    let l = scene.logits[0].classes();
    for i in 0..n {
        write_png(dir.join("ir").join(frame_name(i, "png")), &scene.infrared[i])?;
        write_png(dir.join("vis").join(frame_name(i, "png")), &scene.visible[i])?;
        write_tensor(dir.join("logits").join(frame_name(i, "tct")), &Tensor::from_frame(scene.logits[i].as_tensor()))?;
        let mask = Tensor::new(vec![h, w], TensorData::U8(scene.masks[i].clone()))?;
        write_tensor(dir.join("masks").join(frame_name(i, "tct")), &mask)?;
    }
    for (i, f) in scene.flows.iter().enumerate() {
        write_tensor(dir.join("flow").join(frame_name(i, "tct")), &Tensor::from_frame(f.as_tensor()))?;
    }
    let manifest = format!("H={h}\nW={w}\nN={n}\nL={l}\n");
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Manifest {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub classes: usize,
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join("manifest.txt");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut vals = [None; 4];
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("manifest line {line:?}")))?;
        let v: usize = v.trim().parse().map_err(|_| Error::InvalidConfig(format!("manifest value {line:?}")))?;
        let slot = match k.trim() {
            "H" => 0,
            "W" => 1,
            "N" => 2,
            "L" => 3,
            other => return Err(Error::InvalidConfig(format!("unknown manifest key {other:?}"))),
        };
        vals[slot] = Some(v);
    }
    let get = |i: usize, k: &str| vals[i].ok_or_else(|| Error::InvalidConfig(format!("manifest lacks {k}")));
    Ok(Manifest { height: get(0, "H")?, width: get(1, "W")?, frames: get(2, "N")?, classes: get(3, "L")? })
}

/// A loaded video in model range.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub infrared: Vec<FrameTensor>,
    pub visible: Vec<FrameTensor>,
    pub logits: Vec<SemanticLogits>,
    pub flows: Vec<FlowField>,
}

impl Dataset {
    pub fn from_scene(scene: &SyntheticScene) -> Self {
        let v = &scene.visible[0];
        Self {
            manifest: Manifest {
                height: v.height,
                width: v.width,
                frames: scene.visible.len(),
                classes: scene.logits[0].classes(),
            },
            infrared: scene.infrared_frames(),
            visible: scene.visible_frames(),
            logits: scene.logits.clone(),
            flows: scene.flows.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.infrared.len()
    }

    pub fn is_empty(&self) -> bool {
        self.infrared.is_empty()
    }
}

fn load_png(path: PathBuf, channels: usize, m: &Manifest) -> Result<FrameTensor> {
    let img: PixelImage = read_png(&path)?;
    if img.channels != channels {
        return Err(Error::ChannelMismatch { expected: channels, found: img.channels });
    }
    if (img.height, img.width) != (m.height, m.width) {
        return Err(Error::shape(format!("{}: {}x{} vs manifest {}x{}", path.display(), img.height, img.width, m.height, m.width)));
    }
    Ok(to_model_range(&img))
}

/// Loads a dataset directory. The visible frames are optional so that
/// infrared-only inputs can be translated.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let m = read_manifest(dir)?;
    let mut ds = Dataset { manifest: m, infrared: vec![], visible: vec![], logits: vec![], flows: vec![] };
    for i in 0..m.frames {
        ds.infrared.push(load_png(dir.join("ir").join(frame_name(i, "png")), 1, &m)?);
        let vis = dir.join("vis").join(frame_name(i, "png"));
        if vis.exists() {
            ds.visible.push(load_png(vis, 3, &m)?);
        }
        let logits = read_tensor(dir.join("logits").join(frame_name(i, "tct")))?.to_frame()?;
        if logits.shape() != (m.height, m.width, m.classes) {
            return Err(Error::shape(format!("logits {i}: {:?}", logits.shape())));
        }
        ds.logits.push(SemanticLogits::new(logits)?);
    }
    if !ds.visible.is_empty() && ds.visible.len() != m.frames {
        return Err(Error::LengthMismatch(format!("{} visible frames for N={}", ds.visible.len(), m.frames)));
    }
    ds.flows = load_flows(dir.join("flow"), m.frames.saturating_sub(1))?;
    Ok(ds)
}

/// Reads `count` flow fields `{i:05}.tct` from `dir`.
pub fn load_flows(dir: impl AsRef<Path>, count: usize) -> Result<Vec<FlowField>> {
    (0..count)
        .map(|i| FlowField::new(read_tensor(dir.as_ref().join(frame_name(i, "tct")))?.to_frame()?))
        .collect()
}

/// Reads every `{i:05}.png` in `dir` in index order.
pub fn load_png_frames(dir: impl AsRef<Path>) -> Result<Vec<PixelImage>> {
    let dir = dir.as_ref();
    let mut frames = Vec::new();
    loop {
        let p = dir.join(frame_name(frames.len(), "png"));
        if !p.exists() {
            break;
        }
        frames.push(read_png(&p)?);
    }
    if frames.is_empty() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "no frames")));
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::synth::{synth_scene, SyntheticSceneConfig};

    #[test]
    fn write_then_load_matches_scene() {
        let dir = tempfile::tempdir().unwrap();
        let scene = synth_scene(&SyntheticSceneConfig::toy()).unwrap();
        write_dataset(dir.path(), &scene).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        let direct = Dataset::from_scene(&scene);
        assert_eq!(ds.manifest, direct.manifest);
        assert_eq!(ds.infrared, direct.infrared);
        assert_eq!(ds.visible, direct.visible);
        assert_eq!(ds.logits, direct.logits);
        assert_eq!(ds.flows, direct.flows);
    }

    #[test]
    fn manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("manifest.txt"), "H=4\nW=4\nN=1\n").unwrap();
        assert!(read_manifest(dir.path()).is_err());
        fs::write(dir.path().join("manifest.txt"), "H=4\nW=4\nN=1\nL=2\nQ=1\n").unwrap();
        assert!(read_manifest(dir.path()).is_err());
    }
}
