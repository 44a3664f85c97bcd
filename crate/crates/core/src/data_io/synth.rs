//! Synthetic paired infrared/visible videos of moving shapes.
//!
//! Velocities are integral, so the emitted flow between consecutive frames
//! is exact and the semantic maps are known everywhere.

use rand::Rng;

use super::color::{to_model_range, PixelImage};
use super::logits::SemanticLogits;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::temporal::FlowField;
use crate::tensor::FrameTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    /// `origin` is the top-left corner.
    Rectangle { height: usize, width: usize },
    /// `origin` is the centre.
    Disk { radius: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    /// Position at frame 0, `(row, column)`.
    pub origin: (i64, i64),
    /// Displacement per frame, `(Δrow, Δcolumn)`.
    pub velocity: (i64, i64),
    pub color: [u8; 3],
    pub infrared: u8,
    pub class: u8,
}

impl ShapeSpec {
    fn position(&self, frame: usize) -> (i64, i64) {
        (self.origin.0 + frame as i64 * self.velocity.0, self.origin.1 + frame as i64 * self.velocity.1)
    }

    /// Inclusive bounding box `(u0, v0, u1, v1)` at `frame`.
    fn bbox(&self, frame: usize) -> (i64, i64, i64, i64) {
        let (u, v) = self.position(frame);
        match self.kind {
            ShapeKind::Rectangle { height, width } => (u, v, u + height as i64 - 1, v + width as i64 - 1),
            ShapeKind::Disk { radius } => {
                let r = radius as i64;
                (u - r, v - r, u + r, v + r)
            }
        }
    }

    fn contains(&self, frame: usize, u: i64, v: i64) -> bool {
        let (pu, pv) = self.position(frame);
        match self.kind {
            ShapeKind::Rectangle { height, width } => {
                u >= pu && u < pu + height as i64 && v >= pv && v < pv + width as i64
            }
            ShapeKind::Disk { radius } => {
                let (du, dv) = (u - pu, v - pv);
                du * du + dv * dv <= (radius * radius) as i64
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSceneConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub num_classes: usize,
    /// Drawn in order; later shapes occlude earlier ones.
    pub shapes: Vec<ShapeSpec>,
    pub background_color: [u8; 3],
    pub background_infrared: u8,
    pub background_class: u8,
    /// Softmax temperature applied to one-hot class maps; 0 keeps hard masks.
    pub tau: f64,
    /// Amplitude of uniform integer sensor noise on the infrared frames.
    pub ir_noise: u8,
    pub seed: u64,
}

impl SyntheticSceneConfig {
    /// 32×32, six frames, four classes, a sliding rectangle and a drifting disk.
    pub fn toy() -> Self {
        Self {
            height: 32,
            width: 32,
            frames: 6,
            num_classes: 4,
            shapes: vec![
                ShapeSpec {
                    kind: ShapeKind::Rectangle { height: 10, width: 12 },
                    origin: (3, 3),
                    velocity: (0, 2),
                    color: [220, 60, 40],
                    infrared: 210,
                    class: 1,
                },
                ShapeSpec {
                    kind: ShapeKind::Disk { radius: 5 },
                    origin: (20, 24),
                    velocity: (1, -2),
                    color: [60, 200, 90],
                    infrared: 150,
                    class: 2,
                },
            ],
            background_color: [70, 90, 150],
            background_infrared: 40,
            background_class: 0,
            tau: 0.25,
            ir_noise: 6,
            seed: 7,
        }
    }

    /// Random scene with non-overlapping shapes that stay inside the frame.
    pub fn random(height: usize, width: usize, frames: usize, num_classes: usize, n_shapes: usize, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidConfig("random scenes need at least two classes".into()));
        }
        let mut rng = stream(seed, &[0x5CE7E]);
        let mut shapes: Vec<ShapeSpec> = Vec::new();
        let mut attempts = 0;
        while shapes.len() < n_shapes {
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::InvalidConfig(format!("could not place {n_shapes} shapes in {height}x{width}")));
            }
            let max_extent = (height.min(width) / 3).max(2);
            let kind = if rng.random_bool(0.5) {
                ShapeKind::Rectangle { height: rng.random_range(2..=max_extent), width: rng.random_range(2..=max_extent) }
            } else {
                ShapeKind::Disk { radius: rng.random_range(1..=(max_extent / 2).max(1)) }
            };
            let shape = ShapeSpec {
                kind,
                origin: (rng.random_range(0..height as i64), rng.random_range(0..width as i64)),
                velocity: (rng.random_range(-2..=2), rng.random_range(-2..=2)),
                color: [rng.random(), rng.random(), rng.random()],
                infrared: rng.random_range(80..=255),
                class: rng.random_range(1..num_classes) as u8,
            };
            let inside = (0..frames).all(|f| {
                let (u0, v0, u1, v1) = shape.bbox(f);
                u0 >= 0 && v0 >= 0 && u1 < height as i64 && v1 < width as i64
            });
            let separate = shapes.iter().all(|other| {
                (0..frames).all(|f| {
                    let a = shape.bbox(f);
                    let b = other.bbox(f);
                    a.2 + 1 < b.0 || b.2 + 1 < a.0 || a.3 + 1 < b.1 || b.3 + 1 < a.1
                })
            });
            if inside && separate {
                shapes.push(shape);
            }
        }
        Ok(Self {
            height,
            width,
            frames,
            num_classes,
            shapes,
            background_color: [rng.random_range(0..128), rng.random_range(0..128), rng.random_range(0..128)],
            background_infrared: rng.random_range(0..60),
            background_class: 0,
            tau: 0.25,
            ir_noise: 4,
            seed,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::InvalidConfig("scene needs at least one frame of non-zero size".into()));
        }
        if self.background_class as usize >= self.num_classes {
            return Err(Error::InvalidConfig("background class outside label set".into()));
        }
        for (i, s) in self.shapes.iter().enumerate() {
            if s.class as usize >= self.num_classes {
                return Err(Error::InvalidConfig(format!("shape {i} class {} >= L", s.class)));
            }
            for f in 0..self.frames {
                let (u0, v0, u1, v1) = s.bbox(f);
                if u0 < 0 || v0 < 0 || u1 >= self.height as i64 || v1 >= self.width as i64 {
                    return Err(Error::ShapeOutOfFrame(i));
                }
            }
        }
        Ok(())
    }
}

/// Rendered scene with exact ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub infrared: Vec<PixelImage>,
    pub visible: Vec<PixelImage>,
    pub logits: Vec<SemanticLogits>,
    /// `flows[i]` maps frame `i` coordinates to frame `i + 1`.
    pub flows: Vec<FlowField>,
    /// Class id per pixel.
    pub masks: Vec<Vec<u8>>,
}

impl SyntheticScene {
    pub fn infrared_frames(&self) -> Vec<FrameTensor> {
        self.infrared.iter().map(to_model_range).collect()
    }

    pub fn visible_frames(&self) -> Vec<FrameTensor> {
        self.visible.iter().map(to_model_range).collect()
    }
}

/// Renders every frame of `cfg`.
pub fn synth_scene(cfg: &SyntheticSceneConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let owner = |frame: usize, u: usize, v: usize| -> Option<usize> {
        cfg.shapes.iter().rposition(|s| s.contains(frame, u as i64, v as i64))
    };
    let mut scene = SyntheticScene {
        infrared: Vec::with_capacity(cfg.frames),
        visible: Vec::with_capacity(cfg.frames),
        logits: Vec::with_capacity(cfg.frames),
        flows: Vec::with_capacity(cfg.frames.saturating_sub(1)),
        masks: Vec::with_capacity(cfg.frames),
    };
    for f in 0..cfg.frames {
        let mut rng = stream(cfg.seed, &[f as u64]);
        let mut ir = Vec::with_capacity(h * w);
        let mut vis = Vec::with_capacity(h * w * 3);
        let mut mask = Vec::with_capacity(h * w);
        let mut flow = FrameTensor::zeros(h, w, 2);
        for u in 0..h {
            for v in 0..w {
                let (color, intensity, class) = match owner(f, u, v) {
                    Some(k) => {
                        let s = &cfg.shapes[k];
                        flow.set(u, v, 0, s.velocity.0 as f32);
                        flow.set(u, v, 1, s.velocity.1 as f32);
                        (s.color, s.infrared, s.class)
                    }
                    None => (cfg.background_color, cfg.background_infrared, cfg.background_class),
                };
                let noise = if cfg.ir_noise > 0 {
                    rng.random_range(-(cfg.ir_noise as i32)..=cfg.ir_noise as i32)
                } else {
                    0
                };
                ir.push((intensity as i32 + noise).clamp(0, 255) as u8);
                vis.extend_from_slice(&color);
                mask.push(class);
            }
        }
        scene.infrared.push(PixelImage::new(h, w, 1, ir)?);
        scene.visible.push(PixelImage::new(h, w, 3, vis)?);
        scene.logits.push(SemanticLogits::softened(h, w, cfg.num_classes, &mask, cfg.tau)?);
        scene.masks.push(mask);
        if f + 1 < cfg.frames {
            scene.flows.push(FlowField::new(flow)?);
        }
    }
    Ok(scene)
}
