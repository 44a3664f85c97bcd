//! Tensor container, raster I/O, color conversion and synthetic scenes.

pub mod color;
pub mod container;
pub mod dataset;
pub mod image_io;
mod logits;
pub mod synth;

pub use color::{from_model_range, luminance, model_to_unit, rgb_to_ycbcr, to_model_range, to_unit_range, ycbcr_to_rgb, PixelImage};
pub use container::{read_tensor, write_tensor, Tensor, TensorData};
pub use dataset::{frame_name, load_dataset, load_flows, load_png_frames, read_manifest, write_dataset, Dataset, Manifest};
pub use image_io::{read_png, write_png};
pub use logits::SemanticLogits;
pub use synth::{synth_scene, ShapeKind, ShapeSpec, SyntheticScene, SyntheticSceneConfig};
