//! Color conversion and 8-bit ↔ model-range mapping.

use crate::error::{Error, Result};
use crate::tensor::FrameTensor;

const KR: f64 = 0.299;
const KG: f64 = 0.587;
const KB: f64 = 0.114;
const CB_SCALE: f64 = 0.564;
const CR_SCALE: f64 = 0.713;

/// BT.601 full-range YCbCr for an RGB image in `[0, 1]`.
pub fn rgb_to_ycbcr(image: &FrameTensor) -> Result<FrameTensor> {
    expect_rgb(image)?;
    let mut out = image.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let (r, g, b) = (px[0] as f64, px[1] as f64, px[2] as f64);
        let y = KR * r + KG * g + KB * b;
        px[0] = y as f32;
        px[1] = (0.5 + (b - y) * CB_SCALE) as f32;
        px[2] = (0.5 + (r - y) * CR_SCALE) as f32;
    }
    Ok(out)
}

/// Inverse of [`rgb_to_ycbcr`].
pub fn ycbcr_to_rgb(image: &FrameTensor) -> Result<FrameTensor> {
    expect_rgb(image)?;
    let mut out = image.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let (y, cb, cr) = (px[0] as f64, px[1] as f64, px[2] as f64);
        let r = y + (cr - 0.5) / CR_SCALE;
        let b = y + (cb - 0.5) / CB_SCALE;
        let g = (y - KR * r - KB * b) / KG;
        px[0] = r as f32;
        px[1] = g as f32;
        px[2] = b as f32;
    }
    Ok(out)
}

/// Luminance plane. Single-channel input is returned as is.
pub fn luminance(image: &FrameTensor) -> Result<FrameTensor> {
    match image.channels() {
        1 => Ok(image.clone()),
        3 => {
            let data = image
                .data()
                .chunks_exact(3)
                .map(|p| (KR * p[0] as f64 + KG * p[1] as f64 + KB * p[2] as f64) as f32)
                .collect();
            FrameTensor::from_vec(image.height(), image.width(), 1, data)
        }
        c => Err(Error::ChannelMismatch { expected: 3, found: c }),
    }
}

fn expect_rgb(image: &FrameTensor) -> Result<()> {
    if image.channels() != 3 {
        return Err(Error::ChannelMismatch { expected: 3, found: image.channels() });
    }
    Ok(())
}

/// 8-bit raster, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl PixelImage {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * channels || height == 0 || width == 0 || channels == 0 {
            return Err(Error::shape(format!(
                "{} bytes for a {height}x{width}x{channels} image",
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data })
    }
}

/// `x = 2·(v/255) − 1`.
pub fn to_model_range(image: &PixelImage) -> FrameTensor {
    let data = image.data.iter().map(|&v| (2.0 * (v as f64 / 255.0) - 1.0) as f32).collect();
    FrameTensor::from_vec(image.height, image.width, image.channels, data).expect("validated image")
}

/// Clamps to `[-1, 1]`, maps to `[0, 255]` and rounds half away from zero.
pub fn from_model_range(t: &FrameTensor) -> PixelImage {
    let data = t
        .data()
        .iter()
        .map(|&x| {
            let x = if x.is_nan() { -1.0 } else { (x as f64).clamp(-1.0, 1.0) };
            ((x + 1.0) * 0.5 * 255.0).round() as u8
        })
        .collect();
    PixelImage { height: t.height(), width: t.width(), channels: t.channels(), data }
}

/// `v / 255`, for metrics.
pub fn to_unit_range(image: &PixelImage) -> FrameTensor {
    let data = image.data.iter().map(|&v| (v as f64 / 255.0) as f32).collect();
    FrameTensor::from_vec(image.height, image.width, image.channels, data).expect("validated image")
}

/// Model range `[-1, 1]` to unit range `[0, 1]`, clamped.
pub fn model_to_unit(t: &FrameTensor) -> FrameTensor {
    t.map(|x| ((x + 1.0) * 0.5).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    #[test]
    fn luminance_of_primaries() {
        let white = FrameTensor::filled(1, 1, 3, 1.0);
        assert!((rgb_to_ycbcr(&white).unwrap().get(0, 0, 0) - 1.0).abs() < 1e-7);
        let red = FrameTensor::from_vec(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        let ycc = rgb_to_ycbcr(&red).unwrap();
        assert!((ycc.get(0, 0, 0) - 0.299).abs() < 1e-7);
        assert!((luminance(&red).unwrap().get(0, 0, 0) - 0.299).abs() < 1e-7);
        assert!(matches!(
            rgb_to_ycbcr(&FrameTensor::zeros(2, 2, 1)),
            Err(Error::ChannelMismatch { expected: 3, found: 1 })
        ));
    }

    #[test]
    fn ycbcr_round_trip() {
        let mut rng = seeded(5);
        let img = FrameTensor::from_fn(9, 7, 3, |_, _, _| rng.random::<f32>());
        let back = ycbcr_to_rgb(&rgb_to_ycbcr(&img).unwrap()).unwrap();
        assert!(back.max_abs_diff(&img) <= 1e-6);
    }

    #[test]
    fn model_range_endpoints_and_round_trip() {
        let all = PixelImage::new(1, 256, 1, (0..=255u8).collect()).unwrap();
        let m = to_model_range(&all);
        assert_eq!(m.get(0, 0, 0), -1.0);
        assert_eq!(m.get(0, 255, 0), 1.0);
        assert!((m.get(0, 128, 0) - 0.003_921_6).abs() < 1e-6);
        assert_eq!(from_model_range(&m), all);
        let out = from_model_range(&FrameTensor::from_vec(1, 3, 1, vec![-4.0, 7.0, f32::NAN]).unwrap());
        assert_eq!(out.data, vec![0, 255, 0]);
    }
}
