//! 8-bit PNG import and export.

use std::path::Path;

use image::{ColorType, DynamicImage};

use super::color::PixelImage;
use crate::error::{Error, Result};

/// Reads a PNG as grayscale (1 channel) or RGB (3 channels).
pub fn read_png(path: impl AsRef<Path>) -> Result<PixelImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image { path: path.into(), source })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = matches!(img, DynamicImage::ImageLuma8(_) | DynamicImage::ImageLuma16(_));
    if gray {
        PixelImage::new(h, w, 1, img.to_luma8().into_raw())
    } else {
        PixelImage::new(h, w, 3, img.to_rgb8().into_raw())
    }
}

pub fn write_png(path: impl AsRef<Path>, img: &PixelImage) -> Result<()> {
    let path = path.as_ref();
    let color = match img.channels {
        1 => ColorType::L8,
        3 => ColorType::Rgb8,
        c => return Err(Error::ChannelMismatch { expected: 3, found: c }),
    };
    image::save_buffer_with_format(
        path,
        &img.data,
        img.width as u32,
        img.height as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|source| Error::Image { path: path.into(), source })
}
