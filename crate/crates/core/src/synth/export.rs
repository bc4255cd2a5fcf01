use std::path::Path;

use image::{Rgb, RgbImage};

use super::render::ImageRecord;
use crate::error::Result;

/// Quantizes an image to 8-bit RGB.
pub fn to_rgb8(image: &ImageRecord) -> RgbImage {
    let size = image.size as u32;
    RgbImage::from_fn(size, size, |x, y| {
        let [r, g, b] = image.rgb(y as usize, x as usize);
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([q(r), q(g), q(b)])
    })
}

/// Writes `<dir>/<id>.png`.
pub fn export_png(image: &ImageRecord, dir: &Path, id: &str) -> Result<()> {
    to_rgb8(image).save(dir.join(format!("{id}.png")))?;
    Ok(())
}
