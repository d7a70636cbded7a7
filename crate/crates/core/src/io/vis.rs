//! PNG previews of label maps and relative depth.

use std::io::Cursor;

use image::{DynamicImage, GrayImage, ImageFormat, Luma, Rgb, RgbImage};

use crate::decode::Detection;
use crate::error::{Error, Result};
use crate::geometry::LabelMap;

/// Stable, well separated color per id; background is black.
pub fn label_color(id: u16) -> [u8; 3] {
    if id == 0 {
        return [0, 0, 0];
    }
    let h = (id as u32).wrapping_mul(0x9E37_79B9);
    let c = |shift: u32| 64 + ((h >> shift) & 0xff) as u8 % 192;
    [c(0), c(8), c(16)]
}

pub fn labels_png(labels: &LabelMap) -> Result<Vec<u8>> {
    let (w, h) = (labels.width() as u32, labels.height() as u32);
    png(RgbImage::from_fn(w, h, |x, y| Rgb(label_color(labels.get(x as usize, y as usize)))))
}

/// Gray level `255 * (1 - rel_depth)` of each pixel's owner, so closer
/// instances are darker; background is white.
pub fn depth_png(labels: &LabelMap, dets: &[Detection]) -> Result<Vec<u8>> {
    let (w, h) = (labels.width() as u32, labels.height() as u32);
    let img = GrayImage::from_fn(w, h, |x, y| match labels.get(x as usize, y as usize) {
        0 => Luma([255]),
        id => {
            let d = dets.get(id as usize - 1).map_or(0.0, |d| d.rel_depth.clamp(0.0, 1.0));
            Luma([(255.0 * (1.0 - d)).round() as u8])
        }
    });
    png(img)
}

fn png(img: impl Into<DynamicImage>) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.into()
        .write_to(&mut buf, ImageFormat::Png)
        .map(|_| buf.into_inner())
        .map_err(|e| Error::format("PNG", e.to_string()))
}
