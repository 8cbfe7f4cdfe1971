use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{resize_bilinear, Tensor};

/// Network input side length.
pub const WORKING_SIZE: usize = 64;

/// Decodes an 8-bit PNG or JPEG into `(H, W, 3)` with values `v / 255`.
/// Grayscale inputs are replicated across channels.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Tensor::new([h as usize, w as usize, 3], data)
}

fn to_rgb(image: &Tensor) -> Result<RgbImage> {
    let &[h, w, 3] = image.shape() else {
        return Err(Error::shape("save_image", format!("expected (H, W, 3), got {:?}", image.shape())));
    };
    let raw = image
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    Ok(RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer length matches shape"))
}

/// Writes an `(H, W, 3)` tensor as 8-bit RGB; values are clamped to `[0, 1]`.
pub fn save_image(image: &Tensor, path: &Path) -> Result<()> {
    to_rgb(image)?
        .save(path)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Tiles equally sized `(H, W, 3)` images into one PNG, `cols` per row.
pub fn save_grid(images: &[Tensor], cols: usize, path: &Path) -> Result<()> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("save_grid needs at least one image".into()))?;
    let cols = cols.clamp(1, images.len());
    let rows = images.len().div_ceil(cols);
    let (h, w) = (first.shape()[0] as u32, first.shape()[1] as u32);
    let gap = 2;
    let mut grid = RgbImage::from_pixel(
        cols as u32 * (w + gap) - gap,
        rows as u32 * (h + gap) - gap,
        Rgb([255, 255, 255]),
    );
    for (i, t) in images.iter().enumerate() {
        if t.shape() != first.shape() {
            return Err(Error::shape("save_grid", "images differ in size"));
        }
        let tile = to_rgb(t)?;
        let (ox, oy) = ((i % cols) as u32 * (w + gap), (i / cols) as u32 * (h + gap));
        for (x, y, px) in tile.enumerate_pixels() {
            grid.put_pixel(ox + x, oy + y, *px);
        }
    }
    grid.save(path)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Resizes `(H, W, 3)` to the square network input.
pub fn to_working_size(image: &Tensor, size: usize) -> Result<Tensor> {
    resize_bilinear(image, size, size)
}
