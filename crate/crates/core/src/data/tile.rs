use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::io::{load_image, save_image};

pub const TILE_SIZE: usize = 256;

/// One grid cell; `row` and `col` count tiles from the top-left.
#[derive(Clone, Debug, PartialEq)]
pub struct Tile {
    pub row: usize,
    pub col: usize,
    pub image: Tensor,
}

/// Cuts `(H, W, C)` into non-overlapping `tile x tile` cells from the
/// top-left, dropping partial remainders. Row-major order.
pub fn tile_mother_image(image: &Tensor, tile: usize) -> Result<Vec<Tile>> {
    let &[h, w, c] = image.shape() else {
        return Err(Error::shape("tile_mother_image", format!("expected (H, W, C), got {:?}", image.shape())));
    };
    if tile == 0 {
        return Err(Error::InvalidArgument("tile size must be positive".into()));
    }
    if h < tile || w < tile {
        return Err(Error::InvalidArgument(format!(
            "image {h}x{w} is smaller than one {tile}x{tile} tile"
        )));
    }
    let src = image.data();
    let mut tiles = Vec::with_capacity((h / tile) * (w / tile));
    for row in 0..h / tile {
        for col in 0..w / tile {
            let mut data = Vec::with_capacity(tile * tile * c);
            for y in row * tile..(row + 1) * tile {
                let start = (y * w + col * tile) * c;
                data.extend_from_slice(&src[start..start + tile * c]);
            }
            tiles.push(Tile { row, col, image: Tensor::new([tile, tile, c], data)? });
        }
    }
    Ok(tiles)
}

/// Tiles an image file into `out_dir` as `<stem>_r<row>_c<col>.png`.
pub fn tile_file(path: &Path, out_dir: &Path, tile: usize) -> Result<Vec<PathBuf>> {
    let image = load_image(path)?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "tile".into());
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    tile_mother_image(&image, tile)?
        .into_iter()
        .map(|t| {
            let p = out_dir.join(format!("{stem}_r{}_c{}.png", t.row, t.col));
            save_image(&t.image, &p)?;
            Ok(p)
        })
        .collect()
}
