//! Partitioning full-resolution images into square tiles.

use crate::error::{Error, Result};
use crate::image::GrayImage;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tile {
    pub row: usize,
    pub col: usize,
    pub image: GrayImage,
}

/// Non-overlapping `size x size` tiles covering an image, in row-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileGrid {
    pub size: usize,
    pub rows: usize,
    pub cols: usize,
    pub tiles: Vec<Tile>,
}

/// Splits `image` into a row-major grid of `n x n` tiles. Both dimensions
/// must be multiples of `n`; see [`padded_dims`] and
/// [`GrayImage::pad_replicate`] for other sizes.
pub fn tile_image(image: &GrayImage, n: usize) -> Result<TileGrid> {
    if n == 0 || image.width() % n != 0 || image.height() % n != 0 {
        let (pw, ph) = padded_dims(image.width(), image.height(), n.max(1));
        return Err(Error::Image(format!(
            "{}x{} is not divisible into {n}x{n} tiles; pad to {pw}x{ph} (replicate edges) first",
            image.width(),
            image.height()
        )));
    }
    let rows = image.height() / n;
    let cols = image.width() / n;
    let mut tiles = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            tiles.push(Tile {
                row,
                col,
                image: image.crop(col * n, row * n, n, n)?,
            });
        }
    }
    Ok(TileGrid { size: n, rows, cols, tiles })
}

/// Reassembles a grid produced by [`tile_image`].
pub fn untile(grid: &TileGrid) -> Result<GrayImage> {
    let n = grid.size;
    if grid.tiles.len() != grid.rows * grid.cols {
        return Err(Error::Image(format!(
            "{} tiles for a {}x{} grid",
            grid.tiles.len(),
            grid.rows,
            grid.cols
        )));
    }
    let width = grid.cols * n;
    let height = grid.rows * n;
    let mut pixels = vec![0u8; width * height];
    let mut covered = vec![false; grid.rows * grid.cols];
    for t in &grid.tiles {
        if t.row >= grid.rows || t.col >= grid.cols || t.image.width() != n || t.image.height() != n {
            return Err(Error::Image(format!("tile ({}, {}) does not fit the grid", t.row, t.col)));
        }
        let slot = &mut covered[t.row * grid.cols + t.col];
        if *slot {
            return Err(Error::Image(format!("tile ({}, {}) given twice", t.row, t.col)));
        }
        *slot = true;
        for y in 0..n {
            let dst = (t.row * n + y) * width + t.col * n;
            pixels[dst..dst + n].copy_from_slice(&t.image.pixels()[y * n..(y + 1) * n]);
        }
    }
    GrayImage::new(width, height, pixels)
}

/// Smallest multiples of `n` covering `width x height`.
pub fn padded_dims(width: usize, height: usize, n: usize) -> (usize, usize) {
    (width.div_ceil(n) * n, height.div_ceil(n) * n)
}
