//! Non-overlapping block tiling of an image.
//!
//! Every block is vectorized by raster scanning; blocks themselves are
//! ordered row-major over the block grid. Images whose dimensions are not
//! exact multiples of the block side are rejected rather than padded.

use crate::error::{Error, Result};
use crate::image::Image;

/// Geometry of a non-overlapping block tiling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockGeometry {
    pub block_side: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl BlockGeometry {
    /// Derives the tiling for an image, requiring exact divisibility.
    pub fn for_image(height: usize, width: usize, block_side: usize) -> Result<Self> {
        if block_side == 0 {
            return Err(Error::Geometry("block side must be positive".into()));
        }
        if height == 0 || width == 0 {
            return Err(Error::Geometry("image must be non-empty".into()));
        }
        if height % block_side != 0 || width % block_side != 0 {
            return Err(Error::Geometry(format!(
                "{}x{} image does not tile with {}x{} blocks",
                height, width, block_side, block_side
            )));
        }
        Ok(Self {
            block_side,
            grid_rows: height / block_side,
            grid_cols: width / block_side,
        })
    }

    /// Number of blocks in the grid.
    #[inline]
    pub fn block_count(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    /// Pixels per block.
    #[inline]
    pub fn block_len(&self) -> usize {
        self.block_side * self.block_side
    }

    #[inline]
    pub fn image_height(&self) -> usize {
        self.grid_rows * self.block_side
    }

    #[inline]
    pub fn image_width(&self) -> usize {
        self.grid_cols * self.block_side
    }

    fn check_image(&self, img: &Image) -> Result<()> {
        if img.height() != self.image_height() || img.width() != self.image_width() {
            return Err(Error::Geometry(format!(
                "{}x{} image does not match geometry ({}x{} blocks of side {})",
                img.height(),
                img.width(),
                self.grid_rows,
                self.grid_cols,
                self.block_side
            )));
        }
        Ok(())
    }
}

/// Splits an image into raster-scanned block vectors, row-major over blocks.
pub fn partition_blocks(img: &Image, geom: &BlockGeometry) -> Result<Vec<Vec<f64>>> {
    geom.check_image(img)?;
    let bs = geom.block_side;
    let mut blocks = Vec::with_capacity(geom.block_count());
    for br in 0..geom.grid_rows {
        for bc in 0..geom.grid_cols {
            let mut block = Vec::with_capacity(geom.block_len());
            for r in 0..bs {
                for c in 0..bs {
                    block.push(img.get(br * bs + r, bc * bs + c));
                }
            }
            blocks.push(block);
        }
    }
    Ok(blocks)
}

/// Exact inverse of [`partition_blocks`].
pub fn assemble_blocks(blocks: &[Vec<f64>], geom: &BlockGeometry) -> Result<Image> {
    if blocks.len() != geom.block_count() {
        return Err(Error::Geometry(format!(
            "expected {} blocks, got {}",
            geom.block_count(),
            blocks.len()
        )));
    }
    let bs = geom.block_side;
    let mut img = Image::zeros(geom.image_height(), geom.image_width());
    for (k, block) in blocks.iter().enumerate() {
        if block.len() != geom.block_len() {
            return Err(Error::Geometry(format!(
                "block {} has length {}, expected {}",
                k,
                block.len(),
                geom.block_len()
            )));
        }
        let br = k / geom.grid_cols;
        let bc = k % geom.grid_cols;
        for r in 0..bs {
            for c in 0..bs {
                img.set(br * bs + r, bc * bs + c, block[r * bs + c]);
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_non_tiling_dimensions() {
        assert!(BlockGeometry::for_image(10, 10, 3).is_err());
    }

    #[test]
    fn single_block_is_raster_scan() {
        let img = Image::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let geom = BlockGeometry::for_image(2, 2, 2).unwrap();
        let blocks = partition_blocks(&img, &geom).unwrap();
        assert_eq!(blocks, vec![vec![1.0, 2.0, 3.0, 4.0]]);
    }

    #[test]
    fn standard_tiling_counts() {
        let img = Image::zeros(256, 256);
        let geom = BlockGeometry::for_image(256, 256, 32).unwrap();
        let blocks = partition_blocks(&img, &geom).unwrap();
        assert_eq!(blocks.len(), 64);
        assert!(blocks.iter().all(|b| b.len() == 1024));
    }

    #[test]
    fn ramp_round_trips() {
        let img = Image::from_fn(4, 4, |r, c| (4 * r + c) as f64);
        let geom = BlockGeometry::for_image(4, 4, 2).unwrap();
        let blocks = partition_blocks(&img, &geom).unwrap();
        assert_eq!(blocks.len(), 4);
        // Top-left block holds rows 0-1, cols 0-1 of the ramp.
        assert_eq!(blocks[0], vec![0.0, 1.0, 4.0, 5.0]);
        let back = assemble_blocks(&blocks, &geom).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn zero_block_assembles_to_zero_image() {
        let geom = BlockGeometry::for_image(2, 2, 2).unwrap();
        let img = assemble_blocks(&[vec![0.0; 4]], &geom).unwrap();
        assert!(img.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn assemble_rejects_wrong_count() {
        let geom = BlockGeometry::for_image(4, 4, 2).unwrap();
        assert!(assemble_blocks(&[vec![0.0; 4]], &geom).is_err());
    }

    proptest! {
        // Partition and assemble are mutually inverse over random tilings.
        #[test]
        fn partition_assemble_inverse(
            bs in 1usize..5,
            gr in 1usize..4,
            gc in 1usize..4,
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let geom = BlockGeometry { block_side: bs, grid_rows: gr, grid_cols: gc };
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let img = Image::from_fn(gr * bs, gc * bs, |_, _| rng.gen_range(-10.0..260.0));
            let blocks = partition_blocks(&img, &geom).unwrap();
            let back = assemble_blocks(&blocks, &geom).unwrap();
            prop_assert_eq!(back, img);
        }
    }
}
