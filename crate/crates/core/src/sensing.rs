//! Block sensing operators and measurements.
//!
//! A single small Gaussian matrix senses every block of the image; the
//! induced frame operator is block diagonal and is always applied
//! matrix-free, block by block. Operators regenerate bit-identically from
//! (rows, cols, seed).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::block::{partition_blocks, BlockGeometry};
use crate::error::{Error, Result};
use crate::image::Image;

/// A dense m x n sensing matrix shared by all blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSensingOperator {
    rows: usize,
    cols: usize,
    seed: u64,
    /// Row-major entries.
    entries: Vec<f64>,
}

impl BlockSensingOperator {
    /// Wraps explicit entries, validating dimensions and finiteness.
    pub fn from_entries(rows: usize, cols: usize, seed: u64, entries: Vec<f64>) -> Result<Self> {
        if rows == 0 || rows > cols {
            return Err(Error::InvalidDimensions { rows, cols });
        }
        if entries.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} operator needs {} entries, got {}",
                rows,
                cols,
                rows * cols,
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "operator entries must be finite".into(),
            ));
        }
        Ok(Self {
            rows,
            cols,
            seed,
            entries,
        })
    }

    /// The identity operator (rows = cols), useful for full-rate sensing.
    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        Self {
            rows: n,
            cols: n,
            seed: 0,
            entries,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Measurement ratio m/n.
    pub fn subrate(&self) -> f64 {
        self.rows as f64 / self.cols as f64
    }

    #[inline]
    pub fn entry(&self, r: usize, c: usize) -> f64 {
        self.entries[r * self.cols + c]
    }

    /// y = A_B x for a single block vector.
    pub fn apply_block(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = &self.entries[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (a, &xv) in row.iter().zip(x) {
                acc += a * xv;
            }
            y[r] = acc;
        }
        y
    }

    /// x = A_B^T y for a single block.
    pub fn apply_block_transpose(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut x = vec![0.0; self.cols];
        for r in 0..self.rows {
            let yv = y[r];
            let row = &self.entries[r * self.cols..(r + 1) * self.cols];
            for (xc, &a) in x.iter_mut().zip(row) {
                *xc += a * yv;
            }
        }
        x
    }
}

/// Draws an m x n matrix with i.i.d. N(0, 1/m) entries from a generator
/// seeded by `seed`; identical inputs always give identical matrices.
pub fn make_gaussian_operator(m: usize, n: usize, seed: u64) -> Result<BlockSensingOperator> {
    if m == 0 || m > n {
        return Err(Error::InvalidDimensions { rows: m, cols: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (m as f64).sqrt();
    let entries = (0..m * n)
        .map(|_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g * scale
        })
        .collect();
    BlockSensingOperator::from_entries(m, n, seed, entries)
}

/// Largest normalized inner product between distinct columns.
pub fn mutual_coherence(op: &BlockSensingOperator) -> Result<f64> {
    let (m, n) = (op.rows, op.cols);
    if n < 2 {
        return Err(Error::InvalidParameter(
            "coherence needs at least two columns".into(),
        ));
    }
    let mut norms = vec![0.0; n];
    for c in 0..n {
        let mut s = 0.0;
        for r in 0..m {
            let v = op.entry(r, c);
            s += v * v;
        }
        if s == 0.0 {
            return Err(Error::DegenerateColumn { column: c });
        }
        norms[c] = s.sqrt();
    }
    let mut best: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let mut ip = 0.0;
            for r in 0..m {
                ip += op.entry(r, i) * op.entry(r, j);
            }
            best = best.max(ip.abs() / (norms[i] * norms[j]));
        }
    }
    Ok(best)
}

/// Welch lower bound sqrt((n - m) / (m (n - 1))) on the coherence.
pub fn welch_bound(m: usize, n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    (((n - m) as f64) / ((m * (n - 1)) as f64)).sqrt()
}

/// Per-block measurement vectors in block raster order.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    per_block: Vec<Vec<f64>>,
    subrate: f64,
}

impl MeasurementSet {
    pub fn new(per_block: Vec<Vec<f64>>, subrate: f64) -> Self {
        Self { per_block, subrate }
    }

    #[inline]
    pub fn per_block(&self) -> &[Vec<f64>] {
        &self.per_block
    }

    #[inline]
    pub fn block_count(&self) -> usize {
        self.per_block.len()
    }

    pub fn measurement_len(&self) -> usize {
        self.per_block.iter().map(|b| b.len()).sum()
    }

    #[inline]
    pub fn subrate(&self) -> f64 {
        self.subrate
    }

    /// Concatenation [b_1 b_2 ... b_G].
    pub fn concat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.measurement_len());
        for b in &self.per_block {
            out.extend_from_slice(b);
        }
        out
    }

    pub fn norm_l2(&self) -> f64 {
        self.per_block
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

fn check_operator_geometry(op: &BlockSensingOperator, geom: &BlockGeometry) -> Result<()> {
    if op.cols != geom.block_len() {
        return Err(Error::Geometry(format!(
            "operator has {} columns but blocks have {} pixels",
            op.cols,
            geom.block_len()
        )));
    }
    Ok(())
}

/// Senses every block: per_block[k] = A_B * u_k.
pub fn sense(
    img: &Image,
    op: &BlockSensingOperator,
    geom: &BlockGeometry,
) -> Result<MeasurementSet> {
    check_operator_geometry(op, geom)?;
    let blocks = partition_blocks(img, geom)?;
    let per_block: Vec<Vec<f64>> = blocks.par_iter().map(|b| op.apply_block(b)).collect();
    Ok(MeasurementSet::new(per_block, op.subrate()))
}

/// Applies the block-diagonal frame operator to an image, returning the
/// concatenated measurement vector.
pub fn apply_frame(op: &BlockSensingOperator, geom: &BlockGeometry, u: &Image) -> Result<Vec<f64>> {
    check_operator_geometry(op, geom)?;
    let blocks = partition_blocks(u, geom)?;
    let per_block: Vec<Vec<f64>> = blocks.par_iter().map(|b| op.apply_block(b)).collect();
    let mut out = Vec::with_capacity(per_block.len() * op.rows);
    for b in per_block {
        out.extend_from_slice(&b);
    }
    Ok(out)
}

/// Adjoint of [`apply_frame`]: scatters A_B^T over each block back into
/// image layout. Satisfies <A u, y> = <u, A^T y> to machine precision.
pub fn apply_frame_adjoint(
    op: &BlockSensingOperator,
    geom: &BlockGeometry,
    y: &[f64],
) -> Result<Image> {
    check_operator_geometry(op, geom)?;
    let g = geom.block_count();
    if y.len() != g * op.rows {
        return Err(Error::ShapeMismatch(format!(
            "expected {} measurements, got {}",
            g * op.rows,
            y.len()
        )));
    }
    let blocks: Vec<Vec<f64>> = (0..g)
        .into_par_iter()
        .map(|k| op.apply_block_transpose(&y[k * op.rows..(k + 1) * op.rows]))
        .collect();
    crate::block::assemble_blocks(&blocks, geom)
}
