//! Patch-based sparse representation.
//!
//! The refinement stages group similar patches with a nonlocal search,
//! transform each group (a per-group adaptive basis, a fixed
//! DCT-plus-Haar transform, or both in cascade), hard-threshold the
//! coefficients, invert, and aggregate the patch estimates back into an
//! image by per-pixel averaging. Also provides the Chebyshev similarity
//! bound used as a diagnostic for the restoration error.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;

/// Grouping and patch geometry. Defaults give 6x6 patches in groups of 60
/// (36 x 60 group matrices), a stride of 2 pixels, and a 30x30 search
/// window for collecting groups.
#[derive(Debug, Clone, Copy)]
pub struct PatchConfig {
    pub patch_side: usize,
    pub group_size: usize,
    pub stride: usize,
    pub search_window: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            patch_side: 6,
            group_size: 60,
            stride: 2,
            search_window: 30,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_side == 0 || self.group_size == 0 {
            return Err(Error::InvalidParameter(
                "patch side and group size must be positive".into(),
            ));
        }
        if self.stride == 0 {
            return Err(Error::InvalidParameter("stride must be at least 1".into()));
        }
        if self.search_window < self.patch_side {
            return Err(Error::InvalidParameter(
                "search window must be at least the patch size".into(),
            ));
        }
        Ok(())
    }

    /// Patch length s = patch_side^2.
    #[inline]
    pub fn patch_len(&self) -> usize {
        self.patch_side * self.patch_side
    }
}

/// Which sparsifying transform the synthesis stage uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformMode {
    /// Fixed 2-D DCT per patch plus 1-D Haar along the group axis.
    Global,
    /// Per-group adaptive eigenbasis of the sample covariance.
    Local,
    /// Local stage first, then a global stage on its output.
    Combined,
}

/// A reference patch with its matched stack.
#[derive(Debug, Clone)]
pub struct PatchGroup {
    pub reference: (usize, usize),
    /// Member top-left positions, reference first.
    pub members: Vec<(usize, usize)>,
    /// s x F matrix, one raster-scanned patch per column.
    pub data: DMatrix<f64>,
    /// True when the window held fewer candidates than the group size and
    /// the best match was repeated to fill it.
    pub padded: bool,
}

/// Top-left positions of the stride grid, with the bottom and right
/// remainder positions forced so that coverage is total.
pub fn patch_positions(height: usize, width: usize, cfg: &PatchConfig) -> Vec<(usize, usize)> {
    let axis = |len: usize| -> Vec<usize> {
        let last = len - cfg.patch_side;
        let mut v: Vec<usize> = (0..=last).step_by(cfg.stride).collect();
        if *v.last().unwrap() != last {
            v.push(last);
        }
        v
    };
    let rows = axis(height);
    let cols = axis(width);
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            out.push((r, c));
        }
    }
    out
}

fn copy_patch(u: &Image, r0: usize, c0: usize, side: usize, out: &mut [f64]) {
    let mut k = 0;
    for r in 0..side {
        for c in 0..side {
            out[k] = u.get(r0 + r, c0 + c);
            k += 1;
        }
    }
}

/// All patches at the coverage positions, raster-vectorized.
pub fn extract_patches(u: &Image, cfg: &PatchConfig) -> Result<Vec<((usize, usize), Vec<f64>)>> {
    cfg.validate()?;
    if u.height() < cfg.patch_side || u.width() < cfg.patch_side {
        return Err(Error::DegenerateInput(format!(
            "{}x{} image is smaller than the patch side {}",
            u.height(),
            u.width(),
            cfg.patch_side
        )));
    }
    let positions = patch_positions(u.height(), u.width(), cfg);
    let s = cfg.patch_len();
    Ok(positions
        .into_iter()
        .map(|(r, c)| {
            let mut v = vec![0.0; s];
            copy_patch(u, r, c, cfg.patch_side, &mut v);
            ((r, c), v)
        })
        .collect())
}

/// Per-pixel average of all covering patches; errors if any pixel is
/// uncovered.
pub fn aggregate_patches(
    patches: &[((usize, usize), Vec<f64>)],
    patch_side: usize,
    height: usize,
    width: usize,
) -> Result<Image> {
    let mut sum = vec![0.0; height * width];
    let mut count = vec![0u32; height * width];
    for ((r0, c0), data) in patches {
        let mut k = 0;
        for r in 0..patch_side {
            for c in 0..patch_side {
                let idx = (r0 + r) * width + (c0 + c);
                sum[idx] += data[k];
                count[idx] += 1;
                k += 1;
            }
        }
    }
    for (i, &cnt) in count.iter().enumerate() {
        if cnt == 0 {
            return Err(Error::Coverage {
                row: i / width,
                col: i % width,
            });
        }
        sum[i] /= cnt as f64;
    }
    Image::new(height, width, sum)
}

/// Finds the group of the `group_size` patches most similar to the
/// reference inside its search window. The reference comes first; the rest
/// are ordered by (SSD, raster position of the candidate). If the window
/// holds fewer candidates than the group size, the best match is repeated
/// and the group is flagged as padded.
pub fn match_group(reference: (usize, usize), u: &Image, cfg: &PatchConfig) -> Result<PatchGroup> {
    cfg.validate()?;
    let (h, w) = (u.height(), u.width());
    let last_r = h.checked_sub(cfg.patch_side).ok_or_else(|| {
        Error::DegenerateInput("image smaller than patch".into())
    })?;
    let last_c = w - cfg.patch_side;
    if reference.0 > last_r || reference.1 > last_c {
        return Err(Error::InvalidParameter(format!(
            "reference position {:?} out of range",
            reference
        )));
    }
    let s = cfg.patch_len();
    let mut ref_patch = vec![0.0; s];
    copy_patch(u, reference.0, reference.1, cfg.patch_side, &mut ref_patch);

    // Candidates whose patches lie inside the training window centered on
    // the reference patch.
    let off = (cfg.search_window - cfg.patch_side) / 2;
    let r_lo = reference.0.saturating_sub(off);
    let r_hi = (reference.0 + off).min(last_r);
    let c_lo = reference.1.saturating_sub(off);
    let c_hi = (reference.1 + off).min(last_c);

    let mut scored: Vec<(f64, usize, (usize, usize))> = Vec::new();
    let mut cand = vec![0.0; s];
    for r in r_lo..=r_hi {
        for c in c_lo..=c_hi {
            if (r, c) == reference {
                continue;
            }
            copy_patch(u, r, c, cfg.patch_side, &mut cand);
            let mut ssd = 0.0;
            for (a, b) in ref_patch.iter().zip(&cand) {
                let d = a - b;
                ssd += d * d;
            }
            scored.push((ssd, r * w + c, (r, c)));
        }
    }
    scored.sort_unstable_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
    });

    let mut members = Vec::with_capacity(cfg.group_size);
    members.push(reference);
    for &(_, _, pos) in scored.iter().take(cfg.group_size - 1) {
        members.push(pos);
    }
    let mut padded = false;
    if members.len() < cfg.group_size {
        padded = true;
        let fill = *members.get(1).unwrap_or(&reference);
        while members.len() < cfg.group_size {
            members.push(fill);
        }
    }

    let mut data = DMatrix::zeros(s, cfg.group_size);
    let mut col = vec![0.0; s];
    for (j, &(r, c)) in members.iter().enumerate() {
        copy_patch(u, r, c, cfg.patch_side, &mut col);
        for (i, &v) in col.iter().enumerate() {
            data[(i, j)] = v;
        }
    }
    Ok(PatchGroup {
        reference,
        members,
        data,
        padded,
    })
}

/// Orthogonal eigenbasis of the group's sample covariance (mean not
/// removed), eigenvectors ordered by descending eigenvalue. The sign of
/// each vector is fixed so its largest-magnitude component is positive.
pub fn local_basis(data: &DMatrix<f64>) -> DMatrix<f64> {
    let s = data.nrows();
    let f = data.ncols().max(1) as f64;
    let cov = data * data.transpose() / f;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut basis = DMatrix::zeros(s, s);
    for (k, &idx) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(idx);
        let mut max_abs = 0.0;
        let mut max_val = 0.0;
        for &v in col.iter() {
            if v.abs() > max_abs {
                max_abs = v.abs();
                max_val = v;
            }
        }
        let sign = if max_val < 0.0 { -1.0 } else { 1.0 };
        for i in 0..s {
            basis[(i, k)] = sign * col[i];
        }
    }
    basis
}

fn dct_matrix(p: usize) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(p, p);
    let c0 = (1.0 / p as f64).sqrt();
    let ck = (2.0 / p as f64).sqrt();
    for k in 0..p {
        for i in 0..p {
            let scale = if k == 0 { c0 } else { ck };
            t[(k, i)] =
                scale * ((std::f64::consts::PI * (2 * i + 1) as f64 * k as f64) / (2.0 * p as f64)).cos();
        }
    }
    t
}

fn next_pow2(n: usize) -> usize {
    let mut p = 1;
    while p < n {
        p <<= 1;
    }
    p
}

fn haar_forward(v: &mut [f64]) {
    let mut n = v.len();
    let mut buf = vec![0.0; n];
    while n > 1 {
        let half = n / 2;
        for i in 0..half {
            let a = v[2 * i];
            let b = v[2 * i + 1];
            buf[i] = (a + b) * std::f64::consts::FRAC_1_SQRT_2;
            buf[half + i] = (a - b) * std::f64::consts::FRAC_1_SQRT_2;
        }
        v[..n].copy_from_slice(&buf[..n]);
        n = half;
    }
}

fn haar_inverse(v: &mut [f64]) {
    let len = v.len();
    let mut buf = vec![0.0; len];
    let mut n = 2;
    while n <= len {
        let half = n / 2;
        for i in 0..half {
            let a = v[i];
            let b = v[half + i];
            buf[2 * i] = (a + b) * std::f64::consts::FRAC_1_SQRT_2;
            buf[2 * i + 1] = (a - b) * std::f64::consts::FRAC_1_SQRT_2;
        }
        v[..n].copy_from_slice(&buf[..n]);
        n *= 2;
    }
}

/// Fixed separable transform of a group: orthonormal 2-D DCT-II on each
/// patch, then a full orthonormal Haar decomposition along the group axis.
/// The group is padded to a power-of-two width by repeating its last
/// column; the padded columns are discarded on synthesis. Returns an
/// s x padded-width coefficient matrix.
pub fn global_forward(data: &DMatrix<f64>, patch_side: usize) -> DMatrix<f64> {
    let s = data.nrows();
    debug_assert_eq!(s, patch_side * patch_side);
    let f = data.ncols();
    let fp = next_pow2(f);
    let t = dct_matrix(patch_side);
    let mut coeffs = DMatrix::zeros(s, fp);
    for j in 0..fp {
        let src = j.min(f - 1);
        let patch = DMatrix::from_fn(patch_side, patch_side, |r, c| {
            data[(r * patch_side + c, src)]
        });
        let y = &t * patch * t.transpose();
        for r in 0..patch_side {
            for c in 0..patch_side {
                coeffs[(r * patch_side + c, j)] = y[(r, c)];
            }
        }
    }
    let mut row = vec![0.0; fp];
    for i in 0..s {
        for j in 0..fp {
            row[j] = coeffs[(i, j)];
        }
        haar_forward(&mut row);
        for j in 0..fp {
            coeffs[(i, j)] = row[j];
        }
    }
    coeffs
}

/// Inverse of [`global_forward`]; returns the first `group_size` columns.
pub fn global_inverse(coeffs: &DMatrix<f64>, patch_side: usize, group_size: usize) -> DMatrix<f64> {
    let s = coeffs.nrows();
    let fp = coeffs.ncols();
    let t = dct_matrix(patch_side);
    let mut work = coeffs.clone();
    let mut row = vec![0.0; fp];
    for i in 0..s {
        for j in 0..fp {
            row[j] = work[(i, j)];
        }
        haar_inverse(&mut row);
        for j in 0..fp {
            work[(i, j)] = row[j];
        }
    }
    let mut out = DMatrix::zeros(s, group_size);
    for j in 0..group_size {
        let y = DMatrix::from_fn(patch_side, patch_side, |r, c| work[(r * patch_side + c, j)]);
        let x = t.transpose() * y * &t;
        for r in 0..patch_side {
            for c in 0..patch_side {
                out[(r * patch_side + c, j)] = x[(r, c)];
            }
        }
    }
    out
}

/// Zeroes coefficients with |c| < tau. Row 0 — the per-patch DC content in
/// both the local and the global coefficient layout — is exempt, so patch
/// means survive arbitrary thresholds.
pub fn hard_threshold(coeffs: &mut DMatrix<f64>, tau: f64) {
    if tau <= 0.0 {
        return;
    }
    for i in 1..coeffs.nrows() {
        for j in 0..coeffs.ncols() {
            if coeffs[(i, j)].abs() < tau {
                coeffs[(i, j)] = 0.0;
            }
        }
    }
}

/// Robust noise level from the finest-scale diagonal Haar detail:
/// 1.4826 * median |d| over disjoint 2x2 blocks. Zero on images too small
/// to form a block and on noiseless piecewise-constant content.
pub fn estimate_noise_sigma(u: &Image) -> f64 {
    let (h, w) = (u.height(), u.width());
    if h < 2 || w < 2 {
        return 0.0;
    }
    let mut details = Vec::with_capacity((h / 2) * (w / 2));
    for r in (0..h - 1).step_by(2) {
        for c in (0..w - 1).step_by(2) {
            let d = 0.5 * (u.get(r, c) - u.get(r, c + 1) - u.get(r + 1, c) + u.get(r + 1, c + 1));
            details.push(d.abs());
        }
    }
    details.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = details.len();
    let median = if n % 2 == 1 {
        details[n / 2]
    } else {
        0.5 * (details[n / 2 - 1] + details[n / 2])
    };
    1.4826 * median
}

/// Default hard-threshold level for an estimated noise sigma.
pub fn threshold_for_sigma(sigma: f64) -> f64 {
    2.7 * sigma
}

fn synthesis_stage(u: &Image, local: bool, cfg: &PatchConfig, tau: f64) -> Result<Image> {
    let positions = patch_positions(u.height(), u.width(), cfg);
    let groups: Vec<(Vec<(usize, usize)>, DMatrix<f64>)> = positions
        .par_iter()
        .map(|&pos| {
            let group = match_group(pos, u, cfg)?;
            let estimate = if local {
                let basis = local_basis(&group.data);
                let mut coeffs = basis.transpose() * &group.data;
                hard_threshold(&mut coeffs, tau);
                &basis * coeffs
            } else {
                let mut coeffs = global_forward(&group.data, cfg.patch_side);
                hard_threshold(&mut coeffs, tau);
                global_inverse(&coeffs, cfg.patch_side, cfg.group_size)
            };
            Ok((group.members, estimate))
        })
        .collect::<Result<Vec<_>>>()?;

    // Aggregation in fixed group order so sums are schedule-independent.
    let (h, w) = (u.height(), u.width());
    let side = cfg.patch_side;
    let mut sum = vec![0.0; h * w];
    let mut count = vec![0u32; h * w];
    for (members, estimate) in &groups {
        for (j, &(r0, c0)) in members.iter().enumerate() {
            let mut k = 0;
            for r in 0..side {
                for c in 0..side {
                    let idx = (r0 + r) * w + (c0 + c);
                    sum[idx] += estimate[(k, j)];
                    count[idx] += 1;
                    k += 1;
                }
            }
        }
    }
    for (i, &cnt) in count.iter().enumerate() {
        if cnt == 0 {
            return Err(Error::Coverage {
                row: i / w,
                col: i % w,
            });
        }
        sum[i] /= cnt as f64;
    }
    Image::new(h, w, sum)
}

/// Runs the grouping / transform / threshold / inverse / weighting pipeline
/// once per stage and returns the synthesized image. `Combined` runs the
/// local stage first and feeds its output to the global stage.
pub fn synthesize_sparse(
    u: &Image,
    mode: TransformMode,
    cfg: &PatchConfig,
    tau: f64,
) -> Result<Image> {
    cfg.validate()?;
    if u.height() < cfg.patch_side || u.width() < cfg.patch_side {
        return Err(Error::DegenerateInput(
            "image smaller than the patch side".into(),
        ));
    }
    match mode {
        TransformMode::Local => synthesis_stage(u, true, cfg, tau),
        TransformMode::Global => synthesis_stage(u, false, cfg, tau),
        TransformMode::Combined => {
            let first = synthesis_stage(u, true, cfg, tau)?;
            synthesis_stage(&first, false, cfg, tau)
        }
    }
}

/// Chebyshev lower bound on the probability that the mean absolute
/// restoration error stays within `epsilon` of its expectation
/// sigma * sqrt(2/pi), for N independent Gaussian error samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityBound {
    pub probability: f64,
    pub center: f64,
}

pub fn similarity_bound(sigma: f64, n: usize, epsilon: f64) -> Result<SimilarityBound> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter("epsilon must be positive".into()));
    }
    if sigma < 0.0 {
        return Err(Error::InvalidParameter("sigma must be non-negative".into()));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let two_over_pi = 2.0 / std::f64::consts::PI;
    let raw = 1.0 - (1.0 - two_over_pi) * sigma * sigma / (n as f64 * epsilon * epsilon);
    Ok(SimilarityBound {
        probability: raw.clamp(0.0, 1.0),
        center: sigma * two_over_pi.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _| rng.gen_range(0.0..255.0))
    }

    #[test]
    fn six_by_six_image_single_patch() {
        let img = random_image(6, 6, 1);
        let cfg = PatchConfig::default();
        let patches = extract_patches(&img, &cfg).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(patches[0].0, (0, 0));
        assert_eq!(patches[0].1, img.as_slice());
    }

    #[test]
    fn eight_by_eight_covers_everything() {
        let cfg = PatchConfig::default();
        let positions = patch_positions(8, 8, &cfg);
        assert_eq!(positions, vec![(0, 0), (0, 2), (2, 0), (2, 2)]);
        let mut covered = vec![false; 64];
        for (r0, c0) in positions {
            for r in 0..6 {
                for c in 0..6 {
                    covered[(r0 + r) * 8 + (c0 + c)] = true;
                }
            }
        }
        assert!(covered.iter().all(|&v| v));
    }

    #[test]
    fn standard_position_count() {
        let cfg = PatchConfig::default();
        assert_eq!(patch_positions(256, 256, &cfg).len(), 126 * 126);
    }

    #[test]
    fn remainder_positions_are_forced() {
        let cfg = PatchConfig::default();
        let positions = patch_positions(9, 9, &cfg);
        // last valid top-left is 3, not on the stride grid 0,2
        assert!(positions.contains(&(3, 3)));
        assert!(positions.contains(&(0, 3)));
    }

    #[test]
    fn extract_aggregate_identity() {
        let img = random_image(14, 10, 2);
        let cfg = PatchConfig::default();
        let patches = extract_patches(&img, &cfg).unwrap();
        let back = aggregate_patches(&patches, cfg.patch_side, 14, 10).unwrap();
        for (a, b) in back.iter().zip(img.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn disagreeing_overlap_averages() {
        let patches = vec![
            ((0, 0), vec![1.0; 4]),
            ((0, 1), vec![3.0; 4]),
        ];
        let img = aggregate_patches(&patches, 2, 2, 3).unwrap();
        assert_eq!(img.get(0, 1), 2.0); // covered by both
        assert_eq!(img.get(0, 0), 1.0);
        assert_eq!(img.get(0, 2), 3.0);
    }

    #[test]
    fn uncovered_pixel_is_an_error() {
        let patches = vec![((0, 0), vec![1.0; 4])];
        assert!(matches!(
            aggregate_patches(&patches, 2, 2, 3),
            Err(Error::Coverage { row: 0, col: 2 })
        ));
    }

    // Dense oracle for the aggregation: (sum R_i^T R_i)^{-1} sum R_i^T u_i.
    #[test]
    fn aggregation_matches_dense_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (h, w, side) = (10, 10, 3);
        let cfg = PatchConfig {
            patch_side: side,
            group_size: 4,
            stride: 2,
            search_window: 7,
        };
        let positions = patch_positions(h, w, &cfg);
        let n = h * w;
        let s = side * side;
        let mut normal = DMatrix::<f64>::zeros(n, n);
        let mut rhs = nalgebra::DVector::<f64>::zeros(n);
        let mut patches = Vec::new();
        for &(r0, c0) in &positions {
            let data: Vec<f64> = (0..s).map(|_| rng.gen_range(-1.0..1.0)).collect();
            // R_i^T R_i adds 1 on the diagonal of covered pixels.
            let mut k = 0;
            for r in 0..side {
                for c in 0..side {
                    let idx = (r0 + r) * w + (c0 + c);
                    normal[(idx, idx)] += 1.0;
                    rhs[idx] += data[k];
                    k += 1;
                }
            }
            patches.push(((r0, c0), data));
        }
        let dense = normal.lu().solve(&rhs).unwrap();
        let got = aggregate_patches(&patches, side, h, w).unwrap();
        for (a, b) in got.iter().zip(dense.iter()) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0));
        }
    }

    #[test]
    fn constant_image_grouping_follows_tie_rule() {
        let img = Image::from_fn(40, 40, |_, _| 9.0);
        let cfg = PatchConfig::default();
        let group = match_group((0, 0), &img, &cfg).unwrap();
        assert_eq!(group.members.len(), 60);
        assert!(!group.padded);
        assert_eq!(group.members[0], (0, 0));
        // Remaining members are the window candidates in raster order.
        let mut expect = Vec::new();
        'outer: for r in 0..=12 {
            for c in 0..=12 {
                if (r, c) != (0, 0) {
                    expect.push((r, c));
                    if expect.len() == 59 {
                        break 'outer;
                    }
                }
            }
        }
        assert_eq!(&group.members[1..], &expect[..]);
    }

    #[test]
    fn planted_texture_copies_are_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut img = Image::from_fn(36, 36, |_, _| rng.gen_range(0.0..255.0));
        let cfg = PatchConfig {
            patch_side: 4,
            group_size: 5,
            stride: 2,
            search_window: 20,
        };
        // Plant five copies of one texture patch inside one window.
        let texture: Vec<f64> = (0..16).map(|_| rng.gen_range(0.0..255.0)).collect();
        let spots = [(8, 8), (8, 14), (12, 10), (14, 14), (10, 4)];
        for &(r0, c0) in &spots {
            let mut k = 0;
            for r in 0..4 {
                for c in 0..4 {
                    img.set(r0 + r, c0 + c, texture[k]);
                    k += 1;
                }
            }
        }
        let group = match_group((8, 8), &img, &cfg).unwrap();
        let mut members = group.members.clone();
        members.sort_unstable();
        let mut want = spots.to_vec();
        want.sort_unstable();
        assert_eq!(members, want);
    }

    #[test]
    fn tiny_image_pads_group() {
        let img = random_image(6, 6, 5);
        let cfg = PatchConfig::default();
        let group = match_group((0, 0), &img, &cfg).unwrap();
        assert!(group.padded);
        assert_eq!(group.members.len(), 60);
        assert!(group.members.iter().all(|&p| p == (0, 0)));
    }

    #[test]
    fn identical_patch_group_has_rank_one_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let patch: Vec<f64> = (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let data = DMatrix::from_fn(36, 60, |r, _| patch[r]);
        let basis = local_basis(&data);
        let norm: f64 = patch.iter().map(|v| v * v).sum::<f64>().sqrt();
        let first: Vec<f64> = (0..36).map(|i| basis[(i, 0)]).collect();
        // First basis vector is the normalized patch up to sign.
        let ip: f64 = first
            .iter()
            .zip(&patch)
            .map(|(a, b)| a * b / norm)
            .sum();
        assert_relative_eq!(ip.abs(), 1.0, epsilon = 1e-10);
        let coeffs = basis.transpose() * &data;
        for j in 0..60 {
            for i in 1..36 {
                assert!(coeffs[(i, j)].abs() < 1e-8);
            }
        }
    }

    #[test]
    fn local_basis_is_orthogonal_and_diagonalizing() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = DMatrix::from_fn(36, 60, |_, _| rng.gen_range(-1.0..1.0));
        let basis = local_basis(&data);
        let gram = basis.transpose() * &basis;
        for i in 0..36 {
            for j in 0..36 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - expect).abs() <= 1e-10);
            }
        }
        let cov = &data * data.transpose() / 60.0;
        let diag = basis.transpose() * &cov * &basis;
        let scale = cov.norm();
        for i in 0..36 {
            for j in 0..36 {
                if i != j {
                    assert!(diag[(i, j)].abs() <= 1e-8 * scale);
                }
            }
        }
        // Eigenvalues must come out descending.
        for i in 1..36 {
            assert!(diag[(i, i)] <= diag[(i - 1, i - 1)] + 1e-10);
        }
    }

    #[test]
    fn global_transform_concentrates_constants() {
        let c = 3.25;
        let data = DMatrix::from_element(36, 60, c);
        let coeffs = global_forward(&data, 6);
        assert_eq!(coeffs.ncols(), 64);
        assert_relative_eq!(coeffs[(0, 0)], c * (36.0f64 * 64.0).sqrt(), epsilon = 1e-9);
        let mut others = 0.0;
        for i in 0..36 {
            for j in 0..64 {
                if (i, j) != (0, 0) {
                    others += coeffs[(i, j)].abs();
                }
            }
        }
        assert!(others < 1e-9);
    }

    #[test]
    fn global_transform_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = DMatrix::from_fn(36, 60, |_, _| rng.gen_range(-2.0..2.0));
        let coeffs = global_forward(&data, 6);
        let back = global_inverse(&coeffs, 6, 60);
        let err = (&back - &data).abs().max();
        assert!(err <= 1e-10, "round trip error {err}");
    }

    #[test]
    fn global_transform_preserves_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = DMatrix::from_fn(36, 60, |_, _| rng.gen_range(-2.0..2.0));
        // Parseval holds against the padded group the transform acts on.
        let mut padded = DMatrix::zeros(36, 64);
        for j in 0..64 {
            padded.set_column(j, &data.column(j.min(59)));
        }
        let coeffs = global_forward(&data, 6);
        let e_data: f64 = padded.iter().map(|v| v * v).sum();
        let e_coeff: f64 = coeffs.iter().map(|v| v * v).sum();
        assert!((e_data - e_coeff).abs() <= 1e-9 * e_data);
    }

    #[test]
    fn hard_threshold_rules() {
        let mut c = DMatrix::from_column_slice(4, 1, &[5.0, -0.1, 2.0, 0.05]);
        hard_threshold(&mut c, 1.0);
        assert_eq!(c.as_slice(), &[5.0, 0.0, 2.0, 0.0]);

        let mut id = DMatrix::from_column_slice(3, 1, &[0.5, 0.4, -0.3]);
        hard_threshold(&mut id, 0.0);
        assert_eq!(id.as_slice(), &[0.5, 0.4, -0.3]);

        // Everything below tau except the DC row dies.
        let mut small = DMatrix::from_column_slice(3, 2, &[0.5, 0.2, -0.1, 0.3, -0.2, 0.1]);
        hard_threshold(&mut small, 10.0);
        assert_eq!(small.as_slice(), &[0.5, 0.0, 0.0, 0.3, 0.0, 0.0]);
    }

    #[test]
    fn zero_threshold_synthesis_is_identity() {
        let img = random_image(24, 24, 10);
        let cfg = PatchConfig {
            patch_side: 4,
            group_size: 8,
            stride: 2,
            search_window: 12,
        };
        for mode in [
            TransformMode::Local,
            TransformMode::Global,
            TransformMode::Combined,
        ] {
            let out = synthesize_sparse(&img, mode, &cfg, 0.0).unwrap();
            let mut max_err: f64 = 0.0;
            for (a, b) in out.iter().zip(img.iter()) {
                max_err = max_err.max((a - b).abs());
            }
            assert!(max_err <= 1e-9, "{mode:?} deviated by {max_err}");
        }
    }

    #[test]
    fn denoises_noisy_cartoon() {
        let cfg = PatchConfig {
            patch_side: 4,
            group_size: 16,
            stride: 2,
            search_window: 16,
        };
        let clean = Image::from_fn(32, 32, |r, c| {
            if (r as i32 - 16).pow(2) + (c as i32 - 16).pow(2) < 80 {
                190.0
            } else {
                60.0
            }
        });
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let noisy = Image::from_fn(32, 32, |r, c| {
                let g: f64 = rand_distr::Distribution::sample(
                    &rand_distr::StandardNormal,
                    &mut rng,
                );
                clean.get(r, c) + 10.0 * g
            });
            let sigma = estimate_noise_sigma(&noisy);
            let tau = threshold_for_sigma(sigma);
            let mse = |x: &Image| {
                x.iter()
                    .zip(clean.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            };
            let input_mse = mse(&noisy);
            for mode in [TransformMode::Local, TransformMode::Global] {
                let out = synthesize_sparse(&noisy, mode, &cfg, tau).unwrap();
                assert!(
                    mse(&out) < input_mse,
                    "{mode:?} failed to denoise on seed {seed}"
                );
            }
            let local = synthesize_sparse(&noisy, TransformMode::Local, &cfg, tau).unwrap();
            let both = synthesize_sparse(&noisy, TransformMode::Combined, &cfg, tau).unwrap();
            assert!(mse(&both) <= mse(&local) * 1.05);
        }
    }

    #[test]
    fn noise_estimate_tracks_added_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let flat = Image::from_fn(64, 64, |_, _| 128.0);
        assert_eq!(estimate_noise_sigma(&flat), 0.0);
        let sigma = 8.0;
        let noisy = Image::from_fn(64, 64, |_, _| {
            let g: f64 =
                rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
            128.0 + sigma * g
        });
        let est = estimate_noise_sigma(&noisy);
        assert!((est - sigma).abs() < 2.0, "estimated {est} for sigma {sigma}");
    }

    #[test]
    fn similarity_bound_formula() {
        let b = similarity_bound(0.0, 100, 0.5).unwrap();
        assert_eq!(b.probability, 1.0);
        assert_eq!(b.center, 0.0);

        let b = similarity_bound(1.0, 65536, 0.01).unwrap();
        let expect = 1.0 - (1.0 - 2.0 / std::f64::consts::PI) / 6.5536;
        assert_relative_eq!(b.probability, expect, epsilon = 1e-12);
        assert_relative_eq!(
            b.center,
            (2.0 / std::f64::consts::PI).sqrt(),
            epsilon = 1e-12
        );

        assert!(similarity_bound(1.0, 100, 0.0).is_err());
        // Clamped at zero when the variance term dominates.
        let b = similarity_bound(100.0, 4, 0.01).unwrap();
        assert_eq!(b.probability, 0.0);
    }

    #[test]
    fn monte_carlo_respects_similarity_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (sigma, n, eps) = (1.0, 4096usize, 0.05);
        let bound = similarity_bound(sigma, n, eps).unwrap();
        let trials = 300;
        let mut hits = 0;
        for _ in 0..trials {
            let mut sum = 0.0;
            for _ in 0..n {
                let g: f64 =
                    rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                sum += (sigma * g).abs();
            }
            let x = sum / n as f64;
            if (x - bound.center).abs() <= eps {
                hits += 1;
            }
        }
        assert!(hits as f64 / trials as f64 >= bound.probability);
    }
}
