//! Finite-difference gradient operators with multi-block semantics.
//!
//! Forward differences with a replicate boundary: the difference is zero at
//! the last row/column of each scope span. A per-block scope stops at every
//! block boundary, a multi-block scope at the boundary of each span-by-span
//! group of blocks, and the frame scope only at the image border. A span
//! covering the whole grid is bit-identical to the frame scope.

use crate::image::Image;

/// Where gradient differences are allowed to cross block seams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientScope {
    /// Differences stop at every block boundary.
    PerBlock { block_side: usize },
    /// Differences cross seams inside span x span groups of blocks.
    MultiBlock { block_side: usize, span: usize },
    /// Differences stop only at the image border.
    Frame,
}

impl GradientScope {
    /// Pixel pitch at which spans end, or `None` for frame scope.
    fn span_pixels(&self) -> Option<usize> {
        match *self {
            GradientScope::PerBlock { block_side } => Some(block_side.max(1)),
            GradientScope::MultiBlock { block_side, span } => {
                Some((block_side * span.max(1)).max(1))
            }
            GradientScope::Frame => None,
        }
    }

    /// interior[j] is true when a forward difference is taken at index j.
    fn interior_mask(&self, len: usize) -> Vec<bool> {
        let pitch = self.span_pixels();
        (0..len)
            .map(|j| {
                if j + 1 >= len {
                    return false;
                }
                match pitch {
                    Some(p) => (j + 1) % p != 0,
                    None => true,
                }
            })
            .collect()
    }
}

/// Horizontal and vertical difference components, image-shaped.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub dx: Image,
    pub dy: Image,
}

impl GradientField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            dx: Image::zeros(height, width),
            dy: Image::zeros(height, width),
        }
    }

    pub fn same_shape(&self, other: &GradientField) -> bool {
        self.dx.same_shape(&other.dx) && self.dy.same_shape(&other.dy)
    }

    pub fn is_finite(&self) -> bool {
        self.dx.is_finite() && self.dy.is_finite()
    }

    /// Elementwise a*x + b*y on both components.
    pub fn lin_comb(a: f64, x: &GradientField, b: f64, y: &GradientField) -> GradientField {
        GradientField {
            dx: Image::lin_comb(a, &x.dx, b, &y.dx),
            dy: Image::lin_comb(a, &x.dy, b, &y.dy),
        }
    }
}

/// Forward-difference gradient of `u` under the given scope.
pub fn gradient(u: &Image, scope: GradientScope) -> GradientField {
    let (h, w) = (u.height(), u.width());
    let col_interior = scope.interior_mask(w);
    let row_interior = scope.interior_mask(h);
    let mut dx = Image::zeros(h, w);
    let mut dy = Image::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            if col_interior[c] {
                dx.set(r, c, u.get(r, c + 1) - u.get(r, c));
            }
            if row_interior[r] {
                dy.set(r, c, u.get(r + 1, c) - u.get(r, c));
            }
        }
    }
    GradientField { dx, dy }
}

/// Exact adjoint of [`gradient`] under the same scope.
pub fn gradient_adjoint(g: &GradientField, scope: GradientScope) -> Image {
    let (h, w) = (g.dx.height(), g.dx.width());
    let col_interior = scope.interior_mask(w);
    let row_interior = scope.interior_mask(h);
    let mut out = Image::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let mut v = 0.0;
            if col_interior[c] {
                v -= g.dx.get(r, c);
            }
            if c > 0 && col_interior[c - 1] {
                v += g.dx.get(r, c - 1);
            }
            if row_interior[r] {
                v -= g.dy.get(r, c);
            }
            if r > 0 && row_interior[r - 1] {
                v += g.dy.get(r - 1, c);
            }
            out.set(r, c, v);
        }
    }
    out
}

/// Per-pixel sqrt(dx^2 + dy^2).
pub fn isotropic_magnitude(g: &GradientField) -> Image {
    debug_assert!(g.dx.same_shape(&g.dy));
    let (h, w) = (g.dx.height(), g.dx.width());
    let mut out = Image::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            out.set(r, c, g.dx.get(r, c).hypot(g.dy.get(r, c)));
        }
    }
    out
}

/// Isotropic total variation: the sum of per-pixel gradient magnitudes.
pub fn total_variation(u: &Image, scope: GradientScope) -> f64 {
    isotropic_magnitude(&gradient(u, scope)).iter().sum()
}
