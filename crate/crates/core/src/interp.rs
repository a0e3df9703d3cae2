//! Separable grid interpolation and its adjoint scatter.

use std::f64::consts::PI;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::GridGeometry;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InterpolationScheme {
    /// Per-axis weight `(1 - cos(pi a)) / 2` toward the upper node.
    #[default]
    Cosine,
    Bilinear,
}

impl InterpolationScheme {
    fn upper_weight(self, alpha: f64) -> f64 {
        match self {
            InterpolationScheme::Cosine => 0.5 * (1.0 - (PI * alpha).cos()),
            InterpolationScheme::Bilinear => alpha,
        }
    }
}

/// The (at most) four grid nodes bracketing a point and their weights.
/// Indices are flat row-major offsets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stencil {
    pub index: [usize; 4],
    pub weight: [f64; 4],
}

impl Stencil {
    pub fn apply(&self, flat: &[f64]) -> f64 {
        self.index.iter().zip(&self.weight).map(|(&i, &w)| w * flat[i]).sum()
    }

    pub fn scatter(&self, flat: &mut [f64], value: f64) {
        for (&i, &w) in self.index.iter().zip(&self.weight) {
            flat[i] += w * value;
        }
    }
}

/// Splits a fractional index into the lower bracketing node and offset,
/// clamping points within the hull tolerance onto the last cell.
fn bracket(u: f64, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let u = u.clamp(0.0, (n - 1) as f64);
    let i = (u.floor() as usize).min(n - 2);
    (i, u - i as f64)
}

pub fn stencil(grid: &GridGeometry, point: [f64; 2], scheme: InterpolationScheme) -> Result<Stencil> {
    if !grid.contains(point) || grid.rows < 1 || grid.cols < 1 {
        return Err(Error::OutsideHull {
            x: point[0],
            y: point[1],
        });
    }
    let [u, v] = grid.fractional_index(point);
    let (c0, a) = bracket(u, grid.cols);
    let (r0, b) = bracket(v, grid.rows);
    let wx1 = scheme.upper_weight(a);
    let wy1 = scheme.upper_weight(b);
    let (wx0, wy0) = (1.0 - wx1, 1.0 - wy1);
    let c1 = (c0 + 1).min(grid.cols - 1);
    let r1 = (r0 + 1).min(grid.rows - 1);
    let flat = |r: usize, c: usize| r * grid.cols + c;
    Ok(Stencil {
        index: [flat(r0, c0), flat(r0, c1), flat(r1, c0), flat(r1, c1)],
        weight: [wy0 * wx0, wy0 * wx1, wy1 * wx0, wy1 * wx1],
    })
}

pub fn interpolate(
    field: &Array2<f64>,
    grid: &GridGeometry,
    point: [f64; 2],
    scheme: InterpolationScheme,
) -> Result<f64> {
    if field.dim() != grid.shape() {
        return Err(Error::GeometryMismatch(format!(
            "field {:?} vs grid {:?}",
            field.dim(),
            grid.shape()
        )));
    }
    let s = stencil(grid, point, scheme)?;
    let cols = grid.cols;
    Ok(s.index
        .iter()
        .zip(&s.weight)
        .map(|(&i, &w)| w * field[[i / cols, i % cols]])
        .sum())
}

/// Sparse increment `((row, col), weight * value)` such that
/// `<interpolate(A, p), c> = <A, adjoint(p, c)>`.
pub fn interpolation_adjoint(
    grid: &GridGeometry,
    point: [f64; 2],
    value: f64,
    scheme: InterpolationScheme,
) -> Result<Vec<((usize, usize), f64)>> {
    let s = stencil(grid, point, scheme)?;
    let cols = grid.cols;
    Ok(s.index
        .iter()
        .zip(&s.weight)
        .map(|(&i, &w)| ((i / cols, i % cols), w * value))
        .collect())
}
