//! Regular 2D grids and the scalar images that live on them.
//!
//! Images are stored row-major as `values[[row, col]]`. Columns run along the
//! x axis and rows along the y axis; pixel `(row, col)` has its center at
//! `origin + (col * spacing_x, row * spacing_y)`.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Relative slack (in units of the pixel spacing) when testing whether a point
/// lies inside the grid hull. Sampled trajectories touch the hull boundary up
/// to floating-point rounding.
pub const HULL_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct GridGeometry {
    pub rows: usize,
    pub cols: usize,
    /// Center of pixel (0, 0), meters, as (x, y).
    pub origin: [f64; 2],
    /// Pixel spacing, meters, as (x, y).
    pub spacing: [f64; 2],
}

impl GridGeometry {
    pub fn new(rows: usize, cols: usize, origin: [f64; 2], spacing: [f64; 2]) -> Result<Self> {
        let grid = Self {
            rows,
            cols,
            origin,
            spacing,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// A grid whose nodes span `[-extent/2, extent/2]` on both axes, with the
    /// first and last nodes on the boundary.
    pub fn centered(rows: usize, cols: usize, extent: [f64; 2]) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::DegenerateGrid(format!(
                "{rows}x{cols} grid cannot span an extent"
            )));
        }
        let spacing = [extent[0] / (cols - 1) as f64, extent[1] / (rows - 1) as f64];
        Self::new(rows, cols, [-extent[0] / 2.0, -extent[1] / 2.0], spacing)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::DegenerateGrid(format!(
                "{}x{} grid has no pixels",
                self.rows, self.cols
            )));
        }
        for s in self.spacing {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::DegenerateGrid(format!("spacing {s} is not strictly positive")));
            }
        }
        if !self.origin.iter().all(|o| o.is_finite()) {
            return Err(Error::DegenerateGrid("origin is not finite".into()));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixel_area(&self) -> f64 {
        self.spacing[0] * self.spacing[1]
    }

    pub fn position(&self, row: usize, col: usize) -> [f64; 2] {
        [
            self.origin[0] + col as f64 * self.spacing[0],
            self.origin[1] + row as f64 * self.spacing[1],
        ]
    }

    /// Position of the last pixel center.
    pub fn far_corner(&self) -> [f64; 2] {
        self.position(self.rows - 1, self.cols - 1)
    }

    /// Fractional (col, row) index of a physical point.
    pub fn fractional_index(&self, point: [f64; 2]) -> [f64; 2] {
        [
            (point[0] - self.origin[0]) / self.spacing[0],
            (point[1] - self.origin[1]) / self.spacing[1],
        ]
    }

    pub fn contains(&self, point: [f64; 2]) -> bool {
        let [u, v] = self.fractional_index(point);
        let tol = HULL_TOLERANCE;
        u >= -tol && v >= -tol && u <= (self.cols - 1) as f64 + tol && v <= (self.rows - 1) as f64 + tol
    }

    pub fn zeros(&self) -> Array2<f64> {
        Array2::zeros((self.rows, self.cols))
    }

    pub fn same_shape(&self, other: &GridGeometry) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

/// A scalar field sampled on a [`GridGeometry`].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub values: Array2<f64>,
    pub geometry: GridGeometry,
}

/// Particle concentration. Generated phantoms are nonnegative; reconstructions
/// may dip below zero before trimming.
pub type ConcentrationImage = Image;

impl Image {
    pub fn new(values: Array2<f64>, geometry: GridGeometry) -> Result<Self> {
        if values.dim() != geometry.shape() {
            return Err(Error::GeometryMismatch(format!(
                "values are {:?} but geometry is {:?}",
                values.dim(),
                geometry.shape()
            )));
        }
        Ok(Self { values, geometry })
    }

    pub fn zeros(geometry: GridGeometry) -> Self {
        Self {
            values: geometry.zeros(),
            geometry,
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Euclidean norm of all entries.
pub fn l2_norm(values: &Array2<f64>) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_grid_spans_extent() {
        let g = GridGeometry::centered(33, 33, [0.024, 0.024]).unwrap();
        assert!((g.spacing[0] - 0.00075).abs() < 1e-15);
        assert_eq!(g.position(0, 0), [-0.012, -0.012]);
        let far = g.far_corner();
        assert!((far[0] - 0.012).abs() < 1e-15 && (far[1] - 0.012).abs() < 1e-15);
        assert!(g.contains([0.012, -0.012]));
        assert!(!g.contains([0.0121, 0.0]));
    }

    #[test]
    fn zero_spacing_is_degenerate() {
        assert!(matches!(
            GridGeometry::new(4, 4, [0.0, 0.0], [0.0, 1.0]),
            Err(Error::DegenerateGrid(_))
        ));
    }

    #[test]
    fn image_checks_shape() {
        let g = GridGeometry::new(2, 3, [0.0, 0.0], [1.0, 1.0]).unwrap();
        assert!(Image::new(Array2::zeros((3, 2)), g.clone()).is_err());
        assert!(Image::new(Array2::zeros((2, 3)), g).is_ok());
    }
}
