//! Line profiles through images and the two-peak dip metric.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::GridGeometry;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// A fixed row; coordinates run along x.
    Row,
    /// A fixed column; coordinates run along y.
    Column,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    /// Physical coordinate of each sample, meters.
    pub coordinates: Vec<f64>,
    pub values: Vec<f64>,
}

pub fn extract_profile(image: &Array2<f64>, grid: &GridGeometry, axis: Axis, index: usize) -> Result<Profile> {
    if image.dim() != grid.shape() {
        return Err(Error::GeometryMismatch(format!(
            "image {:?} vs grid {:?}",
            image.dim(),
            grid.shape()
        )));
    }
    let (rows, cols) = grid.shape();
    match axis {
        Axis::Row => {
            if index >= rows {
                return Err(Error::IndexOutOfRange {
                    row: index,
                    col: 0,
                    dimension: rows,
                });
            }
            Ok(Profile {
                coordinates: (0..cols).map(|c| grid.position(index, c)[0]).collect(),
                values: image.row(index).to_vec(),
            })
        }
        Axis::Column => {
            if index >= cols {
                return Err(Error::IndexOutOfRange {
                    row: 0,
                    col: index,
                    dimension: cols,
                });
            }
            Ok(Profile {
                coordinates: (0..rows).map(|r| grid.position(r, index)[1]).collect(),
                values: image.column(index).to_vec(),
            })
        }
    }
}

/// Indices of local maxima; a plateau counts once, at its first index.
fn local_maxima(values: &[f64]) -> Vec<usize> {
    let n = values.len();
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[j + 1] == values[i] {
            j += 1;
        }
        let left_lower = i == 0 || values[i - 1] < values[i];
        let right_lower = j + 1 == n || values[j + 1] < values[i];
        if left_lower && right_lower && n > 1 {
            peaks.push(i);
        }
        i = j + 1;
    }
    peaks
}

/// Local maxima below this fraction of the profile maximum are ignored by
/// [`dip_ratio`]; background ripple would otherwise pass for a second bar.
pub const PEAK_FRACTION: f64 = 0.5;

/// `1 - min_between / mean(peak heights)` for the two highest local maxima
/// that reach [`PEAK_FRACTION`] of the profile maximum, together with their
/// indices. A profile without two such maxima has no dip and scores 0.
pub fn dip_ratio(values: &[f64]) -> (f64, Option<(usize, usize)>) {
    dip_ratio_with(values, PEAK_FRACTION)
}

pub fn dip_ratio_with(values: &[f64], peak_fraction: f64) -> (f64, Option<(usize, usize)>) {
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(top > 0.0) {
        return (0.0, None);
    }
    let mut peaks: Vec<usize> = local_maxima(values)
        .into_iter()
        .filter(|&i| values[i] >= peak_fraction * top)
        .collect();
    if peaks.len() < 2 {
        return (0.0, None);
    }
    peaks.sort_by(|a, b| values[*b].total_cmp(&values[*a]).then(a.cmp(b)));
    let (a, b) = (peaks[0].min(peaks[1]), peaks[0].max(peaks[1]));
    let mean_peak = 0.5 * (values[a] + values[b]);
    let valley = values[a..=b].iter().copied().fold(f64::INFINITY, f64::min);
    (1.0 - valley / mean_peak, Some((a, b)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_coordinates_and_bounds() {
        let grid = GridGeometry::centered(3, 4, [0.003, 0.002]).unwrap();
        let img = Array2::from_shape_fn((3, 4), |(r, c)| (r * 4 + c) as f64);
        let p = extract_profile(&img, &grid, Axis::Row, 1).unwrap();
        assert_eq!(p.values, vec![4.0, 5.0, 6.0, 7.0]);
        assert!((p.coordinates[0] + 0.0015).abs() < 1e-15);
        let p = extract_profile(&img, &grid, Axis::Column, 3).unwrap();
        assert_eq!(p.values, vec![3.0, 7.0, 11.0]);
        assert!(extract_profile(&img, &grid, Axis::Row, 3).is_err());
        assert!(extract_profile(&img, &grid, Axis::Column, 4).is_err());
    }

    #[test]
    fn constant_profile() {
        let grid = GridGeometry::centered(5, 5, [0.004, 0.004]).unwrap();
        let p = extract_profile(&Array2::from_elem((5, 5), 2.0), &grid, Axis::Row, 2).unwrap();
        assert!(p.values.iter().all(|v| *v == 2.0));
        assert_eq!(dip_ratio(&p.values).0, 0.0);
    }

    #[test]
    fn dip_of_two_peaks() {
        let v = [0.0, 1.0, 4.0, 1.0, 0.5, 2.0, 3.0, 0.0];
        let (d, peaks) = dip_ratio(&v);
        assert_eq!(peaks, Some((2, 6)));
        assert!((d - (1.0 - 0.5 / 3.5)).abs() < 1e-15);
        assert_eq!(dip_ratio(&[0.0, 1.0, 2.0, 1.0]).0, 0.0);
        // A small ripple is still a dip, just a shallow one.
        let (d, _) = dip_ratio(&[0.0, 2.0, 1.9, 2.0, 0.0]);
        assert!((d - 0.05).abs() < 1e-12);
    }

    #[test]
    fn weak_maxima_are_not_peaks() {
        // The bump at index 1 is below half the maximum.
        let v = [0.0, 0.3, -0.2, 0.5, 1.0, 0.6, 0.0];
        assert_eq!(dip_ratio(&v), (0.0, None));
        let (d, peaks) = dip_ratio_with(&v, 0.2);
        assert_eq!(peaks, Some((1, 4)));
        assert!((d - (1.0 + 0.2 / 0.65)).abs() < 1e-12);
        assert_eq!(dip_ratio(&[-1.0, -0.5, -1.0, -0.5]), (0.0, None));
    }
}
