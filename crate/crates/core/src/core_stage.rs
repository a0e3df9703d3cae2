//! Core Stage: variational recovery of the core operator from signal samples.
//!
//! For each reconstructed row `i` the unknowns are the images `A_i0 .. A_i(n-1)`
//! and the functional is
//!
//! ```text
//! (1/L) sum_k | s_ik - sum_j I[A_ij](r_k) v_jk |^2  +  gamma sum_j |Lap A_ij|^2
//! ```
//!
//! Rows only share the trajectory, so each row is an independent linear
//! least-squares problem solved by CG on its normal equations.
//!
//! The functional is made unit-free before solving: velocities are divided by
//! their RMS speed, and the regularizer is the discretized integral of
//! `|Lap A|^2` over the grid rescaled to the unit square. `gamma` is therefore
//! comparable across trajectories, field strengths and grid resolutions; the
//! returned field is rescaled back to the signal's units.

use std::collections::BTreeMap;

use log::warn;
use ndarray::Array2;

use crate::cg::{conjugate_gradient, CgReport, CgSettings};
use crate::error::{Error, Result};
use crate::forward::{CoreOperatorField, ScanSignal};
use crate::grid::GridGeometry;
use crate::interp::{stencil, InterpolationScheme, Stencil};
use crate::scanner::Trajectory;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LaplacianBoundary {
    /// Out-of-grid neighbors replicate the boundary value (zero normal derivative).
    #[default]
    Replicate,
    /// Out-of-grid neighbors are zero.
    Zero,
}

/// Five-point Laplacian with the given boundary rule.
pub fn laplacian_apply(field: &Array2<f64>, spacing: [f64; 2], boundary: LaplacianBoundary) -> Result<Array2<f64>> {
    let (rows, cols) = field.dim();
    if rows < 3 || cols < 3 {
        return Err(Error::DegenerateGrid(format!(
            "Laplacian needs at least 3x3, got {rows}x{cols}"
        )));
    }
    let mut out = Array2::zeros((rows, cols));
    laplacian_into(
        field.as_slice().expect("standard layout"),
        rows,
        cols,
        spacing,
        boundary,
        out.as_slice_mut().expect("standard layout"),
    );
    Ok(out)
}

fn laplacian_into(
    u: &[f64],
    rows: usize,
    cols: usize,
    spacing: [f64; 2],
    boundary: LaplacianBoundary,
    out: &mut [f64],
) {
    let ix2 = 1.0 / (spacing[0] * spacing[0]);
    let iy2 = 1.0 / (spacing[1] * spacing[1]);
    let outside = |own: f64| match boundary {
        LaplacianBoundary::Replicate => own,
        LaplacianBoundary::Zero => 0.0,
    };
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            let v = u[i];
            let left = if c > 0 { u[i - 1] } else { outside(v) };
            let right = if c + 1 < cols { u[i + 1] } else { outside(v) };
            let up = if r > 0 { u[i - cols] } else { outside(v) };
            let down = if r + 1 < rows { u[i + cols] } else { outside(v) };
            out[i] = (left + right - 2.0 * v) * ix2 + (up + down - 2.0 * v) * iy2;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoreStageConfig {
    pub gamma: f64,
    pub cg: CgSettings,
    pub grid: GridGeometry,
    /// Matrix rows to reconstruct; the signal carries one channel per row, in
    /// this order.
    pub rows: Vec<usize>,
    pub boundary: LaplacianBoundary,
}

impl CoreStageConfig {
    pub fn new(grid: GridGeometry) -> Self {
        Self {
            gamma: 1e-7,
            cg: CgSettings::default(),
            grid,
            rows: vec![0, 1],
            boundary: LaplacianBoundary::Replicate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.grid.rows < 3 || self.grid.cols < 3 {
            return Err(Error::DegenerateGrid("Core Stage grid must be at least 3x3".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma", "must be finite and >= 0"));
        }
        if !(self.cg.tolerance > 0.0) {
            return Err(Error::invalid("cg_tolerance", "must be > 0"));
        }
        if self.rows.is_empty() {
            return Err(Error::invalid("rows", "at least one row is required"));
        }
        if let Some(r) = self.rows.iter().find(|r| **r >= DIMENSION) {
            return Err(Error::invalid("rows", format!("row {r} out of range")));
        }
        let mut sorted = self.rows.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.rows.len() {
            return Err(Error::invalid("rows", "duplicate row"));
        }
        Ok(())
    }
}

const DIMENSION: usize = 2;

/// Grid spacing once the node span is mapped onto `[0, 1]^2`.
fn unit_square_spacing(grid: &GridGeometry) -> [f64; 2] {
    [1.0 / (grid.cols.max(2) - 1) as f64, 1.0 / (grid.rows.max(2) - 1) as f64]
}

/// `(s_k, r_k, v_k)` triples in struct-of-arrays form.
#[derive(Clone, Debug, PartialEq)]
pub struct CoreSamples {
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
    /// One series per reconstructed row.
    pub signals: Vec<Vec<f64>>,
}

impl CoreSamples {
    pub fn new(signal: &ScanSignal, trajectory: &Trajectory) -> Result<Self> {
        if signal.len() != trajectory.len() {
            return Err(Error::LengthMismatch {
                expected: trajectory.len(),
                actual: signal.len(),
            });
        }
        Ok(Self {
            positions: trajectory.positions.clone(),
            velocities: trajectory.velocities.clone(),
            signals: signal.channels.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Matrix-free normal operator `(1/L) sum_k J_k^T J_k + gamma Lap^T Lap` of one
/// row, acting on the `n` stacked entry images of that row.
#[derive(Clone, Debug)]
pub struct NormalOperator {
    grid: GridGeometry,
    stencils: Vec<Stencil>,
    velocities: Vec<[f64; 2]>,
    inv_len: f64,
    gamma: f64,
    boundary: LaplacianBoundary,
    velocity_scale: f64,
    kept: Vec<usize>,
}

impl NormalOperator {
    /// Builds the operator from sample positions and velocities. Samples outside
    /// the grid hull are dropped.
    pub fn new(
        grid: &GridGeometry,
        positions: &[[f64; 2]],
        velocities: &[[f64; 2]],
        gamma: f64,
        boundary: LaplacianBoundary,
        scheme: InterpolationScheme,
    ) -> Result<Self> {
        let mut stencils = Vec::with_capacity(positions.len());
        let mut kept = Vec::with_capacity(positions.len());
        for (k, (p, v)) in positions.iter().zip(velocities).enumerate() {
            if !(v[0].is_finite() && v[1].is_finite()) {
                return Err(Error::invalid(
                    "velocities",
                    format!("non-finite velocity at sample {k}"),
                ));
            }
            if let Ok(s) = stencil(grid, *p, scheme) {
                stencils.push(s);
                kept.push(k);
            }
        }
        let mean_sq = if kept.is_empty() {
            0.0
        } else {
            kept.iter()
                .map(|&k| velocities[k][0].powi(2) + velocities[k][1].powi(2))
                .sum::<f64>()
                / kept.len() as f64
        };
        let velocity_scale = if mean_sq > 0.0 { mean_sq.sqrt() } else { 1.0 };
        let scaled = kept
            .iter()
            .map(|&k| [velocities[k][0] / velocity_scale, velocities[k][1] / velocity_scale])
            .collect();
        Ok(Self {
            grid: grid.clone(),
            inv_len: if kept.is_empty() { 0.0 } else { 1.0 / kept.len() as f64 },
            stencils,
            velocities: scaled,
            gamma,
            boundary,
            velocity_scale,
            kept,
        })
    }

    /// Unknowns per row: `n` images.
    pub fn size(&self) -> usize {
        DIMENSION * self.grid.len()
    }

    pub fn dropped(&self, total: usize) -> usize {
        total - self.kept.len()
    }

    pub fn velocity_scale(&self) -> f64 {
        self.velocity_scale
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.grid.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        let (x0, x1) = x.split_at(n);
        {
            let (o0, o1) = out.split_at_mut(n);
            for (s, v) in self.stencils.iter().zip(&self.velocities) {
                let pred = s.apply(x0) * v[0] + s.apply(x1) * v[1];
                let r = pred * self.inv_len;
                s.scatter(o0, r * v[0]);
                s.scatter(o1, r * v[1]);
            }
        }
        if self.gamma > 0.0 {
            let (rows, cols) = self.grid.shape();
            let spacing = unit_square_spacing(&self.grid);
            let weight = self.gamma * spacing[0] * spacing[1];
            let mut lap = vec![0.0; n];
            let mut laplap = vec![0.0; n];
            for j in 0..DIMENSION {
                let xj = &x[j * n..(j + 1) * n];
                laplacian_into(xj, rows, cols, spacing, self.boundary, &mut lap);
                laplacian_into(&lap, rows, cols, spacing, self.boundary, &mut laplap);
                for (o, l) in out[j * n..(j + 1) * n].iter_mut().zip(&laplap) {
                    *o += weight * l;
                }
            }
        }
    }

    /// `(1/L) sum_k J_k^T s_k` for one channel (indexed by original sample).
    pub fn rhs(&self, signal: &[f64]) -> Vec<f64> {
        let n = self.grid.len();
        let mut b = vec![0.0; self.size()];
        let (b0, b1) = b.split_at_mut(n);
        for ((s, v), &k) in self.stencils.iter().zip(&self.velocities).zip(&self.kept) {
            let r = signal[k] * self.inv_len;
            s.scatter(b0, r * v[0]);
            s.scatter(b1, r * v[1]);
        }
        b
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoreStageReport {
    /// CG report per reconstructed row.
    pub rows: Vec<(usize, CgReport)>,
    pub dropped_samples: usize,
    pub velocity_scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoreStageSolution {
    pub field: CoreOperatorField,
    pub report: CoreStageReport,
}

/// Minimizes the Core Stage functional for every configured row.
pub fn solve_core_stage(
    samples: &CoreSamples,
    config: &CoreStageConfig,
    scheme: InterpolationScheme,
) -> Result<CoreStageSolution> {
    config.validate()?;
    if samples.signals.len() != config.rows.len() {
        return Err(Error::LengthMismatch {
            expected: config.rows.len(),
            actual: samples.signals.len(),
        });
    }
    for s in &samples.signals {
        if s.len() != samples.len() {
            return Err(Error::LengthMismatch {
                expected: samples.len(),
                actual: s.len(),
            });
        }
    }
    let op = NormalOperator::new(
        &config.grid,
        &samples.positions,
        &samples.velocities,
        config.gamma,
        config.boundary,
        scheme,
    )?;
    let dropped = op.dropped(samples.len());
    if dropped > 0 {
        warn!(
            "{dropped} of {} samples lie outside the grid hull and were dropped",
            samples.len()
        );
    }
    if op.kept.is_empty() && config.gamma == 0.0 {
        return Err(Error::ZeroOperator);
    }

    let n = config.grid.len();
    let (rows, cols) = config.grid.shape();
    let mut entries = BTreeMap::new();
    let mut reports = Vec::with_capacity(config.rows.len());
    for (channel, &row) in config.rows.iter().enumerate() {
        let b = op.rhs(&samples.signals[channel]);
        let mut x = vec![0.0; op.size()];
        let report = conjugate_gradient(|v, out| op.apply(v, out), &b, &mut x, config.cg);
        if !report.converged {
            warn!(
                "Core Stage row {row}: CG stopped at relative residual {:.3e} after {} iterations",
                report.relative_residual, report.iterations
            );
        }
        for col in 0..DIMENSION {
            let image = Array2::from_shape_vec(
                (rows, cols),
                x[col * n..(col + 1) * n]
                    .iter()
                    .map(|v| v / op.velocity_scale)
                    .collect(),
            )
            .expect("shape matches grid");
            entries.insert((row, col), image);
        }
        reports.push((row, report));
    }

    let mut populated_rows = config.rows.clone();
    populated_rows.sort_unstable();
    Ok(CoreStageSolution {
        field: CoreOperatorField {
            entries,
            dimension: DIMENSION,
            geometry: config.grid.clone(),
            populated_rows,
        },
        report: CoreStageReport {
            rows: reports,
            dropped_samples: dropped,
            velocity_scale: op.velocity_scale,
        },
    })
}

/// Pixel-wise sum of the diagonal entries.
pub fn extract_trace(field: &CoreOperatorField) -> Result<Array2<f64>> {
    let mut trace = field.geometry.zeros();
    for i in 0..field.dimension {
        trace += field.entry(i, i)?;
    }
    Ok(trace)
}

pub fn extract_entry(field: &CoreOperatorField, row: usize, col: usize) -> Result<Array2<f64>> {
    field.entry(row, col).cloned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laplacian_stencil_and_kernel() {
        let h = 0.5;
        let constant = Array2::from_elem((5, 6), 3.0);
        let lap = laplacian_apply(&constant, [h, h], LaplacianBoundary::Replicate).unwrap();
        assert!(lap.iter().all(|v| *v == 0.0));

        let ramp = Array2::from_shape_fn((5, 6), |(r, c)| 2.0 * c as f64 - r as f64);
        let lap = laplacian_apply(&ramp, [h, h], LaplacianBoundary::Replicate).unwrap();
        for r in 1..4 {
            for c in 1..5 {
                assert!(lap[[r, c]].abs() < 1e-12);
            }
        }

        let mut spike = Array2::zeros((5, 5));
        spike[[2, 2]] = 1.0;
        let lap = laplacian_apply(&spike, [h, h], LaplacianBoundary::Replicate).unwrap();
        assert_eq!(lap[[2, 2]], -4.0 / (h * h));
        for (r, c) in [(1, 2), (3, 2), (2, 1), (2, 3)] {
            assert_eq!(lap[[r, c]], 1.0 / (h * h));
        }
        assert!(laplacian_apply(&Array2::zeros((2, 5)), [h, h], LaplacianBoundary::Replicate).is_err());
    }

    fn tiny_grid() -> GridGeometry {
        GridGeometry::new(3, 3, [0.0, 0.0], [1.0, 1.0]).unwrap()
    }

    #[test]
    fn zero_data_gives_zero_field() {
        let grid = tiny_grid();
        let samples = CoreSamples {
            positions: vec![[0.5, 0.5], [1.2, 1.7]],
            velocities: vec![[1.0, 0.3], [-0.4, 2.0]],
            signals: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        };
        let mut config = CoreStageConfig::new(grid);
        config.gamma = 1e-3;
        let sol = solve_core_stage(&samples, &config, InterpolationScheme::Cosine).unwrap();
        assert!(sol.field.entries.values().all(|e| e.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn zero_operator_rejected() {
        let mut config = CoreStageConfig::new(tiny_grid());
        config.gamma = 0.0;
        config.rows = vec![0];
        let samples = CoreSamples {
            positions: vec![],
            velocities: vec![],
            signals: vec![vec![]],
        };
        assert!(matches!(
            solve_core_stage(&samples, &config, InterpolationScheme::Cosine),
            Err(Error::ZeroOperator)
        ));
    }

    #[test]
    fn single_node_sample_assembles_rank_one() {
        // One sample on node (1, 1) with v = e_x: the normal matrix of row 0 is
        // e_(1,1) e_(1,1)^T on the A_00 block and zero on the A_01 block.
        let grid = tiny_grid();
        let op = NormalOperator::new(
            &grid,
            &[grid.position(1, 1)],
            &[[1.0, 0.0]],
            0.0,
            LaplacianBoundary::Replicate,
            InterpolationScheme::Cosine,
        )
        .unwrap();
        let mut column = vec![0.0; op.size()];
        for i in 0..op.size() {
            let mut e = vec![0.0; op.size()];
            e[i] = 1.0;
            op.apply(&e, &mut column);
            for (j, v) in column.iter().enumerate() {
                let expected = if i == 4 && j == 4 { 1.0 } else { 0.0 };
                assert_eq!(*v, expected, "entry ({j}, {i})");
            }
        }
        let b = op.rhs(&[2.5]);
        let mut expected = vec![0.0; 18];
        expected[4] = 2.5;
        assert_eq!(b, expected);

        let config = CoreStageConfig {
            gamma: 0.0,
            rows: vec![0],
            ..CoreStageConfig::new(grid.clone())
        };
        let samples = CoreSamples {
            positions: vec![grid.position(1, 1)],
            velocities: vec![[1.0, 0.0]],
            signals: vec![vec![2.5]],
        };
        let sol = solve_core_stage(&samples, &config, InterpolationScheme::Cosine).unwrap();
        let a00 = sol.field.entry(0, 0).unwrap();
        assert!((a00[[1, 1]] - 2.5).abs() < 1e-12);
        assert_eq!(a00.iter().filter(|v| **v != 0.0).count(), 1);
        assert!(sol.field.entry(0, 1).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn partial_rows_populate_one_row() {
        let grid = tiny_grid();
        let config = CoreStageConfig {
            gamma: 1e-2,
            rows: vec![0],
            ..CoreStageConfig::new(grid)
        };
        let samples = CoreSamples {
            positions: vec![[0.3, 0.4], [1.5, 1.0]],
            velocities: vec![[1.0, 0.5], [0.2, -1.0]],
            signals: vec![vec![1.0, -0.5]],
        };
        let sol = solve_core_stage(&samples, &config, InterpolationScheme::Cosine).unwrap();
        let keys: Vec<_> = sol.field.entries.keys().copied().collect();
        assert_eq!(keys, vec![(0, 0), (0, 1)]);
        assert!(matches!(extract_trace(&sol.field), Err(Error::MissingEntry(1, 1))));
        assert!(extract_entry(&sol.field, 0, 1).is_ok());
        assert!(extract_entry(&sol.field, 1, 0).is_err());
    }

    #[test]
    fn outside_samples_are_dropped() {
        let grid = tiny_grid();
        let config = CoreStageConfig {
            gamma: 1e-2,
            rows: vec![0],
            ..CoreStageConfig::new(grid)
        };
        let samples = CoreSamples {
            positions: vec![[0.3, 0.4], [5.0, 1.0]],
            velocities: vec![[1.0, 0.5], [0.2, -1.0]],
            signals: vec![vec![1.0, -0.5]],
        };
        let sol = solve_core_stage(&samples, &config, InterpolationScheme::Cosine).unwrap();
        assert_eq!(sol.report.dropped_samples, 1);
    }

    #[test]
    fn config_validation() {
        let mut config = CoreStageConfig::new(tiny_grid());
        config.rows = vec![];
        assert!(config.validate().is_err());
        config.rows = vec![0, 0];
        assert!(config.validate().is_err());
        config.rows = vec![2];
        assert!(config.validate().is_err());
        config.rows = vec![1];
        config.gamma = -1.0;
        assert!(config.validate().is_err());
    }
}
