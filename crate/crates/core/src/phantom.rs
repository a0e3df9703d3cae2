//! Binary phantom generators. Geometric parameters are in millimeters,
//! positions relative to the grid center, `x` along columns and `y` along rows.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{ConcentrationImage, GridGeometry, Image};

#[derive(Clone, Debug, PartialEq)]
pub enum PhantomKind {
    Empty,
    /// Filled disk; a radius below half a pixel marks the single nearest pixel.
    Dot {
        center: [f64; 2],
        radius: f64,
    },
    /// Two vertical bars whose facing edges are `separation` apart. The bars
    /// share their vertical center.
    TwoBar {
        lengths: [f64; 2],
        width: f64,
        separation: f64,
        center: [f64; 2],
    },
    /// Meander of five square-section rods, alternating horizontal and vertical.
    Snake {
        rod_length: f64,
        width: f64,
        center: [f64; 2],
    },
    /// Disk on top of a downward-pointing triangle.
    IceCream {
        radius: f64,
        cone_height: f64,
        center: [f64; 2],
    },
    /// Archimedean spiral traced with a thick pen.
    Snail {
        turns: f64,
        outer_radius: f64,
        width: f64,
        center: [f64; 2],
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub grid: GridGeometry,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Shape {
    Rect { min: [f64; 2], max: [f64; 2] },
    Disk { center: [f64; 2], radius: f64 },
    Triangle([[f64; 2]; 3]),
    Capsule { a: [f64; 2], b: [f64; 2], radius: f64 },
}

impl Shape {
    fn bounds(&self) -> [[f64; 2]; 2] {
        match *self {
            Shape::Rect { min, max } => [min, max],
            Shape::Disk { center, radius } => [
                [center[0] - radius, center[1] - radius],
                [center[0] + radius, center[1] + radius],
            ],
            Shape::Triangle(p) => {
                let xs = p.map(|q| q[0]);
                let ys = p.map(|q| q[1]);
                [
                    [
                        xs.iter().copied().fold(f64::INFINITY, f64::min),
                        ys.iter().copied().fold(f64::INFINITY, f64::min),
                    ],
                    [
                        xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                        ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    ],
                ]
            }
            Shape::Capsule { a, b, radius } => [
                [a[0].min(b[0]) - radius, a[1].min(b[1]) - radius],
                [a[0].max(b[0]) + radius, a[1].max(b[1]) + radius],
            ],
        }
    }

    fn contains(&self, p: [f64; 2], eps: f64) -> bool {
        match *self {
            Shape::Rect { min, max } => {
                p[0] >= min[0] - eps && p[0] <= max[0] + eps && p[1] >= min[1] - eps && p[1] <= max[1] + eps
            }
            Shape::Disk { center, radius } => (p[0] - center[0]).hypot(p[1] - center[1]) <= radius + eps,
            Shape::Triangle([a, b, c]) => {
                let cross = |o: [f64; 2], u: [f64; 2], q: [f64; 2]| {
                    (u[0] - o[0]) * (q[1] - o[1]) - (u[1] - o[1]) * (q[0] - o[0])
                };
                let d = [cross(a, b, p), cross(b, c, p), cross(c, a, p)];
                let tol = eps * eps;
                d.iter().all(|v| *v >= -tol) || d.iter().all(|v| *v <= tol)
            }
            Shape::Capsule { a, b, radius } => {
                let ab = [b[0] - a[0], b[1] - a[1]];
                let len2 = ab[0] * ab[0] + ab[1] * ab[1];
                let t = if len2 > 0.0 {
                    (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
                (p[0] - q[0]).hypot(p[1] - q[1]) <= radius + eps
            }
        }
    }
}

const MM: f64 = 1e-3;

fn mm(p: [f64; 2], origin: [f64; 2]) -> [f64; 2] {
    [origin[0] + p[0] * MM, origin[1] + p[1] * MM]
}

fn shapes(kind: &PhantomKind, grid: &GridGeometry) -> Result<Vec<Shape>> {
    let lo = grid.position(0, 0);
    let hi = grid.far_corner();
    let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let positive = |name: &'static str, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(name, "must be finite and > 0"))
        }
    };
    Ok(match *kind {
        PhantomKind::Empty => vec![],
        PhantomKind::Dot { center, radius } => {
            if !(radius >= 0.0) {
                return Err(Error::invalid("radius", "must be >= 0"));
            }
            let c = mm(center, mid);
            let r = radius * MM;
            if r < 0.5 * grid.spacing[0].min(grid.spacing[1]) {
                let [u, v] = grid.fractional_index(c);
                let snapped = grid.position(v.round().max(0.0) as usize, u.round().max(0.0) as usize);
                if !grid.contains(c) {
                    return Err(Error::ShapeOutOfBounds(format!("dot at {center:?} mm")));
                }
                vec![Shape::Disk {
                    center: snapped,
                    radius: 0.0,
                }]
            } else {
                vec![Shape::Disk { center: c, radius: r }]
            }
        }
        PhantomKind::TwoBar {
            lengths,
            width,
            separation,
            center,
        } => {
            positive("width", width)?;
            positive("length", lengths[0])?;
            positive("length", lengths[1])?;
            if !(separation >= 0.0) {
                return Err(Error::invalid("separation", "must be >= 0"));
            }
            let c = mm(center, mid);
            let (w, s) = (width * MM, separation * MM);
            let left = c[0] - s / 2.0;
            let right = c[0] + s / 2.0;
            let half = [lengths[0] * MM / 2.0, lengths[1] * MM / 2.0];
            vec![
                Shape::Rect {
                    min: [left - w, c[1] - half[0]],
                    max: [left, c[1] + half[0]],
                },
                Shape::Rect {
                    min: [right, c[1] - half[1]],
                    max: [right + w, c[1] + half[1]],
                },
            ]
        }
        PhantomKind::Snake {
            rod_length,
            width,
            center,
        } => {
            positive("rod_length", rod_length)?;
            positive("width", width)?;
            let c = mm(center, mid);
            let (l, w) = (rod_length * MM, width * MM);
            // Corners of the meander: right, down, left, down, right.
            let start = [c[0] - l / 2.0, c[1] - l];
            let steps = [[l, 0.0], [0.0, l], [-l, 0.0], [0.0, l], [l, 0.0]];
            let mut p = start;
            steps
                .iter()
                .map(|d| {
                    let q = [p[0] + d[0], p[1] + d[1]];
                    let rect = Shape::Rect {
                        min: [p[0].min(q[0]) - w / 2.0, p[1].min(q[1]) - w / 2.0],
                        max: [p[0].max(q[0]) + w / 2.0, p[1].max(q[1]) + w / 2.0],
                    };
                    p = q;
                    rect
                })
                .collect()
        }
        PhantomKind::IceCream {
            radius,
            cone_height,
            center,
        } => {
            positive("radius", radius)?;
            positive("cone_height", cone_height)?;
            let c = mm(center, mid);
            let (r, h) = (radius * MM, cone_height * MM);
            // The disk sits above the cone; the cone tip points toward +y.
            let disk = [c[0], c[1] - h / 2.0];
            vec![
                Shape::Disk {
                    center: disk,
                    radius: r,
                },
                Shape::Triangle([[c[0] - r, disk[1]], [c[0] + r, disk[1]], [c[0], disk[1] + h + r]]),
            ]
        }
        PhantomKind::Snail {
            turns,
            outer_radius,
            width,
            center,
        } => {
            positive("turns", turns)?;
            positive("outer_radius", outer_radius)?;
            positive("width", width)?;
            let c = mm(center, mid);
            let (r_out, w) = (outer_radius * MM, width * MM);
            let segments = (turns * 48.0).ceil() as usize;
            let point = |i: usize| {
                let t = i as f64 / segments as f64;
                let angle = 2.0 * PI * turns * t;
                let r = r_out * t;
                [c[0] + r * angle.cos(), c[1] + r * angle.sin()]
            };
            (0..segments)
                .map(|i| Shape::Capsule {
                    a: point(i),
                    b: point(i + 1),
                    radius: w / 2.0,
                })
                .collect()
        }
    })
}

/// Rasterizes the phantom: a pixel is 1 when its center lies in the shape.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<ConcentrationImage> {
    let grid = &spec.grid;
    grid.validate()?;
    let shapes = shapes(&spec.kind, grid)?;
    let lo = grid.position(0, 0);
    let hi = grid.far_corner();
    let half = [grid.spacing[0] / 2.0, grid.spacing[1] / 2.0];
    let eps = 1e-9 * grid.spacing[0].min(grid.spacing[1]);
    for shape in &shapes {
        let [smin, smax] = shape.bounds();
        if smin[0] < lo[0] - half[0] - eps
            || smin[1] < lo[1] - half[1] - eps
            || smax[0] > hi[0] + half[0] + eps
            || smax[1] > hi[1] + half[1] + eps
        {
            return Err(Error::ShapeOutOfBounds(format!(
                "{:?} spans [{:.3e}, {:.3e}] x [{:.3e}, {:.3e}] m",
                spec.kind, smin[0], smax[0], smin[1], smax[1]
            )));
        }
    }
    let mut image = Image::zeros(grid.clone());
    for ((r, c), v) in image.values.indexed_iter_mut() {
        let p = grid.position(r, c);
        if shapes.iter().any(|s| s.contains(p, eps)) {
            *v = 1.0;
        }
    }
    Ok(image)
}

/// Number of 4-connected components of nonzero pixels.
pub fn count_components(image: &ndarray::Array2<f64>) -> usize {
    let (rows, cols) = image.dim();
    let mut seen = vec![false; rows * cols];
    let mut count = 0;
    for start in 0..rows * cols {
        if seen[start] || image[[start / cols, start % cols]] == 0.0 {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let (r, c) = (i / cols, i % cols);
            let mut visit = |rr: usize, cc: usize| {
                let j = rr * cols + cc;
                if !seen[j] && image[[rr, cc]] != 0.0 {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(r - 1, c);
            }
            if r + 1 < rows {
                visit(r + 1, c);
            }
            if c > 0 {
                visit(r, c - 1);
            }
            if c + 1 < cols {
                visit(r, c + 1);
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_1mm() -> GridGeometry {
        GridGeometry::centered(25, 25, [0.024, 0.024]).unwrap()
    }

    #[test]
    fn empty_is_zero() {
        let img = generate_phantom(&PhantomSpec {
            kind: PhantomKind::Empty,
            grid: grid_1mm(),
        })
        .unwrap();
        assert!(img.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn offset_dot() {
        let img = generate_phantom(&PhantomSpec {
            kind: PhantomKind::Dot {
                center: [6.0, 6.0],
                radius: 1.0,
            },
            grid: grid_1mm(),
        })
        .unwrap();
        assert_eq!(count_components(&img.values), 1);
        assert_eq!(img.values[[18, 18]], 1.0);
        assert_eq!(img.values[[12, 12]], 0.0);
        assert_eq!(img.values.sum(), 5.0);
    }

    #[test]
    fn two_bars_three_pixels_apart() {
        let img = generate_phantom(&PhantomSpec {
            kind: PhantomKind::TwoBar {
                lengths: [20.0, 17.5],
                width: 2.0,
                separation: 3.0,
                center: [0.0, 0.0],
            },
            grid: grid_1mm(),
        })
        .unwrap();
        assert_eq!(count_components(&img.values), 2);
        let row: Vec<f64> = img.values.row(12).to_vec();
        let on: Vec<usize> = (0..25).filter(|&c| row[c] == 1.0).collect();
        assert_eq!(on, vec![9, 10, 14, 15]);
        let gap = on.windows(2).map(|w| w[1] - w[0] - 1).max().unwrap();
        assert_eq!(gap, 3);
    }

    #[test]
    fn out_of_bounds_rejected() {
        let err = generate_phantom(&PhantomSpec {
            kind: PhantomKind::Dot {
                center: [11.5, 0.0],
                radius: 2.0,
            },
            grid: grid_1mm(),
        });
        assert!(matches!(err, Err(Error::ShapeOutOfBounds(_))));
    }

    #[test]
    fn composites_rasterize() {
        for kind in [
            PhantomKind::Snake {
                rod_length: 8.0,
                width: 2.0,
                center: [0.0, 0.0],
            },
            PhantomKind::IceCream {
                radius: 4.0,
                cone_height: 8.0,
                center: [0.0, 0.0],
            },
            PhantomKind::Snail {
                turns: 2.0,
                outer_radius: 9.0,
                width: 1.5,
                center: [0.0, 0.0],
            },
        ] {
            let img = generate_phantom(&PhantomSpec { kind, grid: grid_1mm() }).unwrap();
            assert!(img.values.sum() > 10.0);
            assert_eq!(count_components(&img.values), 1);
        }
    }
}
