//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use astro_float::{BigFloat, Consts, RoundingMode};
use mpirecon::grid::{ConcentrationImage, GridGeometry};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const PRECISION: usize = 320;
const RM: RoundingMode = RoundingMode::ToEven;

fn to_f64(x: &BigFloat) -> f64 {
    x.to_string().parse().expect("decimal output parses")
}

/// Arbitrary-precision `L(z) = coth z - 1/z` and `L'(z) = 1/z^2 + 1 - coth^2 z`.
pub struct LangevinOracle {
    consts: Consts,
}

impl LangevinOracle {
    pub fn new() -> Self {
        Self {
            consts: Consts::new().expect("constants cache"),
        }
    }

    fn coth_and_inverse(&mut self, z: f64) -> (BigFloat, BigFloat) {
        let x = BigFloat::from_f64(z, PRECISION);
        let one = BigFloat::from_f64(1.0, PRECISION);
        let coth = one.div(&x.tanh(PRECISION, RM, &mut self.consts), PRECISION, RM);
        (coth, one.div(&x, PRECISION, RM))
    }

    pub fn langevin(&mut self, z: f64) -> f64 {
        if z == 0.0 {
            return 0.0;
        }
        let (coth, inv) = self.coth_and_inverse(z);
        to_f64(&coth.sub(&inv, PRECISION, RM))
    }

    pub fn langevin_prime(&mut self, z: f64) -> f64 {
        if z == 0.0 {
            return 1.0 / 3.0;
        }
        let (coth, inv) = self.coth_and_inverse(z);
        let one = BigFloat::from_f64(1.0, PRECISION);
        let inv2 = inv.mul(&inv, PRECISION, RM);
        let coth2 = coth.mul(&coth, PRECISION, RM);
        to_f64(&inv2.add(&one, PRECISION, RM).sub(&coth2, PRECISION, RM))
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        ((a - b) / b).abs()
    }
}

/// Direct O(N^2) spatial sum `sum_x' f(G (x - x')) rho(x') dA`.
pub fn naive_convolution(rho: &ConcentrationImage, f: impl Fn([f64; 2]) -> f64, gradient: [f64; 2]) -> Array2<f64> {
    let grid = &rho.geometry;
    let area = grid.pixel_area();
    Array2::from_shape_fn(grid.shape(), |(r, c)| {
        let x = grid.position(r, c);
        let mut sum = 0.0;
        for ((r2, c2), v) in rho.values.indexed_iter() {
            if *v != 0.0 {
                let x2 = grid.position(r2, c2);
                sum += f([gradient[0] * (x[0] - x2[0]), gradient[1] * (x[1] - x2[1])]) * v;
            }
        }
        sum * area
    })
}

pub fn relative_l2(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

pub fn random_points(grid: &GridGeometry, n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let lo = grid.origin;
    let hi = grid.far_corner();
    (0..n)
        .map(|_| [rng.random_range(lo[0]..=hi[0]), rng.random_range(lo[1]..=hi[1])])
        .collect()
}
