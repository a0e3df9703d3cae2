mod common;

use common::{relative_error, LangevinOracle};
use mpirecon::grid::GridGeometry;
use mpirecon::physics::{
    discretize_kernel, hsat, kernel_matrix, langevin, langevin_prime, sample_kernel, trace_kernel, KernelSelector,
    KernelSpec, ParticleModel,
};
use mpirecon::scanner::ScannerConfig;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

fn reference_spec() -> KernelSpec {
    KernelSpec::new(hsat(&ParticleModel::reference()), 2).unwrap()
}

#[test]
fn langevin_matches_arbitrary_precision() {
    let mut oracle = LangevinOracle::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = (0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let z: f64 = rng.random_range(-50.0..50.0);
        worst.0 = worst.0.max(relative_error(langevin(z), oracle.langevin(z)));
        worst.1 = worst.1.max(relative_error(langevin_prime(z), oracle.langevin_prime(z)));
    }
    assert!(worst.0 < 1e-10, "L worst relative error {:e}", worst.0);
    assert!(worst.1 < 1e-10, "L' worst relative error {:e}", worst.1);
}

#[test]
fn small_arguments_match_arbitrary_precision() {
    let mut oracle = LangevinOracle::new();
    for k in 0..200 {
        let z = 10f64.powf(-8.0 + 8.0 * k as f64 / 199.0) * if k % 2 == 0 { 1.0 } else { -1.0 };
        assert!(relative_error(langevin(z), oracle.langevin(z)) < 1e-13, "L({z})");
        assert!(
            relative_error(langevin_prime(z), oracle.langevin_prime(z)) < 1e-13,
            "L'({z})"
        );
    }
}

#[test]
fn kernel_at_origin_is_a_third_of_identity() {
    let spec = reference_spec();
    let k = kernel_matrix(&[0.0, 0.0], &spec);
    let third = 1.0 / (3.0 * spec.h);
    assert_eq!(k[[0, 0]], third);
    assert_eq!(k[[1, 1]], third);
    assert_eq!(k[[0, 1]], 0.0);
    assert_eq!(k[[1, 0]], 0.0);
}

/// Integral of the trace kernel over one pixel cell by 4 x 4 midpoint samples.
fn fine_cell_integral(center: [f64; 2], spacing: [f64; 2], gradient: [f64; 2], spec: &KernelSpec) -> f64 {
    let mut sum = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            let dx = center[0] + (j as f64 - 1.5) / 4.0 * spacing[0];
            let dy = center[1] + (i as f64 - 1.5) / 4.0 * spacing[1];
            sum += trace_kernel(&[gradient[0] * dx, gradient[1] * dy], spec);
        }
    }
    sum / 16.0 * spacing[0] * spacing[1]
}

#[test]
fn kernel_image_sum_matches_finer_riemann_sum() {
    let spec = reference_spec();
    let scanner = ScannerConfig::preclinical();
    let gradient = scanner.gradient_field();
    for n in [21, 33] {
        let grid = GridGeometry::centered(n, n, [0.024, 0.024]).unwrap();
        let image = discretize_kernel(&grid, gradient, &spec, KernelSelector::Trace).unwrap();
        let coarse = image.sum() * grid.pixel_area();
        let mut fine = 0.0;
        for r in 0..n {
            for c in 0..n {
                let dx = mpirecon::physics::wrapped_offset(c, n) * grid.spacing[0];
                let dy = mpirecon::physics::wrapped_offset(r, n) * grid.spacing[1];
                fine += fine_cell_integral([dx, dy], grid.spacing, gradient, &spec);
            }
        }
        assert!(relative_error(coarse, fine) < 0.01, "n = {n}: {coarse:e} vs {fine:e}");
    }
}

/// Smallest real part of the 2D DFT of the sampled trace kernel, relative to
/// the largest magnitude.
fn spectrum_floor(n: usize, spacing: f64) -> f64 {
    let spec = reference_spec();
    let gradient = ScannerConfig::preclinical().gradient_field();
    let image = sample_kernel(n, n, [spacing, spacing], gradient, &spec, KernelSelector::Trace).unwrap();
    let mut data: Vec<Complex64> = image.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    let fft = FftPlanner::new().plan_fft_forward(n);
    for chunk in data.chunks_mut(n) {
        fft.process(chunk);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for c in 0..n {
        for r in 0..n {
            col[r] = data[r * n + c];
        }
        fft.process(&mut col);
        for r in 0..n {
            data[r * n + c] = col[r];
        }
    }
    let peak = data.iter().map(|z| z.norm()).fold(0.0, f64::max);
    data.iter().map(|z| z.re).fold(f64::INFINITY, f64::min) / peak
}

// Truncating the 1/r tail to the periodic window leaves a small negative
// ripple in the spectrum; it fades as the window grows at fixed spacing.
#[test]
fn trace_kernel_spectrum_negative_part_fades_with_window() {
    let floors: Vec<f64> = [33, 65, 129].iter().map(|&n| spectrum_floor(n, 7.5e-4)).collect();
    assert!(floors[0] > -1.5e-3, "{floors:?}");
    assert!(floors.windows(2).all(|w| w[1].abs() < w[0].abs()), "{floors:?}");
    assert!(floors[2] > -1e-4, "{floors:?}");
    assert!(spectrum_floor(21, 1.2e-3) > -1.5e-3);
}

#[test]
fn kernel_images_are_even() {
    let spec = reference_spec();
    let gradient = ScannerConfig::preclinical().gradient_field();
    for selector in [
        KernelSelector::Trace,
        KernelSelector::Entry(0, 0),
        KernelSelector::Entry(0, 1),
    ] {
        let img = sample_kernel(17, 17, [7.5e-4, 7.5e-4], gradient, &spec, selector).unwrap();
        for r in 0..17 {
            for c in 0..17 {
                assert_eq!(img[[r, c]], img[[(17 - r) % 17, (17 - c) % 17]]);
            }
        }
    }
}

fn field_vector() -> impl Strategy<Value = [f64; 2]> {
    let component = prop_oneof![-1e5..1e5f64, -1e-3..1e-3f64, Just(0.0),];
    (component.clone(), component).prop_map(|(a, b)| [a, b])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn trace_of_matrix_is_trace_kernel(y in field_vector(), h in 10.0..1e4f64) {
        let spec = KernelSpec::new(h, 2).unwrap();
        let k = kernel_matrix(&y, &spec);
        let t = trace_kernel(&y, &spec);
        prop_assert!(relative_error(k[[0, 0]] + k[[1, 1]], t) < 1e-12);
    }

    #[test]
    fn kernel_matrix_is_symmetric_psd(y in field_vector(), h in 10.0..1e4f64) {
        let spec = KernelSpec::new(h, 2).unwrap();
        let k = kernel_matrix(&y, &spec);
        prop_assert_eq!(k[[0, 1]], k[[1, 0]]);
        let (a, b, c) = (k[[0, 0]], k[[0, 1]], k[[1, 1]]);
        let mean = 0.5 * (a + c);
        let radius = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        let scale = a.abs() + c.abs();
        prop_assert!(mean - radius >= -1e-14 * scale, "eigenvalue {}", mean - radius);
    }

    #[test]
    fn langevin_is_odd_and_bounded(z in -700.0..700.0f64) {
        prop_assert_eq!(langevin(-z), -langevin(z));
        prop_assert!(langevin(z).abs() < 1.0);
        prop_assert!(langevin_prime(z) >= 0.0 && langevin_prime(z) <= 1.0 / 3.0);
    }
}

#[test]
fn random_field_vectors_near_zero() {
    let spec = reference_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let scale = 10f64.powf(rng.random_range(-12.0..1.0)) * spec.h;
        let y = [rng.random_range(-1.0..1.0) * scale, rng.random_range(-1.0..1.0) * scale];
        let k = kernel_matrix(&y, &spec);
        assert!(relative_error(k[[0, 0]] + k[[1, 1]], trace_kernel(&y, &spec)) < 1e-12);
    }
}
