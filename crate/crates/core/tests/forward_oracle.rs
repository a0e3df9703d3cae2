mod common;

use common::{naive_convolution, random_points, relative_l2};
use mpirecon::core_stage::{LaplacianBoundary, NormalOperator};
use mpirecon::forward::{add_noise, core_operator, rms, simulate_signal, ScanSignal};
use mpirecon::grid::{ConcentrationImage, GridGeometry, Image};
use mpirecon::interp::{interpolate, interpolation_adjoint, InterpolationScheme};
use mpirecon::physics::{hsat, kernel_entry, trace_kernel, KernelSpec, ParticleModel};
use mpirecon::scanner::{lissajous, ScannerConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec() -> KernelSpec {
    KernelSpec::new(hsat(&ParticleModel::reference()), 2).unwrap()
}

fn random_image(grid: &GridGeometry, rng: &mut ChaCha8Rng) -> ConcentrationImage {
    let values = Array2::from_shape_fn(grid.shape(), |_| rng.random_range(0.0..1.0));
    Image::new(values, grid.clone()).unwrap()
}

#[test]
fn fft_core_operator_matches_naive_convolution() {
    let spec = spec();
    let scanner = ScannerConfig::preclinical();
    let g = scanner.gradient_field();
    let grid = GridGeometry::centered(16, 16, [0.012, 0.012]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let mut deltas = grid.zeros();
    deltas[[3, 4]] = 1.0;
    deltas[[11, 9]] = 2.0;
    let phantoms = vec![
        Image::new(deltas, grid.clone()).unwrap(),
        random_image(&grid, &mut rng),
        random_image(&grid, &mut rng),
    ];
    for rho in &phantoms {
        let field = core_operator(rho, &spec, &scanner).unwrap();
        for (row, col) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let naive = naive_convolution(rho, |y| kernel_entry(&y, row, col, &spec).unwrap(), g);
            let err = relative_l2(field.entry(row, col).unwrap(), &naive);
            assert!(err < 1e-8, "entry ({row}, {col}): {err:e}");
        }
        let trace = field.entry(0, 0).unwrap() + field.entry(1, 1).unwrap();
        let naive = naive_convolution(rho, |y| trace_kernel(&y, &spec), g);
        assert!(relative_l2(&trace, &naive) < 1e-8);
    }
}

#[test]
fn two_deltas_give_two_shifted_kernels() {
    let spec = spec();
    let scanner = ScannerConfig::preclinical();
    let grid = GridGeometry::centered(16, 16, [0.012, 0.012]).unwrap();
    let single = |r: usize, c: usize| {
        let mut v = grid.zeros();
        v[[r, c]] = 1.0;
        core_operator(&Image::new(v, grid.clone()).unwrap(), &spec, &scanner).unwrap()
    };
    let mut both = grid.zeros();
    both[[2, 2]] = 1.0;
    both[[12, 7]] = 1.0;
    let sum = core_operator(&Image::new(both, grid.clone()).unwrap(), &spec, &scanner).unwrap();
    let (a, b) = (single(2, 2), single(12, 7));
    for key in [(0, 0), (0, 1), (1, 1)] {
        let expected = a.entry(key.0, key.1).unwrap() + b.entry(key.0, key.1).unwrap();
        assert!(relative_l2(sum.entry(key.0, key.1).unwrap(), &expected) < 1e-12);
    }
}

#[test]
fn signal_is_interpolated_field_times_velocity() {
    let spec = spec();
    let scanner = ScannerConfig::preclinical();
    let grid = GridGeometry::centered(21, 21, [0.024, 0.024]).unwrap();
    let mut v = grid.zeros();
    v[[10, 10]] = 1.0;
    let rho = Image::new(v, grid.clone()).unwrap();
    let traj = lissajous(&scanner, 4096).unwrap();
    for scheme in [InterpolationScheme::Cosine, InterpolationScheme::Bilinear] {
        let signal = simulate_signal(&rho, &traj, &spec, &scanner, scheme).unwrap();
        let field = core_operator(&rho, &spec, &scanner).unwrap();
        for k in (0..traj.len()).step_by(37) {
            let p = traj.positions[k];
            let vel = traj.velocities[k];
            for row in 0..2 {
                let expected: f64 = (0..2)
                    .map(|col| interpolate(field.entry(row, col).unwrap(), &grid, p, scheme).unwrap() * vel[col])
                    .sum();
                let got = signal.channels[row][k];
                assert!(
                    (got - expected).abs() <= 1e-12 * expected.abs().max(1e-30),
                    "sample {k}"
                );
            }
        }
    }
}

#[test]
fn simulation_is_linear() {
    let spec = spec();
    let scanner = ScannerConfig::preclinical();
    let grid = GridGeometry::centered(17, 17, [0.024, 0.024]).unwrap();
    let traj = lissajous(&scanner, 2048).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (r1, r2) = (random_image(&grid, &mut rng), random_image(&grid, &mut rng));
    let (alpha, beta) = (0.7, -1.9);
    let combo = Image::new(&r1.values * alpha + &r2.values * beta, grid.clone()).unwrap();
    let sim = |r: &ConcentrationImage| simulate_signal(r, &traj, &spec, &scanner, InterpolationScheme::Cosine).unwrap();
    let (s1, s2, s) = (sim(&r1), sim(&r2), sim(&combo));
    for ch in 0..2 {
        let scale = rms(&s.channels[ch]);
        for k in 0..s.len() {
            let expected = alpha * s1.channels[ch][k] + beta * s2.channels[ch][k];
            assert!((s.channels[ch][k] - expected).abs() < 1e-8 * scale);
        }
    }
}

#[test]
fn centrally_symmetric_phantom_gives_symmetric_trace() {
    let spec = spec();
    let scanner = ScannerConfig::preclinical();
    let n = 21;
    let grid = GridGeometry::centered(n, n, [0.024, 0.024]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut v = grid.zeros();
    for r in 0..n {
        for c in 0..n {
            if v[[r, c]] == 0.0 {
                let x = rng.random_range(0.0..1.0);
                v[[r, c]] = x;
                v[[n - 1 - r, n - 1 - c]] = x;
            }
        }
    }
    let field = core_operator(&Image::new(v, grid).unwrap(), &spec, &scanner).unwrap();
    let trace = field.entry(0, 0).unwrap() + field.entry(1, 1).unwrap();
    let peak = trace.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for r in 0..n {
        for c in 0..n {
            assert!((trace[[r, c]] - trace[[n - 1 - r, n - 1 - c]]).abs() < 1e-12 * peak);
        }
    }
}

#[test]
fn noise_level_matches_request() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 20_000;
    let channels = vec![
        (0..n).map(|k| (k as f64 * 0.01).sin()).collect::<Vec<_>>(),
        (0..n).map(|_| rng.random_range(-3.0..3.0)).collect(),
    ];
    let signal = ScanSignal::new(channels, 1.0).unwrap();
    let noisy = add_noise(&signal, 0.1, 9).unwrap();
    for ch in 0..2 {
        let diff: Vec<f64> = noisy.channels[ch]
            .iter()
            .zip(&signal.channels[ch])
            .map(|(a, b)| a - b)
            .collect();
        let mean = diff.iter().sum::<f64>() / n as f64;
        let std = (diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let target = 0.1 * rms(&signal.channels[ch]);
        assert!((std / target - 1.0).abs() < 0.05, "channel {ch}: {std} vs {target}");
    }
}

#[test]
fn interpolation_adjoint_dot_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for instance in 0..100 {
        let rows = rng.random_range(3..20);
        let cols = rng.random_range(3..20);
        let grid = GridGeometry::new(
            rows,
            cols,
            [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            [rng.random_range(0.1..2.0), rng.random_range(0.1..2.0)],
        )
        .unwrap();
        let scheme = if instance % 2 == 0 {
            InterpolationScheme::Cosine
        } else {
            InterpolationScheme::Bilinear
        };
        let field = Array2::from_shape_fn(grid.shape(), |_| rng.random_range(-1.0..1.0));
        let points = random_points(&grid, 50, &mut rng);
        let coeffs: Vec<f64> = (0..points.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs: f64 = points
            .iter()
            .zip(&coeffs)
            .map(|(p, c)| interpolate(&field, &grid, *p, scheme).unwrap() * c)
            .sum();
        let mut adj = grid.zeros();
        for (p, c) in points.iter().zip(&coeffs) {
            for ((r, col), w) in interpolation_adjoint(&grid, *p, *c, scheme).unwrap() {
                adj[[r, col]] += w;
            }
        }
        let rhs: f64 = adj.iter().zip(&field).map(|(a, f)| a * f).sum();
        assert!(
            (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1.0),
            "instance {instance}"
        );
    }
}

#[test]
fn normal_operator_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for instance in 0..100 {
        let n = rng.random_range(3..14);
        let grid = GridGeometry::centered(n, n + 1, [rng.random_range(0.005..0.03), 0.02]).unwrap();
        let positions = random_points(&grid, 200, &mut rng);
        let velocities: Vec<[f64; 2]> = (0..200)
            .map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)])
            .collect();
        let gamma = [0.0, 1e-7, 1e-3][instance % 3];
        let boundary = if instance % 2 == 0 {
            LaplacianBoundary::Replicate
        } else {
            LaplacianBoundary::Zero
        };
        let scheme = if instance % 4 < 2 {
            InterpolationScheme::Cosine
        } else {
            InterpolationScheme::Bilinear
        };
        let op = NormalOperator::new(&grid, &positions, &velocities, gamma, boundary, scheme).unwrap();
        let u: Vec<f64> = (0..op.size()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..op.size()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (mut ou, mut ow) = (vec![0.0; op.size()], vec![0.0; op.size()]);
        op.apply(&u, &mut ou);
        op.apply(&w, &mut ow);
        let a: f64 = ou.iter().zip(&w).map(|(x, y)| x * y).sum();
        let b: f64 = u.iter().zip(&ow).map(|(x, y)| x * y).sum();
        assert!(
            (a - b).abs() <= 1e-10 * a.abs().max(b.abs()),
            "instance {instance}: {a} vs {b}"
        );
    }
}
