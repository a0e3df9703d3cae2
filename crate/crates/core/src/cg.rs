//! Matrix-free Krylov solvers for symmetric positive (semi)definite systems.

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KrylovMethod {
    /// Classic conjugate gradients; minimizes the A-norm of the error, the
    /// residual norm may oscillate.
    ConjugateGradient,
    /// Conjugate residuals; same Krylov spaces, residual norm non-increasing.
    #[default]
    ConjugateResidual,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgSettings {
    /// Stop once `|b - Ax| <= tolerance * |b|`.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub method: KrylovMethod,
}

impl Default for CgSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-3,
            max_iterations: 10_000,
            method: KrylovMethod::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    /// Relative residual norm before the first iteration and after each one.
    pub residual_history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` starting from the contents of `x` with the configured
/// method. `apply(v, out)` must write `A v` into `out`.
pub fn conjugate_gradient<F>(apply: F, b: &[f64], x: &mut [f64], settings: CgSettings) -> CgReport
where
    F: FnMut(&[f64], &mut [f64]),
{
    match settings.method {
        KrylovMethod::ConjugateGradient => plain_cg(apply, b, x, settings),
        KrylovMethod::ConjugateResidual => conjugate_residual(apply, b, x, settings),
    }
}

fn zero_rhs(x: &mut [f64]) -> CgReport {
    x.iter_mut().for_each(|v| *v = 0.0);
    CgReport {
        iterations: 0,
        relative_residual: 0.0,
        converged: true,
        residual_history: vec![0.0],
    }
}

fn plain_cg<F>(mut apply: F, b: &[f64], x: &mut [f64], settings: CgSettings) -> CgReport
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = b.len();
    assert_eq!(x.len(), n);
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return zero_rhs(x);
    }

    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut rel = rr.sqrt() / b_norm;
    let mut history = vec![rel];
    let mut iterations = 0;

    while rel > settings.tolerance && iterations < settings.max_iterations {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            // Direction in the null space; nothing more to gain.
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_next;
        rel = rr.sqrt() / b_norm;
        history.push(rel);
        iterations += 1;
    }

    CgReport {
        iterations,
        relative_residual: rel,
        converged: rel <= settings.tolerance,
        residual_history: history,
    }
}

fn conjugate_residual<F>(mut apply: F, b: &[f64], x: &mut [f64], settings: CgSettings) -> CgReport
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = b.len();
    assert_eq!(x.len(), n);
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return zero_rhs(x);
    }

    let mut ar = vec![0.0; n];
    apply(x, &mut ar);
    let mut r: Vec<f64> = b.iter().zip(&ar).map(|(b, a)| b - a).collect();
    apply(&r, &mut ar);
    let mut p = r.clone();
    let mut ap = ar.clone();
    let mut r_ar = dot(&r, &ar);
    let mut rel = dot(&r, &r).sqrt() / b_norm;
    let mut history = vec![rel];
    let mut iterations = 0;

    while rel > settings.tolerance && iterations < settings.max_iterations {
        let apap = dot(&ap, &ap);
        if !(r_ar > 0.0 && apap > 0.0) {
            break;
        }
        let alpha = r_ar / apap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        apply(&r, &mut ar);
        let r_ar_next = dot(&r, &ar);
        let beta = r_ar_next / r_ar;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
            ap[i] = ar[i] + beta * ap[i];
        }
        r_ar = r_ar_next;
        rel = dot(&r, &r).sqrt() / b_norm;
        history.push(rel);
        iterations += 1;
    }

    CgReport {
        iterations,
        relative_residual: rel,
        converged: rel <= settings.tolerance,
        residual_history: history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_spd_system() {
        for method in [KrylovMethod::ConjugateGradient, KrylovMethod::ConjugateResidual] {
            solve_small(method);
        }
    }

    fn solve_small(method: KrylovMethod) {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        let b = [1.0, 2.0, 3.0];
        let mut x = [0.0; 3];
        let report = conjugate_gradient(
            |v, out| {
                for i in 0..3 {
                    out[i] = (0..3).map(|j| a[i][j] * v[j]).sum();
                }
            },
            &b,
            &mut x,
            CgSettings {
                tolerance: 1e-14,
                max_iterations: 50,
                method,
            },
        );
        assert!(report.converged);
        assert!(report.iterations <= 4);
        for i in 0..3 {
            let ax: f64 = (0..3).map(|j| a[i][j] * x[j]).sum();
            assert!((ax - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let mut x = [5.0, -1.0];
        let report = conjugate_gradient(
            |v, out| out.copy_from_slice(v),
            &[0.0, 0.0],
            &mut x,
            CgSettings::default(),
        );
        assert_eq!(x, [0.0, 0.0]);
        assert!(report.converged);
    }

    #[test]
    fn reports_non_convergence() {
        let mut x = [0.0; 2];
        let report = conjugate_gradient(
            |v, out| {
                out[0] = v[0];
                out[1] = 1e-8 * v[1];
            },
            &[1.0, 1.0],
            &mut x,
            CgSettings {
                tolerance: 1e-30,
                max_iterations: 1,
                ..CgSettings::default()
            },
        );
        assert!(!report.converged);
        assert_eq!(report.iterations, 1);
    }

    #[test]
    fn conjugate_residual_is_monotone() {
        let n = 40;
        let diag: Vec<f64> = (0..n).map(|i| 1.0 + (i * i) as f64).collect();
        let b: Vec<f64> = (0..n).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let mut x = vec![0.0; n];
        let report = conjugate_gradient(
            |v, out| {
                for i in 0..n {
                    let left = if i > 0 { v[i - 1] } else { 0.0 };
                    let right = if i + 1 < n { v[i + 1] } else { 0.0 };
                    out[i] = diag[i] * v[i] - 0.5 * (left + right);
                }
            },
            &b,
            &mut x,
            CgSettings {
                tolerance: 1e-12,
                max_iterations: 500,
                method: KrylovMethod::ConjugateResidual,
            },
        );
        assert!(report.converged);
        assert!(report.residual_history.windows(2).all(|w| w[1] <= w[0]));
    }
}
