//! Reference computations that share no code with the spectral solver.

use nalgebra::{DMatrix, DVector};

/// Method of lines for u_tt − e^{−2t}u_θθ + u_t + e^{−t}u_θ = 0 on a uniform periodic grid:
/// second-order centred differences in θ, classical RK4 in t with step `dt`.
/// Returns (u, u_t) at `t_end`.
pub fn example_method_of_lines(u0: &[f64], u1: &[f64], t_end: f64, dt: f64) -> (Vec<f64>, Vec<f64>) {
    let n = u0.len();
    let h = 2.0 * std::f64::consts::PI / n as f64;
    let rhs = |t: f64, u: &[f64], v: &[f64], du: &mut [f64], dv: &mut [f64]| {
        let (a, b) = ((-2.0 * t).exp() / (h * h), (-t).exp() / (2.0 * h));
        for i in 0..n {
            let (l, r) = (u[(i + n - 1) % n], u[(i + 1) % n]);
            du[i] = v[i];
            dv[i] = a * (r - 2.0 * u[i] + l) - v[i] - b * (r - l);
        }
    };
    let steps = (t_end / dt).ceil() as usize;
    let dt = t_end / steps as f64;
    let (mut u, mut v) = (u0.to_vec(), u1.to_vec());
    let z = vec![0.0; n];
    let (mut k1u, mut k1v, mut k2u, mut k2v) = (z.clone(), z.clone(), z.clone(), z.clone());
    let (mut k3u, mut k3v, mut k4u, mut k4v) = (z.clone(), z.clone(), z.clone(), z.clone());
    let (mut tu, mut tv) = (z.clone(), z);
    for s in 0..steps {
        let t = s as f64 * dt;
        rhs(t, &u, &v, &mut k1u, &mut k1v);
        for i in 0..n {
            tu[i] = u[i] + 0.5 * dt * k1u[i];
            tv[i] = v[i] + 0.5 * dt * k1v[i];
        }
        rhs(t + 0.5 * dt, &tu, &tv, &mut k2u, &mut k2v);
        for i in 0..n {
            tu[i] = u[i] + 0.5 * dt * k2u[i];
            tv[i] = v[i] + 0.5 * dt * k2v[i];
        }
        rhs(t + 0.5 * dt, &tu, &tv, &mut k3u, &mut k3v);
        for i in 0..n {
            tu[i] = u[i] + dt * k3u[i];
            tv[i] = v[i] + dt * k3v[i];
        }
        rhs(t + dt, &tu, &tv, &mut k4u, &mut k4v);
        for i in 0..n {
            u[i] += dt / 6.0 * (k1u[i] + 2.0 * k2u[i] + 2.0 * k3u[i] + k4u[i]);
            v[i] += dt / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
        }
    }
    (u, v)
}

/// Least-squares solution of a x ≈ b with columns scaled to unit norm before the SVD solve.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let norms: Vec<f64> = (0..a.ncols()).map(|j| a.column(j).norm().max(f64::MIN_POSITIVE)).collect();
    let scaled = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] / norms[j]);
    let x = scaled.svd(true, true).solve(b, 0.0).expect("SVD with both factors");
    DVector::from_fn(a.ncols(), |j, _| x[j] / norms[j])
}

/// Ordinary least-squares line y ≈ slope·x + intercept.
pub fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let a = DMatrix::from_fn(x.len(), 2, |i, j| if j == 0 { x[i] } else { 1.0 });
    let s = least_squares(&a, &DVector::from_column_slice(y));
    (s[0], s[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_fit_recovers_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| -2.5 * v + 1.0).collect();
        let (s, c) = line_fit(&x, &y);
        assert!((s + 2.5).abs() < 1e-12 && (c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn least_squares_handles_disparate_columns() {
        let t: Vec<f64> = (0..20).map(|i| 10.0 + i as f64).collect();
        let a = DMatrix::from_fn(20, 2, |i, j| if j == 0 { 1.0 } else { (-t[i]).exp() });
        let b = DVector::from_fn(20, |i, _| 3.0 + 2.0 * (-t[i]).exp());
        let x = least_squares(&a, &b);
        assert!((x[0] - 3.0).abs() < 1e-12);
        assert!((x[1] - 2.0).abs() < 1e-3);
    }

    #[test]
    fn method_of_lines_constant_and_decay() {
        // u = c + d e^{−t} solves the equation for constant data.
        let n = 64;
        let (u, v) = example_method_of_lines(&vec![1.0; n], &vec![-0.5; n], 2.0, 1e-3);
        let want = 0.5 + 0.5 * (-2f64).exp();
        assert!(u.iter().all(|x| (x - want).abs() < 1e-12));
        assert!(v.iter().all(|x| (x + 0.5 * (-2f64).exp()).abs() < 1e-12));
    }
}
