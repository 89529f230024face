//! Scaling-and-squaring with the [13/13] Padé approximant (Higham 2005).

use crate::error::{Error, Result};
use crate::linalg::{c, CMat};

const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA_13: f64 = 5.371920351148152;

fn norm1(m: &CMat) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// exp(M) for a square complex matrix.
pub fn pade_expm(m: &CMat) -> Result<CMat> {
    let k = m.nrows();
    let nrm = norm1(m);
    let s = if nrm > THETA_13 { (nrm / THETA_13).log2().ceil() as i32 } else { 0 };
    let a = m * c(0.5f64.powi(s));
    let id = CMat::identity(k, k);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = |i: usize| c(B13[i]);
    let u_inner = &a6 * (&a6 * b(13) + &a4 * b(11) + &a2 * b(9)) + &a6 * b(7) + &a4 * b(5) + &a2 * b(3)
        + &id * b(1);
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b(12) + &a4 * b(10) + &a2 * b(8)) + &a6 * b(6) + &a4 * b(4) + &a2 * b(2)
        + &id * b(0);
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| Error::Numerical("singular Padé denominator".into()))?;
    for _ in 0..s {
        r = &r * &r;
    }
    if r.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("matrix exponential overflow".into()));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::C64;

    fn series(m: &CMat) -> CMat {
        let k = m.nrows();
        let mut sum = CMat::identity(k, k);
        let mut term = CMat::identity(k, k);
        for n in 1..60 {
            term = &term * m * c(1.0 / n as f64);
            sum += &term;
        }
        sum
    }

    #[test]
    fn matches_series_small_norm() {
        let m = CMat::from_row_slice(
            3,
            3,
            &[
                C64::new(0.1, 0.2),
                c(-0.3),
                c(0.5),
                c(0.0),
                C64::new(-0.7, 0.1),
                c(0.2),
                c(0.4),
                c(0.0),
                C64::new(0.3, -0.5),
            ],
        );
        let e = pade_expm(&m).unwrap();
        let s = series(&m);
        assert!((e - s).norm() < 1e-14);
    }

    #[test]
    fn scaling_path() {
        let m = CMat::from_row_slice(2, 2, &[c(0.0), c(20.0), c(-20.0), c(0.0)]);
        let e = pade_expm(&m).unwrap();
        let (s, co) = (20.0f64.sin(), 20.0f64.cos());
        assert!((e[(0, 0)] - c(co)).norm() < 1e-12);
        assert!((e[(0, 1)] - c(s)).norm() < 1e-12);
    }
}
