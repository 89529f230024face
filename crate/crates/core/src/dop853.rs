//! Dormand–Prince 8(5,3) with 7th-order dense output, for complex linear-scale systems.
//! Step control follows the Hairer–Nørsett–Wanner formulation (as in scipy's `DOP853`).

use crate::dop853_tableau as tab;
use crate::error::{Error, Result};
use crate::linalg::C64;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
const ERROR_EXPONENT: f64 = -1.0 / 8.0;

#[derive(Debug, Clone, Copy)]
pub struct Options {
    pub rtol: f64,
    /// Absolute floor of the per-component error scale.
    pub atol: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Options {
    pub fn relative(rtol: f64) -> Self {
        Options { rtol, atol: 1e-300, max_step: f64::INFINITY, max_steps: 2_000_000 }
    }
}

#[derive(Debug, Clone)]
struct Segment {
    t_old: f64,
    h: f64,
    y_old: Vec<C64>,
    /// INTERPOLATOR_POWER rows of length n.
    f: Vec<C64>,
}

impl Segment {
    fn eval_into(&self, t: f64, out: &mut [C64]) {
        let n = self.y_old.len();
        let x = (t - self.t_old) / self.h;
        for o in out.iter_mut() {
            *o = C64::new(0.0, 0.0);
        }
        for (i, row) in (0..tab::INTERPOLATOR_POWER).rev().enumerate() {
            let fr = &self.f[row * n..(row + 1) * n];
            let w = if i % 2 == 0 { x } else { 1.0 - x };
            for (o, fv) in out.iter_mut().zip(fr) {
                *o = (*o + fv) * w;
            }
        }
        for (o, y) in out.iter_mut().zip(&self.y_old) {
            *o += y;
        }
    }
}

/// Piecewise dense interpolant over the accepted steps of one run.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    n: usize,
    direction: f64,
    /// Step start times, in integration order.
    starts: Vec<f64>,
    t_end: f64,
    segs: Vec<Segment>,
}

impl DenseSolution {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn t_start(&self) -> f64 {
        self.starts.first().copied().unwrap_or(self.t_end)
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// Step boundaries in increasing time order.
    pub fn mesh(&self) -> Vec<f64> {
        let mut m = self.starts.clone();
        m.push(self.t_end);
        if self.direction < 0.0 {
            m.reverse();
        }
        m
    }

    fn locate(&self, t: f64) -> usize {
        let d = self.direction;
        // Last segment whose start is not beyond t in the direction of integration.
        let idx = self.starts.partition_point(|&s| d * (s - t) <= 0.0);
        idx.saturating_sub(1).min(self.segs.len() - 1)
    }

    pub fn eval_into(&self, t: f64, out: &mut [C64]) {
        if self.segs.is_empty() {
            for o in out.iter_mut() {
                *o = C64::new(0.0, 0.0);
            }
            return;
        }
        self.segs[self.locate(t)].eval_into(t, out);
    }

    pub fn eval(&self, t: f64) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.n];
        self.eval_into(t, &mut out);
        out
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub y: Vec<C64>,
    pub n_accepted: usize,
    pub n_rejected: usize,
    pub n_eval: usize,
    pub dense: Option<DenseSolution>,
}

fn rms_ratio(v: &[C64], scale: &[f64]) -> f64 {
    let s: f64 = v.iter().zip(scale).map(|(x, s)| (x / s).norm_sqr()).sum();
    (s / v.len().max(1) as f64).sqrt()
}

/// Integrate y' = f(t, y) from t0 to t1 (either direction).
///
/// `samples` must be ordered in the direction of integration and lie in [t0, t1];
/// `on_sample(i, t, y)` receives dense-output values. With `keep_dense` the full
/// interpolant is returned.
pub fn integrate<F, S>(
    mut f: F,
    t0: f64,
    y0: &[C64],
    t1: f64,
    opts: &Options,
    samples: &[f64],
    mut on_sample: S,
    keep_dense: bool,
) -> Result<Outcome>
where
    F: FnMut(f64, &[C64], &mut [C64]) -> Result<()>,
    S: FnMut(usize, f64, &[C64]),
{
    let n = y0.len();
    let zero = C64::new(0.0, 0.0);
    let direction = if t1 >= t0 { 1.0 } else { -1.0 };
    let mut dense = if keep_dense {
        Some(DenseSolution { n, direction, starts: vec![], t_end: t0, segs: vec![] })
    } else {
        None
    };
    let mut next_sample = 0;
    while next_sample < samples.len() && direction * (samples[next_sample] - t0) <= 0.0 {
        on_sample(next_sample, samples[next_sample], y0);
        next_sample += 1;
    }
    if t1 == t0 || n == 0 {
        return Ok(Outcome { y: y0.to_vec(), n_accepted: 0, n_rejected: 0, n_eval: 0, dense });
    }

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut fy = vec![zero; n];
    f(t, &y, &mut fy)?;
    let mut n_eval = 1;

    // K rows: 0..N_STAGES are the stages, row N_STAGES holds f(t+h, y_new), rows above for dense output.
    let mut k = vec![zero; tab::N_STAGES_EXTENDED * n];
    let mut ytmp = vec![zero; n];
    let mut y_new = vec![zero; n];
    let mut scale = vec![0.0; n];
    let mut err5 = vec![zero; n];
    let mut err3 = vec![zero; n];

    // Initial step (Hairer–Nørsett–Wanner II.4).
    let mut h_abs = {
        let interval = (t1 - t0).abs();
        for i in 0..n {
            scale[i] = opts.atol + y[i].norm() * opts.rtol;
        }
        let d0 = rms_ratio(&y, &scale);
        let d1 = rms_ratio(&fy, &scale);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 }.min(interval);
        for i in 0..n {
            ytmp[i] = y[i] + fy[i] * (h0 * direction);
        }
        let mut f1 = vec![zero; n];
        f(t0 + h0 * direction, &ytmp, &mut f1)?;
        n_eval += 1;
        let diff: Vec<C64> = f1.iter().zip(&fy).map(|(a, b)| a - b).collect();
        let d2 = rms_ratio(&diff, &scale) / h0;
        let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / 8.0)
        };
        (100.0 * h0).min(h1).min(interval).min(opts.max_step)
    };

    let mut n_acc = 0;
    let mut n_rej = 0;
    loop {
        if direction * (t - t1) >= 0.0 {
            break;
        }
        if n_acc + n_rej >= opts.max_steps {
            return Err(Error::Integration { t, msg: "step budget exhausted".into() });
        }
        let min_step = 10.0 * (next_after(t, direction) - t).abs();
        h_abs = h_abs.min(opts.max_step).max(min_step);
        let mut rejected = false;
        let (t_new, h) = loop {
            if h_abs < min_step {
                return Err(Error::Integration { t, msg: "step size underflow".into() });
            }
            let mut t_new = t + h_abs * direction;
            if direction * (t_new - t1) > 0.0 {
                t_new = t1;
            }
            let h = t_new - t;
            h_abs = h.abs();

            k[..n].copy_from_slice(&fy);
            for s in 1..tab::N_STAGES {
                for i in 0..n {
                    let mut acc = zero;
                    for j in 0..s {
                        let a = tab::A[s][j];
                        if a != 0.0 {
                            acc += k[j * n + i] * a;
                        }
                    }
                    ytmp[i] = y[i] + acc * h;
                }
                let (_, rest) = k.split_at_mut(s * n);
                f(t + tab::C[s] * h, &ytmp, &mut rest[..n])?;
            }
            for i in 0..n {
                let mut acc = zero;
                for j in 0..tab::N_STAGES {
                    let b = tab::B[j];
                    if b != 0.0 {
                        acc += k[j * n + i] * b;
                    }
                }
                y_new[i] = y[i] + acc * h;
            }
            {
                let (_, rest) = k.split_at_mut(tab::N_STAGES * n);
                f(t + h, &y_new, &mut rest[..n])?;
            }
            n_eval += tab::N_STAGES;
            if y_new.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::Integration { t, msg: "non-finite state".into() });
            }

            for i in 0..n {
                scale[i] = opts.atol + y[i].norm().max(y_new[i].norm()) * opts.rtol;
                let mut e5 = zero;
                let mut e3 = zero;
                for j in 0..=tab::N_STAGES {
                    let kv = k[j * n + i];
                    e5 += kv * tab::E5[j];
                    e3 += kv * tab::E3[j];
                }
                err5[i] = e5;
                err3[i] = e3;
            }
            let e5n: f64 = err5.iter().zip(&scale).map(|(e, s)| (e / s).norm_sqr()).sum();
            let e3n: f64 = err3.iter().zip(&scale).map(|(e, s)| (e / s).norm_sqr()).sum();
            let error_norm = if e5n == 0.0 && e3n == 0.0 {
                0.0
            } else {
                let denom = e5n + 0.01 * e3n;
                h_abs * e5n / (denom * n as f64).sqrt()
            };
            if !error_norm.is_finite() {
                h_abs *= MIN_FACTOR;
                rejected = true;
                n_rej += 1;
                continue;
            }
            if error_norm < 1.0 {
                let mut factor = if error_norm == 0.0 {
                    MAX_FACTOR
                } else {
                    MAX_FACTOR.min(SAFETY * error_norm.powf(ERROR_EXPONENT))
                };
                if rejected {
                    factor = factor.min(1.0);
                }
                h_abs *= factor;
                break (t_new, h);
            }
            h_abs *= MIN_FACTOR.max(SAFETY * error_norm.powf(ERROR_EXPONENT));
            rejected = true;
            n_rej += 1;
        };
        n_acc += 1;

        let wants_samples = next_sample < samples.len() && direction * (samples[next_sample] - t_new) <= 0.0;
        if wants_samples || dense.is_some() {
            for s in (tab::N_STAGES + 1)..tab::N_STAGES_EXTENDED {
                for i in 0..n {
                    let mut acc = zero;
                    for j in 0..s {
                        let a = tab::A[s][j];
                        if a != 0.0 {
                            acc += k[j * n + i] * a;
                        }
                    }
                    ytmp[i] = y[i] + acc * h;
                }
                let (_, rest) = k.split_at_mut(s * n);
                f(t + tab::C[s] * h, &ytmp, &mut rest[..n])?;
            }
            n_eval += tab::N_STAGES_EXTENDED - tab::N_STAGES - 1;
            let mut fr = vec![zero; tab::INTERPOLATOR_POWER * n];
            let f_new = &k[tab::N_STAGES * n..(tab::N_STAGES + 1) * n];
            for i in 0..n {
                let dy = y_new[i] - y[i];
                fr[i] = dy;
                fr[n + i] = fy[i] * h - dy;
                fr[2 * n + i] = dy * 2.0 - (f_new[i] + fy[i]) * h;
                for r in 0..(tab::INTERPOLATOR_POWER - 3) {
                    let mut acc = zero;
                    for j in 0..tab::N_STAGES_EXTENDED {
                        let dcoef = tab::D[r][j];
                        if dcoef != 0.0 {
                            acc += k[j * n + i] * dcoef;
                        }
                    }
                    fr[(3 + r) * n + i] = acc * h;
                }
            }
            let seg = Segment { t_old: t, h, y_old: y.clone(), f: fr };
            let mut buf = vec![zero; n];
            while next_sample < samples.len() && direction * (samples[next_sample] - t_new) <= 0.0 {
                let ts = samples[next_sample];
                if ts == t_new {
                    on_sample(next_sample, ts, &y_new);
                } else {
                    seg.eval_into(ts, &mut buf);
                    on_sample(next_sample, ts, &buf);
                }
                next_sample += 1;
            }
            if let Some(d) = dense.as_mut() {
                d.starts.push(t);
                d.segs.push(seg);
                d.t_end = t_new;
            }
        }

        fy.copy_from_slice(&k[tab::N_STAGES * n..(tab::N_STAGES + 1) * n]);
        std::mem::swap(&mut y, &mut y_new);
        t = t_new;
    }
    Ok(Outcome { y, n_accepted: n_acc, n_rejected: n_rej, n_eval, dense })
}

fn next_after(t: f64, direction: f64) -> f64 {
    let bits = t.to_bits();
    if t == 0.0 {
        return direction * f64::from_bits(1);
    }
    let up = (t > 0.0) == (direction > 0.0);
    f64::from_bits(if up { bits + 1 } else { bits - 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn exponential_decay() {
        let opts = Options { rtol: 1e-12, atol: 1e-300, max_step: f64::INFINITY, max_steps: 100000 };
        let lam = C64::new(-0.5, 3.0);
        let out = integrate(
            |_t, y, dy| {
                dy[0] = lam * y[0];
                Ok(())
            },
            0.0,
            &[c(1.0)],
            10.0,
            &opts,
            &[],
            |_, _, _| {},
            true,
        )
        .unwrap();
        let exact = (lam * 10.0).exp();
        assert!((out.y[0] - exact).norm() / exact.norm() < 1e-10);
        let d = out.dense.unwrap();
        for &t in &[0.3, 2.71, 7.7] {
            let e = (lam * t).exp();
            assert!((d.eval(t)[0] - e).norm() / e.norm() < 1e-10, "t = {t}");
        }
    }

    #[test]
    fn backward_and_samples() {
        let opts = Options::relative(1e-11);
        let mut got = vec![];
        let out = integrate(
            |t, _y, dy| {
                dy[0] = c(t.cos());
                Ok(())
            },
            5.0,
            &[c(5.0f64.sin())],
            0.0,
            &opts,
            &[4.0, 2.5, 0.0],
            |i, t, y| got.push((i, t, y[0])),
            true,
        )
        .unwrap();
        assert!(out.y[0].norm() < 1e-10);
        assert_eq!(got.len(), 3);
        for (_, t, y) in got {
            assert!((y - c(t.sin())).norm() < 1e-10);
        }
        let d = out.dense.unwrap();
        assert!((d.eval(1.234)[0] - c(1.234f64.sin())).norm() < 1e-10);
        assert_eq!(d.mesh().first().copied(), Some(0.0));
    }

    #[test]
    fn zero_interval() {
        let out = integrate(|_, _, _| Ok(()), 1.0, &[c(2.0)], 1.0, &Options::relative(1e-8), &[1.0], |_, _, _| {}, false)
            .unwrap();
        assert_eq!(out.y[0], c(2.0));
    }
}
