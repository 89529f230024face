//! Silent systems on T^d,
//!
//!   u_tt − 2g^{0l}∂_l u_t − g^{jl}∂_j∂_l u + α u_t + X^l ∂_l u + ζ u = f,
//!
//! solved mode by mode. Mode ι = n ∈ Z^d satisfies
//! z̈ + 𝔤²z − 2i n_l g^{0l} ż + α ż + i n_l X^l z + ζ z = f̂ with 𝔤² = g^{jl} n_j n_l, which is
//! written as v̇ = A_∞v + A_rem(t)v + F(t) for v = (z, ż).

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::coeffexpr::{Expr, MatrixExpr};
use crate::error::{Error, Result};
use crate::fourier::{japanese, ModeField, ModeIndex, ModeSet};
use crate::linalg::{c, to_complex, vec_norm, CMat, CVec, C64, I};
use crate::modeode::{
    self, build_f_infty, data_to_initial_with, fundamental, linear_fit, Approximant, FundamentalExtraction,
    GaugeFunction, MatFn, ModeAsymptoticData, ModeSystem, ModeTrajectory, ScalarFn, VecFn,
};
use crate::spectral::{decompose, SpectralDecomposition};

pub type CoeffFn = Arc<dyn Fn(f64) -> CMat + Send + Sync>;
pub type MetricFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;
pub type ShiftFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;
pub type ModeForcing = Arc<dyn Fn(f64, &[i64]) -> CVec + Send + Sync>;

/// Everything needed to define a system. `eta_mn` may be infinite when α and ζ are constant.
#[derive(Clone)]
pub struct SystemSpec {
    pub d: usize,
    pub m: usize,
    pub g0l: ShiftFn,
    pub gjl: MetricFn,
    pub alpha: CoeffFn,
    pub zeta: CoeffFn,
    pub xj: Vec<CoeffFn>,
    pub alpha_inf: CMat,
    pub zeta_inf: CMat,
    pub eta_mn: f64,
    pub b_s: f64,
    pub c_e: f64,
    /// Declared lower silence rate: ℓ̇ ≥ −b_low.
    pub b_low: Option<f64>,
    pub forcing: Option<ModeForcing>,
    pub epsilon: Option<f64>,
    /// All coefficient matrices are real, so mode −n is the conjugate of mode n for real data.
    pub real_coefficients: bool,
}

#[derive(Clone)]
pub struct SilentSystem {
    pub spec: SystemSpec,
    pub a_inf: CMat,
    pub decomp: Arc<SpectralDecomposition>,
}

impl std::fmt::Debug for SilentSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SilentSystem")
            .field("d", &self.spec.d)
            .field("m", &self.spec.m)
            .field("b_s", &self.spec.b_s)
            .field("eta_mn", &self.spec.eta_mn)
            .field("a_inf", &self.a_inf)
            .finish()
    }
}

fn first_order(alpha_inf: &CMat, zeta_inf: &CMat) -> CMat {
    let m = alpha_inf.nrows();
    let mut a = CMat::zeros(2 * m, 2 * m);
    for i in 0..m {
        a[(i, m + i)] = c(1.0);
        for j in 0..m {
            a[(m + i, j)] = -zeta_inf[(i, j)];
            a[(m + i, m + j)] = -alpha_inf[(i, j)];
        }
    }
    a
}

impl SilentSystem {
    pub fn new(spec: SystemSpec) -> Result<Self> {
        let (d, m) = (spec.d, spec.m);
        if d == 0 || m == 0 {
            return Err(Error::Dimension("d and m must be positive".into()));
        }
        if spec.xj.len() != d {
            return Err(Error::Dimension(format!("{} X^j matrices for d = {d}", spec.xj.len())));
        }
        for (name, mat) in [("alpha_inf", &spec.alpha_inf), ("zeta_inf", &spec.zeta_inf)] {
            if mat.nrows() != m || mat.ncols() != m {
                return Err(Error::Dimension(format!("{name} must be {m}x{m}")));
            }
        }
        let g = (spec.gjl)(0.0);
        if g.nrows() != d || g.ncols() != d || (spec.g0l)(0.0).len() != d {
            return Err(Error::Dimension("metric components have the wrong shape".into()));
        }
        for (name, f) in [("alpha", &spec.alpha), ("zeta", &spec.zeta)] {
            let v = f(0.0);
            if v.nrows() != m || v.ncols() != m {
                return Err(Error::Dimension(format!("{name} must be {m}x{m}")));
            }
        }
        if spec.xj.iter().any(|x| {
            let v = x(0.0);
            v.nrows() != m || v.ncols() != m
        }) {
            return Err(Error::Dimension(format!("X^j must be {m}x{m}")));
        }
        if !(spec.b_s > 0.0) || !(spec.eta_mn > 0.0) {
            return Err(Error::Invalid("b_s and eta_mn must be positive".into()));
        }
        let a_inf = first_order(&spec.alpha_inf, &spec.zeta_inf);
        let beta = spec.b_s.min(spec.eta_mn);
        let decomp = Arc::new(decompose(&a_inf, beta, spec.epsilon)?);
        Ok(SilentSystem { spec, a_inf, decomp })
    }

    /// u_tt − e^{−2t}u_θθ + u_t + e^{−t}u_θ = 0 on the circle.
    pub fn example() -> Self {
        let one = |x: f64| -> CoeffFn { Arc::new(move |_| CMat::from_element(1, 1, c(x))) };
        SilentSystem::new(SystemSpec {
            d: 1,
            m: 1,
            g0l: Arc::new(|_| vec![0.0]),
            gjl: Arc::new(|t| DMatrix::from_element(1, 1, (-2.0 * t).exp())),
            alpha: one(1.0),
            zeta: one(0.0),
            xj: vec![Arc::new(|t| CMat::from_element(1, 1, c((-t).exp())))],
            alpha_inf: CMat::from_element(1, 1, c(1.0)),
            zeta_inf: CMat::from_element(1, 1, c(0.0)),
            eta_mn: f64::INFINITY,
            b_s: 1.0,
            c_e: 0.0,
            b_low: Some(1.0),
            forcing: None,
            epsilon: None,
            real_coefficients: true,
        })
        .expect("the example system is valid")
    }

    pub fn d(&self) -> usize {
        self.spec.d
    }

    pub fn m(&self) -> usize {
        self.spec.m
    }

    pub fn k(&self) -> usize {
        2 * self.spec.m
    }

    pub fn beta_rem(&self) -> f64 {
        self.spec.b_s.min(self.spec.eta_mn)
    }

    pub fn with_forcing(mut self, forcing: Option<ModeForcing>) -> Self {
        self.spec.forcing = forcing;
        self
    }

    /// 𝔤²(t, n).
    pub fn g_squared(&self, t: f64, n: &[i64]) -> f64 {
        quad_form(&(self.spec.gjl)(t), n)
    }

    pub fn gauge(&self, n: &[i64]) -> GaugeFunction {
        let nf: Vec<f64> = n.iter().map(|&x| x as f64).collect();
        let zero = nf.iter().all(|&x| x == 0.0);
        let gjl = self.spec.gjl.clone();
        let nn = n.to_vec();
        let g: ScalarFn = Arc::new(move |t| quad_form(&gjl(t), &nn).max(0.0).sqrt());
        let (sigma, x) = if zero {
            (None, None)
        } else {
            let g0l = self.spec.g0l.clone();
            let (g1, g2) = (g.clone(), g.clone());
            let nf2 = nf.clone();
            let xj = self.spec.xj.clone();
            let sigma: ScalarFn =
                Arc::new(move |t| g0l(t).iter().zip(&nf).map(|(a, b)| a * b).sum::<f64>() / g1(t));
            let x: MatFn = Arc::new(move |t| n_dot_x(&xj, &nf2, t) / c(g2(t)));
            (Some(sigma), Some(x))
        };
        GaugeFunction { g, b_s: self.spec.b_s, c_e: self.spec.c_e, sigma, x }
    }

    /// The first-order system of mode n, anchored at t = 0, together with its gauge function.
    pub fn mode_system(&self, n: &[i64]) -> Result<(ModeSystem, GaugeFunction)> {
        if n.len() != self.spec.d {
            return Err(Error::Dimension(format!("mode {n:?} for d = {}", self.spec.d)));
        }
        let gauge = self.gauge(n);
        let zero = n.iter().all(|&x| x == 0);
        let t_ode = if zero { 0.0 } else { gauge.t_ode().map_err(|e| e.in_mode(n))? };
        let m = self.spec.m;
        let spec = self.spec.clone();
        let nf: Vec<f64> = n.iter().map(|&x| x as f64).collect();
        let a_rem: MatFn = Arc::new(move |t| {
            let mut a = CMat::zeros(2 * m, 2 * m);
            let al = (spec.alpha)(t);
            let ze = (spec.zeta)(t);
            let (g2, ng0, nx) = if zero {
                (0.0, 0.0, CMat::zeros(m, m))
            } else {
                let g2 = quad_form_f(&(spec.gjl)(t), &nf);
                let ng0: f64 = (spec.g0l)(t).iter().zip(&nf).map(|(a, b)| a * b).sum();
                (g2, ng0, n_dot_x(&spec.xj, &nf, t))
            };
            for i in 0..m {
                for j in 0..m {
                    let mut lo = -I * nx[(i, j)] + spec.zeta_inf[(i, j)] - ze[(i, j)];
                    let mut hi = spec.alpha_inf[(i, j)] - al[(i, j)];
                    if i == j {
                        lo -= g2;
                        hi += I * (2.0 * ng0);
                    }
                    a[(m + i, j)] = lo;
                    a[(m + i, m + j)] = hi;
                }
            }
            a
        });
        let forcing: Option<VecFn> = self.spec.forcing.clone().map(|f| {
            let nn = n.to_vec();
            let v: VecFn = Arc::new(move |t| {
                let fh = f(t, &nn);
                let mut out = CVec::zeros(2 * m);
                for i in 0..m {
                    out[m + i] = fh[i];
                }
                out
            });
            v
        });
        let ms = ModeSystem::new(self.a_inf.clone(), a_rem, forcing, self.beta_rem(), t_ode, self.decomp.clone())
            .map_err(|e| e.in_mode(n))?
            .with_anchor(0.0);
        Ok((ms, gauge))
    }
}

fn quad_form(g: &DMatrix<f64>, n: &[i64]) -> f64 {
    let nf: Vec<f64> = n.iter().map(|&x| x as f64).collect();
    quad_form_f(g, &nf)
}

fn quad_form_f(g: &DMatrix<f64>, n: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..n.len() {
        if n[j] == 0.0 {
            continue;
        }
        for l in 0..n.len() {
            s += g[(j, l)] * n[j] * n[l];
        }
    }
    s
}

fn n_dot_x(xj: &[CoeffFn], n: &[f64], t: f64) -> CMat {
    let mut acc: Option<CMat> = None;
    for (x, &nl) in xj.iter().zip(n) {
        if nl == 0.0 {
            continue;
        }
        let term = x(t) * c(nl);
        acc = Some(match acc {
            Some(a) => a + term,
            None => term,
        });
    }
    acc.unwrap_or_else(|| {
        let m = xj[0](t).nrows();
        CMat::zeros(m, m)
    })
}

/// Forcing entry of an expression-backed system: f̂(t, mode) = re + i·im.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingExpr {
    pub mode: ModeIndex,
    pub re: Vec<Expr>,
    pub im: Vec<Expr>,
}

/// A system given by coefficient expressions in t. `alpha_inf`/`zeta_inf` default to the
/// value of a constant `alpha`/`zeta`.
#[derive(Debug, Clone)]
pub struct SystemExprs {
    pub d: usize,
    pub m: usize,
    /// 1×d.
    pub g0l: MatrixExpr,
    /// d×d.
    pub gjl: MatrixExpr,
    pub alpha: MatrixExpr,
    pub zeta: MatrixExpr,
    pub xj: Vec<MatrixExpr>,
    pub alpha_inf: Option<DMatrix<f64>>,
    pub zeta_inf: Option<DMatrix<f64>>,
    pub eta_mn: f64,
    pub b_s: f64,
    pub c_e: f64,
    pub b_low: Option<f64>,
    pub forcing: Vec<ForcingExpr>,
    pub epsilon: Option<f64>,
}

/// Probe times for expression validation.
const PROBE: [f64; 6] = [0.0, 0.5, 1.0, 5.0, 20.0, 50.0];

fn expr_fn(e: &MatrixExpr, name: &str, rows: usize, cols: usize) -> Result<Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>> {
    if e.rows() != rows || e.cols() != cols {
        return Err(Error::Dimension(format!("{name} must be {rows}x{cols}, got {}x{}", e.rows(), e.cols())));
    }
    for &t in &PROBE {
        let v = e.eval(t)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("{name} at t = {t}")));
        }
    }
    let e = e.clone();
    Ok(Arc::new(move |t| e.eval(t).unwrap_or_else(|_| DMatrix::from_element(rows, cols, f64::NAN))))
}

fn limit(given: &Option<DMatrix<f64>>, e: &MatrixExpr, name: &str) -> Result<CMat> {
    match given {
        Some(m) => Ok(to_complex(m)),
        None if e.is_constant() => Ok(to_complex(&e.eval(0.0)?)),
        None => Err(Error::Invalid(format!("{name} is time dependent; its limit must be given"))),
    }
}

impl SilentSystem {
    pub fn from_exprs(x: &SystemExprs) -> Result<Self> {
        let (d, m) = (x.d, x.m);
        let g0 = expr_fn(&x.g0l, "g0l", 1, d)?;
        let gjl = expr_fn(&x.gjl, "gjl", d, d)?;
        for &t in &PROBE {
            let g = gjl(t);
            if (&g - g.transpose()).amax() > 1e-12 * g.amax() {
                return Err(Error::Invalid(format!("g^jl is not symmetric at t = {t}")));
            }
        }
        let cplx = |f: Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>| -> CoeffFn { Arc::new(move |t| to_complex(&f(t))) };
        let alpha = cplx(expr_fn(&x.alpha, "alpha", m, m)?);
        let zeta = cplx(expr_fn(&x.zeta, "zeta", m, m)?);
        if x.xj.len() != d {
            return Err(Error::Dimension(format!("{} X^j matrices for d = {d}", x.xj.len())));
        }
        let xj = x
            .xj
            .iter()
            .enumerate()
            .map(|(j, e)| expr_fn(e, &format!("X^{}", j + 1), m, m).map(cplx))
            .collect::<Result<Vec<_>>>()?;
        let forcing = if x.forcing.is_empty() {
            None
        } else {
            for f in &x.forcing {
                if f.mode.len() != d || f.re.len() != m || f.im.len() != m {
                    return Err(Error::Dimension(format!("forcing entry for mode {:?} has the wrong shape", f.mode)));
                }
                for e in f.re.iter().chain(&f.im) {
                    for &t in &PROBE {
                        e.eval(t)?;
                    }
                }
            }
            let entries = x.forcing.clone();
            let f: ModeForcing = Arc::new(move |t, n| {
                let mut out = CVec::zeros(m);
                for e in entries.iter().filter(|e| e.mode == n) {
                    for i in 0..m {
                        let re = e.re[i].eval(t).unwrap_or(f64::NAN);
                        let im = e.im[i].eval(t).unwrap_or(f64::NAN);
                        out[i] += C64::new(re, im);
                    }
                }
                out
            });
            Some(f)
        };
        SilentSystem::new(SystemSpec {
            d,
            m,
            g0l: Arc::new(move |t| g0(t).iter().cloned().collect()),
            gjl,
            alpha,
            zeta,
            xj,
            alpha_inf: limit(&x.alpha_inf, &x.alpha, "alpha")?,
            zeta_inf: limit(&x.zeta_inf, &x.zeta, "zeta")?,
            eta_mn: x.eta_mn,
            b_s: x.b_s,
            c_e: x.c_e,
            b_low: x.b_low,
            forcing,
            epsilon: x.epsilon,
            real_coefficients: true,
        })
    }
}

// ---------------------------------------------------------------------------------------------
// Conditions

#[derive(Debug, Clone, Copy)]
pub struct ConditionOptions {
    /// Allowance for max ℓ̇ + b_s.
    pub allowance: f64,
    /// Allowance for the lower silence check ℓ̇ ≥ −b_low.
    pub allowance_low: f64,
    /// Optional bound on C_coeff; without one, balance only requires finiteness.
    pub c_coeff_bound: Option<f64>,
}

impl Default for ConditionOptions {
    fn default() -> Self {
        ConditionOptions { allowance: 1e-9, allowance_low: 1e-9, c_coeff_bound: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    /// max over samples of ℓ̇ + b_s.
    pub silence_max: f64,
    pub silence_ok: bool,
    /// g^{jl} symmetric positive definite at every sampled t.
    pub metric_ok: bool,
    pub c_coeff: f64,
    pub balance_ok: bool,
    /// Fitted decay rate of ‖α − α_∞‖ + ‖ζ − ζ_∞‖; `None` when the difference vanishes.
    pub eta_fit: Option<f64>,
    /// sup of (‖α − α_∞‖ + ‖ζ − ζ_∞‖)·e^{η_mn t} over the samples.
    pub c_mn: f64,
    pub convergence_ok: bool,
    /// min over samples of ℓ̇ + b_low, with its verdict, when b_low is declared.
    pub lower: Option<(f64, bool)>,
    pub n_samples: usize,
}

impl ConditionReport {
    pub fn passed(&self) -> bool {
        self.silence_ok
            && self.metric_ok
            && self.balance_ok
            && self.convergence_ok
            && self.lower.is_none_or(|(_, ok)| ok)
    }

    /// (check, value, pass) rows.
    pub fn rows(&self) -> Vec<(String, String, bool)> {
        let mut r = vec![
            ("silence max(l'+b_s)".to_string(), format!("{:.6e}", self.silence_max), self.silence_ok),
            ("metric positive definite".to_string(), self.metric_ok.to_string(), self.metric_ok),
            ("balance C_coeff".to_string(), format!("{:.6e}", self.c_coeff), self.balance_ok),
            (
                "convergence eta_fit".to_string(),
                self.eta_fit.map_or("inf".to_string(), |e| format!("{e:.6e}")),
                self.convergence_ok,
            ),
            ("convergence C_mn".to_string(), format!("{:.6e}", self.c_mn), self.convergence_ok),
        ];
        if let Some((v, ok)) = self.lower {
            r.push(("lower silence min(l'+b_low)".to_string(), format!("{v:.6e}"), ok));
        }
        r
    }
}

fn is_spd(g: &DMatrix<f64>) -> bool {
    let sym = (g - g.transpose()).amax() <= 1e-12 * g.amax().max(1e-300);
    sym && g.clone().cholesky().is_some()
}

/// Checks weak silence, balance and convergence on the given modes and times.
pub fn check_conditions(sys: &SilentSystem, modes: &[ModeIndex], times: &[f64], opts: &ConditionOptions) -> ConditionReport {
    let spec = &sys.spec;
    let mut silence_max = f64::NEG_INFINITY;
    let mut lower_min = f64::INFINITY;
    let mut c_coeff: f64 = 0.0;
    let mut metric_ok = true;
    let mut n_samples = 0;
    let norm_at = |f: &CoeffFn, t: f64| f(t).norm();
    for &t in times {
        let g = (spec.gjl)(t);
        if !is_spd(&g) {
            metric_ok = false;
        }
        let base = norm_at(&spec.alpha, t) + norm_at(&spec.zeta, t);
        c_coeff = c_coeff.max(base);
        for n in modes.iter().filter(|n| n.iter().any(|&x| x != 0)) {
            let gauge = sys.gauge(n);
            let ld = gauge.ell_dot(t);
            silence_max = silence_max.max(ld + spec.b_s);
            if let Some(bl) = spec.b_low {
                lower_min = lower_min.min(ld + bl);
            }
            let sigma = gauge.sigma.as_ref().map_or(0.0, |s| s(t).abs());
            let x = gauge.x.as_ref().map_or(0.0, |x| x(t).norm());
            c_coeff = c_coeff.max(sigma + x + base);
            n_samples += 1;
        }
    }
    // Weak convergence.
    let diffs: Vec<(f64, f64)> = times
        .iter()
        .map(|&t| (t, ((spec.alpha)(t) - &spec.alpha_inf).norm() + ((spec.zeta)(t) - &spec.zeta_inf).norm()))
        .collect();
    let scale = spec.alpha_inf.norm() + spec.zeta_inf.norm() + 1.0;
    let nonzero: Vec<&(f64, f64)> = diffs.iter().filter(|(_, e)| *e > 1e-14 * scale).collect();
    let (eta_fit, c_mn, convergence_ok) = if nonzero.is_empty() {
        (None, 0.0, true)
    } else {
        let eta = if spec.eta_mn.is_finite() { spec.eta_mn } else { 0.0 };
        let weighted: Vec<f64> = diffs.iter().map(|(t, e)| e * (eta * t).exp()).collect();
        let c_mn = weighted.iter().cloned().fold(0.0, f64::max);
        let fit = if nonzero.len() >= 3 {
            let x: Vec<f64> = nonzero.iter().map(|p| p.0).collect();
            let y: Vec<f64> = nonzero.iter().map(|p| p.1.ln()).collect();
            Some(-linear_fit(&x, &y).0)
        } else {
            None
        };
        // Bounded weighted difference: the late samples may not outgrow the early ones.
        let split = (2 * weighted.len()).div_ceil(3).min(weighted.len().saturating_sub(1)).max(1);
        let early = weighted[..split].iter().cloned().fold(0.0, f64::max);
        let late = weighted[split..].iter().cloned().fold(0.0, f64::max);
        let ok = spec.eta_mn.is_finite() && c_mn.is_finite() && late <= 10.0 * early;
        (fit, c_mn, ok)
    };
    let silence_ok = silence_max <= opts.allowance || silence_max == f64::NEG_INFINITY;
    let balance_ok = c_coeff.is_finite() && opts.c_coeff_bound.is_none_or(|b| c_coeff <= b);
    let lower = spec.b_low.map(|_| (lower_min, lower_min >= -opts.allowance_low || lower_min == f64::INFINITY));
    ConditionReport {
        silence_max,
        silence_ok,
        metric_ok,
        c_coeff,
        balance_ok,
        eta_fit,
        c_mn,
        convergence_ok,
        lower,
        n_samples,
    }
}

/// The sampled modes used by default: all of the truncation when small, else the axes,
/// the diagonals and the corners.
pub fn default_check_modes(d: usize, n_max: usize) -> Vec<ModeIndex> {
    let set = ModeSet::new(d, n_max);
    if set.len() <= 4096 {
        return set.iter().collect();
    }
    let n = n_max as i64;
    let mut out = Vec::new();
    for j in 0..d {
        for v in [1, n] {
            let mut e = vec![0; d];
            e[j] = v;
            out.push(e);
        }
    }
    out.push(vec![1; d]);
    out.push(vec![n; d]);
    out
}

pub fn default_check_times() -> Vec<f64> {
    (0..=80).map(|i| 0.5 * i as f64).collect()
}

// ---------------------------------------------------------------------------------------------
// Solving

/// Solution samples of every mode on a shared time grid.
#[derive(Debug, Clone)]
pub struct FieldTrajectory {
    pub set: ModeSet,
    pub m: usize,
    pub t: Vec<f64>,
    pub modes: Vec<ModeTrajectory>,
}

impl FieldTrajectory {
    /// (u, u_t) at sample j as a 2m-component field.
    pub fn state(&self, j: usize) -> ModeField {
        let k = 2 * self.m;
        let mut f = ModeField::zeros(self.set, k);
        for (i, tr) in self.modes.iter().enumerate() {
            f.coeff_mut(i).copy_from_slice(tr.v[j].as_slice());
        }
        f
    }

    pub fn mode(&self, n: &[i64]) -> Option<&ModeTrajectory> {
        self.set.index_of(n).map(|i| &self.modes[i])
    }
}

fn check_fields(sys: &SilentSystem, u0: &ModeField, u1: &ModeField) -> Result<()> {
    if u0.set != u1.set || u0.d() != sys.d() || u0.m != sys.m() || u1.m != sys.m() {
        return Err(Error::Dimension(format!(
            "initial fields (d = {}, m = {}/{}, N = {}/{}) do not match the system (d = {}, m = {})",
            u0.d(),
            u0.m,
            u1.m,
            u0.n_max(),
            u1.n_max(),
            sys.d(),
            sys.m()
        )));
    }
    Ok(())
}

fn stacked(u0: &ModeField, u1: &ModeField, i: usize) -> CVec {
    let m = u0.m;
    let mut v = CVec::zeros(2 * m);
    for j in 0..m {
        v[j] = u0.coeff(i)[j];
        v[m + j] = u1.coeff(i)[j];
    }
    v
}

/// Mode i's representative: itself, or its mirror −n when the conjugate symmetry applies and
/// the mirror has the smaller index.
fn representatives(sys: &SilentSystem, u0: &ModeField, u1: &ModeField) -> Vec<(usize, bool)> {
    let len = u0.set.len();
    let symmetric = sys.spec.real_coefficients
        && sys.spec.forcing.is_none()
        && (0..len).all(|i| {
            let j = len - 1 - i;
            let ok = |f: &ModeField| f.coeff(i).iter().zip(f.coeff(j)).all(|(a, b)| *a == b.conj());
            ok(u0) && ok(u1)
        });
    (0..len)
        .map(|i| {
            let j = len - 1 - i;
            if symmetric && j < i {
                (j, true)
            } else {
                (i, false)
            }
        })
        .collect()
}

fn conj_vec(v: &CVec) -> CVec {
    v.map(|z| z.conj())
}

/// Integrates every mode from t = 0 and samples at `times` (ascending, ≥ 0).
pub fn solve(sys: &SilentSystem, u0: &ModeField, u1: &ModeField, times: &[f64], tol: f64) -> Result<FieldTrajectory> {
    check_fields(sys, u0, u1)?;
    if times.is_empty() || times[0] < 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Invalid("sample times must be non-negative and strictly increasing".into()));
    }
    let set = u0.set;
    let k = sys.k();
    let reps = representatives(sys, u0, u1);
    let t1 = *times.last().unwrap();
    let own: Vec<usize> = (0..set.len()).filter(|&i| reps[i].0 == i).collect();
    let solved: Vec<(usize, ModeTrajectory)> = own
        .par_iter()
        .map(|&i| {
            let n = set.mode(i);
            let v0 = stacked(u0, u1, i);
            if vec_norm(&v0) == 0.0 && sys.spec.forcing.is_none() {
                let z = vec![CVec::zeros(k); times.len()];
                return Ok((i, ModeTrajectory { t: times.to_vec(), v: z, tol, n_steps: 0, n_rejected: 0 }));
            }
            let run = || -> Result<ModeTrajectory> {
                let (ms, _) = sys.mode_system(&n)?;
                if t1 == 0.0 {
                    return Ok(ModeTrajectory { t: times.to_vec(), v: vec![v0.clone()], tol, n_steps: 0, n_rejected: 0 });
                }
                let mut tr = modeode::integrate_mode(&ms, &v0, 0.0, t1, tol, times)?;
                if times[0] == 0.0 {
                    tr.v[0] = v0.clone();
                }
                Ok(tr)
            };
            run().map(|tr| (i, tr)).map_err(|e| match e {
                Error::Mode { .. } => e,
                e => e.in_mode(&n),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut slots: Vec<Option<ModeTrajectory>> = vec![None; set.len()];
    for (i, tr) in solved {
        slots[i] = Some(tr);
    }
    let modes = (0..set.len())
        .map(|i| {
            let (r, conj) = reps[i];
            let src = slots[r].as_ref().expect("representative solved");
            if conj {
                ModeTrajectory { v: src.v.iter().map(conj_vec).collect(), ..src.clone() }
            } else {
                src.clone()
            }
        })
        .collect();
    Ok(FieldTrajectory { set, m: sys.m(), t: times.to_vec(), modes })
}

// ---------------------------------------------------------------------------------------------
// Asymptotic data

/// Field-level asymptotic data: V_{∞,n} for n = 1..=n_max and the aggregate 𝒱_∞ (which is
/// complete only when n_max ≥ 𝒩).
#[derive(Debug, Clone)]
pub struct FieldAsymptoticData {
    pub set: ModeSet,
    pub k: usize,
    pub orders: Vec<ModeField>,
    pub aggregate: ModeField,
    pub modes: Vec<ModeAsymptoticData>,
    pub unconverged: Vec<ModeIndex>,
}

impl FieldAsymptoticData {
    /// V_{∞,n}, 1-based.
    pub fn v_inf(&self, n: usize) -> &ModeField {
        &self.orders[n - 1]
    }

    pub fn n_max(&self) -> usize {
        self.orders.len()
    }

    pub fn converged(&self) -> bool {
        self.unconverged.is_empty()
    }
}

/// Per-mode fundamental extractions of a field; data, residuals and approximants.
pub struct FieldExtraction {
    pub data: FieldAsymptoticData,
    pub tol: f64,
    v0: Vec<CVec>,
    reps: Vec<(usize, bool)>,
    /// Indexed by representative; `None` for zero unforced modes.
    fx: Vec<Option<(Arc<ModeSystem>, FundamentalExtraction)>>,
}

fn conj_data(d: &ModeAsymptoticData) -> ModeAsymptoticData {
    ModeAsymptoticData {
        orders: d.orders.iter().map(conj_vec).collect(),
        aggregate: conj_vec(&d.aggregate),
        ..d.clone()
    }
}

impl FieldExtraction {
    /// `horizon = None` uses each mode's default horizon.
    pub fn new(
        sys: &SilentSystem,
        u0: &ModeField,
        u1: &ModeField,
        n_max: usize,
        horizon: Option<f64>,
        tol: f64,
    ) -> Result<Self> {
        check_fields(sys, u0, u1)?;
        if n_max == 0 {
            return Err(Error::Invalid("n_max must be at least 1".into()));
        }
        let set = u0.set;
        let k = sys.k();
        let reps = representatives(sys, u0, u1);
        let v0: Vec<CVec> = (0..set.len()).map(|i| stacked(u0, u1, i)).collect();
        let own: Vec<usize> = (0..set.len()).filter(|&i| reps[i].0 == i).collect();
        let forced = sys.spec.forcing.is_some();
        let runs: Vec<(usize, Option<(Arc<ModeSystem>, FundamentalExtraction)>)> = own
            .par_iter()
            .map(|&i| {
                if vec_norm(&v0[i]) == 0.0 && !forced {
                    return Ok((i, None));
                }
                let n = set.mode(i);
                let run = || -> Result<(Arc<ModeSystem>, FundamentalExtraction)> {
                    let (ms, _) = sys.mode_system(&n)?;
                    let h = horizon.unwrap_or_else(|| ms.default_horizon(n_max, tol));
                    let fx = fundamental(&ms, n_max, h, tol)?;
                    Ok((Arc::new(ms), fx))
                };
                run().map(|r| (i, Some(r))).map_err(|e| match e {
                    Error::Mode { .. } => e,
                    e => e.in_mode(&n),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut fx = vec![None; set.len()];
        for (i, r) in runs {
            fx[i] = r;
        }
        let zero_data = |h: f64| ModeAsymptoticData {
            anchor: 0.0,
            horizon: h,
            orders: vec![CVec::zeros(k); n_max],
            aggregate: CVec::zeros(k),
            diagnostics: vec![modeode::OrderDiagnostics { cauchy: 0.0, error_estimate: 0.0, converged: true }; n_max],
            complete: n_max >= sys.decomp.n_blocks,
        };
        let mut modes = Vec::with_capacity(set.len());
        for i in 0..set.len() {
            let (r, conj) = reps[i];
            let d = match &fx[r] {
                None => zero_data(horizon.unwrap_or(0.0)),
                Some((_, f)) => {
                    let d = f.data(&v0[r]);
                    if conj {
                        conj_data(&d)
                    } else {
                        d
                    }
                }
            };
            modes.push(d);
        }
        let mut orders = vec![ModeField::zeros(set, k); n_max];
        let mut aggregate = ModeField::zeros(set, k);
        let mut unconverged = Vec::new();
        // Modes far below the field scale only need accuracy relative to the field.
        let field_scale = v0.iter().map(vec_norm).fold(0.0, f64::max);
        for (i, d) in modes.iter().enumerate() {
            for (n, o) in orders.iter_mut().enumerate() {
                o.coeff_mut(i).copy_from_slice(d.orders[n].as_slice());
            }
            aggregate.coeff_mut(i).copy_from_slice(d.aggregate.as_slice());
            let floor = vec_norm(&v0[i]).max(1e-6 * field_scale);
            let ok = d.diagnostics.iter().zip(&d.orders).all(|(g, o)| g.error_estimate <= tol * floor.max(vec_norm(o)));
            if !ok {
                unconverged.push(set.mode(i));
            }
        }
        Ok(FieldExtraction {
            data: FieldAsymptoticData { set, k, orders, aggregate, modes, unconverged },
            tol,
            v0,
            reps,
            fx,
        })
    }

    /// r_n(t) of mode i (v(t) for n = 0), from the stable residual levels.
    pub fn residual(&self, i: usize, n: usize, t: f64) -> Result<CVec> {
        let (r, conj) = self.reps[i];
        match &self.fx[r] {
            None => Ok(CVec::zeros(self.data.k)),
            Some((_, f)) => {
                let v = f.residual(&self.v0[r], n, t)?;
                Ok(if conj { conj_vec(&v) } else { v })
            }
        }
    }

    /// ‖r_n(t)‖_{(s)} at each time.
    pub fn residual_norms(&self, n: usize, s: f64, times: &[f64]) -> Result<Vec<f64>> {
        times
            .iter()
            .map(|&t| {
                let mut acc = 0.0;
                for i in 0..self.data.set.len() {
                    let w = japanese(&self.data.set.mode(i)).powf(2.0 * s);
                    acc += w * self.residual(i, n, t)?.norm_squared();
                }
                Ok(acc.sqrt())
            })
            .collect()
    }

    /// F_{∞,n} of every mode on [t_lo, t_hi]; `None` for zero unforced modes.
    pub fn approximants(&self, n: usize, t_lo: f64, t_hi: f64) -> Result<FieldApproximant> {
        let set = self.data.set;
        let mut per = vec![None; set.len()];
        for i in 0..set.len() {
            let (r, _) = self.reps[i];
            if r != i {
                continue;
            }
            if let Some((ms, _)) = &self.fx[i] {
                let a = build_f_infty(ms, &self.data.modes[i], n, t_lo, t_hi, self.tol).map_err(|e| e.in_mode(&set.mode(i)))?;
                per[i] = Some(Arc::new(a));
            }
        }
        Ok(FieldApproximant { set, k: self.data.k, reps: self.reps.clone(), per })
    }
}

/// F_{∞,n} evaluated mode by mode.
pub struct FieldApproximant {
    pub set: ModeSet,
    pub k: usize,
    reps: Vec<(usize, bool)>,
    per: Vec<Option<Arc<Approximant>>>,
}

impl FieldApproximant {
    pub fn eval_mode(&self, i: usize, t: f64) -> Result<CVec> {
        let (r, conj) = self.reps[i];
        match &self.per[r] {
            None => Ok(CVec::zeros(self.k)),
            Some(a) => {
                let v = a.eval(t)?;
                Ok(if conj { conj_vec(&v) } else { v })
            }
        }
    }

    pub fn eval(&self, t: f64) -> Result<ModeField> {
        let mut f = ModeField::zeros(self.set, self.k);
        for i in 0..self.set.len() {
            f.coeff_mut(i).copy_from_slice(self.eval_mode(i, t)?.as_slice());
        }
        Ok(f)
    }
}

pub fn extract_field_data(
    sys: &SilentSystem,
    u0: &ModeField,
    u1: &ModeField,
    n_max: usize,
    horizon: Option<f64>,
    tol: f64,
) -> Result<FieldAsymptoticData> {
    Ok(FieldExtraction::new(sys, u0, u1, n_max, horizon, tol)?.data)
}

/// ‖(u, u_t)(t) − F(t)‖_{(s)} at each trajectory sample, with F given per mode index.
pub fn field_residual_norms(
    traj: &FieldTrajectory,
    approx: impl Fn(usize, f64) -> Result<CVec>,
    s: f64,
) -> Result<Vec<f64>> {
    (0..traj.t.len())
        .map(|j| {
            let t = traj.t[j];
            let mut acc = 0.0;
            for (i, tr) in traj.modes.iter().enumerate() {
                let w = japanese(&traj.set.mode(i)).powf(2.0 * s);
                acc += w * (&tr.v[j] - approx(i, t)?).norm_squared();
            }
            Ok(acc.sqrt())
        })
        .collect()
}

// ---------------------------------------------------------------------------------------------
// Asymptotic data to initial data

#[derive(Debug, Clone)]
pub struct PhiInfty {
    pub u0: ModeField,
    pub u1: ModeField,
    /// max over modes of the round-trip error relative to the target.
    pub max_roundtrip: f64,
    pub max_condition: f64,
    /// Fitted Sobolev loss: |v0(ι)| ≈ C⟨ι⟩^ξ|𝒱(ι)|.
    pub xi: f64,
    /// max over modes of |v0(ι)| / (⟨ι⟩^ξ |𝒱(ι)|).
    pub continuity: f64,
    /// 𝒱 of the zero-initial-data solution (zero without forcing).
    pub forced_data: ModeField,
}

/// Initial data at t = 0 whose asymptotic data is `target` (k = 2m components per mode).
pub fn phi_infty(sys: &SilentSystem, target: &ModeField, horizon: Option<f64>, tol: f64) -> Result<PhiInfty> {
    if target.d() != sys.d() || target.m != sys.k() {
        return Err(Error::Dimension(format!(
            "target has d = {}, {} components; the system needs d = {}, {}",
            target.d(),
            target.m,
            sys.d(),
            sys.k()
        )));
    }
    if sys.spec.b_low.is_some() {
        let set = target.set;
        let modes = default_check_modes(set.d, set.n_max.max(1));
        let rep = check_conditions(sys, &modes, &default_check_times(), &ConditionOptions::default());
        if let Some((v, false)) = rep.lower {
            return Err(Error::Condition(format!("lower silence fails: min(l' + b_low) = {v:.3e}")));
        }
    }
    let set = target.set;
    let k = sys.k();
    let m = sys.m();
    let n_top = sys.decomp.n_blocks;
    let forced = sys.spec.forcing.is_some();
    let results: Vec<(usize, CVec, f64, f64, CVec)> = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let n = set.mode(i);
            let tv = target.coeff_vec(i);
            if vec_norm(&tv) == 0.0 && !forced {
                return Ok((i, CVec::zeros(k), 0.0, 1.0, CVec::zeros(k)));
            }
            let run = || -> Result<(CVec, f64, f64, CVec)> {
                let (ms, _) = sys.mode_system(&n)?;
                let h = horizon.unwrap_or_else(|| ms.default_horizon(n_top, tol));
                let fx = fundamental(&ms, n_top, h, tol)?;
                let r = data_to_initial_with(&ms, &fx, &tv)?;
                let rel = r.roundtrip_error / vec_norm(&tv).max(vec_norm(&r.forced_data)).max(1e-300);
                Ok((r.v0, rel, r.condition, r.forced_data))
            };
            run().map(|(v, e, cnd, fd)| (i, v, e, cnd, fd)).map_err(|e| match e {
                Error::Mode { .. } => e,
                e => e.in_mode(&n),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut u0 = ModeField::zeros(set, m);
    let mut u1 = ModeField::zeros(set, m);
    let mut forced_data = ModeField::zeros(set, k);
    let mut max_roundtrip: f64 = 0.0;
    let mut max_condition: f64 = 0.0;
    let mut ratios = Vec::new();
    for (i, v, e, cnd, fd) in results {
        for j in 0..m {
            u0.coeff_mut(i)[j] = v[j];
            u1.coeff_mut(i)[j] = v[m + j];
        }
        forced_data.coeff_mut(i).copy_from_slice(fd.as_slice());
        max_roundtrip = max_roundtrip.max(e);
        max_condition = max_condition.max(cnd);
        let tn = vec_norm(&target.coeff_vec(i));
        if tn > 0.0 && vec_norm(&v) > 0.0 {
            ratios.push((japanese(&set.mode(i)), vec_norm(&v) / tn));
        }
    }
    let (xi, continuity) = sobolev_loss(&ratios);
    Ok(PhiInfty { u0, u1, max_roundtrip, max_condition, xi, continuity, forced_data })
}

/// Fits ln r = ξ ln⟨ι⟩ + c (ξ ≥ 0) and returns ξ with max r/⟨ι⟩^ξ.
fn sobolev_loss(ratios: &[(f64, f64)]) -> (f64, f64) {
    if ratios.is_empty() {
        return (0.0, 0.0);
    }
    let x: Vec<f64> = ratios.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = ratios.iter().map(|p| p.1.ln()).collect();
    let spread = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - x.iter().cloned().fold(f64::INFINITY, f64::min);
    let xi = if ratios.len() >= 2 && spread > 0.0 { linear_fit(&x, &y).0.max(0.0) } else { 0.0 };
    let cont = ratios.iter().map(|(w, r)| r / w.powf(xi)).fold(0.0, f64::max);
    (xi, cont)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffexpr::parse_expr;
    use crate::fourier::{analyze, Grid};
    use std::f64::consts::PI;

    fn sin_theta(n_max: usize) -> (ModeField, ModeField) {
        let g = Grid::from_fn(1, 64, 1, |x| vec![c(x[0].sin())]);
        let u0 = analyze(&g, n_max).unwrap();
        (u0.clone(), ModeField::zeros(u0.set, 1))
    }

    fn exprs(g: &str) -> SystemExprs {
        let m1 = |s: &str| MatrixExpr::new(1, 1, vec![parse_expr(s).unwrap()]).unwrap();
        SystemExprs {
            d: 1,
            m: 1,
            g0l: m1("0"),
            gjl: m1(g),
            alpha: m1("1"),
            zeta: m1("0"),
            xj: vec![m1("exp(-t)")],
            alpha_inf: None,
            zeta_inf: None,
            eta_mn: f64::INFINITY,
            b_s: 1.0,
            c_e: 0.0,
            b_low: Some(1.0),
            forcing: vec![],
            epsilon: None,
        }
    }

    #[test]
    fn example_conditions_pass_and_sign_flip_fails() {
        let sys = SilentSystem::example();
        let modes = default_check_modes(1, 16);
        let rep = check_conditions(&sys, &modes, &default_check_times(), &ConditionOptions::default());
        assert!(rep.passed(), "{rep:?}");
        assert!(rep.silence_max.abs() < 1e-9);
        assert!(rep.eta_fit.is_none());
        let bad = SilentSystem::from_exprs(&exprs("exp(2*t)")).unwrap();
        let rep = check_conditions(&bad, &modes, &default_check_times(), &ConditionOptions::default());
        assert!(!rep.silence_ok);
        assert!((rep.silence_max - 2.0).abs() < 1e-6, "l' = +1 so l' + b_s = 2, got {}", rep.silence_max);
    }

    #[test]
    fn expression_system_matches_builtin_example() {
        let a = SilentSystem::from_exprs(&exprs("exp(-2*t)")).unwrap();
        let b = SilentSystem::example();
        let (ma, _) = a.mode_system(&[3]).unwrap();
        let (mb, _) = b.mode_system(&[3]).unwrap();
        for t in [0.0, 0.7, 4.0] {
            assert!(((ma.a_rem)(t) - (mb.a_rem)(t)).norm() < 1e-15);
        }
        assert_eq!(ma.t_ode, mb.t_ode);
        assert!((ma.t_ode - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn convergence_fit_recovers_rate() {
        let mut x = exprs("exp(-2*t)");
        x.alpha = MatrixExpr::new(1, 1, vec![parse_expr("1 + 3*exp(-0.5*t)").unwrap()]).unwrap();
        x.alpha_inf = Some(DMatrix::from_element(1, 1, 1.0));
        x.eta_mn = 0.5;
        let sys = SilentSystem::from_exprs(&x).unwrap();
        assert_eq!(sys.beta_rem(), 0.5);
        let rep = check_conditions(&sys, &[vec![1]], &default_check_times(), &ConditionOptions::default());
        assert!(rep.convergence_ok);
        assert!((rep.eta_fit.unwrap() - 0.5).abs() < 1e-9);
        assert!((rep.c_mn - 3.0).abs() < 1e-6);
        // Declaring a faster rate than the data supports fails.
        x.eta_mn = 0.8;
        let sys = SilentSystem::from_exprs(&x).unwrap();
        let rep = check_conditions(&sys, &[vec![1]], &default_check_times(), &ConditionOptions::default());
        assert!(!rep.convergence_ok);
    }

    #[test]
    fn zero_data_gives_zero_trajectory() {
        let sys = SilentSystem::example();
        let z = ModeField::zeros(ModeSet::new(1, 4), 1);
        let tr = solve(&sys, &z, &z, &[0.0, 1.0, 2.0], 1e-10).unwrap();
        assert!(tr.modes.iter().all(|m| m.v.iter().all(|v| vec_norm(v) == 0.0)));
    }

    #[test]
    fn field_solve_decouples_into_modes() {
        let sys = SilentSystem::example();
        let set = ModeSet::new(1, 3);
        let mut u0 = ModeField::zeros(set, 1);
        let mut u1 = ModeField::zeros(set, 1);
        u0.set_mode(&[2], &[C64::new(0.3, -0.1)]).unwrap();
        u1.set_mode(&[-1], &[C64::new(0.0, 1.0)]).unwrap();
        let times = [0.0, 1.0, 3.0];
        let tr = solve(&sys, &u0, &u1, &times, 1e-10).unwrap();
        let (ms, _) = sys.mode_system(&[2]).unwrap();
        let v0 = CVec::from_vec(vec![C64::new(0.3, -0.1), c(0.0)]);
        let single = modeode::integrate_mode(&ms, &v0, 0.0, 3.0, 1e-10, &times).unwrap();
        for (a, b) in tr.mode(&[2]).unwrap().v.iter().zip(&single.v) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn hermitian_data_uses_conjugate_mirror() {
        let sys = SilentSystem::example();
        let set = ModeSet::new(1, 2);
        let mut u0 = ModeField::zeros(set, 1);
        u0.set_mode(&[1], &[C64::new(0.5, 0.2)]).unwrap();
        u0.set_mode(&[-1], &[C64::new(0.5, -0.2)]).unwrap();
        let u1 = ModeField::zeros(set, 1);
        let tr = solve(&sys, &u0, &u1, &[0.0, 2.0], 1e-11).unwrap();
        let (ms, _) = sys.mode_system(&[-1]).unwrap();
        let direct = modeode::integrate_mode(&ms, &u0.get(&[-1]).map(|v| CVec::from_vec(vec![v[0], c(0.0)])).unwrap(), 0.0, 2.0, 1e-11, &[0.0, 2.0]).unwrap();
        assert!(vec_norm(&(&tr.mode(&[-1]).unwrap().v[1] - &direct.v[1])) < 1e-9);
    }

    #[test]
    fn example_first_order_data_lies_in_e1() {
        let sys = SilentSystem::example();
        let (u0, u1) = sin_theta(4);
        let data = extract_field_data(&sys, &u0, &u1, 2, None, 1e-10).unwrap();
        let v1 = data.v_inf(1);
        assert!(v1.component(0).data().iter().any(|z| z.norm() > 0.1));
        assert!(v1.component(1).data().iter().all(|z| z.norm() < 1e-12));
        assert!(data.converged(), "{:?}", data.modes.iter().map(|m| (m.horizon, m.diagnostics.clone())).collect::<Vec<_>>());
        // Only modes ±1 carry data.
        for (i, n) in data.set.iter().enumerate() {
            if n[0].abs() != 1 {
                assert!(vec_norm(&data.aggregate.coeff_vec(i)) < 1e-12);
            }
        }
    }

    #[test]
    fn autonomous_field_data_is_projection() {
        let mut x = exprs("0");
        x.xj = vec![MatrixExpr::new(1, 1, vec![parse_expr("0").unwrap()]).unwrap()];
        x.gjl = MatrixExpr::new(1, 1, vec![parse_expr("0").unwrap()]).unwrap();
        x.b_low = None;
        let sys = SilentSystem::from_exprs(&x).unwrap();
        let set = ModeSet::new(1, 2);
        let mut u0 = ModeField::zeros(set, 1);
        let mut u1 = ModeField::zeros(set, 1);
        u0.set_mode(&[1], &[C64::new(1.0, 2.0)]).unwrap();
        u1.set_mode(&[1], &[C64::new(-0.5, 0.0)]).unwrap();
        u1.set_mode(&[0], &[C64::new(0.25, 0.0)]).unwrap();
        let data = extract_field_data(&sys, &u0, &u1, 2, Some(30.0), 1e-10).unwrap();
        for (i, _) in set.iter().enumerate() {
            let v0 = stacked(&u0, &u1, i);
            let p1 = sys.decomp.project(1, &v0).unwrap();
            assert!(vec_norm(&(data.v_inf(1).coeff_vec(i) - p1)) < 1e-10);
            assert!(vec_norm(&(data.aggregate.coeff_vec(i) - &v0)) < 1e-10);
        }
        let phi = phi_infty(&sys, &data.aggregate, Some(30.0), 1e-10).unwrap();
        for i in 0..set.len() {
            assert!(vec_norm(&(stacked(&phi.u0, &phi.u1, i) - stacked(&u0, &u1, i))) < 1e-10);
        }
    }

    #[test]
    fn example_round_trip_and_linearity() {
        let sys = SilentSystem::example();
        let set = ModeSet::new(1, 3);
        // u_∞ = cos θ, v_∞ = 0.
        let mut target = ModeField::zeros(set, 2);
        let a = (PI / 2.0).sqrt();
        target.set_mode(&[1], &[c(a), c(0.0)]).unwrap();
        target.set_mode(&[-1], &[c(a), c(0.0)]).unwrap();
        let phi = phi_infty(&sys, &target, None, 1e-10).unwrap();
        assert!(phi.max_roundtrip <= 1e-5);
        let back = extract_field_data(&sys, &phi.u0, &phi.u1, 2, None, 1e-10).unwrap();
        for i in 0..set.len() {
            let t = target.coeff_vec(i);
            assert!(vec_norm(&(back.aggregate.coeff_vec(i) - &t)) <= 1e-5 * vec_norm(&t).max(1e-300) + 1e-14);
        }
        let mut other = ModeField::zeros(set, 2);
        other.set_mode(&[2], &[C64::new(0.1, 0.4), C64::new(-1.0, 0.2)]).unwrap();
        other.set_mode(&[0], &[c(0.3), c(0.7)]).unwrap();
        let phi2 = phi_infty(&sys, &other, None, 1e-10).unwrap();
        let mut sum = target.clone();
        sum.axpy(c(1.0), &other);
        let phis = phi_infty(&sys, &sum, None, 1e-10).unwrap();
        for i in 0..set.len() {
            let lhs = stacked(&phis.u0, &phis.u1, i);
            let rhs = stacked(&phi.u0, &phi.u1, i) + stacked(&phi2.u0, &phi2.u1, i);
            assert!(vec_norm(&(lhs - rhs)) < 1e-10);
        }
    }

    #[test]
    fn horizon_independence() {
        let sys = SilentSystem::example();
        let (u0, u1) = sin_theta(3);
        let a = extract_field_data(&sys, &u0, &u1, 2, Some(30.0), 1e-11).unwrap();
        let b = extract_field_data(&sys, &u0, &u1, 2, Some(45.0), 1e-11).unwrap();
        for n in 1..=2 {
            let mut d = a.v_inf(n).clone();
            d.axpy(c(-1.0), b.v_inf(n));
            assert!(d.data().iter().all(|z| z.norm() < 1e-8), "order {n}");
        }
    }

    #[test]
    fn field_approximant_derivative_structure() {
        let sys = SilentSystem::example();
        let (u0, u1) = sin_theta(2);
        let fx = FieldExtraction::new(&sys, &u0, &u1, 2, None, 1e-11).unwrap();
        let ap = fx.approximants(2, 0.0, 12.0).unwrap();
        let h = 1e-4;
        for t in [1.0, 3.0, 5.0, 7.0, 9.0] {
            let p = ap.eval(t + h).unwrap();
            let q = ap.eval(t - h).unwrap();
            let f = ap.eval(t).unwrap();
            for i in 0..f.set.len() {
                let fd = (p.coeff(i)[0] - q.coeff(i)[0]) / (2.0 * h);
                assert!((fd - f.coeff(i)[1]).norm() < 1e-6, "t = {t}");
            }
        }
    }

    #[test]
    fn sobolev_loss_fit() {
        let r: Vec<(f64, f64)> = (1..6).map(|n| (n as f64, 2.0 * (n as f64).powf(1.5))).collect();
        let (xi, cont) = sobolev_loss(&r);
        assert!((xi - 1.5).abs() < 1e-12);
        assert!((cont - 2.0).abs() < 1e-10);
    }

    #[test]
    fn mode_errors_carry_the_index() {
        let e = Error::Numerical("x".into()).in_mode(&[2, -1]);
        assert!(e.to_string().contains("[2, -1]"));
        assert_eq!(e.exit_class(), 3);
    }
}
