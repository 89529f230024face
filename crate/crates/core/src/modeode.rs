//! Per-mode first-order systems v̇ = A_∞v + A_rem(t)v + F(t): integration, graded asymptotic
//! data of all orders, the recursive approximants F_{∞,n}, and the data-to-initial-data map.
//!
//! Everything runs in the eigen-coordinates y = T_A⁻¹v, where A_∞ is block diagonal. Orders
//! are extracted through the residuals r_m = y − G_m (G_m = T_A⁻¹F_{∞,m}), which satisfy
//! ṙ_m = Λ r_m + Ã r_{m−1} with r_0 = y. After scaling by e^{−σ_m(t−a)}, σ_m = κ₁ − mβ,
//! blocks 1..m are integrated backward from the horizon and the remaining blocks forward
//! from the anchor a, so every solve runs in its stable direction.

use std::sync::Arc;

use crate::dop853::{self, DenseSolution, Options};
use crate::error::{Error, Result};
use crate::linalg::{c, cond2, vec_norm, CMat, CVec, C64};
use crate::quad;
use crate::spectral::SpectralDecomposition;

pub type MatFn = Arc<dyn Fn(f64) -> CMat + Send + Sync>;
pub type VecFn = Arc<dyn Fn(f64) -> CVec + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The system of one mode. `anchor` is the lower limit of the approximant integrals and the
/// time at which initial data is posed; it defaults to `t_ode`.
#[derive(Clone)]
pub struct ModeSystem {
    pub k: usize,
    pub a_inf: CMat,
    pub a_rem: MatFn,
    pub forcing: Option<VecFn>,
    pub beta_rem: f64,
    pub t_ode: f64,
    pub anchor: f64,
    /// sup of ‖A_rem(t)‖_F e^{β_rem(t−T_ode)} over the construction sample.
    pub c_rem: f64,
    pub decomp: Arc<SpectralDecomposition>,
}

impl std::fmt::Debug for ModeSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModeSystem")
            .field("k", &self.k)
            .field("beta_rem", &self.beta_rem)
            .field("t_ode", &self.t_ode)
            .field("anchor", &self.anchor)
            .field("c_rem", &self.c_rem)
            .field("forced", &self.forcing.is_some())
            .finish()
    }
}

/// t − T_ode values used to estimate C_rem.
fn rem_sample(beta: f64) -> Vec<f64> {
    let span = (60.0 / beta).clamp(10.0, 200.0);
    let mut s = vec![0.0];
    let n = 64;
    for i in 0..n {
        let x = -3.0 + (span.log10() + 3.0) * i as f64 / (n - 1) as f64;
        s.push(10f64.powf(x));
    }
    s
}

impl ModeSystem {
    pub fn new(
        a_inf: CMat,
        a_rem: MatFn,
        forcing: Option<VecFn>,
        beta_rem: f64,
        t_ode: f64,
        decomp: Arc<SpectralDecomposition>,
    ) -> Result<Self> {
        let k = a_inf.nrows();
        if a_inf.ncols() != k || decomp.k() != k {
            return Err(Error::Dimension(format!("A_inf is {}x{}, decomposition has k = {}", k, a_inf.ncols(), decomp.k())));
        }
        if !(beta_rem > 0.0) {
            return Err(Error::Invalid(format!("beta_rem must be positive, got {beta_rem}")));
        }
        if !(t_ode >= 0.0 && t_ode.is_finite()) {
            return Err(Error::Invalid(format!("T_ode must be finite and non-negative, got {t_ode}")));
        }
        let sample = rem_sample(beta_rem);
        let mut weighted = Vec::with_capacity(sample.len());
        for &s in &sample {
            let m = a_rem(t_ode + s);
            if m.nrows() != k || m.ncols() != k {
                return Err(Error::Dimension("A_rem has the wrong shape".into()));
            }
            let nrm = m.norm();
            if !nrm.is_finite() {
                return Err(Error::NonFinite(format!("A_rem({}) is not finite", t_ode + s)));
            }
            weighted.push(if nrm == 0.0 { 0.0 } else { nrm * (beta_rem * s).exp() });
        }
        let c_rem = weighted.iter().cloned().fold(0.0, f64::max);
        // The weighted norm must stay bounded: its late third may not outgrow the rest.
        let split = 2 * weighted.len() / 3;
        let early = weighted[..split].iter().cloned().fold(0.0, f64::max);
        let late = weighted[split..].iter().cloned().fold(0.0, f64::max);
        if !c_rem.is_finite() || late > 10.0 * early + 1e-300 {
            return Err(Error::Condition(format!(
                "‖A_rem(t)‖ does not decay like e^(-{beta_rem} t): weighted norm grows from {early:.3e} to {late:.3e}"
            )));
        }
        Ok(ModeSystem { k, a_inf, a_rem, forcing, beta_rem, t_ode, anchor: t_ode, c_rem, decomp })
    }

    /// A_rem ≡ 0, F ≡ 0, T_ode = 0.
    pub fn autonomous(a_inf: CMat, decomp: Arc<SpectralDecomposition>) -> Result<Self> {
        let k = a_inf.nrows();
        let beta = decomp.beta;
        ModeSystem::new(a_inf, Arc::new(move |_| CMat::zeros(k, k)), None, beta, 0.0, decomp)
    }

    pub fn with_anchor(mut self, anchor: f64) -> Self {
        self.anchor = anchor;
        self
    }

    pub fn with_forcing(mut self, forcing: Option<VecFn>) -> Self {
        self.forcing = forcing;
        self
    }

    pub fn homogeneous(&self) -> Self {
        self.clone().with_forcing(None)
    }

    /// Default horizon: T_ode + ln(10³/tol)/max(β n_max − (κ₁ − κ_min), β), clamped to
    /// [T_ode + 10, T_ode + 200] and kept beyond the anchor. The 10³ covers the size of the
    /// truncation constant.
    pub fn default_horizon(&self, n_max: usize, tol: f64) -> f64 {
        let d = &self.decomp;
        let rate = (self.beta_rem * n_max as f64 - (d.kappa_max - d.kappa_min)).max(self.beta_rem);
        let h = self.t_ode + (1e3 / tol).ln() / rate;
        h.clamp(self.t_ode + 10.0, self.t_ode + 200.0).max(self.anchor + 10.0)
    }

    fn frame(&self) -> Frame<'_> {
        let d = &*self.decomp;
        let k = self.k;
        let mut sup = vec![0.0; k];
        for &(start, len) in &d.chains {
            for s in sup.iter_mut().skip(start).take(len - 1) {
                *s = d.epsilon;
            }
        }
        Frame { ms: self, lam: d.eigenvalues.clone(), sup }
    }
}

/// The eigen-coordinate view of a mode system.
struct Frame<'a> {
    ms: &'a ModeSystem,
    lam: Vec<C64>,
    /// Superdiagonal of Λ (ε inside Jordan chains).
    sup: Vec<f64>,
}

impl Frame<'_> {
    fn t(&self) -> &CMat {
        &self.ms.decomp.transform
    }

    fn tinv(&self) -> &CMat {
        &self.ms.decomp.inverse_transform
    }

    fn kappa(&self) -> f64 {
        self.ms.decomp.kappa_max
    }

    /// out[i] = ((Λ − shift) x)[idx[i]] for x given on the index set.
    fn lam_apply(&self, idx: &[usize], shift: f64, x: &[C64], out: &mut [C64]) {
        for (p, &i) in idx.iter().enumerate() {
            let mut v = (self.lam[i] - shift) * x[p];
            if self.sup[i] != 0.0 && p + 1 < idx.len() && idx[p + 1] == i + 1 {
                v += x[p + 1] * self.sup[i];
            }
            out[p] = v;
        }
    }

    /// T⁻¹A_rem(t)T x.
    fn rem_apply(&self, t: f64, x: &[C64]) -> CVec {
        let xv = CVec::from_column_slice(x);
        let a = (self.ms.a_rem)(t);
        self.tinv() * (a * (self.t() * xv))
    }

    fn forcing(&self, t: f64) -> Option<CVec> {
        self.ms.forcing.as_ref().map(|f| self.tinv() * f(t))
    }

    /// e^{(Λ − shift) τ} applied to x, restricted to the chains inside idx (full-length vectors).
    fn exp_apply(&self, tau: f64, shift: f64, x: &CVec, idx: &[usize]) -> CVec {
        let d = &self.ms.decomp;
        let k = self.ms.k;
        let mut inside = vec![false; k];
        for &i in idx {
            inside[i] = true;
        }
        let mut out = CVec::zeros(k);
        for &(start, len) in &d.chains {
            if !inside[start] {
                continue;
            }
            let e = ((self.lam[start] - shift) * tau).exp();
            for i in 0..len {
                let mut coef = 1.0;
                let mut acc = C64::new(0.0, 0.0);
                for p in 0..len - i {
                    if p > 0 {
                        coef *= d.epsilon * tau / p as f64;
                    }
                    acc += x[start + i + p] * coef;
                }
                out[start + i] = acc * e;
            }
        }
        out
    }
}

/// Relative control with an absolute floor far below the problem scale, so components
/// passing through zero do not stall the step control.
fn options(tol: f64, scale: f64) -> Options {
    Options { atol: 1e-12 * tol * scale.max(1e-300), ..Options::relative(tol) }
}

fn forcing_scale(fr: &Frame<'_>, t: f64) -> f64 {
    fr.forcing(t).map_or(0.0, |f| vec_norm(&f))
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::Invalid(format!("tolerance must lie in (0, 1), got {tol}")));
    }
    Ok(())
}

/// Sampled solution of one mode.
#[derive(Debug, Clone)]
pub struct ModeTrajectory {
    pub t: Vec<f64>,
    pub v: Vec<CVec>,
    pub tol: f64,
    pub n_steps: usize,
    pub n_rejected: usize,
}

impl ModeTrajectory {
    pub fn to_csv(&self) -> String {
        let k = self.v.first().map_or(0, |v| v.len());
        let mut s = String::from("t");
        for i in 0..k {
            s.push_str(&format!(",re{i},im{i}"));
        }
        s.push('\n');
        for (t, v) in self.t.iter().zip(&self.v) {
            s.push_str(&format!("{t:e}"));
            for z in v.iter() {
                s.push_str(&format!(",{:e},{:e}", z.re, z.im));
            }
            s.push('\n');
        }
        s
    }
}

/// Integrate one mode from v(t0) = v0 to t1 with relative tolerance `tol`, sampling at
/// `samples` (defaults to the two endpoints).
pub fn integrate_mode(ms: &ModeSystem, v0: &CVec, t0: f64, t1: f64, tol: f64, samples: &[f64]) -> Result<ModeTrajectory> {
    check_tol(tol)?;
    if !(t1 > t0) {
        return Err(Error::Invalid(format!("need t1 > t0, got [{t0}, {t1}]")));
    }
    if v0.len() != ms.k {
        return Err(Error::Dimension(format!("initial vector of length {} for k = {}", v0.len(), ms.k)));
    }
    let samples: Vec<f64> = if samples.is_empty() { vec![t0, t1] } else { samples.to_vec() };
    if samples.windows(2).any(|w| w[1] <= w[0]) || samples[0] < t0 || *samples.last().unwrap() > t1 {
        return Err(Error::Invalid("sample times must increase strictly inside [t0, t1]".into()));
    }
    let fr = ms.frame();
    let all: Vec<usize> = (0..ms.k).collect();
    let y0 = fr.tinv() * v0;
    let mut out = vec![CVec::zeros(ms.k); samples.len()];
    let res = dop853::integrate(
        |t, y, dy| {
            fr.lam_apply(&all, 0.0, y, dy);
            let r = fr.rem_apply(t, y);
            for (d, x) in dy.iter_mut().zip(r.iter()) {
                *d += x;
            }
            if let Some(f) = fr.forcing(t) {
                for (d, x) in dy.iter_mut().zip(f.iter()) {
                    *d += x;
                }
            }
            Ok(())
        },
        t0,
        y0.as_slice(),
        t1,
        &options(tol, vec_norm(&y0).max(forcing_scale(&fr, t0))),
        &samples,
        |i, _, y| out[i] = fr.t() * CVec::from_column_slice(y),
        false,
    )?;
    Ok(ModeTrajectory { t: samples, v: out, tol, n_steps: res.n_accepted, n_rejected: res.n_rejected })
}

/// One residual level r̃_m on [a, H], stored as dense solutions over index subsets.
#[derive(Debug, Clone)]
struct Level {
    sigma: f64,
    parts: Vec<(Vec<usize>, DenseSolution)>,
}

impl Level {
    fn eval(&self, k: usize, s: f64) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); k];
        for (idx, sol) in &self.parts {
            let v = sol.eval(s);
            for (p, &i) in idx.iter().enumerate() {
                out[i] = v[p];
            }
        }
        out
    }
}

/// Per-order truncation diagnostics. `cauchy` is the change in v_{∞,n} when the horizon is
/// halved (relative to the anchor); `error_estimate` extrapolates it to the full horizon
/// with the slowest backward decay rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderDiagnostics {
    pub cauchy: f64,
    pub error_estimate: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct ModeAsymptoticData {
    pub anchor: f64,
    pub horizon: f64,
    /// v_{∞,n} for n = 1..=n_max.
    pub orders: Vec<CVec>,
    /// 𝒱 = Σ_{n ≤ min(n_max, 𝒩)} π_n(v_{∞,n}).
    pub aggregate: CVec,
    pub diagnostics: Vec<OrderDiagnostics>,
    /// Whether n_max ≥ 𝒩, so that `aggregate` is the full asymptotic data.
    pub complete: bool,
}

impl ModeAsymptoticData {
    pub fn order(&self, n: usize) -> &CVec {
        &self.orders[n - 1]
    }

    pub fn converged(&self) -> bool {
        self.diagnostics.iter().all(|d| d.converged)
    }
}

/// Extraction result together with the residual levels, so r_n(t) = v(t) − F_{∞,n}(t) can
/// be evaluated without cancellation.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub data: ModeAsymptoticData,
    k: usize,
    anchor: f64,
    transform: CMat,
    levels: Vec<Level>,
}

impl Extraction {
    pub fn horizon(&self) -> f64 {
        self.data.horizon
    }

    /// r_n(t) for n ≥ 1 and v(t) for n = 0, on [anchor, horizon].
    pub fn residual(&self, n: usize, t: f64) -> Result<CVec> {
        let lv = self
            .levels
            .get(n)
            .ok_or(Error::IndexOutOfRange { index: n, max: self.levels.len().saturating_sub(1) })?;
        if t < self.anchor || t > self.data.horizon {
            return Err(Error::Invalid(format!("t = {t} outside [{}, {}]", self.anchor, self.data.horizon)));
        }
        let x = CVec::from_vec(lv.eval(self.k, t)) * c((lv.sigma * (t - self.anchor)).exp());
        Ok(&self.transform * x)
    }

    pub fn solution(&self, t: f64) -> Result<CVec> {
        self.residual(0, t)
    }

}

/// Asymptotic data through the fundamental extraction, so the result is exactly linear in v0.
pub fn extract_data(ms: &ModeSystem, v0: &CVec, n_max: usize, horizon: f64, tol: f64) -> Result<ModeAsymptoticData> {
    if v0.len() != ms.k {
        return Err(Error::Dimension(format!("initial vector of length {} for k = {}", v0.len(), ms.k)));
    }
    Ok(fundamental(ms, n_max, horizon, tol)?.data(v0))
}

/// Extractions for the k unit initial vectors of the homogeneous system, plus the
/// zero-initial-data run when there is forcing. Data and residuals of any solution are
/// linear combinations of these.
#[derive(Debug, Clone)]
pub struct FundamentalExtraction {
    pub tol: f64,
    basis: Vec<Extraction>,
    forced: Option<Extraction>,
}

pub fn fundamental(ms: &ModeSystem, n_max: usize, horizon: f64, tol: f64) -> Result<FundamentalExtraction> {
    let hom = ms.homogeneous();
    let mut basis = Vec::with_capacity(ms.k);
    for j in 0..ms.k {
        let mut e = CVec::zeros(ms.k);
        e[j] = c(1.0);
        basis.push(extract(&hom, &e, n_max, horizon, tol)?);
    }
    let forced = match ms.forcing {
        Some(_) => Some(extract(ms, &CVec::zeros(ms.k), n_max, horizon, tol)?),
        None => None,
    };
    Ok(FundamentalExtraction { tol, basis, forced })
}

impl FundamentalExtraction {
    pub fn k(&self) -> usize {
        self.basis.len()
    }

    pub fn horizon(&self) -> f64 {
        self.basis[0].data.horizon
    }

    pub fn anchor(&self) -> f64 {
        self.basis[0].anchor
    }

    pub fn n_max(&self) -> usize {
        self.basis[0].data.orders.len()
    }

    fn combine(&self, v0: &CVec, f: impl Fn(&Extraction) -> CVec) -> CVec {
        let mut acc = self.forced.as_ref().map_or_else(|| CVec::zeros(self.k()), &f);
        for (j, ex) in self.basis.iter().enumerate() {
            if v0[j] != c(0.0) {
                acc += f(ex) * v0[j];
            }
        }
        acc
    }

    pub fn data(&self, v0: &CVec) -> ModeAsymptoticData {
        let b0 = &self.basis[0].data;
        let orders: Vec<CVec> = (0..b0.orders.len()).map(|i| self.combine(v0, |e| e.data.orders[i].clone())).collect();
        let aggregate = self.combine(v0, |e| e.data.aggregate.clone());
        let scale = vec_norm(v0);
        let diagnostics = (0..b0.orders.len())
            .map(|i| {
                let bound = |f: &dyn Fn(&OrderDiagnostics) -> f64| {
                    let mut s = self.forced.as_ref().map_or(0.0, |e| f(&e.data.diagnostics[i]));
                    for (j, e) in self.basis.iter().enumerate() {
                        s += v0[j].norm() * f(&e.data.diagnostics[i]);
                    }
                    s
                };
                let cauchy = bound(&|d| d.cauchy);
                let error_estimate = bound(&|d| d.error_estimate);
                let converged = error_estimate <= self.tol * scale.max(vec_norm(&orders[i])).max(1e-300);
                OrderDiagnostics { cauchy, error_estimate, converged }
            })
            .collect();
        ModeAsymptoticData {
            anchor: b0.anchor,
            horizon: b0.horizon,
            orders,
            aggregate,
            diagnostics,
            complete: b0.complete,
        }
    }

    /// r_n(t) of the solution with v(anchor) = v0 (v(t) itself for n = 0).
    pub fn residual(&self, v0: &CVec, n: usize, t: f64) -> Result<CVec> {
        let mut acc = match &self.forced {
            Some(e) => e.residual(n, t)?,
            None => CVec::zeros(self.k()),
        };
        for (j, ex) in self.basis.iter().enumerate() {
            if v0[j] != c(0.0) {
                acc += ex.residual(n, t)? * v0[j];
            }
        }
        Ok(acc)
    }

    /// The homogeneous map v0 ↦ 𝒱.
    pub fn data_map(&self) -> CMat {
        let k = self.k();
        let mut m = CMat::zeros(k, k);
        for (j, e) in self.basis.iter().enumerate() {
            m.set_column(j, &e.data.aggregate);
        }
        m
    }

    /// 𝒱 of the zero-initial-data solution.
    pub fn forced_aggregate(&self) -> CVec {
        self.forced.as_ref().map_or_else(|| CVec::zeros(self.k()), |e| e.data.aggregate.clone())
    }
}

/// Asymptotic data of orders 1..=n_max for the solution with v(anchor) = v0.
pub fn extract(ms: &ModeSystem, v0: &CVec, n_max: usize, horizon: f64, tol: f64) -> Result<Extraction> {
    check_tol(tol)?;
    let k = ms.k;
    let a = ms.anchor;
    if v0.len() != k {
        return Err(Error::Dimension(format!("initial vector of length {} for k = {k}", v0.len())));
    }
    if n_max == 0 {
        return Err(Error::Invalid("n_max must be at least 1".into()));
    }
    if !(horizon > a) {
        return Err(Error::Invalid(format!("horizon {horizon} must exceed the anchor {a}")));
    }
    let beta = ms.beta_rem;
    if beta * (horizon - a) > 700.0 {
        return Err(Error::Range(beta * (horizon - a)));
    }
    let fr = ms.frame();
    let d = &*ms.decomp;
    let kappa = fr.kappa();
    let all: Vec<usize> = (0..k).collect();
    let y_a = fr.tinv() * v0;
    let opts = options(tol, vec_norm(&y_a).max(forcing_scale(&fr, a)));

    // Level 0: ỹ = e^{−κ₁(s−a)} y, forward.
    let out = dop853::integrate(
        |s, x, dx| {
            fr.lam_apply(&all, kappa, x, dx);
            let r = fr.rem_apply(s, x);
            for (o, v) in dx.iter_mut().zip(r.iter()) {
                *o += v;
            }
            if let Some(f) = fr.forcing(s) {
                let w = (-kappa * (s - a)).exp();
                for (o, v) in dx.iter_mut().zip(f.iter()) {
                    *o += v * w;
                }
            }
            Ok(())
        },
        a,
        y_a.as_slice(),
        horizon,
        &opts,
        &[],
        |_, _, _| {},
        true,
    )?;
    let mut levels = vec![Level { sigma: kappa, parts: vec![(all.clone(), out.dense.unwrap())] }];

    let h_half = a + 0.5 * (horizon - a);
    let e_neg_a = |x: &CVec| fr.exp_apply(-a, 0.0, x, &all);
    let scale = vec_norm(v0).max(1e-300);
    let mut orders = Vec::with_capacity(n_max);
    let mut diagnostics = Vec::with_capacity(n_max);
    let mut aggregate_eig = CVec::zeros(k);

    for m in 1..=n_max {
        let sigma = kappa - m as f64 * beta;
        let back: Vec<usize> = (0..k).filter(|&i| d.column_block[i] <= m).collect();
        let fwd: Vec<usize> = (0..k).filter(|&i| d.column_block[i] > m).collect();
        let prev = levels.last().unwrap();
        let coupling = |s: f64| -> CVec {
            let r = prev.eval(k, s);
            fr.rem_apply(s, &r) * c((beta * (s - a)).exp())
        };
        let mut parts = Vec::new();
        for (idx, backward) in [(&back, true), (&fwd, false)] {
            if idx.is_empty() {
                continue;
            }
            let (t0, t1) = if backward { (horizon, a) } else { (a, horizon) };
            let x0: Vec<C64> = if backward { vec![c(0.0); idx.len()] } else { idx.iter().map(|&i| y_a[i]).collect() };
            let sol = dop853::integrate(
                |s, x, dx| {
                    fr.lam_apply(idx, sigma, x, dx);
                    let g = coupling(s);
                    for (p, &i) in idx.iter().enumerate() {
                        dx[p] += g[i];
                    }
                    Ok(())
                },
                t0,
                &x0,
                t1,
                &opts,
                &[],
                |_, _, _| {},
                true,
            )?;
            parts.push((idx.clone(), sol.dense.unwrap()));
        }
        let level = Level { sigma, parts };

        // c^{(m)} = e^{−Λa}(y(a) − r̃_m(a)) on blocks ≤ m.
        let r_a = level.eval(k, a);
        let mut g_a = CVec::zeros(k);
        for &i in &back {
            g_a[i] = y_a[i] - r_a[i];
        }
        let c_m = e_neg_a(&g_a);
        let v_m = fr.t() * &c_m;

        let r_half = CVec::from_vec(level.eval(k, h_half));
        let mut masked = CVec::zeros(k);
        for &i in &back {
            masked[i] = r_half[i];
        }
        let shift = fr.exp_apply(a - h_half, sigma, &masked, &back);
        let cauchy = vec_norm(&(fr.t() * e_neg_a(&shift)));
        let mu = back.iter().map(|&i| fr.lam[i].re - sigma).fold(f64::INFINITY, f64::min);
        let error_estimate = cauchy * (-mu * (horizon - h_half)).exp();
        let converged = error_estimate <= tol * scale.max(vec_norm(&v_m));
        diagnostics.push(OrderDiagnostics { cauchy, error_estimate, converged });

        if m <= d.n_blocks {
            for i in d.block_range(m) {
                aggregate_eig[i] = c_m[i];
            }
        }
        orders.push(v_m);
        levels.push(level);
    }

    let data = ModeAsymptoticData {
        anchor: a,
        horizon,
        orders,
        aggregate: fr.t() * aggregate_eig,
        diagnostics,
        complete: n_max >= d.n_blocks,
    };
    Ok(Extraction { data, k, anchor: a, transform: d.transform.clone(), levels })
}

/// F_{∞,n} evaluated from stored dense solutions of the recursion on [t_lo, t_hi].
#[derive(Debug, Clone)]
pub struct Approximant {
    n: usize,
    k: usize,
    anchor: f64,
    kappa: f64,
    transform: CMat,
    fwd: Option<DenseSolution>,
    bwd: Option<DenseSolution>,
    t_lo: f64,
    t_hi: f64,
}

impl Approximant {
    pub fn order(&self) -> usize {
        self.n
    }

    pub fn range(&self) -> (f64, f64) {
        (self.t_lo, self.t_hi)
    }

    /// F_{∞,j}(t) for 1 ≤ j ≤ n.
    pub fn eval_order(&self, j: usize, t: f64) -> Result<CVec> {
        if j == 0 || j > self.n {
            return Err(Error::IndexOutOfRange { index: j, max: self.n });
        }
        if t < self.t_lo || t > self.t_hi {
            return Err(Error::Invalid(format!("t = {t} outside [{}, {}]", self.t_lo, self.t_hi)));
        }
        let sol = if t >= self.anchor { self.fwd.as_ref() } else { self.bwd.as_ref() };
        let g = match sol {
            Some(s) => s.eval(t),
            None => return Err(Error::Invalid(format!("t = {t} outside the approximant range"))),
        };
        let x = CVec::from_column_slice(&g[(j - 1) * self.k..j * self.k]) * c((self.kappa * (t - self.anchor)).exp());
        Ok(&self.transform * x)
    }

    pub fn eval(&self, t: f64) -> Result<CVec> {
        self.eval_order(self.n, t)
    }
}

/// Build F_{∞,1..n} on [t_lo, t_hi] (which must contain the anchor) from the data, by
/// integrating the equivalent differential recursion
/// Ġ_j = ΛG_j + ÃG_{j−1} + T⁻¹F, G_j(a) = e^{Λa}T⁻¹v_{∞,j}.
pub fn build_f_infty(ms: &ModeSystem, data: &ModeAsymptoticData, n: usize, t_lo: f64, t_hi: f64, tol: f64) -> Result<Approximant> {
    check_tol(tol)?;
    if n == 0 || n > data.orders.len() {
        return Err(Error::IndexOutOfRange { index: n, max: data.orders.len() });
    }
    let a = ms.anchor;
    if !(t_lo <= a && a <= t_hi) {
        return Err(Error::Invalid(format!("range [{t_lo}, {t_hi}] must contain the anchor {a}")));
    }
    let k = ms.k;
    let fr = ms.frame();
    let kappa = fr.kappa();
    let all: Vec<usize> = (0..k).collect();
    let mut g0 = Vec::with_capacity(n * k);
    for j in 1..=n {
        let cj = fr.tinv() * data.order(j);
        g0.extend(fr.exp_apply(a, 0.0, &cj, &all).iter().cloned());
    }
    let rhs = |s: f64, x: &[C64], dx: &mut [C64]| -> Result<()> {
        let f = fr.forcing(s).map(|f| f * c((-kappa * (s - a)).exp()));
        let arem = (ms.a_rem)(s);
        for j in 0..n {
            fr.lam_apply(&all, kappa, &x[j * k..(j + 1) * k], &mut dx[j * k..(j + 1) * k]);
            if j > 0 {
                let prev = CVec::from_column_slice(&x[(j - 1) * k..j * k]);
                let r = fr.tinv() * (&arem * (fr.t() * prev));
                for (o, v) in dx[j * k..(j + 1) * k].iter_mut().zip(r.iter()) {
                    *o += v;
                }
            }
            if let Some(f) = &f {
                for (o, v) in dx[j * k..(j + 1) * k].iter_mut().zip(f.iter()) {
                    *o += v;
                }
            }
        }
        Ok(())
    };
    let g_scale = g0.iter().map(|z| z.norm()).fold(0.0, f64::max).max(forcing_scale(&fr, a));
    let opts = options(tol, g_scale);
    let run = |t1: f64| -> Result<Option<DenseSolution>> {
        if t1 == a {
            return Ok(None);
        }
        Ok(dop853::integrate(rhs, a, &g0, t1, &opts, &[], |_, _, _| {}, true)?.dense)
    };
    let fwd = run(t_hi)?;
    let bwd = run(t_lo)?;
    let fwd = fwd.or_else(|| {
        // Degenerate range [a, a]: a single-point solution.
        dop853::integrate(rhs, a, &g0, a + 1e-12, &opts, &[], |_, _, _| {}, true).ok().and_then(|o| o.dense)
    });
    Ok(Approximant { n, k, anchor: a, kappa, transform: fr.t().clone(), fwd, bwd, t_lo, t_hi })
}

/// Least-squares decay slope of a residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecayFit {
    Slope { slope: f64, intercept: f64, r2: f64, n: usize },
    /// Some residual on the window is below 1e−13·scale.
    BelowFloor,
}

impl DecayFit {
    pub fn slope(&self) -> Option<f64> {
        match self {
            DecayFit::Slope { slope, .. } => Some(*slope),
            DecayFit::BelowFloor => None,
        }
    }
}

/// Slope of ln(residual) against t over the samples inside `window`.
pub fn fit_decay(t: &[f64], residual: &[f64], window: (f64, f64), scale: f64) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(residual)
        .filter(|(t, _)| **t >= window.0 && **t <= window.1)
        .map(|(t, r)| (*t, *r))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Invalid(format!("fewer than two samples in window [{}, {}]", window.0, window.1)));
    }
    if pts.iter().any(|&(_, r)| !(r > 1e-13 * scale)) {
        return Ok(DecayFit::BelowFloor);
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept, r2) = linear_fit(&xs, &ys);
    Ok(DecayFit::Slope { slope, intercept, r2, n: pts.len() })
}

/// Ordinary least squares y ≈ a x + b; returns (a, b, R²).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, intercept, r2)
}

/// Decay slope of |v(t) − approx(t)| over the trajectory samples in `window`.
pub fn residual_decay_fit(traj: &ModeTrajectory, approx: impl Fn(f64) -> Result<CVec>, window: (f64, f64)) -> Result<DecayFit> {
    let mut ts = Vec::new();
    let mut rs = Vec::new();
    let mut scale: f64 = 0.0;
    for (t, v) in traj.t.iter().zip(&traj.v) {
        scale = scale.max(vec_norm(v));
        if *t >= window.0 && *t <= window.1 {
            ts.push(*t);
            rs.push(vec_norm(&(v - approx(*t)?)));
        }
    }
    fit_decay(&ts, &rs, window, scale.max(1e-300))
}

/// Result of the asymptotic-data-to-initial-data map of one mode.
#[derive(Debug, Clone)]
pub struct InitialFromData {
    /// Initial data at the anchor.
    pub v0: CVec,
    /// Matrix of v0 ↦ 𝒱 for the homogeneous system.
    pub data_map: CMat,
    pub condition: f64,
    /// Data of the zero-initial-data solution (nonzero only with forcing).
    pub forced_data: CVec,
    pub roundtrip_error: f64,
}

/// The k×k matrix v0 ↦ 𝒱 of the homogeneous system (n_max = 𝒩).
pub fn data_map(ms: &ModeSystem, horizon: f64, tol: f64) -> Result<CMat> {
    Ok(fundamental(&ms.homogeneous(), ms.decomp.n_blocks, horizon, tol)?.data_map())
}

/// Initial data at the anchor whose asymptotic data is `target`. With forcing, the data of
/// the zero-initial-data solution is subtracted first. The result is checked by an
/// independent single extraction.
pub fn data_to_initial(ms: &ModeSystem, target: &CVec, horizon: f64, tol: f64) -> Result<InitialFromData> {
    let fx = fundamental(ms, ms.decomp.n_blocks, horizon, tol)?;
    data_to_initial_with(ms, &fx, target)
}

/// As [`data_to_initial`], reusing a fundamental extraction with n_max ≥ 𝒩.
pub fn data_to_initial_with(ms: &ModeSystem, fx: &FundamentalExtraction, target: &CVec) -> Result<InitialFromData> {
    if target.len() != ms.k {
        return Err(Error::Dimension(format!("target of length {} for k = {}", target.len(), ms.k)));
    }
    if fx.n_max() < ms.decomp.n_blocks {
        return Err(Error::Invalid("fundamental extraction does not reach the top block".into()));
    }
    let m = fx.data_map();
    let cond = cond2(&m);
    if !(cond <= 1e10) {
        return Err(Error::IllConditioned { cond });
    }
    let forced_data = fx.forced_aggregate();
    let rhs = target - &forced_data;
    let v0 = m.clone().lu().solve(&rhs).ok_or_else(|| Error::Numerical("singular data map".into()))?;
    let back = extract(ms, &v0, ms.decomp.n_blocks, fx.horizon(), fx.tol)?.data.aggregate;
    let err = vec_norm(&(back - target));
    let allowed = 1e2 * fx.tol * vec_norm(target).max(vec_norm(&forced_data)).max(vec_norm(&v0));
    if err > allowed && err > 1e-300 {
        return Err(Error::Numerical(format!("round trip error {err:.3e} exceeds {allowed:.3e}")));
    }
    Ok(InitialFromData { v0, data_map: m, condition: cond, forced_data, roundtrip_error: err })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FNorm {
    /// ∫_0^H e^{−κ₁s}|F(s)| ds.
    pub value: f64,
    /// Estimated ∫_H^∞ from the observed decay rate.
    pub tail_bound: f64,
}

/// ‖F‖_A = ∫_0^∞ e^{−κ₁s}|F(s)| ds truncated at the horizon.
pub fn f_norm_a(forcing: impl Fn(f64) -> CVec, kappa1: f64, horizon: f64) -> Result<FNorm> {
    if !(horizon > 0.0) {
        return Err(Error::Invalid("horizon must be positive".into()));
    }
    let g = |s: f64| (-kappa1 * s).exp() * vec_norm(&forcing(s));
    let probes: Vec<f64> = (0..8).map(|j| horizon * 0.5f64.powi(j)).collect();
    let vals: Vec<f64> = probes.iter().map(|&s| g(s)).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("weighted forcing is not finite".into()));
    }
    let (g_h, g_half) = (vals[0], vals[1]);
    let peak = vals.iter().cloned().fold(0.0, f64::max);
    if g_h > 0.0 && (g_h >= g_half || g_h > 1e-3 * peak && vals.windows(2).all(|w| w[0] >= w[1])) {
        return Err(Error::Numerical(format!(
            "‖F‖_A diverges: weighted integrand does not decay (|F| = {g_h:.3e} at s = {horizon})"
        )));
    }
    // Dyadic pieces help the adaptive rule follow exponential profiles.
    let mut edges = vec![0.0];
    let mut e = 1.0;
    while e < horizon {
        edges.push(e);
        e *= 2.0;
    }
    edges.push(horizon);
    let mut value = 0.0;
    for w in edges.windows(2) {
        value += quad::integrate(g, w[0], w[1], 1e-10, 1e-300)?.value;
    }
    let tail_bound = if g_h == 0.0 {
        0.0
    } else {
        let rate = (g_half / g_h).ln() / (0.5 * horizon);
        g_h / rate
    };
    Ok(FNorm { value, tail_bound })
}

/// 𝔤(t, ι) and its companions for one mode.
#[derive(Clone)]
pub struct GaugeFunction {
    pub g: ScalarFn,
    pub b_s: f64,
    pub c_e: f64,
    /// σ(t, ι); `None` for ι = 0.
    pub sigma: Option<ScalarFn>,
    /// X(t, ι); `None` for ι = 0.
    pub x: Option<MatFn>,
}

impl GaugeFunction {
    /// ℓ̇ = d ln 𝔤/dt by a fourth-order central difference.
    pub fn ell_dot(&self, t: f64) -> f64 {
        let h = 1e-3 * (1.0 + t.abs());
        let l = |s: f64| (self.g)(s).ln();
        (l(t - 2.0 * h) - 8.0 * l(t - h) + 8.0 * l(t + h) - l(t + 2.0 * h)) / (12.0 * h)
    }

    pub fn identically_zero(&self) -> bool {
        (self.g)(0.0) == 0.0 && (self.g)(1.0) == 0.0
    }

    /// First t ≥ 0 with 𝔤(t) = e^{−c_𝔢} (0 when 𝔤(0) is already below).
    pub fn t_ode(&self) -> Result<f64> {
        let level = (-self.c_e).exp();
        let g = |t: f64| (self.g)(t);
        if g(0.0) <= level {
            return Ok(0.0);
        }
        let mut lo = 0.0;
        let mut hi = 1.0;
        while g(hi) > level {
            lo = hi;
            hi *= 2.0;
            if hi > 1e6 {
                return Err(Error::Numerical(format!("𝔤 stays above e^(-c_e) = {level:.3e} up to t = 1e6")));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if g(mid) > level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::I;
    use crate::spectral::decompose;
    use proptest::prelude::*;

    fn example_a_inf() -> CMat {
        CMat::from_row_slice(2, 2, &[c(0.0), c(1.0), c(0.0), c(-1.0)])
    }

    fn example_mode(n: f64) -> ModeSystem {
        let a = example_a_inf();
        let d = Arc::new(decompose(&a, 1.0, None).unwrap());
        let a_rem: MatFn = Arc::new(move |t: f64| {
            let mut m = CMat::zeros(2, 2);
            m[(1, 0)] = c(-n * n * (-2.0 * t).exp()) - I * (n * (-t).exp());
            m
        });
        let t_ode = if n.abs() > 1.0 { n.abs().ln() } else { 0.0 };
        ModeSystem::new(a, a_rem, None, 1.0, t_ode, d).unwrap()
    }

    fn autonomous() -> ModeSystem {
        let a = example_a_inf();
        let d = Arc::new(decompose(&a, 1.0, None).unwrap());
        ModeSystem::autonomous(a, d).unwrap()
    }

    fn v(a: C64, b: C64) -> CVec {
        CVec::from_vec(vec![a, b])
    }

    #[test]
    fn autonomous_matches_expm() {
        let ms = autonomous();
        let v0 = v(c(0.3), C64::new(-1.0, 0.5));
        let ts: Vec<f64> = (0..=20).map(|i| i as f64).collect();
        let tr = integrate_mode(&ms, &v0, 0.0, 20.0, 1e-10, &ts).unwrap();
        for (t, vt) in tr.t.iter().zip(&tr.v) {
            let exact = ms.decomp.expm(*t).unwrap() * &v0;
            assert!(vec_norm(&(vt - &exact)) <= 10.0 * 1e-10 * vec_norm(&exact).max(1.0), "t = {t}");
        }
    }

    #[test]
    fn constant_forcing_quadrature() {
        let zero = CMat::zeros(2, 2);
        let d = Arc::new(decompose(&zero, 1.0, None).unwrap());
        let z2 = zero.clone();
        let ms = ModeSystem::new(zero, Arc::new(move |_| z2.clone()), Some(Arc::new(|_| v(c(0.0), c(1.0)))), 1.0, 0.0, d)
            .unwrap();
        let v0 = v(c(1.0), c(2.0));
        let tr = integrate_mode(&ms, &v0, 1.0, 4.0, 1e-12, &[1.0, 2.5, 4.0]).unwrap();
        for (t, vt) in tr.t.iter().zip(&tr.v) {
            let exact = v(c(1.0), c(2.0 + t - 1.0));
            assert!(vec_norm(&(vt - exact)) < 1e-11);
        }
    }

    #[test]
    fn example_mode_t_ode_and_rem() {
        let ms = example_mode(3.0);
        assert!((ms.t_ode - 3f64.ln()).abs() < 1e-15);
        let g = GaugeFunction { g: Arc::new(|t: f64| 3.0 * (-t).exp()), b_s: 1.0, c_e: 0.0, sigma: None, x: None };
        assert!((g.t_ode().unwrap() - 3f64.ln()).abs() < 1e-12);
        assert!((g.ell_dot(2.0) + 1.0).abs() < 1e-10);
        assert!(ms.c_rem.is_finite());
    }

    #[test]
    fn autonomous_data_is_graded_projection() {
        let ms = autonomous();
        let dat = extract_data(&ms, &v(c(1.0), c(0.0)), 2, 30.0, 1e-12).unwrap();
        assert!(vec_norm(&(dat.order(1) - v(c(1.0), c(0.0)))) < 1e-10);
        assert!(vec_norm(&ms.decomp.project(2, dat.order(2)).unwrap()) < 1e-10);

        let dat = extract_data(&ms, &v(c(0.0), c(1.0)), 2, 30.0, 1e-12).unwrap();
        assert!(vec_norm(&(dat.order(1) - v(c(1.0), c(0.0)))) < 1e-10);
        let p2 = ms.decomp.project(2, dat.order(2)).unwrap();
        assert!(vec_norm(&(p2 - v(c(-1.0), c(1.0)))) < 1e-10);
        assert!(vec_norm(&(&dat.aggregate - v(c(0.0), c(1.0)))) < 1e-10);
        assert!(dat.converged());
    }

    #[test]
    fn autonomous_approximants_are_free_evolutions() {
        let ms = autonomous();
        let v0 = v(c(0.4), c(-0.7));
        let dat = extract_data(&ms, &v0, 3, 30.0, 1e-12).unwrap();
        let ap = build_f_infty(&ms, &dat, 3, 0.0, 10.0, 1e-12).unwrap();
        for &t in &[0.0, 1.0, 5.5, 10.0] {
            let e = ms.decomp.expm(t).unwrap();
            let exact = &e * &v0;
            let f1 = ap.eval_order(1, t).unwrap();
            assert!(vec_norm(&(&f1 - &e * dat.order(1))) < 1e-10);
            assert!(vec_norm(&(&f1 - &e * ms.decomp.project(1, &v0).unwrap())) < 1e-10);
            for n in 2..=3 {
                assert!(vec_norm(&(ap.eval_order(n, t).unwrap() - &exact)) < 1e-10, "n = {n}, t = {t}");
            }
        }
    }

    /// Regression oracle: fit {1, e^{−t}, t e^{−t}} to the trajectory on [20, 30].
    fn regression_oracle(ms: &ModeSystem, v0: &CVec) -> (C64, C64, C64) {
        let ts: Vec<f64> = (0..=100).map(|i| 20.0 + 0.1 * i as f64).collect();
        let tr = integrate_mode(ms, v0, 0.0, 30.0, 1e-12, &ts).unwrap();
        // y1 = u + u_t → α + γ e^{−t}; y2 = −u_t → β e^{−t} + γ t e^{−t}.
        let last = tr.v.last().unwrap();
        let alpha = last[0] + last[1];
        let mut x = Vec::new();
        let mut yr = Vec::new();
        let mut yi = Vec::new();
        for (t, vt) in tr.t.iter().zip(&tr.v) {
            let y2 = -vt[1] * t.exp();
            x.push(*t);
            yr.push(y2.re);
            yi.push(y2.im);
        }
        let (gr, br, _) = linear_fit(&x, &yr);
        let (gi, bi, _) = linear_fit(&x, &yi);
        (alpha, C64::new(br, bi), C64::new(gr, gi))
    }

    #[test]
    fn example_mode_matches_regression() {
        let ms = example_mode(1.0).with_anchor(0.0);
        let v0 = v(c(1.0), c(0.0));
        let dat = extract_data(&ms, &v0, 2, 40.0, 1e-12).unwrap();
        let (alpha, beta, gamma) = regression_oracle(&ms, &v0);
        let u = dat.order(1)[0];
        assert!(dat.order(1)[1].norm() < 1e-12);
        assert!((u - alpha).norm() < 1e-8 * alpha.norm());
        let p2 = ms.decomp.project(2, dat.order(2)).unwrap();
        let b = p2[0];
        let n = 1.0;
        assert!((b + n * n * u - beta).norm() < 1e-6 * beta.norm().max(1.0), "{} vs {beta}", b + u);
        assert!((I * n * u - gamma).norm() < 1e-6 * gamma.norm());
    }

    #[test]
    fn stable_residual_matches_direct_difference() {
        let ms = example_mode(2.0).with_anchor(0.0);
        let v0 = v(c(0.5), C64::new(0.1, -0.3));
        let ex = extract(&ms, &v0, 2, 40.0, 1e-12).unwrap();
        let ap = build_f_infty(&ms, &ex.data, 2, 0.0, 8.0, 1e-12).unwrap();
        let tr = integrate_mode(&ms, &v0, 0.0, 8.0, 1e-12, &[2.0, 5.0, 8.0]).unwrap();
        for (t, vt) in tr.t.iter().zip(&tr.v) {
            for n in 1..=2 {
                let direct = vt - ap.eval_order(n, *t).unwrap();
                let stable = ex.residual(n, *t).unwrap();
                assert!(
                    vec_norm(&(&direct - &stable)) < 1e-9 * vec_norm(vt).max(1.0),
                    "n = {n}, t = {t}: {direct} vs {stable}"
                );
            }
            assert!(vec_norm(&(ex.solution(*t).unwrap() - vt)) < 1e-10);
        }
        let ts: Vec<f64> = (0..=40).map(|i| 8.0 + 0.25 * i as f64).collect();
        for (n, lo, hi) in [(1usize, -1.05, -0.85), (2, -2.2, -1.7)] {
            let rs: Vec<f64> = ts.iter().map(|&t| vec_norm(&ex.residual(n, t).unwrap())).collect();
            // Stable residuals carry relative accuracy, so no floor applies.
            let s = fit_decay(&ts, &rs, (8.0, 18.0), 1e-100).unwrap().slope().unwrap();
            assert!(s >= lo && s <= hi, "order {n} slope {s}");
        }
    }

    #[test]
    fn derivative_structure_of_approximant() {
        let ms = example_mode(1.0).with_anchor(0.0);
        let dat = extract_data(&ms, &v(c(1.0), c(0.2)), 2, 40.0, 1e-12).unwrap();
        let ap = build_f_infty(&ms, &dat, 2, 0.0, 10.0, 1e-12).unwrap();
        for &t in &[1.0, 3.0, 7.0] {
            let h = 1e-4;
            let dz = (ap.eval(t + h).unwrap()[0] - ap.eval(t - h).unwrap()[0]) / (2.0 * h);
            assert!((dz - ap.eval(t).unwrap()[1]).norm() < 1e-6);
        }
    }

    #[test]
    fn data_to_initial_roundtrip_and_identity() {
        let ms = autonomous();
        let target = v(c(0.3), C64::new(0.0, 1.0));
        let r = data_to_initial(&ms, &target, 30.0, 1e-12).unwrap();
        assert!(vec_norm(&(&r.v0 - &target)) < 1e-10);
        assert!((r.data_map.clone() - CMat::identity(2, 2)).norm() < 1e-10);

        let ms = example_mode(1.0);
        let t1 = v(c(1.0), c(-0.5));
        let t2 = v(C64::new(0.0, 0.3), c(2.0));
        let r1 = data_to_initial(&ms, &t1, 40.0, 1e-11).unwrap();
        let r2 = data_to_initial(&ms, &t2, 40.0, 1e-11).unwrap();
        let r12 = data_to_initial(&ms, &(&t1 + &t2), 40.0, 1e-11).unwrap();
        assert!(vec_norm(&(&r12.v0 - &r1.v0 - &r2.v0)) < 1e-10 * vec_norm(&r12.v0));
        let back = extract_data(&ms, &r1.v0, 2, 40.0, 1e-11).unwrap();
        assert!(vec_norm(&(back.aggregate - &t1)) < 1e-6 * vec_norm(&t1));
    }

    #[test]
    fn decay_fit_cases() {
        let ts: Vec<f64> = (0..=50).map(|i| 10.0 + 0.2 * i as f64).collect();
        let r: Vec<f64> = ts.iter().map(|t| 3.0 * (-2.0 * t).exp()).collect();
        let s = fit_decay(&ts, &r, (10.0, 20.0), 1e-20).unwrap().slope().unwrap();
        assert!((s + 2.0).abs() < 1e-6);
        let r: Vec<f64> = ts.iter().map(|t| t * (-t).exp()).collect();
        let s = fit_decay(&ts, &r, (10.0, 20.0), 1e-20).unwrap().slope().unwrap();
        assert!((-1.0..=-0.9).contains(&s));
        let z = vec![0.0; ts.len()];
        assert_eq!(fit_decay(&ts, &z, (10.0, 20.0), 1.0).unwrap(), DecayFit::BelowFloor);
    }

    #[test]
    fn f_norm_examples() {
        let zero = f_norm_a(|_| v(c(0.0), c(0.0)), 0.0, 50.0).unwrap();
        assert_eq!(zero.value, 0.0);
        let e = f_norm_a(|t| v(c(0.0), c((-t).exp())), 0.0, 50.0).unwrap();
        assert!((e.value + e.tail_bound - 1.0).abs() < 1e-8);
        let k1 = f_norm_a(|_| v(c(0.0), c(1.0)), 1.0, 50.0).unwrap();
        assert!((k1.value - 1.0).abs() < 1e-8);
        assert!(f_norm_a(|_| v(c(0.0), c(1.0)), 0.0, 50.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn extraction_is_scale_equivariant(re in -2.0..2.0f64, im in -2.0..2.0f64, a in 0.1..5.0f64) {
            let ms = example_mode(2.0);
            let v0 = v(C64::new(re, im), c(0.7));
            let h = 35.0;
            let d1 = extract_data(&ms, &v0, 2, h, 1e-10).unwrap();
            let d2 = extract_data(&ms, &(&v0 * c(a)), 2, h, 1e-10).unwrap();
            for n in 1..=2 {
                let diff = vec_norm(&(d2.order(n) - d1.order(n) * c(a)));
                prop_assert!(diff <= 1e-12 * a * vec_norm(d1.order(n)).max(1.0), "n = {}: diff {:e}", n, diff);
            }
        }

        #[test]
        fn autonomous_approximants_stabilize_past_top_block(re in -2.0..2.0f64, im in -2.0..2.0f64, t in 0.0..8.0f64) {
            let ms = autonomous();
            let v0 = v(c(re), C64::new(0.0, im));
            let dat = extract_data(&ms, &v0, 3, 30.0, 1e-12).unwrap();
            let ap = build_f_infty(&ms, &dat, 3, 0.0, 8.0, 1e-12).unwrap();
            let d = vec_norm(&(ap.eval_order(2, t).unwrap() - ap.eval_order(3, t).unwrap()));
            prop_assert!(d <= 1e-10 * vec_norm(&v0).max(1.0));
        }
    }
}
