//! Source-free Maxwell fields on Kasner backgrounds g = −dt² + Σ t^{2p_i}(dx^i)².
//!
//! In τ = −ln t and Lorenz gauge the potential ω = ω_τ dτ + ω_j dx^j is evolved through the
//! hatted components ω̂_j = e^{−(1−p_j)τ}ω_j, which form a silent system with m = 4. States
//! are ModeFields with the eight components (ω_τ, ω̂₁, ω̂₂, ω̂₃, ∂_τω_τ, ∂_τω̂₁, ∂_τω̂₂, ∂_τω̂₃).

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dop853::{self, Options};
use crate::error::{Error, Result};
use crate::fourier::{ModeField, ModeSet};
use crate::linalg::{c, CMat, CVec, C64, I};
use crate::modeode::linear_fit;
use crate::quad;
use crate::silentpde::{CoeffFn, SilentSystem, SystemSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KasnerExponents {
    pub p: [f64; 3],
}

impl KasnerExponents {
    /// Checks Σp = Σp² = 1 (1e−12), ascending order and p₃ < 1.
    pub fn new(p1: f64, p2: f64, p3: f64) -> Result<Self> {
        let p = [p1, p2, p3];
        let s1: f64 = p.iter().sum();
        let s2: f64 = p.iter().map(|x| x * x).sum();
        if (s1 - 1.0).abs() > 1e-12 || (s2 - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!("Kasner relations fail: sum {s1}, sum of squares {s2}")));
        }
        if !(p1 <= p2 && p2 <= p3) {
            return Err(Error::Invalid(format!("exponents must be ascending, got {p:?}")));
        }
        if !(p3 < 1.0) {
            return Err(Error::Invalid("flat Kasner (p3 = 1) is excluded".into()));
        }
        Ok(KasnerExponents { p })
    }

    /// 1 when p₂ = p₃ within 1e−10, else 0.
    pub fn delta(&self) -> f64 {
        if (self.p[1] - self.p[2]).abs() <= 1e-10 {
            1.0
        } else {
            0.0
        }
    }

    /// 2p₂ + 4p₃: T(γ̇, γ̇) ~ t^{−rate}.
    pub fn blowup_rate(&self) -> f64 {
        2.0 * self.p[1] + 4.0 * self.p[2]
    }

    pub fn beta_rem(&self) -> f64 {
        1.0 - self.p[2]
    }

    /// Eigenvalues of A_∞ by pair: (0, −2) for ω_τ and (−1 + p_j, −1 − p_j) for ω̂_j.
    pub fn eigen_pairs(&self) -> [(f64, f64); 4] {
        let [p1, p2, p3] = self.p;
        [(0.0, -2.0), (-1.0 + p1, -1.0 - p1), (-1.0 + p2, -1.0 - p2), (-1.0 + p3, -1.0 - p3)]
    }

    /// The eight eigenvectors of A_∞ with their eigenvalues: v_{0,+} = e₀, v_{0,−} = e₀ − 2e₄ and
    /// v_{j,±} = e_j + (−1 ± p_j)e_{j+4}.
    pub fn eigenvectors(&self) -> Vec<(f64, CVec)> {
        let mut out = Vec::with_capacity(8);
        for sign in [0, 1] {
            for (j, pair) in self.eigen_pairs().iter().enumerate() {
                let lam = if sign == 0 { pair.0 } else { pair.1 };
                let mut v = CVec::zeros(8);
                v[j] = c(1.0);
                v[j + 4] = c(lam);
                out.push((lam, v));
            }
        }
        out
    }
}

/// p = (−u, 1 + u, u(1 + u))/(1 + u + u²) for u ≥ 1.
pub fn kasner_from_u(u: f64) -> Result<KasnerExponents> {
    if !(u >= 1.0) || !u.is_finite() {
        return Err(Error::Invalid(format!("u must be finite and at least 1 (ordering), got {u}")));
    }
    let d = 1.0 + u + u * u;
    KasnerExponents::new(-u / d, (1.0 + u) / d, u * (1.0 + u) / d)
}

/// The hatted potential system in τ time.
pub fn build_maxwell_system(p: &KasnerExponents) -> Result<SilentSystem> {
    let pp = p.p;
    let diag = |v: [f64; 4]| -> CMat {
        let mut m = CMat::zeros(4, 4);
        for i in 0..4 {
            m[(i, i)] = c(v[i]);
        }
        m
    };
    let alpha = diag([2.0; 4]);
    let zeta = diag([0.0, 1.0 - pp[0] * pp[0], 1.0 - pp[1] * pp[1], 1.0 - pp[2] * pp[2]]);
    let (a2, z2) = (alpha.clone(), zeta.clone());
    let xj: Vec<CoeffFn> = (0..3)
        .map(|j| {
            let pj = pp[j];
            let f: CoeffFn = Arc::new(move |t| {
                let mut m = CMat::zeros(4, 4);
                let v = c(-2.0 * pj * (-(1.0 - pj) * t).exp());
                m[(0, j + 1)] = v;
                m[(j + 1, 0)] = v;
                m
            });
            f
        })
        .collect();
    SilentSystem::new(SystemSpec {
        d: 3,
        m: 4,
        g0l: Arc::new(|_| vec![0.0; 3]),
        gjl: Arc::new(move |t| DMatrix::from_diagonal(&nalgebra::DVector::from_fn(3, |j, _| (-2.0 * (1.0 - pp[j]) * t).exp()))),
        alpha: Arc::new(move |_| a2.clone()),
        zeta: Arc::new(move |_| z2.clone()),
        xj,
        alpha_inf: alpha,
        zeta_inf: zeta,
        eta_mn: f64::INFINITY,
        b_s: 1.0 - pp[2],
        c_e: 0.0,
        b_low: Some(1.0 - pp[0]),
        forcing: None,
        epsilon: None,
        real_coefficients: true,
    })
}

// ---------------------------------------------------------------------------------------------
// States and constraints

/// The potential at one τ.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialState {
    pub tau: f64,
    pub fields: ModeField,
}

impl PotentialState {
    pub fn new(tau: f64, fields: ModeField) -> Result<Self> {
        if fields.m != 8 || fields.d() != 3 {
            return Err(Error::Dimension(format!("a potential state needs d = 3 and 8 components, got {} and {}", fields.d(), fields.m)));
        }
        Ok(PotentialState { tau, fields })
    }

    /// From unhatted (ω_τ, ω_1, ω_2, ω_3) and their τ-derivatives.
    pub fn from_unhatted(p: &KasnerExponents, tau: f64, omega: &ModeField, domega: &ModeField) -> Result<Self> {
        if omega.m != 4 || domega.m != 4 || omega.set != domega.set {
            return Err(Error::Dimension("unhatted fields need 4 components on the same mode set".into()));
        }
        let f = ModeField::from_components(&[omega, domega])?;
        let fields = f.map_modes(8, |_, v| {
            let mut out = v.to_vec();
            for j in 1..4 {
                let q = 1.0 - p.p[j - 1];
                let e = (-q * tau).exp();
                out[j] = v[j] * e;
                out[j + 4] = (v[j + 4] - v[j] * q) * e;
            }
            out
        });
        PotentialState::new(tau, fields)
    }

    /// (ω_τ, ω_1, ω_2, ω_3, ∂_τω_τ, ∂_τω_1, ∂_τω_2, ∂_τω_3).
    pub fn unhatted(&self, p: &KasnerExponents) -> ModeField {
        let tau = self.tau;
        self.fields.map_modes(8, |_, v| unhat(p, tau, v))
    }
}

fn unhat(p: &KasnerExponents, tau: f64, v: &[C64]) -> Vec<C64> {
    let mut out = v.to_vec();
    for j in 1..4 {
        let q = 1.0 - p.p[j - 1];
        let e = (q * tau).exp();
        out[j] = v[j] * e;
        out[j + 4] = (v[j + 4] + v[j] * q) * e;
    }
    out
}

fn hat(p: &KasnerExponents, tau: f64, w: &[C64]) -> Vec<C64> {
    let mut out = w.to_vec();
    for j in 1..4 {
        let q = 1.0 - p.p[j - 1];
        let e = (-q * tau).exp();
        out[j] = w[j] * e;
        out[j + 4] = (w[j + 4] - w[j] * q) * e;
    }
    out
}

/// Enforces the Lorenz-gauge constraints at the state's τ, mode by mode:
/// ∂_τω_τ = e^{−2τ}Σ e^{2p_iτ} i n_i ω_i, and the minimal-norm correction of (∂_τω_i) onto
/// Σ e^{2p_iτ} i n_i (∂_τω_i − i n_i ω_τ) = 0.
pub fn apply_constraints(p: &KasnerExponents, state: &PotentialState) -> PotentialState {
    let tau = state.tau;
    let fields = state.fields.map_modes(8, |n, v| {
        let mut w = unhat(p, tau, v);
        let a: Vec<C64> = (0..3).map(|i| I * (n[i] as f64 * (2.0 * p.p[i] * tau).exp())).collect();
        let a2: f64 = a.iter().map(|z| z.norm_sqr()).sum();
        if a2 > 0.0 {
            let b: C64 = (0..3).map(|i| a[i] * I * (n[i] as f64) * w[0]).sum();
            let ax: C64 = (0..3).map(|i| a[i] * w[5 + i]).sum();
            let r = (ax - b) / a2;
            for i in 0..3 {
                w[5 + i] -= a[i].conj() * r;
            }
        }
        let s: C64 = (0..3).map(|i| a[i] * w[1 + i]).sum();
        w[4] = s * (-2.0 * tau).exp();
        hat(p, tau, &w)
    });
    PotentialState { tau, fields }
}

/// div ω = −e^{2τ}∂_τω_τ + Σ e^{2p_iτ}∂_iω_i and ∂_τ div ω = Σ e^{2p_iτ}∂_i(∂_τω_i − ∂_iω_τ),
/// as scalar fields.
pub fn constraint_residuals(p: &KasnerExponents, state: &PotentialState) -> (ModeField, ModeField) {
    let tau = state.tau;
    let div = state.fields.map_modes(1, |n, v| vec![div_terms(p, tau, n, v).0]);
    let ddiv = state.fields.map_modes(1, |n, v| {
        let w = unhat(p, tau, v);
        let s: C64 = (0..3)
            .map(|i| {
                let ni = n[i] as f64;
                (I * ni) * (w[5 + i] - I * ni * w[0]) * (2.0 * p.p[i] * tau).exp()
            })
            .sum();
        vec![s]
    });
    (div, ddiv)
}

/// (div ω, sum of the moduli of its terms) for one mode.
fn div_terms(p: &KasnerExponents, tau: f64, n: &[i64], v: &[C64]) -> (C64, f64) {
    let w = unhat(p, tau, v);
    let first = -w[4] * (2.0 * tau).exp();
    let mut sum = first;
    let mut scale = first.norm();
    for i in 0..3 {
        let t = (I * n[i] as f64) * w[1 + i] * (2.0 * p.p[i] * tau).exp();
        sum += t;
        scale += t.norm();
    }
    (sum, scale)
}

pub fn div_omega(p: &KasnerExponents, state: &PotentialState) -> ModeField {
    constraint_residuals(p, state).0
}

/// max over modes of |div ω(ι)| divided by the sum of the moduli of its terms: the cancellation
/// achieved relative to the size of the parts.
pub fn div_omega_relative(p: &KasnerExponents, state: &PotentialState) -> f64 {
    let set = state.fields.set;
    (0..set.len())
        .map(|i| {
            let (d, s) = div_terms(p, state.tau, &set.mode(i), state.fields.coeff(i));
            if s > 0.0 {
                d.norm() / s
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------------------------
// Faraday and stress-energy

/// F = dω in τ coordinates: F_{τi} = ∂_τω_i − ∂_iω_τ and F_{ij} = ∂_iω_j − ∂_jω_i as mode fields.
#[derive(Debug, Clone)]
pub struct Faraday {
    pub tau: f64,
    /// (F_{τ1}, F_{τ2}, F_{τ3}).
    pub tau_i: ModeField,
    /// (F_{12}, F_{13}, F_{23}).
    pub ij: ModeField,
}

const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

pub fn faraday(p: &KasnerExponents, state: &PotentialState) -> Faraday {
    let tau = state.tau;
    let tau_i = state.fields.map_modes(3, |n, v| {
        let w = unhat(p, tau, v);
        (0..3).map(|i| w[5 + i] - I * n[i] as f64 * w[0]).collect()
    });
    let ij = state.fields.map_modes(3, |n, v| {
        let w = unhat(p, tau, v);
        PAIRS.iter().map(|&(i, j)| I * n[i] as f64 * w[1 + j] - I * n[j] as f64 * w[1 + i]).collect()
    });
    Faraday { tau, tau_i, ij }
}

impl Faraday {
    /// The antisymmetric 4×4 matrix F_{μν} (index 0 = τ) of the real field at x.
    pub fn at_point(&self, x: &[f64]) -> [[f64; 4]; 4] {
        let a = self.tau_i.eval_point(x);
        let b = self.ij.eval_point(x);
        let mut f = [[0.0; 4]; 4];
        for i in 0..3 {
            f[0][i + 1] = a[i].re;
            f[i + 1][0] = -a[i].re;
        }
        for (k, &(i, j)) in PAIRS.iter().enumerate() {
            f[i + 1][j + 1] = b[k].re;
            f[j + 1][i + 1] = -b[k].re;
        }
        f
    }
}

/// Converts F from τ to t = e^{−τ} coordinates (∂_t = −e^{τ}∂_τ).
pub fn faraday_to_t(f: &[[f64; 4]; 4], tau: f64) -> [[f64; 4]; 4] {
    let mut out = *f;
    let e = tau.exp();
    for i in 1..4 {
        out[0][i] = -e * f[0][i];
        out[i][0] = -e * f[i][0];
    }
    out
}

/// Diagonal of g in t coordinates: (−1, t^{2p_i}).
pub fn metric_t(p: &KasnerExponents, t: f64) -> [f64; 4] {
    [-1.0, t.powf(2.0 * p.p[0]), t.powf(2.0 * p.p[1]), t.powf(2.0 * p.p[2])]
}

/// Diagonal of g in τ coordinates: (−e^{−2τ}, e^{−2p_iτ}).
pub fn metric_tau(p: &KasnerExponents, tau: f64) -> [f64; 4] {
    [-(-2.0 * tau).exp(), (-2.0 * p.p[0] * tau).exp(), (-2.0 * p.p[1] * tau).exp(), (-2.0 * p.p[2] * tau).exp()]
}

/// T_{αβ} = (1/4π)(F_{αγ}F_β^γ − ¼g_{αβ}F_{μν}F^{μν}) for a diagonal metric.
pub fn stress_energy(f: &[[f64; 4]; 4], g: &[f64; 4]) -> [[f64; 4]; 4] {
    let ginv: Vec<f64> = g.iter().map(|x| 1.0 / x).collect();
    let mut f2 = 0.0;
    for a in 0..4 {
        for b in 0..4 {
            f2 += f[a][b] * f[a][b] * ginv[a] * ginv[b];
        }
    }
    let mut t = [[0.0; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            let mut s = 0.0;
            for cc in 0..4 {
                s += f[a][cc] * f[b][cc] * ginv[cc];
            }
            if a == b {
                s -= 0.25 * g[a] * f2;
            }
            t[a][b] = s / (4.0 * PI);
        }
    }
    t
}

/// g^{αβ}T_{αβ}.
pub fn trace(t: &[[f64; 4]; 4], g: &[f64; 4]) -> f64 {
    (0..4).map(|a| t[a][a] / g[a]).sum()
}

// ---------------------------------------------------------------------------------------------
// Geodesics

/// A past-directed unit timelike geodesic through x0 at t0 with conserved momenta
/// c_i = g(γ̇, ∂_i).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geodesic {
    pub c: [f64; 3],
    pub x0: [f64; 3],
    pub t0: f64,
}

impl Geodesic {
    /// γ̇ in t coordinates: (−(1 + Σc_i²t^{−2p_i})^{1/2}, c_i t^{−2p_i}).
    pub fn tangent(&self, p: &KasnerExponents, t: f64) -> Result<[f64; 4]> {
        if !(t > 0.0) {
            return Err(Error::Invalid(format!("geodesic time must be positive, got {t}")));
        }
        let mut v = [0.0; 4];
        let mut s = 1.0;
        for i in 0..3 {
            let w = t.powf(-2.0 * p.p[i]);
            s += self.c[i] * self.c[i] * w;
            v[i + 1] = self.c[i] * w;
        }
        v[0] = -s.sqrt();
        Ok(v)
    }

    /// Integrand of x^i in the variable x = −ln s, scaled to avoid overflow.
    fn integrand(&self, p: &KasnerExponents, i: usize, x: f64) -> f64 {
        if self.c[i] == 0.0 {
            return 0.0;
        }
        let pm = (0..3).filter(|&j| self.c[j] != 0.0).map(|j| p.p[j]).fold(f64::NEG_INFINITY, f64::max).max(0.0);
        let mut den = (-2.0 * pm * x).exp();
        for j in 0..3 {
            den += self.c[j] * self.c[j] * (2.0 * (p.p[j] - pm) * x).exp();
        }
        self.c[i] * ((2.0 * p.p[i] - pm - 1.0) * x).exp() / den.sqrt()
    }

    /// x^i(t) = x0^i + ∫_t^{t0} c_i s^{−2p_i}(1 + Σc_j²s^{−2p_j})^{−1/2} ds.
    pub fn position(&self, p: &KasnerExponents, t: f64) -> Result<[f64; 3]> {
        if !(t > 0.0 && t <= self.t0) {
            return Err(Error::Invalid(format!("need 0 < t <= t0 = {}, got {t}", self.t0)));
        }
        let (xa, xb) = (-self.t0.ln(), -t.ln());
        let mut out = self.x0;
        for (i, o) in out.iter_mut().enumerate() {
            if self.c[i] != 0.0 {
                *o += quad::integrate(|x| self.integrand(p, i, x), xa, xb, 1e-13, 1e-15)?.value;
            }
        }
        Ok(out)
    }

    /// lim_{t→0} x(t): the integral to a cutoff where the remaining tail is below 1e−13, plus
    /// the leading term of that tail.
    pub fn endpoint(&self, p: &KasnerExponents) -> Result<[f64; 3]> {
        if self.c.iter().all(|&x| x == 0.0) {
            return Ok(self.x0);
        }
        let active: Vec<usize> = (0..3).filter(|&j| self.c[j] != 0.0).collect();
        let pm = active.iter().map(|&j| p.p[j]).fold(f64::NEG_INFINITY, f64::max);
        let xa = -self.t0.ln();
        let mut out = self.x0;
        if pm <= 0.0 {
            // The square root tends to 1; the tail of ∫ s^{−2p_i} is explicit.
            let xc = xa.max(0.0) + 40.0;
            for (i, o) in out.iter_mut().enumerate() {
                if self.c[i] != 0.0 {
                    let q = quad::integrate(|x| self.integrand(p, i, x), xa, xc, 1e-13, 1e-15)?;
                    let r = 1.0 - 2.0 * p.p[i];
                    *o += q.value + self.c[i] * (-r * xc).exp() / r;
                }
            }
            return Ok(out);
        }
        let lead: f64 = active
            .iter()
            .filter(|&&j| (p.p[j] - pm).abs() <= 1e-12)
            .map(|&j| self.c[j] * self.c[j])
            .sum::<f64>()
            .sqrt();
        for (i, o) in out.iter_mut().enumerate() {
            if self.c[i] == 0.0 {
                continue;
            }
            // Beyond the cutoff the integrand is c_i e^{−r x}/lead with r = 1 + p_m − 2p_i.
            let r = 1.0 + pm - 2.0 * p.p[i];
            let xc = xa.max(0.0) + (35.0 / r).max(35.0 / (1.0 - pm).max(1e-3)).min(380.0 / pm.max(1e-3));
            let q = quad::integrate(|x| self.integrand(p, i, x), xa, xc, 1e-13, 1e-15).map_err(|e| {
                Error::Numerical(format!("geodesic endpoint quadrature for x^{}: {e}", i + 1))
            })?;
            *o += q.value + self.c[i] / lead * (-r * xc).exp() / r;
        }
        Ok(out)
    }
}

/// Energy density and the t-coordinate stress-energy components at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergySample {
    pub t: f64,
    pub energy: f64,
    pub t_tt: f64,
    pub t_ti: [f64; 3],
    pub t_ij: [[f64; 3]; 3],
}

/// T(γ̇, γ̇) from F given in τ coordinates at the geodesic's position.
pub fn energy_sample(p: &KasnerExponents, geo: &Geodesic, f_tau: &[[f64; 4]; 4], tau: f64) -> Result<EnergySample> {
    let t = (-tau).exp();
    let ft = faraday_to_t(f_tau, tau);
    let g = metric_t(p, t);
    let tm = stress_energy(&ft, &g);
    let v = geo.tangent(p, t)?;
    let mut e = 0.0;
    for a in 0..4 {
        for b in 0..4 {
            e += tm[a][b] * v[a] * v[b];
        }
    }
    let mut t_ij = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t_ij[i][j] = tm[i + 1][j + 1];
        }
    }
    Ok(EnergySample { t, energy: e, t_tt: tm[0][0], t_ti: [tm[0][1], tm[0][2], tm[0][3]], t_ij })
}

/// Fit of ln T(γ̇, γ̇) against ln t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// T·t^{2p₂+4p₃} at the smallest sampled t.
    pub amplitude: f64,
}

#[derive(Debug, Clone)]
pub struct EnergyReport {
    pub samples: Vec<EnergySample>,
    /// `None` when some sample is not above 1e−300.
    pub fit: Option<EnergyFit>,
}

/// Energy density along the geodesic at the τ of each state.
pub fn energy_along_geodesic(p: &KasnerExponents, geo: &Geodesic, faradays: &[Faraday]) -> Result<EnergyReport> {
    let mut samples = Vec::with_capacity(faradays.len());
    for f in faradays {
        let t = (-f.tau).exp();
        let x = geo.position(p, t)?;
        samples.push(energy_sample(p, geo, &f.at_point(&x), f.tau)?);
    }
    let fit = if samples.len() >= 2 && samples.iter().all(|s| s.energy > 1e-300) {
        let x: Vec<f64> = samples.iter().map(|s| s.t.ln()).collect();
        let y: Vec<f64> = samples.iter().map(|s| s.energy.ln()).collect();
        let (slope, intercept, r2) = linear_fit(&x, &y);
        let last = samples.iter().min_by(|a, b| a.t.total_cmp(&b.t)).unwrap();
        Some(EnergyFit { slope, intercept, r2, amplitude: last.energy * last.t.powf(p.blowup_rate()) })
    } else {
        None
    };
    Ok(EnergyReport { samples, fit })
}

/// (δc₂² + c₃²)/(4π)·(4p₁²u₁² + (∂₂u₃ − ∂₃u₂ + c)²), with c the cohomology constant.
pub fn leading_energy_coefficient(u1: f64, curl: f64, c_mom: &[f64; 3], p: &KasnerExponents, cohomology_c: f64) -> f64 {
    let p1 = p.p[0];
    let w = p.delta() * c_mom[1] * c_mom[1] + c_mom[2] * c_mom[2];
    w / (4.0 * PI) * (4.0 * p1 * p1 * u1 * u1 + (curl + cohomology_c).powi(2))
}

// ---------------------------------------------------------------------------------------------
// Evolution

/// Samples of the evolved potential and the late-time limits u₁ and ∂₂u₃ − ∂₃u₂.
#[derive(Debug, Clone)]
pub struct KasnerEvolution {
    pub p: KasnerExponents,
    pub states: Vec<PotentialState>,
    /// u₁ = lim e^{(1+p₁)τ}·(v_{1,−} coordinate), as a scalar field.
    pub u1: ModeField,
    /// lim F₂₃ = ∂₂u₃ − ∂₃u₂, as a scalar field.
    pub curl: ModeField,
    pub tau_h: f64,
    /// Field norm of the change in (u₁, curl) between τ_h/2 and τ_h, and that change
    /// extrapolated to τ_h with the rate 2(1 − p₃).
    pub limit_change: f64,
    pub limit_error: f64,
    pub n_steps: usize,
}

impl KasnerEvolution {
    pub fn faradays(&self) -> Vec<Faraday> {
        self.states.iter().map(|s| faraday(&self.p, s)).collect()
    }
}

/// Column index of v_{j,±} in the frame: j for +, j + 4 for −.
fn frame_lambda(p: &KasnerExponents) -> [f64; 8] {
    let e = p.eigen_pairs();
    [e[0].0, e[1].0, e[2].0, e[3].0, e[0].1, e[1].1, e[2].1, e[3].1]
}

/// v = T W: component j and j + 4 are W_{j,+} + W_{j,−} and λ₊W_{j,+} + λ₋W_{j,−}.
fn frame_apply(lam: &[f64; 8], w: &[C64], out: &mut [C64]) {
    for j in 0..4 {
        out[j] = w[j] + w[j + 4];
        out[j + 4] = w[j] * lam[j] + w[j + 4] * lam[j + 4];
    }
}

fn frame_solve(lam: &[f64; 8], v: &[C64], out: &mut [C64]) {
    for j in 0..4 {
        let (a, b) = (lam[j], lam[j + 4]);
        out[j] = (v[j] * b - v[j + 4]) / (b - a);
        out[j + 4] = (v[j + 4] - v[j] * a) / (b - a);
    }
}

/// Integrates one mode in W = e^{−Λτ}T⁻¹v from (tau0, v0). Returns v at `samples`, and W at
/// τ_h/2 and τ_h.
fn evolve_mode(
    p: &KasnerExponents,
    n: &[i64],
    tau0: f64,
    v0: &[C64],
    samples: &[f64],
    tau_h: f64,
    tol: f64,
) -> Result<(Vec<Vec<C64>>, [Vec<C64>; 2], usize)> {
    let lam = frame_lambda(p);
    let nf: Vec<f64> = n.iter().map(|&x| x as f64).collect();
    let q: Vec<f64> = (0..3).map(|i| 1.0 - p.p[i]).collect();
    let mut w0 = vec![C64::new(0.0, 0.0); 8];
    frame_solve(&lam, v0, &mut w0);
    for (j, w) in w0.iter_mut().enumerate() {
        *w *= (-lam[j] * tau0).exp();
    }
    let zero = nf.iter().all(|&x| x == 0.0);
    let mut all: Vec<f64> = samples.to_vec();
    all.push(0.5 * (tau0 + tau_h));
    all.push(tau_h);
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.sort_by(|&a, &b| all[a].total_cmp(&all[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| all[i]).collect();
    if sorted[0] < tau0 || sorted.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Invalid("sample times must be distinct, ≥ τ0 and differ from the limit times".into()));
    }
    let mut w_at: Vec<Vec<C64>> = vec![vec![]; all.len()];
    let mut steps = 0;
    if zero {
        // A_rem vanishes for n = 0, so W is constant.
        for w in w_at.iter_mut() {
            *w = w0.clone();
        }
    } else {
        let scale = w0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let opts = Options { atol: 1e-12 * tol * scale.max(1e-300), ..Options::relative(tol) };
        let mut v = [C64::new(0.0, 0.0); 8];
        let res = dop853::integrate(
            |t, w, dw| {
                let e: Vec<f64> = lam.iter().map(|l| (l * t).exp()).collect();
                let ew: Vec<C64> = w.iter().zip(&e).map(|(a, b)| a * b).collect();
                frame_apply(&lam, &ew, &mut v);
                // A_rem v has only the lower block: −𝔤²ω − i n·X ω.
                let g2: f64 = (0..3).map(|i| nf[i] * nf[i] * (-2.0 * q[i] * t).exp()).sum();
                let x: Vec<f64> = (0..3).map(|i| -2.0 * p.p[i] * (-q[i] * t).exp() * nf[i]).collect();
                let mut r = [C64::new(0.0, 0.0); 8];
                r[4] = -v[0] * g2 - I * (x[0] * v[1] + x[1] * v[2] + x[2] * v[3]);
                for i in 0..3 {
                    r[5 + i] = -v[1 + i] * g2 - I * x[i] * v[0];
                }
                let mut y = [C64::new(0.0, 0.0); 8];
                frame_solve(&lam, &r, &mut y);
                for j in 0..8 {
                    dw[j] = y[j] / e[j];
                }
                Ok(())
            },
            tau0,
            &w0,
            *sorted.last().unwrap(),
            &opts,
            &sorted,
            |k, _, y| w_at[order[k]] = y.to_vec(),
            false,
        )?;
        steps = res.n_accepted;
    }
    let mut states = Vec::with_capacity(samples.len());
    for (k, &t) in samples.iter().enumerate() {
        let ew: Vec<C64> = w_at[k].iter().zip(&lam).map(|(a, l)| a * (l * t).exp()).collect();
        let mut v = vec![C64::new(0.0, 0.0); 8];
        frame_apply(&lam, &ew, &mut v);
        states.push(v);
    }
    let k = samples.len();
    Ok((states, [w_at[k].clone(), w_at[k + 1].clone()], steps))
}

/// (u₁, F₂₃) of one mode from W at time τ: W_{1,−} and i n₂ω₃ − i n₃ω₂ with
/// ω_i = W_{i,+} + e^{−2p_iτ}W_{i,−}.
fn limits_from_w(p: &KasnerExponents, n: &[i64], tau: f64, w: &[C64]) -> (C64, C64) {
    let om = |i: usize| w[i] + w[i + 4] * (-2.0 * p.p[i - 1] * tau).exp();
    let curl = I * n[1] as f64 * om(3) - I * n[2] as f64 * om(2);
    (w[5], curl)
}

/// Evolves `initial` to the sample times (ascending, beyond initial.tau) and to τ_h.
pub fn evolve(p: &KasnerExponents, initial: &PotentialState, samples: &[f64], tau_h: f64, tol: f64) -> Result<KasnerEvolution> {
    let f = &initial.fields;
    let set = f.set;
    let len = set.len();
    let tau0 = initial.tau;
    if !(tau_h > tau0) {
        return Err(Error::Invalid("tau_h must exceed the initial time".into()));
    }
    let hermitian = (0..len).all(|i| {
        let j = len - 1 - i;
        f.coeff(i).iter().zip(f.coeff(j)).all(|(a, b)| *a == b.conj())
    });
    let own: Vec<usize> = (0..len).filter(|&i| !hermitian || i <= len - 1 - i).collect();
    type ModeOut = (usize, Vec<Vec<C64>>, [Vec<C64>; 2], usize);
    let runs: Vec<ModeOut> = own
        .par_iter()
        .map(|&i| {
            let n = set.mode(i);
            let v0 = f.coeff(i);
            if v0.iter().all(|z| *z == C64::new(0.0, 0.0)) {
                let z = vec![C64::new(0.0, 0.0); 8];
                return Ok((i, vec![z.clone(); samples.len()], [z.clone(), z], 0));
            }
            evolve_mode(p, &n, tau0, v0, samples, tau_h, tol).map(|(s, w, st)| (i, s, w, st)).map_err(|e| e.in_mode(&n))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut states: Vec<ModeField> = vec![ModeField::zeros(set, 8); samples.len()];
    let mut u1 = ModeField::zeros(set, 1);
    let mut curl = ModeField::zeros(set, 1);
    let mut du = 0.0;
    let mut n_steps = 0;
    let tau_half = 0.5 * (tau0 + tau_h);
    for (i, s, w, st) in runs {
        n_steps += st;
        let n = set.mode(i);
        let (a_h, c_h) = limits_from_w(p, &n, tau_h, &w[1]);
        let (a_m, c_m) = limits_from_w(p, &n, tau_half, &w[0]);
        let mut put = |idx: usize, conj: bool| {
            let cj = |z: C64| if conj { z.conj() } else { z };
            for (k, v) in s.iter().enumerate() {
                let dst = states[k].coeff_mut(idx);
                for (d, z) in dst.iter_mut().zip(v) {
                    *d = cj(*z);
                }
            }
            u1.coeff_mut(idx)[0] = cj(a_h);
            curl.coeff_mut(idx)[0] = cj(c_h);
        };
        put(i, false);
        let mult = if hermitian && len - 1 - i != i {
            put(len - 1 - i, true);
            2.0
        } else {
            1.0
        };
        du += mult * ((a_h - a_m).norm_sqr() + (c_h - c_m).norm_sqr());
    }
    let limit_change = du.sqrt();
    let limit_error = limit_change * (-2.0 * p.beta_rem() * (tau_h - tau_half)).exp();
    let states = samples.iter().zip(states).map(|(&t, fl)| PotentialState { tau: t, fields: fl }).collect();
    Ok(KasnerEvolution { p: *p, states, u1, curl, tau_h, limit_change, limit_error, n_steps })
}

// ---------------------------------------------------------------------------------------------
// Data

/// Shape of generated data: the zero mode carries O(1) asymptotic data with |u₁| in
/// [u1_min, 2u1_min]; every other mode gets independent complex Gaussian entries scaled by
/// `eps`·exp(−|n|²/(2 width²)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataEnvelope {
    pub u1_min: f64,
    pub eps: f64,
    pub width: f64,
}

impl Default for DataEnvelope {
    fn default() -> Self {
        DataEnvelope { u1_min: 1.0, eps: 0.01, width: 2.0 }
    }
}

/// Real, constraint-satisfying data at τ0 with all modes |n_j| ≤ n_max populated.
pub fn generic_constrained_data(p: &KasnerExponents, n_max: usize, tau0: f64, seed: u64, env: &DataEnvelope) -> PotentialState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let set = ModeSet::new(3, n_max);
    let len = set.len();
    let mut f = ModeField::zeros(set, 8);
    let norm = (2.0 * PI).powf(1.5);
    let lam = frame_lambda(p);
    // Zero mode from its asymptotic data (the mode is autonomous).
    let zi = set.index_of(&[0, 0, 0]).unwrap();
    let mut w = [C64::new(0.0, 0.0); 8];
    w[0] = c(rng.random_range(-1.0..1.0));
    for j in 1..4 {
        w[j] = c(rng.random_range(-1.0..1.0));
        w[j + 4] = c(rng.random_range(-1.0..1.0));
    }
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    w[5] = c(sign * env.u1_min * rng.random_range(1.0..2.0));
    let ew: Vec<C64> = w.iter().zip(&lam).map(|(a, l)| a * (l * tau0).exp() * norm).collect();
    frame_apply(&lam, &ew, f.coeff_mut(zi));
    for i in 0..len {
        let j = len - 1 - i;
        if j <= i {
            continue;
        }
        let n = set.mode(i);
        let n2: f64 = n.iter().map(|&x| (x * x) as f64).sum();
        let a = env.eps * (-n2 / (2.0 * env.width * env.width)).exp() * norm / 2f64.sqrt();
        let coeff = f.coeff_mut(i);
        for (k, z) in coeff.iter_mut().enumerate() {
            if k == 4 {
                continue;
            }
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *z = C64::new(re, im) * a;
        }
    }
    let state = apply_constraints(p, &PotentialState { tau: tau0, fields: f });
    let mut fields = state.fields;
    for i in 0..len {
        let j = len - 1 - i;
        if j < i {
            let v: Vec<C64> = fields.coeff(j).iter().map(|z| z.conj()).collect();
            fields.coeff_mut(i).copy_from_slice(&v);
        }
    }
    PotentialState { tau: tau0, fields }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::vec_norm;
    use crate::modeode;
    use crate::silentpde::{check_conditions, default_check_modes, default_check_times, ConditionOptions};

    fn p27() -> KasnerExponents {
        kasner_from_u(2.0).unwrap()
    }

    #[test]
    fn exponents_from_u() {
        let p = p27();
        for (a, b) in p.p.iter().zip([-2.0 / 7.0, 3.0 / 7.0, 6.0 / 7.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        let q = kasner_from_u(1.0).unwrap();
        for (a, b) in q.p.iter().zip([-1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(q.delta(), 1.0);
        assert_eq!(p.delta(), 0.0);
        assert!(kasner_from_u(1e6).unwrap().p[2] < 1.0);
        assert!(kasner_from_u(0.5).is_err());
        assert!(KasnerExponents::new(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn maxwell_system_spectrum_and_conditions() {
        let p = p27();
        let sys = build_maxwell_system(&p).unwrap();
        let mut got: Vec<f64> = sys.decomp.eigenvalues.iter().map(|z| z.re).collect();
        got.sort_by(|a, b| a.total_cmp(b));
        let mut want: Vec<f64> = vec![0.0, -2.0, -5.0 / 7.0, -9.0 / 7.0, -4.0 / 7.0, -10.0 / 7.0, -1.0 / 7.0, -13.0 / 7.0];
        want.sort_by(|a, b| a.total_cmp(b));
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        for (lam, v) in p.eigenvectors() {
            assert!(vec_norm(&(&sys.a_inf * &v - &v * c(lam))) < 1e-14);
        }
        let rep = check_conditions(&sys, &default_check_modes(3, 4), &default_check_times(), &ConditionOptions::default());
        assert!(rep.passed(), "{rep:?}");
        assert!((sys.beta_rem() - 1.0 / 7.0).abs() < 1e-15);
        // p₂ = p₃ gives repeated but semisimple eigenvalues.
        let q = kasner_from_u(1.0).unwrap();
        assert!(build_maxwell_system(&q).is_ok());
    }

    #[test]
    fn constraints_single_mode_and_projection() {
        let p = p27();
        let set = ModeSet::new(3, 1);
        let a = C64::new(0.7, -0.2);
        let mut om = ModeField::zeros(set, 4);
        om.set_mode(&[1, 0, 0], &[c(0.0), a, c(0.0), c(0.0)]).unwrap();
        let dom = ModeField::zeros(set, 4);
        let st = PotentialState::from_unhatted(&p, 0.0, &om, &dom).unwrap();
        let out = apply_constraints(&p, &st);
        let w = out.unhatted(&p);
        assert!((w.get(&[1, 0, 0]).unwrap()[4] - I * a).norm() < 1e-15);
        // Random state: both residuals vanish after projection.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut f = ModeField::zeros(set, 8);
        for z in (0..set.len()).flat_map(|i| (0..8).map(move |k| (i, k))) {
            f.coeff_mut(z.0)[z.1] = C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        }
        for tau in [0.0, 1.5] {
            let st = apply_constraints(&p, &PotentialState { tau, fields: f.clone() });
            let (d, dd) = constraint_residuals(&p, &st);
            let scale = f.data().iter().map(|z| z.norm()).fold(0.0, f64::max) * (2.0 * tau).exp();
            assert!(d.data().iter().chain(dd.data()).all(|z| z.norm() <= 1e-12 * scale));
        }
        // Constant state with zero derivatives is unchanged.
        let mut k = ModeField::zeros(set, 8);
        k.set_mode(&[0, 0, 0], &[c(1.0), c(2.0), c(-1.0), c(0.5), c(0.0), c(0.0), c(0.0), c(0.0)]).unwrap();
        let st = PotentialState { tau: 0.0, fields: k.clone() };
        assert_eq!(apply_constraints(&p, &st).fields, k);
    }

    #[test]
    fn divergence_hand_value() {
        let p = p27();
        let set = ModeSet::new(3, 1);
        let mut f = ModeField::zeros(set, 8);
        // ω₂ = 1, ∂_τω_τ = 0.5 on mode (0, 1, 0) at τ = 1.
        let tau = 1.0f64;
        let mut w = vec![c(0.0); 8];
        w[2] = c(1.0);
        w[4] = c(0.5);
        f.set_mode(&[0, 1, 0], &hat(&p, tau, &w)).unwrap();
        let d = div_omega(&p, &PotentialState { tau, fields: f });
        let want = -0.5 * (2.0 * tau).exp() * c(1.0) + I * (2.0 * p.p[1] * tau).exp();
        assert!((d.get(&[0, 1, 0]).unwrap()[0] - want).norm() < 1e-13);
        let z = div_omega(&p, &PotentialState { tau, fields: ModeField::zeros(set, 8) });
        assert!(z.data().iter().all(|x| x.norm() == 0.0));
    }

    #[test]
    fn pure_gauge_has_no_field_strength() {
        let p = p27();
        let set = ModeSet::new(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut om = ModeField::zeros(set, 4);
        let mut dom = ModeField::zeros(set, 4);
        for i in 0..set.len() {
            let n = set.mode(i);
            let u = C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            let ut = C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            let utt = C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            // ω = du: ω_τ = u_τ, ω_j = i n_j u; ∂_τω_τ = u_ττ, ∂_τω_j = i n_j u_τ.
            let v: Vec<C64> = vec![ut, I * n[0] as f64 * u, I * n[1] as f64 * u, I * n[2] as f64 * u];
            let dv: Vec<C64> = vec![utt, I * n[0] as f64 * ut, I * n[1] as f64 * ut, I * n[2] as f64 * ut];
            om.coeff_mut(i).copy_from_slice(&v);
            dom.coeff_mut(i).copy_from_slice(&dv);
        }
        let st = PotentialState::from_unhatted(&p, 0.8, &om, &dom).unwrap();
        let f = faraday(&p, &st);
        assert!(f.tau_i.data().iter().chain(f.ij.data()).all(|z| z.norm() < 1e-10));
    }

    #[test]
    fn single_mode_field_strength() {
        let p = p27();
        let set = ModeSet::new(3, 1);
        let mut om = ModeField::zeros(set, 4);
        om.set_mode(&[0, 1, 0], &[c(0.0), c(1.0), c(0.0), c(0.0)]).unwrap();
        let st = PotentialState::from_unhatted(&p, 0.0, &om, &ModeField::zeros(set, 4)).unwrap();
        let f = faraday(&p, &st);
        // F₁₂ = ∂₁ω₂ − ∂₂ω₁ = −i ω₁ on this mode.
        assert!((f.ij.get(&[0, 1, 0]).unwrap()[0] + I).norm() < 1e-15);
        let x = [0.3, 1.1, -0.4];
        let m = f.at_point(&x);
        let want = (1.1f64).sin() / (2.0 * PI).powf(1.5);
        assert!((m[1][2] - want).abs() < 1e-14);
        assert_eq!(m[2][1], -m[1][2]);
    }

    /// Direct contraction with a full inverse metric.
    fn oracle_stress(f: &[[f64; 4]; 4], g: &[f64; 4]) -> [[f64; 4]; 4] {
        let gm = DMatrix::from_fn(4, 4, |a, b| if a == b { g[a] } else { 0.0 });
        let gi = gm.clone().try_inverse().unwrap();
        let fm = DMatrix::from_fn(4, 4, |a, b| f[a][b]);
        let fup = &gi * &fm * &gi;
        let f2: f64 = fm.component_mul(&fup).sum();
        let mixed = &fm * &gi * fm.transpose();
        let mut t = [[0.0; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                t[a][b] = (mixed[(a, b)] - 0.25 * gm[(a, b)] * f2) / (4.0 * PI);
            }
        }
        t
    }

    #[test]
    fn stress_energy_against_oracle_and_trace() {
        let p = p27();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let mut f = [[0.0; 4]; 4];
            for a in 0..4 {
                for b in a + 1..4 {
                    let v: f64 = rng.sample(StandardNormal);
                    f[a][b] = v;
                    f[b][a] = -v;
                }
            }
            let tau: f64 = rng.random_range(0.0..8.0);
            let g = metric_tau(&p, tau);
            let t = stress_energy(&f, &g);
            let o = oracle_stress(&f, &g);
            let scale = t.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max);
            for a in 0..4 {
                for b in 0..4 {
                    assert!((t[a][b] - o[a][b]).abs() <= 1e-12 * scale);
                }
            }
            let tr_scale: f64 = (0..4).map(|a| (t[a][a] / g[a]).abs()).sum();
            assert!(trace(&t, &g).abs() <= 1e-10 * tr_scale);
        }
        let zero = stress_energy(&[[0.0; 4]; 4], &metric_t(&p, 0.5));
        assert!(zero.iter().flatten().all(|&x| x == 0.0));
        // Pure F₂₃ = k: T_tt = k²t^{−2(p₂+p₃)}/(8π).
        let (k, t) = (1.7, 0.3f64);
        let mut f = [[0.0; 4]; 4];
        f[2][3] = k;
        f[3][2] = -k;
        let tm = stress_energy(&f, &metric_t(&p, t));
        assert!((tm[0][0] - k * k * t.powf(-2.0 * (p.p[1] + p.p[2])) / (8.0 * PI)).abs() < 1e-12 * tm[0][0]);
    }

    #[test]
    fn tangent_is_unit_timelike() {
        let p = p27();
        let geo = Geodesic { c: [0.0, 0.0, 1.0], x0: [0.0; 3], t0: 1.0 };
        let v = geo.tangent(&p, 1.0).unwrap();
        assert!((v[0] + 2f64.sqrt()).abs() < 1e-15 && v[1] == 0.0 && v[2] == 0.0 && (v[3] - 1.0).abs() < 1e-15);
        let still = Geodesic { c: [0.0; 3], ..geo };
        assert_eq!(still.tangent(&p, 0.3).unwrap(), [-1.0, 0.0, 0.0, 0.0]);
        let g = Geodesic { c: [0.5, -1.2, 0.8], ..geo };
        for t in [1.0, 0.1, 0.01] {
            let v = g.tangent(&p, t).unwrap();
            let m = metric_t(&p, t);
            let n: f64 = (0..4).map(|a| m[a] * v[a] * v[a]).sum();
            assert!((n + 1.0).abs() < 1e-12 * v[0] * v[0]);
        }
        assert!(g.tangent(&p, 0.0).is_err());
    }

    /// Simpson's rule on s = w⁷, which removes the s^{−6/7} endpoint singularity.
    fn simpson_endpoint(geo: &Geodesic, p: &KasnerExponents, i: usize) -> f64 {
        let n = 1_000_000;
        let h = 1.0 / n as f64;
        let f = |w: f64| {
            if w == 0.0 {
                // Limit of 7w⁶ s^{−2p_i}/√(1+Σc²s^{−2p}) with only c₃ ≠ 0 and i = 3.
                return 7.0 * geo.c[i] / geo.c[2].abs();
            }
            let s = w.powi(7);
            let den: f64 = 1.0 + (0..3).map(|j| geo.c[j] * geo.c[j] * s.powf(-2.0 * p.p[j])).sum::<f64>();
            7.0 * w.powi(6) * geo.c[i] * s.powf(-2.0 * p.p[i]) / den.sqrt()
        };
        let mut acc = f(0.0) + f(1.0);
        for k in 1..n {
            acc += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn geodesic_endpoint_matches_simpson() {
        let p = p27();
        let geo = Geodesic { c: [0.0, 0.0, 1.0], x0: [0.1, 0.2, 0.3], t0: 1.0 };
        let e = geo.endpoint(&p).unwrap();
        let s = simpson_endpoint(&geo, &p, 2);
        assert!((e[2] - 0.3 - s).abs() < 1e-8, "{} vs {}", e[2] - 0.3, s);
        assert_eq!(e[0], 0.1);
        let still = Geodesic { c: [0.0; 3], ..geo };
        assert_eq!(still.endpoint(&p).unwrap(), still.x0);
        assert_eq!(still.position(&p, 0.01).unwrap(), still.x0);
    }

    #[test]
    fn geodesic_drift_respects_causal_bound() {
        let p = p27();
        let geo = Geodesic { c: [0.7, -1.5, 0.4], x0: [0.0; 3], t0: 1.0 };
        let end = geo.endpoint(&p).unwrap();
        for t in [0.5, 0.1, 1e-3, 1e-6] {
            let a = geo.position(&p, t).unwrap();
            let b = geo.position(&p, t / 2.0).unwrap();
            for i in 0..3 {
                let bound = t.powf(1.0 - p.p[i]) / (1.0 - p.p[i]);
                assert!((a[i] - b[i]).abs() <= bound);
                assert!((a[i] - end[i]).abs() <= bound * 1.0000001);
            }
        }
        let late = geo.position(&p, 1e-200).unwrap();
        for i in 0..3 {
            assert!((late[i] - end[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn leading_coefficient_values() {
        let p = p27();
        assert_eq!(leading_energy_coefficient(0.0, 0.0, &[1.0, 1.0, 1.0], &p, 0.0), 0.0);
        let v = leading_energy_coefficient(1.0, 0.0, &[0.0, 0.0, 1.0], &p, 0.0);
        assert!((v - 4.0 / (49.0 * PI)).abs() < 1e-15);
        let a = leading_energy_coefficient(0.0, 0.5, &[0.0, 0.0, 1.0], &p, 0.25);
        let b = leading_energy_coefficient(0.0, 0.75, &[0.0, 0.0, 1.0], &p, 0.0);
        assert!((a - b).abs() < 1e-15);
        // δ = 1 only when p₂ = p₃.
        let q = kasner_from_u(1.0).unwrap();
        let w = leading_energy_coefficient(1.0, 0.0, &[0.0, 1.0, 0.0], &q, 0.0);
        assert!((w - 1.0 / (9.0 * PI)).abs() < 1e-15);
        assert_eq!(leading_energy_coefficient(1.0, 0.0, &[0.0, 1.0, 0.0], &p, 0.0), 0.0);
    }

    #[test]
    fn frame_roundtrip() {
        let p = p27();
        let lam = frame_lambda(&p);
        let v: Vec<C64> = (0..8).map(|k| C64::new(k as f64 - 3.0, 0.5 * k as f64)).collect();
        let mut w = vec![c(0.0); 8];
        let mut back = vec![c(0.0); 8];
        frame_solve(&lam, &v, &mut w);
        frame_apply(&lam, &w, &mut back);
        for (a, b) in v.iter().zip(&back) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn evolution_matches_generic_mode_solver() {
        let p = p27();
        let sys = build_maxwell_system(&p).unwrap();
        let st = generic_constrained_data(&p, 2, 0.0, 5, &DataEnvelope { eps: 0.3, ..Default::default() });
        let samples = [1.0, 4.0, 9.0];
        let ev = evolve(&p, &st, &samples, 30.0, 1e-11).unwrap();
        for n in [[1i64, -2, 0], [0, 0, 0], [-1, 1, 2]] {
            let (ms, _) = sys.mode_system(&n).unwrap();
            let v0 = CVec::from_column_slice(st.fields.get(&n).unwrap());
            let tr = modeode::integrate_mode(&ms, &v0, 0.0, 9.0, 1e-11, &samples).unwrap();
            for (k, v) in tr.v.iter().enumerate() {
                let w = CVec::from_column_slice(ev.states[k].fields.get(&n).unwrap());
                assert!(vec_norm(&(&w - v)) <= 1e-8 * vec_norm(&v0), "mode {n:?} sample {k}");
            }
        }
    }

    #[test]
    fn u1_matches_direct_limit() {
        // Oracle: the generic mode solver in the original frame, projected onto v_{1,−} at τ = 80.
        let p = p27();
        let sys = build_maxwell_system(&p).unwrap();
        let n = [1i64, 0, 1];
        let set = ModeSet::new(3, 1);
        let mut f = ModeField::zeros(set, 8);
        let v: Vec<C64> = (0..8).map(|k| C64::new(0.3 * k as f64 - 1.0, 0.2)).collect();
        f.set_mode(&n, &v).unwrap();
        let st = apply_constraints(&p, &PotentialState { tau: 0.0, fields: f });
        let ev = evolve(&p, &st, &[1.0], 90.0, 1e-11).unwrap();
        let (ms, _) = sys.mode_system(&n).unwrap();
        let v0 = CVec::from_column_slice(st.fields.get(&n).unwrap());
        let tr = modeode::integrate_mode(&ms, &v0, 0.0, 80.0, 1e-11, &[80.0]).unwrap();
        let (p1, y) = (p.p[0], &tr.v[0]);
        let direct = ((-1.0 + p1) * y[1] - y[5]) / (2.0 * p1) * (80.0 * (1.0 + p1)).exp();
        let got = ev.u1.get(&n).unwrap()[0];
        assert!((got - direct).norm() < 1e-8 * vec_norm(&v0), "{got} vs {direct}");
        assert!(ev.limit_error < 1e-8 * vec_norm(&v0));
    }

    #[test]
    fn generated_data_is_real_and_constrained() {
        let p = p27();
        let st = generic_constrained_data(&p, 3, 0.0, 11, &DataEnvelope::default());
        let len = st.fields.set.len();
        for i in 0..len {
            let j = len - 1 - i;
            for (a, b) in st.fields.coeff(i).iter().zip(st.fields.coeff(j)) {
                assert_eq!(*a, b.conj());
            }
        }
        let (d, dd) = constraint_residuals(&p, &st);
        assert!(d.data().iter().chain(dd.data()).all(|z| z.norm() < 1e-12));
        let again = generic_constrained_data(&p, 3, 0.0, 11, &DataEnvelope::default());
        assert_eq!(st, again);
        // The zero mode's u₁ has the requested size.
        let ev = evolve(&p, &st, &[1.0], 20.0, 1e-10).unwrap();
        let u = ev.u1.get(&[0, 0, 0]).unwrap()[0] / (2.0 * PI).powf(1.5);
        assert!(u.re.abs() >= 1.0 && u.re.abs() <= 2.0 && u.im == 0.0);
    }
}
