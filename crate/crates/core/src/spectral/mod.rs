//! Eigenstructure of the limiting matrix and its graded generalized eigenspace decomposition.

mod pade;

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{c, cond2, frobenius, inverse, CMat, CVec, C64, I};

pub use pade::pade_expm;

/// Snap tolerance for grading eigenvalues by real part.
pub const SNAP_TOL: f64 = 1e-10;
/// Eigenvector matrices worse conditioned than this are treated as defective.
pub const DEFECTIVE_COND: f64 = 1e8;

/// A user-supplied Jordan chain: `vectors[0]` is an eigenvector and
/// `(A - λ) vectors[j + 1] = vectors[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JordanChain {
    pub eigenvalue: C64,
    pub vectors: Vec<CVec>,
}

#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub kappa_max: f64,
    pub kappa_min: f64,
    pub beta: f64,
    pub n_blocks: usize,
    /// k_1..k_N; zero-sized blocks are allowed.
    pub block_sizes: Vec<usize>,
    /// T_A, columns grouped by block.
    pub transform: CMat,
    pub inverse_transform: CMat,
    /// Re(T_A⁻¹ A T_A) − κ₁ I.
    pub j_a: DMatrix<f64>,
    /// Imaginary parts of the diagonal of T_A⁻¹ A T_A.
    pub a_ji: DVector<f64>,
    pub epsilon: f64,
    /// Eigenvalue attached to each column of T_A.
    pub eigenvalues: Vec<C64>,
    /// Block index (1-based) of each column.
    pub column_block: Vec<usize>,
    /// Jordan chains as (first column, length).
    pub chains: Vec<(usize, usize)>,
    /// Condition number of the unscaled eigenvector matrix.
    pub condition: f64,
}

/// Block index n (1-based) with Re λ ∈ (κ₁ − nβ, κ₁ − (n−1)β], after snapping the
/// level (κ₁ − Re λ)/β to an integer when it lies within [`SNAP_TOL`].
pub fn block_index(kappa1: f64, re: f64, beta: f64) -> usize {
    let mut r = (kappa1 - re) / beta;
    if (r - r.round()).abs() <= SNAP_TOL {
        r = r.round();
    }
    r.max(0.0).floor() as usize + 1
}

/// Smallest N with κ_max − κ_min < N β.
pub fn n_blocks_for(kappa_max: f64, kappa_min: f64, beta: f64) -> usize {
    block_index(kappa_max, kappa_min, beta)
}

fn check_square(a: &CMat) -> Result<()> {
    if a.nrows() == 0 || a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!("{}x{} is not a nonempty square matrix", a.nrows(), a.ncols())));
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Invalid("matrix has non-finite entries".into()));
    }
    Ok(())
}

/// Eigenpairs through the complex Schur form and triangular back-substitution.
/// Eigenvectors are scaled so that their first largest-modulus entry equals 1.
fn eigenpairs(a: &CMat) -> (Vec<C64>, CMat) {
    let k = a.nrows();
    let (q, t) = nalgebra::Schur::new(a.clone()).unpack();
    let scale = frobenius(a).max(1.0);
    let mut vecs = CMat::zeros(k, k);
    let mut vals = Vec::with_capacity(k);
    for i in 0..k {
        let lam = t[(i, i)];
        vals.push(lam);
        let mut y = CVec::zeros(k);
        y[i] = c(1.0);
        for j in (0..i).rev() {
            let mut s = C64::new(0.0, 0.0);
            for l in (j + 1)..=i {
                s += t[(j, l)] * y[l];
            }
            let d = t[(j, j)] - lam;
            if d.norm() <= 1e-13 * scale {
                // Repeated eigenvalue: a nonzero numerator means a missing eigenvector.
                y[j] = if s.norm() <= 1e-11 * scale { c(0.0) } else { c(f64::INFINITY) };
            } else {
                y[j] = -s / d;
            }
        }
        let x = &q * y;
        let maxmod = x.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let pivot = x
            .iter()
            .find(|z| z.norm() >= maxmod * (1.0 - 1e-12))
            .cloned()
            .unwrap_or(c(1.0));
        // Exact structural zeros are restored so block-structured systems stay decoupled.
        let x = (x / pivot).map(|z| if z.norm() < 1e-14 { c(0.0) } else { z });
        vecs.set_column(i, &x);
    }
    (vals, vecs)
}

impl SpectralDecomposition {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Columns of T_A spanning E^n.
    pub fn block_range(&self, n: usize) -> Range<usize> {
        let start: usize = self.block_sizes[..n - 1].iter().sum();
        start..start + self.block_sizes[n - 1]
    }

    /// T_A⁻¹ A T_A = A_{J,i} + J_A + κ₁ I.
    pub fn a_j(&self) -> CMat {
        let k = self.k();
        let mut m = self.j_a.map(c);
        for i in 0..k {
            m[(i, i)] += C64::new(self.kappa_max, self.a_ji[i]);
        }
        m
    }

    /// Basis of E^n (columns).
    pub fn basis(&self, n: usize) -> Result<CMat> {
        self.check_block(n)?;
        let r = self.block_range(n);
        Ok(self.transform.columns(r.start, r.len()).into_owned())
    }

    fn check_block(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.n_blocks {
            return Err(Error::IndexOutOfRange { index: n, max: self.n_blocks });
        }
        Ok(())
    }

    pub fn project(&self, n: usize, v: &CVec) -> Result<CVec> {
        self.check_block(n)?;
        if v.len() != self.k() {
            return Err(Error::Dimension(format!("vector of length {} for k = {}", v.len(), self.k())));
        }
        let mut y = &self.inverse_transform * v;
        let r = self.block_range(n);
        for (i, yi) in y.iter_mut().enumerate() {
            if !r.contains(&i) {
                *yi = c(0.0);
            }
        }
        Ok(&self.transform * y)
    }

    /// π_1 + … + π_n.
    pub fn project_upto(&self, n: usize, v: &CVec) -> CVec {
        let mut y = &self.inverse_transform * v;
        let end: usize = self.block_sizes[..n.min(self.n_blocks)].iter().sum();
        for yi in y.iter_mut().skip(end) {
            *yi = c(0.0);
        }
        &self.transform * y
    }

    /// R_A(t) = exp(−A_{J,i} t).
    pub fn r_a(&self, t: f64) -> CMat {
        CMat::from_diagonal(&self.a_ji.map(|w| (-I * w * t).exp()))
    }

    /// exp(A_J t) in the decomposition coordinates (block diagonal).
    pub fn exp_a_j(&self, t: f64) -> CMat {
        let k = self.k();
        let mut m = CMat::zeros(k, k);
        for &(start, len) in &self.chains {
            let e = (self.eigenvalues[start] * t).exp();
            let mut coef = c(1.0);
            for p in 0..len {
                if p > 0 {
                    coef *= c(self.epsilon * t / p as f64);
                }
                for i in 0..len - p {
                    m[(start + i, start + i + p)] = e * coef;
                }
            }
        }
        m
    }

    /// e^{At} = e^{κ₁t} T_A R_A(t)⁻¹ e^{J_A t} T_A⁻¹.
    pub fn expm(&self, t: f64) -> Result<CMat> {
        let top = self.eigenvalues.iter().map(|l| l.re * t).fold(f64::NEG_INFINITY, f64::max);
        if top > 700.0 {
            return Err(Error::Range(top));
        }
        Ok(&self.transform * self.exp_a_j(t) * &self.inverse_transform)
    }
}

/// Decompose A into the β-graded blocks E^1 ⊕ … ⊕ E^N. `eps` defaults to
/// min(0.5, μ/2), μ the smallest |Re λ − κ₁| among nonzero levels; it only enters when
/// Jordan chains are present.
pub fn decompose(a: &CMat, beta: f64, eps: Option<f64>) -> Result<SpectralDecomposition> {
    check_square(a)?;
    check_beta_eps(beta, eps)?;
    let (vals, vecs) = eigenpairs(a);
    let cond = cond2(&vecs);
    if !cond.is_finite() || cond > DEFECTIVE_COND {
        return Err(Error::Defective { cond });
    }
    let chains: Vec<JordanChain> = (0..vals.len())
        .map(|i| JordanChain { eigenvalue: vals[i], vectors: vec![vecs.column(i).into_owned()] })
        .collect();
    assemble(a, beta, eps, chains, cond)
}

/// Decompose with an explicit Jordan structure.
pub fn decompose_with_jordan(
    a: &CMat,
    beta: f64,
    eps: Option<f64>,
    chains: Vec<JordanChain>,
) -> Result<SpectralDecomposition> {
    check_square(a)?;
    check_beta_eps(beta, eps)?;
    let k = a.nrows();
    let total: usize = chains.iter().map(|ch| ch.vectors.len()).sum();
    if total != k || chains.iter().any(|ch| ch.vectors.is_empty()) {
        return Err(Error::Invalid(format!("Jordan chains supply {total} vectors for k = {k}")));
    }
    let scale = frobenius(a).max(1.0);
    for ch in &chains {
        for (j, v) in ch.vectors.iter().enumerate() {
            if v.len() != k {
                return Err(Error::Dimension("Jordan vector length".into()));
            }
            let mut r = a * v - v * ch.eigenvalue;
            if j > 0 {
                r -= &ch.vectors[j - 1];
            }
            if r.norm() > 1e-8 * scale * v.norm().max(1.0) {
                return Err(Error::Invalid(format!(
                    "Jordan chain for {} fails (A - λ)v_{} = v_{}",
                    ch.eigenvalue,
                    j + 1,
                    j
                )));
            }
        }
    }
    let mut t = CMat::zeros(k, k);
    let mut col = 0;
    for ch in &chains {
        for v in &ch.vectors {
            t.set_column(col, v);
            col += 1;
        }
    }
    let cond = cond2(&t);
    if !cond.is_finite() {
        return Err(Error::Invalid("Jordan vectors are linearly dependent".into()));
    }
    assemble(a, beta, eps, chains, cond)
}

fn check_beta_eps(beta: f64, eps: Option<f64>) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Invalid(format!("beta must be positive, got {beta}")));
    }
    if let Some(e) = eps {
        if !(e > 0.0 && e <= 1.0) {
            return Err(Error::Invalid(format!("eps must lie in (0, 1], got {e}")));
        }
    }
    Ok(())
}

fn assemble(
    a: &CMat,
    beta: f64,
    eps: Option<f64>,
    mut chains: Vec<JordanChain>,
    cond: f64,
) -> Result<SpectralDecomposition> {
    let k = a.nrows();
    let kappa_max = chains.iter().map(|ch| ch.eigenvalue.re).fold(f64::NEG_INFINITY, f64::max);
    let kappa_min = chains.iter().map(|ch| ch.eigenvalue.re).fold(f64::INFINITY, f64::min);
    let n_blocks = n_blocks_for(kappa_max, kappa_min, beta);

    // Order: block index, then descending real part, then ascending imaginary part.
    chains.sort_by(|x, y| {
        let bx = block_index(kappa_max, x.eigenvalue.re, beta);
        let by = block_index(kappa_max, y.eigenvalue.re, beta);
        bx.cmp(&by)
            .then(y.eigenvalue.re.total_cmp(&x.eigenvalue.re))
            .then(x.eigenvalue.im.total_cmp(&y.eigenvalue.im))
    });

    let epsilon = eps.unwrap_or_else(|| {
        let mu = chains
            .iter()
            .map(|ch| kappa_max - ch.eigenvalue.re)
            .filter(|&d| d > SNAP_TOL)
            .fold(f64::INFINITY, f64::min);
        if mu.is_finite() {
            (mu / 2.0).min(0.5)
        } else {
            0.5
        }
    });

    let mut t = CMat::zeros(k, k);
    let mut eigenvalues = Vec::with_capacity(k);
    let mut column_block = Vec::with_capacity(k);
    let mut chain_pos = Vec::with_capacity(chains.len());
    let mut block_sizes = vec![0usize; n_blocks];
    let mut col = 0;
    for ch in &chains {
        let b = block_index(kappa_max, ch.eigenvalue.re, beta);
        chain_pos.push((col, ch.vectors.len()));
        for (j, v) in ch.vectors.iter().enumerate() {
            // T_A = T D with D = diag(1, ε, ε², …) along each chain.
            t.set_column(col, &(v * c(epsilon.powi(j as i32))));
            eigenvalues.push(ch.eigenvalue);
            column_block.push(b);
            block_sizes[b - 1] += 1;
            col += 1;
        }
    }
    let tinv = inverse(&t)?;

    let mut j_a = DMatrix::zeros(k, k);
    let mut a_ji = DVector::zeros(k);
    for &(start, len) in &chain_pos {
        for i in 0..len {
            let lam = eigenvalues[start + i];
            j_a[(start + i, start + i)] = lam.re - kappa_max;
            a_ji[start + i] = lam.im;
            if i + 1 < len {
                j_a[(start + i, start + i + 1)] = epsilon;
            }
        }
    }

    let d = SpectralDecomposition {
        kappa_max,
        kappa_min,
        beta,
        n_blocks,
        block_sizes,
        transform: t,
        inverse_transform: tinv,
        j_a,
        a_ji,
        epsilon,
        eigenvalues,
        column_block,
        chains: chain_pos,
        condition: cond,
    };

    let recon = &d.inverse_transform * a * &d.transform;
    let err = frobenius(&(recon - d.a_j())) / frobenius(a).max(f64::MIN_POSITIVE);
    if err > 1e-8 {
        return Err(Error::Numerical(format!("decomposition reconstruction error {err:.3e}")));
    }
    for n in 2..=d.n_blocks {
        let r = d.block_range(n);
        if r.is_empty() {
            continue;
        }
        let blk = d.j_a.view((r.start, r.start), (r.len(), r.len())).into_owned();
        let sym = (&blk + blk.transpose()) * 0.5;
        let top = sym.symmetric_eigenvalues().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if top >= 0.0 {
            return Err(Error::Invalid(format!(
                "eps = {epsilon} leaves block {n} of J_A not negative definite"
            )));
        }
    }
    Ok(d)
}

/// exp(A t) by scaling and squaring. Raises [`Error::Range`] when max Re(λ t) > 700.
pub fn expm(a: &CMat, t: f64) -> Result<CMat> {
    check_square(a)?;
    let (q, tri) = nalgebra::Schur::new(a.clone()).unpack();
    drop(q);
    let top = (0..a.nrows()).map(|i| tri[(i, i)].re * t).fold(f64::NEG_INFINITY, f64::max);
    if top > 700.0 {
        return Err(Error::Range(top));
    }
    pade_expm(&(a * c(t)))
}
