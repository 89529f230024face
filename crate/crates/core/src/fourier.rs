//! Fourier layer on T^d: mode indexing, transforms with the orthonormal basis
//! φ_n(x) = (2π)^{-d/2} e^{i n·x}, and Sobolev norms.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::{CVec, C64, I};

pub type ModeIndex = Vec<i64>;

/// The truncated mode set {n ∈ Z^d : |n_j| ≤ N_max}, enumerated with the first axis fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeSet {
    pub d: usize,
    pub n_max: usize,
}

impl ModeSet {
    pub fn new(d: usize, n_max: usize) -> Self {
        ModeSet { d, n_max }
    }

    fn side(&self) -> usize {
        2 * self.n_max + 1
    }

    pub fn len(&self) -> usize {
        self.side().pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn mode(&self, mut i: usize) -> ModeIndex {
        let s = self.side();
        (0..self.d)
            .map(|_| {
                let r = i % s;
                i /= s;
                r as i64 - self.n_max as i64
            })
            .collect()
    }

    pub fn index_of(&self, n: &[i64]) -> Option<usize> {
        if n.len() != self.d {
            return None;
        }
        let s = self.side();
        let mut idx = 0;
        for &nj in n.iter().rev() {
            if nj.unsigned_abs() as usize > self.n_max {
                return None;
            }
            idx = idx * s + (nj + self.n_max as i64) as usize;
        }
        Some(idx)
    }

    pub fn iter(&self) -> impl Iterator<Item = ModeIndex> + '_ {
        (0..self.len()).map(|i| self.mode(i))
    }
}

/// ⟨ξ⟩ = (1 + |ξ|²)^{1/2}.
pub fn japanese(n: &[i64]) -> f64 {
    (1.0 + n.iter().map(|&x| (x * x) as f64).sum::<f64>()).sqrt()
}

/// Mode coefficients of an m-component field.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeField {
    pub set: ModeSet,
    pub m: usize,
    data: Vec<C64>,
}

impl ModeField {
    pub fn zeros(set: ModeSet, m: usize) -> Self {
        ModeField { set, m, data: vec![C64::new(0.0, 0.0); set.len() * m] }
    }

    pub fn d(&self) -> usize {
        self.set.d
    }

    pub fn n_max(&self) -> usize {
        self.set.n_max
    }

    pub fn coeff(&self, i: usize) -> &[C64] {
        &self.data[i * self.m..(i + 1) * self.m]
    }

    pub fn coeff_mut(&mut self, i: usize) -> &mut [C64] {
        &mut self.data[i * self.m..(i + 1) * self.m]
    }

    pub fn coeff_vec(&self, i: usize) -> CVec {
        CVec::from_column_slice(self.coeff(i))
    }

    pub fn get(&self, n: &[i64]) -> Option<&[C64]> {
        self.set.index_of(n).map(|i| self.coeff(i))
    }

    pub fn set_mode(&mut self, n: &[i64], v: &[C64]) -> Result<()> {
        let i = self
            .set
            .index_of(n)
            .ok_or_else(|| Error::Invalid(format!("mode {n:?} outside the truncation")))?;
        if v.len() != self.m {
            return Err(Error::Dimension(format!("{} components for m = {}", v.len(), self.m)));
        }
        self.coeff_mut(i).copy_from_slice(v);
        Ok(())
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    /// Component `comp` of every mode as a one-component field.
    pub fn component(&self, comp: usize) -> ModeField {
        let data = (0..self.set.len()).map(|i| self.coeff(i)[comp]).collect();
        ModeField { set: self.set, m: 1, data }
    }

    pub fn from_components(parts: &[&ModeField]) -> Result<ModeField> {
        let set = parts.first().ok_or_else(|| Error::Invalid("no components".into()))?.set;
        if parts.iter().any(|p| p.set != set) {
            return Err(Error::Dimension("component mode sets differ".into()));
        }
        let m: usize = parts.iter().map(|p| p.m).sum();
        let mut out = ModeField::zeros(set, m);
        for i in 0..set.len() {
            let mut off = 0;
            for p in parts {
                out.coeff_mut(i)[off..off + p.m].copy_from_slice(p.coeff(i));
                off += p.m;
            }
        }
        Ok(out)
    }

    pub fn map_modes(&self, m_out: usize, mut f: impl FnMut(&[i64], &[C64]) -> Vec<C64>) -> ModeField {
        let mut out = ModeField::zeros(self.set, m_out);
        for i in 0..self.set.len() {
            let v = f(&self.set.mode(i), self.coeff(i));
            out.coeff_mut(i).copy_from_slice(&v);
        }
        out
    }

    pub fn axpy(&mut self, a: C64, other: &ModeField) {
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    /// Value at a point x ∈ T^d.
    pub fn eval_point(&self, x: &[f64]) -> Vec<C64> {
        let norm = (2.0 * PI).powf(-(self.set.d as f64) / 2.0);
        let mut out = vec![C64::new(0.0, 0.0); self.m];
        // Per-axis phase tables e^{i n_j x_j}.
        let side = self.set.side();
        let tables: Vec<Vec<C64>> = x
            .iter()
            .map(|&xj| (0..side).map(|r| (I * ((r as i64 - self.set.n_max as i64) as f64 * xj)).exp()).collect())
            .collect();
        for i in 0..self.set.len() {
            let mut rem = i;
            let mut ph = C64::new(norm, 0.0);
            for table in &tables {
                ph *= table[rem % side];
                rem /= side;
            }
            for (o, cf) in out.iter_mut().zip(self.coeff(i)) {
                *o += cf * ph;
            }
        }
        out
    }

    /// Mode-coefficient CSV: n_1..n_d, component, re, im.
    pub fn to_csv(&self, header_comment: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(h) = header_comment {
            let _ = writeln!(s, "# {h}");
        }
        let cols: Vec<String> = (1..=self.set.d).map(|j| format!("n{j}")).collect();
        let _ = writeln!(s, "{},component,re,im", cols.join(","));
        for i in 0..self.set.len() {
            let n = self.set.mode(i);
            let ns: Vec<String> = n.iter().map(|x| x.to_string()).collect();
            for (c, z) in self.coeff(i).iter().enumerate() {
                let _ = writeln!(s, "{},{c},{:e},{:e}", ns.join(","), z.re, z.im);
            }
        }
        s
    }

    /// Reads the format of [`ModeField::to_csv`]. Modes outside |n_j| ≤ n_max are rejected;
    /// entries not listed are zero.
    pub fn from_csv(text: &str, d: usize, n_max: usize, m: usize) -> Result<ModeField> {
        let mut f = ModeField::zeros(ModeSet::new(d, n_max), m);
        let mut header_seen = false;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen && line.starts_with('n') {
                header_seen = true;
                continue;
            }
            let bad = |what: &str| Error::Invalid(format!("mode CSV line {}: {what}", ln + 1));
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != d + 3 {
                return Err(bad(&format!("expected {} fields, found {}", d + 3, cols.len())));
            }
            let n = cols[..d].iter().map(|s| s.parse::<i64>()).collect::<std::result::Result<Vec<_>, _>>().map_err(|_| bad("malformed mode index"))?;
            let i = f.set.index_of(&n).ok_or_else(|| bad(&format!("mode {n:?} outside N_max = {n_max}")))?;
            let comp: usize = cols[d].parse().map_err(|_| bad("malformed component"))?;
            if comp >= m {
                return Err(bad(&format!("component {comp} out of range 0..{m}")));
            }
            let re: f64 = cols[d + 1].parse().map_err(|_| bad("malformed real part"))?;
            let im: f64 = cols[d + 2].parse().map_err(|_| bad("malformed imaginary part"))?;
            f.coeff_mut(i)[comp] = C64::new(re, im);
        }
        Ok(f)
    }
}

/// Samples on the uniform grid with `points` nodes per axis, x_j = 2π j / points.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub d: usize,
    pub points: usize,
    pub m: usize,
    /// Point-major, first axis fastest; `m` components per point.
    pub data: Vec<C64>,
}

impl Grid {
    pub fn from_fn(d: usize, points: usize, m: usize, f: impl Fn(&[f64]) -> Vec<C64>) -> Self {
        let total = points.pow(d as u32);
        let mut data = Vec::with_capacity(total * m);
        let h = 2.0 * PI / points as f64;
        for p in 0..total {
            let mut rem = p;
            let x: Vec<f64> = (0..d)
                .map(|_| {
                    let r = rem % points;
                    rem /= points;
                    r as f64 * h
                })
                .collect();
            let v = f(&x);
            assert_eq!(v.len(), m);
            data.extend(v);
        }
        Grid { d, points, m, data }
    }

    pub fn value(&self, p: usize) -> &[C64] {
        &self.data[p * self.m..(p + 1) * self.m]
    }

    /// Grid CSV: i_1..i_d, component, re, im.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let cols: Vec<String> = (1..=self.d).map(|j| format!("i{j}")).collect();
        let _ = writeln!(s, "{},component,re,im", cols.join(","));
        for p in 0..self.points.pow(self.d as u32) {
            let mut rem = p;
            let idx: Vec<String> = (0..self.d)
                .map(|_| {
                    let r = rem % self.points;
                    rem /= self.points;
                    r.to_string()
                })
                .collect();
            for (c, z) in self.value(p).iter().enumerate() {
                let _ = writeln!(s, "{},{c},{:e},{:e}", idx.join(","), z.re, z.im);
            }
        }
        s
    }

    pub fn from_csv(text: &str, d: usize, points: usize, m: usize) -> Result<Grid> {
        let mut data = vec![C64::new(0.0, 0.0); points.pow(d as u32) * m];
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || ln == 0 && line.starts_with('i') {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != d + 3 {
                return Err(Error::Invalid(format!("grid CSV line {}: expected {} fields", ln + 1, d + 3)));
            }
            let bad = || Error::Invalid(format!("grid CSV line {}: malformed", ln + 1));
            let mut p = 0;
            for j in (0..d).rev() {
                let ij: usize = f[j].trim().parse().map_err(|_| bad())?;
                if ij >= points {
                    return Err(bad());
                }
                p = p * points + ij;
            }
            let comp: usize = f[d].trim().parse().map_err(|_| bad())?;
            if comp >= m {
                return Err(bad());
            }
            let re: f64 = f[d + 1].trim().parse().map_err(|_| bad())?;
            let im: f64 = f[d + 2].trim().parse().map_err(|_| bad())?;
            data[p * m + comp] = C64::new(re, im);
        }
        Ok(Grid { d, points, m, data })
    }
}

/// Apply a per-axis linear map `mat` (rows_out × rows_in) along `axis` of a tensor whose
/// axis lengths are `dims` (first axis fastest) with `m` trailing components per entry.
fn apply_axis(data: &[C64], dims: &[usize], m: usize, axis: usize, mat: &[Vec<C64>]) -> (Vec<C64>, Vec<usize>) {
    let n_in = dims[axis];
    let n_out = mat.len();
    let inner: usize = dims[..axis].iter().product::<usize>() * m;
    let outer: usize = dims[axis + 1..].iter().product();
    let mut out = vec![C64::new(0.0, 0.0); inner * n_out * outer];
    for o in 0..outer {
        for r in 0..n_out {
            let row = &mat[r];
            let dst = &mut out[(o * n_out + r) * inner..(o * n_out + r + 1) * inner];
            for (q, &w) in row.iter().enumerate().take(n_in) {
                let src = &data[(o * n_in + q) * inner..(o * n_in + q + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
    let mut nd = dims.to_vec();
    nd[axis] = n_out;
    (out, nd)
}

/// Coefficients ⟨u, φ_n⟩ for |n_j| ≤ n_max by the trapezoidal rule (exact for band-limited data).
pub fn analyze(grid: &Grid, n_max: usize) -> Result<ModeField> {
    if grid.points < 2 * n_max + 1 {
        return Err(Error::Invalid(format!(
            "{} points per axis cannot resolve N_max = {n_max} (need at least {})",
            grid.points,
            2 * n_max + 1
        )));
    }
    let p = grid.points;
    let h = 2.0 * PI / p as f64;
    let w = (2.0 * PI).powf(grid.d as f64 / 2.0) / (p as f64).powi(grid.d as i32);
    let mat: Vec<Vec<C64>> = (0..=2 * n_max)
        .map(|r| {
            let n = r as f64 - n_max as f64;
            (0..p).map(|q| (-I * (n * q as f64 * h)).exp()).collect()
        })
        .collect();
    let mut data = grid.data.clone();
    let mut dims = vec![p; grid.d];
    for axis in 0..grid.d {
        let (nd, ndims) = apply_axis(&data, &dims, grid.m, axis, &mat);
        data = nd;
        dims = ndims;
    }
    for z in data.iter_mut() {
        *z *= w;
    }
    Ok(ModeField { set: ModeSet::new(grid.d, n_max), m: grid.m, data })
}

/// Values Σ_n û(n) φ_n on the uniform grid with `points` nodes per axis.
pub fn synthesize(f: &ModeField, points: usize) -> Grid {
    let d = f.set.d;
    let n_max = f.set.n_max;
    let h = 2.0 * PI / points as f64;
    let mat: Vec<Vec<C64>> = (0..points)
        .map(|q| (0..=2 * n_max).map(|r| (I * ((r as f64 - n_max as f64) * q as f64 * h)).exp()).collect())
        .collect();
    let mut data = f.data.clone();
    let mut dims = vec![2 * n_max + 1; d];
    for axis in 0..d {
        let (nd, ndims) = apply_axis(&data, &dims, f.m, axis, &mat);
        data = nd;
        dims = ndims;
    }
    let norm = (2.0 * PI).powf(-(d as f64) / 2.0);
    for z in data.iter_mut() {
        *z *= norm;
    }
    Grid { d, points, m: f.m, data }
}

/// (Σ_n ⟨n⟩^{2s} |û(n)|²)^{1/2}, summing over all components.
pub fn sobolev_norm(f: &ModeField, s: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..f.set.len() {
        let w = japanese(&f.set.mode(i)).powf(2.0 * s);
        acc += w * f.coeff(i).iter().map(|z| z.norm_sqr()).sum::<f64>();
    }
    acc.sqrt()
}
