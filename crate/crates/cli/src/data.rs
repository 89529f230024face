//! Initial data and targets from configuration.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use silentwave::fourier::{analyze, Grid, ModeField, ModeSet};
use silentwave::fourier::japanese;
use silentwave::linalg::C64;

use crate::config::{DataConfig, FieldName, Loaded, RandomSpec, Term};
use crate::error::CliError;

fn read(loaded: &Loaded, p: &std::path::Path) -> Result<String, CliError> {
    let path = loaded.resolve(p);
    std::fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Adds a·cos(n·x) + b·sin(n·x) to component `comp` of `f`, exactly in the orthonormal basis.
pub fn add_term(f: &mut ModeField, comp: usize, n: &[i64], a: f64, b: f64) -> Result<(), String> {
    let set = f.set;
    if n.len() != set.d {
        return Err(format!("mode has {} entries, the system has d = {}", n.len(), set.d));
    }
    if comp >= f.m {
        return Err(format!("component {comp} out of range 0..{}", f.m));
    }
    let neg: Vec<i64> = n.iter().map(|x| -x).collect();
    let (i, j) = match (set.index_of(n), set.index_of(&neg)) {
        (Some(i), Some(j)) => (i, j),
        _ => return Err(format!("mode {n:?} outside N_max = {}", set.n_max)),
    };
    let s = (2.0 * PI).powf(set.d as f64 / 2.0);
    if i == j {
        f.coeff_mut(i)[comp] += C64::new(a * s, 0.0);
        return Ok(());
    }
    // cos = (e⁺ + e⁻)/2, sin = (e⁺ − e⁻)/(2i).
    f.coeff_mut(i)[comp] += C64::new(a * s / 2.0, -b * s / 2.0);
    f.coeff_mut(j)[comp] += C64::new(a * s / 2.0, b * s / 2.0);
    Ok(())
}

/// Hermitian field with complex Gaussian coefficients of size amplitude·⟨n⟩^{−decay}.
pub fn random_hermitian(set: ModeSet, m: usize, spec: &RandomSpec, rng: &mut ChaCha8Rng) -> ModeField {
    let mut f = ModeField::zeros(set, m);
    for i in 0..set.len() {
        let n = set.mode(i);
        let neg: Vec<i64> = n.iter().map(|x| -x).collect();
        let j = set.index_of(&neg).expect("the mode set is symmetric");
        if j < i {
            continue;
        }
        let scale = spec.amplitude * japanese(&n).powf(-spec.decay);
        for c in 0..m {
            let re: f64 = rng.sample(StandardNormal);
            if i == j {
                f.coeff_mut(i)[c] = C64::new(scale * re, 0.0);
            } else {
                let im: f64 = rng.sample(StandardNormal);
                let z = C64::new(re, im) * (scale / 2f64.sqrt());
                f.coeff_mut(i)[c] = z;
                f.coeff_mut(j)[c] = z.conj();
            }
        }
    }
    f
}

/// (u(0), u_t(0)) on |n_j| ≤ n_max as the sum of every configured source.
pub fn initial_data(
    loaded: &Loaded,
    cfg: &DataConfig,
    d: usize,
    m: usize,
    n_max: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(ModeField, ModeField), CliError> {
    let set = ModeSet::new(d, n_max);
    let mut u0 = ModeField::zeros(set, m);
    let mut u1 = ModeField::zeros(set, m);
    for (k, Term { field, component, mode, cos, sin }) in cfg.terms.iter().enumerate() {
        let f = match field {
            FieldName::U0 => &mut u0,
            FieldName::U1 => &mut u1,
        };
        add_term(f, *component, mode, *cos, *sin).map_err(|e| CliError::Config(format!("data.terms[{k}]: {e}")))?;
    }
    if let Some(spec) = &cfg.random {
        let r = random_hermitian(set, 2 * m, spec, rng);
        add_halves(&mut u0, &mut u1, &r);
    }
    if let Some(g) = &cfg.grid {
        for (name, path, target) in [("u0", &g.u0, &mut u0), ("u1", &g.u1, &mut u1)] {
            let Some(path) = path else { continue };
            let grid = Grid::from_csv(&read(loaded, path)?, d, g.points, m)
                .map_err(|e| CliError::Config(format!("data.grid.{name}: {e}")))?;
            let f = analyze(&grid, n_max).map_err(|e| CliError::Config(format!("data.grid.{name}: {e}")))?;
            target.axpy(C64::new(1.0, 0.0), &f);
        }
    }
    if let Some(path) = &cfg.initial {
        let f = ModeField::from_csv(&read(loaded, path)?, d, n_max, 2 * m)
            .map_err(|e| CliError::Config(format!("data.initial: {e}")))?;
        add_halves(&mut u0, &mut u1, &f);
    }
    Ok((u0, u1))
}

fn add_halves(u0: &mut ModeField, u1: &mut ModeField, v: &ModeField) {
    let m = u0.m;
    for i in 0..v.set.len() {
        for c in 0..m {
            u0.coeff_mut(i)[c] += v.coeff(i)[c];
            u1.coeff_mut(i)[c] += v.coeff(i)[m + c];
        }
    }
}

/// Reads a mode CSV for a configuration key.
pub fn mode_file(loaded: &Loaded, key: &str, p: &std::path::Path, d: usize, n_max: usize, m: usize) -> Result<ModeField, CliError> {
    ModeField::from_csv(&read(loaded, p)?, d, n_max, m).map_err(|e| CliError::Config(format!("{key}: {e}")))
}
