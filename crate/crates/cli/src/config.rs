//! Run configuration; the grammar is in docs/config.md at the repository root.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use silentwave::coeffexpr::{parse_expr, MatrixExpr};
use silentwave::kasner::{build_maxwell_system, kasner_from_u, KasnerExponents};
use silentwave::silentpde::{ForcingExpr, SilentSystem, SystemExprs};

use crate::error::CliError;

pub const DEFAULT_SEED: u64 = 20261015;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub system: SystemConfig,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub solve: SolveConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub specify: SpecifyConfig,
    #[serde(default)]
    pub kasner: KasnerConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    ExampleS1,
    Kasner,
    Custom,
}

/// `kind` selects which of the remaining keys are allowed.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub kind: SystemKind,
    pub u: Option<f64>,
    pub d: Option<usize>,
    pub m: Option<usize>,
    pub g0: Option<Vec<String>>,
    pub g: Option<Vec<Vec<String>>>,
    pub alpha: Option<Vec<Vec<String>>>,
    pub zeta: Option<Vec<Vec<String>>>,
    pub x: Option<Vec<Vec<Vec<String>>>>,
    pub alpha_inf: Option<Vec<Vec<f64>>>,
    pub zeta_inf: Option<Vec<Vec<f64>>>,
    pub eta_mn: Option<f64>,
    pub b_s: Option<f64>,
    pub c_e: Option<f64>,
    pub b_low: Option<f64>,
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub forcing: Vec<ForcingConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingConfig {
    pub mode: Vec<i64>,
    pub re: Vec<String>,
    pub im: Option<Vec<String>>,
}

/// Explicit sample times or an evenly spaced grid.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Times {
    List(Vec<f64>),
    Grid { start: f64, stop: f64, count: usize },
}

impl Times {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Times::List(v) => v.clone(),
            Times::Grid { start, stop, count } => linspace(*start, *stop, *count),
        }
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    /// Defaults to `solve.n_max`.
    pub n_max: Option<usize>,
    pub times: Option<Times>,
    #[serde(default = "CheckConfig::default_allowance")]
    pub allowance: f64,
    pub c_coeff_bound: Option<f64>,
}

impl CheckConfig {
    fn default_allowance() -> f64 {
        1e-9
    }
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig { n_max: None, times: None, allowance: Self::default_allowance(), c_coeff_bound: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    pub n_max: usize,
    pub tol: f64,
    pub horizon: Option<f64>,
    pub orders: usize,
    pub times: Times,
    pub fit_window: [f64; 2],
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            n_max: 16,
            tol: 1e-10,
            horizon: None,
            orders: 2,
            times: Times::Grid { start: 0.0, stop: 20.0, count: 81 },
            fit_window: [8.0, 18.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldName {
    U0,
    U1,
}

/// a·cos(n·x) + b·sin(n·x) in one component of u(0) or u_t(0).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub field: FieldName,
    #[serde(default)]
    pub component: usize,
    pub mode: Vec<i64>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// Seeded Hermitian data with |coefficient| ~ amplitude·⟨n⟩^{−decay}.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSpec {
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default = "two")]
    pub decay: f64,
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFiles {
    pub points: usize,
    pub u0: Option<PathBuf>,
    pub u1: Option<PathBuf>,
}

/// Initial data is the sum of every source given.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub terms: Vec<Term>,
    pub random: Option<RandomSpec>,
    pub grid: Option<GridFiles>,
    /// Mode CSV with 2m components: u(0) then u_t(0).
    pub initial: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecifyConfig {
    /// Mode CSV of the target asymptotic data, 2m components.
    pub target: Option<PathBuf>,
    pub random: Option<RandomSpec>,
    /// Default to the `solve` values.
    pub n_max: Option<usize>,
    pub tol: Option<f64>,
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvelopeConfig {
    pub u1_min: f64,
    pub eps: f64,
    pub width: f64,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        EnvelopeConfig { u1_min: 1.0, eps: 0.01, width: 2.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeodesicConfig {
    pub count: usize,
    pub c_min: f64,
    pub c_max: f64,
    pub t0: f64,
    /// Adds the comoving observer c = 0.
    pub comoving: bool,
}

impl Default for GeodesicConfig {
    fn default() -> Self {
        GeodesicConfig { count: 20, c_min: 0.3, c_max: 2.0, t0: 1.0, comoving: true }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KasnerConfig {
    pub n_max: usize,
    pub tau0: f64,
    pub tau_h: f64,
    pub tol: f64,
    pub samples: Option<Times>,
    pub fit_window: [f64; 2],
    /// Allowed constraint violation of file data, relative to its ‖·‖_(0).
    pub constraint_tol: f64,
    /// Mode CSV at tau0 with 8 components (ω_τ, ω_1, ω_2, ω_3 and their τ-derivatives).
    pub initial: Option<PathBuf>,
    pub envelope: EnvelopeConfig,
    pub geodesics: GeodesicConfig,
}

impl Default for KasnerConfig {
    fn default() -> Self {
        KasnerConfig {
            n_max: 8,
            tau0: 0.0,
            tau_h: 48.0,
            tol: 1e-10,
            samples: None,
            fit_window: [6.0, 12.0],
            constraint_tol: 1e-8,
            initial: None,
            envelope: EnvelopeConfig::default(),
            geodesics: GeodesicConfig::default(),
        }
    }
}

impl KasnerConfig {
    pub fn sample_taus(&self) -> Vec<f64> {
        match &self.samples {
            Some(t) => t.values(),
            None => linspace(self.fit_window[0], self.fit_window[1], 25),
        }
    }
}

/// A parsed configuration with its source hash and directory (for relative paths).
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub sha256: String,
    pub dir: PathBuf,
}

impl Loaded {
    pub fn read(path: &Path) -> Result<Loaded, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Loaded::parse(&text, dir).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn parse(text: &str, dir: PathBuf) -> Result<Loaded, CliError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        let sha256 = hex::encode(Sha256::digest(text.as_bytes()));
        Ok(Loaded { config, sha256, dir })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }
}

fn bad(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

fn check_times(field: &str, t: &[f64]) -> Result<(), CliError> {
    if t.is_empty() {
        return Err(bad(field, "no sample times"));
    }
    if t.iter().any(|x| !x.is_finite() || *x < 0.0) || t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(bad(field, "times must be finite, non-negative and strictly increasing"));
    }
    Ok(())
}

fn check_tol(field: &str, tol: f64) -> Result<(), CliError> {
    if !(tol > 0.0 && tol <= 1e-3) {
        return Err(bad(field, format!("tolerance {tol} outside (0, 1e-3]")));
    }
    Ok(())
}

fn check_window(field: &str, w: [f64; 2]) -> Result<(), CliError> {
    if !(w[0].is_finite() && w[1].is_finite() && w[0] < w[1]) {
        return Err(bad(field, "window must be [lo, hi] with lo < hi"));
    }
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.system.validate()?;
        let s = &self.solve;
        if s.n_max == 0 {
            return Err(bad("solve.n_max", "must be at least 1"));
        }
        check_tol("solve.tol", s.tol)?;
        if s.orders == 0 {
            return Err(bad("solve.orders", "must be at least 1"));
        }
        if let Some(h) = s.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(bad("solve.horizon", "must be positive"));
            }
        }
        check_times("solve.times", &s.times.values())?;
        check_window("solve.fit_window", s.fit_window)?;
        if let Some(t) = &self.check.times {
            check_times("check.times", &t.values())?;
        }
        if let Some(0) = self.check.n_max {
            return Err(bad("check.n_max", "must be at least 1"));
        }
        for (i, t) in self.data.terms.iter().enumerate() {
            if !(t.cos.is_finite() && t.sin.is_finite()) {
                return Err(bad(&format!("data.terms[{i}]"), "coefficients must be finite"));
            }
        }
        if let Some(g) = &self.data.grid {
            if g.u0.is_none() && g.u1.is_none() {
                return Err(bad("data.grid", "give u0, u1 or both"));
            }
        }
        for (name, r) in [("data.random", &self.data.random), ("specify.random", &self.specify.random)] {
            if let Some(r) = r {
                if !(r.amplitude.is_finite() && r.decay.is_finite() && r.amplitude >= 0.0) {
                    return Err(bad(name, "amplitude must be finite and non-negative, decay finite"));
                }
            }
        }
        if let Some(0) = self.specify.n_max {
            return Err(bad("specify.n_max", "must be at least 1"));
        }
        if let Some(tol) = self.specify.tol {
            check_tol("specify.tol", tol)?;
        }
        if let Some(h) = self.specify.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(bad("specify.horizon", "must be positive"));
            }
        }
        if self.specify.target.is_some() && self.specify.random.is_some() {
            return Err(bad("specify", "give either target or random, not both"));
        }
        let k = &self.kasner;
        if k.n_max == 0 {
            return Err(bad("kasner.n_max", "must be at least 1"));
        }
        check_tol("kasner.tol", k.tol)?;
        check_window("kasner.fit_window", k.fit_window)?;
        check_times("kasner.samples", &k.sample_taus())?;
        if k.sample_taus()[0] < k.tau0 {
            return Err(bad("kasner.samples", "samples must not precede tau0"));
        }
        if !(k.tau_h > *k.sample_taus().last().unwrap()) {
            return Err(bad("kasner.tau_h", "must exceed the last sample"));
        }
        let g = &k.geodesics;
        if !(g.c_min > 0.0 && g.c_min <= g.c_max && g.t0 > 0.0) {
            return Err(bad("kasner.geodesics", "need 0 < c_min <= c_max and t0 > 0"));
        }
        let e = &k.envelope;
        if !(e.u1_min > 0.0 && e.eps >= 0.0 && e.width > 0.0) {
            return Err(bad("kasner.envelope", "need u1_min > 0, eps >= 0, width > 0"));
        }
        Ok(())
    }
}

impl SystemConfig {
    fn custom_keys(&self) -> [(&'static str, bool); 14] {
        [
            ("d", self.d.is_some()),
            ("m", self.m.is_some()),
            ("g0", self.g0.is_some()),
            ("g", self.g.is_some()),
            ("alpha", self.alpha.is_some()),
            ("zeta", self.zeta.is_some()),
            ("x", self.x.is_some()),
            ("alpha_inf", self.alpha_inf.is_some()),
            ("zeta_inf", self.zeta_inf.is_some()),
            ("eta_mn", self.eta_mn.is_some()),
            ("b_s", self.b_s.is_some()),
            ("c_e", self.c_e.is_some()),
            ("b_low", self.b_low.is_some()),
            ("epsilon", self.epsilon.is_some()),
        ]
    }

    fn validate(&self) -> Result<(), CliError> {
        let kind = match self.kind {
            SystemKind::ExampleS1 => "example-s1",
            SystemKind::Kasner => "kasner",
            SystemKind::Custom => "custom",
        };
        if self.kind != SystemKind::Kasner && self.u.is_some() {
            return Err(bad("system.u", format!("not valid for kind = \"{kind}\"")));
        }
        if self.kind != SystemKind::Custom {
            if let Some((k, _)) = self.custom_keys().iter().find(|(_, set)| *set) {
                return Err(bad(&format!("system.{k}"), format!("not valid for kind = \"{kind}\"")));
            }
            if !self.forcing.is_empty() {
                return Err(bad("system.forcing", format!("not valid for kind = \"{kind}\"")));
            }
        }
        match self.kind {
            SystemKind::Kasner => {
                let u = self.u.ok_or_else(|| bad("system.u", "required for kind = \"kasner\""))?;
                kasner_from_u(u).map_err(|e| bad("system.u", e))?;
            }
            SystemKind::Custom => {
                for key in ["d", "m", "g", "alpha", "zeta", "x", "b_s", "eta_mn"] {
                    if !self.custom_keys().iter().any(|(k, set)| *k == key && *set) {
                        return Err(bad(&format!("system.{key}"), "required for kind = \"custom\""));
                    }
                }
                self.exprs()?;
            }
            SystemKind::ExampleS1 => {}
        }
        Ok(())
    }

    pub fn kasner_exponents(&self) -> Result<KasnerExponents, CliError> {
        match (self.kind, self.u) {
            (SystemKind::Kasner, Some(u)) => kasner_from_u(u).map_err(|e| bad("system.u", e)),
            _ => Err(bad("system.kind", "this command needs kind = \"kasner\"")),
        }
    }

    fn exprs(&self) -> Result<SystemExprs, CliError> {
        let d = self.d.unwrap_or(0);
        let m = self.m.unwrap_or(0);
        let mat = |name: &str, rows: &Option<Vec<Vec<String>>>| -> Result<MatrixExpr, CliError> {
            MatrixExpr::parse(rows.as_deref().unwrap_or(&[])).map_err(|e| bad(&format!("system.{name}"), e))
        };
        let g0 = match &self.g0 {
            Some(v) => MatrixExpr::parse(std::slice::from_ref(v)).map_err(|e| bad("system.g0", e))?,
            None => MatrixExpr::zeros(1, d),
        };
        let xj = self
            .x
            .as_deref()
            .unwrap_or(&[])
            .iter()
            .enumerate()
            .map(|(j, rows)| MatrixExpr::parse(rows).map_err(|e| bad(&format!("system.x[{j}]"), e)))
            .collect::<Result<Vec<_>, _>>()?;
        let limit = |name: &str, rows: &Option<Vec<Vec<f64>>>| -> Result<Option<nalgebra::DMatrix<f64>>, CliError> {
            let Some(rows) = rows else { return Ok(None) };
            if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                return Err(bad(&format!("system.{name}"), format!("must be {m}x{m}")));
            }
            Ok(Some(nalgebra::DMatrix::from_fn(m, m, |i, j| rows[i][j])))
        };
        let forcing = self
            .forcing
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let field = format!("system.forcing[{i}]");
                let parse = |v: &[String]| v.iter().map(|s| parse_expr(s)).collect::<Result<Vec<_>, _>>();
                let re = parse(&f.re).map_err(|e| bad(&field, e))?;
                let im = match &f.im {
                    Some(v) => parse(v).map_err(|e| bad(&field, e))?,
                    None => vec![silentwave::coeffexpr::Expr::constant(0.0); f.re.len()],
                };
                Ok(ForcingExpr { mode: f.mode.clone(), re, im })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        Ok(SystemExprs {
            d,
            m,
            g0l: g0,
            gjl: mat("g", &self.g)?,
            alpha: mat("alpha", &self.alpha)?,
            zeta: mat("zeta", &self.zeta)?,
            xj,
            alpha_inf: limit("alpha_inf", &self.alpha_inf)?,
            zeta_inf: limit("zeta_inf", &self.zeta_inf)?,
            eta_mn: self.eta_mn.unwrap_or(f64::INFINITY),
            b_s: self.b_s.unwrap_or(0.0),
            c_e: self.c_e.unwrap_or(0.0),
            b_low: self.b_low,
            forcing,
            epsilon: self.epsilon,
        })
    }

    pub fn build(&self) -> Result<SilentSystem, CliError> {
        match self.kind {
            SystemKind::ExampleS1 => Ok(SilentSystem::example()),
            SystemKind::Kasner => Ok(build_maxwell_system(&self.kasner_exponents()?)?),
            SystemKind::Custom => {
                SilentSystem::from_exprs(&self.exprs()?).map_err(|e| match e.exit_class() {
                    1 => bad("system", e),
                    _ => CliError::Core(e),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Loaded, CliError> {
        Loaded::parse(s, PathBuf::new())
    }

    #[test]
    fn minimal_example_config() {
        let l = parse("[system]\nkind = \"example-s1\"\n").unwrap();
        assert_eq!(l.config.solve.n_max, 16);
        assert_eq!(l.config.solve.times.values().len(), 81);
        assert_eq!(l.sha256.len(), 64);
        assert!(l.config.system.build().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let e = parse("[system]\nkind = \"example-s1\"\n\n[solve]\nn_mx = 3\n").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("n_mx") && msg.contains("line 5"), "{msg}");
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn kind_specific_keys() {
        assert!(parse("[system]\nkind = \"example-s1\"\nu = 2.0\n").is_err());
        assert!(parse("[system]\nkind = \"kasner\"\n").is_err());
        assert!(parse("[system]\nkind = \"kasner\"\nu = 0.5\n").is_err());
        assert!(parse("[system]\nkind = \"kasner\"\nu = 2.0\n").is_ok());
        let e = parse("[system]\nkind = \"custom\"\nd = 1\n").unwrap_err();
        assert!(e.to_string().contains("system.m"));
    }

    #[test]
    fn custom_system_matches_example() {
        let text = r#"
[system]
kind = "custom"
d = 1
m = 1
g = [["exp(-2*t)"]]
alpha = [["1"]]
zeta = [["0"]]
x = [[["exp(-t)"]]]
eta_mn = inf
b_s = 1.0
"#;
        let sys = parse(text).unwrap().config.system.build().unwrap();
        let ex = SilentSystem::example();
        assert!((&sys.a_inf - &ex.a_inf).norm() < 1e-15);
    }

    #[test]
    fn bad_expression_names_the_field() {
        let text = "[system]\nkind = \"custom\"\nd = 1\nm = 1\ng = [[\"exp(-2*t\"]]\nalpha = [[\"1\"]]\nzeta = [[\"0\"]]\nx = [[[\"0\"]]]\neta_mn = 1.0\nb_s = 1.0\n";
        let e = parse(text).unwrap_err();
        assert!(e.to_string().starts_with("system.g:"), "{e}");
    }

    #[test]
    fn times_forms() {
        let l = parse("[system]\nkind = \"example-s1\"\n[solve]\ntimes = [0.0, 1.0, 2.5]\n").unwrap();
        assert_eq!(l.config.solve.times.values(), vec![0.0, 1.0, 2.5]);
        assert!(parse("[system]\nkind = \"example-s1\"\n[solve]\ntimes = [1.0, 0.5]\n").is_err());
        let l = parse("[system]\nkind = \"example-s1\"\n[solve]\ntimes = { start = 0, stop = 1, count = 5 }\n").unwrap();
        assert_eq!(l.config.solve.times.values(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }
}
