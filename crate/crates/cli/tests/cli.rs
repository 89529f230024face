use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_silentwave");

const EXAMPLE: &str = r#"
[system]
kind = "example-s1"

[[data.terms]]
field = "u0"
mode = [1]
sin = 1.0
"#;

/// The example written as a custom system, so that forcing can be added.
const CUSTOM_EXAMPLE: &str = r#"
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

struct Run {
    dir: TempDir,
}

impl Run {
    fn new() -> Run {
        Run { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn read(&self, name: &str) -> String {
        fs::read_to_string(self.path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
    }

    /// Runs a subcommand on `config` with outputs in `out`.
    fn cmd(&self, sub: &str, config: &str, out: &str, extra: &[&str]) -> Output {
        let cfg = self.write(&format!("{out}.toml"), config);
        let o = Command::new(BIN)
            .arg(sub)
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(self.path(out))
            .args(extra)
            .output()
            .unwrap();
        eprintln!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
        o
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Data rows of a CSV, after checking the metadata line and header.
fn rows(text: &str) -> Vec<Vec<String>> {
    let mut lines = text.lines();
    let meta = lines.next().unwrap();
    assert!(meta.starts_with("# silentwave ") && meta.contains("config_sha256=") && meta.contains("seed="), "{meta}");
    let body = lines.collect::<Vec<_>>().join("\n");
    let mut r = csv::ReaderBuilder::new().from_reader(body.as_bytes());
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

fn quantity(text: &str, name: &str) -> String {
    rows(text).into_iter().find(|r| r[0] == name).unwrap_or_else(|| panic!("no row {name}"))[1].clone()
}

#[test]
fn check_example_passes() {
    let r = Run::new();
    let o = r.cmd("check", EXAMPLE, "out", &[]);
    assert_eq!(code(&o), 0);
    let table = rows(&r.read("out/check.csv"));
    assert_eq!(table.last().unwrap(), &["overall", "", "pass"]);
}

#[test]
fn check_anti_silent_fails() {
    let flipped = CUSTOM_EXAMPLE.replace("exp(-2*t)", "exp(2*t)").replace("exp(-t)", "exp(t)");
    let r = Run::new();
    let o = r.cmd("check", &flipped, "out", &[]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("silence"));
    assert_eq!(rows(&r.read("out/check.csv")).last().unwrap()[2], "fail");
}

#[test]
fn malformed_configs_exit_1() {
    let r = Run::new();
    let o = r.cmd("check", "[system]\nkind = \"example-s1\"\n[solve]\nn_max = \"16\"\n", "a", &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
    let o = r.cmd("check", "[system]\nkind = \"example-s1\"\ncolour = 3\n", "b", &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("colour"));
    let o = r.cmd("solve", &format!("{EXAMPLE}\n[[data.terms]]\nfield = \"u0\"\nmode = [40]\ncos = 1.0\n"), "c", &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("data.terms[1]"));
    let o = r.cmd("kasner", EXAMPLE, "d", &[]);
    assert_eq!(code(&o), 1);
}

#[test]
fn usage_errors_exit_1() {
    let o = Command::new(BIN).arg("frobnicate").output().unwrap();
    assert_eq!(code(&o), 1);
    let o = Command::new(BIN).args(["check", "--jobs", "0"]).output().unwrap();
    assert_eq!(code(&o), 1);
    let o = Command::new(BIN).arg("check").output().unwrap();
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--config"));
    let o = Command::new(BIN).arg("--help").output().unwrap();
    assert_eq!(code(&o), 0);
}

fn slope(table: &[Vec<String>], scope: &str, order: &str) -> (String, Option<f64>) {
    let row = table.iter().find(|r| r[0] == scope && r[1] == order).unwrap();
    (row[3].clone(), row[4].parse().ok())
}

#[test]
fn solve_example_rates() {
    let r = Run::new();
    let o = r.cmd("solve", EXAMPLE, "out", &[]);
    assert_eq!(code(&o), 0);
    let table = rows(&r.read("out/slopes.csv"));
    let (s1, s2) = (slope(&table, "field", "1").1.unwrap(), slope(&table, "field", "2").1.unwrap());
    assert!((-1.05..=-0.85).contains(&s1), "{s1}");
    assert!((-2.2..=-1.7).contains(&s2), "{s2}");
    assert!(slope(&table, "1", "1").1.is_some());
    // sin θ only excites n = ±1.
    let data = rows(&r.read("out/data.csv"));
    let agg = |n: &str| data.iter().find(|r| r[0] == "aggregate" && r[1] == n && r[2] == "0").unwrap()[4].parse::<f64>().unwrap();
    assert!(agg("1").abs() > 0.1 && agg("0") == 0.0);
}

#[test]
fn solve_zero_data_flags_floor() {
    let r = Run::new();
    let o = r.cmd("solve", "[system]\nkind = \"example-s1\"\n[solve]\nn_max = 4\n", "out", &[]);
    assert_eq!(code(&o), 0);
    let table = rows(&r.read("out/slopes.csv"));
    assert_eq!(table.len(), 2);
    assert!(table.iter().all(|r| r[3] == "below_floor"));
    for name in ["out/modes.csv", "out/data.csv"] {
        assert!(rows(&r.read(name)).iter().all(|r| r[r.len() - 2] == "0e0" && r[r.len() - 1] == "0e0"));
    }
}

#[test]
fn outputs_are_byte_identical() {
    let cfg = "seed = 11\n[system]\nkind = \"example-s1\"\n[solve]\nn_max = 6\n[data]\nrandom = { amplitude = 0.5 }\n";
    let r = Run::new();
    assert_eq!(code(&r.cmd("solve", cfg, "a", &[])), 0);
    assert_eq!(code(&r.cmd("solve", cfg, "b", &["--jobs", "1"])), 0);
    for f in ["modes.csv", "data.csv", "slopes.csv"] {
        assert_eq!(r.read(&format!("a/{f}")), r.read(&format!("b/{f}")), "{f}");
    }
    // A different seed changes the data and the recorded seed.
    assert_eq!(code(&r.cmd("solve", cfg, "c", &["--seed", "12"])), 0);
    let c = r.read("c/modes.csv");
    assert!(c.lines().next().unwrap().ends_with("seed=12"));
    assert_ne!(c.lines().nth(3), r.read("a/modes.csv").lines().nth(3));
}

/// Target CSV for a one-dimensional system with 2 components per mode.
fn target_csv(n_max: i64) -> String {
    let mut s = String::from("n1,component,re,im\n");
    for n in 1..=n_max {
        let (re, im) = (1.0 / (n * n) as f64, 0.5 / n as f64);
        for (c, f) in [(0, 1.0), (1, -0.3)] {
            s += &format!("{n},{c},{},{}\n-{n},{c},{},{}\n", f * re, f * im, f * re, -f * im);
        }
    }
    s + "0,0,0.75,0\n"
}

fn field_from(text: &str, comps: usize) -> Vec<(i64, usize, f64, f64)> {
    rows(&format!("# silentwave x config_sha256=- seed=0\n{}", text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n")))
        .into_iter()
        .map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap(), r[2].parse().unwrap(), r[3].parse().unwrap()))
        .filter(|e: &(i64, usize, f64, f64)| e.1 < comps)
        .collect()
}

#[test]
fn specify_identity_system_returns_target() {
    let id = r#"
[system]
kind = "custom"
d = 1
m = 1
g = [["0"]]
alpha = [["1"]]
zeta = [["0"]]
x = [[["0"]]]
eta_mn = inf
b_s = 1.0

[specify]
n_max = 3
target = "target.csv"
"#;
    let r = Run::new();
    r.write("target.csv", &target_csv(3));
    assert_eq!(code(&r.cmd("specify", id, "out", &[])), 0);
    let got = field_from(&r.read("out/initial.csv"), 2);
    let want = field_from(&target_csv(3), 2);
    for (n, c, re, im) in want {
        let g = got.iter().find(|e| e.0 == n && e.1 == c).unwrap();
        assert!((g.2 - re).abs() < 1e-12 && (g.3 - im).abs() < 1e-12, "mode {n} component {c}");
    }
}

#[test]
fn specify_example_round_trip() {
    let r = Run::new();
    let cfg = "[system]\nkind = \"example-s1\"\n[specify]\nn_max = 8\nrandom = {}\n";
    assert_eq!(code(&r.cmd("specify", cfg, "out", &[])), 0);
    let report = r.read("out/report.csv");
    for q in ["max_roundtrip", "independent_roundtrip"] {
        let v: f64 = quantity(&report, q).parse().unwrap();
        assert!(v <= 1e-5, "{q} = {v}");
    }
    assert_eq!(quantity(&report, "forcing"), "false");
}

/// With forcing, the produced initial data must have the target as its asymptotic data, and
/// the forced part is reported separately.
#[test]
fn specify_inhomogeneous_then_solve() {
    let forced = format!("{CUSTOM_EXAMPLE}\n[[system.forcing]]\nmode = [1]\nre = [\"exp(-2*t)\"]\n[[system.forcing]]\nmode = [-1]\nre = [\"exp(-2*t)\"]\n");
    let r = Run::new();
    r.write("target.csv", &target_csv(2));
    let cfg = format!("{forced}\n[solve]\nn_max = 2\norders = 2\n[specify]\ntarget = \"target.csv\"\n");
    assert_eq!(code(&r.cmd("specify", &cfg, "spec", &[])), 0);
    let report = r.read("spec/report.csv");
    assert_eq!(quantity(&report, "forcing"), "true");
    let fd: f64 = quantity(&report, "forced_data_norm").parse().unwrap();
    let hom: f64 = quantity(&report, "homogeneous_target_norm").parse().unwrap();
    let tgt: f64 = quantity(&report, "target_norm").parse().unwrap();
    assert!(fd > 1e-3 && (hom - tgt).abs() > 1e-6, "{fd} {hom} {tgt}");
    assert!(r.path("spec/forced_data.csv").exists());

    fs::copy(r.path("spec/initial.csv"), r.path("initial.csv")).unwrap();
    let cfg = format!("{forced}\n[solve]\nn_max = 2\norders = 2\n[data]\ninitial = \"initial.csv\"\n");
    assert_eq!(code(&r.cmd("solve", &cfg, "solve", &[])), 0);
    let data = rows(&r.read("solve/data.csv"));
    for (n, c, re, im) in field_from(&target_csv(2), 2) {
        let row = data.iter().find(|r| r[0] == "aggregate" && r[1] == n.to_string() && r[2] == c.to_string()).unwrap();
        let (gr, gi): (f64, f64) = (row[3].parse().unwrap(), row[4].parse().unwrap());
        assert!((gr - re).abs() < 1e-6 && (gi - im).abs() < 1e-6, "mode {n} component {c}: {gr} {gi}");
    }
}

const KASNER: &str = r#"
seed = 3
[system]
kind = "kasner"
u = 2.0

[kasner]
n_max = 2

[kasner.geodesics]
count = 4
"#;

#[test]
fn kasner_report_with_comoving_observer() {
    let r = Run::new();
    let o = r.cmd("kasner", KASNER, "out", &[]);
    assert_eq!(code(&o), 0);
    let geo = rows(&r.read("out/geodesics.csv"));
    assert_eq!(geo.len(), 5);
    let rate = -30.0 / 7.0;
    for g in &geo[..4] {
        assert_eq!(g[1], "generic");
        let s: f64 = g[14].parse().unwrap();
        assert!((s - rate).abs() <= 0.03 * rate.abs(), "slope {s}");
        let amp: f64 = g[19].parse().unwrap();
        assert!(amp <= 0.1, "amplitude error {amp}");
    }
    let com = &geo[4];
    assert_eq!(&com[1..4], &["comoving", "0e0", "0e0"]);
    assert_eq!(com[18], "0e0");
    assert_eq!(com[19], "");
    // The comoving energy decays more slowly than the generic rate.
    let s: f64 = com[14].parse().unwrap();
    assert!(s > rate + 0.5, "comoving slope {s}");
    let ex = r.read("out/exponents.csv");
    assert_eq!(quantity(&ex, "generic_slope_within_3pct"), "4");
    assert!(r.path("out/energy.csv").exists() && r.path("out/limits.csv").exists());
}

fn violating_initial(r: &Run) -> PathBuf {
    let mut s = String::from("n1,n2,n3,component,re,im\n");
    s += "1,0,0,1,0.5,0.25\n-1,0,0,1,0.5,-0.25\n0,0,0,1,1,0\n";
    r.write("initial.csv", &s)
}

#[test]
fn kasner_refuses_constraint_violation() {
    let r = Run::new();
    violating_initial(&r);
    let cfg = KASNER.replace("n_max = 2\n", "n_max = 2\ninitial = \"initial.csv\"\n");
    let o = r.cmd("kasner", &cfg, "refused", &[]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("--project-constraints"));
    let o = r.cmd("kasner", &cfg, "projected", &["--project-constraints"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ex = r.read("projected/exponents.csv");
    let v: f64 = quantity(&ex, "initial_constraint_violation").parse().unwrap();
    assert!(v > 1e-3);
}

#[test]
fn accept_writes_every_criterion() {
    let r = Run::new();
    let o = Command::new(BIN).args(["accept", "--out"]).arg(r.path("acc")).output().unwrap();
    let table = rows(&r.read("acc/acceptance.csv"));
    assert_eq!(table.len(), 9);
    let failed: Vec<&str> = table.iter().filter(|t| t[2] == "fail").map(|t| t[0].as_str()).collect();
    // Criterion 6 fails at the prescribed tolerance; see the acceptance test target.
    assert_eq!(failed, ["6"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn kasner_and_specify_outputs_are_byte_identical() {
    let r = Run::new();
    for extra in [&[][..], &["--jobs", "1"][..]] {
        let tag = extra.len();
        assert_eq!(code(&r.cmd("kasner", KASNER, &format!("k{tag}"), extra)), 0);
        let spec = "[system]\nkind = \"example-s1\"\n[specify]\nn_max = 4\nrandom = { decay = 1.0 }\n";
        assert_eq!(code(&r.cmd("specify", spec, &format!("s{tag}"), extra)), 0);
    }
    for f in ["k{}/geodesics.csv", "k{}/energy.csv", "k{}/exponents.csv", "k{}/limits.csv", "s{}/initial.csv", "s{}/report.csv"] {
        assert_eq!(r.read(&f.replace("{}", "0")), r.read(&f.replace("{}", "2")), "{f}");
    }
}
