//! Acceptance checks for the silentwave solver. Each check returns an [`Outcome`] with the
//! measured quantity and its threshold.

use std::fmt;

pub mod example;
pub mod maxwell;
pub mod oracle;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    /// Measured values against thresholds, one line.
    pub detail: String,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "criterion {} [{tag}] {}: {}", self.id, self.name, self.detail)
    }
}

impl Outcome {
    fn new(id: u32, name: &'static str, passed: bool, detail: String) -> Self {
        Outcome { id, name, passed, detail }
    }

    /// A check that could not run counts as failed.
    fn errored(id: u32, name: &'static str, err: &dyn fmt::Display) -> Self {
        Outcome::new(id, name, false, format!("error: {err}"))
    }
}

/// Runs criteria 1..=9 in order, calling `report` as each finishes.
pub fn run_all(seed: u64, mut report: impl FnMut(&Outcome)) -> Vec<Outcome> {
    let mut out = Vec::new();
    let mut push = |o: Outcome| {
        report(&o);
        out.push(o);
    };
    let (c1, c2) = example::rates();
    push(c1);
    push(c2);
    push(example::isomorphism_round_trip(seed));
    push(example::mode_exactness());
    push(maxwell::spectral_structure());
    let k = maxwell::KasnerCase::run(seed);
    push(maxwell::gauge_preservation(&k));
    push(maxwell::energy_blowup(&k, seed));
    push(maxwell::faraday_rates(&k));
    push(example::oracle_cross_check());
    out
}
