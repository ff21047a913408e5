//! Frozen dimensional factors.
//!
//! The factors are measured once on the constant environment (see the
//! `calibrate` example) and checked in as `calibration.json`. A factor used in
//! an audit is `headroom × raw`.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::audit::Inequality;
use crate::Result;

pub const BUNDLED: &str = include_str!("calibration.json");

/// Inequality factors for one dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InequalityCalibration {
    pub d: usize,
    pub cells_per_side: usize,
    pub radius_cells: f64,
    pub p: f64,
    pub q: f64,
    pub trials: usize,
    pub seed: u64,
    /// Largest observed `LHS / (ball constant × RHS₀)` per inequality.
    pub raw: BTreeMap<Inequality, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub version: String,
    pub headroom: f64,
    pub inequalities: Vec<InequalityCalibration>,
    /// Envelopes of the parabolic audits, keyed by name.
    #[serde(default)]
    pub envelopes: BTreeMap<String, f64>,
}

impl Calibration {
    pub fn bundled() -> &'static Calibration {
        static CELL: OnceLock<Calibration> = OnceLock::new();
        CELL.get_or_init(|| Calibration::parse(BUNDLED).expect("bundled calibration parses"))
    }

    pub fn parse(text: &str) -> Result<Calibration> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `c(d)` for one inequality, if calibrated.
    pub fn factor(&self, d: usize, which: Inequality) -> Option<f64> {
        self.inequalities
            .iter()
            .find(|c| c.d == d)
            .and_then(|c| c.raw.get(&which))
            .map(|raw| self.headroom * raw)
    }

    /// Ball radius, in cells, at which the factors for `d` were measured.
    /// Trial ratios decrease with the radius, so audits below it are flagged.
    pub fn radius_cells(&self, d: usize) -> Option<f64> {
        self.inequalities.iter().find(|c| c.d == d).map(|c| c.radius_cells)
    }

    /// `headroom × raw` for a named envelope, if calibrated.
    pub fn envelope(&self, name: &str) -> Option<f64> {
        self.envelopes.get(name).map(|raw| self.headroom * raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_file_parses() {
        let c = Calibration::bundled();
        assert!(c.headroom >= 1.0);
        assert!(!c.version.is_empty());
    }

    #[test]
    fn roundtrip() {
        let c = Calibration::bundled();
        assert_eq!(&Calibration::parse(&c.to_json().unwrap()).unwrap(), c);
    }
}
