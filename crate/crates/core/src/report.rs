//! Pass/fail reports for named inequalities checked over parameter grids.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// Where the worst residual of a check occurred.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Location {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub site: Option<Vec<i32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Location {
    pub fn at_beta(beta: f64) -> Self {
        Location {
            beta: Some(beta),
            ..Default::default()
        }
    }

    pub fn pair(beta_low: f64, beta: f64) -> Self {
        Location {
            beta_low: Some(beta_low),
            beta: Some(beta),
            ..Default::default()
        }
    }

    pub fn with_site(mut self, site: &[i32]) -> Self {
        self.site = Some(site.to_vec());
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(b) = self.beta_low {
            parts.push(format!("beta'={b}"));
        }
        if let Some(b) = self.beta {
            parts.push(format!("beta={b}"));
        }
        if let Some(s) = &self.site {
            parts.push(format!("x={s:?}"));
        }
        if let Some(l) = &self.label {
            parts.push(l.clone());
        }
        write!(f, "{}", parts.join(" "))
    }
}

/// Outcome of one named check. `pass ⟺ worst_residual ≥ −tolerance`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub name: String,
    /// The inequality in symbols.
    pub statement: String,
    pub parameters: BTreeMap<String, String>,
    pub pass: bool,
    pub worst_residual: f64,
    pub worst_location: Location,
    pub tolerance: f64,
    pub evaluations: usize,
    /// True when the hypotheses never held on the grid, so nothing was tested.
    pub vacuous: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fitted: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl InequalityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn summary_line(&self) -> String {
        format!(
            "{} {}: worst residual {:.3e} (tol {:.1e}) at {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.worst_residual,
            self.tolerance,
            self.worst_location
        )
    }
}

impl fmt::Display for InequalityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.summary_line())
    }
}

/// Accumulates residuals and keeps the worst one.
#[derive(Clone, Debug)]
pub struct ResidualTracker {
    name: String,
    statement: String,
    tolerance: f64,
    parameters: BTreeMap<String, String>,
    worst: f64,
    location: Location,
    evaluations: usize,
    fitted: BTreeMap<String, f64>,
    notes: Vec<String>,
}

impl ResidualTracker {
    pub fn new(name: impl Into<String>, statement: impl Into<String>, tolerance: f64) -> Self {
        ResidualTracker {
            name: name.into(),
            statement: statement.into(),
            tolerance,
            parameters: BTreeMap::new(),
            worst: f64::INFINITY,
            location: Location::default(),
            evaluations: 0,
            fitted: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl fmt::Display) -> &mut Self {
        self.parameters.insert(key.to_string(), value.to_string());
        self
    }

    pub fn fitted(&mut self, key: &str, value: f64) -> &mut Self {
        self.fitted.insert(key.to_string(), value);
        self
    }

    pub fn note(&mut self, note: impl Into<String>) -> &mut Self {
        self.notes.push(note.into());
        self
    }

    /// Records one residual; NaN counts as a failure.
    pub fn observe(&mut self, residual: f64, location: impl FnOnce() -> Location) {
        self.evaluations += 1;
        let r = if residual.is_nan() { f64::NEG_INFINITY } else { residual };
        if r < self.worst {
            self.worst = r;
            self.location = location();
        }
    }

    pub fn worst(&self) -> f64 {
        self.worst
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn merge(&mut self, other: ResidualTracker) {
        self.evaluations += other.evaluations;
        if other.worst < self.worst {
            self.worst = other.worst;
            self.location = other.location;
        }
        self.notes.extend(other.notes);
    }

    pub fn finish(self) -> InequalityReport {
        let vacuous = self.evaluations == 0;
        let worst = if vacuous { 0.0 } else { self.worst };
        InequalityReport {
            name: self.name,
            statement: self.statement,
            parameters: self.parameters,
            pass: worst >= -self.tolerance,
            worst_residual: worst,
            worst_location: self.location,
            tolerance: self.tolerance,
            evaluations: self.evaluations,
            vacuous,
            fitted: self.fitted,
            notes: self.notes,
        }
    }
}

/// Combines reports into one that passes iff all do.
pub fn combine(name: &str, statement: &str, reports: &[InequalityReport]) -> InequalityReport {
    let mut tracker = ResidualTracker::new(name, statement, 0.0);
    let mut all_pass = true;
    let mut worst_scaled = f64::INFINITY;
    for r in reports {
        all_pass &= r.pass;
        tracker.evaluations += r.evaluations;
        let scaled = if r.tolerance > 0.0 {
            (r.worst_residual + r.tolerance) / r.tolerance - 1.0
        } else {
            r.worst_residual
        };
        if scaled < worst_scaled {
            worst_scaled = scaled;
            tracker.location = r.worst_location.clone().with_label(r.name.clone());
            tracker.worst = r.worst_residual;
            tracker.tolerance = r.tolerance;
        }
        tracker.notes.push(r.summary_line());
    }
    let mut rep = tracker.finish();
    rep.pass = all_pass;
    rep
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracker_keeps_worst() {
        let mut t = ResidualTracker::new("demo", "a <= b", 1e-12);
        t.observe(0.5, || Location::at_beta(0.1));
        t.observe(-1e-13, || Location::at_beta(0.2).with_site(&[1, 0]));
        t.observe(0.1, || Location::at_beta(0.3));
        let r = t.finish();
        assert!(r.pass);
        assert_eq!(r.worst_residual, -1e-13);
        assert_eq!(r.worst_location.site, Some(vec![1, 0]));
        assert_eq!(r.evaluations, 3);
    }

    #[test]
    fn nan_fails() {
        let mut t = ResidualTracker::new("demo", "", 0.0);
        t.observe(f64::NAN, Location::default);
        assert!(!t.finish().pass);
    }

    #[test]
    fn empty_is_vacuous_pass() {
        let r = ResidualTracker::new("demo", "", 0.0).finish();
        assert!(r.pass && r.vacuous);
    }
}
