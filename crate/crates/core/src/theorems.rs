//! Numerical checks of the inheritance and value-count results.
//!
//! Every check records a signed margin per configuration: positive means the
//! claim is violated by that amount, negative is the slack.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::encoder::{effective_value_count, LexiconSpec, ReferentSpec, DEFAULT_VALUE_THRESHOLD};
use crate::information::{entropy_of, CategoricalDistribution};
use crate::instance_opt::InstanceOptimization;
use crate::system_opt::SystemResult;

pub const DEFAULT_TOL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Claim {
    /// Some referent subset has `H(A|W, x) < H(A|x)`, or the lexicon uses one value.
    Inheritance,
    /// Per-referent and system value counts bounded by attribute counts.
    ValueBounds,
    /// `H(W|x) <= H(A|x)` per referent.
    EntropyBound,
    /// Product of per-feature value counts bounded by the product of attribute counts.
    CorollaryProduct,
}

impl Claim {
    pub fn as_str(self) -> &'static str {
        match self {
            Claim::Inheritance => "inheritance",
            Claim::ValueBounds => "value_bounds",
            Claim::EntropyBound => "entropy_bound",
            Claim::CorollaryProduct => "corollary_product",
        }
    }
}

impl fmt::Display for Claim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub config: String,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub claim: Claim,
    pub configurations: usize,
    pub violations: Vec<Violation>,
    /// Largest signed margin over all configurations.
    pub max_margin: f64,
    pub passed: bool,
}

impl TheoremReport {
    pub fn new(claim: Claim) -> Self {
        Self {
            claim,
            configurations: 0,
            violations: Vec::new(),
            max_margin: f64::NEG_INFINITY,
            passed: true,
        }
    }

    /// Records one configuration with its signed margin.
    pub fn record(&mut self, config: impl Into<String>, margin: f64) {
        self.configurations += 1;
        if margin.is_nan() || margin > self.max_margin {
            self.max_margin = margin;
        }
        if margin.is_nan() || margin > 0.0 {
            self.violations.push(Violation {
                config: config.into(),
                margin,
            });
            self.passed = false;
        }
    }

    /// Combines reports of the same claim over disjoint configurations.
    pub fn merge(mut self, other: TheoremReport) -> Self {
        debug_assert_eq!(self.claim, other.claim);
        self.configurations += other.configurations;
        self.violations.extend(other.violations);
        if other.max_margin.is_nan() || other.max_margin > self.max_margin {
            self.max_margin = other.max_margin;
        }
        self.passed = self.violations.is_empty();
        self
    }

    /// Prefixes every violation's configuration with `label`.
    pub fn labelled(mut self, label: &str) -> Self {
        for v in &mut self.violations {
            v.config = format!("{label}/{}", v.config);
        }
        self
    }
}

/// Fixed-width text table, one line per report.
pub fn render_table(reports: &[TheoremReport]) -> String {
    let mut out = format!(
        "{:<18} {:>8} {:>10} {:>12}  {}\n",
        "claim", "configs", "violations", "max_margin", "status"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<18} {:>8} {:>10} {:>12.6}  {}\n",
            r.claim.as_str(),
            r.configurations,
            r.violations.len(),
            r.max_margin,
            if r.passed { "PASS" } else { "FAIL" }
        ));
        for v in &r.violations {
            out.push_str(&format!("    {} margin={:.6}\n", v.config, v.margin));
        }
    }
    out
}

fn support(r: &ReferentSpec) -> usize {
    attribute_support(&r.attribute_marginal)
}

fn shape_mismatch(claim: Claim, result: &SystemResult, lx: &LexiconSpec) -> Option<TheoremReport> {
    let n = lx.referents.len();
    if result.per_referent.len() == n && result.per_referent_values.len() == n {
        return None;
    }
    let mut report = TheoremReport::new(claim);
    report.record("referent count mismatch", f64::INFINITY);
    Some(report)
}

/// Semantic inheritance on some referent, or a single-valued lexicon.
pub fn check_inheritance(result: &SystemResult, lx: &LexiconSpec, tol: f64) -> TheoremReport {
    if let Some(r) = shape_mismatch(Claim::Inheritance, result, lx) {
        return r;
    }
    let mut report = TheoremReport::new(Claim::Inheritance);
    if result.effective_values == 1 {
        report.record("single value", -1.0);
        return report;
    }
    let best = lx
        .referents
        .iter()
        .zip(&result.per_referent)
        .map(|(r, v)| entropy_of(r.marginal()) - v.surprisal)
        .fold(f64::NEG_INFINITY, f64::max);
    report.record("best referent reduction", tol - best);
    report
}

/// Per-referent value counts against the attribute support, and the system count against `|A|`.
pub fn check_value_bounds(result: &SystemResult, lx: &LexiconSpec) -> TheoremReport {
    if let Some(r) = shape_mismatch(Claim::ValueBounds, result, lx) {
        return r;
    }
    let mut report = TheoremReport::new(Claim::ValueBounds);
    for (r, values) in lx.referents.iter().zip(&result.per_referent_values) {
        let count = effective_value_count(values, DEFAULT_VALUE_THRESHOLD);
        report.record(format!("referent {}", r.id), count as f64 - support(r) as f64);
    }
    report.record("system", result.effective_values as f64 - lx.attribute_count() as f64);
    report
}

/// `H(W|x) <= H(A|x) + tol` per referent.
pub fn check_entropy_bound(result: &SystemResult, lx: &LexiconSpec, tol: f64) -> TheoremReport {
    if let Some(r) = shape_mismatch(Claim::EntropyBound, result, lx) {
        return r;
    }
    let mut report = TheoremReport::new(Claim::EntropyBound);
    for (r, v) in lx.referents.iter().zip(&result.per_referent) {
        report.record(format!("referent {}", r.id), v.memory - entropy_of(r.marginal()) - tol);
    }
    report
}

/// Value count and entropy bounds for every run of an instance sweep.
pub fn check_instance_runs(opt: &InstanceOptimization, r: &ReferentSpec, tol: f64) -> [TheoremReport; 2] {
    let mut counts = TheoremReport::new(Claim::ValueBounds);
    let mut entropy = TheoremReport::new(Claim::EntropyBound);
    let h_a = entropy_of(r.marginal());
    for run in &opt.runs {
        let label = format!("seed {}", run.seed);
        counts.record(label.clone(), run.effective_values as f64 - support(r) as f64);
        entropy.record(label, run.value.memory - h_a - tol);
    }
    [counts, entropy]
}

/// One feature's contribution to the product bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCount {
    pub feature: String,
    pub effective_values: usize,
    pub attribute_values: usize,
}

/// `Π |W_i| <= Π |A_i|`; per-feature violations are flagged individually.
pub fn check_corollary_product(features: &[FeatureCount]) -> TheoremReport {
    let mut report = TheoremReport::new(Claim::CorollaryProduct);
    for f in features {
        if f.effective_values > f.attribute_values {
            report.record(
                format!("feature {}", f.feature),
                f.effective_values as f64 - f.attribute_values as f64,
            );
        }
    }
    let w: f64 = features.iter().map(|f| f.effective_values as f64).product();
    let a: f64 = features.iter().map(|f| f.attribute_values as f64).product();
    report.record("product", w - a);
    report
}

/// Attribute-marginal support used by the bounds.
///
/// Attributes above the value threshold each count once. Attributes at or
/// below it can still merge into values that clear the threshold: pooled mass
/// `m` allows at most `ceil(m / threshold) - 1` of them. Never exceeds the
/// exact support.
pub fn attribute_support(marginal: &CategoricalDistribution) -> usize {
    let t = DEFAULT_VALUE_THRESHOLD;
    let p = marginal.probs();
    let above = p.iter().filter(|&&x| x > t).count();
    let below: Vec<f64> = p.iter().copied().filter(|&x| x > 0.0 && x <= t).collect();
    let pooled = ((below.iter().sum::<f64>() / t - 1e-9).ceil() as usize).saturating_sub(1);
    above + pooled.min(below.len())
}
