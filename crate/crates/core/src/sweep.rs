//! Parameter sweeps shared by the command line and the bindings.

use serde::{Deserialize, Serialize};

use crate::config::{InstanceSweepConfig, SystemSweepConfig};
use crate::encoder::{LexiconSpec, Tradeoff};
use crate::error::Result;
use crate::instance_opt::{optimize_instance_with, InstanceOptimization, RegimeLabel};
use crate::system_opt::{run_system, SystemResult};
use crate::theorems::{
    check_corollary_product, check_entropy_bound, check_inheritance, check_instance_runs, check_value_bounds, Claim,
    FeatureCount, TheoremReport,
};

/// One `(α, seed)` row of an instance sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRow {
    pub alpha: Tradeoff,
    pub seed: u64,
    pub memory: f64,
    pub surprisal: f64,
    pub total: f64,
    pub effective_values: usize,
    pub regime: RegimeLabel,
    pub iterations: usize,
    pub converged: bool,
    pub best: bool,
}

#[derive(Debug, Clone)]
pub struct InstanceSweep {
    pub alphas: Vec<Tradeoff>,
    pub optima: Vec<InstanceOptimization>,
}

impl InstanceSweep {
    pub fn rows(&self) -> Vec<InstanceRow> {
        let mut out = Vec::new();
        for (&alpha, opt) in self.alphas.iter().zip(&self.optima) {
            for (i, r) in opt.runs.iter().enumerate() {
                out.push(InstanceRow {
                    alpha,
                    seed: r.seed,
                    memory: r.value.memory,
                    surprisal: r.value.surprisal,
                    total: r.value.total,
                    effective_values: r.effective_values,
                    regime: r.regime,
                    iterations: r.iterations,
                    converged: r.converged,
                    best: i == opt.best,
                });
            }
        }
        out
    }
}

/// Optimizes one referent at every `α` of the sweep; `α` values run in order.
pub fn run_instance_sweep(cfg: &InstanceSweepConfig) -> Result<InstanceSweep> {
    cfg.validate()?;
    let optima = cfg
        .alphas
        .iter()
        .map(|&a| {
            let r = cfg.feature.referent(a)?;
            optimize_instance_with(&r, cfg.w_capacity, &cfg.optimizer, cfg.value_threshold, cfg.regime_tol)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InstanceSweep {
        alphas: cfg.alphas.clone(),
        optima,
    })
}

/// Value-count and entropy bounds for every run of an instance sweep.
pub fn validate_instance_sweep(
    cfg: &InstanceSweepConfig,
    sweep: &InstanceSweep,
    tol: f64,
) -> Result<Vec<TheoremReport>> {
    let mut counts = TheoremReport::new(Claim::ValueBounds);
    let mut entropy = TheoremReport::new(Claim::EntropyBound);
    for (&alpha, opt) in sweep.alphas.iter().zip(&sweep.optima) {
        let r = cfg.feature.referent(alpha)?;
        let [c, e] = check_instance_runs(opt, &r, tol);
        let label = format!("alpha={alpha}");
        counts = counts.merge(c.labelled(&label));
        entropy = entropy.merge(e.labelled(&label));
    }
    Ok(vec![counts, entropy])
}

/// One `(feature, k, β)` cell of a system sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemCell {
    pub feature: String,
    pub k: usize,
    pub beta: Tradeoff,
    pub lexicon: LexiconSpec,
    pub result: SystemResult,
}

impl SystemCell {
    pub fn label(&self) -> String {
        format!("{}/k={}/beta={}", self.feature, self.k, self.beta)
    }
}

/// Summary CSV row of a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRow {
    pub feature: String,
    pub k: usize,
    pub beta: Tradeoff,
    pub attribute_values: usize,
    pub effective_values: usize,
    pub h_w: f64,
    pub agr_d: f64,
    pub consistency: f64,
    pub size_proxy: f64,
    pub s_star: f64,
    pub max_instance_residual: f64,
    pub simplicity_residual: f64,
    pub stage2_converged: usize,
    pub stage3_converged: usize,
}

/// Per-referent CSV row of a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferentRow {
    pub feature: String,
    pub k: usize,
    pub beta: Tradeoff,
    pub referent: String,
    pub alpha: Tradeoff,
    pub memory: f64,
    pub surprisal: f64,
    pub c_star: f64,
    pub effective_values: usize,
}

impl From<&SystemCell> for SystemRow {
    fn from(c: &SystemCell) -> Self {
        let r = &c.result;
        SystemRow {
            feature: c.feature.clone(),
            k: c.k,
            beta: c.beta,
            attribute_values: c.lexicon.attribute_count(),
            effective_values: r.effective_values,
            h_w: r.h_w,
            agr_d: r.agr_d,
            consistency: r.consistency,
            size_proxy: r.size_proxy,
            s_star: r.s_star,
            max_instance_residual: r.penalties.max_instance(),
            simplicity_residual: r.penalties.simplicity,
            stage2_converged: r.stage2.as_ref().map_or(0, |d| d.converged_seeds),
            stage3_converged: r.stage3.as_ref().map_or(0, |d| d.converged_seeds),
        }
    }
}

pub fn referent_rows(c: &SystemCell, threshold: f64) -> Vec<ReferentRow> {
    c.lexicon
        .referents
        .iter()
        .enumerate()
        .map(|(i, r)| ReferentRow {
            feature: c.feature.clone(),
            k: c.k,
            beta: c.beta,
            referent: r.id.clone(),
            alpha: r.alpha,
            memory: c.result.per_referent[i].memory,
            surprisal: c.result.per_referent[i].surprisal,
            c_star: c.result.c_stars[i],
            effective_values: crate::encoder::effective_value_count(&c.result.per_referent_values[i], threshold),
        })
        .collect()
}

/// Runs one cell of the grid.
pub fn run_cell(cfg: &SystemSweepConfig, feature: usize, k: usize, beta: Tradeoff) -> Result<SystemCell> {
    let f = &cfg.features[feature];
    let lexicon = f.lexicon(k, beta, cfg.w_capacity)?;
    let result = run_system(&lexicon, &cfg.system)?;
    Ok(SystemCell {
        feature: f.name.clone(),
        k,
        beta,
        lexicon,
        result,
    })
}

/// Runs every cell in grid order. Each cell parallelizes internally.
pub fn run_system_sweep(cfg: &SystemSweepConfig) -> Result<Vec<SystemCell>> {
    cfg.validate()?;
    cfg.cells()
        .into_iter()
        .map(|(f, k, b)| run_cell(cfg, f, k, b))
        .collect()
}

/// Theorem checks merged over cells, plus the product bound over features.
///
/// Inheritance is only checked in cells where some referent has `α > 0`.
pub fn validate_cells(cells: &[SystemCell], tol: f64) -> Vec<TheoremReport> {
    let mut inherit = TheoremReport::new(Claim::Inheritance);
    let mut bounds = TheoremReport::new(Claim::ValueBounds);
    let mut entropy = TheoremReport::new(Claim::EntropyBound);
    let mut features: Vec<FeatureCount> = Vec::new();
    for c in cells {
        let label = c.label();
        if c.lexicon.referents.iter().any(|r| !r.alpha.is_zero()) {
            inherit = inherit.merge(check_inheritance(&c.result, &c.lexicon, tol).labelled(&label));
        }
        bounds = bounds.merge(check_value_bounds(&c.result, &c.lexicon).labelled(&label));
        entropy = entropy.merge(check_entropy_bound(&c.result, &c.lexicon, tol).labelled(&label));
        match features.iter_mut().find(|f| f.feature == c.feature) {
            Some(f) => f.effective_values = f.effective_values.max(c.result.effective_values),
            None => features.push(FeatureCount {
                feature: c.feature.clone(),
                effective_values: c.result.effective_values,
                attribute_values: c.lexicon.attribute_count(),
            }),
        }
    }
    vec![inherit, bounds, entropy, check_corollary_product(&features)]
}
