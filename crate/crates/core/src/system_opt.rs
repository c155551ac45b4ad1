//! Three-stage lexicon optimization.
//!
//! 1. Per-referent optima `c_i*` of the instance objective.
//! 2. Simplicity: `size + β·H(W|A) + λ Σ_i (instance_i - c_i*)²`, best value `s*`.
//! 3. Discriminability: `-H(W) + λ1 (simplicity - s*)² + λ2 Σ_i (instance_i - c_i*)²`.
//!
//! `size` is the smooth L0 proxy applied to the system marginal `p(W)`.
//! `β = ∞` drops the size term and keeps consistency alone; `β = 0` drops
//! consistency.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{effective_value_count, EncoderState, LexiconSpec, Tradeoff, DEFAULT_VALUE_THRESHOLD};
use crate::error::{Error, Result};
use crate::information::{entropy_of, smooth_l0_of, CategoricalDistribution};
use crate::instance_opt::{
    instance_cost, optimize_instance_with, surprisal_weight, BlockEval, InstanceObjectiveValue, DEFAULT_REGIME_TOL,
};
use crate::optim::{multi_start, DescentRun, InfinityMode, InitScheme, Objective, OptimizerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// Weight of the simplicity penalty in stage 3.
    pub lambda1: f64,
    /// Weight of the instance penalty in stage 3.
    pub lambda2: f64,
    /// Weight of the instance penalty in stage 2.
    pub lambda: f64,
    pub epsilon_l0: f64,
    pub stage1_seeds: usize,
    pub stage2_seeds: usize,
    pub stage3_seeds: usize,
    pub optimizer: OptimizerConfig,
    /// Per-referent `α`; `None` keeps the lexicon's own values.
    pub alpha_schedule: Option<Vec<Tradeoff>>,
    /// Overrides the lexicon's `β` when set.
    pub beta: Option<Tradeoff>,
    pub value_threshold: f64,
    /// Initial logits for stages 2 and 3.
    pub init: InitScheme,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            lambda1: 100.0,
            lambda2: 100.0,
            lambda: 100.0,
            epsilon_l0: 1e-3,
            stage1_seeds: 10,
            stage2_seeds: 50,
            stage3_seeds: 50,
            optimizer: OptimizerConfig::default(),
            alpha_schedule: None,
            beta: None,
            value_threshold: DEFAULT_VALUE_THRESHOLD,
            init: InitScheme::Shared,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda", self.lambda),
            ("epsilon_l0", self.epsilon_l0),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::validation(format!("{name} must be positive, got {v}")));
            }
        }
        if self.stage1_seeds == 0 || self.stage2_seeds == 0 || self.stage3_seeds == 0 {
            return Err(Error::validation("every stage needs at least one seed"));
        }
        if !(self.value_threshold > 0.0 && self.value_threshold < 1.0) {
            return Err(Error::validation("value_threshold must lie in (0, 1)"));
        }
        self.optimizer.validate()
    }

    /// Seed counts reduced for quick runs.
    pub fn with_stage_seeds(mut self, s1: usize, s2: usize, s3: usize) -> Self {
        self.stage1_seeds = s1;
        self.stage2_seeds = s2;
        self.stage3_seeds = s3;
        self
    }

    /// The lexicon with this config's `α` schedule and `β` applied.
    pub fn apply(&self, lx: &LexiconSpec) -> Result<LexiconSpec> {
        let mut out = lx.clone();
        if let Some(alphas) = &self.alpha_schedule {
            if alphas.len() != out.referents.len() {
                return Err(Error::validation(format!(
                    "alpha schedule has {} entries for {} referents",
                    alphas.len(),
                    out.referents.len()
                )));
            }
            for (r, &a) in out.referents.iter_mut().zip(alphas) {
                r.alpha = a;
            }
        }
        if let Some(beta) = self.beta {
            out.beta = beta;
        }
        out.validate()?;
        Ok(out)
    }
}

/// Residuals of the squared penalties at the returned solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyResiduals {
    /// `|instance_i - c_i*|` per referent.
    pub instance: Vec<f64>,
    /// `|simplicity - s*|`.
    pub simplicity: f64,
}

impl PenaltyResiduals {
    pub fn max_instance(&self) -> f64 {
        self.instance.iter().copied().fold(0.0, f64::max)
    }
}

/// Per-stage bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDiagnostics {
    pub seeds: usize,
    pub converged_seeds: usize,
    pub best_seed: u64,
    pub best_objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemResult {
    pub encoder: EncoderState,
    pub p_w: CategoricalDistribution,
    pub h_w: f64,
    pub agr_d: f64,
    /// `H(W|A)` over the lexicon.
    pub consistency: f64,
    pub size_proxy: f64,
    pub effective_values: usize,
    pub per_referent: Vec<InstanceObjectiveValue>,
    /// `p(W | X = x)` per referent.
    pub per_referent_values: Vec<CategoricalDistribution>,
    pub c_stars: Vec<f64>,
    pub s_star: f64,
    pub penalties: PenaltyResiduals,
    pub stage2: Option<StageDiagnostics>,
    pub stage3: Option<StageDiagnostics>,
}

#[derive(Debug, Clone, Copy)]
enum Stage {
    Simplicity { lambda: f64 },
    Discriminability { lambda1: f64, lambda2: f64, s_star: f64 },
}

/// Quantities of a full lexicon evaluation.
#[derive(Debug, Clone)]
struct LexiconEval {
    blocks: Vec<BlockEval>,
    instance: Vec<f64>,
    joint: Vec<f64>,
    p_w: Vec<f64>,
    h_w: f64,
    consistency: f64,
    size: f64,
    simplicity: f64,
}

/// Stage objective over all referent blocks.
#[derive(Debug, Clone)]
struct SystemLoss {
    marginals: Vec<Vec<f64>>,
    weights: Vec<f64>,
    alphas: Vec<Tradeoff>,
    c_stars: Vec<f64>,
    /// `(size weight, consistency weight)` after the `β` rules.
    size_weight: f64,
    consistency_weight: f64,
    h_a: f64,
    epsilon: f64,
    infinity: InfinityMode,
    stage: Stage,
}

impl SystemLoss {
    fn new(lx: &LexiconSpec, cfg: &SystemConfig, c_stars: &[f64], stage: Stage) -> Self {
        let (size_weight, consistency_weight) = match lx.beta {
            Tradeoff::Infinite => (0.0, 1.0),
            Tradeoff::Finite(b) => (1.0, b),
        };
        let mut attr = vec![0.0; lx.attribute_count()];
        for r in &lx.referents {
            for (a, m) in attr.iter_mut().zip(r.marginal()) {
                *a += r.weight * m;
            }
        }
        Self {
            marginals: lx.referents.iter().map(|r| r.marginal().to_vec()).collect(),
            weights: lx.referent_weights(),
            alphas: lx.referents.iter().map(|r| r.alpha).collect(),
            c_stars: c_stars.to_vec(),
            size_weight,
            consistency_weight,
            h_a: entropy_of(&attr),
            epsilon: cfg.epsilon_l0,
            infinity: cfg.optimizer.infinity,
            stage,
        }
    }

    fn evaluate(&self, e: &EncoderState) -> LexiconEval {
        let (rows, cols) = (e.attributes(), e.capacity());
        let mut joint = vec![0.0; rows * cols];
        let mut p_w = vec![0.0; cols];
        let mut blocks = Vec::with_capacity(e.referents());
        let mut instance = Vec::with_capacity(e.referents());
        for (i, m) in self.marginals.iter().enumerate() {
            let mut ev = BlockEval::new(rows, cols);
            ev.evaluate(e.block(i), m);
            let w = self.weights[i];
            for (j, p) in joint.iter_mut().zip(&ev.joint) {
                *j += w * p;
            }
            for (t, p) in p_w.iter_mut().zip(&ev.p_w) {
                *t += w * p;
            }
            instance.push(instance_cost(ev.memory, ev.surprisal, self.alphas[i], self.infinity));
            blocks.push(ev);
        }
        let h_w = entropy_of(&p_w);
        let consistency = (entropy_of(&joint) - self.h_a).max(0.0);
        let size = smooth_l0_of(&p_w, self.epsilon);
        let simplicity = self.size_weight * size + self.consistency_weight * consistency;
        LexiconEval {
            blocks,
            instance,
            joint,
            p_w,
            h_w,
            consistency,
            size,
            simplicity,
        }
    }

    fn instance_penalty(&self, ev: &LexiconEval) -> f64 {
        ev.instance
            .iter()
            .zip(&self.c_stars)
            .map(|(v, c)| (v - c) * (v - c))
            .sum()
    }

    fn objective_of(&self, ev: &LexiconEval) -> f64 {
        match self.stage {
            Stage::Simplicity { lambda } => ev.simplicity + lambda * self.instance_penalty(ev),
            Stage::Discriminability {
                lambda1,
                lambda2,
                s_star,
            } => {
                let d = ev.simplicity - s_star;
                -ev.h_w + lambda1 * d * d + lambda2 * self.instance_penalty(ev)
            }
        }
    }
}

#[inline]
fn safe_log2(p: f64) -> f64 {
    if p > 0.0 {
        p.log2()
    } else {
        0.0
    }
}

impl Objective for SystemLoss {
    fn value_and_grad(&self, e: &EncoderState, grad: &mut [Vec<f64>]) -> f64 {
        let ev = self.evaluate(e);
        let cols = e.capacity();

        // Multipliers on simplicity, H(W) and each instance cost.
        let (simp_coef, hw_coef, inst_lambda) = match self.stage {
            Stage::Simplicity { lambda } => (1.0, 0.0, lambda),
            Stage::Discriminability {
                lambda1,
                lambda2,
                s_star,
            } => (2.0 * lambda1 * (ev.simplicity - s_star), -1.0, lambda2),
        };

        // d/dp(W) of the lexicon-level terms, and d/dJ of the consistency term.
        let size_coef = simp_coef * self.size_weight;
        let g_pw: Vec<f64> = ev
            .p_w
            .iter()
            .map(|&p| size_coef * (2.0 * p / self.epsilon) * (-p * p / self.epsilon).exp() - hw_coef * safe_log2(p))
            .collect();
        let cons_coef = simp_coef * self.consistency_weight;
        let g_j: Vec<f64> = ev.joint.iter().map(|&p| -cons_coef * safe_log2(p)).collect();

        let mut g_joint = vec![0.0; ev.joint.len()];
        for (i, block) in ev.blocks.iter().enumerate() {
            let w = self.weights[i];
            for (idx, g) in g_joint.iter_mut().enumerate() {
                *g = w * (g_pw[idx % cols] + g_j[idx]);
            }
            let coef = 2.0 * inst_lambda * (ev.instance[i] - self.c_stars[i]);
            match surprisal_weight(self.alphas[i], self.infinity) {
                Some(a) => block.accumulate_grad(coef, coef * a, &mut g_joint),
                None => block.accumulate_grad(0.0, coef, &mut g_joint),
            }
            block.backprop(&self.marginals[i], &g_joint, &mut grad[i]);
        }
        self.objective_of(&ev)
    }
}

/// Stage 1: best-of-N instance optimum for every referent.
pub fn stage1_referent_optima(lx: &LexiconSpec, cfg: &SystemConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let lx = cfg.apply(lx)?;
    stage1(&lx, cfg)
}

fn stage1(lx: &LexiconSpec, cfg: &SystemConfig) -> Result<Vec<f64>> {
    let opt = OptimizerConfig {
        n_seeds: cfg.stage1_seeds,
        ..cfg.optimizer.clone()
    };
    lx.referents
        .par_iter()
        .map(|r| {
            optimize_instance_with(r, lx.w_capacity, &opt, cfg.value_threshold, DEFAULT_REGIME_TOL).map(|o| o.c_star)
        })
        .collect()
}

fn run_stage(
    lx: &LexiconSpec,
    cfg: &SystemConfig,
    loss: SystemLoss,
    seeds: usize,
    seed_offset: u64,
) -> Result<(DescentRun, StageDiagnostics)> {
    let opt = OptimizerConfig {
        rng_seed: cfg.optimizer.rng_seed.wrapping_add(seed_offset),
        ..cfg.optimizer.clone()
    };
    let shape = (lx.referents.len(), lx.attribute_count(), lx.w_capacity);
    let runs = multi_start(shape, cfg.init, &opt, seeds, || loss.clone())?;
    let converged = runs.iter().filter(|r| r.converged).count();
    // Prefer converged runs; fall back to every run when none converged.
    let pool: Vec<usize> = if converged > 0 {
        (0..runs.len()).filter(|&i| runs[i].converged).collect()
    } else {
        (0..runs.len()).collect()
    };
    let best = pool
        .iter()
        .copied()
        .reduce(|b, i| if runs[i].objective < runs[b].objective { i } else { b })
        .ok_or(Error::NoConvergedRun(seeds))?;
    let run = runs.into_iter().nth(best).ok_or(Error::NoConvergedRun(seeds))?;
    let diag = StageDiagnostics {
        seeds,
        converged_seeds: converged,
        best_seed: run.seed,
        best_objective: run.objective,
        iterations: run.iterations,
    };
    Ok((run, diag))
}

// Stage seeds are offset so that stages 2 and 3 never reuse initial logits.
const STAGE2_SEED_OFFSET: u64 = 1_000_000;
const STAGE3_SEED_OFFSET: u64 = 2_000_000;

/// Stage 2: best-of-N minimum `s*` of the simplicity objective.
pub fn stage2_simplicity(lx: &LexiconSpec, cfg: &SystemConfig, c_stars: &[f64]) -> Result<f64> {
    cfg.validate()?;
    let lx = cfg.apply(lx)?;
    stage2(&lx, cfg, c_stars).map(|(run, _)| run.objective)
}

fn stage2(lx: &LexiconSpec, cfg: &SystemConfig, c_stars: &[f64]) -> Result<(DescentRun, StageDiagnostics)> {
    check_c_stars(lx, c_stars)?;
    let loss = SystemLoss::new(lx, cfg, c_stars, Stage::Simplicity { lambda: cfg.lambda });
    run_stage(lx, cfg, loss, cfg.stage2_seeds, STAGE2_SEED_OFFSET)
}

fn check_c_stars(lx: &LexiconSpec, c_stars: &[f64]) -> Result<()> {
    if c_stars.len() != lx.referents.len() {
        return Err(Error::validation(format!(
            "{} instance optima for {} referents",
            c_stars.len(),
            lx.referents.len()
        )));
    }
    Ok(())
}

/// Stage 3: maximize `H(W)` under the simplicity and instance penalties.
pub fn stage3_discriminability(
    lx: &LexiconSpec,
    cfg: &SystemConfig,
    c_stars: &[f64],
    s_star: f64,
) -> Result<SystemResult> {
    cfg.validate()?;
    let lx = cfg.apply(lx)?;
    stage3(&lx, cfg, c_stars, s_star)
}

fn stage3(lx: &LexiconSpec, cfg: &SystemConfig, c_stars: &[f64], s_star: f64) -> Result<SystemResult> {
    check_c_stars(lx, c_stars)?;
    let loss = SystemLoss::new(
        lx,
        cfg,
        c_stars,
        Stage::Discriminability {
            lambda1: cfg.lambda1,
            lambda2: cfg.lambda2,
            s_star,
        },
    );
    let (run, diag) = run_stage(lx, cfg, loss.clone(), cfg.stage3_seeds, STAGE3_SEED_OFFSET)?;
    let mut result = summarize(lx, cfg, &loss, run.state, c_stars, s_star)?;
    result.stage3 = Some(diag);
    Ok(result)
}

fn summarize(
    lx: &LexiconSpec,
    cfg: &SystemConfig,
    loss: &SystemLoss,
    encoder: EncoderState,
    c_stars: &[f64],
    s_star: f64,
) -> Result<SystemResult> {
    let ev = loss.evaluate(&encoder);
    let total: f64 = ev.p_w.iter().sum();
    let p_w = CategoricalDistribution::new(lx.value_labels(), ev.p_w.iter().map(|p| p / total).collect())?;
    let per_referent = ev
        .blocks
        .iter()
        .zip(&ev.instance)
        .map(|(b, &total)| InstanceObjectiveValue {
            memory: b.memory,
            surprisal: b.surprisal,
            total,
        })
        .collect();
    let per_referent_values = ev
        .blocks
        .iter()
        .map(|b| {
            let t: f64 = b.p_w.iter().sum();
            CategoricalDistribution::new(lx.value_labels(), b.p_w.iter().map(|p| p / t).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SystemResult {
        effective_values: effective_value_count(&p_w, cfg.value_threshold),
        p_w,
        h_w: ev.h_w,
        agr_d: 1.0 - (-ev.h_w).exp2(),
        consistency: ev.consistency,
        size_proxy: ev.size,
        per_referent,
        per_referent_values,
        penalties: PenaltyResiduals {
            instance: ev.instance.iter().zip(c_stars).map(|(v, c)| (v - c).abs()).collect(),
            simplicity: (ev.simplicity - s_star).abs(),
        },
        c_stars: c_stars.to_vec(),
        s_star,
        encoder,
        stage2: None,
        stage3: None,
    })
}

/// Runs stages 1 to 3 and records every intermediate optimum.
pub fn run_system(lx: &LexiconSpec, cfg: &SystemConfig) -> Result<SystemResult> {
    cfg.validate()?;
    let lx = cfg.apply(lx)?;
    let c_stars = stage1(&lx, cfg).map_err(|e| e.in_stage("stage 1 (instance optima)"))?;
    let (run2, diag2) = stage2(&lx, cfg, &c_stars).map_err(|e| e.in_stage("stage 2 (simplicity)"))?;
    let s_star = run2.objective;
    let mut result = stage3(&lx, cfg, &c_stars, s_star).map_err(|e| e.in_stage("stage 3 (discriminability)"))?;
    result.stage2 = Some(diag2);
    Ok(result)
}
