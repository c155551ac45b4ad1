//! Per-referent memory/surprisal tradeoff: objective, analytic gradient,
//! multi-start Adam optimization and regime classification.

use serde::{Deserialize, Serialize};

use crate::encoder::{effective_value_count, joint_into, EncoderState, ReferentSpec, Tradeoff};
use crate::error::{Error, Result};
use crate::information::{entropy_of, CategoricalDistribution};
use crate::optim::{descend, multi_start, DescentRun, InfinityMode, InitScheme, Objective, OptimizerConfig};

/// Default tolerance (bits) for regime membership.
pub const DEFAULT_REGIME_TOL: f64 = 0.01;

/// Squared-penalty weight holding surprisal at its minimum in the second
/// lexicographic phase.
const LEXICOGRAPHIC_PENALTY: f64 = 1e3;

/// Memory `H(W|X=x)` and surprisal `H(A|W,X=x)` of one referent, in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceObjectiveValue {
    pub memory: f64,
    pub surprisal: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeLabel {
    Neutralization,
    Underspecification,
    FullSpecification,
}

impl RegimeLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            RegimeLabel::Neutralization => "neutralization",
            RegimeLabel::Underspecification => "underspecification",
            RegimeLabel::FullSpecification => "full_specification",
        }
    }
}

impl std::fmt::Display for RegimeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Weight on surprisal used when optimizing, given the infinity handling.
///
/// `None` means lexicographic treatment.
pub(crate) fn surprisal_weight(alpha: Tradeoff, mode: InfinityMode) -> Option<f64> {
    match (alpha, mode) {
        (Tradeoff::Finite(a), _) => Some(a),
        (Tradeoff::Infinite, InfinityMode::Surrogate { alpha }) => Some(alpha),
        (Tradeoff::Infinite, InfinityMode::Lexicographic) => None,
    }
}

/// Instance cost under the optimizer's treatment of infinite `α`.
pub(crate) fn instance_cost(memory: f64, surprisal: f64, alpha: Tradeoff, mode: InfinityMode) -> f64 {
    match surprisal_weight(alpha, mode) {
        Some(a) => memory + a * surprisal,
        None => surprisal,
    }
}

/// Scratch buffers and intermediate quantities for one referent block.
#[derive(Debug, Clone)]
pub(crate) struct BlockEval {
    pub cols: usize,
    pub cond: Vec<f64>,
    pub joint: Vec<f64>,
    pub p_w: Vec<f64>,
    pub memory: f64,
    pub surprisal: f64,
}

impl BlockEval {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            cols,
            cond: vec![0.0; rows * cols],
            joint: vec![0.0; rows * cols],
            p_w: vec![0.0; cols],
            memory: 0.0,
            surprisal: 0.0,
        }
    }

    pub fn evaluate(&mut self, logits: &[f64], marginal: &[f64]) {
        joint_into(logits, marginal, self.cols, &mut self.cond, &mut self.joint);
        self.p_w.iter_mut().for_each(|p| *p = 0.0);
        for row in self.joint.chunks(self.cols) {
            for (pw, p) in self.p_w.iter_mut().zip(row) {
                *pw += p;
            }
        }
        let h_w = entropy_of(&self.p_w);
        let h_aw = entropy_of(&self.joint);
        self.memory = h_w;
        self.surprisal = (h_aw - h_w).max(0.0);
    }

    /// Adds `d(w_mem·memory + w_sur·surprisal)/dP` into `g_joint`, up to
    /// per-row constants (which the softmax backward pass removes).
    pub fn accumulate_grad(&self, w_mem: f64, w_sur: f64, g_joint: &mut [f64]) {
        let c_w = w_mem - w_sur;
        let log_pw: Vec<f64> = self.p_w.iter().map(|&p| safe_log2(p)).collect();
        for (idx, (g, &p)) in g_joint.iter_mut().zip(&self.joint).enumerate() {
            *g -= c_w * log_pw[idx % self.cols] + w_sur * safe_log2(p);
        }
    }

    /// Backward pass through `P[a,w] = m_a softmax(z_a)[w]`.
    pub fn backprop(&self, marginal: &[f64], g_joint: &[f64], g_logits: &mut [f64]) {
        let cols = self.cols;
        for (a, ((q, gp), gz)) in self
            .cond
            .chunks(cols)
            .zip(g_joint.chunks(cols))
            .zip(g_logits.chunks_mut(cols))
            .enumerate()
        {
            let m = marginal[a];
            let mean: f64 = q.iter().zip(gp).map(|(qi, gi)| qi * gi).sum();
            for ((gzi, qi), gi) in gz.iter_mut().zip(q).zip(gp) {
                *gzi = m * qi * (gi - mean);
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

fn check(e: &EncoderState, r: &ReferentSpec) -> Result<()> {
    if e.referents() != 1 {
        return Err(Error::validation(format!(
            "instance-level encoder must hold one referent block, found {}",
            e.referents()
        )));
    }
    if e.attributes() != r.attribute_marginal.len() {
        return Err(Error::validation(format!(
            "encoder has {} attribute rows, referent marginal has {}",
            e.attributes(),
            r.attribute_marginal.len()
        )));
    }
    Ok(())
}

fn memory_surprisal(e: &EncoderState, r: &ReferentSpec) -> Result<(f64, f64)> {
    check(e, r)?;
    let mut ev = BlockEval::new(e.attributes(), e.capacity());
    ev.evaluate(e.block(0), r.marginal());
    Ok((ev.memory, ev.surprisal))
}

/// Memory, surprisal and `memory + α·surprisal`; for `α = ∞` the total is
/// the surprisal alone.
pub fn instance_objective(e: &EncoderState, r: &ReferentSpec) -> Result<InstanceObjectiveValue> {
    instance_objective_with(e, r, InfinityMode::Lexicographic)
}

/// As [`instance_objective`], with an explicit treatment of `α = ∞`.
pub fn instance_objective_with(
    e: &EncoderState,
    r: &ReferentSpec,
    mode: InfinityMode,
) -> Result<InstanceObjectiveValue> {
    let (memory, surprisal) = memory_surprisal(e, r)?;
    Ok(InstanceObjectiveValue {
        memory,
        surprisal,
        total: instance_cost(memory, surprisal, r.alpha, mode),
    })
}

/// Exact gradient of `memory + α·surprisal` w.r.t. every logit. Requires finite `α`.
pub fn gradient(e: &EncoderState, r: &ReferentSpec) -> Result<Vec<f64>> {
    let alpha = r
        .alpha
        .finite()
        .ok_or_else(|| Error::validation("gradient requires a finite alpha"))?;
    check(e, r)?;
    let obj = InstanceLoss::weighted(r.marginal().to_vec(), 1.0, alpha);
    let mut g = vec![vec![0.0; e.block(0).len()]];
    obj.value_and_grad(e, &mut g);
    Ok(g.pop().unwrap_or_default())
}

/// `w_mem·memory + w_sur·surprisal + penalty·(surprisal - target)²` for one block.
#[derive(Debug, Clone)]
pub(crate) struct InstanceLoss {
    marginal: Vec<f64>,
    w_mem: f64,
    w_sur: f64,
    penalty: Option<(f64, f64)>,
}

impl InstanceLoss {
    pub fn weighted(marginal: Vec<f64>, w_mem: f64, w_sur: f64) -> Self {
        Self {
            marginal,
            w_mem,
            w_sur,
            penalty: None,
        }
    }
}

impl Objective for InstanceLoss {
    fn value_and_grad(&self, e: &EncoderState, grad: &mut [Vec<f64>]) -> f64 {
        let mut ev = BlockEval::new(e.attributes(), e.capacity());
        ev.evaluate(e.block(0), &self.marginal);
        let mut w_sur = self.w_sur;
        let mut f = self.w_mem * ev.memory + self.w_sur * ev.surprisal;
        if let Some((mu, target)) = self.penalty {
            let d = ev.surprisal - target;
            f += mu * d * d;
            w_sur += 2.0 * mu * d;
        }
        let mut g_joint = vec![0.0; ev.joint.len()];
        ev.accumulate_grad(self.w_mem, w_sur, &mut g_joint);
        ev.backprop(&self.marginal, &g_joint, &mut grad[0]);
        f
    }
}

/// One seed's converged (or capped) instance-level run.
#[derive(Debug, Clone, Serialize)]
pub struct InstanceRun {
    pub seed: u64,
    pub state: EncoderState,
    pub value: InstanceObjectiveValue,
    /// Final value of the optimized objective.
    pub objective: f64,
    pub effective_values: usize,
    pub regime: RegimeLabel,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

/// Result of a multi-start instance optimization.
#[derive(Debug, Clone, Serialize)]
pub struct InstanceOptimization {
    pub runs: Vec<InstanceRun>,
    pub best: usize,
    /// Best-of-N optimum of the optimized instance cost.
    pub c_star: f64,
}

impl InstanceOptimization {
    pub fn best_run(&self) -> &InstanceRun {
        &self.runs[self.best]
    }

    pub fn state(&self) -> &EncoderState {
        &self.best_run().state
    }

    pub fn trace(&self) -> &[f64] {
        &self.best_run().trace
    }
}

/// `p(W | X = x)` of a single-referent encoder.
pub fn value_distribution(e: &EncoderState, r: &ReferentSpec) -> Result<CategoricalDistribution> {
    check(e, r)?;
    let mut ev = BlockEval::new(e.attributes(), e.capacity());
    ev.evaluate(e.block(0), r.marginal());
    let total: f64 = ev.p_w.iter().sum();
    let probs = ev.p_w.iter().map(|p| p / total).collect();
    CategoricalDistribution::from_probs(probs)
}

fn summarize(
    run: DescentRun,
    r: &ReferentSpec,
    mode: InfinityMode,
    threshold: f64,
    regime_tol: f64,
) -> Result<InstanceRun> {
    let value = instance_objective_with(&run.state, r, mode)?;
    let p_w = value_distribution(&run.state, r)?;
    let regime = classify_values(value.memory, value.surprisal, regime_tol);
    Ok(InstanceRun {
        seed: run.seed,
        value,
        objective: instance_cost(value.memory, value.surprisal, r.alpha, mode),
        effective_values: effective_value_count(&p_w, threshold),
        regime,
        iterations: run.iterations,
        converged: run.converged,
        trace: run.trace,
        state: run.state,
    })
}

/// Multi-start Adam on the instance objective; returns every run and the best
/// converged one.
pub fn optimize_instance(r: &ReferentSpec, w_capacity: usize, cfg: &OptimizerConfig) -> Result<InstanceOptimization> {
    optimize_instance_with(
        r,
        w_capacity,
        cfg,
        crate::encoder::DEFAULT_VALUE_THRESHOLD,
        DEFAULT_REGIME_TOL,
    )
}

pub fn optimize_instance_with(
    r: &ReferentSpec,
    w_capacity: usize,
    cfg: &OptimizerConfig,
    value_threshold: f64,
    regime_tol: f64,
) -> Result<InstanceOptimization> {
    cfg.validate()?;
    if w_capacity == 0 {
        return Err(Error::validation("w_capacity must be at least 1"));
    }
    let marginal = r.marginal().to_vec();
    let shape = (1, marginal.len(), w_capacity);
    let raw = match surprisal_weight(r.alpha, cfg.infinity) {
        Some(a) => multi_start(shape, InitScheme::Independent, cfg, cfg.n_seeds, || {
            InstanceLoss::weighted(marginal.clone(), 1.0, a)
        })?,
        None => {
            let phase1 = multi_start(shape, InitScheme::Independent, cfg, cfg.n_seeds, || {
                InstanceLoss::weighted(marginal.clone(), 0.0, 1.0)
            })?;
            phase1
                .into_iter()
                .map(|run| {
                    let (_, target) = memory_surprisal(&run.state, r)?;
                    let loss = InstanceLoss {
                        marginal: marginal.clone(),
                        w_mem: 1.0,
                        w_sur: 0.0,
                        penalty: Some((LEXICOGRAPHIC_PENALTY, target)),
                    };
                    let mut second = descend(&loss, run.state, cfg, run.seed)?;
                    second.converged &= run.converged;
                    second.iterations += run.iterations;
                    let mut trace = run.trace;
                    trace.extend(second.trace);
                    second.trace = trace;
                    Ok(second)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let runs = raw
        .into_iter()
        .map(|run| summarize(run, r, cfg.infinity, value_threshold, regime_tol))
        .collect::<Result<Vec<_>>>()?;
    let best = best_instance(&runs).ok_or(Error::NoConvergedRun(runs.len()))?;
    Ok(InstanceOptimization {
        c_star: runs[best].objective,
        best,
        runs,
    })
}

fn best_instance(runs: &[InstanceRun]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in runs.iter().enumerate() {
        if r.converged && best.is_none_or(|b| r.objective < runs[b].objective) {
            best = Some(i);
        }
    }
    best
}

fn classify_values(memory: f64, surprisal: f64, tol_bits: f64) -> RegimeLabel {
    if memory < tol_bits {
        RegimeLabel::Neutralization
    } else if surprisal < tol_bits {
        RegimeLabel::FullSpecification
    } else {
        RegimeLabel::Underspecification
    }
}

/// Encoding regime of a converged single-referent encoder.
pub fn classify_regime(e: &EncoderState, r: &ReferentSpec, tol_bits: f64) -> Result<RegimeLabel> {
    let (memory, surprisal) = memory_surprisal(e, r)?;
    Ok(classify_values(memory, surprisal, tol_bits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::information::entropy;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gender() -> CategoricalDistribution {
        CategoricalDistribution::from_probs(vec![0.49, 0.49, 0.02]).unwrap()
    }

    fn referent(m: CategoricalDistribution, alpha: f64) -> ReferentSpec {
        ReferentSpec::single(m, Tradeoff::from(alpha)).unwrap()
    }

    /// Logits that send every attribute row to one chosen column.
    fn deterministic(map: &[usize], cap: usize) -> EncoderState {
        let mut b = vec![-40.0; map.len() * cap];
        for (a, &w) in map.iter().enumerate() {
            b[a * cap + w] = 40.0;
        }
        EncoderState::new(map.len(), cap, vec![b]).unwrap()
    }

    #[test]
    fn objective_examples() {
        let r = referent(gender(), 0.0);
        let v = instance_objective(&deterministic(&[0, 0, 0], 15), &r).unwrap();
        assert_abs_diff_eq!(v.memory, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(v.surprisal, 1.121_440_542_541_820_6, epsilon = 1e-9);
        assert_abs_diff_eq!(v.total, 0.0, epsilon = 1e-9);

        let r = referent(gender(), 2.0);
        let v = instance_objective(&deterministic(&[0, 1, 2], 15), &r).unwrap();
        assert_abs_diff_eq!(v.memory, entropy(&gender()), epsilon = 1e-9);
        assert_abs_diff_eq!(v.surprisal, 0.0, epsilon = 1e-9);

        let alpha = 0.7;
        let r = referent(CategoricalDistribution::uniform(2).unwrap(), alpha);
        let v = instance_objective(&EncoderState::zeros(1, 2, 2), &r).unwrap();
        assert_abs_diff_eq!(v.memory, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v.surprisal, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v.total, 1.0 + alpha, epsilon = 1e-12);
    }

    #[test]
    fn infinite_alpha_reports_surprisal_only() {
        let r = ReferentSpec::single(gender(), Tradeoff::Infinite).unwrap();
        let v = instance_objective(&EncoderState::zeros(1, 3, 4), &r).unwrap();
        assert_eq!(v.total, v.surprisal);
        let s = instance_objective_with(&EncoderState::zeros(1, 3, 4), &r, InfinityMode::default()).unwrap();
        assert_abs_diff_eq!(s.total, s.memory + 1e3 * s.surprisal, epsilon = 1e-9);
        assert!(gradient(&EncoderState::zeros(1, 3, 4), &r).is_err());
    }

    #[test]
    fn gradient_rows_are_centered() {
        let r = referent(CategoricalDistribution::uniform(2).unwrap(), 1.0);
        let g = gradient(&EncoderState::zeros(1, 2, 2), &r).unwrap();
        for row in g.chunks(2) {
            assert!(row.iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for alpha in [0.0, 0.3, 1.7] {
            let r = referent(gender(), alpha);
            let e = EncoderState::random(1, 3, 6, &mut rng);
            let g = gradient(&e, &r).unwrap();
            let h = 1e-5;
            for (i, &gi) in g.iter().enumerate() {
                let mut plus = e.clone();
                plus.block_mut(0)[i] += h;
                let mut minus = e.clone();
                minus.block_mut(0)[i] -= h;
                let fd = (instance_objective(&plus, &r).unwrap().total - instance_objective(&minus, &r).unwrap().total)
                    / (2.0 * h);
                assert!(
                    (fd - gi).abs() <= 1e-6 + 1e-4 * fd.abs(),
                    "alpha {alpha} i {i}: {fd} vs {gi}"
                );
            }
        }
    }

    #[test]
    fn regime_thresholds() {
        let r = referent(gender(), 0.5);
        assert_eq!(
            classify_regime(&deterministic(&[0, 0, 0], 4), &r, 0.01).unwrap(),
            RegimeLabel::Neutralization
        );
        assert_eq!(
            classify_regime(&deterministic(&[0, 1, 2], 4), &r, 0.01).unwrap(),
            RegimeLabel::FullSpecification
        );
        assert_eq!(
            classify_regime(&deterministic(&[0, 0, 1], 4), &r, 0.01).unwrap(),
            RegimeLabel::Underspecification
        );
        assert_eq!(
            classify_regime(&EncoderState::zeros(1, 3, 4), &r, 0.01).unwrap(),
            RegimeLabel::Underspecification
        );
    }

    #[test]
    fn point_mass_marginal_optimizes_to_zero() {
        let m = CategoricalDistribution::from_probs(vec![1.0, 0.0, 0.0]).unwrap();
        let cfg = OptimizerConfig::default().with_seeds(3);
        let out = optimize_instance(&referent(m, 2.0), 15, &cfg).unwrap();
        assert!(out.c_star < 0.01, "{}", out.c_star);
    }
}
