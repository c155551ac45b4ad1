//! Adam and the seeded descent loop shared by every optimization stage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderState;
use crate::error::{Error, Result};

/// Floor on the denominator of the relative-change test.
const REL_DENOM_FLOOR: f64 = 1e-12;

/// How an infinite `α_x` is optimized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InfinityMode {
    /// Replace `α = ∞` with a large finite weight.
    Surrogate { alpha: f64 },
    /// Minimize surprisal, then memory among near-minimizers.
    Lexicographic,
}

impl Default for InfinityMode {
    fn default() -> Self {
        InfinityMode::Surrogate { alpha: 1e3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    /// Stop once `|f_t - f_{t-1}| / |f_{t-1}|` drops below this.
    pub rel_tol: f64,
    /// Iterations before the relative-change test is armed.
    pub min_iters: usize,
    /// Also require the gradient max-norm to fall below this.
    pub grad_tol: Option<f64>,
    pub n_seeds: usize,
    pub rng_seed: u64,
    pub infinity: InfinityMode,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_iters: 20_000,
            rel_tol: 1e-3,
            min_iters: 0,
            grad_tol: Some(1e-3),
            n_seeds: 50,
            rng_seed: 0,
            infinity: InfinityMode::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::validation("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::validation("beta1 and beta2 must lie in [0, 1)"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::validation("rel_tol must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::validation("epsilon must be positive"));
        }
        if self.n_seeds == 0 {
            return Err(Error::validation("n_seeds must be at least 1"));
        }
        if self.max_iters == 0 {
            return Err(Error::validation("max_iters must be at least 1"));
        }
        if let InfinityMode::Surrogate { alpha } = self.infinity {
            if !(alpha > 0.0) || !alpha.is_finite() {
                return Err(Error::validation("surrogate alpha must be positive and finite"));
            }
        }
        Ok(())
    }

    pub fn with_seeds(mut self, n_seeds: usize) -> Self {
        self.n_seeds = n_seeds;
        self
    }
}

/// Adam with bias correction over a set of parameter blocks.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: &OptimizerConfig, shapes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = shapes.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            t: 0,
            m,
            v,
        }
    }

    pub fn step(&mut self, params: &mut [Vec<f64>], grads: &[Vec<f64>]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

/// A differentiable objective over encoder logits.
pub trait Objective: Sync {
    /// Objective value; writes the gradient into `grad` (same shape as the blocks).
    fn value_and_grad(&self, e: &EncoderState, grad: &mut [Vec<f64>]) -> f64;

    fn value(&self, e: &EncoderState) -> f64 {
        let mut g: Vec<Vec<f64>> = e.blocks().iter().map(|b| vec![0.0; b.len()]).collect();
        self.value_and_grad(e, &mut g)
    }
}

/// Outcome of one seeded descent.
#[derive(Debug, Clone, Serialize)]
pub struct DescentRun {
    pub seed: u64,
    pub state: EncoderState,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

/// Runs Adam from `init` until the relative-change test passes or `max_iters`.
pub fn descend<O: Objective + ?Sized>(
    objective: &O,
    mut state: EncoderState,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<DescentRun> {
    let mut adam = Adam::new(cfg, state.blocks().iter().map(Vec::len));
    let mut grad: Vec<Vec<f64>> = state.blocks().iter().map(|b| vec![0.0; b.len()]).collect();
    let mut trace = Vec::new();
    let mut prev = objective.value_and_grad(&state, &mut grad);
    if !prev.is_finite() {
        return Err(Error::NonFinite { iteration: 0, seed });
    }
    trace.push(prev);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        adam.step(state.blocks_mut(), &grad);
        iterations += 1;
        let f = objective.value_and_grad(&state, &mut grad);
        if !f.is_finite() {
            return Err(Error::NonFinite {
                iteration: iterations,
                seed,
            });
        }
        trace.push(f);
        let rel = (f - prev).abs() / prev.abs().max(REL_DENOM_FLOOR);
        prev = f;
        if iterations >= cfg.min_iters && rel < cfg.rel_tol && cfg.grad_tol.is_none_or(|tol| max_abs(&grad) < tol) {
            converged = true;
            break;
        }
    }
    Ok(DescentRun {
        seed,
        state,
        objective: prev,
        iterations,
        converged,
        trace,
    })
}

fn max_abs(grad: &[Vec<f64>]) -> f64 {
    grad.iter().flatten().fold(0.0, |m, g| m.max(g.abs()))
}

/// How the logits of a multi-referent encoder are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Every logit i.i.d. N(0, 1).
    Independent,
    /// One N(0, 1) block copied to every referent.
    Shared,
}

/// Random initial encoder for one seed.
pub fn initial_state(shape: (usize, usize, usize), scheme: InitScheme, seed: u64) -> EncoderState {
    let (referents, attributes, capacity) = shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match scheme {
        InitScheme::Independent => EncoderState::random(referents, attributes, capacity, &mut rng),
        InitScheme::Shared => {
            let base = EncoderState::random(1, attributes, capacity, &mut rng);
            let blocks = vec![base.block(0).to_vec(); referents];
            EncoderState::new(attributes, capacity, blocks).expect("finite normal draws")
        }
    }
}

/// Independent runs from random logits; run `i` is seeded with `rng_seed + i`.
pub fn multi_start<O, F>(
    shape: (usize, usize, usize),
    scheme: InitScheme,
    cfg: &OptimizerConfig,
    n_seeds: usize,
    make_objective: F,
) -> Result<Vec<DescentRun>>
where
    O: Objective,
    F: Fn() -> O + Sync,
{
    (0..n_seeds as u64)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.rng_seed.wrapping_add(i);
            descend(&make_objective(), initial_state(shape, scheme, seed), cfg, seed)
        })
        .collect()
}

/// Index of the best converged run; ties go to the earliest run.
pub fn best_converged(runs: &[DescentRun]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in runs.iter().enumerate() {
        if !r.converged {
            continue;
        }
        match best {
            Some(b) if runs[b].objective <= r.objective => {}
            _ => best = Some(i),
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic;

    impl Objective for Quadratic {
        fn value_and_grad(&self, e: &EncoderState, grad: &mut [Vec<f64>]) -> f64 {
            let mut f = 0.0;
            for (b, g) in e.blocks().iter().zip(grad.iter_mut()) {
                for (x, gi) in b.iter().zip(g.iter_mut()) {
                    f += (x - 1.0) * (x - 1.0);
                    *gi = 2.0 * (x - 1.0);
                }
            }
            f
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let cfg = OptimizerConfig::default();
        let mut adam = Adam::new(&cfg, [2]);
        let mut p = vec![vec![0.0, 0.0]];
        adam.step(&mut p, &[vec![3.0, -0.5]]);
        assert!((p[0][0] + 0.01).abs() < 1e-8);
        assert!((p[0][1] - 0.01).abs() < 1e-8);
    }

    #[test]
    fn descent_reaches_quadratic_minimum() {
        let cfg = OptimizerConfig {
            learning_rate: 0.05,
            rel_tol: 1e-9,
            ..Default::default()
        };
        let run = descend(&Quadratic, EncoderState::zeros(1, 1, 3), &cfg, 0).unwrap();
        assert!(run.converged);
        assert!(run.objective < 1e-6, "{}", run.objective);
        assert_eq!(run.trace.len(), run.iterations + 1);
    }

    #[test]
    fn max_iters_caps_without_convergence() {
        let cfg = OptimizerConfig {
            max_iters: 5,
            rel_tol: 1e-12,
            ..Default::default()
        };
        let run = descend(&Quadratic, EncoderState::zeros(1, 1, 3), &cfg, 0).unwrap();
        assert!(!run.converged);
        assert_eq!(run.iterations, 5);
    }

    #[test]
    fn multi_start_is_deterministic_and_ties_pick_first() {
        let cfg = OptimizerConfig {
            rel_tol: 1e-6,
            rng_seed: 11,
            ..Default::default()
        };
        let a = multi_start((1, 2, 2), InitScheme::Independent, &cfg, 3, || Quadratic).unwrap();
        let b = multi_start((1, 2, 2), InitScheme::Independent, &cfg, 3, || Quadratic).unwrap();
        assert_eq!(
            a.iter().map(|r| r.objective).collect::<Vec<_>>(),
            b.iter().map(|r| r.objective).collect::<Vec<_>>()
        );
        assert_eq!(a[2].seed, 13);

        let mut tied = a.clone();
        for r in &mut tied {
            r.objective = 1.0;
            r.converged = true;
        }
        tied[0].converged = false;
        assert_eq!(best_converged(&tied), Some(1));
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        let bad = OptimizerConfig {
            beta1: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
