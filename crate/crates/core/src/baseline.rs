//! Dirichlet random-language baseline and the percentile-rank test.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::information::kl_of;

pub const DEFAULT_SAMPLES: usize = 1000;
pub const STRONG_CUTOFF: f64 = 0.05;
pub const WEAK_CUTOFF: f64 = 0.1;

const CHUNK: usize = 256;

/// Sorted KL divergences of random languages from the uniform distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSample {
    pub k: usize,
    pub n: usize,
    pub concentration: Vec<f64>,
    pub d_kl_values: Vec<f64>,
    pub rng_seed: u64,
}

impl BaselineSample {
    /// Empirical `q`-quantile of the divergences (nearest rank).
    pub fn quantile(&self, q: f64) -> f64 {
        let n = self.d_kl_values.len();
        if n == 0 {
            return f64::NAN;
        }
        let idx = ((q.clamp(0.0, 1.0) * n as f64).ceil() as usize).clamp(1, n) - 1;
        self.d_kl_values[idx]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    /// `p < 0.05`
    DoubleDagger,
    /// `0.05 <= p < 0.1`
    Dagger,
    NotSignificant,
}

impl Verdict {
    pub fn from_p(p: f64) -> Self {
        if p < STRONG_CUTOFF {
            Verdict::DoubleDagger
        } else if p < WEAK_CUTOFF {
            Verdict::Dagger
        } else {
            Verdict::NotSignificant
        }
    }

    pub fn marker(self) -> &'static str {
        match self {
            Verdict::DoubleDagger => "‡",
            Verdict::Dagger => "†",
            Verdict::NotSignificant => "",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::DoubleDagger => "double_dagger",
            Verdict::Dagger => "dagger",
            Verdict::NotSignificant => "not_significant",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub d_obs: f64,
    pub p_value: f64,
    pub verdict: Verdict,
}

/// One draw from `Gamma(shape, 1)`.
///
/// Marsaglia and Tsang's squeeze for `shape >= 1`; smaller shapes use
/// `G(shape + 1) · U^(1/shape)`. The result is returned as a natural log so
/// that tiny shapes do not underflow.
pub fn ln_gamma_draw<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let u: f64 = 1.0 - rng.random::<f64>();
        return ln_gamma_draw(shape + 1.0, rng) + u.ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u: f64 = 1.0 - rng.random::<f64>();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return (d * v).ln();
        }
    }
}

/// One draw from a symmetric Dirichlet with the given concentration.
pub fn dirichlet_draw<R: Rng + ?Sized>(k: usize, concentration: f64, rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = (0..k).map(|_| ln_gamma_draw(concentration, rng)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = p.iter().sum();
    for v in &mut p {
        *v /= total;
    }
    p
}

/// `n` languages from `Dir(1/k)` scored by `KL(uniform || draw)`.
///
/// Draws are generated in fixed chunks, each on its own stream of the
/// seeded generator, so the sample does not depend on the thread count.
pub fn sample_baseline(k: usize, n: usize, seed: u64) -> Result<BaselineSample> {
    if k < 2 {
        return Err(Error::validation(format!("baseline needs k >= 2, got {k}")));
    }
    if n == 0 {
        return Err(Error::validation("baseline needs at least one sample"));
    }
    let alpha = 1.0 / k as f64;
    let uniform = vec![alpha; k];
    let chunks = n.div_ceil(CHUNK);
    let mut d: Vec<f64> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            let uniform = &uniform;
            (0..len)
                .map(|_| kl_of(uniform, &dirichlet_draw(k, alpha, &mut rng)))
                .collect::<Vec<_>>()
        })
        .collect();
    d.sort_by(f64::total_cmp);
    Ok(BaselineSample {
        k,
        n,
        concentration: vec![alpha; k],
        d_kl_values: d,
        rng_seed: seed,
    })
}

/// One-sided empirical rank `#{d_i < d_obs} / n`.
pub fn percentile_test(d_obs: f64, b: &BaselineSample) -> Result<SignificanceResult> {
    if b.d_kl_values.is_empty() {
        return Err(Error::validation("empty baseline sample"));
    }
    if d_obs.is_nan() || d_obs < 0.0 {
        return Err(Error::validation(format!(
            "observed divergence must be >= 0, got {d_obs}"
        )));
    }
    let below = b.d_kl_values.partition_point(|&d| d < d_obs);
    let p_value = below as f64 / b.d_kl_values.len() as f64;
    Ok(SignificanceResult {
        d_obs,
        p_value,
        verdict: Verdict::from_p(p_value),
    })
}
