//! Exact information-theoretic quantities over finite categorical distributions.
//!
//! All reported values are in bits. `0 · log 0` is taken as `0`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on the total mass of a distribution.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// `-p log2 p`, zero at `p = 0`.
#[inline]
pub(crate) fn neg_plogp(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.log2()
    } else {
        0.0
    }
}

/// Entropy in bits of an unvalidated probability slice.
#[inline]
pub(crate) fn entropy_of(probs: &[f64]) -> f64 {
    probs.iter().map(|&p| neg_plogp(p)).sum()
}

fn check_probs(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::validation("distribution has no categories"));
    }
    if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::validation(format!("invalid probability {p}")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::validation(format!("probabilities sum to {total}, expected 1")));
    }
    Ok(())
}

fn check_labels(labels: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(labels.len());
    for l in labels {
        if !seen.insert(l.as_str()) {
            return Err(Error::validation(format!("duplicate label {l:?}")));
        }
    }
    Ok(())
}

fn index_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

/// A labeled probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalDistribution {
    labels: Vec<String>,
    probs: Vec<f64>,
}

impl CategoricalDistribution {
    pub fn new(labels: Vec<String>, probs: Vec<f64>) -> Result<Self> {
        if labels.len() != probs.len() {
            return Err(Error::validation(format!(
                "{} labels for {} probabilities",
                labels.len(),
                probs.len()
            )));
        }
        check_labels(&labels)?;
        check_probs(&probs)?;
        Ok(Self { labels, probs })
    }

    /// Distribution labeled `"0"`, `"1"`, ...
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        Self::new(index_labels(probs.len()), probs)
    }

    /// Normalizes non-negative weights (e.g. counts) into a distribution.
    pub fn from_weights(labels: Vec<String>, weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::validation("weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::validation("weights sum to zero"));
        }
        Self::new(labels, weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::validation("uniform distribution over zero categories"));
        }
        Ok(Self {
            labels: index_labels(k),
            probs: vec![1.0 / k as f64; k],
        })
    }

    /// Uniform distribution carrying the given labels.
    pub fn uniform_like(labels: Vec<String>) -> Result<Self> {
        let k = labels.len();
        Self::new(labels, vec![1.0 / k as f64; k])
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Number of categories with probability strictly above `threshold`.
    pub fn support_size(&self, threshold: f64) -> usize {
        self.probs.iter().filter(|&&p| p > threshold).count()
    }
}

/// Which variable of a joint distribution a quantity is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// Joint distribution over two finite variables, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDistribution {
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    probs: Vec<f64>,
}

impl JointDistribution {
    pub fn new(row_labels: Vec<String>, col_labels: Vec<String>, probs: Vec<f64>) -> Result<Self> {
        if row_labels.len() * col_labels.len() != probs.len() {
            return Err(Error::validation(format!(
                "joint of shape {}x{} given {} cells",
                row_labels.len(),
                col_labels.len(),
                probs.len()
            )));
        }
        check_labels(&row_labels)?;
        check_labels(&col_labels)?;
        check_probs(&probs)?;
        Ok(Self {
            row_labels,
            col_labels,
            probs,
        })
    }

    /// Joint from nested rows, labeled by index.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::validation("ragged joint rows"));
        }
        Self::new(index_labels(n_rows), index_labels(n_cols), rows.concat())
    }

    pub(crate) fn from_parts_unchecked(row_labels: Vec<String>, col_labels: Vec<String>, probs: Vec<f64>) -> Self {
        debug_assert_eq!(row_labels.len() * col_labels.len(), probs.len());
        Self {
            row_labels,
            col_labels,
            probs,
        }
    }

    pub fn rows(&self) -> usize {
        self.row_labels.len()
    }

    pub fn cols(&self) -> usize {
        self.col_labels.len()
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.probs[row * self.cols() + col]
    }

    pub(crate) fn row_marginal_vec(&self) -> Vec<f64> {
        self.probs.chunks(self.cols()).map(|r| r.iter().sum()).collect()
    }

    pub(crate) fn col_marginal_vec(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols()];
        for row in self.probs.chunks(self.cols()) {
            for (o, p) in out.iter_mut().zip(row) {
                *o += p;
            }
        }
        out
    }

    pub fn row_marginal(&self) -> CategoricalDistribution {
        CategoricalDistribution {
            labels: self.row_labels.clone(),
            probs: self.row_marginal_vec(),
        }
    }

    pub fn col_marginal(&self) -> CategoricalDistribution {
        CategoricalDistribution {
            labels: self.col_labels.clone(),
            probs: self.col_marginal_vec(),
        }
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut probs = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                probs[j * r + i] = self.probs[i * c + j];
            }
        }
        Self {
            row_labels: self.col_labels.clone(),
            col_labels: self.row_labels.clone(),
            probs,
        }
    }
}

/// Shannon entropy in bits.
pub fn entropy(d: &CategoricalDistribution) -> f64 {
    entropy_of(&d.probs)
}

/// Entropy of the variable opposite `given`, conditioned on `given`.
///
/// `conditional_entropy(j, Axis::Rows)` is `H(Col | Row)`.
pub fn conditional_entropy(j: &JointDistribution, given: Axis) -> f64 {
    let marginal = match given {
        Axis::Rows => j.row_marginal_vec(),
        Axis::Cols => j.col_marginal_vec(),
    };
    let c = j.cols();
    let mut h = 0.0;
    for (idx, &p) in j.probs.iter().enumerate() {
        if p > 0.0 {
            let m = match given {
                Axis::Rows => marginal[idx / c],
                Axis::Cols => marginal[idx % c],
            };
            h -= p * (p / m).log2();
        }
    }
    h.max(0.0)
}

/// `I(Row; Col) = H(Col) - H(Col | Row)`, clamped at zero.
pub fn mutual_information(j: &JointDistribution) -> f64 {
    let h_col = entropy_of(&j.col_marginal_vec());
    (h_col - conditional_entropy(j, Axis::Rows)).max(0.0)
}

/// `D_KL(q || p)` in bits; `+inf` when `q` puts mass where `p` has none.
pub fn kl_divergence(q: &CategoricalDistribution, p: &CategoricalDistribution) -> Result<f64> {
    if q.labels != p.labels {
        return Err(Error::validation(format!(
            "label mismatch: {:?} vs {:?}",
            q.labels, p.labels
        )));
    }
    Ok(kl_of(&q.probs, &p.probs))
}

pub(crate) fn kl_of(q: &[f64], p: &[f64]) -> f64 {
    let mut d = 0.0;
    for (&qi, &pi) in q.iter().zip(p) {
        if qi > 0.0 {
            if pi <= 0.0 {
                return f64::INFINITY;
            }
            d += qi * (qi / pi).log2();
        }
    }
    d.max(0.0)
}

/// Agreement-based discriminability `1 - 2^(-h)` for an entropy `h` in bits.
pub fn agr_discriminability(h: f64) -> Result<f64> {
    if !(h >= 0.0) {
        return Err(Error::validation(format!("entropy must be non-negative, got {h}")));
    }
    Ok(1.0 - (-h).exp2())
}

/// Smooth proxy for the number of nonzero entries: `Σ 1 - exp(-v²/ε)`.
pub fn smooth_l0(v: &[f64], epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::validation(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(smooth_l0_of(v, epsilon))
}

#[inline]
pub(crate) fn smooth_l0_of(v: &[f64], epsilon: f64) -> f64 {
    v.iter().map(|x| 1.0 - (-x * x / epsilon).exp()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cat(p: &[f64]) -> CategoricalDistribution {
        CategoricalDistribution::from_probs(p.to_vec()).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert_abs_diff_eq!(entropy(&cat(&[0.5, 0.5])), 1.0, epsilon = 1e-12);
        assert_eq!(entropy(&cat(&[1.0, 0.0])), 0.0);
        assert_abs_diff_eq!(
            entropy(&cat(&[0.49, 0.49, 0.02])),
            1.121_440_542_541_820_6,
            epsilon = 1e-12
        );
    }

    #[test]
    fn rejects_invalid_distributions() {
        assert!(CategoricalDistribution::from_probs(vec![0.5, 0.6]).is_err());
        assert!(CategoricalDistribution::from_probs(vec![1.5, -0.5]).is_err());
        assert!(CategoricalDistribution::new(vec!["a".into(), "a".into()], vec![0.5, 0.5]).is_err());
        assert!(CategoricalDistribution::from_probs(vec![]).is_err());
    }

    #[test]
    fn conditional_entropy_examples() {
        let diag = JointDistribution::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        assert_eq!(conditional_entropy(&diag, Axis::Rows), 0.0);
        let indep = JointDistribution::from_rows(&[vec![0.25, 0.25], vec![0.25, 0.25]]).unwrap();
        assert_abs_diff_eq!(conditional_entropy(&indep, Axis::Rows), 1.0, epsilon = 1e-12);
        let under = JointDistribution::from_rows(&[vec![0.245, 0.245], vec![0.49, 0.0], vec![0.02, 0.0]]).unwrap();
        // H(A|W) and H(W|A), A on rows.
        assert_abs_diff_eq!(
            conditional_entropy(&under, Axis::Cols),
            0.808_183_842_765_756_5,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(conditional_entropy(&under, Axis::Rows), 0.49, epsilon = 1e-12);
    }

    #[test]
    fn mutual_information_examples() {
        let indep = JointDistribution::from_rows(&[vec![0.25, 0.25], vec![0.25, 0.25]]).unwrap();
        assert_abs_diff_eq!(mutual_information(&indep), 0.0, epsilon = 1e-12);
        let diag = JointDistribution::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        assert_abs_diff_eq!(mutual_information(&diag), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn kl_examples() {
        let u4 = CategoricalDistribution::uniform(4).unwrap();
        assert_eq!(kl_divergence(&u4, &u4).unwrap(), 0.0);
        let u2 = CategoricalDistribution::uniform(2).unwrap();
        assert_abs_diff_eq!(
            kl_divergence(&u2, &cat(&[0.7, 0.3])).unwrap(),
            0.125_769_383_497_982_25,
            epsilon = 1e-12
        );
        assert_eq!(kl_divergence(&u2, &cat(&[1.0, 0.0])).unwrap(), f64::INFINITY);
        let other = CategoricalDistribution::uniform_like(vec!["x".into(), "y".into()]).unwrap();
        assert!(kl_divergence(&u2, &other).is_err());
    }

    #[test]
    fn agr_d_examples() {
        assert_eq!(agr_discriminability(0.0).unwrap(), 0.0);
        assert_eq!(agr_discriminability(1.0).unwrap(), 0.5);
        assert_abs_diff_eq!(agr_discriminability(3f64.log2()).unwrap(), 2.0 / 3.0, epsilon = 1e-12);
        assert!(agr_discriminability(-0.1).is_err());
        assert!(agr_discriminability(f64::NAN).is_err());
    }

    #[test]
    fn smooth_l0_examples() {
        assert_eq!(smooth_l0(&[0.0, 0.0, 0.0], 0.3).unwrap(), 0.0);
        assert_abs_diff_eq!(smooth_l0(&[1.0, 1.0], 1e-9).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            smooth_l0(&[0.5, 0.25, 0.25], 0.01).unwrap(),
            2.996_139_091_713_656_6,
            epsilon = 1e-12
        );
        assert!(smooth_l0(&[1.0], 0.0).is_err());
        assert!(smooth_l0(&[1.0], -1.0).is_err());
    }
}
