//! Referents, attribute marginals and the stochastic meaning-to-grammar encoder.
//!
//! For each referent `x` the encoder holds an `|A| × capacity` logit matrix;
//! row `a` is softmaxed into `q(w | a, x)` and the joint is
//! `p(a, w | x) = p(a | x) q(w | a, x)`.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::information::{CategoricalDistribution, JointDistribution, SUM_TOLERANCE};

/// Default number of grammatical value slots.
pub const DEFAULT_CAPACITY: usize = 15;

/// Default mass above which a grammatical value counts as present.
pub const DEFAULT_VALUE_THRESHOLD: f64 = 0.01;

/// A non-negative tradeoff weight that may be infinite (`α_x`, `β`).
///
/// Serialized as a number, or the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tradeoff {
    Finite(f64),
    Infinite,
}

impl Tradeoff {
    pub fn is_infinite(self) -> bool {
        matches!(self, Tradeoff::Infinite)
    }

    pub fn is_zero(self) -> bool {
        matches!(self, Tradeoff::Finite(v) if v == 0.0)
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Tradeoff::Finite(v) => Some(v),
            Tradeoff::Infinite => None,
        }
    }

    /// Numeric value, `f64::INFINITY` for the symbolic infinity.
    pub fn as_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }

    pub fn validate(self, what: &str) -> Result<()> {
        match self {
            Tradeoff::Finite(v) if !(v >= 0.0) || !v.is_finite() => Err(Error::validation(format!(
                "{what} must be a non-negative number or \"inf\", got {v}"
            ))),
            _ => Ok(()),
        }
    }
}

impl From<f64> for Tradeoff {
    fn from(v: f64) -> Self {
        if v.is_infinite() && v > 0.0 {
            Tradeoff::Infinite
        } else {
            Tradeoff::Finite(v)
        }
    }
}

impl fmt::Display for Tradeoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tradeoff::Finite(v) => write!(f, "{v}"),
            Tradeoff::Infinite => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for Tradeoff {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "+inf" => Ok(Tradeoff::Infinite),
            other => {
                let v: f64 = other
                    .parse()
                    .map_err(|_| Error::validation(format!("not a number or \"inf\": {s:?}")))?;
                let t = Tradeoff::from(v);
                t.validate("tradeoff")?;
                Ok(t)
            }
        }
    }
}

impl Serialize for Tradeoff {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Tradeoff::Finite(v) => s.serialize_f64(*v),
            Tradeoff::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Tradeoff {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct TradeoffVisitor;

        impl Visitor<'_> for TradeoffVisitor {
            type Value = Tradeoff;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a non-negative number or the string \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Tradeoff, E> {
                let t = Tradeoff::from(v);
                t.validate("tradeoff").map_err(E::custom)?;
                Ok(t)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Tradeoff, E> {
                Ok(Tradeoff::Finite(v as f64))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Tradeoff, E> {
                self.visit_f64(v as f64)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Tradeoff, E> {
                v.parse().map_err(E::custom)
            }
        }

        d.deserialize_any(TradeoffVisitor)
    }
}

/// A semantic feature and its attribute values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub labels: Vec<String>,
}

impl AttributeSpec {
    pub fn new(name: impl Into<String>, labels: Vec<String>) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            labels,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::validation(format!("attribute {:?} has no values", self.name)));
        }
        // Uniqueness is enforced by the distribution constructor.
        CategoricalDistribution::uniform_like(self.labels.clone()).map(|_| ())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One referent: its probability, attribute marginal and tradeoff `α_x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferentSpec {
    pub id: String,
    pub weight: f64,
    pub attribute_marginal: CategoricalDistribution,
    pub alpha: Tradeoff,
}

impl ReferentSpec {
    pub fn new(
        id: impl Into<String>,
        weight: f64,
        attribute_marginal: CategoricalDistribution,
        alpha: Tradeoff,
    ) -> Result<Self> {
        let r = Self {
            id: id.into(),
            weight,
            attribute_marginal,
            alpha,
        };
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(Error::validation(format!("referent {:?} has weight {weight}", r.id)));
        }
        alpha.validate("alpha")?;
        Ok(r)
    }

    /// Single referent with unit weight, as used by instance-level runs.
    pub fn single(marginal: CategoricalDistribution, alpha: Tradeoff) -> Result<Self> {
        Self::new("x", 1.0, marginal, alpha)
    }

    pub fn marginal(&self) -> &[f64] {
        self.attribute_marginal.probs()
    }
}

/// A lexicon of referents sharing one attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconSpec {
    pub attribute: AttributeSpec,
    pub referents: Vec<ReferentSpec>,
    pub beta: Tradeoff,
    pub w_capacity: usize,
}

impl LexiconSpec {
    pub fn new(
        attribute: AttributeSpec,
        referents: Vec<ReferentSpec>,
        beta: Tradeoff,
        w_capacity: usize,
    ) -> Result<Self> {
        let lx = Self {
            attribute,
            referents,
            beta,
            w_capacity,
        };
        lx.validate()?;
        Ok(lx)
    }

    /// `k` equally weighted referents sharing one marginal, one `α` each.
    pub fn uniform(
        attribute: AttributeSpec,
        marginal: &CategoricalDistribution,
        alphas: &[Tradeoff],
        beta: Tradeoff,
        w_capacity: usize,
    ) -> Result<Self> {
        let k = alphas.len();
        if k == 0 {
            return Err(Error::validation("lexicon needs at least one referent"));
        }
        let referents = alphas
            .iter()
            .enumerate()
            .map(|(i, &a)| ReferentSpec::new(format!("x{i}"), 1.0 / k as f64, marginal.clone(), a))
            .collect::<Result<Vec<_>>>()?;
        Self::new(attribute, referents, beta, w_capacity)
    }

    pub fn validate(&self) -> Result<()> {
        self.attribute.validate()?;
        if self.referents.is_empty() {
            return Err(Error::validation("lexicon needs at least one referent"));
        }
        if self.w_capacity < 1 {
            return Err(Error::validation("w_capacity must be at least 1"));
        }
        self.beta.validate("beta")?;
        for r in &self.referents {
            if r.attribute_marginal.labels() != self.attribute.labels.as_slice() {
                return Err(Error::validation(format!(
                    "referent {:?} marginal labels {:?} differ from attribute labels {:?}",
                    r.id,
                    r.attribute_marginal.labels(),
                    self.attribute.labels
                )));
            }
            r.alpha.validate("alpha")?;
        }
        let total: f64 = self.referents.iter().map(|r| r.weight).sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::validation(format!(
                "referent weights sum to {total}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn attribute_count(&self) -> usize {
        self.attribute.len()
    }

    pub fn value_labels(&self) -> Vec<String> {
        (0..self.w_capacity).map(|i| format!("w{i}")).collect()
    }

    pub fn referent_weights(&self) -> Vec<f64> {
        self.referents.iter().map(|r| r.weight).collect()
    }
}

/// `k` values evenly spaced over `[0, 5]`, endpoints included.
pub fn default_alpha_schedule(k: usize) -> Vec<Tradeoff> {
    match k {
        0 => Vec::new(),
        1 => vec![Tradeoff::Finite(0.0)],
        _ => (0..k)
            .map(|i| Tradeoff::Finite(5.0 * i as f64 / (k - 1) as f64))
            .collect(),
    }
}

/// Logits of the stochastic encoder, one `|A| × capacity` block per referent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderState {
    attributes: usize,
    capacity: usize,
    blocks: Vec<Vec<f64>>,
}

impl EncoderState {
    pub fn new(attributes: usize, capacity: usize, blocks: Vec<Vec<f64>>) -> Result<Self> {
        if attributes == 0 || capacity == 0 {
            return Err(Error::validation("encoder needs at least one attribute and one value"));
        }
        for b in &blocks {
            if b.len() != attributes * capacity {
                return Err(Error::validation(format!(
                    "logit block of length {} for shape {attributes}x{capacity}",
                    b.len()
                )));
            }
            if b.iter().any(|z| !z.is_finite()) {
                return Err(Error::validation("non-finite logit"));
            }
        }
        Ok(Self {
            attributes,
            capacity,
            blocks,
        })
    }

    pub fn zeros(referents: usize, attributes: usize, capacity: usize) -> Self {
        Self {
            attributes,
            capacity,
            blocks: vec![vec![0.0; attributes * capacity]; referents],
        }
    }

    /// I.i.d. standard normal logits.
    pub fn random<R: Rng + ?Sized>(referents: usize, attributes: usize, capacity: usize, rng: &mut R) -> Self {
        let blocks = (0..referents)
            .map(|_| {
                (0..attributes * capacity)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Self {
            attributes,
            capacity,
            blocks,
        }
    }

    pub fn attributes(&self) -> usize {
        self.attributes
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn referents(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, referent: usize) -> &[f64] {
        &self.blocks[referent]
    }

    pub fn block_mut(&mut self, referent: usize) -> &mut [f64] {
        &mut self.blocks[referent]
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    pub(crate) fn blocks_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.blocks
    }

    /// Softmaxed conditional `q(w | a)` for one referent, row-major.
    pub fn conditional(&self, referent: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.attributes * self.capacity];
        softmax_rows(&self.blocks[referent], self.capacity, &mut out);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|z| z.is_finite())
    }
}

/// Row-wise softmax of a row-major matrix with `cols` columns.
pub(crate) fn softmax_rows(logits: &[f64], cols: usize, out: &mut [f64]) {
    for (z, q) in logits.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (qi, &zi) in q.iter_mut().zip(z) {
            *qi = (zi - max).exp();
            total += *qi;
        }
        for qi in q.iter_mut() {
            *qi /= total;
        }
    }
}

/// `p(a, w | x) = p(a | x) q(w | a, x)` into `out`; also leaves `q` in `cond`.
pub(crate) fn joint_into(logits: &[f64], marginal: &[f64], cols: usize, cond: &mut [f64], out: &mut [f64]) {
    softmax_rows(logits, cols, cond);
    for (a, (q, p)) in cond.chunks(cols).zip(out.chunks_mut(cols)).enumerate() {
        let m = marginal[a];
        for (pi, qi) in p.iter_mut().zip(q) {
            *pi = m * qi;
        }
    }
}

fn check_shape(e: &EncoderState, referent: usize, r: &ReferentSpec) -> Result<()> {
    if referent >= e.referents() {
        return Err(Error::validation(format!(
            "encoder has {} referents, asked for {referent}",
            e.referents()
        )));
    }
    if r.attribute_marginal.len() != e.attributes {
        return Err(Error::validation(format!(
            "referent {:?} has {} attribute values, encoder expects {}",
            r.id,
            r.attribute_marginal.len(),
            e.attributes
        )));
    }
    Ok(())
}

/// Joint `p(A, W | X = x)` for the `referent`-th block of `e`.
///
/// Rows carry the attribute labels, so the row marginal is the referent's
/// attribute marginal by construction.
pub fn encoder_joint(e: &EncoderState, referent: usize, r: &ReferentSpec) -> Result<JointDistribution> {
    check_shape(e, referent, r)?;
    let n = e.attributes * e.capacity;
    let mut cond = vec![0.0; n];
    let mut probs = vec![0.0; n];
    joint_into(e.block(referent), r.marginal(), e.capacity, &mut cond, &mut probs);
    Ok(JointDistribution::from_parts_unchecked(
        r.attribute_marginal.labels().to_vec(),
        (0..e.capacity).map(|i| format!("w{i}")).collect(),
        probs,
    ))
}

/// Lexicon-level joint `p(A, W) = Σ_x p(x) p(A, W | x)`.
pub fn lexicon_joint(e: &EncoderState, lx: &LexiconSpec) -> Result<JointDistribution> {
    lx.validate()?;
    if e.referents() != lx.referents.len() {
        return Err(Error::validation(format!(
            "encoder covers {} referents, lexicon has {}",
            e.referents(),
            lx.referents.len()
        )));
    }
    let n = e.attributes * e.capacity;
    let mut total = vec![0.0; n];
    let mut cond = vec![0.0; n];
    let mut joint = vec![0.0; n];
    for (i, r) in lx.referents.iter().enumerate() {
        check_shape(e, i, r)?;
        joint_into(e.block(i), r.marginal(), e.capacity, &mut cond, &mut joint);
        for (t, p) in total.iter_mut().zip(&joint) {
            *t += r.weight * p;
        }
    }
    Ok(JointDistribution::from_parts_unchecked(
        lx.attribute.labels.clone(),
        lx.value_labels(),
        total,
    ))
}

/// Number of values carrying probability strictly above `threshold`.
pub fn effective_value_count(p_w: &CategoricalDistribution, threshold: f64) -> usize {
    p_w.support_size(threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gender() -> CategoricalDistribution {
        CategoricalDistribution::new(
            vec!["male".into(), "female".into(), "other".into()],
            vec![0.49, 0.49, 0.02],
        )
        .unwrap()
    }

    #[test]
    fn constant_logits_give_uniform_joint() {
        let e = EncoderState::zeros(1, 2, 2);
        let r = ReferentSpec::single(CategoricalDistribution::uniform(2).unwrap(), Tradeoff::Finite(1.0)).unwrap();
        let j = encoder_joint(&e, 0, &r).unwrap();
        for &p in j.probs() {
            assert_abs_diff_eq!(p, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn saturated_logits_pick_one_value() {
        let e = EncoderState::new(2, 2, vec![vec![10.0, -10.0, 0.0, 0.0]]).unwrap();
        let r = ReferentSpec::single(CategoricalDistribution::uniform(2).unwrap(), Tradeoff::Finite(1.0)).unwrap();
        let q = e.conditional(0);
        assert!(q[0] >= 0.999);
        let j = encoder_joint(&e, 0, &r).unwrap();
        assert!(j.get(0, 0) / 0.5 >= 0.999);
    }

    #[test]
    fn joint_preserves_attribute_marginal() {
        let mut block = vec![0.0; 3 * 15];
        for a in 0..3 {
            block[a * 15 + a] = 6.0;
        }
        let e = EncoderState::new(3, 15, vec![block]).unwrap();
        let r = ReferentSpec::single(gender(), Tradeoff::Finite(0.5)).unwrap();
        let j = encoder_joint(&e, 0, &r).unwrap();
        for (m, want) in j.row_marginal().probs().iter().zip([0.49, 0.49, 0.02]) {
            assert_abs_diff_eq!(*m, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let e = EncoderState::zeros(1, 2, 4);
        let r = ReferentSpec::single(gender(), Tradeoff::Finite(0.5)).unwrap();
        assert!(encoder_joint(&e, 0, &r).is_err());
        assert!(encoder_joint(&e, 3, &r).is_err());
        assert!(EncoderState::new(2, 2, vec![vec![0.0; 3]]).is_err());
    }

    fn attr2() -> AttributeSpec {
        AttributeSpec::new("a", vec!["0".into(), "1".into()]).unwrap()
    }

    #[test]
    fn lexicon_joint_examples() {
        let m = CategoricalDistribution::uniform(2).unwrap();
        let single = LexiconSpec::uniform(attr2(), &m, &[Tradeoff::Finite(1.0)], Tradeoff::Finite(1.0), 2).unwrap();
        let e = EncoderState::new(2, 2, vec![vec![0.3, -1.0, 2.0, 0.1]]).unwrap();
        assert_eq!(
            lexicon_joint(&e, &single).unwrap().probs(),
            encoder_joint(&e, 0, &single.referents[0]).unwrap().probs()
        );

        let two = LexiconSpec::uniform(attr2(), &m, &[Tradeoff::Finite(1.0); 2], Tradeoff::Finite(1.0), 2).unwrap();
        let e2 = EncoderState::new(2, 2, vec![e.block(0).to_vec(), e.block(0).to_vec()]).unwrap();
        let a = lexicon_joint(&e2, &two).unwrap();
        let b = encoder_joint(&e, 0, &two.referents[0]).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }

        let pm = EncoderState::new(
            2,
            2,
            vec![vec![30.0, -30.0, 30.0, -30.0], vec![-30.0, 30.0, -30.0, 30.0]],
        )
        .unwrap();
        let p_w = lexicon_joint(&pm, &two).unwrap().col_marginal();
        assert_abs_diff_eq!(p_w.probs()[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(crate::information::entropy(&p_w), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lexicon_joint_is_linear_in_weights() {
        let m = CategoricalDistribution::uniform(2).unwrap();
        let mut lx = LexiconSpec::uniform(attr2(), &m, &[Tradeoff::Finite(1.0); 2], Tradeoff::Finite(1.0), 2).unwrap();
        lx.referents[0].weight = 1.0;
        lx.referents[1].weight = 0.0;
        let e = EncoderState::new(2, 2, vec![vec![0.3, -1.0, 2.0, 0.1], vec![5.0, 0.0, 0.0, 5.0]]).unwrap();
        assert_eq!(
            lexicon_joint(&e, &lx).unwrap().probs(),
            encoder_joint(&e, 0, &lx.referents[0]).unwrap().probs()
        );
        lx.referents[1].weight = 0.5;
        assert!(lexicon_joint(&e, &lx).is_err());
    }

    #[test]
    fn effective_value_examples() {
        let d = |p: &[f64]| CategoricalDistribution::from_probs(p.to_vec()).unwrap();
        assert_eq!(effective_value_count(&d(&[0.5, 0.5, 0.0]), 0.01), 2);
        assert_eq!(
            effective_value_count(&CategoricalDistribution::uniform(15).unwrap(), 0.01),
            15
        );
        assert_eq!(effective_value_count(&d(&[0.98, 0.005, 0.015]), 0.01), 2);
    }

    #[test]
    fn tradeoff_serde() {
        let t: Tradeoff = serde_json::from_str("\"inf\"").unwrap();
        assert_eq!(t, Tradeoff::Infinite);
        let t: Tradeoff = serde_json::from_str("0.65").unwrap();
        assert_eq!(t, Tradeoff::Finite(0.65));
        let t: Tradeoff = serde_json::from_str("2").unwrap();
        assert_eq!(t, Tradeoff::Finite(2.0));
        assert!(serde_json::from_str::<Tradeoff>("-1.0").is_err());
        assert!(serde_json::from_str::<Tradeoff>("\"lots\"").is_err());
        assert_eq!(serde_json::to_string(&Tradeoff::Infinite).unwrap(), "\"inf\"");
    }

    #[test]
    fn alpha_schedule_spans_zero_to_five() {
        let s = default_alpha_schedule(5);
        assert_eq!(
            s,
            vec![0.0, 1.25, 2.5, 3.75, 5.0]
                .into_iter()
                .map(Tradeoff::Finite)
                .collect::<Vec<_>>()
        );
        assert_eq!(default_alpha_schedule(1), vec![Tradeoff::Finite(0.0)]);
    }
}
