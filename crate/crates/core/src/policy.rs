//! Agent decision layer.
//!
//! A linear scorer maps the transaction context to one logit per action and
//! a numerically stable softmax turns the logits into a distribution. The
//! action is then taken either greedily or by sampling with a caller seed.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ads::FEATURE_DIM;

/// Actions in logit order.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum Action {
    Approve,
    Deny,
    Flag,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Approve, Action::Deny, Action::Flag];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("logit {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("softmax needs at least one logit")]
    Empty,
    #[error("context has dimension {got}, policy expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("policy weights are malformed: {0}")]
    Malformed(String),
}

/// Raw scores, one per action.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Self, PolicyError> {
        check_finite(&values)?;
        Ok(Logits(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

fn check_finite(values: &[f64]) -> Result<(), PolicyError> {
    if values.is_empty() {
        return Err(PolicyError::Empty);
    }
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(PolicyError::NonFinite {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

/// Probability vector over actions.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionDistribution {
    probs: Vec<f64>,
}

impl DecisionDistribution {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, action: Action) -> f64 {
        self.probs[action.index()]
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    /// Draw an index by inverting the cumulative distribution.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // Rounding left a sliver above the last cumulative sum.
        self.probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Softmax with max-subtraction: `p_a = exp(z_a - m) / sum_b exp(z_b - m)`.
pub fn softmax(logits: &[f64]) -> Result<DecisionDistribution, PolicyError> {
    check_finite(logits)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(DecisionDistribution {
        probs: exps.into_iter().map(|e| e / total).collect(),
    })
}

/// Linear scorer standing in for the language model: `z = W x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyWeights {
    /// One row per action, each of feature dimension.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl PolicyWeights {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self, PolicyError> {
        let p = PolicyWeights { weights, bias };
        p.validate()?;
        Ok(p)
    }

    /// All-zero weights with the given bias.
    pub fn bias_only(bias: [f64; 3], dim: usize) -> Self {
        PolicyWeights {
            weights: vec![vec![0.0; dim]; 3],
            bias: bias.to_vec(),
        }
    }

    /// The stock policy used by the experiment harness. It approves ordinary
    /// traffic, denies very large far-away transfers and flags bursts.
    pub fn standard() -> Self {
        // Feature order: amount, hour, count_24h, geo_km, agent_interactions, duration_s.
        let approve = [0.0; FEATURE_DIM];
        let deny = [0.0005, 0.0, 0.0, 0.0005, 0.0, 0.0];
        let flag = [0.0, 0.0, 0.25, 0.0, 0.0, 0.0];
        PolicyWeights {
            weights: vec![approve.to_vec(), deny.to_vec(), flag.to_vec()],
            bias: vec![4.0, -8.0, -6.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.weights.len() != Action::ALL.len() || self.bias.len() != Action::ALL.len() {
            return Err(PolicyError::Malformed(format!(
                "expected {} rows and bias entries, got {} and {}",
                Action::ALL.len(),
                self.weights.len(),
                self.bias.len()
            )));
        }
        let dim = self.dim();
        if self.weights.iter().any(|row| row.len() != dim) {
            return Err(PolicyError::Malformed("ragged weight matrix".into()));
        }
        if self
            .weights
            .iter()
            .flatten()
            .chain(self.bias.iter())
            .any(|v| !v.is_finite())
        {
            return Err(PolicyError::Malformed("non-finite entry".into()));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self, PolicyError> {
        let p: PolicyWeights =
            serde_json::from_str(s).map_err(|e| PolicyError::Malformed(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| PolicyError::Malformed(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    pub fn compute_logits(&self, context: &[f64]) -> Result<Logits, PolicyError> {
        if context.len() != self.dim() {
            return Err(PolicyError::DimensionMismatch {
                expected: self.dim(),
                got: context.len(),
            });
        }
        let z = self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(context).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect();
        Logits::new(z)
    }
}

impl Default for PolicyWeights {
    fn default() -> Self {
        Self::standard()
    }
}

/// How [`decide`] turns a distribution into an action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionMode {
    Argmax,
    Sample(u64),
}

pub fn compute_logits(context: &[f64], policy: &PolicyWeights) -> Result<Logits, PolicyError> {
    policy.compute_logits(context)
}

pub fn decide(
    context: &[f64],
    policy: &PolicyWeights,
    mode: DecisionMode,
) -> Result<Action, PolicyError> {
    let logits = policy.compute_logits(context)?;
    let index = match mode {
        // Greedy choice on the logits directly; softmax is monotone.
        DecisionMode::Argmax => argmax(logits.values()),
        DecisionMode::Sample(seed) => {
            let dist = softmax(logits.values())?;
            dist.sample(&mut ChaCha8Rng::seed_from_u64(seed))
        }
    };
    Ok(Action::ALL[index])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_examples() {
        let u = softmax(&[0.0, 0.0, 0.0]).unwrap();
        assert!(close(u.probs(), &[1.0 / 3.0; 3], 1e-15));
        let p = softmax(&[1.0, 0.0, 0.0]).unwrap();
        assert!(close(p.probs(), &[0.576117, 0.211942, 0.211942], 1e-6));
        assert_eq!(softmax(&[42.0]).unwrap().probs(), &[1.0]);
        assert!(close(
            softmax(&[10.0, 10.0, 10.0]).unwrap().probs(),
            u.probs(),
            1e-15
        ));
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let p = softmax(&[1000.0, 999.0, -1000.0]).unwrap();
        assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.probs()[0] > p.probs()[1]);
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert_eq!(softmax(&[]), Err(PolicyError::Empty));
        assert!(matches!(
            softmax(&[0.0, f64::NAN]),
            Err(PolicyError::NonFinite { index: 1, .. })
        ));
        assert!(softmax(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn logits_examples() {
        let x = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0];
        let zero = PolicyWeights::bias_only([0.0; 3], 6);
        assert_eq!(zero.compute_logits(&x).unwrap().values(), &[0.0, 0.0, 0.0]);
        let biased = PolicyWeights::bias_only([2.0, 1.0, 0.0], 6);
        assert_eq!(
            biased.compute_logits(&x).unwrap().values(),
            &[2.0, 1.0, 0.0]
        );

        // Identity-padded 3x6 matrix against e1 picks out column one.
        let mut w = vec![vec![0.0; 6]; 3];
        for (i, row) in w.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        w[1][0] = 0.5;
        w[2][0] = -2.0;
        let p = PolicyWeights::new(w, vec![0.0; 3]).unwrap();
        let e1 = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(p.compute_logits(&e1).unwrap().values(), &[1.0, 0.5, -2.0]);

        assert_eq!(
            zero.compute_logits(&[1.0, 2.0]),
            Err(PolicyError::DimensionMismatch {
                expected: 6,
                got: 2
            })
        );
    }

    #[test]
    fn decide_examples() {
        let x = [0.0; 6];
        let approve = PolicyWeights::bias_only([10.0, 0.0, 0.0], 6);
        assert_eq!(
            decide(&x, &approve, DecisionMode::Argmax).unwrap(),
            Action::Approve
        );
        let tie = PolicyWeights::bias_only([0.0, 0.0, 0.0], 6);
        assert_eq!(
            decide(&x, &tie, DecisionMode::Argmax).unwrap(),
            Action::Approve
        );
        let flag = PolicyWeights::bias_only([0.0, 1.0, 1.5], 6);
        assert_eq!(
            decide(&x, &flag, DecisionMode::Argmax).unwrap(),
            Action::Flag
        );
    }

    #[test]
    fn sample_frequency_matches_probability() {
        let x = [0.0; 6];
        let p = PolicyWeights::bias_only([0.0, 5.0, 0.0], 6);
        let dist = softmax(p.compute_logits(&x).unwrap().values()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let draws = 10_000;
        let deny = (0..draws)
            .filter(|_| dist.sample(&mut rng) == Action::Deny.index())
            .count();
        let expected = 5f64.exp() / (5f64.exp() + 2.0);
        assert!(((deny as f64 / draws as f64) - expected).abs() < 0.01);

        // Per-call seeding through `decide` agrees with the same statistics.
        let deny = (0..draws as u64)
            .filter(|s| decide(&x, &p, DecisionMode::Sample(*s)).unwrap() == Action::Deny)
            .count();
        assert!(((deny as f64 / draws as f64) - expected).abs() < 0.01);
    }

    #[test]
    fn weights_json_roundtrip_and_validation() {
        let p = PolicyWeights::standard();
        let back = PolicyWeights::from_json(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
        assert!(PolicyWeights::from_json(r#"{"weights":[[1.0]],"bias":[0.0]}"#).is_err());
        assert!(PolicyWeights::from_json(r#"{"weights":[[1],[1,2],[1]],"bias":[0,0,0]}"#).is_err());
        assert_eq!(p.dim(), FEATURE_DIM);
    }
}
