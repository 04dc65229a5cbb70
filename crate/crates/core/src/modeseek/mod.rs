//! Small numerical laboratory for KL-regularized policy objectives.
//!
//! Covers the closed-form reward-optimal policy, forward and reverse KL
//! fitting of categorical and Gaussian policies, the set-restricted
//! mode-seeking loss, and a spread experiment contrasting it with
//! forward-KL training.

pub mod contrast;
pub mod fit;
pub mod quadrature;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use contrast::{run_contrast, ContrastConfig, ContrastReport};
pub use fit::{
    fit_policy, grad_check, CategoricalKl, Direction, FitOptions, FitResult, FittedPolicy, GaussianKl,
    MsObjective, Objective, ObjectiveKind, Target, TracePoint,
};

pub const SUM_TOL: f64 = 1e-12;

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    log_softmax(x).into_iter().map(f64::exp).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalPolicy {
    logits: Vec<f64>,
}

impl CategoricalPolicy {
    pub fn from_logits(logits: Vec<f64>) -> Result<Self> {
        if logits.is_empty() || logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::input("logits must be non-empty and finite"));
        }
        Ok(Self { logits })
    }

    /// Strictly positive probabilities only.
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        check_distribution(probs)?;
        if probs.iter().any(|&p| p <= 0.0) {
            return Err(Error::input("probabilities must be strictly positive"));
        }
        Self::from_logits(probs.iter().map(|p| p.ln()).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::from_logits(vec![0.0; n])
    }

    pub fn support_size(&self) -> usize {
        self.logits.len()
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn probs(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    pub fn log_probs(&self) -> Vec<f64> {
        log_softmax(&self.logits)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub rewards: Vec<f64>,
    pub beta: f64,
}

impl RewardSpec {
    pub fn new(rewards: Vec<f64>, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::input("beta must be positive and finite"));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::input("rewards must be finite"));
        }
        Ok(Self { rewards, beta })
    }
}

/// Equal-variance Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureTarget {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub std: f64,
}

impl GaussianMixtureTarget {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, std: f64) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() {
            return Err(Error::input("mixture needs matching, non-empty weights and means"));
        }
        if weights.iter().any(|&w| w <= 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > SUM_TOL {
            return Err(Error::input("mixture weights must be positive and sum to 1"));
        }
        if !(std > 0.0 && std.is_finite()) || means.iter().any(|m| !m.is_finite()) {
            return Err(Error::input("mixture std must be positive and means finite"));
        }
        Ok(Self { weights, means, std })
    }

    /// `0.5·N(−4, 1) + 0.5·N(4, 1)`.
    pub fn bimodal() -> Self {
        Self { weights: vec![0.5, 0.5], means: vec![-4.0, 4.0], std: 1.0 }
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }

    pub fn log_density(&self, y: f64) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.means)
            .map(|(w, m)| w.ln() + normal_log_density(y, *m, self.std))
            .collect();
        let mx = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln()
    }
}

pub fn normal_log_density(y: f64, mu: f64, sigma: f64) -> f64 {
    let z = (y - mu) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// `K` sampled responses with the model-induced and reward-induced
/// distributions restricted to them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSet {
    pub items: Vec<usize>,
    pub model_dist: Vec<f64>,
    pub reward_dist: Vec<f64>,
}

impl ResponseSet {
    pub fn new(items: Vec<usize>, model_dist: Vec<f64>, reward_dist: Vec<f64>) -> Result<Self> {
        let set = Self { items, model_dist, reward_dist };
        set.validate()?;
        Ok(set)
    }

    /// Restricted softmaxes: model log-probabilities and `r/β` over `items`.
    pub fn from_policy(items: Vec<usize>, policy: &CategoricalPolicy, reward: &RewardSpec) -> Result<Self> {
        let n = policy.support_size();
        if reward.rewards.len() != n || items.iter().any(|&i| i >= n) {
            return Err(Error::input("response items must index the policy support"));
        }
        let logits: Vec<f64> = items.iter().map(|&i| policy.logits[i]).collect();
        let scaled: Vec<f64> = items.iter().map(|&i| reward.rewards[i] / reward.beta).collect();
        Self::new(items, softmax(&logits), softmax(&scaled))
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.items.len();
        if k == 0 || self.model_dist.len() != k || self.reward_dist.len() != k {
            return Err(Error::input("response set distributions must cover exactly its items"));
        }
        check_distribution(&self.model_dist)?;
        check_distribution(&self.reward_dist)
    }
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() || p.iter().any(|&x| !(0.0..=1.0).contains(&x) || x.is_nan()) {
        return Err(Error::input("probabilities must lie in [0, 1]"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SUM_TOL * p.len().max(1) as f64 {
        return Err(Error::input(format!("probabilities sum to {s}, not 1")));
    }
    Ok(())
}

/// `π*(y) ∝ π_sft(y)·exp(r(y)/β)`, computed in log space.
pub fn optimal_policy(sft: &CategoricalPolicy, reward: &RewardSpec) -> Result<CategoricalPolicy> {
    if reward.rewards.len() != sft.support_size() {
        return Err(Error::input("reward and policy supports differ"));
    }
    let logits = sft
        .log_probs()
        .iter()
        .zip(&reward.rewards)
        .map(|(lp, r)| lp + r / reward.beta)
        .collect::<Vec<_>>();
    CategoricalPolicy::from_logits(log_softmax(&logits))
}

/// `Σ p log(p/q)` with `0 log 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::input("distributions must share a non-empty support"));
    }
    let mut sum = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi < 0.0 || qi < 0.0 || pi.is_nan() || qi.is_nan() {
            return Err(Error::input("probabilities must be non-negative"));
        }
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::input("q is zero where p has mass"));
        }
        sum += pi * (pi.ln() - qi.ln());
    }
    Ok(sum.max(0.0))
}

/// Mean over sets of `KL(model_dist ‖ reward_dist)`.
pub fn ms_loss(sets: &[ResponseSet]) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::input("ms_loss needs at least one response set"));
    }
    let mut total = 0.0;
    for s in sets {
        s.validate()?;
        total += kl_divergence(&s.model_dist, &s.reward_dist)?;
    }
    Ok(total / sets.len() as f64)
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
