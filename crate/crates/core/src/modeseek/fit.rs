//! Objectives with analytic gradients and a plain gradient-descent fitter.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::quadrature::rule;
use super::{log_softmax, normal_log_density, softmax, CategoricalPolicy, GaussianMixtureTarget, ResponseSet};

/// Probability floor applied to categorical targets under the reverse
/// direction, where `log target` must be finite.
pub const TARGET_FLOOR: f64 = 1e-12;

pub trait Objective {
    fn dim(&self) -> usize;

    fn value_and_grad(&self, params: &[f64]) -> (f64, Vec<f64>);

    fn value(&self, params: &[f64]) -> f64 {
        self.value_and_grad(params).0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// `KL(model ‖ target)`, mode seeking.
    Reverse,
    /// `KL(target ‖ model)`, mean seeking.
    Forward,
}

/// KL between `softmax(params)` and a fixed categorical target.
#[derive(Debug, Clone)]
pub struct CategoricalKl {
    target: Vec<f64>,
    log_target: Vec<f64>,
    direction: Direction,
}

impl CategoricalKl {
    pub fn new(target: &[f64], direction: Direction) -> Result<Self> {
        CategoricalPolicy::from_logits(vec![0.0; target.len()])?;
        super::check_distribution(target)?;
        let target: Vec<f64> = match direction {
            Direction::Forward => target.to_vec(),
            Direction::Reverse => {
                let floored: Vec<f64> = target.iter().map(|t| t.max(TARGET_FLOOR)).collect();
                let s: f64 = floored.iter().sum();
                floored.into_iter().map(|t| t / s).collect()
            }
        };
        let log_target = target.iter().map(|t| if *t > 0.0 { t.ln() } else { f64::NEG_INFINITY }).collect();
        Ok(Self { target, log_target, direction })
    }
}

impl Objective for CategoricalKl {
    fn dim(&self) -> usize {
        self.target.len()
    }

    fn value_and_grad(&self, logits: &[f64]) -> (f64, Vec<f64>) {
        let lp = log_softmax(logits);
        let p: Vec<f64> = lp.iter().map(|x| x.exp()).collect();
        match self.direction {
            Direction::Reverse => {
                let d: Vec<f64> = lp.iter().zip(&self.log_target).map(|(a, b)| a - b).collect();
                let loss: f64 = p.iter().zip(&d).map(|(pi, di)| pi * di).sum();
                let grad = p.iter().zip(&d).map(|(pi, di)| pi * (di - loss)).collect();
                (loss, grad)
            }
            Direction::Forward => {
                let loss = self
                    .target
                    .iter()
                    .zip(self.log_target.iter().zip(&lp))
                    .filter(|(t, _)| **t > 0.0)
                    .map(|(t, (lt, l))| t * (lt - l))
                    .sum();
                let grad = p.iter().zip(&self.target).map(|(pi, ti)| pi - ti).collect();
                (loss, grad)
            }
        }
    }
}

/// Set-restricted mode-seeking loss over a categorical policy: the mean
/// over sets of `KL(softmax(θ[items]) ‖ reward_dist)`.
#[derive(Debug, Clone)]
pub struct MsObjective {
    support: usize,
    sets: Vec<(Vec<usize>, Vec<f64>)>,
}

impl MsObjective {
    pub fn new(support: usize, sets: &[ResponseSet]) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::input("ms objective needs at least one response set"));
        }
        for s in sets {
            s.validate()?;
            if s.items.iter().any(|&i| i >= support) || s.reward_dist.iter().any(|&q| q <= 0.0) {
                return Err(Error::input("response set outside the support or with zero reward mass"));
            }
        }
        Ok(Self { support, sets: sets.iter().map(|s| (s.items.clone(), s.reward_dist.clone())).collect() })
    }
}

impl Objective for MsObjective {
    fn dim(&self) -> usize {
        self.support
    }

    fn value_and_grad(&self, logits: &[f64]) -> (f64, Vec<f64>) {
        let n = self.sets.len() as f64;
        let mut grad = vec![0.0; self.support];
        let mut total = 0.0;
        for (items, q) in &self.sets {
            let sub: Vec<f64> = items.iter().map(|&i| logits[i]).collect();
            let lp = log_softmax(&sub);
            let d: Vec<f64> = lp.iter().zip(q).map(|(l, qi)| l - qi.ln()).collect();
            let p: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
            let loss: f64 = p.iter().zip(&d).map(|(a, b)| a * b).sum();
            total += loss;
            for (j, &i) in items.iter().enumerate() {
                grad[i] += p[j] * (d[j] - loss) / n;
            }
        }
        (total / n, grad)
    }
}

/// KL between a single Gaussian `N(μ, σ)` with params `(μ, log σ)` and a
/// mixture, integrated by Gauss–Legendre quadrature on
/// `[min(means ∪ {μ}) − 8σ_max, max(means ∪ {μ}) + 8σ_max]`.
#[derive(Debug, Clone)]
pub struct GaussianKl {
    pub target: GaussianMixtureTarget,
    pub direction: Direction,
}

impl GaussianKl {
    pub fn interval(&self, mu: f64, sigma: f64) -> (f64, f64) {
        let lo = self.target.means.iter().copied().fold(mu, f64::min);
        let hi = self.target.means.iter().copied().fold(mu, f64::max);
        let spread = 8.0 * sigma.max(self.target.std);
        (lo - spread, hi + spread)
    }
}

impl Objective for GaussianKl {
    fn dim(&self) -> usize {
        2
    }

    fn value_and_grad(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let (mu, s) = (params[0], params[1]);
        let sigma = s.exp();
        let (lo, hi) = self.interval(mu, sigma);
        let (mut loss, mut g_mu, mut g_s) = (0.0, 0.0, 0.0);
        for (y, w) in rule().mapped(lo, hi) {
            let lq = normal_log_density(y, mu, sigma);
            let lp = self.target.log_density(y);
            let z = (y - mu) / sigma;
            let dmu = z / sigma;
            let ds = z * z - 1.0;
            match self.direction {
                Direction::Reverse => {
                    let q = lq.exp();
                    let d = lq - lp;
                    loss += w * q * d;
                    g_mu += w * q * dmu * (d + 1.0);
                    g_s += w * q * ds * (d + 1.0);
                }
                Direction::Forward => {
                    let p = lp.exp();
                    loss += w * p * (lp - lq);
                    g_mu -= w * p * dmu;
                    g_s -= w * p * ds;
                }
            }
        }
        (loss, vec![g_mu, g_s])
    }
}

/// Largest coordinate-wise discrepancy between the analytic gradient and
/// central differences, each scaled by `max(|analytic|, |numeric|, 1e-3)`.
pub fn grad_check(objective: &dyn Objective, params: &[f64], epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::input("epsilon must lie in (0, 1e-2]"));
    }
    let (_, analytic) = objective.value_and_grad(params);
    let mut worst: f64 = 0.0;
    let mut x = params.to_vec();
    for i in 0..params.len() {
        x[i] = params[i] + epsilon;
        let up = objective.value(&x);
        x[i] = params[i] - epsilon;
        let down = objective.value(&x);
        x[i] = params[i];
        let numeric = (up - down) / (2.0 * epsilon);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-3);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub loss: f64,
    pub params: Vec<f64>,
}

/// Runs `steps` updates of `θ ← θ − lr·∇L`. The trace holds the loss and
/// parameters before each update plus the final state.
pub fn descend(objective: &dyn Objective, init: Vec<f64>, steps: usize, lr: f64) -> Result<Vec<TracePoint>> {
    let mut params = init;
    let mut trace = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let (loss, grad) = objective.value_and_grad(&params);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step });
        }
        trace.push(TracePoint { step, loss, params: params.clone() });
        if step < steps {
            params.iter_mut().zip(&grad).for_each(|(p, g)| *p -= lr * g);
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Categorical(Vec<f64>),
    Mixture(GaussianMixtureTarget),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    ReverseKl,
    ForwardKl,
    MsLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Items per sampled response set (categorical `MsLoss` only).
    pub set_size: usize,
    /// Number of sampled response sets (categorical `MsLoss` only).
    pub n_sets: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { steps: 2000, learning_rate: 0.1, seed: 0, set_size: 4, n_sets: 32 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedPolicy {
    Categorical(CategoricalPolicy),
    Gaussian { mu: f64, sigma: f64 },
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub policy: FittedPolicy,
    pub trace: Vec<TracePoint>,
}

impl FitResult {
    pub fn final_loss(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |t| t.loss)
    }
}

/// Fits a categorical policy (logits) or a single Gaussian `(μ, log σ)` to
/// `target` by gradient descent.
///
/// Categorical fits start near uniform. Gaussian fits start at a point
/// drawn from the target with `σ = 1`, which is what makes the reverse
/// direction settle on one component instead of the saddle between them.
/// For a mixture target `MsLoss` reduces to the reverse direction, since
/// the response set is the whole real line.
pub fn fit_policy(target: &Target, kind: ObjectiveKind, options: &FitOptions) -> Result<FitResult> {
    if options.steps == 0 || !(options.learning_rate > 0.0 && options.learning_rate.is_finite()) {
        return Err(Error::input("steps must be ≥ 1 and learning_rate positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    match target {
        Target::Categorical(t) => {
            let n = t.len();
            let objective: Box<dyn Objective> = match kind {
                ObjectiveKind::ReverseKl => Box::new(CategoricalKl::new(t, Direction::Reverse)?),
                ObjectiveKind::ForwardKl => Box::new(CategoricalKl::new(t, Direction::Forward)?),
                ObjectiveKind::MsLoss => {
                    super::check_distribution(t)?;
                    let k = options.set_size.clamp(1, n);
                    let rewards: Vec<f64> = t.iter().map(|p| p.max(TARGET_FLOOR).ln()).collect();
                    let sets = (0..options.n_sets.max(1))
                        .map(|_| {
                            let mut items = sample(&mut rng, n, k).into_vec();
                            items.sort_unstable();
                            let r: Vec<f64> = items.iter().map(|&i| rewards[i]).collect();
                            let q = softmax(&r);
                            ResponseSet::new(items, vec![1.0 / k as f64; k], q)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Box::new(MsObjective::new(n, &sets)?)
                }
            };
            let init: Vec<f64> = (0..n).map(|_| rng.random_range(-0.1..0.1)).collect();
            let trace = descend(objective.as_ref(), init, options.steps, options.learning_rate)?;
            let logits = trace.last().expect("trace is non-empty").params.clone();
            Ok(FitResult { policy: FittedPolicy::Categorical(CategoricalPolicy::from_logits(logits)?), trace })
        }
        Target::Mixture(m) => {
            let direction = match kind {
                ObjectiveKind::ForwardKl => Direction::Forward,
                ObjectiveKind::ReverseKl | ObjectiveKind::MsLoss => Direction::Reverse,
            };
            let objective = GaussianKl { target: m.clone(), direction };
            let mu0 = sample_mixture(m, &mut rng);
            let trace = descend(&objective, vec![mu0, 0.0], options.steps, options.learning_rate)?;
            let p = &trace.last().expect("trace is non-empty").params;
            Ok(FitResult { policy: FittedPolicy::Gaussian { mu: p[0], sigma: p[1].exp() }, trace })
        }
    }
}

fn sample_mixture(m: &GaussianMixtureTarget, rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut component = m.means.len() - 1;
    for (i, w) in m.weights.iter().enumerate() {
        acc += w;
        if u < acc {
            component = i;
            break;
        }
    }
    Normal::new(m.means[component], m.std).expect("std validated positive").sample(rng)
}

/// Moving average over `window` consecutive values.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    if window <= 1 || values.len() < window {
        return values.to_vec();
    }
    values.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}
