//! Spread experiment: how tightly does training concentrate probability on
//! the best response of a sampled set, under the set-restricted
//! mode-seeking loss versus forward KL?
//!
//! Each instance has a reward over `support` ordered responses with a main
//! peak and a lower secondary peak. The reference policy is a discretized
//! Gaussian near the main peak, `set_size` responses are drawn from it
//! without replacement, and a discretized Gaussian policy `(μ, log σ)` is
//! trained on that set from the reference parameters. The statistic is the
//! trained set-restricted log-probability of the set's highest-reward item.

use rand::seq::index::sample_weighted;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::pool;
use crate::error::{Error, Result};

use super::fit::{descend, Direction, Objective};
use super::{log_softmax, softmax, CategoricalPolicy, ResponseSet, RewardSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastConfig {
    pub support: usize,
    pub set_size: usize,
    pub beta: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub sft_sigma: f64,
    pub instances: usize,
    pub seed: u64,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        Self {
            support: 24,
            set_size: 12,
            beta: 1.0,
            steps: 1500,
            learning_rate: 0.1,
            sft_sigma: 4.0,
            instances: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContrastInstance {
    pub reward: RewardSpec,
    pub sft_mu: f64,
    pub sft: CategoricalPolicy,
    pub items: Vec<usize>,
}

fn gaussian_logits(positions: impl Iterator<Item = f64>, mu: f64, sigma: f64) -> Vec<f64> {
    positions.map(|y| -0.5 * ((y - mu) / sigma).powi(2)).collect()
}

pub fn sample_instance(config: &ContrastConfig, seed: u64) -> Result<ContrastInstance> {
    let n = config.support;
    if n < 13 || config.set_size < 2 || config.set_size > n {
        return Err(Error::input("contrast needs support ≥ 13 and 2 ≤ set_size ≤ support"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let main = rng.random_range(3..n - 3) as f64;
    let second = loop {
        let b = rng.random_range(0..n) as f64;
        if (b - main).abs() >= 6.0 {
            break b;
        }
    };
    let drop: f64 = rng.random_range(0.5..1.5);
    let rewards = (0..n)
        .map(|y| {
            let y = y as f64;
            (3.0 - 0.5 * (y - main).powi(2)).max(3.0 - drop - 0.5 * (y - second).powi(2))
        })
        .collect();
    let sft_mu = main + rng.random_range(-2.0..2.0);
    let sft = CategoricalPolicy::from_logits(log_softmax(&gaussian_logits(
        (0..n).map(|y| y as f64),
        sft_mu,
        config.sft_sigma,
    )))?;
    let probs = sft.probs();
    let mut items = sample_weighted(&mut rng, n, |i| probs[i], config.set_size)
        .map_err(|e| Error::input(format!("cannot sample response set: {e}")))?
        .into_vec();
    items.sort_unstable();
    Ok(ContrastInstance { reward: RewardSpec::new(rewards, config.beta)?, sft_mu, sft, items })
}

/// KL over a fixed response set between a discretized Gaussian policy with
/// params `(μ, log σ)`, restricted to the set, and a reward distribution.
#[derive(Debug, Clone)]
pub struct SetGaussianKl {
    positions: Vec<f64>,
    reward_dist: Vec<f64>,
    direction: Direction,
}

impl SetGaussianKl {
    pub fn new(positions: Vec<f64>, reward_dist: Vec<f64>, direction: Direction) -> Self {
        Self { positions, reward_dist, direction }
    }

    pub fn model_dist(&self, params: &[f64]) -> Vec<f64> {
        softmax(&gaussian_logits(self.positions.iter().copied(), params[0], params[1].exp()))
    }
}

impl Objective for SetGaussianKl {
    fn dim(&self) -> usize {
        2
    }

    fn value_and_grad(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let (mu, sigma) = (params[0], params[1].exp());
        let lp = log_softmax(&gaussian_logits(self.positions.iter().copied(), mu, sigma));
        let p: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
        let lq: Vec<f64> = self.reward_dist.iter().map(|q| q.ln()).collect();
        let (loss, g_logit): (f64, Vec<f64>) = match self.direction {
            Direction::Reverse => {
                let d: Vec<f64> = lp.iter().zip(&lq).map(|(a, b)| a - b).collect();
                let l: f64 = p.iter().zip(&d).map(|(a, b)| a * b).sum();
                (l, p.iter().zip(&d).map(|(a, b)| a * (b - l)).collect())
            }
            Direction::Forward => {
                let l = self.reward_dist.iter().zip(lq.iter().zip(&lp)).map(|(q, (a, b))| q * (a - b)).sum();
                (l, p.iter().zip(&self.reward_dist).map(|(a, b)| a - b).collect())
            }
        };
        let (mut g_mu, mut g_s) = (0.0, 0.0);
        for (g, y) in g_logit.iter().zip(&self.positions) {
            let z = (y - mu) / sigma;
            g_mu += g * z / sigma;
            g_s += g * z * z;
        }
        (loss, vec![g_mu, g_s])
    }
}

/// Trains on one instance and returns the trained response set.
pub fn train_instance(
    instance: &ContrastInstance,
    config: &ContrastConfig,
    direction: Direction,
) -> Result<ResponseSet> {
    let positions: Vec<f64> = instance.items.iter().map(|&i| i as f64).collect();
    let scaled: Vec<f64> = instance.items.iter().map(|&i| instance.reward.rewards[i] / instance.reward.beta).collect();
    let objective = SetGaussianKl::new(positions, softmax(&scaled), direction);
    let init = vec![instance.sft_mu, config.sft_sigma.ln()];
    let trace = descend(&objective, init, config.steps, config.learning_rate)?;
    let params = &trace.last().expect("trace is non-empty").params;
    ResponseSet::new(instance.items.clone(), objective.model_dist(params), objective.reward_dist.clone())
}

/// Position within the set of the first highest-reward item.
pub fn top_reward_position(instance: &ContrastInstance) -> usize {
    let r = &instance.reward.rewards;
    let mut best = 0;
    for (j, &i) in instance.items.iter().enumerate() {
        if r[i] > r[instance.items[best]] {
            best = j;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastReport {
    pub ms_log_prob: Vec<f64>,
    pub forward_log_prob: Vec<f64>,
    pub ms_iqr: f64,
    pub forward_iqr: f64,
    pub ms_median: f64,
    pub forward_median: f64,
}

pub fn run_contrast(config: &ContrastConfig) -> Result<ContrastReport> {
    let seeds: Vec<u64> = (0..config.instances as u64).map(|i| config.seed.wrapping_add(i)).collect();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let results = pool::map(&seeds, workers, |_, &seed| -> Result<(f64, f64)> {
        let inst = sample_instance(config, seed)?;
        let top = top_reward_position(&inst);
        let ms = train_instance(&inst, config, Direction::Reverse)?;
        let fwd = train_instance(&inst, config, Direction::Forward)?;
        Ok((ms.model_dist[top].ln(), fwd.model_dist[top].ln()))
    });
    let (ms, fwd): (Vec<f64>, Vec<f64>) = pool::collect_indexed(results)?.into_iter().unzip();
    Ok(ContrastReport {
        ms_iqr: interquartile_range(&ms),
        forward_iqr: interquartile_range(&fwd),
        ms_median: quantile(&ms, 0.5),
        forward_median: quantile(&fwd, 0.5),
        ms_log_prob: ms,
        forward_log_prob: fwd,
    })
}

/// Linear-interpolation quantile of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn interquartile_range(values: &[f64]) -> f64 {
    quantile(values, 0.75) - quantile(values, 0.25)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modeseek::fit::grad_check;
    use crate::modeseek::ms_loss;

    #[test]
    fn quantiles() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(interquartile_range(&v), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.25), 1.25);
    }

    #[test]
    fn instances_are_well_formed_and_seeded() {
        let cfg = ContrastConfig::default();
        let a = sample_instance(&cfg, 7).unwrap();
        let b = sample_instance(&cfg, 7).unwrap();
        assert_eq!(a.items, b.items);
        assert_eq!(a.items.len(), 12);
        assert!(a.items.windows(2).all(|w| w[0] < w[1]));
        let r = &a.reward.rewards;
        let top = a.items[top_reward_position(&a)];
        assert!(a.items.iter().all(|&i| r[i] <= r[top]));
    }

    #[test]
    fn set_gaussian_gradients() {
        let cfg = ContrastConfig::default();
        for seed in 0..5 {
            let inst = sample_instance(&cfg, seed).unwrap();
            let pos: Vec<f64> = inst.items.iter().map(|&i| i as f64).collect();
            let q = softmax(&inst.items.iter().map(|&i| inst.reward.rewards[i]).collect::<Vec<_>>());
            for d in [Direction::Reverse, Direction::Forward] {
                let obj = SetGaussianKl::new(pos.clone(), q.clone(), d);
                assert!(grad_check(&obj, &[inst.sft_mu, 1.2], 1e-5).unwrap() <= 1e-5);
            }
        }
    }

    #[test]
    fn ms_training_lowers_set_loss() {
        let cfg = ContrastConfig { steps: 300, ..ContrastConfig::default() };
        let inst = sample_instance(&cfg, 3).unwrap();
        let before = ResponseSet::from_policy(inst.items.clone(), &inst.sft, &inst.reward).unwrap();
        let after = train_instance(&inst, &cfg, Direction::Reverse).unwrap();
        assert!(ms_loss(&[after]).unwrap() < ms_loss(&[before]).unwrap());
    }
}
