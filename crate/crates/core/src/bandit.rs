//! Arm beliefs and arm selection for the three sampling-bias bandits.
//!
//! * **KF-MANB** keeps a Gaussian belief per arm, selects by Thompson
//!   sampling and tracks drifting rewards with a scalar Kalman filter whose
//!   transition noise inflates the variance of every arm that was not pulled.
//! * **UCB-1** picks the arm with the largest `mean + sqrt(2 ln n / n_j)`.
//! * **Thompson sampling** (stationary) uses Gaussian beliefs centred on the
//!   sample mean with variance `σ_init² / (n_j + 1)`.
//!
//! Arm 0 is uniform sampling over the state space, arm 1 is goal sampling and
//! arms `2..` are transition clusters.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNIFORM_ARM: usize = 0;
pub const GOAL_ARM: usize = 1;
pub const FIRST_CLUSTER_ARM: usize = 2;

/// Lower bound of the adaptive scale `η`.
pub const ETA_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    KfManb,
    Ucb1,
    Thompson,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::KfManb, Policy::Ucb1, Policy::Thompson];

    pub fn name(self) -> &'static str {
        match self {
            Policy::KfManb => "kfmanb",
            Policy::Ucb1 => "ucb1",
            Policy::Thompson => "ts",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "kfmanb" => Ok(Policy::KfManb),
            "ucb1" | "ucb" => Ok(Policy::Ucb1),
            "ts" | "thompson" => Ok(Policy::Thompson),
            _ => Err(Error::InvalidConfig(format!("unknown bandit policy {s:?}"))),
        }
    }
}

/// Kalman-filter noise constants and the initial belief spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KfManbConfig {
    /// Observation noise `σ_obs²`.
    pub sigma_obs_sq: f64,
    /// Transition noise `σ_tr²`.
    pub sigma_tr_sq: f64,
    /// Initial value of the adaptive scale `η`.
    pub eta: f64,
    /// Initial standard deviation `σ_i(0)`.
    pub sigma_init: f64,
}

impl Default for KfManbConfig {
    fn default() -> Self {
        KfManbConfig {
            sigma_obs_sq: 1e-4,
            sigma_tr_sq: 1e-4,
            eta: ETA_FLOOR,
            sigma_init: 0.2,
        }
    }
}

impl KfManbConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("sigma_obs_sq", self.sigma_obs_sq),
            ("sigma_tr_sq", self.sigma_tr_sq),
            ("eta", self.eta),
            ("sigma_init", self.sigma_init),
        ];
        match fields.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            Some((name, v)) => Err(Error::InvalidConfig(format!(
                "{name} must be strictly positive, got {v}"
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmBelief {
    pub mean: f64,
    pub variance: f64,
    pub pull_count: u64,
    pub reward_sum: f64,
}

/// Per-arm beliefs plus the state of the last selection.
#[derive(Debug, Clone)]
pub struct ArmSet {
    arms: Vec<ArmBelief>,
    policy: Policy,
    config: KfManbConfig,
    eta: f64,
    last_selected: Option<usize>,
    total_pulls: u64,
}

fn check_reward(r: f64) -> Result<()> {
    if (0.0..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(Error::Contract(format!("reward {r} outside [0, 1]")))
    }
}

impl ArmSet {
    pub fn initialize(
        initial_rewards: &[f64],
        policy: Policy,
        config: KfManbConfig,
    ) -> Result<Self> {
        if initial_rewards.is_empty() {
            return Err(Error::Contract("bandit needs at least one arm".into()));
        }
        config.validate()?;
        for r in initial_rewards {
            check_reward(*r)?;
        }
        let variance = config.sigma_init * config.sigma_init;
        Ok(ArmSet {
            arms: initial_rewards
                .iter()
                .map(|&mean| ArmBelief {
                    mean,
                    variance,
                    pull_count: 0,
                    reward_sum: 0.0,
                })
                .collect(),
            policy,
            config,
            eta: config.eta,
            last_selected: None,
            total_pulls: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn arms(&self) -> &[ArmBelief] {
        &self.arms
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn config(&self) -> &KfManbConfig {
        &self.config
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn last_selected(&self) -> Option<usize> {
        self.last_selected
    }

    pub fn total_pulls(&self) -> u64 {
        self.total_pulls
    }

    pub fn means(&self) -> Vec<f64> {
        self.arms.iter().map(|a| a.mean).collect()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.arms.iter().map(|a| a.variance).collect()
    }

    /// UCB-1 index of arm `j`; `+∞` for arms never pulled.
    pub fn ucb_index(&self, j: usize) -> f64 {
        let arm = &self.arms[j];
        if arm.pull_count == 0 {
            return f64::INFINITY;
        }
        let total = self.total_pulls.max(1) as f64;
        arm.mean + (2.0 * total.ln() / arm.pull_count as f64).sqrt()
    }

    pub fn select_next_arm<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        let chosen = match self.policy {
            Policy::KfManb => argmax(self.arms.iter().map(|a| {
                let z: f64 = StandardNormal.sample(rng);
                a.mean + a.variance.sqrt() * z
            })),
            Policy::Thompson => {
                let init_var = self.config.sigma_init * self.config.sigma_init;
                argmax(self.arms.iter().map(|a| {
                    let z: f64 = StandardNormal.sample(rng);
                    a.mean + (init_var / (a.pull_count + 1) as f64).sqrt() * z
                }))
            }
            Policy::Ucb1 => match self.arms.iter().position(|a| a.pull_count == 0) {
                Some(unpulled) => unpulled,
                None => argmax((0..self.arms.len()).map(|j| self.ucb_index(j))),
            },
        };
        self.last_selected = Some(chosen);
        chosen
    }

    /// Marks `arm` as selected without drawing, for forced fallbacks.
    pub fn force_select(&mut self, arm: usize) -> Result<()> {
        if arm >= self.arms.len() {
            return Err(Error::Contract(format!(
                "arm {arm} out of range for {} arms",
                self.arms.len()
            )));
        }
        self.last_selected = Some(arm);
        Ok(())
    }

    /// Feeds the reward realized by the last selected arm back into the beliefs.
    pub fn update(&mut self, reward: f64) -> Result<()> {
        check_reward(reward)?;
        let selected = self
            .last_selected
            .take()
            .ok_or_else(|| Error::Contract("bandit update without a prior selection".into()))?;
        self.total_pulls += 1;
        match self.policy {
            Policy::KfManb => {
                let KfManbConfig {
                    sigma_obs_sq,
                    sigma_tr_sq,
                    ..
                } = self.config;
                let drift = sigma_tr_sq * self.eta * self.eta;
                for (j, arm) in self.arms.iter_mut().enumerate() {
                    if j == selected {
                        let prior = arm.variance + drift;
                        let denom = prior + sigma_obs_sq;
                        arm.mean = (prior * reward + sigma_obs_sq * arm.mean) / denom;
                        arm.variance = prior * sigma_obs_sq / denom;
                        arm.pull_count += 1;
                        arm.reward_sum += reward;
                    } else {
                        arm.variance += sigma_tr_sq;
                    }
                }
                self.eta = ETA_FLOOR.max(0.9 * self.eta + 0.1 * reward.abs());
            }
            Policy::Ucb1 | Policy::Thompson => {
                let arm = &mut self.arms[selected];
                arm.pull_count += 1;
                arm.reward_sum += reward;
                arm.mean = arm.reward_sum / arm.pull_count as f64;
            }
        }
        Ok(())
    }
}

/// Index of the largest value, lowest index on ties.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn kf(rewards: &[f64]) -> ArmSet {
        ArmSet::initialize(rewards, Policy::KfManb, KfManbConfig::default()).unwrap()
    }

    #[test]
    fn initialize_two_base_arms() {
        let arms = kf(&[0.0, 0.0]);
        assert_eq!(arms.len(), 2);
        for a in arms.arms() {
            assert_eq!(a.mean, 0.0);
            assert_relative_eq!(a.variance, 0.04, epsilon = 1e-15);
            assert_eq!(a.pull_count, 0);
        }
        assert_eq!(arms.last_selected(), None);
    }

    #[test]
    fn initialize_with_cluster_rewards() {
        assert_eq!(kf(&[0.0, 0.0, 0.9, 0.3]).means(), vec![0.0, 0.0, 0.9, 0.3]);
    }

    #[test]
    fn initialize_rejects_bad_input() {
        let bad = ArmSet::initialize(&[0.0, 1.5], Policy::KfManb, KfManbConfig::default());
        assert!(matches!(bad, Err(Error::Contract(_))));
        let empty = ArmSet::initialize(&[], Policy::Ucb1, KfManbConfig::default());
        assert!(matches!(empty, Err(Error::Contract(_))));
    }

    #[test]
    fn update_requires_selection() {
        let mut arms = kf(&[0.0, 0.0]);
        assert!(matches!(arms.update(0.5), Err(Error::Contract(_))));
        arms.select_next_arm(&mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(arms.update(1.2), Err(Error::Contract(_))));
    }

    #[test]
    fn kalman_update_closed_form() {
        let mut arms = kf(&[0.5, 0.2]);
        arms.force_select(0).unwrap();
        arms.update(1.0).unwrap();
        // σ_tr²·η² ≈ 1e-24, negligible
        let expected_mean = (0.04 * 1.0 + 1e-4 * 0.5) / (0.04 + 1e-4);
        let expected_var = 0.04 * 1e-4 / 0.0401;
        assert_relative_eq!(arms.arms()[0].mean, expected_mean, epsilon = 1e-12);
        assert_relative_eq!(arms.arms()[0].mean, 0.998753, epsilon = 1e-6);
        assert_relative_eq!(arms.arms()[0].variance, expected_var, epsilon = 1e-15);
        assert_relative_eq!(arms.arms()[0].variance, 9.975e-5, epsilon = 1e-8);
        // non-selected arm inflates by exactly σ_tr²
        assert_relative_eq!(arms.arms()[1].variance, 0.04 + 1e-4, epsilon = 1e-15);
        assert_eq!(arms.last_selected(), None);
    }

    #[test]
    fn eta_recurrence() {
        let config = KfManbConfig {
            eta: 0.5,
            ..KfManbConfig::default()
        };
        let mut arms = ArmSet::initialize(&[0.0, 0.0], Policy::KfManb, config).unwrap();
        arms.force_select(1).unwrap();
        arms.update(1.0).unwrap();
        assert_relative_eq!(arms.eta(), 0.55, epsilon = 1e-15);

        let mut floor = kf(&[0.0, 0.0]);
        floor.force_select(0).unwrap();
        floor.update(0.0).unwrap();
        assert_eq!(floor.eta(), ETA_FLOOR);
    }

    #[test]
    fn kf_selects_dominant_arm() {
        let config = KfManbConfig {
            sigma_init: 1e-4,
            ..KfManbConfig::default()
        };
        let mut arms = ArmSet::initialize(&[0.9, 0.1], Policy::KfManb, config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let wins = (0..n)
            .filter(|_| arms.select_next_arm(&mut rng) == 0)
            .count();
        assert!(wins as f64 / n as f64 > 0.999);
    }

    #[test]
    fn kf_symmetric_beliefs_select_uniformly() {
        let mut arms = kf(&[0.4, 0.4, 0.4, 0.4]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[arms.select_next_arm(&mut rng)] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn ucb_pulls_unexplored_arm_first() {
        let mut arms =
            ArmSet::initialize(&[0.9, 0.1, 0.5], Policy::Ucb1, KfManbConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for expected in 0..3 {
            assert_eq!(arms.select_next_arm(&mut rng), expected);
            arms.update(1.0).unwrap();
        }
        // every arm pulled once with reward 1: ties resolve to arm 0
        assert_eq!(arms.select_next_arm(&mut rng), 0);
    }

    #[test]
    fn constant_reward_converges() {
        let mut arms = kf(&[0.0, 0.0, 0.3]);
        for _ in 0..10_000 {
            arms.force_select(2).unwrap();
            arms.update(0.7).unwrap();
        }
        assert!((arms.arms()[2].mean - 0.7).abs() < 1e-6);
    }

    fn stationary_best_arm_share(policy: Policy) -> f64 {
        let p = [0.9, 0.5, 0.1];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut arms =
            ArmSet::initialize(&[0.0, 0.0, 0.0], policy, KfManbConfig::default()).unwrap();
        let mut best_late = 0;
        for round in 0..10_000 {
            let j = arms.select_next_arm(&mut rng);
            let r = if rng.random::<f64>() < p[j] { 1.0 } else { 0.0 };
            arms.update(r).unwrap();
            if round >= 9_000 && j == 0 {
                best_late += 1;
            }
        }
        best_late as f64 / 1000.0
    }

    #[test]
    fn stationary_bernoulli_sanity() {
        for policy in Policy::ALL {
            let share = stationary_best_arm_share(policy);
            assert!(share > 0.8, "{policy}: {share}");
        }
    }

    #[test]
    fn policy_names_round_trip() {
        for policy in Policy::ALL {
            assert_eq!(policy.name().parse::<Policy>().unwrap(), policy);
        }
        assert!("greedy".parse::<Policy>().is_err());
    }
}
