//! Sequential RRT meta-planner with bandit-guided sampling, and the plain
//! goal-biased baseline.
//!
//! Each iteration picks an arm (uniform, goal, or one cluster of past
//! transitions), turns it into a `(parent, target)` pair, forward-propagates
//! random controls from the parent and attaches the result. Reaching the goal
//! ends the current RRT instance: the path is scored, the tree is merged into
//! the transition database, clusters and arms are rebuilt and a fresh tree
//! starts from the initial state.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{ArmSet, KfManbConfig, Policy, FIRST_CLUSTER_ARM, GOAL_ARM, UNIFORM_ARM};
use crate::clustering::{self, Cluster, ClusterSet, ClusteringConfig, TransitionDatabase};
use crate::error::{Error, Result};
use crate::tree::{NodeId, SearchTree};
use crate::world::{segment_valid, squared_euclidean, Control, Path, Scenario, State, Transition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Iteration budget `K`.
    pub total_iterations: usize,
    /// Rollouts per cluster-arm extension.
    pub n_propagations: usize,
    /// Upper bound on the control duration.
    pub max_prop_duration: f64,
    /// Baseline mode: no bandit, no clustering, fixed goal bias.
    pub goal_bias_only: bool,
    /// Probability of sampling the goal in baseline mode.
    pub goal_bias: f64,
    /// Candidate draws per cluster sampling call.
    pub cluster_sample_attempts: usize,
    /// Perturbation half-width; `None` uses half of each cluster's `δ2`.
    pub perturbation_width: Option<f64>,
    pub policy: Policy,
    pub rng_seed: u64,
    /// Arm selections tried before falling back to the uniform arm.
    pub max_arm_retries: usize,
    pub bandit: KfManbConfig,
    pub clustering: ClusteringConfig,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            total_iterations: 1000,
            n_propagations: 100,
            max_prop_duration: 0.2,
            goal_bias_only: false,
            goal_bias: 0.05,
            cluster_sample_attempts: 10,
            perturbation_width: None,
            policy: Policy::KfManb,
            rng_seed: 0,
            max_arm_retries: 20,
            bandit: KfManbConfig::default(),
            clustering: ClusteringConfig::default(),
        }
    }
}

impl PlannerConfig {
    pub fn baseline() -> Self {
        PlannerConfig {
            goal_bias_only: true,
            ..PlannerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_propagations == 0
            || self.cluster_sample_attempts == 0
            || self.max_arm_retries == 0
        {
            return bad("rollout, attempt and retry counts must be positive".into());
        }
        if !(self.max_prop_duration > 0.0 && self.max_prop_duration.is_finite()) {
            return bad(format!(
                "max_prop_duration must be positive, got {}",
                self.max_prop_duration
            ));
        }
        if !(0.0..=1.0).contains(&self.goal_bias) {
            return bad(format!(
                "goal_bias must lie in [0, 1], got {}",
                self.goal_bias
            ));
        }
        if let Some(w) = self.perturbation_width {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("perturbation_width must be >= 0, got {w}"));
            }
        }
        self.bandit.validate()?;
        self.clustering.validate()
    }
}

/// Mean and max wall time of the planner iterations, clustering excluded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TimingStats {
    pub iterations: usize,
    pub mean_seconds: f64,
    pub max_seconds: f64,
    /// Total time spent re-clustering, reported separately.
    pub clustering_seconds: f64,
}

/// Snapshot taken right after every re-clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct ReclusterEvent {
    pub iteration: usize,
    pub database_size: usize,
    pub n_min: usize,
    pub clusters: usize,
    pub arms: usize,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    pub best_path: Option<Path>,
    /// `+∞` when no path was found.
    pub best_cost: f64,
    /// `(iteration, best cost)` at every improvement; iterations are 1-based.
    pub cost_trace: Vec<(usize, f64)>,
    pub runs_completed: usize,
    pub timing: TimingStats,
    pub reclusterings: Vec<ReclusterEvent>,
}

/// What happened in one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Arm that produced the extension attempt.
    pub arm: usize,
    /// Cluster arms that were selected and failed before `arm`.
    pub failed_arms: Vec<usize>,
    /// Reward fed back for `arm`; 0 when the extension failed.
    pub reward: f64,
    pub extended: bool,
    pub reached_goal: bool,
    /// Cost of the path found when this iteration reached the goal.
    pub run_cost: Option<f64>,
    pub best_cost: f64,
}

/// A `(parent, target)` pair proposed by one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub parent: NodeId,
    pub target: State,
}

/// Forward propagation from `x_p` toward `x_trg`.
///
/// Uniform and goal arms apply one random control. Cluster arms draw
/// `N_p` controls and keep the valid child closest to the target, lowest draw
/// index on ties. `None` means no rollout was valid.
pub fn sample_to<R: Rng + ?Sized>(
    x_p: &State,
    x_trg: &[f64],
    arm: usize,
    scenario: &Scenario,
    config: &PlannerConfig,
    rng: &mut R,
) -> Option<(State, Control, f64)> {
    let rollouts = if arm < FIRST_CLUSTER_ARM {
        1
    } else {
        config.n_propagations
    };
    let dim = x_p.dim();
    let lo = scenario.control_bounds.lo();
    let hi = scenario.control_bounds.hi();
    let cdim = lo.len();
    let mut controls = vec![0.0; rollouts * cdim];
    let mut durations = vec![0.0; rollouts];
    // (squared distance to target, draw index) of the in-bounds rollouts
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(rollouts);
    let mut x_c = vec![0.0; dim];
    for i in 0..rollouts {
        let u = &mut controls[i * cdim..(i + 1) * cdim];
        for ((v, l), h) in u.iter_mut().zip(lo).zip(hi) {
            *v = if h > l { rng.random_range(*l..=*h) } else { *l };
        }
        durations[i] = random_duration(config.max_prop_duration, rng);
        if scenario.propagate_into(x_p, u, durations[i], &mut x_c) {
            candidates.push((squared_euclidean(&x_c, x_trg), i));
        }
    }
    // validating in (distance, index) order picks the same rollout as
    // validating all of them first
    while !candidates.is_empty() {
        let best = (0..candidates.len())
            .min_by(|&a, &b| {
                let (a, b) = (candidates[a], candidates[b]);
                a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
            })
            .unwrap();
        let i = candidates.swap_remove(best).1;
        let u = &controls[i * cdim..(i + 1) * cdim];
        scenario.propagate_into(x_p, u, durations[i], &mut x_c);
        if segment_valid(x_p, &x_c, scenario, scenario.edge_resolution) {
            return Some((State(x_c), Control(u.to_vec()), durations[i]));
        }
    }
    None
}

/// Duration drawn from `(0, max]`.
#[inline]
pub fn random_duration<R: Rng + ?Sized>(max: f64, rng: &mut R) -> f64 {
    max * (1.0 - rng.random::<f64>())
}

fn perturb<R: Rng + ?Sized>(x: &[f64], w: f64, rng: &mut R) -> State {
    if w > 0.0 {
        State(x.iter().map(|v| v + rng.random_range(-w..=w)).collect())
    } else {
        State(x.to_vec())
    }
}

/// Draws perturbed candidate transitions from `cluster` until one starts close
/// to the tree and points away from it.
///
/// A candidate whose target is within `δ1` of the tree is skipped. One whose
/// parent is within `δ2` of the tree is accepted immediately. One whose parent
/// is only within `δ3` is kept as a fallback that steers the tree toward the
/// cluster, with the candidate's parent as target.
pub fn sample_cluster<R: Rng + ?Sized>(
    cluster: &Cluster,
    db: &TransitionDatabase,
    tree: &SearchTree,
    config: &PlannerConfig,
    rng: &mut R,
) -> Option<Proposal> {
    let w = config.perturbation_width.unwrap_or(0.5 * cluster.delta2);
    let mut found = None;
    for _ in 0..config.cluster_sample_attempts {
        let member = db.get(cluster.members[rng.random_range(0..cluster.members.len())]);
        let x_p = perturb(&member.x_p, w, rng);
        let x_trg = perturb(&member.x_trg, w, rng);
        if tree.nearest_with_distance(&x_trg).1 < cluster.delta1 {
            continue;
        }
        let (parent, gap) = tree.nearest_with_distance(&x_p);
        if gap < cluster.delta2 {
            found = Some(Proposal {
                parent,
                target: x_trg,
            });
            break;
        } else if gap < cluster.delta3 {
            found = Some(Proposal {
                parent,
                target: x_p,
            });
        }
    }
    found
}

/// Proposal from one of the two non-cluster arms.
pub fn sample_uniform_or_goal<R: Rng + ?Sized>(
    arm: usize,
    tree: &SearchTree,
    scenario: &Scenario,
    rng: &mut R,
) -> Proposal {
    let target = if arm == GOAL_ARM {
        scenario.sample_goal(rng)
    } else {
        scenario.sample_state(rng)
    };
    Proposal {
        parent: tree.nearest(&target),
        target,
    }
}

/// Proposal from any arm; cluster arms may fail.
pub fn propose<R: Rng + ?Sized>(
    arm: usize,
    clusters: &ClusterSet,
    db: &TransitionDatabase,
    tree: &SearchTree,
    scenario: &Scenario,
    config: &PlannerConfig,
    rng: &mut R,
) -> Option<Proposal> {
    if arm < FIRST_CLUSTER_ARM {
        Some(sample_uniform_or_goal(arm, tree, scenario, rng))
    } else {
        sample_cluster(
            &clusters.clusters[arm - FIRST_CLUSTER_ARM],
            db,
            tree,
            config,
            rng,
        )
    }
}

/// Builds the transition for a proposal, or `None` on extension failure.
pub fn extend<R: Rng + ?Sized>(
    proposal: &Proposal,
    arm: usize,
    tree: &SearchTree,
    scenario: &Scenario,
    config: &PlannerConfig,
    rng: &mut R,
) -> Option<Transition> {
    let x_p = tree.state(proposal.parent);
    sample_to(x_p, &proposal.target, arm, scenario, config, rng).map(|(x_c, u, d)| {
        let reward = scenario.reward_field.transition_reward(x_p, &x_c);
        Transition {
            x_p: x_p.clone(),
            u,
            d,
            x_c,
            x_trg: proposal.target.clone(),
            reward,
        }
    })
}

/// Outcome of one sampling round.
#[derive(Debug, Clone)]
pub struct Sampled {
    pub arm: usize,
    pub failed_arms: Vec<usize>,
    pub parent: NodeId,
    pub transition: Option<Transition>,
}

/// Selects arms until one yields a proposal, then extends the tree toward it.
///
/// Failed cluster arms are rewarded 0 and selection is retried. After
/// `max_arm_retries` failures the uniform arm is forced. The caller feeds the
/// final reward back for the returned arm.
pub fn sample_and_propagate<R: Rng + ?Sized>(
    clusters: &ClusterSet,
    db: &TransitionDatabase,
    tree: &SearchTree,
    arms: &mut ArmSet,
    scenario: &Scenario,
    config: &PlannerConfig,
    rng: &mut R,
) -> Result<Sampled> {
    if arms.len() != clusters.len() + FIRST_CLUSTER_ARM {
        return Err(Error::Contract(format!(
            "{} arms for {} clusters",
            arms.len(),
            clusters.len()
        )));
    }
    let mut failed_arms = Vec::new();
    let mut chosen = None;
    for _ in 0..config.max_arm_retries {
        let arm = arms.select_next_arm(rng);
        match propose(arm, clusters, db, tree, scenario, config, rng) {
            Some(p) => {
                chosen = Some((arm, p));
                break;
            }
            None => {
                arms.update(0.0)?;
                failed_arms.push(arm);
            }
        }
    }
    let (arm, proposal) = match chosen {
        Some(c) => c,
        None => {
            arms.force_select(UNIFORM_ARM)?;
            (
                UNIFORM_ARM,
                sample_uniform_or_goal(UNIFORM_ARM, tree, scenario, rng),
            )
        }
    };
    let transition = extend(&proposal, arm, tree, scenario, config, rng);
    Ok(Sampled {
        arm,
        failed_arms,
        parent: proposal.parent,
        transition,
    })
}

/// The planner state, advanced one iteration at a time.
#[derive(Debug, Clone)]
pub struct MabRrt<'a> {
    scenario: &'a Scenario,
    config: PlannerConfig,
    rng: ChaCha8Rng,
    tree: SearchTree,
    db: TransitionDatabase,
    clusters: ClusterSet,
    arms: ArmSet,
    iteration: usize,
    best_path: Option<Path>,
    best_cost: f64,
    cost_trace: Vec<(usize, f64)>,
    runs_completed: usize,
    iteration_time: Duration,
    max_iteration_time: Duration,
    clustering_time: Duration,
    reclusterings: Vec<ReclusterEvent>,
}

impl<'a> MabRrt<'a> {
    pub fn new(scenario: &'a Scenario, config: PlannerConfig) -> Result<Self> {
        config.validate()?;
        let arms = ArmSet::initialize(&[0.0, 0.0], config.policy, config.bandit)?;
        Ok(MabRrt {
            scenario,
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            tree: SearchTree::new(scenario.start.clone()),
            db: TransitionDatabase::new(),
            clusters: ClusterSet::default(),
            arms,
            iteration: 0,
            best_path: None,
            best_cost: f64::INFINITY,
            cost_trace: Vec::new(),
            runs_completed: 0,
            iteration_time: Duration::ZERO,
            max_iteration_time: Duration::ZERO,
            clustering_time: Duration::ZERO,
            reclusterings: Vec::new(),
            config,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        self.scenario
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    pub fn tree(&self) -> &SearchTree {
        &self.tree
    }

    pub fn database(&self) -> &TransitionDatabase {
        &self.db
    }

    pub fn clusters(&self) -> &ClusterSet {
        &self.clusters
    }

    pub fn arms(&self) -> &ArmSet {
        &self.arms
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn best_cost(&self) -> f64 {
        self.best_cost
    }

    /// Number of RRT instances that reached the goal so far.
    pub fn runs_completed(&self) -> usize {
        self.runs_completed
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.config.total_iterations
    }

    /// Runs one iteration.
    pub fn step(&mut self) -> Result<IterationRecord> {
        let started = Instant::now();
        self.iteration += 1;
        let sampled = if self.config.goal_bias_only {
            let arm = if self.rng.random::<f64>() < self.config.goal_bias {
                GOAL_ARM
            } else {
                UNIFORM_ARM
            };
            let proposal = sample_uniform_or_goal(arm, &self.tree, self.scenario, &mut self.rng);
            let transition = extend(
                &proposal,
                arm,
                &self.tree,
                self.scenario,
                &self.config,
                &mut self.rng,
            );
            Sampled {
                arm,
                failed_arms: Vec::new(),
                parent: proposal.parent,
                transition,
            }
        } else {
            sample_and_propagate(
                &self.clusters,
                &self.db,
                &self.tree,
                &mut self.arms,
                self.scenario,
                &self.config,
                &mut self.rng,
            )?
        };
        let reward = sampled.transition.as_ref().map_or(0.0, |t| t.reward);
        if !self.config.goal_bias_only {
            self.arms.update(reward)?;
        }
        let mut run_cost = None;
        let mut clustering = Duration::ZERO;
        let extended = sampled.transition.is_some();
        if let Some(transition) = sampled.transition {
            let in_goal = self.scenario.in_goal(&transition.x_c);
            let leaf = self.tree.add(transition, sampled.parent)?;
            if in_goal {
                let (cost, spent) = self.finish_run(leaf)?;
                run_cost = Some(cost);
                clustering = spent;
            }
        }
        let elapsed = started.elapsed().saturating_sub(clustering);
        self.iteration_time += elapsed;
        self.max_iteration_time = self.max_iteration_time.max(elapsed);
        self.clustering_time += clustering;
        Ok(IterationRecord {
            iteration: self.iteration,
            arm: sampled.arm,
            failed_arms: sampled.failed_arms,
            reward,
            extended,
            reached_goal: run_cost.is_some(),
            run_cost,
            best_cost: self.best_cost,
        })
    }

    /// Scores the path to `leaf`, rebuilds clusters and arms, resets the tree.
    /// Returns the path cost and the time spent clustering.
    fn finish_run(&mut self, leaf: NodeId) -> Result<(f64, Duration)> {
        self.runs_completed += 1;
        let path = self.tree.retrace_path(leaf, &self.scenario.reward_field);
        let cost = path.total_cost;
        if cost < self.best_cost {
            self.best_cost = path.total_cost;
            self.best_path = Some(path);
            self.cost_trace.push((self.iteration, self.best_cost));
        }
        let mut spent = Duration::ZERO;
        if !self.config.goal_bias_only {
            self.db.extend_from_tree(&self.tree);
            let started = Instant::now();
            self.clusters = clustering::cluster(&self.db, &self.config.clustering, &mut self.rng)?;
            spent = started.elapsed();
            let mut initial = vec![0.0, 0.0];
            initial.extend(self.clusters.avg_rewards());
            self.arms = ArmSet::initialize(&initial, self.config.policy, self.config.bandit)?;
            if self.arms.len() != self.clusters.len() + FIRST_CLUSTER_ARM {
                return Err(Error::Contract(
                    "arm count out of sync with clusters".into(),
                ));
            }
            self.reclusterings.push(ReclusterEvent {
                iteration: self.iteration,
                database_size: self.db.len(),
                n_min: self.clusters.n_min,
                clusters: self.clusters.len(),
                arms: self.arms.len(),
                elapsed: spent,
            });
        }
        self.tree = SearchTree::new(self.scenario.start.clone());
        Ok((cost, spent))
    }

    /// Runs the remaining iterations, handing every record to `sink`.
    pub fn run_with(mut self, mut sink: impl FnMut(&IterationRecord)) -> Result<PlanResult> {
        while !self.is_finished() {
            let record = self.step()?;
            sink(&record);
        }
        Ok(self.into_result())
    }

    pub fn into_result(self) -> PlanResult {
        let mean_seconds = if self.iteration > 0 {
            self.iteration_time.as_secs_f64() / self.iteration as f64
        } else {
            0.0
        };
        PlanResult {
            best_path: self.best_path,
            best_cost: self.best_cost,
            cost_trace: self.cost_trace,
            runs_completed: self.runs_completed,
            timing: TimingStats {
                iterations: self.iteration,
                mean_seconds,
                max_seconds: self.max_iteration_time.as_secs_f64(),
                clustering_seconds: self.clustering_time.as_secs_f64(),
            },
            reclusterings: self.reclusterings,
        }
    }
}

/// Bandit-guided planner with the configured policy.
pub fn mab_rrt(scenario: &Scenario, config: &PlannerConfig) -> Result<PlanResult> {
    MabRrt::new(scenario, config.clone())?.run_with(|_| {})
}

/// Goal-biased baseline: the same loop with the bandit and clustering removed.
pub fn ao_rrt(scenario: &Scenario, config: &PlannerConfig) -> Result<PlanResult> {
    let config = PlannerConfig {
        goal_bias_only: true,
        ..config.clone()
    };
    mab_rrt(scenario, &config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{euclidean, is_valid, AaBox};
    use approx::assert_relative_eq;

    fn open() -> Scenario {
        Scenario::open_unit_square(
            [0.1, 0.1],
            AaBox::new([0.85, 0.85], [0.95, 0.95]).unwrap(),
            0.5,
        )
        .unwrap()
    }

    fn tr(x_p: [f64; 2], x_trg: [f64; 2]) -> Transition {
        Transition {
            x_p: State::new(x_p),
            u: Control::new([0.0, 0.0]),
            d: 0.1,
            x_c: State::new(x_p),
            x_trg: State::new(x_trg),
            reward: 0.5,
        }
    }

    fn one_cluster(members: Vec<Transition>, delta2: f64) -> (TransitionDatabase, Cluster) {
        let n = members.len();
        let db: TransitionDatabase = members.into_iter().collect();
        let cluster = Cluster {
            members: (0..n).collect(),
            avg_reward: 0.5,
            delta1: delta2,
            delta2,
            delta3: 2.0 * delta2,
        };
        (db, cluster)
    }

    fn no_perturbation() -> PlannerConfig {
        PlannerConfig {
            perturbation_width: Some(0.0),
            ..PlannerConfig::default()
        }
    }

    #[test]
    fn zero_iterations() {
        let s = open();
        let config = PlannerConfig {
            total_iterations: 0,
            ..PlannerConfig::default()
        };
        let r = mab_rrt(&s, &config).unwrap();
        assert!(r.best_cost.is_infinite());
        assert!(r.cost_trace.is_empty());
        assert!(r.best_path.is_none());
    }

    #[test]
    fn sample_to_single_rollout_follows_dynamics() {
        let s = open();
        let config = PlannerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x_p = State::new([0.5, 0.5]);
        for _ in 0..200 {
            let (x_c, u, d) =
                sample_to(&x_p, &[0.9, 0.9], UNIFORM_ARM, &s, &config, &mut rng).unwrap();
            assert!(d > 0.0 && d <= config.max_prop_duration);
            assert_relative_eq!(x_c[0], 0.5 + u[0] * d, epsilon = 1e-15);
            assert_relative_eq!(x_c[1], 0.5 + u[1] * d, epsilon = 1e-15);
        }
    }

    #[test]
    fn forced_control_and_duration() {
        let s = open();
        let x_c =
            crate::world::propagate(&State::new([0.0, 0.5]), &Control::new([0.5, 0.0]), 0.2, &s)
                .unwrap();
        assert_relative_eq!(x_c[0], 0.1, epsilon = 1e-15);
        assert_relative_eq!(x_c[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn cluster_rollouts_approach_target() {
        let s = open();
        let config = PlannerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x_p = State::new([0.5, 0.5]);
        let target = [0.6, 0.5];
        let start_gap = euclidean(&x_p, &target);
        let closer = (0..1000)
            .filter(|_| {
                let (x_c, _, _) =
                    sample_to(&x_p, &target, FIRST_CLUSTER_ARM, &s, &config, &mut rng).unwrap();
                euclidean(&x_c, &target) < start_gap
            })
            .count();
        assert!(closer >= 990, "{closer}/1000");
    }

    #[test]
    fn lazy_selection_matches_exhaustive() {
        let mut s = open();
        s.obstacles
            .push(AaBox::new([0.52, 0.4], [0.56, 0.6]).unwrap());
        let config = PlannerConfig::default();
        let x_p = State::new([0.5, 0.5]);
        let target = [0.7, 0.5];
        for seed in 0..50 {
            let lazy = sample_to(
                &x_p,
                &target,
                2,
                &s,
                &config,
                &mut ChaCha8Rng::seed_from_u64(seed),
            );
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut best: Option<(f64, State)> = None;
            for _ in 0..config.n_propagations {
                let u = s.sample_control(&mut rng);
                let d = random_duration(config.max_prop_duration, &mut rng);
                let Ok(x_c) = crate::world::propagate(&x_p, &u, d, &s) else {
                    continue;
                };
                if !segment_valid(&x_p, &x_c, &s, s.edge_resolution) {
                    continue;
                }
                let gap = squared_euclidean(&x_c, &target);
                if best.as_ref().is_none_or(|(g, _)| gap < *g) {
                    best = Some((gap, x_c));
                }
            }
            assert_eq!(lazy.map(|l| l.0), best.map(|b| b.1));
        }
    }

    #[test]
    fn enclosed_parent_fails_to_extend() {
        let mut s = open();
        // a pocket of half-width 1e-6 around the parent
        let (c, g, r) = (0.5, 1e-6, 0.3);
        let walls = [
            ([c - r, c - r], [c + r, c - g]),
            ([c - r, c + g], [c + r, c + r]),
            ([c - r, c - g], [c - g, c + g]),
            ([c + g, c - g], [c + r, c + g]),
        ];
        for (lo, hi) in walls {
            s.obstacles.push(AaBox::new(lo, hi).unwrap());
        }
        let config = PlannerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x_p = State::new([c, c]);
        assert!(is_valid(&x_p, &s));
        for arm in [UNIFORM_ARM, FIRST_CLUSTER_ARM] {
            for _ in 0..20 {
                assert!(sample_to(&x_p, &[0.9, 0.9], arm, &s, &config, &mut rng).is_none());
            }
        }
    }

    #[test]
    fn cluster_member_on_tree_returns_its_target() {
        let tree = SearchTree::new(State::new([0.3, 0.3]));
        let (db, cluster) = one_cluster(vec![tr([0.3, 0.3], [0.8, 0.8])], 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = sample_cluster(&cluster, &db, &tree, &no_perturbation(), &mut rng).unwrap();
        assert_eq!(p.parent, NodeId::ROOT);
        assert_eq!(p.target, State::new([0.8, 0.8]));
    }

    #[test]
    fn cluster_targets_near_tree_are_rejected() {
        let tree = SearchTree::new(State::new([0.3, 0.3]));
        let (db, cluster) = one_cluster(
            vec![tr([0.3, 0.3], [0.31, 0.3]), tr([0.3, 0.3], [0.3, 0.31])],
            0.05,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_cluster(&cluster, &db, &tree, &no_perturbation(), &mut rng).is_none());
    }

    #[test]
    fn cluster_slightly_away_pulls_tree_toward_it() {
        let tree = SearchTree::new(State::new([0.3, 0.3]));
        // parents 0.07 from the tree: beyond δ2 = 0.05, within δ3 = 0.1
        let members = vec![tr([0.37, 0.3], [0.8, 0.8]), tr([0.3, 0.37], [0.8, 0.2])];
        let (db, cluster) = one_cluster(members.clone(), 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = sample_cluster(&cluster, &db, &tree, &no_perturbation(), &mut rng).unwrap();
        assert!(members.iter().any(|m| m.x_p == p.target));
    }

    #[test]
    fn far_cluster_yields_nothing() {
        let tree = SearchTree::new(State::new([0.1, 0.1]));
        let (db, cluster) = one_cluster(vec![tr([0.8, 0.8], [0.9, 0.9])], 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(
            sample_cluster(&cluster, &db, &tree, &PlannerConfig::default(), &mut rng).is_none()
        );
    }

    #[test]
    fn goal_arm_targets_goal_box() {
        let s = open();
        let tree = SearchTree::new(s.start.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let p = sample_uniform_or_goal(GOAL_ARM, &tree, &s, &mut rng);
            assert!(s.in_goal(&p.target));
        }
    }

    #[test]
    fn unreachable_cluster_loses_selection_share() {
        let s = open();
        let tree = SearchTree::new(s.start.clone());
        let (db, cluster) = one_cluster(
            vec![tr([0.8, 0.8], [0.9, 0.9]), tr([0.82, 0.8], [0.9, 0.7])],
            0.01,
        );
        let clusters = ClusterSet {
            clusters: vec![cluster],
            n_min: 2,
            dropped: 0,
        };
        let config = PlannerConfig {
            policy: Policy::Thompson,
            ..PlannerConfig::default()
        };
        let mut arms =
            ArmSet::initialize(&[0.0, 0.0, 0.9], Policy::Thompson, config.bandit).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let win_rate = |arms: &ArmSet, rng: &mut ChaCha8Rng| {
            let mut probe = arms.clone();
            (0..2000)
                .filter(|_| probe.select_next_arm(rng) == 2)
                .count() as f64
                / 2000.0
        };
        let mut rates = vec![win_rate(&arms, &mut rng)];
        for step in 1..=200 {
            let sampled =
                sample_and_propagate(&clusters, &db, &tree, &mut arms, &s, &config, &mut rng)
                    .unwrap();
            assert_ne!(sampled.arm, 2);
            let reward = sampled.transition.as_ref().map_or(0.0, |t| t.reward);
            arms.update(reward).unwrap();
            if step % 50 == 0 {
                rates.push(win_rate(&arms, &mut rng));
            }
        }
        assert!(rates.windows(2).all(|w| w[1] <= w[0]), "{rates:?}");
        assert!(rates.last().unwrap() < &0.05);
    }

    #[test]
    fn baseline_matches_bandit_loop_without_clusters() {
        let s = open();
        let config = PlannerConfig {
            total_iterations: 800,
            rng_seed: 17,
            goal_bias_only: true,
            ..PlannerConfig::default()
        };
        let a = mab_rrt(&s, &config).unwrap();
        let b = ao_rrt(
            &s,
            &PlannerConfig {
                goal_bias_only: false,
                ..config
            },
        )
        .unwrap();
        assert_eq!(a.cost_trace, b.cost_trace);
        assert_eq!(a.best_path, b.best_path);
    }

    #[test]
    fn trace_is_monotone_and_consistent() {
        let s = crate::world::bundled_scenario("B").unwrap();
        for (seed, policy) in [
            (1, Policy::KfManb),
            (2, Policy::Ucb1),
            (3, Policy::Thompson),
        ] {
            let config = PlannerConfig {
                total_iterations: 1000,
                rng_seed: seed,
                policy,
                ..PlannerConfig::default()
            };
            let mut runner = MabRrt::new(&s, config).unwrap();
            while !runner.is_finished() {
                let record = runner.step().unwrap();
                if record.reached_goal {
                    assert_eq!(runner.tree().len(), 1);
                    assert_eq!(runner.arms().len(), runner.clusters().len() + 2);
                }
            }
            let r = runner.into_result();
            assert!(r
                .cost_trace
                .windows(2)
                .all(|w| w[1].1 < w[0].1 && w[1].0 > w[0].0));
            if let Some(path) = &r.best_path {
                assert_eq!(path.total_cost, r.best_cost);
                assert_eq!(r.cost_trace.last().unwrap().1, r.best_cost);
                assert_eq!(path.transitions[0].x_p, s.start);
                assert!(s.in_goal(&path.transitions.last().unwrap().x_c));
                for t in &path.transitions {
                    assert!(segment_valid(&t.x_p, &t.x_c, &s, s.edge_resolution));
                }
            }
            assert_eq!(r.reclusterings.len(), r.runs_completed);
            assert!(r.reclusterings.iter().all(|e| e.arms == e.clusters + 2));
        }
    }

    #[test]
    fn same_seed_same_result() {
        let s = crate::world::bundled_scenario("A").unwrap();
        let config = PlannerConfig {
            total_iterations: 600,
            rng_seed: 5,
            ..PlannerConfig::default()
        };
        let a = mab_rrt(&s, &config).unwrap();
        let b = mab_rrt(&s, &config).unwrap();
        assert_eq!(a.cost_trace, b.cost_trace);
        assert_eq!(a.best_path, b.best_path);
    }

    #[test]
    fn config_validation() {
        let mut c = PlannerConfig::default();
        assert!(c.validate().is_ok());
        c.n_propagations = 0;
        assert!(c.validate().is_err());
        let c = PlannerConfig {
            perturbation_width: Some(-1.0),
            ..PlannerConfig::default()
        };
        assert!(c.validate().is_err());
        let c = PlannerConfig {
            goal_bias: 1.5,
            ..PlannerConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
