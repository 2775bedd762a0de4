//! Regret evaluation of sampling strategies against a shared, growing tree.
//!
//! At every iteration each strategy draws a batch of `(parent, target)` pairs
//! against the same frozen tree, the batches are turned into transitions and
//! their mean rewards compared. The best batch mean of the iteration is the
//! reference; a strategy's regret is the gap between that reference and the
//! batch of the arm it would pick. The tree itself is grown by the KF-MANB
//! planner.
//!
//! The `astar` reference strategy runs an incremental best-first search over
//! a control lattice; its batch is the head of the open list.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{ArmSet, Policy, FIRST_CLUSTER_ARM, UNIFORM_ARM};
use crate::error::{Error, Result};
use crate::planner::{extend, propose, sample_uniform_or_goal, MabRrt, PlannerConfig, Proposal};
use crate::tree::SearchTree;
use crate::world::{segment_valid, transition_cost, Control, Path, Scenario, State, Transition};

/// Discretized search used by the `astar` strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSearchConfig {
    pub control_set: Vec<Vec<f64>>,
    pub step_duration: f64,
    /// Upper bound on the state reward, used by the heuristic.
    pub heuristic_peak: f64,
    /// Lattice states are rounded to multiples of this, so states reached
    /// along different control sequences coincide exactly.
    pub snap_tolerance: f64,
}

impl Default for GridSearchConfig {
    fn default() -> Self {
        let levels = [-0.5, -0.25, 0.0, 0.25, 0.5];
        let control_set = levels
            .iter()
            .flat_map(|&a| levels.iter().map(move |&b| vec![a, b]))
            .collect();
        GridSearchConfig {
            control_set,
            step_duration: 0.05,
            heuristic_peak: 0.99,
            snap_tolerance: 1e-9,
        }
    }
}

impl GridSearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.control_set.is_empty() {
            return bad("control set must not be empty");
        }
        if !(self.step_duration > 0.0) {
            return bad("step duration must be positive");
        }
        if !(0.0..=1.0).contains(&self.heuristic_peak) {
            return bad("heuristic peak must lie in [0, 1]");
        }
        if !(self.snap_tolerance > 0.0) {
            return bad("snap tolerance must be positive");
        }
        Ok(())
    }
}

/// Integer lattice key of a state.
pub fn snap_key(x: &[f64], tolerance: f64) -> Vec<i64> {
    x.iter().map(|v| (v / tolerance).round() as i64).collect()
}

/// `(1 − peak)·‖x − goal‖`, with the distance taken to the closest goal point.
pub fn heuristic(x: &[f64], scenario: &Scenario, peak: f64) -> f64 {
    (1.0 - peak) * scenario.goal.distance_to(x)
}

#[derive(Debug, Clone)]
struct LatticeNode {
    state: State,
    parent: Option<usize>,
    control: Option<usize>,
    g: f64,
    h: f64,
}

/// Open-list key: `(f, insertion counter, node)`. `f ≥ 0`, so the IEEE bit
/// pattern orders like the value.
type OpenKey = (u64, u64, usize);

/// Best-first lattice search that can be advanced one expansion at a time.
#[derive(Debug, Clone)]
pub struct AstarSearch<'a> {
    scenario: &'a Scenario,
    grid: GridSearchConfig,
    nodes: Vec<LatticeNode>,
    index: HashMap<Vec<i64>, usize>,
    open: BTreeSet<OpenKey>,
    open_key: Vec<Option<OpenKey>>,
    pushes: u64,
    expansions: usize,
}

impl<'a> AstarSearch<'a> {
    pub fn new(scenario: &'a Scenario, grid: GridSearchConfig) -> Result<Self> {
        grid.validate()?;
        if grid
            .control_set
            .iter()
            .any(|u| u.len() != scenario.control_dim())
        {
            return Err(Error::InvalidConfig(
                "grid controls must match the control dimension".into(),
            ));
        }
        let mut search = AstarSearch {
            scenario,
            grid,
            nodes: Vec::new(),
            index: HashMap::new(),
            open: BTreeSet::new(),
            open_key: Vec::new(),
            pushes: 0,
            expansions: 0,
        };
        let start = scenario.start.clone();
        search.insert(start, None, None, 0.0);
        Ok(search)
    }

    fn snap(&self, x: &[f64]) -> Vec<i64> {
        snap_key(x, self.grid.snap_tolerance)
    }

    fn insert(
        &mut self,
        state: State,
        parent: Option<usize>,
        control: Option<usize>,
        g: f64,
    ) -> usize {
        let h = heuristic(&state, self.scenario, self.grid.heuristic_peak);
        let id = self.nodes.len();
        self.index.insert(self.snap(&state), id);
        self.nodes.push(LatticeNode {
            state,
            parent,
            control,
            g,
            h,
        });
        self.open_key.push(None);
        self.enqueue(id);
        id
    }

    fn enqueue(&mut self, id: usize) {
        if let Some(old) = self.open_key[id].take() {
            self.open.remove(&old);
        }
        let node = &self.nodes[id];
        let key = ((node.g + node.h).to_bits(), self.pushes, id);
        self.pushes += 1;
        self.open.insert(key);
        self.open_key[id] = Some(key);
    }

    pub fn expansions(&self) -> usize {
        self.expansions
    }

    pub fn is_exhausted(&self) -> bool {
        self.open.is_empty()
    }

    pub fn state(&self, id: usize) -> &State {
        &self.nodes[id].state
    }

    /// Cost-to-come of a lattice node.
    pub fn cost_to_come(&self, id: usize) -> f64 {
        self.nodes[id].g
    }

    /// Pops the open node with the lowest `g + h` and generates its children.
    /// Returns the expanded node, or `None` once the open list is empty.
    pub fn expand_next(&mut self) -> Option<usize> {
        let key = self.open.pop_first()?;
        let id = key.2;
        self.open_key[id] = None;
        self.expansions += 1;
        let parent_state = self.nodes[id].state.clone();
        let parent_g = self.nodes[id].g;
        let mut raw = vec![0.0; parent_state.dim()];
        for c in 0..self.grid.control_set.len() {
            let u = &self.grid.control_set[c];
            if u.iter().all(|v| *v == 0.0) {
                continue;
            }
            if !self
                .scenario
                .propagate_into(&parent_state, u, self.grid.step_duration, &mut raw)
            {
                continue;
            }
            if !segment_valid(
                &parent_state,
                &raw,
                self.scenario,
                self.scenario.edge_resolution,
            ) {
                continue;
            }
            let key = self.snap(&raw);
            let existing = self.index.get(&key).copied();
            let child = match existing {
                Some(e) => self.nodes[e].state.clone(),
                None => State(
                    key.iter()
                        .map(|k| *k as f64 * self.grid.snap_tolerance)
                        .collect(),
                ),
            };
            let g = parent_g + transition_cost(&parent_state, &child, &self.scenario.reward_field);
            match existing {
                None => {
                    self.insert(child, Some(id), Some(c), g);
                }
                Some(existing) if g < self.nodes[existing].g => {
                    let node = &mut self.nodes[existing];
                    node.g = g;
                    node.parent = Some(id);
                    node.control = Some(c);
                    self.enqueue(existing);
                }
                Some(_) => {}
            }
        }
        Some(id)
    }

    /// The next `n` nodes in expansion order, each paired with its parent
    /// (the start is paired with itself).
    pub fn frontier(&self, n: usize) -> Vec<(State, State)> {
        self.open
            .iter()
            .take(n)
            .map(|&(_, _, id)| {
                let node = &self.nodes[id];
                let parent = node.parent.map_or(&node.state, |p| &self.nodes[p].state);
                (parent.clone(), node.state.clone())
            })
            .collect()
    }

    /// Path from the start to lattice node `id`.
    pub fn path_to(&self, id: usize) -> Result<Path> {
        let mut chain = Vec::new();
        let mut at = id;
        while let (Some(p), Some(c)) = (self.nodes[at].parent, self.nodes[at].control) {
            let x_p = self.nodes[p].state.clone();
            let x_c = self.nodes[at].state.clone();
            let reward = self.scenario.reward_field.transition_reward(&x_p, &x_c);
            chain.push(Transition {
                x_p,
                u: Control(self.grid.control_set[c].clone()),
                d: self.grid.step_duration,
                x_trg: x_c.clone(),
                x_c,
                reward,
            });
            at = p;
        }
        chain.reverse();
        Path::new(chain, &self.scenario.reward_field)
    }
}

/// Lattice A* from the start to the goal region. `None` when the reachable
/// lattice holds no goal state.
pub fn astar_plan(scenario: &Scenario, grid: &GridSearchConfig) -> Result<Option<Path>> {
    let mut search = AstarSearch::new(scenario, grid.clone())?;
    while let Some(id) = search.expand_next() {
        if scenario.in_goal(search.state(id)) {
            return search.path_to(id).map(Some);
        }
    }
    Ok(None)
}

/// Rewards of `batch_size` transitions built from `sampler` proposals.
/// A missing proposal or a failed extension counts as 0.
pub fn batch_rewards<R, S>(
    mut sampler: S,
    arm: usize,
    tree: &SearchTree,
    batch_size: usize,
    scenario: &Scenario,
    config: &PlannerConfig,
    rng: &mut R,
) -> Vec<f64>
where
    R: Rng + ?Sized,
    S: FnMut(&mut R) -> Option<Proposal>,
{
    (0..batch_size)
        .map(|_| {
            sampler(rng)
                .and_then(|p| extend(&p, arm, tree, scenario, config, rng))
                .map_or(0.0, |t| t.reward)
        })
        .collect()
}

/// Mean reward of a batch; see [`batch_rewards`].
pub fn expected_batch_reward<R, S>(
    sampler: S,
    arm: usize,
    tree: &SearchTree,
    batch_size: usize,
    scenario: &Scenario,
    config: &PlannerConfig,
    rng: &mut R,
) -> f64
where
    R: Rng + ?Sized,
    S: FnMut(&mut R) -> Option<Proposal>,
{
    let rewards = batch_rewards(sampler, arm, tree, batch_size, scenario, config, rng);
    rewards.iter().sum::<f64>() / rewards.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    KfManb,
    Ucb1,
    Ts,
    Random,
    Astar,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::KfManb,
        Strategy::Ucb1,
        Strategy::Ts,
        Strategy::Random,
        Strategy::Astar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::KfManb => "kfmanb",
            Strategy::Ucb1 => "ucb1",
            Strategy::Ts => "ts",
            Strategy::Random => "random",
            Strategy::Astar => "astar",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegretConfig {
    /// Planner that grows the shared tree; its policy is forced to KF-MANB.
    pub planner: PlannerConfig,
    pub batch_size: usize,
    pub grid: GridSearchConfig,
}

impl Default for RegretConfig {
    fn default() -> Self {
        RegretConfig {
            planner: PlannerConfig::default(),
            batch_size: 50,
            grid: GridSearchConfig::default(),
        }
    }
}

impl RegretConfig {
    pub fn validate(&self) -> Result<()> {
        self.planner.validate()?;
        self.grid.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Regret of every strategy at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretRecord {
    pub iteration: usize,
    pub per_strategy_regret: BTreeMap<Strategy, f64>,
    /// Best batch mean of the iteration.
    pub best_expected_reward: f64,
}

/// Cumulative regret curves of one harness run.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretSeries {
    pub records: Vec<RegretRecord>,
    /// Running sums, indexed like `records`.
    pub cumulative: BTreeMap<Strategy, Vec<f64>>,
}

impl RegretSeries {
    pub fn final_cumulative(&self, strategy: Strategy) -> f64 {
        self.cumulative
            .get(&strategy)
            .and_then(|v| v.last().copied())
            .unwrap_or(0.0)
    }
}

/// Couples a KF-MANB planner with shadow UCB-1 and Thompson bandits and the
/// lattice search, all evaluated on the planner's current tree.
#[derive(Debug, Clone)]
pub struct RegretHarness<'a> {
    scenario: &'a Scenario,
    config: RegretConfig,
    runner: MabRrt<'a>,
    ucb1: ArmSet,
    ts: ArmSet,
    runs_seen: usize,
    astar: AstarSearch<'a>,
    streams: Vec<ChaCha8Rng>,
    cumulative: [f64; 5],
}

impl<'a> RegretHarness<'a> {
    pub fn new(scenario: &'a Scenario, mut config: RegretConfig) -> Result<Self> {
        config.planner.policy = Policy::KfManb;
        config.planner.goal_bias_only = false;
        config.validate()?;
        let runner = MabRrt::new(scenario, config.planner.clone())?;
        let initial = vec![0.0; FIRST_CLUSTER_ARM];
        let ucb1 = ArmSet::initialize(&initial, Policy::Ucb1, config.planner.bandit)?;
        let ts = ArmSet::initialize(&initial, Policy::Thompson, config.planner.bandit)?;
        // one stream per strategy plus one for the shared arm batches
        let streams = (0..=Strategy::ALL.len())
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.planner.rng_seed);
                rng.set_stream(1 + i as u64);
                rng
            })
            .collect();
        let astar = AstarSearch::new(scenario, config.grid.clone())?;
        Ok(RegretHarness {
            scenario,
            config,
            runner,
            ucb1,
            ts,
            runs_seen: 0,
            astar,
            streams,
            cumulative: [0.0; 5],
        })
    }

    pub fn planner(&self) -> &MabRrt<'a> {
        &self.runner
    }

    pub fn is_finished(&self) -> bool {
        self.runner.is_finished()
    }

    fn resync_shadows(&mut self) -> Result<()> {
        if self.runner.runs_completed() == self.runs_seen {
            return Ok(());
        }
        self.runs_seen = self.runner.runs_completed();
        let mut initial = vec![0.0; FIRST_CLUSTER_ARM];
        initial.extend(self.runner.clusters().avg_rewards());
        self.ucb1 = ArmSet::initialize(&initial, Policy::Ucb1, self.config.planner.bandit)?;
        self.ts = ArmSet::initialize(&initial, Policy::Thompson, self.config.planner.bandit)?;
        Ok(())
    }

    /// Batch rewards of every arm. The bandit strategies share arms, tree and
    /// clusters, so one set of batches serves all of them.
    fn arm_batches(&mut self) -> Vec<Vec<f64>> {
        let runner = &self.runner;
        let (tree, clusters, db) = (runner.tree(), runner.clusters(), runner.database());
        let planner = &self.config.planner;
        let rng = &mut self.streams[Strategy::ALL.len()];
        (0..clusters.len() + FIRST_CLUSTER_ARM)
            .map(|arm| {
                batch_rewards(
                    |r: &mut ChaCha8Rng| {
                        propose(arm, clusters, db, tree, self.scenario, planner, r)
                    },
                    arm,
                    tree,
                    self.config.batch_size,
                    self.scenario,
                    planner,
                    rng,
                )
            })
            .collect()
    }

    /// Evaluates all strategies on the current tree, then grows the tree by
    /// one planner iteration.
    pub fn regret_step(&mut self) -> Result<RegretRecord> {
        self.resync_shadows()?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let mut rewards = [0.0; 5];
        let mut best = f64::NEG_INFINITY;

        let batches = self.arm_batches();
        for b in &batches {
            best = best.max(mean(b));
        }
        for strategy in [Strategy::KfManb, Strategy::Ucb1, Strategy::Ts] {
            let rng = &mut self.streams[strategy.index()];
            let arm = match strategy {
                Strategy::KfManb => self.runner.arms().clone().select_next_arm(rng),
                Strategy::Ucb1 => self.ucb1.select_next_arm(rng),
                _ => self.ts.select_next_arm(rng),
            };
            // the shadow bandits learn from one draw, as they would online
            match strategy {
                Strategy::Ucb1 => self.ucb1.update(batches[arm][0])?,
                Strategy::Ts => self.ts.update(batches[arm][0])?,
                _ => {}
            }
            rewards[strategy.index()] = mean(&batches[arm]);
        }

        let tree = self.runner.tree();
        let planner = &self.config.planner;
        let batch = self.config.batch_size;

        let rng = &mut self.streams[Strategy::Random.index()];
        rewards[Strategy::Random.index()] = expected_batch_reward(
            |r: &mut ChaCha8Rng| Some(sample_uniform_or_goal(UNIFORM_ARM, tree, self.scenario, r)),
            UNIFORM_ARM,
            tree,
            batch,
            self.scenario,
            planner,
            rng,
        );

        let frontier = self.astar.frontier(batch);
        let rng = &mut self.streams[Strategy::Astar.index()];
        rewards[Strategy::Astar.index()] = if frontier.is_empty() {
            0.0
        } else {
            let mut next = 0;
            expected_batch_reward(
                |_: &mut ChaCha8Rng| {
                    let (parent, child) = &frontier[next % frontier.len()];
                    next += 1;
                    Some(Proposal {
                        parent: tree.nearest(parent),
                        target: child.clone(),
                    })
                },
                FIRST_CLUSTER_ARM,
                tree,
                batch,
                self.scenario,
                planner,
                rng,
            )
        };
        self.astar.expand_next();

        for r in &rewards[3..] {
            best = best.max(*r);
        }
        let iteration = self.runner.iteration() + 1;
        let mut per_strategy_regret = BTreeMap::new();
        for s in Strategy::ALL {
            let regret = best - rewards[s.index()];
            self.cumulative[s.index()] += regret;
            per_strategy_regret.insert(s, regret);
        }
        self.runner.step()?;
        Ok(RegretRecord {
            iteration,
            per_strategy_regret,
            best_expected_reward: best,
        })
    }

    /// Runs the remaining iterations.
    pub fn run(mut self) -> Result<RegretSeries> {
        let mut records = Vec::with_capacity(self.config.planner.total_iterations);
        let mut cumulative: BTreeMap<Strategy, Vec<f64>> =
            Strategy::ALL.iter().map(|s| (*s, Vec::new())).collect();
        while !self.is_finished() {
            records.push(self.regret_step()?);
            for s in Strategy::ALL {
                cumulative
                    .get_mut(&s)
                    .unwrap()
                    .push(self.cumulative[s.index()]);
            }
        }
        Ok(RegretSeries {
            records,
            cumulative,
        })
    }
}

/// Runs the regret harness for `config.planner.total_iterations` iterations.
pub fn regret_series(scenario: &Scenario, config: &RegretConfig) -> Result<RegretSeries> {
    RegretHarness::new(scenario, config.clone())?.run()
}
