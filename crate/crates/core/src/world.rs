//! State and control spaces, dynamics, validity checking, reward fields and
//! scenario ingestion.
//!
//! The benchmark scenarios are planar single integrators (`ẋ = u`) on the
//! unit square with axis-aligned rectangular obstacles. Other dynamics can be
//! plugged in through [`Dynamics`]; every other type here is dimension-generic.

use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default spacing between collision samples along a transition segment.
pub const DEFAULT_EDGE_RESOLUTION: f64 = 0.01;

/// A point in the state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct State(pub Vec<f64>);

impl State {
    pub fn new(coordinates: impl Into<Vec<f64>>) -> Self {
        State(coordinates.into())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn distance(&self, other: &[f64]) -> f64 {
        euclidean(&self.0, other)
    }
}

impl Deref for State {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for State {
    fn from(v: Vec<f64>) -> Self {
        State(v)
    }
}

/// A control input, held constant over one transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Control(pub Vec<f64>);

impl Control {
    pub fn new(values: impl Into<Vec<f64>>) -> Self {
        Control(values.into())
    }
}

impl Deref for Control {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_euclidean(a, b).sqrt()
}

#[inline]
pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Closed axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AaBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl AaBox {
    pub fn new(lo: impl Into<Vec<f64>>, hi: impl Into<Vec<f64>>) -> Result<Self> {
        let (lo, hi) = (lo.into(), hi.into());
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidScenario(format!(
                "box bounds have mismatched dimensions {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        if lo.iter().chain(&hi).any(|v| !v.is_finite()) {
            return Err(Error::InvalidScenario("box bounds must be finite".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| l > h) {
            return Err(Error::InvalidScenario(format!(
                "box lower bound {lo:?} exceeds upper bound {hi:?}"
            )));
        }
        Ok(AaBox { lo, hi })
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    /// `self ⊆ other`.
    pub fn is_within(&self, other: &AaBox) -> bool {
        self.dim() == other.dim() && other.contains(&self.lo) && other.contains(&self.hi)
    }

    /// Euclidean distance from `x` to the closest point of the box (0 inside).
    pub fn distance_to(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| {
                let gap = (l - v).max(v - h).max(0.0);
                gap * gap
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| if h > l { rng.random_range(*l..=*h) } else { *l })
            .collect()
    }
}

/// State-indexed reward `ρ_x ∈ [0, 1]`. Regions are tested in list order and
/// the first containing region wins; states outside every region get the
/// default value.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardField {
    regions: Vec<(AaBox, f64)>,
    default_value: f64,
}

impl RewardField {
    pub fn new(regions: Vec<(AaBox, f64)>, default_value: f64) -> Result<Self> {
        let in_range = |v: f64| (0.0..=1.0).contains(&v);
        if !in_range(default_value) {
            return Err(Error::InvalidScenario(format!(
                "default reward {default_value} outside [0, 1]"
            )));
        }
        if let Some((_, v)) = regions.iter().find(|(_, v)| !in_range(*v)) {
            return Err(Error::InvalidScenario(format!(
                "region reward {v} outside [0, 1]"
            )));
        }
        Ok(RewardField {
            regions,
            default_value,
        })
    }

    pub fn uniform(value: f64) -> Result<Self> {
        RewardField::new(Vec::new(), value)
    }

    pub fn regions(&self) -> &[(AaBox, f64)] {
        &self.regions
    }

    pub fn default_value(&self) -> f64 {
        self.default_value
    }

    #[inline]
    pub fn value_at(&self, x: &[f64]) -> f64 {
        self.regions
            .iter()
            .find(|(region, _)| region.contains(x))
            .map_or(self.default_value, |(_, v)| *v)
    }

    /// Upper bound of `ρ_x` over the whole space.
    pub fn max_value(&self) -> f64 {
        self.regions
            .iter()
            .map(|(_, v)| *v)
            .fold(self.default_value, f64::max)
    }

    /// `ρ(τ) = ½(ρ_x(x_p) + ρ_x(x_c))`.
    #[inline]
    pub fn transition_reward(&self, x_p: &[f64], x_c: &[f64]) -> f64 {
        0.5 * (self.value_at(x_p) + self.value_at(x_c))
    }
}

/// One tree edge: `(x_p, u, d, x_c, x_trg)` plus the reward it realized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub x_p: State,
    pub u: Control,
    pub d: f64,
    pub x_c: State,
    pub x_trg: State,
    pub reward: f64,
}

impl Transition {
    pub fn length(&self) -> f64 {
        self.x_p.distance(&self.x_c)
    }
}

/// Staircase-control solution: a chained sequence of transitions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Path {
    pub transitions: Vec<Transition>,
    pub total_cost: f64,
}

impl Path {
    /// Builds a path, checking that consecutive transitions chain.
    pub fn new(transitions: Vec<Transition>, field: &RewardField) -> Result<Self> {
        if let Some(i) = transitions.windows(2).position(|w| w[0].x_c != w[1].x_p) {
            return Err(Error::Contract(format!(
                "transitions {i} and {} do not chain",
                i + 1
            )));
        }
        let total_cost = path_cost(&transitions, field);
        Ok(Path {
            transitions,
            total_cost,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    /// Visited states, start first.
    pub fn states(&self) -> Vec<&State> {
        let mut out: Vec<&State> = self.transitions.iter().map(|t| &t.x_p).collect();
        if let Some(last) = self.transitions.last() {
            out.push(&last.x_c);
        }
        out
    }
}

pub fn reward_of(transition: &Transition, field: &RewardField) -> f64 {
    field.transition_reward(&transition.x_p, &transition.x_c)
}

/// `c(σ) = Σ (1 − ρ(τ))·‖x_p − x_c‖`.
pub fn path_cost(transitions: &[Transition], field: &RewardField) -> f64 {
    transitions
        .iter()
        .map(|t| transition_cost(&t.x_p, &t.x_c, field))
        .sum()
}

#[inline]
pub fn transition_cost(x_p: &[f64], x_c: &[f64], field: &RewardField) -> f64 {
    (1.0 - field.transition_reward(x_p, x_c)) * euclidean(x_p, x_c)
}

/// Forward dynamics `ẋ = f(x, u)` integrated over a duration.
pub trait Dynamics: fmt::Debug + Send + Sync {
    fn propagate_into(&self, x: &[f64], u: &[f64], d: f64, out: &mut [f64]);

    /// True when transitions trace straight segments in state space, so that
    /// checking the chord between endpoints checks the whole trajectory.
    fn straight_line_trajectories(&self) -> bool {
        false
    }
}

/// `ẋ = u`, integrated exactly: `x + u·d`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SingleIntegrator;

impl Dynamics for SingleIntegrator {
    #[inline]
    fn propagate_into(&self, x: &[f64], u: &[f64], d: f64, out: &mut [f64]) {
        for ((o, xi), ui) in out.iter_mut().zip(x).zip(u) {
            *o = xi + ui * d;
        }
    }

    fn straight_line_trajectories(&self) -> bool {
        true
    }
}

/// A fully specified planning problem.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub state_bounds: AaBox,
    pub control_bounds: AaBox,
    pub obstacles: Vec<AaBox>,
    pub goal: AaBox,
    pub start: State,
    pub reward_field: RewardField,
    pub edge_resolution: f64,
    pub dynamics: Arc<dyn Dynamics>,
}

impl Scenario {
    /// Validates the scenario invariants and assembles a single-integrator
    /// scenario.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        state_bounds: AaBox,
        control_bounds: AaBox,
        obstacles: Vec<AaBox>,
        goal: AaBox,
        start: State,
        reward_field: RewardField,
    ) -> Result<Self> {
        let scenario = Scenario {
            name: name.into(),
            state_bounds,
            control_bounds,
            obstacles,
            goal,
            start,
            reward_field,
            edge_resolution: DEFAULT_EDGE_RESOLUTION,
            dynamics: Arc::new(SingleIntegrator),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Unit square, `U = [−0.5, 0.5]²`, no obstacles, uniform reward.
    pub fn open_unit_square(start: [f64; 2], goal: AaBox, reward: f64) -> Result<Self> {
        Scenario::new(
            "open",
            AaBox::new([0.0, 0.0], [1.0, 1.0])?,
            AaBox::new([-0.5, -0.5], [0.5, 0.5])?,
            Vec::new(),
            goal,
            State::new(start),
            RewardField::uniform(reward)?,
        )
    }

    pub fn with_dynamics(mut self, dynamics: Arc<dyn Dynamics>) -> Self {
        self.dynamics = dynamics;
        self
    }

    pub fn with_edge_resolution(mut self, resolution: f64) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::InvalidScenario(format!(
                "edge resolution must be positive, got {resolution}"
            )));
        }
        self.edge_resolution = resolution;
        Ok(self)
    }

    pub fn state_dim(&self) -> usize {
        self.state_bounds.dim()
    }

    pub fn control_dim(&self) -> usize {
        self.control_bounds.dim()
    }

    fn validate(&self) -> Result<()> {
        let n = self.state_dim();
        let invalid = |msg: String| Err(Error::InvalidScenario(msg));
        if self.start.dim() != n || self.goal.dim() != n {
            return invalid("start and goal must match the state dimension".into());
        }
        if self.obstacles.iter().any(|o| o.dim() != n) {
            return invalid("obstacle dimension mismatch".into());
        }
        if self
            .reward_field
            .regions()
            .iter()
            .any(|(r, _)| r.dim() != n)
        {
            return invalid("reward region dimension mismatch".into());
        }
        if self.state_bounds.volume() <= 0.0 {
            return invalid("state space must have positive volume".into());
        }
        if !self.goal.is_within(&self.state_bounds) {
            return invalid("goal region must lie inside the state space".into());
        }
        if self.goal.volume() <= 0.0 {
            return invalid("goal region must have positive volume".into());
        }
        if self.start.iter().any(|v| !v.is_finite()) {
            return invalid("start state must be finite".into());
        }
        if !is_valid(&self.start, self) {
            return invalid(format!(
                "start {:?} is outside the free space",
                self.start.0
            ));
        }
        Ok(())
    }

    /// Propagates into `out` and reports whether the result stays in `X`.
    #[inline]
    pub fn propagate_into(&self, x: &[f64], u: &[f64], d: f64, out: &mut [f64]) -> bool {
        self.dynamics.propagate_into(x, u, d, out);
        self.state_bounds.contains(out)
    }

    pub fn sample_control<R: Rng + ?Sized>(&self, rng: &mut R) -> Control {
        Control(self.control_bounds.sample(rng))
    }

    pub fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        State(self.state_bounds.sample(rng))
    }

    pub fn sample_goal<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        State(self.goal.sample(rng))
    }

    pub fn in_goal(&self, x: &[f64]) -> bool {
        self.goal.contains(x)
    }
}

/// Integrates the scenario dynamics; a result outside `X` is an error.
pub fn propagate(x: &State, u: &Control, d: f64, scenario: &Scenario) -> Result<State> {
    if !(d > 0.0) {
        return Err(Error::Contract(format!(
            "duration must be positive, got {d}"
        )));
    }
    let mut out = vec![0.0; x.dim()];
    if scenario.propagate_into(x, u, d, &mut out) {
        Ok(State(out))
    } else {
        Err(Error::OutOfBounds(out))
    }
}

/// Membership in `X_free`: inside the bounds and outside every (closed) obstacle.
#[inline]
pub fn is_valid(x: &[f64], scenario: &Scenario) -> bool {
    scenario.state_bounds.contains(x) && !scenario.obstacles.iter().any(|o| o.contains(x))
}

/// Checks evenly spaced states (spacing ≤ `resolution`, endpoints included)
/// along the straight segment from `x_p` to `x_c`.
pub fn segment_valid(x_p: &[f64], x_c: &[f64], scenario: &Scenario, resolution: f64) -> bool {
    debug_assert!(resolution > 0.0);
    let steps = (euclidean(x_p, x_c) / resolution).ceil().max(1.0) as usize;
    let mut point = vec![0.0; x_p.len()];
    (0..=steps).all(|i| {
        let t = i as f64 / steps as f64;
        for ((p, a), b) in point.iter_mut().zip(x_p).zip(x_c) {
            *p = a + (b - a) * t;
        }
        is_valid(&point, scenario)
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxConfig {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionConfig {
    lo: Vec<f64>,
    hi: Vec<f64>,
    value: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioConfig {
    #[serde(default)]
    name: Option<String>,
    state_dim: usize,
    state_lo: Vec<f64>,
    state_hi: Vec<f64>,
    control_lo: Vec<f64>,
    control_hi: Vec<f64>,
    start: Vec<f64>,
    goal: BoxConfig,
    #[serde(default)]
    obstacles: Vec<BoxConfig>,
    #[serde(default)]
    reward_regions: Vec<RegionConfig>,
    reward_default: f64,
    #[serde(default)]
    edge_resolution: Option<f64>,
}

/// Parses and validates a TOML scenario description.
pub fn load_scenario(config_text: &str) -> Result<Scenario> {
    let cfg: ScenarioConfig =
        toml::from_str(config_text).map_err(|e| Error::Parse(e.to_string()))?;
    let n = cfg.state_dim;
    if n == 0 {
        return Err(Error::InvalidScenario("state_dim must be positive".into()));
    }
    for (key, len) in [
        ("state_lo", cfg.state_lo.len()),
        ("state_hi", cfg.state_hi.len()),
        ("start", cfg.start.len()),
    ] {
        if len != n {
            return Err(Error::InvalidScenario(format!(
                "{key} has {len} entries, state_dim is {n}"
            )));
        }
    }
    let regions = cfg
        .reward_regions
        .into_iter()
        .map(|r| Ok((AaBox::new(r.lo, r.hi)?, r.value)))
        .collect::<Result<Vec<_>>>()?;
    let obstacles = cfg
        .obstacles
        .into_iter()
        .map(|o| AaBox::new(o.lo, o.hi))
        .collect::<Result<Vec<_>>>()?;
    let scenario = Scenario::new(
        cfg.name.unwrap_or_else(|| "scenario".to_string()),
        AaBox::new(cfg.state_lo, cfg.state_hi)?,
        AaBox::new(cfg.control_lo, cfg.control_hi)?,
        obstacles,
        AaBox::new(cfg.goal.lo, cfg.goal.hi)?,
        State(cfg.start),
        RewardField::new(regions, cfg.reward_default)?,
    )?;
    match cfg.edge_resolution {
        Some(res) => scenario.with_edge_resolution(res),
        None => Ok(scenario),
    }
}

/// The bundled benchmark scenarios, by short name.
pub const BUNDLED_SCENARIOS: [(&str, &str); 5] = [
    ("A", include_str!("../scenarios/scenario_A.toml")),
    ("B", include_str!("../scenarios/scenario_B.toml")),
    ("C", include_str!("../scenarios/scenario_C.toml")),
    ("D", include_str!("../scenarios/scenario_D.toml")),
    ("E", include_str!("../scenarios/scenario_E.toml")),
];

/// Loads a bundled scenario by letter (`"A"`) or full name (`"scenario_A"`).
pub fn bundled_scenario(name: &str) -> Result<Scenario> {
    let key = name.strip_prefix("scenario_").unwrap_or(name);
    BUNDLED_SCENARIOS
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(key))
        .ok_or_else(|| Error::InvalidConfig(format!("unknown bundled scenario {name:?}")))
        .and_then(|(_, text)| load_scenario(text))
}
