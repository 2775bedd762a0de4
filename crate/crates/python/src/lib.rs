//! Python bindings for scenarios, planners, the bandit, clustering and the
//! lattice search.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mabrrt::clustering::hdbscan_labels;
use mabrrt::experiment::planner_preset;
use mabrrt::regret::{astar_plan, regret_series, GridSearchConfig, RegretConfig};
use mabrrt::world::{is_valid, BUNDLED_SCENARIOS};
use mabrrt::{Control, KfManbConfig, Policy, State, Transition, TransitionDatabase};

fn py_err(e: mabrrt::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A planning problem.
#[pyclass(name = "Scenario", module = "mabrrt", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyScenario {
    inner: mabrrt::Scenario,
}

#[pymethods]
impl PyScenario {
    /// One of the bundled scenarios, by name ("A" to "E").
    #[staticmethod]
    fn bundled(name: &str) -> PyResult<Self> {
        mabrrt::bundled_scenario(name)
            .map(|inner| PyScenario { inner })
            .map_err(py_err)
    }

    /// Parses a scenario description in TOML.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        mabrrt::load_scenario(text)
            .map(|inner| PyScenario { inner })
            .map_err(py_err)
    }

    /// Names accepted by `bundled`.
    #[staticmethod]
    fn bundled_names() -> Vec<&'static str> {
        BUNDLED_SCENARIOS.iter().map(|(n, _)| *n).collect()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn start(&self) -> Vec<f64> {
        self.inner.start.0.clone()
    }

    /// Goal region as `(lo, hi)`.
    #[getter]
    fn goal(&self) -> (Vec<f64>, Vec<f64>) {
        (self.inner.goal.lo().to_vec(), self.inner.goal.hi().to_vec())
    }

    fn in_goal(&self, x: Vec<f64>) -> bool {
        self.inner.in_goal(&x)
    }

    fn is_valid(&self, x: Vec<f64>) -> bool {
        is_valid(&x, &self.inner)
    }

    fn reward_at(&self, x: Vec<f64>) -> f64 {
        self.inner.reward_field.value_at(&x)
    }

    fn __repr__(&self) -> String {
        format!("Scenario({:?})", self.inner.name)
    }
}

/// Outcome of one planner run.
#[pyclass(name = "PlanResult", module = "mabrrt", frozen, get_all)]
pub struct PyPlanResult {
    /// `inf` when no path was found.
    best_cost: f64,
    /// `(iteration, best cost)` at every improvement.
    cost_trace: Vec<(usize, f64)>,
    /// States of the best path, start first; empty when unsolved.
    path: Vec<Vec<f64>>,
    runs_completed: usize,
    mean_iteration_seconds: f64,
    reclusterings: usize,
}

#[pymethods]
impl PyPlanResult {
    fn __repr__(&self) -> String {
        format!(
            "PlanResult(best_cost={}, improvements={}, runs_completed={})",
            self.best_cost,
            self.cost_trace.len(),
            self.runs_completed
        )
    }
}

/// Runs a planner preset ("ao", "kfmanb", "ucb1" or "ts") on `scenario`.
#[pyfunction]
#[pyo3(signature = (scenario, planner = "kfmanb", seed = 0, iterations = 1000))]
fn plan(
    py: Python<'_>,
    scenario: &PyScenario,
    planner: &str,
    seed: u64,
    iterations: usize,
) -> PyResult<PyPlanResult> {
    let mut config = planner_preset(planner).map_err(py_err)?;
    config.rng_seed = seed;
    config.total_iterations = iterations;
    let scenario = scenario.inner.clone();
    let result = py
        .detach(|| mabrrt::mab_rrt(&scenario, &config))
        .map_err(py_err)?;
    let path = result.best_path.as_ref().map_or_else(Vec::new, |p| {
        p.states().into_iter().map(|s| s.0.clone()).collect()
    });
    Ok(PyPlanResult {
        best_cost: result.best_cost,
        cost_trace: result.cost_trace,
        path,
        runs_completed: result.runs_completed,
        mean_iteration_seconds: result.timing.mean_seconds,
        reclusterings: result.reclusterings.len(),
    })
}

/// Bandit over a fixed set of arms with a seeded selection stream.
#[pyclass(name = "ArmSet", module = "mabrrt")]
pub struct PyArmSet {
    inner: mabrrt::ArmSet,
    rng: ChaCha8Rng,
}

#[pymethods]
impl PyArmSet {
    #[new]
    #[pyo3(signature = (initial_rewards, policy = "kfmanb", seed = 0))]
    fn new(initial_rewards: Vec<f64>, policy: &str, seed: u64) -> PyResult<Self> {
        let policy: Policy = policy.parse().map_err(py_err)?;
        let inner = mabrrt::ArmSet::initialize(&initial_rewards, policy, KfManbConfig::default())
            .map_err(py_err)?;
        Ok(PyArmSet {
            inner,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn select(&mut self) -> usize {
        self.inner.select_next_arm(&mut self.rng)
    }

    /// Feeds the reward of the last selected arm back.
    fn update(&mut self, reward: f64) -> PyResult<()> {
        self.inner.update(reward).map_err(py_err)
    }

    fn force_select(&mut self, arm: usize) -> PyResult<()> {
        self.inner.force_select(arm).map_err(py_err)
    }

    #[getter]
    fn means(&self) -> Vec<f64> {
        self.inner.means()
    }

    #[getter]
    fn variances(&self) -> Vec<f64> {
        self.inner.variances()
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.inner.eta()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// HDBSCAN labels of `(x_p, x_c, reward)` transitions; `None` marks noise.
#[pyfunction]
#[pyo3(signature = (transitions, n_min = 5, lambda_ = 5.0))]
fn cluster_labels(
    transitions: Vec<(Vec<f64>, Vec<f64>, f64)>,
    n_min: usize,
    lambda_: f64,
) -> PyResult<Vec<Option<usize>>> {
    let mut db = TransitionDatabase::new();
    for (x_p, x_c, reward) in transitions {
        if x_p.len() != x_c.len() {
            return Err(PyValueError::new_err("x_p and x_c differ in dimension"));
        }
        let dim = x_p.len();
        db.push(Transition {
            x_p: State(x_p),
            u: Control(vec![0.0; dim]),
            d: 0.0,
            x_trg: State(x_c.clone()),
            x_c: State(x_c),
            reward,
        });
    }
    Ok(hdbscan_labels(&db, n_min, lambda_))
}

/// Lattice A* from the start to the goal: `(cost, states)` or `None`.
#[pyfunction]
fn astar(py: Python<'_>, scenario: &PyScenario) -> PyResult<Option<(f64, Vec<Vec<f64>>)>> {
    let scenario = scenario.inner.clone();
    let path = py
        .detach(|| astar_plan(&scenario, &GridSearchConfig::default()))
        .map_err(py_err)?;
    Ok(path.map(|p| {
        let mut states = vec![scenario.start.0.clone()];
        states.extend(p.transitions.iter().map(|t| t.x_c.0.clone()));
        (p.total_cost, states)
    }))
}

/// Cumulative regret per strategy after `iterations` steps.
#[pyfunction]
#[pyo3(signature = (scenario, seed = 0, iterations = 1000, batch_size = 50))]
fn regret(
    py: Python<'_>,
    scenario: &PyScenario,
    seed: u64,
    iterations: usize,
    batch_size: usize,
) -> PyResult<BTreeMap<String, f64>> {
    let mut config = RegretConfig {
        batch_size,
        ..RegretConfig::default()
    };
    config.planner.rng_seed = seed;
    config.planner.total_iterations = iterations;
    let scenario = scenario.inner.clone();
    let series = py
        .detach(|| regret_series(&scenario, &config))
        .map_err(py_err)?;
    Ok(series
        .cumulative
        .keys()
        .map(|s| (s.name().to_string(), series.final_cumulative(*s)))
        .collect())
}

#[pymodule]
#[pyo3(name = "mabrrt")]
fn python_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyPlanResult>()?;
    m.add_class::<PyArmSet>()?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_labels, m)?)?;
    m.add_function(wrap_pyfunction!(astar, m)?)?;
    m.add_function(wrap_pyfunction!(regret, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use pyo3::types::PyDict;

    #[test]
    fn module_runs_a_plan_from_python() {
        Python::initialize();
        Python::attach(|py| {
            let module = pyo3::wrap_pymodule!(python_module)(py);
            let globals = PyDict::new(py);
            globals.set_item("mabrrt", module).unwrap();
            let code = c"
s = mabrrt.Scenario.bundled('B')
r = mabrrt.plan(s, planner='kfmanb', seed=2, iterations=300)
assert r.best_cost < float('inf') and s.in_goal(r.path[-1])
arms = mabrrt.ArmSet([0.0, 0.0], policy='ucb1')
arms.select()
arms.update(1.0)
assert arms.means[0] == 1.0
";
            py.run(code, Some(&globals), None).unwrap();
        });
    }
}
