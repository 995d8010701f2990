//! Python bindings for the `bdqcd` detection library.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use bdqcd::asymptotics;
use bdqcd::montecarlo;
use bdqcd::{
    AttackKind, ChangeTime, DensityModel, FusionRule, MatrixMode, Metric, StopMode, TheoryReport,
};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn model_err(e: bdqcd::Error) -> PyErr {
    match e {
        bdqcd::Error::Numeric { .. } | bdqcd::Error::Estimation(_) => PyRuntimeError::new_err(e.to_string()),
        _ => value_err(e),
    }
}

/// Pre-change density followed by the post-change alternatives.
#[pyclass(name = "HypothesisSet", module = "bdqcd", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyHypothesisSet(bdqcd::HypothesisSet);

#[pymethods]
impl PyHypothesisSet {
    /// Build from a JSON list such as `[{"family": "gaussian", "mean": 0, "variance": 1}, ...]`.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let models: Vec<DensityModel> = serde_json::from_str(text).map_err(value_err)?;
        let models = models
            .into_iter()
            .map(DensityModel::validated)
            .collect::<bdqcd::Result<Vec<_>>>()
            .map_err(model_err)?;
        bdqcd::HypothesisSet::new(models).map(Self).map_err(model_err)
    }

    #[staticmethod]
    #[pyo3(signature = (means, variance = 1.0))]
    fn gaussian(means: Vec<f64>, variance: f64) -> PyResult<Self> {
        let models = means
            .into_iter()
            .map(|m| DensityModel::gaussian(m, variance))
            .collect::<bdqcd::Result<Vec<_>>>()
            .map_err(model_err)?;
        bdqcd::HypothesisSet::new(models).map(Self).map_err(model_err)
    }

    /// Number of post-change hypotheses.
    #[getter]
    fn q(&self) -> usize {
        self.0.q()
    }

    fn kl(&self, q: usize, j: usize) -> PyResult<f64> {
        self.0.kl_divergence(q, j).map_err(model_err)
    }

    fn llr(&self, q: usize, j: usize, x: f64) -> PyResult<f64> {
        self.0.log_likelihood_ratio(q, j, x).map_err(model_err)
    }

    /// `(I*, [(I^q, closest j) for q = 1..Q])`.
    fn closest_alternatives(&self) -> (f64, Vec<(f64, usize)>) {
        let ca = self.0.closest_alternatives();
        (ca.i_star, (1..=self.0.q()).map(|q| ca.get(q)).collect())
    }

    fn __len__(&self) -> usize {
        self.0.q() + 1
    }

    fn __repr__(&self) -> String {
        let parts: Vec<String> = self.0.densities().iter().map(ToString::to_string).collect();
        format!("HypothesisSet([{}])", parts.join(", "))
    }
}

/// Monte Carlo summary of one metric.
#[pyclass(name = "Estimate", module = "bdqcd", frozen, skip_from_py_object, get_all)]
#[derive(Clone)]
struct PyEstimate {
    mean: f64,
    ci_halfwidth: f64,
    censor_fraction: f64,
    n: usize,
    lower_estimate: bool,
    undecidable_fraction: f64,
}

#[pymethods]
impl PyEstimate {
    fn __repr__(&self) -> String {
        format!(
            "Estimate(mean={}, ci_halfwidth={}, censor_fraction={}, n={})",
            self.mean, self.ci_halfwidth, self.censor_fraction, self.n
        )
    }
}

fn parse_rule(rule: &str, d: usize, honest: usize, compromised: usize, threshold: f64) -> PyResult<FusionRule> {
    Ok(match rule {
        "simultaneous" => FusionRule::simultaneous(d),
        "multi_shot" => FusionRule::multi_shot(d),
        "one_shot" => FusionRule::one_shot(d),
        "genie" => FusionRule::genie(honest.saturating_sub(compromised).max(1), threshold),
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown rule '{other}' (expected simultaneous, multi_shot, one_shot or genie)"
            )))
        }
    })
}

fn parse_attack(attack: &str, target: Option<usize>) -> PyResult<AttackKind> {
    Ok(match attack {
        "absent" => AttackKind::Absent,
        "silent_h0" => AttackKind::SilentH0,
        "always_alarm" => AttackKind::AlwaysAlarm { target },
        "reverse" => AttackKind::Reverse,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown attack '{other}' (expected absent, silent_h0, always_alarm or reverse)"
            )))
        }
    })
}

/// A complete experiment: sensors, attack, fusion rule and trial budget.
#[pyclass(name = "Scenario", module = "bdqcd", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyScenario(montecarlo::Scenario);

#[pymethods]
impl PyScenario {
    /// `change=None` means the change never happens.
    #[new]
    #[pyo3(signature = (
        hypotheses, honest, rule, d, threshold, *, compromised = 0, attack = "absent", target = None,
        change = Some(0), true_hypothesis = 1, seed = 0, trials = 2000, horizon = None,
        reduced = false, epochal = false
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        hypotheses: &PyHypothesisSet,
        honest: usize,
        rule: &str,
        d: usize,
        threshold: f64,
        compromised: usize,
        attack: &str,
        target: Option<usize>,
        change: Option<u64>,
        true_hypothesis: usize,
        seed: u64,
        trials: usize,
        horizon: Option<u64>,
        reduced: bool,
        epochal: bool,
    ) -> PyResult<Self> {
        let change = change.map_or(ChangeTime::Never, ChangeTime::At);
        let horizon = horizon.unwrap_or(match change {
            ChangeTime::Never => montecarlo::FALSE_ALARM_HORIZON,
            ChangeTime::At(_) => montecarlo::DELAY_HORIZON,
        });
        let sc = montecarlo::Scenario::new(
            hypotheses.0.clone(),
            honest,
            parse_rule(rule, d, honest, compromised, threshold)?,
            threshold,
        )
        .with_attack(parse_attack(attack, target)?, compromised)
        .with_change(change, true_hypothesis)
        .with_seed(seed)
        .with_trials(trials)
        .with_horizon(horizon)
        .with_matrix_mode(if reduced { MatrixMode::Reduced } else { MatrixMode::Full })
        .with_stop(if epochal { StopMode::Epochal } else { StopMode::Single });
        sc.validate().map_err(model_err)?;
        Ok(Self(sc))
    }

    /// Estimate `"delay"`, `"false_alarm"` or `"false_isolation"` (with `target`).
    /// Trials run in parallel with the GIL released.
    #[pyo3(signature = (metric = "delay", target = None))]
    fn estimate(&self, py: Python<'_>, metric: &str, target: Option<usize>) -> PyResult<PyEstimate> {
        let metric = match (metric, target) {
            ("delay", _) => Metric::Delay,
            ("false_alarm", _) => Metric::FalseAlarm,
            ("false_isolation", Some(q)) => Metric::FalseIsolation(q),
            ("false_isolation", None) => return Err(PyValueError::new_err("false_isolation needs a target")),
            (other, _) => return Err(PyValueError::new_err(format!("unknown metric '{other}'"))),
        };
        let sc = self.0.clone();
        let (est, undecidable) = py
            .detach(move || montecarlo::estimate(&sc, metric))
            .map_err(model_err)?;
        Ok(PyEstimate {
            mean: est.mean,
            ci_halfwidth: est.ci_halfwidth,
            censor_fraction: est.censor_fraction,
            n: est.n,
            lower_estimate: est.lower_estimate,
            undecidable_fraction: undecidable,
        })
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.0.threshold
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(value_err)
    }
}

/// Local threshold certifying a mean time to false alarm of at least `gamma`.
#[pyfunction]
fn calibrate_h(rule: &str, n: usize, m: usize, d: usize, gamma: f64) -> PyResult<f64> {
    let rule = parse_rule(rule, d, n, m, 1.0)?;
    asymptotics::calibrate_h(&rule, n, m, gamma).map_err(model_err)
}

/// Expected `d`-th order statistic of `n` standard normals.
#[pyfunction]
fn xi_d(n: usize, d: usize) -> PyResult<f64> {
    asymptotics::xi_d(n, d).map_err(model_err)
}

/// Asymptotic constants as a JSON string.
#[pyfunction]
#[pyo3(signature = (hypotheses, honest, compromised = 0))]
fn theory(hypotheses: &PyHypothesisSet, honest: usize, compromised: usize) -> PyResult<String> {
    let report = TheoryReport::new(&hypotheses.0, honest, compromised).map_err(model_err)?;
    serde_json::to_string(&report).map_err(value_err)
}

#[pymodule(name = "bdqcd")]
fn bdqcd_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHypothesisSet>()?;
    m.add_class::<PyEstimate>()?;
    m.add_class::<PyScenario>()?;
    m.add_function(wrap_pyfunction!(calibrate_h, m)?)?;
    m.add_function(wrap_pyfunction!(xi_d, m)?)?;
    m.add_function(wrap_pyfunction!(theory, m)?)?;
    Ok(())
}
