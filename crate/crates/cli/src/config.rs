//! Experiment configuration files (TOML).
//!
//! Parsing happens in two passes: serde maps the document onto loosely
//! typed `Raw*` structs (syntax and unknown keys fail here, with a
//! position), then [`validate`] checks every semantic rule and reports all
//! violations at once.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use bdqcd::asymptotics::calibrate_h;
use bdqcd::montecarlo::{DEFAULT_TRIALS, DELAY_HORIZON, FALSE_ALARM_HORIZON};
use bdqcd::{
    AttackKind, AttackStrategy, ChangeTime, DensityModel, FusionRule, HypothesisSet, MatrixMode, Metric, RuleKind,
    Scenario, StopMode, SweepAxis,
};

const FAMILIES: &str = "gaussian, bernoulli, exponential";
const RULES: &str = "simultaneous, multi_shot, one_shot, genie";
const ATTACKS: &str = "absent, silent_h0, always_alarm, reverse";
const METRICS: &str = "delay, false_alarm, false_isolation";
const AXES: &str = "h, gamma, d, attack";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: Option<RawScenario>,
    sweep: Option<RawSweep>,
    output: Option<RawOutput>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    honest: Option<i64>,
    compromised: Option<i64>,
    seed: Option<i64>,
    trials: Option<i64>,
    horizon: Option<i64>,
    threshold: Option<f64>,
    gamma: Option<f64>,
    change: Option<toml::Value>,
    true_hypothesis: Option<i64>,
    metric: Option<String>,
    isolation_target: Option<i64>,
    matrix: Option<String>,
    stop: Option<String>,
    hypotheses: Option<Vec<RawHypothesis>>,
    rule: Option<RawRule>,
    attack: Option<RawAttack>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHypothesis {
    family: String,
    mean: Option<f64>,
    variance: Option<f64>,
    p: Option<f64>,
    rate: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    kind: String,
    d: Option<i64>,
    revealed: Option<i64>,
    threshold: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAttack {
    kind: String,
    target: Option<i64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    axis: String,
    values: Vec<toml::Value>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    csv: Option<String>,
    plot: Option<String>,
    precision: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputConfig {
    pub csv: Option<PathBuf>,
    pub plot: Option<PathBuf>,
    pub precision: usize,
}

/// A validated experiment.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub metric: Metric,
    pub gamma: Option<f64>,
    pub sweep: Option<SweepAxis>,
    #[serde(skip)]
    pub output: OutputConfig,
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|span| line_column(text, span.start))
            .unwrap_or((1, 1));
        ConfigError::Syntax {
            line,
            column,
            message: e.message().trim().to_string(),
        }
    })?;
    validate(raw)
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

struct Errors(Vec<String>);

impl Errors {
    fn push(&mut self, msg: impl Into<String>) {
        self.0.push(msg.into());
    }

    fn count(&mut self, field: &str, value: Option<i64>, min: i64) -> Option<usize> {
        match value {
            Some(v) if v >= min => Some(v as usize),
            Some(v) => {
                self.push(format!("{field} = {v} must be at least {min}"));
                None
            }
            None => None,
        }
    }
}

fn parse_metric(name: Option<&str>, target: Option<i64>, errs: &mut Errors) -> Option<Metric> {
    match name.unwrap_or("delay") {
        "delay" => Some(Metric::Delay),
        "false_alarm" => Some(Metric::FalseAlarm),
        "false_isolation" => match target {
            Some(q) if q >= 1 => Some(Metric::FalseIsolation(q as usize)),
            _ => {
                errs.push("scenario.isolation_target (>= 1) is required for metric false_isolation");
                None
            }
        },
        other => {
            errs.push(format!("scenario.metric: unknown metric '{other}' (expected one of {METRICS})"));
            None
        }
    }
}

fn parse_hypothesis(i: usize, raw: &RawHypothesis, errs: &mut Errors) -> Option<DensityModel> {
    let field = format!("scenario.hypotheses[{i}]");
    let need = |name: &str, v: Option<f64>, errs: &mut Errors| {
        if v.is_none() {
            errs.push(format!("{field}: {} needs '{name}'", raw.family));
        }
        v
    };
    let model = match raw.family.as_str() {
        "gaussian" => {
            let mean = need("mean", raw.mean, errs);
            let variance = raw.variance.unwrap_or(1.0);
            DensityModel::gaussian(mean?, variance)
        }
        "bernoulli" => DensityModel::bernoulli(need("p", raw.p, errs)?),
        "exponential" => DensityModel::exponential(need("rate", raw.rate, errs)?),
        other => {
            errs.push(format!("{field}: unknown family '{other}' (expected one of {FAMILIES})"));
            return None;
        }
    };
    model.map_err(|e| errs.push(format!("{field}: {e}"))).ok()
}

fn parse_attack(raw: &RawAttack, errs: &mut Errors) -> Option<AttackKind> {
    let target = match raw.target {
        Some(q) if q < 1 => {
            errs.push(format!("scenario.attack.target = {q} must be at least 1"));
            return None;
        }
        t => t.map(|q| q as usize),
    };
    parse_attack_name(&raw.kind, target, "scenario.attack.kind", errs)
}

fn parse_attack_name(name: &str, target: Option<usize>, field: &str, errs: &mut Errors) -> Option<AttackKind> {
    match name {
        "absent" => Some(AttackKind::Absent),
        "silent_h0" => Some(AttackKind::SilentH0),
        "always_alarm" => Some(AttackKind::AlwaysAlarm { target }),
        "reverse" => Some(AttackKind::Reverse),
        other => {
            errs.push(format!("{field}: unknown attack '{other}' (expected one of {ATTACKS})"));
            None
        }
    }
}

fn parse_change(value: Option<&toml::Value>, metric: Option<Metric>, errs: &mut Errors) -> Option<ChangeTime> {
    match value {
        None => Some(match metric {
            Some(Metric::FalseAlarm) => ChangeTime::Never,
            _ => ChangeTime::At(0),
        }),
        Some(toml::Value::Integer(nu)) if *nu >= 0 => Some(ChangeTime::At(*nu as u64)),
        Some(toml::Value::String(s)) if s == "never" => Some(ChangeTime::Never),
        Some(other) => {
            errs.push(format!("scenario.change = {other} must be a non-negative integer or \"never\""));
            None
        }
    }
}

fn parse_sweep(raw: &RawSweep, errs: &mut Errors) -> Option<SweepAxis> {
    if raw.values.is_empty() {
        errs.push("sweep.values must not be empty");
        return None;
    }
    let floats = |errs: &mut Errors| -> Option<Vec<f64>> {
        raw.values
            .iter()
            .map(|v| match v {
                toml::Value::Float(f) => Some(*f),
                toml::Value::Integer(i) => Some(*i as f64),
                other => {
                    errs.push(format!("sweep.values: expected a number, got {other}"));
                    None
                }
            })
            .collect()
    };
    match raw.axis.as_str() {
        "h" => floats(errs).map(SweepAxis::Threshold),
        "gamma" => floats(errs).map(SweepAxis::Gamma),
        "d" => raw
            .values
            .iter()
            .map(|v| match v {
                toml::Value::Integer(i) if *i >= 1 => Some(*i as usize),
                other => {
                    errs.push(format!("sweep.values: expected a positive integer, got {other}"));
                    None
                }
            })
            .collect::<Option<Vec<_>>>()
            .map(SweepAxis::Votes),
        "attack" => raw
            .values
            .iter()
            .map(|v| match v {
                toml::Value::String(s) => parse_attack_name(s, None, "sweep.values", errs),
                other => {
                    errs.push(format!("sweep.values: expected an attack name, got {other}"));
                    None
                }
            })
            .collect::<Option<Vec<_>>>()
            .map(SweepAxis::Attack),
        other => {
            errs.push(format!("sweep.axis: unknown axis '{other}' (expected one of {AXES})"));
            None
        }
    }
}

fn validate(raw: RawConfig) -> Result<ExperimentConfig, ConfigError> {
    let mut errs = Errors(Vec::new());
    let Some(sc) = raw.scenario else {
        return Err(ConfigError::Invalid(vec!["missing [scenario] table".into()]));
    };

    if sc.honest.is_none() {
        errs.push("scenario.honest is required");
    }
    let honest = errs.count("scenario.honest", sc.honest, 1);
    let compromised = errs.count("scenario.compromised", Some(sc.compromised.unwrap_or(0)), 0);
    if let (Some(n), Some(m)) = (honest, compromised) {
        if n <= m {
            errs.push(format!(
                "scenario: need more honest than compromised sensors (honest = {n}, compromised = {m})"
            ));
        }
    }
    let seed = match sc.seed {
        Some(s) if s >= 0 => Some(s as u64),
        Some(s) => {
            errs.push(format!("scenario.seed = {s} must be non-negative"));
            None
        }
        None => {
            errs.push("scenario.seed is required (results are reproducible only with a fixed seed)");
            None
        }
    };
    let trials = errs.count("scenario.trials", Some(sc.trials.unwrap_or(DEFAULT_TRIALS as i64)), 1);
    let metric = parse_metric(sc.metric.as_deref(), sc.isolation_target, &mut errs);
    let horizon = errs.count(
        "scenario.horizon",
        Some(sc.horizon.unwrap_or(match metric {
            Some(Metric::Delay) | None => DELAY_HORIZON as i64,
            _ => FALSE_ALARM_HORIZON as i64,
        })),
        1,
    );
    let change = parse_change(sc.change.as_ref(), metric, &mut errs);

    let densities: Option<Vec<DensityModel>> = match &sc.hypotheses {
        Some(list) if list.len() >= 2 => list
            .iter()
            .enumerate()
            .map(|(i, h)| parse_hypothesis(i, h, &mut errs))
            .collect::<Vec<_>>()
            .into_iter()
            .collect(),
        Some(_) => {
            errs.push("scenario.hypotheses needs the pre-change density and at least one post-change density");
            None
        }
        None => {
            errs.push("scenario.hypotheses is required");
            None
        }
    };
    let hypotheses = densities.and_then(|d| HypothesisSet::new(d).map_err(|e| errs.push(format!("scenario.hypotheses: {e}"))).ok());

    let rule = match &sc.rule {
        None => {
            errs.push("scenario.rule is required");
            None
        }
        Some(r) => {
            let d = errs.count("scenario.rule.d", r.d, 1);
            match r.kind.as_str() {
                "simultaneous" | "multi_shot" | "one_shot" => match d {
                    None => {
                        if r.d.is_none() {
                            errs.push(format!("scenario.rule.d is required for rule {}", r.kind));
                        }
                        None
                    }
                    Some(d) => {
                        if let (Some(n), Some(m)) = (honest, compromised) {
                            if d <= m || d > n {
                                errs.push(format!(
                                    "scenario.rule.d = {d} must satisfy compromised < d <= honest ({m} < d <= {n})"
                                ));
                            }
                        }
                        Some(match r.kind.as_str() {
                            "simultaneous" => FusionRule::simultaneous(d),
                            "multi_shot" => FusionRule::multi_shot(d),
                            _ => FusionRule::one_shot(d),
                        })
                    }
                },
                "genie" => {
                    let revealed = match r.revealed {
                        Some(v) => errs.count("scenario.rule.revealed", Some(v), 1),
                        None => honest.zip(compromised).map(|(n, m)| n.saturating_sub(m).max(1)),
                    };
                    let threshold = r.threshold.or(sc.gamma.map(f64::ln));
                    if threshold.is_none() {
                        errs.push("scenario.rule.threshold (or scenario.gamma) is required for the genie rule");
                    }
                    revealed.zip(threshold).map(|(rv, th)| FusionRule::genie(rv, th))
                }
                other => {
                    errs.push(format!("scenario.rule.kind: unknown rule '{other}' (expected one of {RULES})"));
                    None
                }
            }
        }
    };

    let attack_kind = match (&sc.attack, metric) {
        (Some(a), _) => parse_attack(a, &mut errs),
        (None, Some(metric)) => Some(metric.worst_case_attack()),
        (None, None) => None,
    };

    let matrix = match sc.matrix.as_deref().unwrap_or("full") {
        "full" => Some(MatrixMode::Full),
        "reduced" => Some(MatrixMode::Reduced),
        other => {
            errs.push(format!("scenario.matrix: unknown mode '{other}' (expected full or reduced)"));
            None
        }
    };
    let stop = match sc.stop.as_deref().unwrap_or("single") {
        "single" => Some(StopMode::Single),
        "epochal" => Some(StopMode::Epochal),
        other => {
            errs.push(format!("scenario.stop: unknown mode '{other}' (expected single or epochal)"));
            None
        }
    };
    let q_true = errs.count("scenario.true_hypothesis", Some(sc.true_hypothesis.unwrap_or(1)), 1);

    if let Some(g) = sc.gamma {
        if g.is_nan() || g <= 1.0 {
            errs.push(format!("scenario.gamma = {g} must exceed 1"));
        }
    }
    let threshold = match (sc.threshold, rule) {
        (_, Some(r)) if r.is_genie() => Some(sc.threshold.unwrap_or(1.0)),
        (Some(h), _) if h > 0.0 && h.is_finite() => Some(h),
        (Some(h), _) => {
            errs.push(format!("scenario.threshold = {h} must be positive"));
            None
        }
        (None, Some(r)) => match sc.gamma {
            Some(g) if g > 1.0 => match (honest, compromised) {
                (Some(n), Some(m)) => calibrate_h(&r, n, m, g)
                    .map_err(|e| errs.push(format!("scenario.gamma: cannot calibrate: {e}")))
                    .ok(),
                _ => None,
            },
            Some(_) => None,
            None => {
                errs.push("scenario.threshold or scenario.gamma is required");
                None
            }
        },
        (None, None) => None,
    };

    let sweep = raw.sweep.as_ref().and_then(|s| parse_sweep(s, &mut errs));
    if matches!(sweep, Some(SweepAxis::Gamma(_))) && matches!(rule, Some(r) if r.kind == RuleKind::OneShot) {
        errs.push("sweep.axis = gamma needs a rule with a false-alarm bound (not one_shot)");
    }

    let output = match raw.output {
        None => OutputConfig {
            precision: 6,
            ..Default::default()
        },
        Some(o) => OutputConfig {
            csv: o.csv.map(PathBuf::from),
            plot: o.plot.map(PathBuf::from),
            precision: errs.count("output.precision", Some(o.precision.unwrap_or(6)), 0).unwrap_or(6),
        },
    };

    if !errs.0.is_empty() {
        return Err(ConfigError::Invalid(errs.0));
    }
    // Every component parsed; the unwraps below cannot fail.
    let metric = metric.unwrap();
    let scenario = Scenario {
        hypotheses: hypotheses.unwrap(),
        honest: honest.unwrap(),
        attack: AttackStrategy::new(attack_kind.unwrap(), compromised.unwrap()),
        rule: rule.unwrap(),
        threshold: threshold.unwrap(),
        matrix_mode: matrix.unwrap(),
        change: change.unwrap(),
        q_true: q_true.unwrap(),
        horizon: horizon.unwrap() as u64,
        stop: stop.unwrap(),
        seed: seed.unwrap(),
        trials: trials.unwrap(),
    };
    if let Err(e) = scenario.validate() {
        return Err(ConfigError::Invalid(vec![e.to_string()]));
    }
    if let Metric::FalseIsolation(q) = metric {
        if q > scenario.hypotheses.q() || (scenario.change != ChangeTime::Never && q == scenario.q_true) {
            return Err(ConfigError::Invalid(vec![format!(
                "scenario.isolation_target = {q} must be a wrong hypothesis in 1..={}",
                scenario.hypotheses.q()
            )]));
        }
    }
    Ok(ExperimentConfig {
        scenario,
        metric,
        gamma: sc.gamma,
        sweep,
        output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[scenario]
honest = 1
seed = 7
threshold = 9.21

[[scenario.hypotheses]]
family = "gaussian"
mean = 0.0

[[scenario.hypotheses]]
family = "gaussian"
mean = 1.0

[scenario.rule]
kind = "simultaneous"
d = 1
"#;

    fn invalid(text: &str) -> Vec<String> {
        match parse_config(text) {
            Err(ConfigError::Invalid(errs)) => errs,
            other => panic!("expected validation errors, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.scenario.trials, DEFAULT_TRIALS);
        assert_eq!(cfg.scenario.horizon, DELAY_HORIZON);
        assert_eq!(cfg.scenario.stop, StopMode::Single);
        assert_eq!(cfg.scenario.change, ChangeTime::At(0));
        assert_eq!(cfg.metric, Metric::Delay);
        assert_eq!(cfg.scenario.compromised(), 0);
        assert_eq!(cfg.output.precision, 6);
    }

    #[test]
    fn vote_count_at_compromised_is_rejected() {
        let text = MINIMAL
            .replace("honest = 1", "honest = 5\ncompromised = 2")
            .replace("d = 1", "d = 2");
        let errs = invalid(&text);
        assert!(errs.iter().any(|e| e.contains("scenario.rule.d = 2") && e.contains("2 < d <= 5")), "{errs:?}");
    }

    #[test]
    fn unknown_attack_lists_valid_kinds() {
        let text = format!("{MINIMAL}\n[scenario.attack]\nkind = \"jam\"\n");
        let errs = invalid(&text);
        assert!(errs.iter().any(|e| e.contains("'jam'") && e.contains(ATTACKS)), "{errs:?}");
    }

    #[test]
    fn every_violation_is_reported() {
        let text = MINIMAL
            .replace("seed = 7\n", "")
            .replace("\"gaussian\"\nmean = 1.0", "\"poisson\"\nmean = 1.0")
            .replace("threshold = 9.21", "threshold = 9.21\ntrials = 0");
        let errs = invalid(&text);
        assert!(errs.iter().any(|e| e.contains("seed")));
        assert!(errs.iter().any(|e| e.contains("poisson") && e.contains(FAMILIES)));
        assert!(errs.iter().any(|e| e.contains("trials")));
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_config("[scenario]\nhonest = = 3\n").unwrap_err();
        match err {
            ConfigError::Syntax { line, .. } => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gamma_calibrates_threshold() {
        let text = MINIMAL
            .replace("honest = 1", "honest = 5\ncompromised = 2")
            .replace("threshold = 9.21", "gamma = 1e4")
            .replace("d = 1", "d = 5");
        let cfg = parse_config(&text).unwrap();
        assert!((cfg.scenario.threshold - 4.0687).abs() < 1e-4);
        assert_eq!(cfg.scenario.attack.kind, AttackKind::SilentH0);
    }

    #[test]
    fn sweep_block() {
        let text = format!("{MINIMAL}\n[sweep]\naxis = \"attack\"\nvalues = [\"absent\", \"reverse\"]\n");
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cfg.sweep, Some(SweepAxis::Attack(vec![AttackKind::Absent, AttackKind::Reverse])));
        let text = format!("{MINIMAL}\n[sweep]\naxis = \"width\"\nvalues = [1]\n");
        assert!(invalid(&text).iter().any(|e| e.contains("width")));
    }
}
