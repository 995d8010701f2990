//! Seeded, parallel trial execution and the delay / false-alarm estimators.
//!
//! Every trial owns its random streams. Sensor `k` of trial `i` draws from a
//! ChaCha8 generator keyed by `(seed, i)` on stream `k`; compromised
//! sensors use streams offset by [`ATTACK_STREAM_OFFSET`]. Results therefore
//! do not depend on how trials are spread over worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{achievability_slope, calibrate_h, false_bound};
use crate::attacks::{AttackKind, AttackState, AttackStrategy};
use crate::cusum::MatrixMode;
use crate::distributions::HypothesisSet;
use crate::error::{Error, Result};
use crate::fusion::{stopping_time_for_type, AlarmEvent, FusionRule, FusionState, RuleKind};
use crate::sensors::{honest_observation, ChangeTime, ReportMessage, ReportPayload, SensorState};

pub const DEFAULT_TRIALS: usize = 20_000;
pub const DELAY_HORIZON: u64 = 100_000;
pub const FALSE_ALARM_HORIZON: u64 = 1_000_000;
pub const ATTACK_STREAM_OFFSET: u64 = 1 << 32;

const Z_95: f64 = 1.959_963_984_540_054;

/// Stop at the first alarm, or restart after every alarm until the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopMode {
    #[default]
    Single,
    Epochal,
}

/// Which metric an experiment measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Mean of `T - nu` given `T > nu`.
    Delay,
    /// Mean time to the first alarm.
    FalseAlarm,
    /// Mean time to the first alarm declaring the given wrong hypothesis.
    FalseIsolation(usize),
}

impl Metric {
    /// Attack that is worst for this metric.
    pub fn worst_case_attack(&self) -> AttackKind {
        match self {
            Self::Delay => AttackKind::SilentH0,
            Self::FalseAlarm => AttackKind::AlwaysAlarm { target: None },
            Self::FalseIsolation(q) => AttackKind::AlwaysAlarm { target: Some(*q) },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Scenario {
    pub hypotheses: HypothesisSet,
    /// `N`.
    pub honest: usize,
    pub attack: AttackStrategy,
    pub rule: FusionRule,
    /// Local acceptance threshold `h`.
    pub threshold: f64,
    pub matrix_mode: MatrixMode,
    pub change: ChangeTime,
    /// Post-change hypothesis; ignored when the change never happens.
    pub q_true: usize,
    pub horizon: u64,
    pub stop: StopMode,
    pub seed: u64,
    pub trials: usize,
}

impl Scenario {
    /// A change at `nu = 0` to `H_1`, no attack, default horizon and trials.
    pub fn new(hypotheses: HypothesisSet, honest: usize, rule: FusionRule, threshold: f64) -> Self {
        Self {
            hypotheses,
            honest,
            attack: AttackStrategy::absent(),
            rule,
            threshold,
            matrix_mode: MatrixMode::Full,
            change: ChangeTime::At(0),
            q_true: 1,
            horizon: DELAY_HORIZON,
            stop: StopMode::Single,
            seed: 0,
            trials: DEFAULT_TRIALS,
        }
    }

    pub fn with_attack(mut self, kind: AttackKind, compromised: usize) -> Self {
        self.attack = AttackStrategy::new(kind, compromised);
        self
    }

    pub fn with_change(mut self, change: ChangeTime, q_true: usize) -> Self {
        self.change = change;
        self.q_true = q_true;
        self
    }

    pub fn with_rule(mut self, rule: FusionRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn with_matrix_mode(mut self, mode: MatrixMode) -> Self {
        self.matrix_mode = mode;
        self
    }

    pub fn with_horizon(mut self, horizon: u64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_stop(mut self, stop: StopMode) -> Self {
        self.stop = stop;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_trials(mut self, trials: usize) -> Self {
        self.trials = trials;
        self
    }

    /// `M`.
    pub fn compromised(&self) -> usize {
        self.attack.compromised
    }

    /// `K = N + M`.
    pub fn senders(&self) -> usize {
        self.honest + self.compromised()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.honest, self.compromised());
        if n <= m {
            return Err(Error::Scenario(format!(
                "need more honest than compromised sensors (N = {n}, M = {m})"
            )));
        }
        self.rule.validate(n, m)?;
        self.attack.validate(&self.hypotheses)?;
        if self.threshold <= 0.0 || !self.threshold.is_finite() {
            return Err(Error::Scenario(format!("threshold must be positive, got {}", self.threshold)));
        }
        if self.change != ChangeTime::Never && (self.q_true == 0 || self.q_true > self.hypotheses.q()) {
            return Err(Error::Scenario(format!(
                "true hypothesis {} outside 1..={}",
                self.q_true,
                self.hypotheses.q()
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Scenario("horizon must be at least one step".into()));
        }
        if self.trials == 0 {
            return Err(Error::Scenario("need at least one trial".into()));
        }
        Ok(())
    }
}

/// What happened in one trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub index: u64,
    pub events: Vec<AlarmEvent>,
    /// One-shot rule got stuck: no hypothesis can reach `d` reports.
    pub undecidable: bool,
}

impl TrialOutcome {
    pub fn first_alarm(&self) -> Option<u64> {
        self.events.first().map(|e| e.time)
    }

    pub fn declared(&self) -> Option<usize> {
        self.events.first().map(|e| e.declared)
    }

    pub fn censored(&self) -> bool {
        self.events.is_empty()
    }

    /// First alarm declaring `q`.
    pub fn stopping_time(&self, q: usize) -> Option<u64> {
        stopping_time_for_type(&self.events, q)
    }
}

/// The generator for one sensor of one trial.
pub fn sensor_stream(seed: u64, trial: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&trial.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Simulate trial `index` of `sc` up to its horizon.
pub fn run_trial(sc: &Scenario, index: u64) -> Result<TrialOutcome> {
    let hs = &sc.hypotheses;
    let n = sc.honest;
    let m = sc.compromised();
    let mut honest_rngs: Vec<ChaCha8Rng> = (0..n).map(|k| sensor_stream(sc.seed, index, k as u64)).collect();
    let mut attack_rngs: Vec<ChaCha8Rng> = (0..m)
        .map(|i| sensor_stream(sc.seed, index, ATTACK_STREAM_OFFSET + i as u64))
        .collect();

    let mechanism = sc.rule.mechanism();
    let mut sensors = Vec::new();
    let mut attack = None;
    if let Some(mech) = mechanism {
        sensors = (0..n)
            .map(|id| SensorState::new(id, true, hs, sc.matrix_mode, mech, sc.threshold))
            .collect::<Result<Vec<_>>>()?;
        attack = Some(AttackState::new(
            &sc.attack,
            hs,
            mech,
            sc.matrix_mode,
            sc.threshold,
            sc.change,
            sc.q_true,
            n,
        )?);
    }
    let revealed = match sc.rule.kind {
        RuleKind::Genie { revealed, .. } => revealed,
        _ => 0,
    };

    let mut fusion = FusionState::new(sc.rule, hs.q(), n + m);
    let mut events = Vec::new();
    let mut undecidable = false;
    let mut msgs: Vec<ReportMessage> = Vec::with_capacity(n + m);
    for t in 1..=sc.horizon {
        msgs.clear();
        match attack.as_mut() {
            Some(attack) => {
                for (sensor, rng) in sensors.iter_mut().zip(&mut honest_rngs) {
                    let x = honest_observation(hs, t, sc.change, sc.q_true, rng);
                    msgs.extend(sensor.step(hs, x, rng)?);
                }
                msgs.extend(attack.step(hs, t, sc.change, sc.q_true, &mut attack_rngs)?);
            }
            None => {
                for (sender, rng) in honest_rngs.iter_mut().take(revealed).enumerate() {
                    let x = honest_observation(hs, t, sc.change, sc.q_true, rng);
                    msgs.push(ReportMessage {
                        sender,
                        payload: ReportPayload::Observation(x),
                    });
                }
            }
        }

        if let Some(alarm) = fusion.step(hs, &msgs, t)? {
            events.push(alarm);
            if sc.stop == StopMode::Single {
                break;
            }
            sensors.iter_mut().for_each(SensorState::reset);
            if let Some(a) = attack.as_mut() {
                a.reset();
            }
            fusion.reset();
        } else if fusion.is_undecidable() {
            undecidable = true;
            break;
        }
    }
    Ok(TrialOutcome {
        index,
        events,
        undecidable,
    })
}

/// Run all trials on the global rayon pool, in index order.
pub fn run_trials(sc: &Scenario) -> Result<Vec<TrialOutcome>> {
    sc.validate()?;
    (0..sc.trials as u64).into_par_iter().map(|i| run_trial(sc, i)).collect()
}

/// [`run_trials`] on a dedicated pool of `workers` threads.
pub fn run_trials_with_workers(sc: &Scenario, workers: usize) -> Result<Vec<TrialOutcome>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build a {workers}-thread pool: {e}")))?;
    pool.install(|| run_trials(sc))
}

/// Sample mean with a 95% normal-approximation interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsEstimate {
    pub mean: f64,
    pub ci_halfwidth: f64,
    /// Fraction of trials that reached the horizon without the event.
    pub censor_fraction: f64,
    /// Samples entering the mean.
    pub n: usize,
    /// Trials run.
    pub total: usize,
    /// Censoring biased the mean downwards.
    pub lower_estimate: bool,
}

impl MetricsEstimate {
    pub fn ci(&self) -> (f64, f64) {
        (self.mean - self.ci_halfwidth, self.mean + self.ci_halfwidth)
    }

    pub fn overlaps(&self, other: &Self) -> bool {
        let (a_lo, a_hi) = self.ci();
        let (b_lo, b_hi) = other.ci();
        a_lo <= b_hi && b_lo <= a_hi
    }
}

fn summarize(samples: &[f64], censored: usize, total: usize) -> MetricsEstimate {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let ci_halfwidth = if n > 1 {
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Z_95 * (var / n as f64).sqrt()
    } else {
        f64::INFINITY
    };
    MetricsEstimate {
        mean,
        ci_halfwidth,
        censor_fraction: censored as f64 / total as f64,
        n,
        total,
        lower_estimate: censored > 0,
    }
}

/// Mean of `T - nu` over trials alarming after the change. Censored trials
/// are dropped, so with any censoring the mean is only a lower estimate.
pub fn delay_from_outcomes(outcomes: &[TrialOutcome], change: ChangeTime) -> Result<MetricsEstimate> {
    let nu = change
        .finite()
        .ok_or_else(|| Error::Estimation("detection delay needs a finite change time".into()))?;
    let samples: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| o.first_alarm())
        .filter(|&t| t > nu)
        .map(|t| (t - nu) as f64)
        .collect();
    let censored = outcomes.iter().filter(|o| o.censored()).count();
    if samples.is_empty() {
        return Err(Error::Estimation(format!(
            "no trial alarmed after the change ({censored} of {} censored)",
            outcomes.len()
        )));
    }
    Ok(summarize(&samples, censored, outcomes.len()))
}

/// Mean time to false alarm or false isolation. Censored trials count as the
/// horizon, so the estimate never exceeds the true mean in expectation.
pub fn false_metric_from_outcomes(outcomes: &[TrialOutcome], metric: Metric, horizon: u64) -> Result<MetricsEstimate> {
    if outcomes.is_empty() {
        return Err(Error::Estimation("no trials".into()));
    }
    let times: Vec<Option<u64>> = match metric {
        Metric::FalseAlarm => outcomes.iter().map(TrialOutcome::first_alarm).collect(),
        Metric::FalseIsolation(q) => outcomes.iter().map(|o| o.stopping_time(q)).collect(),
        Metric::Delay => return Err(Error::Estimation("delay is not a false-alarm metric".into())),
    };
    let censored = times.iter().filter(|t| t.is_none()).count();
    let samples: Vec<f64> = times.iter().map(|t| t.unwrap_or(horizon) as f64).collect();
    Ok(summarize(&samples, censored, outcomes.len()))
}

pub fn undecidable_fraction(outcomes: &[TrialOutcome]) -> f64 {
    outcomes.iter().filter(|o| o.undecidable).count() as f64 / outcomes.len().max(1) as f64
}

pub fn estimate_delay(sc: &Scenario) -> Result<MetricsEstimate> {
    delay_from_outcomes(&run_trials(sc)?, sc.change)
}

pub fn estimate_false_metric(sc: &Scenario, metric: Metric) -> Result<MetricsEstimate> {
    if let Metric::FalseIsolation(q) = metric {
        if sc.change != ChangeTime::Never && q == sc.q_true {
            return Err(Error::Scenario(format!("isolation target {q} is the true hypothesis")));
        }
    }
    false_metric_from_outcomes(&run_trials(sc)?, metric, sc.horizon)
}

/// Estimate `metric` for `sc`, plus the undecidable-event frequency.
pub fn estimate(sc: &Scenario, metric: Metric) -> Result<(MetricsEstimate, f64)> {
    let outcomes = run_trials(sc)?;
    let est = match metric {
        Metric::Delay => delay_from_outcomes(&outcomes, sc.change)?,
        _ => false_metric_from_outcomes(&outcomes, metric, sc.horizon)?,
    };
    Ok((est, undecidable_fraction(&outcomes)))
}

/// Parameter varied by [`sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Threshold(Vec<f64>),
    /// False-alarm targets; the threshold is calibrated per value.
    Gamma(Vec<f64>),
    Votes(Vec<usize>),
    Attack(Vec<AttackKind>),
}

impl SweepAxis {
    pub fn len(&self) -> usize {
        match self {
            Self::Threshold(v) | Self::Gamma(v) => v.len(),
            Self::Votes(v) => v.len(),
            Self::Attack(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Threshold(_) => "h",
            Self::Gamma(_) => "gamma",
            Self::Votes(_) => "d",
            Self::Attack(_) => "attack",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub threshold: f64,
    pub d: usize,
    pub attack: AttackKind,
    pub gamma: Option<f64>,
    pub estimate: MetricsEstimate,
    pub undecidable_fraction: f64,
    /// Theory value for the same quantity: `slope * log gamma` or `h / I^q`
    /// for delay, the false-alarm bound for false metrics.
    pub reference: Option<f64>,
    pub ratio: Option<f64>,
}

fn reference_value(sc: &Scenario, metric: Metric, gamma: Option<f64>) -> Option<f64> {
    let (n, m) = (sc.honest, sc.compromised());
    match metric {
        Metric::Delay => {
            if let Some(g) = gamma {
                let i_star = sc.hypotheses.closest_alternatives().i_star;
                return achievability_slope(&sc.rule, n, m, i_star).ok().map(|s| s * g.ln());
            }
            let divergence = sc.hypotheses.closest_alternatives().get(sc.q_true).0;
            match sc.rule.kind {
                RuleKind::Genie { revealed, threshold } => Some(threshold / (revealed as f64 * divergence)),
                RuleKind::OneShot => None,
                _ => Some(sc.threshold / divergence),
            }
        }
        _ => false_bound(&sc.rule, n, m, sc.threshold).ok(),
    }
}

/// One estimate of `metric` per axis value, all else taken from `template`.
/// The outer error rejects the sweep itself; inner errors belong to a row.
pub fn sweep(template: &Scenario, axis: &SweepAxis, metric: Metric) -> Result<Vec<Result<SweepRow>>> {
    if axis.is_empty() {
        return Err(Error::InvalidArgument(format!("sweep over {} has no values", axis.name())));
    }
    let scenarios: Vec<(String, Option<f64>, Result<Scenario>)> = match axis {
        SweepAxis::Threshold(values) => values
            .iter()
            .map(|&h| (h.to_string(), None, Ok(template.clone().with_threshold(h))))
            .collect(),
        SweepAxis::Gamma(values) => values
            .iter()
            .map(|&g| {
                let sc = calibrate_h(&template.rule, template.honest, template.compromised(), g).map(|h| {
                    let mut sc = template.clone();
                    match &mut sc.rule.kind {
                        RuleKind::Genie { threshold, .. } => *threshold = h,
                        _ => sc.threshold = h,
                    }
                    sc
                });
                (g.to_string(), Some(g), sc)
            })
            .collect(),
        SweepAxis::Votes(values) => values
            .iter()
            .map(|&d| {
                let mut sc = template.clone();
                sc.rule.d = d;
                (d.to_string(), None, Ok(sc))
            })
            .collect(),
        SweepAxis::Attack(values) => values
            .iter()
            .map(|&kind| {
                let sc = template.clone().with_attack(kind, template.compromised());
                (kind.to_string(), None, Ok(sc))
            })
            .collect(),
    };

    Ok(scenarios
        .into_iter()
        .map(|(value, gamma, sc)| {
            let sc = sc?;
            let (estimate, undecidable) = estimate(&sc, metric)?;
            let reference = reference_value(&sc, metric, gamma);
            Ok(SweepRow {
                value,
                threshold: match sc.rule.kind {
                    RuleKind::Genie { threshold, .. } => threshold,
                    _ => sc.threshold,
                },
                d: sc.rule.d,
                attack: sc.attack.kind,
                gamma,
                estimate,
                undecidable_fraction: undecidable,
                reference,
                ratio: reference.map(|r| estimate.mean / r),
            })
        })
        .collect())
}
