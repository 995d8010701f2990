//! Strategies for the compromised sensors.
//!
//! Compromised sensors know the change time, the true hypothesis, the fusion
//! rule and every observation. Sensor indices `0..N` are honest and
//! `N..N+M` are compromised.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cusum::MatrixMode;
use crate::distributions::{argmin_with_ties, HypothesisSet};
use crate::error::{Error, Result};
use crate::sensors::{ChangeTime, Mechanism, ReportMessage, ReportPayload, SensorState};

/// What the compromised sensors do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackKind {
    /// Compromised sensors stay off the link.
    #[default]
    Absent,
    /// Never alarm: silence, or all-zero acceptance vectors.
    SilentH0,
    /// Push the same hypothesis from the first step on. `target: None`
    /// picks it automatically, see [`AttackStrategy::resolve_target`].
    AlwaysAlarm {
        #[serde(default)]
        target: Option<usize>,
    },
    /// Run the honest rule on fabricated observations.
    Reverse,
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Absent => f.write_str("absent"),
            Self::SilentH0 => f.write_str("silent_h0"),
            Self::AlwaysAlarm { target: None } => f.write_str("always_alarm"),
            Self::AlwaysAlarm { target: Some(q) } => write!(f, "always_alarm:{q}"),
            Self::Reverse => f.write_str("reverse"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackStrategy {
    pub kind: AttackKind,
    /// Number of compromised sensors `M`.
    pub compromised: usize,
}

impl AttackStrategy {
    pub fn new(kind: AttackKind, compromised: usize) -> Self {
        Self { kind, compromised }
    }

    pub fn absent() -> Self {
        Self::new(AttackKind::Absent, 0)
    }

    pub fn validate(&self, hs: &HypothesisSet) -> Result<()> {
        if let AttackKind::AlwaysAlarm { target: Some(q) } = self.kind {
            if q == 0 || q > hs.q() {
                return Err(Error::Scenario(format!(
                    "attack target {q} outside 1..={}",
                    hs.q()
                )));
            }
        }
        Ok(())
    }

    /// Hypothesis an always-alarm attack pushes.
    ///
    /// With no change the target is `j*_0`, the post-change hypothesis
    /// closest to `P_0`. After a change to `q_true` it is the wrong
    /// hypothesis nearest to the truth in KL, i.e. the one honest sensors are
    /// most likely to accept by mistake.
    pub fn resolve_target(&self, hs: &HypothesisSet, change: ChangeTime, q_true: usize) -> Option<usize> {
        let AttackKind::AlwaysAlarm { target } = self.kind else {
            return None;
        };
        if target.is_some() {
            return target;
        }
        match change {
            ChangeTime::Never => Some(hs.closest_alternatives().pre_change.1),
            ChangeTime::At(_) => argmin_with_ties(
                (1..=hs.q())
                    .filter(|&q| q != q_true)
                    .map(|q| (q, hs.kl_divergence(q_true, q).unwrap_or(f64::INFINITY))),
            )
            .map(|((q, _), _)| q)
            // Q = 1 with q_true = 1: nothing else to push.
            .or(Some(q_true)),
        }
    }
}

/// Densities for the reverse attack's fabricated streams.
///
/// `fake_index[q]` is the density index used when the true hypothesis is
/// `q`; row 0 drives the stream before the change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FakeStreamAssignment {
    pub fake_index: Vec<usize>,
    /// Hypothesis (including 0) with the smallest `I^q`.
    pub pivot: usize,
    /// Whether the pivot minimum was tied.
    pub pivot_tied: bool,
}

impl FakeStreamAssignment {
    pub fn pre_change(&self) -> usize {
        self.fake_index[0]
    }

    pub fn post_change(&self, q_true: usize) -> usize {
        self.fake_index[q_true]
    }

    pub fn for_time(&self, t: u64, change: ChangeTime, q_true: usize) -> usize {
        if change.is_post_change(t) {
            self.post_change(q_true)
        } else {
            self.pre_change()
        }
    }
}

/// Build the reverse-attack assignment: each hypothesis is mapped to its
/// closest alternative, except the pivot's closest alternative, which maps
/// back to the pivot.
pub fn build_reverse_assignment(hs: &HypothesisSet) -> FakeStreamAssignment {
    let ca = hs.closest_alternatives();
    let ((pivot, _), tied) =
        argmin_with_ties((0..=hs.q()).map(|q| (q, ca.get(q).0))).expect("at least two hypotheses");
    let pivot_partner = ca.closest(pivot);
    let fake_index = (0..=hs.q())
        .map(|q| if q == pivot_partner { pivot } else { ca.closest(q) })
        .collect();
    FakeStreamAssignment {
        fake_index,
        pivot,
        pivot_tied: !tied.is_empty(),
    }
}

/// Per-trial attack state.
#[derive(Debug, Clone)]
pub struct AttackState {
    strategy: AttackStrategy,
    mechanism: Mechanism,
    q: usize,
    first_id: usize,
    target: Option<usize>,
    assignment: Option<FakeStreamAssignment>,
    fake_sensors: Vec<SensorState>,
    sent: Vec<bool>,
}

impl AttackState {
    /// `first_id` is the index of the first compromised sensor (`N`).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        strategy: &AttackStrategy,
        hs: &HypothesisSet,
        mechanism: Mechanism,
        mode: MatrixMode,
        threshold: f64,
        change: ChangeTime,
        q_true: usize,
        first_id: usize,
    ) -> Result<Self> {
        strategy.validate(hs)?;
        let m = strategy.compromised;
        let (assignment, fake_sensors) = if strategy.kind == AttackKind::Reverse {
            let sensors = (0..m)
                .map(|i| SensorState::new(first_id + i, false, hs, mode, mechanism, threshold))
                .collect::<Result<Vec<_>>>()?;
            (Some(build_reverse_assignment(hs)), sensors)
        } else {
            (None, Vec::new())
        };
        Ok(Self {
            strategy: strategy.clone(),
            mechanism,
            q: hs.q(),
            first_id,
            target: strategy.resolve_target(hs, change, q_true),
            assignment,
            fake_sensors,
            sent: vec![false; m],
        })
    }

    pub fn target(&self) -> Option<usize> {
        self.target
    }

    pub fn assignment(&self) -> Option<&FakeStreamAssignment> {
        self.assignment.as_ref()
    }

    /// Messages from all compromised sensors at time `t`. `rngs[i]` is the
    /// private stream of compromised sensor `i` (only the reverse attack
    /// draws from it).
    pub fn step<R: Rng>(
        &mut self,
        hs: &HypothesisSet,
        t: u64,
        change: ChangeTime,
        q_true: usize,
        rngs: &mut [R],
    ) -> Result<Vec<ReportMessage>> {
        let m = self.strategy.compromised;
        let ids = self.first_id..self.first_id + m;
        let out = match self.strategy.kind {
            AttackKind::Absent => Vec::new(),
            AttackKind::SilentH0 => match self.mechanism {
                Mechanism::Simultaneous => ids
                    .map(|sender| ReportMessage {
                        sender,
                        payload: ReportPayload::Simultaneous(vec![false; self.q]),
                    })
                    .collect(),
                Mechanism::OneShot | Mechanism::MultiShot => Vec::new(),
            },
            AttackKind::AlwaysAlarm { .. } => {
                let target = self.target.expect("resolved at construction");
                let mut out = Vec::with_capacity(m);
                for (i, sender) in ids.enumerate() {
                    let payload = match self.mechanism {
                        Mechanism::Simultaneous => {
                            let mut bits = vec![false; self.q];
                            bits[target - 1] = true;
                            ReportPayload::Simultaneous(bits)
                        }
                        Mechanism::MultiShot if !self.sent[i] => ReportPayload::MultiShot(target),
                        Mechanism::OneShot if !self.sent[i] => ReportPayload::OneShot(target),
                        _ => continue,
                    };
                    self.sent[i] = true;
                    out.push(ReportMessage { sender, payload });
                }
                out
            }
            AttackKind::Reverse => {
                let assignment = self.assignment.as_ref().expect("built at construction");
                let density = hs.density(assignment.for_time(t, change, q_true));
                let mut out = Vec::new();
                for (sensor, rng) in self.fake_sensors.iter_mut().zip(rngs.iter_mut()) {
                    let x = density.sample(rng);
                    if let Some(msg) = sensor.step(hs, x, rng)? {
                        out.push(msg);
                    }
                }
                out
            }
        };
        Ok(out)
    }

    /// Restart after a fusion-center alarm.
    pub fn reset(&mut self) {
        self.fake_sensors.iter_mut().for_each(SensorState::reset);
        self.sent.iter_mut().for_each(|s| *s = false);
    }
}
