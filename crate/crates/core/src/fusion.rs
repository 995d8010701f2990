//! Fusion-center stopping rules.

use serde::{Deserialize, Serialize};

use crate::cusum::CusumMatrix;
use crate::distributions::HypothesisSet;
use crate::error::{Error, Result};
use crate::sensors::{Mechanism, ReportMessage, ReportPayload};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleKind {
    /// Alarm when `d` sensors accept the same hypothesis in the same step.
    Simultaneous,
    /// Alarm when `d` distinct sensors have reported the same hypothesis.
    MultiShot,
    /// Like multi-shot, but every sensor reports at most once.
    OneShot,
    /// Centralized CUSUM over the raw observations of `revealed` honest
    /// sensors, with its own threshold. Not implementable without knowing
    /// which sensors are honest; used as a lower benchmark.
    Genie { revealed: usize, threshold: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionRule {
    pub kind: RuleKind,
    /// Vote count; ignored by the genie.
    pub d: usize,
}

impl FusionRule {
    pub fn simultaneous(d: usize) -> Self {
        Self { kind: RuleKind::Simultaneous, d }
    }

    pub fn multi_shot(d: usize) -> Self {
        Self { kind: RuleKind::MultiShot, d }
    }

    pub fn one_shot(d: usize) -> Self {
        Self { kind: RuleKind::OneShot, d }
    }

    pub fn genie(revealed: usize, threshold: f64) -> Self {
        Self {
            kind: RuleKind::Genie { revealed, threshold },
            d: 0,
        }
    }

    /// Sensor mechanism the rule listens to; `None` for the genie.
    pub fn mechanism(&self) -> Option<Mechanism> {
        match self.kind {
            RuleKind::Simultaneous => Some(Mechanism::Simultaneous),
            RuleKind::MultiShot => Some(Mechanism::MultiShot),
            RuleKind::OneShot => Some(Mechanism::OneShot),
            RuleKind::Genie { .. } => None,
        }
    }

    pub fn is_genie(&self) -> bool {
        matches!(self.kind, RuleKind::Genie { .. })
    }

    /// Check `M < d <= N` (or `1 <= revealed <= N` for the genie).
    pub fn validate(&self, honest: usize, compromised: usize) -> Result<()> {
        match self.kind {
            RuleKind::Genie { revealed, threshold } => {
                if revealed == 0 || revealed > honest {
                    return Err(Error::Scenario(format!(
                        "genie must reveal between 1 and N = {honest} sensors, got {revealed}"
                    )));
                }
                if threshold <= 0.0 || !threshold.is_finite() {
                    return Err(Error::Scenario(format!("genie threshold must be positive, got {threshold}")));
                }
            }
            _ => {
                if self.d <= compromised || self.d > honest {
                    return Err(Error::Scenario(format!(
                        "vote count d = {} must satisfy M < d <= N (M = {compromised}, N = {honest})",
                        self.d
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One alarm of the fusion center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AlarmEvent {
    pub time: u64,
    pub declared: usize,
    /// 1-based alarm index.
    pub epoch: usize,
    /// Several hypotheses qualified at once; the smallest index was taken.
    pub tie: bool,
}

/// First alarm time declaring `q`, `None` if no alarm did.
pub fn stopping_time_for_type(events: &[AlarmEvent], q: usize) -> Option<u64> {
    events.iter().find(|e| e.declared == q).map(|e| e.time)
}

/// Per-trial fusion-center state.
#[derive(Debug, Clone)]
pub struct FusionState {
    rule: FusionRule,
    q: usize,
    senders: usize,
    /// `reported[q - 1][k]`: sender `k` has reported `H_q` this epoch.
    reported: Vec<Vec<bool>>,
    counts: Vec<usize>,
    /// One-shot: sender `k` has used its report this epoch.
    spent: Vec<bool>,
    genie: Option<CusumMatrix>,
    genie_sum: Vec<f64>,
    epoch: usize,
}

impl FusionState {
    /// `senders` is `K`, the number of sensors on the link.
    pub fn new(rule: FusionRule, q: usize, senders: usize) -> Self {
        Self {
            rule,
            q,
            senders,
            reported: vec![vec![false; senders]; q],
            counts: vec![0; q],
            spent: vec![false; senders],
            genie: rule.is_genie().then(|| CusumMatrix::full(q)),
            genie_sum: vec![0.0; q + 1],
            epoch: 0,
        }
    }

    pub fn rule(&self) -> &FusionRule {
        &self.rule
    }

    /// Alarms raised so far.
    pub fn alarms(&self) -> usize {
        self.epoch
    }

    /// Cumulative distinct senders for `H_q` this epoch (multi-shot, one-shot).
    pub fn count(&self, q: usize) -> usize {
        self.counts[q - 1]
    }

    fn mismatch(&self, msg: &ReportMessage) -> Error {
        Error::Protocol(format!(
            "sender {} sent {:?} to a {:?} fusion center",
            msg.sender, msg.payload, self.rule.kind
        ))
    }

    fn check_hypothesis(&self, msg: &ReportMessage, q: usize) -> Result<()> {
        if q == 0 || q > self.q {
            return Err(Error::Protocol(format!("sender {} reported unknown hypothesis {q}", msg.sender)));
        }
        Ok(())
    }

    /// Consume the messages of step `t`; return the alarm, if any.
    pub fn step(&mut self, hs: &HypothesisSet, msgs: &[ReportMessage], t: u64) -> Result<Option<AlarmEvent>> {
        let mut seen = vec![false; self.senders];
        for msg in msgs {
            let seen_before = seen
                .get_mut(msg.sender)
                .ok_or_else(|| Error::Protocol(format!("unknown sender {}", msg.sender)))?;
            if std::mem::replace(seen_before, true) {
                return Err(Error::Protocol(format!("sender {} sent twice in step {t}", msg.sender)));
            }
        }

        let winners: Vec<usize> = match self.rule.kind {
            RuleKind::Simultaneous => {
                let mut votes = vec![0usize; self.q];
                for msg in msgs {
                    let ReportPayload::Simultaneous(bits) = &msg.payload else {
                        return Err(self.mismatch(msg));
                    };
                    if bits.len() != self.q {
                        return Err(Error::Protocol(format!(
                            "sender {} sent {} bits, expected {}",
                            msg.sender,
                            bits.len(),
                            self.q
                        )));
                    }
                    for (v, &b) in votes.iter_mut().zip(bits) {
                        *v += usize::from(b);
                    }
                }
                (1..=self.q).filter(|&q| votes[q - 1] >= self.rule.d).collect()
            }
            RuleKind::MultiShot | RuleKind::OneShot => {
                let one_shot = self.rule.kind == RuleKind::OneShot;
                for msg in msgs {
                    let q = match (&msg.payload, one_shot) {
                        (ReportPayload::MultiShot(q), false) | (ReportPayload::OneShot(q), true) => *q,
                        _ => return Err(self.mismatch(msg)),
                    };
                    self.check_hypothesis(msg, q)?;
                    if one_shot && std::mem::replace(&mut self.spent[msg.sender], true) {
                        return Err(Error::Protocol(format!(
                            "sender {} sent a second one-shot report",
                            msg.sender
                        )));
                    }
                    if !std::mem::replace(&mut self.reported[q - 1][msg.sender], true) {
                        self.counts[q - 1] += 1;
                    }
                }
                (1..=self.q).filter(|&q| self.counts[q - 1] >= self.rule.d).collect()
            }
            RuleKind::Genie { threshold, .. } => {
                let mut any = false;
                self.genie_sum.iter_mut().for_each(|s| *s = 0.0);
                for msg in msgs {
                    let ReportPayload::Observation(x) = msg.payload else {
                        return Err(self.mismatch(msg));
                    };
                    for (s, lp) in self.genie_sum.iter_mut().zip(hs.log_densities(x)?) {
                        *s += lp;
                    }
                    any = true;
                }
                let matrix = self.genie.as_mut().expect("genie state exists");
                if any {
                    matrix.update_with_log_densities(&self.genie_sum);
                }
                let stats = matrix.row_min();
                let crossed = stats.accepted(threshold);
                if crossed.is_empty() {
                    Vec::new()
                } else {
                    let best = crossed
                        .iter()
                        .map(|&q| stats.get(q))
                        .fold(f64::NEG_INFINITY, f64::max);
                    crossed.into_iter().filter(|&q| stats.get(q) == best).collect()
                }
            }
        };

        Ok(winners.first().map(|&declared| {
            self.epoch += 1;
            AlarmEvent {
                time: t,
                declared,
                epoch: self.epoch,
                tie: winners.len() > 1,
            }
        }))
    }

    /// One-shot only: no hypothesis can reach `d` any more, even if every
    /// sender that is still silent reported it.
    pub fn is_undecidable(&self) -> bool {
        if self.rule.kind != RuleKind::OneShot {
            return false;
        }
        let silent = self.spent.iter().filter(|&&s| !s).count();
        self.counts.iter().all(|&c| c + silent < self.rule.d)
    }

    /// Clear counts and statistics for the next epoch; the alarm counter
    /// is kept.
    pub fn reset(&mut self) {
        self.reported.iter_mut().flatten().for_each(|r| *r = false);
        self.counts.iter_mut().for_each(|c| *c = 0);
        self.spent.iter_mut().for_each(|s| *s = false);
        if let Some(m) = self.genie.as_mut() {
            m.reset();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cusum::ScalarCusum;
    use crate::distributions::DensityModel;

    fn hs(q: usize) -> HypothesisSet {
        HypothesisSet::new((0..=q).map(|m| DensityModel::gaussian(m as f64, 1.0).unwrap()).collect()).unwrap()
    }

    fn sim(sender: usize, bits: &[bool]) -> ReportMessage {
        ReportMessage {
            sender,
            payload: ReportPayload::Simultaneous(bits.to_vec()),
        }
    }

    fn multi(sender: usize, q: usize) -> ReportMessage {
        ReportMessage {
            sender,
            payload: ReportPayload::MultiShot(q),
        }
    }

    fn one(sender: usize, q: usize) -> ReportMessage {
        ReportMessage {
            sender,
            payload: ReportPayload::OneShot(q),
        }
    }

    #[test]
    fn simultaneous_counts_this_step_only() {
        let h = hs(2);
        let mut f = FusionState::new(FusionRule::simultaneous(3), 2, 6);
        let msgs: Vec<_> = (0..6).map(|k| sim(k, &[false, [1, 4, 5].contains(&k)])).collect();
        let alarm = f.step(&h, &msgs, 7).unwrap().unwrap();
        assert_eq!((alarm.time, alarm.declared, alarm.epoch), (7, 2, 1));

        let mut f = FusionState::new(FusionRule::simultaneous(3), 2, 6);
        let two: Vec<_> = (0..6).map(|k| sim(k, &[false, k < 2])).collect();
        assert!(f.step(&h, &two, 1).unwrap().is_none());
        assert!(f.step(&h, &two, 2).unwrap().is_none());
    }

    #[test]
    fn multi_shot_ignores_duplicate_sender() {
        let h = hs(2);
        let mut f = FusionState::new(FusionRule::multi_shot(3), 2, 8);
        assert!(f.step(&h, &[multi(2, 1)], 1).unwrap().is_none());
        assert!(f.step(&h, &[multi(7, 1)], 2).unwrap().is_none());
        assert!(f.step(&h, &[multi(2, 1)], 3).unwrap().is_none());
        assert_eq!(f.count(1), 2);
        let alarm = f.step(&h, &[multi(0, 1)], 4).unwrap().unwrap();
        assert_eq!(alarm.declared, 1);
    }

    #[test]
    fn cross_hypothesis_tie_goes_to_smallest_index() {
        let h = hs(2);
        let mut f = FusionState::new(FusionRule::simultaneous(2), 2, 3);
        let alarm = f
            .step(&h, &[sim(0, &[true, true]), sim(1, &[true, true])], 1)
            .unwrap()
            .unwrap();
        assert_eq!(alarm.declared, 1);
        assert!(alarm.tie);
    }

    #[test]
    fn one_shot_undecidable_event() {
        let h = hs(3);
        let mut f = FusionState::new(FusionRule::one_shot(2), 3, 3);
        assert!(!f.is_undecidable());
        assert!(f.step(&h, &[one(0, 1)], 1).unwrap().is_none());
        assert!(f.step(&h, &[one(1, 2)], 2).unwrap().is_none());
        assert!(!f.is_undecidable());
        assert!(f.step(&h, &[one(2, 3)], 3).unwrap().is_none());
        assert!(f.is_undecidable());
        assert!(f.step(&h, &[one(0, 1)], 4).is_err());
    }

    #[test]
    fn payload_mismatch_is_protocol_error() {
        let h = hs(2);
        let mut f = FusionState::new(FusionRule::multi_shot(1), 2, 2);
        assert!(matches!(f.step(&h, &[sim(0, &[true, false])], 1), Err(Error::Protocol(_))));
        let mut f = FusionState::new(FusionRule::simultaneous(1), 2, 2);
        assert!(matches!(f.step(&h, &[sim(0, &[true])], 1), Err(Error::Protocol(_))));
        assert!(matches!(
            f.step(&h, &[sim(0, &[true, false]), sim(0, &[true, false])], 1),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn genie_is_scalar_cusum_on_summed_llrs() {
        let h = hs(1);
        let mut f = FusionState::new(FusionRule::genie(2, 6.0), 1, 3);
        let mut c = ScalarCusum::new(6.0).unwrap();
        let xs = [(0.3, 1.2), (-0.5, 2.0), (1.5, 1.1), (0.9, 2.4), (2.2, 0.7), (1.8, 1.9)];
        for (t, &(a, b)) in xs.iter().enumerate() {
            let msgs = [
                ReportMessage { sender: 0, payload: ReportPayload::Observation(a) },
                ReportMessage { sender: 1, payload: ReportPayload::Observation(b) },
            ];
            let alarm = f.step(&h, &msgs, t as u64 + 1).unwrap();
            let stat = c.update(h.log_likelihood_ratio(1, 0, a).unwrap() + h.log_likelihood_ratio(1, 0, b).unwrap());
            assert_eq!(alarm.is_some(), c.crossed(), "t = {}", t + 1);
            assert!(stat >= 0.0);
            if alarm.is_some() {
                return;
            }
        }
        panic!("genie never crossed");
    }

    #[test]
    fn vote_range_validation() {
        assert!(FusionRule::simultaneous(2).validate(5, 2).is_err());
        assert!(FusionRule::simultaneous(3).validate(5, 2).is_ok());
        assert!(FusionRule::simultaneous(6).validate(5, 2).is_err());
        assert!(FusionRule::genie(4, 9.0).validate(5, 2).is_ok());
        assert!(FusionRule::genie(6, 9.0).validate(5, 2).is_err());
    }

    #[test]
    fn stopping_time_per_type() {
        let events = [
            AlarmEvent { time: 5, declared: 1, epoch: 1, tie: false },
            AlarmEvent { time: 9, declared: 2, epoch: 2, tie: false },
        ];
        assert_eq!(stopping_time_for_type(&events, 2), Some(9));
        assert_eq!(stopping_time_for_type(&events[..1], 2), None);
        assert_eq!(stopping_time_for_type(&[], 1), None);
    }
}
