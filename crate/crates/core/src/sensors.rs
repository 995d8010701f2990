//! Honest-sensor local rules and the three report mechanisms.
//!
//! Every sensor runs a (soft) matrix CUSUM. What it sends to the fusion
//! center depends on the mechanism:
//!
//! * one-shot: the first hard decision, once, then silence;
//! * multi-shot: each hypothesis the first time it becomes acceptable, one
//!   report per step through a FIFO tie queue;
//! * simultaneous: the full `Q`-bit acceptance vector every step.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cusum::{CusumMatrix, MatrixMode, RowMinSnapshot};
use crate::distributions::HypothesisSet;
use crate::error::{Error, Result};

/// Report mechanism shared by every sensor in a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    OneShot,
    MultiShot,
    Simultaneous,
}

/// What a sensor puts on its link in one step.
#[derive(Debug, Clone, PartialEq)]
pub enum ReportPayload {
    OneShot(usize),
    MultiShot(usize),
    /// Bit `q - 1` is set iff `H_q` is acceptable at this step.
    Simultaneous(Vec<bool>),
    /// Raw observation, only sent by sensors a genie has revealed.
    Observation(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportMessage {
    pub sender: usize,
    pub payload: ReportPayload,
}

/// Change time `nu`: observations `1..=nu` are pre-change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeTime {
    At(u64),
    Never,
}

impl ChangeTime {
    pub fn is_post_change(&self, t: u64) -> bool {
        match *self {
            Self::At(nu) => t > nu,
            Self::Never => false,
        }
    }

    pub fn finite(&self) -> Option<u64> {
        match *self {
            Self::At(nu) => Some(nu),
            Self::Never => None,
        }
    }
}

/// Draw `X_t` for an honest sensor: `P_0` while `t <= nu`, `P_{q_true}` after.
pub fn honest_observation<R: Rng + ?Sized>(
    hs: &HypothesisSet,
    t: u64,
    change: ChangeTime,
    q_true: usize,
    rng: &mut R,
) -> f64 {
    debug_assert!(t >= 1);
    let index = if change.is_post_change(t) { q_true } else { 0 };
    hs.density(index).sample(rng)
}

/// Local state of one sensor.
#[derive(Debug, Clone)]
pub struct SensorState {
    pub id: usize,
    pub honest: bool,
    matrix: CusumMatrix,
    mechanism: Mechanism,
    threshold: f64,
    reported: Vec<bool>,
    tie_queue: VecDeque<usize>,
    fired: bool,
    scratch: Vec<f64>,
}

impl SensorState {
    pub fn new(
        id: usize,
        honest: bool,
        hs: &HypothesisSet,
        mode: MatrixMode,
        mechanism: Mechanism,
        threshold: f64,
    ) -> Result<Self> {
        if threshold <= 0.0 || !threshold.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "local threshold must be positive and finite, got {threshold}"
            )));
        }
        Ok(Self {
            id,
            honest,
            matrix: CusumMatrix::for_hypotheses(hs, mode),
            mechanism,
            threshold,
            reported: vec![false; hs.q()],
            tie_queue: VecDeque::with_capacity(hs.q()),
            fired: false,
            scratch: vec![0.0; hs.q() + 1],
        })
    }

    pub fn matrix(&self) -> &CusumMatrix {
        &self.matrix
    }

    pub fn mechanism(&self) -> Mechanism {
        self.mechanism
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Hypotheses already reported in this epoch (multi-shot and one-shot).
    pub fn reported(&self) -> Vec<usize> {
        self.reported
            .iter()
            .enumerate()
            .filter(|(_, &r)| r)
            .map(|(i, _)| i + 1)
            .collect()
    }

    pub fn queue_len(&self) -> usize {
        self.tie_queue.len()
    }

    /// True once a one-shot sensor has spent its report.
    pub fn has_fired(&self) -> bool {
        self.fired
    }

    /// Update the matrix with observation `x` and produce this step's report.
    pub fn step<R: Rng + ?Sized>(&mut self, hs: &HypothesisSet, x: f64, rng: &mut R) -> Result<Option<ReportMessage>> {
        let mut lp = std::mem::take(&mut self.scratch);
        let filled = hs.log_densities_into(x, &mut lp);
        let out = filled.map(|()| self.step_with_log_densities(&lp, rng));
        self.scratch = lp;
        out
    }

    pub fn step_with_log_densities<R: Rng + ?Sized>(
        &mut self,
        log_densities: &[f64],
        rng: &mut R,
    ) -> Option<ReportMessage> {
        self.matrix.update_with_log_densities(log_densities);
        let snapshot = self.matrix.row_min();
        let payload = match self.mechanism {
            Mechanism::OneShot => self.one_shot(&snapshot, rng).map(ReportPayload::OneShot),
            Mechanism::MultiShot => self.multi_shot(&snapshot, rng).map(ReportPayload::MultiShot),
            Mechanism::Simultaneous => Some(ReportPayload::Simultaneous(
                snapshot.values.iter().map(|&v| v >= self.threshold).collect(),
            )),
        };
        payload.map(|payload| ReportMessage {
            sender: self.id,
            payload,
        })
    }

    fn one_shot<R: Rng + ?Sized>(&mut self, snapshot: &RowMinSnapshot, rng: &mut R) -> Option<usize> {
        if self.fired || snapshot.accepted(self.threshold).is_empty() {
            return None;
        }
        let best = snapshot.argmax_all();
        let q = if best.len() == 1 {
            best[0]
        } else {
            best[rng.random_range(0..best.len())]
        };
        self.fired = true;
        self.reported[q - 1] = true;
        Some(q)
    }

    fn multi_shot<R: Rng + ?Sized>(&mut self, snapshot: &RowMinSnapshot, rng: &mut R) -> Option<usize> {
        let mut fresh: Vec<usize> = snapshot
            .accepted(self.threshold)
            .into_iter()
            .filter(|&q| !self.reported[q - 1] && !self.tie_queue.contains(&q))
            .collect();
        if fresh.len() > 1 {
            // Descending statistic; equal values in random order.
            fresh.shuffle(rng);
            fresh.sort_by(|&a, &b| snapshot.get(b).total_cmp(&snapshot.get(a)));
        }
        self.tie_queue.extend(fresh);
        let q = self.tie_queue.pop_front()?;
        self.reported[q - 1] = true;
        debug_assert!(self.tie_queue.len() < self.reported.len().max(1));
        Some(q)
    }

    /// Return to the post-alarm initial state: zero matrix, empty queue,
    /// nothing reported.
    pub fn reset(&mut self) {
        self.matrix.reset();
        self.reported.iter_mut().for_each(|r| *r = false);
        self.tie_queue.clear();
        self.fired = false;
    }
}
