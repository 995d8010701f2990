//! Local CUSUM statistics: Page's scalar recursion and the per-sensor
//! matrix of pairwise statistics `Y(q, j)` used for multi-hypothesis
//! acceptance.

use serde::{Deserialize, Serialize};

use crate::distributions::HypothesisSet;
use crate::error::{Error, Result};

/// Page's CUSUM `Y_t = (Y_{t-1} + l_t)^+` with an alarm threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarCusum {
    stat: f64,
    threshold: f64,
}

impl ScalarCusum {
    pub fn new(threshold: f64) -> Result<Self> {
        if threshold.is_nan() || threshold <= 0.0 {
            return Err(Error::InvalidArgument(format!("CUSUM threshold must be positive, got {threshold}")));
        }
        Ok(Self { stat: 0.0, threshold })
    }

    /// Feed one LLR and return the new statistic.
    pub fn update(&mut self, llr: f64) -> f64 {
        self.stat = (self.stat + llr).max(0.0);
        self.stat
    }

    pub fn stat(&self) -> f64 {
        self.stat
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn crossed(&self) -> bool {
        self.stat >= self.threshold
    }

    pub fn reset(&mut self) {
        self.stat = 0.0;
    }
}

/// Which entries of the CUSUM matrix a sensor maintains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixMode {
    /// Every `(q, j)` with `j != q`.
    #[default]
    Full,
    /// Only `(q, j*_q)`; all other entries read as `+inf`.
    Reduced,
}

/// The `Q x (Q+1)` matrix of CUSUM statistics `Y(q, j)`, `q in 1..=Q`,
/// `j in 0..=Q`, `j != q`.
#[derive(Debug, Clone, PartialEq)]
pub struct CusumMatrix {
    q: usize,
    entries: Vec<f64>,
    mode: MatrixMode,
    closest: Vec<usize>,
}

impl CusumMatrix {
    pub fn full(q: usize) -> Self {
        assert!(q >= 1, "at least one post-change hypothesis");
        Self {
            q,
            entries: vec![0.0; q * (q + 1)],
            mode: MatrixMode::Full,
            closest: Vec::new(),
        }
    }

    /// Reduced matrix keeping `(q, closest[q - 1])` only.
    pub fn reduced(closest: Vec<usize>) -> Result<Self> {
        let q = closest.len();
        if q == 0 {
            return Err(Error::InvalidArgument("reduced matrix needs at least one row".into()));
        }
        for (row, &j) in closest.iter().enumerate() {
            if j > q || j == row + 1 {
                return Err(Error::InvalidArgument(format!(
                    "closest alternative {j} invalid for hypothesis {}",
                    row + 1
                )));
            }
        }
        Ok(Self {
            q,
            entries: vec![0.0; q * (q + 1)],
            mode: MatrixMode::Reduced,
            closest,
        })
    }

    pub fn for_hypotheses(hs: &HypothesisSet, mode: MatrixMode) -> Self {
        match mode {
            MatrixMode::Full => Self::full(hs.q()),
            MatrixMode::Reduced => {
                let ca = hs.closest_alternatives();
                Self::reduced((1..=hs.q()).map(|q| ca.closest(q)).collect())
                    .expect("closest alternatives are valid by construction")
            }
        }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn mode(&self) -> MatrixMode {
        self.mode
    }

    fn index(&self, q: usize, j: usize) -> usize {
        (q - 1) * (self.q + 1) + j
    }

    pub fn is_maintained(&self, q: usize, j: usize) -> bool {
        if q == 0 || q > self.q || j > self.q || j == q {
            return false;
        }
        match self.mode {
            MatrixMode::Full => true,
            MatrixMode::Reduced => self.closest[q - 1] == j,
        }
    }

    /// `Y(q, j)`; `None` for the diagonal or out-of-range indices, `+inf`
    /// for entries a reduced matrix does not maintain.
    pub fn entry(&self, q: usize, j: usize) -> Option<f64> {
        if q == 0 || q > self.q || j > self.q || j == q {
            return None;
        }
        if self.is_maintained(q, j) {
            Some(self.entries[self.index(q, j)])
        } else {
            Some(f64::INFINITY)
        }
    }

    /// Advance every maintained entry with precomputed log-densities
    /// `log P_0(x), ..., log P_Q(x)`.
    pub fn update_with_log_densities(&mut self, log_densities: &[f64]) {
        debug_assert_eq!(log_densities.len(), self.q + 1);
        for q in 1..=self.q {
            match self.mode {
                MatrixMode::Full => {
                    for j in (0..=self.q).filter(|&j| j != q) {
                        let i = self.index(q, j);
                        self.entries[i] = (self.entries[i] + log_densities[q] - log_densities[j]).max(0.0);
                    }
                }
                MatrixMode::Reduced => {
                    let j = self.closest[q - 1];
                    let i = self.index(q, j);
                    self.entries[i] = (self.entries[i] + log_densities[q] - log_densities[j]).max(0.0);
                }
            }
        }
    }

    /// Advance with observation `x`.
    pub fn update(&mut self, hs: &HypothesisSet, x: f64) -> Result<()> {
        if hs.q() != self.q {
            return Err(Error::InvalidArgument(format!(
                "matrix has {} rows but hypothesis set has Q = {}",
                self.q,
                hs.q()
            )));
        }
        let lp = hs.log_densities(x)?;
        self.update_with_log_densities(&lp);
        Ok(())
    }

    /// Row minima `Y_{t,q}` over the maintained entries.
    pub fn row_min(&self) -> RowMinSnapshot {
        let values = (1..=self.q)
            .map(|q| match self.mode {
                MatrixMode::Full => (0..=self.q)
                    .filter(|&j| j != q)
                    .map(|j| self.entries[self.index(q, j)])
                    .fold(f64::INFINITY, f64::min),
                MatrixMode::Reduced => self.entries[self.index(q, self.closest[q - 1])],
            })
            .collect();
        RowMinSnapshot { values }
    }

    pub fn reset(&mut self) {
        self.entries.iter_mut().for_each(|e| *e = 0.0);
    }
}

/// Row minima `Y_{t,q}`; `values[q - 1]` belongs to hypothesis `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMinSnapshot {
    pub values: Vec<f64>,
}

impl RowMinSnapshot {
    pub fn get(&self, q: usize) -> f64 {
        self.values[q - 1]
    }

    /// Hypotheses acceptable at threshold `h`: `{q : Y_{t,q} >= h}`, ascending.
    pub fn accepted(&self, h: f64) -> Vec<usize> {
        debug_assert!(h > 0.0);
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v >= h)
            .map(|(i, _)| i + 1)
            .collect()
    }

    /// Hypotheses attaining the largest row minimum, ascending.
    pub fn argmax_all(&self) -> Vec<usize> {
        let best = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == best)
            .map(|(i, _)| i + 1)
            .collect()
    }
}
