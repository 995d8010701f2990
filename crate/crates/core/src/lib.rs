//! Simulation engine and analysis toolkit for Byzantine distributed quickest
//! change detection.
//!
//! A fusion center watches `K = N + M` sensors, `M` of which may be
//! compromised and colluding. Honest sensors run (soft) matrix CUSUM
//! statistics over `Q + 1` hypotheses and report to the fusion center, which
//! applies a voting-style stopping rule. The crate provides:
//!
//! * [`distributions`]: parametric densities, LLRs, KL divergences and the
//!   closest-alternative table.
//! * [`cusum`]: scalar, full-matrix and reduced-matrix CUSUM statistics.
//! * [`sensors`]: honest local rules and the one-shot / multi-shot /
//!   simultaneous report mechanisms.
//! * [`attacks`]: compromised-sensor strategies, including the reverse attack.
//! * [`fusion`]: fusion-center stopping rules and the genie centralized CUSUM.
//! * [`montecarlo`]: seeded, parallel, deterministic trial execution and
//!   delay / false-alarm estimators.
//! * [`asymptotics`]: closed-form delay expansions, false-alarm bounds,
//!   threshold calibration and game costs.

pub mod asymptotics;
pub mod attacks;
pub mod cusum;
pub mod distributions;
pub mod error;
pub mod fusion;
pub mod montecarlo;
pub mod quadrature;
pub mod sensors;

pub use asymptotics::TheoryReport;
pub use attacks::{build_reverse_assignment, AttackKind, AttackState, AttackStrategy, FakeStreamAssignment};
pub use cusum::{CusumMatrix, MatrixMode, RowMinSnapshot, ScalarCusum};
pub use distributions::{ClosestAlternatives, DensityModel, HypothesisSet};
pub use error::{Error, Result};
pub use fusion::{AlarmEvent, FusionRule, FusionState, RuleKind};
pub use montecarlo::{Metric, MetricsEstimate, Scenario, StopMode, SweepAxis, SweepRow, TrialOutcome};
pub use sensors::{ChangeTime, Mechanism, ReportMessage, ReportPayload, SensorState};
