//! Closed-form asymptotics: delay slopes and second-order constants,
//! false-alarm lower bounds, threshold calibration and game costs.
//!
//! All logarithms are natural.

use serde::Serialize;
use statrs::function::erf::erfc;
use statrs::function::factorial::{binomial, ln_binomial};

use crate::distributions::HypothesisSet;
use crate::error::{Error, Result};
use crate::fusion::{FusionRule, RuleKind};
use crate::montecarlo::MetricsEstimate;
use crate::quadrature::{integrate, QuadratureOptions};

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn ln_std_normal_pdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Expected `d`-th smallest of `n` i.i.d. standard normals.
pub fn xi_d(n: usize, d: usize) -> Result<f64> {
    if d == 0 || d > n {
        return Err(Error::InvalidArgument(format!("rank d = {d} outside 1..={n}")));
    }
    let ln_coef = (n as f64).ln() + ln_binomial((n - 1) as u64, (d - 1) as u64);
    let below = (d - 1) as f64;
    let above = (n - d) as f64;
    let density = |x: f64| {
        let mut ln = ln_coef + ln_std_normal_pdf(x);
        if below > 0.0 {
            ln += below * std_normal_cdf(x).ln();
        }
        if above > 0.0 {
            ln += above * std_normal_cdf(-x).ln();
        }
        ln.exp()
    };
    let opts = QuadratureOptions {
        abs_tol: 1e-12,
        rel_tol: 1e-12,
        ..Default::default()
    };
    let breaks = [-14.0, -8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0, 14.0];
    let value = integrate(|x| x * density(x), &breaks, opts)?.value;
    // Clean up the exact zero of the median rank.
    Ok(if 2 * d == n + 1 { 0.0 } else { value })
}

fn vote_margin(n: usize, m: usize, d: usize) -> Result<usize> {
    if d <= m || d > n {
        return Err(Error::InvalidArgument(format!(
            "vote count d = {d} must satisfy M < d <= N (M = {m}, N = {n})"
        )));
    }
    Ok(d - m)
}

/// Lower bound on the mean time to false alarm of the multi-shot `d`-th alarm.
pub fn false_bound_multishot(n: usize, m: usize, d: usize, h: f64) -> Result<f64> {
    let k = vote_margin(n, m, d)? as f64;
    let c = binomial(n as u64, (d - m) as u64);
    Ok(k / (k + 1.0) * c.powf(-1.0 / k) * h.exp())
}

/// Lower bound on the mean time to false alarm of the simultaneous `d`-th alarm.
pub fn false_bound_simultaneous(n: usize, m: usize, d: usize, h: f64) -> Result<f64> {
    let k = vote_margin(n, m, d)? as f64;
    let c = binomial(n as u64, (d - m) as u64);
    Ok(0.5 / c * (k * h).exp())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma <= 1.0 || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("false-alarm target must exceed 1, got {gamma}")));
    }
    Ok(())
}

/// Local threshold making [`false_bound_simultaneous`] equal `gamma`.
pub fn calibrate_h_simultaneous(n: usize, m: usize, d: usize, gamma: f64) -> Result<f64> {
    let k = vote_margin(n, m, d)?;
    check_gamma(gamma)?;
    let ln_c = ln_binomial(n as u64, k as u64);
    Ok((gamma.ln() + 2f64.ln() + ln_c) / k as f64)
}

/// Local threshold making [`false_bound_multishot`] equal `gamma`.
pub fn calibrate_h_multishot(n: usize, m: usize, d: usize, gamma: f64) -> Result<f64> {
    let k = vote_margin(n, m, d)? as f64;
    check_gamma(gamma)?;
    let ln_c = ln_binomial(n as u64, (d - m) as u64);
    Ok(gamma.ln() + ln_c / k + ((k + 1.0) / k).ln())
}

/// Calibrated threshold for any rule with a false-alarm bound.
pub fn calibrate_h(rule: &FusionRule, n: usize, m: usize, gamma: f64) -> Result<f64> {
    match rule.kind {
        RuleKind::Simultaneous => calibrate_h_simultaneous(n, m, rule.d, gamma),
        RuleKind::MultiShot => calibrate_h_multishot(n, m, rule.d, gamma),
        RuleKind::OneShot => Err(Error::InvalidArgument("the one-shot rule has no false-alarm bound".into())),
        RuleKind::Genie { .. } => {
            check_gamma(gamma)?;
            Ok(gamma.ln())
        }
    }
}

/// False-alarm bound of `rule` at local threshold `h`.
pub fn false_bound(rule: &FusionRule, n: usize, m: usize, h: f64) -> Result<f64> {
    match rule.kind {
        RuleKind::Simultaneous => false_bound_simultaneous(n, m, rule.d, h),
        RuleKind::MultiShot => false_bound_multishot(n, m, rule.d, h),
        RuleKind::OneShot => Err(Error::InvalidArgument("the one-shot rule has no false-alarm bound".into())),
        // Centralized CUSUM: mean time to false alarm is at least e^h.
        RuleKind::Genie { .. } => Ok(h.exp()),
    }
}

fn check_populations(n: usize, m: usize) -> Result<()> {
    if n <= m {
        return Err(Error::InvalidArgument(format!(
            "need more honest than compromised sensors (N = {n}, M = {m})"
        )));
    }
    Ok(())
}

/// Slope of the universal delay lower bound in `log gamma`.
pub fn converse_slope(n: usize, m: usize, i_star: f64) -> Result<f64> {
    check_populations(n, m)?;
    Ok(1.0 / ((n - m) as f64 * i_star))
}

/// Delay slope in `log gamma` achieved by `rule` under its worst-case attack.
pub fn achievability_slope(rule: &FusionRule, n: usize, m: usize, i_star: f64) -> Result<f64> {
    check_populations(n, m)?;
    match rule.kind {
        RuleKind::Simultaneous => Ok(1.0 / (vote_margin(n, m, rule.d)? as f64 * i_star)),
        RuleKind::MultiShot => {
            vote_margin(n, m, rule.d)?;
            Ok(1.0 / i_star)
        }
        RuleKind::OneShot => Err(Error::InvalidArgument("the one-shot rule has no delay slope".into())),
        RuleKind::Genie { revealed, .. } => Ok(1.0 / (revealed as f64 * i_star)),
    }
}

/// Equilibrium leader cost: the optimal slope when honest sensors are in
/// the majority, zero otherwise.
pub fn stackelberg_cost(n: usize, m: usize, i_star: f64) -> f64 {
    if n > m {
        1.0 / ((n - m) as f64 * i_star)
    } else {
        0.0
    }
}

/// Finite-`gamma` leader cost: normalised delay if the false-alarm
/// constraint is met, `+inf` otherwise.
pub fn leader_cost_empirical(delay: &MetricsEstimate, gamma: f64, false_metric: &MetricsEstimate) -> f64 {
    if false_metric.mean >= gamma {
        delay.mean / gamma.ln()
    } else {
        f64::INFINITY
    }
}

/// Per-hypothesis entries of a [`TheoryReport`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisTheory {
    pub q: usize,
    /// `I^q`.
    pub divergence: f64,
    /// `j*_q`.
    pub closest: usize,
    /// LLR variance against the closest alternative.
    pub variance: f64,
    /// Second-order delay constant for every rank `d = 1..=N`.
    pub delay_constants: Vec<f64>,
}

/// Everything the closed-form theory says about one configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryReport {
    pub honest: usize,
    pub compromised: usize,
    pub i_star: f64,
    pub pre_change: (f64, usize),
    pub ties: Vec<String>,
    pub hypotheses: Vec<HypothesisTheory>,
    /// Expected order statistics for `d = 1..=N`.
    pub xi: Vec<f64>,
    pub converse_slope: f64,
    pub stackelberg_cost: f64,
    pub rule: Option<FusionRule>,
    pub achievability_slope: Option<f64>,
    pub gamma: Option<f64>,
    pub calibrated_h: Option<f64>,
    pub false_bound: Option<f64>,
}

impl TheoryReport {
    pub fn new(hs: &HypothesisSet, honest: usize, compromised: usize) -> Result<Self> {
        let ca = hs.closest_alternatives();
        let xi = (1..=honest).map(|d| xi_d(honest, d)).collect::<Result<Vec<_>>>()?;
        let hypotheses = (1..=hs.q())
            .map(|q| {
                let (divergence, closest) = ca.get(q);
                let variance = hs.llr_second_moment(q, closest)?;
                let scale = (variance / divergence).sqrt();
                Ok(HypothesisTheory {
                    q,
                    divergence,
                    closest,
                    variance,
                    delay_constants: xi.iter().map(|x| x * scale).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            honest,
            compromised,
            i_star: ca.i_star,
            pre_change: ca.pre_change,
            ties: ca.ties.clone(),
            hypotheses,
            xi,
            converse_slope: converse_slope(honest, compromised, ca.i_star)?,
            stackelberg_cost: stackelberg_cost(honest, compromised, ca.i_star),
            rule: None,
            achievability_slope: None,
            gamma: None,
            calibrated_h: None,
            false_bound: None,
        })
    }

    /// Attach a rule's slope and, for a target `gamma`, its calibrated
    /// threshold and the bound it certifies.
    pub fn with_rule(mut self, rule: &FusionRule, gamma: Option<f64>) -> Result<Self> {
        let (n, m) = (self.honest, self.compromised);
        self.rule = Some(*rule);
        self.achievability_slope = achievability_slope(rule, n, m, self.i_star).ok();
        if let Some(g) = gamma {
            let h = calibrate_h(rule, n, m, g)?;
            self.gamma = Some(g);
            self.calibrated_h = Some(h);
            self.false_bound = Some(false_bound(rule, n, m, h)?);
        }
        Ok(self)
    }

    /// Second-order delay constant `xi_d * sqrt(variance / I^q)`.
    pub fn delay_constant(&self, q: usize, d: usize) -> Result<f64> {
        let row = self
            .hypotheses
            .get(q.wrapping_sub(1))
            .ok_or_else(|| Error::InvalidArgument(format!("hypothesis {q} outside 1..={}", self.hypotheses.len())))?;
        row.delay_constants
            .get(d.wrapping_sub(1))
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("rank d = {d} outside 1..={}", self.honest)))
    }

    /// Two-term expansion of the mean `d`-th local acceptance time of `H_q`.
    pub fn delay_expansion(&self, q: usize, d: usize, h: f64) -> Result<f64> {
        if h.is_nan() || h <= 0.0 {
            return Err(Error::InvalidArgument(format!("threshold must be positive, got {h}")));
        }
        let constant = self.delay_constant(q, d)?;
        Ok(h / self.hypotheses[q - 1].divergence + constant * h.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::DensityModel;

    fn binary() -> HypothesisSet {
        HypothesisSet::new(vec![
            DensityModel::gaussian(0.0, 1.0).unwrap(),
            DensityModel::gaussian(1.0, 1.0).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn xi_small_cases() {
        assert_eq!(xi_d(1, 1).unwrap(), 0.0);
        assert!((xi_d(2, 2).unwrap() - 1.0 / std::f64::consts::PI.sqrt()).abs() < 1e-9);
        // Max of three: 3 / (2 sqrt(pi)).
        assert!((xi_d(3, 3).unwrap() - 1.5 / std::f64::consts::PI.sqrt()).abs() < 1e-9);
        assert!(xi_d(3, 0).is_err());
        assert!(xi_d(3, 4).is_err());
    }

    #[test]
    fn bound_examples() {
        let e = 9.21f64.exp();
        assert!((false_bound_multishot(5, 2, 3, 9.21).unwrap() - 0.1 * e).abs() < 1e-9 * e);
        assert!((false_bound_simultaneous(5, 2, 3, 9.21).unwrap() - 0.1 * e).abs() < 1e-9 * e);
        assert!((false_bound_simultaneous(5, 2, 5, 3.0).unwrap() - 405.154).abs() < 1e-2);
        assert!(false_bound_simultaneous(5, 2, 2, 3.0).is_err());
        assert!(false_bound_multishot(5, 2, 6, 3.0).is_err());
    }

    #[test]
    fn calibration_examples() {
        assert!((calibrate_h_simultaneous(5, 2, 5, 1e4).unwrap() - 4.0687).abs() < 1e-4);
        assert!((calibrate_h_multishot(5, 2, 3, 1e4).unwrap() - 11.5129).abs() < 1e-4);
        assert!(calibrate_h_multishot(5, 2, 3, 1.0).is_err());
    }

    #[test]
    fn slopes() {
        assert_eq!(converse_slope(3, 1, 0.5).unwrap(), 1.0);
        assert_eq!(achievability_slope(&FusionRule::simultaneous(3), 3, 1, 0.5).unwrap(), 1.0);
        assert_eq!(achievability_slope(&FusionRule::multi_shot(2), 3, 1, 0.5).unwrap(), 2.0);
        assert!(converse_slope(2, 2, 0.5).is_err());
        assert_eq!(stackelberg_cost(3, 1, 0.5), 1.0);
        assert_eq!(stackelberg_cost(2, 3, 0.5), 0.0);
    }

    #[test]
    fn leader_cost() {
        let est = |mean| MetricsEstimate {
            mean,
            ci_halfwidth: 0.0,
            censor_fraction: 0.0,
            n: 1,
            total: 1,
            lower_estimate: false,
        };
        let c = leader_cost_empirical(&est(20.0), 1e4, &est(1.2e4));
        assert!((c - 20.0 / 1e4f64.ln()).abs() < 1e-12);
        assert_eq!(leader_cost_empirical(&est(20.0), 1e4, &est(9e3)), f64::INFINITY);
    }

    #[test]
    fn expansion_examples() {
        let report = TheoryReport::new(&binary(), 1, 0).unwrap();
        assert!((report.delay_expansion(1, 1, 9.21).unwrap() - 18.42).abs() < 1e-9);
        let report = TheoryReport::new(&binary(), 5, 0).unwrap();
        let xi5 = xi_d(5, 5).unwrap();
        let want = 18.42 + xi5 * 2f64.sqrt() * 9.21f64.sqrt();
        assert!((report.delay_expansion(1, 5, 9.21).unwrap() - want).abs() < 1e-9);
        let by_d: Vec<f64> = (1..=5).map(|d| report.delay_expansion(1, d, 9.21).unwrap()).collect();
        assert!(by_d.windows(2).all(|w| w[0] < w[1]));
        assert!(report.delay_expansion(1, 6, 9.21).is_err());
        assert!(report.delay_expansion(2, 1, 9.21).is_err());
    }

    #[test]
    fn report_with_rule() {
        let report = TheoryReport::new(&binary(), 5, 2)
            .unwrap()
            .with_rule(&FusionRule::simultaneous(5), Some(1e4))
            .unwrap();
        assert!((report.calibrated_h.unwrap() - 4.0687).abs() < 1e-4);
        assert!((report.false_bound.unwrap() - 1e4).abs() < 1e-6);
        assert_eq!(report.achievability_slope, Some(report.converse_slope));
    }
}
