//! Parametric densities, log-likelihood ratios and the divergence quantities
//! that drive the delay and false-alarm theory.
//!
//! Hypothesis index `0` is always the pre-change density; `1..=Q` are the
//! post-change types.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, QuadratureOptions};

/// Relative gap below which two divergences are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// A parametric density with sampling and log-density evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum DensityModel {
    Gaussian { mean: f64, variance: f64 },
    Bernoulli { p: f64 },
    Exponential { rate: f64 },
}

impl fmt::Display for DensityModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Gaussian { mean, variance } => write!(f, "Gaussian(mean={mean}, variance={variance})"),
            Self::Bernoulli { p } => write!(f, "Bernoulli(p={p})"),
            Self::Exponential { rate } => write!(f, "Exponential(rate={rate})"),
        }
    }
}

impl DensityModel {
    pub fn gaussian(mean: f64, variance: f64) -> Result<Self> {
        Self::Gaussian { mean, variance }.validated()
    }

    pub fn bernoulli(p: f64) -> Result<Self> {
        Self::Bernoulli { p }.validated()
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::Exponential { rate }.validated()
    }

    /// Check the family-specific parameter constraints.
    pub fn validated(self) -> Result<Self> {
        let ok = match self {
            Self::Gaussian { mean, variance } => mean.is_finite() && variance.is_finite() && variance > 0.0,
            Self::Bernoulli { p } => p > 0.0 && p < 1.0,
            Self::Exponential { rate } => rate.is_finite() && rate > 0.0,
        };
        if ok {
            Ok(self)
        } else {
            Err(Error::InvalidArgument(format!("invalid parameters for {self}")))
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Self::Gaussian { .. } => "gaussian",
            Self::Bernoulli { .. } => "bernoulli",
            Self::Exponential { .. } => "exponential",
        }
    }

    pub fn same_family(&self, other: &Self) -> bool {
        std::mem::discriminant(self) == std::mem::discriminant(other)
    }

    pub fn in_support(&self, x: f64) -> bool {
        match self {
            Self::Gaussian { .. } => x.is_finite(),
            Self::Bernoulli { .. } => x == 0.0 || x == 1.0,
            Self::Exponential { .. } => x.is_finite() && x >= 0.0,
        }
    }

    pub fn log_density(&self, x: f64) -> Result<f64> {
        if !self.in_support(x) {
            return Err(Error::Domain {
                x,
                density: self.to_string(),
            });
        }
        Ok(match *self {
            Self::Gaussian { mean, variance } => {
                let z = x - mean;
                -0.5 * (z * z / variance + (2.0 * std::f64::consts::PI * variance).ln())
            }
            Self::Bernoulli { p } => {
                if x == 1.0 {
                    p.ln()
                } else {
                    (-p).ln_1p()
                }
            }
            Self::Exponential { rate } => rate.ln() - rate * x,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Gaussian { mean, variance } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + variance.sqrt() * z
            }
            Self::Bernoulli { p } => {
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Exponential { rate } => {
                let e: f64 = Exp1.sample(rng);
                e / rate
            }
        }
    }

    /// KL divergence `D(self || other)` in nats, when the pair admits a
    /// closed form (same family).
    pub fn kl_closed_form(&self, other: &Self) -> Option<f64> {
        match (*self, *other) {
            (
                Self::Gaussian { mean: m1, variance: v1 },
                Self::Gaussian { mean: m2, variance: v2 },
            ) => {
                let dm = m1 - m2;
                Some(0.5 * ((v2 / v1).ln() + (v1 + dm * dm) / v2 - 1.0))
            }
            (Self::Bernoulli { p }, Self::Bernoulli { p: r }) => {
                Some(p * (p / r).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - r)).ln())
            }
            (Self::Exponential { rate: a }, Self::Exponential { rate: b }) => Some((a / b).ln() + b / a - 1.0),
            _ => None,
        }
    }

    /// Variance of the LLR `log self(x) - log other(x)` under `x ~ self`,
    /// when the pair admits a closed form.
    pub fn llr_second_moment_closed_form(&self, other: &Self) -> Option<f64> {
        match (*self, *other) {
            (
                Self::Gaussian { mean: m1, variance: v1 },
                Self::Gaussian { mean: m2, variance: v2 },
            ) => {
                // LLR = const + a z^2 + b z with z ~ N(0,1).
                let a = 0.5 * (v1 / v2 - 1.0);
                let b = v1.sqrt() * (m1 - m2) / v2;
                Some(2.0 * a * a + b * b)
            }
            (Self::Bernoulli { p }, Self::Bernoulli { p: r }) => {
                let gap = (p / r).ln() - ((1.0 - p) / (1.0 - r)).ln();
                Some(p * (1.0 - p) * gap * gap)
            }
            (Self::Exponential { rate: a }, Self::Exponential { rate: b }) => {
                let c = 1.0 - b / a;
                Some(c * c)
            }
            _ => None,
        }
    }

    /// `E_self[f(X)]` by adaptive quadrature (summation for discrete families).
    pub fn expectation<F>(&self, f: F, opts: QuadratureOptions) -> Result<f64>
    where
        F: Fn(f64) -> Result<f64>,
    {
        match *self {
            Self::Bernoulli { p } => Ok(p * f(1.0)? + (1.0 - p) * f(0.0)?),
            Self::Gaussian { mean, variance } => {
                let s = variance.sqrt();
                let breaks: Vec<f64> = [-40.0, -8.0, -2.0, 0.0, 2.0, 8.0, 40.0]
                    .iter()
                    .map(|k| mean + k * s)
                    .collect();
                self.integrate_weighted(&f, &breaks, opts)
            }
            Self::Exponential { rate } => {
                let breaks: Vec<f64> = [0.0, 1.0, 4.0, 16.0, 64.0, 800.0]
                    .iter()
                    .map(|k| k / rate)
                    .collect();
                self.integrate_weighted(&f, &breaks, opts)
            }
        }
    }

    fn integrate_weighted<F>(&self, f: &F, breaks: &[f64], opts: QuadratureOptions) -> Result<f64>
    where
        F: Fn(f64) -> Result<f64>,
    {
        let mut failure = None;
        let integrand = |x: f64| {
            let weight = self.log_density(x).map(f64::exp).and_then(|w| {
                if w == 0.0 {
                    Ok(0.0)
                } else {
                    f(x).map(|v| v * w)
                }
            });
            match weight {
                Ok(v) => v,
                Err(e) => {
                    // Surfaced after integration; NaN aborts the current panel.
                    if failure.is_none() {
                        failure = Some(e);
                    }
                    f64::NAN
                }
            }
        };
        let cell = std::cell::RefCell::new(integrand);
        let out = integrate(|x| (cell.borrow_mut())(x), breaks, opts);
        if let Some(e) = failure {
            return Err(e);
        }
        out.map(|i| i.value)
    }

    /// KL divergence `D(self || other)` by quadrature of the defining integral.
    pub fn kl_by_quadrature(&self, other: &Self) -> Result<f64> {
        self.expectation(|x| Ok(self.log_density(x)? - other.log_density(x)?), kl_options())
            .map_err(|e| infinite_divergence(e, self, other))
    }

    /// LLR variance under `self` by quadrature, given the divergence `kl`.
    pub fn llr_second_moment_by_quadrature(&self, other: &Self, kl: f64) -> Result<f64> {
        self.expectation(
            |x| {
                let d = self.log_density(x)? - other.log_density(x)? - kl;
                Ok(d * d)
            },
            kl_options(),
        )
        .map_err(|e| infinite_divergence(e, self, other))
    }
}

fn kl_options() -> QuadratureOptions {
    QuadratureOptions {
        abs_tol: 1e-8,
        rel_tol: 1e-12,
        max_subdivisions: 10_000,
    }
}

fn infinite_divergence(e: Error, p: &DensityModel, r: &DensityModel) -> Error {
    match e {
        Error::Domain { .. } => Error::Numeric {
            reason: format!("divergence of {p} from {r} is infinite (support mismatch)"),
            estimate: f64::INFINITY,
            error: f64::INFINITY,
            intervals: 0,
        },
        other => other,
    }
}

/// KL divergence `D(p || r)`: closed form when available, quadrature otherwise.
pub fn kl_divergence(p: &DensityModel, r: &DensityModel) -> Result<f64> {
    match p.kl_closed_form(r) {
        Some(v) => Ok(v.max(0.0)),
        None => p.kl_by_quadrature(r),
    }
}

/// `E_p[(log p/r - D(p||r))^2]`: closed form when available, quadrature otherwise.
pub fn llr_second_moment(p: &DensityModel, r: &DensityModel) -> Result<f64> {
    match p.llr_second_moment_closed_form(r) {
        Some(v) => Ok(v.max(0.0)),
        None => {
            let kl = kl_divergence(p, r)?;
            p.llr_second_moment_by_quadrature(r, kl)
        }
    }
}

/// Closest-alternative table: `I^q` and its minimiser `j*_q` for every
/// post-change `q`, the pre-change analogue `(I^0, j*_0)`, and `I*`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosestAlternatives {
    /// Entry `q - 1` holds `(I^q, j*_q)`.
    pub rows: Vec<(f64, usize)>,
    pub pre_change: (f64, usize),
    pub i_star: f64,
    /// Human-readable description of each tie; empty when the unique-minimiser
    /// assumption holds.
    pub ties: Vec<String>,
}

impl ClosestAlternatives {
    pub fn assumption_holds(&self) -> bool {
        self.ties.is_empty()
    }

    /// `(I^q, j*_q)` for `q` in `1..=Q`, or the pre-change pair for `q = 0`.
    pub fn get(&self, q: usize) -> (f64, usize) {
        if q == 0 {
            self.pre_change
        } else {
            self.rows[q - 1]
        }
    }

    pub fn closest(&self, q: usize) -> usize {
        self.get(q).1
    }
}

pub(crate) fn is_tie(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOLERANCE * a.abs().max(b.abs())
}

/// Argmin over `(index, value)` pairs with smallest-index tie-break; returns
/// the winner and every index tied with it.
pub(crate) fn argmin_with_ties(items: impl IntoIterator<Item = (usize, f64)>) -> Option<((usize, f64), Vec<usize>)> {
    let items: Vec<(usize, f64)> = items.into_iter().collect();
    let best = items
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))?;
    let mut close: Vec<(usize, f64)> = items.iter().copied().filter(|&(_, v)| is_tie(v, best.1)).collect();
    close.sort_by_key(|&(i, _)| i);
    let winner = close[0];
    let tied = close[1..].iter().map(|&(i, _)| i).collect();
    Some((winner, tied))
}

/// The ordered hypotheses `P_0, P_1, ..., P_Q` with cached divergence tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisSet {
    densities: Vec<DensityModel>,
    kl: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    closest: ClosestAlternatives,
    mixed_families: bool,
}

impl HypothesisSet {
    /// Build the set and validate it: at least one post-change density,
    /// valid parameters, and finite, strictly positive divergences with
    /// finite LLR second moments between every pair.
    pub fn new(densities: Vec<DensityModel>) -> Result<Self> {
        if densities.len() < 2 {
            return Err(Error::InvalidArgument(
                "a hypothesis set needs a pre-change density and at least one post-change density".into(),
            ));
        }
        for d in &densities {
            d.validated()?;
        }
        let n = densities.len();
        let mut kl = vec![vec![0.0; n]; n];
        let mut second_moment = vec![vec![0.0; n]; n];
        for q in 0..n {
            for j in 0..n {
                if q == j {
                    continue;
                }
                let v = kl_divergence(&densities[q], &densities[j])
                    .map_err(|e| Error::Scenario(format!("I({q},{j}) is not finite: {e}")))?;
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Scenario(format!(
                        "I({q},{j}) = {v}: hypotheses {q} and {j} must be distinguishable"
                    )));
                }
                kl[q][j] = v;
                let s = llr_second_moment(&densities[q], &densities[j])
                    .map_err(|e| Error::Scenario(format!("sigma^2({q},{j}) is not finite: {e}")))?;
                if !s.is_finite() {
                    return Err(Error::Scenario(format!("sigma^2({q},{j}) is not finite")));
                }
                second_moment[q][j] = s;
            }
        }
        let mixed_families = densities.iter().any(|d| !d.same_family(&densities[0]));
        let closest = closest_from_table(&kl);
        Ok(Self {
            densities,
            kl,
            second_moment,
            closest,
            mixed_families,
        })
    }

    /// Number of post-change hypotheses `Q`.
    pub fn q(&self) -> usize {
        self.densities.len() - 1
    }

    pub fn densities(&self) -> &[DensityModel] {
        &self.densities
    }

    pub fn density(&self, index: usize) -> &DensityModel {
        &self.densities[index]
    }

    /// True when the hypotheses do not all share one family.
    pub fn mixed_families(&self) -> bool {
        self.mixed_families
    }

    fn check_pair(&self, q: usize, j: usize) -> Result<()> {
        if q == j {
            return Err(Error::InvalidArgument(format!("hypothesis pair ({q},{j}) must be distinct")));
        }
        let n = self.densities.len();
        if q >= n || j >= n {
            return Err(Error::InvalidArgument(format!(
                "hypothesis pair ({q},{j}) out of range 0..={}",
                n - 1
            )));
        }
        Ok(())
    }

    /// `log P_q(x) - log P_j(x)`.
    pub fn log_likelihood_ratio(&self, q: usize, j: usize, x: f64) -> Result<f64> {
        self.check_pair(q, j)?;
        Ok(self.densities[q].log_density(x)? - self.densities[j].log_density(x)?)
    }

    /// Log-densities of `x` under every hypothesis, index-aligned.
    pub fn log_densities(&self, x: f64) -> Result<Vec<f64>> {
        self.densities.iter().map(|d| d.log_density(x)).collect()
    }

    /// Allocation-free [`Self::log_densities`]; `out` must hold `Q + 1` slots.
    pub fn log_densities_into(&self, x: f64, out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(out.len(), self.densities.len());
        for (slot, d) in out.iter_mut().zip(&self.densities) {
            *slot = d.log_density(x)?;
        }
        Ok(())
    }

    /// `I(q, j)`, the divergence of `P_j` from `P_q`.
    pub fn kl_divergence(&self, q: usize, j: usize) -> Result<f64> {
        self.check_pair(q, j)?;
        Ok(self.kl[q][j])
    }

    /// `sigma^2(q, j) = E_q[(l(q,j) - I(q,j))^2]`.
    pub fn llr_second_moment(&self, q: usize, j: usize) -> Result<f64> {
        self.check_pair(q, j)?;
        Ok(self.second_moment[q][j])
    }

    pub fn closest_alternatives(&self) -> &ClosestAlternatives {
        &self.closest
    }
}

fn closest_from_table(kl: &[Vec<f64>]) -> ClosestAlternatives {
    let n = kl.len();
    let mut ties = Vec::new();
    let mut rows = Vec::with_capacity(n - 1);
    for q in 1..n {
        let ((j, v), tied) = argmin_with_ties((0..n).filter(|&j| j != q).map(|j| (j, kl[q][j])))
            .expect("at least one alternative");
        if !tied.is_empty() {
            ties.push(format!("I^{q}: minimiser {j} tied with {tied:?}"));
        }
        rows.push((v, j));
    }
    let ((j0, i0), tied) =
        argmin_with_ties((1..n).map(|j| (j, kl[j][0]))).expect("at least one post-change hypothesis");
    if !tied.is_empty() {
        ties.push(format!("I^0: minimiser {j0} tied with {tied:?}"));
    }
    let i_star = rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    ClosestAlternatives {
        rows,
        pre_change: (i0, j0),
        i_star,
        ties,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussians(means: &[f64]) -> HypothesisSet {
        HypothesisSet::new(means.iter().map(|&m| DensityModel::gaussian(m, 1.0).unwrap()).collect()).unwrap()
    }

    #[test]
    fn llr_examples() {
        let hs = gaussians(&[0.0, 1.0]);
        assert_eq!(hs.log_likelihood_ratio(1, 0, 0.5).unwrap(), 0.0);
        // (x - mu_j)^2/2 - (x - mu_q)^2/2 at x = 1 with mu_q = 1, mu_j = 0.
        assert!((hs.log_likelihood_ratio(1, 0, 1.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn llr_rejects_equal_indices() {
        let hs = HypothesisSet::new(vec![
            DensityModel::bernoulli(0.1).unwrap(),
            DensityModel::bernoulli(0.3).unwrap(),
        ])
        .unwrap();
        assert!(matches!(hs.log_likelihood_ratio(1, 1, 1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(hs.log_likelihood_ratio(1, 0, 0.5), Err(Error::Domain { .. })));
    }

    #[test]
    fn kl_and_second_moment_examples() {
        let hs = gaussians(&[0.0, 1.0, 3.0]);
        assert!((hs.kl_divergence(1, 0).unwrap() - 0.5).abs() < 1e-15);
        assert!((hs.kl_divergence(2, 0).unwrap() - 4.5).abs() < 1e-15);
        assert!((hs.llr_second_moment(1, 0).unwrap() - 1.0).abs() < 1e-15);
        assert!((hs.llr_second_moment(2, 0).unwrap() - 9.0).abs() < 1e-15);
        let g = DensityModel::gaussian(0.3, 2.0).unwrap();
        assert_eq!(kl_divergence(&g, &g).unwrap(), 0.0);
        assert_eq!(llr_second_moment(&g, &g).unwrap(), 0.0);
    }

    #[test]
    fn quadrature_matches_closed_form_examples() {
        let p = DensityModel::gaussian(1.0, 1.0).unwrap();
        let r = DensityModel::gaussian(0.0, 1.0).unwrap();
        assert!((p.kl_by_quadrature(&r).unwrap() - 0.5).abs() < 1e-9);
        let p = DensityModel::gaussian(3.0, 1.0).unwrap();
        assert!((p.kl_by_quadrature(&r).unwrap() - 4.5).abs() < 1e-9);
        assert!((p.llr_second_moment_by_quadrature(&r, 4.5).unwrap() - 9.0).abs() < 1e-9);
    }

    #[test]
    fn closest_alternatives_examples() {
        let ca = gaussians(&[0.0, 1.0, 3.0]).closest_alternatives().clone();
        assert_eq!(ca.rows, vec![(0.5, 0), (2.0, 1)]);
        assert_eq!(ca.pre_change, (0.5, 1));
        assert_eq!(ca.i_star, 0.5);
        assert!(ca.assumption_holds());

        let ca = gaussians(&[0.0, 1.0]).closest_alternatives().clone();
        assert_eq!(ca.rows, vec![(0.5, 0)]);
        assert_eq!(ca.i_star, 0.5);

        let ca = gaussians(&[0.0, 1.0, -1.0]).closest_alternatives().clone();
        assert!(!ca.assumption_holds());
        assert_eq!(ca.pre_change, (0.5, 1));
    }

    #[test]
    fn cross_family_support_mismatch_is_rejected() {
        let err = HypothesisSet::new(vec![
            DensityModel::exponential(1.0).unwrap(),
            DensityModel::gaussian(1.0, 1.0).unwrap(),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::Scenario(_)));
    }

    #[test]
    fn identical_hypotheses_are_rejected() {
        let g = DensityModel::gaussian(0.0, 1.0).unwrap();
        assert!(HypothesisSet::new(vec![g, g]).is_err());
    }

    #[test]
    fn invalid_parameters() {
        assert!(DensityModel::gaussian(0.0, 0.0).is_err());
        assert!(DensityModel::bernoulli(1.0).is_err());
        assert!(DensityModel::exponential(-1.0).is_err());
    }

    #[test]
    fn mixed_gaussian_pair_uses_quadrature() {
        // Gaussian vs Exponential is infinite, but Exponential vs Gaussian
        // is finite: only the former direction fails.
        let e = DensityModel::exponential(2.0).unwrap();
        let g = DensityModel::gaussian(0.5, 1.0).unwrap();
        let v = kl_divergence(&e, &g).unwrap();
        // E[log e(x)] = ln 2 - 1; E[log g(x)] = -0.5 ln(2 pi) - 0.5 E[(x-0.5)^2]
        // with E[x] = 0.5, Var[x] = 0.25.
        let expected = (2f64.ln() - 1.0) + 0.5 * (2.0 * std::f64::consts::PI).ln() + 0.5 * 0.25;
        assert!((v - expected).abs() < 1e-8);
        assert!(kl_divergence(&g, &e).is_err());
    }
}
