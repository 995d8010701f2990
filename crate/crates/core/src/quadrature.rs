//! Globally adaptive Gauss–Kronrod (7/15) integration over finite intervals.
//!
//! The interval with the largest local error estimate is bisected until the
//! summed estimate falls below `max(abs_tol, rel_tol * |value|)` or the
//! subdivision budget runs out.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

// Kronrod abscissae on [-1, 1] (non-negative half, descending). Odd indices
// are the 7-point Gauss nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Tolerances and budget for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct QuadratureOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-8,
            rel_tol: 1e-12,
            max_subdivisions: 10_000,
        }
    }
}

/// Result of a converged integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<Panel> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for (i, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let pair = f(center - dx) + f(center + dx);
        kronrod += w * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    let value = kronrod * half;
    if !value.is_finite() {
        return Err(Error::Numeric {
            reason: format!("non-finite integrand on [{a}, {b}]"),
            estimate: value,
            error: f64::INFINITY,
            intervals: 0,
        });
    }
    Ok(Panel {
        a,
        b,
        value,
        error: ((kronrod - gauss) * half).abs(),
    })
}

/// Integrate `f` over `[breakpoints[0], breakpoints[last]]`.
///
/// The breakpoints seed the initial partition; they must be finite and
/// strictly increasing, with at least two entries.
pub fn integrate<F>(f: F, breakpoints: &[f64], opts: QuadratureOptions) -> Result<Integral>
where
    F: Fn(f64) -> f64,
{
    if breakpoints.len() < 2
        || breakpoints.iter().any(|b| !b.is_finite())
        || breakpoints.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::InvalidArgument(
            "quadrature breakpoints must be finite and strictly increasing".into(),
        ));
    }

    let mut heap = BinaryHeap::new();
    for w in breakpoints.windows(2) {
        heap.push(kronrod(&f, w[0], w[1])?);
    }

    loop {
        let (value, error) = heap
            .iter()
            .fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.error));
        let tolerance = opts.abs_tol.max(opts.rel_tol * value.abs());
        if error <= tolerance {
            return Ok(Integral {
                value,
                error,
                intervals: heap.len(),
            });
        }
        if heap.len() >= opts.max_subdivisions {
            return Err(Error::Numeric {
                reason: "subdivision budget exhausted".into(),
                estimate: value,
                error,
                intervals: heap.len(),
            });
        }
        let worst = heap.pop().expect("partition is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            return Err(Error::Numeric {
                reason: "interval collapsed below floating-point resolution".into(),
                estimate: value,
                error,
                intervals: heap.len() + 1,
            });
        }
        heap.push(kronrod(&f, worst.a, mid)?);
        heap.push(kronrod(&f, mid, worst.b)?);
    }
}
