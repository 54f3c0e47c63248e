//! Squared-exponential kernel and its integral over rectangles.
//!
//! A map cell stores the *average* of the latent field over its rectangle.
//! The covariance between two such averages is the point kernel averaged
//! over both rectangles:
//!
//! ```text
//! k_I(Ri, Rj) = 1 / (Ai Aj) ∫_{Ri} ∫_{Rj} k(x, x') dx' dx
//! ```
//!
//! The squared-exponential kernel factorizes over the two axes, so the
//! four-dimensional integral is the product of two one-dimensional double
//! integrals, each of which has a closed form in terms of the error function.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Rect;

const SQRT_HALF_PI: f64 = 1.253_314_137_315_500_3;

/// Squared-exponential hyperparameters `{σ², l}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Signal variance σ², in squared field units.
    pub signal_variance: f64,
    /// Length scale l, in meters.
    pub length_scale: f64,
}

impl Hyperparams {
    pub fn new(signal_variance: f64, length_scale: f64) -> Result<Self> {
        let h = Hyperparams {
            signal_variance,
            length_scale,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(Error::InvalidHyperparams(format!(
                "signal variance must be positive, got {}",
                self.signal_variance
            )));
        }
        if !(self.length_scale > 0.0 && self.length_scale.is_finite()) {
            return Err(Error::InvalidHyperparams(format!(
                "length scale must be positive, got {}",
                self.length_scale
            )));
        }
        Ok(())
    }
}

impl Default for Hyperparams {
    /// `{0.25, 2.36}`, the values fitted to the 20 m synthetic fields.
    fn default() -> Self {
        Hyperparams {
            signal_variance: 0.25,
            length_scale: 2.36,
        }
    }
}

/// Point kernel `σ² exp(-|p - q|² / 2l²)`.
pub fn se_kernel(p: (f64, f64), q: (f64, f64), h: &Hyperparams) -> f64 {
    let dx = p.0 - q.0;
    let dy = p.1 - q.1;
    let l2 = h.length_scale * h.length_scale;
    h.signal_variance * (-(dx * dx + dy * dy) / (2.0 * l2)).exp()
}

/// Covariance between the averages of the field over `ri` and `rj`.
pub fn integral_kernel(ri: &Rect, rj: &Rect, h: &Hyperparams) -> Result<f64> {
    ri.validate()?;
    rj.validate()?;
    let l = h.length_scale;
    let fx = interval_factor(ri.x_min, ri.x_max, rj.x_min, rj.x_max, l);
    let fy = interval_factor(ri.y_min, ri.y_max, rj.y_min, rj.y_max, l);
    Ok(h.signal_variance * fx * fy)
}

/// Mean over `[a0, a1] x [b0, b1]` of `exp(-(x - y)² / 2l²)`.
///
/// The double integral is a second difference `G(a1-b0) - G(a0-b0) -
/// G(a1-b1) + G(a0-b1)` of the twice-integrated kernel `G`. Two algebraically
/// equal forms of `G` are used:
///
/// * near or overlapping intervals: `G(u) - l²`, written with `expm1` so the
///   result stays accurate when `l` is much larger than the intervals;
/// * intervals separated by more than `l`: the linear part of `G` cancels
///   exactly because all four arguments share a sign, leaving an `erfc` tail
///   that does not suffer cancellation in the far field.
///
/// Terms are summed as `(t1 + t4) - (t2 + t3)`, which is invariant under
/// swapping the two intervals, so the kernel is symmetric bit for bit.
///
/// The second difference of a quantity of size `l²` loses about
/// `ε l² / (w_a w_b)` to cancellation, so intervals much shorter than `l`
/// use a 5-point Gauss–Legendre rule instead, which is exact to roughly
/// `(w / l)^10` there.
pub(crate) fn interval_factor(a0: f64, a1: f64, b0: f64, b1: f64, l: f64) -> f64 {
    if (a1 - a0).max(b1 - b0) < SHORT_INTERVAL * l {
        return short_interval_factor(a0, a1, b0, b1, l);
    }
    let gap = if b0 >= a1 {
        b0 - a1
    } else if a0 >= b1 {
        a0 - b1
    } else {
        -1.0
    };
    let s = std::f64::consts::SQRT_2 * l;
    let l2 = l * l;
    let g = |u: f64| -> f64 {
        if gap > l {
            let u = u.abs();
            -l * SQRT_HALF_PI * u * libm::erfc(u / s) + l2 * (-(u * u) / (2.0 * l2)).exp()
        } else {
            l * SQRT_HALF_PI * u * libm::erf(u / s) + l2 * libm::expm1(-(u * u) / (2.0 * l2))
        }
    };
    let t1 = g(a1 - b0);
    let t4 = g(a0 - b1);
    let t2 = g(a0 - b0);
    let t3 = g(a1 - b1);
    let raw = (t1 + t4) - (t2 + t3);
    (raw / ((a1 - a0) * (b1 - b0))).max(0.0)
}

/// Intervals shorter than this many length scales skip the closed form.
const SHORT_INTERVAL: f64 = 0.02;

const GL5: [(f64, f64); 5] = [
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.0, 0.568_888_888_888_888_9),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

fn short_interval_factor(a0: f64, a1: f64, b0: f64, b1: f64, l: f64) -> f64 {
    // a fixed operand order keeps the result symmetric bit for bit
    let ((a0, a1), (b0, b1)) = if (a0, a1) <= (b0, b1) {
        ((a0, a1), (b0, b1))
    } else {
        ((b0, b1), (a0, a1))
    };
    let (ma, ha) = (0.5 * (a0 + a1), 0.5 * (a1 - a0));
    let (mb, hb) = (0.5 * (b0 + b1), 0.5 * (b1 - b0));
    let inv = 1.0 / (2.0 * l * l);
    let mut acc = 0.0;
    for &(x, wx) in &GL5 {
        for &(y, wy) in &GL5 {
            let d = (ma + ha * x) - (mb + hb * y);
            acc += wx * wy * (-(d * d) * inv).exp();
        }
    }
    // the weights sum to 2 on each axis
    0.25 * acc
}

/// A prior mean function over the plane.
///
/// Cells need the mean averaged over their rectangle. The default method
/// integrates [`MeanFunction::value`] with Gauss–Legendre quadrature; constant
/// means override it with the exact answer.
pub trait MeanFunction {
    fn value(&self, x: f64, y: f64) -> f64;

    fn integral_mean(&self, r: &Rect) -> Result<f64> {
        r.validate()?;
        let rule = quadrature::GaussLegendre::new(16);
        let mut acc = 0.0;
        for (xi, wx) in rule.mapped(r.x_min, r.x_max) {
            for (yi, wy) in rule.mapped(r.y_min, r.y_max) {
                acc += wx * wy * self.value(xi, yi);
            }
        }
        Ok(acc / r.area())
    }
}

/// Constant prior mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantMean(pub f64);

impl MeanFunction for ConstantMean {
    fn value(&self, _x: f64, _y: f64) -> f64 {
        self.0
    }

    fn integral_mean(&self, r: &Rect) -> Result<f64> {
        r.validate()?;
        Ok(self.0)
    }
}

/// Average of the constant prior mean over `r`.
pub fn integral_mean(r: &Rect, prior_mean: f64) -> Result<f64> {
    ConstantMean(prior_mean).integral_mean(r)
}

/// Tensor-product Gauss–Legendre evaluation of the integral kernel.
///
/// This is the reference the closed form is checked against; it shares
/// nothing with it except the point kernel. `n_points` nodes are used per
/// axis of each rectangle. Because the point kernel is a product of per-axis
/// Gaussians, the tensor-product rule over the four coordinates equals the
/// product of the two per-axis rules, which is how it is evaluated.
pub fn quadrature_oracle(ri: &Rect, rj: &Rect, h: &Hyperparams, n_points: usize) -> f64 {
    let rule = quadrature::GaussLegendre::new(n_points.max(2));
    let l2 = h.length_scale * h.length_scale;
    let axis = |a0: f64, a1: f64, b0: f64, b1: f64| -> f64 {
        let xs = rule.mapped(a0, a1);
        let ys = rule.mapped(b0, b1);
        let mut acc = 0.0;
        for &(x, wx) in &xs {
            for &(y, wy) in &ys {
                let d = x - y;
                acc += wx * wy * (-(d * d) / (2.0 * l2)).exp();
            }
        }
        acc / ((a1 - a0) * (b1 - b0))
    };
    h.signal_variance
        * axis(ri.x_min, ri.x_max, rj.x_min, rj.x_max)
        * axis(ri.y_min, ri.y_max, rj.y_min, rj.y_max)
}

pub mod quadrature {
    //! Gauss–Legendre nodes and weights.

    /// Nodes and weights on `[-1, 1]`.
    #[derive(Debug, Clone)]
    pub struct GaussLegendre {
        pub nodes: Vec<f64>,
        pub weights: Vec<f64>,
    }

    impl GaussLegendre {
        /// `n`-point rule, nodes found by Newton iteration on `P_n`.
        pub fn new(n: usize) -> Self {
            assert!(n >= 1, "quadrature needs at least one node");
            let mut nodes = vec![0.0; n];
            let mut weights = vec![0.0; n];
            let nf = n as f64;
            for i in 0..n.div_ceil(2) {
                let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
                let mut dp = 0.0;
                for _ in 0..100 {
                    let (p, d) = legendre(n, x);
                    dp = d;
                    let dx = p / d;
                    x -= dx;
                    if dx.abs() < 1e-16 {
                        break;
                    }
                }
                let (_, d) = legendre(n, x);
                if d != 0.0 {
                    dp = d;
                }
                let w = 2.0 / ((1.0 - x * x) * dp * dp);
                nodes[i] = -x;
                nodes[n - 1 - i] = x;
                weights[i] = w;
                weights[n - 1 - i] = w;
            }
            GaussLegendre { nodes, weights }
        }

        /// Nodes and weights mapped onto `[a, b]`.
        pub fn mapped(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            self.nodes
                .iter()
                .zip(&self.weights)
                .map(|(&x, &w)| (mid + half * x, half * w))
                .collect()
        }
    }

    /// `(P_n(x), P_n'(x))` by the three-term recurrence.
    fn legendre(n: usize, x: f64) -> (f64, f64) {
        let mut p0 = 1.0;
        let mut p1 = x;
        if n == 0 {
            return (1.0, 0.0);
        }
        for k in 2..=n {
            let kf = k as f64;
            let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
            p0 = p1;
            p1 = p2;
        }
        let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        (p1, d)
    }
}
