//! Comparison mappers.
//!
//! * [`Method::Fr`]: the Kalman filter belief on the fixed full-resolution
//!   tree, never merged.
//! * [`Method::Gpr`]: batch GP regression that keeps every measurement and
//!   recomputes the posterior from the prior after each epoch.
//! * [`Method::Independent`]: per-cell scalar filters that ignore
//!   correlations.
//! * [`Method::Argp`]: the adaptive map, fused and then merged.
//!
//! All of them expose the same [`Mapper`] interface so the benchmarks can
//! treat them uniformly.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::belief::{check_measurements, prior_covariance, HotspotCriterion, MapBelief};
use crate::error::{Error, Result};
use crate::kernel::{integral_kernel, integral_mean, Hyperparams};
use crate::ndtree::NdTree;
use crate::sensor::Measurement;

/// Mapping method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Argp,
    Fr,
    Gpr,
    #[serde(alias = "indep")]
    Independent,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Argp, Method::Fr, Method::Gpr, Method::Independent];

    pub fn name(self) -> &'static str {
        match self {
            Method::Argp => "argp",
            Method::Fr => "fr",
            Method::Gpr => "gpr",
            Method::Independent => "independent",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "argp" => Ok(Method::Argp),
            "fr" => Ok(Method::Fr),
            "gpr" => Ok(Method::Gpr),
            "independent" | "indep" => Ok(Method::Independent),
            other => Err(format!(
                "unknown method `{other}` (expected argp, fr, gpr or independent)"
            )),
        }
    }
}

/// A map that absorbs batches of cell measurements.
pub trait Mapper: Send {
    fn method(&self) -> Method;
    /// Current cell layout. Measurement cell indices refer to its leaves.
    fn tree(&self) -> &NdTree;
    /// Absorbs one epoch of measurements taken against [`Mapper::tree`].
    fn update(&mut self, measurements: &[Measurement]) -> Result<()>;
    /// Posterior mean per leaf.
    fn mean(&self) -> Vec<f64>;
    /// Posterior variance per leaf.
    fn variances(&self) -> Vec<f64>;
    /// Scalars the map must keep to continue mapping.
    fn memory_scalars(&self) -> usize;
    /// The joint belief, for the methods that keep one.
    fn belief(&self) -> Option<&MapBelief> {
        None
    }
}

/// Builds a mapper on `tree`. `criterion` is only used by [`Method::Argp`].
pub fn build_mapper(
    method: Method,
    tree: NdTree,
    hyper: Hyperparams,
    prior_mean: f64,
    criterion: HotspotCriterion,
) -> Result<Box<dyn Mapper>> {
    Ok(match method {
        Method::Argp => Box::new(ArgpMapper {
            belief: MapBelief::init_prior(tree, hyper, prior_mean)?,
            criterion,
        }),
        Method::Fr => Box::new(FrMapper {
            belief: MapBelief::init_prior(tree, hyper, prior_mean)?,
        }),
        Method::Gpr => Box::new(GprMapper::new(tree, hyper, prior_mean)?),
        Method::Independent => Box::new(IndependentMapper::new(tree, hyper, prior_mean)?),
    })
}

/// Fuse, then merge uninteresting families until none qualifies.
#[derive(Debug, Clone)]
pub struct ArgpMapper {
    pub belief: MapBelief,
    pub criterion: HotspotCriterion,
}

impl Mapper for ArgpMapper {
    fn method(&self) -> Method {
        Method::Argp
    }
    fn tree(&self) -> &NdTree {
        self.belief.tree()
    }
    fn update(&mut self, measurements: &[Measurement]) -> Result<()> {
        self.belief.fuse(measurements)?;
        self.belief.merge_pass(&self.criterion);
        Ok(())
    }
    fn mean(&self) -> Vec<f64> {
        self.belief.mean().iter().copied().collect()
    }
    fn variances(&self) -> Vec<f64> {
        self.belief.variances()
    }
    fn memory_scalars(&self) -> usize {
        self.belief.memory_scalars()
    }
    fn belief(&self) -> Option<&MapBelief> {
        Some(&self.belief)
    }
}

/// Full-resolution recursive filter.
#[derive(Debug, Clone)]
pub struct FrMapper {
    pub belief: MapBelief,
}

impl Mapper for FrMapper {
    fn method(&self) -> Method {
        Method::Fr
    }
    fn tree(&self) -> &NdTree {
        self.belief.tree()
    }
    fn update(&mut self, measurements: &[Measurement]) -> Result<()> {
        self.belief.fuse(measurements)
    }
    fn mean(&self) -> Vec<f64> {
        self.belief.mean().iter().copied().collect()
    }
    fn variances(&self) -> Vec<f64> {
        self.belief.variances()
    }
    fn memory_scalars(&self) -> usize {
        self.belief.memory_scalars()
    }
    fn belief(&self) -> Option<&MapBelief> {
        Some(&self.belief)
    }
}

/// Batch GP regression over all measurements seen so far.
#[derive(Debug, Clone)]
pub struct GprMapper {
    tree: NdTree,
    hyper: Hyperparams,
    prior_mean: f64,
    history: Vec<Measurement>,
    posterior: GprPosterior,
}

impl GprMapper {
    pub fn new(tree: NdTree, hyper: Hyperparams, prior_mean: f64) -> Result<Self> {
        let posterior = gpr_posterior(&[], &tree, &hyper, prior_mean)?;
        Ok(GprMapper {
            tree,
            hyper,
            prior_mean,
            history: Vec::new(),
            posterior,
        })
    }

    pub fn history(&self) -> &[Measurement] {
        &self.history
    }

    pub fn posterior(&self) -> &GprPosterior {
        &self.posterior
    }
}

impl Mapper for GprMapper {
    fn method(&self) -> Method {
        Method::Gpr
    }
    fn tree(&self) -> &NdTree {
        &self.tree
    }
    fn update(&mut self, measurements: &[Measurement]) -> Result<()> {
        check_measurements(measurements, self.tree.leaf_count())?;
        let mut all = self.history.clone();
        all.extend_from_slice(measurements);
        self.posterior = gpr_posterior(&all, &self.tree, &self.hyper, self.prior_mean)?;
        self.history = all;
        Ok(())
    }
    fn mean(&self) -> Vec<f64> {
        self.posterior.mean.iter().copied().collect()
    }
    fn variances(&self) -> Vec<f64> {
        self.posterior.cov.diagonal().iter().copied().collect()
    }
    /// Cell index, value and noise variance of every stored measurement.
    fn memory_scalars(&self) -> usize {
        3 * self.history.len()
    }
}

/// Batch posterior over the leaves of a tree.
#[derive(Debug, Clone)]
pub struct GprPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Diagonal jitter that had to be added to factorize the data
    /// covariance; zero when none was needed.
    pub jitter: f64,
}

/// Standard GP regression posterior at the leaf cells given `measurements`,
/// which may revisit a cell any number of times.
///
/// With `L Lᵀ = K_zz + R`: `α = L⁻ᵀ L⁻¹ (z - μ_z)`, `μ = μ₀ + K_z*ᵀ α`,
/// `V = L⁻¹ K_z*`, `Σ = K₀ - Vᵀ V`. If `K_zz + R` is numerically singular, a
/// diagonal jitter starting at `1e-9 σ²` is added and grown tenfold until the
/// factorization succeeds.
pub fn gpr_posterior(
    measurements: &[Measurement],
    tree: &NdTree,
    hyper: &Hyperparams,
    prior_mean: f64,
) -> Result<GprPosterior> {
    hyper.validate()?;
    let rects = tree.leaf_rects();
    let n = rects.len();
    let mean0 = DVector::from_vec(
        rects
            .iter()
            .map(|r| integral_mean(r, prior_mean))
            .collect::<Result<Vec<_>>>()?,
    );
    let k0 = prior_covariance(&rects, hyper)?;
    if measurements.is_empty() {
        return Ok(GprPosterior {
            mean: mean0,
            cov: k0,
            jitter: 0.0,
        });
    }
    for m in measurements {
        if m.cell >= n {
            return Err(Error::UnknownCell {
                cell: m.cell,
                leaf_count: n,
            });
        }
        if !(m.noise_var >= 0.0) || !m.z.is_finite() {
            return Err(Error::InvalidMeasurement {
                cell: m.cell,
                reason: "noise variance must be non-negative and the value finite",
            });
        }
    }
    let idx: Vec<usize> = measurements.iter().map(|m| m.cell).collect();
    let kzs = k0.select_rows(idx.iter());
    let kzz = kzs.select_columns(idx.iter());
    let m = idx.len();

    let mut jitter = 0.0;
    let chol = loop {
        let mut a = kzz.clone();
        for (k, meas) in measurements.iter().enumerate() {
            a[(k, k)] += meas.noise_var + jitter;
        }
        if let Some(c) = a.cholesky() {
            break c;
        }
        jitter = if jitter == 0.0 {
            1e-9 * hyper.signal_variance
        } else {
            jitter * 10.0
        };
        if jitter > hyper.signal_variance {
            return Err(Error::SingularInnovation { size: m });
        }
    };
    let resid =
        DVector::from_iterator(m, measurements.iter().map(|meas| meas.z - mean0[meas.cell]));
    let alpha = chol.solve(&resid);
    let mean = &mean0 + kzs.transpose() * alpha;
    let v = chol
        .l()
        .solve_lower_triangular(&kzs)
        .expect("Cholesky factor has a positive diagonal");
    let cov = &k0 - v.transpose() * &v;
    Ok(GprPosterior { mean, cov, jitter })
}

/// Independent per-cell filters seeded with the prior variances.
#[derive(Debug, Clone)]
pub struct IndependentMapper {
    tree: NdTree,
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl IndependentMapper {
    pub fn new(tree: NdTree, hyper: Hyperparams, prior_mean: f64) -> Result<Self> {
        hyper.validate()?;
        let rects = tree.leaf_rects();
        let var = rects
            .iter()
            .map(|r| integral_kernel(r, r, &hyper))
            .collect::<Result<Vec<_>>>()?;
        let mean = rects
            .iter()
            .map(|r| integral_mean(r, prior_mean))
            .collect::<Result<Vec<_>>>()?;
        Ok(IndependentMapper { tree, mean, var })
    }
}

/// Scalar Kalman update of each measured cell in isolation.
pub fn indep_fuse(mean: &mut [f64], var: &mut [f64], measurements: &[Measurement]) -> Result<()> {
    check_measurements(measurements, mean.len())?;
    for m in measurements {
        let (mu, v) = (mean[m.cell], var[m.cell]);
        let s = v + m.noise_var;
        if !(s > 0.0) {
            return Err(Error::SingularInnovation { size: 1 });
        }
        mean[m.cell] = mu + v / s * (m.z - mu);
        var[m.cell] = v * m.noise_var / s;
    }
    Ok(())
}

impl Mapper for IndependentMapper {
    fn method(&self) -> Method {
        Method::Independent
    }
    fn tree(&self) -> &NdTree {
        &self.tree
    }
    fn update(&mut self, measurements: &[Measurement]) -> Result<()> {
        indep_fuse(&mut self.mean, &mut self.var, measurements)
    }
    fn mean(&self) -> Vec<f64> {
        self.mean.clone()
    }
    fn variances(&self) -> Vec<f64> {
        self.var.clone()
    }
    fn memory_scalars(&self) -> usize {
        2 * self.mean.len()
    }
}

/// `n + n(n+1)/2`: the mean plus the upper triangle of the covariance.
pub fn dense_memory_scalars(n: usize) -> usize {
    n + n * (n + 1) / 2
}
