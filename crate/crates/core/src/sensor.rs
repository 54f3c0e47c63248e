//! Simulated downward-facing sensor.
//!
//! The footprint is a square whose side grows linearly with altitude. Each
//! map cell touched by the footprint yields one measurement: the average of
//! the ground truth over the covered part of the cell, with variance
//! `α h + β (1 - A_cover / A_cell)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Rect};
use crate::ndtree::NdTree;
use crate::world::{FineGrid, GroundTruthField};

/// Sensor noise and footprint parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    /// Altitude noise slope α, squared field units per meter.
    pub alpha: f64,
    /// Weight β of the partial-coverage variance, squared field units.
    pub beta: f64,
    /// Footprint side divided by altitude.
    pub footprint_coeff: f64,
    /// Corrupt readings with sampled Gaussian noise.
    pub sample_noise: bool,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            footprint_coeff: 2.0,
            sample_noise: true,
        }
    }
}

/// Default altitude noise slope, chosen so that
/// readings from the 2.5 m survey altitude have variance 0.01.
pub const DEFAULT_ALPHA: f64 = 0.004;
/// Default partial-coverage weight.
pub const DEFAULT_BETA: f64 = 0.1;

/// One averaged reading of a map cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    /// Leaf index in the map the reading was taken against.
    pub cell: usize,
    pub z: f64,
    /// `σ_a² + σ_c²`.
    pub noise_var: f64,
    /// Covered fraction of the cell, in `(0, 1]`.
    pub coverage: f64,
}

/// A cell the sensor would read from a pose, without the value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannedReading {
    pub cell: usize,
    /// Covered part of the cell.
    pub region: Rect,
    pub noise_var: f64,
    pub coverage: f64,
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidSensorConfig(format!("{what} = {v}")));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha", self.alpha);
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta", self.beta);
        }
        if !(self.footprint_coeff > 0.0 && self.footprint_coeff.is_finite()) {
            return bad("footprint_coeff", self.footprint_coeff);
        }
        Ok(())
    }

    pub fn footprint_side(&self, altitude: f64) -> f64 {
        self.footprint_coeff * altitude
    }

    /// `σ_a² = α h`.
    pub fn altitude_variance(&self, altitude: f64) -> f64 {
        self.alpha * altitude
    }

    /// Footprint square centered below `pose`, clipped to `extent`.
    pub fn footprint(&self, pose: &Pose, extent: &Rect) -> Result<Rect> {
        if !(pose.z > 0.0 && pose.z.is_finite() && pose.x.is_finite() && pose.y.is_finite()) {
            return Err(Error::InvalidPose(format!(
                "altitude must be positive and finite, got ({}, {}, {})",
                pose.x, pose.y, pose.z
            )));
        }
        let raw = Rect::centered(pose.x, pose.y, self.footprint_side(pose.z))?;
        raw.intersection(extent)
            .ok_or(Error::FootprintOutsideExtent {
                x: pose.x,
                y: pose.y,
                z: pose.z,
            })
    }

    /// Cells that a reading from `pose` would cover, sorted by leaf index.
    /// Intersections containing no sample of `grid` are dropped.
    pub fn plan(&self, tree: &NdTree, grid: &FineGrid, pose: &Pose) -> Result<Vec<PlannedReading>> {
        let fov = self.footprint(pose, &tree.extent())?;
        let sigma_a = self.altitude_variance(pose.z);
        let mut out = Vec::new();
        for cell in tree.query_overlapping_indices(&fov) {
            let leaf = tree.leaf_rect(cell);
            let Some(region) = leaf.intersection(&fov) else {
                continue;
            };
            if grid.sample_count(&region) == 0 {
                continue;
            }
            let coverage = if fov.contains_rect(&leaf) {
                1.0
            } else {
                region.area() / leaf.area()
            };
            out.push(PlannedReading {
                cell,
                region,
                noise_var: sigma_a + self.beta * (1.0 - coverage),
                coverage,
            });
        }
        Ok(out)
    }

    /// Reads the ground truth from `pose`. With `sample_noise` off this is
    /// deterministic and `rng` is not touched.
    pub fn observe<R: Rng + ?Sized>(
        &self,
        field: &GroundTruthField,
        tree: &NdTree,
        pose: &Pose,
        rng: &mut R,
    ) -> Result<Vec<Measurement>> {
        self.plan(tree, field.grid(), pose)?
            .into_iter()
            .map(|p| {
                let mut z = field.average_over(&p.region)?;
                if self.sample_noise && p.noise_var > 0.0 {
                    let e: f64 = StandardNormal.sample(rng);
                    z += p.noise_var.sqrt() * e;
                }
                Ok(Measurement {
                    cell: p.cell,
                    z,
                    noise_var: p.noise_var,
                    coverage: p.coverage,
                })
            })
            .collect()
    }
}
