//! JSON experiment configuration.
//!
//! Every key is optional and defaults to the standard experimental setup.
//! Unknown keys are rejected, and errors name the offending path:
//!
//! ```json
//! {
//!   "extent_m": [20.0, 20.0],
//!   "resolution_m": 0.1,
//!   "tree": {"branching": 2, "leaves_per_axis": 32},
//!   "kernel": {"sigma2": 0.25, "length_scale": 2.36},
//!   "prior_mean": 0.5,
//!   "survey_altitude_m": 2.5,
//!   "sensor": {"alpha": 0.004, "beta": 0.1, "footprint_coeff": 2.0, "sample_noise": true},
//!   "merge": {"gamma": 2.0, "f_th": 0.7, "confidence_term": "variance"},
//!   "planner": {"budget_s": 100.0, "speed_mps": 2.0, "altitudes": [2.0, 8.0],
//!               "start": [0.0, 20.0, 8.0], "hover_s": 1.0, "prior_mean": 0.7},
//!   "seeds": {"base": 0, "trials": 30},
//!   "method": "argp",
//!   "timing": {"mode": "wall_clock"}
//! }
//! ```
//!
//! The tree may be given by `depth` instead of `leaves_per_axis`
//! (`leaves_per_axis = branching^depth`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::Method;
use crate::belief::HotspotCriterion;
use crate::bench::{PlanningConfig, Table1Config};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Rect};
use crate::kernel::Hyperparams;
use crate::ndtree::TreeConfig;
use crate::planner::{MissionConfig, TimingMode};
use crate::sensor::SensorConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub extent_m: [f64; 2],
    pub resolution_m: f64,
    pub tree: TreeSection,
    pub kernel: KernelSection,
    pub prior_mean: f64,
    pub survey_altitude_m: f64,
    pub sensor: SensorConfig,
    pub merge: HotspotCriterion,
    pub planner: PlannerSection,
    pub seeds: SeedSection,
    pub method: Method,
    pub timing: TimingMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            extent_m: [20.0, 20.0],
            resolution_m: 0.1,
            tree: TreeSection::default(),
            kernel: KernelSection::default(),
            prior_mean: 0.5,
            survey_altitude_m: 2.5,
            sensor: SensorConfig::default(),
            merge: HotspotCriterion::default(),
            planner: PlannerSection::default(),
            seeds: SeedSection::default(),
            method: Method::Argp,
            timing: TimingMode::WallClock,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeSection {
    /// Children per axis at each split.
    #[serde(alias = "N")]
    pub branching: usize,
    #[serde(alias = "depth_t", skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leaves_per_axis: Option<usize>,
}

impl Default for TreeSection {
    fn default() -> Self {
        TreeSection {
            branching: 2,
            depth: None,
            leaves_per_axis: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub sigma2: f64,
    pub length_scale: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        let h = Hyperparams::default();
        KernelSection {
            sigma2: h.signal_variance,
            length_scale: h.length_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSection {
    pub budget_s: f64,
    pub speed_mps: f64,
    pub altitudes: Vec<f64>,
    pub start: [f64; 3],
    pub hover_s: f64,
    /// Prior mean of planning runs.
    pub prior_mean: f64,
}

impl Default for PlannerSection {
    fn default() -> Self {
        let m = MissionConfig::default();
        PlannerSection {
            budget_s: m.budget_s,
            speed_mps: m.speed_mps,
            altitudes: m.altitudes,
            start: [m.start.x, m.start.y, m.start.z],
            hover_s: m.hover_s,
            prior_mean: 0.7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedSection {
    pub base: u64,
    pub trials: usize,
}

impl Default for SeedSection {
    fn default() -> Self {
        SeedSection {
            base: 0,
            trials: 30,
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates `text`; `path` is only used in messages.
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig =
            serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
                path: e.path().to_string(),
                msg: format!("{} ({})", e.inner(), path.display()),
            })?;
        cfg.validate(path)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    /// Semantic checks that the schema cannot express.
    pub fn validate(&self, path: &Path) -> Result<()> {
        let err = |at: &str, e: Error| Error::Config {
            path: at.to_string(),
            msg: format!("{e} ({})", path.display()),
        };
        self.extent().map_err(|e| err("extent_m", e))?;
        self.tree_config().map_err(|e| err("tree", e))?;
        self.hyper().validate().map_err(|e| err("kernel", e))?;
        self.sensor.validate().map_err(|e| err("sensor", e))?;
        self.mission().validate().map_err(|e| err("planner", e))?;
        if !(self.resolution_m > 0.0) {
            return Err(err(
                "resolution_m",
                Error::InvalidField("must be positive".into()),
            ));
        }
        Ok(())
    }

    pub fn extent(&self) -> Result<Rect> {
        Rect::from_size(self.extent_m[0], self.extent_m[1])
    }

    pub fn hyper(&self) -> Hyperparams {
        Hyperparams {
            signal_variance: self.kernel.sigma2,
            length_scale: self.kernel.length_scale,
        }
    }

    /// Leaves per axis implied by the tree section.
    pub fn leaves_per_axis(&self) -> Result<usize> {
        let t = &self.tree;
        match (t.depth, t.leaves_per_axis) {
            (None, None) => Ok(32),
            (None, Some(n)) => Ok(n),
            (Some(d), n) => {
                let from_depth = u32::try_from(d)
                    .ok()
                    .and_then(|d| t.branching.checked_pow(d))
                    .ok_or_else(|| Error::InvalidTreeConfig(format!("depth {d} is too large")))?;
                match n {
                    Some(n) if n != from_depth => Err(Error::InvalidTreeConfig(format!(
                        "depth {d} gives {from_depth} leaves per axis, not {n}"
                    ))),
                    _ => Ok(from_depth),
                }
            }
        }
    }

    pub fn tree_config(&self) -> Result<TreeConfig> {
        TreeConfig::with_leaves_per_axis(
            self.tree.branching,
            self.leaves_per_axis()?,
            self.extent()?,
        )
    }

    pub fn mission(&self) -> MissionConfig {
        let p = &self.planner;
        MissionConfig {
            budget_s: p.budget_s,
            speed_mps: p.speed_mps,
            start: Pose::from(p.start),
            altitudes: p.altitudes.clone(),
            hover_s: p.hover_s,
            timing: self.timing,
            criterion: self.merge,
            sensor: self.sensor,
            merge: true,
        }
    }

    /// Mapping comparison over `sizes` and `methods` with the seeds section.
    pub fn table1(&self, sizes: Vec<usize>, methods: Vec<Method>) -> Result<Table1Config> {
        Ok(Table1Config {
            sizes,
            methods,
            trials: self.seeds.trials,
            base_seed: self.seeds.base,
            extent: self.extent()?,
            resolution: self.resolution_m,
            branching: self.tree.branching,
            hyper: self.hyper(),
            prior_mean: self.prior_mean,
            sensor: self.sensor,
            criterion: self.merge,
            survey_altitude: self.survey_altitude_m,
            timing: self.timing,
            slow: false,
        })
    }

    pub fn planning(&self, methods: Vec<Method>) -> Result<PlanningConfig> {
        Ok(PlanningConfig {
            mission: self.mission(),
            methods,
            leaves_per_axis: self.leaves_per_axis()?,
            branching: self.tree.branching,
            extent: self.extent()?,
            resolution: self.resolution_m,
            hyper: self.hyper(),
            prior_mean: self.planner.prior_mean,
            trials: self.seeds.trials,
            base_seed: self.seeds.base,
        })
    }
}
