//! Adaptive-resolution Gaussian process mapping of scalar terrain fields.
//!
//! The map is a quadtree (or any `N`-ary tree) whose leaves carry a joint
//! Gaussian belief over their cell-averaged field values. Readings from a
//! downward-facing sensor are fused with a Kalman filter update, and
//! families of cells that are confidently below the hotspot threshold are
//! merged into their parent, shrinking the belief where detail does not
//! matter.
//!
//! ```
//! use argp::{Hyperparams, MapBelief, NdTree, Rect, TreeConfig, HotspotCriterion};
//! use argp::sensor::Measurement;
//!
//! let extent = Rect::from_size(20.0, 20.0)?;
//! let tree = NdTree::build_uniform(TreeConfig::with_leaves_per_axis(2, 8, extent)?)?;
//! let mut map = MapBelief::init_prior(tree, Hyperparams::default(), 0.5)?;
//! map.fuse(&[Measurement { cell: 0, z: 0.1, noise_var: 0.01, coverage: 1.0 }])?;
//! let report = map.merge_pass(&HotspotCriterion::default());
//! assert_eq!(report.families, 0); // nothing is confidently uninteresting yet
//! # Ok::<(), argp::Error>(())
//! ```

// `!(x > 0.0)` is how NaN inputs are rejected along with out-of-range ones.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod belief;
pub mod bench;
pub mod config;
pub mod error;
pub mod geometry;
pub mod io;
pub mod kernel;
pub mod ndtree;
pub mod planner;
pub mod sensor;
pub mod world;

pub use baselines::{Mapper, Method};
pub use belief::{
    Classification, ConfidenceTerm, HotspotCriterion, MapBelief, MapSnapshot, MergeReport,
};
pub use error::{Error, Result};
pub use geometry::{Pose, Rect};
pub use kernel::{integral_kernel, se_kernel, Hyperparams};
pub use ndtree::{NdTree, NodeId, TreeConfig};
pub use sensor::{Measurement, SensorConfig};
pub use world::{generate_grf, FineGrid, GroundTruthField};
