//! Metrics and the two experiment harnesses: the mapping comparison over
//! seeded random fields and the greedy planning runs.
//!
//! Trials are independent and run on the rayon pool; results are sorted by
//! `(size, method, seed)` so the output does not depend on scheduling.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{build_mapper, dense_memory_scalars, Method};
use crate::belief::{HotspotCriterion, MapBelief};
use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::io::{write_csv, write_json};
use crate::kernel::Hyperparams;
use crate::ndtree::{NdTree, TreeConfig};
use crate::planner::{
    greedy_mission, lawnmower_plan, Lattice, MissionConfig, MissionLog, TimingMode,
};
use crate::sensor::SensorConfig;
use crate::world::{generate_grf, GroundTruthField, HOTSPOT_THRESHOLD};

/// Root mean square error of a per-leaf prediction against every fine-grid
/// sample of `field`, or only the samples above the hotspot threshold. Each
/// sample is predicted by the leaf that contains its center.
pub fn rmse(
    prediction: &[f64],
    tree: &NdTree,
    field: &GroundTruthField,
    hotspots_only: bool,
) -> Result<f64> {
    if prediction.len() != tree.leaf_count() {
        return Err(Error::InvalidField(format!(
            "{} predictions for {} leaves",
            prediction.len(),
            tree.leaf_count()
        )));
    }
    if tree.extent() != field.extent() {
        return Err(Error::InvalidField("map and field extents differ".into()));
    }
    let owner = field.grid().leaf_map(tree);
    let (mut sum, mut count) = (0.0, 0usize);
    for (k, &truth) in field.values().iter().enumerate() {
        if hotspots_only && truth <= HOTSPOT_THRESHOLD {
            continue;
        }
        let e = prediction[owner[k]] - truth;
        sum += e * e;
        count += 1;
    }
    if count == 0 {
        return Err(if hotspots_only {
            Error::NoHotspots
        } else {
            Error::EmptyRegion
        });
    }
    Ok((sum / count as f64).sqrt())
}

/// Mapping comparison settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Table1Config {
    /// Leaves per axis of the full-resolution map.
    pub sizes: Vec<usize>,
    pub methods: Vec<Method>,
    pub trials: usize,
    /// Trial `i` uses seed `base_seed + i`.
    pub base_seed: u64,
    pub extent: Rect,
    pub resolution: f64,
    pub branching: usize,
    pub hyper: Hyperparams,
    pub prior_mean: f64,
    pub sensor: SensorConfig,
    pub criterion: HotspotCriterion,
    pub survey_altitude: f64,
    pub timing: TimingMode,
    /// Run batch regression on maps with 64 or more leaves per axis.
    pub slow: bool,
}

impl Default for Table1Config {
    fn default() -> Self {
        Table1Config {
            sizes: vec![16, 32, 64],
            methods: Method::ALL.to_vec(),
            trials: 30,
            base_seed: 0,
            extent: Rect::from_size(20.0, 20.0).expect("valid extent"),
            resolution: 0.1,
            branching: 2,
            hyper: Hyperparams::default(),
            prior_mean: 0.5,
            sensor: SensorConfig::default(),
            criterion: HotspotCriterion::default(),
            survey_altitude: 2.5,
            timing: TimingMode::WallClock,
            slow: false,
        }
    }
}

/// Batch regression is skipped at this many leaves per axis unless `slow`.
pub const SLOW_GPR_SIZE: usize = 64;

/// Outcome of one mapping trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub map_size: usize,
    pub method: Method,
    pub seed: u64,
    pub rmse: f64,
    pub rmse_hotspots: f64,
    /// Summed duration of the map updates.
    pub mapping_time_ms: f64,
    pub memory_scalars: usize,
    /// `memory_scalars` over the full-resolution filter's count.
    pub memory_ratio: f64,
    pub leaf_count_final: usize,
    pub measurements: usize,
}

/// Field for trial `seed`, shared by every method and map size.
pub fn trial_field(cfg: &Table1Config, seed: u64) -> Result<GroundTruthField> {
    generate_grf(seed, cfg.extent, cfg.resolution, &cfg.hyper)
}

/// Surveys `field` with the lawnmower pattern using `method` on a
/// `size x size` map. Sensor noise is drawn from a stream derived from
/// `seed`, independent of the field and identical across methods.
pub fn run_trial(
    cfg: &Table1Config,
    field: &GroundTruthField,
    size: usize,
    method: Method,
    seed: u64,
) -> Result<TrialResult> {
    let tree = NdTree::build_uniform(TreeConfig::with_leaves_per_axis(
        cfg.branching,
        size,
        cfg.extent,
    )?)?;
    let path = lawnmower_plan(&cfg.extent, cfg.survey_altitude, &cfg.sensor)?;
    let mut mapper = build_mapper(method, tree, cfg.hyper, cfg.prior_mean, cfg.criterion)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut elapsed_ms = 0.0;
    let mut measurements = 0;
    for pose in &path {
        let readings = cfg.sensor.observe(field, mapper.tree(), pose, &mut rng)?;
        let t0 = Instant::now();
        mapper.update(&readings)?;
        elapsed_ms += match cfg.timing {
            TimingMode::WallClock => t0.elapsed().as_secs_f64() * 1e3,
            TimingMode::Synthetic { mapping_s, .. } => mapping_s * 1e3,
        };
        measurements += readings.len();
    }
    let mean = mapper.mean();
    let memory_scalars = mapper.memory_scalars();
    Ok(TrialResult {
        map_size: size,
        method,
        seed,
        rmse: rmse(&mean, mapper.tree(), field, false)?,
        rmse_hotspots: rmse(&mean, mapper.tree(), field, true)?,
        mapping_time_ms: elapsed_ms,
        memory_scalars,
        memory_ratio: memory_scalars as f64 / dense_memory_scalars(size * size) as f64,
        leaf_count_final: mapper.tree().leaf_count(),
        measurements,
    })
}

/// Whether `(size, method)` is run under `cfg`.
pub fn is_scheduled(cfg: &Table1Config, size: usize, method: Method) -> bool {
    cfg.slow || method != Method::Gpr || size < SLOW_GPR_SIZE
}

/// Every scheduled `(size, method, seed)` trial, sorted in that order.
pub fn run_table1(cfg: &Table1Config) -> Result<Vec<TrialResult>> {
    let seeds: Vec<u64> = (0..cfg.trials as u64).map(|i| cfg.base_seed + i).collect();
    let per_seed: Vec<Vec<TrialResult>> = seeds
        .par_iter()
        .map(|&seed| {
            let field = trial_field(cfg, seed)?;
            let mut out = Vec::new();
            for &size in &cfg.sizes {
                for &method in &cfg.methods {
                    if is_scheduled(cfg, size, method) {
                        out.push(run_trial(cfg, &field, size, method, seed)?);
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut all: Vec<TrialResult> = per_seed.into_iter().flatten().collect();
    all.sort_by_key(|t| (t.map_size, t.method, t.seed));
    Ok(all)
}

const TRIAL_HEADER: [&str; 10] = [
    "size",
    "method",
    "seed",
    "rmse",
    "rmse_hotspots",
    "mapping_time_ms",
    "memory_scalars",
    "memory_ratio",
    "leaf_count",
    "measurements",
];

/// Writes one row per trial with columns
/// `size,method,seed,rmse,rmse_hotspots,mapping_time_ms,memory_scalars,memory_ratio,leaf_count,measurements`.
pub fn write_trials_csv(results: &[TrialResult], path: &Path) -> Result<()> {
    let rows = results.iter().map(|r| {
        vec![
            r.map_size.to_string(),
            r.method.to_string(),
            r.seed.to_string(),
            r.rmse.to_string(),
            r.rmse_hotspots.to_string(),
            r.mapping_time_ms.to_string(),
            r.memory_scalars.to_string(),
            r.memory_ratio.to_string(),
            r.leaf_count_final.to_string(),
            r.measurements.to_string(),
        ]
    });
    write_csv(path, &TRIAL_HEADER, rows)
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Stat {
        let xs: Vec<f64> = xs.into_iter().collect();
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Stat {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Stat { mean, std }
    }
}

/// Aggregate over the trials of one `(size, method)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub map_size: usize,
    pub method: Method,
    pub trials: usize,
    pub rmse: Stat,
    pub rmse_hotspots: Stat,
    pub mapping_time_ms: Stat,
    pub memory_ratio: Stat,
    pub leaf_count: Stat,
}

pub fn summarize(results: &[TrialResult]) -> Vec<SummaryRow> {
    let mut keys: Vec<(usize, Method)> = results.iter().map(|r| (r.map_size, r.method)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(size, method)| {
            let rs: Vec<&TrialResult> = results
                .iter()
                .filter(|r| r.map_size == size && r.method == method)
                .collect();
            SummaryRow {
                map_size: size,
                method,
                trials: rs.len(),
                rmse: Stat::of(rs.iter().map(|r| r.rmse)),
                rmse_hotspots: Stat::of(rs.iter().map(|r| r.rmse_hotspots)),
                mapping_time_ms: Stat::of(rs.iter().map(|r| r.mapping_time_ms)),
                memory_ratio: Stat::of(rs.iter().map(|r| r.memory_ratio)),
                leaf_count: Stat::of(rs.iter().map(|r| r.leaf_count_final as f64)),
            }
        })
        .collect()
}

pub fn write_summary_json(summary: &[SummaryRow], path: &Path) -> Result<()> {
    write_json(path, &summary)
}

/// Greedy planning comparison settings.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanningConfig {
    pub mission: MissionConfig,
    /// Map backends; only [`Method::Argp`] and [`Method::Fr`] are supported.
    pub methods: Vec<Method>,
    pub leaves_per_axis: usize,
    pub branching: usize,
    pub extent: Rect,
    pub resolution: f64,
    pub hyper: Hyperparams,
    /// Optimistic prior that draws the planner to unexplored cells.
    pub prior_mean: f64,
    pub trials: usize,
    pub base_seed: u64,
}

impl Default for PlanningConfig {
    fn default() -> Self {
        PlanningConfig {
            mission: MissionConfig::default(),
            methods: vec![Method::Argp, Method::Fr],
            leaves_per_axis: 32,
            branching: 2,
            extent: Rect::from_size(20.0, 20.0).expect("valid extent"),
            resolution: 0.1,
            hyper: Hyperparams::default(),
            prior_mean: 0.7,
            trials: 10,
            base_seed: 0,
        }
    }
}

/// One mission of the planning comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningRun {
    pub method: Method,
    pub seed: u64,
    pub log: MissionLog,
}

/// Runs one mission per `(method, seed)` on identical fields and noise
/// streams, sorted by method then seed.
pub fn run_planning_experiment(cfg: &PlanningConfig) -> Result<Vec<PlanningRun>> {
    for &m in &cfg.methods {
        if !matches!(m, Method::Argp | Method::Fr) {
            return Err(Error::InvalidPlan(format!(
                "planning supports argp and fr maps, not {m}"
            )));
        }
    }
    let lattice = Lattice::new(&cfg.extent, &cfg.mission.altitudes, &cfg.mission.sensor)?;
    let jobs: Vec<(Method, u64)> = cfg
        .methods
        .iter()
        .flat_map(|&m| (0..cfg.trials as u64).map(move |i| (m, cfg.base_seed + i)))
        .collect();
    let mut runs = jobs
        .par_iter()
        .map(|&(method, seed)| {
            let field = generate_grf(seed, cfg.extent, cfg.resolution, &cfg.hyper)?;
            let tree = NdTree::build_uniform(TreeConfig::with_leaves_per_axis(
                cfg.branching,
                cfg.leaves_per_axis,
                cfg.extent,
            )?)?;
            let mut belief = MapBelief::init_prior(tree, cfg.hyper, cfg.prior_mean)?;
            let mission = MissionConfig {
                merge: method == Method::Argp,
                ..cfg.mission.clone()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(2);
            let log = greedy_mission(&field, &mut belief, &lattice, &mission, &mut rng)?;
            Ok(PlanningRun { method, seed, log })
        })
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by_key(|r| (r.method, r.seed));
    Ok(runs)
}

/// Writes `method,seed,step,elapsed,hs_trace,leaf_count`, one row per
/// executed step, preceded by a step `-1` row holding the prior trace.
pub fn write_planning_csv(runs: &[PlanningRun], path: &Path) -> Result<()> {
    let header = [
        "method",
        "seed",
        "step",
        "elapsed",
        "hs_trace",
        "leaf_count",
    ];
    let rows = runs.iter().flat_map(|r| {
        let start = vec![
            r.method.to_string(),
            r.seed.to_string(),
            "-1".to_string(),
            "0".to_string(),
            r.log.initial_hs_trace.to_string(),
            String::new(),
        ];
        std::iter::once(start).chain(r.log.steps.iter().map(move |s| {
            vec![
                r.method.to_string(),
                r.seed.to_string(),
                s.step.to_string(),
                s.elapsed.to_string(),
                s.hs_trace.to_string(),
                s.leaf_count.to_string(),
            ]
        }))
    });
    write_csv(path, &header, rows)
}

/// Hotspot trace across trials at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub method: Method,
    pub time_s: f64,
    pub hs_trace: Stat,
}

/// Mean and standard deviation of the hotspot trace of each method, sampled
/// every `dt` seconds from 0 to the budget.
pub fn planning_summary(runs: &[PlanningRun], budget_s: f64, dt: f64) -> Vec<TracePoint> {
    let steps = (budget_s / dt).floor() as usize;
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let mut methods: Vec<Method> = runs.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    let mut out = Vec::new();
    for m in methods {
        let curves: Vec<Vec<f64>> = runs
            .iter()
            .filter(|r| r.method == m)
            .map(|r| r.log.hs_trace_at(&times))
            .collect();
        for (k, &t) in times.iter().enumerate() {
            out.push(TracePoint {
                method: m,
                time_s: t,
                hs_trace: Stat::of(curves.iter().map(|c| c[k])),
            });
        }
    }
    out
}
