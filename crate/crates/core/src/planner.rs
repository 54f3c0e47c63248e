//! Survey paths and the greedy informative planner.
//!
//! The greedy planner picks, from a fixed lattice of candidate poses, the one
//! that maximizes the expected reduction of hotspot uncertainty per second of
//! flight, flies there, measures, and repeats until the mission budget would
//! be exceeded.

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{Classification, HotspotCriterion, MapBelief};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Rect};
use crate::io::write_csv;
use crate::sensor::SensorConfig;
use crate::world::{FineGrid, GroundTruthField};

/// How mission time is accounted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TimingMode {
    /// Measured computation time.
    WallClock,
    /// Fixed per-step costs, for reproducible runs.
    Synthetic { mapping_s: f64, planning_s: f64 },
}

impl TimingMode {
    /// Synthetic timing with 0.2 s per map update and 0.5 s per planning step.
    pub const SYNTHETIC_DEFAULT: TimingMode = TimingMode::Synthetic {
        mapping_s: 0.2,
        planning_s: 0.5,
    };

    fn planning(&self, measured: f64) -> f64 {
        match *self {
            TimingMode::WallClock => measured,
            TimingMode::Synthetic { planning_s, .. } => planning_s,
        }
    }

    fn mapping(&self, measured: f64) -> f64 {
        match *self {
            TimingMode::WallClock => measured,
            TimingMode::Synthetic { mapping_s, .. } => mapping_s,
        }
    }
}

/// Lawnmower survey at a fixed altitude with non-overlapping, gap-free
/// footprints. The first pose covers the south-west corner; rows alternate
/// direction, moving north.
pub fn lawnmower_plan(extent: &Rect, altitude: f64, sensor: &SensorConfig) -> Result<Vec<Pose>> {
    sensor.validate()?;
    if !(altitude > 0.0 && altitude.is_finite()) {
        return Err(Error::InvalidPlan(format!(
            "altitude {altitude} must be positive"
        )));
    }
    let side = sensor.footprint_side(altitude);
    let count = |len: f64| -> Result<usize> {
        let k = (len / side).round();
        if k < 1.0 || (k * side - len).abs() > 1e-9 * len {
            return Err(Error::InvalidPlan(format!(
                "footprint side {side} m does not tile a {len} m extent"
            )));
        }
        Ok(k as usize)
    };
    let (kx, ky) = (count(extent.width())?, count(extent.height())?);
    let mut out = Vec::with_capacity(kx * ky);
    for j in 0..ky {
        let y = extent.y_min + (j as f64 + 0.5) * side;
        for s in 0..kx {
            let i = if j % 2 == 0 { s } else { kx - 1 - s };
            out.push(Pose::new(
                extent.x_min + (i as f64 + 0.5) * side,
                y,
                altitude,
            ));
        }
    }
    Ok(out)
}

/// Candidate poses of the greedy planner.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub sites: Vec<Pose>,
}

impl Lattice {
    /// For each altitude, the coarsest grid of poses whose footprints cover
    /// the extent: `k = ceil(side / footprint)` poses per axis at the centers
    /// of `k` equal strips. Sites are ordered by altitude, then row-major from
    /// the south-west.
    pub fn new(extent: &Rect, altitudes: &[f64], sensor: &SensorConfig) -> Result<Self> {
        sensor.validate()?;
        if altitudes.is_empty() {
            return Err(Error::InvalidPlan("no lattice altitudes".into()));
        }
        let mut sites = Vec::new();
        for &h in altitudes {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidPlan(format!("altitude {h} must be positive")));
            }
            let fp = sensor.footprint_side(h);
            let kx = ((extent.width() / fp) - 1e-9).ceil().max(1.0) as usize;
            let ky = ((extent.height() / fp) - 1e-9).ceil().max(1.0) as usize;
            for j in 0..ky {
                let y = extent.y_min + (j as f64 + 0.5) * extent.height() / ky as f64;
                for i in 0..kx {
                    let x = extent.x_min + (i as f64 + 0.5) * extent.width() / kx as f64;
                    sites.push(Pose::new(x, y, h));
                }
            }
        }
        Ok(Lattice { sites })
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }
}

/// Reduction of the summed hotspot variance that fusing a reading from
/// `pose` would achieve. The value of the reading does not matter: the
/// covariance update is data-independent.
///
/// With `W_h` the observed rows of the covariance restricted to hotspot
/// columns and `S = H K Hᵀ + R`, this is `tr(W_hᵀ S⁻¹ W_h) = ‖L⁻¹ W_h‖²_F`.
pub fn hotspot_trace_reduction(
    belief: &MapBelief,
    cls: &Classification,
    sensor: &SensorConfig,
    grid: &FineGrid,
    pose: &Pose,
) -> Result<f64> {
    let readings = sensor.plan(belief.tree(), grid, pose)?;
    let hs = cls.hotspot_indices();
    if readings.is_empty() || hs.is_empty() {
        return Ok(0.0);
    }
    let idx: Vec<usize> = readings.iter().map(|r| r.cell).collect();
    let cov = belief.cov();
    let m = idx.len();
    let mut s = DMatrix::from_fn(m, m, |a, b| cov[(idx[a], idx[b])]);
    for (k, r) in readings.iter().enumerate() {
        s[(k, k)] += r.noise_var;
    }
    let chol = s.cholesky().ok_or(Error::SingularInnovation { size: m })?;
    let w_h = DMatrix::from_fn(m, hs.len(), |a, b| cov[(idx[a], hs[b])]);
    let v = chol
        .l()
        .solve_lower_triangular(&w_h)
        .expect("Cholesky factor has a positive diagonal");
    Ok(v.norm_squared())
}

/// Flight time between poses, floored at `min_time_s` so that staying put
/// still costs a hover.
pub fn flight_time(from: &Pose, to: &Pose, speed_mps: f64, min_time_s: f64) -> f64 {
    (from.distance(to) / speed_mps).max(min_time_s)
}

/// Greedy mission parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionConfig {
    pub budget_s: f64,
    pub speed_mps: f64,
    pub start: Pose,
    pub altitudes: Vec<f64>,
    /// Lower bound on a flight leg's duration, used as the reward
    /// denominator and charged to the clock.
    pub hover_s: f64,
    pub timing: TimingMode,
    pub criterion: HotspotCriterion,
    pub sensor: SensorConfig,
    /// Merge uninteresting cells after every update.
    pub merge: bool,
}

impl Default for MissionConfig {
    fn default() -> Self {
        MissionConfig {
            budget_s: 100.0,
            speed_mps: 2.0,
            start: Pose::new(0.0, 20.0, 8.0),
            altitudes: vec![2.0, 8.0],
            hover_s: 1.0,
            timing: TimingMode::SYNTHETIC_DEFAULT,
            criterion: HotspotCriterion::default(),
            sensor: SensorConfig::default(),
            merge: true,
        }
    }
}

impl MissionConfig {
    pub fn validate(&self) -> Result<()> {
        self.sensor.validate()?;
        let pos = |what: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidPlan(format!("{what} = {v} must be positive")))
            }
        };
        pos("budget_s", self.budget_s)?;
        pos("speed_mps", self.speed_mps)?;
        if !(self.hover_s >= 0.0) {
            return Err(Error::InvalidPlan(format!(
                "hover_s = {} must be non-negative",
                self.hover_s
            )));
        }
        if let TimingMode::Synthetic {
            mapping_s,
            planning_s,
        } = self.timing
        {
            if !(mapping_s >= 0.0 && planning_s >= 0.0) {
                return Err(Error::InvalidPlan(
                    "synthetic step costs must be non-negative".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One executed action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionStep {
    pub step: usize,
    /// Lattice site index.
    pub site: usize,
    pub pose: Pose,
    pub reward: f64,
    pub t_flight: f64,
    pub t_planning: f64,
    pub t_mapping: f64,
    /// Mission clock after the step.
    pub elapsed: f64,
    /// Hotspot variance sum before fusing, over the cells classified as
    /// hotspots when the action was chosen.
    pub hs_trace_before: f64,
    /// The same sum right after fusing, before merging.
    pub hs_trace: f64,
    pub leaf_count: usize,
    pub measurements: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionLog {
    pub steps: Vec<MissionStep>,
    /// Hotspot variance sum of the prior belief.
    pub initial_hs_trace: f64,
    pub budget_s: f64,
    /// Mission clock at termination.
    pub elapsed: f64,
}

impl MissionLog {
    /// Writes `step,x,y,z,t_flight,t_planning,t_mapping,hs_trace,leaf_count`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let head = [
            "step",
            "x",
            "y",
            "z",
            "t_flight",
            "t_planning",
            "t_mapping",
            "hs_trace",
            "leaf_count",
        ];
        let rows = self.steps.iter().map(|s| {
            vec![
                s.step.to_string(),
                s.pose.x.to_string(),
                s.pose.y.to_string(),
                s.pose.z.to_string(),
                s.t_flight.to_string(),
                s.t_planning.to_string(),
                s.t_mapping.to_string(),
                s.hs_trace.to_string(),
                s.leaf_count.to_string(),
            ]
        });
        write_csv(path, &head, rows)
    }

    /// Hotspot variance sum as a step function of mission time, sampled at
    /// `times`.
    pub fn hs_trace_at(&self, times: &[f64]) -> Vec<f64> {
        times
            .iter()
            .map(|&t| {
                self.steps
                    .iter()
                    .take_while(|s| s.elapsed <= t)
                    .last()
                    .map_or(self.initial_hs_trace, |s| s.hs_trace)
            })
            .collect()
    }
}

/// Runs a greedy mission on `belief` against `field`.
///
/// Each step classifies the current belief, scores every lattice site by
/// hotspot trace reduction per flight second (ties go to the lowest site
/// index), and stops if the predicted clock after planning, flying and
/// mapping would exceed the budget. The mapping cost is predicted by the
/// previous step's cost, or the synthetic cost.
pub fn greedy_mission<R: Rng + ?Sized>(
    field: &GroundTruthField,
    belief: &mut MapBelief,
    lattice: &Lattice,
    cfg: &MissionConfig,
    rng: &mut R,
) -> Result<MissionLog> {
    cfg.validate()?;
    if lattice.is_empty() {
        return Err(Error::InvalidPlan("empty lattice".into()));
    }
    let grid = field.grid();
    let initial_hs_trace = belief.hotspot_trace(&belief.classify(&cfg.criterion));
    let mut steps = Vec::new();
    let mut elapsed = 0.0;
    let mut pose = cfg.start;
    let mut predicted_mapping = cfg.timing.mapping(0.0);

    loop {
        let t0 = Instant::now();
        let cls = belief.classify(&cfg.criterion);
        let mut best: Option<(usize, f64)> = None;
        for (i, site) in lattice.sites.iter().enumerate() {
            let gain = hotspot_trace_reduction(belief, &cls, &cfg.sensor, grid, site)?;
            let reward = gain / flight_time(&pose, site, cfg.speed_mps, cfg.hover_s);
            if best.is_none_or(|(_, b)| reward > b) {
                best = Some((i, reward));
            }
        }
        let (site, reward) = best.expect("lattice is not empty");
        let target = lattice.sites[site];
        let t_planning = cfg.timing.planning(t0.elapsed().as_secs_f64());
        let t_flight = flight_time(&pose, &target, cfg.speed_mps, cfg.hover_s);
        if elapsed + t_planning + t_flight + predicted_mapping > cfg.budget_s {
            break;
        }

        let readings = cfg.sensor.observe(field, belief.tree(), &target, rng)?;
        let t1 = Instant::now();
        let hs_trace_before = belief.hotspot_trace(&cls);
        belief.fuse(&readings)?;
        let hs_trace = belief.hotspot_trace(&cls);
        if cfg.merge {
            belief.merge_pass(&cfg.criterion);
        }
        let t_mapping = cfg.timing.mapping(t1.elapsed().as_secs_f64());
        predicted_mapping = t_mapping;

        elapsed += t_planning + t_flight + t_mapping;
        steps.push(MissionStep {
            step: steps.len(),
            site,
            pose: target,
            reward,
            t_flight,
            t_planning,
            t_mapping,
            elapsed,
            hs_trace_before,
            hs_trace,
            leaf_count: belief.len(),
            measurements: readings.len(),
        });
        pose = target;
    }
    Ok(MissionLog {
        steps,
        initial_hs_trace,
        budget_s: cfg.budget_s,
        elapsed,
    })
}

/// Runs the lawnmower survey against `belief`, one update per pose.
pub fn survey<R: Rng + ?Sized>(
    field: &GroundTruthField,
    belief: &mut MapBelief,
    path: &[Pose],
    sensor: &SensorConfig,
    merge: Option<&HotspotCriterion>,
    rng: &mut R,
) -> Result<()> {
    for pose in path {
        let readings = sensor.observe(field, belief.tree(), pose, rng)?;
        belief.fuse(&readings)?;
        if let Some(c) = merge {
            belief.merge_pass(c);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Hyperparams;
    use crate::ndtree::{NdTree, TreeConfig};
    use crate::sensor::Measurement;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn extent() -> Rect {
        Rect::from_size(20.0, 20.0).unwrap()
    }

    fn belief(leaves: usize, prior_mean: f64) -> MapBelief {
        let t =
            NdTree::build_uniform(TreeConfig::with_leaves_per_axis(2, leaves, extent()).unwrap())
                .unwrap();
        MapBelief::init_prior(t, Hyperparams::default(), prior_mean).unwrap()
    }

    fn field() -> GroundTruthField {
        let g = FineGrid::new(extent(), 0.1).unwrap();
        GroundTruthField::from_fn(g, |x, y| {
            (-((x - 14.0).powi(2) + (y - 6.0).powi(2)) / 8.0).exp()
        })
        .unwrap()
    }

    #[test]
    fn lawnmower_covers_extent_once() {
        let s = SensorConfig::default();
        let path = lawnmower_plan(&extent(), 2.5, &s).unwrap();
        assert_eq!(path.len(), 16);
        assert_eq!(path[0], Pose::new(2.5, 2.5, 2.5));
        assert_eq!(path[3], Pose::new(17.5, 2.5, 2.5));
        assert_eq!(path[4], Pose::new(17.5, 7.5, 2.5));
        let area: f64 = path
            .iter()
            .map(|p| s.footprint(p, &extent()).unwrap().area())
            .sum();
        assert_eq!(area, 400.0);
        for (a, b) in path.iter().zip(&path[1..]) {
            assert_eq!(a.distance(b), 5.0);
        }
        assert!(lawnmower_plan(&extent(), 3.0, &s).is_err());
    }

    #[test]
    fn lattice_layout() {
        let s = SensorConfig::default();
        let l = Lattice::new(&extent(), &[2.0, 8.0], &s).unwrap();
        assert_eq!(l.len(), 25 + 4);
        assert_eq!(l.sites[0], Pose::new(2.0, 2.0, 2.0));
        assert_eq!(l.sites[24], Pose::new(18.0, 18.0, 2.0));
        assert_eq!(l.sites[25], Pose::new(5.0, 5.0, 8.0));
        assert_eq!(l.sites[28], Pose::new(15.0, 15.0, 8.0));
        assert!(Lattice::new(&extent(), &[], &s).is_err());
    }

    #[test]
    fn reward_matches_full_update() {
        let mut b = belief(8, 0.5);
        let c = HotspotCriterion::default();
        b.fuse(&[Measurement {
            cell: 20,
            z: 0.9,
            noise_var: 0.01,
            coverage: 1.0,
        }])
        .unwrap();
        let cls = b.classify(&c);
        assert!(cls.hotspot_count() > 0);
        let s = SensorConfig::default();
        let f = field();
        for pose in [
            Pose::new(7.0, 3.0, 2.0),
            Pose::new(10.0, 10.0, 8.0),
            Pose::new(19.0, 1.0, 1.0),
        ] {
            let fast = hotspot_trace_reduction(&b, &cls, &s, f.grid(), &pose).unwrap();
            let mut sim = b.clone();
            let ms: Vec<_> = s
                .plan(b.tree(), f.grid(), &pose)
                .unwrap()
                .iter()
                .map(|r| Measurement {
                    cell: r.cell,
                    z: b.mean()[r.cell],
                    noise_var: r.noise_var,
                    coverage: r.coverage,
                })
                .collect();
            sim.fuse(&ms).unwrap();
            let slow = b.hotspot_trace(&cls) - sim.hotspot_trace(&cls);
            assert!((fast - slow).abs() <= 1e-10, "{fast} vs {slow}");
            assert!(fast > 0.0);
        }
    }

    #[test]
    fn tiny_budget_takes_no_measurement() {
        let mut b = belief(8, 0.5);
        let cfg = MissionConfig {
            budget_s: 0.4,
            ..MissionConfig::default()
        };
        let l = Lattice::new(&extent(), &cfg.altitudes, &cfg.sensor).unwrap();
        let log = greedy_mission(
            &field(),
            &mut b,
            &l,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert!(log.steps.is_empty());
        assert_eq!(log.elapsed, 0.0);
        assert_eq!(b.len(), 64);
    }

    #[test]
    fn uniform_zero_rewards_pick_first_site() {
        // prior mean far below the threshold: every cell is uninteresting
        let mut b = belief(8, -5.0);
        let cfg = MissionConfig {
            budget_s: 30.0,
            merge: false,
            ..MissionConfig::default()
        };
        let l = Lattice::new(&extent(), &cfg.altitudes, &cfg.sensor).unwrap();
        let log = greedy_mission(
            &field(),
            &mut b,
            &l,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert!(!log.steps.is_empty());
        assert!(log.steps.iter().all(|s| s.site == 0 && s.reward == 0.0));
    }

    #[test]
    fn mission_respects_budget_and_reduces_hotspot_uncertainty() {
        let cfg = MissionConfig::default();
        let l = Lattice::new(&extent(), &cfg.altitudes, &cfg.sensor).unwrap();
        let mut b = belief(16, 0.5);
        let log = greedy_mission(
            &field(),
            &mut b,
            &l,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(7),
        )
        .unwrap();
        assert!(log.steps.len() > 3);
        let mut clock = 0.0;
        for s in &log.steps {
            clock += s.t_planning + s.t_flight + s.t_mapping;
            assert!((s.elapsed - clock).abs() < 1e-9);
            assert!(s.elapsed <= cfg.budget_s);
            assert!(s.hs_trace <= s.hs_trace_before + 1e-12);
            assert_eq!(s.t_mapping, 0.2);
            assert_eq!(s.t_planning, 0.5);
        }
        assert!(b.len() < 256, "merging compressed the map");

        let again = greedy_mission(
            &field(),
            &mut belief(16, 0.5),
            &l,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(7),
        )
        .unwrap();
        assert_eq!(log, again);
    }

    #[test]
    fn mission_csv_columns() {
        let cfg = MissionConfig {
            budget_s: 20.0,
            ..MissionConfig::default()
        };
        let l = Lattice::new(&extent(), &cfg.altitudes, &cfg.sensor).unwrap();
        let log = greedy_mission(
            &field(),
            &mut belief(8, 0.5),
            &l,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mission.csv");
        log.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,x,y,z,t_flight,t_planning,t_mapping,hs_trace,leaf_count"
        );
        assert_eq!(lines.count(), log.steps.len());
    }

    #[test]
    fn trace_curve_is_a_step_function() {
        let log = MissionLog {
            steps: vec![MissionStep {
                step: 0,
                site: 0,
                pose: Pose::new(1.0, 1.0, 1.0),
                reward: 0.0,
                t_flight: 1.0,
                t_planning: 1.0,
                t_mapping: 1.0,
                elapsed: 3.0,
                hs_trace_before: 5.0,
                hs_trace: 2.0,
                leaf_count: 1,
                measurements: 1,
            }],
            initial_hs_trace: 5.0,
            budget_s: 10.0,
            elapsed: 3.0,
        };
        assert_eq!(
            log.hs_trace_at(&[0.0, 2.9, 3.0, 9.0]),
            vec![5.0, 5.0, 2.0, 2.0]
        );
    }
}
