//! The GP map belief: a mean vector and dense covariance over the leaf cells.
//!
//! The belief starts from the integral-kernel prior, absorbs averaged cell
//! measurements with the Kalman filter update, and is compressed by merging
//! families of uninteresting cells into their parent through the averaging
//! map `μ ← Mμ`, `K ← M K Mᵀ`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::kernel::{interval_factor, ConstantMean, Hyperparams, MeanFunction};
use crate::ndtree::{NdTree, NodeId};
use crate::sensor::Measurement;

/// Joint Gaussian belief over the leaves of `tree`. Index `i` of the mean and
/// covariance is `tree.leaves()[i]`.
#[derive(Debug, Clone)]
pub struct MapBelief {
    tree: NdTree,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    hyper: Hyperparams,
    prior_mean: f64,
}

/// How the uncertainty enters the hotspot test `μ + γ·u ≤ f_th`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceTerm {
    /// `u = K_ii`, as the classification rule is usually stated.
    #[default]
    Variance,
    /// `u = sqrt(K_ii)`.
    Stddev,
}

/// Parameters of the uninteresting/hotspot split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HotspotCriterion {
    pub gamma: f64,
    pub f_th: f64,
    pub confidence_term: ConfidenceTerm,
}

impl Default for HotspotCriterion {
    /// `{γ, f_th} = {2, 0.7}`.
    fn default() -> Self {
        HotspotCriterion {
            gamma: 2.0,
            f_th: 0.7,
            confidence_term: ConfidenceTerm::Variance,
        }
    }
}

/// Per-cell split into uninteresting cells (UR) and hotspots (HS).
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub ur_mask: Vec<bool>,
    pub hs_mask: Vec<bool>,
    pub gamma: f64,
    pub f_th: f64,
}

impl Classification {
    pub fn hotspot_count(&self) -> usize {
        self.hs_mask.iter().filter(|&&h| h).count()
    }

    pub fn hotspot_indices(&self) -> Vec<usize> {
        self.hs_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &h)| h.then_some(i))
            .collect()
    }
}

/// What a merge pass did.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MergeReport {
    /// Rounds that merged at least one family.
    pub rounds: usize,
    /// Families merged over all rounds.
    pub families: usize,
}

impl MapBelief {
    /// Prior belief over the current leaves of `tree` with a constant prior
    /// mean.
    pub fn init_prior(tree: NdTree, hyper: Hyperparams, prior_mean: f64) -> Result<Self> {
        Self::init_prior_with(tree, hyper, &ConstantMean(prior_mean), prior_mean)
    }

    /// Prior belief with an arbitrary mean function. `prior_mean` is kept as
    /// the nominal value used for prediction before any data.
    pub fn init_prior_with(
        tree: NdTree,
        hyper: Hyperparams,
        mean_fn: &dyn MeanFunction,
        prior_mean: f64,
    ) -> Result<Self> {
        hyper.validate()?;
        let rects = tree.leaf_rects();
        let mean = rects
            .iter()
            .map(|r| mean_fn.integral_mean(r))
            .collect::<Result<Vec<_>>>()?;
        let cov = prior_covariance(&rects, &hyper)?;
        Ok(MapBelief {
            tree,
            mean: DVector::from_vec(mean),
            cov,
            hyper,
            prior_mean,
        })
    }

    pub fn tree(&self) -> &NdTree {
        &self.tree
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.cov.diagonal().iter().copied().collect()
    }

    /// Stored scalars: the mean plus one triangle of the covariance.
    pub fn memory_scalars(&self) -> usize {
        let n = self.len();
        n + n * (n + 1) / 2
    }

    /// Kalman filter update with averaged cell measurements.
    ///
    /// With `W = H K⁻` (the observed rows of the covariance) and
    /// `S = H K⁻ Hᵀ + R`, the update is `μ⁺ = μ⁻ + Wᵀ S⁻¹ v` and
    /// `K⁺ = K⁻ - Wᵀ S⁻¹ W`, which is the gain form `Γ = K⁻ Hᵀ S⁻¹` with the
    /// product `Γ H K⁻` evaluated in one symmetric step. Only the `m x m`
    /// innovation covariance is factorized.
    pub fn fuse(&mut self, measurements: &[Measurement]) -> Result<()> {
        if measurements.is_empty() {
            return Ok(());
        }
        let idx = check_measurements(measurements, self.len())?;
        let m = idx.len();
        let n = self.len();

        let w = self.cov.select_rows(&idx);
        let mut s = w.select_columns(&idx);
        for (k, meas) in measurements.iter().enumerate() {
            s[(k, k)] += meas.noise_var;
        }
        symmetrize(&mut s);
        let chol = s.cholesky().ok_or(Error::SingularInnovation { size: m })?;

        let innovation = DVector::from_iterator(
            m,
            measurements
                .iter()
                .zip(&idx)
                .map(|(z, &i)| z.z - self.mean[i]),
        );
        let a = chol.solve(&innovation);
        self.mean.gemv_tr(1.0, &w, &a, 1.0);

        let y = chol.solve(&w);
        debug_assert_eq!(y.shape(), (m, n));
        symmetric_downdate(&mut self.cov, &w, &y);
        Ok(())
    }

    /// Classifies every cell: UR iff `μ_i + γ u_i ≤ f_th`.
    pub fn classify(&self, criterion: &HotspotCriterion) -> Classification {
        classify_cells(self.mean.as_slice(), &self.variances(), criterion)
    }

    /// Sum of variances over the hotspot cells of `cls`.
    pub fn hotspot_trace(&self, cls: &Classification) -> f64 {
        hotspot_trace(&self.cov, cls)
    }

    /// Merges, in one linear transformation, every family whose children are
    /// all leaves and all uninteresting under `cls`. Returns the number of
    /// families merged.
    pub fn merge_once(&mut self, cls: &Classification) -> usize {
        assert_eq!(
            cls.ur_mask.len(),
            self.len(),
            "classification does not match the belief"
        );
        let parents = eligible_parents(&self.tree, &cls.ur_mask);
        if parents.is_empty() {
            return 0;
        }
        let p = self.tree.config().children_per_node() as f64;
        let families: HashMap<NodeId, Group> = parents
            .iter()
            .map(|&parent| {
                let g = self
                    .tree
                    .children(parent)
                    .iter()
                    .map(|&c| (self.tree.leaf_index(c).expect("child is a leaf"), 1.0 / p))
                    .collect();
                (parent, g)
            })
            .collect();
        let mut tree = self.tree.clone();
        tree.prune_families(&parents)
            .expect("eligible parents are prunable");
        self.replace_tree(tree, &families);
        parents.len()
    }

    /// Repeats classify-then-merge until no family qualifies.
    ///
    /// Rounds after the first only need the means and variances of the newly
    /// formed parents, which follow from the current belief, so the cascade
    /// is resolved first and the composed averaging map is applied once.
    pub fn merge_pass(&mut self, criterion: &HotspotCriterion) -> MergeReport {
        let mut report = MergeReport::default();
        let mut tree = self.tree.clone();
        let mut groups: HashMap<NodeId, Group> = HashMap::new();
        let mut mean: Vec<f64> = self.mean.iter().copied().collect();
        let mut var = self.variances();
        let p = self.tree.config().children_per_node() as f64;
        loop {
            let cls = classify_cells(&mean, &var, criterion);
            let parents = eligible_parents(&tree, &cls.ur_mask);
            if parents.is_empty() {
                break;
            }
            report.rounds += 1;
            report.families += parents.len();

            let mut moments: HashMap<NodeId, (f64, f64)> = tree
                .leaf_ids()
                .iter()
                .enumerate()
                .map(|(i, &id)| (id, (mean[i], var[i])))
                .collect();
            for &parent in &parents {
                let mut g: Group = Vec::new();
                for &c in tree.children(parent) {
                    let members = groups.remove(&c).unwrap_or_else(|| {
                        vec![(self.tree.leaf_index(c).expect("original leaf"), 1.0)]
                    });
                    g.extend(members.into_iter().map(|(i, w)| (i, w / p)));
                }
                moments.insert(
                    parent,
                    (weighted_mean(&self.mean, &g), group_variance(&self.cov, &g)),
                );
                groups.insert(parent, g);
            }
            tree.prune_families(&parents)
                .expect("eligible parents are prunable");
            (mean, var) = tree.leaf_ids().iter().map(|id| moments[id]).unzip();
        }
        if report.rounds > 0 {
            self.replace_tree(tree, &groups);
        }
        report
    }

    /// Moves the belief onto `tree`, whose leaves are either leaves of the
    /// current tree or keys of `merged`, which lists the current leaf indices
    /// each new cell averages with their weights.
    fn replace_tree(&mut self, tree: NdTree, merged: &HashMap<NodeId, Group>) {
        let groups: Vec<Group> = tree
            .leaf_ids()
            .iter()
            .map(|id| match merged.get(id) {
                Some(g) => g.clone(),
                None => vec![(self.tree.leaf_index(*id).expect("unchanged leaf"), 1.0)],
            })
            .collect();
        let (mean, cov) = apply_averaging(&self.mean, &self.cov, &groups);
        self.tree = tree;
        self.mean = mean;
        self.cov = cov;
    }

    /// Mean of the leaf that contains each point, for arbitrary leaf
    /// geometry. See [`crate::world::FineGrid::leaf_map`] for the fast path.
    pub fn predict_at(&self, x: f64, y: f64) -> Option<f64> {
        (0..self.len())
            .find(|&i| self.tree.leaf_rect(i).contains_point(x, y))
            .map(|i| self.mean[i])
    }

    /// JSON-friendly snapshot.
    pub fn snapshot(&self, full_covariance: bool) -> MapSnapshot {
        let covariance = if full_covariance {
            CovarianceSnapshot::Full {
                rows: self
                    .cov
                    .row_iter()
                    .map(|r| r.iter().copied().collect())
                    .collect(),
            }
        } else {
            CovarianceSnapshot::Diagonal {
                values: self.variances(),
            }
        };
        MapSnapshot {
            leaves: self.tree.leaf_rects(),
            depths: self
                .tree
                .leaf_ids()
                .iter()
                .map(|&id| self.tree.depth(id))
                .collect(),
            mean: self.mean.iter().copied().collect(),
            covariance,
            hyper: self.hyper,
            prior_mean: self.prior_mean,
        }
    }
}

/// Map snapshot as written by `--dump-map`.
///
/// ```json
/// {
///   "leaves": [{"x_min": 0.0, "x_max": 0.625, "y_min": 0.0, "y_max": 0.625}, ...],
///   "depths": [5, ...],
///   "mean": [0.41, ...],
///   "covariance": {"kind": "diagonal", "values": [0.002, ...]},
///   "hyper": {"signal_variance": 0.25, "length_scale": 2.36},
///   "prior_mean": 0.5
/// }
/// ```
///
/// With the full flag, `covariance` is `{"kind": "full", "rows": [[...], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSnapshot {
    pub leaves: Vec<Rect>,
    pub depths: Vec<usize>,
    pub mean: Vec<f64>,
    pub covariance: CovarianceSnapshot,
    pub hyper: Hyperparams,
    pub prior_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CovarianceSnapshot {
    Full { rows: Vec<Vec<f64>> },
    Diagonal { values: Vec<f64> },
}

/// Integral-kernel covariance between every pair of `rects`.
///
/// The kernel is `σ² fx(i, j) fy(i, j)`; the per-axis factors only depend on
/// the cells' x- or y-intervals, of which a grid has few distinct ones, so
/// they are tabulated once.
pub fn prior_covariance(rects: &[Rect], hyper: &Hyperparams) -> Result<DMatrix<f64>> {
    for r in rects {
        r.validate()?;
    }
    let (xid, xs) = distinct_intervals(rects.iter().map(|r| (r.x_min, r.x_max)));
    let (yid, ys) = distinct_intervals(rects.iter().map(|r| (r.y_min, r.y_max)));
    let table = |iv: &[(f64, f64)]| -> DMatrix<f64> {
        let k = iv.len();
        DMatrix::from_fn(k, k, |a, b| {
            interval_factor(iv[a].0, iv[a].1, iv[b].0, iv[b].1, hyper.length_scale)
        })
    };
    let fx = table(&xs);
    let fy = table(&ys);
    let n = rects.len();
    let s2 = hyper.signal_variance;
    Ok(DMatrix::from_fn(n, n, |i, j| {
        s2 * fx[(xid[i], xid[j])] * fy[(yid[i], yid[j])]
    }))
}

fn distinct_intervals(it: impl Iterator<Item = (f64, f64)>) -> (Vec<usize>, Vec<(f64, f64)>) {
    let mut ids = Vec::new();
    let mut uniq = Vec::new();
    let mut seen: HashMap<(u64, u64), usize> = HashMap::new();
    for (a, b) in it {
        let id = *seen.entry((a.to_bits(), b.to_bits())).or_insert_with(|| {
            uniq.push((a, b));
            uniq.len() - 1
        });
        ids.push(id);
    }
    (ids, uniq)
}

pub(crate) fn check_measurements(measurements: &[Measurement], n: usize) -> Result<Vec<usize>> {
    let mut seen = vec![false; n];
    let mut idx = Vec::with_capacity(measurements.len());
    for meas in measurements {
        if meas.cell >= n {
            return Err(Error::UnknownCell {
                cell: meas.cell,
                leaf_count: n,
            });
        }
        if seen[meas.cell] {
            return Err(Error::DuplicateMeasurement(meas.cell));
        }
        if !(meas.noise_var >= 0.0) {
            return Err(Error::InvalidMeasurement {
                cell: meas.cell,
                reason: "noise variance must be non-negative",
            });
        }
        if !meas.z.is_finite() {
            return Err(Error::InvalidMeasurement {
                cell: meas.cell,
                reason: "value is not finite",
            });
        }
        seen[meas.cell] = true;
        idx.push(meas.cell);
    }
    Ok(idx)
}

pub(crate) fn classify_cells(mean: &[f64], var: &[f64], c: &HotspotCriterion) -> Classification {
    let ur_mask: Vec<bool> = mean
        .iter()
        .zip(var)
        .map(|(&mu, &v)| {
            let u = match c.confidence_term {
                ConfidenceTerm::Variance => v,
                ConfidenceTerm::Stddev => v.max(0.0).sqrt(),
            };
            mu + c.gamma * u <= c.f_th
        })
        .collect();
    let hs_mask = ur_mask.iter().map(|&u| !u).collect();
    Classification {
        ur_mask,
        hs_mask,
        gamma: c.gamma,
        f_th: c.f_th,
    }
}

pub(crate) fn hotspot_trace(cov: &DMatrix<f64>, cls: &Classification) -> f64 {
    cls.hs_mask
        .iter()
        .enumerate()
        .filter(|(_, &h)| h)
        .map(|(i, _)| cov[(i, i)])
        .sum()
}

/// `K ← K - Wᵀ Y` where `Wᵀ Y` is known to be symmetric. Only the lower
/// block triangle is multiplied; the upper triangle is mirrored from it.
pub(crate) fn symmetric_downdate(k: &mut DMatrix<f64>, w: &DMatrix<f64>, y: &DMatrix<f64>) {
    const BLOCK: usize = 256;
    let n = k.nrows();
    let wt = w.transpose();
    let mut c0 = 0;
    while c0 < n {
        let nc = BLOCK.min(n - c0);
        let rows = n - c0;
        k.view_mut((c0, c0), (rows, nc))
            .gemm(-1.0, &wt.rows(c0, rows), &y.columns(c0, nc), 1.0);
        c0 += nc;
    }
    mirror_lower(k);
}

fn mirror_lower(k: &mut DMatrix<f64>) {
    // Tiled so that both the source rows and the destination columns stay
    // in cache.
    const TILE: usize = 64;
    let n = k.nrows();
    let data = k.as_mut_slice();
    for jb in (0..n).step_by(TILE) {
        for ib in (0..=jb).step_by(TILE) {
            for j in jb..(jb + TILE).min(n) {
                for i in ib..(ib + TILE).min(j) {
                    data[i + j * n] = data[j + i * n];
                }
            }
        }
    }
}

pub(crate) fn symmetrize(k: &mut DMatrix<f64>) {
    let n = k.nrows();
    for j in 1..n {
        for i in 0..j {
            let v = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
}

/// Old leaf indices and weights averaged into one new cell.
type Group = Vec<(usize, f64)>;

/// Families of `tree` whose children are all leaves flagged in `ur`.
fn eligible_parents(tree: &NdTree, ur: &[bool]) -> Vec<NodeId> {
    tree.prunable_parents()
        .into_iter()
        .filter(|&p| {
            tree.children(p)
                .iter()
                .all(|&c| ur[tree.leaf_index(c).expect("child is a leaf")])
        })
        .collect()
}

fn weighted_mean(mean: &DVector<f64>, g: &[(usize, f64)]) -> f64 {
    g.iter().map(|&(i, w)| w * mean[i]).sum()
}

/// `m K mᵀ` for the sparse row `m` given by `g`.
fn group_variance(cov: &DMatrix<f64>, g: &[(usize, f64)]) -> f64 {
    g.iter()
        .map(|&(j, wj)| {
            let col = cov.column(j);
            wj * g.iter().map(|&(i, wi)| wi * col[i]).sum::<f64>()
        })
        .sum()
}

/// `(Mμ, M K Mᵀ)` for the averaging map whose row `a` is given by
/// `groups[a]`. Only the lower triangle is computed; the result is exactly
/// symmetric.
fn apply_averaging(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    groups: &[Group],
) -> (DVector<f64>, DMatrix<f64>) {
    let n_old = cov.nrows();
    let n_new = groups.len();
    let new_mean = DVector::from_iterator(n_new, groups.iter().map(|g| weighted_mean(mean, g)));
    let mut new_cov = DMatrix::<f64>::zeros(n_new, n_new);
    let mut col = vec![0.0; n_old];
    for (b, gb) in groups.iter().enumerate() {
        // column b of K Mᵀ
        match gb.as_slice() {
            [(j, w)] if *w == 1.0 => col.copy_from_slice(cov.column(*j).as_slice()),
            _ => {
                col.iter_mut().for_each(|c| *c = 0.0);
                for &(j, w) in gb {
                    for (c, k) in col.iter_mut().zip(cov.column(j).iter()) {
                        *c += w * k;
                    }
                }
            }
        }
        let dst = new_cov.column_mut(b);
        for (a, out) in dst.into_iter().enumerate().skip(b) {
            *out = match groups[a].as_slice() {
                [(i, w)] if *w == 1.0 => col[*i],
                ga => ga.iter().map(|&(i, w)| w * col[i]).sum(),
            };
        }
    }
    mirror_lower(&mut new_cov);
    (new_mean, new_cov)
}
