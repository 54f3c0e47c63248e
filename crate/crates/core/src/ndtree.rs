//! Nd-tree decomposition of the map extent (d = 2).
//!
//! Every internal node splits its rectangle into `N x N` equal children. The
//! leaves are the map cells; their order, returned by [`NdTree::leaves`], is
//! the index space of the belief mean vector and covariance matrix.
//!
//! Leaf order after [`NdTree::build_uniform`] is row-major by cell center:
//! rows go south to north (increasing `y`), cells within a row go west to
//! east (increasing `x`). When a family of leaves is pruned, the parent takes
//! the slot of its lowest-indexed child and the remaining slots compact, so
//! the relative order of every other cell is untouched.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Rect;

/// Shape of a uniform Nd-tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    /// Subdivisions per axis at every level (N).
    pub branching: usize,
    /// Maximal depth t; the root is at depth 0.
    pub max_depth: usize,
    /// The full environment.
    pub extent: Rect,
}

impl TreeConfig {
    pub fn new(branching: usize, max_depth: usize, extent: Rect) -> Result<Self> {
        let cfg = TreeConfig {
            branching,
            max_depth,
            extent,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Picks the depth so that the full tree has `leaves_per_axis` cells per
    /// axis. `leaves_per_axis` must be a power of `branching`.
    pub fn with_leaves_per_axis(
        branching: usize,
        leaves_per_axis: usize,
        extent: Rect,
    ) -> Result<Self> {
        if branching < 2 {
            return Err(Error::InvalidTreeConfig(format!(
                "branching must be at least 2, got {branching}"
            )));
        }
        let mut depth = 0;
        let mut side = 1usize;
        while side < leaves_per_axis {
            side = side
                .checked_mul(branching)
                .ok_or_else(|| Error::InvalidTreeConfig("leaves per axis overflow".to_string()))?;
            depth += 1;
        }
        if side != leaves_per_axis {
            return Err(Error::InvalidTreeConfig(format!(
                "{leaves_per_axis} leaves per axis is not a power of {branching}"
            )));
        }
        TreeConfig::new(branching, depth, extent)
    }

    pub fn validate(&self) -> Result<()> {
        if self.branching < 2 {
            return Err(Error::InvalidTreeConfig(format!(
                "branching must be at least 2, got {}",
                self.branching
            )));
        }
        if self.max_depth < 1 {
            return Err(Error::InvalidTreeConfig(
                "max depth must be at least 1".into(),
            ));
        }
        self.extent.validate()?;
        if self.leaves_per_axis_checked().is_none() {
            return Err(Error::InvalidTreeConfig("tree too large".into()));
        }
        Ok(())
    }

    fn leaves_per_axis_checked(&self) -> Option<usize> {
        let n = self.branching.checked_pow(self.max_depth as u32)?;
        n.checked_mul(n)?;
        Some(n)
    }

    /// `N^t`.
    pub fn leaves_per_axis(&self) -> usize {
        self.branching.pow(self.max_depth as u32)
    }

    /// `(N^d)^t` with d = 2.
    pub fn full_leaf_count(&self) -> usize {
        let s = self.leaves_per_axis();
        s * s
    }

    /// Children per internal node, `P = N^d`.
    pub fn children_per_node(&self) -> usize {
        self.branching * self.branching
    }
}

/// Handle to a tree node. Stable for the life of the tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
struct Node {
    rect: Rect,
    depth: usize,
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    alive: bool,
}

/// Nd-tree whose leaves are the current map cells.
#[derive(Debug, Clone)]
pub struct NdTree {
    cfg: TreeConfig,
    nodes: Vec<Node>,
    leaf_order: Vec<NodeId>,
    // leaf slot per node id, `usize::MAX` for non-leaves
    slot: Vec<usize>,
}

const NO_SLOT: usize = usize::MAX;

impl NdTree {
    /// Full tree down to `cfg.max_depth`.
    pub fn build_uniform(cfg: TreeConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.branching;
        let mut nodes = vec![Node {
            rect: cfg.extent,
            depth: 0,
            parent: None,
            children: Vec::new(),
            alive: true,
        }];
        let mut frontier = vec![NodeId(0)];
        for depth in 1..=cfg.max_depth {
            let mut next = Vec::with_capacity(frontier.len() * n * n);
            for &p in &frontier {
                let r = nodes[p.0].rect;
                let xs = split_points(r.x_min, r.x_max, n);
                let ys = split_points(r.y_min, r.y_max, n);
                let mut kids = Vec::with_capacity(n * n);
                for j in 0..n {
                    for i in 0..n {
                        let id = NodeId(nodes.len());
                        nodes.push(Node {
                            rect: Rect {
                                x_min: xs[i],
                                x_max: xs[i + 1],
                                y_min: ys[j],
                                y_max: ys[j + 1],
                            },
                            depth,
                            parent: Some(p),
                            children: Vec::new(),
                            alive: true,
                        });
                        kids.push(id);
                    }
                }
                nodes[p.0].children = kids.clone();
                next.extend(kids);
            }
            frontier = next;
        }
        let mut leaf_order = frontier;
        leaf_order.sort_by(|a, b| {
            let ra = &nodes[a.0].rect;
            let rb = &nodes[b.0].rect;
            ra.y_min
                .total_cmp(&rb.y_min)
                .then(ra.x_min.total_cmp(&rb.x_min))
        });
        let mut tree = NdTree {
            cfg,
            slot: vec![NO_SLOT; nodes.len()],
            nodes,
            leaf_order,
        };
        tree.reindex();
        Ok(tree)
    }

    pub fn config(&self) -> &TreeConfig {
        &self.cfg
    }

    pub fn extent(&self) -> Rect {
        self.cfg.extent
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_order.len()
    }

    /// Leaves in canonical order with their rectangles.
    pub fn leaves(&self) -> Vec<(NodeId, Rect)> {
        self.leaf_order
            .iter()
            .map(|&id| (id, self.nodes[id.0].rect))
            .collect()
    }

    pub fn leaf_ids(&self) -> &[NodeId] {
        &self.leaf_order
    }

    /// Rectangle of the leaf at position `index` in the canonical order.
    pub fn leaf_rect(&self, index: usize) -> Rect {
        self.nodes[self.leaf_order[index].0].rect
    }

    pub fn leaf_rects(&self) -> Vec<Rect> {
        self.leaf_order
            .iter()
            .map(|id| self.nodes[id.0].rect)
            .collect()
    }

    /// Position of `id` in the leaf order, if it is a leaf.
    pub fn leaf_index(&self, id: NodeId) -> Option<usize> {
        self.slot.get(id.0).copied().filter(|&s| s != NO_SLOT)
    }

    pub fn rect(&self, id: NodeId) -> Rect {
        self.nodes[id.0].rect
    }

    pub fn depth(&self, id: NodeId) -> usize {
        self.nodes[id.0].depth
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id.0].parent
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].children
    }

    pub fn is_alive(&self, id: NodeId) -> bool {
        self.nodes.get(id.0).is_some_and(|n| n.alive)
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.is_alive(id) && self.nodes[id.0].children.is_empty()
    }

    /// Leaves whose rectangle overlaps `fov` with positive area, found by a
    /// depth-first search that skips subtrees not touching `fov`. Returned in
    /// search order.
    pub fn query_overlapping(&self, fov: &Rect) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![self.root()];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id.0];
            if !node.rect.overlaps(fov) {
                continue;
            }
            if node.children.is_empty() {
                out.push(id);
            } else {
                stack.extend(node.children.iter().rev().copied());
            }
        }
        out
    }

    /// Like [`NdTree::query_overlapping`] but returns sorted leaf indices.
    pub fn query_overlapping_indices(&self, fov: &Rect) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .query_overlapping(fov)
            .into_iter()
            .map(|id| self.slot[id.0])
            .collect();
        idx.sort_unstable();
        idx
    }

    /// Internal node whose children are all leaves; such a node can be pruned.
    pub fn is_prunable(&self, parent: NodeId) -> bool {
        self.check_prunable(parent).is_ok()
    }

    fn check_prunable(&self, parent: NodeId) -> Result<()> {
        if !self.is_alive(parent) {
            return Err(Error::UnknownNode(parent.0));
        }
        let node = &self.nodes[parent.0];
        if node.children.is_empty() {
            return Err(Error::PruneNotEligible {
                parent: parent.0,
                reason: "node is already a leaf",
            });
        }
        if node
            .children
            .iter()
            .any(|c| !self.nodes[c.0].children.is_empty())
        {
            return Err(Error::PruneNotEligible {
                parent: parent.0,
                reason: "a child is an internal node",
            });
        }
        Ok(())
    }

    /// Replaces the children of `parent` by `parent` itself.
    pub fn prune_children(&mut self, parent: NodeId) -> Result<()> {
        self.prune_families(&[parent])
    }

    /// Prunes several disjoint families at once. The resulting order is the
    /// same as pruning them one by one.
    pub fn prune_families(&mut self, parents: &[NodeId]) -> Result<()> {
        for &p in parents {
            self.check_prunable(p)?;
        }
        let mut replace = vec![NO_SLOT; self.nodes.len()];
        for &p in parents {
            let first = self.nodes[p.0]
                .children
                .iter()
                .map(|c| self.slot[c.0])
                .min()
                .expect("internal node has children");
            for c in std::mem::take(&mut self.nodes[p.0].children) {
                self.nodes[c.0].alive = false;
                let s = self.slot[c.0];
                replace[c.0] = if s == first { p.0 } else { NO_SLOT - 1 };
            }
        }
        let order = std::mem::take(&mut self.leaf_order);
        self.leaf_order = order
            .into_iter()
            .filter_map(|id| match replace[id.0] {
                NO_SLOT => Some(id),
                r if r == NO_SLOT - 1 => None,
                p => Some(NodeId(p)),
            })
            .collect();
        self.reindex();
        Ok(())
    }

    /// Parents whose children are all current leaves, ordered by the lowest
    /// leaf index among their children.
    pub fn prunable_parents(&self) -> Vec<NodeId> {
        let mut seen = vec![false; self.nodes.len()];
        let mut out = Vec::new();
        for &leaf in &self.leaf_order {
            if let Some(p) = self.nodes[leaf.0].parent {
                if !seen[p.0] {
                    seen[p.0] = true;
                    if self.is_prunable(p) {
                        out.push(p);
                    }
                }
            }
        }
        out
    }

    fn reindex(&mut self) {
        self.slot.iter_mut().for_each(|s| *s = NO_SLOT);
        for (i, id) in self.leaf_order.iter().enumerate() {
            self.slot[id.0] = i;
        }
    }
}

/// `n + 1` boundaries splitting `[a, b]` into `n` equal parts; the end points
/// are exactly `a` and `b`.
fn split_points(a: f64, b: f64, n: usize) -> Vec<f64> {
    let w = b - a;
    (0..=n)
        .map(|k| {
            if k == n {
                b
            } else {
                a + w * (k as f64) / (n as f64)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn extent() -> Rect {
        Rect::from_size(20.0, 20.0).unwrap()
    }

    fn tree(branching: usize, depth: usize) -> NdTree {
        NdTree::build_uniform(TreeConfig::new(branching, depth, extent()).unwrap()).unwrap()
    }

    fn assert_partition(t: &NdTree) {
        let rects = t.leaf_rects();
        let area: f64 = rects.iter().map(Rect::area).sum();
        assert!((area - t.extent().area()).abs() < 1e-9);
        for i in 0..rects.len() {
            for j in i + 1..rects.len() {
                assert!(!rects[i].overlaps(&rects[j]), "{i} and {j} overlap");
            }
        }
    }

    #[test]
    fn leaf_counts() {
        assert_eq!(tree(2, 1).leaf_count(), 4);
        assert_eq!(tree(4, 1).leaf_count(), 16);
        assert_eq!(tree(2, 3).leaf_count(), 64);
        let t = tree(2, 3);
        assert!((t.leaf_rect(0).width() - 2.5).abs() < 1e-12);
        let cfg = TreeConfig::with_leaves_per_axis(2, 32, extent()).unwrap();
        assert_eq!(cfg.max_depth, 5);
        assert_eq!(
            TreeConfig::with_leaves_per_axis(4, 16, extent())
                .unwrap()
                .max_depth,
            2
        );
        assert!(TreeConfig::with_leaves_per_axis(2, 24, extent()).is_err());
    }

    #[test]
    fn invalid_configs() {
        assert!(TreeConfig::new(1, 3, extent()).is_err());
        assert!(TreeConfig::new(2, 0, extent()).is_err());
        let flat = Rect {
            x_min: 0.0,
            x_max: 0.0,
            y_min: 0.0,
            y_max: 1.0,
        };
        assert!(TreeConfig::new(2, 2, flat).is_err());
    }

    #[test]
    fn order_is_row_major_by_center() {
        let t = tree(2, 2);
        let centers: Vec<_> = t.leaf_rects().iter().map(Rect::center).collect();
        for w in centers.windows(2) {
            let (a, b) = (w[0], w[1]);
            assert!(a.1 < b.1 || (a.1 == b.1 && a.0 < b.0));
        }
        assert_eq!(centers[0], (2.5, 2.5));
        assert_eq!(centers[1], (7.5, 2.5));
        assert_eq!(centers[4], (2.5, 7.5));
        assert_partition(&t);
    }

    #[test]
    fn fov_queries() {
        let t = tree(2, 5);
        assert_eq!(t.query_overlapping(&extent()).len(), 1024);
        let inside = Rect::new(0.1, 0.2, 0.1, 0.2).unwrap();
        assert_eq!(t.query_overlapping(&inside).len(), 1);
        let corner = Rect::new(0.0, 5.0, 15.0, 20.0).unwrap();
        let hits = t.query_overlapping_indices(&corner);
        let brute: Vec<usize> = (0..t.leaf_count())
            .filter(|&i| t.leaf_rect(i).intersection(&corner).is_some())
            .collect();
        assert_eq!(hits.len(), 64);
        assert_eq!(hits, brute);
        let outside = Rect::new(30.0, 31.0, 0.0, 1.0).unwrap();
        assert!(t.query_overlapping(&outside).is_empty());
    }

    #[test]
    fn prune_root_of_single_level() {
        let mut t = tree(2, 1);
        t.prune_children(t.root()).unwrap();
        assert_eq!(t.leaf_count(), 1);
        assert_eq!(t.leaf_rect(0), extent());
        assert_eq!(t.leaf_index(t.root()), Some(0));
    }

    #[test]
    fn prune_reduces_by_p_minus_one_and_keeps_order() {
        let mut t = tree(2, 3);
        let before: Vec<NodeId> = t.leaf_ids().to_vec();
        let parents = t.prunable_parents();
        assert_eq!(parents.len(), 16);
        let p = parents[5];
        let kids: Vec<NodeId> = t.children(p).to_vec();
        let first = kids
            .iter()
            .map(|&k| t.leaf_index(k).unwrap())
            .min()
            .unwrap();
        t.prune_children(p).unwrap();
        assert_eq!(t.leaf_count(), 64 - 3);
        assert_eq!(t.leaf_index(p), Some(first));
        let survivors: Vec<NodeId> = before.into_iter().filter(|id| !kids.contains(id)).collect();
        let after: Vec<NodeId> = t.leaf_ids().iter().copied().filter(|&id| id != p).collect();
        assert_eq!(survivors, after);
        assert_partition(&t);
    }

    #[test]
    fn batch_prune_matches_sequential() {
        let mut a = tree(2, 3);
        let mut b = a.clone();
        let parents = a.prunable_parents();
        let pick = [parents[1], parents[6], parents[15]];
        a.prune_families(&pick).unwrap();
        for p in pick {
            b.prune_children(p).unwrap();
        }
        assert_eq!(a.leaf_ids(), b.leaf_ids());
        assert_eq!(a.leaf_count(), 64 - 3 * 3);
    }

    #[test]
    fn prune_with_internal_child_fails() {
        let mut t = tree(2, 2);
        let err = t.prune_children(t.root()).unwrap_err();
        assert!(matches!(err, Error::PruneNotEligible { .. }));
        let leaf = t.leaf_ids()[0];
        assert!(t.prune_children(leaf).is_err());
    }

    #[test]
    fn empty_prune_leaves_order_unchanged() {
        let mut t = tree(2, 2);
        let before = t.leaf_ids().to_vec();
        t.prune_families(&[]).unwrap();
        assert_eq!(before, t.leaf_ids());
    }

    #[test]
    fn cascading_prunes_keep_partition() {
        let mut t = tree(2, 3);
        while let Some(&p) = t.prunable_parents().first() {
            t.prune_children(p).unwrap();
            assert_partition(&t);
        }
        assert_eq!(t.leaf_count(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn query_matches_brute_force(
            prunes in proptest::collection::vec(0usize..64, 0..20),
            fovs in proptest::collection::vec((-5.0..22.0f64, -5.0..22.0f64, 0.01..12.0f64, 0.01..12.0f64), 16)
        ) {
            let mut t = tree(2, 4);
            for k in prunes {
                let ps = t.prunable_parents();
                if ps.is_empty() { break; }
                t.prune_children(ps[k % ps.len()]).unwrap();
            }
            for (x, y, w, h) in fovs {
                let fov = Rect::new(x, x + w, y, y + h).unwrap();
                let got = t.query_overlapping_indices(&fov);
                let brute: Vec<usize> = (0..t.leaf_count())
                    .filter(|&i| t.leaf_rect(i).overlaps(&fov))
                    .collect();
                prop_assert_eq!(got, brute);
            }
        }

        #[test]
        fn prune_sequences_are_deterministic(prunes in proptest::collection::vec(0usize..64, 0..30)) {
            let run = || {
                let mut t = tree(2, 3);
                for &k in &prunes {
                    let ps = t.prunable_parents();
                    if ps.is_empty() { break; }
                    t.prune_children(ps[k % ps.len()]).unwrap();
                }
                t
            };
            let a = run();
            let b = run();
            prop_assert_eq!(a.leaf_ids(), b.leaf_ids());
            let area: f64 = a.leaf_rects().iter().map(Rect::area).sum();
            prop_assert!((area - 400.0).abs() < 1e-9);
        }
    }
}
