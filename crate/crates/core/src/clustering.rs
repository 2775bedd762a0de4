//! Groups the transition database into high-reward regions.
//!
//! Transitions are compared with
//! `d(τ1, τ2) = ‖Δx_p‖ + ‖Δx_c‖ + λ·|Δρ|` and clustered with HDBSCAN
//! (mutual-reachability graph, minimum spanning tree, condensed tree and
//! excess-of-mass extraction). Each cluster then gets its average reward and
//! the dispersion-derived gates used by cluster sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::SearchTree;
use crate::world::{euclidean, Transition};

/// Append-only store of every transition harvested from finished RRT runs.
#[derive(Debug, Clone, Default)]
pub struct TransitionDatabase {
    transitions: Vec<Transition>,
}

impl TransitionDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, transition: Transition) {
        self.transitions.push(transition);
    }

    pub fn extend_from_tree(&mut self, tree: &SearchTree) {
        self.transitions.extend(tree.transitions().cloned());
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.transitions[i]
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }
}

impl FromIterator<Transition> for TransitionDatabase {
    fn from_iter<I: IntoIterator<Item = Transition>>(iter: I) -> Self {
        TransitionDatabase {
            transitions: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    /// Weight `λ` of the reward term in the transition metric.
    pub lambda: f64,
    /// `N_min` is drawn uniformly from `n_min_lo..=n_min_hi` on every pass.
    pub n_min_lo: usize,
    pub n_min_hi: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            lambda: 5.0,
            n_min_lo: 2,
            n_min_hi: 5,
        }
    }
}

impl ClusteringConfig {
    pub fn fixed(n_min: usize, lambda: f64) -> Self {
        ClusteringConfig {
            lambda,
            n_min_lo: n_min,
            n_min_hi: n_min,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.n_min_lo < 2 || self.n_min_lo > self.n_min_hi {
            return Err(Error::InvalidConfig(format!(
                "need 2 <= n_min_lo <= n_min_hi, got {}..={}",
                self.n_min_lo, self.n_min_hi
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Indices into the transition database.
    pub members: Vec<usize>,
    pub avg_reward: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
    /// `N_min` used for the pass that produced these clusters.
    pub n_min: usize,
    /// Clusters dropped because their dispersion was degenerate.
    pub dropped: usize,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn avg_rewards(&self) -> Vec<f64> {
        self.clusters.iter().map(|c| c.avg_reward).collect()
    }
}

/// Spatial part of the transition metric.
#[inline]
pub fn spatial_distance(a: &Transition, b: &Transition) -> f64 {
    euclidean(&a.x_p, &b.x_p) + euclidean(&a.x_c, &b.x_c)
}

/// `‖Δx_p‖ + ‖Δx_c‖ + λ·|Δρ|`.
pub fn transition_distance(a: &Transition, b: &Transition, lambda: f64) -> f64 {
    spatial_distance(a, b) + lambda * (a.reward - b.reward).abs()
}

/// Average reward and dispersion gates of one cluster.
///
/// `δ1 = δ2` is the median leave-one-out nearest-neighbor distance among the
/// members (spatial metric only) and `δ3 = 2·δ2`.
pub fn cluster_stats(members: &[usize], db: &TransitionDatabase) -> Result<(f64, f64, f64, f64)> {
    if members.is_empty() {
        return Err(Error::DegenerateCluster("empty cluster".into()));
    }
    let avg_reward = members.iter().map(|&i| db.get(i).reward).sum::<f64>() / members.len() as f64;
    if members.len() < 2 {
        return Err(Error::DegenerateCluster(
            "singleton cluster has no dispersion".into(),
        ));
    }
    let mut nn: Vec<f64> = members
        .iter()
        .map(|&i| {
            members
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| spatial_distance(db.get(i), db.get(j)))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let delta2 = median(&mut nn);
    if !(delta2 > 0.0) {
        return Err(Error::DegenerateCluster("zero dispersion".into()));
    }
    Ok((avg_reward, delta2, delta2, 2.0 * delta2))
}

/// Median; even-sized input averages the two central values.
pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Runs one clustering pass with `N_min` drawn from the configured range.
pub fn cluster<R: Rng + ?Sized>(
    db: &TransitionDatabase,
    config: &ClusteringConfig,
    rng: &mut R,
) -> Result<ClusterSet> {
    config.validate()?;
    let n_min = rng.random_range(config.n_min_lo..=config.n_min_hi);
    cluster_with_min_size(db, n_min, config.lambda)
}

/// Clustering pass with a fixed `N_min`; degenerate clusters are dropped.
pub fn cluster_with_min_size(
    db: &TransitionDatabase,
    n_min: usize,
    lambda: f64,
) -> Result<ClusterSet> {
    let labels = hdbscan_labels(db, n_min, lambda);
    let n_labels = labels.iter().flatten().map(|l| l + 1).max().unwrap_or(0);
    let mut groups = vec![Vec::new(); n_labels];
    for (i, label) in labels.iter().enumerate() {
        if let Some(l) = label {
            groups[*l].push(i);
        }
    }
    let mut set = ClusterSet {
        n_min,
        ..ClusterSet::default()
    };
    for members in groups {
        match cluster_stats(&members, db) {
            Ok((avg_reward, delta1, delta2, delta3)) => set.clusters.push(Cluster {
                members,
                avg_reward,
                delta1,
                delta2,
                delta3,
            }),
            Err(Error::DegenerateCluster(_)) => set.dropped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(set)
}

/// HDBSCAN flat labels under the transition metric (`None` = noise).
///
/// Clusters are numbered by their smallest member index, which makes the
/// labelling independent of the internal tree layout.
pub fn hdbscan_labels(db: &TransitionDatabase, n_min: usize, lambda: f64) -> Vec<Option<usize>> {
    let points = FeatureMatrix::new(db.transitions(), lambda);
    hdbscan::run(&points, n_min)
}

/// Transitions flattened into `[x_p | x_c | λρ]` rows.
struct FeatureMatrix {
    dim: usize,
    stride: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    fn new(transitions: &[Transition], lambda: f64) -> Self {
        let dim = transitions.first().map_or(0, |t| t.x_p.dim());
        let stride = 2 * dim + 1;
        let mut data = Vec::with_capacity(transitions.len() * stride);
        for t in transitions {
            data.extend_from_slice(&t.x_p);
            data.extend_from_slice(&t.x_c);
            data.push(lambda * t.reward);
        }
        FeatureMatrix { dim, stride, data }
    }
}

impl hdbscan::Metric for FeatureMatrix {
    fn len(&self) -> usize {
        self.data.len().checked_div(self.stride).unwrap_or(0)
    }

    #[inline]
    fn distance(&self, i: usize, j: usize) -> f64 {
        let a = &self.data[i * self.stride..(i + 1) * self.stride];
        let b = &self.data[j * self.stride..(j + 1) * self.stride];
        let d = self.dim;
        euclidean(&a[..d], &b[..d])
            + euclidean(&a[d..2 * d], &b[d..2 * d])
            + (a[2 * d] - b[2 * d]).abs()
    }
}

pub mod hdbscan {
    //! Metric-agnostic HDBSCAN with excess-of-mass cluster selection.
    //!
    //! The root cluster is eligible for selection, so a single dense blob
    //! comes back as one cluster rather than as noise. Points are labelled
    //! with the selected cluster whose condensed subtree contains them.

    /// Finite proxy for `1/0` when duplicate points merge at distance zero.
    const MAX_LAMBDA: f64 = 1e12;

    pub trait Metric {
        fn len(&self) -> usize;
        fn distance(&self, i: usize, j: usize) -> f64;

        fn is_empty(&self) -> bool {
            self.len() == 0
        }
    }

    #[derive(Debug, Clone, Copy)]
    struct Merge {
        left: usize,
        right: usize,
        distance: f64,
        size: usize,
    }

    #[derive(Debug, Clone, Copy)]
    struct CondensedEdge {
        parent: usize,
        /// Point index when `< n`, otherwise a cluster id.
        child: usize,
        lambda: f64,
        size: usize,
    }

    pub fn run<M: Metric>(points: &M, min_cluster_size: usize) -> Vec<Option<usize>> {
        let n = points.len();
        let min_cluster_size = min_cluster_size.max(2);
        if n < min_cluster_size || n < 2 {
            return vec![None; n];
        }
        let core = core_distances(points, min_cluster_size);
        let merges = single_linkage(points, &core);
        let condensed = condense(&merges, n, min_cluster_size);
        let selected = select_clusters(&condensed, n);
        label(&condensed, &selected, n)
    }

    /// Distance to the `k`-th nearest neighbor, counting the point itself.
    fn core_distances<M: Metric>(points: &M, k: usize) -> Vec<f64> {
        let n = points.len();
        let kth = (k - 1).min(n - 1);
        let mut row = vec![0.0; n];
        (0..n)
            .map(|i| {
                for (j, r) in row.iter_mut().enumerate() {
                    *r = if i == j { 0.0 } else { points.distance(i, j) };
                }
                let (_, v, _) = row.select_nth_unstable_by(kth, f64::total_cmp);
                *v
            })
            .collect()
    }

    /// Prim's algorithm on the dense mutual-reachability graph, followed by
    /// union-find agglomeration of the sorted MST edges.
    fn single_linkage<M: Metric>(points: &M, core: &[f64]) -> Vec<Merge> {
        let n = points.len();
        let mut in_tree = vec![false; n];
        let mut best = vec![f64::INFINITY; n];
        let mut best_from = vec![0usize; n];
        let mut edges = Vec::with_capacity(n - 1);
        let mut current = 0usize;
        in_tree[0] = true;
        for _ in 1..n {
            let mut next = usize::MAX;
            let mut next_d = f64::INFINITY;
            for j in 0..n {
                if in_tree[j] {
                    continue;
                }
                let mr = points.distance(current, j).max(core[current]).max(core[j]);
                if mr < best[j] {
                    best[j] = mr;
                    best_from[j] = current;
                }
                if best[j] < next_d {
                    next_d = best[j];
                    next = j;
                }
            }
            in_tree[next] = true;
            edges.push((best_from[next], next, next_d));
            current = next;
        }
        edges.sort_by(|a, b| a.2.total_cmp(&b.2));

        let mut uf = UnionFind::new(2 * n - 1);
        let mut merges = Vec::with_capacity(n - 1);
        for (a, b, d) in edges {
            let ra = uf.find(a);
            let rb = uf.find(b);
            let size = uf.size[ra] + uf.size[rb];
            let id = n + merges.len();
            merges.push(Merge {
                left: ra,
                right: rb,
                distance: d,
                size,
            });
            uf.join(ra, rb, id);
        }
        merges
    }

    fn lambda_of(distance: f64) -> f64 {
        if distance > 0.0 {
            (1.0 / distance).min(MAX_LAMBDA)
        } else {
            MAX_LAMBDA
        }
    }

    /// Walks the dendrogram top-down; splits where both sides keep at least
    /// `min_size` points create new clusters, smaller sides fall out as points.
    fn condense(merges: &[Merge], n: usize, min_size: usize) -> Vec<CondensedEdge> {
        let size_of = |node: usize| if node < n { 1 } else { merges[node - n].size };
        let root = n + merges.len() - 1;
        let mut out = Vec::new();
        let mut next_cluster = n + 1;
        // (dendrogram node, condensed cluster it belongs to)
        let mut stack = vec![(root, n)];
        while let Some((node, cluster)) = stack.pop() {
            if node < n {
                continue;
            }
            let m = merges[node - n];
            let lambda = lambda_of(m.distance);
            let (l, r) = (m.left, m.right);
            let (ls, rs) = (size_of(l), size_of(r));
            match (ls >= min_size, rs >= min_size) {
                (true, true) => {
                    for (child, size) in [(l, ls), (r, rs)] {
                        let id = next_cluster;
                        next_cluster += 1;
                        out.push(CondensedEdge {
                            parent: cluster,
                            child: id,
                            lambda,
                            size,
                        });
                        stack.push((child, id));
                    }
                }
                (true, false) => {
                    fall_out(merges, n, r, cluster, lambda, &mut out);
                    stack.push((l, cluster));
                }
                (false, true) => {
                    fall_out(merges, n, l, cluster, lambda, &mut out);
                    stack.push((r, cluster));
                }
                (false, false) => {
                    fall_out(merges, n, l, cluster, lambda, &mut out);
                    fall_out(merges, n, r, cluster, lambda, &mut out);
                }
            }
        }
        out
    }

    fn fall_out(
        merges: &[Merge],
        n: usize,
        node: usize,
        cluster: usize,
        lambda: f64,
        out: &mut Vec<CondensedEdge>,
    ) {
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < n {
                out.push(CondensedEdge {
                    parent: cluster,
                    child: x,
                    lambda,
                    size: 1,
                });
            } else {
                let m = merges[x - n];
                stack.push(m.left);
                stack.push(m.right);
            }
        }
    }

    /// Excess-of-mass selection, root included. Returns a flag per cluster id
    /// (offset by `n`).
    fn select_clusters(condensed: &[CondensedEdge], n: usize) -> Vec<bool> {
        let n_clusters = condensed
            .iter()
            .map(|e| e.parent.max(e.child))
            .max()
            .map_or(1, |m| m.max(n) - n + 1);
        let mut birth = vec![0.0; n_clusters];
        for e in condensed.iter().filter(|e| e.child >= n) {
            birth[e.child - n] = e.lambda;
        }
        let mut stability = vec![0.0; n_clusters];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
        for e in condensed {
            let p = e.parent - n;
            stability[p] += (e.lambda - birth[p]) * e.size as f64;
            if e.child >= n {
                children[p].push(e.child - n);
            }
        }
        let mut selected = vec![false; n_clusters];
        // children always carry larger ids than their parents
        for c in (0..n_clusters).rev() {
            if children[c].is_empty() {
                selected[c] = true;
                continue;
            }
            let subtree: f64 = children[c].iter().map(|&k| stability[k]).sum();
            if subtree > stability[c] {
                stability[c] = subtree;
            } else {
                selected[c] = true;
                let mut stack = children[c].clone();
                while let Some(k) = stack.pop() {
                    selected[k] = false;
                    stack.extend_from_slice(&children[k]);
                }
            }
        }
        selected
    }

    fn label(condensed: &[CondensedEdge], selected: &[bool], n: usize) -> Vec<Option<usize>> {
        let n_clusters = selected.len();
        let mut parent_of = vec![usize::MAX; n_clusters];
        let mut point_parent = vec![usize::MAX; n];
        for e in condensed {
            if e.child >= n {
                parent_of[e.child - n] = e.parent - n;
            } else {
                point_parent[e.child] = e.parent - n;
            }
        }
        // nearest selected ancestor (inclusive) of each condensed cluster
        let mut owner = vec![None; n_clusters];
        for c in 0..n_clusters {
            owner[c] = if selected[c] {
                Some(c)
            } else if parent_of[c] != usize::MAX {
                owner[parent_of[c]]
            } else {
                None
            };
        }
        let raw: Vec<Option<usize>> = point_parent
            .iter()
            .map(|&c| if c == usize::MAX { None } else { owner[c] })
            .collect();
        // relabel by first appearance in point order
        let mut remap = vec![usize::MAX; n_clusters];
        let mut next = 0;
        raw.iter()
            .map(|l| {
                l.map(|c| {
                    if remap[c] == usize::MAX {
                        remap[c] = next;
                        next += 1;
                    }
                    remap[c]
                })
            })
            .collect()
    }

    struct UnionFind {
        parent: Vec<usize>,
        size: Vec<usize>,
    }

    impl UnionFind {
        fn new(n: usize) -> Self {
            UnionFind {
                parent: (0..n).collect(),
                size: vec![1; n],
            }
        }

        fn find(&mut self, mut x: usize) -> usize {
            while self.parent[x] != x {
                self.parent[x] = self.parent[self.parent[x]];
                x = self.parent[x];
            }
            x
        }

        /// Both roots become children of the fresh node `id`.
        fn join(&mut self, a: usize, b: usize, id: usize) {
            self.parent[a] = id;
            self.parent[b] = id;
            self.size[id] = self.size[a] + self.size[b];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Control, State};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(x_p: [f64; 2], x_c: [f64; 2], reward: f64) -> Transition {
        Transition {
            x_p: State::new(x_p),
            u: Control::new([0.0, 0.0]),
            d: 0.1,
            x_c: State::new(x_c),
            x_trg: State::new(x_c),
            reward,
        }
    }

    #[test]
    fn distance_examples() {
        let a = tr([0.1, 0.1], [0.2, 0.2], 0.5);
        assert_eq!(transition_distance(&a, &a, 5.0), 0.0);
        let b = tr([0.2, 0.1], [0.2, 0.2], 0.5);
        assert_relative_eq!(transition_distance(&a, &b, 5.0), 0.1, epsilon = 1e-12);
        let c = tr([0.1, 0.1], [0.2, 0.2], 0.9);
        let d = tr([0.1, 0.1], [0.2, 0.2], 0.1);
        assert_relative_eq!(transition_distance(&c, &d, 5.0), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn stats_examples() {
        let db: TransitionDatabase = [
            tr([0.0, 0.0], [0.0, 0.0], 0.8),
            tr([0.1, 0.0], [0.1, 0.0], 0.9),
            tr([0.2, 0.0], [0.2, 0.0], 1.0),
        ]
        .into_iter()
        .collect();
        // spatial metric sums both endpoints, so use half spacing to get 0.1
        let (avg, d1, d2, d3) = cluster_stats(&[0, 1, 2], &db).unwrap();
        assert_relative_eq!(avg, 0.9, epsilon = 1e-12);
        assert_relative_eq!(d2, 0.2, epsilon = 1e-12);
        assert_eq!(d1, d2);
        assert_relative_eq!(d3, 0.4, epsilon = 1e-12);

        let collinear: TransitionDatabase = [
            tr([0.0, 0.0], [0.5, 0.5], 0.5),
            tr([0.1, 0.0], [0.5, 0.5], 0.5),
            tr([0.2, 0.0], [0.5, 0.5], 0.5),
        ]
        .into_iter()
        .collect();
        let (_, _, d2, d3) = cluster_stats(&[0, 1, 2], &collinear).unwrap();
        assert_relative_eq!(d2, 0.1, epsilon = 1e-12);
        assert_relative_eq!(d3, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn even_median() {
        let mut v = [0.5, 0.1, 0.3, 0.1];
        assert_relative_eq!(median(&mut v), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn stats_reject_degenerate() {
        let db: TransitionDatabase = [
            tr([0.0, 0.0], [0.0, 0.0], 0.8),
            tr([0.0, 0.0], [0.0, 0.0], 0.8),
        ]
        .into_iter()
        .collect();
        assert!(matches!(
            cluster_stats(&[0], &db),
            Err(Error::DegenerateCluster(_))
        ));
        assert!(matches!(
            cluster_stats(&[0, 1], &db),
            Err(Error::DegenerateCluster(_))
        ));
    }

    fn blob(
        center: [f64; 2],
        n: usize,
        radius: f64,
        reward: f64,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Transition> {
        (0..n)
            .map(|_| {
                let mut jitter = || rng.random_range(-radius..radius);
                let p = [center[0] + jitter(), center[1] + jitter()];
                let c = [p[0] + 0.01, p[1]];
                tr(p, c, reward)
            })
            .collect()
    }

    #[test]
    fn two_separated_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut all = blob([0.2, 0.2], 20, 0.01, 0.9, &mut rng);
        all.extend(blob([0.8, 0.8], 20, 0.01, 0.9, &mut rng));
        let db: TransitionDatabase = all.into_iter().collect();
        let set = cluster_with_min_size(&db, 3, 5.0).unwrap();
        assert_eq!(set.len(), 2);
        let mut sizes: Vec<Vec<usize>> = set.clusters.iter().map(|c| c.members.clone()).collect();
        sizes.sort();
        assert_eq!(sizes[0], (0..20).collect::<Vec<_>>());
        assert_eq!(sizes[1], (20..40).collect::<Vec<_>>());
    }

    #[test]
    fn single_tight_blob() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let db: TransitionDatabase = blob([0.5, 0.5], 40, 0.01, 0.8, &mut rng)
            .into_iter()
            .collect();
        let set = cluster_with_min_size(&db, 3, 5.0).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.clusters[0].members.len(), 40);
    }

    #[test]
    fn too_few_points_are_noise() {
        let db: TransitionDatabase = [
            tr([0.1, 0.1], [0.1, 0.1], 0.2),
            tr([0.5, 0.5], [0.5, 0.5], 0.2),
            tr([0.9, 0.9], [0.9, 0.9], 0.2),
        ]
        .into_iter()
        .collect();
        let set = cluster_with_min_size(&db, 5, 5.0).unwrap();
        assert!(set.is_empty());
        assert!(hdbscan_labels(&db, 5, 5.0).iter().all(Option::is_none));
    }

    #[test]
    fn random_n_min_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let db: TransitionDatabase = blob([0.5, 0.5], 30, 0.02, 0.5, &mut rng)
            .into_iter()
            .collect();
        let config = ClusteringConfig::default();
        for _ in 0..20 {
            let set = cluster(&db, &config, &mut rng).unwrap();
            assert!((2..=5).contains(&set.n_min));
            for c in &set.clusters {
                assert!(c.members.len() >= set.n_min);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(ClusteringConfig::fixed(1, 5.0).validate().is_err());
        assert!(ClusteringConfig::fixed(3, 0.0).validate().is_err());
        assert!(ClusteringConfig {
            lambda: 1.0,
            n_min_lo: 5,
            n_min_hi: 3
        }
        .validate()
        .is_err());
    }
}
