//! Propagation-event data model: adjacency construction and normalization,
//! parent-child pair extraction, node-feature masking, and deadline slicing.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("event {event_id}: edge ({parent}, {child}) out of range for {nodes} nodes")]
    EdgeOutOfRange {
        event_id: String,
        parent: usize,
        child: usize,
        nodes: usize,
    },
    #[error("event {event_id}: edges contain a cycle")]
    Cycle { event_id: String },
    #[error("event {event_id}: node {node} feature length {got}, expected {expected}")]
    FeatureLength {
        event_id: String,
        node: usize,
        expected: usize,
        got: usize,
    },
    #[error("event {event_id}: node {node} has a non-finite feature value")]
    NonFiniteFeature { event_id: String, node: usize },
    #[error("event {event_id}: node {node} has negative time offset {t}")]
    NegativeTime {
        event_id: String,
        node: usize,
        t: f64,
    },
    #[error("event {event_id}: source node must have time offset 0, got {t}")]
    RootTime { event_id: String, t: f64 },
    #[error("event {event_id}: child {child} (t={child_t}) precedes parent {parent} (t={parent_t})")]
    TimeOrder {
        event_id: String,
        parent: usize,
        child: usize,
        parent_t: f64,
        child_t: f64,
    },
    #[error("event {event_id}: no nodes")]
    Empty { event_id: String },
    #[error("event {event_id}: no parent-child pairs (zero edges)")]
    NoPairs { event_id: String },
    #[error("mask ratio {ratio} outside (0, 1)")]
    MaskRatio { ratio: f64 },
    #[error("cannot mask an event with zero nodes")]
    MaskEmpty,
    #[error("mask token length {got}, expected feature dimension {expected}")]
    MaskTokenLength { expected: usize, got: usize },
}

/// One post in a propagation event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostNode {
    /// Minutes since the source post.
    #[serde(rename = "t")]
    pub t_offset_min: f64,
    #[serde(rename = "x")]
    pub feature: Vec<f64>,
}

/// One labeled propagation event: the source post at index 0, reply posts,
/// and directed parent→child edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventGraph {
    pub event_id: String,
    pub label: usize,
    pub nodes: Vec<PostNode>,
    pub edges: Vec<(usize, usize)>,
    #[serde(skip)]
    pub feature_dim: usize,
}

impl EventGraph {
    pub fn new(
        event_id: impl Into<String>,
        label: usize,
        nodes: Vec<PostNode>,
        edges: Vec<(usize, usize)>,
    ) -> Self {
        let feature_dim = nodes.first().map_or(0, |n| n.feature.len());
        EventGraph {
            event_id: event_id.into(),
            label,
            nodes,
            edges,
            feature_dim,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Check the structural invariants: index ranges, acyclicity, root time 0,
    /// non-negative child-after-parent times, finite features of uniform
    /// length. Multiple parents are tolerated; only cycles are rejected.
    pub fn validate(&self) -> Result<(), GraphError> {
        let id = &self.event_id;
        let n = self.nodes.len();
        if n == 0 {
            return Err(GraphError::Empty {
                event_id: id.clone(),
            });
        }
        if self.nodes[0].t_offset_min != 0.0 {
            return Err(GraphError::RootTime {
                event_id: id.clone(),
                t: self.nodes[0].t_offset_min,
            });
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.feature.len() != self.feature_dim {
                return Err(GraphError::FeatureLength {
                    event_id: id.clone(),
                    node: i,
                    expected: self.feature_dim,
                    got: node.feature.len(),
                });
            }
            if node.feature.iter().any(|v| !v.is_finite()) {
                return Err(GraphError::NonFiniteFeature {
                    event_id: id.clone(),
                    node: i,
                });
            }
            if node.t_offset_min < 0.0 {
                return Err(GraphError::NegativeTime {
                    event_id: id.clone(),
                    node: i,
                    t: node.t_offset_min,
                });
            }
        }
        for &(p, c) in &self.edges {
            if p >= n || c >= n {
                return Err(GraphError::EdgeOutOfRange {
                    event_id: id.clone(),
                    parent: p,
                    child: c,
                    nodes: n,
                });
            }
        }
        self.check_acyclic()?;
        for &(p, c) in &self.edges {
            let (pt, ct) = (self.nodes[p].t_offset_min, self.nodes[c].t_offset_min);
            if ct < pt {
                return Err(GraphError::TimeOrder {
                    event_id: id.clone(),
                    parent: p,
                    child: c,
                    parent_t: pt,
                    child_t: ct,
                });
            }
        }
        Ok(())
    }

    // Kahn's algorithm over the directed edge set.
    fn check_acyclic(&self) -> Result<(), GraphError> {
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(p, c) in &self.edges {
            indegree[c] += 1;
            children[p].push(c);
        }
        let mut queue: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut seen = 0;
        while let Some(v) = queue.pop() {
            seen += 1;
            for &c in &children[v] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push(c);
                }
            }
        }
        if seen != n {
            return Err(GraphError::Cycle {
                event_id: self.event_id.clone(),
            });
        }
        Ok(())
    }

    /// Node features as an N×d tensor.
    pub fn features<S: Scalar>(&self) -> Tensor<S> {
        let n = self.node_count();
        let d = self.feature_dim;
        let mut data = Vec::with_capacity(n * d);
        for node in &self.nodes {
            data.extend(node.feature.iter().map(|&v| S::from_f64(v)));
        }
        Tensor::new(n, d, data).expect("node features are rectangular")
    }
}

/// Dense 0/1 adjacency of the directed propagation edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    pub n: usize,
    entries: Vec<u8>,
}

impl AdjacencyMatrix {
    pub fn get(&self, s: usize, t: usize) -> u8 {
        self.entries[s * self.n + t]
    }

    pub fn ones(&self) -> usize {
        self.entries.iter().filter(|&&v| v == 1).count()
    }
}

/// Symmetrically normalized adjacency with self-loops:
/// D̃^{-1/2} (A + Aᵀ + I) D̃^{-1/2} over the undirected propagation graph.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    pub n: usize,
    entries: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn get(&self, s: usize, t: usize) -> f64 {
        self.entries[s * self.n + t]
    }

    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        let data = self.entries.iter().map(|&v| S::from_f64(v)).collect();
        Tensor::new(self.n, self.n, data).expect("square matrix")
    }
}

/// a_st = 1 exactly for the listed directed edges.
pub fn build_adjacency(event: &EventGraph) -> Result<AdjacencyMatrix, GraphError> {
    let n = event.node_count();
    let mut entries = vec![0u8; n * n];
    for &(p, c) in &event.edges {
        if p >= n || c >= n {
            return Err(GraphError::EdgeOutOfRange {
                event_id: event.event_id.clone(),
                parent: p,
                child: c,
                nodes: n,
            });
        }
        entries[p * n + c] = 1;
    }
    Ok(AdjacencyMatrix { n, entries })
}

/// Â = D̃^{-1/2} (A + Aᵀ + I) D̃^{-1/2}, where D̃ holds the row sums of
/// A + Aᵀ + I. Every diagonal entry of the symmetrized matrix is 1, so the
/// degrees are at least 1 and the result is well-defined for any event.
pub fn normalize_adjacency(a: &AdjacencyMatrix) -> NormalizedAdjacency {
    let n = a.n;
    let mut sym = vec![0.0f64; n * n];
    for s in 0..n {
        sym[s * n + s] = 1.0;
        for t in 0..n {
            if a.get(s, t) == 1 || a.get(t, s) == 1 {
                sym[s * n + t] = 1.0;
            }
        }
    }
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|s| {
            let deg: f64 = sym[s * n..(s + 1) * n].iter().sum();
            1.0 / deg.sqrt()
        })
        .collect();
    let mut entries = vec![0.0f64; n * n];
    for s in 0..n {
        for t in 0..n {
            entries[s * n + t] = sym[s * n + t] * inv_sqrt_deg[s] * inv_sqrt_deg[t];
        }
    }
    NormalizedAdjacency { n, entries }
}

/// Row k of the returned pair holds the features of edge k's parent and
/// child respectively; the row count equals the edge count, including
/// repeated parents.
pub fn extract_pairs<S: Scalar>(
    event: &EventGraph,
) -> Result<(Tensor<S>, Tensor<S>), GraphError> {
    if event.edges.is_empty() {
        return Err(GraphError::NoPairs {
            event_id: event.event_id.clone(),
        });
    }
    let d = event.feature_dim;
    let n_p = event.edges.len();
    let mut parents = Vec::with_capacity(n_p * d);
    let mut children = Vec::with_capacity(n_p * d);
    for &(p, c) in &event.edges {
        parents.extend(event.nodes[p].feature.iter().map(|&v| S::from_f64(v)));
        children.extend(event.nodes[c].feature.iter().map(|&v| S::from_f64(v)));
    }
    let x_p = Tensor::new(n_p, d, parents).expect("rectangular");
    let x_c = Tensor::new(n_p, d, children).expect("rectangular");
    Ok((x_p, x_c))
}

/// The set of node rows whose features get replaced by the mask token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    /// Sorted, distinct node indices.
    pub masked_indices: Vec<usize>,
}

impl MaskPlan {
    /// Draw max(1, floor(ratio·n)) distinct indices uniformly at random.
    pub fn sample<R: Rng>(n: usize, ratio: f64, rng: &mut R) -> Result<MaskPlan, GraphError> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(GraphError::MaskRatio { ratio });
        }
        if n == 0 {
            return Err(GraphError::MaskEmpty);
        }
        let count = ((ratio * n as f64).floor() as usize).max(1);
        let mut masked_indices: Vec<usize> =
            rand::seq::index::sample(rng, n, count).into_iter().collect();
        masked_indices.sort_unstable();
        Ok(MaskPlan { masked_indices })
    }

    pub fn count(&self) -> usize {
        self.masked_indices.len()
    }
}

/// Replace a uniformly sampled subset of rows with `token`, leaving every
/// other row bit-identical. The returned tensor is a plain value; training
/// records the same substitution on the tape so the token stays learnable.
pub fn mask_features<S: Scalar, R: Rng>(
    x: &Tensor<S>,
    ratio: f64,
    token: &[S],
    rng: &mut R,
) -> Result<(Tensor<S>, MaskPlan), GraphError> {
    if token.len() != x.cols() {
        return Err(GraphError::MaskTokenLength {
            expected: x.cols(),
            got: token.len(),
        });
    }
    let plan = MaskPlan::sample(x.rows(), ratio, rng)?;
    let c = x.cols();
    let mut data = x.data();
    for &i in &plan.masked_indices {
        data[i * c..(i + 1) * c].copy_from_slice(token);
    }
    let masked = Tensor::new(x.rows(), c, data).expect("same shape");
    Ok((masked, plan))
}

/// Keep nodes with t ≤ deadline (the source always survives) and the edges
/// whose endpoints both survive, re-indexing compactly in the original order.
pub fn slice_event(event: &EventGraph, deadline_min: f64) -> EventGraph {
    let mut keep = vec![false; event.node_count()];
    for (i, node) in event.nodes.iter().enumerate() {
        keep[i] = i == 0 || node.t_offset_min <= deadline_min;
    }
    let mut new_index = vec![usize::MAX; event.node_count()];
    let mut nodes = Vec::new();
    for (i, node) in event.nodes.iter().enumerate() {
        if keep[i] {
            new_index[i] = nodes.len();
            nodes.push(node.clone());
        }
    }
    let edges = event
        .edges
        .iter()
        .filter(|&&(p, c)| keep[p] && keep[c])
        .map(|&(p, c)| (new_index[p], new_index[c]))
        .collect();
    EventGraph {
        event_id: event.event_id.clone(),
        label: event.label,
        nodes,
        edges,
        feature_dim: event.feature_dim,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn node(t: f64, feature: Vec<f64>) -> PostNode {
        PostNode {
            t_offset_min: t,
            feature,
        }
    }

    fn chain_event() -> EventGraph {
        EventGraph::new(
            "ev-chain",
            0,
            vec![
                node(0.0, vec![1.0, 0.0]),
                node(5.0, vec![2.0, 1.0]),
                node(30.0, vec![3.0, 2.0]),
            ],
            vec![(0, 1), (1, 2)],
        )
    }

    #[test]
    fn adjacency_transcribes_edges() {
        let ev = EventGraph::new(
            "ev",
            0,
            vec![
                node(0.0, vec![0.0]),
                node(1.0, vec![0.0]),
                node(2.0, vec![0.0]),
            ],
            vec![(0, 1), (0, 2)],
        );
        let a = build_adjacency(&ev).unwrap();
        assert_eq!(a.get(0, 1), 1);
        assert_eq!(a.get(0, 2), 1);
        assert_eq!(a.ones(), 2);
    }

    #[test]
    fn adjacency_of_single_node_is_zero() {
        let ev = EventGraph::new("ev", 0, vec![node(0.0, vec![0.0])], vec![]);
        let a = build_adjacency(&ev).unwrap();
        assert_eq!(a.n, 1);
        assert_eq!(a.ones(), 0);
    }

    #[test]
    fn adjacency_chain_has_two_nonzeros() {
        let a = build_adjacency(&chain_event()).unwrap();
        assert_eq!(a.ones(), 2);
        assert_eq!(a.get(0, 1), 1);
        assert_eq!(a.get(1, 2), 1);
    }

    #[test]
    fn adjacency_rejects_out_of_range_edge() {
        let ev = EventGraph::new("ev", 0, vec![node(0.0, vec![0.0])], vec![(0, 3)]);
        assert!(matches!(
            build_adjacency(&ev),
            Err(GraphError::EdgeOutOfRange { .. })
        ));
    }

    #[test]
    fn normalize_single_node() {
        let ev = EventGraph::new("ev", 0, vec![node(0.0, vec![0.0])], vec![]);
        let norm = normalize_adjacency(&build_adjacency(&ev).unwrap());
        assert!((norm.get(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn normalize_two_nodes_one_edge() {
        // A + Aᵀ + I is all-ones; both degrees are 2, so every entry is 0.5.
        let ev = EventGraph::new(
            "ev",
            0,
            vec![node(0.0, vec![0.0]), node(1.0, vec![0.0])],
            vec![(0, 1)],
        );
        let norm = normalize_adjacency(&build_adjacency(&ev).unwrap());
        for s in 0..2 {
            for t in 0..2 {
                assert!((norm.get(s, t) - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn normalize_star() {
        // Degrees (3, 2, 2): (0,0)=1/3, (0,1)=(0,2)=1/sqrt(6), (1,1)=(2,2)=1/2.
        let ev = EventGraph::new(
            "ev",
            0,
            vec![
                node(0.0, vec![0.0]),
                node(1.0, vec![0.0]),
                node(2.0, vec![0.0]),
            ],
            vec![(0, 1), (0, 2)],
        );
        let norm = normalize_adjacency(&build_adjacency(&ev).unwrap());
        assert!((norm.get(0, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((norm.get(0, 1) - 1.0 / 6.0f64.sqrt()).abs() < 1e-15);
        assert!((norm.get(0, 2) - 1.0 / 6.0f64.sqrt()).abs() < 1e-15);
        assert!((norm.get(1, 1) - 0.5).abs() < 1e-15);
        assert!((norm.get(2, 2) - 0.5).abs() < 1e-15);
        assert!((norm.get(1, 2)).abs() < 1e-15);
    }

    #[test]
    fn normalized_adjacency_is_symmetric_with_bounded_spectrum() {
        // Power iteration as an independent oracle for the spectral radius.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        use rand::RngExt;
        for case in 0..20 {
            let n = rng.random_range(2..9);
            let mut nodes = vec![node(0.0, vec![0.0])];
            let mut edges = Vec::new();
            for i in 1..n {
                nodes.push(node(i as f64, vec![0.0]));
                edges.push((rng.random_range(0..i), i));
            }
            let ev = EventGraph::new(format!("ev{case}"), 0, nodes, edges);
            let norm = normalize_adjacency(&build_adjacency(&ev).unwrap());
            for s in 0..n {
                for t in 0..n {
                    assert!((norm.get(s, t) - norm.get(t, s)).abs() < 1e-12);
                    assert!(norm.get(s, t) >= 0.0 && norm.get(s, t) <= 1.0);
                }
            }
            let mut v = vec![1.0f64; n];
            for _ in 0..200 {
                let mut next = vec![0.0f64; n];
                for s in 0..n {
                    for t in 0..n {
                        next[s] += norm.get(s, t) * v[t];
                    }
                }
                let norm2 = next.iter().map(|x| x * x).sum::<f64>().sqrt();
                for x in next.iter_mut() {
                    *x /= norm2;
                }
                v = next;
            }
            let mut av = vec![0.0f64; n];
            for s in 0..n {
                for t in 0..n {
                    av[s] += norm.get(s, t) * v[t];
                }
            }
            let lambda: f64 = av.iter().zip(&v).map(|(a, b)| a * b).sum();
            assert!(lambda <= 1.0 + 1e-9, "spectral radius {lambda}");
        }
    }

    #[test]
    fn extract_pairs_orders_rows_by_edge() {
        let ev = EventGraph::new(
            "ev",
            0,
            vec![
                node(0.0, vec![0.0, 0.5]),
                node(1.0, vec![1.0, 1.5]),
                node(2.0, vec![2.0, 2.5]),
                node(3.0, vec![3.0, 3.5]),
            ],
            vec![(0, 1), (0, 2), (1, 3)],
        );
        let (x_p, x_c) = extract_pairs::<f64>(&ev).unwrap();
        assert_eq!(x_p.rows(), 3);
        assert_eq!(x_p.data(), vec![0.0, 0.5, 0.0, 0.5, 1.0, 1.5]);
        assert_eq!(x_c.data(), vec![1.0, 1.5, 2.0, 2.5, 3.0, 3.5]);
    }

    #[test]
    fn extract_pairs_single_edge() {
        let ev = EventGraph::new(
            "ev",
            0,
            vec![node(0.0, vec![1.0]), node(1.0, vec![2.0])],
            vec![(0, 1)],
        );
        let (x_p, _) = extract_pairs::<f64>(&ev).unwrap();
        assert_eq!(x_p.rows(), 1);
    }

    #[test]
    fn extract_pairs_isolated_root_errors() {
        let ev = EventGraph::new("ev", 0, vec![node(0.0, vec![1.0])], vec![]);
        assert!(matches!(
            extract_pairs::<f64>(&ev),
            Err(GraphError::NoPairs { .. })
        ));
    }

    #[test]
    fn extract_pairs_preserves_multiplicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        use rand::RngExt;
        for _ in 0..50 {
            let n = rng.random_range(2..10);
            let mut nodes = vec![node(0.0, vec![0.0])];
            let mut edges = Vec::new();
            for i in 1..n {
                nodes.push(node(i as f64, vec![i as f64]));
                let parents = rng.random_range(1..3usize);
                for _ in 0..parents {
                    edges.push((rng.random_range(0..i), i));
                }
            }
            let ev = EventGraph::new("ev", 0, nodes, edges.clone());
            let (x_p, x_c) = extract_pairs::<f64>(&ev).unwrap();
            assert_eq!(x_p.rows(), edges.len());
            assert_eq!(x_c.rows(), edges.len());
        }
    }

    #[test]
    fn mask_counts_follow_clamped_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plan = MaskPlan::sample(8, 0.25, &mut rng).unwrap();
        assert_eq!(plan.count(), 2);
        let plan = MaskPlan::sample(3, 0.25, &mut rng).unwrap();
        assert_eq!(plan.count(), 1);
    }

    #[test]
    fn mask_features_changes_exactly_the_planned_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let token = [9.0, 9.5];
        let (masked, plan) = mask_features(&x, 0.25, &token, &mut rng).unwrap();
        assert_eq!(plan.count(), 1);
        let orig = x.data();
        let new = masked.data();
        let mut changed = Vec::new();
        for row in 0..3 {
            if new[row * 2..(row + 1) * 2] != orig[row * 2..(row + 1) * 2] {
                changed.push(row);
            }
            if !plan.masked_indices.contains(&row) {
                // Untouched rows are bit-identical.
                assert_eq!(
                    new[row * 2..(row + 1) * 2].to_vec(),
                    orig[row * 2..(row + 1) * 2].to_vec()
                );
            } else {
                assert_eq!(new[row * 2..(row + 1) * 2].to_vec(), token.to_vec());
            }
        }
        assert_eq!(changed, plan.masked_indices);
    }

    #[test]
    fn mask_plan_is_deterministic_per_seed() {
        let plan_a = MaskPlan::sample(20, 0.25, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let plan_b = MaskPlan::sample(20, 0.25, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(plan_a, plan_b);
    }

    #[test]
    fn mask_ratio_bounds_are_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            MaskPlan::sample(4, 0.0, &mut rng),
            Err(GraphError::MaskRatio { .. })
        ));
        assert!(matches!(
            MaskPlan::sample(4, 1.0, &mut rng),
            Err(GraphError::MaskRatio { .. })
        ));
    }

    #[test]
    fn slice_at_zero_keeps_only_the_source() {
        let sliced = slice_event(&chain_event(), 0.0);
        assert_eq!(sliced.node_count(), 1);
        assert!(sliced.edges.is_empty());
        assert_eq!(sliced.label, 0);
    }

    #[test]
    fn slice_beyond_max_time_is_identity() {
        let ev = chain_event();
        let sliced = slice_event(&ev, 1e9);
        assert_eq!(sliced, ev);
    }

    #[test]
    fn slice_chain_at_threshold() {
        let sliced = slice_event(&chain_event(), 10.0);
        assert_eq!(sliced.node_count(), 2);
        assert_eq!(sliced.edges, vec![(0, 1)]);
    }

    #[test]
    fn slice_is_monotone_in_the_deadline() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        use rand::RngExt;
        for _ in 0..50 {
            let n = rng.random_range(2..12);
            let mut nodes = vec![node(0.0, vec![0.0])];
            let mut edges = Vec::new();
            for i in 1..n {
                let parent = rng.random_range(0..i);
                let t = nodes[parent].t_offset_min + rng.random_range(0.1..20.0);
                nodes.push(node(t, vec![0.0]));
                edges.push((parent, i));
            }
            let ev = EventGraph::new("ev", 0, nodes, edges);
            let d1: f64 = rng.random_range(0.0..60.0);
            let d2: f64 = rng.random_range(0.0..60.0);
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let small = slice_event(&ev, lo);
            let large = slice_event(&ev, hi);
            assert!(small.node_count() <= large.node_count());
            // Prefix property: kept nodes preserve relative order, so the
            // smaller slice is a prefix-selection of the larger one.
            let small_ts: Vec<f64> = small.nodes.iter().map(|nd| nd.t_offset_min).collect();
            let large_ts: Vec<f64> = large.nodes.iter().map(|nd| nd.t_offset_min).collect();
            for t in &small_ts {
                assert!(large_ts.contains(t));
            }
        }
    }

    #[test]
    fn validate_accepts_chain_and_rejects_cycles() {
        assert!(chain_event().validate().is_ok());
        let mut bad = chain_event();
        bad.edges.push((2, 0));
        assert!(matches!(bad.validate(), Err(GraphError::Cycle { .. })));
    }

    #[test]
    fn validate_rejects_nonzero_root_time() {
        let ev = EventGraph::new("ev", 0, vec![node(1.0, vec![0.0])], vec![]);
        assert!(matches!(ev.validate(), Err(GraphError::RootTime { .. })));
    }

    #[test]
    fn validate_rejects_child_before_parent() {
        let ev = EventGraph::new(
            "ev",
            0,
            vec![node(0.0, vec![0.0]), node(5.0, vec![0.0]), node(2.0, vec![0.0])],
            vec![(0, 1), (1, 2)],
        );
        assert!(matches!(ev.validate(), Err(GraphError::TimeOrder { .. })));
    }

    #[test]
    fn validate_tolerates_multiple_parents() {
        let ev = EventGraph::new(
            "ev",
            0,
            vec![node(0.0, vec![0.0]), node(1.0, vec![0.0]), node(2.0, vec![0.0])],
            vec![(0, 1), (0, 2), (1, 2)],
        );
        assert!(ev.validate().is_ok());
    }
}
