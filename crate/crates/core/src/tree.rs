//! The RRT search tree: insertion, nearest-neighbor lookup and path retracing.

use std::io::Write;

use crate::error::{Error, Result};
use crate::world::{squared_euclidean, Path, RewardField, State, Transition};

/// Index of a node in the tree that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub state: State,
    pub parent: Option<NodeId>,
    pub incoming: Option<Transition>,
}

/// Above this dimension the index degrades to a linear scan.
pub const KD_MAX_DIM: usize = 8;

/// Rooted tree of transitions. Parents always precede their children.
#[derive(Debug, Clone)]
pub struct SearchTree {
    nodes: Vec<Node>,
    index: NearestIndex,
}

impl SearchTree {
    pub fn new(root: State) -> Self {
        let mut index = NearestIndex::for_dim(root.dim());
        index.insert(&root, 0);
        SearchTree {
            nodes: vec![Node {
                state: root,
                parent: None,
                incoming: None,
            }],
            index,
        }
    }

    /// Forces the linear-scan index regardless of dimension.
    pub fn with_linear_index(root: State) -> Self {
        let mut tree = SearchTree::new(root);
        tree.index = NearestIndex::Linear;
        tree
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> NodeId {
        NodeId::ROOT
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn state(&self, id: NodeId) -> &State {
        &self.nodes[id.0].state
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &Node)> {
        self.nodes.iter().enumerate().map(|(i, n)| (NodeId(i), n))
    }

    /// Transitions held by all non-root nodes, in insertion order.
    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.nodes.iter().filter_map(|n| n.incoming.as_ref())
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.0 < self.nodes.len()
    }

    /// Attaches `transition` below `parent`; its `x_p` must equal the parent state.
    pub fn add(&mut self, transition: Transition, parent: NodeId) -> Result<NodeId> {
        let parent_node = self
            .nodes
            .get(parent.0)
            .ok_or_else(|| Error::Contract(format!("unknown parent node {}", parent.0)))?;
        if parent_node.state != transition.x_p {
            return Err(Error::Contract(format!(
                "transition starts at {:?} but parent node {} is at {:?}",
                transition.x_p.0, parent.0, parent_node.state.0
            )));
        }
        let id = NodeId(self.nodes.len());
        let state = transition.x_c.clone();
        self.index.insert(&state, id.0);
        self.nodes.push(Node {
            state,
            parent: Some(parent),
            incoming: Some(transition),
        });
        Ok(id)
    }

    /// Closest node to `x`; ties go to the earliest inserted node.
    pub fn nearest(&self, x: &[f64]) -> NodeId {
        NodeId(self.index.nearest(x, &self.nodes).0)
    }

    /// Closest node and its Euclidean distance to `x`.
    pub fn nearest_with_distance(&self, x: &[f64]) -> (NodeId, f64) {
        let (i, d2) = self.index.nearest(x, &self.nodes);
        (NodeId(i), d2.sqrt())
    }

    /// Root-to-`leaf` transitions. The root retraces to an empty path.
    pub fn retrace_path(&self, leaf: NodeId, field: &RewardField) -> Path {
        let mut transitions = Vec::new();
        let mut cursor = leaf;
        while let Some(parent) = self.nodes[cursor.0].parent {
            transitions.push(
                self.nodes[cursor.0]
                    .incoming
                    .clone()
                    .expect("non-root node carries its transition"),
            );
            cursor = parent;
        }
        transitions.reverse();
        Path::new(transitions, field).expect("tree edges chain by construction")
    }

    /// Flat dump: `node,parent,state...,reward`, root parent written as -1.
    pub fn write_records<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let dim = self.nodes[0].state.dim();
        write!(out, "node,parent")?;
        for k in 0..dim {
            write!(out, ",x{k}")?;
        }
        writeln!(out, ",reward")?;
        for (i, node) in self.nodes.iter().enumerate() {
            let parent = node.parent.map_or(-1, |p| p.0 as i64);
            write!(out, "{i},{parent}")?;
            for v in node.state.iter() {
                write!(out, ",{v}")?;
            }
            match &node.incoming {
                Some(t) => writeln!(out, ",{}", t.reward)?,
                None => writeln!(out, ",")?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum NearestIndex {
    Kd(KdIndex),
    Linear,
}

impl NearestIndex {
    fn for_dim(dim: usize) -> Self {
        if dim <= KD_MAX_DIM {
            NearestIndex::Kd(KdIndex::new(dim))
        } else {
            NearestIndex::Linear
        }
    }

    fn insert(&mut self, state: &State, id: usize) {
        if let NearestIndex::Kd(kd) = self {
            kd.insert(state, id);
        }
    }

    fn nearest(&self, x: &[f64], nodes: &[Node]) -> (usize, f64) {
        match self {
            NearestIndex::Kd(kd) => kd.nearest(x),
            NearestIndex::Linear => linear_nearest(x, nodes.iter().map(|n| &n.state[..])),
        }
    }
}

/// Linear scan returning the index and squared distance of the closest
/// point; ties resolved to the lowest index.
pub fn linear_nearest<'a>(x: &[f64], points: impl Iterator<Item = &'a [f64]>) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, p) in points.enumerate() {
        let d2 = squared_euclidean(x, p);
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    best
}

const NIL: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct KdNode {
    point_start: usize,
    id: usize,
    axis: u8,
    left: u32,
    right: u32,
}

/// Incrementally built k-d tree. Points are stored flat; each node splits on
/// `depth mod dim` at its own point.
#[derive(Debug, Clone)]
struct KdIndex {
    dim: usize,
    coords: Vec<f64>,
    nodes: Vec<KdNode>,
}

impl KdIndex {
    fn new(dim: usize) -> Self {
        KdIndex {
            dim,
            coords: Vec::new(),
            nodes: Vec::new(),
        }
    }

    fn point(&self, node: &KdNode) -> &[f64] {
        &self.coords[node.point_start..node.point_start + self.dim]
    }

    fn insert(&mut self, state: &[f64], id: usize) {
        let point_start = self.coords.len();
        self.coords.extend_from_slice(state);
        let new_index = self.nodes.len() as u32;
        if self.nodes.is_empty() {
            self.nodes.push(KdNode {
                point_start,
                id,
                axis: 0,
                left: NIL,
                right: NIL,
            });
            return;
        }
        let mut cursor = 0usize;
        loop {
            let axis = self.nodes[cursor].axis as usize;
            let split = self.coords[self.nodes[cursor].point_start + axis];
            let go_left = state[axis] < split;
            let next = if go_left {
                self.nodes[cursor].left
            } else {
                self.nodes[cursor].right
            };
            if next == NIL {
                let child_axis = ((axis + 1) % self.dim) as u8;
                self.nodes.push(KdNode {
                    point_start,
                    id,
                    axis: child_axis,
                    left: NIL,
                    right: NIL,
                });
                if go_left {
                    self.nodes[cursor].left = new_index;
                } else {
                    self.nodes[cursor].right = new_index;
                }
                return;
            }
            cursor = next as usize;
        }
    }

    fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        if !self.nodes.is_empty() {
            self.search(0, x, &mut best);
        }
        best
    }

    fn search(&self, at: usize, x: &[f64], best: &mut (usize, f64)) {
        let node = &self.nodes[at];
        let p = self.point(node);
        let d2 = squared_euclidean(x, p);
        if d2 < best.1 || (d2 == best.1 && node.id < best.0) {
            *best = (node.id, d2);
        }
        let axis = node.axis as usize;
        let diff = x[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if near != NIL {
            self.search(near as usize, x, best);
        }
        // `<=` keeps equidistant candidates on the far side reachable for tie-breaking.
        if far != NIL && diff * diff <= best.1 {
            self.search(far as usize, x, best);
        }
    }
}
