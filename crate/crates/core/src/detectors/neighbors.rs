//! Exact nearest-neighbour search.
//!
//! A kd-tree is used up to [`KDTREE_MAX_DIM`] dimensions and brute force
//! above. Both paths compute squared distances with the same summation order
//! and break ties by lowest row index, so they return identical neighbour
//! lists.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

pub const KDTREE_MAX_DIM: usize = 16;
const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub dist: f64,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand {
    sq: f64,
    index: usize,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sq
            .total_cmp(&other.sq)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let t = x - y;
        acc += t * t;
    }
    acc
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct KdTree {
    nodes: Vec<Node>,
    /// Row indices permuted so each leaf owns a contiguous range.
    perm: Vec<usize>,
}

impl KdTree {
    fn build(data: ArrayView2<f64>) -> Self {
        let mut perm: Vec<usize> = (0..data.nrows()).collect();
        let mut nodes = Vec::new();
        let n = perm.len();
        Self::build_rec(data, &mut perm, 0, n, &mut nodes);
        Self { nodes, perm }
    }

    fn build_rec(
        data: ArrayView2<f64>,
        perm: &mut [usize],
        start: usize,
        end: usize,
        nodes: &mut Vec<Node>,
    ) -> usize {
        let id = nodes.len();
        if end - start <= LEAF_SIZE {
            nodes.push(Node::Leaf { start, end });
            return id;
        }
        // split on the widest dimension at the median
        let d = data.ncols();
        let mut best = (0, -1.0);
        for j in 0..d {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &perm[start..end] {
                lo = lo.min(data[[i, j]]);
                hi = hi.max(data[[i, j]]);
            }
            if hi - lo > best.1 {
                best = (j, hi - lo);
            }
        }
        if best.1 <= 0.0 {
            nodes.push(Node::Leaf { start, end });
            return id;
        }
        let dim = best.0;
        let mid = (end - start) / 2;
        perm[start..end].sort_by(|&a, &b| data[[a, dim]].total_cmp(&data[[b, dim]]).then(a.cmp(&b)));
        let value = data[[perm[start + mid], dim]];
        nodes.push(Node::Leaf { start, end });
        let left = Self::build_rec(data, perm, start, start + mid, nodes);
        let right = Self::build_rec(data, perm, start + mid, end, nodes);
        nodes[id] = Node::Split {
            dim,
            value,
            left,
            right,
        };
        id
    }

    fn search(
        &self,
        data: ArrayView2<f64>,
        q: ArrayView1<f64>,
        k: usize,
        heap: &mut BinaryHeap<Cand>,
    ) {
        self.search_rec(0, data, q, k, heap);
    }

    fn search_rec(
        &self,
        node: usize,
        data: ArrayView2<f64>,
        q: ArrayView1<f64>,
        k: usize,
        heap: &mut BinaryHeap<Cand>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.perm[start..end] {
                    push(heap, k, Cand {
                        sq: sq_dist(q, data.row(i)),
                        index: i,
                    });
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search_rec(near, data, q, k, heap);
                // equality still descends: a tie may carry a lower index
                if heap.len() < k || diff * diff <= heap.peek().expect("non-empty").sq {
                    self.search_rec(far, data, q, k, heap);
                }
            }
        }
    }
}

fn push(heap: &mut BinaryHeap<Cand>, k: usize, c: Cand) {
    if heap.len() < k {
        heap.push(c);
    } else if c < *heap.peek().expect("k >= 1") {
        heap.pop();
        heap.push(c);
    }
}

/// Training rows plus an optional kd-tree.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeighborIndex {
    data: Array2<f64>,
    tree: Option<KdTree>,
}

impl NeighborIndex {
    pub fn new(data: Array2<f64>) -> Self {
        let tree = (data.ncols() <= KDTREE_MAX_DIM).then(|| KdTree::build(data.view()));
        Self { data, tree }
    }

    pub fn brute_force(data: Array2<f64>) -> Self {
        Self { data, tree: None }
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn uses_tree(&self) -> bool {
        self.tree.is_some()
    }

    /// The `k` nearest rows sorted by (distance, index).
    pub fn query(&self, q: ArrayView1<f64>, k: usize) -> Vec<Neighbor> {
        let k = k.min(self.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        match &self.tree {
            Some(tree) => tree.search(self.data.view(), q, k, &mut heap),
            None => {
                for (i, row) in self.data.outer_iter().enumerate() {
                    push(&mut heap, k, Cand {
                        sq: sq_dist(q, row),
                        index: i,
                    });
                }
            }
        }
        heap.into_sorted_vec()
            .into_iter()
            .map(|c| Neighbor {
                dist: c.sq.sqrt(),
                index: c.index,
            })
            .collect()
    }
}
