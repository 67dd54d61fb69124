//! Exact nearest-neighbor search with a balanced k-d tree.

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Balanced k-d tree over (a subset of) a cloud's points.
///
/// Queries return the index into the original cloud. Ties in distance go to
/// the lowest index.
#[derive(Debug, Clone)]
pub struct NnIndex {
    points: Vec<Point>,
    ids: Vec<usize>,
    nodes: Vec<Node>,
}

impl NnIndex {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        let all: Vec<usize> = (0..cloud.len()).collect();
        Self::build_subset(cloud, &all)
    }

    /// Indexes only the points at `indices`.
    pub fn build_subset(cloud: &PointCloud, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyTarget);
        }
        let mut order: Vec<(Point, usize)> = indices.iter().map(|&i| (cloud.points()[i], i)).collect();
        let mut nodes = Vec::with_capacity(2 * order.len() / LEAF_SIZE + 1);
        build_node(&mut order, 0, &mut nodes);
        let (points, ids) = order.into_iter().unzip();
        Ok(Self { points, ids, nodes })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Nearest indexed point to `query` as (cloud index, Euclidean distance).
    pub fn nearest(&self, query: &Point) -> (usize, f64) {
        let (idx, d2) = self.nearest_squared(query);
        (idx, d2.sqrt())
    }

    /// Like [`NnIndex::nearest`] but returns the squared distance.
    pub fn nearest_squared(&self, query: &Point) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, query, &mut best);
        best
    }

    fn search(&self, node: usize, q: &Point, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for k in start..end {
                    let d2 = squared_distance(&self.points[k], q);
                    if d2 < best.1 || (d2 == best.1 && self.ids[k] < best.0) {
                        *best = (self.ids[k], d2);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                // `<=` keeps equal-distance candidates with lower ids reachable.
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn squared_distance(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn build_node(items: &mut [(Point, usize)], offset: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if items.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + items.len(),
        });
        return id;
    }
    let (lo, hi) = items.iter().fold(
        (Point::repeat(f64::INFINITY), Point::repeat(f64::NEG_INFINITY)),
        |(lo, hi), (p, _)| (lo.inf(p), hi.sup(p)),
    );
    let spread = hi - lo;
    let axis = spread.imax();
    let mid = items.len() / 2;
    items.select_nth_unstable_by(mid, |a, b| a.0[axis].total_cmp(&b.0[axis]).then(a.1.cmp(&b.1)));
    let value = items[mid].0[axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (left_items, right_items) = items.split_at_mut(mid);
    let left = build_node(left_items, offset, nodes);
    let right = build_node(right_items, offset + mid, nodes);
    nodes[id] = Node::Split { axis, value, left, right };
    id
}
