use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::io::PointCloud;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf(Vec<usize>),
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Exact k-nearest-neighbor index over the xyz coordinates of a cloud.
///
/// Splits on the axis of largest extent at the median, ordering equal
/// coordinates by point index. Results are sorted by `(distance, index)`.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[inline]
pub(crate) fn squared_distance(q: &[f64; 3], p: &[f64; 3]) -> f64 {
    let dx = p[0] - q[0];
    let dy = p[1] - q[1];
    let dz = p[2] - q[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
fn key_cmp(a: (f64, usize), b: (f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

impl KdTree {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::Empty("cannot build a KD-tree over an empty cloud"));
        }
        let points: Vec<[f64; 3]> = cloud.points.iter().map(|p| p.xyz()).collect();
        let mut tree = KdTree { points, nodes: Vec::new() };
        let mut indices: Vec<usize> = (0..tree.points.len()).collect();
        tree.build_node(&mut indices);
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build_node(&mut self, indices: &mut [usize]) -> usize {
        let id = self.nodes.len();
        if indices.len() <= LEAF_SIZE {
            self.nodes.push(Node::Leaf(indices.to_vec()));
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in indices.iter() {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3).fold(0, |best, a| if hi[a] - lo[a] > hi[best] - lo[best] { a } else { best });
        if hi[axis] == lo[axis] {
            // all coordinates identical
            self.nodes.push(Node::Leaf(indices.to_vec()));
            return id;
        }

        let mid = indices.len() / 2;
        let points = &self.points;
        indices.select_nth_unstable_by(mid, |&a, &b| key_cmp((points[a][axis], a), (points[b][axis], b)));
        let value = points[indices[mid]][axis];
        self.nodes.push(Node::Leaf(Vec::new()));
        let (l, r) = indices.split_at_mut(mid);
        let left = self.build_node(l);
        let right = self.build_node(r);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// The `n` points nearest to `query`, nearest first.
    pub fn knn_point(&self, query: &[f64; 3], n: usize) -> Result<Vec<Neighbor>> {
        if n == 0 || n > self.points.len() {
            return Err(Error::invalid(format!("n = {n} neighbors requested from {} points", self.points.len())));
        }
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(n + 1);
        self.search(0, query, n, &mut best);
        Ok(best.into_iter().map(|(d2, index)| Neighbor { index, distance: d2.sqrt() }).collect())
    }

    /// Neighbors of point `index`, which itself comes first at distance 0.
    pub fn knn_query(&self, index: usize, n: usize) -> Result<Vec<Neighbor>> {
        let q = *self.points.get(index).ok_or(Error::IndexOutOfRange { index, len: self.points.len() })?;
        self.knn_point(&q, n)
    }

    fn search(&self, node: usize, q: &[f64; 3], n: usize, best: &mut Vec<(f64, usize)>) {
        match &self.nodes[node] {
            Node::Leaf(indices) => {
                for &i in indices {
                    let cand = (squared_distance(q, &self.points[i]), i);
                    if best.len() == n && key_cmp(cand, best[n - 1]) != Ordering::Less {
                        continue;
                    }
                    let pos = best.partition_point(|&b| key_cmp(b, cand) == Ordering::Less);
                    best.insert(pos, cand);
                    best.truncate(n);
                }
            }
            &Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, n, best);
                // equality still visits: a tie may hide behind the plane
                if best.len() < n || diff * diff <= best[n - 1].0 {
                    self.search(far, q, n, best);
                }
            }
        }
    }
}

/// Full scan with the same ordering rules as [`KdTree`]; the test oracle.
pub fn brute_force_knn(cloud: &PointCloud, index: usize, n: usize) -> Result<Vec<Neighbor>> {
    let len = cloud.len();
    let q = cloud.points.get(index).ok_or(Error::IndexOutOfRange { index, len })?.xyz();
    if n == 0 || n > len {
        return Err(Error::invalid(format!("n = {n} neighbors requested from {len} points")));
    }
    let mut all: Vec<(f64, usize)> =
        cloud.points.iter().enumerate().map(|(i, p)| (squared_distance(&q, &p.xyz()), i)).collect();
    all.sort_by(|&a, &b| key_cmp(a, b));
    Ok(all.into_iter().take(n).map(|(d2, index)| Neighbor { index, distance: d2.sqrt() }).collect())
}
