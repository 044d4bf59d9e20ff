//! Nearest-neighbor search and farthest point sampling.
//!
//! Both kernels break distance ties by point index so results are fully
//! determined by the input order. Callers that need order independence feed
//! points in [`canonical_order`].

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::math::Vec3;

/// Lexicographic (x, y, z) order of points, ties by index.
pub fn canonical_order(points: &[[f32; 3]]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (points[a], points[b]);
        pa[0]
            .total_cmp(&pb[0])
            .then(pa[1].total_cmp(&pb[1]))
            .then(pa[2].total_cmp(&pb[2]))
            .then(a.cmp(&b))
    });
    order
}

#[inline]
fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const LEAF_SIZE: usize = 16;

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static 3-d tree for exact k-nearest-neighbor queries.
pub struct KdTree<'a> {
    points: &'a [Vec3],
    perm: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vec3]) -> Self {
        let mut tree = Self {
            points,
            perm: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.perm[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap();
        if hi[axis] - lo[axis] == 0.0 {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = (start + end) / 2;
        let pts = self.points;
        self.perm[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b))
        });
        let value = pts[self.perm[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest points to `query` as `(index, squared distance)`,
    /// closest first, ties by index. `exclude` removes one index from the
    /// candidate set.
    pub fn knn(&self, query: &Vec3, k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, exclude, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.index, c.d2)).collect()
    }

    fn search(
        &self,
        node: usize,
        q: &Vec3,
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.perm[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let c = Candidate {
                        d2: dist2(q, &self.points[i]),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, exclude, heap);
                // <= keeps equal-distance candidates reachable for the index tie-break
                if heap.len() < k || diff * diff <= heap.peek().unwrap().d2 {
                    self.search(far, q, k, exclude, heap);
                }
            }
        }
    }
}

/// Farthest point sampling of `count` points starting at `start`.
/// The next pick maximizes the distance to the already selected set; ties
/// go to the lowest index.
pub fn farthest_point_sampling(points: &[Vec3], count: usize, start: usize) -> Vec<usize> {
    let n = points.len();
    let count = count.min(n);
    if count == 0 {
        return Vec::new();
    }
    let mut selected = Vec::with_capacity(count);
    let mut best = vec![f64::INFINITY; n];
    let mut current = start;
    for _ in 0..count {
        selected.push(current);
        best[current] = f64::NEG_INFINITY;
        let c = points[current];
        let mut next = usize::MAX;
        let mut next_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if best[i] == f64::NEG_INFINITY {
                continue;
            }
            let d = dist2(p, &c);
            if d < best[i] {
                best[i] = d;
            }
            if best[i] > next_d {
                next_d = best[i];
                next = i;
            }
        }
        if next == usize::MAX {
            break;
        }
        current = next;
    }
    selected
}

/// Index of the point farthest from the centroid; ties by lowest index.
///
/// Distances are compared as `|n·p - Σp|²`, which avoids the division and
/// stays exact for translated copies of grid-quantized clouds.
pub fn farthest_from_centroid(points: &[Vec3]) -> usize {
    let n = points.len() as f64;
    let mut sum = [0.0; 3];
    for p in points {
        for a in 0..3 {
            sum[a] += p[a];
        }
    }
    let mut best = 0;
    let mut best_d = f64::NEG_INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = [n * p[0] - sum[0], n * p[1] - sum[1], n * p[2] - sum[2]];
        let d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        if d2 > best_d {
            best_d = d2;
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_knn(points: &[Vec3], q: &Vec3, k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = points
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != exclude)
            .map(|(i, p)| (i, dist2(p, q)))
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn knn_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // integer grid coordinates produce many exact distance ties
        let pts: Vec<Vec3> = (0..700)
            .map(|_| {
                [
                    rng.random_range(0..12) as f64,
                    rng.random_range(0..12) as f64,
                    rng.random_range(0..3) as f64,
                ]
            })
            .collect();
        let tree = KdTree::new(&pts);
        for (i, q) in pts.iter().enumerate().step_by(7) {
            for k in [1, 5, 16] {
                assert_eq!(tree.knn(q, k, Some(i)), brute_knn(&pts, q, k, Some(i)));
            }
        }
        let q = [5.5, 5.5, 1.0];
        assert_eq!(tree.knn(&q, 30, None), brute_knn(&pts, &q, 30, None));
    }

    #[test]
    fn knn_clamps_to_available() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let tree = KdTree::new(&pts);
        assert_eq!(tree.knn(&pts[0], 16, Some(0)), vec![(1, 1.0)]);
    }

    #[test]
    fn fps_on_a_line() {
        let pts: Vec<Vec3> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
        assert_eq!(farthest_point_sampling(&pts, 3, 0), vec![0, 9, 4]);
        assert_eq!(farthest_point_sampling(&pts, 50, 0).len(), 10);
    }

    #[test]
    fn fps_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Vec3> = (0..200)
            .map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let got = farthest_point_sampling(&pts, 20, 5);
        let mut want = vec![5];
        while want.len() < 20 {
            let next = (0..pts.len())
                .filter(|i| !want.contains(i))
                .max_by(|&a, &b| {
                    let da = want.iter().map(|&s| dist2(&pts[a], &pts[s])).fold(f64::INFINITY, f64::min);
                    let db = want.iter().map(|&s| dist2(&pts[b], &pts[s])).fold(f64::INFINITY, f64::min);
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .unwrap();
            want.push(next);
        }
        assert_eq!(got, want);
    }

    #[test]
    fn canonical_order_is_lexicographic() {
        let pts = [[1.0f32, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 1.0, 5.0], [0.0, 1.0, 5.0]];
        assert_eq!(canonical_order(&pts), vec![2, 3, 1, 0]);
    }

    #[test]
    fn centroid_extreme() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [10.0, 0.0, 0.0]];
        assert_eq!(farthest_from_centroid(&pts), 2);
    }
}
