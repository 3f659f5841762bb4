//! Static 3-d tree for nearest-neighbor queries.

use crate::superquadric::Point3;

#[derive(Debug, Clone)]
struct Node {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

/// Balanced k-d tree over a borrowed point slice, split at the median along
/// cycling axes.
#[derive(Debug, Clone)]
pub struct KdTree<'a> {
    points: &'a [Point3],
    nodes: Vec<Node>,
    root: Option<usize>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Point3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut tree = Self {
            points,
            nodes: Vec::with_capacity(points.len()),
            root: None,
        };
        tree.root = tree.build(&mut order, 0);
        tree
    }

    fn build(&mut self, idx: &mut [usize], depth: usize) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let axis = depth % 3;
        let mid = idx.len() / 2;
        let pts = self.points;
        idx.select_nth_unstable_by(mid, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b)));
        let node = self.nodes.len();
        self.nodes.push(Node {
            point: idx[mid],
            axis,
            left: None,
            right: None,
        });
        let (lo, rest) = idx.split_at_mut(mid);
        let left = self.build(lo, depth + 1);
        let right = self.build(&mut rest[1..], depth + 1);
        self.nodes[node].left = left;
        self.nodes[node].right = right;
        Some(node)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the nearest point and its squared distance to `q`.
    pub fn nearest(&self, q: &Point3) -> Option<(usize, f64)> {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(self.root, q, &mut best);
        self.root.map(|_| best)
    }

    fn search(&self, node: Option<usize>, q: &Point3, best: &mut (usize, f64)) {
        let Some(n) = node else { return };
        let node = &self.nodes[n];
        let p = &self.points[node.point];
        let d2 = (p - q).norm_squared();
        if d2 < best.1 || (d2 == best.1 && node.point < best.0) {
            *best = (node.point, d2);
        }
        let delta = q[node.axis] - p[node.axis];
        let (near, far) = if delta < 0.0 { (node.left, node.right) } else { (node.right, node.left) };
        self.search(near, q, best);
        if delta * delta <= best.1 {
            self.search(far, q, best);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[Point3], q: &Point3) -> (usize, f64) {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (p - q).norm_squared()))
            .fold((usize::MAX, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [1usize, 2, 3, 17, 500] {
            let pts: Vec<Point3> = (0..n)
                .map(|_| Point3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
                .collect();
            let tree = KdTree::new(&pts);
            for _ in 0..200 {
                let q = Point3::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0));
                let (i, d) = tree.nearest(&q).unwrap();
                let (j, e) = brute(&pts, &q);
                assert_eq!(d, e);
                assert_eq!(i, j);
            }
        }
    }

    #[test]
    fn duplicates_and_grid_ties() {
        let mut pts = Vec::new();
        for x in 0..4 {
            for y in 0..4 {
                pts.push(Point3::new(x as f64, y as f64, 0.0));
                pts.push(Point3::new(x as f64, y as f64, 0.0));
            }
        }
        let tree = KdTree::new(&pts);
        let (_, d) = tree.nearest(&Point3::new(1.5, 1.5, 0.0)).unwrap();
        assert_eq!(d, 0.5);
        let (i, d) = tree.nearest(&Point3::new(2.0, 3.0, 0.0)).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(pts[i], Point3::new(2.0, 3.0, 0.0));
    }

    #[test]
    fn empty_tree() {
        let pts: Vec<Point3> = Vec::new();
        assert!(KdTree::new(&pts).nearest(&Point3::origin()).is_none());
    }
}
