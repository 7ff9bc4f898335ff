//! Static 3D k-d tree for nearest-neighbor queries.

use nalgebra::Vector3;

/// Balanced k-d tree built once over a fixed point set. Nodes carry their
/// subtree's bounding box so queries far from the data prune early.
pub struct KdTree3 {
    points: Vec<Vector3<f64>>,
    // Implicit tree: nodes[k] indexes into points; children of k are 2k+1, 2k+2.
    nodes: Vec<u32>,
    bounds: Vec<[f64; 6]>,
}

const EMPTY: u32 = u32::MAX;

impl KdTree3 {
    pub fn build(points: &[Vector3<f64>]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let size = points.len().next_power_of_two() * 2;
        let mut nodes = vec![EMPTY; size];
        let mut bounds = vec![[0.0; 6]; size];
        if !points.is_empty() {
            build_recursive(points, &mut order, 0, 0, &mut nodes, &mut bounds);
        }
        Self { points: points.to_vec(), nodes, bounds }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Euclidean distance from `query` to its nearest stored point.
    pub fn nearest_distance(&self, query: &Vector3<f64>) -> f64 {
        debug_assert!(!self.is_empty());
        let mut best = f64::INFINITY;
        self.search(0, query, &mut best);
        best.sqrt()
    }

    fn search(&self, node: usize, query: &Vector3<f64>, best_sq: &mut f64) {
        if node >= self.nodes.len() || self.nodes[node] == EMPTY {
            return;
        }
        if bbox_distance_sq(&self.bounds[node], query) >= *best_sq {
            return;
        }
        let p = &self.points[self.nodes[node] as usize];
        let d_sq = (p - query).norm_squared();
        if d_sq < *best_sq {
            *best_sq = d_sq;
        }
        let (left, right) = (2 * node + 1, 2 * node + 2);
        let dl = if left < self.nodes.len() && self.nodes[left] != EMPTY {
            bbox_distance_sq(&self.bounds[left], query)
        } else {
            f64::INFINITY
        };
        let dr = if right < self.nodes.len() && self.nodes[right] != EMPTY {
            bbox_distance_sq(&self.bounds[right], query)
        } else {
            f64::INFINITY
        };
        let (near, far) = if dl <= dr { (left, right) } else { (right, left) };
        self.search(near, query, best_sq);
        self.search(far, query, best_sq);
    }
}

#[inline]
fn bbox_distance_sq(b: &[f64; 6], q: &Vector3<f64>) -> f64 {
    let dx = (b[0] - q.x).max(q.x - b[3]).max(0.0);
    let dy = (b[1] - q.y).max(q.y - b[4]).max(0.0);
    let dz = (b[2] - q.z).max(q.z - b[5]).max(0.0);
    dx * dx + dy * dy + dz * dz
}

fn build_recursive(
    points: &[Vector3<f64>],
    order: &mut [u32],
    node: usize,
    axis: usize,
    nodes: &mut Vec<u32>,
    bounds: &mut Vec<[f64; 6]>,
) {
    if order.is_empty() {
        return;
    }
    if node >= nodes.len() {
        nodes.resize(node + 1, EMPTY);
        bounds.resize(node + 1, [0.0; 6]);
    }
    let mut bb = [f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for &i in order.iter() {
        let p = &points[i as usize];
        bb[0] = bb[0].min(p.x);
        bb[1] = bb[1].min(p.y);
        bb[2] = bb[2].min(p.z);
        bb[3] = bb[3].max(p.x);
        bb[4] = bb[4].max(p.y);
        bb[5] = bb[5].max(p.z);
    }
    bounds[node] = bb;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis].partial_cmp(&points[b as usize][axis]).unwrap_or(std::cmp::Ordering::Equal)
    });
    nodes[node] = order[mid];
    let (lo, rest) = order.split_at_mut(mid);
    let hi = &mut rest[1..];
    let next_axis = (axis + 1) % 3;
    build_recursive(points, lo, 2 * node + 1, next_axis, nodes, bounds);
    build_recursive(points, hi, 2 * node + 2, next_axis, nodes, bounds);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo_points(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        (0..n).map(|_| Vector3::new(next() * 10.0 - 5.0, next() * 10.0 - 5.0, next() * 10.0 - 5.0)).collect()
    }

    #[test]
    fn matches_brute_force() {
        let points = pseudo_points(500, 3);
        let queries = pseudo_points(200, 17);
        let tree = KdTree3::build(&points);
        for q in &queries {
            let brute = points.iter().map(|p| (p - q).norm()).fold(f64::INFINITY, f64::min);
            let fast = tree.nearest_distance(q);
            assert!((brute - fast).abs() < 1e-12, "brute {brute} vs tree {fast}");
        }
    }

    #[test]
    fn matches_brute_force_far_queries() {
        let points = pseudo_points(400, 5);
        let tree = KdTree3::build(&points);
        for (i, q) in pseudo_points(60, 23).iter().enumerate() {
            let scaled = q * (0.1 + (i % 7) as f64 * 3.0);
            let brute = points.iter().map(|p| (p - scaled).norm()).fold(f64::INFINITY, f64::min);
            assert!((brute - tree.nearest_distance(&scaled)).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_hit_is_zero() {
        let points = pseudo_points(64, 9);
        let tree = KdTree3::build(&points);
        for p in &points {
            assert!(tree.nearest_distance(p) < 1e-15);
        }
    }

    #[test]
    fn single_point_tree() {
        let tree = KdTree3::build(&[Vector3::new(1.0, 2.0, 3.0)]);
        assert!((tree.nearest_distance(&Vector3::new(1.0, 2.0, 7.0)) - 4.0).abs() < 1e-12);
    }
}
