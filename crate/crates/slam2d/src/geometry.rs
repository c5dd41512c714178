//! SE(2) algebra, 2D point clouds with normals and nearest-neighbor
//! correspondence search.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

/// Wraps an angle to (-pi, pi]. wrap(pi) == pi.
pub fn wrap_angle(a: f64) -> f64 {
    // In-range angles pass through bit-exact.
    if a > -std::f64::consts::PI && a <= std::f64::consts::PI {
        return a;
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Rigid transform on the plane: translation (x, y) plus heading theta.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2 {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Pose2 {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    pub fn translation(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn rotation(&self) -> Matrix2<f64> {
        let (s, c) = self.theta.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    /// Group composition; equals the product of the homogeneous 3x3 matrices.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let t = self.rotation() * other.translation() + self.translation();
        Pose2::new(t.x, t.y, self.theta + other.theta)
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        // R^T * (-t)
        let ix = -(c * self.x + s * self.y);
        let iy = -(-s * self.x + c * self.y);
        Pose2::new(ix, iy, -self.theta)
    }

    /// R(theta) * p + t
    pub fn transform_point(&self, p: &Vector2<f64>) -> Vector2<f64> {
        self.rotation() * p + self.translation()
    }

    /// Rotates a direction vector without translating it.
    pub fn rotate_vector(&self, v: &Vector2<f64>) -> Vector2<f64> {
        self.rotation() * v
    }
}

/// 2D point cloud; normals, when present, run parallel to the points and
/// are unit length for every `Some` entry.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud2 {
    pub points: Vec<Vector2<f64>>,
    pub normals: Option<Vec<Option<Vector2<f64>>>>,
}

impl PointCloud2 {
    pub fn from_points(points: Vec<Vector2<f64>>) -> Self {
        PointCloud2 {
            points,
            normals: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn normal(&self, i: usize) -> Option<Vector2<f64>> {
        self.normals.as_ref().and_then(|n| n[i])
    }

    /// Cloud expressed in another frame: points transformed, normals rotated.
    pub fn transformed(&self, pose: &Pose2) -> PointCloud2 {
        PointCloud2 {
            points: self.points.iter().map(|p| pose.transform_point(p)).collect(),
            normals: self.normals.as_ref().map(|ns| {
                ns.iter()
                    .map(|n| n.map(|n| pose.rotate_vector(&n)))
                    .collect()
            }),
        }
    }
}

/// A matched pair of points; `distance` is measured after applying the guess
/// to the moving point and never exceeds the gate that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub fixed_index: usize,
    pub moving_index: usize,
    pub distance: f64,
}

/// Static 2D kd-tree over a point slice. Nearest-neighbor queries break
/// distance ties toward the lowest point index so results match a
/// lexicographic brute-force scan exactly.
pub struct KdTree {
    nodes: Vec<KdNode>,
    points: Vec<Vector2<f64>>,
    root: Option<usize>,
}

struct KdNode {
    index: usize, // into points
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

impl KdTree {
    pub fn build(points: &[Vector2<f64>]) -> Self {
        let mut tree = KdTree {
            nodes: Vec::with_capacity(points.len()),
            points: points.to_vec(),
            root: None,
        };
        let mut idx: Vec<usize> = (0..points.len()).collect();
        tree.root = tree.build_rec(&mut idx, 0);
        tree
    }

    fn build_rec(&mut self, idx: &mut [usize], depth: usize) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let axis = depth % 2;
        idx.sort_unstable_by(|&a, &b| {
            self.points[a][axis]
                .partial_cmp(&self.points[b][axis])
                .unwrap()
                .then(a.cmp(&b))
        });
        let mid = idx.len() / 2;
        let point_index = idx[mid];
        let node_slot = self.nodes.len();
        self.nodes.push(KdNode {
            index: point_index,
            axis,
            left: None,
            right: None,
        });
        let (lo, rest) = idx.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = self.build_rec(lo, depth + 1);
        let right = self.build_rec(hi, depth + 1);
        self.nodes[node_slot].left = left;
        self.nodes[node_slot].right = right;
        Some(node_slot)
    }

    /// Nearest point within `radius` of the query, or None.
    pub fn nearest_within(&self, query: &Vector2<f64>, radius: f64) -> Option<(usize, f64)> {
        let mut best: Option<(f64, usize)> = None; // (dist2, index)
        if let Some(root) = self.root {
            self.search(root, query, radius * radius, &mut best);
        }
        best.map(|(d2, i)| (i, d2.sqrt()))
    }

    fn search(
        &self,
        node: usize,
        query: &Vector2<f64>,
        gate2: f64,
        best: &mut Option<(f64, usize)>,
    ) {
        let n = &self.nodes[node];
        let p = &self.points[n.index];
        let d2 = (p - query).norm_squared();
        if d2 <= gate2 {
            let candidate = (d2, n.index);
            match best {
                Some(b) if (b.0, b.1) <= candidate => {}
                _ => *best = Some(candidate),
            }
        }
        let diff = query[n.axis] - p[n.axis];
        let (near, far) = if diff < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        if let Some(c) = near {
            self.search(c, query, gate2, best);
        }
        // Visit the far side on exact ties as well: a lower index at the same
        // distance may live there.
        let limit = best.map(|(d2, _)| d2).unwrap_or(gate2).min(gate2);
        if diff * diff <= limit {
            if let Some(c) = far {
                self.search(c, query, gate2, best);
            }
        }
    }
}

/// For every moving point, the nearest fixed point to `guess * p` within
/// `gate`; pairs whose normals disagree by more than `normal_gate` are
/// dropped (only when both normals exist). Identical to a brute-force scan.
pub fn find_correspondences(
    fixed: &PointCloud2,
    moving: &PointCloud2,
    guess: &Pose2,
    gate: f64,
    normal_gate: f64,
) -> Vec<Correspondence> {
    let tree = KdTree::build(&fixed.points);
    find_correspondences_with_tree(&tree, fixed, moving, guess, gate, normal_gate)
}

/// Same as [`find_correspondences`] but reuses a prebuilt tree over the
/// fixed cloud.
pub fn find_correspondences_with_tree(
    tree: &KdTree,
    fixed: &PointCloud2,
    moving: &PointCloud2,
    guess: &Pose2,
    gate: f64,
    normal_gate: f64,
) -> Vec<Correspondence> {
    let mut out = Vec::new();
    for (mi, p) in moving.points.iter().enumerate() {
        let q = guess.transform_point(p);
        let Some((fi, dist)) = tree.nearest_within(&q, gate) else {
            continue;
        };
        if let (Some(nf), Some(nm)) = (fixed.normal(fi), moving.normal(mi)) {
            let nm_world = guess.rotate_vector(&nm);
            let cosang = nf.dot(&nm_world).clamp(-1.0, 1.0);
            if cosang.acos() > normal_gate {
                continue;
            }
        }
        out.push(Correspondence {
            fixed_index: fi,
            moving_index: mi,
            distance: dist,
        });
    }
    out
}

/// Per-point normals from the minor eigenvector of the covariance of the k
/// nearest neighbors, oriented toward the origin of the cloud frame.
/// Points with fewer than k neighbors within 10x the median spacing are
/// left without a normal.
pub fn estimate_normals(cloud: &PointCloud2, k: usize) -> PointCloud2 {
    assert!(k >= 2, "normal estimation needs k >= 2");
    let n = cloud.points.len();
    let mut out = cloud.clone();
    if n < 2 {
        out.normals = Some(vec![None; n]);
        return out;
    }
    // Median nearest-neighbor spacing over the cloud. Clouds here are raw
    // scans (a few hundred points), so the quadratic scan is fine.
    let mut nn_dists: Vec<f64> = Vec::with_capacity(n);
    for (i, p) in cloud.points.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (j, q) in cloud.points.iter().enumerate() {
            if i != j {
                best = best.min((p - q).norm());
            }
        }
        nn_dists.push(best);
    }
    nn_dists.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let median = nn_dists[n / 2];
    let radius = 10.0 * median;

    let mut normals: Vec<Option<Vector2<f64>>> = Vec::with_capacity(n);
    for (i, p) in cloud.points.iter().enumerate() {
        // k nearest neighbors of p (excluding p), restricted to the radius.
        let mut neigh: Vec<(f64, usize)> = cloud
            .points
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(j, q)| ((p - q).norm(), j))
            .filter(|(d, _)| *d <= radius)
            .collect();
        neigh.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        if neigh.len() < k {
            normals.push(None);
            continue;
        }
        neigh.truncate(k);
        // Covariance of the neighborhood including the point itself.
        let mut mean = *p;
        for &(_, j) in &neigh {
            mean += cloud.points[j];
        }
        mean /= (k + 1) as f64;
        let mut cov = Matrix2::zeros();
        let d0 = p - mean;
        cov += d0 * d0.transpose();
        for &(_, j) in &neigh {
            let d = cloud.points[j] - mean;
            cov += d * d.transpose();
        }
        let normal = minor_eigenvector(&cov);
        // Orient toward the cloud-frame origin.
        let oriented = if normal.dot(p) > 0.0 { -normal } else { normal };
        normals.push(Some(oriented));
    }
    out.normals = Some(normals);
    out
}

/// Unit eigenvector of the smallest eigenvalue of a symmetric 2x2 matrix.
fn minor_eigenvector(m: &Matrix2<f64>) -> Vector2<f64> {
    let a = m[(0, 0)];
    let b = m[(0, 1)];
    let c = m[(1, 1)];
    // Angle of the major axis; minor is perpendicular.
    let major_angle = 0.5 * (2.0 * b).atan2(a - c);
    let minor_angle = major_angle + std::f64::consts::FRAC_PI_2;
    Vector2::new(minor_angle.cos(), minor_angle.sin())
}

/// Keeps one point per grid cell of side `resolution` (first inserted wins).
pub fn voxel_decimate(cloud: &PointCloud2, resolution: f64) -> PointCloud2 {
    assert!(resolution > 0.0);
    let mut seen = std::collections::HashSet::new();
    let mut points = Vec::new();
    let mut normals = cloud.normals.as_ref().map(|_| Vec::new());
    for (i, p) in cloud.points.iter().enumerate() {
        let key = voxel_key(p, resolution);
        if seen.insert(key) {
            points.push(*p);
            if let Some(ns) = normals.as_mut() {
                ns.push(cloud.normals.as_ref().unwrap()[i]);
            }
        }
    }
    PointCloud2 { points, normals }
}

pub fn voxel_key(p: &Vector2<f64>, resolution: f64) -> (i64, i64) {
    (
        (p.x / resolution).floor() as i64,
        (p.y / resolution).floor() as i64,
    )
}
