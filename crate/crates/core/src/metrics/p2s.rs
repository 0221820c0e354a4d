//! Exact point-to-triangle-mesh distances, brute force and BVH-accelerated.
//!
//! Both paths evaluate the same per-triangle function and take a minimum, so
//! they return bit-identical distances. The BVH only skips a box when its
//! lower bound is strictly (with margin) above the best distance found.

use crate::body_model::Vec3;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn validate(&self) -> Result<()> {
        if self.faces.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let n = self.vertices.len();
        for f in &self.faces {
            for &i in f {
                if i >= n {
                    return Err(Error::IndexOutOfRange { index: i, len: n });
                }
            }
        }
        Ok(())
    }

    fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }
}

fn closest_on_segment(p: &Vec3, a: &Vec3, b: &Vec3) -> Vec3 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return *a;
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    a + ab * t
}

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    if ab.cross(&ac).norm_squared() == 0.0 {
        let cands = [
            closest_on_segment(p, a, b),
            closest_on_segment(p, b, c),
            closest_on_segment(p, c, a),
        ];
        return cands
            .into_iter()
            .min_by(|x, y| (p - x).norm_squared().total_cmp(&(p - y).norm_squared()))
            .unwrap_or(*a);
    }
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

pub fn point_triangle_distance_sq(p: &Vec3, tri: &[Vec3; 3]) -> f64 {
    (p - closest_point_on_triangle(p, &tri[0], &tri[1], &tri[2])).norm_squared()
}

/// Minimum distance from `p` to any face, checking every face.
pub fn distance_brute_force(mesh: &TriMesh, p: &Vec3) -> f64 {
    (0..mesh.faces.len())
        .map(|f| point_triangle_distance_sq(p, &mesh.triangle(f)))
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vec3,
    max: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn distance_sq(&self, p: &Vec3) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let g = (self.min[k] - p[k]).max(p[k] - self.max[k]).max(0.0);
            d += g * g;
        }
        d
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

const LEAF_SIZE: usize = 4;
/// Relative slack when pruning, larger than any rounding in the distance.
const PRUNE_SLACK: f64 = 1e-9;

/// Bounding-volume hierarchy over the faces of a [`TriMesh`].
#[derive(Debug, Clone)]
pub struct Bvh<'a> {
    mesh: &'a TriMesh,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> Bvh<'a> {
    pub fn build(mesh: &'a TriMesh) -> Result<Self> {
        mesh.validate()?;
        let centroids: Vec<Vec3> = (0..mesh.faces.len())
            .map(|f| {
                let t = mesh.triangle(f);
                (t[0] + t[1] + t[2]) / 3.0
            })
            .collect();
        let mut bvh = Bvh {
            mesh,
            order: (0..mesh.faces.len()).collect(),
            nodes: Vec::new(),
        };
        bvh.build_node(&centroids, 0, mesh.faces.len());
        Ok(bvh)
    }

    fn build_node(&mut self, centroids: &[Vec3], start: usize, end: usize) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &f in &self.order[start..end] {
            for v in self.mesh.triangle(f) {
                bounds.grow(&v);
            }
            cbounds.grow(&centroids[f]);
        }
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { bounds, start, end });
            return id;
        }
        let extent = cbounds.max - cbounds.min;
        let axis = extent.imax();
        let mid = (start + end) / 2;
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |&a, &b| centroids[a][axis].total_cmp(&centroids[b][axis]));
        self.nodes.push(Node::Leaf { bounds, start, end });
        let left = self.build_node(centroids, start, mid);
        let right = self.build_node(centroids, mid, end);
        self.nodes[id] = Node::Inner { bounds, left, right };
        id
    }

    /// Same value as [`distance_brute_force`], bit for bit.
    pub fn distance(&self, p: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.bounds().distance_sq(p) > best * (1.0 + PRUNE_SLACK) {
                continue;
            }
            match *node {
                Node::Leaf { start, end, .. } => {
                    for &f in &self.order[start..end] {
                        best = best.min(point_triangle_distance_sq(p, &self.mesh.triangle(f)));
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[left].bounds().distance_sq(p);
                    let dr = self.nodes[right].bounds().distance_sq(p);
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        best.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn big_triangle() -> TriMesh {
        TriMesh {
            vertices: vec![
                Vec3::new(-10.0, -10.0, 0.0),
                Vec3::new(10.0, -10.0, 0.0),
                Vec3::new(0.0, 10.0, 0.0),
            ],
            faces: vec![[0, 1, 2]],
        }
    }

    #[test]
    fn height_above_interior() {
        let m = big_triangle();
        assert!((distance_brute_force(&m, &Vec3::new(0.5, 0.25, 3.0)) - 3.0).abs() < 1e-12);
        assert!(distance_brute_force(&m, &Vec3::new(0.5, 0.25, 0.0)) < 1e-12);
    }

    #[test]
    fn vertex_and_edge_regions() {
        let m = big_triangle();
        let d = distance_brute_force(&m, &Vec3::new(-13.0, -14.0, 0.0));
        assert!((d - 5.0).abs() < 1e-12);
        let d = distance_brute_force(&m, &Vec3::new(0.0, -12.0, 0.0));
        assert!((d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_triangle_uses_edges() {
        let m = TriMesh {
            vertices: vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)],
            faces: vec![[0, 1, 2]],
        };
        assert!((distance_brute_force(&m, &Vec3::new(1.5, 1.0, 0.0)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_mesh_is_rejected() {
        let m = TriMesh {
            vertices: vec![Vec3::zeros()],
            faces: vec![],
        };
        assert!(matches!(Bvh::build(&m), Err(Error::EmptyMesh)));
    }

    pub(crate) fn random_mesh(rng: &mut ChaCha8Rng, faces: usize) -> TriMesh {
        let nv = faces + 2;
        let vertices = (0..nv)
            .map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let faces = (0..faces)
            .map(|_| {
                [
                    rng.random_range(0..nv),
                    rng.random_range(0..nv),
                    rng.random_range(0..nv),
                ]
            })
            .collect();
        TriMesh { vertices, faces }
    }

    #[test]
    fn bvh_equals_brute_force_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let nf = rng.random_range(1..=200);
            let mesh = random_mesh(&mut rng, nf);
            let bvh = Bvh::build(&mesh).unwrap();
            for _ in 0..30 {
                let p = Vec3::from_fn(|_, _| rng.random_range(-1.5..1.5));
                assert_eq!(bvh.distance(&p).to_bits(), distance_brute_force(&mesh, &p).to_bits());
            }
        }
    }
}
