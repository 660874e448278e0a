use crate::math::{Aabb, DVec3};
use crate::rig::CoarseMesh;

const LEAF_SIZE: usize = 4;

#[derive(Clone, Debug)]
struct Node {
    bounds: Aabb,
    /// Leaf: first index into `order`; inner: index of the left child
    /// (the right child follows the left subtree).
    start: u32,
    /// Leaf: triangle count; inner: 0.
    count: u32,
    right: u32,
}

/// Closest intersection along a ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub face: u32,
    /// Barycentrics of the hit point.
    pub bary: [f64; 3],
}

/// Median-split bounding volume hierarchy over mesh triangles.
#[derive(Clone, Debug)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
    tris: Vec<[DVec3; 3]>,
}

/// Möller–Trumbore. Returns `(t, u, v)` for hits with `t_min < t < t_max`.
pub fn intersect_triangle(tri: &[DVec3; 3], origin: DVec3, dir: DVec3, t_min: f64, t_max: f64) -> Option<(f64, f64, f64)> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(e2);
    let det = e1.dot(p);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = dir.dot(q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(q) * inv;
    (t > t_min && t < t_max).then_some((t, u, v))
}

fn front_facing(tri: &[DVec3; 3], dir: DVec3) -> bool {
    (tri[1] - tri[0]).cross(tri[2] - tri[0]).dot(dir) < 0.0
}

fn padded(b: Aabb) -> Aabb {
    let pad = DVec3::splat(1e-9 * (b.extent().max_element() + 1.0));
    Aabb { min: b.min - pad, max: b.max + pad }
}

impl Bvh {
    pub fn build(mesh: &CoarseMesh) -> Bvh {
        let tris: Vec<[DVec3; 3]> = (0..mesh.faces.len()).map(|f| mesh.triangle(f)).collect();
        let mut order: Vec<u32> = (0..tris.len() as u32).collect();
        let mut bvh = Bvh { nodes: Vec::new(), order: Vec::new(), tris };
        if !bvh.tris.is_empty() {
            bvh.split(&mut order, 0);
        }
        bvh.order = order;
        bvh
    }

    fn tri_bounds(&self, f: u32) -> Aabb {
        Aabb::from_points(self.tris[f as usize])
    }

    fn split(&mut self, items: &mut [u32], offset: usize) -> u32 {
        let bounds = items.iter().fold(Aabb::EMPTY, |b, &f| b.union(&self.tri_bounds(f)));
        let id = self.nodes.len() as u32;
        self.nodes.push(Node { bounds, start: offset as u32, count: items.len() as u32, right: 0 });
        if items.len() <= LEAF_SIZE {
            return id;
        }
        let axis = bounds.extent().max_position();
        let centroid = |f: u32| self.tris[f as usize].iter().map(|p| p[axis]).sum::<f64>();
        items.sort_by(|&a, &b| centroid(a).total_cmp(&centroid(b)).then(a.cmp(&b)));
        let mid = items.len() / 2;
        let (l, r) = items.split_at_mut(mid);
        let left = self.split(l, offset);
        let right = self.split(r, offset + mid);
        let node = &mut self.nodes[id as usize];
        node.start = left;
        node.count = 0;
        node.right = right;
        id
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes.first().map(|n| n.bounds).unwrap_or(Aabb::EMPTY)
    }

    pub fn face_count(&self) -> usize {
        self.tris.len()
    }

    pub fn depth(&self) -> usize {
        fn go(b: &Bvh, n: u32) -> usize {
            let node = &b.nodes[n as usize];
            if node.count > 0 {
                1
            } else {
                1 + go(b, node.start).max(go(b, node.right))
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            go(self, 0)
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.count > 0).count()
    }

    /// Every triangle appears in exactly one leaf and child boxes lie inside
    /// their parents.
    pub fn check_structure(&self) -> bool {
        let mut seen = vec![0u32; self.tris.len()];
        for n in &self.nodes {
            if n.count > 0 {
                for &f in &self.order[n.start as usize..(n.start + n.count) as usize] {
                    seen[f as usize] += 1;
                    if !n.bounds.contains(&self.tri_bounds(f)) {
                        return false;
                    }
                }
            } else if !n.bounds.contains(&self.nodes[n.start as usize].bounds) || !n.bounds.contains(&self.nodes[n.right as usize].bounds) {
                return false;
            }
        }
        seen.iter().all(|&c| c == 1)
    }

    fn visit(&self, origin: DVec3, dir: DVec3, t_min: f64, mut t_max: f64, mut leaf: impl FnMut(u32, f64) -> Option<f64>) {
        if self.nodes.is_empty() {
            return;
        }
        let inv = dir.recip();
        let mut stack = vec![0u32];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n as usize];
            if padded(node.bounds).ray_interval(origin, inv, t_min, t_max).is_none() {
                continue;
            }
            if node.count > 0 {
                for &f in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    match leaf(f, t_max) {
                        Some(t) if t < 0.0 => return,
                        Some(t) => t_max = t,
                        None => {}
                    }
                }
            } else {
                stack.push(node.right);
                stack.push(node.start);
            }
        }
    }

    /// Any hit in `(t_min, t_max)` on a triangle not in `skip`.
    pub fn occluded(&self, origin: DVec3, dir: DVec3, t_min: f64, t_max: f64, skip: &[u32]) -> bool {
        let mut hit = false;
        self.visit(origin, dir, t_min, t_max, |f, tm| {
            if skip.contains(&f) {
                return None;
            }
            intersect_triangle(&self.tris[f as usize], origin, dir, t_min, tm).map(|_| {
                hit = true;
                -1.0
            })
        });
        hit
    }

    /// [`Bvh::occluded`] counting only triangles whose winding faces the ray
    /// origin; rays leaving a closed surface ignore its far side from within.
    pub fn occluded_front(&self, origin: DVec3, dir: DVec3, t_min: f64, t_max: f64, skip: &[u32]) -> bool {
        let mut hit = false;
        self.visit(origin, dir, t_min, t_max, |f, tm| {
            let tri = &self.tris[f as usize];
            if skip.contains(&f) || !front_facing(tri, dir) {
                return None;
            }
            intersect_triangle(tri, origin, dir, t_min, tm).map(|_| {
                hit = true;
                -1.0
            })
        });
        hit
    }

    pub fn closest_hit(&self, origin: DVec3, dir: DVec3, t_min: f64, t_max: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        self.visit(origin, dir, t_min, t_max, |f, tm| {
            let (t, u, v) = intersect_triangle(&self.tris[f as usize], origin, dir, t_min, tm)?;
            best = Some(Hit { t, face: f, bary: [1.0 - u - v, u, v] });
            Some(t)
        });
        best
    }

    /// All-triangle loop with the same intersection test as [`Bvh::occluded`].
    pub fn occluded_brute_force(&self, origin: DVec3, dir: DVec3, t_min: f64, t_max: f64, skip: &[u32]) -> bool {
        self.tris
            .iter()
            .enumerate()
            .any(|(f, tri)| !skip.contains(&(f as u32)) && intersect_triangle(tri, origin, dir, t_min, t_max).is_some())
    }
}
