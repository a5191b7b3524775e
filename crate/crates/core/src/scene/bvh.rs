//! Bounding volume hierarchy over a triangle mesh, built with binned
//! surface-area-heuristic splits.

use super::mesh::TriangleMesh;
use crate::geometry::{triangle_hit, Aabb, Ray, Vec3};

const MAX_DEPTH: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvhParams {
    pub bins: usize,
    pub max_leaf_size: usize,
}

impl Default for BvhParams {
    fn default() -> Self {
        Self { bins: 16, max_leaf_size: 4 }
    }
}

/// Flattened node. Interior nodes store the left child at `index + 1` and
/// the right child in `offset`; leaves store a triangle range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvhNode {
    pub bounds: Aabb,
    /// Leaf: first triangle slot. Interior: right child index.
    pub offset: u32,
    /// Number of triangles; zero for interior nodes.
    pub count: u32,
    pub axis: u8,
}

impl BvhNode {
    pub fn is_leaf(&self) -> bool {
        self.count > 0
    }
}

/// Nearest triangle hit: distance and original triangle index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshHit {
    pub t: f64,
    pub triangle: usize,
}

impl MeshHit {
    /// Total order used for nearest-hit selection: smaller `t`, then the
    /// lower triangle index.
    #[inline]
    pub fn beats(&self, other: &MeshHit) -> bool {
        self.t < other.t || (self.t == other.t && self.triangle < other.triangle)
    }
}

#[derive(Debug, Clone)]
pub struct BvhTree {
    nodes: Vec<BvhNode>,
    /// Slot → original triangle index.
    order: Vec<u32>,
    /// Vertices of each slot, in traversal order.
    slots: Vec<[Vec3; 3]>,
}

struct PrimRef {
    bounds: Aabb,
    centroid: Vec3,
    index: u32,
}

impl BvhTree {
    pub fn build(mesh: &TriangleMesh) -> Self {
        Self::build_with(mesh, BvhParams::default())
    }

    pub fn build_with(mesh: &TriangleMesh, params: BvhParams) -> Self {
        assert!(!mesh.is_empty(), "BVH requires a non-empty mesh");
        let mut prims: Vec<PrimRef> = (0..mesh.len())
            .map(|i| {
                let bounds = mesh.triangle_bounds(i);
                PrimRef { bounds, centroid: bounds.centroid(), index: i as u32 }
            })
            .collect();
        let mut nodes = Vec::with_capacity(2 * mesh.len());
        build_recursive(&mut prims, 0, &mut nodes, &params);
        let order: Vec<u32> = prims.iter().map(|p| p.index).collect();
        let slots = order.iter().map(|&i| mesh.triangle(i as usize)).collect();
        let tree = Self { nodes, order, slots };
        assert!(tree.depth() < MAX_DEPTH, "BVH depth {} exceeds traversal stack", tree.depth());
        tree
    }

    pub fn nodes(&self) -> &[BvhNode] {
        &self.nodes
    }

    /// Slot → original triangle index permutation.
    pub fn order(&self) -> &[u32] {
        &self.order
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes[0].bounds
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[BvhNode], i: usize) -> usize {
            let n = &nodes[i];
            if n.is_leaf() {
                1
            } else {
                1 + go(nodes, i + 1).max(go(nodes, n.offset as usize))
            }
        }
        go(&self.nodes, 0)
    }

    /// Nearest hit within the ray range.
    pub fn intersect(&self, ray: &Ray) -> Option<MeshHit> {
        let inv = Vec3::new(1.0 / ray.direction.x, 1.0 / ray.direction.y, 1.0 / ray.direction.z);
        let neg = [inv.x < 0.0, inv.y < 0.0, inv.z < 0.0];
        let mut best: Option<MeshHit> = None;
        let mut probe = *ray;
        let mut stack = [0u32; MAX_DEPTH];
        let mut sp = 0usize;
        let mut current = 0usize;
        loop {
            let node = &self.nodes[current];
            if node.bounds.hit(ray.origin, inv, probe.t_min, probe.t_max).is_some() {
                if node.is_leaf() {
                    let start = node.offset as usize;
                    for slot in start..start + node.count as usize {
                        let [a, b, c] = self.slots[slot];
                        if let Some((t, ..)) = triangle_hit(&probe, a, b, c) {
                            let cand = MeshHit { t, triangle: self.order[slot] as usize };
                            if best.is_none_or(|b| cand.beats(&b)) {
                                best = Some(cand);
                                probe.t_max = t;
                            }
                        }
                    }
                } else {
                    // visit the near child first
                    let (first, second) = if neg[node.axis as usize] {
                        (node.offset as usize, current + 1)
                    } else {
                        (current + 1, node.offset as usize)
                    };
                    stack[sp] = second as u32;
                    sp += 1;
                    current = first;
                    continue;
                }
            }
            if sp == 0 {
                break;
            }
            sp -= 1;
            current = stack[sp] as usize;
        }
        best
    }

    /// Exhaustive nearest-hit reference using the same tie rule.
    pub fn intersect_linear(mesh: &TriangleMesh, ray: &Ray) -> Option<MeshHit> {
        let mut best: Option<MeshHit> = None;
        for i in 0..mesh.len() {
            let [a, b, c] = mesh.triangle(i);
            if let Some((t, ..)) = triangle_hit(ray, a, b, c) {
                let cand = MeshHit { t, triangle: i };
                if best.is_none_or(|b| cand.beats(&b)) {
                    best = Some(cand);
                }
            }
        }
        best
    }

    /// Checks the structural invariants: leaf boxes contain their triangles
    /// (within 1e-9), parents contain children, each triangle in one leaf.
    pub fn check_invariants(&self, mesh: &TriangleMesh) -> Result<(), String> {
        let mut seen = vec![0u32; mesh.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let n = &self.nodes[i];
            if n.is_leaf() {
                for slot in n.offset as usize..(n.offset + n.count) as usize {
                    let tri = self.order[slot] as usize;
                    seen[tri] += 1;
                    if !n.bounds.contains_box(&mesh.triangle_bounds(tri), 1e-9) {
                        return Err(format!("leaf {i} does not contain triangle {tri}"));
                    }
                }
            } else {
                for child in [i + 1, n.offset as usize] {
                    if !n.bounds.contains_box(&self.nodes[child].bounds, 1e-9) {
                        return Err(format!("node {i} does not contain child {child}"));
                    }
                    stack.push(child);
                }
            }
        }
        match seen.iter().position(|&c| c != 1) {
            Some(t) => Err(format!("triangle {t} appears in {} leaves", seen[t])),
            None => Ok(()),
        }
    }
}

fn build_recursive(prims: &mut [PrimRef], first: usize, nodes: &mut Vec<BvhNode>, params: &BvhParams) -> usize {
    let bounds = prims.iter().fold(Aabb::EMPTY, |b, p| b.union(p.bounds));
    let index = nodes.len();
    nodes.push(BvhNode { bounds, offset: first as u32, count: prims.len() as u32, axis: 0 });
    if prims.len() <= 1 {
        return index;
    }
    let centroids = prims.iter().fold(Aabb::EMPTY, |b, p| b.grow(p.centroid));
    let extent = centroids.extent();
    let axis = extent.max_dimension();

    let mid = if extent[axis] <= 0.0 {
        if prims.len() <= params.max_leaf_size {
            return index;
        }
        // coincident centroids: split the list in half
        prims.len() / 2
    } else {
        match sah_split(prims, &bounds, &centroids, axis, params) {
            Some(m) => m,
            None => return index,
        }
    };

    let left = build_recursive(&mut prims[..mid], first, nodes, params);
    debug_assert_eq!(left, index + 1);
    let right = build_recursive(&mut prims[mid..], first + mid, nodes, params);
    nodes[index].offset = right as u32;
    nodes[index].count = 0;
    nodes[index].axis = axis as u8;
    index
}

/// Partitions `prims` at the best SAH bin boundary and returns the split
/// point, or `None` when a leaf is cheaper and allowed.
fn sah_split(prims: &mut [PrimRef], bounds: &Aabb, centroids: &Aabb, axis: usize, params: &BvhParams) -> Option<usize> {
    let nb = params.bins;
    let lo = centroids.min[axis];
    let scale = nb as f64 / (centroids.max[axis] - lo);
    let bin_of = |c: f64| (((c - lo) * scale) as usize).min(nb - 1);

    let mut counts = vec![0usize; nb];
    let mut boxes = vec![Aabb::EMPTY; nb];
    for p in prims.iter() {
        let b = bin_of(p.centroid[axis]);
        counts[b] += 1;
        boxes[b] = boxes[b].union(p.bounds);
    }

    // sweep from the right to get suffix areas
    let mut right_area = vec![0.0; nb];
    let mut right_count = vec![0usize; nb];
    let (mut acc_box, mut acc_n) = (Aabb::EMPTY, 0);
    for i in (1..nb).rev() {
        acc_box = acc_box.union(boxes[i]);
        acc_n += counts[i];
        right_area[i] = acc_box.surface_area();
        right_count[i] = acc_n;
    }
    let (mut best_cost, mut best_bin) = (f64::INFINITY, 0);
    let (mut left_box, mut left_n) = (Aabb::EMPTY, 0);
    for i in 0..nb - 1 {
        left_box = left_box.union(boxes[i]);
        left_n += counts[i];
        let rn = right_count[i + 1];
        if left_n == 0 || rn == 0 {
            continue;
        }
        let cost = left_box.surface_area() * left_n as f64 + right_area[i + 1] * rn as f64;
        if cost < best_cost {
            best_cost = cost;
            best_bin = i;
        }
    }

    let leaf_cost = bounds.surface_area() * prims.len() as f64;
    // traversal cost of one box test relative to a triangle test
    let split_cost = 0.125 * bounds.surface_area() + best_cost;
    if prims.len() <= params.max_leaf_size && split_cost >= leaf_cost {
        return None;
    }
    if !best_cost.is_finite() {
        return Some(prims.len() / 2);
    }

    // stable sort on the side flag keeps construction deterministic
    prims.sort_by_key(|p| bin_of(p.centroid[axis]) > best_bin);
    Some(prims.iter().take_while(|p| bin_of(p.centroid[axis]) <= best_bin).count())
}
