use crate::geometry::{triangle_area, triangle_normal, Aabb, Vec3, DEGENERATE_AREA};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeshError {
    #[error("triangle {triangle} references vertex {index} but only {count} vertices exist")]
    IndexOutOfRange { triangle: usize, index: u32, count: usize },
    #[error("mesh has no usable triangles ({dropped} degenerate dropped)")]
    Empty { dropped: usize },
    #[error("mesh needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("vertex {0} is not finite")]
    NonFinite(usize),
}

/// Indexed triangle mesh in millimetres with per-triangle unit normals
/// derived from counter-clockwise winding.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    normals: Vec<Vec3>,
    dropped: usize,
}

impl TriangleMesh {
    /// Builds a mesh, dropping degenerate triangles. The number dropped is
    /// available from [`TriangleMesh::dropped_count`].
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self, MeshError> {
        if vertices.len() < 3 {
            return Err(MeshError::TooFewVertices(vertices.len()));
        }
        if let Some(i) = vertices.iter().position(|v| !v.is_finite()) {
            return Err(MeshError::NonFinite(i));
        }
        let mut kept = Vec::with_capacity(triangles.len());
        let mut normals = Vec::with_capacity(triangles.len());
        let mut dropped = 0;
        for (ti, tri) in triangles.into_iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i as usize >= vertices.len()) {
                return Err(MeshError::IndexOutOfRange { triangle: ti, index, count: vertices.len() });
            }
            let [a, b, c] = tri.map(|i| vertices[i as usize]);
            if triangle_area(a, b, c) <= DEGENERATE_AREA {
                dropped += 1;
                continue;
            }
            kept.push(tri);
            normals.push(triangle_normal(a, b, c).normalized());
        }
        if kept.is_empty() {
            return Err(MeshError::Empty { dropped });
        }
        Ok(Self { vertices, triangles: kept, normals, dropped })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn dropped_count(&self) -> usize {
        self.dropped
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    #[inline]
    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        self.triangles[i].map(|v| self.vertices[v as usize])
    }

    pub fn triangle_bounds(&self, i: usize) -> Aabb {
        Aabb::from_points(&self.triangle(i))
    }

    pub fn bounds(&self) -> Aabb {
        (0..self.len()).fold(Aabb::EMPTY, |b, i| b.union(self.triangle_bounds(i)))
    }

    pub fn area(&self) -> f64 {
        (0..self.len())
            .map(|i| {
                let [a, b, c] = self.triangle(i);
                triangle_area(a, b, c)
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drops_degenerate_and_checks_indices() {
        let v = vec![Vec3::ZERO, Vec3::X, Vec3::Y, Vec3::X * 2.0];
        let m = TriangleMesh::new(v.clone(), vec![[0, 1, 2], [0, 1, 3]]).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.dropped_count(), 1);
        assert_eq!(m.normals()[0], Vec3::Z);
        assert!(matches!(
            TriangleMesh::new(v.clone(), vec![[0, 1, 7]]),
            Err(MeshError::IndexOutOfRange { index: 7, .. })
        ));
        assert!(matches!(TriangleMesh::new(v, vec![[0, 1, 3]]), Err(MeshError::Empty { dropped: 1 })));
    }
}
