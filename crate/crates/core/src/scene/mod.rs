//! Sample geometry: implicit spheres and planes, BVH-indexed triangle
//! meshes, and scene-level nearest-hit queries.

pub mod bvh;
pub mod heightfield;
pub mod mesh;
pub mod stl;

pub use bvh::{BvhParams, BvhTree, MeshHit};
pub use heightfield::{
    add_micro_roughness, generate_surface, mesh_heightfield, mesh_heightfield_cells, random_cell_mask, GridSpec, Heightfield, HeightfieldError, MicroRoughnessParams,
    SurfaceKind,
};
pub use mesh::{MeshError, TriangleMesh};
pub use stl::{load_stl, parse_stl, StlError, StlMesh};

use crate::geometry::{intersect_plane, intersect_sphere, HitRecord, Ray, RigidTransform, Vec3};
use crate::optics::{MaterialError, MaterialModel};
use std::sync::Arc;

/// A triangle mesh with its acceleration structure.
#[derive(Debug, Clone)]
pub struct MeshAccel {
    pub mesh: TriangleMesh,
    pub bvh: BvhTree,
}

impl MeshAccel {
    pub fn new(mesh: TriangleMesh) -> Self {
        let bvh = BvhTree::build(&mesh);
        Self { mesh, bvh }
    }
}

/// Object-space geometry.
#[derive(Debug, Clone)]
pub enum Geometry {
    Sphere { center: Vec3, radius: f64 },
    Plane { point: Vec3, normal: Vec3 },
    Mesh(Arc<MeshAccel>),
}

impl Geometry {
    pub fn mesh(mesh: TriangleMesh) -> Self {
        Geometry::Mesh(Arc::new(MeshAccel::new(mesh)))
    }

    /// Nearest hit in object space; `object_id` is left at zero.
    pub fn intersect(&self, ray: &Ray) -> Option<HitRecord> {
        match self {
            Geometry::Sphere { center, radius } => intersect_sphere(ray, *center, *radius),
            Geometry::Plane { point, normal } => intersect_plane(ray, *point, *normal),
            Geometry::Mesh(accel) => {
                let hit = accel.bvh.intersect(ray)?;
                let mut rec = HitRecord::oriented(ray, hit.t, accel.mesh.normals()[hit.triangle]);
                rec.prim_id = hit.triangle;
                Some(rec)
            }
        }
    }
}

/// Geometry placed in instrument space by an object-to-world transform.
#[derive(Debug, Clone)]
pub struct SceneObject {
    pub geometry: Geometry,
    pub material_id: usize,
    pub transform: RigidTransform,
}

impl SceneObject {
    pub fn new(geometry: Geometry, material_id: usize) -> Self {
        Self { geometry, material_id, transform: RigidTransform::IDENTITY }
    }

    pub fn with_transform(mut self, transform: RigidTransform) -> Self {
        self.transform = transform;
        self
    }

    pub fn intersect(&self, ray: &Ray) -> Option<HitRecord> {
        if self.transform.is_identity() {
            return self.geometry.intersect(ray);
        }
        let local = self.transform.inverse().apply_ray(ray);
        self.geometry.intersect(&local).map(|h| self.transform.apply_hit(&h))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("object {object} refers to material {material} but only {count} are registered")]
    UnknownMaterial { object: usize, material: usize, count: usize },
    #[error("material {index}: {source}")]
    Material { index: usize, source: MaterialError },
    #[error("object {0}: sphere radius must be positive")]
    SphereRadius(usize),
    #[error("object {0}: plane normal must be unit length")]
    PlaneNormal(usize),
}

#[derive(Debug, Clone, Default)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub materials: Vec<MaterialModel>,
}

impl Scene {
    pub fn new(objects: Vec<SceneObject>, materials: Vec<MaterialModel>) -> Result<Self, SceneError> {
        let scene = Self { objects, materials };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for (index, m) in self.materials.iter().enumerate() {
            m.validate().map_err(|source| SceneError::Material { index, source })?;
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.material_id >= self.materials.len() {
                return Err(SceneError::UnknownMaterial { object: i, material: o.material_id, count: self.materials.len() });
            }
            match &o.geometry {
                Geometry::Sphere { radius, .. } if !(*radius > 0.0) => return Err(SceneError::SphereRadius(i)),
                Geometry::Plane { normal, .. } if !normal.is_unit() => return Err(SceneError::PlaneNormal(i)),
                _ => {}
            }
        }
        Ok(())
    }

    /// Copy of the scene with every object moved by `offset` (mm).
    pub fn translated(&self, offset: Vec3) -> Scene {
        let shift = RigidTransform::translation(offset);
        Scene {
            objects: self
                .objects
                .iter()
                .map(|o| SceneObject { transform: shift.compose(&o.transform), ..o.clone() })
                .collect(),
            materials: self.materials.clone(),
        }
    }

    pub fn intersect(&self, ray: &Ray) -> Option<(HitRecord, usize)> {
        intersect_scene(ray, &self.objects)
    }
}

/// Globally nearest hit; ties resolve to the lowest object index, then the
/// lowest triangle index within a mesh.
pub fn intersect_scene(ray: &Ray, objects: &[SceneObject]) -> Option<(HitRecord, usize)> {
    let mut probe = *ray;
    let mut best: Option<(HitRecord, usize)> = None;
    for (id, obj) in objects.iter().enumerate() {
        if let Some(mut h) = obj.intersect(&probe) {
            if best.as_ref().is_none_or(|(b, _)| h.t < b.t) {
                h.object_id = id;
                probe.t_max = h.t;
                best = Some((h, obj.material_id));
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Mat3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn materials() -> Vec<MaterialModel> {
        vec![MaterialModel::Absorber, MaterialModel::Mirror]
    }

    #[test]
    fn nearest_of_two_planes() {
        let planes = [2.0, 1.0]
            .map(|z| SceneObject::new(Geometry::Plane { point: Vec3::new(0.0, 0.0, z), normal: Vec3::Z }, 0));
        let (h, _) = intersect_scene(&Ray::new(Vec3::ZERO, Vec3::Z), &planes).unwrap();
        assert_eq!(h.point.z, 1.0);
        assert_eq!(h.object_id, 1);
    }

    #[test]
    fn empty_scene_misses() {
        assert!(intersect_scene(&Ray::new(Vec3::ZERO, Vec3::Z), &[]).is_none());
    }

    #[test]
    fn coincident_objects_tie_to_lowest_id() {
        let plane = SceneObject::new(Geometry::Plane { point: Vec3::Z, normal: Vec3::Z }, 0);
        let objs = vec![plane.clone(), SceneObject { material_id: 1, ..plane }];
        let (h, m) = intersect_scene(&Ray::new(Vec3::ZERO, Vec3::Z), &objs).unwrap();
        assert_eq!((h.object_id, m), (0, 0));
    }

    #[test]
    fn validation() {
        let bad = SceneObject::new(Geometry::Sphere { center: Vec3::ZERO, radius: 1.0 }, 5);
        assert!(matches!(Scene::new(vec![bad], materials()), Err(SceneError::UnknownMaterial { .. })));
        let bad = SceneObject::new(Geometry::Plane { point: Vec3::ZERO, normal: Vec3::new(0.0, 0.0, 2.0) }, 0);
        assert!(matches!(Scene::new(vec![bad], materials()), Err(SceneError::PlaneNormal(0))));
        let bad = SceneObject::new(Geometry::Sphere { center: Vec3::ZERO, radius: 0.0 }, 0);
        assert!(matches!(Scene::new(vec![bad], materials()), Err(SceneError::SphereRadius(0))));
        assert!(Scene::new(vec![], vec![MaterialModel::HgSurface { g: 1.5 }]).is_err());
    }

    #[test]
    fn translation_moves_hits() {
        let scene = Scene::new(
            vec![SceneObject::new(Geometry::Sphere { center: Vec3::ZERO, radius: 1.0 }, 0)],
            materials(),
        )
        .unwrap();
        let moved = scene.translated(Vec3::new(0.0, 0.0, 0.5));
        let ray = Ray::new(Vec3::new(0.0, 0.0, 10.0), -Vec3::Z);
        let (h, _) = moved.intersect(&ray).unwrap();
        assert!((h.t - 8.5).abs() < 1e-12);
    }

    fn brute_force(ray: &Ray, objects: &[SceneObject]) -> Option<(f64, usize, usize)> {
        let mut best: Option<(f64, usize, usize)> = None;
        for (id, o) in objects.iter().enumerate() {
            let local = o.transform.inverse().apply_ray(ray);
            let cand = match &o.geometry {
                Geometry::Mesh(a) => BvhTree::intersect_linear(&a.mesh, &local).map(|h| (h.t, id, h.triangle)),
                g => g.intersect(&local).map(|h| (h.t, id, 0)),
            };
            if let Some(c) = cand {
                if best.is_none_or(|b| c.0 < b.0) {
                    best = Some(c);
                }
            }
        }
        best
    }

    #[test]
    fn mixed_scene_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mesh = crate::scene::bvh::tests::random_mesh(&mut rng, 500, 1.0, 0.3);
        let accel = Arc::new(MeshAccel::new(mesh));
        let rot = RigidTransform::new(Mat3::rotation(Vec3::new(1.0, 2.0, 0.5).normalized(), 0.7), Vec3::new(0.2, -0.1, 0.3))
            .unwrap();
        let objects = vec![
            SceneObject::new(Geometry::Mesh(accel.clone()), 0),
            SceneObject::new(Geometry::Sphere { center: Vec3::new(0.5, 0.5, 0.0), radius: 0.4 }, 1),
            SceneObject::new(Geometry::Plane { point: Vec3::new(0.0, 0.0, -1.5), normal: Vec3::Z }, 0),
            SceneObject::new(Geometry::Mesh(accel), 1).with_transform(rot),
        ];
        let mut hits = 0;
        for _ in 0..10_000 {
            let o = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(2.0..4.0));
            let target = Vec3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.0));
            let ray = Ray::new(o, (target - o).normalized());
            let got = intersect_scene(&ray, &objects).map(|(h, _)| (h.t, h.object_id, h.prim_id));
            let want = brute_force(&ray, &objects);
            match (got, want) {
                (Some(g), Some(w)) => {
                    assert_eq!((g.1, g.2), (w.1, w.2));
                    assert!((g.0 - w.0).abs() < 1e-9);
                    hits += 1;
                }
                (None, None) => {}
                other => panic!("mismatch {other:?}"),
            }
        }
        assert!(hits > 5000);
    }
}
