//! Versioned run configuration (TOML) and its translation into instrument,
//! scene and job objects.

use crate::focus::ReconstructionParams;
use crate::geometry::Vec3;
use crate::instrument::{build_default_instrument, InstrumentConfig, InstrumentError, InstrumentParams};
use crate::optics::MaterialModel;
use crate::psf::Psf;
use crate::render::{DEFAULT_BATCH_SIZE, DEFAULT_MAX_DEPTH};
use crate::scan::ScanConfig;
use crate::scene::{
    add_micro_roughness, generate_surface, load_stl, mesh_heightfield, mesh_heightfield_cells, random_cell_mask, Geometry, GridSpec,
    Heightfield, MicroRoughnessParams, Scene, SceneObject, SurfaceKind,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: Box<toml::de::Error> },
}

fn invalid(field: impl Into<String>, message: impl ToString) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: message.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Design parameters of the generated microscope.
    #[serde(default)]
    pub instrument: InstrumentParams,
    /// Explicit instrument description overriding `instrument`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instrument_file: Option<PathBuf>,
    #[serde(default)]
    pub render: RenderParams,
    pub materials: Vec<MaterialModel>,
    pub objects: Vec<ObjectSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanConfig>,
    #[serde(default)]
    pub reconstruction: ReconstructionParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    /// Reference heightfield file for measurement comparison.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    /// Use the nominal shape of this generated-surface object as reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_object: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psf: Option<PsfSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderParams {
    pub n_rays: u64,
    pub seed: u64,
    pub max_depth: u32,
    pub batch_size: u64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self { n_rays: 1_000_000, seed: 0, max_depth: DEFAULT_MAX_DEPTH, batch_size: DEFAULT_BATCH_SIZE }
    }
}

/// Full-factorial sweep over ray counts and the HG roughness of one
/// material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub n_rays: Vec<u64>,
    pub g: Vec<f64>,
    /// Material whose `g` is varied.
    #[serde(default)]
    pub material: usize,
    /// Independent renders per cell for the noise estimate.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

fn default_repeats() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsfSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<PathBuf>,
    /// Image (16-bit PNG with sidecar) to post-process.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// Binary reflectance pattern: cells where the mask is set take
/// `material` instead of the object material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSpec {
    pub material: usize,
    /// Correlation length of the pattern in grid cells.
    pub correlation: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectSpec {
    /// Generated heightfield in µm, centred on the optical axis.
    Surface {
        surface: SurfaceKind,
        grid: GridSpec,
        material: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        roughness: Option<MicroRoughnessParams>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pattern: Option<PatternSpec>,
    },
    /// Heightfield text file in µm.
    Heightfield {
        path: PathBuf,
        material: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        roughness: Option<MicroRoughnessParams>,
    },
    /// STL mesh; coordinates are multiplied by `scale` to obtain mm and then
    /// shifted by `offset` (mm).
    Stl {
        path: PathBuf,
        material: usize,
        #[serde(default = "unit_scale")]
        scale: f64,
        #[serde(default)]
        offset: Vec3,
    },
    Sphere { center: Vec3, radius: f64, material: usize },
    Plane { point: Vec3, normal: Vec3, material: usize },
}

fn unit_scale() -> f64 {
    1.0
}

impl ObjectSpec {
    pub fn material(&self) -> usize {
        match self {
            ObjectSpec::Surface { material, .. }
            | ObjectSpec::Heightfield { material, .. }
            | ObjectSpec::Stl { material, .. }
            | ObjectSpec::Sphere { material, .. }
            | ObjectSpec::Plane { material, .. } => *material,
        }
    }

    fn path(&self) -> Option<&Path> {
        match self {
            ObjectSpec::Heightfield { path, .. } | ObjectSpec::Stl { path, .. } => Some(path),
            _ => None,
        }
    }
}

/// What a command needs from the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Render,
    Sweep,
    Measure,
    Psf,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_path_buf(), source: Box::new(e) })
    }

    /// Reads a configuration; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_toml(&text, path)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for o in &mut self.objects {
            match o {
                ObjectSpec::Heightfield { path, .. } | ObjectSpec::Stl { path, .. } => fix(path),
                _ => {}
            }
        }
        if let Some(p) = &mut self.instrument_file {
            fix(p);
        }
        if let Some(p) = &mut self.reference {
            fix(p);
        }
        if let Some(psf) = &mut self.psf {
            if let Some(k) = &mut psf.kernel {
                fix(k);
            }
            if let Some(i) = &mut psf.input {
                fix(i);
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serialisable")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Checks everything a run in `mode` needs, reporting the first problem
    /// with its field path. No rendering happens here.
    pub fn validate(&self, mode: Mode) -> Result<(), ConfigError> {
        if self.version != SCHEMA_VERSION {
            return Err(invalid("version", format!("unsupported schema version {}, expected {SCHEMA_VERSION}", self.version)));
        }
        match &self.instrument_file {
            Some(p) if !p.exists() => return Err(invalid("instrument_file", format!("file not found: {}", p.display()))),
            Some(_) => {}
            None => self.instrument.validate().map_err(|e| prefix_instrument("instrument", e))?,
        }
        let r = &self.render;
        if r.n_rays == 0 {
            return Err(invalid("render.n_rays", "must be at least 1"));
        }
        if r.max_depth == 0 {
            return Err(invalid("render.max_depth", "must be at least 1"));
        }
        if r.batch_size == 0 {
            return Err(invalid("render.batch_size", "must be at least 1"));
        }
        for (i, m) in self.materials.iter().enumerate() {
            m.validate().map_err(|e| invalid(format!("materials[{i}]"), e))?;
        }
        let n_mat = self.materials.len();
        let check_mat = |field: String, m: usize| {
            if m >= n_mat {
                Err(invalid(field, format!("material {m} does not exist ({n_mat} defined)")))
            } else {
                Ok(())
            }
        };
        if self.objects.is_empty() && mode != Mode::Psf {
            return Err(invalid("objects", "at least one object is required"));
        }
        for (i, o) in self.objects.iter().enumerate() {
            let f = |name: &str| format!("objects[{i}].{name}");
            check_mat(f("material"), o.material())?;
            if let Some(p) = o.path() {
                if !p.exists() {
                    return Err(invalid(f("path"), format!("file not found: {}", p.display())));
                }
            }
            match o {
                ObjectSpec::Surface { surface, grid, roughness, pattern, .. } => {
                    grid.validate().map_err(|e| invalid(f("grid"), e))?;
                    let probe = GridSpec { nx: 3, ny: 3, ..*grid };
                    generate_surface(surface, probe).map_err(|e| invalid(f("surface"), e))?;
                    if let Some(rp) = roughness {
                        rp.validate().map_err(|e| invalid(f("roughness"), e))?;
                    }
                    if let Some(p) = pattern {
                        check_mat(f("pattern.material"), p.material)?;
                        if !(p.correlation > 0.0) {
                            return Err(invalid(f("pattern.correlation"), "must be positive"));
                        }
                    }
                }
                ObjectSpec::Heightfield { roughness: Some(rp), .. } => rp.validate().map_err(|e| invalid(f("roughness"), e))?,
                ObjectSpec::Stl { scale, .. } if !(*scale > 0.0) => return Err(invalid(f("scale"), "must be positive")),
                ObjectSpec::Sphere { radius, .. } if !(*radius > 0.0) => return Err(invalid(f("radius"), "must be positive")),
                ObjectSpec::Plane { normal, .. } if !(normal.length() > 0.0) => return Err(invalid(f("normal"), "must be non-zero")),
                _ => {}
            }
        }
        if let Some(p) = &self.reference {
            if !p.exists() {
                return Err(invalid("reference", format!("file not found: {}", p.display())));
            }
        }
        if let Some(k) = self.reference_object {
            if !matches!(self.objects.get(k), Some(ObjectSpec::Surface { .. })) {
                return Err(invalid("reference_object", format!("object {k} is not a generated surface")));
            }
        }
        if let Some(s) = &self.sweep {
            if s.n_rays.is_empty() {
                return Err(invalid("sweep.n_rays", "must not be empty"));
            }
            if s.g.is_empty() {
                return Err(invalid("sweep.g", "must not be empty"));
            }
            if let Some(i) = s.n_rays.iter().position(|&n| n == 0) {
                return Err(invalid(format!("sweep.n_rays[{i}]"), "must be at least 1"));
            }
            if let Some(i) = s.g.iter().position(|g| !(0.0..=1.0).contains(g)) {
                return Err(invalid(format!("sweep.g[{i}]"), "must lie in [0, 1]"));
            }
            if !matches!(self.materials.get(s.material), Some(MaterialModel::HgSurface { .. })) {
                return Err(invalid("sweep.material", format!("material {} is not an hg_surface", s.material)));
            }
            if s.repeats < 2 {
                return Err(invalid("sweep.repeats", "need at least 2 renders per cell"));
            }
        }
        if let Some(s) = &self.scan {
            s.validate().map_err(|e| invalid("scan", e))?;
        }
        let w = self.reconstruction.window;
        if w < 3 || w % 2 == 0 {
            return Err(invalid("reconstruction.window", "must be odd and at least 3"));
        }
        if !(self.reconstruction.prominence >= 0.0) {
            return Err(invalid("reconstruction.prominence", "must be non-negative"));
        }
        if !(self.reconstruction.curve_smoothing >= 0.0) {
            return Err(invalid("reconstruction.curve_smoothing", "must be non-negative"));
        }
        if let Some(p) = &self.psf {
            self.psf_model_checked(p)?;
        }
        match mode {
            Mode::Sweep if self.sweep.is_none() => Err(invalid("sweep", "sweep mode needs a [sweep] section")),
            Mode::Measure if self.scan.is_none() => Err(invalid("scan", "measurement needs a [scan] section")),
            Mode::Psf => match &self.psf {
                None => Err(invalid("psf", "psf mode needs a [psf] section")),
                Some(PsfSpec { input: None, .. }) => Err(invalid("psf.input", "no input image given")),
                Some(PsfSpec { input: Some(p), .. }) if !p.exists() => {
                    Err(invalid("psf.input", format!("file not found: {}", p.display())))
                }
                _ => Ok(()),
            },
            _ => Ok(()),
        }
    }

    fn psf_model_checked(&self, p: &PsfSpec) -> Result<Psf, ConfigError> {
        match (p.gaussian_sigma, &p.kernel) {
            (Some(sigma), None) => {
                let psf = Psf::Gaussian { sigma };
                psf.validate().map_err(|e| invalid("psf.gaussian_sigma", e))?;
                Ok(psf)
            }
            (None, Some(path)) => Psf::load(path).map_err(|e| invalid("psf.kernel", e)),
            _ => Err(invalid("psf", "give exactly one of gaussian_sigma or kernel")),
        }
    }

    pub fn psf_model(&self) -> Result<Psf, ConfigError> {
        let p = self.psf.as_ref().ok_or_else(|| invalid("psf", "missing [psf] section"))?;
        self.psf_model_checked(p)
    }

    pub fn build_instrument(&self) -> Result<InstrumentConfig, ConfigError> {
        match &self.instrument_file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.clone(), source })?;
                let inst: InstrumentConfig =
                    toml::from_str(&text).map_err(|e| ConfigError::Parse { path: p.clone(), source: Box::new(e) })?;
                inst.validate().map_err(|e| prefix_instrument("instrument_file", e))?;
                Ok(inst)
            }
            None => build_default_instrument(&self.instrument).map_err(|e| prefix_instrument("instrument", e)),
        }
    }

    pub fn build_scene(&self) -> Result<Scene, ConfigError> {
        self.build_scene_with(&self.materials)
    }

    /// Scene with a replacement material table (same length).
    pub fn build_scene_with(&self, materials: &[MaterialModel]) -> Result<Scene, ConfigError> {
        let mut objects = Vec::new();
        for (i, o) in self.objects.iter().enumerate() {
            let f = |name: &str| format!("objects[{i}].{name}");
            match o {
                ObjectSpec::Surface { surface, grid, material, roughness, pattern } => {
                    let h = generate_surface(surface, *grid).map_err(|e| invalid(f("surface"), e))?;
                    let h = roughen(h, roughness.as_ref()).map_err(|e| invalid(f("roughness"), e))?;
                    match pattern {
                        None => objects.push(SceneObject::new(Geometry::mesh(mesh_heightfield(&h)), *material)),
                        Some(p) => {
                            let mask = random_cell_mask(grid.nx, grid.ny, p.correlation, p.seed);
                            let cells = grid.nx - 1;
                            for (want, mat) in [(false, *material), (true, p.material)] {
                                if let Some(m) = mesh_heightfield_cells(&h, |a, b| mask[b * cells + a] == want) {
                                    objects.push(SceneObject::new(Geometry::mesh(m), mat));
                                }
                            }
                        }
                    }
                }
                ObjectSpec::Heightfield { path, material, roughness } => {
                    let h = Heightfield::load(path).map_err(|e| invalid(f("path"), format!("{}: {e}", path.display())))?;
                    let h = roughen(h, roughness.as_ref()).map_err(|e| invalid(f("roughness"), e))?;
                    objects.push(SceneObject::new(Geometry::mesh(mesh_heightfield(&h)), *material));
                }
                ObjectSpec::Stl { path, material, scale, offset } => {
                    let stl = load_stl(path).map_err(|e| invalid(f("path"), e))?;
                    if stl.dropped > 0 {
                        log::warn!("{}: dropped {} degenerate facets", path.display(), stl.dropped);
                    }
                    let verts = stl.mesh.vertices().iter().map(|v| *v * *scale + *offset).collect();
                    let mesh = crate::scene::TriangleMesh::new(verts, stl.mesh.triangles().to_vec()).map_err(|e| invalid(f("path"), e))?;
                    objects.push(SceneObject::new(Geometry::mesh(mesh), *material));
                }
                ObjectSpec::Sphere { center, radius, material } => {
                    objects.push(SceneObject::new(Geometry::Sphere { center: *center, radius: *radius }, *material))
                }
                ObjectSpec::Plane { point, normal, material } => {
                    objects.push(SceneObject::new(Geometry::Plane { point: *point, normal: normal.normalized() }, *material))
                }
            }
        }
        Scene::new(objects, materials.to_vec()).map_err(|e| invalid("objects", e))
    }

    /// Reference topography for a measurement, if one is configured.
    pub fn reference_heightfield(&self) -> Result<Option<Heightfield>, ConfigError> {
        if let Some(p) = &self.reference {
            return Heightfield::load(p).map(Some).map_err(|e| invalid("reference", format!("{}: {e}", p.display())));
        }
        match self.reference_object.map(|k| &self.objects[k]) {
            Some(ObjectSpec::Surface { surface, grid, .. }) => {
                generate_surface(surface, *grid).map(Some).map_err(|e| invalid("reference_object", e))
            }
            _ => Ok(None),
        }
    }
}

fn roughen(h: Heightfield, p: Option<&MicroRoughnessParams>) -> Result<Heightfield, crate::scene::HeightfieldError> {
    match p {
        Some(p) => add_micro_roughness(&h, p),
        None => Ok(h),
    }
}

fn prefix_instrument(prefix: &str, e: InstrumentError) -> ConfigError {
    match e {
        InstrumentError::Invalid { field, message } => invalid(format!("{prefix}.{field}"), message),
        other => invalid(prefix, other),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
version = 1

[instrument]
na = 0.3
lens_model = "ideal"
pixels = 8

[render]
n_rays = 1000
seed = 4

[[materials]]
type = "hg_surface"
g = 0.8

[[objects]]
kind = "plane"
point = { x = 0.0, y = 0.0, z = 0.0 }
normal = { x = 0.0, y = 0.0, z = 1.0 }
material = 0
"#;

    fn minimal() -> RunConfig {
        RunConfig::from_toml(MINIMAL, Path::new("test.toml")).unwrap()
    }

    #[test]
    fn minimal_config_validates_and_builds() {
        let c = minimal();
        c.validate(Mode::Render).unwrap();
        assert_eq!(c.render.max_depth, DEFAULT_MAX_DEPTH);
        assert_eq!(c.instrument.magnification, 5.0);
        c.build_instrument().unwrap();
        assert_eq!(c.build_scene().unwrap().objects.len(), 1);
    }

    #[test]
    fn round_trip_and_hash() {
        let c = minimal();
        let back = RunConfig::from_toml(&c.to_toml(), Path::new("x")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut d = c.clone();
        d.render.seed = 5;
        assert_ne!(d.hash(), c.hash());
    }

    fn field_of(e: ConfigError) -> String {
        match e {
            ConfigError::Invalid { field, .. } => field,
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn errors_carry_field_paths() {
        let mut c = minimal();
        c.version = 2;
        assert_eq!(field_of(c.validate(Mode::Render).unwrap_err()), "version");
        let mut c = minimal();
        c.instrument.na = 1.5;
        assert_eq!(field_of(c.validate(Mode::Render).unwrap_err()), "instrument.na");
        let mut c = minimal();
        c.objects.push(ObjectSpec::Stl { path: "/nonexistent/part.stl".into(), material: 0, scale: 1.0, offset: Vec3::ZERO });
        let e = c.validate(Mode::Render).unwrap_err();
        assert!(e.to_string().contains("/nonexistent/part.stl"));
        assert_eq!(field_of(e), "objects[1].path");
        let mut c = minimal();
        c.objects[0] = ObjectSpec::Sphere { center: Vec3::ZERO, radius: 1.0, material: 3 };
        assert_eq!(field_of(c.validate(Mode::Render).unwrap_err()), "objects[0].material");
        let mut c = minimal();
        c.materials[0] = MaterialModel::HgSurface { g: 2.0 };
        assert_eq!(field_of(c.validate(Mode::Render).unwrap_err()), "materials[0]");
    }

    #[test]
    fn mode_requirements() {
        let mut c = minimal();
        assert_eq!(field_of(c.validate(Mode::Sweep).unwrap_err()), "sweep");
        assert_eq!(field_of(c.validate(Mode::Measure).unwrap_err()), "scan");
        assert_eq!(field_of(c.validate(Mode::Psf).unwrap_err()), "psf");
        c.sweep = Some(SweepSpec { n_rays: vec![], g: vec![0.3], material: 0, repeats: 2 });
        assert_eq!(field_of(c.validate(Mode::Sweep).unwrap_err()), "sweep.n_rays");
        c.sweep = Some(SweepSpec { n_rays: vec![10], g: vec![0.3, 1.2], material: 0, repeats: 2 });
        assert_eq!(field_of(c.validate(Mode::Sweep).unwrap_err()), "sweep.g[1]");
        c.sweep = Some(SweepSpec { n_rays: vec![10], g: vec![0.3], material: 0, repeats: 2 });
        c.validate(Mode::Sweep).unwrap();
        c.scan = Some(ScanConfig::new(-0.1, 0.1, 0.05, 10));
        c.validate(Mode::Measure).unwrap();
        c.psf = Some(PsfSpec { gaussian_sigma: Some(1.0), kernel: None, input: None });
        assert_eq!(field_of(c.validate(Mode::Psf).unwrap_err()), "psf.input");
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = MINIMAL.replace("seed = 4", "seed = 4\nbogus = 1");
        assert!(RunConfig::from_toml(&text, Path::new("t")).is_err());
    }

    #[test]
    fn generated_surface_with_pattern() {
        let mut c = minimal();
        c.materials.push(MaterialModel::Absorber);
        c.objects[0] = ObjectSpec::Surface {
            surface: SurfaceKind::Plane { height: 0.0 },
            grid: GridSpec::square(11, 0.5),
            material: 0,
            roughness: Some(MicroRoughnessParams { noise_mean: 0.0, noise_sigma: 0.1, kernel_sigma: 1.0, rng_seed: 1 }),
            pattern: Some(PatternSpec { material: 1, correlation: 1.0, seed: 2 }),
        };
        c.reference_object = Some(0);
        c.validate(Mode::Render).unwrap();
        let s = c.build_scene().unwrap();
        assert_eq!(s.objects.len(), 2);
        let tris: usize = s.objects.iter().map(|o| match &o.geometry { Geometry::Mesh(m) => m.mesh.len(), _ => 0 }).sum();
        assert_eq!(tris, 200);
        let r = c.reference_heightfield().unwrap().unwrap();
        assert!(r.heights.data().iter().all(|&z| z == 0.0));
    }

    #[test]
    fn relative_paths_resolved() {
        let dir = tempfile::tempdir().unwrap();
        let hf = Heightfield::new(1.0, 1.0, crate::grid::Grid::new(3, 3)).unwrap();
        hf.save(dir.path().join("ref.txt")).unwrap();
        let text = MINIMAL.replace("version = 1\n", "version = 1\nreference = \"ref.txt\"\n");
        let path = dir.path().join("run.toml");
        std::fs::write(&path, text).unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.reference.as_deref(), Some(dir.path().join("ref.txt").as_path()));
        c.validate(Mode::Render).unwrap();
        assert!(c.reference_heightfield().unwrap().is_some());
    }
}
