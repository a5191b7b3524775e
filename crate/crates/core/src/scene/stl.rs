//! STL reader and writer (binary and ASCII).
//!
//! Stored facet normals are ignored; normals are recomputed from winding when
//! the mesh is built. Coordinates are taken as millimetres.

use super::mesh::{MeshError, TriangleMesh};
use crate::geometry::Vec3;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum StlError {
    #[error("cannot read STL file {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed STL at byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// A loaded STL with its facet census.
#[derive(Debug, Clone)]
pub struct StlMesh {
    pub mesh: TriangleMesh,
    /// Facets present in the file.
    pub facets: usize,
    /// Zero-area facets removed while building the mesh.
    pub dropped: usize,
}

pub fn load_stl(path: impl AsRef<Path>) -> Result<StlMesh, StlError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| StlError::Io { path: path.to_path_buf(), source })?;
    parse_stl(&bytes)
}

pub fn parse_stl(bytes: &[u8]) -> Result<StlMesh, StlError> {
    let facets = if is_binary(bytes) {
        parse_binary(bytes)?
    } else if looks_ascii(bytes) {
        parse_ascii(bytes)?
    } else if bytes.len() < 84 {
        return Err(malformed(bytes.len(), "file shorter than the 84-byte binary header"));
    } else {
        let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
        let complete = (bytes.len() - 84) / 50;
        let offset = 84 + 50 * complete.min(count);
        return Err(malformed(
            offset,
            &format!("binary header declares {count} facets but {} bytes follow", bytes.len() - 84),
        ));
    };
    build_mesh(facets)
}

fn malformed(offset: usize, message: &str) -> StlError {
    StlError::Malformed { offset, message: message.to_string() }
}

fn is_binary(bytes: &[u8]) -> bool {
    if bytes.len() < 84 {
        return false;
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    count.checked_mul(50).and_then(|n| n.checked_add(84)) == Some(bytes.len())
}

fn looks_ascii(bytes: &[u8]) -> bool {
    let start = bytes.iter().position(|b| !b.is_ascii_whitespace()).unwrap_or(bytes.len());
    bytes[start..].starts_with(b"solid")
}

fn parse_binary(bytes: &[u8]) -> Result<Vec<[Vec3; 3]>, StlError> {
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    let mut facets = Vec::with_capacity(count);
    for k in 0..count {
        let rec = &bytes[84 + 50 * k..84 + 50 * (k + 1)];
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap()) as f64;
        // floats 0..3 are the stored normal
        let v = |j: usize| Vec3::new(f(3 + 3 * j), f(4 + 3 * j), f(5 + 3 * j));
        let tri = [v(0), v(1), v(2)];
        if !tri.iter().all(|p| p.is_finite()) {
            return Err(malformed(84 + 50 * k, "non-finite vertex coordinate"));
        }
        facets.push(tri);
    }
    Ok(facets)
}

struct Tokens<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Option<(usize, &'a str)> {
        let rest = &self.text[self.pos..];
        let skip = rest.find(|c: char| !c.is_ascii_whitespace())?;
        let start = self.pos + skip;
        let len = self.text[start..].find(|c: char| c.is_ascii_whitespace()).unwrap_or(self.text.len() - start);
        self.pos = start + len;
        Some((start, &self.text[start..start + len]))
    }

    fn skip_line(&mut self) {
        match self.text[self.pos..].find('\n') {
            Some(i) => self.pos += i + 1,
            None => self.pos = self.text.len(),
        }
    }

    fn expect(&mut self, word: &str) -> Result<usize, StlError> {
        match self.next() {
            Some((off, tok)) if tok.eq_ignore_ascii_case(word) => Ok(off),
            Some((off, tok)) => Err(malformed(off, &format!("expected '{word}', found '{tok}'"))),
            None => Err(malformed(self.text.len(), &format!("unexpected end of file, expected '{word}'"))),
        }
    }

    fn number(&mut self) -> Result<f64, StlError> {
        match self.next() {
            Some((off, tok)) => match tok.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(malformed(off, &format!("invalid number '{tok}'"))),
            },
            None => Err(malformed(self.text.len(), "unexpected end of file, expected a number")),
        }
    }
}

fn parse_ascii(bytes: &[u8]) -> Result<Vec<[Vec3; 3]>, StlError> {
    let text = std::str::from_utf8(bytes).map_err(|e| malformed(e.valid_up_to(), "ASCII STL is not valid UTF-8"))?;
    let mut tok = Tokens { text, pos: 0 };
    tok.expect("solid")?;
    // the solid name runs to the end of the line
    tok.skip_line();
    let mut facets = Vec::new();
    loop {
        match tok.next() {
            Some((_, t)) if t.eq_ignore_ascii_case("endsolid") => break,
            Some((_, t)) if t.eq_ignore_ascii_case("facet") => {
                tok.expect("normal")?;
                for _ in 0..3 {
                    tok.number()?;
                }
                tok.expect("outer")?;
                tok.expect("loop")?;
                let mut tri = [Vec3::ZERO; 3];
                for v in tri.iter_mut() {
                    tok.expect("vertex")?;
                    *v = Vec3::new(tok.number()?, tok.number()?, tok.number()?);
                }
                tok.expect("endloop")?;
                tok.expect("endfacet")?;
                facets.push(tri);
            }
            Some((off, t)) => return Err(malformed(off, &format!("expected 'facet' or 'endsolid', found '{t}'"))),
            None => return Err(malformed(text.len(), "missing 'endsolid'")),
        }
    }
    Ok(facets)
}

fn build_mesh(facets: Vec<[Vec3; 3]>) -> Result<StlMesh, StlError> {
    let count = facets.len();
    let mut index: HashMap<[u64; 3], u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::with_capacity(count);
    for tri in facets {
        let ids = tri.map(|v| {
            let key = [v.x.to_bits(), v.y.to_bits(), v.z.to_bits()];
            *index.entry(key).or_insert_with(|| {
                vertices.push(v);
                (vertices.len() - 1) as u32
            })
        });
        triangles.push(ids);
    }
    if vertices.len() < 3 {
        return Err(MeshError::Empty { dropped: count }.into());
    }
    let mesh = TriangleMesh::new(vertices, triangles)?;
    let dropped = mesh.dropped_count();
    Ok(StlMesh { mesh, facets: count, dropped })
}

pub fn stl_binary_bytes(mesh: &TriangleMesh) -> Vec<u8> {
    let mut out = Vec::with_capacity(84 + 50 * mesh.len());
    let mut header = [0u8; 80];
    header[..14].copy_from_slice(b"fvsim mesh stl");
    out.extend_from_slice(&header);
    out.extend_from_slice(&(mesh.len() as u32).to_le_bytes());
    for i in 0..mesh.len() {
        let n = mesh.normals()[i];
        let mut push = |v: Vec3| {
            for c in [v.x, v.y, v.z] {
                out.extend_from_slice(&(c as f32).to_le_bytes());
            }
        };
        push(n);
        for v in mesh.triangle(i) {
            push(v);
        }
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    out
}

pub fn stl_ascii_string(mesh: &TriangleMesh, name: &str) -> String {
    let mut s = format!("solid {name}\n");
    for i in 0..mesh.len() {
        let n = mesh.normals()[i];
        let _ = writeln!(s, "  facet normal {:e} {:e} {:e}", n.x, n.y, n.z);
        s.push_str("    outer loop\n");
        for v in mesh.triangle(i) {
            let _ = writeln!(s, "      vertex {:e} {:e} {:e}", v.x, v.y, v.z);
        }
        s.push_str("    endloop\n  endfacet\n");
    }
    let _ = writeln!(s, "endsolid {name}");
    s
}

pub fn write_stl_binary(mesh: &TriangleMesh, path: impl AsRef<Path>) -> std::io::Result<()> {
    std::fs::write(path, stl_binary_bytes(mesh))
}

pub fn write_stl_ascii(mesh: &TriangleMesh, path: impl AsRef<Path>) -> std::io::Result<()> {
    std::fs::write(path, stl_ascii_string(mesh, "fvsim"))
}
