//! ASCII Wavefront OBJ input and output for meshes in model topology.
//!
//! Only vertex positions and triangular faces are read; normals, texture
//! coordinates and groups are skipped.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Point3;

use crate::container::write_atomic;
use crate::error::{Error, Result};
use crate::geometry::VertexBlock;

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: VertexBlock,
    /// Zero-based vertex indices.
    pub faces: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn to_obj(&self) -> String {
        let mut out = String::with_capacity(40 * self.vertices.len());
        for p in self.vertices.iter() {
            let _ = writeln!(out, "v {} {} {}", p.x, p.y, p.z);
        }
        for f in &self.faces {
            let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Mesh> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let bad = |what: &str| Error::format(path, format!("line {}: {what}", line_no + 1));
            let mut fields = line.split_whitespace();
            match fields.next() {
                Some("v") => {
                    let mut c = [0.0; 3];
                    for x in &mut c {
                        *x = fields
                            .next()
                            .and_then(|s| s.parse().ok())
                            .ok_or_else(|| bad("vertex needs three numeric coordinates"))?;
                    }
                    vertices.push(Point3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let ids: Vec<u32> = fields
                        .map(|s| {
                            let head = s.split('/').next().unwrap_or("");
                            head.parse::<u32>().ok().filter(|&i| i >= 1).map(|i| i - 1)
                        })
                        .collect::<Option<_>>()
                        .ok_or_else(|| bad("face indices must be positive integers"))?;
                    if ids.len() < 3 {
                        return Err(bad("face needs at least three vertices"));
                    }
                    for k in 1..ids.len() - 1 {
                        faces.push([ids[0], ids[k], ids[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        let n = vertices.len() as u32;
        if faces.iter().flatten().any(|&i| i >= n) {
            return Err(Error::format(path, "face refers to a missing vertex"));
        }
        Ok(Mesh {
            vertices: VertexBlock(vertices),
            faces,
        })
    }

    pub fn load(path: &Path) -> Result<Mesh> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_obj().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mesh = Mesh {
            vertices: VertexBlock(vec![
                Point3::new(0.1, -2.5, 1e-7),
                Point3::new(3.0, 0.0, 0.3333333333333333),
                Point3::new(-1.0, 1.0, 2.0),
            ]),
            faces: vec![[0, 1, 2]],
        };
        let p = Path::new("mem.obj");
        assert_eq!(Mesh::parse(&mesh.to_obj(), p).unwrap(), mesh);
    }

    #[test]
    fn quads_split_and_extras_ignored() {
        let text = "# c\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n";
        let m = Mesh::parse(text, Path::new("q.obj")).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert!(Mesh::parse("v 0 0\n", Path::new("x.obj")).is_err());
        assert!(Mesh::parse("v 0 0 0\nf 1 2 3\n", Path::new("x.obj")).is_err());
    }
}
