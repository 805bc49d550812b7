//! Minimal Wavefront OBJ I/O: `v` and `f` records only. Face entries may
//! carry `/`-suffixes (`f 1/2/3 ...`), which are ignored.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::Vec3;

use super::TriMesh;

pub fn load_obj(path: &Path) -> Result<TriMesh> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        match parts.next() {
            Some("v") => {
                let coords: Vec<f64> = parts
                    .map(|p| {
                        p.parse::<f64>().map_err(|_| Error::ParseError {
                            line: lineno,
                            msg: format!("bad vertex coordinate '{p}'"),
                        })
                    })
                    .collect::<Result<_>>()?;
                if coords.len() < 3 {
                    return Err(Error::ParseError {
                        line: lineno,
                        msg: "vertex needs 3 coordinates".into(),
                    });
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = parts
                    .map(|p| {
                        let head = p.split('/').next().unwrap_or("");
                        let i: i64 = head.parse().map_err(|_| Error::ParseError {
                            line: lineno,
                            msg: format!("bad face index '{p}'"),
                        })?;
                        if i < 1 || i as usize > vertices.len() {
                            return Err(Error::ParseError {
                                line: lineno,
                                msg: format!("face index {i} out of range"),
                            });
                        }
                        Ok(i as usize - 1)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::ParseError {
                        line: lineno,
                        msg: "face needs at least 3 indices".into(),
                    });
                }
                // fan-triangulate polygons
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {} // ignore other records
        }
    }
    TriMesh::new(vertices, faces)
}

pub fn save_obj(mesh: &TriMesh, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for v in mesh.vertices() {
        writeln!(w, "v {:.12e} {:.12e} {:.12e}", v.x, v.y, v.z)?;
    }
    for f in mesh.faces() {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    w.flush()?;
    Ok(())
}
