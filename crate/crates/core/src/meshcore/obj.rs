use std::fmt::Write as _;
use std::path::Path;

use super::Mesh;
use crate::error::{Result, StarError};

/// Reads `v` and `f` records; `vt`/`vn` suffixes on face corners are
/// ignored, as are all other record types.
pub fn load_obj(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| StarError::io(path, e))?;
    parse_obj(&text, path)
}

pub fn parse_obj(text: &str, origin: &Path) -> Result<Mesh> {
    let err = |line: usize, message: String| StarError::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| err(lineno, format!("bad vertex coordinate: {e}")))?;
                // a fourth (w) component is allowed and ignored
                if coords.len() < 3 || coords.len() > 4 {
                    return Err(err(lineno, format!("vertex needs 3 coordinates, got {}", coords.len())));
                }
                vertices.push([coords[0], coords[1], coords[2]]);
            }
            Some("f") => {
                let mut corners = Vec::with_capacity(3);
                for t in tokens {
                    let head = t.split('/').next().unwrap_or("");
                    let index: i64 = head
                        .parse()
                        .map_err(|_| err(lineno, format!("bad face index '{t}'")))?;
                    let resolved = match index {
                        i if i > 0 => (i - 1) as usize,
                        i if i < 0 => {
                            let back = vertices.len() as i64 + i;
                            if back < 0 {
                                return Err(err(lineno, format!("relative index {i} underflows")));
                            }
                            back as usize
                        }
                        _ => return Err(err(lineno, "face index 0 is invalid".into())),
                    };
                    corners.push(resolved);
                }
                if corners.len() != 3 {
                    return Err(err(
                        lineno,
                        format!("only triangles are supported, got {} corners", corners.len()),
                    ));
                }
                faces.push([corners[0], corners[1], corners[2]]);
            }
            _ => {}
        }
    }
    Mesh::new(vertices, faces)
}

/// Writes vertices with 6 decimals and 1-based faces.
pub fn write_obj(mesh: &Mesh) -> String {
    let mut out = String::new();
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {:.6} {:.6} {:.6}", v[0], v[1], v[2]);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn save_obj(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_obj(mesh)).map_err(|e| StarError::io(path, e))
}
