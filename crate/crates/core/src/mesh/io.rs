//! ASCII OBJ, ASCII PLY and plain `x y z` point files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{PointCloud, TriangleMesh};
use crate::error::{Error, Result};
use crate::superquadric::Point3;

/// Contents of a geometry file: a mesh, or bare points when the file has no
/// faces.
#[derive(Debug, Clone, PartialEq)]
pub enum MeshFile {
    Mesh(TriangleMesh),
    Points(PointCloud),
}

impl MeshFile {
    pub fn into_cloud(self) -> PointCloud {
        match self {
            MeshFile::Mesh(m) => m.vertex_cloud(),
            MeshFile::Points(c) => c,
        }
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

/// Reads any supported geometry file, dispatching on the extension
/// (`.obj`, `.ply`; anything else is read as `x y z` lines).
pub fn read_mesh(path: &Path) -> Result<MeshFile> {
    let name = display(path);
    match extension(path).as_str() {
        "obj" => {
            let text = fs::read_to_string(path)?;
            let mesh = read_obj(&text, &name)?;
            Ok(if mesh.faces().is_empty() {
                MeshFile::Points(mesh.vertex_cloud())
            } else {
                MeshFile::Mesh(mesh)
            })
        }
        "ply" => {
            let bytes = fs::read(path)?;
            let mesh = read_ply(&bytes, &name)?;
            Ok(if mesh.faces().is_empty() {
                MeshFile::Points(mesh.vertex_cloud())
            } else {
                MeshFile::Mesh(mesh)
            })
        }
        _ => Ok(MeshFile::Points(read_xyz(&fs::read_to_string(path)?, &name)?)),
    }
}

/// Reads a point cloud from any supported file; meshes contribute their
/// vertices.
pub fn read_points(path: &Path) -> Result<PointCloud> {
    Ok(read_mesh(path)?.into_cloud())
}

fn parse_f64(tok: Option<&str>, source: &str, line: usize, what: &str) -> Result<f64> {
    let tok = tok.ok_or_else(|| Error::parse(source, line, format!("missing {what}")))?;
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::parse(source, line, format!("invalid {what} `{tok}`")))?;
    if !v.is_finite() {
        return Err(Error::parse(source, line, format!("non-finite {what}")));
    }
    Ok(v)
}

/// One `x y z` triple per line. Blank lines and `#` comments are skipped;
/// extra columns are ignored.
pub fn read_xyz(text: &str, source: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty());
        let x = parse_f64(it.next(), source, i + 1, "x")?;
        let y = parse_f64(it.next(), source, i + 1, "y")?;
        let z = parse_f64(it.next(), source, i + 1, "z")?;
        points.push(Point3::new(x, y, z));
    }
    Ok(PointCloud::new(points))
}

pub fn write_xyz(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 40);
    for p in cloud.points() {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out
}

/// Triangles-only OBJ reader: `v` and `f` records. Face corners may carry
/// `/vt/vn` suffixes and negative (relative) indices; polygons are
/// fan-triangulated and fans that collapse onto a repeated vertex dropped.
pub fn read_obj(text: &str, source: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let x = parse_f64(it.next(), source, lineno, "x")?;
                let y = parse_f64(it.next(), source, lineno, "y")?;
                let z = parse_f64(it.next(), source, lineno, "z")?;
                vertices.push(Point3::new(x, y, z));
            }
            Some("f") => {
                let mut corners = Vec::with_capacity(4);
                for tok in it {
                    let idx_tok = tok.split('/').next().unwrap_or("");
                    let idx: i64 = idx_tok.parse().map_err(|_| {
                        Error::parse(source, lineno, format!("invalid face index `{tok}`"))
                    })?;
                    let n = vertices.len() as i64;
                    let resolved = match idx {
                        0 => None,
                        k if k > 0 && k <= n => Some(k - 1),
                        k if k < 0 && -k <= n => Some(n + k),
                        _ => None,
                    }
                    .ok_or_else(|| {
                        Error::parse(source, lineno, format!("face index {idx} out of range"))
                    })?;
                    corners.push(resolved as usize);
                }
                if corners.len() < 3 {
                    return Err(Error::parse(source, lineno, "face with fewer than 3 vertices"));
                }
                for k in 1..corners.len() - 1 {
                    let f = [corners[0], corners[k], corners[k + 1]];
                    if f[0] != f[1] && f[1] != f[2] && f[0] != f[2] {
                        faces.push(f);
                    }
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

pub fn write_obj(mesh: &TriangleMesh) -> String {
    let mut out = String::with_capacity(mesh.vertices().len() * 40 + mesh.faces().len() * 20);
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

struct PlyElement {
    name: String,
    count: usize,
    /// Scalar property names, or `None` for the position of a list property.
    props: Vec<PlyProperty>,
}

enum PlyProperty {
    Scalar(String),
    List(String),
}

/// ASCII PLY 1.0 reader for `vertex` (x, y, z) and `face`
/// (`vertex_indices` or `vertex_index` list) elements. Other elements and
/// properties are skipped.
pub fn read_ply(bytes: &[u8], source: &str) -> Result<TriangleMesh> {
    const END: &[u8] = b"end_header";
    let header_end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::parse(source, 1, "missing end_header"))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::parse(source, 1, "PLY header is not ASCII"))?;
    let mut lines = header.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(Error::parse(source, 1, "missing `ply` magic")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut format_seen = false;
    for (i, line) in lines {
        let lineno = i + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", "1.0"] => format_seen = true,
            ["format", fmt, ..] => {
                return Err(Error::parse(
                    source,
                    lineno,
                    format!("unsupported PLY format `{fmt}`; binary PLY is not supported, convert to ASCII"),
                ))
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| Error::parse(source, lineno, "invalid element count"))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            ["property", "list", _, _, name] => elements
                .last_mut()
                .ok_or_else(|| Error::parse(source, lineno, "property before element"))?
                .props
                .push(PlyProperty::List(name.to_string())),
            ["property", _, name] => elements
                .last_mut()
                .ok_or_else(|| Error::parse(source, lineno, "property before element"))?
                .props
                .push(PlyProperty::Scalar(name.to_string())),
            [] | ["comment", ..] | ["obj_info", ..] => {}
            _ => return Err(Error::parse(source, lineno, format!("unrecognized header line `{line}`"))),
        }
    }
    if !format_seen {
        return Err(Error::parse(source, 1, "missing `format ascii 1.0`"));
    }

    let body = std::str::from_utf8(&bytes[header_end + END.len()..])
        .map_err(|_| Error::parse(source, 1, "PLY body is not ASCII"))?;
    let header_lines = header.lines().count() + 1;
    let mut rows = body
        .lines()
        .enumerate()
        .map(|(i, l)| (header_lines + i, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let (lineno, row) = rows
                .next()
                .ok_or_else(|| Error::parse(source, header_lines, format!("truncated `{}` data", el.name)))?;
            let mut toks = row.split_whitespace();
            let mut xyz = [None; 3];
            let mut indices: Option<Vec<usize>> = None;
            for prop in &el.props {
                match prop {
                    PlyProperty::Scalar(name) => {
                        let v = parse_f64(toks.next(), source, lineno, name)?;
                        match name.as_str() {
                            "x" => xyz[0] = Some(v),
                            "y" => xyz[1] = Some(v),
                            "z" => xyz[2] = Some(v),
                            _ => {}
                        }
                    }
                    PlyProperty::List(name) => {
                        let n = parse_f64(toks.next(), source, lineno, "list length")? as usize;
                        let mut list = Vec::with_capacity(n);
                        for _ in 0..n {
                            let v = parse_f64(toks.next(), source, lineno, name)?;
                            if v < 0.0 || v.fract() != 0.0 {
                                return Err(Error::parse(source, lineno, format!("invalid index {v}")));
                            }
                            list.push(v as usize);
                        }
                        if name == "vertex_indices" || name == "vertex_index" {
                            indices = Some(list);
                        }
                    }
                }
            }
            match el.name.as_str() {
                "vertex" => {
                    let [Some(x), Some(y), Some(z)] = xyz else {
                        return Err(Error::parse(source, lineno, "vertex without x, y, z"));
                    };
                    vertices.push(Point3::new(x, y, z));
                }
                "face" => {
                    let list = indices
                        .ok_or_else(|| Error::parse(source, lineno, "face without vertex_indices"))?;
                    if list.len() < 3 {
                        return Err(Error::parse(source, lineno, "face with fewer than 3 vertices"));
                    }
                    for k in 1..list.len() - 1 {
                        let f = [list[0], list[k], list[k + 1]];
                        if f.iter().any(|&i| i >= vertices.len()) {
                            return Err(Error::parse(source, lineno, "face index out of range"));
                        }
                        if f[0] != f[1] && f[1] != f[2] && f[0] != f[2] {
                            faces.push(f);
                        }
                    }
                }
                _ => {}
            }
        }
    }
    TriangleMesh::new(vertices, faces)
}
