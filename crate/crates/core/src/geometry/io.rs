//! ASCII XYZ and ASCII PLY point cloud files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::cloud::{Point, PointCloud};
use crate::error::{Error, Result};

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    if text.starts_with(b"ply") {
        let header_end = find_header_end(&text).ok_or_else(|| Error::format(path, "PLY header has no end_header line"))?;
        let header = std::str::from_utf8(&text[..header_end])
            .map_err(|_| Error::format(path, "PLY header is not valid UTF-8"))?;
        let body = std::str::from_utf8(&text[header_end..])
            .map_err(|_| Error::format(path, "PLY body is not ASCII; binary PLY is not supported"))?;
        parse_ply(header, body).map_err(|m| Error::format(path, m))
    } else {
        let text = std::str::from_utf8(&text).map_err(|_| Error::format(path, "file is not valid UTF-8"))?;
        parse_xyz(text).map_err(|m| Error::format(path, m))
    }
}

fn find_header_end(bytes: &[u8]) -> Option<usize> {
    let needle = b"end_header";
    let pos = bytes.windows(needle.len()).position(|w| w == needle)?;
    let rest = &bytes[pos + needle.len()..];
    let nl = rest.iter().position(|&b| b == b'\n')?;
    Some(pos + needle.len() + nl + 1)
}

fn parse_number(tok: &str, line_no: usize) -> std::result::Result<f64, String> {
    tok.parse::<f64>()
        .map_err(|_| format!("line {line_no}: cannot parse number '{tok}'"))
}

pub fn parse_xyz(text: &str) -> std::result::Result<PointCloud, String> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(format!("line {}: expected 3 values, found {}", i + 1, toks.len()));
        }
        points.push(Point::new(
            parse_number(toks[0], i + 1)?,
            parse_number(toks[1], i + 1)?,
            parse_number(toks[2], i + 1)?,
        ));
    }
    PointCloud::new(points).map_err(|e| e.to_string())
}

struct PlyLayout {
    vertex_count: usize,
    /// Properties of the vertex element, in file order.
    properties: Vec<String>,
    /// Rows of elements declared before `vertex`, each with its property count.
    leading: Vec<(usize, usize)>,
}

fn parse_ply_header(header: &str) -> std::result::Result<PlyLayout, String> {
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err("missing 'ply' magic".into());
    }
    let mut format_seen = false;
    let mut elements: Vec<(String, usize, Vec<String>)> = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            Some("format") => {
                if toks.get(1) != Some(&"ascii") {
                    return Err(format!(
                        "unsupported PLY format '{}'; only ascii is supported",
                        toks.get(1).unwrap_or(&"")
                    ));
                }
                format_seen = true;
            }
            Some("element") => {
                let name = toks.get(1).ok_or("element without name")?.to_string();
                let count = toks
                    .get(2)
                    .and_then(|c| c.parse().ok())
                    .ok_or("element without count")?;
                elements.push((name, count, Vec::new()));
            }
            Some("property") => {
                let el = elements.last_mut().ok_or("property before any element")?;
                if toks.get(1) == Some(&"list") {
                    if el.0 == "vertex" {
                        return Err("list properties on vertex are not supported".into());
                    }
                    el.2.push("list".into());
                } else {
                    el.2.push(toks.get(2).ok_or("property without name")?.to_string());
                }
            }
            Some("comment") | Some("obj_info") | Some("end_header") | None => {}
            Some(other) => return Err(format!("unexpected header keyword '{other}'")),
        }
    }
    if !format_seen {
        return Err("PLY header has no format line".into());
    }
    let mut leading = Vec::new();
    for (name, count, props) in elements {
        if name == "vertex" {
            return Ok(PlyLayout {
                vertex_count: count,
                properties: props,
                leading,
            });
        }
        if props.iter().any(|p| p == "list") {
            return Err("list elements before vertex are not supported".into());
        }
        leading.push((count, props.len()));
    }
    Err("PLY file has no vertex element".into())
}

pub fn parse_ply(header: &str, body: &str) -> std::result::Result<PointCloud, String> {
    let layout = parse_ply_header(header)?;
    let col = |name: &str| layout.properties.iter().position(|p| p == name);
    let (x, y, z) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err("vertex element lacks x, y, z properties".into()),
    };
    let normal_cols = match (col("nx"), col("ny"), col("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };
    let mut rows = body
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    for (count, _) in &layout.leading {
        for _ in 0..*count {
            rows.next().ok_or("file ends inside a leading element")?;
        }
    }
    let mut points = Vec::with_capacity(layout.vertex_count);
    let mut normals = Vec::with_capacity(layout.vertex_count);
    for _ in 0..layout.vertex_count {
        let (i, line) = rows.next().ok_or("file has fewer vertices than declared")?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != layout.properties.len() {
            return Err(format!(
                "line {}: expected {} vertex values, found {}",
                i + 1,
                layout.properties.len(),
                toks.len()
            ));
        }
        let v = |c: usize| parse_number(toks[c], i + 1);
        points.push(Point::new(v(x)?, v(y)?, v(z)?));
        if let Some((a, b, c)) = normal_cols {
            normals.push(Point::new(v(a)?, v(b)?, v(c)?));
        }
    }
    let mut cloud = PointCloud::new(points).map_err(|e| e.to_string())?;
    if normal_cols.is_some() {
        // Files often store normals with a few digits; renormalize the non-degenerate ones.
        let normals = normals
            .into_iter()
            .map(|n| {
                let len = n.norm();
                if len > 0.5 {
                    Ok(n / len)
                } else {
                    Err("zero-length normal in PLY file".to_string())
                }
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        cloud.set_normals(normals).map_err(|e| e.to_string())?;
    }
    Ok(cloud)
}

pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 64);
    for p in cloud.points() {
        // `{:?}` prints the shortest string that round-trips exactly.
        let _ = writeln!(s, "{:?} {:?} {:?}", p.x, p.y, p.z);
    }
    s
}

pub fn format_ply(cloud: &PointCloud) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "ply\nformat ascii 1.0\nelement vertex {}", cloud.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.normals().is_some() {
        s.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    s.push_str("end_header\n");
    for (i, p) in cloud.points().iter().enumerate() {
        let _ = write!(s, "{:?} {:?} {:?}", p.x, p.y, p.z);
        if let Some(n) = cloud.normals() {
            let _ = write!(s, " {:?} {:?} {:?}", n[i].x, n[i].y, n[i].z);
        }
        s.push('\n');
    }
    s
}

/// Writes `.ply` files as ASCII PLY and everything else as XYZ.
pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let is_ply = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("ply"))
        .unwrap_or(false);
    let text = if is_ply { format_ply(cloud) } else { format_xyz(cloud) };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
