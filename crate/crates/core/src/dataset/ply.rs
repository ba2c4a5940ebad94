use std::fs;
use std::io::Write;
use std::path::Path;

use crate::geometry::{Point3, PointCloud};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(Error::Format(format!("unknown PLY scalar type {other:?}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut offset = 0;
    let mut lines = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("PLY header is not terminated by end_header".into()))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| Error::Format("PLY header is not valid UTF-8".into()))?
            .trim_end_matches('\r')
            .trim()
            .to_string();
        offset += nl + 1;
        if line == "end_header" {
            break;
        }
        lines.push(line);
    }

    let mut it = lines.into_iter();
    if it.next().as_deref() != Some("ply") {
        return Err(Error::Format("missing \"ply\" magic line".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in it {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.first().copied() {
            Some("format") => {
                format = Some(match tok.get(1).copied() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    other => {
                        return Err(Error::Format(format!("unsupported PLY format {other:?}")))
                    }
                });
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                if tok.len() != 3 {
                    return Err(Error::Format(format!("malformed element line {line:?}")));
                }
                let count = tok[2]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad element count in {line:?}")))?;
                elements.push(Element {
                    name: tok[1].to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::Format("property before any element".into()))?;
                let prop = match tok.get(1).copied() {
                    Some("list") if tok.len() == 5 => Property::List {
                        count: Scalar::parse(tok[2])?,
                        item: Scalar::parse(tok[3])?,
                    },
                    Some(ty) if tok.len() == 3 => Property::Scalar {
                        name: tok[2].to_string(),
                        ty: Scalar::parse(ty)?,
                    },
                    _ => return Err(Error::Format(format!("malformed property line {line:?}"))),
                };
                el.props.push(prop);
            }
            Some(other) => return Err(Error::Format(format!("unknown PLY header keyword {other:?}"))),
        }
    }
    Ok(Header {
        format: format.ok_or_else(|| Error::Format("missing format line".into()))?,
        elements,
        body_offset: offset,
    })
}

/// Column positions of x, y, z and (optionally) nx, ny, nz within the vertex element.
struct VertexLayout {
    xyz: [usize; 3],
    normals: Option<[usize; 3]>,
}

fn vertex_layout(el: &Element) -> Result<VertexLayout> {
    let find = |want: &str| {
        el.props.iter().position(|p| matches!(p, Property::Scalar { name, .. } if name == want))
    };
    let xyz = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => [x, y, z],
        _ => return Err(Error::Format("vertex element lacks x, y, z properties".into())),
    };
    let normals = match (find("nx"), find("ny"), find("nz")) {
        (Some(x), Some(y), Some(z)) => Some([x, y, z]),
        _ => None,
    };
    Ok(VertexLayout { xyz, normals })
}

/// Parses an in-memory PLY file (ASCII or binary little-endian).
pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud> {
    let header = parse_header(bytes)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::Format("PLY file has no vertex element".into()))?;
    let layout = vertex_layout(&header.elements[vertex_pos])?;
    let body = &bytes[header.body_offset..];

    let rows = match header.format {
        PlyFormat::Ascii => read_ascii(body, &header.elements, vertex_pos)?,
        PlyFormat::BinaryLittleEndian => read_binary(body, &header.elements, vertex_pos)?,
    };

    let mut points = Vec::with_capacity(rows.len());
    let mut normals = layout.normals.map(|_| Vec::with_capacity(rows.len()));
    for (i, row) in rows.iter().enumerate() {
        let p = Point3::new(row[layout.xyz[0]], row[layout.xyz[1]], row[layout.xyz[2]]);
        if !p.iter().all(|c| c.is_finite()) {
            return Err(Error::Validation(format!("vertex {i} has a non-finite coordinate")));
        }
        points.push(p);
        if let (Some(cols), Some(out)) = (layout.normals, normals.as_mut()) {
            let n = Point3::new(row[cols[0]], row[cols[1]], row[cols[2]]);
            let len = n.norm();
            if !(len.is_finite() && len > 0.0) {
                return Err(Error::Validation(format!("vertex {i} has an invalid normal")));
            }
            out.push(if (len - 1.0).abs() <= 1e-12 { n } else { n / len });
        }
    }
    match normals {
        Some(n) => PointCloud::with_normals(points, n),
        None => PointCloud::new(points),
    }
}

fn read_ascii(body: &[u8], elements: &[Element], vertex_pos: usize) -> Result<Vec<Vec<f64>>> {
    let text = std::str::from_utf8(body).map_err(|_| Error::Format("ASCII PLY body is not UTF-8".into()))?;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    for el in &elements[..vertex_pos] {
        for _ in 0..el.count {
            lines
                .next()
                .ok_or_else(|| Error::Format(format!("truncated {} element", el.name)))?;
        }
    }
    let el = &elements[vertex_pos];
    if el.props.iter().any(|p| matches!(p, Property::List { .. })) {
        return Err(Error::Format("list properties on vertices are not supported".into()));
    }
    let mut rows = Vec::with_capacity(el.count);
    for i in 0..el.count {
        let line = lines
            .next()
            .ok_or_else(|| Error::Format(format!("expected {} vertices, found {i}", el.count)))?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::Format(format!("bad number {t:?} in vertex {i}"))))
            .collect::<Result<_>>()?;
        if row.len() != el.props.len() {
            return Err(Error::Format(format!(
                "vertex {i} has {} values, expected {}",
                row.len(),
                el.props.len()
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

fn read_binary(body: &[u8], elements: &[Element], vertex_pos: usize) -> Result<Vec<Vec<f64>>> {
    let truncated = |needed: usize| Error::Truncated {
        expected: needed,
        found: body.len(),
    };
    let mut off = 0usize;
    for el in &elements[..vertex_pos] {
        for _ in 0..el.count {
            for p in &el.props {
                match *p {
                    Property::Scalar { ty, .. } => off += ty.size(),
                    Property::List { count, item } => {
                        let end = off + count.size();
                        let raw = body.get(off..end).ok_or_else(|| truncated(end))?;
                        let n = count.read_le(raw);
                        if !(n >= 0.0) {
                            return Err(Error::Format("negative list length".into()));
                        }
                        off = end + n as usize * item.size();
                    }
                }
            }
        }
    }
    let el = &elements[vertex_pos];
    let mut types = Vec::with_capacity(el.props.len());
    for p in &el.props {
        match *p {
            Property::Scalar { ty, .. } => types.push(ty),
            Property::List { .. } => {
                return Err(Error::Format("list properties on vertices are not supported".into()))
            }
        }
    }
    let stride: usize = types.iter().map(|t| t.size()).sum();
    let end = off + stride * el.count;
    let data = body.get(off..end).ok_or_else(|| truncated(end))?;
    Ok(data
        .chunks_exact(stride)
        .map(|rec| {
            let mut pos = 0;
            types
                .iter()
                .map(|t| {
                    let v = t.read_le(&rec[pos..]);
                    pos += t.size();
                    v
                })
                .collect()
        })
        .collect())
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path.to_path_buf())
        } else {
            Error::storage(path, e)
        }
    })?;
    parse_ply(&bytes)
}

/// Serializes a cloud as PLY with `double` coordinates (and normals when present).
pub fn write_ply(cloud: &PointCloud, format: PlyFormat) -> Vec<u8> {
    let mut out = Vec::new();
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let _ = write!(out, "ply\nformat {fmt} 1.0\nelement vertex {}\n", cloud.len());
    out.extend_from_slice(b"property double x\nproperty double y\nproperty double z\n");
    if cloud.normals().is_some() {
        out.extend_from_slice(b"property double nx\nproperty double ny\nproperty double nz\n");
    }
    out.extend_from_slice(b"end_header\n");
    for (i, p) in cloud.points().iter().enumerate() {
        let mut values = vec![p.x, p.y, p.z];
        if let Some(n) = cloud.normals() {
            values.extend_from_slice(&[n[i].x, n[i].y, n[i].z]);
        }
        match format {
            PlyFormat::Ascii => {
                let line: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
                out.extend_from_slice(line.join(" ").as_bytes());
                out.push(b'\n');
            }
            PlyFormat::BinaryLittleEndian => {
                for v in values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn save_ply_with(path: impl AsRef<Path>, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_ply(cloud, format)).map_err(|e| Error::storage(path, e))
}

/// Writes binary little-endian PLY.
pub fn save_ply(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    save_ply_with(path, cloud, PlyFormat::BinaryLittleEndian)
}
