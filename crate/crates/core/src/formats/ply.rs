//! PLY meshes. Writes `binary_little_endian` with `double` positions, `uchar`
//! colors and `double` copies of the colors (`red_exact` and so on) so that
//! round trips are bit-exact; reads ascii and binary (either endianness) files with any
//! scalar property types, optional colors and polygon faces (fan
//! triangulated).

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::{TriangleMesh, Vec3};

const WHAT: &str = "ply";

/// Color assigned to vertices of files without color properties.
pub const DEFAULT_COLOR: [f64; 3] = [0.5, 0.5, 0.5];

pub fn quantize_channel(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_ply(mesh: &TriangleMesh) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + mesh.vertices.len() * 27 + mesh.faces.len() * 13);
    let header = format!(
        "ply\nformat binary_little_endian 1.0\ncomment scenelift\nelement vertex {}\n\
         property double x\nproperty double y\nproperty double z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\n\
         property double red_exact\nproperty double green_exact\nproperty double blue_exact\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.faces.len()
    );
    out.extend_from_slice(header.as_bytes());
    for (v, c) in mesh.vertices.iter().zip(&mesh.colors) {
        for k in 0..3 {
            out.extend_from_slice(&v[k].to_le_bytes());
        }
        out.extend(c.map(quantize_channel));
        for k in 0..3 {
            out.extend_from_slice(&c[k].to_le_bytes());
        }
    }
    for f in &mesh.faces {
        out.push(3);
        for &i in f {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}

pub fn write_ply(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_ply(mesh))?;
    Ok(())
}

pub fn read_ply(path: &Path) -> Result<TriangleMesh> {
    parse_ply(&std::fs::read(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
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
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Self::F32 | Self::F64)
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Encoding {
    Ascii,
    Little,
    Big,
}

fn fail(message: impl Into<String>) -> Error {
    Error::format(WHAT, message)
}

/// Parses a PLY file from memory.
pub fn parse_ply(bytes: &[u8]) -> Result<TriangleMesh> {
    let header_end = find_header_end(bytes)?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| fail("header is not utf-8"))?;
    let body = &bytes[header_end..];
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(fail("missing ply magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                encoding = Some(match tok.next() {
                    Some("ascii") => Encoding::Ascii,
                    Some("binary_little_endian") => Encoding::Little,
                    Some("binary_big_endian") => Encoding::Big,
                    other => return Err(fail(format!("unknown format {other:?}"))),
                });
            }
            Some("element") => {
                let name = tok.next().ok_or_else(|| fail("element without name"))?.to_string();
                let count = tok
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| fail("element without valid count"))?;
                elements.push(Element {
                    name,
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or_else(|| fail("property before element"))?;
                let ty = tok.next().ok_or_else(|| fail("property without type"))?;
                let prop = if ty == "list" {
                    let count = tok.next().and_then(Scalar::parse).ok_or_else(|| fail("bad list count type"))?;
                    let item = tok.next().and_then(Scalar::parse).ok_or_else(|| fail("bad list item type"))?;
                    if !count.is_integer() {
                        return Err(fail("list count type must be an integer"));
                    }
                    let name = tok.next().ok_or_else(|| fail("list without name"))?.to_string();
                    Property::List { name, count, item }
                } else {
                    let ty = Scalar::parse(ty).ok_or_else(|| fail(format!("unknown property type {ty}")))?;
                    let name = tok.next().ok_or_else(|| fail("property without name"))?.to_string();
                    Property::Scalar { name, ty }
                };
                el.properties.push(prop);
            }
            Some("comment") | Some("obj_info") | Some("end_header") | None => {}
            Some(other) => return Err(fail(format!("unexpected header keyword {other}"))),
        }
    }
    let encoding = encoding.ok_or_else(|| fail("missing format line"))?;

    let mut reader = match encoding {
        Encoding::Ascii => Reader::Ascii(
            std::str::from_utf8(body)
                .map_err(|_| fail("ascii body is not utf-8"))?
                .split_ascii_whitespace(),
        ),
        Encoding::Little | Encoding::Big => Reader::Binary {
            data: body,
            pos: 0,
            big: encoding == Encoding::Big,
        },
    };

    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        // Every record needs at least one byte (or token), which bounds the
        // allocation below by the input size.
        if el.count > reader.remaining() && !el.properties.is_empty() {
            return Err(fail(format!("element {} count exceeds the file size", el.name)));
        }
        match el.name.as_str() {
            "vertex" => {
                let find = |n: &str| {
                    el.properties
                        .iter()
                        .position(|p| matches!(p, Property::Scalar { name, .. } if name == n))
                };
                let (Some(ix), Some(iy), Some(iz)) = (find("x"), find("y"), find("z")) else {
                    return Err(fail("vertex element lacks x, y or z"));
                };
                let exact = match (find("red_exact"), find("green_exact"), find("blue_exact")) {
                    (Some(r), Some(g), Some(b)) => Some([r, g, b]),
                    _ => None,
                };
                let rgb = match (find("red"), find("green"), find("blue")) {
                    (Some(r), Some(g), Some(b)) => Some([r, g, b]),
                    _ => match (find("r"), find("g"), find("b")) {
                        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
                        _ => None,
                    },
                };
                vertices.reserve(el.count);
                colors.reserve(el.count);
                let mut values = vec![0.0; el.properties.len()];
                for _ in 0..el.count {
                    for (k, p) in el.properties.iter().enumerate() {
                        match p {
                            Property::Scalar { ty, .. } => values[k] = reader.scalar(*ty)?,
                            Property::List { count, item, .. } => {
                                let n = reader.count(*count)?;
                                for _ in 0..n {
                                    reader.scalar(*item)?;
                                }
                            }
                        }
                    }
                    vertices.push(Vec3::new(values[ix], values[iy], values[iz]));
                    colors.push(match (exact, rgb) {
                        (Some(idx), _) => idx.map(|i| values[i].clamp(0.0, 1.0)),
                        (None, Some(idx)) => idx.map(|i| {
                            let v = values[i];
                            match &el.properties[i] {
                                Property::Scalar { ty, .. } if ty.is_integer() => (v / 255.0).clamp(0.0, 1.0),
                                _ => v.clamp(0.0, 1.0),
                            }
                        }),
                        (None, None) => DEFAULT_COLOR,
                    });
                }
            }
            "face" => {
                let list = el
                    .properties
                    .iter()
                    .position(|p| matches!(p, Property::List { name, .. } if name == "vertex_indices" || name == "vertex_index"))
                    .ok_or_else(|| fail("face element lacks vertex_indices"))?;
                for _ in 0..el.count {
                    for (k, p) in el.properties.iter().enumerate() {
                        match p {
                            Property::Scalar { ty, .. } => {
                                reader.scalar(*ty)?;
                            }
                            Property::List { count, item, .. } => {
                                let n = reader.count(*count)?;
                                if k != list {
                                    for _ in 0..n {
                                        reader.scalar(*item)?;
                                    }
                                    continue;
                                }
                                if !item.is_integer() {
                                    return Err(fail("face indices must be integers"));
                                }
                                let mut poly = Vec::with_capacity(n.min(64));
                                for _ in 0..n {
                                    let v = reader.scalar(*item)?;
                                    if v < 0.0 || v > u32::MAX as f64 {
                                        return Err(fail("negative or oversized vertex index"));
                                    }
                                    poly.push(v as u32);
                                }
                                for j in 1..poly.len().saturating_sub(1) {
                                    faces.push([poly[0], poly[j], poly[j + 1]]);
                                }
                            }
                        }
                    }
                }
            }
            _ => {
                for _ in 0..el.count {
                    for p in &el.properties {
                        match p {
                            Property::Scalar { ty, .. } => {
                                reader.scalar(*ty)?;
                            }
                            Property::List { count, item, .. } => {
                                let n = reader.count(*count)?;
                                for _ in 0..n {
                                    reader.scalar(*item)?;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if vertices.iter().any(|v| v.iter().any(|c| !c.is_finite())) {
        return Err(fail("non-finite vertex position"));
    }
    let mesh = TriangleMesh {
        vertices,
        colors,
        faces,
    };
    mesh.validate().map_err(|e| fail(e.to_string()))?;
    Ok(mesh)
}

fn find_header_end(bytes: &[u8]) -> Result<usize> {
    const END: &[u8] = b"end_header";
    let limit = bytes.len().min(1 << 16);
    let pos = bytes[..limit]
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| fail("missing end_header"))?;
    let mut end = pos + END.len();
    if bytes.get(end) == Some(&b'\r') {
        end += 1;
    }
    if bytes.get(end) != Some(&b'\n') {
        return Err(fail("end_header not followed by newline"));
    }
    Ok(end + 1)
}

enum Reader<'a> {
    Ascii(std::str::SplitAsciiWhitespace<'a>),
    Binary { data: &'a [u8], pos: usize, big: bool },
}

impl Reader<'_> {
    fn remaining(&self) -> usize {
        match self {
            // Upper bound; tokens are at least one byte.
            Reader::Ascii(it) => it.clone().size_hint().1.unwrap_or(usize::MAX),
            Reader::Binary { data, pos, .. } => data.len() - pos,
        }
    }

    fn scalar(&mut self, ty: Scalar) -> Result<f64> {
        match self {
            Reader::Ascii(it) => {
                let tok = it.next().ok_or_else(|| fail("unexpected end of data"))?;
                tok.parse::<f64>().map_err(|_| fail(format!("bad number {tok:?}")))
            }
            Reader::Binary { data, pos, big } => {
                let n = ty.size();
                let bytes = data.get(*pos..*pos + n).ok_or_else(|| fail("unexpected end of data"))?;
                *pos += n;
                let mut b = [0u8; 8];
                b[..n].copy_from_slice(bytes);
                if *big {
                    b[..n].reverse();
                }
                Ok(match ty {
                    Scalar::I8 => b[0] as i8 as f64,
                    Scalar::U8 => b[0] as f64,
                    Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
                    Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
                    Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                    Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                    Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                    Scalar::F64 => f64::from_le_bytes(b),
                })
            }
        }
    }

    fn count(&mut self, ty: Scalar) -> Result<usize> {
        let v = self.scalar(ty)?;
        if !(v >= 0.0) || v.fract() != 0.0 || v > self.remaining() as f64 {
            return Err(fail("invalid list length"));
        }
        Ok(v as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Vec3::new(0.1, -0.2, 3.0),
                Vec3::new(1.0 / 3.0, 2.5, 1e-9),
                Vec3::new(-7.25, 0.0, 2.0),
                Vec3::new(0.0, 1.0, 1.0),
            ],
            vec![[0.0, 1.0, 128.0 / 255.0], [0.2, 0.4, 0.6], [1.0, 1.0, 1.0], [0.0, 0.0, 0.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let m = sample();
        let back = parse_ply(&encode_ply(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn reads_uchar_colors() {
        let text = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n\
                    property uchar red\nproperty uchar green\nproperty uchar blue\n\
                    element face 1\nproperty list uchar int vertex_indices\nend_header\n\
                    0 0 0 255 0 51\n1 0 0 0 0 0\n0 1 0 0 0 0\n3 0 1 2\n";
        let m = parse_ply(text.as_bytes()).unwrap();
        assert_eq!(m.colors[0], [1.0, 0.0, 0.2]);
    }

    #[test]
    fn reads_ascii_quads_without_colors() {
        let text = "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\n\
                    element face 1\nproperty list uchar int vertex_index\nend_header\n\
                    0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let m = parse_ply(text.as_bytes()).unwrap();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert_eq!(m.colors[0], DEFAULT_COLOR);
    }

    #[test]
    fn reads_big_endian_floats() {
        let mut bytes = b"ply\nformat binary_big_endian 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar uint vertex_indices\nend_header\n".to_vec();
        for v in [0.0f32, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        bytes.push(3);
        for i in [0u32, 1, 2] {
            bytes.extend_from_slice(&i.to_be_bytes());
        }
        let m = parse_ply(&bytes).unwrap();
        assert_eq!(m.vertices[1], Vec3::new(1.0, 0.0, 1.0));
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(parse_ply(b"").is_err());
        assert!(parse_ply(b"ply\nformat ascii 1.0\nend_header\n").is_ok());
        assert!(parse_ply(b"ply\nformat ascii 1.0\nelement vertex 99999999999\nproperty float x\nend_header\n").is_err());
        let bad_index = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n\
                         element face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n";
        assert!(parse_ply(bad_index.as_bytes()).is_err());
    }
}
