//! PLY reader (ASCII and binary little-endian) and binary writer.
//!
//! Only the `vertex` element's `x`, `y`, `z` (and optional `intensity`)
//! properties are kept; every other property and element is skipped.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Location, Result};
use crate::geometry::{Point, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
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
    properties: Vec<Property>,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    let err = |offset: usize, msg: String| Error::parse(path, Location::Byte(offset as u64), msg);
    let mut offset = 0;
    let next_line = |offset: &mut usize| -> Option<(usize, String)> {
        if *offset >= bytes.len() {
            return None;
        }
        let start = *offset;
        let end = bytes[start..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |p| start + p);
        *offset = (end + 1).min(bytes.len() + 1);
        let line = String::from_utf8_lossy(&bytes[start..end]).trim_end_matches('\r').to_string();
        Some((start, line))
    };

    match next_line(&mut offset) {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(err(0, "missing 'ply' magic".into())),
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (at, line) = next_line(&mut offset).ok_or_else(|| err(bytes.len(), "header ended without 'end_header'".into()))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", kind, version] => {
                if *version != "1.0" {
                    return Err(err(at, format!("unsupported PLY version {version}")));
                }
                format = Some(match *kind {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLittleEndian,
                    "binary_big_endian" => return Err(err(at, "big-endian PLY is not supported".into())),
                    other => return Err(err(at, format!("unknown PLY format '{other}'"))),
                });
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| err(at, format!("invalid element count '{count}'")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", count, item, _name] => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| err(at, "property before any element".into()))?;
                let count = Scalar::parse(count).ok_or_else(|| err(at, format!("unknown type '{count}'")))?;
                let item = Scalar::parse(item).ok_or_else(|| err(at, format!("unknown type '{item}'")))?;
                element.properties.push(Property::List { count, item });
            }
            ["property", ty, name] => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| err(at, "property before any element".into()))?;
                let ty = Scalar::parse(ty).ok_or_else(|| err(at, format!("unknown type '{ty}'")))?;
                element.properties.push(Property::Scalar {
                    name: name.to_string(),
                    ty,
                });
            }
            ["end_header"] => break,
            _ => return Err(err(at, format!("malformed header line '{line}'"))),
        }
    }
    let format = format.ok_or_else(|| err(0, "header has no format line".into()))?;
    Ok(Header {
        format,
        elements,
        body_offset: offset.min(bytes.len()),
    })
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(path, &bytes)
}

fn parse_ply(path: &Path, bytes: &[u8]) -> Result<PointCloud> {
    let header = parse_header(path, bytes)?;
    let vertex = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::parse(path, Location::Byte(0), "no vertex element"))?;
    let props = &header.elements[vertex].properties;
    let slot = |wanted: &str| {
        props
            .iter()
            .position(|p| matches!(p, Property::Scalar { name, .. } if name == wanted))
    };
    let (x, y, z) = match (slot("x"), slot("y"), slot("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(Error::parse(path, Location::Byte(0), "vertex element lacks x, y, z properties")),
    };
    let intensity = slot("intensity");

    match header.format {
        Format::Ascii => parse_ascii(path, bytes, &header, vertex, [x, y, z], intensity),
        Format::BinaryLittleEndian => parse_binary(path, bytes, &header, vertex, [x, y, z], intensity),
    }
}

fn parse_ascii(
    path: &Path,
    bytes: &[u8],
    header: &Header,
    vertex: usize,
    xyz: [usize; 3],
    intensity: Option<usize>,
) -> Result<PointCloud> {
    let body = &bytes[header.body_offset..];
    let mut cursor = 0usize;
    let mut points = Vec::new();
    let mut values_i = Vec::new();
    for (e_idx, element) in header.elements.iter().enumerate() {
        for _ in 0..element.count {
            // Skip blank lines.
            let (start, line) = loop {
                if cursor >= body.len() {
                    return Err(Error::parse(
                        path,
                        Location::Byte((header.body_offset + cursor) as u64),
                        format!("truncated body: element '{}' is missing rows", element.name),
                    ));
                }
                let start = cursor;
                let end = body[start..].iter().position(|&b| b == b'\n').map_or(body.len(), |p| start + p);
                cursor = end + 1;
                let line = std::str::from_utf8(&body[start..end]).unwrap_or("").trim();
                if !line.is_empty() {
                    break (start, line);
                }
            };
            let at = Location::Byte((header.body_offset + start) as u64);
            let mut tokens = line.split_whitespace();
            let mut scalars = Vec::with_capacity(element.properties.len());
            for prop in &element.properties {
                let mut take = || -> Result<f64> {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| Error::parse(path, at, "row has too few values"))?;
                    tok.parse::<f64>()
                        .map_err(|_| Error::parse(path, at, format!("invalid number '{tok}'")))
                };
                match prop {
                    Property::Scalar { .. } => scalars.push(take()?),
                    Property::List { .. } => {
                        let n = take()? as usize;
                        for _ in 0..n {
                            take()?;
                        }
                        scalars.push(f64::NAN);
                    }
                }
            }
            if e_idx == vertex {
                let p = Point::new(scalars[xyz[0]], scalars[xyz[1]], scalars[xyz[2]]);
                if !p.iter().all(|c| c.is_finite()) {
                    return Err(Error::parse(path, at, "non-finite vertex coordinate"));
                }
                points.push(p);
                if let Some(i) = intensity {
                    values_i.push(scalars[i]);
                }
            }
        }
        if e_idx == vertex {
            break;
        }
    }
    PointCloud::with_intensity(points, intensity.map(|_| values_i))
}

fn parse_binary(
    path: &Path,
    bytes: &[u8],
    header: &Header,
    vertex: usize,
    xyz: [usize; 3],
    intensity: Option<usize>,
) -> Result<PointCloud> {
    let mut offset = header.body_offset;
    let need = |offset: usize, n: usize| -> Result<()> {
        if offset + n > bytes.len() {
            Err(Error::parse(
                path,
                Location::Byte(offset as u64),
                format!("truncated body: missing {} bytes", offset + n - bytes.len()),
            ))
        } else {
            Ok(())
        }
    };
    let mut points = Vec::new();
    let mut values_i = Vec::new();
    for (e_idx, element) in header.elements.iter().enumerate() {
        let fixed: Option<usize> = element
            .properties
            .iter()
            .map(|p| match p {
                Property::Scalar { ty, .. } => Some(ty.size()),
                Property::List { .. } => None,
            })
            .sum();
        if e_idx == vertex {
            let stride = fixed.ok_or_else(|| Error::parse(path, Location::Byte(offset as u64), "list property in vertex element"))?;
            need(offset, stride * element.count)?;
            let layout: Vec<(usize, Scalar)> = element
                .properties
                .iter()
                .scan(0, |acc, p| {
                    let Property::Scalar { ty, .. } = p else { unreachable!() };
                    let at = *acc;
                    *acc += ty.size();
                    Some((at, *ty))
                })
                .collect();
            points.reserve(element.count);
            for row in 0..element.count {
                let base = offset + row * stride;
                let get = |slot: usize| {
                    let (at, ty) = layout[slot];
                    ty.read_le(&bytes[base + at..])
                };
                let p = Point::new(get(xyz[0]), get(xyz[1]), get(xyz[2]));
                if !p.iter().all(|c| c.is_finite()) {
                    return Err(Error::parse(path, Location::Byte(base as u64), "non-finite vertex coordinate"));
                }
                points.push(p);
                if let Some(i) = intensity {
                    values_i.push(get(i));
                }
            }
            break;
        }
        match fixed {
            Some(stride) => {
                need(offset, stride * element.count)?;
                offset += stride * element.count;
            }
            None => {
                for _ in 0..element.count {
                    for prop in &element.properties {
                        match prop {
                            Property::Scalar { ty, .. } => {
                                need(offset, ty.size())?;
                                offset += ty.size();
                            }
                            Property::List { count, item } => {
                                need(offset, count.size())?;
                                let n = count.read_le(&bytes[offset..]) as usize;
                                offset += count.size();
                                need(offset, n * item.size())?;
                                offset += n * item.size();
                            }
                        }
                    }
                }
            }
        }
    }
    PointCloud::with_intensity(points, intensity.map(|_| values_i))
}

/// Writes a binary little-endian PLY with `double` coordinates (and
/// `double intensity` when present).
pub fn write_ply(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(256 + cloud.len() * 32);
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\ncomment overlap-reg\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n",
        cloud.len()
    )
    .expect("write to vec");
    if cloud.intensity().is_some() {
        out.extend_from_slice(b"property double intensity\n");
    }
    out.extend_from_slice(b"end_header\n");
    for (i, p) in cloud.points().iter().enumerate() {
        for c in p.iter() {
            out.extend_from_slice(&c.to_le_bytes());
        }
        if let Some(values) = cloud.intensity() {
            out.extend_from_slice(&values[i].to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
