//! Minimal PLY point-cloud reader and writer.
//!
//! Reads `ascii` and `binary_little_endian` files with a `vertex` element
//! carrying `x`, `y`, `z` as `float`/`double` (any other properties and
//! elements are skipped). Writes `binary_little_endian` with `double`
//! coordinates so a save/load round trip is lossless for `f64`.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use super::{write_atomic, IngestError};
use crate::geometry::PointCloud;
use crate::scalar::Real;

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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
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

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
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

#[derive(Debug, PartialEq)]
enum Format {
    Ascii,
    BinaryLe,
}

fn malformed(path: &Path, msg: impl std::fmt::Display) -> IngestError {
    IngestError::format(path, format!("malformed header: {msg}"))
}

fn parse_header<R: BufRead>(path: &Path, r: &mut R) -> Result<(Format, Vec<Element>), IngestError> {
    let mut line = String::new();
    let mut next = |line: &mut String| -> Result<bool, IngestError> {
        line.clear();
        let n = r.read_line(line).map_err(|e| IngestError::io(path, e))?;
        Ok(n > 0)
    };
    if !next(&mut line)? || line.trim_end() != "ply" {
        return Err(malformed(path, "missing 'ply' magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        if !next(&mut line)? {
            return Err(malformed(path, "missing end_header"));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLe,
                    other => return Err(malformed(path, format!("unsupported format '{other}'"))),
                });
            }
            ["element", name, count] => {
                let count = count.parse().map_err(|_| malformed(path, format!("bad count '{count}'")))?;
                elements.push(Element { name: name.to_string(), count, props: Vec::new() });
            }
            ["property", "list", c, i, _name] => {
                let el = elements.last_mut().ok_or_else(|| malformed(path, "property before element"))?;
                let count = Scalar::parse(c).ok_or_else(|| malformed(path, format!("unknown type '{c}'")))?;
                let item = Scalar::parse(i).ok_or_else(|| malformed(path, format!("unknown type '{i}'")))?;
                el.props.push(Property::List { count, item });
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| malformed(path, "property before element"))?;
                let ty = Scalar::parse(ty).ok_or_else(|| malformed(path, format!("unknown type '{ty}'")))?;
                el.props.push(Property::Scalar { name: name.to_string(), ty });
            }
            other => return Err(malformed(path, format!("unexpected line '{}'", other.join(" ")))),
        }
    }
    let format = format.ok_or_else(|| malformed(path, "missing format line"))?;
    Ok((format, elements))
}

fn xyz_slots(path: &Path, el: &Element) -> Result<[usize; 3], IngestError> {
    let mut slots = [usize::MAX; 3];
    for (i, p) in el.props.iter().enumerate() {
        if let Property::Scalar { name, ty } = p {
            let axis = match name.as_str() {
                "x" => 0,
                "y" => 1,
                "z" => 2,
                _ => continue,
            };
            if !matches!(ty, Scalar::F32 | Scalar::F64) {
                return Err(malformed(path, format!("vertex property '{name}' must be float or double")));
            }
            slots[axis] = i;
        }
    }
    if slots.contains(&usize::MAX) {
        return Err(malformed(path, "vertex element lacks x/y/z"));
    }
    Ok(slots)
}

fn count_mismatch(path: &Path) -> IngestError {
    IngestError::format(path, "element count mismatch")
}

pub fn load_point_cloud<T: Real>(path: &Path) -> Result<PointCloud<T>, IngestError> {
    let file = std::fs::File::open(path).map_err(|e| IngestError::io(path, e))?;
    let mut r = BufReader::new(file);
    let (format, elements) = parse_header(path, &mut r)?;
    let vertex_pos = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| malformed(path, "no vertex element"))?;
    let slots = xyz_slots(path, &elements[vertex_pos])?;

    let raw = match format {
        Format::Ascii => read_ascii(path, &mut r, &elements, vertex_pos, slots)?,
        Format::BinaryLe => read_binary(path, &mut r, &elements, vertex_pos, slots)?,
    };
    let mut points = Vec::with_capacity(raw.len());
    for (index, p) in raw.into_iter().enumerate() {
        if !p.iter().all(|c| c.is_finite()) {
            return Err(IngestError::format(path, format!("non-finite coordinate at vertex {index}")));
        }
        points.push(p.map(T::lit));
    }
    Ok(PointCloud::from_finite(points))
}

fn read_ascii<R: BufRead>(
    path: &Path,
    r: &mut R,
    elements: &[Element],
    vertex_pos: usize,
    slots: [usize; 3],
) -> Result<Vec<[f64; 3]>, IngestError> {
    let mut body = String::new();
    r.read_to_string(&mut body).map_err(|e| IngestError::io(path, e))?;
    let mut lines = body.lines().filter(|l| !l.trim().is_empty());
    let mut out = Vec::new();
    for (ei, el) in elements.iter().enumerate() {
        for _ in 0..el.count {
            let line = lines.next().ok_or_else(|| count_mismatch(path))?;
            if ei != vertex_pos {
                continue;
            }
            let vals: Vec<&str> = line.split_whitespace().collect();
            let mut p = [0.0; 3];
            for axis in 0..3 {
                let tok = vals.get(slots[axis]).ok_or_else(|| count_mismatch(path))?;
                p[axis] = tok
                    .parse()
                    .map_err(|_| IngestError::format(path, format!("bad number '{tok}'")))?;
            }
            out.push(p);
        }
        if ei == vertex_pos {
            break;
        }
    }
    Ok(out)
}

fn read_binary<R: Read>(
    path: &Path,
    r: &mut R,
    elements: &[Element],
    vertex_pos: usize,
    slots: [usize; 3],
) -> Result<Vec<[f64; 3]>, IngestError> {
    let mut buf = [0u8; 8];
    let mut read = |n: usize, buf: &mut [u8; 8]| r.read_exact(&mut buf[..n]).map_err(|_| count_mismatch(path));
    let mut out = Vec::new();
    for (ei, el) in elements.iter().enumerate() {
        let is_vertex = ei == vertex_pos;
        for _ in 0..el.count {
            let mut p = [0.0; 3];
            for (pi, prop) in el.props.iter().enumerate() {
                match prop {
                    Property::Scalar { ty, .. } => {
                        read(ty.size(), &mut buf)?;
                        if is_vertex {
                            if let Some(axis) = slots.iter().position(|&s| s == pi) {
                                p[axis] = ty.decode_le(&buf);
                            }
                        }
                    }
                    Property::List { count, item } => {
                        read(count.size(), &mut buf)?;
                        let n = count.decode_le(&buf) as usize;
                        for _ in 0..n {
                            read(item.size(), &mut buf)?;
                        }
                    }
                }
            }
            if is_vertex {
                out.push(p);
            }
        }
        if is_vertex {
            break;
        }
    }
    Ok(out)
}

pub fn save_point_cloud<T: Real>(cloud: &PointCloud<T>, path: &Path) -> Result<(), IngestError> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    )
    .into_bytes();
    out.reserve(cloud.len() * 24);
    for p in cloud.iter() {
        for c in p {
            out.extend_from_slice(&c.as_f64().to_le_bytes());
        }
    }
    write_atomic(path, &out)
}
