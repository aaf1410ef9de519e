//! OBJ and PLY reading, PLY writing.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{TriangleMesh, Vec3};
use crate::error::{Error, Result};

/// Facts about a loaded mesh that do not prevent loading.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadSummary {
    pub vertices: usize,
    pub facets: usize,
    /// Polygons with more than three corners that were fan-triangulated.
    pub triangulated_polygons: usize,
    pub boundary_edges: usize,
    pub non_manifold_edges: usize,
    pub had_colors: bool,
}

impl LoadSummary {
    pub fn is_manifold(&self) -> bool {
        self.non_manifold_edges == 0
    }
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    load_mesh_with_summary(path).map(|(m, _)| m)
}

/// Loads an OBJ or PLY file, chosen by extension.
pub fn load_mesh_with_summary(path: impl AsRef<Path>) -> Result<(TriangleMesh, LoadSummary)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    let raw = match ext.as_deref() {
        Some("obj") => parse_obj(&String::from_utf8_lossy(&bytes))?,
        Some("ply") => parse_ply(&bytes)?,
        _ => {
            return Err(Error::InvalidArgument(format!(
                "unsupported mesh extension: {}",
                path.display()
            )))
        }
    };
    let had_colors = raw.colors.is_some();
    let triangulated_polygons = raw.triangulated;
    let mesh = TriangleMesh::new(raw.vertices, raw.colors, raw.facets)?;
    let summary = LoadSummary {
        vertices: mesh.vertex_count(),
        facets: mesh.facet_count(),
        triangulated_polygons,
        boundary_edges: mesh.topology().boundary_edge_count(),
        non_manifold_edges: mesh.topology().non_manifold_edge_count(),
        had_colors,
    };
    Ok((mesh, summary))
}

/// Writes an ASCII PLY with double positions and float colors in [0, 1].
pub fn save_mesh(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\ncomment gmr mesh\n");
    let _ = writeln!(s, "element vertex {}", mesh.vertex_count());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    s.push_str("property float red\nproperty float green\nproperty float blue\n");
    let _ = writeln!(s, "element face {}", mesh.facet_count());
    s.push_str("property list uchar int vertex_indices\nend_header\n");
    for (v, c) in mesh.vertices().iter().zip(mesh.colors()) {
        let _ = writeln!(s, "{} {} {} {} {} {}", v.x, v.y, v.z, c.x as f32, c.y as f32, c.z as f32);
    }
    for f in mesh.facets() {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

struct RawMesh {
    vertices: Vec<Vec3>,
    colors: Option<Vec<Vec3>>,
    facets: Vec<[usize; 3]>,
    triangulated: usize,
}

fn fan(polygon: &[usize], facets: &mut Vec<[usize; 3]>) -> bool {
    for k in 1..polygon.len() - 1 {
        facets.push([polygon[0], polygon[k], polygon[k + 1]]);
    }
    polygon.len() > 3
}

fn parse_obj(text: &str) -> Result<RawMesh> {
    let mut vertices = Vec::new();
    let mut colors: Vec<Vec3> = Vec::new();
    let mut any_color = false;
    let mut facets = Vec::new();
    let mut triangulated = 0;

    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.split('#').next().unwrap_or("");
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let values: Vec<f64> = tokens
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| Error::parse(line_no, format!("bad number '{t}'")))
                    })
                    .collect::<Result<_>>()?;
                match values.len() {
                    3 | 4 => {
                        vertices.push(Vec3::new(values[0], values[1], values[2]));
                        colors.push(Vec3::repeat(super::DEFAULT_GRAY));
                    }
                    6 | 7 => {
                        vertices.push(Vec3::new(values[0], values[1], values[2]));
                        colors.push(Vec3::new(values[3], values[4], values[5]));
                        any_color = true;
                    }
                    n => {
                        return Err(Error::parse(
                            line_no,
                            format!("vertex line has {n} values, expected 3 or 6"),
                        ))
                    }
                }
            }
            Some("f") => {
                let mut polygon = Vec::new();
                for t in tokens {
                    let first = t.split('/').next().unwrap_or("");
                    let idx: i64 = first
                        .parse()
                        .map_err(|_| Error::parse(line_no, format!("bad face index '{t}'")))?;
                    let resolved = if idx > 0 {
                        idx - 1
                    } else if idx < 0 {
                        vertices.len() as i64 + idx
                    } else {
                        return Err(Error::parse(line_no, "face index 0 is invalid"));
                    };
                    if resolved < 0 || resolved as usize >= vertices.len() {
                        return Err(Error::parse(
                            line_no,
                            format!(
                                "face index {idx} out of range for {} vertices",
                                vertices.len()
                            ),
                        ));
                    }
                    polygon.push(resolved as usize);
                }
                if polygon.len() < 3 {
                    return Err(Error::parse(line_no, "face with fewer than 3 vertices"));
                }
                if fan(&polygon, &mut facets) {
                    triangulated += 1;
                }
            }
            _ => {}
        }
    }
    Ok(RawMesh {
        vertices,
        colors: any_color.then_some(colors),
        facets,
        triangulated,
    })
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

    /// Divisor mapping stored color values to [0, 1].
    fn color_range(self) -> f64 {
        match self {
            Scalar::U8 | Scalar::I8 => 255.0,
            Scalar::U16 | Scalar::I16 => 65535.0,
            Scalar::U32 | Scalar::I32 => u32::MAX as f64,
            Scalar::F32 | Scalar::F64 => 1.0,
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
enum PropKind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    kind: PropKind,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug, PartialEq)]
enum Format {
    Ascii,
    BinaryLe,
}

/// One decoded record: scalar values, or list items.
enum Value {
    Scalar(f64),
    List(Vec<f64>),
}

trait RecordSource {
    fn scalar(&mut self, ty: Scalar) -> Result<f64>;
    fn line(&self) -> usize;
    fn end_record(&mut self) -> Result<()>;
}

struct AsciiSource<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    tokens: Vec<&'a str>,
    pos: usize,
    line_no: usize,
    line_offset: usize,
}

impl<'a> AsciiSource<'a> {
    fn next_line(&mut self) -> Result<()> {
        loop {
            match self.lines.next() {
                Some((i, l)) => {
                    self.line_no = i + 1 + self.line_offset;
                    self.tokens = l.split_whitespace().collect();
                    self.pos = 0;
                    if !self.tokens.is_empty() {
                        return Ok(());
                    }
                }
                None => return Err(Error::parse(self.line_no + 1, "unexpected end of file")),
            }
        }
    }
}

impl RecordSource for AsciiSource<'_> {
    fn scalar(&mut self, _ty: Scalar) -> Result<f64> {
        if self.pos >= self.tokens.len() {
            if self.pos == 0 {
                self.next_line()?;
            } else {
                return Err(Error::parse(self.line_no, "record has too few values"));
            }
        }
        let t = self.tokens[self.pos];
        self.pos += 1;
        t.parse::<f64>()
            .map_err(|_| Error::parse(self.line_no, format!("bad number '{t}'")))
    }

    fn line(&self) -> usize {
        self.line_no
    }

    fn end_record(&mut self) -> Result<()> {
        self.tokens.clear();
        self.pos = 0;
        Ok(())
    }
}

struct BinarySource<'a> {
    data: &'a [u8],
    offset: usize,
    header_lines: usize,
}

impl RecordSource for BinarySource<'_> {
    fn scalar(&mut self, ty: Scalar) -> Result<f64> {
        let n = ty.size();
        if self.offset + n > self.data.len() {
            return Err(Error::parse(
                self.header_lines + 1,
                format!("binary body truncated at byte {}", self.offset),
            ));
        }
        let v = ty.read_le(&self.data[self.offset..self.offset + n]);
        self.offset += n;
        Ok(v)
    }

    fn line(&self) -> usize {
        self.header_lines + 1
    }

    fn end_record(&mut self) -> Result<()> {
        Ok(())
    }
}

fn parse_ply(bytes: &[u8]) -> Result<RawMesh> {
    let marker = b"end_header";
    let header_end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::parse(1, "missing end_header"))?;
    let mut body_start = header_end + marker.len();
    while body_start < bytes.len() && bytes[body_start] != b'\n' {
        body_start += 1;
    }
    body_start += 1;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::parse(1, "header is not UTF-8"))?;

    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut header_lines = 1;
    for (i, line) in header.lines().enumerate() {
        let line_no = i + 1;
        header_lines = line_no + 1;
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["ply"] if i == 0 => {}
            _ if i == 0 => return Err(Error::parse(1, "not a PLY file")),
            ["format", "ascii", _] => format = Some(Format::Ascii),
            ["format", "binary_little_endian", _] => format = Some(Format::BinaryLe),
            ["format", other, _] => {
                return Err(Error::parse(line_no, format!("unsupported PLY format {other}")))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::parse(line_no, "bad element count"))?,
                properties: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(line_no, "property before element"))?;
                let count = Scalar::parse(count)
                    .ok_or_else(|| Error::parse(line_no, format!("unknown type {count}")))?;
                let item = Scalar::parse(item)
                    .ok_or_else(|| Error::parse(line_no, format!("unknown type {item}")))?;
                el.properties.push(Property {
                    name: name.to_string(),
                    kind: PropKind::List { count, item },
                });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(line_no, "property before element"))?;
                let ty = Scalar::parse(ty)
                    .ok_or_else(|| Error::parse(line_no, format!("unknown type {ty}")))?;
                el.properties.push(Property {
                    name: name.to_string(),
                    kind: PropKind::Scalar(ty),
                });
            }
            _ => return Err(Error::parse(line_no, format!("unrecognized header line '{line}'"))),
        }
    }
    let format = format.ok_or_else(|| Error::parse(2, "missing format line"))?;
    let body = &bytes[body_start.min(bytes.len())..];

    match format {
        Format::Ascii => {
            let text = std::str::from_utf8(body)
                .map_err(|_| Error::parse(header_lines, "ASCII body is not UTF-8"))?;
            let mut src = AsciiSource {
                lines: text.lines().enumerate(),
                tokens: Vec::new(),
                pos: 0,
                line_no: header_lines,
                line_offset: header_lines,
            };
            read_ply_body(&elements, &mut src)
        }
        Format::BinaryLe => {
            let mut src = BinarySource {
                data: body,
                offset: 0,
                header_lines,
            };
            read_ply_body(&elements, &mut src)
        }
    }
}

fn read_ply_body(elements: &[Element], src: &mut dyn RecordSource) -> Result<RawMesh> {
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut has_color = false;
    let mut facets = Vec::new();
    let mut triangulated = 0;
    let mut faces_seen: Vec<(usize, Vec<usize>)> = Vec::new();

    for el in elements {
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        let find = |n: &str| el.properties.iter().position(|p| p.name == n);
        let (xi, yi, zi) = (find("x"), find("y"), find("z"));
        let (ri, gi, bi) = (find("red"), find("green"), find("blue"));
        if is_vertex && (xi.is_none() || yi.is_none() || zi.is_none()) {
            return Err(Error::parse(src.line(), "vertex element lacks x, y, z"));
        }
        let color_props = match (ri, gi, bi) {
            (Some(r), Some(g), Some(b)) if is_vertex => Some([r, g, b]),
            _ => None,
        };
        has_color |= color_props.is_some();
        let index_prop = find("vertex_indices").or_else(|| find("vertex_index"));

        for _ in 0..el.count {
            let line = src.line();
            let mut record = Vec::with_capacity(el.properties.len());
            for p in &el.properties {
                match p.kind {
                    PropKind::Scalar(ty) => record.push(Value::Scalar(src.scalar(ty)?)),
                    PropKind::List { count, item } => {
                        let n = src.scalar(count)?;
                        if n < 0.0 || n.fract() != 0.0 {
                            return Err(Error::parse(src.line(), "bad list length"));
                        }
                        let items = (0..n as usize)
                            .map(|_| src.scalar(item))
                            .collect::<Result<Vec<_>>>()?;
                        record.push(Value::List(items));
                    }
                }
            }
            let line = line.max(src.line());
            src.end_record()?;
            let scalar = |i: usize| match &record[i] {
                Value::Scalar(v) => Ok(*v),
                Value::List(_) => Err(Error::parse(line, "expected scalar property")),
            };
            if is_vertex {
                vertices.push(Vec3::new(
                    scalar(xi.unwrap())?,
                    scalar(yi.unwrap())?,
                    scalar(zi.unwrap())?,
                ));
                if let Some(cp) = color_props {
                    let mut c = Vec3::zeros();
                    for (k, &pi) in cp.iter().enumerate() {
                        let range = match el.properties[pi].kind {
                            PropKind::Scalar(ty) => ty.color_range(),
                            PropKind::List { .. } => 1.0,
                        };
                        c[k] = scalar(pi)? / range;
                    }
                    colors.push(c);
                } else {
                    colors.push(Vec3::repeat(super::DEFAULT_GRAY));
                }
            } else if is_face {
                let pi = index_prop
                    .ok_or_else(|| Error::parse(line, "face element lacks vertex_indices"))?;
                let Value::List(items) = &record[pi] else {
                    return Err(Error::parse(line, "vertex_indices is not a list"));
                };
                let polygon: Vec<usize> = items
                    .iter()
                    .map(|&v| {
                        if v < 0.0 || v.fract() != 0.0 {
                            Err(Error::parse(line, format!("bad vertex index {v}")))
                        } else {
                            Ok(v as usize)
                        }
                    })
                    .collect::<Result<_>>()?;
                if polygon.len() < 3 {
                    return Err(Error::parse(line, "face with fewer than 3 vertices"));
                }
                faces_seen.push((line, polygon));
            }
        }
    }

    for (line, polygon) in faces_seen {
        if let Some(&bad) = polygon.iter().find(|&&i| i >= vertices.len()) {
            return Err(Error::parse(
                line,
                format!(
                    "face index {bad} out of range for {} vertices",
                    vertices.len()
                ),
            ));
        }
        if fan(&polygon, &mut facets) {
            triangulated += 1;
        }
    }

    Ok(RawMesh {
        vertices,
        colors: has_color.then_some(colors),
        facets,
        triangulated,
    })
}
