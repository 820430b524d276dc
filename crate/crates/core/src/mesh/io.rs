//! Mesh file formats.
//!
//! PLY (ASCII and binary, optional per-vertex RGB) is read and written here.
//! OBJ goes through `tobj`; a diffuse texture referenced by the MTL file is
//! loaded with per-corner texture coordinates and can be baked to vertex
//! colors with [`vertex_colors`].

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Mesh, Texture, Vec3};
use crate::error::{Error, Result};

/// Length unit of a mesh file. Everything downstream works in millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    #[default]
    Mm,
    M,
}

impl Units {
    pub fn to_mm(self) -> f64 {
        match self {
            Units::Mm => 1.0,
            Units::M => 1000.0,
        }
    }
}

impl std::str::FromStr for Units {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mm" => Ok(Units::Mm),
            "m" => Ok(Units::M),
            other => Err(Error::Config(format!("unknown unit '{other}' (expected mm or m)"))),
        }
    }
}

/// Loads a `.ply` or `.obj` file, scaling positions to millimeters.
pub fn load_mesh(path: &Path, units: Units) -> Result<Mesh> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("mesh")
        .to_string();
    let mesh = match ext.as_str() {
        "ply" => {
            let data = read_ply(path)?;
            let verts = data.vertices.iter().map(|v| v * units.to_mm()).collect();
            let mesh = Mesh::new(verts, data.triangles)?;
            match data.colors {
                Some(c) => mesh.with_colors(c)?,
                None => mesh,
            }
        }
        "obj" => load_obj(path, units)?,
        other => return Err(Error::Format(format!("unsupported mesh extension '{other}'"))),
    };
    Ok(mesh.with_id(id))
}

/// Per-vertex colors: stored colors if present, else the texture sampled
/// bilinearly at each vertex's texture coordinates (averaged over corners
/// when a vertex sits on a seam).
pub fn vertex_colors(mesh: &Mesh) -> Option<Vec<[f64; 3]>> {
    if let Some(c) = mesh.colors() {
        return Some(c.to_vec());
    }
    let tex = mesh.texture()?;
    let mut acc = vec![[0.0f64; 3]; mesh.num_vertices()];
    let mut count = vec![0usize; mesh.num_vertices()];
    for (tri, uvs) in mesh.triangles().iter().zip(&tex.uvs) {
        for c in 0..3 {
            let rgb = sample_bilinear(&tex.image, uvs[c]);
            for k in 0..3 {
                acc[tri[c]][k] += rgb[k];
            }
            count[tri[c]] += 1;
        }
    }
    Some(
        acc.into_iter()
            .zip(count)
            .map(|(a, n)| a.map(|x| x / n.max(1) as f64))
            .collect(),
    )
}

/// Bilinear lookup with clamp-to-edge; `v = 0` is the bottom row.
pub fn sample_bilinear(img: &image::RgbImage, uv: [f64; 2]) -> [f64; 3] {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let x = (uv[0] * w - 0.5).clamp(0.0, w - 1.0);
    let y = ((1.0 - uv[1]) * h - 0.5).clamp(0.0, h - 1.0);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as u32, y0 as u32);
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let px = |x: u32, y: u32| img.get_pixel(x, y).0.map(|c| c as f64 / 255.0);
    let (a, b, c, d) = (px(x0, y0), px(x1, y0), px(x0, y1), px(x1, y1));
    let mut out = [0.0; 3];
    for k in 0..3 {
        out[k] = (a[k] * (1.0 - fx) + b[k] * fx) * (1.0 - fy) + (c[k] * (1.0 - fx) + d[k] * fx) * fy;
    }
    out
}

fn load_obj(path: &Path, units: Units) -> Result<Mesh> {
    let opts = tobj::LoadOptions {
        triangulate: true,
        single_index: false,
        ..Default::default()
    };
    let (models, materials) =
        tobj::load_obj(path, &opts).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let materials = materials.unwrap_or_default();
    let scale = units.to_mm();

    let mut verts = Vec::new();
    let mut tris = Vec::new();
    let mut colors: Vec<[f64; 3]> = Vec::new();
    let mut uvs: Vec<[[f64; 2]; 3]> = Vec::new();
    let mut all_have_uv = true;
    let mut all_have_color = true;
    let mut texture_file = None;

    for model in &models {
        let m = &model.mesh;
        let base = verts.len();
        for p in m.positions.chunks_exact(3) {
            verts.push(Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64) * scale);
        }
        if m.vertex_color.len() == m.positions.len() {
            colors.extend(
                m.vertex_color
                    .chunks_exact(3)
                    .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64]),
            );
        } else {
            all_have_color = false;
        }
        let has_uv = !m.texcoord_indices.is_empty() && m.texcoord_indices.len() == m.indices.len();
        all_have_uv &= has_uv;
        for (k, t) in m.indices.chunks_exact(3).enumerate() {
            tris.push([
                base + t[0] as usize,
                base + t[1] as usize,
                base + t[2] as usize,
            ]);
            if has_uv {
                let uv = |j: usize| {
                    let i = m.texcoord_indices[3 * k + j] as usize;
                    [m.texcoords[2 * i] as f64, m.texcoords[2 * i + 1] as f64]
                };
                uvs.push([uv(0), uv(1), uv(2)]);
            }
        }
        if texture_file.is_none() {
            if let Some(mat) = m.material_id.and_then(|i| materials.get(i)) {
                texture_file = mat.diffuse_texture.clone();
            }
        }
    }

    let mut mesh = Mesh::new(verts, tris)?;
    if all_have_color && !colors.is_empty() {
        mesh = mesh.with_colors(colors)?;
    }
    if let (true, Some(file)) = (all_have_uv, texture_file) {
        let dir = path.parent().unwrap_or(Path::new("."));
        let image = image::open(dir.join(file))?.to_rgb8();
        mesh = mesh.with_texture(Texture { uvs, image })?;
    }
    Ok(mesh)
}

/// Raw PLY contents.
#[derive(Debug, Clone, Default)]
pub struct PlyData {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub colors: Option<Vec<[f64; 3]>>,
    pub comments: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Encoding {
    Ascii,
    Little,
    Big,
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
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(Error::Format(format!("unknown PLY type '{other}'"))),
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
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct ValueReader<R> {
    inner: R,
    enc: Encoding,
    tokens: std::vec::IntoIter<String>,
}

impl<R: BufRead> ValueReader<R> {
    fn next(&mut self, ty: Scalar) -> Result<f64> {
        match self.enc {
            Encoding::Ascii => {
                let tok = loop {
                    if let Some(t) = self.tokens.next() {
                        break t;
                    }
                    let mut line = String::new();
                    if self.inner.read_line(&mut line)? == 0 {
                        return Err(Error::Format("unexpected end of PLY data".into()));
                    }
                    self.tokens = line
                        .split_whitespace()
                        .map(String::from)
                        .collect::<Vec<_>>()
                        .into_iter();
                };
                tok.parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad PLY value '{tok}'")))
            }
            enc => {
                let mut buf = [0u8; 8];
                let n = ty.size();
                self.inner.read_exact(&mut buf[..n])?;
                let b = &buf[..n];
                macro_rules! num {
                    ($t:ty) => {{
                        let arr = b.try_into().unwrap();
                        (if enc == Encoding::Little {
                            <$t>::from_le_bytes(arr)
                        } else {
                            <$t>::from_be_bytes(arr)
                        }) as f64
                    }};
                }
                Ok(match ty {
                    Scalar::I8 => b[0] as i8 as f64,
                    Scalar::U8 => b[0] as f64,
                    Scalar::I16 => num!(i16),
                    Scalar::U16 => num!(u16),
                    Scalar::I32 => num!(i32),
                    Scalar::U32 => num!(u32),
                    Scalar::F32 => num!(f32),
                    Scalar::F64 => num!(f64),
                })
            }
        }
    }
}

pub fn read_ply(path: &Path) -> Result<PlyData> {
    let mut r = BufReader::new(File::open(path)?);
    read_ply_from(&mut r)
}

pub fn read_ply_from<R: BufRead>(r: &mut R) -> Result<PlyData> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(Error::Format("missing 'ply' magic".into()));
    }
    let mut enc = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut comments = Vec::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Format("PLY header not terminated".into()));
        }
        let l = line.trim();
        let mut it = l.split_whitespace();
        match it.next() {
            Some("format") => {
                enc = Some(match it.next() {
                    Some("ascii") => Encoding::Ascii,
                    Some("binary_little_endian") => Encoding::Little,
                    Some("binary_big_endian") => Encoding::Big,
                    other => return Err(Error::Format(format!("unknown PLY format {other:?}"))),
                });
            }
            Some("comment") => comments.push(l.strip_prefix("comment").unwrap_or("").trim().to_string()),
            Some("obj_info") => {}
            Some("element") => {
                let name = it.next().unwrap_or_default().to_string();
                let count = it
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::Format(format!("bad element line '{l}'")))?;
                elements.push(Element {
                    name,
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::Format("property before element".into()))?;
                let parts: Vec<&str> = it.collect();
                let prop = match parts.as_slice() {
                    ["list", ct, it, name] => {
                        Property::List(name.to_string(), Scalar::parse(ct)?, Scalar::parse(it)?)
                    }
                    [ty, name] => Property::Scalar(name.to_string(), Scalar::parse(ty)?),
                    _ => return Err(Error::Format(format!("bad property line '{l}'"))),
                };
                el.props.push(prop);
            }
            Some("end_header") => break,
            Some(_) | None => {}
        }
    }
    let enc = enc.ok_or_else(|| Error::Format("PLY format line missing".into()))?;
    let mut vr = ValueReader {
        inner: r,
        enc,
        tokens: Vec::new().into_iter(),
    };

    let mut data = PlyData {
        comments,
        ..Default::default()
    };
    for el in &elements {
        match el.name.as_str() {
            "vertex" => {
                let mut colors = Vec::with_capacity(el.count);
                let mut has_color = [false; 3];
                for _ in 0..el.count {
                    let mut p = Vec3::zeros();
                    let mut c = [0.0; 3];
                    for prop in &el.props {
                        match prop {
                            Property::Scalar(name, ty) => {
                                let v = vr.next(*ty)?;
                                let scale = if matches!(ty, Scalar::F32 | Scalar::F64) { 1.0 } else { 1.0 / 255.0 };
                                match name.as_str() {
                                    "x" => p.x = v,
                                    "y" => p.y = v,
                                    "z" => p.z = v,
                                    "red" | "r" => {
                                        c[0] = v * scale;
                                        has_color[0] = true
                                    }
                                    "green" | "g" => {
                                        c[1] = v * scale;
                                        has_color[1] = true
                                    }
                                    "blue" | "b" => {
                                        c[2] = v * scale;
                                        has_color[2] = true
                                    }
                                    _ => {}
                                }
                            }
                            Property::List(_, ct, it) => skip_list(&mut vr, *ct, *it)?,
                        }
                    }
                    data.vertices.push(p);
                    colors.push(c.map(|x: f64| x.clamp(0.0, 1.0)));
                }
                if has_color.iter().all(|&h| h) {
                    data.colors = Some(colors);
                }
            }
            "face" => {
                for _ in 0..el.count {
                    for prop in &el.props {
                        match prop {
                            Property::List(name, ct, it)
                                if name == "vertex_indices" || name == "vertex_index" =>
                            {
                                let n = vr.next(*ct)? as usize;
                                let mut idx = Vec::with_capacity(n);
                                for _ in 0..n {
                                    let v = vr.next(*it)?;
                                    if v < 0.0 {
                                        return Err(Error::Format("negative PLY face index".into()));
                                    }
                                    idx.push(v as usize);
                                }
                                if n < 3 {
                                    return Err(Error::Format(format!("PLY face with {n} vertices")));
                                }
                                for k in 1..n - 1 {
                                    data.triangles.push([idx[0], idx[k], idx[k + 1]]);
                                }
                            }
                            Property::List(_, ct, it) => skip_list(&mut vr, *ct, *it)?,
                            Property::Scalar(_, ty) => {
                                vr.next(*ty)?;
                            }
                        }
                    }
                }
            }
            _ => {
                for _ in 0..el.count {
                    for prop in &el.props {
                        match prop {
                            Property::Scalar(_, ty) => {
                                vr.next(*ty)?;
                            }
                            Property::List(_, ct, it) => skip_list(&mut vr, *ct, *it)?,
                        }
                    }
                }
            }
        }
    }
    Ok(data)
}

fn skip_list<R: BufRead>(vr: &mut ValueReader<R>, ct: Scalar, it: Scalar) -> Result<()> {
    let n = vr.next(ct)? as usize;
    for _ in 0..n {
        vr.next(it)?;
    }
    Ok(())
}

/// Writes binary little-endian PLY with double-precision positions and
/// optional 8-bit RGB.
pub fn write_ply(path: &Path, data: &PlyData) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ply_to(&mut w, data)?;
    w.flush()?;
    Ok(())
}

pub fn write_ply_to<W: Write>(w: &mut W, data: &PlyData) -> Result<()> {
    if let Some(c) = &data.colors {
        if c.len() != data.vertices.len() {
            return Err(Error::DimensionMismatch("PLY colors/vertices length".into()));
        }
    }
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    for c in &data.comments {
        writeln!(w, "comment {c}")?;
    }
    writeln!(w, "element vertex {}", data.vertices.len())?;
    writeln!(w, "property double x")?;
    writeln!(w, "property double y")?;
    writeln!(w, "property double z")?;
    if data.colors.is_some() {
        writeln!(w, "property uchar red")?;
        writeln!(w, "property uchar green")?;
        writeln!(w, "property uchar blue")?;
    }
    writeln!(w, "element face {}", data.triangles.len())?;
    writeln!(w, "property list uchar uint vertex_indices")?;
    writeln!(w, "end_header")?;
    for (i, v) in data.vertices.iter().enumerate() {
        for k in 0..3 {
            w.write_all(&v[k].to_le_bytes())?;
        }
        if let Some(c) = &data.colors {
            for k in 0..3 {
                w.write_all(&[color_byte(c[i][k])])?;
            }
        }
    }
    for t in &data.triangles {
        w.write_all(&[3u8])?;
        for &i in t {
            w.write_all(&(i as u32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn color_byte(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a mesh (with its vertex colors, if any) as PLY.
pub fn save_mesh_ply(path: &Path, mesh: &Mesh, comments: Vec<String>) -> Result<()> {
    write_ply(
        path,
        &PlyData {
            vertices: mesh.vertices().to_vec(),
            triangles: mesh.triangles().to_vec(),
            colors: mesh.colors().map(|c| c.to_vec()),
            comments,
        },
    )
}
