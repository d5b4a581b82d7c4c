//! MetaImage (`.mha` attached / `.mhd` + raw detached) reading and writing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Direction, GridSpec, Image, LabelVolume, Volume, Voxel, IDENTITY};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementType {
    UChar,
    Short,
    Float,
}

impl ElementType {
    pub fn tag(self) -> &'static str {
        match self {
            ElementType::UChar => "MET_UCHAR",
            ElementType::Short => "MET_SHORT",
            ElementType::Float => "MET_FLOAT",
        }
    }

    fn parse(tag: &str) -> Result<Self> {
        match tag {
            "MET_UCHAR" => Ok(ElementType::UChar),
            "MET_SHORT" => Ok(ElementType::Short),
            "MET_FLOAT" => Ok(ElementType::Float),
            other => Err(Error::ElementType(other.to_string())),
        }
    }

    pub fn size(self) -> usize {
        match self {
            ElementType::UChar => 1,
            ElementType::Short => 2,
            ElementType::Float => 4,
        }
    }
}

/// Sample types with a MetaImage element tag.
pub trait MetaVoxel: Voxel {
    const ELEMENT: ElementType;
    fn write_le(self, out: &mut Vec<u8>);
}

impl MetaVoxel for u8 {
    const ELEMENT: ElementType = ElementType::UChar;
    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }
}

impl MetaVoxel for i16 {
    const ELEMENT: ElementType = ElementType::Short;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl MetaVoxel for f32 {
    const ELEMENT: ElementType = ElementType::Float;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaHeader {
    pub grid: GridSpec,
    pub element: ElementType,
    pub big_endian: bool,
    /// `None` for an attached (`LOCAL`) payload.
    pub data_file: Option<String>,
}

/// A decoded file, in whatever sample type it was stored as.
#[derive(Clone, Debug, PartialEq)]
pub enum MetaImage {
    UChar(Image<u8>),
    Short(Image<i16>),
    Float(Image<f32>),
}

impl MetaImage {
    pub fn grid(&self) -> &GridSpec {
        match self {
            MetaImage::UChar(i) => i.grid(),
            MetaImage::Short(i) => i.grid(),
            MetaImage::Float(i) => i.grid(),
        }
    }

    pub fn into_volume(self) -> Volume {
        match self {
            MetaImage::UChar(i) => i.map(|v| v as f32),
            MetaImage::Short(i) => i.map(|v| v as f32),
            MetaImage::Float(i) => i,
        }
    }

    /// Integer images only; values must fit in `u8`.
    pub fn into_labels(self) -> Result<LabelVolume> {
        match self {
            MetaImage::UChar(i) => Ok(i),
            MetaImage::Short(i) => {
                if let Some(bad) = i.data().iter().find(|v| !(0..=255).contains(*v)) {
                    return Err(Error::ElementType(format!("label value {bad} outside 0..=255")));
                }
                Ok(i.map(|v| v as u8))
            }
            MetaImage::Float(_) => Err(Error::ElementType(
                "MET_FLOAT cannot be read as a label map".into(),
            )),
        }
    }
}

fn parse_floats(key: &str, value: &str, n: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = value
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Header(format!("{key}: {e}")))?;
    if v.len() != n {
        return Err(Error::Header(format!("{key} needs {n} values, got {}", v.len())));
    }
    Ok(v)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Header(format!("{key}: expected True/False, got `{value}`"))),
    }
}

/// Parses the header; returns it with the byte offset where the payload starts.
fn parse_header(bytes: &[u8]) -> Result<(MetaHeader, usize)> {
    let mut pos = 0;
    let mut ndims = None;
    let mut dims = None;
    let mut spacing = [1.0; 3];
    let mut origin = [0.0; 3];
    let mut direction: Direction = IDENTITY;
    let mut element = None;
    let mut big_endian = false;
    while pos < bytes.len() {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map_or(bytes.len(), |i| pos + i);
        let line = std::str::from_utf8(&bytes[pos..end])
            .map_err(|_| Error::Header("non-UTF-8 header line".into()))?
            .trim();
        pos = (end + 1).min(bytes.len());
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| Error::Header(format!("line without `=`: `{line}`")))?;
        match key {
            "ObjectType" if value != "Image" => {
                return Err(Error::Header(format!("ObjectType `{value}` is not Image")))
            }
            "NDims" => {
                let n: usize = value
                    .parse()
                    .map_err(|_| Error::Header(format!("NDims `{value}`")))?;
                if n != 3 {
                    return Err(Error::Header(format!("only 3D images are supported, NDims = {n}")));
                }
                ndims = Some(n);
            }
            "DimSize" => {
                let v = parse_floats(key, value, 3)?;
                if v.iter().any(|&d| d < 1.0 || d.fract() != 0.0) {
                    return Err(Error::Header(format!("DimSize `{value}`")));
                }
                dims = Some([v[0] as usize, v[1] as usize, v[2] as usize]);
            }
            "ElementSpacing" | "ElementSize" => {
                let v = parse_floats(key, value, 3)?;
                spacing = [v[0], v[1], v[2]];
            }
            "Offset" | "Origin" | "Position" => {
                let v = parse_floats(key, value, 3)?;
                origin = [v[0], v[1], v[2]];
            }
            "TransformMatrix" | "Rotation" | "Orientation" => {
                let v = parse_floats(key, value, 9)?;
                for r in 0..3 {
                    for c in 0..3 {
                        direction[r][c] = v[3 * r + c];
                    }
                }
            }
            "ElementType" => element = Some(ElementType::parse(value)?),
            "BinaryDataByteOrderMSB" | "ElementByteOrderMSB" => big_endian = parse_bool(key, value)?,
            "BinaryData" if !parse_bool(key, value)? => {
                return Err(Error::Header("ASCII payloads are not supported".into()))
            }
            "CompressedData" if parse_bool(key, value)? => {
                return Err(Error::Header("compressed payloads are not supported".into()))
            }
            "ElementNumberOfChannels" if value != "1" => {
                return Err(Error::Header(format!("{value} channels per voxel; only 1 is supported")))
            }
            "ElementDataFile" => {
                if ndims.is_none() {
                    return Err(Error::Header("missing NDims".into()));
                }
                let dims = dims.ok_or_else(|| Error::Header("missing DimSize".into()))?;
                let element = element.ok_or_else(|| Error::Header("missing ElementType".into()))?;
                let grid = GridSpec {
                    dims,
                    spacing,
                    origin,
                    direction,
                };
                grid.validate().map_err(|e| Error::Header(e.to_string()))?;
                let data_file = (value != "LOCAL").then(|| value.to_string());
                return Ok((
                    MetaHeader {
                        grid,
                        element,
                        big_endian,
                        data_file,
                    },
                    pos,
                ));
            }
            _ => {}
        }
    }
    Err(Error::Header("missing ElementDataFile".into()))
}

pub fn read_header(path: impl AsRef<Path>) -> Result<MetaHeader> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_header(&bytes)?.0)
}

fn decode<T: Voxel>(grid: GridSpec, payload: &[u8], size: usize, f: impl Fn([u8; 4]) -> T) -> Result<Image<T>> {
    let data = payload
        .chunks_exact(size)
        .map(|c| {
            let mut b = [0u8; 4];
            b[..size].copy_from_slice(c);
            f(b)
        })
        .collect();
    Image::new(grid, data)
}

/// Reads a file in its stored sample type.
pub fn read_metaimage(path: impl AsRef<Path>) -> Result<MetaImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, start) = parse_header(&bytes)?;
    let detached;
    let payload: &[u8] = match &header.data_file {
        None => &bytes[start..],
        Some(name) => {
            let raw: PathBuf = path.parent().unwrap_or(Path::new(".")).join(name);
            detached = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
            &detached
        }
    };
    let size = header.element.size();
    let expected = header.grid.len() * size;
    if payload.len() != expected {
        return Err(Error::PayloadSize {
            expected,
            found: payload.len(),
        });
    }
    let be = header.big_endian;
    let grid = header.grid;
    Ok(match header.element {
        ElementType::UChar => MetaImage::UChar(decode(grid, payload, 1, |b| b[0])?),
        ElementType::Short => MetaImage::Short(decode(grid, payload, 2, |b| {
            let b = [b[0], b[1]];
            if be {
                i16::from_be_bytes(b)
            } else {
                i16::from_le_bytes(b)
            }
        })?),
        ElementType::Float => MetaImage::Float(decode(grid, payload, 4, |b| {
            if be {
                f32::from_be_bytes(b)
            } else {
                f32::from_le_bytes(b)
            }
        })?),
    })
}

/// Reads any element type and converts to float.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    Ok(read_metaimage(path)?.into_volume())
}

/// Reads an integer image as a label map.
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    read_metaimage(path)?.into_labels()
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn header_text(grid: &GridSpec, element: ElementType, data_file: &str) -> String {
    let d = &grid.direction;
    let mut h = String::new();
    let _ = writeln!(h, "ObjectType = Image");
    let _ = writeln!(h, "NDims = 3");
    let _ = writeln!(h, "BinaryData = True");
    let _ = writeln!(h, "BinaryDataByteOrderMSB = False");
    let _ = writeln!(h, "CompressedData = False");
    let _ = writeln!(h, "TransformMatrix = {}", join(&[d[0], d[1], d[2]].concat()));
    let _ = writeln!(h, "Offset = {}", join(&grid.origin));
    let _ = writeln!(h, "ElementSpacing = {}", join(&grid.spacing));
    let _ = writeln!(
        h,
        "DimSize = {} {} {}",
        grid.dims[0], grid.dims[1], grid.dims[2]
    );
    let _ = writeln!(h, "ElementType = {}", element.tag());
    let _ = writeln!(h, "ElementDataFile = {data_file}");
    h
}

/// Writes `.mhd` paths as a header plus a sibling `.raw` payload, anything
/// else as a single attached file.
pub fn write_metaimage<T: MetaVoxel>(img: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut payload = Vec::with_capacity(img.data().len() * T::ELEMENT.size());
    for &v in img.data() {
        v.write_le(&mut payload);
    }
    let detached = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mhd"));
    if detached {
        let raw = path.with_extension("raw");
        let name = raw
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Header(format!("unusable payload name for {}", path.display())))?
            .to_string();
        fs::write(&raw, &payload).map_err(|e| Error::io(&raw, e))?;
        fs::write(path, header_text(img.grid(), T::ELEMENT, &name)).map_err(|e| Error::io(path, e))
    } else {
        let mut bytes = header_text(img.grid(), T::ELEMENT, "LOCAL").into_bytes();
        bytes.extend_from_slice(&payload);
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}
