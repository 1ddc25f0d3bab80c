//! Uncompressed MetaImage (`.mhd` header + `.raw` data) reader and writer.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::grid::{Grid, LabelVolume, Volume};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementType {
    /// 16-bit signed integer.
    Short,
    /// 8-bit unsigned integer.
    UChar,
    /// 32-bit IEEE float.
    Float,
}

impl ElementType {
    pub fn size_bytes(self) -> usize {
        match self {
            ElementType::Short => 2,
            ElementType::UChar => 1,
            ElementType::Float => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ElementType::Short => "MET_SHORT",
            ElementType::UChar => "MET_UCHAR",
            ElementType::Float => "MET_FLOAT",
        }
    }
}

impl fmt::Display for ElementType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ElementType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "MET_SHORT" => Ok(ElementType::Short),
            "MET_UCHAR" => Ok(ElementType::UChar),
            "MET_FLOAT" => Ok(ElementType::Float),
            other => Err(format!("unsupported ElementType `{other}` (expected MET_SHORT, MET_UCHAR or MET_FLOAT)")),
        }
    }
}

/// Parsed header fields.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaHeader {
    pub size: [usize; 3],
    pub spacing: [f64; 3],
    pub element_type: ElementType,
    /// As written in the header, relative to the header's directory.
    pub data_file: String,
}

fn header_err(line: &str, msg: impl Into<String>) -> Error {
    Error::MetaImage { line: line.trim().to_string(), msg: msg.into() }
}

fn parse_triple<T>(line: &str, value: &str) -> Result<[T; 3]>
where
    T: FromStr + Copy + PartialOrd + Default,
{
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(header_err(line, format!("expected 3 values, found {}", parts.len())));
    }
    let mut out = [T::default(); 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p.parse().map_err(|_| header_err(line, format!("`{p}` is not a valid number")))?;
        if !(*o > T::default()) {
            return Err(header_err(line, "values must be positive"));
        }
    }
    Ok(out)
}

fn parse_bool(line: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(header_err(line, format!("`{value}` is not a boolean"))),
    }
}

impl MetaHeader {
    pub fn parse(text: &str) -> Result<Self> {
        let mut size = None;
        let mut spacing = None;
        let mut element_type = None;
        let mut data_file = None;
        let mut ndims_seen = false;
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(header_err(line, "expected `Key = Value`"));
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "ObjectType" => {
                    if value != "Image" {
                        return Err(header_err(line, "only ObjectType = Image is supported"));
                    }
                }
                "NDims" => {
                    if value != "3" {
                        return Err(header_err(line, "only 3-D images are supported"));
                    }
                    ndims_seen = true;
                }
                "DimSize" => size = Some(parse_triple::<usize>(line, value)?),
                "ElementSpacing" => spacing = Some(parse_triple::<f64>(line, value)?),
                "ElementType" => element_type = Some(value.parse::<ElementType>().map_err(|m| header_err(line, m))?),
                "ElementByteOrderMSB" | "BinaryDataByteOrderMSB" => {
                    if parse_bool(line, value)? {
                        return Err(header_err(line, "big-endian data is not supported"));
                    }
                }
                "CompressedData" => {
                    if parse_bool(line, value)? {
                        return Err(header_err(line, "compressed data is not supported"));
                    }
                }
                "BinaryData" => {
                    if !parse_bool(line, value)? {
                        return Err(header_err(line, "ASCII data is not supported"));
                    }
                }
                "ElementNumberOfChannels" => {
                    if value != "1" {
                        return Err(header_err(line, "only single-channel images are supported"));
                    }
                }
                "ElementDataFile" => {
                    if value.is_empty() || value == "LOCAL" || value.starts_with("LIST") || value.contains('%') {
                        return Err(header_err(line, "ElementDataFile must name a single raw file"));
                    }
                    data_file = Some(value.to_string());
                }
                _ => {}
            }
        }
        let missing = |k: &str| header_err(k, "required key is missing");
        if !ndims_seen {
            return Err(missing("NDims"));
        }
        Ok(Self {
            size: size.ok_or_else(|| missing("DimSize"))?,
            spacing: spacing.unwrap_or([1.0; 3]),
            element_type: element_type.ok_or_else(|| missing("ElementType"))?,
            data_file: data_file.ok_or_else(|| missing("ElementDataFile"))?,
        })
    }

    pub fn to_text(&self) -> String {
        let [nx, ny, nz] = self.size;
        let [sx, sy, sz] = self.spacing;
        format!(
            "ObjectType = Image\nNDims = 3\nBinaryData = True\nBinaryDataByteOrderMSB = False\n\
             CompressedData = False\nDimSize = {nx} {ny} {nz}\nElementSpacing = {sx} {sy} {sz}\n\
             ElementType = {}\nElementDataFile = {}\n",
            self.element_type, self.data_file
        )
    }

    pub fn voxel_count(&self) -> usize {
        self.size.iter().product()
    }
}

/// Raw voxel data in its on-disk element type.
#[derive(Clone, Debug, PartialEq)]
pub enum MetaImage {
    Short(Grid<i16>),
    UChar(Grid<u8>),
    Float(Grid<f32>),
}

impl MetaImage {
    pub fn element_type(&self) -> ElementType {
        match self {
            MetaImage::Short(_) => ElementType::Short,
            MetaImage::UChar(_) => ElementType::UChar,
            MetaImage::Float(_) => ElementType::Float,
        }
    }

    pub fn into_volume(self) -> Volume {
        match self {
            MetaImage::Short(g) => g.map(|&v| v as f32),
            MetaImage::UChar(g) => g.map(|&v| v as f32),
            MetaImage::Float(g) => g,
        }
    }
}

fn data_path(header_path: &Path, data_file: &str) -> PathBuf {
    header_path.parent().unwrap_or_else(|| Path::new("")).join(data_file)
}

pub fn read_metaimage(path: impl AsRef<Path>) -> Result<MetaImage> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header = MetaHeader::parse(&text)?;
    let raw_path = data_path(path, &header.data_file);
    let raw = std::fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let expected = header.voxel_count() * header.element_type.size_bytes();
    if raw.len() != expected {
        return Err(header_err(
            &format!("ElementDataFile = {}", header.data_file),
            format!("data file holds {} bytes, DimSize and ElementType imply {expected}", raw.len()),
        ));
    }
    let (size, spacing) = (header.size, header.spacing);
    Ok(match header.element_type {
        ElementType::Short => MetaImage::Short(Grid::new(
            size,
            spacing,
            raw.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect(),
        )?),
        ElementType::UChar => MetaImage::UChar(Grid::new(size, spacing, raw)?),
        ElementType::Float => MetaImage::Float(Grid::new(
            size,
            spacing,
            raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
        )?),
    })
}

/// Reads any supported element type as real intensities.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    Ok(read_metaimage(path)?.into_volume())
}

/// Reads a label volume stored as MET_UCHAR (or MET_SHORT in `0..=2`).
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let path = path.as_ref();
    let labels = match read_metaimage(path)? {
        MetaImage::UChar(g) => g,
        MetaImage::Short(g) => {
            if g.data().iter().any(|&v| !(0..=255).contains(&v)) {
                return Err(header_err("ElementType = MET_SHORT", "label values must fit in 0..=255"));
            }
            g.map(|&v| v as u8)
        }
        MetaImage::Float(_) => return Err(header_err("ElementType = MET_FLOAT", "labels must be integral")),
    };
    labels.validate_labels()?;
    Ok(labels)
}

/// Header path → sibling `.raw` file name.
fn raw_name(path: &Path) -> Result<String> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no usable file name", path.display())))?;
    Ok(format!("{stem}.raw"))
}

pub fn write_metaimage(image: &MetaImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (size, spacing, bytes) = match image {
        MetaImage::Short(g) => (g.size(), g.spacing(), g.data().iter().flat_map(|v| v.to_le_bytes()).collect()),
        MetaImage::UChar(g) => (g.size(), g.spacing(), g.data().to_vec()),
        MetaImage::Float(g) => (g.size(), g.spacing(), g.data().iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>()),
    };
    let header = MetaHeader { size, spacing, element_type: image.element_type(), data_file: raw_name(path)? };
    let raw_path = data_path(path, &header.data_file);
    std::fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))?;
    std::fs::write(path, header.to_text()).map_err(|e| Error::io(path, e))
}

/// Writes real intensities. `MET_SHORT` rounds to the nearest integer and
/// saturates at the `i16` range; `MET_UCHAR` saturates at `0..=255`.
pub fn write_volume(v: &Volume, path: impl AsRef<Path>, element_type: ElementType) -> Result<()> {
    let image = match element_type {
        ElementType::Short => MetaImage::Short(v.map(|&x| x.round().clamp(i16::MIN as f32, i16::MAX as f32) as i16)),
        ElementType::UChar => MetaImage::UChar(v.map(|&x| x.round().clamp(0.0, 255.0) as u8)),
        ElementType::Float => MetaImage::Float(v.clone()),
    };
    write_metaimage(&image, path)
}

pub fn write_labels(labels: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    write_metaimage(&MetaImage::UChar(labels.clone()), path)
}
