//! `FLTD` dataset files.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic     4 bytes  "FLTD"
//! version   u16      1
//! n         u32      samples
//! channels  u16
//! height    u16
//! width     u16
//! classes   u16
//! pixels    n·c·h·w × f32, sample-major NCHW, each in [0, 1]
//! labels    n × u8, each < classes
//! ```

use std::path::Path;

use float_core::data::Dataset;

use crate::error::{DataErrorKind as K, LabError, Result};

pub const MAGIC: &[u8; 4] = b"FLTD";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 2 * 4;

pub fn encode(data: &Dataset<f32>) -> Result<Vec<u8>> {
    let n = u32::try_from(data.len()).map_err(|_| LabError::Config("too many samples for a dataset file".into()))?;
    let dim = |v: usize, what: &str| u16::try_from(v).map_err(|_| LabError::Config(format!("{what} {v} exceeds u16")));
    if data.n_classes > 256 {
        return Err(LabError::Config(format!("{} classes do not fit a u8 label", data.n_classes)));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + data.images.len() * 4 + data.labels.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    for (v, what) in [(data.channels, "channels"), (data.height, "height"), (data.width, "width"), (data.n_classes, "classes")] {
        out.extend_from_slice(&dim(v, what)?.to_le_bytes());
    }
    for &p in &data.images {
        if !(0.0..=1.0).contains(&p) {
            return Err(LabError::data(K::PixelRange, format!("pixel {p} outside [0, 1]")));
        }
        out.extend_from_slice(&p.to_le_bytes());
    }
    out.extend(data.labels.iter().map(|&l| l as u8));
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Dataset<f32>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(LabError::data(K::BadMagic, "missing FLTD magic"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(LabError::data(K::Truncated, format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len())));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let version = u16_at(4);
    if version != VERSION {
        return Err(LabError::data(K::UnsupportedVersion, format!("version {version}, expected {VERSION}")));
    }
    let n = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let (c, h, w, classes) = (u16_at(10) as usize, u16_at(12) as usize, u16_at(14) as usize, u16_at(16) as usize);
    if n == 0 {
        return Err(LabError::data(K::Empty, "dataset has no samples"));
    }
    if c * h * w == 0 || classes == 0 {
        return Err(LabError::data(K::Empty, format!("degenerate geometry {c}x{h}x{w} with {classes} classes")));
    }
    let pixels = n * c * h * w;
    let expected = HEADER_LEN + pixels * 4 + n;
    if bytes.len() < expected {
        return Err(LabError::data(K::Truncated, format!("expected {expected} bytes, file has {}", bytes.len())));
    }
    if bytes.len() > expected {
        return Err(LabError::data(K::TrailingBytes, format!("expected {expected} bytes, file has {}", bytes.len())));
    }
    let body = &bytes[HEADER_LEN..HEADER_LEN + pixels * 4];
    let mut images = Vec::with_capacity(pixels);
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let p = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !(0.0..=1.0).contains(&p) {
            return Err(LabError::data(K::PixelRange, format!("pixel {i} = {p} outside [0, 1]")));
        }
        images.push(p);
    }
    let labels: Vec<usize> = bytes[HEADER_LEN + pixels * 4..].iter().map(|&l| l as usize).collect();
    if let Some((i, l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(LabError::data(K::LabelRange, format!("label {l} of sample {i} >= {classes} classes")));
    }
    Dataset::new(c, h, w, classes, images, labels).map_err(|e| LabError::data(K::Empty, e.to_string()))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| LabError::io(path, e))?;
    decode(&bytes)
}

pub fn save_dataset(path: impl AsRef<Path>, data: &Dataset<f32>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(data)?).map_err(|e| LabError::io(path, e))
}
