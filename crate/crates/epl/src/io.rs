//! On-disk formats: `.eplt` float32 tensors and binary PGM label maps.
//!
//! An `.eplt` file is the magic `EPLT`, a little-endian `u32` version (1), a
//! `u32` rank, one `u32` per dimension, then the values as little-endian
//! `f32` in row-major order.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use epl_core::datagen::Sample;
use epl_core::field::{LabelMap, PotentialFieldSet, ProbabilityField};
use epl_core::Image;

use crate::error::{Error, Result};

pub const EPLT_MAGIC: [u8; 4] = *b"EPLT";
pub const EPLT_VERSION: u32 = 1;
/// Largest accepted rank; guards against reading garbage headers.
pub const EPLT_MAX_RANK: u32 = 8;

pub const IMAGE_FILE: &str = "image.eplt";
pub const LABELS_FILE: &str = "labels.pgm";

/// A dense float32 tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn from_f64(dims: &[usize], data: &[f64]) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Format(format!(
                "tensor of shape {dims:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data: data.iter().map(|&v| v as f32).collect(),
        })
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.dims.len() != rank {
            return Err(Error::Format(format!(
                "{what} must have rank {rank}, found dims {:?}",
                self.dims
            )));
        }
        Ok(())
    }
}

pub fn write_tensor<W: Write>(mut w: W, tensor: &Tensor) -> Result<()> {
    w.write_all(&EPLT_MAGIC)?;
    w.write_all(&EPLT_VERSION.to_le_bytes())?;
    w.write_all(&(tensor.dims.len() as u32).to_le_bytes())?;
    for &d in &tensor.dims {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for v in &tensor.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("unexpected end of file".into())
    } else {
        Error::Io(e)
    }
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if magic != EPLT_MAGIC {
        return Err(Error::BadMagic { expected: "EPLT", found: magic.to_vec() });
    }
    let version = read_u32(&mut r)?;
    if version != EPLT_VERSION {
        return Err(Error::Format(format!("unsupported .eplt version {version}")));
    }
    let rank = read_u32(&mut r)?;
    if rank > EPLT_MAX_RANK {
        return Err(Error::Format(format!("tensor rank {rank} is too large")));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|_| read_u32(&mut r).map(|d| d as usize))
        .collect::<Result<_>>()?;
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 4 * n {
        return Err(Error::Format(format!(
            "expected {} bytes of data for shape {dims:?}, found {}",
            4 * n,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor { dims, data })
}

pub fn save_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::path(path, e))?;
    write_tensor(BufWriter::new(f), tensor)
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let f = File::open(path).map_err(|e| Error::path(path, e))?;
    read_tensor(BufReader::new(f)).map_err(|e| e.in_file(path))
}

pub fn image_tensor(image: &Image) -> Result<Tensor> {
    Tensor::from_f64(&[image.channels(), image.height(), image.width()], image.data())
}

pub fn tensor_image(t: &Tensor) -> Result<Image> {
    t.expect_rank(3, "image")?;
    Ok(Image::new(t.dims[0], t.dims[1], t.dims[2], t.to_f64())?)
}

pub fn field_tensor(field: &ProbabilityField) -> Result<Tensor> {
    Tensor::from_f64(&[field.classes(), field.height(), field.width()], field.data())
}

pub fn tensor_field(t: &Tensor) -> Result<ProbabilityField> {
    t.expect_rank(3, "probability field")?;
    Ok(ProbabilityField::new(t.dims[0], t.dims[1], t.dims[2], t.to_f64())?)
}

/// Potential fields are stored direction-major: `[S, K, H, W]`.
pub fn potential_tensor(set: &PotentialFieldSet) -> Result<Tensor> {
    Tensor::from_f64(&set.dims(), set.data())
}

pub fn tensor_potential(t: &Tensor) -> Result<PotentialFieldSet> {
    t.expect_rank(4, "potential field set")?;
    Ok(PotentialFieldSet::new(t.dims[0], t.dims[1], t.dims[2], t.dims[3], t.to_f64())?)
}

/// Writes a binary (P5) greymap with maxval 255.
pub fn write_pgm<W: Write>(mut w: W, height: usize, width: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != height * width {
        return Err(Error::Format("pixel count does not match the image size".into()));
    }
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(pixels)?;
    w.flush()?;
    Ok(())
}

/// A decoded 8-bit greymap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Greymap {
    pub height: usize,
    pub width: usize,
    pub maxval: u32,
    pub pixels: Vec<u8>,
}

fn header_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated PGM header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    tok.parse()
        .map_err(|_| Error::Format(format!("bad PGM {what}: {tok:?}")))
}

pub fn read_pgm<R: Read>(mut r: R) -> Result<Greymap> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::BadMagic {
            expected: "P5",
            found: bytes.iter().take(2).copied().collect(),
        });
    }
    let mut pos = 2;
    let width = header_number(&bytes, &mut pos, "width")?;
    let height = header_number(&bytes, &mut pos, "height")?;
    let maxval = header_number(&bytes, &mut pos, "maxval")?;
    if !(1..=255).contains(&maxval) {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Format("truncated PGM header".into()));
    }
    pos += 1;
    let raster = &bytes[pos..];
    if raster.len() != height * width {
        return Err(Error::Format(format!(
            "PGM raster has {} bytes, expected {}",
            raster.len(),
            height * width
        )));
    }
    Ok(Greymap {
        height,
        width,
        maxval: maxval as u32,
        pixels: raster.to_vec(),
    })
}

pub fn write_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    if labels.classes() > 256 {
        return Err(Error::Format("PGM labels support at most 256 classes".into()));
    }
    let pixels: Vec<u8> = labels.data().iter().map(|&l| l as u8).collect();
    let f = File::create(path).map_err(|e| Error::path(path, e))?;
    write_pgm(BufWriter::new(f), labels.height(), labels.width(), &pixels)
}

/// Reads a label map; every pixel value must be below `classes`.
pub fn read_labels(path: &Path, classes: usize) -> Result<LabelMap> {
    let f = File::open(path).map_err(|e| Error::path(path, e))?;
    let g = read_pgm(BufReader::new(f)).map_err(|e| e.in_file(path))?;
    let data = g.pixels.iter().map(|&p| u32::from(p)).collect();
    LabelMap::new(g.height, g.width, classes, data).map_err(|e| Error::from(e).in_file(path))
}

/// Renders every `(class, direction)` energy plane into one greymap tile
/// grid (rows: classes, columns: directions), scaled so the largest energy
/// maps to 255.
pub fn render_energy(set: &PotentialFieldSet) -> (usize, usize, Vec<u8>) {
    let [dirs, classes, h, w] = set.dims();
    let max = set.data().iter().copied().fold(0.0f64, f64::max);
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let (rows, cols) = (classes * h, dirs * w);
    let mut out = vec![0u8; rows * cols];
    for s in 0..dirs {
        for c in 0..classes {
            let plane = set.plane(s, c);
            for y in 0..h {
                for x in 0..w {
                    let v = (plane[y * w + x] * scale).round().clamp(0.0, 255.0) as u8;
                    out[(c * h + y) * cols + s * w + x] = v;
                }
            }
        }
    }
    (rows, cols, out)
}

pub fn write_energy_pgm(path: &Path, set: &PotentialFieldSet) -> Result<()> {
    let (h, w, pixels) = render_energy(set);
    let f = File::create(path).map_err(|e| Error::path(path, e))?;
    write_pgm(BufWriter::new(f), h, w, &pixels)
}

/// Writes `dir/image.eplt` and `dir/labels.pgm`, creating `dir`.
pub fn write_sample(dir: &Path, sample: &Sample) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::path(dir, e))?;
    save_tensor(&dir.join(IMAGE_FILE), &image_tensor(&sample.image)?)?;
    write_labels(&dir.join(LABELS_FILE), &sample.labels)
}

pub fn read_sample(dir: &Path, classes: usize) -> Result<Sample> {
    let image = tensor_image(&load_tensor(&dir.join(IMAGE_FILE))?)?;
    let labels = read_labels(&dir.join(LABELS_FILE), classes)?;
    if image.height() != labels.height() || image.width() != labels.width() {
        return Err(Error::Format(format!(
            "{}: image is {}x{} but labels are {}x{}",
            dir.display(),
            image.height(),
            image.width(),
            labels.height(),
            labels.width()
        )));
    }
    Ok(Sample { image, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_header_layout() {
        let t = Tensor::from_f64(&[2, 1], &[1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"EPLT");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..16], &2u32.to_le_bytes());
        assert_eq!(&buf[16..20], &1u32.to_le_bytes());
        assert_eq!(&buf[20..24], &1.0f32.to_le_bytes());
        assert_eq!(&buf[24..28], &(-2.5f32).to_le_bytes());
        assert_eq!(read_tensor(&buf[..]).unwrap(), t);
    }

    #[test]
    fn tensor_errors() {
        assert!(matches!(read_tensor(&b"EPLX\x01\0\0\0"[..]), Err(Error::BadMagic { .. })));
        assert!(matches!(read_tensor(&b"EPLT\x02\0\0\0\0\0\0\0"[..]), Err(Error::Format(_))));
        assert!(matches!(read_tensor(&b"EPLT\x01\0\0\0\x01\0\0\0\x02\0\0\0"[..]), Err(Error::Format(_))));
        assert!(matches!(read_tensor(&b"EP"[..]), Err(Error::Format(_))));
        assert!(Tensor::from_f64(&[3], &[1.0]).is_err());
    }

    #[test]
    fn pgm_round_trip_with_comments() {
        let mut buf = Vec::new();
        write_pgm(&mut buf, 2, 3, &[0, 1, 2, 3, 4, 5]).unwrap();
        assert!(buf.starts_with(b"P5\n3 2\n255\n"));
        let g = read_pgm(&buf[..]).unwrap();
        assert_eq!((g.height, g.width, g.maxval), (2, 3, 255));
        assert_eq!(g.pixels, vec![0, 1, 2, 3, 4, 5]);
        let commented = b"P5 # comment\n3 # w\n1\n255\n\x07\x08\x09";
        assert_eq!(read_pgm(&commented[..]).unwrap().pixels, vec![7, 8, 9]);
    }

    #[test]
    fn pgm_errors() {
        assert!(matches!(read_pgm(&b"P2\n1 1\n255\n0"[..]), Err(Error::BadMagic { .. })));
        assert!(read_pgm(&b"P5\n2 2\n255\n\0"[..]).is_err());
        assert!(read_pgm(&b"P5\n1 1\n65535\n\0\0"[..]).is_err());
        assert!(read_pgm(&b"P5\n1"[..]).is_err());
    }

    #[test]
    fn energy_render_scales_to_full_range() {
        let set = PotentialFieldSet::new(2, 1, 1, 2, vec![0.0, 1.0, 2.0, 4.0]).unwrap();
        let (h, w, px) = render_energy(&set);
        assert_eq!((h, w), (1, 4));
        assert_eq!(px, vec![0, 64, 128, 255]);
    }
}
