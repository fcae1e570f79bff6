//! IDX (MNIST) image and label files, optionally gzip-compressed.

use std::io::{Read, Write};
use std::path::Path;

use dplis_core::data::Dataset;
use flate2::read::GzDecoder;

use crate::error::{HarnessError, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
const CLASSES: usize = 10;

/// Reads a file, transparently inflating it when it starts with the gzip magic.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(|e| HarnessError::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn fail(&self, offset: usize, msg: impl Into<String>) -> HarnessError {
        HarnessError::Idx { path: self.path.to_path_buf(), offset, msg: msg.into() }
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => {
                Err(self.fail(self.bytes.len(), format!("truncated file: needed {n} bytes from offset {}", self.pos)))
            }
        }
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let m = self.u32()?;
        if m != expected {
            return Err(self.fail(0, format!("bad magic 0x{m:08x}, expected 0x{expected:08x}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.fail(self.pos, "trailing bytes after the declared data"));
        }
        Ok(())
    }
}

/// Parses an image file into `(count, rows·cols, pixels scaled to [0, 1])`.
pub fn parse_images(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let mut r = Reader { path, bytes, pos: 0 };
    r.magic(IMAGE_MAGIC)?;
    let n = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let dim = rows * cols;
    let pixels = r.take(n * dim)?.iter().map(|&p| p as f64 / 255.0).collect();
    r.finish()?;
    Ok((n, dim, pixels))
}

pub fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<usize>> {
    let mut r = Reader { path, bytes, pos: 0 };
    r.magic(LABEL_MAGIC)?;
    let n = r.u32()? as usize;
    let start = r.pos;
    let raw = r.take(n)?.to_vec();
    if let Some(i) = raw.iter().position(|&l| l as usize >= CLASSES) {
        return Err(r.fail(start + i, format!("label {} outside 0..{CLASSES}", raw[i])));
    }
    let labels = raw.iter().map(|&l| l as usize).collect();
    r.finish()?;
    Ok(labels)
}

/// Loads an MNIST-style image/label pair.
pub fn load_mnist_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let (n, dim, pixels) = parse_images(ip, &read_maybe_gz(ip)?)?;
    let y = parse_labels(lp, &read_maybe_gz(lp)?)?;
    if y.len() != n {
        return Err(HarnessError::Invalid(format!("{} images but {} labels", n, y.len())));
    }
    Ok(Dataset::new(pixels, y, dim, CLASSES)?)
}

/// Writes raw (uncompressed) IDX files; pixels are given as bytes.
pub fn write_idx(images: &Path, labels: &Path, rows: u32, cols: u32, pixels: &[u8], y: &[u8]) -> Result<()> {
    let n = y.len() as u32;
    let mut img = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, n, rows, cols] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + y.len());
    for v in [LABEL_MAGIC, n] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(y);
    for (p, b) in [(images, img), (labels, lab)] {
        std::fs::File::create(p).and_then(|mut f| f.write_all(&b)).map_err(|e| HarnessError::io(p, e))?;
    }
    Ok(())
}
