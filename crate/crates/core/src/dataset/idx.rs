//! IDX file ingestion and emission, bit-exact per the standard MNIST layout.
//!
//! Headers are big-endian; images use magic 0x00000803 with dims
//! (count, rows, cols), labels use magic 0x00000801 with dims (count).
//! Files may be gzip-compressed (detected by the 0x1f 0x8b prefix).

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn open_maybe_gzip(path: &Path) -> Result<Box<dyn Read>> {
    let ctx = || format!("opening {}", path.display());
    let mut file = File::open(path).map_err(|e| Error::io(ctx(), e))?;
    let mut prefix = [0u8; 2];
    let n = file.read(&mut prefix).map_err(|e| Error::io(ctx(), e))?;
    let file = File::open(path).map_err(|e| Error::io(ctx(), e))?;
    if n == 2 && prefix == [0x1f, 0x8b] {
        Ok(Box::new(GzDecoder::new(BufReader::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut reader = open_maybe_gzip(path)?;
    let mut buf = Vec::new();
    reader
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(buf)
}

fn be_u32(buf: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let bytes: [u8; 4] = buf
        .get(offset..offset + 4)
        .and_then(|s| s.try_into().ok())
        .ok_or_else(|| Error::IdxTruncated {
            path: path.display().to_string(),
            expected: offset + 4,
            found: buf.len(),
        })?;
    Ok(u32::from_be_bytes(bytes))
}

/// Raw decoded image payload: `count * rows * cols` unsigned bytes.
#[derive(Debug)]
pub struct RawImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn read_images(path: &Path) -> Result<RawImages> {
    let buf = read_all(path)?;
    let magic = be_u32(&buf, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::IdxBadMagic {
            path: path.display().to_string(),
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(&buf, 4, path)? as usize;
    let rows = be_u32(&buf, 8, path)? as usize;
    let cols = be_u32(&buf, 12, path)? as usize;
    let expected = 16 + count * rows * cols;
    if buf.len() != expected {
        return Err(Error::IdxTruncated {
            path: path.display().to_string(),
            expected,
            found: buf.len(),
        });
    }
    Ok(RawImages {
        count,
        rows,
        cols,
        pixels: buf[16..].to_vec(),
    })
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let buf = read_all(path)?;
    let magic = be_u32(&buf, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(Error::IdxBadMagic {
            path: path.display().to_string(),
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(&buf, 4, path)? as usize;
    let expected = 8 + count;
    if buf.len() != expected {
        return Err(Error::IdxTruncated {
            path: path.display().to_string(),
            expected,
            found: buf.len(),
        });
    }
    Ok(buf[8..].to_vec())
}

pub fn write_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len() % (rows * cols), 0);
    let count = pixels.len() / (rows * cols);
    let ctx = || format!("writing {}", path.display());
    let mut f = File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut header = Vec::with_capacity(16);
    header.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    header.extend_from_slice(&(count as u32).to_be_bytes());
    header.extend_from_slice(&(rows as u32).to_be_bytes());
    header.extend_from_slice(&(cols as u32).to_be_bytes());
    f.write_all(&header).map_err(|e| Error::io(ctx(), e))?;
    f.write_all(pixels).map_err(|e| Error::io(ctx(), e))?;
    Ok(())
}

pub fn write_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let mut f = File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut header = Vec::with_capacity(8);
    header.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    header.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    f.write_all(&header).map_err(|e| Error::io(ctx(), e))?;
    f.write_all(labels).map_err(|e| Error::io(ctx(), e))?;
    Ok(())
}
