//! Image file I/O.
//!
//! Native format "IMG1": magic `RLALIGN1`, then height and width as u32
//! little-endian, then `height * width` f32 little-endian intensities in
//! row-major order. Round trips are bit-exact.
//!
//! 8-bit binary PGM (`P5`) is accepted as an import, mapping gray levels
//! onto `[0, 1]`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imgcore::Image2D;

const IMG1_MAGIC: &[u8; 8] = b"RLALIGN1";

/// Largest side accepted when reading; guards against garbage headers.
const MAX_DIM: u32 = 1 << 16;

pub fn write_img1(img: &Image2D, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + img.len() * 4);
    bytes.extend_from_slice(IMG1_MAGIC);
    bytes.extend_from_slice(&(img.height() as u32).to_le_bytes());
    bytes.extend_from_slice(&(img.width() as u32).to_le_bytes());
    for v in img.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_img1(path: &Path) -> Result<Image2D> {
    let bytes = fs::read(path)?;
    parse_img1(&bytes, path)
}

fn parse_img1(bytes: &[u8], path: &Path) -> Result<Image2D> {
    let err = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 {
        return Err(err("truncated header"));
    }
    if &bytes[..8] != IMG1_MAGIC {
        return Err(err("bad magic"));
    }
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let width = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    if height == 0 || width == 0 || height > MAX_DIM || width > MAX_DIM {
        return Err(err("implausible dimensions"));
    }
    let n = height as usize * width as usize;
    if bytes.len() != 16 + n * 4 {
        return Err(err("payload size does not match header"));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Image2D::from_vec(height as usize, width as usize, data)
}

/// Reads either format, sniffing the magic bytes.
pub fn read_image(path: &Path) -> Result<Image2D> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(IMG1_MAGIC) {
        parse_img1(&bytes, path)
    } else if bytes.starts_with(b"P5") {
        parse_pgm(&bytes, path)
    } else {
        Err(Error::Format(format!(
            "{}: neither IMG1 nor binary PGM",
            path.display()
        )))
    }
}

pub fn read_pgm(path: &Path) -> Result<Image2D> {
    let bytes = fs::read(path)?;
    parse_pgm(&bytes, path)
}

fn parse_pgm(bytes: &[u8], path: &Path) -> Result<Image2D> {
    let err = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
    if !bytes.starts_with(b"P5") {
        return Err(err("not a binary PGM"));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and '#' comment lines between header tokens.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if pos == start {
            return Err(err("malformed header"));
        }
        let token = std::str::from_utf8(&bytes[start..pos]).unwrap();
        *field = token.parse().map_err(|_| err("header value overflow"))?;
    }
    let [width, height, maxval] = fields;
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(err("missing separator before pixel data"));
    }
    pos += 1;
    if maxval == 0 || maxval > 255 {
        return Err(err("only 8-bit PGM is supported"));
    }
    if height == 0 || width == 0 || height > MAX_DIM || width > MAX_DIM {
        return Err(err("implausible dimensions"));
    }
    let n = height as usize * width as usize;
    if bytes.len() - pos != n {
        return Err(err("pixel payload size does not match header"));
    }
    let scale = 1.0 / maxval as f32;
    let data = bytes[pos..].iter().map(|&b| b as f32 * scale).collect();
    Image2D::from_vec(height as usize, width as usize, data)
}
