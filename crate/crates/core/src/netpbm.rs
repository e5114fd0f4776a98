//! Binary Netpbm I/O: PGM (P5) for images, PPM (P6) for overlays.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

/// Writes `bytes` to a sibling temp file and renames it over `path`, so a
/// reader never observes a partially written file.
pub fn atomic_write(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::other("path has no file name")))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = dir.join(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Quantizes a unit-range intensity to a byte: clamp, scale, round half up.
#[inline]
pub fn to_byte<T: Scalar>(v: T) -> u8 {
    let v = v.as_f64();
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0 + 0.5).floor() as u8
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Parse {
                offset: start,
                msg: format!("expected {what}"),
            });
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        text.parse().map_err(|_| Error::Parse {
            offset: start,
            msg: format!("{what} out of range"),
        })
    }
}

/// Reads the magic number and the three header integers, returning
/// `(width, height, maxval, payload offset)`.
fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<(usize, usize, usize, usize)> {
    if bytes.len() < 2 {
        return Err(Error::Parse {
            offset: bytes.len(),
            msg: "file too short for magic number".into(),
        });
    }
    if &bytes[..2] != magic {
        return Err(Error::Format(format!(
            "magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..2]),
            std::str::from_utf8(magic).unwrap()
        )));
    }
    let mut r = HeaderReader { bytes, pos: 2 };
    let width = r.number("width")?;
    let height = r.number("height")?;
    let maxval = r.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Parse {
            offset: r.pos,
            msg: format!("maxval {maxval} outside 1..=65535"),
        });
    }
    if r.pos >= bytes.len() || !bytes[r.pos].is_ascii_whitespace() {
        return Err(Error::Parse {
            offset: r.pos,
            msg: "expected single whitespace after maxval".into(),
        });
    }
    Ok((width, height, maxval, r.pos + 1))
}

/// Decodes a binary PGM into unit-range intensities.
pub fn decode_pgm<T: Scalar>(bytes: &[u8]) -> Result<Image<T>> {
    let (width, height, maxval, offset) = parse_header(bytes, b"P5")?;
    let n = width * height;
    let sample_bytes = if maxval > 255 { 2 } else { 1 };
    let need = n * sample_bytes;
    let payload = &bytes[offset..];
    if payload.len() < need {
        return Err(Error::Parse {
            offset: bytes.len(),
            msg: format!("payload has {} bytes, expected {need}", payload.len()),
        });
    }
    let scale = 1.0 / maxval as f64;
    let data: Vec<T> = if sample_bytes == 1 {
        payload[..n]
            .iter()
            .map(|&b| T::of_f64(b as f64 * scale))
            .collect()
    } else {
        payload[..need]
            .chunks_exact(2)
            .map(|c| T::of_f64(u16::from_be_bytes([c[0], c[1]]) as f64 * scale))
            .collect()
    };
    Image::from_vec(height, width, data)
}

pub fn load_pgm<T: Scalar>(path: impl AsRef<Path>) -> Result<Image<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

/// Encodes as 8-bit P5, maxval 255.
pub fn encode_pgm<T: Scalar>(img: &Image<T>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| to_byte(v)));
    out
}

pub fn save_pgm<T: Scalar>(img: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path, &encode_pgm(img))
}

/// False-colour overlay: `w` drives the green channel, `t` drives red and blue.
/// Where the two agree the pixel is grey.
pub fn encode_overlay<T: Scalar>(w: &Image<T>, t: &Image<T>) -> Result<Vec<u8>> {
    w.ensure_same_shape(t, "overlay")?;
    let mut out = format!("P6\n{} {}\n255\n", w.width(), w.height()).into_bytes();
    out.reserve(3 * w.len());
    for (&g, &m) in w.data().iter().zip(t.data()) {
        let m = to_byte(m);
        out.extend_from_slice(&[m, to_byte(g), m]);
    }
    Ok(out)
}

pub fn write_overlay<T: Scalar>(w: &Image<T>, t: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path, &encode_overlay(w, t)?)
}

/// Decodes a P6 file into its raw RGB bytes and dimensions `(height, width)`.
pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let (width, height, maxval, offset) = parse_header(bytes, b"P6")?;
    if maxval > 255 {
        return Err(Error::Format("16-bit PPM not supported".into()));
    }
    let need = 3 * width * height;
    let payload = &bytes[offset..];
    if payload.len() < need {
        return Err(Error::Parse {
            offset: bytes.len(),
            msg: format!("payload has {} bytes, expected {need}", payload.len()),
        });
    }
    Ok((height, width, payload[..need].to_vec()))
}
