//! 8-bit grayscale / RGB images and binary netpbm (PGM P5, PPM P6) I/O.
//!
//! Disparity maps are persisted as 16-bit big-endian PGM with maxval
//! 65535; see [`crate::matcher::DisparityMap`].

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad netpbm file: {0}")]
    Format(String),
    #[error("image size mismatch: {0}x{1} vs {2}x{3}")]
    SizeMismatch(u32, u32, u32, u32),
}

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![0; (width * height) as usize] }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<u8>) -> Result<Self, ImageError> {
        if data.len() != (width * height) as usize {
            return Err(ImageError::Format(format!(
                "pixel buffer length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        self.data[(y * self.width + x) as usize] = v;
    }

    pub fn row(&self, y: u32) -> &[u8] {
        let start = (y * self.width) as usize;
        &self.data[start..start + self.width as usize]
    }

    /// Per-pixel saturating add, used by the brightness-invariance tests.
    pub fn saturating_add(&self, offset: u8) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|p| p.saturating_add(offset)).collect(),
        }
    }
}

/// Row-major packed RGB image, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![0; (width * height * 3) as usize] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = ((y * self.width + x) * 3) as usize;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Write `bytes` to `path` atomically (temp file in the same directory,
/// then rename), so an interrupted run never leaves a truncated file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => d.join(format!(
            ".{}.tmp{}",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
            std::process::id()
        )),
        None => Path::new(&format!(".stereonav.tmp{}", std::process::id())).to_path_buf(),
    };
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn parse_header(bytes: &[u8], magic: &[u8]) -> Result<(u32, u32, u32, usize), ImageError> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(ImageError::Format(format!(
            "expected {} magic",
            String::from_utf8_lossy(magic)
        )));
    }
    // header tokens: magic, width, height, maxval; '#' starts a comment
    let mut pos = 2usize;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(ImageError::Format("truncated header".into()));
        }
        let tok = std::str::from_utf8(&bytes[start..pos]).unwrap();
        *field = tok
            .parse()
            .map_err(|_| ImageError::Format(format!("bad header number {tok}")))?;
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(ImageError::Format("missing separator after maxval".into()));
    }
    pos += 1; // single whitespace byte before raster
    Ok((fields[0], fields[1], fields[2], pos))
}

/// Encode an 8-bit PGM (P5).
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<(), ImageError> {
    atomic_write(path, &encode_pgm(img))?;
    Ok(())
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    let (w, h, maxval, start) = parse_header(bytes, b"P5")?;
    if maxval != 255 {
        return Err(ImageError::Format(format!(
            "expected 8-bit PGM (maxval 255), got {maxval}"
        )));
    }
    let n = (w * h) as usize;
    if bytes.len() < start + n {
        return Err(ImageError::Format("truncated raster".into()));
    }
    GrayImage::from_data(w, h, bytes[start..start + n].to_vec())
}

pub fn read_pgm(path: &Path) -> Result<GrayImage, ImageError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_pgm(&bytes)
}

/// Encode a 16-bit big-endian PGM (P5, maxval 65535).
pub fn encode_pgm16(width: u32, height: u32, data: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    out.reserve(data.len() * 2);
    for v in data {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn decode_pgm16(bytes: &[u8]) -> Result<(u32, u32, Vec<u16>), ImageError> {
    let (w, h, maxval, start) = parse_header(bytes, b"P5")?;
    if maxval != 65535 {
        return Err(ImageError::Format(format!(
            "expected 16-bit PGM (maxval 65535), got {maxval}"
        )));
    }
    let n = (w * h) as usize;
    if bytes.len() < start + 2 * n {
        return Err(ImageError::Format("truncated raster".into()));
    }
    let data = bytes[start..start + 2 * n]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok((w, h, data))
}

/// Encode a binary PPM (P6).
pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<(), ImageError> {
    atomic_write(path, &encode_ppm(img))?;
    Ok(())
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage, ImageError> {
    let (w, h, maxval, start) = parse_header(bytes, b"P6")?;
    if maxval != 255 {
        return Err(ImageError::Format(format!(
            "expected 8-bit PPM (maxval 255), got {maxval}"
        )));
    }
    let n = (w * h * 3) as usize;
    if bytes.len() < start + n {
        return Err(ImageError::Format("truncated raster".into()));
    }
    Ok(RgbImage { width: w, height: h, data: bytes[start..start + n].to_vec() })
}

pub fn read_ppm(path: &Path) -> Result<RgbImage, ImageError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_ppm(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let mut img = GrayImage::new(7, 5);
        for y in 0..5 {
            for x in 0..7 {
                img.set(x, y, (x * 31 + y * 7) as u8);
            }
        }
        let back = decode_pgm(&encode_pgm(&img)).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn pgm16_round_trip() {
        let data: Vec<u16> = (0..12).map(|i| i * 5000 + 17).collect();
        let bytes = encode_pgm16(4, 3, &data);
        let (w, h, back) = decode_pgm16(&bytes).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(back, data);
    }

    #[test]
    fn ppm_round_trip() {
        let mut img = RgbImage::new(3, 2);
        img.set(1, 1, [10, 200, 42]);
        let back = decode_ppm(&encode_ppm(&img)).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn header_comments_skipped() {
        let bytes = b"P5\n# a comment\n2 2\n255\nabcd".to_vec();
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.data(), b"abcd");
    }

    #[test]
    fn rejects_truncated() {
        assert!(decode_pgm(b"P5\n4 4\n255\nxy").is_err());
        assert!(decode_pgm(b"P6\n1 1\n255\nxyz").is_err());
    }
}
