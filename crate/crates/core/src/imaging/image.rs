//! Grayscale/colour images with intensities in `[0, 1]` and the binary
//! portable-map codecs (P5 grayscale, P6 colour).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Rec. 601 luma weights used when a colour image is reduced to grayscale.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Validation("image dimensions must be positive".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Validation(format!("unsupported channel count {channels}")));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::Validation(format!(
                "expected {} samples for {width}x{height}x{channels}, got {}",
                width * height * channels,
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Image { width, height, channels, pixels })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Image::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Sets one sample, clamping to `[0, 1]`.
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.pixels[(y * self.width + x) * self.channels + c] = v.clamp(0.0, 1.0);
    }

    /// Luminance plane, row-major. Grayscale images are returned as is.
    pub fn luminance(&self) -> Vec<f64> {
        match self.channels {
            1 => self.pixels.clone(),
            _ => self
                .pixels
                .chunks_exact(3)
                .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
                .collect(),
        }
    }
}

/// Sample depth used when writing a portable map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    fn maxval(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    maxval: u32,
    data_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(Error::Parse("file too short for a portable map header".into()));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(Error::Parse(format!(
                "unsupported magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
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
                Some(_) => break,
                None => return Err(Error::Parse("truncated header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse(format!("expected a number at byte {start}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| Error::Parse(format!("header value {text:?} out of range")))?;
    }
    // exactly one whitespace byte separates maxval from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Parse("missing whitespace after maxval".into())),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::Parse("zero image dimension".into()));
    }
    if maxval != 255 && maxval != 65535 {
        return Err(Error::Parse(format!("unsupported maxval {maxval}")));
    }
    Ok(Header {
        channels,
        width: width as usize,
        height: height as usize,
        maxval,
        data_offset: pos,
    })
}

/// Decodes a binary P5/P6 file held in memory.
pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let h = parse_header(bytes)?;
    let samples = h.width * h.height * h.channels;
    let bytes_per_sample = if h.maxval > 255 { 2 } else { 1 };
    let body = &bytes[h.data_offset..];
    if body.len() < samples * bytes_per_sample {
        return Err(Error::Parse(format!(
            "truncated raster: expected {} bytes, found {}",
            samples * bytes_per_sample,
            body.len()
        )));
    }
    let scale = f64::from(h.maxval);
    let pixels = if bytes_per_sample == 1 {
        body[..samples].iter().map(|&b| f64::from(b) / scale).collect()
    } else {
        body[..samples * 2]
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) / scale)
            .collect()
    };
    Image::new(h.width, h.height, h.channels, pixels)
}

/// Encodes an image as binary P5 (one channel) or P6 (three channels).
pub fn encode_pnm(img: &Image, depth: BitDepth) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let maxval = depth.maxval();
    let mut out = format!("{magic}\n{} {}\n{maxval}\n", img.width, img.height).into_bytes();
    let scale = f64::from(maxval);
    for &v in &img.pixels {
        let q = (v * scale).round() as u32;
        match depth {
            BitDepth::Eight => out.push(q as u8),
            BitDepth::Sixteen => out.extend_from_slice(&(q as u16).to_be_bytes()),
        }
    }
    out
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    decode_pnm(&fs::read(path)?)
}

pub fn save_image(img: &Image, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    fs::write(path, encode_pnm(img, depth))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p5_scaling() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 128, 64]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (2, 2, 1));
        let expected = [0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0];
        assert_eq!(img.pixels(), &expected);
        assert!((img.pixels()[2] - 0.50196).abs() < 1e-5);
        assert!((img.pixels()[3] - 0.25098).abs() < 1e-5);
    }

    #[test]
    fn p6_white_pixel() {
        let mut bytes = b"P6 1 1 255\n".to_vec();
        bytes.extend_from_slice(&[255, 255, 255]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!(img.pixels(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn rejects_p7_and_truncation() {
        assert!(matches!(decode_pnm(b"P7\n1 1\n255\n\0"), Err(Error::Parse(_))));
        assert!(matches!(decode_pnm(b"P5\n2 2\n255\n\0\0"), Err(Error::Parse(_))));
        assert!(matches!(decode_pnm(b"P5\n2 x\n255\n"), Err(Error::Parse(_))));
        assert!(matches!(decode_pnm(b"P5\n1 1\n100\n\0"), Err(Error::Parse(_))));
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n1 # width\n1\n255\n".to_vec();
        bytes.push(51);
        assert_eq!(decode_pnm(&bytes).unwrap().pixels(), &[0.2]);
    }

    #[test]
    fn sixteen_bit_roundtrip() {
        let mut bytes = b"P5\n3 1\n65535\n".to_vec();
        for v in [0u16, 1, 65535] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!(img.pixels()[1], 1.0 / 65535.0);
        assert_eq!(encode_pnm(&img, BitDepth::Sixteen), bytes);
    }

    #[test]
    fn colour_luminance() {
        let img = Image::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(img.luminance(), vec![0.299]);
    }
}
