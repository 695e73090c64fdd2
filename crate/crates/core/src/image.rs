//! 8-bit grayscale images and their file formats.
//!
//! Binary PGM (`P5`, maxval <= 255) is read and written natively. PNG is
//! accepted on input and converted to 8-bit luma.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GrayImage({}x{})", self.width, self.height)
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Image(format!("empty image {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::Image(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage::new(width, height, vec![value; width * height]).expect("non-empty image")
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        GrayImage::new(width, height, pixels).expect("non-empty image")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// The `w x h` window with top-left corner `(left, top)`.
    pub fn crop(&self, left: usize, top: usize, w: usize, h: usize) -> Result<GrayImage> {
        if w == 0 || h == 0 || left + w > self.width || top + h > self.height {
            return Err(Error::Image(format!(
                "crop {w}x{h} at ({left}, {top}) outside {}x{}",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(w * h);
        for y in top..top + h {
            pixels.extend_from_slice(&self.pixels[y * self.width + left..y * self.width + left + w]);
        }
        GrayImage::new(w, h, pixels)
    }

    /// Pixels scaled by 1/255 into a `(1, 1, h, w)` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.pixels.iter().map(|&p| p as f64 / 255.0).collect();
        Tensor::new(Shape::new(1, 1, self.height, self.width), data).expect("matching size")
    }

    /// Inverse of [`GrayImage::to_tensor`] for one batch item: values are
    /// clamped to `[0, 1]`, scaled by 255 and rounded.
    pub fn from_tensor(t: &Tensor, batch: usize) -> Result<GrayImage> {
        let s = t.shape();
        if s.channels != 1 || batch >= s.batch {
            return Err(Error::Image(format!("cannot view item {batch} of {s:?} as a grayscale image")));
        }
        let pixels = t.item(batch).iter().map(|&v| to_u8(v)).collect();
        GrayImage::new(s.width, s.height, pixels)
    }

    /// Pads right and bottom by repeating the last column/row.
    pub fn pad_replicate(&self, width: usize, height: usize) -> Result<GrayImage> {
        if width < self.width || height < self.height {
            return Err(Error::Image(format!(
                "cannot pad {}x{} down to {width}x{height}",
                self.width, self.height
            )));
        }
        Ok(GrayImage::from_fn(width, height, |x, y| {
            self.get(x.min(self.width - 1), y.min(self.height - 1))
        }))
    }
}

/// `[0, 1]` value to an 8-bit pixel.
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn pgm_error(reason: impl Into<String>) -> Error {
    Error::format("PGM", reason)
}

/// Parses a binary (`P5`) PGM with maxval at most 255. Comments in the header
/// are skipped; pixel values are rescaled to 0..=255 when maxval < 255.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(pgm_error("missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(pgm_error("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(pgm_error(format!("expected a number at byte {start}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| pgm_error("header number out of range"))?;
    }
    let [width, height, maxval] = fields;
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(pgm_error("missing whitespace after header"));
    }
    pos += 1;
    if maxval == 0 || maxval > 255 {
        return Err(pgm_error(format!("maxval {maxval} unsupported (8-bit only)")));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| pgm_error("dimensions overflow"))?;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| pgm_error(format!("raster truncated: need {n} bytes")))?;
    let pixels = if maxval == 255 {
        raster.to_vec()
    } else {
        raster
            .iter()
            .map(|&p| ((p.min(maxval as u8) as f64) * 255.0 / maxval as f64).round() as u8)
            .collect()
    };
    GrayImage::new(width, height, pixels)
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

fn is_png(bytes: &[u8]) -> bool {
    bytes.starts_with(b"\x89PNG\r\n\x1a\n")
}

/// Decodes PGM or PNG, chosen by file signature.
pub fn decode_image(bytes: &[u8]) -> Result<GrayImage> {
    if is_png(bytes) {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| Error::Image(e.to_string()))?
            .into_luma8();
        let (w, h) = img.dimensions();
        GrayImage::new(w as usize, h as usize, img.into_raw())
    } else {
        decode_pgm(bytes)
    }
}

pub fn read_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_image(&bytes).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Writes PNG when the extension is `.png`, PGM otherwise.
pub fn write_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if png {
        let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
            .expect("matching buffer");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image(e.to_string()))
    } else {
        fs::write(path, encode_pgm(img))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_roundtrip() {
        let img = GrayImage::from_fn(5, 3, |x, y| (x * 40 + y) as u8);
        let bytes = encode_pgm(&img);
        assert_eq!(decode_pgm(&bytes).unwrap(), img);
    }

    #[test]
    fn pgm_with_comments_and_low_maxval() {
        let mut bytes = b"P5 # comment\n2 # w\n1\n# another\n15\n".to_vec();
        bytes.extend_from_slice(&[0, 15]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.pixels(), &[0, 255]);
    }

    #[test]
    fn pgm_rejects_bad_input() {
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00\x01").is_err());
        assert!(decode_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(decode_pgm(b"P5\n").is_err());
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = GrayImage::from_fn(7, 4, |x, y| (x * 30 + y * 7) as u8);
        write_image(&img, &path).unwrap();
        assert_eq!(read_image(&path).unwrap(), img);
    }

    #[test]
    fn tensor_conversion_is_exact_for_u8() {
        let img = GrayImage::from_fn(16, 16, |x, y| (x * 16 + y) as u8);
        assert_eq!(GrayImage::from_tensor(&img.to_tensor(), 0).unwrap(), img);
    }

    #[test]
    fn crop_and_pad() {
        let img = GrayImage::from_fn(4, 3, |x, y| (10 * y + x) as u8);
        let c = img.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.pixels(), &[11, 12, 21, 22]);
        assert!(img.crop(3, 0, 2, 2).is_err());
        let p = img.pad_replicate(6, 4).unwrap();
        assert_eq!(p.get(5, 3), img.get(3, 2));
        assert_eq!(p.get(2, 3), img.get(2, 2));
        assert_eq!(p.crop(0, 0, 4, 3).unwrap(), img);
    }
}
