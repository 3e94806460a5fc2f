//! 8-bit grayscale images and their PGM/PNG encodings.

use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat, ImageReader};

use crate::error::{Error, Result};

pub const WHITE: u8 = 255;
pub const BLACK: u8 = 0;

/// Row-major grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width * height != pixels.len() {
            return Err(Error::Shape {
                context: "image pixels",
                expected: vec![width * height],
                actual: vec![pixels.len()],
            });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
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

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    /// Number of pixels that differ from `other`, which must have the same size.
    pub fn diff_count(&self, other: &GrayImage) -> usize {
        assert_eq!((self.width, self.height), (other.width, other.height));
        self.pixels.iter().zip(&other.pixels).filter(|(a, b)| a != b).count()
    }

    /// Binary PGM (P5).
    pub fn to_pgm(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        PnmEncoder::new(&mut buf)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(&self.pixels, self.width as u32, self.height as u32, ExtendedColorType::L8)?;
        Ok(buf)
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut buf = Cursor::new(Vec::new());
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("buffer matches dimensions");
        img.write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    /// Decodes PGM or PNG; colour images are converted to luma.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = ImageReader::new(Cursor::new(bytes)).with_guessed_format()?.decode()?.into_luma8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    /// Writes PNG for a `.png` extension and PGM otherwise.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        let bytes = if png { self.to_png()? } else { self.to_pgm()? };
        std::fs::write(path, bytes)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GrayImage {
        GrayImage::new(3, 2, vec![0, 10, 20, 200, 250, 255]).unwrap()
    }

    #[test]
    fn pixel_count_must_match() {
        assert!(GrayImage::new(3, 2, vec![0; 5]).is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let img = sample();
        let bytes = img.to_pgm().unwrap();
        assert!(bytes.starts_with(b"P5"));
        assert_eq!(GrayImage::decode(&bytes).unwrap(), img);
    }

    #[test]
    fn png_round_trip() {
        let img = sample();
        assert_eq!(GrayImage::decode(&img.to_png().unwrap()).unwrap(), img);
    }

    #[test]
    fn save_picks_format_from_extension() {
        let dir = tempfile::tempdir().unwrap();
        let img = sample();
        for name in ["a.pgm", "b.png"] {
            let p = dir.path().join(name);
            img.save(&p).unwrap();
            assert_eq!(GrayImage::load(&p).unwrap(), img);
        }
        assert!(std::fs::read(dir.path().join("b.png")).unwrap().starts_with(b"\x89PNG"));
    }
}
