//! Text line rendering: a built-in bitmap font for offline use, and an
//! external renderer driven by a command template.

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::{GrayImage, BLACK, WHITE};
use crate::error::{Error, Result};
use crate::grapheme::normalize_str;

/// Line height in pixels.
pub const LINE_HEIGHT: usize = 65;
const GLYPH_COLS: usize = 5;
const GLYPH_ROWS: usize = 7;
const SCALE: usize = 4;
const GAP: usize = 4;
const CELL: usize = GLYPH_COLS * SCALE + GAP;
const MARGIN: usize = 8;
const TOP: usize = (LINE_HEIGHT - GLYPH_ROWS * SCALE) / 2;
const MIN_DISTANCE: u32 = 9;
const FALLBACK: char = '?';

const CHARSET: &str = concat!(
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789",
    ".,;:!?'\"-()[]/|&*+=",
    "āīūṛṝḷḹṃḥṅñṭḍṇśṣĀĪŪṚṜḶḸṂḤṄÑṬḌṆŚṢ",
    "àâäáãåçéèêëíìîïóòôöõøúùûüÿœæßÀÂÄÁÇÉÈÊËÎÏÔÖÙÛÜŒÆ",
);

pub trait TextRenderer: Sync {
    fn render(&self, text: &str) -> Result<GrayImage>;
}

/// Synthetic 5x7 font whose glyphs are random bit patterns at least
/// `MIN_DISTANCE` bits apart, drawn at 4x scale in fixed-width cells.
/// Legible only to [`BitmapReader`].
#[derive(Debug, Clone)]
pub struct BitmapFont {
    chars: Vec<char>,
    codes: Vec<u64>,
    index: HashMap<char, usize>,
}

impl BitmapFont {
    pub fn get() -> &'static BitmapFont {
        static FONT: OnceLock<BitmapFont> = OnceLock::new();
        FONT.get_or_init(Self::build)
    }

    fn build() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x466f_6e74);
        let chars: Vec<char> = CHARSET.chars().collect();
        let mut codes: Vec<u64> = Vec::with_capacity(chars.len());
        let bits = GLYPH_COLS * GLYPH_ROWS;
        while codes.len() < chars.len() {
            let c: u64 = rng.random::<u64>() & ((1 << bits) - 1);
            let ones = c.count_ones();
            if !(8..=27).contains(&ones) {
                continue;
            }
            if codes.iter().all(|d| (c ^ d).count_ones() >= MIN_DISTANCE) {
                codes.push(c);
            }
        }
        let index = chars.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        Self { chars, codes, index }
    }

    pub fn supports(&self, c: char) -> bool {
        c == ' ' || self.index.contains_key(&c)
    }

    fn code(&self, c: char) -> u64 {
        if c == ' ' {
            return 0;
        }
        let i = self.index.get(&c).or_else(|| self.index.get(&FALLBACK)).expect("fallback glyph");
        self.codes[*i]
    }

    /// Width of the rendered image for a line of `n` characters.
    pub fn line_width(n: usize) -> usize {
        2 * MARGIN + n * CELL
    }
}

impl TextRenderer for BitmapFont {
    /// Renders the NFC characters of `text`; unsupported characters are
    /// drawn as `?`.
    fn render(&self, text: &str) -> Result<GrayImage> {
        let chars: Vec<char> = normalize_str(text).chars().collect();
        let mut img = GrayImage::filled(Self::line_width(chars.len()), LINE_HEIGHT, WHITE);
        for (i, c) in chars.iter().enumerate() {
            let code = self.code(*c);
            let x0 = MARGIN + i * CELL;
            for r in 0..GLYPH_ROWS {
                for col in 0..GLYPH_COLS {
                    if code >> (r * GLYPH_COLS + col) & 1 == 1 {
                        for dy in 0..SCALE {
                            for dx in 0..SCALE {
                                img.set(x0 + col * SCALE + dx, TOP + r * SCALE + dy, BLACK);
                            }
                        }
                    }
                }
            }
        }
        Ok(img)
    }
}

/// Reads images produced by [`BitmapFont`]: cells are located from the
/// nominal layout and each is matched to the nearest glyph by Hamming
/// distance after 4x4 block averaging. Distortions that move or blot ink
/// produce misreadings.
#[derive(Debug, Clone, Copy, Default)]
pub struct BitmapReader;

impl BitmapReader {
    pub fn read(&self, img: &GrayImage) -> String {
        let font = BitmapFont::get();
        if img.height() < TOP + GLYPH_ROWS * SCALE || img.width() < 2 * MARGIN {
            return String::new();
        }
        let n = ((img.width() - 2 * MARGIN) as f64 / CELL as f64).round() as usize;
        let mut out = String::with_capacity(n);
        for i in 0..n {
            let x0 = MARGIN + i * CELL;
            let mut code = 0u64;
            for r in 0..GLYPH_ROWS {
                for col in 0..GLYPH_COLS {
                    let mut sum = 0usize;
                    let mut cnt = 0usize;
                    for dy in 0..SCALE {
                        for dx in 0..SCALE {
                            let x = x0 + col * SCALE + dx;
                            if x < img.width() {
                                sum += img.get(x, TOP + r * SCALE + dy) as usize;
                                cnt += 1;
                            }
                        }
                    }
                    if cnt > 0 && sum < 128 * cnt {
                        code |= 1 << (r * GLYPH_COLS + col);
                    }
                }
            }
            if code.count_ones() <= 2 {
                out.push(' ');
                continue;
            }
            let best = font
                .codes
                .iter()
                .enumerate()
                .min_by_key(|(_, c)| (**c ^ code).count_ones())
                .map(|(k, _)| k)
                .expect("non-empty font");
            out.push(font.chars[best]);
        }
        out.trim_end().to_owned()
    }
}

/// Renders through an external program. The template must contain
/// `{input}` (a file holding the UTF-8 line) and `{output}` (the image
/// path to write, PGM or PNG) exactly once each.
#[derive(Debug, Clone)]
pub struct ExternalRenderer {
    argv: Vec<String>,
}

impl ExternalRenderer {
    pub fn new(template: &str) -> Result<Self> {
        for p in ["{input}", "{output}"] {
            if template.matches(p).count() != 1 {
                return Err(Error::InvalidArgument(format!("render template must contain {p} exactly once")));
            }
        }
        let argv = shlex::split(template)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| Error::InvalidArgument(format!("cannot split render template {template:?}")))?;
        Ok(Self { argv })
    }

    fn run(&self, input: &Path, output: &Path) -> Result<()> {
        let args: Vec<String> = self
            .argv
            .iter()
            .map(|a| a.replace("{input}", &input.to_string_lossy()).replace("{output}", &output.to_string_lossy()))
            .collect();
        let out = Command::new(&args[0])
            .args(&args[1..])
            .output()
            .map_err(|e| Error::Ocr(format!("{}: {e}", args[0])))?;
        if !out.status.success() {
            return Err(Error::Ocr(format!(
                "renderer exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        Ok(())
    }
}

impl TextRenderer for ExternalRenderer {
    fn render(&self, text: &str) -> Result<GrayImage> {
        let dir = tempfile::tempdir()?;
        let input = dir.path().join("line.txt");
        let output = dir.path().join("line.png");
        std::fs::write(&input, text)?;
        self.run(&input, &output)?;
        GrayImage::load(&output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distort::steps::{erode, perspective};

    #[test]
    fn font_codes_are_separated() {
        let f = BitmapFont::get();
        assert_eq!(f.codes.len(), f.chars.len());
        for (i, a) in f.codes.iter().enumerate() {
            for b in &f.codes[i + 1..] {
                assert!((a ^ b).count_ones() >= MIN_DISTANCE);
            }
        }
        assert!(f.supports('ṣ') && f.supports(' ') && !f.supports('€'));
    }

    #[test]
    fn render_then_read_is_identity() {
        let f = BitmapFont::get();
        for line in ["rāmaḥ vanaṃ gacchati", "Ṛṣi jñāna-yoga, 12!", "", "ça été"] {
            let img = f.render(line).unwrap();
            assert_eq!(img.height(), LINE_HEIGHT);
            assert_eq!(BitmapReader.read(&img), line);
        }
        assert_eq!(BitmapReader.read(&f.render("a€b").unwrap()), "a?b");
    }

    #[test]
    fn heavy_distortion_causes_misreadings() {
        let f = BitmapFont::get();
        let line = "kṛṣṇa govinda hare murāre";
        let img = f.render(line).unwrap();
        assert_ne!(BitmapReader.read(&perspective(&img, 0.5).unwrap()), line);
        assert_ne!(BitmapReader.read(&erode(&img, 5).unwrap()), line);
    }

    #[cfg(unix)]
    #[test]
    fn external_renderer_runs_template() {
        let dir = tempfile::tempdir().unwrap();
        let png = dir.path().join("fixed.png");
        GrayImage::filled(4, 3, 7).save(&png).unwrap();
        let r = ExternalRenderer::new(&format!("cp {} {{output}} {{input}}", png.display()));
        assert!(r.is_ok());
        // cp with three operands treats the last as a directory and fails.
        assert!(r.unwrap().render("x").is_err());
        let ok = ExternalRenderer::new(&format!("sh -c 'cp {} \"$0\"; test -f \"$1\"' {{output}} {{input}}", png.display())).unwrap();
        assert_eq!(ok.render("x").unwrap(), GrayImage::filled(4, 3, 7));
        assert!(ExternalRenderer::new("render {input}").is_err());
    }
}
