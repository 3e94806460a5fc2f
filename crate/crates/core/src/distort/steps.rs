//! The five degradation steps.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::image::{GrayImage, BLACK, WHITE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    /// `out = round(255 (in/255)^(1/gamma))`.
    Gamma(f64),
    /// Fraction of pixels replaced, half white and half black.
    SaltPepper(f64),
    /// Standard deviation of additive zero-mean noise.
    GaussianNoise(f64),
    /// Side of the square minimum filter; 0 and 1 leave the image alone.
    Erosion(usize),
    /// Width scale of a horizontal projective squeeze; 1 is the identity.
    Perspective(f64),
}

pub fn apply_step<R: Rng + ?Sized>(img: &GrayImage, step: Step, rng: &mut R) -> Result<GrayImage> {
    match step {
        Step::Gamma(g) => gamma(img, g),
        Step::SaltPepper(f) => salt_pepper(img, f, rng),
        Step::GaussianNoise(s) => gaussian_noise(img, s, rng),
        Step::Erosion(m) => erode(img, m),
        Step::Perspective(r) => perspective(img, r),
    }
}

pub fn gamma(img: &GrayImage, g: f64) -> Result<GrayImage> {
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::InvalidArgument(format!("gamma {g} must be positive")));
    }
    let lut: Vec<u8> = (0..256)
        .map(|v| (255.0 * (v as f64 / 255.0).powf(1.0 / g)).round() as u8)
        .collect();
    let mut out = img.clone();
    out.pixels_mut().iter_mut().for_each(|p| *p = lut[*p as usize]);
    Ok(out)
}

/// Picks exactly `round(fraction * N)` distinct pixels; the first half
/// (rounded up) become white, the rest black.
pub fn salt_pepper<R: Rng + ?Sized>(img: &GrayImage, fraction: f64, rng: &mut R) -> Result<GrayImage> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("salt and pepper fraction {fraction} outside [0, 1]")));
    }
    let n = img.len();
    let k = (fraction * n as f64).round() as usize;
    let mut out = img.clone();
    let salt = k.div_ceil(2);
    for (i, idx) in sample(rng, n, k).into_iter().enumerate() {
        out.pixels_mut()[idx] = if i < salt { WHITE } else { BLACK };
    }
    Ok(out)
}

pub fn gaussian_noise<R: Rng + ?Sized>(img: &GrayImage, sigma: f64, rng: &mut R) -> Result<GrayImage> {
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal =
        Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(format!("gaussian sigma {sigma}: {e}")))?;
    let mut out = img.clone();
    for p in out.pixels_mut() {
        *p = (*p as f64 + normal.sample(rng)).round().clamp(0.0, 255.0) as u8;
    }
    Ok(out)
}

/// Grayscale minimum over an `m x m` window. For even `m` the window
/// extends one pixel further right and down. Out-of-image pixels are
/// ignored.
pub fn erode(img: &GrayImage, m: usize) -> Result<GrayImage> {
    if m <= 1 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width(), img.height());
    if m > w || m > h {
        return Err(Error::InvalidArgument(format!("erosion kernel {m} exceeds image {w}x{h}")));
    }
    let before = (m - 1) / 2;
    let after = m / 2;
    // Separable: rows first, then columns.
    let mut tmp = img.clone();
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(before);
            let hi = (x + after).min(w - 1);
            tmp.set(x, y, (lo..=hi).map(|i| img.get(i, y)).min().expect("non-empty window"));
        }
    }
    let mut out = tmp.clone();
    for y in 0..h {
        let lo = y.saturating_sub(before);
        let hi = (y + after).min(h - 1);
        for x in 0..w {
            out.set(x, y, (lo..=hi).map(|j| tmp.get(x, j)).min().expect("non-empty window"));
        }
    }
    Ok(out)
}

/// Maps the image rectangle onto a trapezoid whose width is `ratio` times
/// the original and whose right edge is shortened by `(1 - ratio) / 2` of
/// the height, as if the page were turned away from the viewer. Sampling
/// is bilinear; uncovered pixels are white.
pub fn perspective(img: &GrayImage, ratio: f64) -> Result<GrayImage> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::InvalidArgument(format!("perspective ratio {ratio} must be positive")));
    }
    if ratio == 1.0 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width() as f64, img.height() as f64);
    let d = (1.0 - ratio).max(0.0) * h / 4.0;
    let quad = [(0.0, 0.0), (ratio * w, d), (ratio * w, h - d), (0.0, h)];
    let rect = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    // Destination to source.
    let hm = homography(&quad, &rect)?;
    let mut out = GrayImage::filled(img.width(), img.height(), WHITE);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let den = hm[6] * px + hm[7] * py + 1.0;
            let u = (hm[0] * px + hm[1] * py + hm[2]) / den;
            let v = (hm[3] * px + hm[4] * py + hm[5]) / den;
            if u < 0.0 || v < 0.0 || u > w || v > h {
                continue;
            }
            out.set(x, y, bilinear(img, u - 0.5, v - 0.5));
        }
    }
    Ok(out)
}

fn bilinear(img: &GrayImage, x: f64, y: f64) -> u8 {
    let max_x = img.width() as f64 - 1.0;
    let max_y = img.height() as f64 - 1.0;
    let x = x.clamp(0.0, max_x);
    let y = y.clamp(0.0, max_y);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(img.width() - 1), (y0 + 1).min(img.height() - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let p = |xx, yy| img.get(xx, yy) as f64;
    let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
    let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
    (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8
}

/// Coefficients `h0..h7` (with `h8 = 1`) of the projective map sending
/// each `from` corner to the matching `to` corner.
fn homography(from: &[(f64, f64); 4], to: &[(f64, f64); 4]) -> Result<[f64; 8]> {
    let mut a = [[0.0f64; 9]; 8];
    for (i, (&(x, y), &(u, v))) in from.iter().zip(to).enumerate() {
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    for col in 0..8 {
        let pivot = (col..8)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::InvalidArgument("degenerate perspective quad".into()));
        }
        a.swap(col, pivot);
        for row in 0..8 {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..9 {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    let mut h = [0.0; 8];
    for (i, hi) in h.iter_mut().enumerate() {
        *hi = a[i][8] / a[i][i];
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(w: usize, h: usize) -> GrayImage {
        GrayImage::new(w, h, (0..w * h).map(|i| (i * 37 % 256) as u8).collect()).unwrap()
    }

    #[test]
    fn gamma_one_is_identity() {
        let img = ramp(20, 7);
        assert_eq!(gamma(&img, 1.0).unwrap(), img);
    }

    #[test]
    fn gamma_brightens_midtones() {
        let img = GrayImage::new(3, 1, vec![0, 64, 255]).unwrap();
        let out = gamma(&img, 4.0).unwrap();
        // 255 * (64/255)^(1/4) = 180.3
        assert_eq!(out.pixels(), &[0, 180, 255]);
    }

    #[test]
    fn salt_pepper_changes_exact_count() {
        let img = GrayImage::filled(100, 65, 128);
        let out = salt_pepper(&img, 0.01, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(out.diff_count(&img), 65);
        let white = out.pixels().iter().filter(|p| **p == WHITE).count();
        let black = out.pixels().iter().filter(|p| **p == BLACK).count();
        assert_eq!((white, black), (33, 32));
    }

    #[test]
    fn erosion_of_constant_is_constant() {
        let img = GrayImage::filled(30, 10, WHITE);
        assert_eq!(erode(&img, 2).unwrap(), img);
        assert!(erode(&img, 11).is_err());
    }

    #[test]
    fn erosion_spreads_dark_pixels() {
        let mut img = GrayImage::filled(7, 7, WHITE);
        img.set(3, 3, BLACK);
        let out = erode(&img, 3).unwrap();
        let dark: Vec<_> = (0..7)
            .flat_map(|y| (0..7).map(move |x| (x, y)))
            .filter(|&(x, y)| out.get(x, y) == BLACK)
            .collect();
        assert_eq!(dark.len(), 9);
        assert!(dark.iter().all(|&(x, y)| (2..=4).contains(&x) && (2..=4).contains(&y)));
        // Even kernel: the window covers one pixel left/up and none beyond
        // on the other side, so the dark pixel spreads left and up.
        let out2 = erode(&img, 2).unwrap();
        for (x, y) in [(2, 2), (3, 2), (2, 3), (3, 3)] {
            assert_eq!(out2.get(x, y), BLACK);
        }
        assert_eq!(out2.pixels().iter().filter(|p| **p == BLACK).count(), 4);
    }

    #[test]
    fn perspective_squeezes_content() {
        let img = GrayImage::filled(100, 40, BLACK);
        let out = perspective(&img, 0.5).unwrap();
        // Left half is covered (mostly dark), right half is background.
        assert!(out.get(10, 20) < 10);
        assert_eq!(out.get(80, 20), WHITE);
        // The right edge of the content is shorter than the left.
        let col_dark = |x: usize| (0..40).filter(|&y| out.get(x, y) < 128).count();
        assert!(col_dark(2) > col_dark(47));
        assert_eq!(perspective(&img, 1.0).unwrap(), img);
    }

    #[test]
    fn homography_maps_corners() {
        let from = [(0.0, 0.0), (10.0, 1.0), (10.0, 9.0), (0.0, 10.0)];
        let to = [(0.0, 0.0), (20.0, 0.0), (20.0, 10.0), (0.0, 10.0)];
        let h = homography(&from, &to).unwrap();
        for (f, t) in from.iter().zip(&to) {
            let den = h[6] * f.0 + h[7] * f.1 + 1.0;
            let u = (h[0] * f.0 + h[1] * f.1 + h[2]) / den;
            let v = (h[3] * f.0 + h[4] * f.1 + h[5]) / den;
            assert!((u - t.0).abs() < 1e-9 && (v - t.1).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn gaussian_noise_clamps_instead_of_wrapping(seed in any::<u64>(), sigma in 0.5f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dark = gaussian_noise(&GrayImage::filled(16, 9, BLACK), sigma, &mut rng).unwrap();
            prop_assert!(dark.pixels().iter().all(|p| (*p as f64) <= 8.0 * sigma));
            let light = gaussian_noise(&GrayImage::filled(16, 9, WHITE), sigma, &mut rng).unwrap();
            prop_assert!(light.pixels().iter().all(|p| 255.0 - *p as f64 <= 8.0 * sigma));
        }

        #[test]
        fn salt_pepper_count_holds(frac in 0.0f64..0.5, w in 1usize..40, h in 1usize..40, seed in any::<u64>()) {
            let img = GrayImage::filled(w, h, 100);
            let out = salt_pepper(&img, frac, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(out.diff_count(&img), (frac * (w * h) as f64).round() as usize);
        }

        #[test]
        fn erosion_is_monotone(bits in proptest::collection::vec(any::<bool>(), 100), m in 2usize..5) {
            let img = GrayImage::new(10, 10, bits.iter().map(|b| if *b { WHITE } else { BLACK }).collect()).unwrap();
            let once = erode(&img, m).unwrap();
            let twice = erode(&once, m).unwrap();
            let white = |g: &GrayImage| g.pixels().iter().filter(|p| **p == WHITE).count();
            prop_assert!(white(&twice) <= white(&once));
            prop_assert!(white(&once) <= white(&img));
        }
    }
}
