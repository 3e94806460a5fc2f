//! Degradation configurations and the parameter grid.

use std::fmt;

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::image::GrayImage;
use super::steps::{apply_step, Step};
use crate::error::{Error, Result};

/// Parameters of the five steps, applied in the order gamma, salt and
/// pepper, Gaussian noise, erosion, perspective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionConfig {
    pub gamma: f64,
    /// Fraction of pixels, e.g. `0.004` for 0.4%.
    pub sp_fraction: f64,
    pub gaussian_sigma: f64,
    pub erosion_kernel: usize,
    pub perspective_ratio: f64,
    pub seed: u64,
}

impl DistortionConfig {
    /// A configuration that leaves every image unchanged.
    pub fn identity() -> Self {
        Self {
            gamma: 1.0,
            sp_fraction: 0.0,
            gaussian_sigma: 0.0,
            erosion_kernel: 0,
            perspective_ratio: 1.0,
            seed: 0,
        }
    }

    pub fn steps(&self) -> [Step; 5] {
        [
            Step::Gamma(self.gamma),
            Step::SaltPepper(self.sp_fraction),
            Step::GaussianNoise(self.gaussian_sigma),
            Step::Erosion(self.erosion_kernel),
            Step::Perspective(self.perspective_ratio),
        ]
    }

    /// Logs a warning for each parameter that lies off the standard grid.
    pub fn warn_off_grid(&self) {
        let g = DistortionGrid::full();
        let on = |v: f64, axis: &[f64]| axis.iter().any(|a| (a - v).abs() < 1e-9);
        let checks = [
            ("gamma", on(self.gamma, &g.gammas)),
            ("sp_fraction", on(self.sp_fraction, &g.sp_fractions)),
            ("gaussian_sigma", on(self.gaussian_sigma, &g.sigmas)),
            ("erosion_kernel", g.kernels.contains(&self.erosion_kernel)),
            ("perspective_ratio", on(self.perspective_ratio, &g.ratios)),
        ];
        for (name, ok) in checks {
            if !ok {
                warn!("{name} is off the standard grid in {self}");
            }
        }
    }

    /// `key = value` lines, one per parameter.
    pub fn to_text(&self) -> String {
        format!(
            "gamma = {}\nsp_fraction = {}\ngaussian_sigma = {}\nerosion_kernel = {}\nperspective_ratio = {}\nseed = {}\n",
            self.gamma, self.sp_fraction, self.gaussian_sigma, self.erosion_kernel, self.perspective_ratio, self.seed
        )
    }

    /// Parses [`to_text`](Self::to_text) output; `#` starts a comment and
    /// missing keys keep their identity values.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::identity();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let bad = |m: String| Error::Parse { line: no + 1, message: m };
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("bad number {v:?} for {k}")));
            match k {
                "gamma" => c.gamma = num(v)?,
                "sp_fraction" => c.sp_fraction = num(v)?,
                "gaussian_sigma" => c.gaussian_sigma = num(v)?,
                "erosion_kernel" => c.erosion_kernel = v.parse().map_err(|_| bad(format!("bad kernel {v:?}")))?,
                "perspective_ratio" => c.perspective_ratio = num(v)?,
                "seed" => c.seed = v.parse().map_err(|_| bad(format!("bad seed {v:?}")))?,
                _ => return Err(bad(format!("unknown key {k:?}"))),
            }
        }
        Ok(c)
    }
}

impl fmt::Display for DistortionConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "gamma={} sp={}% sigma={} m={} ratio={}",
            self.gamma,
            self.sp_fraction * 100.0,
            self.gaussian_sigma,
            self.erosion_kernel,
            self.perspective_ratio
        )
    }
}

/// Applies the five steps with a generator seeded from `config.seed`.
pub fn apply_config(img: &GrayImage, config: &DistortionConfig) -> Result<GrayImage> {
    apply_config_stream(img, config, 0)
}

/// As [`apply_config`], drawing noise from stream `stream` of the seed so
/// that several images can share a configuration without sharing noise.
pub fn apply_config_stream(img: &GrayImage, config: &DistortionConfig, stream: u64) -> Result<GrayImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    let mut out = img.clone();
    for step in config.steps() {
        out = apply_step(&out, step, &mut rng)?;
    }
    Ok(out)
}

/// Cartesian product of per-parameter levels. Index 0 combines the first
/// level of every axis; each axis is listed from mildest to harshest.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionGrid {
    pub gammas: Vec<f64>,
    pub sp_fractions: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub kernels: Vec<usize>,
    pub ratios: Vec<f64>,
}

fn steps(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| ((lo + i as f64 * step) * 1e6).round() / 1e6).collect()
}

impl DistortionGrid {
    /// Gamma 4..64 step 4, salt and pepper 0.1%..1% step 0.1%, sigma
    /// 2.5..3.5 step 0.25, kernel 2..5, ratio 1.0 down to 0.3 step 0.05.
    pub fn full() -> Self {
        let mut ratios = steps(0.3, 1.0, 0.05);
        ratios.reverse();
        Self {
            gammas: steps(4.0, 64.0, 4.0),
            sp_fractions: steps(0.001, 0.01, 0.001),
            sigmas: steps(2.5, 3.5, 0.25),
            kernels: vec![2, 3, 4, 5],
            ratios,
        }
    }

    /// Keeps `n` evenly spaced levels per axis (both ends included).
    pub fn uniform_levels(&self, n: usize) -> Self {
        fn pick<T: Copy>(v: &[T], n: usize) -> Vec<T> {
            if n >= v.len() || v.len() < 2 {
                return v.to_vec();
            }
            if n <= 1 {
                return vec![v[0]];
            }
            let mut out: Vec<usize> = (0..n).map(|i| (i * (v.len() - 1) + (n - 1) / 2) / (n - 1)).collect();
            out.dedup();
            out.into_iter().map(|i| v[i]).collect()
        }
        Self {
            gammas: pick(&self.gammas, n),
            sp_fractions: pick(&self.sp_fractions, n),
            sigmas: pick(&self.sigmas, n),
            kernels: pick(&self.kernels, n),
            ratios: pick(&self.ratios, n),
        }
    }

    pub fn len(&self) -> usize {
        self.gammas.len() * self.sp_fractions.len() * self.sigmas.len() * self.kernels.len() * self.ratios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Configuration `index` with the last axis varying fastest; the seed
    /// is `seed ^ index`.
    pub fn get(&self, index: usize, seed: u64) -> Option<DistortionConfig> {
        if index >= self.len() {
            return None;
        }
        let mut r = index;
        let mut take = |n: usize| {
            let i = r % n;
            r /= n;
            i
        };
        let ratio = self.ratios[take(self.ratios.len())];
        let kernel = self.kernels[take(self.kernels.len())];
        let sigma = self.sigmas[take(self.sigmas.len())];
        let sp = self.sp_fractions[take(self.sp_fractions.len())];
        let gamma = self.gammas[take(self.gammas.len())];
        Some(DistortionConfig {
            gamma,
            sp_fraction: sp,
            gaussian_sigma: sigma,
            erosion_kernel: kernel,
            perspective_ratio: ratio,
            seed: seed ^ index as u64,
        })
    }

    pub fn configs(&self, seed: u64) -> Vec<(usize, DistortionConfig)> {
        (0..self.len()).map(|i| (i, self.get(i, seed).expect("index in range"))).collect()
    }

    /// `k` distinct configurations drawn uniformly, in index order.
    pub fn random_subset(&self, k: usize, seed: u64) -> Vec<(usize, DistortionConfig)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, self.len(), k.min(self.len())).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| (i, self.get(i, seed).expect("index in range"))).collect()
    }
}
