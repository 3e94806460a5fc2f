//! CRR histograms, KL divergence and grid search over configurations.

use std::io::Write;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{apply_config_stream, DistortionConfig};
use super::image::GrayImage;
use crate::error::{Error, Result};
use crate::grapheme::{segment_normalized, Alphabet};
use crate::metrics::crr;
use crate::ocr::ImageRecognizer;

pub const DEFAULT_BIN_WIDTH: f64 = 0.05;
pub const DEFAULT_ALPHA: f64 = 1e-6;

/// Smoothed histogram of CRR values over `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrrDistribution {
    pub bin_width: f64,
    pub masses: Vec<f64>,
}

/// Bins CRRs into `ceil(1 / bin_width)` bins (a CRR of 1 falls in the last
/// bin) and adds `alpha` to every count before normalising.
pub fn crr_histogram(crrs: &[f64], bin_width: f64, alpha: f64) -> Result<CrrDistribution> {
    if crrs.is_empty() {
        return Err(Error::Empty("crr values"));
    }
    if !(bin_width > 0.0 && bin_width <= 1.0) || alpha < 0.0 {
        return Err(Error::InvalidArgument(format!("bin width {bin_width} / alpha {alpha}")));
    }
    let bins = (1.0 / bin_width - 1e-9).ceil() as usize;
    let mut counts = vec![alpha; bins];
    for &c in crrs {
        let i = ((c.clamp(0.0, 1.0) / bin_width) as usize).min(bins - 1);
        counts[i] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    Ok(CrrDistribution {
        bin_width,
        masses: counts.into_iter().map(|c| c / total).collect(),
    })
}

/// `sum p_i ln(p_i / q_i)` in nats, with `0 ln 0 = 0`.
pub fn kl_divergence(p: &CrrDistribution, q: &CrrDistribution) -> Result<f64> {
    if p.masses.len() != q.masses.len() || (p.bin_width - q.bin_width).abs() > 1e-12 {
        return Err(Error::InvalidArgument("histograms use different bins".into()));
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.masses.iter().zip(&q.masses) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::InvalidArgument("reference histogram has an empty bin".into()));
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl.max(0.0))
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfigScore {
    pub config_id: usize,
    #[serde(skip)]
    pub config: DistortionConfig,
    pub mean_crr: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Selection {
    /// Evaluated configurations by ascending KL, ties by id.
    pub ranked: Vec<ConfigScore>,
    /// Configurations whose OCR failed, with the first error.
    pub failed: Vec<(usize, String)>,
}

impl Selection {
    pub fn top(&self, k: usize) -> &[ConfigScore] {
        &self.ranked[..k.min(self.ranked.len())]
    }

    /// CSV `config_id,gamma,sp,sigma,m,ratio,mean_crr,kl`, ranked order.
    pub fn write_report<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["config_id", "gamma", "sp", "sigma", "m", "ratio", "mean_crr", "kl"])?;
        for s in &self.ranked {
            let c = &s.config;
            w.write_record([
                s.config_id.to_string(),
                c.gamma.to_string(),
                c.sp_fraction.to_string(),
                c.gaussian_sigma.to_string(),
                c.erosion_kernel.to_string(),
                c.perspective_ratio.to_string(),
                format!("{:.6}", s.mean_crr),
                format!("{:.6}", s.kl),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SelectOptions {
    pub bin_width: f64,
    pub alpha: f64,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self {
            bin_width: DEFAULT_BIN_WIDTH,
            alpha: DEFAULT_ALPHA,
        }
    }
}

/// CRRs of `ocr` on each sample after distortion with `config`; image `j`
/// uses noise stream `j` of the config's seed.
pub fn config_crrs(
    samples: &[(GrayImage, String)],
    config: &DistortionConfig,
    ocr: &dyn ImageRecognizer,
    alphabet: &Alphabet,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(samples.len());
    for (j, (img, gold)) in samples.iter().enumerate() {
        let g = segment_normalized(gold, alphabet);
        if g.is_empty() {
            continue;
        }
        let distorted = apply_config_stream(img, config, j as u64)?;
        let text = ocr.recognize(&distorted, j as u64)?;
        out.push(crr(&segment_normalized(&text, alphabet), &g)?);
    }
    if out.is_empty() {
        return Err(Error::Empty("samples with non-empty gold text"));
    }
    Ok(out)
}

/// Scores every configuration by the KL divergence between its CRR
/// histogram and `target`, evaluating configurations in parallel.
pub fn select_configs(
    samples: &[(GrayImage, String)],
    configs: &[(usize, DistortionConfig)],
    ocr: &dyn ImageRecognizer,
    target: &CrrDistribution,
    alphabet: &Alphabet,
    opts: &SelectOptions,
) -> Result<Selection> {
    if samples.is_empty() {
        return Err(Error::Empty("sample lines"));
    }
    let results: Vec<(usize, DistortionConfig, Result<(f64, f64)>)> = configs
        .par_iter()
        .map(|&(id, cfg)| {
            let r = config_crrs(samples, &cfg, ocr, alphabet).and_then(|crrs| {
                let hist = crr_histogram(&crrs, opts.bin_width, opts.alpha)?;
                let mean = crrs.iter().sum::<f64>() / crrs.len() as f64;
                Ok((mean, kl_divergence(&hist, target)?))
            });
            (id, cfg, r)
        })
        .collect();
    let mut sel = Selection::default();
    for (id, cfg, r) in results {
        match r {
            Ok((mean_crr, kl)) => sel.ranked.push(ConfigScore {
                config_id: id,
                config: cfg,
                mean_crr,
                kl,
            }),
            Err(e @ (Error::Ocr(_) | Error::Io(_) | Error::Image(_))) => {
                warn!("config {id} failed: {e}");
                sel.failed.push((id, e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    sel.ranked
        .sort_by(|a, b| a.kl.total_cmp(&b.kl).then(a.config_id.cmp(&b.config_id)));
    Ok(sel)
}
