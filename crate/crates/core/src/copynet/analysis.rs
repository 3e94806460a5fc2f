//! Mean copy and generate mass per (input grapheme, predicted grapheme).

use super::decode::Corrector;
use crate::align::{align_units, ConfusionMatrix, OpKind, EPS};
use crate::error::Result;
use crate::grapheme::segment;

#[derive(Debug, Clone)]
pub struct CopyGenerateAnalysis {
    /// Mean generate mass of the predicted token, rows are input graphemes.
    pub gen: ConfusionMatrix,
    /// Mean copy mass of the predicted token.
    pub copy: ConfusionMatrix,
    /// Number of events per cell.
    pub counts: ConfusionMatrix,
}

impl CopyGenerateAnalysis {
    pub fn mean_gen(&self, input: &str, predicted: &str) -> Option<f64> {
        (self.counts.get(input, predicted) > 0.0).then(|| self.gen.get(input, predicted))
    }

    pub fn mean_copy(&self, input: &str, predicted: &str) -> Option<f64> {
        (self.counts.get(input, predicted) > 0.0).then(|| self.copy.get(input, predicted))
    }
}

/// Greedily corrects each input line and aligns its graphemes with the
/// prediction. Every aligned (input, predicted) grapheme pair, including
/// insertions against `EPS`, records the mixture masses of the token that
/// produced the predicted grapheme.
pub fn copy_generate_analysis(corrector: &Corrector, inputs: &[String]) -> Result<CopyGenerateAnalysis> {
    let mut events: Vec<(String, String, f64, f64)> = Vec::new();
    for line in inputs {
        let g = corrector.segment(line);
        let decoded = corrector.decode(&corrector.source(&g), 1)?;
        let mut pred_units: Vec<String> = Vec::new();
        let mut masses: Vec<(f64, f64)> = Vec::new();
        for tok in &decoded.tokens {
            for s in segment(&tok.surface, &corrector.alphabet).surfaces() {
                pred_units.push(s.to_owned());
                masses.push((tok.gen_mass, tok.copy_mass));
            }
        }
        let input_units: Vec<String> = g.surfaces().map(str::to_owned).collect();
        let trace = align_units(&input_units, &pred_units);
        let mut k = 0;
        for op in &trace.ops {
            match op.kind {
                OpKind::Match | OpKind::Sub | OpKind::Ins => {
                    let src = op.source.clone().unwrap_or_else(|| EPS.to_owned());
                    let (gm, cm) = masses[k];
                    events.push((src, op.target.clone().expect("aligned prediction unit"), gm, cm));
                    k += 1;
                }
                OpKind::Del => {}
            }
        }
    }
    let mut labels: Vec<String> = events.iter().flat_map(|e| [e.0.clone(), e.1.clone()]).collect();
    labels.sort();
    labels.dedup();
    if let Some(i) = labels.iter().position(|l| l == EPS) {
        let eps = labels.remove(i);
        labels.push(eps);
    }
    let mut gen = ConfusionMatrix::new(labels.clone());
    let mut copy = ConfusionMatrix::new(labels.clone());
    let mut counts = ConfusionMatrix::new(labels.clone());
    for (a, b, gm, cm) in &events {
        gen.add(a, b, *gm);
        copy.add(a, b, *cm);
        counts.add(a, b, 1.0);
    }
    let mut mean_gen = ConfusionMatrix::new(labels.clone());
    let mut mean_copy = ConfusionMatrix::new(labels.clone());
    for a in &labels {
        for b in &labels {
            let n = counts.get(a, b);
            if n > 0.0 {
                mean_gen.add(a, b, gen.get(a, b) / n);
                mean_copy.add(a, b, copy.get(a, b) / n);
            }
        }
    }
    Ok(CopyGenerateAnalysis {
        gen: mean_gen,
        copy: mean_copy,
        counts,
    })
}
