//! The copy/generate mixture under a shared normaliser.
//!
//! Token ids below the vocabulary size are ordinary tokens; source tokens
//! the vocabulary cannot represent carry extended ids `>= vocab_size`, so
//! they can be copied but never generated.

use crate::bpe::TokenId;
use crate::nnet::ops::log_sum_exp;

#[derive(Debug, Clone)]
pub struct OutputDistribution {
    vocab_size: usize,
    unk: TokenId,
    /// `exp(ψ_g(v)) / Z` per vocabulary id.
    gen: Vec<f64>,
    /// `exp(ψ_c(x_j)) / Z` per source position.
    copy: Vec<f64>,
    source: Vec<TokenId>,
    log_z: f64,
}

impl OutputDistribution {
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn source(&self) -> &[TokenId] {
        &self.source
    }

    pub fn position_copy_mass(&self) -> &[f64] {
        &self.copy
    }

    /// Generate mass of `id`: its own score for vocabulary tokens, zero for
    /// extended source tokens, and the UNK mass for anything else.
    pub fn gen_mass(&self, id: TokenId) -> f64 {
        if (id as usize) < self.vocab_size {
            self.gen[id as usize]
        } else if self.source.contains(&id) {
            0.0
        } else {
            self.gen[self.unk as usize]
        }
    }

    /// Sum of copy mass over every source position holding `id`.
    pub fn copy_mass(&self, id: TokenId) -> f64 {
        self.source
            .iter()
            .zip(&self.copy)
            .filter(|(s, _)| **s == id)
            .map(|(_, c)| c)
            .sum()
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.gen_mass(id) + self.copy_mass(id)
    }

    /// Every id with possibly non-zero mass: the vocabulary followed by the
    /// extended source ids in first-occurrence order.
    pub fn support(&self) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = (0..self.vocab_size as TokenId).collect();
        for &s in &self.source {
            if s as usize >= self.vocab_size && !ids.contains(&s) {
                ids.push(s);
            }
        }
        ids
    }

    /// Collapsed probabilities over [`support`](Self::support).
    pub fn probs(&self) -> Vec<(TokenId, f64)> {
        let mut out: Vec<(TokenId, f64)> = self.gen.iter().enumerate().map(|(i, g)| (i as TokenId, *g)).collect();
        for (&s, &c) in self.source.iter().zip(&self.copy) {
            if (s as usize) < self.vocab_size {
                out[s as usize].1 += c;
            } else if let Some(e) = out[self.vocab_size..].iter_mut().find(|e| e.0 == s) {
                e.1 += c;
            } else {
                out.push((s, c));
            }
        }
        out
    }

    /// Highest-probability id; ties go to the smaller id.
    pub fn argmax(&self) -> (TokenId, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (id, p) in self.probs() {
            if p > best.1 || (p == best.1 && id < best.0) {
                best = (id, p);
            }
        }
        best
    }

    /// Id that receives the generate indicator for target `id`.
    fn generating_id(&self, id: TokenId) -> Option<TokenId> {
        if (id as usize) < self.vocab_size {
            Some(id)
        } else if self.source.contains(&id) {
            None
        } else {
            Some(self.unk)
        }
    }

    /// `-ln p(target)` and its gradients with respect to the generate and
    /// copy scores, each scaled by `weight`.
    pub fn nll_and_grad(&self, target: TokenId, weight: f64, d_gen: &mut [f64], d_copy: &mut [f64]) -> f64 {
        let p = self.prob(target);
        let gid = self.generating_id(target);
        for (v, d) in d_gen.iter_mut().enumerate() {
            let ind = if gid == Some(v as TokenId) { self.gen[v] / p } else { 0.0 };
            *d = weight * (self.gen[v] - ind);
        }
        for (j, d) in d_copy.iter_mut().enumerate() {
            let ind = if self.source[j] == target { self.copy[j] / p } else { 0.0 };
            *d = weight * (self.copy[j] - ind);
        }
        -p.ln() * weight
    }
}

/// Builds the mixture from raw scores. `-inf` scores are allowed and mean
/// "never": masked specials or a disabled copy mode.
pub fn output_distribution(
    gen_scores: &[f64],
    copy_scores: &[f64],
    source: &[TokenId],
    unk: TokenId,
) -> OutputDistribution {
    assert_eq!(copy_scores.len(), source.len(), "one copy score per source position");
    let m = gen_scores
        .iter()
        .chain(copy_scores)
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let gen_e: Vec<f64> = gen_scores.iter().map(|s| (s - m).exp()).collect();
    let copy_e: Vec<f64> = copy_scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = gen_e.iter().sum::<f64>() + copy_e.iter().sum::<f64>();
    let log_z = m + z.ln();
    debug_assert!((log_z - log_sum_exp(&[log_sum_exp(gen_scores), log_sum_exp(copy_scores)])).abs() < 1e-9);
    OutputDistribution {
        vocab_size: gen_scores.len(),
        unk,
        gen: gen_e.into_iter().map(|e| e / z).collect(),
        copy: copy_e.into_iter().map(|e| e / z).collect(),
        source: source.to_vec(),
        log_z,
    }
}
