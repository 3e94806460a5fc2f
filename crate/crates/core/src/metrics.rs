//! Line and corpus evaluation: character and word recognition rates and
//! the NormLP acceptability score.

use std::collections::HashMap;

use serde::Serialize;

use crate::align::{align_units, distance, OpKind};
use crate::error::{Error, Result};
use crate::grapheme::GraphemeString;

/// Fraction of gold graphemes recognised, `max(0, (n - lev) / n)`.
pub fn crr(prediction: &GraphemeString, gold: &GraphemeString) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::Empty("gold line"));
    }
    let p: Vec<&str> = prediction.surfaces().collect();
    let g: Vec<&str> = gold.surfaces().collect();
    let d = distance(&p, &g);
    Ok(((g.len() as f64 - d as f64) / g.len() as f64).max(0.0))
}

/// Words matched exactly under a word-level alignment, over the longer of
/// the two word sequences so that inserted words also cost.
pub fn wrr(prediction: &GraphemeString, gold: &GraphemeString) -> Result<f64> {
    wrr_str(prediction.as_str(), gold.as_str())
}

pub fn wrr_str(prediction: &str, gold: &str) -> Result<f64> {
    let g: Vec<&str> = gold.split_whitespace().collect();
    if g.is_empty() {
        return Err(Error::Empty("gold words"));
    }
    let p: Vec<&str> = prediction.split_whitespace().collect();
    let trace = align_units(&g, &p);
    let matched = trace.ops.iter().filter(|o| o.kind == OpKind::Match).count();
    Ok(matched as f64 / g.len().max(p.len()) as f64)
}

/// Sentence-level log-likelihood (natural log).
pub trait LanguageModel {
    fn log_prob(&self, sentence: &GraphemeString) -> f64;
}

/// Additively smoothed grapheme unigram model with an UNK bucket.
#[derive(Debug, Clone)]
pub struct UnigramLm {
    counts: HashMap<String, u64>,
    total: u64,
    alpha: f64,
    corpus_id: String,
}

impl UnigramLm {
    pub fn train(corpus: &[GraphemeString], alpha: f64) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Empty("unigram corpus"));
        }
        if alpha.is_nan() || alpha <= 0.0 {
            return Err(Error::InvalidArgument("smoothing alpha must be positive".into()));
        }
        let mut counts = HashMap::new();
        let mut total = 0;
        for line in corpus {
            for s in line.surfaces() {
                *counts.entry(s.to_owned()).or_default() += 1;
                total += 1;
            }
        }
        let corpus_id = format!("{:016x}", corpus_fingerprint(corpus));
        Ok(Self {
            counts,
            total,
            alpha,
            corpus_id,
        })
    }

    pub fn corpus_id(&self) -> &str {
        &self.corpus_id
    }

    /// Closed vocabulary size, excluding UNK.
    pub fn vocab_size(&self) -> usize {
        self.counts.len()
    }

    fn denominator(&self) -> f64 {
        self.total as f64 + self.alpha * (self.counts.len() + 1) as f64
    }

    pub fn prob(&self, unit: &str) -> f64 {
        let c = self.counts.get(unit).copied().unwrap_or(0) as f64;
        (c + self.alpha) / self.denominator()
    }

    pub fn unk_prob(&self) -> f64 {
        self.alpha / self.denominator()
    }

    /// Units of the closed vocabulary.
    pub fn units(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }
}

impl LanguageModel for UnigramLm {
    fn log_prob(&self, sentence: &GraphemeString) -> f64 {
        sentence.surfaces().map(|s| self.prob(s).ln()).sum()
    }
}

/// Grapheme n-gram model with additive smoothing over the closed
/// vocabulary plus UNK and an end-of-line event.
#[derive(Debug, Clone)]
pub struct NgramLm {
    order: usize,
    alpha: f64,
    vocab: HashMap<String, u32>,
    context_counts: HashMap<Vec<u32>, u64>,
    ngram_counts: HashMap<Vec<u32>, u64>,
}

const NG_BOS: u32 = u32::MAX;
const NG_EOS: u32 = u32::MAX - 1;
const NG_UNK: u32 = u32::MAX - 2;

impl NgramLm {
    pub fn train(corpus: &[GraphemeString], order: usize, alpha: f64) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Empty("n-gram corpus"));
        }
        if order == 0 || alpha.is_nan() || alpha <= 0.0 {
            return Err(Error::InvalidArgument("order and alpha must be positive".into()));
        }
        let mut lm = Self {
            order,
            alpha,
            vocab: HashMap::new(),
            context_counts: HashMap::new(),
            ngram_counts: HashMap::new(),
        };
        for line in corpus {
            for s in line.surfaces() {
                let next = lm.vocab.len() as u32;
                lm.vocab.entry(s.to_owned()).or_insert(next);
            }
        }
        for line in corpus {
            let ids = lm.ids(line);
            for (ctx, next) in lm.events(&ids) {
                *lm.context_counts.entry(ctx.clone()).or_default() += 1;
                let mut key = ctx;
                key.push(next);
                *lm.ngram_counts.entry(key).or_default() += 1;
            }
        }
        Ok(lm)
    }

    fn ids(&self, line: &GraphemeString) -> Vec<u32> {
        line.surfaces()
            .map(|s| self.vocab.get(s).copied().unwrap_or(NG_UNK))
            .collect()
    }

    fn events(&self, ids: &[u32]) -> Vec<(Vec<u32>, u32)> {
        let mut padded = vec![NG_BOS; self.order - 1];
        padded.extend_from_slice(ids);
        padded.push(NG_EOS);
        (self.order - 1..padded.len())
            .map(|i| (padded[i + 1 - self.order..i].to_vec(), padded[i]))
            .collect()
    }

    fn outcomes(&self) -> f64 {
        // closed vocabulary + UNK + end of line
        (self.vocab.len() + 2) as f64
    }
}

impl LanguageModel for NgramLm {
    fn log_prob(&self, sentence: &GraphemeString) -> f64 {
        let ids = self.ids(sentence);
        let mut total = 0.0;
        for (ctx, next) in self.events(&ids) {
            let c_ctx = self.context_counts.get(&ctx).copied().unwrap_or(0) as f64;
            let mut key = ctx;
            key.push(next);
            let c = self.ngram_counts.get(&key).copied().unwrap_or(0) as f64;
            total += ((c + self.alpha) / (c_ctx + self.alpha * self.outcomes())).ln();
        }
        total
    }
}

/// `-(log P_model(s) / log P_unigram(s))`; closer to zero is better.
pub fn norm_lp(sentence: &GraphemeString, scorer: &dyn LanguageModel, unigram: &UnigramLm) -> Result<f64> {
    if sentence.is_empty() {
        return Err(Error::Empty("sentence"));
    }
    let denom = unigram.log_prob(sentence);
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::NonFinite("unigram log-probability".into()));
    }
    Ok(-(scorer.log_prob(sentence) / denom))
}

#[derive(Debug, Clone, Serialize)]
pub struct LineScore {
    pub crr: f64,
    pub wrr: f64,
    pub norm_lp: Option<f64>,
    pub input_len: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct LengthBucket {
    /// Smallest input length (graphemes) in the bucket.
    pub min_len: usize,
    pub count: usize,
    pub mean_crr: f64,
    pub mean_wrr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub per_line: Vec<LineScore>,
    pub mean_crr: f64,
    pub mean_wrr: f64,
    pub mean_norm_lp: Option<f64>,
    pub by_length_buckets: Vec<LengthBucket>,
}

#[derive(Debug, Clone, Copy)]
pub struct BucketOptions {
    pub width: usize,
    /// Buckets with fewer lines merge into the next smaller bucket.
    pub min_count: usize,
}

impl Default for BucketOptions {
    fn default() -> Self {
        Self { width: 10, min_count: 5 }
    }
}

/// Scores aligned (input, prediction, gold) triples.
pub fn evaluate(
    inputs: &[GraphemeString],
    predictions: &[GraphemeString],
    golds: &[GraphemeString],
    acceptability: Option<(&dyn LanguageModel, &UnigramLm)>,
    buckets: BucketOptions,
) -> Result<EvalReport> {
    if predictions.len() != golds.len() || inputs.len() != golds.len() {
        return Err(Error::InvalidArgument("inputs, predictions and golds differ in length".into()));
    }
    if golds.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut per_line = Vec::with_capacity(golds.len());
    for ((input, pred), gold) in inputs.iter().zip(predictions).zip(golds) {
        let norm_lp = match acceptability {
            Some((scorer, unigram)) if !pred.is_empty() => Some(norm_lp(pred, scorer, unigram)?),
            _ => None,
        };
        per_line.push(LineScore {
            crr: crr(pred, gold)?,
            wrr: wrr(pred, gold)?,
            norm_lp,
            input_len: input.len(),
        });
    }
    let n = per_line.len() as f64;
    let mean_crr = per_line.iter().map(|l| l.crr).sum::<f64>() / n;
    let mean_wrr = per_line.iter().map(|l| l.wrr).sum::<f64>() / n;
    let lps: Vec<f64> = per_line.iter().filter_map(|l| l.norm_lp).collect();
    let mean_norm_lp = (!lps.is_empty()).then(|| lps.iter().sum::<f64>() / lps.len() as f64);
    let by_length_buckets = length_buckets(&per_line, buckets);
    Ok(EvalReport {
        per_line,
        mean_crr,
        mean_wrr,
        mean_norm_lp,
        by_length_buckets,
    })
}

/// Buckets of width `opts.width` over input length; sparse buckets are
/// folded into the nearest smaller one.
pub fn length_buckets(lines: &[LineScore], opts: BucketOptions) -> Vec<LengthBucket> {
    let width = opts.width.max(1);
    let mut raw: std::collections::BTreeMap<usize, Vec<&LineScore>> = Default::default();
    for l in lines {
        raw.entry(l.input_len / width * width).or_default().push(l);
    }
    let mut groups: Vec<(usize, Vec<&LineScore>)> = raw.into_iter().collect();
    let mut i = groups.len();
    while i > 1 {
        i -= 1;
        if groups[i].1.len() < opts.min_count {
            let (_, items) = groups.remove(i);
            groups[i - 1].1.extend(items);
        }
    }
    groups
        .into_iter()
        .map(|(min_len, items)| {
            let n = items.len() as f64;
            LengthBucket {
                min_len,
                count: items.len(),
                mean_crr: items.iter().map(|l| l.crr).sum::<f64>() / n,
                mean_wrr: items.iter().map(|l| l.wrr).sum::<f64>() / n,
            }
        })
        .collect()
}

fn corpus_fingerprint(corpus: &[GraphemeString]) -> u64 {
    let mut bytes = Vec::new();
    for l in corpus {
        bytes.extend_from_slice(l.as_str().as_bytes());
        bytes.push(b'\n');
    }
    crate::bpe::fnv1a64(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grapheme::{segment, Alphabet};
    use proptest::prelude::*;

    fn g(s: &str) -> GraphemeString {
        segment(s, &Alphabet::iast())
    }

    #[test]
    fn crr_cases() {
        assert_eq!(crr(&g("rāma"), &g("rāma")).unwrap(), 1.0);
        assert!((crr(&g("abd"), &g("abc")).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(crr(&g("xxxxxxxx"), &g("ab")).unwrap(), 0.0);
        assert!(crr(&g("a"), &g("")).is_err());
    }

    #[test]
    fn wrr_cases() {
        assert_eq!(wrr(&g("rāma sītā"), &g("rāma sītā")).unwrap(), 1.0);
        assert_eq!(wrr(&g("rama sītā"), &g("rāma sītā")).unwrap(), 0.5);
        assert_eq!(wrr(&g(""), &g("rāma sītā")).unwrap(), 0.0);
        assert_eq!(wrr(&g("rāma rāma sītā"), &g("rāma sītā")).unwrap(), 2.0 / 3.0);
        assert!(wrr(&g("a"), &g("   ")).is_err());
    }

    #[test]
    fn unigram_normalizes() {
        let lm = UnigramLm::train(&[g("rāma sītā"), g("kṛṣṇa")], 1.0).unwrap();
        let total: f64 = lm.units().map(|u| lm.prob(u)).sum::<f64>() + lm.unk_prob();
        assert!((total - 1.0).abs() < 1e-9);
        let lm = UnigramLm::train(&[g("aa")], 1e-12).unwrap();
        assert!((lm.prob("a") - 1.0).abs() < 1e-9);
        assert!(UnigramLm::train(&[], 1.0).is_err());
    }

    #[test]
    fn norm_lp_of_identical_models_is_minus_one() {
        let lm = UnigramLm::train(&[g("rāma sītā")], 1.0).unwrap();
        assert_eq!(norm_lp(&g("rāma"), &lm, &lm).unwrap(), -1.0);
        assert!(norm_lp(&g(""), &lm, &lm).is_err());
    }

    struct Scaled(UnigramLm, f64);
    impl LanguageModel for Scaled {
        fn log_prob(&self, s: &GraphemeString) -> f64 {
            self.0.log_prob(s) * self.1
        }
    }

    #[test]
    fn better_model_scores_between_minus_one_and_zero() {
        let uni = UnigramLm::train(&[g("rāma sītā")], 1.0).unwrap();
        let better = Scaled(uni.clone(), 0.4);
        let s = norm_lp(&g("rāma"), &better, &uni).unwrap();
        assert!(s > -1.0 && s < 0.0);
        let best = Scaled(uni.clone(), 0.2);
        assert!(norm_lp(&g("rāma"), &best, &uni).unwrap() > s);
    }

    #[test]
    fn ngram_prefers_seen_text() {
        let corpus: Vec<_> = ["rāma sītā", "rāma lakṣmaṇa", "sītā rāma"].iter().map(|s| g(s)).collect();
        let lm = NgramLm::train(&corpus, 5, 0.1).unwrap();
        assert!(lm.log_prob(&g("rāma sītā")) > lm.log_prob(&g("sāmi tarā")));
    }

    #[test]
    fn held_out_likelihood_not_above_training() {
        use rand::seq::{IndexedRandom, SliceRandom};
        use rand::SeedableRng;
        let words = ["rāma", "sītā", "kṛṣṇa", "arjuna", "dharma", "yoga", "ātmā", "bhakti"];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let lines: Vec<GraphemeString> = (0..200)
            .map(|_| {
                let n = 2 + (rand::Rng::random::<u8>(&mut rng) % 4) as usize;
                g(&(0..n).map(|_| *words.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" "))
            })
            .collect();
        let mut diffs = Vec::new();
        for split in 0..10 {
            let mut idx: Vec<usize> = (0..lines.len()).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(split));
            let (tr, te) = idx.split_at(150);
            let train: Vec<_> = tr.iter().map(|&i| lines[i].clone()).collect();
            let lm = UnigramLm::train(&train, 1.0).unwrap();
            let per_unit = |set: &[usize]| {
                let lp: f64 = set.iter().map(|&i| lm.log_prob(&lines[i])).sum();
                let n: usize = set.iter().map(|&i| lines[i].len()).sum();
                lp / n as f64
            };
            diffs.push(per_unit(tr) - per_unit(te));
        }
        assert!(diffs.iter().sum::<f64>() / diffs.len() as f64 >= 0.0);
    }

    #[test]
    fn buckets_merge_downward() {
        let mk = |len, crr| LineScore { crr, wrr: crr, norm_lp: None, input_len: len };
        let lines: Vec<_> = (0..6)
            .map(|i| mk(12 + i, 1.0))
            .chain((0..6).map(|i| mk(22 + i, 0.5)))
            .chain([mk(35, 0.0)])
            .collect();
        let b = length_buckets(&lines, BucketOptions { width: 10, min_count: 5 });
        assert_eq!(b.len(), 2);
        assert_eq!((b[0].min_len, b[0].count), (10, 6));
        assert_eq!((b[1].min_len, b[1].count), (20, 7));
        assert!((b[1].mean_crr - 3.0 / 7.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn crr_one_iff_equal(a in "[abcā ]{0,10}", b in "[abcā ]{1,10}") {
            let (ga, gb) = (g(&a), g(&b));
            let r = crr(&ga, &gb).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert_eq!(r == 1.0, a == b);
        }

        #[test]
        fn crr_invariant_under_shared_prefix_edit(p in "[abc]{0,5}", q in "[abc]{0,5}", a in "[abc]{1,8}", b in "[abc]{1,8}") {
            // Swapping one shared prefix for another of equal length keeps the distance.
            let r1 = crr(&g(&format!("{p}{a}")), &g(&format!("{p}{b}"))).unwrap();
            let q: String = q.chars().chain("ccccc".chars()).take(p.chars().count()).collect();
            let r2 = crr(&g(&format!("{q}{a}")), &g(&format!("{q}{b}"))).unwrap();
            prop_assert!((r1 - r2).abs() < 1e-12);
        }

        #[test]
        fn wrr_one_iff_words_equal(a in "[ab ]{0,12}", b in "[ab]{1,3}( [ab]{1,3}){0,3}") {
            let r = wrr_str(&a, &b).unwrap();
            let same = a.split_whitespace().eq(b.split_whitespace());
            prop_assert_eq!(r == 1.0, same);
        }
    }
}
