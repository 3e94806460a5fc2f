//! Synthetic Romanised Sanskrit corpora for offline experiments.
//!
//! Words are built from consonant-vowel syllables. Each syllable slot picks
//! a diacritic letter with probability `diacritic_rate`, so the share of
//! graphemes a stripping channel corrupts can be tuned. Words whose
//! diacritic-stripped spelling collides with an earlier word are rejected,
//! which keeps restoration well defined. Lines draw words from a Zipfian
//! distribution over the lexicon.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use crate::error::{Error, Result};

const PLAIN_VOWELS: &[&str] = &["a", "a", "a", "i", "u", "e", "o", "ai", "au"];
const MARKED_VOWELS: &[&str] = &["ā", "ā", "ī", "ū", "ṛ", "ṝ", "ḷ"];
const PLAIN_CONSONANTS: &[&str] = &[
    "k", "kh", "g", "gh", "c", "ch", "j", "jh", "t", "th", "d", "dh", "n", "p", "ph", "b", "bh", "m", "y", "r", "l",
    "v", "s", "h",
];
const MARKED_CONSONANTS: &[&str] = &["ṅ", "ñ", "ṭ", "ṭh", "ḍ", "ḍh", "ṇ", "ś", "ṣ"];
const MARKED_CODAS: &[&str] = &["ṃ", "ḥ"];

/// Strips the diacritics a plain-letter OCR loses: marked vowels and
/// consonants become their base letters, `ñ` becomes `i`.
pub fn strip_diacritics(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        out.push_str(match c {
            'ā' => "a",
            'ī' => "i",
            'ū' => "u",
            'ṛ' | 'ṝ' => "r",
            'ḷ' | 'ḹ' => "l",
            'ṃ' => "m",
            'ḥ' => "h",
            'ṅ' | 'ṇ' => "n",
            'ñ' => "i",
            'ṭ' => "t",
            'ḍ' => "d",
            'ś' | 'ṣ' => "s",
            _ => {
                out.push(c);
                continue;
            }
        });
    }
    out
}

#[derive(Debug, Clone)]
pub struct CorpusGenerator {
    pub lexicon_size: usize,
    pub min_syllables: usize,
    pub max_syllables: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Probability that a syllable's consonant, vowel or coda is marked.
    pub diacritic_rate: f64,
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for CorpusGenerator {
    fn default() -> Self {
        Self {
            lexicon_size: 400,
            min_syllables: 1,
            max_syllables: 4,
            min_words: 3,
            max_words: 7,
            diacritic_rate: 0.12,
            zipf_exponent: 1.0,
            seed: 0,
        }
    }
}

impl CorpusGenerator {
    fn word(&self, rng: &mut ChaCha8Rng) -> String {
        let n = rng.random_range(self.min_syllables..=self.max_syllables);
        let mut w = String::new();
        for i in 0..n {
            let marked = |rng: &mut ChaCha8Rng| rng.random_bool(self.diacritic_rate);
            if i > 0 || rng.random_bool(0.8) {
                let set = if marked(rng) { MARKED_CONSONANTS } else { PLAIN_CONSONANTS };
                w.push_str(set.choose(rng).expect("non-empty"));
            }
            let set = if marked(rng) { MARKED_VOWELS } else { PLAIN_VOWELS };
            w.push_str(set.choose(rng).expect("non-empty"));
        }
        if rng.random_bool(self.diacritic_rate) {
            w.push_str(MARKED_CODAS.choose(rng).expect("non-empty"));
        }
        w
    }

    /// Distinct words with distinct stripped spellings, most frequent first.
    pub fn lexicon(&self) -> Result<Vec<String>> {
        if self.lexicon_size == 0 || self.min_syllables == 0 || self.min_syllables > self.max_syllables {
            return Err(Error::InvalidArgument("bad lexicon shape".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut seen = HashSet::new();
        let mut words = Vec::with_capacity(self.lexicon_size);
        let mut attempts = 0usize;
        while words.len() < self.lexicon_size {
            attempts += 1;
            if attempts > 1000 * self.lexicon_size {
                return Err(Error::InvalidArgument(format!(
                    "could not find {} words with distinct stripped forms",
                    self.lexicon_size
                )));
            }
            let w = self.word(&mut rng);
            if seen.insert(strip_diacritics(&w)) {
                words.push(w);
            }
        }
        Ok(words)
    }

    /// `n` lines of space-separated words.
    pub fn lines(&self, n: usize) -> Result<Vec<String>> {
        if self.min_words == 0 || self.min_words > self.max_words {
            return Err(Error::InvalidArgument("bad line length range".into()));
        }
        let lexicon = self.lexicon()?;
        let zipf = Zipf::new(lexicon.len() as f64, self.zipf_exponent)
            .map_err(|e| Error::InvalidArgument(format!("zipf: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        Ok((0..n)
            .map(|_| {
                let k = rng.random_range(self.min_words..=self.max_words);
                (0..k)
                    .map(|_| lexicon[zipf.sample(&mut rng) as usize - 1].as_str())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grapheme::{segment, Alphabet, GraphemeClass};

    #[test]
    fn stripping_matches_examples() {
        assert_eq!(strip_diacritics("jñānaṃ kṛṣṇaḥ"), "jianam krsnah");
        assert_eq!(strip_diacritics("ṭhakkura ḍhaukate śiva"), "thakkura dhaukate siva");
        assert_eq!(strip_diacritics("plain"), "plain");
    }

    #[test]
    fn lexicon_is_stripping_injective() {
        let g = CorpusGenerator::default();
        let lex = g.lexicon().unwrap();
        assert_eq!(lex.len(), g.lexicon_size);
        let stripped: HashSet<_> = lex.iter().map(|w| strip_diacritics(w)).collect();
        assert_eq!(stripped.len(), lex.len());
    }

    #[test]
    fn lines_use_only_the_alphabet() {
        let a = Alphabet::iast();
        let g = CorpusGenerator::default();
        for l in g.lines(200).unwrap() {
            let s = segment(&l, &a);
            for (i, seg) in s.segments().iter().enumerate() {
                assert!(matches!(seg.class, GraphemeClass::Known(_)) || s.is_whitespace(i), "{l}");
            }
            let n = l.split(' ').count();
            assert!((g.min_words..=g.max_words).contains(&n));
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let g = CorpusGenerator::default();
        assert_eq!(g.lines(50).unwrap(), g.lines(50).unwrap());
        let h = CorpusGenerator { seed: 1, ..g.clone() };
        assert_ne!(g.lines(50).unwrap(), h.lines(50).unwrap());
    }
}
