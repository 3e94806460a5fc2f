//! Shared fixtures for the criterion benches under `benches/`.

use postocr::corpus::CorpusGenerator;
use postocr::grapheme::{segment, Alphabet, GraphemeString};

/// Deterministic synthetic lines.
pub fn lines(n: usize) -> Vec<String> {
    CorpusGenerator { diacritic_rate: 0.2, ..Default::default() }
        .lines(n)
        .expect("corpus generator")
}

pub fn segmented(n: usize) -> Vec<GraphemeString> {
    let a = Alphabet::iast();
    lines(n).iter().map(|l| segment(l, &a)).collect()
}
