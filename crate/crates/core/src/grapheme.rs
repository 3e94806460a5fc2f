//! Alphabets and grapheme segmentation for Roman-script text.
//!
//! A grapheme here is a unit of the writing system as the toolkit counts it:
//! one precomposed letter such as `ṣ`, or a two-letter unit such as `kh` or
//! `ai`. All downstream modules (BPE, alignment, metrics) operate on the
//! segments produced by [`segment`].

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

const IAST: &str = include_str!("../data/iast.txt");
const ENGLISH: &str = include_str!("../data/english.txt");
const FRENCH: &str = include_str!("../data/french.txt");
const GERMAN: &str = include_str!("../data/german.txt");
const ITALIAN: &str = include_str!("../data/italian.txt");
const FINNISH: &str = include_str!("../data/finnish.txt");
const IRISH: &str = include_str!("../data/irish.txt");

/// Names of the alphabets shipped with the crate.
pub const BUNDLED: &[&str] = &["iast", "english", "french", "german", "italian", "finnish", "irish"];

/// An ordered set of graphemes.
#[derive(Clone, PartialEq, Eq)]
pub struct Alphabet {
    name: String,
    graphemes: Vec<String>,
    index: HashMap<String, u16>,
    max_chars: usize,
}

impl fmt::Debug for Alphabet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Alphabet")
            .field("name", &self.name)
            .field("len", &self.graphemes.len())
            .finish()
    }
}

impl Alphabet {
    pub fn new<I, S>(name: impl Into<String>, graphemes: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut list = Vec::new();
        let mut index = HashMap::new();
        let mut max_chars = 0;
        for g in graphemes {
            let g: String = g.as_ref().nfc().collect();
            if g.is_empty() {
                return Err(Error::InvalidArgument("empty grapheme".into()));
            }
            if g.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("grapheme {g:?} contains whitespace")));
            }
            if index.contains_key(&g) {
                return Err(Error::InvalidArgument(format!("duplicate grapheme {g:?}")));
            }
            let id = u16::try_from(list.len())
                .map_err(|_| Error::InvalidArgument("alphabet too large".into()))?;
            max_chars = max_chars.max(g.chars().count());
            index.insert(g.clone(), id);
            list.push(g);
        }
        Ok(Self {
            name: name.into(),
            graphemes: list,
            index,
            max_chars,
        })
    }

    /// Parses the alphabet file format: UTF-8, one grapheme per line,
    /// blank lines and lines starting with `#` ignored.
    pub fn parse(name: impl Into<String>, text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        Self::new(name, entries)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        let text = normalize(&bytes)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse(name, &text)
    }

    /// One of the alphabets in [`BUNDLED`].
    pub fn bundled(name: &str) -> Option<Self> {
        let text = match name {
            "iast" => IAST,
            "english" => ENGLISH,
            "french" => FRENCH,
            "german" => GERMAN,
            "italian" => ITALIAN,
            "finnish" => FINNISH,
            "irish" => IRISH,
            _ => return None,
        };
        Some(Self::parse(name, text).expect("bundled alphabet is well formed"))
    }

    /// The shared IAST alphabet.
    pub fn iast() -> Arc<Alphabet> {
        static CELL: OnceLock<Arc<Alphabet>> = OnceLock::new();
        CELL.get_or_init(|| Arc::new(Alphabet::bundled("iast").unwrap()))
            .clone()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.graphemes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphemes.is_empty()
    }

    pub fn graphemes(&self) -> &[String] {
        &self.graphemes
    }

    pub fn grapheme(&self, id: u16) -> &str {
        &self.graphemes[id as usize]
    }

    /// Length in characters of the longest grapheme.
    pub fn max_grapheme_chars(&self) -> usize {
        self.max_chars
    }

    pub fn id_of(&self, grapheme: &str) -> Option<u16> {
        self.index.get(grapheme).copied()
    }

    pub fn contains(&self, grapheme: &str) -> bool {
        self.index.contains_key(grapheme)
    }

    /// Case-insensitive class lookup; the surface itself is never rewritten.
    pub fn classify(&self, surface: &str) -> Option<u16> {
        if let Some(id) = self.id_of(surface) {
            return Some(id);
        }
        let lower: String = surface.to_lowercase().nfc().collect();
        self.id_of(&lower)
    }

    /// Whether every character of `grapheme` is itself a grapheme of this
    /// alphabet, i.e. the alphabet can write it letter by letter.
    pub fn can_write(&self, grapheme: &str) -> bool {
        if self.classify(grapheme).is_some() {
            return true;
        }
        let mut buf = [0u8; 4];
        grapheme
            .chars()
            .all(|c| self.classify(c.encode_utf8(&mut buf)).is_some())
    }
}

/// Grapheme class of a segment: an alphabet entry, or anything else
/// (spaces, punctuation, letters outside the alphabet).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GraphemeClass {
    Known(u16),
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub class: GraphemeClass,
}

/// NFC text together with its grapheme segmentation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphemeString {
    raw: String,
    segments: Vec<Segment>,
}

impl GraphemeString {
    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Number of graphemes.
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn surface(&self, i: usize) -> &str {
        let s = self.segments[i];
        &self.raw[s.start..s.end]
    }

    pub fn surfaces(&self) -> impl ExactSizeIterator<Item = &str> + '_ {
        self.segments.iter().map(|s| &self.raw[s.start..s.end])
    }

    pub fn is_whitespace(&self, i: usize) -> bool {
        self.surface(i).chars().all(char::is_whitespace)
    }

    /// Whitespace-delimited words.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.raw.split_whitespace()
    }

    pub fn into_string(self) -> String {
        self.raw
    }
}

impl fmt::Display for GraphemeString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

/// Decodes UTF-8, applies NFC and folds CR/LF and lone CR to LF.
pub fn normalize(bytes: &[u8]) -> Result<String> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Decode {
        offset: e.valid_up_to(),
    })?;
    Ok(normalize_str(text))
}

pub fn normalize_str(text: &str) -> String {
    let folded = if text.contains('\r') {
        text.replace("\r\n", "\n").replace('\r', "\n")
    } else {
        text.to_owned()
    };
    folded.nfc().collect()
}

/// Greedy longest-match segmentation. Unmatched characters become
/// [`GraphemeClass::Other`] segments of one character.
pub fn segment(text: &str, alphabet: &Alphabet) -> GraphemeString {
    let bounds: Vec<usize> = text
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()))
        .collect();
    let n = bounds.len() - 1;
    let max = alphabet.max_grapheme_chars().max(1);
    let mut segments = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        let mut matched = None;
        for len in (1..=max.min(n - i)).rev() {
            let piece = &text[bounds[i]..bounds[i + len]];
            if let Some(id) = alphabet.classify(piece) {
                matched = Some((len, id));
                break;
            }
        }
        let (len, class) = match matched {
            Some((len, id)) => (len, GraphemeClass::Known(id)),
            None => (1, GraphemeClass::Other),
        };
        segments.push(Segment {
            start: bounds[i],
            end: bounds[i + len],
            class,
        });
        i += len;
    }
    GraphemeString {
        raw: text.to_owned(),
        segments,
    }
}

/// Normalizes then segments.
pub fn segment_normalized(text: &str, alphabet: &Alphabet) -> GraphemeString {
    segment(&normalize_str(text), alphabet)
}

/// Graphemes of a target alphabet that a source alphabet cannot write.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageReport {
    pub missing: BTreeSet<String>,
    pub overlap: usize,
    pub target_size: usize,
}

/// A target grapheme is covered when the source lists it or can write each
/// of its letters (so `kh` is covered by any alphabet holding `k` and `h`).
pub fn alphabet_coverage(source: &Alphabet, target: &Alphabet) -> CoverageReport {
    let missing: BTreeSet<String> = target
        .graphemes()
        .iter()
        .filter(|g| !source.can_write(g))
        .cloned()
        .collect();
    CoverageReport {
        overlap: target.len() - missing.len(),
        target_size: target.len(),
        missing,
    }
}
