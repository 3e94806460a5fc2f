//! Byte-pair encoding over graphemes.
//!
//! Merges are learned from a segmented corpus and stop once no adjacent
//! pair reaches the minimum count or a merge would exceed the maximum token
//! length (in graphemes). Whitespace is a token class of its own and never
//! takes part in a merge. [`BpeVocabulary::augment_with_alphabet`] closes the
//! vocabulary over an alphabet so alphabet-only text never encodes to UNK.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grapheme::{Alphabet, GraphemeString};

pub type TokenId = u32;

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const PAD: &str = "<pad>";

const HEADER: &str = "bpe-vocab v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Learned,
    Augmented,
    Special,
}

impl TokenKind {
    fn as_str(self) -> &'static str {
        match self {
            TokenKind::Learned => "learned",
            TokenKind::Augmented => "augmented",
            TokenKind::Special => "special",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub frequency: u64,
    pub kind: TokenKind,
}

/// One encoded unit. `surface` is the text it covers, which for UNK pieces
/// is the original out-of-vocabulary text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Piece {
    pub id: TokenId,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeVocabulary {
    min_count: u64,
    tokens: Vec<Token>,
    merges: Vec<(String, String)>,
    index: HashMap<String, TokenId>,
    merge_table: HashMap<(TokenId, TokenId), (usize, TokenId)>,
    unk: TokenId,
    bos: TokenId,
    eos: TokenId,
    pad: TokenId,
    replacement: String,
}

impl BpeVocabulary {
    fn build(min_count: u64, mut tokens: Vec<Token>, merges: Vec<(String, String)>) -> Result<Self> {
        tokens.retain(|t| t.kind != TokenKind::Special);
        for s in [UNK, BOS, EOS, PAD] {
            tokens.push(Token {
                surface: s.to_owned(),
                frequency: 0,
                kind: TokenKind::Special,
            });
        }
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.kind == TokenKind::Special {
                continue;
            }
            if index.insert(t.surface.clone(), i as TokenId).is_some() {
                return Err(Error::Format(format!("duplicate token {:?}", t.surface)));
            }
        }
        let mut merge_table = HashMap::new();
        for (rank, (l, r)) in merges.iter().enumerate() {
            let lookup = |s: &str| {
                index
                    .get(s)
                    .copied()
                    .ok_or_else(|| Error::Format(format!("merge refers to unknown token {s:?}")))
            };
            let (li, ri) = (lookup(l)?, lookup(r)?);
            let out = lookup(&format!("{l}{r}"))?;
            merge_table.entry((li, ri)).or_insert((rank, out));
        }
        let n = tokens.len() as TokenId;
        Ok(Self {
            min_count,
            tokens,
            merges,
            index,
            merge_table,
            unk: n - 4,
            bos: n - 3,
            eos: n - 2,
            pad: n - 1,
            replacement: "\u{FFFD}".to_owned(),
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> Option<&Token> {
        self.tokens.get(id as usize)
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn id_of(&self, surface: &str) -> Option<TokenId> {
        self.index.get(surface).copied()
    }

    pub fn unk(&self) -> TokenId {
        self.unk
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn pad(&self) -> TokenId {
        self.pad
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        id >= self.unk
    }

    /// Text emitted by [`decode`] for UNK tokens.
    pub fn set_unk_replacement(&mut self, replacement: impl Into<String>) {
        self.replacement = replacement.into();
    }

    /// Appends every grapheme of `alphabet` the vocabulary lacks, flagged as
    /// augmented with frequency 0, plus the space separator. Learned tokens
    /// keep their ids; specials move to the end.
    pub fn augment_with_alphabet(&self, alphabet: &Alphabet) -> BpeVocabulary {
        let mut tokens = self.tokens.clone();
        let mut added = false;
        let space = String::from(" ");
        for g in alphabet.graphemes().iter().chain([&space]) {
            if !self.index.contains_key(g) {
                tokens.push(Token {
                    surface: g.clone(),
                    frequency: 0,
                    kind: TokenKind::Augmented,
                });
                added = true;
            }
        }
        if !added {
            return self.clone();
        }
        let mut out = Self::build(self.min_count, tokens, self.merges.clone())
            .expect("augmenting keeps the vocabulary consistent");
        out.replacement = self.replacement.clone();
        out
    }

    /// Serialized vocabulary file contents.
    pub fn to_text(&self) -> String {
        let mut out = format!("{HEADER} {}\n", self.min_count);
        for t in &self.tokens {
            let _ = writeln!(out, "{}\t{}\t{}", escape(&t.surface), t.frequency, t.kind.as_str());
        }
        out.push_str("---\n");
        for (l, r) in &self.merges {
            let _ = writeln!(out, "{}\t{}", escape(l), escape(r));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Empty("vocabulary file"))?;
        let min_count = header
            .strip_prefix(HEADER)
            .map(str::trim)
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("expected `{HEADER} <min_count>`"),
            })?;
        let mut tokens = Vec::new();
        let mut merges = Vec::new();
        let mut in_merges = false;
        for (no, line) in lines {
            let line_no = no + 1;
            if line == "---" && !in_merges {
                in_merges = true;
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |message: &str| Error::Parse {
                line: line_no,
                message: message.to_owned(),
            };
            if in_merges {
                if fields.len() != 2 {
                    return Err(bad("merge lines need two tab-separated tokens"));
                }
                merges.push((unescape(fields[0]), unescape(fields[1])));
            } else {
                if fields.len() != 3 {
                    return Err(bad("token lines need surface, frequency and kind"));
                }
                let frequency = fields[1].parse().map_err(|_| bad("bad frequency"))?;
                let kind = match fields[2] {
                    "learned" => TokenKind::Learned,
                    "augmented" => TokenKind::Augmented,
                    "special" => TokenKind::Special,
                    _ => return Err(bad("unknown token kind")),
                };
                tokens.push(Token {
                    surface: unescape(fields[0]),
                    frequency,
                    kind,
                });
            }
        }
        let specials: Vec<&str> = tokens
            .iter()
            .filter(|t| t.kind == TokenKind::Special)
            .map(|t| t.surface.as_str())
            .collect();
        if specials != [UNK, BOS, EOS, PAD]
            || tokens[tokens.len() - 4..].iter().any(|t| t.kind != TokenKind::Special)
        {
            return Err(Error::Format("special tokens must close the token list in order".into()));
        }
        Self::build(min_count, tokens, merges)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let text = crate::grapheme::normalize(&bytes)?;
        Self::from_text(&text)
    }

    /// 64-bit FNV-1a of the serialized file.
    pub fn fingerprint(&self) -> u64 {
        fnv1a64(self.to_text().as_bytes())
    }

    /// Encodes to pieces, keeping the original text of UNK pieces.
    pub fn encode_pieces(&self, text: &GraphemeString) -> Vec<Piece> {
        let mut out = Vec::with_capacity(text.len());
        let mut word: Vec<(Option<TokenId>, String)> = Vec::new();
        for (i, surface) in text.surfaces().enumerate() {
            if text.is_whitespace(i) {
                self.flush_word(&mut word, &mut out);
                out.push(self.piece_for(surface));
            } else {
                word.push((self.id_of(surface), surface.to_owned()));
            }
        }
        self.flush_word(&mut word, &mut out);
        out
    }

    fn piece_for(&self, surface: &str) -> Piece {
        Piece {
            id: self.id_of(surface).unwrap_or(self.unk),
            surface: surface.to_owned(),
        }
    }

    fn flush_word(&self, word: &mut Vec<(Option<TokenId>, String)>, out: &mut Vec<Piece>) {
        loop {
            let mut best: Option<(usize, TokenId, TokenId, TokenId)> = None;
            for pair in word.windows(2) {
                if let (Some(l), Some(r)) = (pair[0].0, pair[1].0) {
                    if let Some(&(rank, merged)) = self.merge_table.get(&(l, r)) {
                        if best.is_none_or(|b| rank < b.0) {
                            best = Some((rank, l, r, merged));
                        }
                    }
                }
            }
            let Some((_, l, r, merged)) = best else { break };
            let mut next = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && word[i].0 == Some(l) && word[i + 1].0 == Some(r) {
                    let surface = format!("{}{}", word[i].1, word[i + 1].1);
                    next.push((Some(merged), surface));
                    i += 2;
                } else {
                    next.push(std::mem::take(&mut word[i]));
                    i += 1;
                }
            }
            *word = next;
        }
        for (id, surface) in word.drain(..) {
            out.push(Piece {
                id: id.unwrap_or(self.unk),
                surface,
            });
        }
    }

    pub fn encode(&self, text: &GraphemeString) -> Vec<TokenId> {
        self.encode_pieces(text).into_iter().map(|p| p.id).collect()
    }

    /// Concatenates token surfaces; specials other than UNK render as empty.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let token = self.token(id).ok_or(Error::TokenOutOfRange {
                id,
                size: self.len(),
            })?;
            if id == self.unk {
                out.push_str(&self.replacement);
            } else if token.kind != TokenKind::Special {
                out.push_str(&token.surface);
            }
        }
        Ok(out)
    }
}

/// Learns merges from a segmented corpus.
pub fn learn(corpus: &[GraphemeString], min_count: u64, max_token_len: usize) -> Result<BpeVocabulary> {
    if corpus.is_empty() {
        return Err(Error::Empty("bpe corpus"));
    }
    if min_count == 0 || max_token_len == 0 {
        return Err(Error::InvalidArgument("min_count and max_token_len must be positive".into()));
    }

    let mut word_counts: BTreeMap<Vec<&str>, u64> = BTreeMap::new();
    let mut seed_counts: BTreeMap<&str, u64> = BTreeMap::new();
    for line in corpus {
        let mut word = Vec::new();
        for (i, s) in line.surfaces().enumerate() {
            *seed_counts.entry(s).or_default() += 1;
            if line.is_whitespace(i) {
                if !word.is_empty() {
                    *word_counts.entry(std::mem::take(&mut word)).or_default() += 1;
                }
            } else {
                word.push(s);
            }
        }
        if !word.is_empty() {
            *word_counts.entry(word).or_default() += 1;
        }
    }

    let mut names: Vec<String> = Vec::new();
    let mut lens: Vec<usize> = Vec::new();
    let mut ids: HashMap<String, u32> = HashMap::new();
    let mut tokens = Vec::new();
    for (&s, &count) in &seed_counts {
        ids.insert(s.to_owned(), names.len() as u32);
        names.push(s.to_owned());
        lens.push(1);
        tokens.push(Token {
            surface: s.to_owned(),
            frequency: count,
            kind: TokenKind::Learned,
        });
    }
    let mut words: Vec<(Vec<u32>, u64)> = word_counts
        .into_iter()
        .map(|(w, c)| (w.iter().map(|s| ids[*s]).collect(), c))
        .collect();

    let mut merges = Vec::new();
    loop {
        let mut pairs: HashMap<(u32, u32), u64> = HashMap::new();
        for (w, c) in &words {
            for p in w.windows(2) {
                *pairs.entry((p[0], p[1])).or_default() += c;
            }
        }
        let best = pairs
            .into_iter()
            .filter(|&((a, b), c)| c >= min_count && lens[a as usize] + lens[b as usize] <= max_token_len)
            .min_by(|&((a1, b1), c1), &((a2, b2), c2)| {
                c2.cmp(&c1)
                    .then_with(|| names[a1 as usize].cmp(&names[a2 as usize]))
                    .then_with(|| names[b1 as usize].cmp(&names[b2 as usize]))
            });
        let Some(((a, b), count)) = best else { break };

        let surface = format!("{}{}", names[a as usize], names[b as usize]);
        let merged = match ids.get(&surface) {
            Some(&id) => id,
            None => {
                let id = names.len() as u32;
                ids.insert(surface.clone(), id);
                names.push(surface.clone());
                lens.push(lens[a as usize] + lens[b as usize]);
                tokens.push(Token {
                    surface,
                    frequency: count,
                    kind: TokenKind::Learned,
                });
                id
            }
        };
        merges.push((names[a as usize].clone(), names[b as usize].clone()));

        for (w, _) in &mut words {
            if w.len() < 2 {
                continue;
            }
            let mut out = Vec::with_capacity(w.len());
            let mut i = 0;
            while i < w.len() {
                if i + 1 < w.len() && w[i] == a && w[i + 1] == b {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(w[i]);
                    i += 1;
                }
            }
            *w = out;
        }
    }
    BpeVocabulary::build(min_count, tokens, merges)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}
