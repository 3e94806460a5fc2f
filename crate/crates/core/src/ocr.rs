//! OCR access: an external engine driven by a command template, and an
//! offline channel that corrupts gold text through a grapheme confusion
//! matrix.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::align::{ConfusionMatrix, EPS};
use crate::distort::{BitmapReader, GrayImage};
use crate::error::{Error, Result};
use crate::grapheme::{segment_normalized, Alphabet, GraphemeClass};

const PLACEHOLDER: &str = "{input}";

/// An external OCR command such as `engine {input} -`, run once per image.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalCommand {
    template: String,
    argv: Vec<String>,
    /// Maximum concurrent invocations.
    pub jobs: usize,
}

impl ExternalCommand {
    pub fn new(template: &str, jobs: usize) -> Result<Self> {
        let n = template.matches(PLACEHOLDER).count();
        if n != 1 {
            return Err(Error::InvalidArgument(format!(
                "ocr command template must contain {PLACEHOLDER} exactly once, found {n}"
            )));
        }
        let argv = shlex::split(template)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| Error::InvalidArgument(format!("cannot split command template {template:?}")))?;
        Ok(Self {
            template: template.to_owned(),
            argv,
            jobs: jobs.max(1),
        })
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    /// Runs the command on one image; stdout minus one trailing newline.
    pub fn run_one(&self, input: &Path) -> Result<String> {
        let path = input.to_string_lossy();
        let args: Vec<String> = self.argv.iter().map(|a| a.replace(PLACEHOLDER, &path)).collect();
        let out = Command::new(&args[0])
            .args(&args[1..])
            .output()
            .map_err(|e| Error::Ocr(format!("{}: {e}", args[0])))?;
        if !out.status.success() {
            let stderr = String::from_utf8_lossy(&out.stderr);
            return Err(Error::Ocr(format!("{} exited with {}: {}", args[0], out.status, stderr.trim())));
        }
        let mut text = String::from_utf8(out.stdout)
            .map_err(|e| Error::Ocr(format!("output is not UTF-8 at byte {}", e.utf8_error().valid_up_to())))?;
        if text.ends_with('\n') {
            text.pop();
            if text.ends_with('\r') {
                text.pop();
            }
        }
        Ok(text)
    }

    /// Runs every input under a pool of `jobs` workers. Failures are
    /// reported per line; output order follows input order.
    pub fn run(&self, inputs: &[PathBuf]) -> Vec<Result<String>> {
        match rayon::ThreadPoolBuilder::new().num_threads(self.jobs).build() {
            Ok(pool) => pool.install(|| inputs.par_iter().map(|p| self.run_one(p)).collect()),
            Err(_) => inputs.iter().map(|p| self.run_one(p)).collect(),
        }
    }
}

/// Mock OCR that corrupts text grapheme by grapheme.
///
/// Each alphabet grapheme is deleted with `del_rate`, otherwise replaced by
/// a draw from its confusion row (identity when it has none). After every
/// grapheme a uniformly drawn alphabet grapheme is inserted with
/// `ins_rate`. Other segments (spaces, punctuation) pass through.
#[derive(Debug, Clone)]
pub struct ChannelOcr {
    alphabet: Arc<Alphabet>,
    rows: BTreeMap<String, (Vec<String>, WeightedIndex<f64>)>,
    pub ins_rate: f64,
    pub del_rate: f64,
    pub seed: u64,
}

impl ChannelOcr {
    /// Rows of `confusion` must each sum to one; an `EPS` column is
    /// deletion mass. Empty rows are ignored.
    pub fn new(alphabet: Arc<Alphabet>, confusion: &ConfusionMatrix, ins_rate: f64, del_rate: f64, seed: u64) -> Result<Self> {
        for (name, r) in [("ins_rate", ins_rate), ("del_rate", del_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidArgument(format!("{name} {r} outside [0, 1]")));
            }
        }
        let labels = confusion.labels().to_vec();
        let mut rows = BTreeMap::new();
        for label in &labels {
            let row = confusion.row(label).expect("label from matrix");
            let sum: f64 = row.iter().sum();
            if sum == 0.0 {
                continue;
            }
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|p| *p < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "confusion row {label:?} sums to {sum}, expected 1"
                )));
            }
            let outs: Vec<(String, f64)> = labels
                .iter()
                .cloned()
                .zip(row.iter().copied())
                .filter(|(_, p)| *p > 0.0)
                .collect();
            let dist = WeightedIndex::new(outs.iter().map(|o| o.1))
                .map_err(|e| Error::InvalidArgument(format!("confusion row {label:?}: {e}")))?;
            rows.insert(label.clone(), (outs.into_iter().map(|o| o.0).collect(), dist));
        }
        Ok(Self {
            alphabet,
            rows,
            ins_rate,
            del_rate,
            seed,
        })
    }

    /// Channel that returns its input unchanged.
    pub fn identity(alphabet: Arc<Alphabet>) -> Self {
        Self {
            alphabet,
            rows: BTreeMap::new(),
            ins_rate: 0.0,
            del_rate: 0.0,
            seed: 0,
        }
    }

    /// The bundled profile: diacritics stripped to their base letters and
    /// `ñ` read as `i`, each with probability one.
    pub fn default_profile(alphabet: Arc<Alphabet>) -> Result<Self> {
        ChannelProfile::parse(DEFAULT_PROFILE)?.into_channel(alphabet)
    }

    pub fn alphabet(&self) -> &Arc<Alphabet> {
        &self.alphabet
    }

    fn line_rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    /// Corrupts line `index`; the result depends only on the seed, the
    /// index and the text.
    pub fn corrupt(&self, text: &str, index: u64) -> String {
        let g = segment_normalized(text, &self.alphabet);
        let mut rng = self.line_rng(index);
        let mut out = String::with_capacity(text.len());
        for (i, seg) in g.segments().iter().enumerate() {
            let surface = g.surface(i);
            let GraphemeClass::Known(id) = seg.class else {
                out.push_str(surface);
                continue;
            };
            if self.del_rate > 0.0 && rng.random_bool(self.del_rate) {
                // deleted
            } else {
                let row = self.rows.get(surface).or_else(|| self.rows.get(self.alphabet.grapheme(id)));
                match row {
                    Some((outs, dist)) => {
                        let o = &outs[dist.sample(&mut rng)];
                        if o != EPS {
                            out.push_str(o);
                        }
                    }
                    None => out.push_str(surface),
                }
            }
            if self.ins_rate > 0.0 && rng.random_bool(self.ins_rate) {
                let k = rng.random_range(0..self.alphabet.len());
                out.push_str(self.alphabet.grapheme(k as u16));
            }
        }
        out
    }

    pub fn run(&self, lines: &[String]) -> Vec<String> {
        lines
            .par_iter()
            .enumerate()
            .map(|(i, l)| self.corrupt(l, i as u64))
            .collect()
    }
}

/// Confusion rows plus channel rates, as stored on disk: `# key = value`
/// lines for `ins_rate`, `del_rate` and `seed`, then the confusion CSV.
#[derive(Debug, Clone)]
pub struct ChannelProfile {
    pub confusion: ConfusionMatrix,
    pub ins_rate: f64,
    pub del_rate: f64,
    pub seed: u64,
}

pub const DEFAULT_PROFILE: &str = include_str!("../data/channel_default.csv");

impl ChannelProfile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        let mut csv = String::new();
        for (no, line) in text.lines().enumerate() {
            if let Some(rest) = line.trim_start().strip_prefix('#') {
                if let Some((k, v)) = rest.split_once('=') {
                    kv.insert(k.trim().to_owned(), (no + 1, v.trim().to_owned()));
                }
            } else if !line.trim().is_empty() {
                csv.push_str(line);
                csv.push('\n');
            }
        }
        let num = |key: &str, default: f64| -> Result<f64> {
            match kv.get(key) {
                None => Ok(default),
                Some((line, v)) => v.parse().map_err(|_| Error::Parse {
                    line: *line,
                    message: format!("bad {key} {v:?}"),
                }),
            }
        };
        let seed = match kv.get("seed") {
            None => 0,
            Some((line, v)) => v.parse().map_err(|_| Error::Parse {
                line: *line,
                message: format!("bad seed {v:?}"),
            })?,
        };
        Ok(Self {
            confusion: ConfusionMatrix::read_csv(csv.as_bytes())?,
            ins_rate: num("ins_rate", 0.0)?,
            del_rate: num("del_rate", 0.0)?,
            seed,
        })
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut text = String::new();
        BufReader::new(reader).read_to_string(&mut text)?;
        Self::parse(&text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(std::fs::File::open(path)?)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# ins_rate = {}", self.ins_rate)?;
        writeln!(w, "# del_rate = {}", self.del_rate)?;
        writeln!(w, "# seed = {}", self.seed)?;
        self.confusion.write_csv(w)
    }

    pub fn into_channel(self, alphabet: Arc<Alphabet>) -> Result<ChannelOcr> {
        ChannelOcr::new(alphabet, &self.confusion, self.ins_rate, self.del_rate, self.seed)
    }
}

/// Either an external engine (inputs are image paths) or the channel mock
/// (inputs are gold lines).
#[derive(Debug, Clone)]
pub enum OcrAdapter {
    External(ExternalCommand),
    Channel(ChannelOcr),
}

impl OcrAdapter {
    /// Runs over `inputs`: image paths for an external engine, gold text
    /// for a channel. Per-line failures do not stop the run.
    pub fn run(&self, inputs: &[String]) -> Vec<Result<String>> {
        match self {
            Self::External(cmd) => {
                let paths: Vec<PathBuf> = inputs.iter().map(PathBuf::from).collect();
                cmd.run(&paths)
            }
            Self::Channel(ch) => ch.run(inputs).into_iter().map(Ok).collect(),
        }
    }
}

/// Text recognition from a line image. `index` identifies the line so
/// stochastic recognisers stay deterministic.
pub trait ImageRecognizer: Sync {
    fn recognize(&self, image: &GrayImage, index: u64) -> Result<String>;
}

impl ImageRecognizer for BitmapReader {
    fn recognize(&self, image: &GrayImage, _index: u64) -> Result<String> {
        Ok(self.read(image))
    }
}

impl ImageRecognizer for ExternalCommand {
    /// Writes the image to a temporary PGM file and runs the command on it.
    fn recognize(&self, image: &GrayImage, _index: u64) -> Result<String> {
        let file = tempfile::Builder::new().suffix(".pgm").tempfile()?;
        std::fs::write(file.path(), image.to_pgm()?)?;
        self.run_one(file.path())
    }
}

impl ImageRecognizer for ChannelOcr {
    /// Reads the built-in bitmap font, then corrupts the text.
    fn recognize(&self, image: &GrayImage, index: u64) -> Result<String> {
        Ok(self.corrupt(&BitmapReader.read(image), index))
    }
}

impl ImageRecognizer for OcrAdapter {
    fn recognize(&self, image: &GrayImage, index: u64) -> Result<String> {
        match self {
            Self::External(c) => c.recognize(image, index),
            Self::Channel(c) => c.recognize(image, index),
        }
    }
}

/// Reads the lines of a text file, dropping carriage returns.
pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        out.push(line?.trim_end_matches('\r').to_owned());
    }
    Ok(out)
}
