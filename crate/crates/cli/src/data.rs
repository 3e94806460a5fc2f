//! Line and TSV files.

use std::path::Path;

use anyhow::{bail, Context};
use postocr::grapheme::normalize;

/// Reads a UTF-8 file as NFC lines without trailing carriage returns.
pub fn read_lines(path: &Path) -> anyhow::Result<Vec<String>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let text = normalize(&bytes).with_context(|| format!("decoding {}", path.display()))?;
    Ok(text.lines().map(|l| l.trim_end_matches('\r').to_owned()).collect())
}

pub fn write_lines(path: &Path, lines: &[String]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = String::with_capacity(lines.iter().map(|l| l.len() + 1).sum());
    for l in lines {
        text.push_str(l);
        text.push('\n');
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// `ocr<TAB>gold` rows. Rows with any other number of fields are errors.
pub fn read_pairs(path: &Path) -> anyhow::Result<Vec<(String, String)>> {
    read_lines(path)?
        .into_iter()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let mut f = l.split('\t');
            match (f.next(), f.next(), f.next()) {
                (Some(a), Some(b), None) => Ok((a.to_owned(), b.to_owned())),
                _ => bail!("{}:{}: expected two tab-separated fields", path.display(), i + 1),
            }
        })
        .collect()
}

pub fn write_pairs(path: &Path, pairs: &[(String, String)]) -> anyhow::Result<()> {
    for (i, (a, b)) in pairs.iter().enumerate() {
        if a.contains(['\t', '\n']) || b.contains(['\t', '\n']) {
            bail!("pair {} contains a tab or newline", i + 1);
        }
    }
    let lines: Vec<String> = pairs.iter().map(|(a, b)| format!("{a}\t{b}")).collect();
    write_lines(path, &lines)
}
