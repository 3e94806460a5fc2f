//! Binary checkpoint container.
//!
//! Layout (little endian): magic `POCF`, `u32` format version, `u32` header
//! length and the header as UTF-8 `key=value` lines, `u32` tensor count,
//! then per tensor a `u32` name length, the name, a `u32` rank, `u64`
//! dimensions and the `f64` values.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{CopyNet, ModelConfig, Specials};
use crate::bpe::BpeVocabulary;
use crate::error::{Error, Result};
use crate::nnet::{ParamSet, Tensor};

pub const MAGIC: &[u8; 4] = b"POCF";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub model: CopyNet,
    pub vocab_fingerprint: u64,
    /// Free-form metadata such as training settings.
    pub meta: BTreeMap<String, String>,
}

impl ModelCheckpoint {
    pub fn new(model: CopyNet, vocab: &BpeVocabulary) -> Self {
        Self {
            model,
            vocab_fingerprint: vocab.fingerprint(),
            meta: BTreeMap::new(),
        }
    }

    fn header(&self) -> String {
        let m = &self.model;
        let c = &m.config;
        let mut kv: BTreeMap<String, String> = self.meta.clone();
        for (k, v) in [
            ("embed_dim", c.embed_dim.to_string()),
            ("hidden", c.hidden.to_string()),
            ("layers", c.layers.to_string()),
            ("residual", c.residual.to_string()),
            ("copy", c.copy.to_string()),
            ("vocab_size", m.vocab_size().to_string()),
            ("unk", m.specials.unk.to_string()),
            ("bos", m.specials.bos.to_string()),
            ("eos", m.specials.eos.to_string()),
            ("pad", m.specials.pad.to_string()),
            ("vocab_fingerprint", format!("{:016x}", self.vocab_fingerprint)),
        ] {
            kv.insert(k.into(), v);
        }
        kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        if !self.model.all_finite() {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        for (k, v) in &self.meta {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Format(format!("metadata entry {k:?} cannot be stored")));
            }
        }
        let header = self.header();
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(header.as_bytes())?;
        let mut tensors: Vec<(String, Tensor)> = Vec::new();
        self.model.visit(&mut |n, t| tensors.push((n.to_owned(), t.clone())));
        w.write_all(&(tensors.len() as u32).to_le_bytes())?;
        for (name, t) in tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for d in t.shape() {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let hlen = read_u32(&mut r)? as usize;
        let mut hbytes = vec![0u8; hlen];
        r.read_exact(&mut hbytes)?;
        let header = String::from_utf8(hbytes).map_err(|_| Error::Format("header is not UTF-8".into()))?;
        let mut kv = BTreeMap::new();
        for line in header.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad header line {line:?}")))?;
            kv.insert(k.to_owned(), v.to_owned());
        }
        let config = ModelConfig {
            embed_dim: take(&mut kv, "embed_dim")?,
            hidden: take(&mut kv, "hidden")?,
            layers: take(&mut kv, "layers")?,
            residual: take(&mut kv, "residual")?,
            copy: take(&mut kv, "copy")?,
        };
        let vocab_size: usize = take(&mut kv, "vocab_size")?;
        let specials = Specials {
            unk: take(&mut kv, "unk")?,
            bos: take(&mut kv, "bos")?,
            eos: take(&mut kv, "eos")?,
            pad: take(&mut kv, "pad")?,
        };
        let fp: String = take(&mut kv, "vocab_fingerprint")?;
        let vocab_fingerprint =
            u64::from_str_radix(&fp, 16).map_err(|_| Error::Format(format!("bad fingerprint {fp:?}")))?;
        let mut model = CopyNet::with_sizes(config, vocab_size, specials)?;

        let count = read_u32(&mut r)? as usize;
        let mut stored: BTreeMap<String, Tensor> = BTreeMap::new();
        for _ in 0..count {
            let nlen = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; nlen];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            stored.insert(name, Tensor::from_vec(&shape, data)?);
        }
        let mut err = None;
        model.visit_mut(&mut |name, t| {
            if err.is_some() {
                return;
            }
            match stored.remove(name) {
                Some(s) if s.shape() == t.shape() => *t = s,
                Some(s) => {
                    err = Some(Error::Shape {
                        context: "checkpoint tensor",
                        expected: t.shape().to_vec(),
                        actual: s.shape().to_vec(),
                    })
                }
                None => err = Some(Error::Format(format!("checkpoint lacks tensor {name}"))),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if let Some(extra) = stored.keys().next() {
            return Err(Error::Format(format!("unexpected tensor {extra}")));
        }
        if !model.all_finite() {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        Ok(Self {
            model,
            vocab_fingerprint,
            meta: kv,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Fails unless the checkpoint was trained with `vocab`.
    pub fn verify_vocab(&self, vocab: &BpeVocabulary) -> Result<()> {
        let actual = vocab.fingerprint();
        if actual != self.vocab_fingerprint {
            return Err(Error::Fingerprint {
                expected: self.vocab_fingerprint,
                actual,
            });
        }
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn take<T: std::str::FromStr>(kv: &mut BTreeMap<String, String>, key: &str) -> Result<T> {
    let v = kv
        .remove(key)
        .ok_or_else(|| Error::Format(format!("checkpoint header lacks {key}")))?;
    v.parse()
        .map_err(|_| Error::Format(format!("bad value {v:?} for {key}")))
}
