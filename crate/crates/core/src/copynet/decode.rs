//! Greedy and beam-search correction of whole lines.

use std::sync::Arc;

use rayon::prelude::*;

use super::model::{CopyNet, Encoded, Source};
use super::output::OutputDistribution;
use crate::bpe::{BpeVocabulary, TokenId};
use crate::error::{Error, Result};
use crate::grapheme::{segment_normalized, Alphabet, GraphemeString};
use crate::nnet::LstmState;

/// One emitted token with the mixture components of its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedToken {
    pub id: TokenId,
    pub surface: String,
    pub prob: f64,
    pub gen_mass: f64,
    pub copy_mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<DecodedToken>,
    pub log_prob: f64,
}

impl Decoded {
    pub fn text(&self) -> String {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }
}

/// A trained model bound to the vocabulary and alphabet it was trained with.
#[derive(Debug, Clone)]
pub struct Corrector {
    pub model: CopyNet,
    pub vocab: BpeVocabulary,
    pub alphabet: Arc<Alphabet>,
}

#[derive(Clone)]
struct Hypothesis {
    tokens: Vec<DecodedToken>,
    log_prob: f64,
    states: Vec<LstmState>,
    done: bool,
}

impl Corrector {
    pub fn new(model: CopyNet, vocab: BpeVocabulary, alphabet: Arc<Alphabet>) -> Result<Self> {
        if model.vocab_size() != vocab.len() {
            return Err(Error::Shape {
                context: "model vocabulary",
                expected: vec![vocab.len()],
                actual: vec![model.vocab_size()],
            });
        }
        Ok(Self { model, vocab, alphabet })
    }

    pub fn source(&self, line: &GraphemeString) -> Source {
        let pieces = self.vocab.encode_pieces(line);
        Source::from_pieces(&pieces, self.vocab.len(), self.vocab.unk())
    }

    pub fn segment(&self, line: &str) -> GraphemeString {
        segment_normalized(line, &self.alphabet)
    }

    fn surface(&self, source: &Source, id: TokenId) -> String {
        let v = self.vocab.len();
        if (id as usize) < v {
            self.vocab.decode(&[id]).unwrap_or_default()
        } else {
            source.oov.get(id as usize - v).cloned().unwrap_or_default()
        }
    }

    /// Decodes until EOS or `2·N + 10` tokens, keeping `beam_width`
    /// hypotheses (1 is greedy).
    pub fn decode(&self, source: &Source, beam_width: usize) -> Result<Decoded> {
        let m = &self.model;
        let enc = m.encode(source)?;
        let max_len = 2 * source.len() + 10;
        let width = beam_width.max(1);
        let mut beam = vec![Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            states: enc.final_states.clone(),
            done: false,
        }];
        for _ in 0..max_len {
            if beam.iter().all(|h| h.done) {
                break;
            }
            let mut next: Vec<Hypothesis> = Vec::new();
            for hyp in &beam {
                if hyp.done {
                    next.push(hyp.clone());
                    continue;
                }
                let prev = hyp.tokens.last().map_or(m.specials.bos, |t| t.id);
                let mut states = hyp.states.clone();
                let dist = m.decode_step(&enc, source, prev, &mut states)?;
                for (id, p) in top_k(&dist, width) {
                    let mut h = Hypothesis {
                        tokens: hyp.tokens.clone(),
                        log_prob: hyp.log_prob + p.ln(),
                        states: states.clone(),
                        done: id == m.specials.eos,
                    };
                    if !h.done {
                        h.tokens.push(DecodedToken {
                            id,
                            surface: self.surface(source, id),
                            prob: p,
                            gen_mass: dist.gen_mass(id),
                            copy_mass: dist.copy_mass(id),
                        });
                    }
                    next.push(h);
                }
            }
            // stable: equal scores keep generation order
            next.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob));
            next.truncate(width);
            beam = next;
        }
        // the beam is kept sorted, best first
        let best = beam.into_iter().next().expect("beam is never empty");
        Ok(Decoded {
            tokens: best.tokens,
            log_prob: best.log_prob,
        })
    }

    pub fn correct(&self, line: &str, beam_width: usize) -> Result<String> {
        let g = self.segment(line);
        Ok(self.decode(&self.source(&g), beam_width)?.text())
    }

    /// Corrects lines in parallel; output order follows input order.
    pub fn correct_all(&self, lines: &[String], beam_width: usize) -> Result<Vec<String>> {
        lines.par_iter().map(|l| self.correct(l, beam_width)).collect()
    }

    /// Encoder outputs for external inspection.
    pub fn encode(&self, source: &Source) -> Result<Encoded> {
        self.model.encode(source)
    }
}

fn top_k(dist: &OutputDistribution, k: usize) -> Vec<(TokenId, f64)> {
    let mut probs: Vec<(TokenId, f64)> = dist.probs().into_iter().filter(|p| p.1 > 0.0).collect();
    probs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    probs.truncate(k);
    probs
}
