//! Encoder-decoder with attention and the copy/generate output layer.

use rand::Rng;

use super::output::{output_distribution, OutputDistribution};
use crate::bpe::{BpeVocabulary, Piece, TokenId};
use crate::error::{Error, Result};
use crate::nnet::lstm::{LstmState, StackTrace};
use crate::nnet::ops::{add_outer, axpy, dot, matvec, matvec_add, matvec_t_add};
use crate::nnet::{Attention, AttentionStep, LstmStack, ParamSet, Tensor, INIT_SCALE};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub residual: bool,
    /// Disabling copying yields the plain encoder-decoder baseline.
    pub copy: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 128,
            hidden: 128,
            layers: 3,
            residual: true,
            copy: true,
        }
    }
}

/// Special token ids, fixed by the vocabulary layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Specials {
    pub unk: TokenId,
    pub bos: TokenId,
    pub eos: TokenId,
    pub pad: TokenId,
}

impl Specials {
    pub fn of(vocab: &BpeVocabulary) -> Self {
        Self {
            unk: vocab.unk(),
            bos: vocab.bos(),
            eos: vocab.eos(),
            pad: vocab.pad(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CopyNet {
    pub config: ModelConfig,
    pub specials: Specials,
    /// One table for source and target tokens, `[V, d_e]`.
    pub embedding: Tensor,
    pub encoder: LstmStack,
    pub decoder: LstmStack,
    pub attention: Attention,
    /// Generate projection, `[V, d_s]`.
    pub w_o: Tensor,
    /// Copy projection, `[d_h, d_s]`.
    pub w_c: Tensor,
}

/// A source line mapped to ids, with extended ids for pieces the
/// vocabulary cannot represent.
#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    /// Extended id per position (`>= V` for out-of-vocabulary pieces).
    pub ids: Vec<TokenId>,
    /// Surface per extended id, indexed by `id - V`.
    pub oov: Vec<String>,
}

impl Source {
    pub fn from_pieces(pieces: &[Piece], vocab_size: usize, unk: TokenId) -> Self {
        let mut oov: Vec<String> = Vec::new();
        let ids = pieces
            .iter()
            .map(|p| {
                if p.id != unk {
                    return p.id;
                }
                let k = oov.iter().position(|s| *s == p.surface).unwrap_or_else(|| {
                    oov.push(p.surface.clone());
                    oov.len() - 1
                });
                (vocab_size + k) as TokenId
            })
            .collect();
        Self { ids, oov }
    }

    /// Maps target pieces into the same id space; UNK pieces seen in the
    /// source become copyable extended ids.
    pub fn target_ids(&self, pieces: &[Piece], vocab_size: usize, unk: TokenId) -> Vec<TokenId> {
        pieces
            .iter()
            .map(|p| match (p.id == unk, self.oov.iter().position(|s| *s == p.surface)) {
                (true, Some(k)) => (vocab_size + k) as TokenId,
                _ => p.id,
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Encoder outputs reused at every decoder step.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// `[N + 1, d_h]`, the last row belongs to the appended EOS.
    pub states: Vec<f64>,
    /// `tanh(W_cᵀ h_j)` for each real source position, `[N, d_s]`.
    pub copy_keys: Vec<f64>,
    pub final_states: Vec<LstmState>,
    trace: Option<StackTrace>,
}

/// Per-step decoder values kept for backpropagation.
struct StepCache {
    att: AttentionStep,
    dist: OutputDistribution,
}

impl CopyNet {
    pub fn new(config: ModelConfig, vocab: &BpeVocabulary) -> Result<Self> {
        Self::with_sizes(config, vocab.len(), Specials::of(vocab))
    }

    /// Zero model for a vocabulary of `v` ids.
    pub fn with_sizes(config: ModelConfig, v: usize, specials: Specials) -> Result<Self> {
        let (e, h) = (config.embed_dim, config.hidden);
        if e == 0 || h == 0 || config.layers == 0 {
            return Err(Error::InvalidArgument("model sizes must be positive".into()));
        }
        for id in [specials.unk, specials.bos, specials.eos, specials.pad] {
            if id as usize >= v {
                return Err(Error::TokenOutOfRange { id, size: v });
            }
        }
        Ok(Self {
            config,
            specials,
            embedding: Tensor::zeros(&[v, e]),
            encoder: LstmStack::zeros(e, h, config.layers, config.residual)?,
            decoder: LstmStack::zeros(e, h, config.layers, config.residual)?,
            attention: Attention::zeros(h, h, h),
            w_o: Tensor::zeros(&[v, h]),
            w_c: Tensor::zeros(&[h, h]),
        })
    }

    /// Uniform initialisation of every parameter.
    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R, scale: f64) {
        self.visit_mut(&mut |_, t| *t = Tensor::uniform(t.shape(), scale, rng));
    }

    pub fn initialized<R: Rng + ?Sized>(config: ModelConfig, vocab: &BpeVocabulary, rng: &mut R) -> Result<Self> {
        let mut m = Self::new(config, vocab)?;
        m.init(rng, INIT_SCALE);
        Ok(m)
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn state_size(&self) -> usize {
        self.attention.state_size()
    }

    /// Gradient buffer with the same layout.
    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.zero();
        g
    }

    fn embed_id(&self, id: TokenId) -> TokenId {
        if (id as usize) < self.vocab_size() {
            id
        } else {
            self.specials.unk
        }
    }

    fn embed_seq(&self, ids: impl Iterator<Item = TokenId>) -> Vec<f64> {
        let mut out = Vec::new();
        for id in ids {
            out.extend_from_slice(self.embedding.row(self.embed_id(id) as usize));
        }
        out
    }

    /// Target at step `t`: EOS after the last token; without copying,
    /// tokens outside the vocabulary can only be produced as UNK.
    fn target_at(&self, target: &[TokenId], t: usize) -> TokenId {
        match target.get(t) {
            None => self.specials.eos,
            Some(&y) if !self.config.copy => self.embed_id(y),
            Some(&y) => y,
        }
    }

    fn check_ids(&self, source: &Source) -> Result<()> {
        let limit = self.vocab_size() + source.oov.len();
        match source.ids.iter().find(|&&i| i as usize >= limit) {
            Some(&id) => Err(Error::TokenOutOfRange { id, size: limit }),
            None => Ok(()),
        }
    }

    /// `ψ_g = W_o s`, with BOS and PAD masked out.
    pub fn score_generate(&self, state: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.w_o.cols() {
            return Err(Error::Shape {
                context: "generate scores",
                expected: vec![self.w_o.cols()],
                actual: vec![state.len()],
            });
        }
        let mut g = vec![0.0; self.vocab_size()];
        matvec(self.w_o.data(), state.len(), state, &mut g);
        g[self.specials.bos as usize] = f64::NEG_INFINITY;
        g[self.specials.pad as usize] = f64::NEG_INFINITY;
        Ok(g)
    }

    /// `ψ_c(x_j) = tanh(W_cᵀ h_j) · s` per source position.
    pub fn score_copy(&self, state: &[f64], enc: &Encoded) -> Result<Vec<f64>> {
        let ds = self.w_c.cols();
        if state.len() != ds {
            return Err(Error::Shape {
                context: "copy scores",
                expected: vec![ds],
                actual: vec![state.len()],
            });
        }
        Ok(enc
            .copy_keys
            .chunks_exact(ds)
            .map(|k| if self.config.copy { dot(k, state) } else { f64::NEG_INFINITY })
            .collect())
    }

    pub fn encode(&self, source: &Source) -> Result<Encoded> {
        self.encode_impl(source, false)
    }

    fn encode_impl(&self, source: &Source, keep_trace: bool) -> Result<Encoded> {
        self.check_ids(source)?;
        let n = source.len();
        let xs = self.embed_seq(source.ids.iter().copied().chain([self.specials.eos]));
        let tr = self.encoder.forward(&xs, n + 1, None)?;
        let h = self.config.hidden;
        let ds = self.w_c.cols();
        let states = tr.top().to_vec();
        let mut copy_keys = vec![0.0; n * ds];
        for j in 0..n {
            let key = &mut copy_keys[j * ds..(j + 1) * ds];
            matvec_t_add(self.w_c.data(), &states[j * h..(j + 1) * h], key);
            key.iter_mut().for_each(|k| *k = k.tanh());
        }
        Ok(Encoded {
            states,
            copy_keys,
            final_states: tr.final_states(),
            trace: keep_trace.then_some(tr),
        })
    }

    /// Output distribution after feeding `prev` with decoder `states`.
    pub fn decode_step(&self, enc: &Encoded, source: &Source, prev: TokenId, states: &mut [LstmState]) -> Result<OutputDistribution> {
        let x = self.embedding.row(self.embed_id(prev) as usize).to_vec();
        let q = self.decoder.step(&x, states);
        let att = self.attention.forward(&q, &enc.states)?;
        let g = self.score_generate(&att.state)?;
        let c = self.score_copy(&att.state, enc)?;
        Ok(output_distribution(&g, &c, &source.ids, self.specials.unk))
    }

    /// Summed weighted negative log-likelihood of `target` (EOS appended
    /// here) under teacher forcing.
    pub fn loss(&self, source: &Source, target: &[TokenId], weights: Option<&[f64]>) -> Result<f64> {
        self.loss_impl(source, target, weights, None)
    }

    /// As [`loss`](Self::loss), accumulating `scale`·gradients into `grad`.
    pub fn loss_and_grad(
        &self,
        source: &Source,
        target: &[TokenId],
        weights: Option<&[f64]>,
        scale: f64,
        grad: &mut CopyNet,
    ) -> Result<f64> {
        self.loss_impl(source, target, weights, Some((scale, grad)))
    }

    fn loss_impl(
        &self,
        source: &Source,
        target: &[TokenId],
        weights: Option<&[f64]>,
        mut grad: Option<(f64, &mut CopyNet)>,
    ) -> Result<f64> {
        let backward = grad.is_some();
        let enc = self.encode_impl(source, backward)?;
        let h = self.config.hidden;
        let ds = self.state_size();
        let n = source.len();
        let t_len = target.len() + 1;
        let inputs = std::iter::once(self.specials.bos).chain(target.iter().copied());
        let xs = self.embed_seq(inputs.clone());
        let dec = self.decoder.forward(&xs, t_len, Some(&enc.final_states))?;
        let q_all = dec.top();

        let mut total = 0.0;
        let mut caches = Vec::with_capacity(if backward { t_len } else { 0 });
        for t in 0..t_len {
            let y = self.target_at(target, t);
            let q = &q_all[t * h..(t + 1) * h];
            let att = self.attention.forward(q, &enc.states)?;
            let g = self.score_generate(&att.state)?;
            let c = self.score_copy(&att.state, &enc)?;
            let dist = output_distribution(&g, &c, &source.ids, self.specials.unk);
            let w = weight_of(weights, y);
            let p = dist.prob(y);
            total -= w * p.ln();
            if backward {
                caches.push(StepCache { att, dist });
            }
        }
        if !total.is_finite() {
            return Err(Error::NonFinite("sequence loss".into()));
        }
        let Some((scale, grad)) = grad.as_mut() else {
            return Ok(total);
        };

        let v = self.vocab_size();
        let mut dq_all = vec![0.0; t_len * h];
        let mut d_states = vec![0.0; enc.states.len()];
        let mut d_keys = vec![0.0; n * ds];
        let mut dg = vec![0.0; v];
        let mut dc = vec![0.0; n];
        for (t, cache) in caches.iter().enumerate() {
            let y = self.target_at(target, t);
            let w = weight_of(weights, y) * *scale;
            cache.dist.nll_and_grad(y, w, &mut dg, &mut dc);
            let s = &cache.att.state;
            let mut d_s = vec![0.0; ds];
            add_outer(grad.w_o.data_mut(), &dg, s);
            matvec_t_add(self.w_o.data(), &dg, &mut d_s);
            if self.config.copy {
                for j in 0..n {
                    if dc[j] != 0.0 {
                        axpy(dc[j], s, &mut d_keys[j * ds..(j + 1) * ds]);
                        axpy(dc[j], &enc.copy_keys[j * ds..(j + 1) * ds], &mut d_s);
                    }
                }
            }
            let q = &q_all[t * h..(t + 1) * h];
            let dq = self
                .attention
                .backward(&cache.att, q, &enc.states, &d_s, &mut grad.attention, &mut d_states);
            dq_all[t * h..(t + 1) * h].copy_from_slice(&dq);
        }
        // copy keys: k_j = tanh(W_cᵀ h_j)
        for j in 0..n {
            let k = &enc.copy_keys[j * ds..(j + 1) * ds];
            let dpre: Vec<f64> = d_keys[j * ds..(j + 1) * ds]
                .iter()
                .zip(k)
                .map(|(d, k)| d * (1.0 - k * k))
                .collect();
            let hj = &enc.states[j * h..(j + 1) * h];
            add_outer(grad.w_c.data_mut(), hj, &dpre);
            matvec_add(self.w_c.data(), ds, &dpre, &mut d_states[j * h..(j + 1) * h]);
        }
        let (dx_dec, d_init) = self.decoder.backward(&dec, &dq_all, None, &mut grad.decoder);
        let enc_trace = enc.trace.as_ref().expect("trace kept for backward");
        let (dx_enc, _) = self.encoder.backward(enc_trace, &d_states, Some(&d_init), &mut grad.encoder);

        let e = self.config.embed_dim;
        let src_ids = source.ids.iter().copied().chain([self.specials.eos]);
        for (id, dx) in src_ids.zip(dx_enc.chunks_exact(e)) {
            axpy(1.0, dx, grad.embedding.row_mut(self.embed_id(id) as usize));
        }
        for (id, dx) in inputs.zip(dx_dec.chunks_exact(e)) {
            axpy(1.0, dx, grad.embedding.row_mut(self.embed_id(id) as usize));
        }
        Ok(total)
    }
}

fn weight_of(weights: Option<&[f64]>, id: TokenId) -> f64 {
    weights.and_then(|w| w.get(id as usize)).copied().unwrap_or(1.0)
}

impl ParamSet for CopyNet {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("embedding", &self.embedding);
        self.encoder.visit(&mut |n, t| f(&format!("encoder.{n}"), t));
        self.decoder.visit(&mut |n, t| f(&format!("decoder.{n}"), t));
        self.attention.visit(&mut |n, t| f(&format!("attention.{n}"), t));
        f("w_o", &self.w_o);
        f("w_c", &self.w_c);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("embedding", &mut self.embedding);
        self.encoder.visit_mut(&mut |n, t| f(&format!("encoder.{n}"), t));
        self.decoder.visit_mut(&mut |n, t| f(&format!("decoder.{n}"), t));
        self.attention.visit_mut(&mut |n, t| f(&format!("attention.{n}"), t));
        f("w_o", &mut self.w_o);
        f("w_c", &mut self.w_c);
    }
}
