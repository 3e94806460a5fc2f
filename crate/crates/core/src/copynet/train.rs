//! Teacher-forced training with Adam.

use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::decode::Corrector;
use super::model::{CopyNet, ModelConfig, Source};
use crate::bpe::{BpeVocabulary, TokenId};
use crate::error::{Error, Result};
use crate::grapheme::{segment_normalized, Alphabet};
use crate::metrics::crr;
use crate::nnet::{Adam, ParamSet, INIT_SCALE};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// Pairs whose source or target exceeds this many tokens are skipped.
    pub max_len: usize,
    /// Per-token loss weights indexed by vocabulary id; uniform if absent.
    pub class_weights: Option<Vec<f64>>,
    /// Half-width of the uniform parameter initialiser.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            clip_norm: Some(5.0),
            seed: 0,
            max_len: 200,
            class_weights: None,
            init_scale: INIT_SCALE,
        }
    }
}

/// An encoded (source, target) pair.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub source: Source,
    pub target: Vec<TokenId>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean weighted negative log-likelihood per target token (EOS included).
    pub mean_nll: f64,
    pub dev_crr: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub corrector: Corrector,
    pub history: Vec<EpochStats>,
    pub skipped: usize,
}

/// Encodes `(ocr, gold)` lines, dropping pairs longer than `max_len` tokens.
pub fn encode_pairs(
    pairs: &[(String, String)],
    vocab: &BpeVocabulary,
    alphabet: &Alphabet,
    max_len: usize,
) -> (Vec<TrainingPair>, usize) {
    let mut out = Vec::with_capacity(pairs.len());
    let mut skipped = 0;
    for (i, (ocr, gold)) in pairs.iter().enumerate() {
        let sp = vocab.encode_pieces(&segment_normalized(ocr, alphabet));
        let tp = vocab.encode_pieces(&segment_normalized(gold, alphabet));
        if sp.len() > max_len || tp.len() > max_len {
            warn!("skipping pair {i}: {} / {} tokens exceeds {max_len}", sp.len(), tp.len());
            skipped += 1;
            continue;
        }
        let source = Source::from_pieces(&sp, vocab.len(), vocab.unk());
        let target = source.target_ids(&tp, vocab.len(), vocab.unk());
        out.push(TrainingPair { source, target });
    }
    (out, skipped)
}

/// Mean dev CRR of greedy corrections.
pub fn dev_crr(corrector: &Corrector, dev: &[(String, String)]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0;
    let inputs: Vec<String> = dev.iter().map(|p| p.0.clone()).collect();
    let outputs = corrector.correct_all(&inputs, 1)?;
    for (out, (_, gold)) in outputs.iter().zip(dev) {
        let g = corrector.segment(gold);
        if g.is_empty() {
            continue;
        }
        sum += crr(&corrector.segment(out), &g)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("dev set"));
    }
    Ok(sum / n as f64)
}

/// Trains a fresh model. `on_epoch` sees every epoch's statistics and the
/// current model, e.g. to write checkpoints.
pub fn train<F>(
    pairs: &[(String, String)],
    dev: Option<&[(String, String)]>,
    vocab: &BpeVocabulary,
    alphabet: Arc<Alphabet>,
    model_config: ModelConfig,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochStats, &Corrector) -> Result<()>,
{
    if pairs.is_empty() {
        return Err(Error::Empty("training pairs"));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let (data, skipped) = encode_pairs(pairs, vocab, &alphabet, config.max_len);
    if data.is_empty() {
        return Err(Error::Empty("training pairs after length filtering"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = CopyNet::new(model_config, vocab)?;
    model.init(&mut rng, config.init_scale);
    let mut corrector = Corrector::new(model.clone(), vocab.clone(), alphabet)?;
    let mut opt = Adam::new(config.lr);
    opt.clip_norm = config.clip_norm;
    let mut grad = model.zeros_like();
    let weights = config.class_weights.as_deref();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut tokens = 0usize;
        for batch in order.chunks(config.batch_size) {
            let n_tok: usize = batch.iter().map(|&i| data[i].target.len() + 1).sum();
            let scale = 1.0 / n_tok as f64;
            grad.zero();
            for &i in batch {
                let p = &data[i];
                total += model.loss_and_grad(&p.source, &p.target, weights, scale, &mut grad)?;
            }
            tokens += n_tok;
            opt.step(&mut model, &grad);
        }
        if !model.all_finite() {
            return Err(Error::NonFinite(format!("parameters after epoch {epoch}")));
        }
        corrector.model = model.clone();
        let dev_crr = match dev {
            Some(d) if !d.is_empty() => Some(dev_crr(&corrector, d)?),
            _ => None,
        };
        let stats = EpochStats {
            epoch,
            mean_nll: total / tokens as f64,
            dev_crr,
            seconds: start.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: nll {:.4}{} ({:.1}s)",
            stats.mean_nll,
            stats.dev_crr.map(|c| format!(", dev crr {c:.4}")).unwrap_or_default(),
            stats.seconds
        );
        on_epoch(&stats, &corrector)?;
        history.push(stats);
    }
    Ok(TrainOutcome {
        corrector,
        history,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bpe::learn;
    use crate::grapheme::segment;

    #[test]
    fn memorises_a_single_pair() {
        let a = Alphabet::iast();
        let gold = "rāmaḥ vanaṃ gacchati";
        let ocr = "ramah vanam gacchati";
        let vocab = learn(&[segment(gold, &a), segment(ocr, &a)], 2, 2)
            .unwrap()
            .augment_with_alphabet(&a);
        let pairs = vec![(ocr.to_string(), gold.to_string()); 50];
        let mc = ModelConfig {
            embed_dim: 32,
            hidden: 32,
            layers: 2,
            residual: true,
            copy: true,
        };
        let cfg = TrainConfig {
            epochs: 200,
            lr: 3e-3,
            init_scale: 0.2,
            ..Default::default()
        };
        let out = train(&pairs, None, &vocab, a, mc, &cfg, |_, _| Ok(())).unwrap();
        let nll: Vec<f64> = out.history.iter().map(|h| h.mean_nll).collect();
        assert!(*nll.last().unwrap() < 0.05, "{:?}", &nll[nll.len() - 5..]);
        for w in nll.windows(2) {
            assert!(w[1] <= w[0] + 1e-3, "loss rose: {w:?}");
        }
        assert_eq!(out.corrector.correct(ocr, 1).unwrap(), gold);
    }

    #[test]
    fn all_skipped_is_an_error() {
        let a = Alphabet::iast();
        let vocab = learn(&[segment("rama", &a)], 1000, 2).unwrap().augment_with_alphabet(&a);
        let pairs = vec![("rama".to_string(), "rāma".to_string())];
        let cfg = TrainConfig {
            max_len: 2,
            epochs: 1,
            ..Default::default()
        };
        let r = train(&pairs, None, &vocab, a, ModelConfig::default(), &cfg, |_, _| Ok(()));
        assert!(matches!(r, Err(Error::Empty(_))));
    }
}
