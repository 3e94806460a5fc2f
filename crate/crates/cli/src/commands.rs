//! Pipeline stages.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use postocr::align::{
    align, align_chars, classify_errors, confusion_from_traces, error_report_line, system_induced_errors, ConfusionMatrix,
    AlignmentTrace, ErrorCounts, Normalization,
};
use postocr::bpe::{learn, BpeVocabulary};
use postocr::copynet::{copy_generate_analysis, train, Corrector, ModelCheckpoint};
use postocr::distort::{
    apply_config_stream, crr_histogram, select_configs, BitmapFont, DistortionConfig, DistortionGrid,
    ExternalRenderer, GrayImage, SelectOptions, TextRenderer,
};
use postocr::grapheme::{segment_normalized, Alphabet, GraphemeString};
use postocr::metrics::{crr, evaluate, BucketOptions, LanguageModel, NgramLm, UnigramLm};
use postocr::ocr::{ChannelOcr, ChannelProfile, ExternalCommand, ImageRecognizer, OcrAdapter};

use crate::config::PipelineConfig;
use crate::data::{read_lines, read_pairs, write_lines, write_pairs};
use crate::error::{require, CliError, CliResult};
use crate::manifest::RunManifest;
use crate::svg::heatmap;

pub const TRAIN_TSV: &str = "train.tsv";
pub const DEV_TSV: &str = "dev.tsv";
pub const TRAIN_TXT: &str = "train.txt";
pub const DEV_TXT: &str = "dev.txt";
pub const VOCAB: &str = "bpe.vocab";
pub const MODEL: &str = "model.pocf";
pub const BEST_MODEL: &str = "best.pocf";

/// Shared state of one invocation.
pub struct Ctx {
    pub cfg: PipelineConfig,
    pub alphabet: Arc<Alphabet>,
}

impl Ctx {
    pub fn new(cfg: PipelineConfig) -> CliResult<Self> {
        let alphabet = match Alphabet::bundled(&cfg.alphabet) {
            Some(a) => a,
            None => Alphabet::from_file(&cfg.alphabet)
                .map_err(|e| CliError::Usage(format!("unknown alphabet {:?}: {e}", cfg.alphabet)))?,
        };
        Ok(Self {
            cfg,
            alphabet: Arc::new(alphabet),
        })
    }

    fn manifest(&self, stage: &str) -> RunManifest {
        RunManifest::start(stage, self.cfg.hash(), self.cfg.seed)
    }

    fn segment(&self, s: &str) -> GraphemeString {
        segment_normalized(s, &self.alphabet)
    }

    fn vocab(&self) -> CliResult<(PathBuf, BpeVocabulary)> {
        let p = require(self.cfg.work(VOCAB), "learn-bpe")?;
        let v = BpeVocabulary::load(&p).with_context(|| format!("loading {}", p.display()))?;
        Ok((p, v))
    }

    fn corrector(&self, checkpoint: Option<&Path>, m: &mut RunManifest) -> CliResult<Corrector> {
        let (vp, vocab) = self.vocab()?;
        let cp = match checkpoint {
            Some(p) => p.to_path_buf(),
            None => require(self.cfg.checkpoints_dir().join(MODEL), "train")?,
        };
        let ck = ModelCheckpoint::load(&cp).with_context(|| format!("loading {}", cp.display()))?;
        ck.verify_vocab(&vocab)
            .with_context(|| format!("{} was trained with a different vocabulary", cp.display()))?;
        m.input(&vp)?;
        m.input(&cp)?;
        Ok(Corrector::new(ck.model, vocab, self.alphabet.clone())?)
    }

    fn ocr(&self) -> CliResult<OcrAdapter> {
        let o = &self.cfg.ocr;
        if !o.command.is_empty() {
            return Ok(OcrAdapter::External(ExternalCommand::new(&o.command, o.jobs)?));
        }
        Ok(OcrAdapter::Channel(self.channel()?))
    }

    fn channel(&self) -> CliResult<ChannelOcr> {
        let o = &self.cfg.ocr;
        if o.channel_profile.is_empty() {
            let mut ch = ChannelOcr::default_profile(self.alphabet.clone())?;
            ch.seed = self.cfg.seed;
            return Ok(ch);
        }
        let profile = ChannelProfile::load(&o.channel_profile)
            .with_context(|| format!("loading channel profile {}", o.channel_profile))?;
        Ok(profile.into_channel(self.alphabet.clone())?)
    }

    fn renderer(&self) -> CliResult<Box<dyn TextRenderer>> {
        let cmd = &self.cfg.distort.render_command;
        if cmd.is_empty() {
            Ok(Box::new(BitmapFont::get().clone()))
        } else {
            Ok(Box::new(ExternalRenderer::new(cmd)?))
        }
    }

    /// Gold lines of the training split, from whichever form exists.
    fn train_gold(&self) -> CliResult<(PathBuf, Vec<String>)> {
        let tsv = self.cfg.work(TRAIN_TSV);
        if tsv.exists() {
            let pairs = read_pairs(&tsv)?;
            return Ok((tsv, pairs.into_iter().map(|p| p.1).collect()));
        }
        let txt = require(self.cfg.work(TRAIN_TXT), "prepare")?;
        let lines = read_lines(&txt)?;
        Ok((txt, lines))
    }
}

fn ensure_dir(p: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

/// Normalises and shuffles a corpus, then splits it into training and
/// development parts. Two-column input yields `train.tsv`/`dev.tsv`; plain
/// gold lines yield `train.txt`/`dev.txt`.
pub fn prepare(ctx: &Ctx, input: &Path) -> CliResult<()> {
    let mut m = ctx.manifest("prepare");
    let lines: Vec<String> = read_lines(input)?.into_iter().filter(|l| !l.trim().is_empty()).collect();
    if lines.is_empty() {
        return Err(anyhow!("{} has no lines", input.display()).into());
    }
    m.input(input)?;
    let tabs: Vec<usize> = lines.iter().map(|l| l.matches('\t').count()).collect();
    let paired = tabs[0] == 1;
    for (i, &t) in tabs.iter().enumerate() {
        if t != usize::from(paired) {
            return Err(anyhow!(
                "{}:{}: {} tab(s); expected {} (literal tabs inside text are not allowed)",
                input.display(),
                i + 1,
                t,
                usize::from(paired)
            )
            .into());
        }
    }
    let mut order: Vec<usize> = (0..lines.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(ctx.cfg.seed));
    let n_train = ((lines.len() as f64) * ctx.cfg.split).round() as usize;
    let (tr, dv) = order.split_at(n_train.min(lines.len()));
    ensure_dir(&ctx.cfg.paths.work_dir)?;
    let pick = |idx: &[usize]| -> Vec<String> { idx.iter().map(|&i| lines[i].clone()).collect() };
    let outputs = if paired {
        let to_pairs = |v: Vec<String>| -> Vec<(String, String)> {
            v.into_iter()
                .map(|l| {
                    let (a, b) = l.split_once('\t').expect("one tab");
                    (a.to_owned(), b.to_owned())
                })
                .collect()
        };
        let (a, b) = (ctx.cfg.work(TRAIN_TSV), ctx.cfg.work(DEV_TSV));
        write_pairs(&a, &to_pairs(pick(tr)))?;
        write_pairs(&b, &to_pairs(pick(dv)))?;
        [a, b]
    } else {
        let (a, b) = (ctx.cfg.work(TRAIN_TXT), ctx.cfg.work(DEV_TXT));
        write_lines(&a, &pick(tr))?;
        write_lines(&b, &pick(dv))?;
        [a, b]
    };
    for o in &outputs {
        m.output(o)?;
    }
    m.finish(&ctx.cfg.manifests_dir())?;
    println!("prepare: {} train / {} dev lines", tr.len(), dv.len());
    Ok(())
}

pub fn learn_bpe(ctx: &Ctx, input: Option<&Path>) -> CliResult<()> {
    let mut m = ctx.manifest("learn-bpe");
    let (src, gold) = match input {
        Some(p) => (p.to_path_buf(), read_lines(p)?),
        None => ctx.train_gold()?,
    };
    m.input(&src)?;
    let corpus: Vec<GraphemeString> = gold.iter().map(|l| ctx.segment(l)).collect();
    let vocab = learn(&corpus, ctx.cfg.bpe.min_count, ctx.cfg.bpe.max_token_len)?.augment_with_alphabet(&ctx.alphabet);
    ensure_dir(&ctx.cfg.paths.work_dir)?;
    let out = ctx.cfg.work(VOCAB);
    vocab.save(&out)?;
    m.output(&out)?;
    m.finish(&ctx.cfg.manifests_dir())?;
    println!("learn-bpe: {} tokens, {} merges -> {}", vocab.len(), vocab.merges().len(), out.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SynthMode {
    /// Corrupt gold text with the channel OCR.
    Channel,
    /// Render, distort with the selected configurations and recognise.
    Image,
}

fn load_selected_configs(dir: &Path) -> CliResult<Vec<DistortionConfig>> {
    let mut files: Vec<PathBuf> = match std::fs::read_dir(dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("config_") && n.ends_with(".txt"))
            })
            .collect(),
        Err(_) => Vec::new(),
    };
    if files.is_empty() {
        return Err(CliError::MissingStage {
            path: dir.join("config_*.txt"),
            stage: "select-configs",
        });
    }
    files.sort();
    files
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p)?;
            DistortionConfig::from_text(&text)
                .with_context(|| format!("parsing {}", p.display()))
                .map_err(CliError::from)
        })
        .collect()
}

fn synth_lines(
    ctx: &Ctx,
    mode: SynthMode,
    gold: &[String],
    offset: u64,
    image_prefix: Option<&str>,
) -> CliResult<Vec<(String, String)>> {
    let outputs: Vec<String> = match mode {
        SynthMode::Channel => {
            let ch = match ctx.ocr()? {
                OcrAdapter::Channel(c) => c,
                OcrAdapter::External(_) => {
                    return Err(CliError::Usage("channel synthesis needs an empty ocr.command".into()))
                }
            };
            gold.iter()
                .enumerate()
                .map(|(i, g)| ch.corrupt(g, offset + i as u64))
                .collect()
        }
        SynthMode::Image => {
            let configs = load_selected_configs(&ctx.cfg.configs_dir())?;
            let renderer = ctx.renderer()?;
            let ocr = ctx.ocr()?;
            let mut out = Vec::with_capacity(gold.len());
            for (i, g) in gold.iter().enumerate() {
                let idx = offset + i as u64;
                let c = &configs[idx as usize % configs.len()];
                let img = apply_config_stream(&renderer.render(g)?, c, idx)?;
                if let Some(prefix) = image_prefix {
                    let dir = ctx.cfg.images_dir();
                    ensure_dir(&dir)?;
                    img.save(dir.join(format!("{prefix}_{i:06}.png")))?;
                }
                out.push(ocr.recognize(&img, idx).with_context(|| format!("recognising line {}", i + 1))?);
            }
            out
        }
    };
    Ok(outputs.into_iter().zip(gold.iter().cloned()).collect())
}

/// Produces `(ocr, gold)` pairs from gold text. Without `--input`, the
/// prepared `train.txt`/`dev.txt` become `train.tsv`/`dev.tsv`.
pub fn synth(
    ctx: &Ctx,
    mode: SynthMode,
    input: Option<&Path>,
    output: Option<&Path>,
    save_images: bool,
) -> CliResult<()> {
    let mut m = ctx.manifest("synth");
    let jobs: Vec<(PathBuf, PathBuf, &str)> = match input {
        Some(p) => vec![(
            p.to_path_buf(),
            output.map(Path::to_path_buf).unwrap_or_else(|| ctx.cfg.work("synth.tsv")),
            "synth",
        )],
        None => vec![
            (require(ctx.cfg.work(TRAIN_TXT), "prepare")?, ctx.cfg.work(TRAIN_TSV), "train"),
            (require(ctx.cfg.work(DEV_TXT), "prepare")?, ctx.cfg.work(DEV_TSV), "dev"),
        ],
    };
    let mut offset = 0u64;
    for (src, dst, prefix) in jobs {
        let gold = read_lines(&src)?;
        m.input(&src)?;
        let pairs = synth_lines(ctx, mode, &gold, offset, save_images.then_some(prefix))?;
        offset += gold.len() as u64;
        write_pairs(&dst, &pairs)?;
        m.output(&dst)?;
        let mean = mean_crr(ctx, &pairs)?;
        println!("synth: {} pairs -> {} (ocr crr {:.2}%)", pairs.len(), dst.display(), 100.0 * mean);
    }
    m.finish(&ctx.cfg.manifests_dir())?;
    Ok(())
}

fn mean_crr(ctx: &Ctx, pairs: &[(String, String)]) -> CliResult<f64> {
    let mut s = 0.0;
    let mut n = 0;
    for (o, g) in pairs {
        let g = ctx.segment(g);
        if !g.is_empty() {
            s += crr(&ctx.segment(o), &g)?;
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { s / n as f64 })
}

/// Ranks distortion settings by how closely the OCR accuracy they induce
/// matches a target, writing the report and the best `top_k` configs.
pub fn select(ctx: &Ctx, sample: Option<&Path>, target: Option<&Path>) -> CliResult<()> {
    let mut m = ctx.manifest("select-configs");
    let d = &ctx.cfg.distort;
    let (src, gold) = match sample {
        Some(p) => (p.to_path_buf(), read_lines(p)?),
        None => ctx.train_gold()?,
    };
    m.input(&src)?;
    let gold: Vec<String> = gold.into_iter().filter(|l| !l.is_empty()).take(d.sample_size).collect();
    if gold.is_empty() {
        return Err(anyhow!("no sample lines in {}", src.display()).into());
    }
    let renderer = ctx.renderer()?;
    let samples: Vec<(GrayImage, String)> = gold
        .iter()
        .map(|g| Ok((renderer.render(g)?, g.clone())))
        .collect::<postocr::Result<_>>()?;
    let ocr = ctx.ocr()?;
    let target_crrs: Vec<f64> = match target {
        Some(t) => {
            m.input(t)?;
            let pairs = read_pairs(t)?;
            pairs
                .iter()
                .filter(|(_, g)| !g.is_empty())
                .map(|(o, g)| crr(&ctx.segment(o), &ctx.segment(g)))
                .collect::<postocr::Result<_>>()?
        }
        None => postocr::distort::config_crrs(&samples, &DistortionConfig::identity(), &ocr, &ctx.alphabet)?,
    };
    let target = crr_histogram(&target_crrs, d.bin_width, d.alpha)?;
    let grid = DistortionGrid::full();
    let configs = if d.random_subset > 0 {
        grid.random_subset(d.random_subset, ctx.cfg.seed)
    } else if d.grid_levels > 0 {
        grid.uniform_levels(d.grid_levels).configs(ctx.cfg.seed)
    } else {
        grid.configs(ctx.cfg.seed)
    };
    info!("evaluating {} of {} grid configurations on {} lines", configs.len(), grid.len(), samples.len());
    let opts = SelectOptions {
        bin_width: d.bin_width,
        alpha: d.alpha,
    };
    let sel = select_configs(&samples, &configs, &ocr, &target, &ctx.alphabet, &opts)?;
    if sel.ranked.is_empty() {
        return Err(anyhow!("every configuration failed; first error: {:?}", sel.failed.first()).into());
    }
    let reports = ctx.cfg.reports_dir();
    ensure_dir(&reports)?;
    let report = reports.join("config_selection.csv");
    sel.write_report(std::fs::File::create(&report)?)?;
    m.output(&report)?;
    let dir = ctx.cfg.configs_dir();
    ensure_dir(&dir)?;
    for e in std::fs::read_dir(&dir)? {
        let p = e?.path();
        if p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("config_")) {
            std::fs::remove_file(p)?;
        }
    }
    for s in sel.top(d.top_k) {
        let p = dir.join(format!("config_{:05}.txt", s.config_id));
        let text = format!("# kl = {:.6}, mean crr = {:.6}\n{}", s.kl, s.mean_crr, s.config.to_text());
        std::fs::write(&p, text)?;
        m.output(&p)?;
        println!("config {:>5}  kl {:.4}  crr {:.2}%  {}", s.config_id, s.kl, 100.0 * s.mean_crr, s.config);
    }
    println!(
        "select-configs: {} grid configurations ({} evaluated, {} failed)",
        grid.len(),
        sel.ranked.len(),
        sel.failed.len()
    );
    m.finish(&ctx.cfg.manifests_dir())?;
    Ok(())
}

#[derive(Serialize)]
struct HistoryRow {
    epoch: usize,
    mean_nll: f64,
    dev_crr: Option<f64>,
}

pub fn train_stage(ctx: &Ctx, train_path: Option<&Path>, dev_path: Option<&Path>) -> CliResult<()> {
    let mut m = ctx.manifest("train");
    let tp = match train_path {
        Some(p) => p.to_path_buf(),
        None => require(ctx.cfg.work(TRAIN_TSV), "prepare")?,
    };
    let pairs = read_pairs(&tp)?;
    m.input(&tp)?;
    let dev_file = dev_path.map(Path::to_path_buf).or_else(|| {
        let d = ctx.cfg.work(DEV_TSV);
        d.exists().then_some(d)
    });
    let dev = match &dev_file {
        Some(d) => {
            m.input(d)?;
            Some(read_pairs(d)?)
        }
        None => None,
    };
    let (vp, vocab) = ctx.vocab()?;
    m.input(&vp)?;
    let ckdir = ctx.cfg.checkpoints_dir();
    ensure_dir(&ckdir)?;
    let reports = ctx.cfg.reports_dir();
    ensure_dir(&reports)?;
    let best_path = ckdir.join(BEST_MODEL);
    let mut best = f64::NEG_INFINITY;
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    let cfg_hash = ctx.cfg.hash();
    let outcome = train(
        &pairs,
        dev.as_deref(),
        &vocab,
        ctx.alphabet.clone(),
        ctx.cfg.model.model_config(),
        &ctx.cfg.train.train_config(ctx.cfg.seed),
        |s, c| {
            rows.push(HistoryRow {
                epoch: s.epoch,
                mean_nll: s.mean_nll,
                dev_crr: s.dev_crr,
            });
            timings.push(s.seconds);
            println!(
                "epoch {:>3}  nll {:.4}{}",
                s.epoch,
                s.mean_nll,
                s.dev_crr.map(|d| format!("  dev crr {:.2}%", 100.0 * d)).unwrap_or_default()
            );
            if let Some(d) = s.dev_crr {
                if d > best {
                    best = d;
                    let mut ck = ModelCheckpoint::new(c.model.clone(), &vocab);
                    ck.meta.insert("epoch".into(), s.epoch.to_string());
                    ck.meta.insert("config_hash".into(), cfg_hash.clone());
                    ck.save(&best_path)?;
                }
            }
            Ok(())
        },
    )?;
    let final_path = ckdir.join(MODEL);
    let mut ck = ModelCheckpoint::new(outcome.corrector.model.clone(), &vocab);
    ck.meta.insert("epoch".into(), ctx.cfg.train.epochs.to_string());
    ck.meta.insert("config_hash".into(), cfg_hash);
    ck.save(&final_path)?;
    m.output(&final_path)?;
    if best_path.exists() {
        m.output(&best_path)?;
    }
    let hist = reports.join("train_history.jsonl");
    let mut text = String::new();
    for r in &rows {
        text.push_str(&serde_json::to_string(r).map_err(anyhow::Error::from)?);
        text.push('\n');
    }
    std::fs::write(&hist, text)?;
    m.output(&hist)?;
    info!("epoch seconds: {timings:?}");
    if outcome.skipped > 0 {
        println!("train: skipped {} over-long pairs", outcome.skipped);
    }
    m.finish(&ctx.cfg.manifests_dir())?;
    println!("train: wrote {}", final_path.display());
    Ok(())
}

/// Input lines from a plain file, or the first column of a `.tsv` file.
fn read_inputs(path: &Path) -> CliResult<Vec<String>> {
    if path.extension().is_some_and(|e| e == "tsv") {
        Ok(read_pairs(path)?.into_iter().map(|p| p.0).collect())
    } else {
        Ok(read_lines(path)?)
    }
}

pub fn correct(ctx: &Ctx, input: Option<&Path>, output: Option<&Path>, checkpoint: Option<&Path>) -> CliResult<()> {
    let mut m = ctx.manifest("correct");
    let inp = match input {
        Some(p) => p.to_path_buf(),
        None => require(ctx.cfg.work(DEV_TSV), "prepare")?,
    };
    let corrector = ctx.corrector(checkpoint, &mut m)?;
    let lines = read_inputs(&inp)?;
    m.input(&inp)?;
    let out = corrector.correct_all(&lines, ctx.cfg.model.beam_width)?;
    let dst = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.cfg.reports_dir().join("corrected.txt"));
    write_lines(&dst, &out)?;
    m.output(&dst)?;
    m.finish(&ctx.cfg.manifests_dir())?;
    println!("correct: {} lines -> {}", out.len(), dst.display());
    Ok(())
}

fn lms(ctx: &Ctx, m: &mut RunManifest) -> CliResult<Option<(NgramLm, UnigramLm)>> {
    let Ok((src, gold)) = ctx.train_gold() else {
        return Ok(None);
    };
    m.input(&src)?;
    let corpus: Vec<GraphemeString> = gold.iter().map(|l| ctx.segment(l)).collect();
    let mc = &ctx.cfg.metrics;
    Ok(Some((
        NgramLm::train(&corpus, mc.lm_order, mc.lm_alpha)?,
        UnigramLm::train(&corpus, mc.unigram_alpha)?,
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Predictions {
    /// Correct the OCR column with the trained model.
    Model,
    /// Score the OCR column itself.
    Ocr,
}

pub fn evaluate_stage(
    ctx: &Ctx,
    input: Option<&Path>,
    predictions_file: Option<&Path>,
    source: Predictions,
    checkpoint: Option<&Path>,
) -> CliResult<()> {
    let mut m = ctx.manifest("evaluate");
    let inp = match input {
        Some(p) => p.to_path_buf(),
        None => require(ctx.cfg.work(DEV_TSV), "prepare")?,
    };
    let pairs = read_pairs(&inp)?;
    m.input(&inp)?;
    let (ocr, gold): (Vec<String>, Vec<String>) = pairs.into_iter().unzip();
    let preds: Vec<String> = match (predictions_file, source) {
        (Some(p), _) => {
            m.input(p)?;
            let v = read_lines(p)?;
            if v.len() != gold.len() {
                return Err(anyhow!("{} has {} lines, expected {}", p.display(), v.len(), gold.len()).into());
            }
            v
        }
        (None, Predictions::Ocr) => ocr.clone(),
        (None, Predictions::Model) => ctx.corrector(checkpoint, &mut m)?.correct_all(&ocr, ctx.cfg.model.beam_width)?,
    };
    let keep: Vec<usize> = (0..gold.len()).filter(|&i| !gold[i].is_empty()).collect();
    let seg = |v: &[String]| -> Vec<GraphemeString> { keep.iter().map(|&i| ctx.segment(&v[i])).collect() };
    let lm = lms(ctx, &mut m)?;
    let acc = lm.as_ref().map(|(n, u)| (n as &dyn LanguageModel, u));
    let mc = &ctx.cfg.metrics;
    let report = evaluate(
        &seg(&ocr),
        &seg(&preds),
        &seg(&gold),
        acc,
        BucketOptions {
            width: mc.bucket_width,
            min_count: mc.bucket_min_count,
        },
    )?;
    let reports = ctx.cfg.reports_dir();
    ensure_dir(&reports)?;
    let json = reports.join("eval.json");
    std::fs::write(&json, serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)? + "\n")?;
    m.output(&json)?;
    let lines = reports.join("eval_lines.jsonl");
    let mut text = String::new();
    for (k, s) in report.per_line.iter().enumerate() {
        let mut v = serde_json::to_value(s).map_err(anyhow::Error::from)?;
        v["line"] = (keep[k] + 1).into();
        text.push_str(&v.to_string());
        text.push('\n');
    }
    std::fs::write(&lines, text)?;
    m.output(&lines)?;
    let buckets = reports.join("eval_buckets.csv");
    let mut w = csv::Writer::from_path(&buckets).map_err(anyhow::Error::from)?;
    w.write_record(["min_len", "count", "mean_crr", "mean_wrr"]).map_err(anyhow::Error::from)?;
    for b in &report.by_length_buckets {
        w.write_record([
            b.min_len.to_string(),
            b.count.to_string(),
            format!("{:.6}", b.mean_crr),
            format!("{:.6}", b.mean_wrr),
        ])
        .map_err(anyhow::Error::from)?;
    }
    w.flush()?;
    drop(w);
    m.output(&buckets)?;
    m.finish(&ctx.cfg.manifests_dir())?;

    let mut out = std::io::stdout().lock();
    writeln!(out, "lines     {}", report.per_line.len())?;
    writeln!(out, "CRR       {:.2}%", 100.0 * report.mean_crr)?;
    writeln!(out, "WRR       {:.2}%", 100.0 * report.mean_wrr)?;
    if let Some(n) = report.mean_norm_lp {
        writeln!(out, "NormLP    {n:.4}")?;
    }
    writeln!(out, "\n{:>8} {:>6} {:>8} {:>8}", "min_len", "count", "CRR", "WRR")?;
    for b in &report.by_length_buckets {
        writeln!(
            out,
            "{:>8} {:>6} {:>7.2}% {:>7.2}%",
            b.min_len,
            b.count,
            100.0 * b.mean_crr,
            100.0 * b.mean_wrr
        )?;
    }
    Ok(())
}

fn write_counts(path: &Path, rows: &[(&str, ErrorCounts)]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(anyhow::Error::from)?;
    w.write_record(["system", "ins", "del", "sub", "total"]).map_err(anyhow::Error::from)?;
    for (name, c) in rows {
        w.write_record([
            name.to_string(),
            c.ins.to_string(),
            c.del.to_string(),
            c.sub.to_string(),
            c.total().to_string(),
        ])
        .map_err(anyhow::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

fn add_counts(a: &mut ErrorCounts, b: ErrorCounts) {
    a.ins += b.ins;
    a.del += b.del;
    a.sub += b.sub;
}

/// Aligns hypotheses (first column, or `--predictions`) against gold and
/// writes per-line error counts, totals and the raw confusion matrix.
/// Units in which `align-errors` reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Units {
    Grapheme,
    Char,
    Both,
}

pub fn align_errors(ctx: &Ctx, input: &Path, predictions: Option<&Path>, units: Units) -> CliResult<()> {
    let mut m = ctx.manifest("align-errors");
    let pairs = read_pairs(input)?;
    m.input(input)?;
    let hyps: Vec<String> = match predictions {
        Some(p) => {
            m.input(p)?;
            let v = read_lines(p)?;
            if v.len() != pairs.len() {
                return Err(anyhow!("{} has {} lines, expected {}", p.display(), v.len(), pairs.len()).into());
            }
            v
        }
        None => pairs.iter().map(|p| p.0.clone()).collect(),
    };
    let dir = ctx.cfg.reports_dir().join("errors");
    ensure_dir(&dir)?;
    if units != Units::Char {
        let traces: Vec<_> = pairs
            .iter()
            .zip(&hyps)
            .map(|((_, g), h)| align(&ctx.segment(g), &ctx.segment(h)))
            .collect();
        write_error_reports(&dir, "", &traces, &mut m)?;
    }
    if units != Units::Grapheme {
        let traces: Vec<_> = pairs.iter().zip(&hyps).map(|((_, g), h)| align_chars(g, h)).collect();
        write_error_reports(&dir, "_chars", &traces, &mut m)?;
    }
    m.finish(&ctx.cfg.manifests_dir())?;
    Ok(())
}

fn write_error_reports(dir: &Path, suffix: &str, traces: &[AlignmentTrace], m: &mut RunManifest) -> CliResult<()> {
    let per_line = dir.join(format!("line_errors{suffix}.tsv"));
    let mut lines = vec!["line\tins\tdel\tsub\tcost".to_owned()];
    let mut total = ErrorCounts::default();
    for (i, t) in traces.iter().enumerate() {
        lines.push(error_report_line(&(i + 1).to_string(), t));
        add_counts(&mut total, classify_errors(t));
    }
    write_lines(&per_line, &lines)?;
    let summary = dir.join(format!("error_counts{suffix}.csv"));
    write_counts(&summary, &[("hypothesis", total)])?;
    let conf = dir.join(format!("confusion{suffix}.csv"));
    confusion_from_traces(traces, Normalization::Raw).write_csv(std::fs::File::create(&conf)?)?;
    for p in [&per_line, &summary, &conf] {
        m.output(p)?;
    }
    let unit = if suffix.is_empty() { "graphemes" } else { "characters" };
    println!(
        "align-errors ({unit}): {} lines, ins {} del {} sub {} -> {}",
        traces.len(),
        total.ins,
        total.del,
        total.sub,
        dir.display()
    );
    Ok(())
}

fn save_matrix(path: &Path, m: &ConfusionMatrix, svg: bool, title: &str, man: &mut RunManifest) -> CliResult<()> {
    m.write_csv(std::fs::File::create(path)?)?;
    man.output(path)?;
    if svg {
        let p = path.with_extension("svg");
        std::fs::write(&p, heatmap(m, title))?;
        man.output(&p)?;
    }
    Ok(())
}

/// Confusion heatmaps for OCR and corrected output, error-type table with
/// correction-induced errors, and copy/generate mass matrices.
pub fn analyze(ctx: &Ctx, input: Option<&Path>, checkpoint: Option<&Path>, svg: bool) -> CliResult<()> {
    let mut m = ctx.manifest("analyze");
    let inp = match input {
        Some(p) => p.to_path_buf(),
        None => require(ctx.cfg.work(DEV_TSV), "prepare")?,
    };
    let pairs: Vec<(String, String)> = read_pairs(&inp)?.into_iter().filter(|p| !p.1.is_empty()).collect();
    if pairs.is_empty() {
        return Err(anyhow!("{} has no gold lines", inp.display()).into());
    }
    m.input(&inp)?;
    let corrector = ctx.corrector(checkpoint, &mut m)?;
    let ocr: Vec<String> = pairs.iter().map(|p| p.0.clone()).collect();
    let pred = corrector.correct_all(&ocr, ctx.cfg.model.beam_width)?;
    let dir = ctx.cfg.reports_dir().join("analysis");
    ensure_dir(&dir)?;

    let mut ocr_traces = Vec::new();
    let mut pred_traces = Vec::new();
    let mut ocr_counts = ErrorCounts::default();
    let mut pred_counts = ErrorCounts::default();
    let mut induced = ErrorCounts::default();
    for ((o, g), p) in pairs.iter().zip(&pred) {
        let (o, g, p) = (ctx.segment(o), ctx.segment(g), ctx.segment(p));
        let to = align(&g, &o);
        let tp = align(&g, &p);
        add_counts(&mut ocr_counts, classify_errors(&to));
        add_counts(&mut pred_counts, classify_errors(&tp));
        add_counts(&mut induced, system_induced_errors(&o, &p, &g));
        ocr_traces.push(to);
        pred_traces.push(tp);
    }
    save_matrix(
        &dir.join("confusion_ocr.csv"),
        &confusion_from_traces(&ocr_traces, Normalization::Row),
        svg,
        "OCR output vs gold",
        &mut m,
    )?;
    save_matrix(
        &dir.join("confusion_corrected.csv"),
        &confusion_from_traces(&pred_traces, Normalization::Row),
        svg,
        "Corrected output vs gold",
        &mut m,
    )?;
    let types = dir.join("error_types.csv");
    write_counts(&types, &[("ocr", ocr_counts), ("corrected", pred_counts), ("corrected_induced", induced)])?;
    m.output(&types)?;

    let cg = copy_generate_analysis(&corrector, &ocr)?;
    save_matrix(&dir.join("generate_mass.csv"), &cg.gen, svg, "Mean generate mass", &mut m)?;
    save_matrix(&dir.join("copy_mass.csv"), &cg.copy, svg, "Mean copy mass", &mut m)?;
    let counts = dir.join("copy_generate_counts.csv");
    cg.counts.write_csv(std::fs::File::create(&counts)?)?;
    m.output(&counts)?;
    let corrected = dir.join("corrected.txt");
    write_lines(&corrected, &pred)?;
    m.output(&corrected)?;
    m.finish(&ctx.cfg.manifests_dir())?;

    println!("{:<18} {:>6} {:>6} {:>6}", "system", "ins", "del", "sub");
    for (n, c) in [("ocr", ocr_counts), ("corrected", pred_counts), ("  induced", induced)] {
        println!("{n:<18} {:>6} {:>6} {:>6}", c.ins, c.del, c.sub);
    }
    println!("analyze: reports in {}", dir.display());
    Ok(())
}
