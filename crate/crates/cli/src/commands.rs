//! One function per subcommand. Each resolves its settings, does the work
//! through the library, and records the resolved settings.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use log::{info, warn};
use serde::{Deserialize, Serialize};

use cgrgen::chemgraph::{
    parse_cgrsmiles_with, rc_hash, reaction_center, validate as check, validate_str, DEFAULT_MAX_LEN,
    DEFAULT_RC_RADIUS,
};
use cgrgen::eval::{build_report, compute_validity, ReportOptions, DEFAULT_PAIR_CAP};
use cgrgen::nn::{Model, ModelConfig, Variant};
use cgrgen::sample::{generate, SamplerConfig};
use cgrgen::tensor::Rng;
use cgrgen::train::{
    describe, fine_tune, load_checkpoint, save_checkpoint, split_dataset, train_epochs, FineTuneProtocol,
    TrainConfig,
};
use cgrgen::vocab::{encode_corpus, load_corpus, Corpus, Vocab};

use crate::config::{log_run_config, need, resolve, sibling, usage, write_run_config, Failure};

type Outcome = Result<(), Failure>;

/// Non-comment lines of a file of generated strings, blank lines included
/// since an empty generation is still a generation.
fn read_entries(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.trim_end_matches('\r').to_string())
        .collect())
}

/// Corpus lines, failing when nothing usable is left.
fn read_corpus_file(path: &Path, max_len: usize) -> anyhow::Result<Corpus> {
    let corpus = load_corpus(path, max_len).with_context(|| format!("reading {}", path.display()))?;
    if corpus.skipped_long > 0 {
        warn!("{}: {} lines longer than {max_len} characters skipped", path.display(), corpus.skipped_long);
    }
    if corpus.lines.is_empty() {
        bail!("{}: corpus has no usable lines", path.display());
    }
    info!("{}: {} lines", path.display(), corpus.lines.len());
    Ok(corpus)
}

fn write_lines<I: IntoIterator<Item = String>>(out: Option<&Path>, lines: I) -> anyhow::Result<()> {
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = BufWriter::new(sink);
    for line in lines {
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: cgrgen::nn::NnError| e.to_string())
}

// ---- vocab

#[derive(Args, Serialize)]
pub struct VocabArgs {
    /// Corpus, one string per line; `#` starts a comment line.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Vocabulary file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Longer lines are skipped.
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabRun {
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    max_len: usize,
}

impl Default for VocabRun {
    fn default() -> Self {
        VocabRun { data: None, out: None, max_len: DEFAULT_MAX_LEN }
    }
}

pub fn vocab(file: Option<&Path>, args: &VocabArgs) -> Outcome {
    let run: VocabRun = resolve(file, args)?;
    let data = need(&run.data, "data")?;
    let out = need(&run.out, "out")?;
    let corpus = read_corpus_file(data, run.max_len)?;
    let vocab = Vocab::build(&corpus.lines).context("building vocabulary")?;
    vocab.save(out).with_context(|| format!("writing {}", out.display()))?;
    info!("{} tokens written to {}", vocab.len(), out.display());
    write_run_config("vocab", &run, out)?;
    Ok(())
}

// ---- train

#[derive(Args, Serialize)]
pub struct TrainArgs {
    /// Training corpus.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Existing vocabulary file; built from the corpus when absent.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Baseline1, Baseline2, TcnOnly, Hybrid or BiLstmWin.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long)]
    lstm_units: Option<usize>,
    #[arg(long)]
    tcn_filters: Option<usize>,
    /// Comma-separated dilation rates of the convolution block.
    #[arg(long, value_delimiter = ',')]
    dilations: Option<Vec<usize>>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Fraction of the corpus used for training.
    #[arg(long)]
    split: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRun {
    data: Option<PathBuf>,
    vocab: Option<PathBuf>,
    ckpt: Option<PathBuf>,
    variant: Variant,
    lstm_units: usize,
    hybrid_lstm_layers: usize,
    tcn_filters: usize,
    tcn_kernel: usize,
    dilations: Vec<usize>,
    dropout: f64,
    bilstm_units: usize,
    bilstm_layers: usize,
    window: usize,
    stride: usize,
    max_len: usize,
    lr: f64,
    epochs: usize,
    batch_size: usize,
    split: f64,
    shuffle: bool,
    clip_norm: f64,
    seed: u64,
}

impl Default for TrainRun {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        TrainRun {
            data: None,
            vocab: None,
            ckpt: None,
            variant: m.variant,
            lstm_units: m.lstm_units,
            hybrid_lstm_layers: m.hybrid_lstm_layers,
            tcn_filters: m.tcn_filters,
            tcn_kernel: m.tcn_kernel,
            dilations: m.dilations,
            dropout: m.dropout,
            bilstm_units: m.bilstm_units,
            bilstm_layers: m.bilstm_layers,
            window: m.window,
            stride: m.stride,
            max_len: m.max_len,
            lr: t.lr,
            epochs: t.epochs,
            batch_size: t.batch_size,
            split: t.split,
            shuffle: t.shuffle,
            clip_norm: t.clip_norm,
            seed: t.seed,
        }
    }
}

impl TrainRun {
    fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            vocab_size,
            max_len: self.max_len,
            lstm_units: self.lstm_units,
            hybrid_lstm_layers: self.hybrid_lstm_layers,
            tcn_filters: self.tcn_filters,
            tcn_kernel: self.tcn_kernel,
            dilations: self.dilations.clone(),
            dropout: self.dropout,
            bilstm_units: self.bilstm_units,
            bilstm_layers: self.bilstm_layers,
            window: self.window,
            stride: self.stride,
            seed: self.seed,
        }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            split: self.split,
            seed: self.seed,
            shuffle: self.shuffle,
            clip_norm: self.clip_norm,
        }
    }
}

pub fn train(file: Option<&Path>, args: &TrainArgs) -> Outcome {
    let run: TrainRun = resolve(file, args)?;
    let data = need(&run.data, "data")?;
    let ckpt = need(&run.ckpt, "ckpt")?;
    let train_config = run.train_config();
    train_config.validate().map_err(|e| usage(e.to_string()))?;
    let corpus = read_corpus_file(data, run.max_len)?;
    let vocab = match &run.vocab {
        Some(p) => Vocab::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => Vocab::build(&corpus.lines).context("building vocabulary")?,
    };
    let (encoded, unknown) = encode_corpus(&vocab, &corpus.lines);
    if unknown > 0 {
        warn!("{unknown} lines not encodable with the vocabulary, skipped");
    }
    let (train_set, test_set) = split_dataset(&encoded, run.split, run.seed).context("splitting corpus")?;
    let model_config = run.model_config(vocab.len());
    model_config.validate().map_err(|e| usage(e.to_string()))?;
    let mut model = Model::<f32>::new(model_config).context("building model")?;
    info!(
        "{}; {} training and {} test strings",
        describe(&model),
        train_set.len(),
        test_set.len()
    );
    let history = train_epochs(&mut model, &train_set, &test_set, &train_config, &mut Rng::new(run.seed, 1))
        .context("training")?;
    if let (Some(tr), te) = (history.train_loss.last(), history.test_loss.last()) {
        info!("final train loss {tr:.4}, test loss {te:?}");
    }
    save_checkpoint(&model, &vocab, ckpt).with_context(|| format!("writing {}", ckpt.display()))?;
    write_text(
        &sibling(ckpt, ".history.toml"),
        &toml::to_string(&history).context("serializing history")?,
    )?;
    write_run_config("train", &run, ckpt)?;
    Ok(())
}

// ---- finetune

#[derive(Args, Serialize)]
pub struct FinetuneArgs {
    /// Fine-tuning corpus.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Pretrained checkpoint.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// AU (all layers), LL (output head only) or P1 (staged unfreezing).
    #[arg(long, value_parser = ["AU", "LL", "P1"], ignore_case = true)]
    protocol: Option<String>,
    /// Epochs for AU and LL.
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate for AU and LL.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneRun {
    data: Option<PathBuf>,
    ckpt: Option<PathBuf>,
    out: Option<PathBuf>,
    protocol: Option<String>,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    clip_norm: f64,
    shuffle: bool,
    max_len: usize,
    seed: u64,
}

impl Default for FinetuneRun {
    fn default() -> Self {
        let p = FineTuneProtocol::all_unfrozen();
        FinetuneRun {
            data: None,
            ckpt: None,
            out: None,
            protocol: None,
            epochs: p.epochs,
            lr: p.lr,
            batch_size: p.batch_size,
            clip_norm: p.clip_norm,
            shuffle: p.shuffle,
            max_len: DEFAULT_MAX_LEN,
            seed: 0,
        }
    }
}

pub fn finetune(file: Option<&Path>, args: &FinetuneArgs) -> Outcome {
    let run: FinetuneRun = resolve(file, args)?;
    let data = need(&run.data, "data")?;
    let ckpt = need(&run.ckpt, "ckpt")?;
    let out = need(&run.out, "out")?;
    let name = run.protocol.as_deref().ok_or_else(|| usage("--protocol is required (AU, LL or P1)"))?;
    let protocol = FineTuneProtocol {
        epochs: run.epochs,
        lr: run.lr,
        batch_size: run.batch_size,
        clip_norm: run.clip_norm,
        shuffle: run.shuffle,
        ..FineTuneProtocol::from_name(name).map_err(|e| usage(e.to_string()))?
    };
    let mut cp = load_checkpoint::<f32>(ckpt).with_context(|| format!("reading {}", ckpt.display()))?;
    let corpus = read_corpus_file(data, run.max_len)?;
    let (encoded, unknown) = encode_corpus(&cp.vocab, &corpus.lines);
    if unknown > 0 {
        warn!("{unknown} lines use tokens outside the checkpoint vocabulary, skipped");
    }
    let log = fine_tune(&mut cp.model, &encoded, &protocol, &mut Rng::new(run.seed, 2)).context("fine-tuning")?;
    for phase in &log.phases {
        info!(
            "{} phase: {} epochs at lr {} on {:?}, last loss {:?}",
            log.protocol,
            phase.epochs,
            phase.lr,
            phase.layers,
            phase.train_loss.last()
        );
    }
    save_checkpoint(&cp.model, &cp.vocab, out).with_context(|| format!("writing {}", out.display()))?;
    write_text(&sibling(out, ".history.toml"), &toml::to_string(&log).context("serializing log")?)?;
    write_run_config("finetune", &run, out)?;
    Ok(())
}

// ---- sample

#[derive(Args, Serialize)]
pub struct SampleArgs {
    /// Checkpoint to sample from.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of strings.
    #[arg(short = 'n', long = "count")]
    count: Option<usize>,
    /// Sampling temperature.
    #[arg(short = 'T', long = "temperature")]
    temperature: Option<f64>,
    /// Cap on characters per string.
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Strings advanced together; does not change the output.
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleRun {
    ckpt: Option<PathBuf>,
    out: Option<PathBuf>,
    count: usize,
    temperature: f64,
    max_len: usize,
    seed: u64,
    batch_size: usize,
}

impl Default for SampleRun {
    fn default() -> Self {
        let s = SamplerConfig::default();
        SampleRun {
            ckpt: None,
            out: None,
            count: s.count,
            temperature: s.temperature,
            max_len: s.max_len,
            seed: s.seed,
            batch_size: s.batch_size,
        }
    }
}

pub fn sample(file: Option<&Path>, args: &SampleArgs) -> Outcome {
    let run: SampleRun = resolve(file, args)?;
    let ckpt = need(&run.ckpt, "ckpt")?;
    let config = SamplerConfig {
        temperature: run.temperature,
        max_len: run.max_len,
        count: run.count,
        seed: run.seed,
        batch_size: run.batch_size,
        ..SamplerConfig::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let cp = load_checkpoint::<f32>(ckpt).with_context(|| format!("reading {}", ckpt.display()))?;
    info!("{}; sampling {} strings at T = {}", describe(&cp.model), run.count, run.temperature);
    let strings = generate(&cp.model, &cp.vocab, &config).context("sampling")?;
    write_lines(run.out.as_deref(), strings)?;
    match &run.out {
        Some(out) => {
            write_run_config("sample", &run, out)?;
        }
        None => log_run_config("sample", &run),
    }
    Ok(())
}

// ---- eval

#[derive(Args, Serialize)]
pub struct EvalArgs {
    /// Generated strings, one per line.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Training corpus; enables novelty counts and similarity to the data.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Report file to write.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Bond radius around the reaction center.
    #[arg(long)]
    radius: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    /// Most molecule pairs scored for internal similarity.
    #[arg(long)]
    pair_cap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Leave out the similarity distributions.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    skip_tanimoto: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalRun {
    data: Option<PathBuf>,
    reference: Option<PathBuf>,
    report: Option<PathBuf>,
    radius: usize,
    max_len: usize,
    pair_cap: usize,
    seed: u64,
    skip_tanimoto: bool,
}

impl Default for EvalRun {
    fn default() -> Self {
        EvalRun {
            data: None,
            reference: None,
            report: None,
            radius: DEFAULT_RC_RADIUS,
            max_len: DEFAULT_MAX_LEN,
            pair_cap: DEFAULT_PAIR_CAP,
            seed: 0,
            skip_tanimoto: false,
        }
    }
}

pub fn eval(file: Option<&Path>, args: &EvalArgs) -> Outcome {
    let run: EvalRun = resolve(file, args)?;
    let data = need(&run.data, "data")?;
    let report_path = need(&run.report, "report")?;
    if run.pair_cap == 0 {
        return Err(usage("--pair-cap must be positive"));
    }
    let strings = read_entries(data)?;
    let reference = match &run.reference {
        Some(p) => {
            let corpus = read_corpus_file(p, run.max_len)?;
            let (graphs, _) = compute_validity(&corpus.lines);
            info!("{}: {} of {} reference strings valid", p.display(), graphs.len(), corpus.lines.len());
            graphs
        }
        None => Vec::new(),
    };
    let report = build_report(
        &strings,
        &reference,
        &ReportOptions {
            radius: run.radius,
            max_len: run.max_len,
            pair_cap: run.pair_cap,
            seed: run.seed,
            skip_tanimoto: run.skip_tanimoto,
        },
    );
    info!(
        "{} strings, {} valid, unique {:?}%, {} distinct reaction centers",
        report.n_generated, report.n_valid, report.unique_pct, report.n_rc_distinct
    );
    write_text(report_path, &report.to_toml())?;
    write_run_config("eval", &run, report_path)?;
    Ok(())
}

// ---- validate

#[derive(Args, Serialize)]
pub struct ValidateArgs {
    /// Strings to check, one per line.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Per-line verdicts; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Summary counts.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateRun {
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    report: Option<PathBuf>,
    max_len: usize,
}

impl Default for ValidateRun {
    fn default() -> Self {
        ValidateRun { data: None, out: None, report: None, max_len: DEFAULT_MAX_LEN }
    }
}

/// Counts over one validated file. A line can fail several checks.
#[derive(Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct ValidationSummary {
    pub n_lines: usize,
    pub n_valid: usize,
    pub parse_failures: usize,
    pub valence_failures: usize,
    pub aromatic_failures: usize,
    /// Valid lines per hydrogen balance.
    pub h_balance: BTreeMap<String, usize>,
}

pub fn validate(file: Option<&Path>, args: &ValidateArgs) -> Outcome {
    let run: ValidateRun = resolve(file, args)?;
    let data = need(&run.data, "data")?;
    let entries = read_entries(data)?;
    let mut summary = ValidationSummary { n_lines: entries.len(), ..Default::default() };
    let mut lines = Vec::with_capacity(entries.len());
    for s in &entries {
        let r = validate_str(s, run.max_len);
        if !r.parse_ok {
            summary.parse_failures += 1;
        } else {
            summary.valence_failures += usize::from(!(r.valence_ok_before && r.valence_ok_after));
            summary.aromatic_failures += usize::from(!r.aromatic_ok);
        }
        let h = if r.is_valid() {
            summary.n_valid += 1;
            *summary.h_balance.entry(r.h_balance.to_string()).or_default() += 1;
            r.h_balance.to_string()
        } else {
            "-".to_string()
        };
        lines.push(format!("{s}\t{}\t{h}\t{}", u8::from(r.is_valid()), r.errors.join("; ")));
    }
    info!(
        "{} lines: {} valid, {} parse, {} valence and {} aromaticity failures",
        summary.n_lines, summary.n_valid, summary.parse_failures, summary.valence_failures, summary.aromatic_failures
    );
    write_lines(run.out.as_deref(), lines)?;
    if let Some(p) = &run.report {
        write_text(p, &toml::to_string(&summary).context("serializing summary")?)?;
    }
    match run.report.as_ref().or(run.out.as_ref()) {
        Some(p) => {
            write_run_config("validate", &run, p)?;
        }
        None => log_run_config("validate", &run),
    }
    Ok(())
}

// ---- rc

#[derive(Args, Serialize)]
pub struct RcArgs {
    /// Reaction strings, one per line.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Bond radius around the reaction center.
    #[arg(long)]
    radius: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RcRun {
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    radius: usize,
    max_len: usize,
}

impl Default for RcRun {
    fn default() -> Self {
        RcRun { data: None, out: None, radius: DEFAULT_RC_RADIUS, max_len: DEFAULT_MAX_LEN }
    }
}

/// Writes `string <tab> key <tab> center` per line, with `-` for the key
/// and the reason in place of the center when a line has none.
pub fn rc(file: Option<&Path>, args: &RcArgs) -> Outcome {
    let run: RcRun = resolve(file, args)?;
    let data = need(&run.data, "data")?;
    let entries = read_entries(data)?;
    let mut distinct = BTreeSet::new();
    let lines: Vec<String> = entries
        .iter()
        .map(|s| {
            let center = parse_cgrsmiles_with(s, run.max_len).map_err(|e| e.to_string()).and_then(|g| {
                let r = check(&g);
                if !r.is_valid() {
                    return Err(r.errors.join("; "));
                }
                reaction_center(&g, run.radius).map_err(|e| e.to_string())
            });
            match center {
                Ok(sub) => {
                    let key = rc_hash(&sub);
                    let line = format!("{s}\t{:016x}\t{}", key.key, key.canonical_form);
                    distinct.insert(key);
                    line
                }
                Err(e) => format!("{s}\t-\t{e}"),
            }
        })
        .collect();
    info!("{} lines, {} distinct reaction centers at radius {}", entries.len(), distinct.len(), run.radius);
    write_lines(run.out.as_deref(), lines)?;
    match &run.out {
        Some(p) => {
            write_run_config("rc", &run, p)?;
        }
        None => log_run_config("rc", &run),
    }
    Ok(())
}
