//! The `mbridge` command line: corpus generation, auto-encoder pre-training,
//! captioner training and ablation, inference and evaluation.
//!
//! Exit codes are 0 on success, 2 for usage or validation errors and 1 for
//! runtime failures.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use mbridge::captioner::{greedy_scores, CaptionSample, CaptionerEpoch, CaptionerTrainer, GreedyScores, TrainData};
use mbridge::checkpoint::{load_autoencoder, load_captioner, Checkpoint};
use mbridge::config::RunConfig;
use mbridge::metrics::{evaluate, spearman, EvalCorpus, EvalReport};
use mbridge::mtm::{ModalityLossKind, RegionFeatures};
use mbridge::synthdata::{build_corpus, read_jsonl, read_manifest, read_records, CaptionRecord, Manifest, MANIFEST_FILE};
use mbridge::textae::{AeEpoch, AeTrainer, AutoEncoder};
use mbridge::vocab::Vocabulary;

pub const AE_CHECKPOINT: &str = "ae.ckpt";
pub const AE_TRACE: &str = "ae_trace.csv";
pub const CAPTIONER_CHECKPOINT: &str = "captioner.ckpt";
pub const CAPTIONER_TRACE: &str = "captioner_trace.csv";
pub const CAPTIONS_FILE: &str = "captions.jsonl";
pub const EVAL_JSON: &str = "eval.json";
pub const EVAL_CSV: &str = "eval.csv";
pub const PLOT_DATA: &str = "plot_data.csv";
pub const ABLATION_TABLE: &str = "ablation.csv";

pub const AE_TRACE_HEADER: &str = "epoch,loss,token_acc";
pub const CAPTIONER_TRACE_HEADER: &str = "epoch,ce_loss,modality_loss,val_BLEU4,val_ROUGE_L,val_CIDEr";
pub const ABLATION_HEADER: &str =
    "variant,modality_loss,val_BLEU4,val_ROUGE_L,val_CIDEr,test_BLEU4,test_ROUGE_L,test_CIDEr,test_exact";

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, inputs or configuration (exit code 2).
    #[error("{0}")]
    Usage(String),
    /// Failure while running a valid command (exit code 1).
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<mbridge::Error> for CliError {
    fn from(e: mbridge::Error) -> Self {
        match e {
            mbridge::Error::Training { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "mbridge", version, about = "Modality-transition captioning pipeline")]
pub struct Cli {
    /// JSON run configuration; unspecified fields keep their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed override (corpus seed for gen-data, training seed otherwise).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus (train/val/test JSONL and a manifest).
    GenData(GenDataArgs),
    /// Pre-train the caption auto-encoder.
    TrainAe(TrainAeArgs),
    /// Train the captioner against a frozen auto-encoder.
    TrainCaptioner(TrainCaptionerArgs),
    /// Caption region features with a trained model.
    Caption(CaptionArgs),
    /// Score candidate captions against references.
    Eval(EvalArgs),
    /// Train the no-transition baseline and every modality loss variant.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Number of scenes.
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainAeArgs {
    /// Corpus directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Continue from an auto-encoder checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainCaptionerArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Auto-encoder checkpoint providing the caption codes.
    #[arg(long)]
    pub ae: PathBuf,
    /// One of mse, mae, cos, kld, mmd.
    #[arg(long)]
    pub modality_loss: Option<ModalityLossKind>,
    /// Bridge the pooled visual feature directly (no transition, no modality loss).
    #[arg(long)]
    pub no_mtm: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CaptionArgs {
    /// Captioner checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// JSONL records with `id` (or `scene_id`) and `features`.
    #[arg(long)]
    pub input: PathBuf,
    /// Corpus manifest whose vocabulary must match the model's; defaults to
    /// the manifest next to the input file.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Beam width; greedy decoding when absent.
    #[arg(long)]
    pub beam: Option<usize>,
    /// Output file; defaults to `<out>/captions.jsonl`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSONL records `{"id", "tokens"}`, one per id.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    /// JSONL records `{"id", "tokens"}`; repeated ids add references.
    #[arg(long)]
    pub references: Option<PathBuf>,
    /// Captioner trace CSV to turn into (epoch, modality_loss, CIDEr) plot data.
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub ae: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        match cli.command {
            Command::GenData(_) => config.corpus_seed = seed,
            _ => config.seed = seed,
        }
    }
    match &cli.command {
        Command::GenData(a) => {
            if let Some(n) = a.n {
                config.n_scenes = n;
            }
        }
        Command::TrainAe(a) => {
            if let Some(e) = a.epochs {
                config.ae_epochs = e;
            }
        }
        Command::TrainCaptioner(a) => {
            if let Some(k) = a.modality_loss {
                config.modality_loss = k;
            }
            if a.no_mtm {
                config.use_mtm = false;
            }
            if let Some(e) = a.epochs {
                config.epochs = e;
            }
        }
        Command::Ablate(a) => {
            if let Some(e) = a.epochs {
                config.epochs = e;
            }
        }
        Command::Caption(_) | Command::Eval(_) => {}
    }
    config.validate()?;
    match cli.command {
        Command::GenData(_) => {
            let out = cli.out.unwrap_or_else(|| config.data_dir.clone());
            gen_data(&config, &out)
        }
        Command::TrainAe(a) => {
            let data = a.data.unwrap_or_else(|| config.data_dir.clone());
            let out = cli.out.unwrap_or_else(|| config.out_dir.clone());
            train_ae(&config, &data, &out, a.resume.as_deref(), a.epochs)
        }
        Command::TrainCaptioner(a) => {
            let data = a.data.unwrap_or_else(|| config.data_dir.clone());
            let out = cli.out.unwrap_or_else(|| config.out_dir.clone());
            let corpus = Corpus::load(&data)?;
            let ae = load_ae(&a.ae, &corpus.manifest.vocabulary)?;
            check_dims(&config, &corpus, &ae)?;
            train_captioner(&config, &corpus, &ae, &out, a.resume.as_deref(), a.epochs)?;
            Ok(())
        }
        Command::Caption(a) => {
            let out = cli.out.unwrap_or_else(|| config.out_dir.clone());
            let output = a.output.clone().unwrap_or_else(|| out.join(CAPTIONS_FILE));
            caption(&a, &output)
        }
        Command::Eval(a) => {
            let out = cli.out.unwrap_or_else(|| config.out_dir.clone());
            eval(&a, &out)
        }
        Command::Ablate(a) => {
            let data = a.data.unwrap_or_else(|| config.data_dir.clone());
            let out = cli.out.unwrap_or_else(|| config.out_dir.clone());
            let corpus = Corpus::load(&data)?;
            let ae = load_ae(&a.ae, &corpus.manifest.vocabulary)?;
            check_dims(&config, &corpus, &ae)?;
            ablate(&config, &corpus, &ae, &out)
        }
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

/// Saves through a temporary file so an interrupted run leaves the previous
/// checkpoint intact.
fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> CliResult<()> {
    let tmp = path.with_extension("ckpt.tmp");
    ckpt.save(&tmp)?;
    fs::rename(&tmp, path).map_err(|e| CliError::Runtime(format!("cannot move checkpoint to {}: {e}", path.display())))
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    if !path.is_file() {
        return Err(usage(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

pub fn gen_data(config: &RunConfig, out: &Path) -> CliResult<()> {
    let manifest = build_corpus(out, &config.corpus_spec())?;
    println!("{}", manifest.display());
    Ok(())
}

/// A corpus directory: manifest plus the three splits.
pub struct Corpus {
    pub manifest: Manifest,
    pub train: Vec<CaptionRecord>,
    pub val: Vec<CaptionRecord>,
    pub test: Vec<CaptionRecord>,
}

impl Corpus {
    pub fn load(dir: &Path) -> CliResult<Self> {
        let file = |name: &str| -> CliResult<PathBuf> {
            let p = dir.join(name);
            if p.is_file() {
                Ok(p)
            } else {
                Err(usage(format!("corpus file {} is missing", p.display())))
            }
        };
        let manifest = read_manifest(&file(MANIFEST_FILE)?)?;
        let train = read_records(&file("train.jsonl")?)?;
        let val = read_records(&file("val.jsonl")?)?;
        let test = read_records(&file("test.jsonl")?)?;
        if train.is_empty() {
            return Err(usage(format!("{} has an empty training split", dir.display())));
        }
        Ok(Self { manifest, train, val, test })
    }

    fn samples(&self, records: &[CaptionRecord]) -> CliResult<Vec<CaptionSample<f64>>> {
        Ok(CaptionSample::from_records(records, &self.manifest.vocabulary)?)
    }
}

fn content_sequences(records: &[CaptionRecord], vocab: &Vocabulary) -> CliResult<Vec<Vec<usize>>> {
    records.iter().map(|r| Ok(vocab.encode(&r.caption).content()?.to_vec())).collect()
}

pub fn ae_trace_csv(trace: &[AeEpoch]) -> String {
    let mut s = format!("{AE_TRACE_HEADER}\n");
    for r in trace {
        writeln!(s, "{},{},{}", r.epoch, r.loss, r.token_acc).expect("write to string");
    }
    s
}

pub fn captioner_trace_csv(trace: &[CaptionerEpoch]) -> String {
    let mut s = format!("{CAPTIONER_TRACE_HEADER}\n");
    for r in trace {
        let m = r.modality_loss.map(|m| m.to_string()).unwrap_or_default();
        writeln!(s, "{},{},{m},{},{},{}", r.epoch, r.ce_loss, r.val_bleu4, r.val_rouge_l, r.val_cider).expect("write to string");
    }
    s
}

pub fn train_ae(config: &RunConfig, data: &Path, out: &Path, resume: Option<&Path>, epochs: Option<usize>) -> CliResult<()> {
    let corpus = Corpus::load(data)?;
    let vocab = &corpus.manifest.vocabulary;
    let seqs = content_sequences(&corpus.train, vocab)?;
    let mut trainer = match resume {
        Some(p) => {
            let ckpt = load_checkpoint(p)?;
            if &ckpt.vocabulary != vocab {
                return Err(usage("checkpoint vocabulary differs from the corpus manifest"));
            }
            AeTrainer::<f64>::resume(&ckpt, epochs)?
        }
        None => AeTrainer::new(config.ae_dims(vocab.len()), config.ae_config())?,
    };
    create_dir(out)?;
    let ckpt_path = out.join(AE_CHECKPOINT);
    while trainer.epochs_done() < trainer.config.epochs {
        let row = trainer.run_epoch(&seqs)?;
        eprintln!("ae epoch {:>4}  loss {:.5}  token_acc {:.4}", row.epoch, row.loss, row.token_acc);
        save_checkpoint(&trainer.checkpoint(vocab), &ckpt_path)?;
    }
    save_checkpoint(&trainer.checkpoint(vocab), &ckpt_path)?;
    write_file(&out.join(AE_TRACE), &ae_trace_csv(&trainer.trace))?;
    let (tok, exact) = trainer.model.reconstruction_accuracy(&seqs)?;
    println!("{}", serde_json::json!({"checkpoint": ckpt_path, "token_accuracy": tok, "exact_match": exact}));
    Ok(())
}

fn load_ae(path: &Path, vocab: &Vocabulary) -> CliResult<AutoEncoder<f64>> {
    let ckpt = load_checkpoint(path)?;
    if &ckpt.vocabulary != vocab {
        return Err(usage(format!("auto-encoder vocabulary ({} tokens) differs from the corpus manifest ({} tokens)", ckpt.vocabulary.len(), vocab.len())));
    }
    Ok(load_autoencoder(&ckpt)?)
}

fn check_dims(config: &RunConfig, corpus: &Corpus, ae: &AutoEncoder<f64>) -> CliResult<()> {
    if ae.dims.d_e != config.d_e {
        return Err(usage(format!("config d_e = {} but the auto-encoder has d_e = {}", config.d_e, ae.dims.d_e)));
    }
    if corpus.manifest.d_v != config.d_v {
        return Err(usage(format!("config d_v = {} but the corpus has d_v = {}", config.d_v, corpus.manifest.d_v)));
    }
    Ok(())
}

/// Trains one captioner into `out`; returns the trainer for reporting.
pub fn train_captioner(
    config: &RunConfig,
    corpus: &Corpus,
    ae: &AutoEncoder<f64>,
    out: &Path,
    resume: Option<&Path>,
    epochs: Option<usize>,
) -> CliResult<CaptionerTrainer<f64>> {
    let vocab = &corpus.manifest.vocabulary;
    let data = TrainData::new(ae, corpus.samples(&corpus.train)?, corpus.samples(&corpus.val)?)?;
    let mut trainer = match resume {
        Some(p) => {
            let ckpt = load_checkpoint(p)?;
            if &ckpt.vocabulary != vocab {
                return Err(usage("checkpoint vocabulary differs from the corpus manifest"));
            }
            let t = CaptionerTrainer::<f64>::resume(&ckpt, epochs)?;
            if t.model.dims.d_v != corpus.manifest.d_v || t.model.dims.d_e != ae.dims.d_e {
                return Err(usage(format!(
                    "checkpoint has d_v = {}, d_e = {} but the corpus has d_v = {} and the auto-encoder d_e = {}",
                    t.model.dims.d_v, t.model.dims.d_e, corpus.manifest.d_v, ae.dims.d_e
                )));
            }
            t
        }
        None => CaptionerTrainer::new(config.captioner_config(), vocab.len(), corpus.manifest.d_v, ae.dims.d_e)?,
    };
    create_dir(out)?;
    let ckpt_path = out.join(CAPTIONER_CHECKPOINT);
    while trainer.epochs_done() < trainer.config.epochs {
        let r = trainer.run_epoch(&data)?;
        eprintln!(
            "captioner epoch {:>4}  ce {:.5}  modality {}  val BLEU-4 {:.4}  ROUGE-L {:.4}  CIDEr {:.4}  exact {:.3}",
            r.epoch,
            r.ce_loss,
            r.modality_loss.map(|m| format!("{m:.5}")).unwrap_or_else(|| "-".into()),
            r.val_bleu4,
            r.val_rouge_l,
            r.val_cider,
            r.val_exact
        );
        save_checkpoint(&trainer.checkpoint(vocab), &ckpt_path)?;
    }
    save_checkpoint(&trainer.checkpoint(vocab), &ckpt_path)?;
    write_file(&out.join(CAPTIONER_TRACE), &captioner_trace_csv(&trainer.trace))?;
    println!("{}", ckpt_path.display());
    Ok(trainer)
}

#[derive(Debug, Deserialize)]
struct FeatureRecord {
    #[serde(alias = "scene_id")]
    id: u64,
    features: Vec<Vec<f64>>,
}

/// One caption line: `{"id": 3, "tokens": ["a", "small", ...]}`. Corpus
/// records (`scene_id`, `caption`) are accepted as well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    #[serde(alias = "scene_id")]
    pub id: u64,
    #[serde(alias = "caption")]
    pub tokens: Vec<String>,
}

pub fn caption(args: &CaptionArgs, output: &Path) -> CliResult<()> {
    if !args.input.is_file() {
        return Err(usage(format!("input {} does not exist", args.input.display())));
    }
    if args.beam == Some(0) {
        return Err(usage("--beam must be at least 1"));
    }
    let ckpt = load_checkpoint(&args.model)?;
    let manifest_path = match &args.manifest {
        Some(p) => p.clone(),
        None => args.input.parent().unwrap_or(Path::new(".")).join(MANIFEST_FILE),
    };
    if !manifest_path.is_file() {
        return Err(usage(format!("manifest {} does not exist (pass --manifest)", manifest_path.display())));
    }
    let manifest = read_manifest(&manifest_path)?;
    if ckpt.vocabulary != manifest.vocabulary {
        return Err(usage(format!(
            "model vocabulary ({} tokens) differs from {} ({} tokens)",
            ckpt.vocabulary.len(),
            manifest_path.display(),
            manifest.vocabulary.len()
        )));
    }
    let (model, _) = load_captioner::<f64>(&ckpt)?;
    let records: Vec<FeatureRecord> = read_jsonl(&args.input)?;
    let mut lines = String::new();
    for r in &records {
        let regions = RegionFeatures::from_rows(&r.features).map_err(|e| usage(format!("record {}: {e}", r.id)))?;
        if regions.dim() != model.dims.d_v {
            return Err(usage(format!("record {} has d_v = {} but the model expects {}", r.id, regions.dim(), model.dims.d_v)));
        }
        let seq = match args.beam {
            Some(w) => model.beam_decode(&regions, w)?,
            None => model.greedy_decode(&regions)?,
        };
        let tokens = ckpt.vocabulary.words(seq.content()?);
        let line = serde_json::to_string(&TokenRecord { id: r.id, tokens }).expect("record serializes");
        lines.push_str(&line);
        lines.push('\n');
    }
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_file(output, &lines)?;
    println!("{}", output.display());
    Ok(())
}

fn read_tokens(path: &Path) -> CliResult<Vec<(u64, Vec<String>)>> {
    if !path.is_file() {
        return Err(usage(format!("{} does not exist", path.display())));
    }
    let recs: Vec<TokenRecord> = read_jsonl(path)?;
    Ok(recs.into_iter().map(|r| (r.id, r.tokens)).collect())
}

/// One row of a captioner trace CSV.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub ce_loss: f64,
    pub modality_loss: Option<f64>,
    #[serde(rename = "val_BLEU4")]
    pub val_bleu4: f64,
    #[serde(rename = "val_ROUGE_L")]
    pub val_rouge_l: f64,
    #[serde(rename = "val_CIDEr")]
    pub val_cider: f64,
}

pub fn read_trace(path: &Path) -> CliResult<Vec<TraceRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .collect::<Result<Vec<TraceRow>, _>>()
        .map_err(|e| usage(format!("{}: {e}", path.display())))
}

pub fn eval(args: &EvalArgs, out: &Path) -> CliResult<()> {
    if args.candidates.is_none() && args.references.is_none() && args.plot_data.is_none() {
        return Err(usage("nothing to do: pass --candidates and --references, or --plot-data"));
    }
    create_dir(out)?;
    match (&args.candidates, &args.references) {
        (Some(c), Some(r)) => {
            let cands = read_tokens(c)?;
            if cands.is_empty() {
                return Err(usage(format!("{} has no candidates", c.display())));
            }
            let refs = read_tokens(r)?;
            let corpus = EvalCorpus::from_words(&cands, &refs)?;
            let report = evaluate(&corpus)?;
            write_file(&out.join(EVAL_JSON), &(report.to_json() + "\n"))?;
            write_file(&out.join(EVAL_CSV), &format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row()))?;
            println!("{}", report.to_json());
        }
        (None, None) => {}
        _ => return Err(usage("--candidates and --references go together")),
    }
    if let Some(trace) = &args.plot_data {
        let rows = read_trace(trace)?;
        let pairs: Vec<(usize, f64, f64)> =
            rows.iter().filter_map(|r| r.modality_loss.map(|m| (r.epoch, m, r.val_cider))).collect();
        if pairs.is_empty() {
            return Err(usage(format!("{} has no modality loss values", trace.display())));
        }
        let mut s = String::from("epoch,modality_loss,val_CIDEr\n");
        for (e, m, c) in &pairs {
            writeln!(s, "{e},{m},{c}").expect("write to string");
        }
        let path = out.join(PLOT_DATA);
        write_file(&path, &s)?;
        let (ms, cs): (Vec<f64>, Vec<f64>) = pairs.iter().map(|&(_, m, c)| (m, c)).unzip();
        let rho = if pairs.len() >= 2 { spearman(&ms, &cs).ok() } else { None };
        println!("{}", serde_json::json!({"plot_data": path, "spearman_modality_cider": rho}));
    }
    Ok(())
}

/// The ablation variants: the no-transition baseline, then every loss.
pub fn ablation_variants() -> Vec<(String, Option<ModalityLossKind>)> {
    std::iter::once(("baseline".to_string(), None))
        .chain(ModalityLossKind::ALL.into_iter().map(|k| (k.as_str().to_string(), Some(k))))
        .collect()
}

pub struct AblationRow {
    pub variant: String,
    pub last: CaptionerEpoch,
    pub test: GreedyScores,
}

impl AblationRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.variant,
            self.last.modality_loss.map(|m| m.to_string()).unwrap_or_default(),
            self.last.val_bleu4,
            self.last.val_rouge_l,
            self.last.val_cider,
            self.test.bleu4,
            self.test.rouge_l,
            self.test.cider,
            self.test.exact
        )
    }
}

pub fn ablate(config: &RunConfig, corpus: &Corpus, ae: &AutoEncoder<f64>, out: &Path) -> CliResult<()> {
    let test = corpus.samples(&corpus.test)?;
    if test.is_empty() {
        return Err(usage("the corpus has an empty test split"));
    }
    let mut rows = Vec::new();
    for (name, kind) in ablation_variants() {
        let mut c = config.clone();
        c.use_mtm = kind.is_some();
        if let Some(k) = kind {
            c.modality_loss = k;
        }
        c.validate()?;
        eprintln!("ablation: {name}");
        let trainer = train_captioner(&c, corpus, ae, &out.join(&name), None, None)?;
        let last = *trainer.trace.last().ok_or_else(|| usage("ablation needs at least one epoch"))?;
        rows.push(AblationRow { variant: name, last, test: greedy_scores(&trainer.model, &test)? });
    }
    let mut table = format!("{ABLATION_HEADER}\n");
    for r in &rows {
        table.push_str(&r.csv());
        table.push('\n');
    }
    write_file(&out.join(ABLATION_TABLE), &table)?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{:<10} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}", "variant", "modality", "val B4", "val R-L", "val CIDEr", "test B4", "test CIDEr", "exact")
        .and_then(|_| {
            rows.iter().try_for_each(|r| {
                writeln!(
                    stdout,
                    "{:<10} {:>9} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.3}",
                    r.variant,
                    r.last.modality_loss.map(|m| format!("{m:.4}")).unwrap_or_else(|| "-".into()),
                    r.last.val_bleu4,
                    r.last.val_rouge_l,
                    r.last.val_cider,
                    r.test.bleu4,
                    r.test.cider,
                    r.test.exact
                )
            })
        })
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(())
}
