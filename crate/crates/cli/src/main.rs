use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use dstrc::decode::DecodeConfig;
use dstrc::eval::{config_fingerprint, tally, EvalReport};
use dstrc::examplegen::{GenerateOptions, GenerationMode, SerializedContext};
use dstrc::ingest::{self, multiwoz, DialogueCorpus, DomainFilter, Ontology};
use dstrc::readers::{
    ChoiceQuery, Endpoint, ExactMatchReader, ExternalReader, OracleReader, RandomReader, Reader, SpanQuery, WireRequest,
    WireResponse,
};
use dstrc::taxonomy::{self, ClassifyParams, QuestionTable, SlotSpec};
use dstrc::track::{read_predictions, write_predictions, ReaderSet, StatePrediction, TrackOptions, Tracker};
use dstrc::SlotName;

#[derive(Parser)]
#[command(name = "dstrc", version, about = "Dialogue state tracking as reading comprehension")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Convert a raw MultiWOZ dump into dialogues.json and ontology.json.
    Convert(ConvertArgs),
    /// Per-slot statistics and the extractive/categorical classification.
    Analyze(AnalyzeArgs),
    /// Emit reading-comprehension examples as JSONL.
    Generate(GenerateArgs),
    /// Predict dialogue states and write them as JSONL.
    Track(TrackArgs),
    /// Score predictions (or run a reader) against the gold states.
    Evaluate(EvaluateArgs),
    /// Answer reader-protocol requests on stdin/stdout.
    Serve(ServeArgs),
}

#[derive(Args)]
struct ConvertArgs {
    /// Raw data.json.
    #[arg(long)]
    raw: PathBuf,
    /// Raw ontology; when absent the ontology is derived from the states.
    #[arg(long)]
    raw_ontology: Option<PathBuf>,
    /// Dialogue ids of the validation split, one per line.
    #[arg(long)]
    val_list: Option<PathBuf>,
    /// Dialogue ids of the test split, one per line.
    #[arg(long)]
    test_list: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Split::All)]
    split: Split,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    All,
    Train,
    Val,
    Test,
}

#[derive(Args, Serialize)]
struct CorpusArgs {
    #[arg(long)]
    dialogues: PathBuf,
    #[arg(long)]
    ontology: PathBuf,
    /// JSON map of surface form → canonical value.
    #[arg(long)]
    aliases: Option<PathBuf>,
    /// Keep only dialogues touching these domains (comma separated).
    #[arg(long, value_delimiter = ',')]
    domains: Vec<String>,
    /// Few-shot fraction of dialogues to keep.
    #[arg(long)]
    fraction: Option<f64>,
    /// Seed of the few-shot sampler.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct SpecArgs {
    /// Precomputed slot specs; when absent they are derived from the corpus.
    #[arg(long)]
    specs: Option<PathBuf>,
    /// JSON map of slot → question.
    #[arg(long)]
    questions: Option<PathBuf>,
    #[arg(long, default_value_t = 15)]
    num_categorical: usize,
    #[arg(long, default_value_t = 0.80)]
    extractive_threshold: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ReaderKind {
    Oracle,
    ExactMatch,
    Random,
    External,
}

#[derive(Args, Serialize)]
struct ReaderArgs {
    #[arg(long, value_enum, default_value_t = ReaderKind::ExactMatch)]
    reader: ReaderKind,
    /// tcp://host:port or exec:<command> for --reader external.
    #[arg(long)]
    endpoint: Option<String>,
    /// Permit the gold-label oracle; its reports are watermarked.
    #[arg(long)]
    allow_oracle: bool,
    /// Seed of the random reader.
    #[arg(long, default_value_t = 0)]
    reader_seed: u64,
    /// Per-request timeout of the external reader, in seconds.
    #[arg(long, default_value_t = 60)]
    timeout_secs: u64,
    /// Requests in flight to the external reader.
    #[arg(long, default_value_t = 32)]
    max_inflight: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Ablation {
    NoCanonicalization,
    NoCategoricalModel,
}

#[derive(Args, Serialize)]
struct DecodeArgs {
    #[arg(long, default_value_t = 10)]
    max_span_len: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    null_threshold: f64,
    #[arg(long, default_value_t = 0.6)]
    similarity_cutoff: f64,
    #[arg(long, value_enum, value_delimiter = ',')]
    ablate: Vec<Ablation>,
    /// Record reader failures per slot instead of aborting.
    #[arg(long)]
    partial: bool,
    /// Keep the previous value when a slot decodes to none.
    #[arg(long)]
    carryover: bool,
}

impl DecodeArgs {
    fn config(&self) -> DecodeConfig<f64> {
        DecodeConfig {
            max_span_len: self.max_span_len,
            null_threshold: self.null_threshold,
            canonicalize: !self.ablate.contains(&Ablation::NoCanonicalization),
            similarity_cutoff: self.similarity_cutoff,
        }
    }

    fn options(&self) -> TrackOptions {
        TrackOptions {
            carryover: self.carryover,
            partial: self.partial,
            no_categorical_model: self.ablate.contains(&Ablation::NoCategoricalModel),
        }
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    spec: SpecArgs,
    /// Statistics CSV (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the slot specs as JSON.
    #[arg(long)]
    specs_out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long, value_enum, default_value_t = Mode::Both)]
    mode: Mode,
    /// Skip choice examples whose gold value is not an option.
    #[arg(long)]
    skip_off_ontology: bool,
    /// JSONL output (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Span,
    Choice,
    Both,
}

#[derive(Args)]
struct TrackArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    spec: SpecArgs,
    #[command(flatten)]
    reader: ReaderArgs,
    #[command(flatten)]
    decode: DecodeArgs,
    /// Predictions JSONL; a `.meta.json` sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    spec: SpecArgs,
    #[command(flatten)]
    reader: ReaderArgs,
    #[command(flatten)]
    decode: DecodeArgs,
    /// Score an existing predictions file instead of running a reader.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Output directory for report.json, summary.csv and slots.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, value_enum, default_value_t = ServeReader::Random)]
    reader: ServeReader,
    /// Ontology for the exact-match reader.
    #[arg(long)]
    ontology: Option<PathBuf>,
    #[arg(long)]
    aliases: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ServeReader {
    Random,
    ExactMatch,
}

/// What a predictions file was produced with.
#[derive(Serialize, Deserialize)]
struct RunMeta {
    reader: String,
    oracle: bool,
    config_fingerprint: String,
    config: serde_json::Value,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DSTRC_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.cmd {
        Cmd::Convert(a) => convert(a),
        Cmd::Analyze(a) => analyze(a),
        Cmd::Generate(a) => generate(a),
        Cmd::Track(a) => track(a),
        Cmd::Evaluate(a) => evaluate(a),
        Cmd::Serve(a) => serve(a),
    }
}

fn read_id_list(path: &Path) -> Result<HashSet<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_owned).collect())
}

fn convert(a: ConvertArgs) -> Result<()> {
    let text = fs::read_to_string(&a.raw).with_context(|| format!("reading {}", a.raw.display()))?;
    let val = a.val_list.as_deref().map(read_id_list).transpose()?;
    let test = a.test_list.as_deref().map(read_id_list).transpose()?;
    let (keep, drop) = match a.split {
        Split::All => (None, None),
        Split::Val => (Some(val.context("--split val needs --val-list")?), None),
        Split::Test => (Some(test.context("--split test needs --test-list")?), None),
        Split::Train => {
            let mut held_out = val.unwrap_or_default();
            held_out.extend(test.unwrap_or_default());
            (None, Some(held_out))
        }
    };
    let records = multiwoz::convert_raw(&a.raw, &text, keep.as_ref(), drop.as_ref())?;
    let ontology = match &a.raw_ontology {
        Some(p) => {
            let t = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            multiwoz::convert_raw_ontology(p, &t)?
        }
        None => multiwoz::derive_ontology(&records),
    };
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("dialogues.json"), &records)?;
    write_json(&a.out.join("ontology.json"), &ontology)?;
    log::info!("converted {} dialogues", records.len());
    Ok(())
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn load(c: &CorpusArgs) -> Result<DialogueCorpus> {
    let filter = if c.domains.is_empty() {
        DomainFilter::default()
    } else {
        DomainFilter::only(c.domains.iter().cloned())
    };
    let corpus = ingest::load_corpus_with(&c.dialogues, &c.ontology, c.aliases.as_deref(), &filter)?;
    Ok(match c.fraction {
        Some(f) => ingest::subsample_fewshot(&corpus, f, c.seed)?,
        None => corpus,
    })
}

fn questions(s: &SpecArgs) -> Result<QuestionTable> {
    Ok(match &s.questions {
        Some(p) => QuestionTable::from_file(p)?,
        None => QuestionTable::builtin(),
    })
}

fn specs(s: &SpecArgs, corpus: &DialogueCorpus) -> Result<Vec<SlotSpec>> {
    if let Some(p) = &s.specs {
        return Ok(taxonomy::read_specs(p)?);
    }
    let stats = taxonomy::compute_slot_stats(corpus)?;
    Ok(taxonomy::classify_slots(
        &stats,
        &corpus.ontology,
        &questions(s)?,
        ClassifyParams {
            num_categorical: s.num_categorical,
            extractive_threshold: s.extractive_threshold,
        },
    )?)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let corpus = load(&a.corpus)?;
    let stats = taxonomy::compute_slot_stats(&corpus)?;
    let specs = specs(&a.spec, &corpus)?;
    let mut out = output(a.out.as_deref())?;
    taxonomy::write_stats_csv(&mut out, &stats, &specs)?;
    out.flush()?;
    if let Some(p) = &a.specs_out {
        write_json(p, &specs)?;
    }
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let corpus = load(&a.corpus)?;
    let specs = specs(&a.spec, &corpus)?;
    let mode = match a.mode {
        Mode::Span => GenerationMode::Span,
        Mode::Choice => GenerationMode::Choice,
        Mode::Both => GenerationMode::Both,
    };
    let mut out = output(a.out.as_deref())?;
    let report = dstrc::examplegen::write_jsonl(
        &corpus,
        &specs,
        GenerateOptions {
            mode,
            skip_off_ontology: a.skip_off_ontology,
        },
        &mut out,
    )?;
    out.flush()?;
    eprintln!("{}", serde_json::to_string(&report)?);
    Ok(())
}

/// The resolved configuration of a track or evaluate run.
#[derive(Serialize)]
struct RunConfig<'a> {
    corpus: &'a CorpusArgs,
    spec: &'a SpecArgs,
    reader: &'a ReaderArgs,
    decode: DecodeConfig<f64>,
    track: TrackOptions,
}

/// The part of the configuration that affects predictions.
#[derive(Serialize)]
struct Fingerprinted<'a> {
    reader: ReaderKind,
    endpoint: Option<&'a str>,
    reader_seed: u64,
    decode: DecodeConfig<f64>,
    track: TrackOptions,
}

fn build_readers(r: &ReaderArgs, corpus: &Arc<DialogueCorpus>) -> Result<ReaderSet<f64>> {
    if r.endpoint.is_some() && r.reader != ReaderKind::External {
        bail!("--endpoint is only meaningful with --reader external");
    }
    let reader: Arc<dyn Reader<f64>> = match r.reader {
        ReaderKind::Oracle => {
            if !r.allow_oracle {
                bail!("the oracle reader reads gold labels; pass --allow-oracle to run it (its reports are watermarked)");
            }
            Arc::new(OracleReader::new(corpus.clone()))
        }
        ReaderKind::ExactMatch => Arc::new(ExactMatchReader::new(Arc::new(corpus.ontology.clone()))),
        ReaderKind::Random => Arc::new(RandomReader::new(r.reader_seed)),
        ReaderKind::External => {
            let spec = r.endpoint.as_deref().context("--reader external needs --endpoint")?;
            let endpoint: Endpoint = spec.parse()?;
            Arc::new(ExternalReader::connect(&endpoint, Duration::from_secs(r.timeout_secs), r.max_inflight)?)
        }
    };
    Ok(ReaderSet::single(reader))
}

struct Run {
    predictions: Vec<StatePrediction>,
    meta: RunMeta,
}

fn run_tracker(
    corpus: &Arc<DialogueCorpus>,
    specs: &[SlotSpec],
    c: &CorpusArgs,
    s: &SpecArgs,
    r: &ReaderArgs,
    d: &DecodeArgs,
) -> Result<Run> {
    let config = d.config();
    let options = d.options();
    let readers = build_readers(r, corpus)?;
    let tracker = Tracker::new(specs, &readers, &corpus.ontology, &config, options)?;
    let predictions = tracker.predict_corpus(corpus)?;
    let failures: usize = predictions.iter().map(|p| p.failures.len()).sum();
    if failures > 0 {
        log::warn!("{failures} slot predictions failed and were set to none");
    }
    let resolved = RunConfig {
        corpus: c,
        spec: s,
        reader: r,
        decode: config,
        track: options,
    };
    let fingerprinted = Fingerprinted {
        reader: r.reader,
        endpoint: r.endpoint.as_deref(),
        reader_seed: r.reader_seed,
        decode: config,
        track: options,
    };
    Ok(Run {
        predictions,
        meta: RunMeta {
            reader: readers.name(),
            oracle: readers.is_oracle(),
            config_fingerprint: config_fingerprint(&fingerprinted, specs)?,
            config: serde_json::to_value(&resolved)?,
        },
    })
}

fn meta_path(predictions: &Path) -> PathBuf {
    let mut name = predictions.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    predictions.with_file_name(name)
}

fn track(a: TrackArgs) -> Result<()> {
    let corpus = Arc::new(load(&a.corpus)?);
    let specs = specs(&a.spec, &corpus)?;
    let run = run_tracker(&corpus, &specs, &a.corpus, &a.spec, &a.reader, &a.decode)?;
    let out = BufWriter::new(File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?);
    write_predictions(out, &run.predictions)?;
    write_json(&meta_path(&a.out), &run.meta)?;
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let corpus = Arc::new(load(&a.corpus)?);
    let run = match &a.predictions {
        Some(p) => {
            let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            let predictions = read_predictions(BufReader::new(file))?;
            let mp = meta_path(p);
            let meta = if mp.exists() {
                serde_json::from_reader(BufReader::new(File::open(&mp)?))
                    .with_context(|| format!("parsing {}", mp.display()))?
            } else {
                RunMeta {
                    reader: "unknown".into(),
                    oracle: false,
                    config_fingerprint: String::new(),
                    config: serde_json::Value::Null,
                }
            };
            if meta.oracle && !a.reader.allow_oracle {
                bail!("{} holds oracle predictions; pass --allow-oracle to score them", p.display());
            }
            Run { predictions, meta }
        }
        None => {
            let specs = specs(&a.spec, &corpus)?;
            run_tracker(&corpus, &specs, &a.corpus, &a.spec, &a.reader, &a.decode)?
        }
    };
    let t = tally(&run.predictions, &corpus)?;
    let report = EvalReport::new(&t, &run.meta.reader, run.meta.oracle, run.meta.config_fingerprint, run.meta.config)?;
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("report.json"), &report)?;
    report.write_summary_csv(File::create(a.out.join("summary.csv"))?)?;
    report.write_slot_csv(File::create(a.out.join("slots.csv"))?)?;
    if report.is_oracle() {
        eprintln!("note: oracle reader; these numbers are an upper bound, not a result");
    }
    println!("joint goal accuracy {:.4} over {} turns", report.joint_goal_accuracy, report.num_turns);
    Ok(())
}

/// Recovers `(dialogue, turn, slot)` from a `dialogue:turn:slot#n` request id.
fn parse_request_id(id: &str) -> Option<(&str, usize, SlotName)> {
    let base = id.rsplit_once('#').map_or(id, |(b, _)| b);
    let (rest, slot) = base.rsplit_once(':')?;
    let (dialogue, turn) = rest.rsplit_once(':')?;
    Some((dialogue, turn.parse().ok()?, slot.parse().ok()?))
}

fn answer(reader: &dyn Reader<f64>, req: &WireRequest) -> Result<WireResponse, String> {
    let (dialogue, turn, slot) =
        parse_request_id(&req.id).ok_or_else(|| format!("cannot parse request id `{}`", req.id))?;
    let base = req.id.rsplit_once('#').map_or(req.id.as_str(), |(b, _)| b);
    let context = SerializedContext::from_wire_tokens(&req.tokens);
    let mut resp = WireResponse {
        id: req.id.clone(),
        start_logits: None,
        end_logits: None,
        option_logits: None,
        error: None,
    };
    match req.kind.as_str() {
        "span" => {
            let q = SpanQuery {
                id: base,
                dialogue_id: dialogue,
                turn,
                slot: &slot,
                question: &req.question,
                context: &context,
            };
            let s = reader.score_span(&q).map_err(|e| e.to_string())?;
            resp.start_logits = Some(s.start_logits);
            resp.end_logits = Some(s.end_logits);
        }
        "choice" => {
            let options = req.options.as_deref().ok_or("choice request without options")?;
            let q = ChoiceQuery {
                id: base,
                dialogue_id: dialogue,
                turn,
                slot: &slot,
                question: &req.question,
                context: &context,
                options,
            };
            resp.option_logits = Some(reader.score_choice(&q).map_err(|e| e.to_string())?.option_logits);
        }
        other => return Err(format!("unknown request type `{other}`")),
    }
    Ok(resp)
}

fn serve(a: ServeArgs) -> Result<()> {
    let reader: Box<dyn Reader<f64>> = match a.reader {
        ServeReader::Random => Box::new(RandomReader::new(a.seed)),
        ServeReader::ExactMatch => {
            let path = a.ontology.as_deref().context("--reader exact-match needs --ontology")?;
            let ontology: Ontology = ingest::read_ontology(path, a.aliases.as_deref())?;
            Box::new(ExactMatchReader::new(Arc::new(ontology)))
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for line in io::stdin().lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("skipping malformed request: {e}");
                continue;
            }
        };
        if value.get("type").and_then(|t| t.as_str()) == Some("shutdown") {
            break;
        }
        let resp = match serde_json::from_value::<WireRequest>(value.clone()) {
            Ok(req) => answer(reader.as_ref(), &req).unwrap_or_else(|e| error_response(&req.id, e)),
            Err(e) => {
                let id = value.get("id").and_then(|i| i.as_str()).unwrap_or_default();
                error_response(id, e.to_string())
            }
        };
        serde_json::to_writer(&mut out, &resp)?;
        out.write_all(b"\n")?;
        out.flush()?;
    }
    Ok(())
}

fn error_response(id: &str, error: String) -> WireResponse {
    WireResponse {
        id: id.to_owned(),
        start_logits: None,
        end_logits: None,
        option_logits: None,
        error: Some(error),
    }
}

