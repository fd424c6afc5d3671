//! `mbr-probe` command-line interface.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use mbr_probe::accuracy::{audit_report, OverlapMode, SystemOutputs};
use mbr_probe::corpus::{load_corpus, Corpus, RawSpan, Span, SpanKind};
use mbr_probe::mbr::{mbr_decode, CandidateSource, MatrixOptions, SupportSource};
use mbr_probe::metrics::{as_utility, MetricKind, Utility};
use mbr_probe::perturb::{parse_kinds, BaseSource};
use mbr_probe::rpc::client::{connect, split_command, ConnectOptions, RemoteUtility};
use mbr_probe::sensitivity::{aggregate, analyze_each, SensitivitySetup, SupportMode};
use mbr_probe::synthgen::{self, generate_synthetic, mix, read_examples, write_examples, SynthConfig};
use mbr_probe::tsv;

const EXIT_CONFIG: u8 = 1;
const EXIT_PARTIAL: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "mbr-probe", version, about = "MBR decoding as a probe for blind spots of MT metrics")]
#[command(args_conflicts_with_subcommands = true)]
struct Cli {
    /// Worker threads, and scorer processes for remote utilities. Output does not depend on it.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Read the whole run configuration from a JSON file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<RunConfig>,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
enum RunConfig {
    /// MBR-decode every segment of a corpus.
    Decode(DecodeArgs),
    /// Per-kind mean |MBR score difference| of perturbed candidates.
    Sensitivity(SensitivityArgs),
    /// Number and named-entity error rates of system outputs.
    Audit(AuditArgs),
    /// Generate perturbed synthetic metric-training examples.
    Synth(SynthArgs),
    /// Check a scorer command against the scorer protocol.
    Conformance(ConformanceArgs),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Format {
    #[default]
    Tsv,
    Json,
}

fn default_utility() -> String {
    "chrf++".into()
}

fn default_support() -> SupportMode {
    SupportMode::Samples
}

fn default_base() -> BaseSource {
    BaseSource::Reference
}

fn default_kinds() -> String {
    "all".into()
}

fn default_baseline() -> String {
    "reference".into()
}

fn default_offset() -> f64 {
    0.20
}

fn default_ratio() -> f64 {
    0.10
}

fn default_lang() -> String {
    "und".into()
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecodeArgs {
    /// Corpus in JSON-lines format.
    #[arg(long)]
    corpus: PathBuf,
    /// Utility metric: chrf++, bleu or remote:<command>.
    #[arg(long, default_value = "chrf++")]
    #[serde(default = "default_utility")]
    utility: String,
    /// Support hypotheses: samples or references.
    #[arg(long, default_value = "samples")]
    #[serde(default = "default_support")]
    support: SupportMode,
    /// Leave u(c, c) out of each candidate's mean when candidates and support coincide.
    #[arg(long)]
    #[serde(default)]
    exclude_diagonal: bool,
    /// Random seed (recorded in the report).
    #[arg(long, default_value_t = 0)]
    #[serde(default)]
    seed: u64,
    /// Source language tag.
    #[arg(long, default_value = "und")]
    #[serde(default = "default_lang")]
    src_lang: String,
    /// Target language tag.
    #[arg(long, default_value = "und")]
    #[serde(default = "default_lang")]
    tgt_lang: String,
    /// Report file (stdout when absent).
    #[arg(long)]
    #[serde(default, skip_serializing)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    #[serde(default)]
    format: Format,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SensitivityArgs {
    /// Corpus in JSON-lines format.
    #[arg(long)]
    corpus: PathBuf,
    /// Utility metric: chrf++, bleu or remote:<command>.
    #[arg(long, default_value = "chrf++")]
    #[serde(default = "default_utility")]
    utility: String,
    /// Text that is perturbed: reference or beam_output.
    #[arg(long, default_value = "reference")]
    #[serde(default = "default_base")]
    base: BaseSource,
    /// Support hypotheses: samples or references.
    #[arg(long, default_value = "samples")]
    #[serde(default = "default_support")]
    support: SupportMode,
    /// Comma-separated perturbation kinds, or "all".
    #[arg(long, default_value = "all")]
    #[serde(default = "default_kinds")]
    kinds: String,
    /// Leave u(c, c) out of each candidate's mean when candidates and support coincide.
    #[arg(long)]
    #[serde(default)]
    exclude_diagonal: bool,
    #[arg(long, default_value_t = 0)]
    #[serde(default)]
    seed: u64,
    #[arg(long, default_value = "und")]
    #[serde(default = "default_lang")]
    src_lang: String,
    #[arg(long, default_value = "und")]
    #[serde(default = "default_lang")]
    tgt_lang: String,
    #[arg(long)]
    #[serde(default, skip_serializing)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    #[serde(default)]
    format: Format,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AuditArgs {
    /// Corpus in JSON-lines format.
    #[arg(long)]
    corpus: PathBuf,
    /// System outputs as NAME=PATH: a TSV with id and text (or chosen_text)
    /// columns, or JSON lines {"id","text","spans"}. Repeatable.
    #[arg(long = "system", value_name = "NAME=PATH")]
    #[serde(default)]
    systems: Vec<String>,
    /// Baseline row for number deltas.
    #[arg(long, default_value = "reference")]
    #[serde(default = "default_baseline")]
    baseline: String,
    /// Baseline row for named-entity deltas (defaults to --baseline).
    #[arg(long)]
    #[serde(default)]
    ne_baseline: Option<String>,
    /// Item matching: multiset or set.
    #[arg(long, default_value = "multiset")]
    #[serde(default)]
    matching: OverlapMode,
    #[arg(long, default_value_t = 0)]
    #[serde(default)]
    seed: u64,
    #[arg(long, default_value = "und")]
    #[serde(default = "default_lang")]
    src_lang: String,
    #[arg(long, default_value = "und")]
    #[serde(default = "default_lang")]
    tgt_lang: String,
    #[arg(long)]
    #[serde(default, skip_serializing)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    #[serde(default)]
    format: Format,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthArgs {
    /// Training TSV with columns src, mt, ref, score and optional origin, mt_spans.
    #[arg(long)]
    input: PathBuf,
    /// Amount subtracted from the score of synthetic examples.
    #[arg(long, default_value_t = 0.20)]
    #[serde(default = "default_offset")]
    score_offset: f64,
    /// Synthetic examples per original example.
    #[arg(long, default_value_t = 0.10)]
    #[serde(default = "default_ratio")]
    ratio: f64,
    /// Comma-separated perturbation kinds (default: every number and named-entity kind).
    #[arg(long)]
    #[serde(default)]
    kinds: Option<String>,
    /// Write only the synthetic rows instead of the shuffled mix.
    #[arg(long)]
    #[serde(default)]
    synthetic_only: bool,
    #[arg(long, default_value_t = 0)]
    #[serde(default)]
    seed: u64,
    #[arg(long)]
    #[serde(default, skip_serializing)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConformanceArgs {
    /// Scorer command line, e.g. "python bridge.py --model m".
    #[arg(long)]
    scorer: String,
    /// Seconds to wait for the hello reply.
    #[arg(long, default_value_t = 30)]
    #[serde(default = "default_timeout")]
    timeout: u64,
    #[arg(long, default_value_t = 0)]
    #[serde(default)]
    seed: u64,
    #[arg(long)]
    #[serde(default, skip_serializing)]
    output: Option<PathBuf>,
}

fn default_timeout() -> u64 {
    30
}

struct Report {
    body: Vec<u8>,
    exit: u8,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let config = match (cli.config, cli.command) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<RunConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        (None, Some(cmd)) => cmd,
        (None, None) => bail!("no command given (see --help)"),
        (Some(_), Some(_)) => bail!("--config cannot be combined with a subcommand"),
    };
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .context("starting worker pool")?;
    let header = config_header(&config)?;
    let (report, output) = match &config {
        RunConfig::Decode(a) => (run_decode(a, jobs, &header)?, a.output.as_deref()),
        RunConfig::Sensitivity(a) => (run_sensitivity(a, jobs, &header)?, a.output.as_deref()),
        RunConfig::Audit(a) => (run_audit(a, &header)?, a.output.as_deref()),
        RunConfig::Synth(a) => (run_synth(a, &header)?, a.output.as_deref()),
        RunConfig::Conformance(a) => (run_conformance(a)?, a.output.as_deref()),
    };
    write_output(output, &report.body)?;
    Ok(report.exit)
}

fn config_header(config: &RunConfig) -> Result<serde_json::Value> {
    Ok(serde_json::json!({
        "tool": "mbr-probe",
        "version": env!("CARGO_PKG_VERSION"),
        "config": serde_json::to_value(config)?,
    }))
}

fn tsv_header(header: &serde_json::Value) -> Vec<u8> {
    format!("# config {}\n", header).into_bytes()
}

fn json_report<T: Serialize>(header: &serde_json::Value, report: &T) -> Result<Vec<u8>> {
    let mut doc = header.clone();
    doc["report"] = serde_json::to_value(report)?;
    let mut body = serde_json::to_vec_pretty(&doc)?;
    body.push(b'\n');
    Ok(body)
}

fn write_output(path: Option<&Path>, body: &[u8]) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(body)?;
            out.flush().map_err(Into::into)
        }
    }
}

fn load(path: &Path, src: &str, tgt: &str) -> Result<Corpus> {
    Ok(load_corpus(path)?.with_languages(src, tgt))
}

fn make_utility(spec: &str, jobs: usize) -> Result<Box<dyn Utility>> {
    if let Some(cmd) = spec.strip_prefix("remote:") {
        let argv = split_command(cmd);
        if argv.is_empty() {
            bail!("empty remote scorer command");
        }
        let remote = RemoteUtility::spawn(&argv, jobs, &ConnectOptions::default())
            .with_context(|| format!("starting scorer {cmd:?}"))?;
        return Ok(Box::new(remote));
    }
    let kind: MetricKind = spec.parse()?;
    Ok(as_utility(kind))
}

#[derive(Serialize)]
struct DecodeRow {
    id: String,
    chosen_text: String,
    mbr_score: f64,
    pool_size: usize,
}

fn run_decode(a: &DecodeArgs, jobs: usize, header: &serde_json::Value) -> Result<Report> {
    let corpus = load(&a.corpus, &a.src_lang, &a.tgt_lang)?;
    let utility = make_utility(&a.utility, jobs)?;
    let support = match a.support {
        SupportMode::Samples => SupportSource::Samples,
        SupportMode::References => SupportSource::References,
    };
    let opts = MatrixOptions {
        exclude_diagonal: a.exclude_diagonal,
    };
    let results: Vec<_> = corpus
        .segments
        .par_iter()
        .map(|seg| mbr_decode(seg, utility.as_ref(), &CandidateSource::Samples, &support, opts))
        .collect();
    let mut rows = Vec::new();
    let mut failed = 0;
    for (seg, r) in corpus.segments.iter().zip(results) {
        match r {
            Ok(r) => rows.push(DecodeRow {
                id: seg.id.clone(),
                mbr_score: r.mbr_scores[r.chosen_index],
                pool_size: r.pool.candidates.len(),
                chosen_text: r.chosen_text,
            }),
            Err(e) => {
                failed += 1;
                eprintln!("failed: {e}");
            }
        }
    }
    let body = match a.format {
        Format::Json => json_report(header, &rows)?,
        Format::Tsv => {
            let mut body = tsv_header(header);
            let mut w = tsv::writer(&mut body);
            w.write_record(["id", "chosen_text", "mbr_score", "pool_size"])?;
            for r in &rows {
                w.write_record([r.id.clone(), r.chosen_text.clone(), tsv::fmt_f64(r.mbr_score), r.pool_size.to_string()])?;
            }
            w.flush()?;
            drop(w);
            body
        }
    };
    Ok(finish(body, failed, corpus.len()))
}

fn finish(body: Vec<u8>, failed: usize, total: usize) -> Report {
    if failed > 0 {
        eprintln!("{failed} of {total} segments failed");
    }
    Report {
        body,
        exit: if failed > 0 { EXIT_PARTIAL } else { 0 },
    }
}

fn run_sensitivity(a: &SensitivityArgs, jobs: usize, header: &serde_json::Value) -> Result<Report> {
    let corpus = load(&a.corpus, &a.src_lang, &a.tgt_lang)?;
    if corpus.is_empty() {
        bail!("corpus {} is empty", a.corpus.display());
    }
    let kinds = parse_kinds(&a.kinds).map_err(|e| anyhow!(e))?;
    let utility = make_utility(&a.utility, jobs)?;
    let setup = SensitivitySetup {
        base_source: a.base,
        support_source: a.support,
        utility: a.utility.clone(),
        seed: a.seed,
    };
    let opts = MatrixOptions {
        exclude_diagonal: a.exclude_diagonal,
    };
    let mut analyses = Vec::with_capacity(corpus.len());
    let mut failed = 0;
    for r in analyze_each(&corpus, &setup, utility.as_ref(), &kinds, opts) {
        match r {
            Ok(a) => analyses.push(a),
            Err(e) => {
                failed += 1;
                eprintln!("failed: {e}");
                analyses.push(None);
            }
        }
    }
    if analyses.iter().all(Option::is_none) && failed == 0 {
        bail!("no segment has the fields this setup needs");
    }
    let report = aggregate(&setup, &kinds, &analyses);
    let body = match a.format {
        Format::Json => json_report(header, &report)?,
        Format::Tsv => {
            let mut body = tsv_header(header);
            report.write_tsv(&mut body)?;
            body
        }
    };
    Ok(finish(body, failed, corpus.len()))
}

#[derive(Deserialize)]
struct SystemLine {
    id: String,
    text: String,
    #[serde(default)]
    spans: Option<Vec<RawSpan>>,
}

fn read_system(path: &Path) -> Result<SystemOutputs> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let is_jsonl = matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "json"));
    let mut out = SystemOutputs::default();
    if is_jsonl {
        let mut spans: BTreeMap<String, Vec<Span>> = BTreeMap::new();
        let mut any_spans = false;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SystemLine =
                serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
            if let Some(raw) = rec.spans {
                any_spans = true;
                let parsed = raw
                    .iter()
                    .filter(|r| r.kind == SpanKind::NamedEntity)
                    .map(|r| Span::new(&rec.text, r.start, r.end, r.kind))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| anyhow!("{}:{}: {e}", path.display(), i + 1))?;
                spans.insert(rec.id.clone(), parsed);
            }
            out.texts.insert(rec.id, rec.text);
        }
        if any_spans {
            out.ne_spans = Some(spans);
        }
    } else {
        let mut r = tsv::reader(file, true);
        let headers = r.headers()?.clone();
        let col = |names: &[&str]| headers.iter().position(|h| names.contains(&h));
        let (Some(id), Some(text)) = (col(&["id"]), col(&["text", "chosen_text"])) else {
            bail!("{}: header needs id and text (or chosen_text) columns", path.display());
        };
        for rec in r.records() {
            let rec = rec.with_context(|| path.display().to_string())?;
            let (Some(k), Some(v)) = (rec.get(id), rec.get(text)) else {
                bail!("{}: short row {:?}", path.display(), rec.position().map(|p| p.line()));
            };
            out.texts.insert(k.to_string(), v.to_string());
        }
    }
    Ok(out)
}

fn run_audit(a: &AuditArgs, header: &serde_json::Value) -> Result<Report> {
    let corpus = load(&a.corpus, &a.src_lang, &a.tgt_lang)?;
    let mut systems = BTreeMap::new();
    for spec in &a.systems {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| anyhow!("--system expects NAME=PATH, got {spec:?}"))?;
        if systems.insert(name.to_string(), read_system(Path::new(path))?).is_some() {
            bail!("system {name:?} given twice");
        }
    }
    let ne_baseline = a.ne_baseline.as_deref().unwrap_or(&a.baseline);
    let report = audit_report(&corpus, &systems, &a.baseline, ne_baseline, a.matching)?;
    let body = match a.format {
        Format::Json => json_report(header, &report)?,
        Format::Tsv => {
            let mut body = tsv_header(header);
            report.write_tsv(&mut body)?;
            body
        }
    };
    Ok(Report { body, exit: 0 })
}

fn run_synth(a: &SynthArgs, header: &serde_json::Value) -> Result<Report> {
    let file = File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let (examples, spans) = read_examples(file).with_context(|| a.input.display().to_string())?;
    let eligible_kinds = match &a.kinds {
        Some(list) => parse_kinds(list).map_err(|e| anyhow!(e))?,
        None => synthgen::default_kinds(),
    };
    let cfg = SynthConfig {
        score_offset: a.score_offset,
        target_ratio: a.ratio,
        seed: a.seed,
        eligible_kinds,
    };
    let out = generate_synthetic(&examples, &spans, &cfg)?;
    eprintln!(
        "{} original, {} eligible, {} synthetic",
        examples.len(),
        out.eligible,
        out.synthetic.len()
    );
    let rows = if a.synthetic_only {
        out.synthetic
    } else {
        mix(&examples, &out.synthetic, a.seed)
    };
    let mut body = tsv_header(header);
    write_examples(&rows, &mut body)?;
    Ok(Report { body, exit: 0 })
}

struct Check {
    name: &'static str,
    result: Result<(), String>,
}

fn run_conformance(a: &ConformanceArgs) -> Result<Report> {
    let argv = split_command(&a.scorer);
    if argv.is_empty() {
        bail!("empty scorer command");
    }
    let opts = ConnectOptions {
        handshake_timeout: std::time::Duration::from_secs(a.timeout),
        request_timeout: Some(std::time::Duration::from_secs(a.timeout.max(1) * 4)),
    };
    let checks = conformance_checks(&argv, &opts, a.seed);
    let mut body = Vec::new();
    let mut failed = 0;
    for c in &checks {
        match &c.result {
            Ok(()) => writeln!(body, "PASS {}", c.name)?,
            Err(e) => {
                failed += 1;
                writeln!(body, "FAIL {}: {e}", c.name)?;
            }
        }
    }
    writeln!(body, "{} of {} checks passed", checks.len() - failed, checks.len())?;
    Ok(Report {
        body,
        exit: if failed > 0 { EXIT_PARTIAL } else { 0 },
    })
}

fn probe_strings(seed: u64, n: usize) -> Vec<String> {
    use rand::{Rng, SeedableRng};
    let words = ["Haus", "1970", "Mahmoud", "the", "ß", "日本", "\"q\"", "tab\there", "a\\b", "🙂"];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let len = rng.gen_range(1..6);
            let mut s: Vec<&str> = (0..len).map(|_| words[rng.gen_range(0..words.len())]).collect();
            s.push(["x", "y", "z", "w", "v", "u", "t"][i % 7]);
            s.join(" ")
        })
        .collect()
}

fn conformance_checks(argv: &[String], opts: &ConnectOptions, seed: u64) -> Vec<Check> {
    let mut checks = Vec::new();
    let mut handle = match connect(argv, opts) {
        Ok(h) => {
            checks.push(Check {
                name: "handshake",
                result: Ok(()),
            });
            h
        }
        Err(e) => {
            checks.push(Check {
                name: "handshake",
                result: Err(e.to_string()),
            });
            return checks;
        }
    };
    let source = "Quelle mit 1970 und Mahmoud.";
    let pool = probe_strings(seed, 7);
    let mut shape = Ok(());
    for (rows, cols) in [(1, 1), (3, 4), (7, 2)] {
        match handle.score_matrix(source, &pool[..rows], &pool[..cols]) {
            Ok(grid) if grid.len() == rows && grid.iter().all(|r| r.len() == cols) => {}
            Ok(grid) => {
                shape = Err(format!("asked for {rows}x{cols}, got {} rows", grid.len()));
                break;
            }
            Err(e) => {
                shape = Err(e.to_string());
                break;
            }
        }
    }
    checks.push(Check {
        name: "shape",
        result: shape,
    });
    let purity = match (
        handle.score_matrix(source, &pool, &pool),
        handle.score_matrix(source, &pool, &pool),
    ) {
        (Ok(a), Ok(b)) if bits(&a) == bits(&b) => Ok(()),
        (Ok(_), Ok(_)) => Err("identical requests gave different matrices".into()),
        (Err(e), _) | (_, Err(e)) => Err(e.to_string()),
    };
    checks.push(Check { name: "purity", result: purity });
    let cells = (|| {
        let full = handle.score_matrix(source, &pool, &pool).map_err(|e| e.to_string())?;
        for (i, c) in pool.iter().enumerate().take(3) {
            for (j, s) in pool.iter().enumerate().take(3) {
                let one = handle
                    .score_matrix(source, std::slice::from_ref(c), std::slice::from_ref(s))
                    .map_err(|e| e.to_string())?;
                if one[0][0].to_bits() != full[i][j].to_bits() {
                    return Err(format!("cell ({i},{j}) depends on the rest of the request"));
                }
            }
        }
        Ok(())
    })();
    checks.push(Check {
        name: "cell independence",
        result: cells,
    });
    let across = match connect(argv, opts) {
        Ok(mut other) => match (handle.score_matrix(source, &pool, &pool), other.score_matrix(source, &pool, &pool)) {
            (Ok(a), Ok(b)) if bits(&a) == bits(&b) => Ok(()),
            (Ok(_), Ok(_)) => Err("two scorer processes disagree".into()),
            (Err(e), _) | (_, Err(e)) => Err(e.to_string()),
        },
        Err(e) => Err(e.to_string()),
    };
    checks.push(Check {
        name: "cross-process determinism",
        result: across,
    });
    checks
}

fn bits(grid: &[Vec<f64>]) -> Vec<Vec<u64>> {
    grid.iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect()
}
