//! `nlpcheck` command-line interface.
//!
//! Exit codes: 0 success, 1 `--fail-threshold` exceeded, 2 structural error
//! (bad arguments, unreadable files, missing lexicons, unreachable model).

use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use nlpcheck::bundled;
use nlpcheck::expect::Task;
use nlpcheck::lexicon::{LexiconStore, TagQuery};
use nlpcheck::model::{AdapterSpec, Gateway, PredictionCache, DEFAULT_JOBS};
use nlpcheck::perturb::{Perturbation, UrlHandleKind};
use nlpcheck::service::{self, Session};
use nlpcheck::suggest::{self, MaskQuery, RemoteProvider, StubProvider, SuggestionProvider, SuppressionList};
use nlpcheck::suite::{self, ReportFormat, RunConfig, SuiteResult, TestSuite};
use nlpcheck::template::{expand, ExpansionConfig, TemplateGroup};
use nlpcheck::DEFAULT_SEED;

#[derive(Parser)]
#[command(name = "nlpcheck", version, about = "Behavioral testing for NLP models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expand a template (or a group of templates) against lexicons.
    Expand(ExpandArgs),
    /// Ranked fill-ins for a template with one `{mask}`.
    Suggest(SuggestArgs),
    /// Perturb every line of a corpus; writes JSON lines with deltas.
    Perturb(PerturbArgs),
    /// Run a suite against a model.
    Run(RunArgs),
    /// Render a saved result.
    Report(ReportArgs),
    /// Failure rate of one test over cases matching a binding tag query.
    Slice(SliceArgs),
    /// Serve the local HTTP API for the triage workbench.
    Serve(ServeArgs),
    /// List or export bundled data.
    Bundled(BundledArgs),
}

#[derive(Args)]
struct LexiconArgs {
    /// Lexicon file (`[name]` headers, `text<TAB>k=v;k=v` entries). Repeatable;
    /// later files and user files override bundled lists of the same name.
    #[arg(long = "lexicons", short = 'l')]
    files: Vec<PathBuf>,
    /// Do not load the bundled lexicons.
    #[arg(long)]
    no_bundled: bool,
}

impl LexiconArgs {
    fn load(&self) -> Result<LexiconStore, String> {
        let mut out = LexiconStore::new();
        for path in self.files.iter().rev() {
            let store = LexiconStore::load(path).map_err(|e| e.to_string())?;
            out = overlay(out, store);
        }
        if !self.no_bundled {
            out = overlay(out, bundled::all_lexicons());
        }
        Ok(out)
    }
}

/// `base` plus the lists of `extra` that `base` lacks.
fn overlay(mut base: LexiconStore, extra: LexiconStore) -> LexiconStore {
    let names: Vec<String> = extra.names().map(str::to_string).collect();
    for name in names {
        if !base.contains(&name) {
            let entries = extra.entries(&name).unwrap_or_default().to_vec();
            base.insert(name, entries).expect("name checked");
        }
    }
    base
}

#[derive(Args)]
struct ExpandArgs {
    /// Template; repeat for a group expanded under one binding.
    #[arg(long, short = 't', required = true)]
    template: Vec<String>,
    #[command(flatten)]
    lexicons: LexiconArgs,
    /// Sample this many cases instead of the full product.
    #[arg(long, short = 'n')]
    max_cases: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Keep duplicate cases.
    #[arg(long)]
    no_dedupe: bool,
    /// Bind this slot independently in each template of the group.
    #[arg(long)]
    unshared: Vec<String>,
    /// Draw a slot from a filtered lexicon: `SLOT=LEXICON` or `SLOT=LEXICON:k=v;k=v`.
    #[arg(long)]
    slot: Vec<String>,
    /// Print each case's binding as JSON after the text.
    #[arg(long, short = 'v')]
    verbose: bool,
}

#[derive(Args)]
struct SuggestArgs {
    #[arg(long, short = 't')]
    template: String,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    /// Masked-LM server URL; the bundled stub table is used otherwise.
    #[arg(long)]
    provider: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PerturbKind {
    Typo,
    Contraction,
    Name,
    Location,
    Url,
    Handle,
    Phrase,
}

#[derive(Args)]
struct PerturbArgs {
    /// One input per line.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum)]
    kind: PerturbKind,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    n_swaps: usize,
    /// Phrase to append (`--kind phrase`); repeat to draw one per line.
    #[arg(long)]
    phrase: Vec<String>,
    #[command(flatten)]
    lexicons: LexiconArgs,
    /// Output file; stdout when absent.
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AdapterArgs {
    /// `toy`, `toy-qqp`, `toy-mc`, `batch-file:DIR`, `subprocess:CMD` or an http(s) URL.
    #[arg(long, short = 'a', default_value = "toy")]
    adapter: String,
    /// Task of an external model (toy models know their own).
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    /// Model version string, part of the cache key.
    #[arg(long, default_value = "")]
    model_version: String,
    /// Persistent prediction cache directory.
    #[arg(long, env = "NLPCHECK_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    /// Prediction chunks in flight.
    #[arg(long, short = 'j', default_value_t = DEFAULT_JOBS)]
    jobs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Classification,
    Span,
}

impl AdapterArgs {
    fn spec(&self) -> Result<AdapterSpec, String> {
        let mut spec: AdapterSpec = self.adapter.parse().map_err(|e: nlpcheck::model::ModelError| e.to_string())?;
        if let Some(t) = self.task {
            spec = spec.with_task(match t {
                TaskArg::Classification => Task::Classification,
                TaskArg::Span => Task::Span,
            });
        }
        Ok(spec.with_version(self.model_version.clone()))
    }

    fn cache(&self) -> Result<Arc<PredictionCache>, String> {
        Ok(Arc::new(match &self.cache_dir {
            Some(dir) => PredictionCache::open(dir).map_err(|e| e.to_string())?,
            None => PredictionCache::in_memory(),
        }))
    }

    fn gateway(&self) -> Result<Gateway, String> {
        Ok(Gateway::from_spec(&self.spec()?).map_err(|e| e.to_string())?.with_cache(self.cache()?).with_jobs(self.jobs))
    }
}

#[derive(Args)]
struct RunArgs {
    /// Suite file, or `bundled:NAME`.
    #[arg(long, short = 's')]
    suite: String,
    #[command(flatten)]
    adapter: AdapterArgs,
    #[command(flatten)]
    lexicons: LexiconArgs,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Write the full result (cases, verdicts, metadata) here.
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
    /// Also write a rendered report here.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "markdown")]
    format: FormatArg,
    /// Exit 1 when any test's failure rate (percent) exceeds this.
    #[arg(long)]
    fail_threshold: Option<f64>,
    /// No progress on stderr.
    #[arg(long, short = 'q')]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Markdown,
    Csv,
    Json,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Markdown => ReportFormat::Markdown,
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
        }
    }
}

#[derive(Args)]
struct ReportArgs {
    /// Result file written by `run --out`.
    #[arg(long, short = 'r')]
    result: PathBuf,
    #[arg(long, value_enum, default_value = "markdown")]
    format: FormatArg,
}

#[derive(Args)]
struct SliceArgs {
    #[arg(long, short = 'r')]
    result: PathBuf,
    #[arg(long)]
    test: String,
    /// Binding tag query, e.g. `P1.gender=male`.
    #[arg(long)]
    query: String,
}

#[derive(Args)]
struct ServeArgs {
    /// Suite file, or `bundled:NAME`.
    #[arg(long, short = 's', default_value = "bundled:sentiment_mini")]
    suite: String,
    /// Lexicon file receiving triage edits (created if missing). Its lists
    /// are loaded on top of the bundled ones.
    #[arg(long)]
    lexicon_file: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, default_value_t = 8765)]
    port: u16,
    #[arg(long, env = "NLPCHECK_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    #[arg(long, short = 'j', default_value_t = DEFAULT_JOBS)]
    jobs: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Masked-LM server URL for /suggest; the stub table otherwise.
    #[arg(long)]
    provider: Option<String>,
}

#[derive(Args)]
struct BundledArgs {
    #[command(subcommand)]
    what: BundledCommand,
}

#[derive(Subcommand)]
enum BundledCommand {
    /// List bundled suites and lexicons.
    List,
    /// Print a bundled suite (`suite NAME`) or the lexicons (`lexicons`).
    Export {
        /// `lexicons`, `demo-lexicons`, `thesaurus`, or a suite name.
        name: String,
    },
}

enum Failure {
    Threshold,
    Structural(String),
}

impl From<String> for Failure {
    fn from(s: String) -> Self {
        Failure::Structural(s)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Expand(a) => cmd_expand(a),
        Command::Suggest(a) => cmd_suggest(a),
        Command::Perturb(a) => cmd_perturb(a),
        Command::Run(a) => cmd_run(a),
        Command::Report(a) => cmd_report(a),
        Command::Slice(a) => cmd_slice(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Bundled(a) => cmd_bundled(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Threshold) => ExitCode::from(1),
        Err(Failure::Structural(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), String> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("{}: {e}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| e.to_string())
        }
    }
}

fn load_suite(arg: &str) -> Result<TestSuite, String> {
    if let Some(name) = arg.strip_prefix("bundled:") {
        return bundled::suite(name)
            .ok_or_else(|| format!("no bundled suite `{name}` (have: {})", bundled::SUITE_NAMES.join(", ")))?
            .map_err(|e| e.to_string());
    }
    TestSuite::load(arg).map_err(|e| e.to_string())
}

fn cmd_expand(a: ExpandArgs) -> Result<(), Failure> {
    let store = a.lexicons.load()?;
    let mut group = TemplateGroup::parse(&a.template).map_err(|e| e.to_string())?;
    for slot in &a.unshared {
        group = group.with_shared(slot, false).map_err(|e| e.to_string())?;
    }
    for s in &a.slot {
        let (slot, source) = s.split_once('=').ok_or_else(|| format!("--slot `{s}`: expected SLOT=LEXICON[:QUERY]"))?;
        let (lexicon, filter) = match source.split_once(':') {
            Some((l, q)) => (l, q.parse::<TagQuery>().map_err(|e| e.to_string())?),
            None => (source, TagQuery::any()),
        };
        group = group
            .with_source(slot, nlpcheck::template::SlotSource { lexicon: lexicon.to_string(), filter })
            .map_err(|e| e.to_string())?;
    }
    let cfg = ExpansionConfig { max_cases: a.max_cases, seed: a.seed, dedupe: !a.no_dedupe };
    let cases = expand(&group, &store, &cfg).map_err(|e| e.to_string())?;
    let mut out = String::new();
    for c in cases {
        out.push_str(&c.texts.join("\t"));
        if a.verbose {
            out.push('\t');
            out.push_str(&serde_json::to_string(&c.binding).expect("binding serializes"));
        }
        out.push('\n');
    }
    write_output(None, &out)?;
    Ok(())
}

fn cmd_suggest(a: SuggestArgs) -> Result<(), Failure> {
    let query = MaskQuery::new(a.template, a.top_k).map_err(|e| e.to_string())?;
    let provider: Box<dyn SuggestionProvider> = match a.provider {
        Some(url) => Box::new(RemoteProvider::new(url)),
        None => Box::new(StubProvider::default()),
    };
    let list = suggest::suggest(provider.as_ref(), &query, &SuppressionList::default()).map_err(|e| e.to_string())?;
    let mut out = String::new();
    for s in list {
        out.push_str(&format!("{}\t{:.3}\n", s.text, s.score));
    }
    write_output(None, &out)?;
    Ok(())
}

fn cmd_perturb(a: PerturbArgs) -> Result<(), Failure> {
    let src = std::fs::read_to_string(&a.corpus).map_err(|e| format!("{}: {e}", a.corpus.display()))?;
    let store = a.lexicons.load()?;
    let perturbation = match a.kind {
        PerturbKind::Typo => Perturbation::TypoSwap { n_swaps: a.n_swaps },
        PerturbKind::Contraction => Perturbation::Contraction,
        PerturbKind::Name => Perturbation::NameChange,
        PerturbKind::Location => Perturbation::LocationChange,
        PerturbKind::Url => Perturbation::AddUrlHandle { handle: UrlHandleKind::Url },
        PerturbKind::Handle => Perturbation::AddUrlHandle { handle: UrlHandleKind::Handle },
        PerturbKind::Phrase => {
            if a.phrase.is_empty() {
                return Err(Failure::Structural("--kind phrase needs at least one --phrase".into()));
            }
            Perturbation::AddPhrase { phrases: a.phrase.clone() }
        }
    };
    let mut out = String::new();
    for (i, line) in src.lines().enumerate() {
        let seed = nlpcheck::seed::derive(a.seed, i as u64);
        let record = match perturbation.apply(&[line.to_string()], None, &store, seed) {
            Ok(v) => json!({
                "line": i + 1,
                "original": line,
                "text": v.texts[0],
                "delta": v.deltas[0].delta,
            }),
            Err(e) => {
                eprintln!("warning: line {}: {e}; skipped", i + 1);
                json!({ "line": i + 1, "original": line, "skipped": e.to_string() })
            }
        };
        out.push_str(&record.to_string());
        out.push('\n');
    }
    write_output(a.out.as_deref(), &out)?;
    Ok(())
}

fn summary(result: &SuiteResult) -> String {
    let width = result.tests.iter().map(|t| t.name.chars().count()).max().unwrap_or(4).max(4);
    let mut out = format!("{:<16} {:<4} {:<width$} {:>7} {:>8}\n", "capability", "type", "test", "cases", "fail %");
    for t in &result.tests {
        let rate = t.rate().map_or_else(|| "n/a".into(), |r| r.to_string());
        out.push_str(&format!(
            "{:<16} {:<4} {:<width$} {:>7} {:>8}\n",
            t.capability.as_str(),
            t.test_type.as_str(),
            t.name,
            t.n_cases,
            rate
        ));
    }
    out
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let suite = load_suite(&a.suite)?;
    let store = a.lexicons.load()?;
    let gateway = a.adapter.gateway()?;
    let cfg = RunConfig { seed: a.seed, ..RunConfig::default() };
    let quiet = a.quiet;
    let progress = move |p: suite::Progress| {
        if !quiet {
            eprint!("\r{}/{} predictions", p.done, p.total);
        }
    };
    let result = suite::run_suite_with_progress(&suite, &store, &gateway, &cfg, &progress).map_err(|e| e.to_string());
    if !quiet {
        eprintln!();
    }
    let result = result?;
    if let Some(path) = &a.out {
        result.save(path).map_err(|e| e.to_string())?;
    }
    if let Some(path) = &a.report {
        write_output(Some(path), &suite::render_report(&result, a.format.into()))?;
    }
    write_output(None, &summary(&result))?;
    if let Some(threshold) = a.fail_threshold {
        let breached: Vec<&str> = result
            .tests
            .iter()
            .filter(|t| t.rate().is_some_and(|r| r.percent() > threshold))
            .map(|t| t.name.as_str())
            .collect();
        if !breached.is_empty() {
            eprintln!("{} test(s) above {threshold}%: {}", breached.len(), breached.join("; "));
            return Err(Failure::Threshold);
        }
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<(), Failure> {
    let result = SuiteResult::load(&a.result).map_err(|e| e.to_string())?;
    write_output(None, &suite::render_report(&result, a.format.into()))?;
    Ok(())
}

fn cmd_slice(a: SliceArgs) -> Result<(), Failure> {
    let result = SuiteResult::load(&a.result).map_err(|e| e.to_string())?;
    let query: TagQuery = a.query.parse().map_err(|e: nlpcheck::lexicon::LexiconError| e.to_string())?;
    let rate = suite::slice_result(&result, &a.test, &query).map_err(|e| e.to_string())?;
    write_output(None, &format!("{rate}\t{} / {}\n", rate.failed, rate.total))?;
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<(), Failure> {
    let suite = load_suite(&a.suite)?;
    let mut store = bundled::all_lexicons();
    if let Some(path) = &a.lexicon_file {
        if path.exists() {
            let user = LexiconStore::load(path).map_err(|e| e.to_string())?;
            store = overlay(user, store);
        }
    }
    let cache = Arc::new(match &a.cache_dir {
        Some(dir) => PredictionCache::open(dir).map_err(|e| e.to_string())?,
        None => PredictionCache::in_memory(),
    });
    let mut session = Session::new(suite, store)
        .with_cache(cache)
        .with_jobs(a.jobs)
        .with_run_config(RunConfig { seed: a.seed, ..RunConfig::default() });
    if let Some(path) = a.lexicon_file {
        session = session.with_lexicon_path(path);
    }
    if let Some(url) = a.provider {
        session = session.with_provider(Arc::new(RemoteProvider::new(url)));
    }
    let addr = SocketAddr::new(a.host, a.port);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| e.to_string())?;
    eprintln!("listening on http://{addr}");
    rt.block_on(service::serve(addr, Arc::new(session))).map_err(|e| format!("{addr}: {e}"))?;
    Ok(())
}

fn cmd_bundled(a: BundledArgs) -> Result<(), Failure> {
    match a.what {
        BundledCommand::List => {
            let mut out = String::from("suites:\n");
            for name in bundled::SUITE_NAMES {
                out.push_str(&format!("  {name}\n"));
            }
            out.push_str("lexicons:\n");
            let store = bundled::all_lexicons();
            for name in store.names() {
                out.push_str(&format!("  {name} ({})\n", store.entries(name).map_or(0, <[_]>::len)));
            }
            write_output(None, &out)?;
        }
        BundledCommand::Export { name } => {
            let text = match name.as_str() {
                "lexicons" => bundled::LEXICONS.to_string(),
                "demo-lexicons" => bundled::DEMO_LEXICONS.to_string(),
                "thesaurus" => bundled::THESAURUS.to_string(),
                other => bundled::suite(other)
                    .ok_or_else(|| format!("unknown bundled item `{other}`"))?
                    .map_err(|e| e.to_string())?
                    .to_json(),
            };
            write_output(None, &text)?;
        }
    }
    Ok(())
}
