use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tokon_core::datasets::{
    ingest_ihepc, ingest_m4, manifest_path, read_records, write_manifest, write_records, Dataset, IhepcOptions,
    M4Options,
};
use tokon_core::evaluation::{
    normalized_per_step_table, read_results, run_experiment, write_results, ExperimentConfig,
};
use tokon_core::forecaster::{build_backend, BackendConfig, BackendKind, ForecastRequest};
use tokon_core::normalization::{DomainStats, NormalizationParams, TargetParams};
use tokon_core::pipeline::build_request;
use tokon_core::prompting::PromptKind;
use tokon_core::search::{golden_section_search, CostKind, SearchConfig, UpdateRule};
use tokon_core::tokenizer::{count_series_tokens, encode_count, load_vocab, Vocab};

#[derive(Debug, Parser)]
#[command(name = "tokon", version, about = "Integer-token normalization and zero-shot forecasting experiments")]
struct Cli {
    /// Plain-text `key = value` file with backend settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed recorded with experiment results.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build hourly windows from the household power consumption text file.
    IngestIhepc(IngestIhepcArgs),
    /// Select fixed-length monthly series from an M4 training table.
    IngestM4(IngestM4Args),
    /// Compute pooled statistics of the first records and store them in the manifest.
    Stats(StatsArgs),
    /// Golden-section search for the target standard deviation.
    Search(SearchArgs),
    /// Forecast every record and write a results document.
    Forecast(ForecastArgs),
    /// Score one or more results documents.
    Evaluate(EvaluateArgs),
    /// Count tokens of a raw and a normalized rendering.
    CountTokens(CountTokensArgs),
    /// Print the exact prompt for one record.
    DumpPrompt(DumpPromptArgs),
}

#[derive(Debug, Args)]
struct IngestIhepcArgs {
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 6)]
    horizon: usize,
    #[arg(long, default_value_t = 96)]
    context_len: usize,
    #[arg(long, default_value_t = 3000)]
    max_series: usize,
    /// Hours between window starts; back-to-back windows when omitted.
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, default_value_t = 30)]
    min_valid_minutes: usize,
}

#[derive(Debug, Args)]
struct IngestM4Args {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "64,49")]
    lengths: Vec<usize>,
    #[arg(long, default_value_t = 18)]
    horizon: usize,
    /// Series to keep per length, in the order of `--lengths`.
    #[arg(long, value_delimiter = ',', default_value = "965,1104")]
    counts: Vec<usize>,
    /// M4-info.csv with starting dates.
    #[arg(long)]
    info: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 100)]
    first_n: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CostArg {
    Sse,
    Sae,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    /// Lower end of the initial interval; defaults to the index minimum.
    #[arg(long)]
    lo: Option<f64>,
    /// Upper end of the initial interval; defaults to the index maximum.
    #[arg(long)]
    hi: Option<f64>,
    #[arg(long, default_value_t = 0)]
    index_min: i64,
    #[arg(long, default_value_t = 999)]
    index_max: i64,
    /// Number of leading records used as the calibration set.
    #[arg(long, default_value_t = 100)]
    calibration: usize,
    /// Records pooled for statistics when the manifest has none.
    #[arg(long, default_value_t = 100)]
    first_n: usize,
    #[arg(long, default_value = "baseline")]
    prompt_kind: PromptKind,
    #[arg(long, value_enum, default_value = "sse")]
    cost: CostArg,
    #[arg(long, default_value_t = 50)]
    max_iterations: usize,
    /// Use the alternate interval update that discards the cheaper probe's side.
    #[arg(long, alias = "literal-update")]
    paper_literal_update: bool,
    /// Trace table path; defaults to `<dataset stem>.search.tsv` beside the dataset.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Render the calibration prompts at the interval midpoint and count tokens only.
    #[arg(long)]
    dry_run: bool,
    #[arg(long, default_value = "synthetic")]
    vocab: String,
}

#[derive(Debug, Args)]
struct NormArgs {
    /// Show the context as integer tokens.
    #[arg(long, requires = "sigma_t")]
    tokon: bool,
    #[arg(long)]
    sigma_t: Option<f64>,
    /// Defaults to the middle of the index range.
    #[arg(long)]
    target_mean: Option<f64>,
    #[arg(long, default_value_t = 0)]
    index_min: i64,
    #[arg(long, default_value_t = 999)]
    index_max: i64,
    /// Records pooled for statistics when the manifest has none.
    #[arg(long, default_value_t = 100)]
    first_n: usize,
}

#[derive(Debug, Args)]
struct ForecastArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long, default_value = "baseline")]
    prompt_kind: PromptKind,
    #[command(flatten)]
    norm: NormArgs,
    /// Score only the first n steps.
    #[arg(long)]
    horizon_eval: Option<usize>,
    #[arg(long, required_unless_present = "dry_run")]
    out: Option<PathBuf>,
    /// Also write every reply as a replay fixture.
    #[arg(long)]
    record_replay: Option<PathBuf>,
    /// Render prompts and count tokens only.
    #[arg(long)]
    dry_run: bool,
    #[arg(long, default_value = "synthetic")]
    vocab: String,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long, required = true, num_args = 1..)]
    results: Vec<PathBuf>,
    #[arg(long)]
    first_steps: Option<usize>,
    /// Directory for `<stem>.metrics.tsv` tables and `normalized.tsv`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CountTokensArgs {
    #[arg(long, allow_hyphen_values = true)]
    raw: String,
    #[arg(long, allow_hyphen_values = true)]
    normalized: String,
    /// `synthetic` or a rank file path.
    #[arg(long, default_value = "synthetic")]
    vocab: String,
}

#[derive(Debug, Args)]
struct DumpPromptArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Record id; the first record when omitted.
    #[arg(long)]
    id: Option<String>,
    #[arg(long, default_value = "baseline")]
    prompt_kind: PromptKind,
    #[command(flatten)]
    norm: NormArgs,
}

#[derive(Debug, Args)]
struct BackendArgs {
    #[arg(long)]
    backend: Option<BackendKind>,
    #[arg(long)]
    api_base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_retries: Option<u32>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    seasonal_period: Option<usize>,
    /// Replay fixture for the replay backend.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long)]
    requests_per_minute: Option<f64>,
    #[arg(long)]
    retry_backoff_ms: Option<u64>,
    #[arg(long)]
    timeout_secs: Option<u64>,
}

/// Bad flags or settings, reported with exit code 1.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match e.downcast_ref::<tokon_core::Error>() {
        Some(tokon_core::Error::InvalidConfig(_)) => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let settings = match &cli.config {
        Some(path) => read_config(path)?,
        None => BTreeMap::new(),
    };
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::IngestIhepc(a) => {
            let opts = IhepcOptions {
                horizon: a.horizon,
                context_len: a.context_len,
                max_series: a.max_series,
                stride: a.stride,
                min_valid_minutes: a.min_valid_minutes,
            };
            let dataset = ingest_ihepc(&a.input, &opts)?;
            save_dataset(&dataset, &a.out, &mut stdout)
        }
        Command::IngestM4(a) => {
            if a.lengths.len() != a.counts.len() {
                return Err(usage("--lengths and --counts need the same number of entries"));
            }
            let opts = M4Options { lengths: a.lengths, horizon: a.horizon, counts: a.counts, info_path: a.info };
            let dataset = ingest_m4(&a.input, &opts)?;
            save_dataset(&dataset, &a.out, &mut stdout)
        }
        Command::Stats(a) => {
            let dataset = read_records(&a.dataset)?;
            let stats = dataset.calibration_stats(a.first_n)?;
            let mut manifest = dataset.manifest();
            manifest.stats = Some(stats);
            write_manifest(&manifest, &manifest_path(&a.dataset))?;
            writeln!(stdout, "{}", serde_json::to_string(&stats)?)?;
            Ok(())
        }
        Command::Search(a) => search(a, &settings, &mut stdout),
        Command::Forecast(a) => forecast(a, &settings, cli.seed, &mut stdout),
        Command::Evaluate(a) => evaluate(a, &mut stdout),
        Command::CountTokens(a) => {
            let vocab = vocab_from_arg(&a.vocab)?;
            let report = count_series_tokens(&a.raw, &a.normalized, &vocab)?;
            writeln!(stdout, "{}", serde_json::to_string(&report)?)?;
            Ok(())
        }
        Command::DumpPrompt(a) => {
            let dataset = read_records(&a.dataset)?;
            let record = match &a.id {
                Some(id) => dataset.get(id).ok_or_else(|| usage(format!("no record `{id}`")))?,
                None => dataset.records.first().context("dataset is empty")?,
            };
            let params = normalization(&a.norm, &dataset)?;
            let request = build_request(record, a.prompt_kind, params.as_ref())?;
            writeln!(stdout, "{}", request.prompt.text)?;
            Ok(())
        }
    }
}

fn save_dataset(dataset: &Dataset, out_dir: &Path, out: &mut impl Write) -> anyhow::Result<()> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let path = out_dir.join(format!("{}.ndrec", dataset.name));
    let manifest = write_records(dataset, &path)?;
    log::info!("{} records, context lengths {:?}", manifest.record_count, manifest.context_lengths);
    writeln!(out, "{}", path.display())?;
    Ok(())
}

/// `key = value` lines; blank lines and `#` comments are skipped.
fn read_config(path: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut settings = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(usage(format!("{}:{}: expected `key = value`", path.display(), i + 1)));
        };
        settings.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(settings)
}

fn setting<T: std::str::FromStr>(settings: &BTreeMap<String, String>, key: &str) -> anyhow::Result<Option<T>> {
    settings
        .get(key)
        .map(|v| v.parse::<T>().map_err(|_| usage(format!("config `{key}`: cannot parse `{v}`"))))
        .transpose()
}

const CONFIG_KEYS: [&str; 11] = [
    "backend",
    "api_base_url",
    "model_name",
    "temperature",
    "max_retries",
    "parallelism",
    "seasonal_period",
    "replay_path",
    "requests_per_minute",
    "retry_backoff_ms",
    "timeout_secs",
];

/// Defaults, then the config file, then explicit flags.
fn backend_config(args: &BackendArgs, settings: &BTreeMap<String, String>) -> anyhow::Result<BackendConfig> {
    if let Some(key) = settings.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
        return Err(usage(format!("unknown config key `{key}`")));
    }
    let kind = match args.backend {
        Some(kind) => kind,
        None => setting(settings, "backend")?.ok_or_else(|| usage("no backend given (--backend)"))?,
    };
    let mut cfg = BackendConfig::new(kind);
    macro_rules! apply {
        ($field:ident, $key:literal, $flag:expr) => {
            if let Some(v) = $flag.clone() {
                cfg.$field = v;
            } else if let Some(v) = setting(settings, $key)? {
                cfg.$field = v;
            }
        };
    }
    apply!(api_base_url, "api_base_url", args.api_base_url);
    apply!(model_name, "model_name", args.model);
    apply!(temperature, "temperature", args.temperature);
    apply!(max_retries, "max_retries", args.max_retries);
    apply!(parallelism, "parallelism", args.parallelism);
    apply!(retry_backoff_ms, "retry_backoff_ms", args.retry_backoff_ms);
    apply!(timeout_secs, "timeout_secs", args.timeout_secs);
    cfg.seasonal_period = args.seasonal_period.or(setting(settings, "seasonal_period")?);
    cfg.replay_path = args.replay.clone().or(setting(settings, "replay_path")?);
    cfg.requests_per_minute = args.requests_per_minute.or(setting(settings, "requests_per_minute")?);
    cfg.validate()?;
    Ok(cfg)
}

fn vocab_from_arg(arg: &str) -> anyhow::Result<Vocab> {
    if arg == "synthetic" {
        Ok(Vocab::synthetic_integer())
    } else {
        Ok(load_vocab(arg)?)
    }
}

fn dataset_stats(dataset: &Dataset, first_n: usize) -> anyhow::Result<DomainStats<f64>> {
    match dataset.stats {
        Some(stats) => Ok(stats),
        None => {
            log::info!("manifest has no statistics; pooling the first {first_n} records");
            Ok(dataset.calibration_stats(first_n)?)
        }
    }
}

fn normalization(args: &NormArgs, dataset: &Dataset) -> anyhow::Result<Option<NormalizationParams<f64>>> {
    if !args.tokon {
        return Ok(None);
    }
    let sigma_t = args.sigma_t.ok_or_else(|| usage("--tokon needs --sigma-t"))?;
    let target_mean = args.target_mean.unwrap_or((args.index_min + args.index_max) as f64 / 2.0);
    let target =
        TargetParams::new(target_mean, sigma_t, args.index_min, args.index_max).map_err(|e| usage(e.to_string()))?;
    Ok(Some(NormalizationParams { stats: dataset_stats(dataset, args.first_n)?, target }))
}

fn prompt_token_total(requests: &[ForecastRequest], vocab: &Vocab) -> anyhow::Result<usize> {
    let mut total = 0;
    for r in requests {
        total += encode_count(&r.prompt.text, vocab)?;
    }
    Ok(total)
}

fn search(a: SearchArgs, settings: &BTreeMap<String, String>, out: &mut impl Write) -> anyhow::Result<()> {
    let dataset = read_records(&a.dataset)?;
    let ids: Vec<String> = dataset.records.iter().take(a.calibration).map(|r| r.id.clone()).collect();
    let mut config = SearchConfig::<f64>::with_range(ids, a.index_min, a.index_max);
    config.epsilon = a.epsilon;
    config.initial_lo = a.lo.unwrap_or(a.index_min as f64);
    config.initial_hi = a.hi.unwrap_or(a.index_max as f64);
    config.max_iterations = a.max_iterations;
    config.prompt_kind = a.prompt_kind;
    config.cost_kind = match a.cost {
        CostArg::Sse => CostKind::SumSquaredError,
        CostArg::Sae => CostKind::SumAbsoluteError,
    };
    if a.paper_literal_update {
        config.update_rule = UpdateRule::Literal;
    }
    config.validate()?;
    let stats = dataset_stats(&dataset, a.first_n)?;

    if a.dry_run {
        let delta = (config.initial_lo + config.initial_hi) / 2.0;
        let target = TargetParams::new(config.target_mean(), delta, a.index_min, a.index_max)?;
        let params = NormalizationParams { stats, target };
        let requests = dataset
            .records
            .iter()
            .take(a.calibration)
            .map(|r| build_request(r, config.prompt_kind, Some(&params)))
            .collect::<Result<Vec<_>, _>>()?;
        let vocab = vocab_from_arg(&a.vocab)?;
        writeln!(out, "prompts\t{}", requests.len())?;
        writeln!(out, "prompt_tokens\t{}", prompt_token_total(&requests, &vocab)?)?;
        writeln!(out, "probe\t{delta}")?;
        return Ok(());
    }

    let backend_cfg = backend_config(&a.backend, settings)?;
    let backend = build_backend(&backend_cfg)?;
    let (sigma_t, trace) = golden_section_search(&config, &dataset.records, &stats, backend.as_ref())?;
    if trace.max_iterations_exceeded {
        log::warn!("search hit the iteration cap before the interval shrank below epsilon");
    }
    let trace_path = a.trace.unwrap_or_else(|| sibling(&a.dataset, "search.tsv"));
    trace.save_table(&trace_path)?;
    writeln!(out, "sigma_t\t{sigma_t}")?;
    writeln!(out, "trace\t{}", trace_path.display())?;
    Ok(())
}

/// `<dir>/<stem>.<suffix>` beside `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn forecast(
    a: ForecastArgs,
    settings: &BTreeMap<String, String>,
    seed: Option<u64>,
    out: &mut impl Write,
) -> anyhow::Result<()> {
    if a.horizon_eval == Some(0) {
        return Err(usage("--horizon-eval must be positive"));
    }
    let dataset = read_records(&a.dataset)?;
    let params = normalization(&a.norm, &dataset)?;

    if a.dry_run {
        let requests = dataset
            .records
            .iter()
            .map(|r| build_request(r, a.prompt_kind, params.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        let vocab = vocab_from_arg(&a.vocab)?;
        writeln!(out, "prompts\t{}", requests.len())?;
        writeln!(out, "prompt_tokens\t{}", prompt_token_total(&requests, &vocab)?)?;
        return Ok(());
    }

    let backend_cfg = backend_config(&a.backend, settings)?;
    let config = ExperimentConfig {
        dataset_path: Some(a.dataset.clone()),
        prompt_kind: a.prompt_kind,
        use_tokon: params.is_some(),
        backend: backend_cfg,
        normalization: params,
        horizon_eval: a.horizon_eval,
        seed,
    };
    config.validate()?;
    let backend = build_backend(&config.backend)?;
    let results = run_experiment(&config, &dataset, backend.as_ref())?;

    let path = a.out.expect("required without --dry-run");
    write_results(&results, &path)?;
    if let Some(replay) = &a.record_replay {
        std::fs::write(replay, results.replay_fixture()).with_context(|| format!("writing {}", replay.display()))?;
    }
    match &results.metrics {
        Some(m) => m.write_table(&mut *out)?,
        None => log::warn!("every forecast failed; no metrics"),
    }
    log::info!("results written to {}", path.display());
    Ok(())
}

fn evaluate(a: EvaluateArgs, out: &mut impl Write) -> anyhow::Result<()> {
    if a.first_steps == Some(0) {
        return Err(usage("--first-steps must be positive"));
    }
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut by_kind = BTreeMap::new();
    for path in &a.results {
        let results = read_results(path)?;
        let report = results.rescore(a.first_steps)?;
        let kind = results.config.prompt_kind;
        writeln!(out, "# {} {kind} failed={}/{}", path.display(), report.n_failed, results.series.len())?;
        report.write_table(&mut *out)?;
        if let Some(dir) = &a.out_dir {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
            let table = dir.join(format!("{stem}.metrics.tsv"));
            let mut buf = Vec::new();
            report.write_table(&mut buf)?;
            std::fs::write(&table, buf).with_context(|| format!("writing {}", table.display()))?;
        }
        if by_kind.insert(kind, report).is_some() {
            bail!(UsageError(format!("two results files for prompt kind {kind}")));
        }
    }
    if by_kind.len() > 1 {
        let table = normalized_per_step_table(&by_kind)?;
        writeln!(out, "# normalized rmse")?;
        table.write_table(&mut *out)?;
        if let Some(dir) = &a.out_dir {
            let mut buf = Vec::new();
            table.write_table(&mut buf)?;
            let path = dir.join("normalized.tsv");
            std::fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(())
}
