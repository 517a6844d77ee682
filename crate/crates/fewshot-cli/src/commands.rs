use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use fewshot::dataset::{self, file_sha256, DemoStore, EvalExample};
use fewshot::harness::{
    self, BiasCache, CacheLayout, EmbeddingCache, EmbeddingSource, FileEmbeddingSource,
    HarnessError, HashEmbeddingSource, HttpEmbeddingConfig, HttpEmbeddingSource,
};
use fewshot::llm::{HttpBackend, HttpBackendConfig, MockBackend, PromptTemplate, ScoringBackend};
use fewshot::metrics::MetricsReport;
use fewshot::retrieval::{Method, RetrieverConfig};
use fewshot::{EvalRun, ScoreError};

use crate::config::{
    AblateArgs, BackendKind, BiasArgs, Cli, Command, CommonArgs, EmbedArgs, EmbedSourceKind,
    EvalArgs, IngestArgs, IngestFormat, SweepArgs,
};

const EXIT_OK: i32 = 0;
const EXIT_BAD_INPUT: i32 = 2;
const EXIT_PARTIAL: i32 = 3;
const EXIT_BACKEND: i32 = 4;

pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Embed(args) => cmd_embed(args),
        Command::Bias(args) => cmd_bias(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            classify(&e)
        }
    }
}

/// Map an error chain onto the documented exit codes: 4 for backend
/// failures, 2 for malformed input or configuration.
fn classify(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if let Some(h) = cause.downcast_ref::<HarnessError>() {
            return match h {
                HarnessError::Backend { .. }
                | HarnessError::BiasComputation { .. }
                | HarnessError::AllExamplesDropped(_) => EXIT_BACKEND,
                _ => EXIT_BAD_INPUT,
            };
        }
        if let Some(s) = cause.downcast_ref::<ScoreError>() {
            return match s {
                ScoreError::BackendUnavailable { .. } | ScoreError::BackendRejected { .. } => {
                    EXIT_BACKEND
                }
                _ => EXIT_BAD_INPUT,
            };
        }
    }
    EXIT_BAD_INPUT
}

fn cmd_ingest(args: IngestArgs) -> Result<i32> {
    let records = match args.format {
        IngestFormat::Jsonl => dataset::read_jsonl(&args.input)?,
        IngestFormat::TruthfulqaCsv => dataset::read_truthfulqa_csv(&args.input)?,
    };
    let evals = dataset::build_eval_set(&records)?;
    let pairs = dataset::expand_pairs(&evals);
    let triplets = dataset::expand_triplets(&evals);

    if let Some(parent) = args.out.parent() {
        std::fs::create_dir_all(parent).ok();
    }
    match args.format {
        // already-canonical input passes through byte-identically
        IngestFormat::Jsonl => {
            let bytes = std::fs::read(&args.input)
                .with_context(|| format!("reading {}", args.input.display()))?;
            std::fs::write(&args.out, bytes)
                .with_context(|| format!("writing {}", args.out.display()))?;
        }
        IngestFormat::TruthfulqaCsv => {
            let mut out = String::new();
            for rec in &records {
                out.push_str(&serde_json::to_string(rec)?);
                out.push('\n');
            }
            std::fs::write(&args.out, out)
                .with_context(|| format!("writing {}", args.out.display()))?;
        }
    }
    println!(
        "{} examples, {} pairs, {} triplets",
        evals.len(),
        pairs.len(),
        triplets.len()
    );
    Ok(EXIT_OK)
}

struct Loaded {
    evals: Vec<EvalExample>,
    store: DemoStore,
    dataset_id: String,
    dataset_sha256: String,
    cache: CacheLayout,
    template: PromptTemplate,
}

fn load(common: &CommonArgs) -> Result<Loaded> {
    let records = dataset::read_jsonl(&common.dataset)?;
    let evals = dataset::build_eval_set(&records)?;
    let store = dataset::expand_pairs(&evals);
    let dataset_sha256 = file_sha256(&common.dataset)
        .with_context(|| format!("hashing {}", common.dataset.display()))?;
    let dataset_id = dataset_sha256[..16].to_string();
    let cache_dir = common
        .cache_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("fewshot-cache").join(&dataset_id));
    let template = match &common.template {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading template {}", path.display()))?;
            let t: PromptTemplate = serde_json::from_str(&text)
                .with_context(|| format!("parsing template {}", path.display()))?;
            t.validate()?;
            t
        }
        None => PromptTemplate::default(),
    };
    Ok(Loaded {
        evals,
        store,
        dataset_id,
        dataset_sha256,
        cache: CacheLayout::new(cache_dir),
        template,
    })
}

fn build_backend(common: &CommonArgs) -> Result<Box<dyn ScoringBackend>> {
    match common.backend {
        BackendKind::Mock => {
            let model = common.model.clone().unwrap_or_else(|| "mock".into());
            Ok(Box::new(
                MockBackend::new(common.mock_fallback).with_model(model),
            ))
        }
        BackendKind::Http => {
            let endpoint = common
                .endpoint
                .clone()
                .ok_or_else(|| anyhow!("--endpoint is required with --backend http"))?;
            let model = common
                .model
                .clone()
                .ok_or_else(|| anyhow!("--model is required with --backend http"))?;
            let config = HttpBackendConfig {
                endpoint,
                model,
                credential_env: common.credential_env.clone(),
                max_concurrency: common.concurrency.max(1),
                retry_base_ms: common.retry_base_ms,
                ..HttpBackendConfig::default()
            };
            Ok(Box::new(HttpBackend::new(config)?))
        }
    }
}

/// Open the embedding cache, merging an external vector file when given,
/// and fill any gaps: hash-embeddings for mock runs, an error pointing at
/// `embed` otherwise.
fn prepare_embeddings(common: &CommonArgs, loaded: &Loaded) -> Result<EmbeddingCache> {
    let mut cache = EmbeddingCache::open(&loaded.cache.embeddings())?;
    if let Some(path) = &common.embeddings {
        let merged = cache.merge_file(path)?;
        log::info!("merged {merged} vectors from {}", path.display());
    }
    let missing = loaded
        .store
        .demos()
        .iter()
        .map(|d| d.question.as_str())
        .chain(loaded.evals.iter().map(|e| e.question.as_str()))
        .any(|q| !cache.contains_text(q));
    if missing {
        if common.backend == BackendKind::Mock {
            let source = HashEmbeddingSource::new(64, common.seed);
            let added =
                harness::precompute_embeddings(&loaded.store, &loaded.evals, &source, &mut cache)?;
            log::info!("hash-embedded {added} questions for the mock run");
        } else {
            bail!(
                "embedding cache at {} does not cover the dataset; run `fewshot embed` first \
                 or pass --embeddings",
                loaded.cache.embeddings().display()
            );
        }
    }
    Ok(cache)
}

/// Attach embeddings (and biases when the method needs them, computing
/// missing ones through the backend) to the store.
fn prepare_store(
    common: &CommonArgs,
    loaded: &Loaded,
    embeddings: &EmbeddingCache,
    backend: &dyn ScoringBackend,
    needs_bias: bool,
) -> Result<DemoStore> {
    let bias_cache = if needs_bias {
        let model = backend.capability().model;
        let mut cache = BiasCache::open(&loaded.cache.biases(&model), &model)?;
        let added = harness::precompute_biases(
            &loaded.store,
            backend,
            &loaded.template,
            &mut cache,
            common.concurrency,
        )?;
        if added > 0 {
            log::info!("computed {added} quality biases");
        }
        Some(cache)
    } else {
        None
    };
    Ok(loaded.store.attach(
        |question| embeddings.get_text(question),
        |demo_id| bias_cache.as_ref().and_then(|c| c.get(demo_id)),
    ))
}

fn read_fixed_ids(path: &Path) -> Result<Vec<String>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

fn retriever_config(common: &CommonArgs, method: Method) -> Result<RetrieverConfig> {
    let mut config = RetrieverConfig::new(method, common.k, common.lambda_d, common.lambda_b);
    config.rescale_bias = common.rescale_bias;
    if let Some(path) = &common.fixed_ids {
        config.fixed_ids = read_fixed_ids(path)?;
    }
    if method == Method::Fix && config.fixed_ids.is_empty() {
        bail!("method fix requires --fixed-ids");
    }
    Ok(config)
}

fn eval_run(common: &CommonArgs, loaded: &Loaded, retriever: RetrieverConfig) -> EvalRun {
    EvalRun {
        dataset_id: loaded.dataset_id.clone(),
        retriever,
        template: loaded.template.clone(),
        cache_dir: Some(loaded.cache.dir.clone()),
        concurrency: common.concurrency.max(1),
        seed: common.seed,
    }
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    dataset: String,
    dataset_sha256: String,
    cache_dir: String,
    backend: String,
    model: String,
    method: Option<String>,
    methods: Option<Vec<String>>,
    grid: Option<Vec<f64>>,
    k: usize,
    lambda_d: f64,
    lambda_b: f64,
    concurrency: usize,
    seed: u64,
    rescale_bias: bool,
    mock_fallback: Option<f64>,
    template_sha256: Option<String>,
    embeddings_sha256: Option<String>,
    fixed_ids_sha256: Option<String>,
}

impl Manifest {
    fn new(command: &str, common: &CommonArgs, loaded: &Loaded, model: &str) -> Result<Self> {
        let opt_hash = |p: &Option<PathBuf>| -> Result<Option<String>> {
            p.as_ref()
                .map(|p| file_sha256(p).with_context(|| format!("hashing {}", p.display())))
                .transpose()
        };
        Ok(Self {
            command: command.to_string(),
            dataset: common.dataset.display().to_string(),
            dataset_sha256: loaded.dataset_sha256.clone(),
            cache_dir: loaded.cache.dir.display().to_string(),
            backend: match common.backend {
                BackendKind::Mock => "mock".into(),
                BackendKind::Http => "http".into(),
            },
            model: model.to_string(),
            method: None,
            methods: None,
            grid: None,
            k: common.k,
            lambda_d: common.lambda_d,
            lambda_b: common.lambda_b,
            concurrency: common.concurrency,
            seed: common.seed,
            rescale_bias: common.rescale_bias,
            mock_fallback: matches!(common.backend, BackendKind::Mock)
                .then_some(common.mock_fallback),
            template_sha256: opt_hash(&common.template)?,
            embeddings_sha256: opt_hash(&common.embeddings)?,
            fixed_ids_sha256: opt_hash(&common.fixed_ids)?,
        })
    }
}

fn write_output(path_prefix: &Path, extension: &str, content: &str) -> Result<PathBuf> {
    let path = path_prefix.with_extension(extension);
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).ok();
        }
    }
    std::fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn write_manifest(out: &Path, manifest: &Manifest) -> Result<()> {
    write_output(
        out,
        "manifest.json",
        &format!("{}\n", serde_json::to_string_pretty(manifest)?),
    )?;
    Ok(())
}

fn cmd_embed(args: EmbedArgs) -> Result<i32> {
    let common = &args.common;
    let loaded = load(common)?;
    let mut cache = EmbeddingCache::open(&loaded.cache.embeddings())?;
    if let Some(path) = &common.embeddings {
        cache.merge_file(path)?;
    }
    let source: Box<dyn EmbeddingSource> = match args.source {
        EmbedSourceKind::Hash => Box::new(HashEmbeddingSource::new(args.dim, common.seed)),
        EmbedSourceKind::File => {
            let path = common
                .embeddings
                .as_ref()
                .ok_or_else(|| anyhow!("--embeddings is required with --source file"))?;
            Box::new(FileEmbeddingSource::load(path)?)
        }
        EmbedSourceKind::Http => {
            let config = HttpEmbeddingConfig {
                endpoint: common
                    .endpoint
                    .clone()
                    .ok_or_else(|| anyhow!("--endpoint is required with --source http"))?,
                model: common
                    .model
                    .clone()
                    .ok_or_else(|| anyhow!("--model is required with --source http"))?,
                credential_env: common.credential_env.clone(),
                ..HttpEmbeddingConfig::default()
            };
            Box::new(HttpEmbeddingSource::new(config)?)
        }
    };
    let added =
        harness::precompute_embeddings(&loaded.store, &loaded.evals, source.as_ref(), &mut cache)?;
    println!(
        "{} vectors cached ({} new) at {}",
        cache.len(),
        added,
        loaded.cache.embeddings().display()
    );
    Ok(EXIT_OK)
}

fn cmd_bias(args: BiasArgs) -> Result<i32> {
    let common = &args.common;
    let loaded = load(common)?;
    let backend = build_backend(common)?;
    let model = backend.capability().model;
    let mut cache = BiasCache::open(&loaded.cache.biases(&model), &model)?;
    let added = harness::precompute_biases(
        &loaded.store,
        backend.as_ref(),
        &loaded.template,
        &mut cache,
        common.concurrency,
    )?;
    println!(
        "{} biases cached ({} new) at {}",
        cache.len(),
        added,
        loaded.cache.biases(&model).display()
    );
    Ok(EXIT_OK)
}

fn cmd_eval(args: EvalArgs) -> Result<i32> {
    let common = &args.common;
    let method =
        Method::parse(&args.method).ok_or_else(|| anyhow!("unknown method {:?}", args.method))?;
    let loaded = load(common)?;
    let backend = build_backend(common)?;
    let embeddings = prepare_embeddings(common, &loaded)?;
    let store = prepare_store(
        common,
        &loaded,
        &embeddings,
        backend.as_ref(),
        method.uses_bias(),
    )?;
    let retriever = retriever_config(common, method)?;
    let run = eval_run(common, &loaded, retriever);

    let report = harness::evaluate(&run, &loaded.evals, &store, &embeddings, backend.as_ref())?;

    let mut manifest = Manifest::new("eval", common, &loaded, &report.model)?;
    manifest.method = Some(args.method.clone());
    write_manifest(&args.out, &manifest)?;
    write_output(
        &args.out,
        "json",
        &format!("{}\n", serde_json::to_string_pretty(&report)?),
    )?;
    write_output(
        &args.out,
        "md",
        &MetricsReport::markdown_table(std::slice::from_ref(&report)),
    )?;
    println!("{}", report.markdown_row());
    Ok(if report.n_dropped > 0 {
        EXIT_PARTIAL
    } else {
        EXIT_OK
    })
}

fn parse_methods(args: &AblateArgs) -> Result<Vec<Method>> {
    match &args.methods {
        Some(names) => names
            .iter()
            .map(|n| Method::parse(n).ok_or_else(|| anyhow!("unknown method {n:?}")))
            .collect(),
        None => {
            let mut methods = Method::ALL.to_vec();
            if args.common.fixed_ids.is_none() {
                log::info!("no --fixed-ids given; skipping the Fix variant");
                methods.retain(|m| *m != Method::Fix);
            }
            Ok(methods)
        }
    }
}

fn cmd_ablate(args: AblateArgs) -> Result<i32> {
    let common = &args.common;
    let methods = parse_methods(&args)?;
    if methods.is_empty() {
        bail!("no methods to run");
    }
    let needs_bias = methods.iter().any(|m| m.uses_bias());
    let needs_fix = methods.contains(&Method::Fix);
    if needs_fix && common.fixed_ids.is_none() {
        bail!("method fix requires --fixed-ids");
    }
    let loaded = load(common)?;
    let backend = build_backend(common)?;
    let embeddings = prepare_embeddings(common, &loaded)?;
    let store = prepare_store(common, &loaded, &embeddings, backend.as_ref(), needs_bias)?;
    let retriever = retriever_config(common, methods[0])?;
    let run = eval_run(common, &loaded, retriever);

    let reports = harness::run_ablation(
        &run,
        &methods,
        &loaded.evals,
        &store,
        &embeddings,
        backend.as_ref(),
    )?;

    let mut manifest = Manifest::new("ablate", common, &loaded, &reports[0].model)?;
    manifest.methods = Some(methods.iter().map(|m| m.to_string()).collect());
    write_manifest(&args.out, &manifest)?;
    write_output(
        &args.out,
        "json",
        &format!("{}\n", serde_json::to_string_pretty(&reports)?),
    )?;
    let table = MetricsReport::markdown_table(&reports);
    write_output(&args.out, "md", &table)?;
    print!("{table}");
    let dropped: usize = reports.iter().map(|r| r.n_dropped).sum();
    Ok(if dropped > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

fn cmd_sweep(args: SweepArgs) -> Result<i32> {
    let common = &args.common;
    let loaded = load(common)?;
    let backend = build_backend(common)?;
    let embeddings = prepare_embeddings(common, &loaded)?;
    let store = prepare_store(common, &loaded, &embeddings, backend.as_ref(), true)?;
    let retriever = retriever_config(common, Method::RelDivBias)?;
    let run = eval_run(common, &loaded, retriever);

    let rows = harness::diversity_sweep(
        &run,
        &args.grid,
        &loaded.evals,
        &store,
        &embeddings,
        backend.as_ref(),
    )?;

    let mut manifest = Manifest::new("sweep", common, &loaded, &backend.capability().model)?;
    manifest.grid = Some(args.grid.clone());
    write_manifest(&args.out, &manifest)?;
    let csv = harness::sweep_csv(&rows);
    write_output(&args.out, "csv", &csv)?;
    if args.svg {
        write_output(&args.out, "svg", &harness::sweep_svg(&rows))?;
    }
    print!("{csv}");
    Ok(EXIT_OK)
}
