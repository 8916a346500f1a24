//! Subcommand implementations.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use serde::Serialize;

use hypercube_rag::answer::{answer_question, GroundedAnswer};
use hypercube_rag::builder::{
    discover_dimensions, index_corpus, BuildError, BuildReport, DiscoveryOptions, IndexOptions,
};
use hypercube_rag::corpus::{load_corpus, CorpusDoc};
use hypercube_rag::cube::{load_schema, save_schema, DimensionSchema};
use hypercube_rag::eval::{
    ablation_variants, bench_csv, bench_table, latency_bench, load_qa, tau_variants, BenchOptions, EmptyGold,
    EvalOptions, EvalRecord, Evaluator, Method, MetricReport, Variant,
};
use hypercube_rag::llm::{Embedder, LlmClient};
use hypercube_rag::ranking::RetrievalReport;
use hypercube_rag::retrieval::{Decomposer, RetrievalError};
use hypercube_rag::{Execution, HypercubeIndex, QueryComponent, RetrievalConfig, Retriever};

use crate::config::{AppConfig, Backend};
use crate::{Cli, CliError, Command, Format, RetrievalArgs};

pub const BUILD_REPORT_FILE: &str = "build_report.json";
pub const DISCOVERY_DIR: &str = "discovery";
pub const SUMMARY_FILE: &str = "summary.txt";

/// Loaded config with the global overrides applied.
struct Session {
    config: AppConfig,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    };
    if let Some(b) = cli.backend {
        config.backend = b;
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let ctx = Session { config };
    match cli.command {
        Command::Build { corpus, schema, discover, out, k, resume, sequential, format } => {
            ctx.build(corpus, schema, discover, out, k, resume, exec(sequential), format)
        }
        Command::Retrieve { query, retrieval, format } => ctx.retrieve(query, &retrieval, format),
        Command::Answer { query, retrieval, format } => ctx.answer(&query, &retrieval, format),
        Command::Eval {
            qa,
            corpus,
            methods,
            ablation,
            answers,
            judge,
            strict_gold,
            out,
            sequential,
            retrieval,
            format,
        } => {
            let plan = EvalPlan {
                methods: if methods.is_empty() { Method::ALL.to_vec() } else { dedup(methods) },
                ablation,
                tau_sweep: false,
                answers,
                judge,
                empty_gold: if strict_gold { EmptyGold::Error } else { EmptyGold::TreatAsPerfect },
            };
            ctx.eval(&qa, corpus, &plan, out, exec(sequential), &retrieval, format)
        }
        Command::SweepTau { qa, corpus, out, sequential, retrieval, format } => {
            let plan = EvalPlan {
                methods: vec![Method::Hypercube],
                ablation: false,
                tau_sweep: true,
                answers: false,
                judge: false,
                empty_gold: EmptyGold::TreatAsPerfect,
            };
            ctx.eval(&qa, corpus, &plan, out, exec(sequential), &retrieval, format)
        }
        Command::Bench { sizes, queries, repetitions, top_k, csv, methods, format } => {
            let opts = BenchOptions {
                sizes,
                n_queries: queries,
                repetitions,
                seed: ctx.config.seed,
                top_k,
                methods: if methods.is_empty() { Method::ALL.to_vec() } else { dedup(methods) },
            };
            ctx.bench(&opts, csv, format)
        }
    }
}

fn exec(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

fn dedup(mut methods: Vec<Method>) -> Vec<Method> {
    let mut seen = Vec::new();
    methods.retain(|m| {
        let fresh = !seen.contains(m);
        seen.push(*m);
        fresh
    });
    methods
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(value).context("serializing output")?);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).context("serializing output")?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read_corpus(path: &Path) -> Result<Vec<CorpusDoc>, CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!("corpus {} does not exist", path.display())));
    }
    Ok(load_corpus(path).with_context(|| format!("corpus {}", path.display()))?)
}

/// Components read from `--components`: one list for a single query, or a
/// map from question text to its list.
enum ComponentsFile {
    List(Vec<QueryComponent>),
    Map(HashMap<String, Vec<QueryComponent>>),
}

fn read_components(path: &Path) -> Result<ComponentsFile, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("components {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("components {}", path.display()))?;
    let parsed = if value.is_array() {
        serde_json::from_value(value).map(ComponentsFile::List)
    } else {
        serde_json::from_value::<HashMap<String, Vec<QueryComponent>>>(value)
            .map(|m| ComponentsFile::Map(m.into_iter().map(|(q, c)| (q.trim().to_string(), c)).collect()))
    };
    Ok(parsed.with_context(|| format!("components {}", path.display()))?)
}

impl Session {
    fn retrieval_config(&self, args: &RetrievalArgs) -> Result<RetrievalConfig, CliError> {
        let mut config = self.config.retrieval.clone();
        if let Some(k) = args.top_k {
            config.top_k = k;
        }
        if let Some(tau) = args.tau {
            config.tau = tau;
        }
        if args.no_semantic {
            config.semantic_enabled = false;
        }
        if args.no_exact {
            config.exact_enabled = false;
        }
        config.disabled_dimensions.extend(args.disabled_dimensions.iter().cloned());
        config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(config)
    }

    fn index_dir(&self, explicit: Option<&PathBuf>) -> PathBuf {
        explicit.cloned().unwrap_or_else(|| self.config.index_dir.clone())
    }

    fn load_index(&self, args: &RetrievalArgs) -> Result<HypercubeIndex, CliError> {
        let dir = self.index_dir(args.index.as_ref());
        if !dir.is_dir() {
            return Err(CliError::Usage(format!(
                "index directory {} does not exist; run `build` first",
                dir.display()
            )));
        }
        Ok(HypercubeIndex::load(&dir).with_context(|| format!("index {}", dir.display()))?)
    }

    /// The chat client, or `None` for the gazetteer backend.
    fn chat_client(&self) -> Result<Option<Arc<LlmClient>>, CliError> {
        match self.config.backend {
            Backend::Gazetteer => Ok(None),
            _ => self.config.llm_client().map(Some),
        }
    }

    fn chat_client_required(&self, what: &str) -> Result<Arc<LlmClient>, CliError> {
        self.chat_client()?.ok_or_else(|| {
            CliError::Usage(format!("{what} needs a chat backend (--backend llm or --backend scripted)"))
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        &self,
        corpus: Option<PathBuf>,
        schema: Option<PathBuf>,
        discover: bool,
        out: Option<PathBuf>,
        k: Option<usize>,
        resume: bool,
        exec: Execution,
        format: Format,
    ) -> Result<(), CliError> {
        let corpus_path = corpus
            .or_else(|| self.config.corpus.clone())
            .ok_or_else(|| CliError::Usage("no corpus: pass --corpus or set `corpus` in the config".into()))?;
        let docs = read_corpus(&corpus_path)?;
        let out = self.index_dir(out.as_ref());
        let client = self.config.llm_client()?;
        let extractor = self.config.extractor(&client)?;

        let dimensions: Vec<DimensionSchema> = if discover {
            let embedder = self.config.embedder();
            let opts = DiscoveryOptions {
                k: k.unwrap_or(self.config.build.k),
                seed: self.config.seed,
                sample_size: self.config.build.sample_size,
                artifacts: Some(out.join(DISCOVERY_DIR)),
                resume,
                exec,
            };
            let discovery = discover_dimensions(&docs, extractor.as_ref(), embedder.as_ref(), &client, &opts)?;
            if discovery.consolidation.fallback {
                tracing::warn!("dimension consolidation fell back to name deduplication");
            }
            discovery.consolidation.dimensions
        } else {
            let path = schema.or_else(|| self.config.schema.clone()).ok_or_else(|| {
                CliError::Usage("no schema: pass --schema, set `schema` in the config, or use --discover".into())
            })?;
            if !path.exists() {
                return Err(CliError::Usage(format!("schema {} does not exist", path.display())));
            }
            load_schema(&path).with_context(|| format!("schema {}", path.display()))?
        };

        let opts = IndexOptions { max_failure_fraction: self.config.build.max_failure_fraction, exec };
        let (index, report) = match index_corpus(&docs, &dimensions, extractor.as_ref(), opts) {
            Ok(built) => built,
            Err(BuildError::TooManyFailures { total, allowed, failures }) => {
                for f in &failures {
                    eprintln!("failed: {}: {}", f.doc_id, f.error);
                }
                return Err(CliError::data(BuildError::TooManyFailures { total, allowed, failures }.into()));
            }
            Err(e) => return Err(CliError::data(e.into())),
        };
        index.save(&out).with_context(|| format!("writing index {}", out.display()))?;
        if discover {
            save_schema(&dimensions, &out.join(DISCOVERY_DIR).join("schema.json"))
                .context("writing discovered schema")?;
        }
        write_json(&out.join(BUILD_REPORT_FILE), &report)?;
        match format {
            Format::Json => print_json(&report),
            Format::Table => {
                println!("{}", build_table(&report, &out));
                Ok(())
            }
        }
    }

    /// Components for one query: from `--components`, else decomposed.
    fn components_for(
        &self,
        query: Option<&str>,
        args: &RetrievalArgs,
        index: &HypercubeIndex,
    ) -> Result<Vec<QueryComponent>, CliError> {
        if let Some(path) = &args.components {
            return match (read_components(path)?, query) {
                (ComponentsFile::List(c), _) => Ok(c),
                (ComponentsFile::Map(m), Some(q)) => m
                    .get(q.trim())
                    .cloned()
                    .ok_or_else(|| CliError::Usage(format!("{} has no components for {q:?}", path.display()))),
                (ComponentsFile::Map(_), None) => {
                    Err(CliError::Usage("a component map needs the query text to look up".into()))
                }
            };
        }
        let query = query.ok_or_else(|| CliError::Usage("pass a query or --components".into()))?;
        let client = self.chat_client()?;
        let decomposer = match &client {
            Some(c) => Decomposer::Llm(c),
            None => Decomposer::Fallback,
        };
        match decomposer.decompose(query, index) {
            Ok(c) => Ok(c),
            Err(RetrievalError::NoComponents) => Ok(Vec::new()),
            Err(e) => Err(CliError::data(e.into())),
        }
    }

    fn report(
        &self,
        query: Option<&str>,
        args: &RetrievalArgs,
        index: &HypercubeIndex,
        embedder: &dyn Embedder,
    ) -> Result<RetrievalReport, CliError> {
        let config = self.retrieval_config(args)?;
        let components = self.components_for(query, args, index)?;
        let retriever = Retriever::new(index, embedder);
        let retrieval = if components.is_empty() {
            tracing::warn!("no query components; nothing retrieved");
            hypercube_rag::retrieval::Retrieval { matches: Vec::new(), n_components: 0, stats: Default::default() }
        } else {
            retriever.retrieve(&components, &config).map_err(|e| match e {
                RetrievalError::Cube(c) => CliError::Usage(c.to_string()),
                e => CliError::data(e.into()),
            })?
        };
        Ok(RetrievalReport::new(query.map(str::to_string), &components, &config, &retrieval, index)?)
    }

    fn retrieve(&self, query: Option<String>, args: &RetrievalArgs, format: Format) -> Result<(), CliError> {
        let index = self.load_index(args)?;
        let embedder = self.config.embedder();
        let report = self.report(query.as_deref(), args, &index, embedder.as_ref())?;
        match format {
            Format::Json => print_json(&report),
            Format::Table => {
                println!("{}", report.to_table());
                Ok(())
            }
        }
    }

    fn answer(&self, query: &str, args: &RetrievalArgs, format: Format) -> Result<(), CliError> {
        let index = self.load_index(args)?;
        let embedder = self.config.embedder();
        let report = self.report(Some(query), args, &index, embedder.as_ref())?;
        let docs: Vec<_> = report
            .doc_ids()
            .into_iter()
            .map(|id| index.doc(id).ok_or_else(|| anyhow::anyhow!("ranked document {id} is not in the index")))
            .collect::<Result<_, _>>()?;
        // Empty retrieval never reaches the model, so any backend will do.
        let client = if docs.is_empty() { self.config.llm_client()? } else { self.chat_client_required("answer")? };
        let grounded = answer_question(query, &docs, &client)?;
        let out = AnswerOutput { question: query.to_string(), answer: grounded, retrieval: report };
        match format {
            Format::Json => print_json(&out),
            Format::Table => {
                println!("{}\n", out.answer.answer);
                println!("{}", out.retrieval.to_table());
                Ok(())
            }
        }
    }

    fn decomposer<'a>(&self, args: &RetrievalArgs, client: Option<&'a LlmClient>) -> Result<Decomposer<'a>, CliError> {
        if let Some(path) = &args.components {
            return match read_components(path)? {
                ComponentsFile::Map(m) => Ok(Decomposer::Fixed(m)),
                ComponentsFile::List(_) => Err(CliError::Usage(
                    "evaluation needs a component map (question text to components), not a single list".into(),
                )),
            };
        }
        Ok(match (self.config.backend, client) {
            (Backend::Gazetteer, _) | (_, None) => Decomposer::Fallback,
            (_, Some(c)) => Decomposer::Llm(c),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn eval(
        &self,
        qa: &Path,
        corpus: Option<PathBuf>,
        plan: &EvalPlan,
        out: Option<PathBuf>,
        exec: Execution,
        args: &RetrievalArgs,
        format: Format,
    ) -> Result<(), CliError> {
        if !qa.exists() {
            return Err(CliError::Usage(format!("QA file {} does not exist", qa.display())));
        }
        let records: Vec<EvalRecord> = load_qa(qa).with_context(|| format!("QA file {}", qa.display()))?;
        let index = self.load_index(args)?;
        let docs = match corpus.or_else(|| self.config.corpus.clone()) {
            Some(p) => read_corpus(&p)?,
            None => index.docs().map(|d| CorpusDoc::new(d.doc_id.clone(), d.text.clone())).collect(),
        };
        let base = self.retrieval_config(args)?;
        let embedder = self.config.embedder();
        let client = self.chat_client()?;
        if plan.answers && client.is_none() {
            return Err(CliError::Usage("--answers needs a chat backend (--backend llm or --backend scripted)".into()));
        }
        let decomposer = self.decomposer(args, client.as_deref())?;
        let evaluator =
            Evaluator::new(&index, &docs, embedder.as_ref(), &decomposer, client.as_deref()).with_execution(exec);

        let mut runs: Vec<(Method, Variant)> = Vec::new();
        for &method in &plan.methods {
            let variants = if plan.tau_sweep {
                tau_variants(&base)
            } else if plan.ablation && method == Method::Hypercube {
                ablation_variants(&base, &index.dimension_names())
            } else {
                vec![Variant { name: "full".into(), config: base.clone() }]
            };
            runs.extend(variants.into_iter().map(|v| (method, v)));
        }

        let mut reports = Vec::with_capacity(runs.len());
        for (method, variant) in runs {
            let opts = EvalOptions {
                method,
                variant: variant.name,
                config: variant.config,
                empty_gold: plan.empty_gold,
                answers: plan.answers,
                judge: plan.judge,
            };
            tracing::info!(%method, variant = %opts.variant, "evaluating");
            reports.push(evaluator.evaluate(&records, &opts)?);
        }

        let summary = MetricReport::summary_table(&reports);
        if let Some(dir) = &out {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            for r in &reports {
                write_json(&dir.join(report_file_name(r)), r)?;
            }
            fs::write(dir.join(SUMMARY_FILE), format!("{summary}\n"))
                .with_context(|| format!("writing {}", dir.display()))?;
        }
        match format {
            Format::Json => print_json(&reports),
            Format::Table => {
                println!("{summary}");
                Ok(())
            }
        }
    }

    fn bench(&self, opts: &BenchOptions, csv: Option<PathBuf>, format: Format) -> Result<(), CliError> {
        let embedder = self.config.embedder();
        let rows = latency_bench(opts, embedder.as_ref()).map_err(|e| match e {
            hypercube_rag::eval::EvalError::Config(m) => CliError::Usage(m),
            e => CliError::data(e.into()),
        })?;
        if let Some(path) = &csv {
            fs::write(path, bench_csv(&rows)).with_context(|| format!("writing {}", path.display()))?;
        }
        match format {
            Format::Json => print_json(&rows),
            Format::Table => {
                println!("{}", bench_table(&rows));
                Ok(())
            }
        }
    }
}

struct EvalPlan {
    methods: Vec<Method>,
    ablation: bool,
    tau_sweep: bool,
    answers: bool,
    judge: bool,
    empty_gold: EmptyGold,
}

#[derive(Serialize)]
struct AnswerOutput {
    question: String,
    #[serde(flatten)]
    answer: GroundedAnswer,
    retrieval: RetrievalReport,
}

/// `<method>__<variant>.json` with unsafe characters replaced.
pub fn report_file_name(report: &MetricReport) -> String {
    let variant: String = report
        .variant
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    format!("{}__{variant}.json", report.method)
}

fn build_table(report: &BuildReport, out: &Path) -> String {
    let mut lines = vec![
        format!("index:     {}", out.display()),
        format!("documents: {}", report.documents),
        format!("indexed:   {}", report.indexed),
        format!("failures:  {}", report.failures.len()),
    ];
    for (dim, n) in &report.vocabulary {
        lines.push(format!("  {dim}: {n} labels"));
    }
    lines.join("\n")
}
