use std::path::Path;

use ctxcomp::attention::{AttentionProvider, RecordedProvider, ReferenceModelConfig, ReferenceProvider};
use ctxcomp::eval::{evaluate, position_sweep, DatasetRecord, Prediction};
use ctxcomp::template::{fill_template, FilledPrompt, PromptTemplate};
use ctxcomp::{BudgetScope, CompressedDocument, CompressionConfig, Compressor, FilterMode, PipelineError};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::cli::{Cli, Command, CompressArgs, EvalArgs, GenerateArgs, PromptOptions, PromptsArgs, RecordArgs, SweepArgs};
use crate::config::{check_url, parse_timeout, pick_parsed, resolve_template, FileConfig, ProviderSpec, DEFAULT_INSTRUCTION};
use crate::generate::{generate_remote, GenerationRequest, HttpClient, DEFAULT_MAX_TOKENS, DEFAULT_TIMEOUT};
use crate::jsonl::{read_lines, read_records, write_lines, InputRecord};
use crate::remote::RemoteProvider;
use crate::CliError;

pub const DEFAULT_RATIO: f64 = 2.0;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Compress(a) => write_lines(a.output.as_deref(), &compress(&a)?),
        Command::Generate(a) => write_lines(a.output.as_deref(), &generate(&a)?),
        Command::Eval(a) => run_eval(&a),
        Command::Sweep(a) => write_lines(a.output.as_deref(), &sweep(&a)?),
        Command::Prompts(a) => write_lines(a.output.as_deref(), &prompts(&a)?),
        Command::Record(a) => record(&a).map(|n| eprintln!("wrote {n} attention records to {}", a.dir.display())),
    }
}

struct PromptSettings {
    file: FileConfig,
    template: PromptTemplate,
    instruction: String,
}

impl PromptSettings {
    fn resolve(opts: &PromptOptions) -> Result<Self, CliError> {
        let file = FileConfig::load_optional(opts.config.as_deref())?;
        let template = resolve_template(opts.template.as_deref(), &file)?;
        let instruction = opts
            .instruction
            .clone()
            .or_else(|| file.instruction.clone())
            .unwrap_or_else(|| DEFAULT_INSTRUCTION.to_string());
        Ok(Self {
            file,
            template,
            instruction,
        })
    }

    fn instruction_for<'a>(&'a self, record: &'a DatasetRecord) -> &'a str {
        record.instruction.as_deref().unwrap_or(&self.instruction)
    }
}

/// Fully resolved `compress` settings.
pub struct CompressPlan {
    pub config: CompressionConfig,
    pub provider: ProviderSpec,
    pub seed: u64,
    pub trace: bool,
    instruction: String,
    file: FileConfig,
}

impl CompressPlan {
    pub fn resolve(args: &CompressArgs) -> Result<Self, CliError> {
        let prompt = PromptSettings::resolve(&args.prompt)?;
        let file = prompt.file;
        let ratio = args.ratio.or(file.ratio).unwrap_or(DEFAULT_RATIO);
        if !(ratio.is_finite() && ratio >= 1.0) {
            return Err(CliError::invalid(format!("--ratio must be at least 1, got {ratio}")));
        }
        let mode: FilterMode = pick_parsed(args.mode, file.mode.as_deref(), "mode")?.unwrap_or_default();
        let scope: BudgetScope = pick_parsed(args.scope, file.scope.as_deref(), "scope")?.unwrap_or_default();
        let provider = pick_parsed(args.provider.clone(), file.provider.as_deref(), "provider")?
            .unwrap_or(ProviderSpec::Reference);
        let config = CompressionConfig {
            tau: 1.0 / ratio,
            mode,
            scope,
            sigma: args.sigma.or(file.sigma).unwrap_or(ctxcomp::scoring::DEFAULT_SIGMA),
            radius: args.radius.or(file.radius).unwrap_or(ctxcomp::scoring::DEFAULT_RADIUS),
            template: prompt.template,
            jobs: args.jobs.or(file.jobs).unwrap_or(1),
        };
        config.validate().map_err(|e| CliError::invalid(e.to_string()))?;
        Ok(Self {
            config,
            provider,
            seed: args.seed.or(file.seed).unwrap_or(0),
            trace: args.trace || file.trace.unwrap_or(false),
            instruction: prompt.instruction,
            file,
        })
    }

    pub fn build_provider(&self) -> Result<Box<dyn AttentionProvider>, CliError> {
        Ok(match &self.provider {
            ProviderSpec::Reference => Box::new(ReferenceProvider::new(ReferenceModelConfig::with_seed(self.seed))),
            ProviderSpec::Recorded(dir) => Box::new(RecordedProvider::new(dir.clone())),
            ProviderSpec::Remote(url) => Box::new(
                RemoteProvider::new(url.clone(), HttpClient::new(self.file.bearer_token()))
                    .with_timeout(self.file.timeout()?.unwrap_or(DEFAULT_TIMEOUT)),
            ),
        })
    }
}

fn compressed_json(doc: &CompressedDocument, trace: bool) -> Value {
    let mut out = json!({
        "id": doc.id,
        "text": doc.compressed.rendered,
        "kept_words": doc.compressed.kept_words(),
        "source_words": doc.compressed.source_words,
    });
    if trace {
        out["trace"] = json!({
            "provider": doc.provider_id,
            "achieved_ratio": doc.compressed.achieved_ratio,
            "fallback": doc.compressed.fallback,
            "words": doc.trace.words,
            "alpha2": doc.trace.alpha2,
            "alpha3": doc.trace.alpha3,
            "selected": doc.trace.selected,
        });
    }
    out
}

fn pipeline_error(record: &InputRecord, e: PipelineError) -> CliError {
    match e {
        PipelineError::Config(m) => CliError::Validation(m),
        other => CliError::Provider {
            record: record.label(),
            message: other.to_string(),
        },
    }
}

/// Input records, in input order, each with `compressed_documents` added.
pub fn compress(args: &CompressArgs) -> Result<Vec<Value>, CliError> {
    let plan = CompressPlan::resolve(args)?;
    let inputs = read_records(&args.input)?;
    let compressor = Compressor::new(plan.config.clone(), plan.build_provider()?)
        .map_err(|e| CliError::invalid(e.to_string()))?;
    let typed: Vec<DatasetRecord> = inputs.iter().map(|r| r.record.clone()).collect();
    let results = compressor.compress_records(&typed, &plan.instruction);
    inputs
        .into_iter()
        .zip(results)
        .map(|(input, result)| {
            let docs = result.map_err(|e| pipeline_error(&input, e))?;
            let mut raw = input.raw;
            raw.insert(
                "compressed_documents".into(),
                Value::Array(docs.iter().map(|d| compressed_json(d, plan.trace)).collect()),
            );
            Ok(Value::Object(raw))
        })
        .collect()
}

fn document_block(title: Option<&str>, text: &str) -> String {
    match title {
        Some(t) if !t.is_empty() => format!("{t}\n{text}"),
        _ => text.to_string(),
    }
}

/// Context string for generation: compressed texts when present, else the
/// original documents, separated by blank lines.
pub fn generation_context(input: &InputRecord, uncompressed: bool) -> String {
    let docs = &input.record.documents;
    let compressed = input.raw.get("compressed_documents").and_then(Value::as_array);
    let blocks: Vec<String> = match compressed {
        Some(items) if !uncompressed => items
            .iter()
            .enumerate()
            .map(|(i, item)| {
                let id = item.get("id").and_then(Value::as_str);
                let title = docs
                    .iter()
                    .find(|d| Some(d.id.as_str()) == id)
                    .or(docs.get(i))
                    .and_then(|d| d.title.as_deref());
                document_block(title, item.get("text").and_then(Value::as_str).unwrap_or_default())
            })
            .collect(),
        _ => docs.iter().map(|d| document_block(d.title.as_deref(), &d.text)).collect(),
    };
    blocks.join("\n\n")
}

/// One `{"id", "prediction"}` object per input record, in input order.
pub fn generate(args: &GenerateArgs) -> Result<Vec<Value>, CliError> {
    let prompt = PromptSettings::resolve(&args.prompt)?;
    let file = &prompt.file;
    let endpoint = args
        .endpoint
        .clone()
        .or_else(|| file.endpoint.clone())
        .ok_or_else(|| CliError::invalid("generate needs --endpoint or an endpoint in the config"))?;
    check_url(&endpoint).map_err(CliError::Validation)?;
    let model = args.model.clone().or_else(|| file.model.clone()).unwrap_or_else(|| "default".into());
    let temperature = args.temperature.or(file.temperature).unwrap_or(0.0);
    if !(temperature >= 0.0 && temperature.is_finite()) {
        return Err(CliError::invalid(format!("temperature must be >= 0, got {temperature}")));
    }
    let max_tokens = args.max_tokens.or(file.max_tokens).unwrap_or(DEFAULT_MAX_TOKENS);
    let timeout = match args.timeout {
        Some(s) => parse_timeout(s)?,
        None => file.timeout()?.unwrap_or(DEFAULT_TIMEOUT),
    };
    let in_flight = args.max_in_flight.or(file.max_in_flight).unwrap_or(DEFAULT_MAX_IN_FLIGHT);
    if in_flight == 0 {
        return Err(CliError::invalid("--max-in-flight must be at least 1"));
    }
    let client = HttpClient::new(file.bearer_token());
    let inputs = read_records(&args.input)?;
    let requests: Vec<GenerationRequest> = inputs
        .iter()
        .map(|input| {
            let r = &input.record;
            let filled = fill_template(
                prompt.instruction_for(r),
                &generation_context(input, args.uncompressed),
                &r.query,
                &prompt.template,
            );
            GenerationRequest {
                temperature,
                max_tokens,
                timeout,
                ..GenerationRequest::new(endpoint.clone(), model.clone(), filled.text)
            }
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(in_flight)
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    let answers: Vec<_> = pool.install(|| requests.par_iter().map(|req| generate_remote(req, &client)).collect());
    inputs
        .iter()
        .zip(answers)
        .map(|(input, answer)| {
            let text = answer.map_err(|e| CliError::Provider {
                record: input.label(),
                message: format!("generation: {e}"),
            })?;
            Ok(json!({"id": input.record.id, "prediction": text}))
        })
        .collect()
}

pub fn eval_report(args: &EvalArgs) -> Result<Value, CliError> {
    if args.metrics.is_empty() {
        return Err(CliError::invalid("--metrics selects nothing"));
    }
    let mut metrics = Vec::new();
    for m in &args.metrics {
        if !metrics.contains(m) {
            metrics.push(*m);
        }
    }
    let preds: Vec<Prediction> = read_lines(&args.pred)?.into_iter().map(|(_, p)| p).collect();
    let golds: Vec<DatasetRecord> = read_records(&args.gold)?.into_iter().map(|r| r.record).collect();
    let report = evaluate(&preds, &golds, &metrics).map_err(|e| CliError::invalid(e.to_string()))?;
    Ok(report.to_json())
}

fn run_eval(args: &EvalArgs) -> Result<(), CliError> {
    let report = eval_report(args)?;
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    match &args.output {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// For every record and position, a copy with the gold document at that rank
/// and a `gold_position` field.
pub fn sweep(args: &SweepArgs) -> Result<Vec<Value>, CliError> {
    if args.positions.is_empty() {
        return Err(CliError::invalid("--positions is empty"));
    }
    let mut out = Vec::new();
    for input in read_records(&args.input)? {
        let raw_docs = input.raw.get("documents").and_then(Value::as_array).cloned().unwrap_or_default();
        let gold = input.record.documents.iter().position(|d| d.is_gold == Some(true));
        for &position in &args.positions {
            position_sweep(&input.record, position)
                .map_err(|e| CliError::invalid(format!("record {}: {e}", input.label())))?;
            let mut docs = raw_docs.clone();
            if let Some(g) = gold {
                let d = docs.remove(g);
                docs.insert(position - 1, d);
            }
            let mut raw = input.raw.clone();
            raw.insert("documents".into(), Value::Array(docs));
            raw.insert("gold_position".into(), json!(position));
            out.push(Value::Object(raw));
        }
    }
    Ok(out)
}

struct DocumentPrompt {
    record: String,
    document: String,
    prompt: FilledPrompt,
}

/// Filled prompts of every non-empty document; empty documents never reach a
/// provider.
fn document_prompts(input: &Path, opts: &PromptOptions) -> Result<Vec<DocumentPrompt>, CliError> {
    let settings = PromptSettings::resolve(opts)?;
    let mut out = Vec::new();
    for rec in read_records(input)? {
        for doc in rec.record.documents.iter().filter(|d| d.len_words() > 0) {
            out.push(DocumentPrompt {
                record: rec.label(),
                document: doc.id.clone(),
                prompt: fill_template(settings.instruction_for(&rec.record), &doc.text, &rec.record.query, &settings.template),
            });
        }
    }
    Ok(out)
}

pub fn prompts(args: &PromptsArgs) -> Result<Vec<Value>, CliError> {
    Ok(document_prompts(&args.input, &args.prompt)?
        .into_iter()
        .map(|p| {
            json!({
                "record_id": p.record,
                "document_id": p.document,
                "prompt": p.prompt.text,
                "prompt_sha256": ctxcomp::attention::prompt_sha256(&p.prompt.text),
                "context_char_span": [p.prompt.context_char_span.0, p.prompt.context_char_span.1],
            })
        })
        .collect())
}

/// Number of files written.
pub fn record(args: &RecordArgs) -> Result<usize, CliError> {
    let file = FileConfig::load_optional(args.prompt.config.as_deref())?;
    let provider = ReferenceProvider::new(ReferenceModelConfig::with_seed(args.seed.or(file.seed).unwrap_or(0)));
    let prompts = document_prompts(&args.input, &args.prompt)?;
    std::fs::create_dir_all(&args.dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", args.dir.display())))?;
    let sink = RecordedProvider::new(args.dir.clone());
    for p in &prompts {
        let rec = provider.trigger_attention(&p.prompt).map_err(|e| CliError::Provider {
            record: p.record.clone(),
            message: format!("document {}: {e}", p.document),
        })?;
        let body = serde_json::to_string(&rec.to_interchange(&p.prompt)).map_err(|e| CliError::Io(e.to_string()))?;
        let path = sink.path_for(&p.prompt);
        std::fs::write(&path, body).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(prompts.len())
}
