//! End-to-end orchestration: a JSON config, individually re-runnable stages,
//! and resumable stores.
//!
//! Stage order: `ingest` -> `build-lexicon` -> `train-embedding` ->
//! `expand-lexicon` -> `annotate` (lexicon pass) and `score` (toxicity pass)
//! -> `combine` -> `analyze` / `report`. The two annotation passes are
//! deliberately decoupled so the expensive remote-scoring pass can be
//! throttled, sampled, or resumed independently of the cheap lexicon pass;
//! both resume by skipping ids already present in their stores.
//!
//! Full-file outputs are written atomically (temp file + rename); the
//! per-record stores are append-only line-delimited JSON.

use std::collections::{HashMap, HashSet};
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    self, detect_spikes, export_graph, export_ngrams, export_temporal, neighbor_graph,
    ngram_counts, temporal_series, ExportFormat, NeighborGraphParams, DEFAULT_SPIKE_K,
    DEFAULT_SPIKE_WINDOW,
};
use crate::combiner::{read_annotations, summarize, AnnotationRecord, CombineError};
use crate::corpus::{
    self, FilterConfig, IngestReport, IngestStream, TokenSequence, TweetRecord,
};
use crate::embedding::{
    self, EmbeddingModel, TrainConfig, DEFAULT_SIMILARITY_THRESHOLD,
};
use crate::label::Label;
use crate::lexicon::{
    self, LexiconKind, LexiconSet, TermListFile, DEFAULT_REF_COUNT_THRESHOLD,
};
use crate::matcher::{MatchResult, PatternAutomaton};
use crate::toxicity::{
    score_stub, ScorerConfig, ToxicityClient, ToxicityScore, DEFAULT_TOXICITY_THRESHOLD,
};

/// Environment variable holding the remote scorer key; never stored in
/// config files.
pub const SCORER_API_KEY_VAR: &str = "SCORER_API_KEY";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Lexicon(#[from] lexicon::LexiconError),
    #[error(transparent)]
    Embedding(#[from] embedding::EmbeddingError),
    #[error(transparent)]
    Matcher(#[from] crate::matcher::MatchError),
    #[error(transparent)]
    Toxicity(#[from] crate::toxicity::ToxicityError),
    #[error(transparent)]
    Combine(#[from] CombineError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

impl PipelineError {
    /// 1 for validation failures, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 1,
            _ => 2,
        }
    }
}

fn validation(msg: impl Into<String>) -> PipelineError {
    PipelineError::Validation(msg.into())
}

/// One lexicon source file plus its provenance tag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LexiconFileEntry {
    pub path: PathBuf,
    #[serde(default = "default_lexicon_source")]
    pub source: lexicon::Source,
}

fn default_lexicon_source() -> lexicon::Source {
    lexicon::Source::User
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelinePaths {
    /// Raw line-delimited JSON inputs (optionally gzipped).
    pub corpus_inputs: Vec<PathBuf>,
    pub corpus_store: PathBuf,
    pub lexicon_files: Vec<LexiconFileEntry>,
    /// Ambiguous-word stoplist; the bundled seed list applies when unset.
    pub stoplist: Option<PathBuf>,
    pub reference_corpus: PathBuf,
    pub basic_lexicon: PathBuf,
    pub extended_lexicon: PathBuf,
    pub model_file: PathBuf,
    pub lexicon_annotations: PathBuf,
    pub toxicity_scores: PathBuf,
    pub annotations: PathBuf,
    pub toxicity_cache: Option<PathBuf>,
    /// Unigram exclusion list for n-gram rankings; bundled default when unset.
    pub exclusions: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for PipelinePaths {
    fn default() -> Self {
        let work = PathBuf::from("work");
        PipelinePaths {
            corpus_inputs: Vec::new(),
            corpus_store: work.join("corpus.jsonl"),
            lexicon_files: Vec::new(),
            stoplist: None,
            reference_corpus: work.join("reference.jsonl"),
            basic_lexicon: work.join("lexicon_basic.json"),
            extended_lexicon: work.join("lexicon_extended.json"),
            model_file: work.join("embeddings.bin"),
            lexicon_annotations: work.join("lexicon_annotations.jsonl"),
            toxicity_scores: work.join("toxicity_scores.jsonl"),
            annotations: work.join("annotations.jsonl"),
            toxicity_cache: Some(work.join("toxicity_cache.jsonl")),
            exclusions: None,
            output_dir: work.join("analysis"),
        }
    }
}

/// The three headline thresholds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Extended-lexicon similarity cutoff (strictly greater than).
    pub similarity: f64,
    /// Toxicity classification cutoff (strictly greater than).
    pub toxicity: f64,
    /// Minimum reference-corpus occurrences for a basic-lexicon term.
    pub lexicon_min_count: u64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            similarity: DEFAULT_SIMILARITY_THRESHOLD,
            toxicity: DEFAULT_TOXICITY_THRESHOLD,
            lexicon_min_count: DEFAULT_REF_COUNT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerMode {
    /// Deterministic offline stub.
    Stub,
    /// Remote scorer speaking the Perspective wire protocol.
    Remote,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerSettings {
    pub mode: ScorerMode,
    pub endpoint_url: String,
    pub max_qps: u32,
    pub max_retries: u32,
    pub timeout_secs: f64,
    pub backoff_base_secs: f64,
}

impl Default for ScorerSettings {
    fn default() -> Self {
        let base = ScorerConfig::default();
        ScorerSettings {
            mode: ScorerMode::Stub,
            endpoint_url: base.endpoint_url,
            max_qps: base.max_qps,
            max_retries: base.max_retries,
            timeout_secs: base.timeout_secs,
            backoff_base_secs: base.backoff_base_secs,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisDefaults {
    pub ngram_top_k: usize,
    pub graph: NeighborGraphParams,
    pub spike_k: f64,
    pub spike_window: usize,
}

impl Default for AnalysisDefaults {
    fn default() -> Self {
        AnalysisDefaults {
            ngram_top_k: 30,
            graph: NeighborGraphParams::default(),
            spike_k: DEFAULT_SPIKE_K,
            spike_window: DEFAULT_SPIKE_WINDOW,
        }
    }
}

/// Whole-pipeline configuration, loaded from a JSON file. Every field has a
/// default, so a minimal config only names its inputs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: PipelinePaths,
    pub thresholds: Thresholds,
    pub filters: FilterConfig,
    pub scorer: ScorerSettings,
    pub train: TrainConfig,
    pub analysis: AnalysisDefaults,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig, PipelineError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| validation(format!("cannot read config {}: {e}", path.display())))?;
        let config: PipelineConfig = serde_json::from_str(&raw)
            .map_err(|e| validation(format!("cannot parse config {}: {e}", path.display())))?;
        config.validate_thresholds()?;
        Ok(config)
    }

    fn validate_thresholds(&self) -> Result<(), PipelineError> {
        let t = &self.thresholds;
        if !(t.similarity > 0.0 && t.similarity <= 1.0) {
            return Err(validation("thresholds.similarity must be in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&t.toxicity) {
            return Err(validation("thresholds.toxicity must be in [0, 1]"));
        }
        if self.filters.topic_keywords.is_empty() {
            return Err(validation("filters.topic_keywords must not be empty"));
        }
        Ok(())
    }

    fn require_inputs(&self, inputs: &[(&Path, &str)]) -> Result<(), PipelineError> {
        for (path, role) in inputs {
            if !path.exists() {
                return Err(validation(format!(
                    "{role} not found at {}",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}

/// Pipeline subcommands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Ingest,
    BuildLexicon,
    TrainEmbedding,
    ExpandLexicon,
    Annotate,
    Score,
    Combine,
    Analyze(AnalyzeKind),
    Report,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnalyzeKind {
    Ngram { n: usize },
    Graph { target: String },
    Temporal,
}

/// Per-invocation flags.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub workers: usize,
    pub seed: Option<u64>,
    pub deterministic: bool,
    /// Record cap for smoke runs; applies to ingest (kept records) and to
    /// newly processed records in annotate/score.
    pub limit: Option<usize>,
    pub format: ExportFormat,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            workers: 1,
            seed: None,
            deterministic: false,
            limit: None,
            format: ExportFormat::Csv,
        }
    }
}

impl RunOptions {
    fn effective_workers(&self) -> usize {
        if self.deterministic && self.workers > 1 {
            log::info!("deterministic mode: forcing workers=1");
            1
        } else {
            self.workers.max(1)
        }
    }
}

/// Dispatches one subcommand against its declared inputs and outputs.
pub fn run(command: &Command, config: &PipelineConfig, opts: &RunOptions) -> Result<(), PipelineError> {
    config.validate_thresholds()?;
    match command {
        Command::Ingest => stage_ingest(config, opts).map(|report| {
            log::info!("ingest report: {report:?}");
        }),
        Command::BuildLexicon => stage_build_lexicon(config).map(|lex| {
            log::info!("basic lexicon: {} terms", lex.len());
        }),
        Command::TrainEmbedding => stage_train_embedding(config, opts).map(|model| {
            log::info!("trained model: {} terms x {} dims", model.len(), model.dim());
        }),
        Command::ExpandLexicon => stage_expand_lexicon(config).map(|lex| {
            log::info!("extended lexicon: {} terms", lex.len());
        }),
        Command::Annotate => stage_annotate(config, opts).map(|n| {
            log::info!("annotated {n} new records");
        }),
        Command::Score => stage_score(config, opts).map(|outcome| {
            log::info!(
                "scored {} new records ({} unscored after errors)",
                outcome.scored,
                outcome.failed
            );
        }),
        Command::Combine => stage_combine(config).map(|n| {
            log::info!("combined {n} records");
        }),
        Command::Analyze(kind) => stage_analyze(config, kind, opts.format),
        Command::Report => stage_report(config),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads, filters, and normalizes every corpus input into the canonical
/// sorted record store.
pub fn stage_ingest(
    config: &PipelineConfig,
    opts: &RunOptions,
) -> Result<IngestReport, PipelineError> {
    if config.paths.corpus_inputs.is_empty() {
        return Err(validation("paths.corpus_inputs is empty"));
    }
    let input_refs: Vec<(&Path, &str)> = config
        .paths
        .corpus_inputs
        .iter()
        .map(|p| (p.as_path(), "corpus input"))
        .collect();
    config.require_inputs(&input_refs)?;

    let mut records = Vec::new();
    let mut report = IngestReport::default();
    'files: for input in &config.paths.corpus_inputs {
        let reader = corpus::open_source(input)?;
        let mut stream = IngestStream::new(reader, config.filters.clone());
        for item in &mut stream {
            records.push(item?);
            if opts.limit.is_some_and(|limit| records.len() >= limit) {
                report = report.merge(stream.report());
                break 'files;
            }
        }
        report = report.merge(stream.report());
    }
    if let Some(parent) = config.paths.corpus_store.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    corpus::write_store(&config.paths.corpus_store, &mut records)?;
    Ok(report)
}

/// Merges the lexicon source lists, removes stoplisted terms, and applies the
/// reference-corpus frequency filter.
pub fn stage_build_lexicon(config: &PipelineConfig) -> Result<LexiconSet, PipelineError> {
    if config.paths.lexicon_files.is_empty() {
        return Err(validation("paths.lexicon_files is empty"));
    }
    let mut required: Vec<(&Path, &str)> = config
        .paths
        .lexicon_files
        .iter()
        .map(|f| (f.path.as_path(), "lexicon source"))
        .collect();
    required.push((config.paths.reference_corpus.as_path(), "reference corpus"));
    if let Some(stoplist) = &config.paths.stoplist {
        required.push((stoplist.as_path(), "stoplist"));
    }
    config.require_inputs(&required)?;

    let files: Vec<TermListFile> = config
        .paths
        .lexicon_files
        .iter()
        .map(|f| TermListFile {
            path: f.path.clone(),
            source: f.source,
        })
        .collect();
    let merged = lexicon::merge_sources(&files)?;
    let stoplist = match &config.paths.stoplist {
        Some(path) => lexicon::load_stoplist(path)?,
        None => lexicon::default_stoplist(),
    };
    let stopped = lexicon::apply_stoplist(&merged, &stoplist);
    let reference = lexicon::read_reference_corpus(&config.paths.reference_corpus)?;
    let mut basic =
        lexicon::frequency_filter(&stopped, &reference, config.thresholds.lexicon_min_count)?;
    basic.name = "basic".to_string();
    basic.kind = LexiconKind::Basic;
    if let Some(parent) = config.paths.basic_lexicon.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    basic.save(&config.paths.basic_lexicon)?;
    Ok(basic)
}

/// Trains the skip-gram model over the corpus store. Single worker and
/// seeded, so the model file is reproducible byte for byte.
pub fn stage_train_embedding(
    config: &PipelineConfig,
    opts: &RunOptions,
) -> Result<EmbeddingModel, PipelineError> {
    config.require_inputs(&[(config.paths.corpus_store.as_path(), "corpus store")])?;
    let records = corpus::read_store(&config.paths.corpus_store)?;
    let sequences: Vec<TokenSequence> = records.iter().map(TweetRecord::token_sequence).collect();
    let mut train_config = config.train.clone();
    if let Some(seed) = opts.seed {
        train_config.seed = seed;
    }
    let model = embedding::train(&sequences, &train_config)?;
    if let Some(parent) = config.paths.model_file.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    model.save(&config.paths.model_file)?;
    Ok(model)
}

/// Expands the basic lexicon by embedding similarity.
pub fn stage_expand_lexicon(config: &PipelineConfig) -> Result<LexiconSet, PipelineError> {
    config.require_inputs(&[
        (config.paths.model_file.as_path(), "model file"),
        (config.paths.basic_lexicon.as_path(), "basic lexicon"),
    ])?;
    let model = EmbeddingModel::load(&config.paths.model_file)?;
    let basic = LexiconSet::load(&config.paths.basic_lexicon)?;
    let mut extended = embedding::expand_lexicon(&model, &basic, config.thresholds.similarity)?;
    extended.name = "extended".to_string();
    extended.save(&config.paths.extended_lexicon)?;
    Ok(extended)
}

fn existing_ids(path: &Path) -> Result<HashSet<String>, PipelineError> {
    use std::io::BufRead;
    let mut ids = HashSet::new();
    if !path.exists() {
        return Ok(ids);
    }
    #[derive(Deserialize)]
    struct IdOnly {
        source_id: String,
    }
    let reader = io::BufReader::new(std::fs::File::open(path)?);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if let Ok(record) = serde_json::from_str::<IdOnly>(&line) {
            ids.insert(record.source_id);
        }
    }
    Ok(ids)
}

fn append_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), PipelineError> {
    use std::io::Write;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut out = io::BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Lexicon annotation pass: labels every store record not yet present in the
/// lexicon-annotation store against the union of basic and extended lexicons.
/// Pure per-record work, parallelized across `--workers`.
pub fn stage_annotate(config: &PipelineConfig, opts: &RunOptions) -> Result<usize, PipelineError> {
    config.require_inputs(&[
        (config.paths.corpus_store.as_path(), "corpus store"),
        (config.paths.basic_lexicon.as_path(), "basic lexicon"),
        (config.paths.extended_lexicon.as_path(), "extended lexicon"),
    ])?;
    let basic = LexiconSet::load(&config.paths.basic_lexicon)?;
    let extended = LexiconSet::load(&config.paths.extended_lexicon)?;
    let merged = LexiconSet::union("basic+extended", LexiconKind::Merged, &[&basic, &extended]);
    let automaton = PatternAutomaton::compile(&merged)?;

    let records = corpus::read_store(&config.paths.corpus_store)?;
    let done = existing_ids(&config.paths.lexicon_annotations)?;
    let mut pending: Vec<&TweetRecord> =
        records.iter().filter(|r| !done.contains(&r.id)).collect();
    if let Some(limit) = opts.limit {
        pending.truncate(limit);
    }

    let workers = opts.effective_workers();
    let results: Vec<MatchResult> = if workers > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| validation(format!("cannot build worker pool: {e}")))?;
        pool.install(|| {
            pending
                .par_iter()
                .map(|record| automaton.annotate(&record.token_sequence()))
                .collect()
        })
    } else {
        pending
            .iter()
            .map(|record| automaton.annotate(&record.token_sequence()))
            .collect()
    };

    append_jsonl(&config.paths.lexicon_annotations, &results)?;
    Ok(results.len())
}

/// Outcome counts of one scoring pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScoreOutcome {
    pub scored: usize,
    pub failed: usize,
    pub skipped: usize,
}

/// Toxicity scoring pass. Successfully scored records are appended to the
/// score store; failures are logged and left unscored so a later run can
/// retry them. Already-scored ids are skipped without any scorer call.
pub fn stage_score(config: &PipelineConfig, opts: &RunOptions) -> Result<ScoreOutcome, PipelineError> {
    config.require_inputs(&[(config.paths.corpus_store.as_path(), "corpus store")])?;
    let records = corpus::read_store(&config.paths.corpus_store)?;
    let done = existing_ids(&config.paths.toxicity_scores)?;
    let mut outcome = ScoreOutcome {
        skipped: records.len() - records.iter().filter(|r| !done.contains(&r.id)).count(),
        ..ScoreOutcome::default()
    };
    let mut pending: Vec<&TweetRecord> =
        records.iter().filter(|r| !done.contains(&r.id)).collect();
    if let Some(limit) = opts.limit {
        pending.truncate(limit);
    }

    let mut scores: Vec<ToxicityScore> = Vec::with_capacity(pending.len());
    match config.scorer.mode {
        ScorerMode::Stub => {
            for record in pending {
                scores.push(score_stub(&record.id, &record.text));
            }
        }
        ScorerMode::Remote => {
            if opts.deterministic {
                log::warn!("deterministic mode with a remote scorer is best-effort only");
            }
            let api_key = std::env::var(SCORER_API_KEY_VAR).map_err(|_| {
                validation(format!("remote scorer requires {SCORER_API_KEY_VAR} to be set"))
            })?;
            let scorer_config = ScorerConfig {
                endpoint_url: config.scorer.endpoint_url.clone(),
                api_key,
                max_qps: config.scorer.max_qps,
                max_retries: config.scorer.max_retries,
                timeout_secs: config.scorer.timeout_secs,
                threshold: config.thresholds.toxicity,
                cache_path: config.paths.toxicity_cache.clone(),
                backoff_base_secs: config.scorer.backoff_base_secs,
            };
            if let Some(cache) = &scorer_config.cache_path {
                if let Some(parent) = cache.parent() {
                    if !parent.as_os_str().is_empty() {
                        std::fs::create_dir_all(parent)?;
                    }
                }
            }
            let client = ToxicityClient::new(scorer_config)?;
            for record in pending {
                match client.score(&record.id, &record.text) {
                    Ok(score) => scores.push(score),
                    Err(e) => {
                        log::warn!("record {} left unscored: {e}", record.id);
                        outcome.failed += 1;
                    }
                }
            }
        }
    }
    outcome.scored = scores.len();
    append_jsonl(&config.paths.toxicity_scores, &scores)?;
    Ok(outcome)
}

/// Joins the lexicon and toxicity stores into the final annotation store.
/// Records the toxicity pass never reached are carried as unscored.
pub fn stage_combine(config: &PipelineConfig) -> Result<usize, PipelineError> {
    config.require_inputs(&[(config.paths.corpus_store.as_path(), "corpus store")])?;
    if !config.paths.lexicon_annotations.exists() {
        return Err(validation("no annotations: run `annotate` first"));
    }
    let records = corpus::read_store(&config.paths.corpus_store)?;
    let lexicon_results: Vec<MatchResult> = {
        use std::io::BufRead;
        let reader = io::BufReader::new(std::fs::File::open(&config.paths.lexicon_annotations)?);
        let mut results = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let result: MatchResult =
                serde_json::from_str(&line).map_err(|e| CombineError::CorruptStore {
                    path: config.paths.lexicon_annotations.display().to_string(),
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            results.push(result);
        }
        results
    };
    if lexicon_results.is_empty() {
        return Err(validation("no annotations: the lexicon-annotation store is empty"));
    }
    let by_id: HashMap<&str, &MatchResult> = lexicon_results
        .iter()
        .map(|r| (r.source_id.as_str(), r))
        .collect();

    let mut score_by_id: HashMap<String, ToxicityScore> = HashMap::new();
    if config.paths.toxicity_scores.exists() {
        use std::io::BufRead;
        let reader = io::BufReader::new(std::fs::File::open(&config.paths.toxicity_scores)?);
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let score: ToxicityScore = serde_json::from_str(&line)
                .map_err(|e| validation(format!("corrupt toxicity score store: {e}")))?;
            score_by_id.insert(score.source_id.clone(), score);
        }
    }

    let mut annotations = Vec::with_capacity(records.len());
    let mut missing = 0usize;
    for record in &records {
        let Some(match_result) = by_id.get(record.id.as_str()) else {
            missing += 1;
            continue;
        };
        annotations.push(AnnotationRecord::fuse(
            match_result,
            score_by_id.get(&record.id),
            config.thresholds.toxicity,
        ));
    }
    if missing > 0 {
        log::warn!("{missing} corpus records have no lexicon annotation yet; rerun `annotate`");
    }
    if annotations.is_empty() {
        return Err(validation("no annotations: nothing to combine"));
    }

    let mut bytes = Vec::new();
    {
        use std::io::Write;
        for record in &annotations {
            serde_json::to_writer(&mut bytes, record).map_err(io::Error::from)?;
            bytes.write_all(b"\n")?;
        }
    }
    write_atomic(&config.paths.annotations, &bytes)?;
    Ok(annotations.len())
}

fn load_joined(
    config: &PipelineConfig,
) -> Result<(Vec<(TokenSequence, Label)>, Vec<(DateTime<Utc>, Label)>), PipelineError> {
    config.require_inputs(&[
        (config.paths.corpus_store.as_path(), "corpus store"),
        (config.paths.annotations.as_path(), "annotation store"),
    ])?;
    let records = corpus::read_store(&config.paths.corpus_store)?;
    let annotations = read_annotations(&config.paths.annotations)?;
    let label_by_id: HashMap<&str, Label> = annotations
        .iter()
        .map(|a| (a.source_id.as_str(), a.combined_label))
        .collect();

    let mut labeled_tokens = Vec::new();
    let mut timestamps = Vec::new();
    for record in &records {
        let Some(&label) = label_by_id.get(record.id.as_str()) else {
            continue;
        };
        labeled_tokens.push((record.token_sequence(), label));
        timestamps.push((record.created_at, label));
    }
    Ok((labeled_tokens, timestamps))
}

fn format_extension(format: ExportFormat) -> &'static str {
    match format {
        ExportFormat::Csv => "csv",
        ExportFormat::Json => "json",
        ExportFormat::Dot => "dot",
    }
}

/// Runs one analysis and writes its export under `output_dir`.
pub fn stage_analyze(
    config: &PipelineConfig,
    kind: &AnalyzeKind,
    format: ExportFormat,
) -> Result<(), PipelineError> {
    let (labeled_tokens, timestamps) = load_joined(config)?;
    let extension = format_extension(format);
    match kind {
        AnalyzeKind::Ngram { n } => {
            let exclusions = match &config.paths.exclusions {
                Some(path) => lexicon::read_term_list(path)?
                    .into_iter()
                    .flat_map(|raw| crate::corpus::normalize_term(&raw))
                    .collect(),
                None => analysis::default_exclusions().clone(),
            };
            let table = ngram_counts(
                &labeled_tokens,
                *n,
                config.analysis.ngram_top_k,
                &exclusions,
            )?;
            let rendered = export_ngrams(&table, format)?;
            let path = config.paths.output_dir.join(format!("ngrams_{n}.{extension}"));
            write_atomic(&path, rendered.as_bytes())?;
            log::info!("wrote {}", path.display());
        }
        AnalyzeKind::Graph { target } => {
            config.require_inputs(&[(config.paths.model_file.as_path(), "model file")])?;
            let model = EmbeddingModel::load(&config.paths.model_file)?;
            let graph = neighbor_graph(&model, target, &config.analysis.graph, &labeled_tokens)?;
            let rendered = export_graph(&graph, format)?;
            let safe_target: String = target
                .chars()
                .map(|c| if c.is_alphanumeric() { c } else { '_' })
                .collect();
            let path = config
                .paths
                .output_dir
                .join(format!("graph_{safe_target}.{extension}"));
            write_atomic(&path, rendered.as_bytes())?;
            log::info!("wrote {}", path.display());
        }
        AnalyzeKind::Temporal => {
            let series = temporal_series(&timestamps)?;
            let flagged = detect_spikes(&series, config.analysis.spike_k, config.analysis.spike_window)?;
            let rendered = export_temporal(&flagged, format)?;
            let path = config.paths.output_dir.join(format!("temporal.{extension}"));
            write_atomic(&path, rendered.as_bytes())?;
            log::info!("wrote {}", path.display());
        }
    }
    Ok(())
}

/// Writes the summary table as CSV (method, antisocial, normal) plus a JSON
/// report carrying the unscored count.
pub fn stage_report(config: &PipelineConfig) -> Result<(), PipelineError> {
    config.require_inputs(&[(config.paths.annotations.as_path(), "annotation store")])?;
    let annotations = read_annotations(&config.paths.annotations)?;
    if annotations.is_empty() {
        return Err(validation("no annotations: the annotation store is empty"));
    }
    let table = summarize(&annotations)?;
    let csv_path = config.paths.output_dir.join("report.csv");
    write_atomic(&csv_path, table.to_csv().as_bytes())?;
    let json_path = config.paths.output_dir.join("report.json");
    let rendered = serde_json::to_string_pretty(&table).map_err(io::Error::from)? + "\n";
    write_atomic(&json_path, rendered.as_bytes())?;
    log::info!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn fixture_config(dir: &Path) -> PipelineConfig {
        let mut config = PipelineConfig::default();
        config.paths = PipelinePaths {
            corpus_inputs: vec![dir.join("input.jsonl")],
            corpus_store: dir.join("corpus.jsonl"),
            lexicon_files: vec![LexiconFileEntry {
                path: dir.join("terms.txt"),
                source: lexicon::Source::User,
            }],
            stoplist: None,
            reference_corpus: dir.join("reference.jsonl"),
            basic_lexicon: dir.join("basic.json"),
            extended_lexicon: dir.join("extended.json"),
            model_file: dir.join("model.bin"),
            lexicon_annotations: dir.join("lexicon_annotations.jsonl"),
            toxicity_scores: dir.join("toxicity_scores.jsonl"),
            annotations: dir.join("annotations.jsonl"),
            toxicity_cache: Some(dir.join("cache.jsonl")),
            exclusions: None,
            output_dir: dir.join("analysis"),
        };
        config.thresholds.lexicon_min_count = 1;
        config.train = TrainConfig {
            dim: 8,
            window: 2,
            negatives: 2,
            epochs: 2,
            min_count: 1,
            learning_rate_initial: 0.05,
            subsample_threshold: 0.0,
            seed: 9,
        };
        config.analysis.graph.min_support = 1;
        config.analysis.graph.affinity_min = 0.0;
        config
    }

    fn write_fixture_inputs(dir: &Path) {
        let mut lines = Vec::new();
        for i in 0..30 {
            let (text, lang) = match i % 5 {
                0 => (format!("the COVID wuflu rant number {i}"), "en"),
                1 => (format!("COVID facts and calm words {i}"), "en"),
                2 => (format!("loser take on corona {i}"), "en"),
                3 => (format!("noticias del coronavirus {i}"), "es"),
                _ => (format!("plain corona day {i}"), "en"),
            };
            let day = 17 + (i % 4);
            lines.push(format!(
                "{{\"id\":\"t{i:03}\",\"created_at\":\"2020-03-{day:02}T10:00:00Z\",\"text\":\"{text}\",\"lang\":\"{lang}\"}}"
            ));
        }
        lines.push("not json at all".to_string());
        fs::write(dir.join("input.jsonl"), lines.join("\n") + "\n").unwrap();

        fs::write(dir.join("terms.txt"), "wuflu\nloser\npancake\n").unwrap();

        let mut reference = Vec::new();
        for i in 0..6 {
            reference.push(format!(
                "{{\"text\":\"wuflu hate example {i}\",\"label\":\"antisocial\"}}"
            ));
            reference.push(format!(
                "{{\"text\":\"loser insult example {i}\",\"label\":\"antisocial\"}}"
            ));
            reference.push(format!("{{\"text\":\"calm text {i}\",\"label\":\"normal\"}}"));
        }
        fs::write(dir.join("reference.jsonl"), reference.join("\n") + "\n").unwrap();
    }

    fn run_all(config: &PipelineConfig, opts: &RunOptions) {
        run(&Command::Ingest, config, opts).unwrap();
        run(&Command::BuildLexicon, config, opts).unwrap();
        run(&Command::TrainEmbedding, config, opts).unwrap();
        run(&Command::ExpandLexicon, config, opts).unwrap();
        run(&Command::Annotate, config, opts).unwrap();
        run(&Command::Score, config, opts).unwrap();
        run(&Command::Combine, config, opts).unwrap();
        run(&Command::Report, config, opts).unwrap();
        run(&Command::Analyze(AnalyzeKind::Ngram { n: 1 }), config, opts).unwrap();
        run(&Command::Analyze(AnalyzeKind::Temporal), config, opts).unwrap();
    }

    #[test]
    fn full_pipeline_runs_and_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture_inputs(dir.path());
        let config = fixture_config(dir.path());
        let opts = RunOptions {
            deterministic: true,
            ..RunOptions::default()
        };
        run_all(&config, &opts);

        // Spanish records dropped, malformed line counted, the rest kept.
        let store = corpus::read_store(&config.paths.corpus_store).unwrap();
        assert_eq!(store.len(), 24);

        let annotations = read_annotations(&config.paths.annotations).unwrap();
        assert_eq!(annotations.len(), 24);
        let table = summarize(&annotations).unwrap();
        assert!(table.is_consistent());
        assert_eq!(table.unscored, 0);

        // wuflu and loser records are antisocial via the lexicon route.
        let wuflu = annotations.iter().find(|a| a.source_id == "t000").unwrap();
        assert_eq!(wuflu.lexicon_label, Label::Antisocial);
        assert!(wuflu.matched_terms.contains(&"wuflu".to_string()));

        assert!(config.paths.output_dir.join("report.csv").exists());
        assert!(config.paths.output_dir.join("ngrams_1.csv").exists());
        assert!(config.paths.output_dir.join("temporal.csv").exists());

        // Re-running completed resumable stages adds nothing.
        let annotation_bytes = fs::read(&config.paths.lexicon_annotations).unwrap();
        let score_bytes = fs::read(&config.paths.toxicity_scores).unwrap();
        run(&Command::Annotate, &config, &opts).unwrap();
        run(&Command::Score, &config, &opts).unwrap();
        assert_eq!(fs::read(&config.paths.lexicon_annotations).unwrap(), annotation_bytes);
        assert_eq!(fs::read(&config.paths.toxicity_scores).unwrap(), score_bytes);

        // Re-running combine and report rewrites identical bytes.
        let combined_bytes = fs::read(&config.paths.annotations).unwrap();
        let report_bytes = fs::read(config.paths.output_dir.join("report.csv")).unwrap();
        run(&Command::Combine, &config, &opts).unwrap();
        run(&Command::Report, &config, &opts).unwrap();
        assert_eq!(fs::read(&config.paths.annotations).unwrap(), combined_bytes);
        assert_eq!(
            fs::read(config.paths.output_dir.join("report.csv")).unwrap(),
            report_bytes
        );
    }

    #[test]
    fn annotate_with_multiple_workers_matches_serial_output() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture_inputs(dir.path());
        let config = fixture_config(dir.path());
        let serial = RunOptions::default();
        run(&Command::Ingest, &config, &serial).unwrap();
        run(&Command::BuildLexicon, &config, &serial).unwrap();
        run(&Command::TrainEmbedding, &config, &serial).unwrap();
        run(&Command::ExpandLexicon, &config, &serial).unwrap();
        run(&Command::Annotate, &config, &serial).unwrap();
        let serial_bytes = fs::read(&config.paths.lexicon_annotations).unwrap();

        fs::remove_file(&config.paths.lexicon_annotations).unwrap();
        let parallel = RunOptions {
            workers: 4,
            ..RunOptions::default()
        };
        run(&Command::Annotate, &config, &parallel).unwrap();
        assert_eq!(fs::read(&config.paths.lexicon_annotations).unwrap(), serial_bytes);
    }

    #[test]
    fn combine_without_annotations_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture_inputs(dir.path());
        let config = fixture_config(dir.path());
        run(&Command::Ingest, &config, &RunOptions::default()).unwrap();
        let err = run(&Command::Combine, &config, &RunOptions::default()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("no annotations"));
    }

    #[test]
    fn missing_inputs_are_validation_errors() {
        let dir = tempfile::tempdir().unwrap();
        let config = fixture_config(dir.path());
        let err = run(&Command::Ingest, &config, &RunOptions::default()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let err = run(&Command::TrainEmbedding, &config, &RunOptions::default()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn limit_caps_ingested_records() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture_inputs(dir.path());
        let config = fixture_config(dir.path());
        let opts = RunOptions {
            limit: Some(5),
            ..RunOptions::default()
        };
        run(&Command::Ingest, &config, &opts).unwrap();
        let store = corpus::read_store(&config.paths.corpus_store).unwrap();
        assert_eq!(store.len(), 5);
    }

    #[test]
    fn config_round_trips_through_json() {
        let config = PipelineConfig::default();
        let rendered = serde_json::to_string_pretty(&config).unwrap();
        let back: PipelineConfig = serde_json::from_str(&rendered).unwrap();
        let again = serde_json::to_string_pretty(&back).unwrap();
        assert_eq!(rendered, again);
    }

    #[test]
    fn minimal_config_file_parses_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        fs::write(
            &path,
            r#"{"paths":{"corpus_inputs":["posts.jsonl"]},"thresholds":{"similarity":0.8}}"#,
        )
        .unwrap();
        let config = PipelineConfig::load(&path).unwrap();
        assert_eq!(config.thresholds.similarity, 0.8);
        assert_eq!(config.thresholds.toxicity, 0.5);
        assert_eq!(config.train.dim, 100);
    }

    #[test]
    fn config_rejects_bad_thresholds() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        fs::write(&path, r#"{"thresholds":{"toxicity":1.5}}"#).unwrap();
        assert!(matches!(
            PipelineConfig::load(&path),
            Err(PipelineError::Validation(_))
        ));
    }
}
