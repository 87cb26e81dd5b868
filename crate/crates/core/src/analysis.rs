//! Empirical analyses over the annotated corpus: high-frequency antisocial
//! n-grams, target-word neighbor graphs, and the daily antisocial-proportion
//! series with spike flags.
//!
//! All analyses are read-only over immutable inputs and all exports are
//! byte-deterministic for identical inputs. Figures are rendered by external
//! tools from the CSV/JSON/DOT exports.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::OnceLock;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize_term, TokenSequence, DEFAULT_TOPIC_KEYWORDS};
use crate::embedding::{EmbeddingError, EmbeddingModel};
use crate::label::Label;

static STOPWORDS_RAW: &str = include_str!("../data/stopwords_en.txt");

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("n-gram size {0} outside 1..=4")]
    InvalidNgramSize(usize),
    #[error("term {0:?} does not occur in the corpus")]
    TermAbsent(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("empty annotation set")]
    EmptyAnnotations,
    #[error("invalid spike parameters: {0}")]
    InvalidSpikeParams(String),
    #[error("{artifact} export does not support {format}")]
    UnsupportedFormat {
        artifact: &'static str,
        format: ExportFormat,
    },
}

/// Output format for [`export_ngrams`], [`export_graph`] and
/// [`export_temporal`]. DOT applies to graphs only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
    Dot,
}

impl fmt::Display for ExportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExportFormat::Csv => write!(f, "csv"),
            ExportFormat::Json => write!(f, "json"),
            ExportFormat::Dot => write!(f, "dot"),
        }
    }
}

impl std::str::FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            "dot" => Ok(ExportFormat::Dot),
            other => Err(format!("unknown format {other:?} (expected csv, json or dot)")),
        }
    }
}

/// Terms excluded from unigram rankings by default: the collection keywords
/// (normalized) plus the bundled English stopword list.
pub fn default_exclusions() -> &'static HashSet<String> {
    static SET: OnceLock<HashSet<String>> = OnceLock::new();
    SET.get_or_init(|| {
        let mut set: HashSet<String> = STOPWORDS_RAW
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect();
        for keyword in DEFAULT_TOPIC_KEYWORDS {
            for token in normalize_term(keyword) {
                set.insert(format!("#{token}"));
                set.insert(token);
            }
        }
        set
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramRow {
    pub ngram: String,
    pub count: u64,
}

/// Ranked n-gram frequencies over antisocial-labeled records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramTable {
    pub n: usize,
    pub rows: Vec<NgramRow>,
}

/// Counts contiguous token n-grams over records labeled antisocial, sorted by
/// descending count then lexicographically, truncated to `top_k`. Excluded
/// terms are filtered from unigrams only. An input with no antisocial records
/// yields an empty table with a warning.
pub fn ngram_counts(
    records: &[(TokenSequence, Label)],
    n: usize,
    top_k: usize,
    exclusions: &HashSet<String>,
) -> Result<NgramTable, AnalysisError> {
    if !(1..=4).contains(&n) {
        return Err(AnalysisError::InvalidNgramSize(n));
    }
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut saw_antisocial = false;
    for (tokens, label) in records {
        if *label != Label::Antisocial {
            continue;
        }
        saw_antisocial = true;
        if tokens.tokens.len() < n {
            continue;
        }
        for window in tokens.tokens.windows(n) {
            if n == 1 && exclusions.contains(&window[0]) {
                continue;
            }
            *counts.entry(window.join(" ")).or_default() += 1;
        }
    }
    if !saw_antisocial {
        log::warn!("no antisocial records: n-gram table is empty");
    }
    let mut rows: Vec<NgramRow> = counts
        .into_iter()
        .map(|(ngram, count)| NgramRow { ngram, count })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.ngram.cmp(&b.ngram)));
    rows.truncate(top_k);
    Ok(NgramTable { n, rows })
}

/// Fraction of records containing `term` that are labeled antisocial.
/// Containment is per record (a contiguous token run for multi-token terms).
pub fn antisocial_affinity(
    term: &str,
    records: &[(TokenSequence, Label)],
) -> Result<f64, AnalysisError> {
    let pattern = normalize_term(term);
    if pattern.is_empty() {
        return Err(AnalysisError::TermAbsent(term.to_string()));
    }
    let mut containing = 0u64;
    let mut antisocial = 0u64;
    for (tokens, label) in records {
        if tokens.tokens.len() < pattern.len() {
            continue;
        }
        let hit = tokens
            .tokens
            .windows(pattern.len())
            .any(|w| w.iter().map(String::as_str).eq(pattern.iter().map(String::as_str)));
        if hit {
            containing += 1;
            if *label == Label::Antisocial {
                antisocial += 1;
            }
        }
    }
    if containing == 0 {
        return Err(AnalysisError::TermAbsent(term.to_string()));
    }
    Ok(antisocial as f64 / containing as f64)
}

/// Per-token containment counts, built once so graph construction can filter
/// many candidate terms cheaply.
struct AffinityIndex {
    counts: HashMap<String, (u64, u64)>,
}

impl AffinityIndex {
    fn build(records: &[(TokenSequence, Label)]) -> AffinityIndex {
        let mut counts: HashMap<String, (u64, u64)> = HashMap::new();
        for (tokens, label) in records {
            let distinct: BTreeSet<&str> = tokens.tokens.iter().map(String::as_str).collect();
            for token in distinct {
                let entry = counts.entry(token.to_string()).or_default();
                entry.0 += 1;
                if *label == Label::Antisocial {
                    entry.1 += 1;
                }
            }
        }
        AffinityIndex { counts }
    }

    fn support(&self, term: &str) -> u64 {
        self.counts.get(term).map_or(0, |&(total, _)| total)
    }

    fn affinity(&self, term: &str) -> Option<f64> {
        self.counts
            .get(term)
            .map(|&(total, antisocial)| antisocial as f64 / total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub term: String,
    /// 0 = target, 1 = first-order neighbor, 2 = second-order neighbor.
    pub order: u8,
    pub affinity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub a: String,
    pub b: String,
    pub similarity: f64,
}

/// A target term with its first- and second-order embedding neighbors.
/// Renderers map edge distance to `1 - similarity`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborGraph {
    pub target: String,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

/// Neighbor-graph construction parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeighborGraphParams {
    /// First-order neighbors kept around the target.
    pub k1: usize,
    /// Second-order neighbors kept per first-order node.
    pub k2: usize,
    /// Minimum antisocial affinity for a node to qualify.
    pub affinity_min: f64,
    /// Minimum number of records containing a term before its affinity is
    /// trusted.
    pub min_support: u64,
}

impl Default for NeighborGraphParams {
    fn default() -> Self {
        NeighborGraphParams {
            k1: 15,
            k2: 5,
            affinity_min: 0.5,
            min_support: 3,
        }
    }
}

/// Builds the neighbor graph for `target`: the top-`k1` embedding neighbors
/// passing the affinity filter become first-order nodes, and each contributes
/// its top-`k2` qualifying neighbors as second-order nodes (deduplicated).
/// The target itself is exempt from the filter. With zero qualifying
/// neighbors the graph holds only the target, with a warning.
pub fn neighbor_graph(
    model: &EmbeddingModel,
    target: &str,
    params: &NeighborGraphParams,
    records: &[(TokenSequence, Label)],
) -> Result<NeighborGraph, AnalysisError> {
    let index = AffinityIndex::build(records);
    let qualifies = |term: &str| -> Option<f64> {
        if index.support(term) < params.min_support {
            return None;
        }
        index.affinity(term).filter(|a| *a >= params.affinity_min)
    };

    let target_affinity = index.affinity(target).unwrap_or_else(|| {
        log::warn!("target {target:?} does not occur in the supplied records");
        0.0
    });
    let mut nodes = vec![GraphNode {
        term: target.to_string(),
        order: 0,
        affinity: target_affinity,
    }];
    let mut edges = Vec::new();
    let mut present: HashSet<String> = HashSet::from([target.to_string()]);

    // Full similarity ranking once per anchor; OOV targets error here.
    let ranking = model.neighbors(target, model.len().saturating_sub(1))?;
    let mut first_order: Vec<(String, f64)> = Vec::new();
    for (term, sim) in ranking {
        if first_order.len() >= params.k1 {
            break;
        }
        if let Some(affinity) = qualifies(&term) {
            present.insert(term.clone());
            nodes.push(GraphNode {
                term: term.clone(),
                order: 1,
                affinity,
            });
            edges.push(GraphEdge {
                a: target.to_string(),
                b: term.clone(),
                similarity: sim,
            });
            first_order.push((term, sim));
        }
    }
    if first_order.is_empty() {
        log::warn!("no qualifying neighbors for target {target:?}");
        return Ok(NeighborGraph {
            target: target.to_string(),
            nodes,
            edges,
        });
    }

    for (parent, _) in &first_order {
        let ranking = model.neighbors(parent, model.len().saturating_sub(1))?;
        let mut taken = 0usize;
        for (term, sim) in ranking {
            if taken >= params.k2 {
                break;
            }
            // First- and zero-order nodes never re-enter as second order.
            if present.contains(&term) && nodes.iter().any(|n| n.term == term && n.order < 2) {
                continue;
            }
            if let Some(affinity) = qualifies(&term) {
                if present.insert(term.clone()) {
                    nodes.push(GraphNode {
                        term: term.clone(),
                        order: 2,
                        affinity,
                    });
                }
                edges.push(GraphEdge {
                    a: parent.clone(),
                    b: term.clone(),
                    similarity: sim,
                });
                taken += 1;
            }
        }
    }

    Ok(NeighborGraph {
        target: target.to_string(),
        nodes,
        edges,
    })
}

/// One day of the antisocial-proportion series (UTC bucketing).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalRow {
    pub date: NaiveDate,
    pub total: u64,
    pub antisocial: u64,
    pub proportion: f64,
    pub spike: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalSeries {
    pub rows: Vec<TemporalRow>,
}

/// Groups annotations by UTC day and computes the antisocial proportion per
/// day. Days with zero records are excluded. Spike flags start false; see
/// [`detect_spikes`].
pub fn temporal_series(records: &[(DateTime<Utc>, Label)]) -> Result<TemporalSeries, AnalysisError> {
    if records.is_empty() {
        return Err(AnalysisError::EmptyAnnotations);
    }
    let mut days: BTreeMap<NaiveDate, (u64, u64)> = BTreeMap::new();
    for (timestamp, label) in records {
        let entry = days.entry(timestamp.date_naive()).or_default();
        entry.0 += 1;
        if *label == Label::Antisocial {
            entry.1 += 1;
        }
    }
    let rows = days
        .into_iter()
        .map(|(date, (total, antisocial))| TemporalRow {
            date,
            total,
            antisocial,
            proportion: antisocial as f64 / total as f64,
            spike: false,
        })
        .collect();
    Ok(TemporalSeries { rows })
}

/// Default spike rule: a day is flagged when its proportion exceeds the
/// trailing rolling mean by `k` standard deviations.
pub const DEFAULT_SPIKE_K: f64 = 2.0;
pub const DEFAULT_SPIKE_WINDOW: usize = 7;

/// Flags days whose proportion strictly exceeds `mean + k * stddev` over the
/// trailing `window` rows (population stddev; the current day is not part of
/// its own window). The first `window` rows are never flagged; a series
/// shorter than the window comes back unflagged with a warning.
pub fn detect_spikes(
    series: &TemporalSeries,
    k: f64,
    window: usize,
) -> Result<TemporalSeries, AnalysisError> {
    if window < 3 {
        return Err(AnalysisError::InvalidSpikeParams(format!(
            "window {window} must be >= 3"
        )));
    }
    if !(k > 0.0) {
        return Err(AnalysisError::InvalidSpikeParams(format!("k {k} must be > 0")));
    }
    let mut out = series.clone();
    for row in &mut out.rows {
        row.spike = false;
    }
    if out.rows.len() < window {
        log::warn!(
            "series has {} rows, shorter than spike window {window}; nothing flagged",
            out.rows.len()
        );
        return Ok(out);
    }
    for i in window..out.rows.len() {
        let trailing: Vec<f64> = series.rows[i - window..i]
            .iter()
            .map(|r| r.proportion)
            .collect();
        let mean = trailing.iter().sum::<f64>() / window as f64;
        let variance =
            trailing.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / window as f64;
        let stddev = variance.sqrt();
        out.rows[i].spike = series.rows[i].proportion > mean + k * stddev;
    }
    Ok(out)
}

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// CSV (`n,ngram,count`) or JSON. DOT is for graphs only.
pub fn export_ngrams(table: &NgramTable, format: ExportFormat) -> Result<String, AnalysisError> {
    match format {
        ExportFormat::Csv => {
            let mut out = String::from("n,ngram,count\n");
            for row in &table.rows {
                out.push_str(&format!("{},{},{}\n", table.n, csv_escape(&row.ngram), row.count));
            }
            Ok(out)
        }
        ExportFormat::Json => Ok(serde_json::to_string_pretty(table).expect("serializable") + "\n"),
        ExportFormat::Dot => Err(AnalysisError::UnsupportedFormat {
            artifact: "n-gram table",
            format,
        }),
    }
}

/// CSV (`kind,a,b,order,affinity,similarity`), JSON
/// (`{target, nodes, edges}`), or DOT with order/affinity node attributes.
pub fn export_graph(graph: &NeighborGraph, format: ExportFormat) -> Result<String, AnalysisError> {
    match format {
        ExportFormat::Csv => {
            let mut out = String::from("kind,a,b,order,affinity,similarity\n");
            for node in &graph.nodes {
                out.push_str(&format!(
                    "node,{},,{},{},\n",
                    csv_escape(&node.term),
                    node.order,
                    node.affinity
                ));
            }
            for edge in &graph.edges {
                out.push_str(&format!(
                    "edge,{},{},,,{}\n",
                    csv_escape(&edge.a),
                    csv_escape(&edge.b),
                    edge.similarity
                ));
            }
            Ok(out)
        }
        ExportFormat::Json => Ok(serde_json::to_string_pretty(graph).expect("serializable") + "\n"),
        ExportFormat::Dot => {
            let quote = |term: &str| format!("\"{}\"", term.replace('"', "\\\""));
            let mut out = String::from("graph neighbors {\n");
            for node in &graph.nodes {
                out.push_str(&format!(
                    "  {} [order={}, affinity={}];\n",
                    quote(&node.term),
                    node.order,
                    node.affinity
                ));
            }
            for edge in &graph.edges {
                out.push_str(&format!(
                    "  {} -- {} [similarity={}];\n",
                    quote(&edge.a),
                    quote(&edge.b),
                    edge.similarity
                ));
            }
            out.push_str("}\n");
            Ok(out)
        }
    }
}

/// CSV (`date,total,antisocial,proportion,spike`) or JSON.
pub fn export_temporal(
    series: &TemporalSeries,
    format: ExportFormat,
) -> Result<String, AnalysisError> {
    match format {
        ExportFormat::Csv => {
            let mut out = String::from("date,total,antisocial,proportion,spike\n");
            for row in &series.rows {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    row.date, row.total, row.antisocial, row.proportion, row.spike
                ));
            }
            Ok(out)
        }
        ExportFormat::Json => Ok(serde_json::to_string_pretty(series).expect("serializable") + "\n"),
        ExportFormat::Dot => Err(AnalysisError::UnsupportedFormat {
            artifact: "temporal series",
            format,
        }),
    }
}
