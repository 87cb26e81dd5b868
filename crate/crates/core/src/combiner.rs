//! Fusion of the two per-method labels into the final annotation, plus
//! corpus-level count summaries.
//!
//! The combination is a union rule: a record is antisocial iff either method
//! says so. An unscored toxicity outcome contributes normal to the union but
//! is counted separately so scoring gaps stay visible in the summary.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{Label, ToxicityLabel};
use crate::matcher::MatchResult;
use crate::toxicity::{classify, ToxicityScore};

#[derive(Debug, Error)]
pub enum CombineError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt annotation store {path} at line {line}: {message}")]
    CorruptStore {
        path: String,
        line: usize,
        message: String,
    },
    #[error("duplicate source_id {0:?} in annotation stream")]
    DuplicateSourceId(String),
    #[error("record {0:?} violates the combined-label invariant")]
    InvariantViolation(String),
}

/// Per-record labels and evidence from both methods plus the combined label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub source_id: String,
    pub lexicon_label: Label,
    pub matched_terms: Vec<String>,
    pub toxicity_score: Option<f64>,
    pub toxicity_label: ToxicityLabel,
    pub combined_label: Label,
}

impl AnnotationRecord {
    /// Fuses one record's lexicon evidence with its (possibly absent)
    /// toxicity score at the given classification threshold.
    pub fn fuse(
        match_result: &MatchResult,
        toxicity: Option<&ToxicityScore>,
        threshold: f64,
    ) -> AnnotationRecord {
        let toxicity_label = match toxicity {
            Some(score) => classify(score, threshold).into(),
            None => ToxicityLabel::Unscored,
        };
        AnnotationRecord {
            source_id: match_result.source_id.clone(),
            lexicon_label: match_result.label,
            matched_terms: match_result.matched_terms.iter().cloned().collect(),
            toxicity_score: toxicity.map(|s| s.score),
            toxicity_label,
            combined_label: combine(match_result.label, toxicity_label),
        }
    }

    /// combined = ANTISOCIAL iff lexicon or toxicity says ANTISOCIAL.
    pub fn invariant_holds(&self) -> bool {
        self.combined_label == combine(self.lexicon_label, self.toxicity_label)
            && (self.lexicon_label == Label::Antisocial) == !self.matched_terms.is_empty()
    }
}

/// Union rule on labels; unscored contributes normal.
pub fn combine(lexicon_label: Label, toxicity_label: ToxicityLabel) -> Label {
    if lexicon_label.is_antisocial() || toxicity_label.is_antisocial() {
        Label::Antisocial
    } else {
        Label::Normal
    }
}

/// Per-method and combined counts over one annotation stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub total: u64,
    pub lexicon_antisocial: u64,
    pub lexicon_normal: u64,
    pub toxicity_antisocial: u64,
    pub toxicity_normal: u64,
    pub combined_antisocial: u64,
    pub combined_normal: u64,
    /// Records with no toxicity score; these count as normal in the
    /// toxicity row but are reported here for auditability.
    pub unscored: u64,
}

impl SummaryTable {
    pub fn is_consistent(&self) -> bool {
        self.lexicon_antisocial + self.lexicon_normal == self.total
            && self.toxicity_antisocial + self.toxicity_normal == self.total
            && self.combined_antisocial + self.combined_normal == self.total
            && self.combined_antisocial
                >= self.lexicon_antisocial.max(self.toxicity_antisocial)
            && self.combined_antisocial <= self.lexicon_antisocial + self.toxicity_antisocial
            && self.unscored <= self.toxicity_normal
    }

    /// CSV rendering: `method,antisocial,normal` with one row per method and
    /// the combined row last.
    pub fn to_csv(&self) -> String {
        format!(
            "method,antisocial,normal\nlexicon,{},{}\ntoxicity,{},{}\ncombined,{},{}\n",
            self.lexicon_antisocial,
            self.lexicon_normal,
            self.toxicity_antisocial,
            self.toxicity_normal,
            self.combined_antisocial,
            self.combined_normal,
        )
    }
}

/// Folds an annotation stream into a [`SummaryTable`], counting per-record
/// labels directly (never inferring the combined count from the per-method
/// aggregates). Duplicate ids and invariant violations are errors.
pub fn summarize<'a>(
    annotations: impl IntoIterator<Item = &'a AnnotationRecord>,
) -> Result<SummaryTable, CombineError> {
    let mut table = SummaryTable::default();
    let mut seen: HashSet<&str> = HashSet::new();
    for record in annotations {
        if !seen.insert(&record.source_id) {
            return Err(CombineError::DuplicateSourceId(record.source_id.clone()));
        }
        if !record.invariant_holds() {
            return Err(CombineError::InvariantViolation(record.source_id.clone()));
        }
        table.total += 1;
        match record.lexicon_label {
            Label::Antisocial => table.lexicon_antisocial += 1,
            Label::Normal => table.lexicon_normal += 1,
        }
        match record.toxicity_label {
            ToxicityLabel::Antisocial => table.toxicity_antisocial += 1,
            ToxicityLabel::Normal => table.toxicity_normal += 1,
            ToxicityLabel::Unscored => {
                table.toxicity_normal += 1;
                table.unscored += 1;
            }
        }
        match record.combined_label {
            Label::Antisocial => table.combined_antisocial += 1,
            Label::Normal => table.combined_normal += 1,
        }
    }
    debug_assert!(table.is_consistent());
    Ok(table)
}

/// Reads an annotation store (line-delimited JSON, one record per line).
pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRecord>, CombineError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AnnotationRecord =
            serde_json::from_str(&line).map_err(|e| CombineError::CorruptStore {
                path: path.display().to_string(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}

/// Appends records to an annotation store, one JSON object per line, flushed
/// at the end so partial runs can resume by id-set difference.
pub fn append_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<(), CombineError> {
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut out = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
