//! Antisocial keyword lexicon construction.
//!
//! The basic lexicon is built in three passes: merge open-source term lists,
//! remove ambiguous everyday words via an editable stoplist, then drop terms
//! that are rare in a labeled reference corpus. The extended lexicon is
//! produced later by embedding-similarity expansion (see [`crate::embedding`]).

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize, normalize_term, TokenSequence};
use crate::label::Label;
use crate::matcher::PatternAutomaton;

static AMBIGUOUS_STOPLIST_RAW: &str = include_str!("../data/ambiguous_stoplist.txt");

/// Default minimum reference-corpus occurrences for a term to survive
/// [`frequency_filter`].
pub const DEFAULT_REF_COUNT_THRESHOLD: u64 = 5;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("empty lexicon: no usable terms in {0} source file(s)")]
    EmptyLexicon(usize),
    #[error("empty reference corpus: frequency filter would remove every term")]
    EmptyReference,
    #[error("invalid lexicon file {path}: {message}")]
    Invalid { path: String, message: String },
}

/// Provenance of a lexicon entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Source {
    Hatebase,
    Rsdb,
    WikiSlurs,
    Expanded,
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LexiconKind {
    Basic,
    Extended,
    Merged,
}

/// One lexicon term. Multi-token phrases are stored space-joined and match as
/// contiguous token runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub term: String,
    pub arity: usize,
    pub source: Source,
    pub ref_count: u64,
}

impl LexiconEntry {
    /// Builds an entry from raw text, normalizing it into matchable token
    /// form. Returns `None` when nothing tokenizable remains.
    pub fn new(raw: &str, source: Source) -> Option<LexiconEntry> {
        let tokens = normalize_term(raw);
        if tokens.is_empty() {
            return None;
        }
        Some(LexiconEntry {
            arity: tokens.len(),
            term: tokens.join(" "),
            source,
            ref_count: 0,
        })
    }
}

/// A named collection of lexicon entries keyed by term.
#[derive(Debug, Clone, PartialEq)]
pub struct LexiconSet {
    pub name: String,
    pub kind: LexiconKind,
    entries: BTreeMap<String, LexiconEntry>,
}

impl LexiconSet {
    pub fn new(name: impl Into<String>, kind: LexiconKind) -> Self {
        LexiconSet {
            name: name.into(),
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Inserts an entry unless its term is already present (first wins).
    /// Returns whether the entry was added.
    pub fn insert(&mut self, entry: LexiconEntry) -> bool {
        match self.entries.entry(entry.term.clone()) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(entry);
                true
            }
            std::collections::btree_map::Entry::Occupied(_) => false,
        }
    }

    pub fn contains_term(&self, term: &str) -> bool {
        self.entries.contains_key(term)
    }

    pub fn get(&self, term: &str) -> Option<&LexiconEntry> {
        self.entries.get(term)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in term order.
    pub fn iter(&self) -> impl Iterator<Item = &LexiconEntry> {
        self.entries.values()
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Union of several sets under a new name; on term collisions the
    /// earliest set wins.
    pub fn union(name: impl Into<String>, kind: LexiconKind, sets: &[&LexiconSet]) -> LexiconSet {
        let mut out = LexiconSet::new(name, kind);
        for set in sets {
            for entry in set.iter() {
                out.insert(entry.clone());
            }
        }
        out
    }

    fn check_invariants(&self, path: &Path) -> Result<(), LexiconError> {
        for entry in self.iter() {
            let expected_arity = entry.term.split(' ').count();
            if entry.arity != expected_arity || entry.term != entry.term.to_lowercase() {
                return Err(LexiconError::Invalid {
                    path: path.display().to_string(),
                    message: format!("malformed entry {:?}", entry.term),
                });
            }
            if self.kind == LexiconKind::Extended && entry.source != Source::Expanded {
                return Err(LexiconError::Invalid {
                    path: path.display().to_string(),
                    message: format!(
                        "extended lexicon contains non-expanded entry {:?}",
                        entry.term
                    ),
                });
            }
        }
        Ok(())
    }

    /// Persists as JSON: `{name, kind, entries:[{term, arity, source, ref_count}]}`,
    /// entries sorted by term, written atomically.
    pub fn save(&self, path: &Path) -> Result<(), LexiconError> {
        self.check_invariants(path)?;
        let file = LexiconFile {
            name: self.name.clone(),
            kind: self.kind,
            entries: self.iter().cloned().collect(),
        };
        let tmp = path.with_extension("tmp");
        {
            let mut out = BufWriter::new(File::create(&tmp)?);
            serde_json::to_writer_pretty(&mut out, &file)?;
            out.write_all(b"\n")?;
            out.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<LexiconSet, LexiconError> {
        let file: LexiconFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        let mut set = LexiconSet::new(file.name, file.kind);
        for entry in file.entries {
            set.insert(entry);
        }
        set.check_invariants(path)?;
        Ok(set)
    }
}

#[derive(Serialize, Deserialize)]
struct LexiconFile {
    name: String,
    kind: LexiconKind,
    entries: Vec<LexiconEntry>,
}

/// A term-list file paired with the provenance to record for its terms.
#[derive(Debug, Clone)]
pub struct TermListFile {
    pub path: PathBuf,
    pub source: Source,
}

/// Reads one term per line, skipping blanks and `#`-prefixed comments.
pub fn read_term_list(path: &Path) -> io::Result<Vec<String>> {
    let reader = BufReader::new(File::open(path)?);
    let mut terms = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        terms.push(line.to_string());
    }
    Ok(terms)
}

/// Merges term-list files into one set. Terms are normalized, duplicates
/// collapse, and the first-seen source wins for provenance.
pub fn merge_sources(files: &[TermListFile]) -> Result<LexiconSet, LexiconError> {
    let mut set = LexiconSet::new("merged", LexiconKind::Merged);
    for file in files {
        for raw in read_term_list(&file.path)? {
            if let Some(entry) = LexiconEntry::new(&raw, file.source) {
                set.insert(entry);
            } else {
                log::warn!("skipping unusable term {:?} in {}", raw, file.path.display());
            }
        }
    }
    if set.is_empty() {
        return Err(LexiconError::EmptyLexicon(files.len()));
    }
    Ok(set)
}

/// Returns a copy of `lex` with every stoplisted term removed. The stoplist
/// is matched on normalized term form.
pub fn apply_stoplist(lex: &LexiconSet, stoplist: &HashSet<String>) -> LexiconSet {
    let mut out = LexiconSet::new(lex.name.clone(), lex.kind);
    for entry in lex.iter() {
        if !stoplist.contains(&entry.term) {
            out.insert(entry.clone());
        }
    }
    if out.is_empty() && !lex.is_empty() {
        log::warn!("stoplist removed every term from lexicon {:?}", lex.name);
    }
    out
}

/// Loads a stoplist file (same format as term lists), normalizing each term.
pub fn load_stoplist(path: &Path) -> Result<HashSet<String>, LexiconError> {
    Ok(read_term_list(path)?
        .iter()
        .filter_map(|raw| LexiconEntry::new(raw, Source::User).map(|e| e.term))
        .collect())
}

/// The bundled ambiguous-word stoplist (seed content; deployments are
/// expected to point at an edited copy).
pub fn default_stoplist() -> HashSet<String> {
    AMBIGUOUS_STOPLIST_RAW
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|raw| LexiconEntry::new(raw, Source::User).map(|e| e.term))
        .collect()
}

/// Counts, for every term, the number of antisocial-labeled reference records
/// containing it (once per record, multi-token terms as contiguous runs) and
/// removes terms seen fewer than `threshold` times. Threshold 0 keeps every
/// term and only refreshes the counts.
pub fn frequency_filter(
    lex: &LexiconSet,
    reference: &[(TokenSequence, Label)],
    threshold: u64,
) -> Result<LexiconSet, LexiconError> {
    if reference.is_empty() {
        return Err(LexiconError::EmptyReference);
    }
    if lex.is_empty() {
        return Ok(lex.clone());
    }

    let automaton = PatternAutomaton::compile(lex).expect("non-empty lexicon compiles");
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for (tokens, label) in reference {
        if *label != Label::Antisocial {
            continue;
        }
        let result = automaton.annotate(tokens);
        for term in result.matched_terms {
            *counts.entry(term).or_default() += 1;
        }
    }

    let mut out = LexiconSet::new(lex.name.clone(), lex.kind);
    for entry in lex.iter() {
        let ref_count = counts.get(entry.term.as_str()).copied().unwrap_or(0);
        if ref_count >= threshold {
            out.insert(LexiconEntry {
                ref_count,
                ..entry.clone()
            });
        }
    }
    Ok(out)
}

/// Reads a labeled reference corpus: line-delimited JSON
/// `{"text": ..., "label": "antisocial"|"normal"}`.
pub fn read_reference_corpus(path: &Path) -> Result<Vec<(TokenSequence, Label)>, LexiconError> {
    #[derive(Deserialize)]
    struct ReferenceLine {
        text: String,
        label: Label,
    }

    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ReferenceLine =
            serde_json::from_str(&line).map_err(|e| LexiconError::Invalid {
                path: path.display().to_string(),
                message: format!("line {}: {}", idx + 1, e),
            })?;
        records.push((
            TokenSequence {
                source_id: format!("ref-{}", idx + 1),
                tokens: normalize(&parsed.text),
            },
            parsed.label,
        ));
    }
    if records.is_empty() {
        return Err(LexiconError::EmptyReference);
    }
    Ok(records)
}
