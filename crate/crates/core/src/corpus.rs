//! Ingestion, topic/language filtering, and text normalization for archived
//! post streams.
//!
//! Input is UTF-8 line-delimited JSON, optionally gzip-compressed (detected by
//! magic bytes), one post per line with at least `id`, `created_at` (ISO-8601)
//! and `text`. Malformed lines are counted and skipped, never fatal. Records
//! that survive the topic and language filters are normalized into lowercase
//! token sequences used by every downstream stage.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use chrono::{DateTime, Utc};
use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Collection keywords from the source corpus, matched case-sensitively as
/// substrings of the raw text.
pub const DEFAULT_TOPIC_KEYWORDS: [&str; 7] = [
    "covid-19",
    "COVID-19",
    "COVID",
    "Coronavirus",
    "coronavirus",
    "CoronaVirus",
    "corona",
];

/// Fraction of tokens that must appear in the bundled English frequency list
/// for a record with no language tag to pass the language filter.
pub const DEFAULT_ENGLISH_FRACTION: f64 = 0.3;

static ENGLISH_FREQUENCY_RAW: &str = include_str!("../data/english_frequency.txt");

fn english_frequency_set() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        ENGLISH_FREQUENCY_RAW
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt record store {path} at line {line}: {source}")]
    CorruptStore {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
}

/// One archived post.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub text: String,
    pub lang: Option<String>,
    pub is_retweet: bool,
}

impl TweetRecord {
    /// Normalized tokens of this record's text, tagged with its id.
    pub fn token_sequence(&self) -> TokenSequence {
        TokenSequence {
            source_id: self.id.clone(),
            tokens: normalize(&self.text),
        }
    }
}

/// Ordered normalized tokens of one record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub source_id: String,
    pub tokens: Vec<String>,
}

/// Per-ingest accounting. Forms a commutative monoid under [`merge`], so
/// sharded ingests can combine their reports at the end.
///
/// [`merge`]: IngestReport::merge
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub lines_read: u64,
    pub records_kept: u64,
    pub records_dropped_topic: u64,
    pub records_dropped_lang: u64,
    pub malformed_lines: u64,
}

impl IngestReport {
    pub fn merge(self, other: IngestReport) -> IngestReport {
        IngestReport {
            lines_read: self.lines_read + other.lines_read,
            records_kept: self.records_kept + other.records_kept,
            records_dropped_topic: self.records_dropped_topic + other.records_dropped_topic,
            records_dropped_lang: self.records_dropped_lang + other.records_dropped_lang,
            malformed_lines: self.malformed_lines + other.malformed_lines,
        }
    }

    /// lines_read = kept + dropped_topic + dropped_lang + malformed.
    pub fn is_consistent(&self) -> bool {
        self.lines_read
            == self.records_kept
                + self.records_dropped_topic
                + self.records_dropped_lang
                + self.malformed_lines
    }
}

/// Topic and language filter settings applied during ingestion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterConfig {
    pub topic_keywords: Vec<String>,
    pub english_fraction_threshold: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            topic_keywords: DEFAULT_TOPIC_KEYWORDS.iter().map(|s| s.to_string()).collect(),
            english_fraction_threshold: DEFAULT_ENGLISH_FRACTION,
        }
    }
}

/// True iff the raw text contains at least one keyword as a case-sensitive
/// substring. Substring (not token) semantics: hyphenated keywords like
/// `covid-19` would never match whole tokens, and the upstream collection API
/// matches substrings.
pub fn filter_topic(record: &TweetRecord, keywords: &[String]) -> bool {
    keywords.iter().any(|k| record.text.contains(k.as_str()))
}

/// True iff the record is English: an explicit `en` / `en-*` tag passes, any
/// other tag fails, and untagged records fall back to a frequency-list
/// heuristic over their normalized tokens.
pub fn filter_language(record: &TweetRecord, english_fraction_threshold: f64) -> bool {
    match &record.lang {
        Some(tag) => {
            tag.eq_ignore_ascii_case("en")
                || tag.get(..3).is_some_and(|p| p.eq_ignore_ascii_case("en-"))
        }
        None => {
            let tokens = normalize(&record.text);
            if tokens.is_empty() {
                return false;
            }
            let english = english_frequency_set();
            let hits = tokens.iter().filter(|t| english.contains(t.as_str())).count();
            hits as f64 / tokens.len() as f64 >= english_fraction_threshold
        }
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn has_prefix_ci(s: &str, prefix: &str) -> bool {
    s.len() >= prefix.len() && s.as_bytes()[..prefix.len()].eq_ignore_ascii_case(prefix.as_bytes())
}

fn is_url(chunk: &str) -> bool {
    has_prefix_ci(chunk, "http://") || has_prefix_ci(chunk, "https://") || has_prefix_ci(chunk, "www.")
}

fn push_plain(s: &str, out: &mut Vec<String>) {
    for seg in s.split(|c: char| !is_word_char(c)) {
        if !seg.is_empty() {
            out.push(seg.to_lowercase());
        }
    }
}

/// Splits the hashtag body (maximal leading run of word characters) from the
/// rest of the chunk.
fn split_hashtag_body(rest: &str) -> (&str, &str) {
    let end = rest
        .char_indices()
        .find(|(_, c)| !is_word_char(*c))
        .map(|(i, _)| i)
        .unwrap_or(rest.len());
    rest.split_at(end)
}

/// Normalizes raw post text into lowercase tokens.
///
/// Tokens are maximal runs of alphanumerics plus `_`, split on everything
/// else, with three special forms per whitespace-delimited chunk:
///
/// * URLs (`http://`, `https://`, `www.` prefixes) become the sentinel
///   `http_url`;
/// * `@mentions` become the sentinel `@user`;
/// * `#hashtags` emit two tokens, `#body` and `body`, so lexicon entries
///   written either way match both forms.
pub fn normalize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        if is_url(chunk) {
            tokens.push("http_url".to_string());
            continue;
        }
        if let Some(rest) = chunk.strip_prefix('@') {
            if rest.chars().any(is_word_char) {
                tokens.push("@user".to_string());
                continue;
            }
        }
        if let Some(rest) = chunk.strip_prefix('#') {
            let (body, remainder) = split_hashtag_body(rest);
            if !body.is_empty() {
                let body = body.to_lowercase();
                tokens.push(format!("#{body}"));
                tokens.push(body);
                push_plain(remainder, &mut tokens);
                continue;
            }
        }
        push_plain(chunk, &mut tokens);
    }
    tokens
}

/// Normalizes a lexicon term into its matchable token form.
///
/// Same rules as [`normalize`] except hashtags stay a single `#body` token
/// (no dual emission) and no sentinel mapping is applied: the corpus side
/// already emits both hashtag forms, so a term written either way matches.
pub fn normalize_term(raw: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in raw.split_whitespace() {
        if let Some(rest) = chunk.strip_prefix('#') {
            let (body, remainder) = split_hashtag_body(rest);
            if !body.is_empty() {
                tokens.push(format!("#{}", body.to_lowercase()));
                push_plain(remainder, &mut tokens);
                continue;
            }
        }
        push_plain(chunk, &mut tokens);
    }
    tokens
}

/// Raw input line shape. `retweeted_status` presence marks a retweet; the
/// canonical store's own `is_retweet` field is accepted too, so ingestion is
/// idempotent over its own output.
#[derive(Deserialize)]
struct RawLine {
    id: RawId,
    created_at: String,
    text: String,
    #[serde(default)]
    lang: Option<String>,
    #[serde(default)]
    retweeted_status: Option<serde_json::Value>,
    #[serde(default)]
    is_retweet: Option<bool>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawId {
    Text(String),
    Number(u64),
}

impl RawLine {
    fn into_record(self) -> Option<TweetRecord> {
        let id = match self.id {
            RawId::Text(s) => s,
            RawId::Number(n) => n.to_string(),
        };
        if id.is_empty() {
            return None;
        }
        let created_at = DateTime::parse_from_rfc3339(&self.created_at)
            .ok()?
            .with_timezone(&Utc);
        if self.text.trim().is_empty() {
            return None;
        }
        let lang = self.lang.filter(|l| !l.is_empty());
        let is_retweet = self.retweeted_status.is_some() || self.is_retweet.unwrap_or(false);
        Some(TweetRecord {
            id,
            created_at,
            text: self.text,
            lang,
            is_retweet,
        })
    }
}

/// Opens a line-delimited JSON source, transparently decompressing gzip
/// (magic bytes `0x1F 0x8B`).
pub fn open_source(path: &Path) -> io::Result<Box<dyn BufRead>> {
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);
    let head = reader.fill_buf()?;
    if head.starts_with(&[0x1f, 0x8b]) {
        Ok(Box::new(BufReader::new(GzDecoder::new(reader))))
    } else {
        Ok(Box::new(reader))
    }
}

/// Streaming ingest over line-delimited JSON: yields records that pass both
/// filters while accumulating an [`IngestReport`]. Malformed lines (bad JSON,
/// missing required fields, unparseable timestamps, blank text) are counted
/// and skipped; only I/O failures are fatal.
pub struct IngestStream<R: BufRead> {
    reader: R,
    filters: FilterConfig,
    report: IngestReport,
    buf: String,
    done: bool,
}

impl<R: BufRead> IngestStream<R> {
    pub fn new(reader: R, filters: FilterConfig) -> Self {
        IngestStream {
            reader,
            filters,
            report: IngestReport::default(),
            buf: String::new(),
            done: false,
        }
    }

    /// Report for the lines consumed so far; complete once the stream is
    /// exhausted.
    pub fn report(&self) -> IngestReport {
        self.report
    }
}

impl<R: BufRead> Iterator for IngestStream<R> {
    type Item = io::Result<TweetRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => {
                    self.done = true;
                    return None;
                }
                Ok(_) => {}
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
            let line = self.buf.trim_end_matches(['\n', '\r']);
            self.report.lines_read += 1;
            let record = match serde_json::from_str::<RawLine>(line).ok().and_then(RawLine::into_record) {
                Some(r) => r,
                None => {
                    self.report.malformed_lines += 1;
                    continue;
                }
            };
            if !filter_topic(&record, &self.filters.topic_keywords) {
                self.report.records_dropped_topic += 1;
                continue;
            }
            if !filter_language(&record, self.filters.english_fraction_threshold) {
                self.report.records_dropped_lang += 1;
                continue;
            }
            self.report.records_kept += 1;
            return Some(Ok(record));
        }
        None
    }
}

/// Ingests a whole source into memory. See [`IngestStream`] for semantics.
pub fn ingest_jsonl<R: Read>(
    reader: R,
    filters: &FilterConfig,
) -> io::Result<(Vec<TweetRecord>, IngestReport)> {
    let mut stream = IngestStream::new(BufReader::new(reader), filters.clone());
    let mut records = Vec::new();
    for item in &mut stream {
        records.push(item?);
    }
    Ok((records, stream.report()))
}

/// Writes the canonical record store: line-delimited JSON with exactly the
/// [`TweetRecord`] fields, sorted by `created_at` then `id`, written
/// atomically (temp file + rename).
pub fn write_store(path: &Path, records: &mut Vec<TweetRecord>) -> Result<(), CorpusError> {
    records.sort_by(|a, b| {
        a.created_at
            .cmp(&b.created_at)
            .then_with(|| a.id.cmp(&b.id))
    });
    let tmp = path.with_extension("tmp");
    {
        let mut out = BufWriter::new(File::create(&tmp)?);
        for record in records.iter() {
            serde_json::to_writer(&mut out, record).map_err(io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a canonical record store back. Unlike raw ingestion, corruption here
/// is fatal: the store is this pipeline's own output.
pub fn read_store(path: &Path) -> Result<Vec<TweetRecord>, CorpusError> {
    let reader = open_source(path)?;
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TweetRecord =
            serde_json::from_str(&line).map_err(|source| CorpusError::CorruptStore {
                path: path.display().to_string(),
                line: idx + 1,
                source,
            })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(text: &str, lang: Option<&str>) -> TweetRecord {
        TweetRecord {
            id: "1".into(),
            created_at: "2020-03-17T00:00:00Z".parse().unwrap(),
            text: text.into(),
            lang: lang.map(String::from),
            is_retweet: false,
        }
    }

    fn default_keywords() -> Vec<String> {
        DEFAULT_TOPIC_KEYWORDS.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn topic_filter_direct_substring() {
        let r = record("Wuhan coronavirus update", Some("en"));
        assert!(filter_topic(&r, &default_keywords()));
    }

    #[test]
    fn topic_filter_substring_semantics_inside_word() {
        let r = record("COVIDIOT", Some("en"));
        assert!(filter_topic(&r, &["COVID".to_string()]));
    }

    #[test]
    fn topic_filter_capital_corona_not_in_default_set() {
        // None of the seven default keywords occurs in "Corona" case-sensitively.
        let r = record("Corona", Some("en"));
        assert!(!filter_topic(&r, &default_keywords()));
    }

    #[test]
    fn language_filter_tagged() {
        assert!(filter_language(&record("hola", Some("en")), 0.3));
        assert!(filter_language(&record("hi", Some("en-GB")), 0.3));
        assert!(!filter_language(&record("hola amigos", Some("es")), 0.3));
        assert!(!filter_language(&record("x", Some("enx")), 0.3));
    }

    #[test]
    fn language_filter_fallback_heuristic() {
        assert!(filter_language(
            &record("this is the time to be with all of the people", None),
            0.3
        ));
        assert!(!filter_language(
            &record("xilofono quetzal brumoso zanahoria", None),
            0.3
        ));
        // All-punctuation text has no tokens and is not English.
        assert!(!filter_language(&record("!!! ---", None), 0.3));
    }

    #[test]
    fn normalize_hashtag_emits_both_forms() {
        assert_eq!(
            normalize("Hoping heat kills #coronavirus!!"),
            vec!["hoping", "heat", "kills", "#coronavirus", "coronavirus"]
        );
    }

    #[test]
    fn normalize_sentinels() {
        assert_eq!(normalize("RT @USER: ok"), vec!["rt", "@user", "ok"]);
        assert_eq!(
            normalize("see https://t.co/abc and www.example.com now"),
            vec!["see", "http_url", "and", "http_url", "now"]
        );
    }

    #[test]
    fn normalize_splits_punctuation_and_lowercases() {
        assert_eq!(normalize("Don't PANIC, folks."), vec!["don", "t", "panic", "folks"]);
        assert_eq!(normalize("#COVID-19"), vec!["#covid", "covid", "19"]);
        assert_eq!(normalize("@ !!!"), Vec::<String>::new());
    }

    #[test]
    fn normalize_term_no_dual_hashtag() {
        assert_eq!(normalize_term("#KungFlu"), vec!["#kungflu"]);
        assert_eq!(normalize_term("  Chinese   Virus "), vec!["chinese", "virus"]);
        assert_eq!(normalize_term("covid-19"), vec!["covid", "19"]);
    }

    fn ingest_str(data: &str) -> (Vec<TweetRecord>, IngestReport) {
        ingest_jsonl(data.as_bytes(), &FilterConfig::default()).unwrap()
    }

    #[test]
    fn ingest_identity_case() {
        let data = r#"{"id":"1","created_at":"2020-03-17T10:00:00Z","text":"corona is here","lang":"en"}
{"id":"2","created_at":"2020-03-17T11:00:00Z","text":"COVID news","lang":"en"}
{"id":"3","created_at":"2020-03-17T12:00:00Z","text":"Coronavirus updates","lang":"en"}
"#;
        let (records, report) = ingest_str(data);
        assert_eq!(records.len(), 3);
        assert_eq!(report.malformed_lines, 0);
        assert_eq!(report.records_kept, 3);
        assert!(report.is_consistent());
    }

    #[test]
    fn ingest_skips_invalid_json_line() {
        let data = r#"{"id":"1","created_at":"2020-03-17T10:00:00Z","text":"corona a","lang":"en"}
{"id":"2","created_at":"2020-03-17T10:00:01Z","text":"corona b","lang":"en"}
this is not json
{"id":"3","created_at":"2020-03-17T10:00:02Z","text":"corona c","lang":"en"}
{"id":"4","created_at":"2020-03-17T10:00:03Z","text":"corona d","lang":"en"}
"#;
        let (records, report) = ingest_str(data);
        assert_eq!(records.len(), 4);
        assert_eq!(report.malformed_lines, 1);
        assert!(report.is_consistent());
    }

    #[test]
    fn ingest_counts_missing_fields_and_bad_timestamps_as_malformed() {
        let data = r#"{"id":"1","created_at":"2020-03-17T10:00:00Z","lang":"en"}
{"id":"2","created_at":"not a date","text":"corona","lang":"en"}
{"created_at":"2020-03-17T10:00:00Z","text":"corona","lang":"en"}
{"id":"3","created_at":"2020-03-17T10:00:00Z","text":"   ","lang":"en"}
"#;
        let (records, report) = ingest_str(data);
        assert!(records.is_empty());
        assert_eq!(report.malformed_lines, 4);
        assert!(report.is_consistent());
    }

    #[test]
    fn ingest_detects_retweet_marker() {
        let data = r#"{"id":"1","created_at":"2020-03-17T10:00:00Z","text":"RT corona","lang":"en","retweeted_status":{"id":"0"}}
"#;
        let (records, _) = ingest_str(data);
        assert!(records[0].is_retweet);
    }

    #[test]
    fn ingest_numeric_id_is_stringified() {
        let data = r#"{"id":1239876,"created_at":"2020-03-17T10:00:00Z","text":"corona","lang":"en"}
"#;
        let (records, _) = ingest_str(data);
        assert_eq!(records[0].id, "1239876");
    }

    #[test]
    fn gzip_source_is_detected_by_magic_bytes() {
        use flate2::write::GzEncoder;
        use flate2::Compression;
        let data = r#"{"id":"1","created_at":"2020-03-17T10:00:00Z","text":"corona","lang":"en"}
"#;
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(data.as_bytes()).unwrap();
        let gz = enc.finish().unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("posts.jsonl.gz");
        std::fs::write(&path, gz).unwrap();

        let reader = open_source(&path).unwrap();
        let mut stream = IngestStream::new(reader, FilterConfig::default());
        let rec = stream.next().unwrap().unwrap();
        assert_eq!(rec.id, "1");
    }

    #[test]
    fn store_round_trip_is_sorted_and_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let mut records = vec![
            record_with_id("b", "2020-03-18T00:00:00Z"),
            record_with_id("a", "2020-03-18T00:00:00Z"),
            record_with_id("z", "2020-03-17T00:00:00Z"),
        ];
        write_store(&path, &mut records).unwrap();
        let first = std::fs::read(&path).unwrap();
        let back = read_store(&path).unwrap();
        assert_eq!(back.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["z", "a", "b"]);

        let mut again = back;
        write_store(&path, &mut again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    fn record_with_id(id: &str, ts: &str) -> TweetRecord {
        TweetRecord {
            id: id.into(),
            created_at: ts.parse().unwrap(),
            text: "corona".into(),
            lang: Some("en".into()),
            is_retweet: false,
        }
    }

    proptest! {
        /// Adding a keyword to the topic set never drops a previously kept record.
        #[test]
        fn topic_filter_monotone(text in ".{0,80}", extra in "[a-zA-Z]{1,8}") {
            let r = record(if text.is_empty() { "x" } else { &text }, Some("en"));
            let base = default_keywords();
            let mut larger = base.clone();
            larger.push(extra);
            prop_assert!(!filter_topic(&r, &base) || filter_topic(&r, &larger));
        }

        /// Re-normalizing the joined token string never changes the token SET,
        /// and never changes the multiset when no hashtags are involved
        /// (hashtag duality intentionally duplicates the bare form).
        #[test]
        fn normalize_idempotent_on_join(text in "[a-zA-Z0-9#@_ .!?']{0,60}") {
            let first = normalize(&text);
            let joined = first.join(" ");
            let second = normalize(&joined);

            let set1: HashSet<&String> = first.iter().collect();
            let set2: HashSet<&String> = second.iter().collect();
            prop_assert_eq!(set1, set2);

            if !first.iter().any(|t| t.starts_with('#')) {
                let mut a = first.clone();
                let mut b = second.clone();
                a.sort();
                b.sort();
                prop_assert_eq!(a, b);
            }
        }

        /// Tokens are non-empty and lowercase.
        #[test]
        fn normalize_tokens_lowercase(text in "\\PC{0,60}") {
            for t in normalize(&text) {
                prop_assert!(!t.is_empty());
                prop_assert_eq!(t.to_lowercase(), t.clone());
            }
        }
    }
}
