//! Word embeddings trained by skip-gram with negative sampling, plus the
//! similarity queries behind lexicon expansion and target analysis.
//!
//! Training is deterministic for a fixed seed (single worker). Query
//! similarity is the cosine of the two *input* vectors, accumulated in f64
//! over the stored f32 rows and clamped to `[-1, 1]`; output vectors are kept
//! in the model file for reproducibility but take no part in queries.

mod sgns;

pub use sgns::{
    evaluate_loss, pair_gradients, pair_loss, train, train_with_report, PairGradients,
    TrainReport,
};

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TokenSequence;
use crate::lexicon::{LexiconEntry, LexiconKind, LexiconSet, Source};

const MODEL_MAGIC: &[u8; 6] = b"ASEMB1";

/// Cosine similarity above which a vocabulary term joins the extended
/// lexicon (strict inequality).
pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.7;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("term {0:?} is not in the vocabulary")]
    OutOfVocabulary(String),
    #[error("empty vocabulary after applying min_count={0}")]
    EmptyVocabulary(u64),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("corpus too short: {retained} retained tokens, need at least {required}")]
    CorpusTooShort { retained: usize, required: usize },
    #[error("non-finite loss in epoch {0}; aborting training")]
    NonFiniteLoss(usize),
    #[error("lexicon disjoint from vocabulary: no single-token basic term is present")]
    LexiconDisjoint,
    #[error("invalid model file: {0}")]
    InvalidModelFile(String),
}

/// Skip-gram training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub min_count: u64,
    pub learning_rate_initial: f64,
    /// Frequent-word down-sampling threshold; `0` disables sub-sampling.
    pub subsample_threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 5,
            min_count: 5,
            learning_rate_initial: 0.025,
            subsample_threshold: 1e-3,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EmbeddingError> {
        let fail = |msg: &str| Err(EmbeddingError::InvalidConfig(msg.to_string()));
        if self.dim < 2 {
            return fail("dim must be >= 2");
        }
        if self.window < 1 {
            return fail("window must be >= 1");
        }
        if self.negatives < 1 {
            return fail("negatives must be >= 1");
        }
        if self.epochs < 1 {
            return fail("epochs must be >= 1");
        }
        if self.min_count < 1 {
            return fail("min_count must be >= 1");
        }
        if !(self.learning_rate_initial > 0.0) {
            return fail("learning_rate_initial must be > 0");
        }
        if self.subsample_threshold < 0.0 {
            return fail("subsample_threshold must be >= 0");
        }
        Ok(())
    }
}

/// One vocabulary row: a corpus term and its frequency.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub term: String,
    pub frequency: u64,
}

/// Builds the training vocabulary: terms with corpus frequency >= `min_count`,
/// sorted by descending frequency then lexicographically.
pub fn build_vocab(
    corpus: &[TokenSequence],
    min_count: u64,
) -> Result<Vec<VocabEntry>, EmbeddingError> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for sequence in corpus {
        for token in &sequence.tokens {
            *counts.entry(token.as_str()).or_default() += 1;
        }
    }
    let mut vocab: Vec<VocabEntry> = counts
        .into_iter()
        .filter(|&(_, freq)| freq >= min_count)
        .map(|(term, frequency)| VocabEntry {
            term: term.to_string(),
            frequency,
        })
        .collect();
    if vocab.is_empty() {
        return Err(EmbeddingError::EmptyVocabulary(min_count));
    }
    vocab.sort_by(|a, b| {
        b.frequency
            .cmp(&a.frequency)
            .then_with(|| a.term.cmp(&b.term))
    });
    Ok(vocab)
}

/// A trained embedding: vocabulary plus input/output vector matrices.
#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    vocab: Vec<VocabEntry>,
    index: HashMap<String, usize>,
    dim: usize,
    input_vectors: Vec<f32>,
    output_vectors: Vec<f32>,
    /// Training configuration snapshot; `None` for models loaded from disk
    /// (the file format does not carry it).
    pub config: Option<TrainConfig>,
}

impl EmbeddingModel {
    pub(crate) fn from_parts(
        vocab: Vec<VocabEntry>,
        dim: usize,
        input_vectors: Vec<f32>,
        output_vectors: Vec<f32>,
        config: Option<TrainConfig>,
    ) -> EmbeddingModel {
        debug_assert_eq!(input_vectors.len(), vocab.len() * dim);
        debug_assert_eq!(output_vectors.len(), vocab.len() * dim);
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, entry)| (entry.term.clone(), i))
            .collect();
        EmbeddingModel {
            vocab,
            index,
            dim,
            input_vectors,
            output_vectors,
            config,
        }
    }

    /// Assembles a model from externally supplied vectors (row-major,
    /// `vocab.len() * dim` each). Rejects size mismatches, duplicate terms,
    /// and non-finite components.
    pub fn from_vectors(
        vocab: Vec<VocabEntry>,
        dim: usize,
        input_vectors: Vec<f32>,
        output_vectors: Vec<f32>,
    ) -> Result<EmbeddingModel, EmbeddingError> {
        let invalid = |msg: String| EmbeddingError::InvalidConfig(msg);
        if dim == 0 || vocab.is_empty() {
            return Err(invalid("empty vocabulary or zero dimension".to_string()));
        }
        if input_vectors.len() != vocab.len() * dim || output_vectors.len() != vocab.len() * dim {
            return Err(invalid(format!(
                "matrix size mismatch: want {} values per matrix",
                vocab.len() * dim
            )));
        }
        if input_vectors.iter().chain(&output_vectors).any(|v| !v.is_finite()) {
            return Err(invalid("non-finite vector component".to_string()));
        }
        let model = EmbeddingModel::from_parts(vocab, dim, input_vectors, output_vectors, None);
        if model.index.len() != model.vocab.len() {
            return Err(invalid("duplicate vocabulary terms".to_string()));
        }
        Ok(model)
    }

    pub fn vocab(&self) -> &[VocabEntry] {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn contains(&self, term: &str) -> bool {
        self.index.contains_key(term)
    }

    fn row(&self, term: &str) -> Result<usize, EmbeddingError> {
        self.index
            .get(term)
            .copied()
            .ok_or_else(|| EmbeddingError::OutOfVocabulary(term.to_string()))
    }

    pub fn input_vector(&self, term: &str) -> Result<&[f32], EmbeddingError> {
        let row = self.row(term)?;
        Ok(&self.input_vectors[row * self.dim..(row + 1) * self.dim])
    }

    pub(crate) fn input_row(&self, row: usize) -> &[f32] {
        &self.input_vectors[row * self.dim..(row + 1) * self.dim]
    }

    pub(crate) fn output_row(&self, row: usize) -> &[f32] {
        &self.output_vectors[row * self.dim..(row + 1) * self.dim]
    }

    /// Cosine similarity of the two terms' input vectors, in `[-1, 1]`.
    /// Exactly symmetric: the accumulation order is identical for both
    /// argument orders. Out-of-vocabulary terms are a typed error, never a
    /// silent zero.
    pub fn similarity(&self, w1: &str, w2: &str) -> Result<f64, EmbeddingError> {
        let a = self.input_vector(w1)?;
        let b = self.input_vector(w2)?;
        Ok(cosine(a, b))
    }

    /// Top-k terms by descending similarity to `w`, excluding `w` itself,
    /// ties broken lexicographically.
    pub fn neighbors(&self, w: &str, k: usize) -> Result<Vec<(String, f64)>, EmbeddingError> {
        let target_row = self.row(w)?;
        let target = self.input_row(target_row);
        let mut scored: Vec<(f64, &str)> = self
            .vocab
            .iter()
            .enumerate()
            .filter(|&(row, _)| row != target_row)
            .map(|(row, entry)| (cosine(target, self.input_row(row)), entry.term.as_str()))
            .collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("similarities are finite")
                .then_with(|| a.1.cmp(b.1))
        });
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(sim, term)| (term.to_string(), sim))
            .collect())
    }

    /// Writes the model file: magic `ASEMB1`, little-endian `u32` vocab size
    /// and `u32` dim, per-term `u16` byte-length + UTF-8 term + `u64`
    /// frequency, then the input and output `f32` matrices row-major.
    pub fn save(&self, path: &Path) -> Result<(), EmbeddingError> {
        let tmp = path.with_extension("tmp");
        {
            let mut out = BufWriter::new(File::create(&tmp)?);
            out.write_all(MODEL_MAGIC)?;
            out.write_all(&(self.vocab.len() as u32).to_le_bytes())?;
            out.write_all(&(self.dim as u32).to_le_bytes())?;
            for entry in &self.vocab {
                let bytes = entry.term.as_bytes();
                if bytes.len() > u16::MAX as usize {
                    return Err(EmbeddingError::InvalidModelFile(format!(
                        "term too long to serialize: {} bytes",
                        bytes.len()
                    )));
                }
                out.write_all(&(bytes.len() as u16).to_le_bytes())?;
                out.write_all(bytes)?;
                out.write_all(&entry.frequency.to_le_bytes())?;
            }
            for value in &self.input_vectors {
                out.write_all(&value.to_le_bytes())?;
            }
            for value in &self.output_vectors {
                out.write_all(&value.to_le_bytes())?;
            }
            out.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Reads a model file written by [`save`](Self::save). Reloading
    /// reproduces bit-identical vectors, hence bit-identical similarities.
    pub fn load(path: &Path) -> Result<EmbeddingModel, EmbeddingError> {
        let mut reader = BufReader::new(File::open(path)?);
        let invalid = |msg: &str| EmbeddingError::InvalidModelFile(msg.to_string());

        let mut magic = [0u8; 6];
        reader.read_exact(&mut magic).map_err(|_| invalid("truncated magic"))?;
        if &magic != MODEL_MAGIC {
            return Err(invalid("bad magic"));
        }
        let vocab_size = read_u32(&mut reader)? as usize;
        let dim = read_u32(&mut reader)? as usize;
        if dim == 0 || vocab_size == 0 {
            return Err(invalid("zero vocabulary or dimension"));
        }

        let mut vocab = Vec::with_capacity(vocab_size);
        for _ in 0..vocab_size {
            let len = read_u16(&mut reader)? as usize;
            let mut buf = vec![0u8; len];
            reader.read_exact(&mut buf).map_err(|_| invalid("truncated term"))?;
            let term = String::from_utf8(buf).map_err(|_| invalid("term is not UTF-8"))?;
            let frequency = read_u64(&mut reader)?;
            vocab.push(VocabEntry { term, frequency });
        }
        let input_vectors = read_f32_matrix(&mut reader, vocab_size * dim)?;
        let output_vectors = read_f32_matrix(&mut reader, vocab_size * dim)?;

        let mut trailing = [0u8; 1];
        if reader.read(&mut trailing)? != 0 {
            return Err(invalid("trailing bytes after matrices"));
        }

        let model = EmbeddingModel::from_parts(vocab, dim, input_vectors, output_vectors, None);
        if model.index.len() != model.vocab.len() {
            return Err(invalid("duplicate vocabulary terms"));
        }
        if model.input_vectors.iter().chain(&model.output_vectors).any(|v| !v.is_finite()) {
            return Err(invalid("non-finite vector component"));
        }
        Ok(model)
    }
}

fn read_u16<R: Read>(reader: &mut R) -> Result<u16, EmbeddingError> {
    let mut buf = [0u8; 2];
    reader.read_exact(&mut buf)?;
    Ok(u16::from_le_bytes(buf))
}

fn read_u32<R: Read>(reader: &mut R) -> Result<u32, EmbeddingError> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(reader: &mut R) -> Result<u64, EmbeddingError> {
    let mut buf = [0u8; 8];
    reader.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f32_matrix<R: Read>(reader: &mut R, len: usize) -> Result<Vec<f32>, EmbeddingError> {
    let mut bytes = vec![0u8; len * 4];
    reader
        .read_exact(&mut bytes)
        .map_err(|_| EmbeddingError::InvalidModelFile("truncated matrix".to_string()))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Cosine of two rows, accumulated in f64 in index order and clamped to
/// `[-1, 1]`. Zero vectors yield 0.
pub(crate) fn cosine(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0f64;
    let mut norm_a = 0.0f64;
    let mut norm_b = 0.0f64;
    for i in 0..a.len() {
        let x = a[i] as f64;
        let y = b[i] as f64;
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        return 0.0;
    }
    (dot / (norm_a.sqrt() * norm_b.sqrt())).clamp(-1.0, 1.0)
}

/// Builds the extended lexicon: every vocabulary term outside `basic` whose
/// maximum similarity to a single-token basic term strictly exceeds
/// `threshold`. Multi-token basic entries pass through unexpanded (they do
/// not anchor similarity).
pub fn expand_lexicon(
    model: &EmbeddingModel,
    basic: &LexiconSet,
    threshold: f64,
) -> Result<LexiconSet, EmbeddingError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(EmbeddingError::InvalidConfig(
            "similarity threshold must be in (0, 1]".to_string(),
        ));
    }
    let anchor_rows: Vec<usize> = basic
        .iter()
        .filter(|entry| entry.arity == 1)
        .filter_map(|entry| model.index.get(entry.term.as_str()).copied())
        .collect();
    if anchor_rows.is_empty() {
        return Err(EmbeddingError::LexiconDisjoint);
    }

    let mut extended = LexiconSet::new(format!("{}-extended", basic.name), LexiconKind::Extended);
    for (row, entry) in model.vocab.iter().enumerate() {
        if basic.contains_term(&entry.term) {
            continue;
        }
        let candidate = model.input_row(row);
        let max_sim = anchor_rows
            .iter()
            .map(|&anchor| cosine(candidate, model.input_row(anchor)))
            .fold(f64::NEG_INFINITY, f64::max);
        if max_sim > threshold {
            extended.insert(LexiconEntry {
                term: entry.term.clone(),
                arity: 1,
                source: Source::Expanded,
                ref_count: 0,
            });
        }
    }
    Ok(extended)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Hand-built model with integer-coordinate vectors so expected cosines
    /// are exact.
    pub(crate) fn toy_model(entries: &[(&str, Vec<f32>)]) -> EmbeddingModel {
        let dim = entries[0].1.len();
        let vocab: Vec<VocabEntry> = entries
            .iter()
            .map(|(term, _)| VocabEntry {
                term: term.to_string(),
                frequency: 5,
            })
            .collect();
        let input: Vec<f32> = entries.iter().flat_map(|(_, v)| v.iter().copied()).collect();
        let output = vec![0.0f32; input.len()];
        EmbeddingModel::from_parts(vocab, dim, input, output, None)
    }

    #[test]
    fn similarity_identical_and_negated() {
        let model = toy_model(&[
            ("a", vec![1.0, 2.0, 3.0]),
            ("b", vec![1.0, 2.0, 3.0]),
            ("c", vec![-1.0, -2.0, -3.0]),
        ]);
        assert_eq!(model.similarity("a", "b").unwrap(), 1.0);
        assert_eq!(model.similarity("a", "c").unwrap(), -1.0);
        assert_eq!(model.similarity("a", "a").unwrap(), 1.0);
    }

    #[test]
    fn similarity_matches_direct_formula_on_toy_model() {
        let entries = [
            ("v", vec![0.3f32, -0.7, 1.1]),
            ("w", vec![0.9f32, 0.2, -0.4]),
            ("x", vec![-1.3f32, 0.8, 0.5]),
            ("y", vec![0.05f32, 0.0, 2.0]),
            ("z", vec![1.0f32, 1.0, 1.0]),
        ];
        let model = toy_model(&entries);
        for (t1, v1) in &entries {
            for (t2, v2) in &entries {
                // Independent oracle: textbook dot/(|a||b|) in f64.
                let dot: f64 = v1.iter().zip(v2).map(|(a, b)| *a as f64 * *b as f64).sum();
                let na: f64 = v1.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
                let nb: f64 = v2.iter().map(|b| (*b as f64).powi(2)).sum::<f64>().sqrt();
                let expected = (dot / (na * nb)).clamp(-1.0, 1.0);
                assert_eq!(model.similarity(t1, t2).unwrap(), expected);
            }
        }
    }

    #[test]
    fn similarity_is_exactly_symmetric() {
        let model = toy_model(&[
            ("a", vec![0.123, -4.56, 7.89, 0.001]),
            ("b", vec![9.87, 0.654, -0.321, 2.5]),
        ]);
        let ab = model.similarity("a", "b").unwrap();
        let ba = model.similarity("b", "a").unwrap();
        assert_eq!(ab.to_bits(), ba.to_bits());
    }

    #[test]
    fn similarity_oov_is_typed_error() {
        let model = toy_model(&[("a", vec![1.0, 0.0])]);
        assert!(matches!(
            model.similarity("a", "missing"),
            Err(EmbeddingError::OutOfVocabulary(t)) if t == "missing"
        ));
    }

    #[test]
    fn power_of_two_scaling_leaves_similarities_bit_identical() {
        let base = [
            ("a", vec![0.11f32, -0.52, 0.93]),
            ("b", vec![0.77f32, 0.01, -0.3]),
            ("c", vec![-0.25f32, 0.6, 0.45]),
        ];
        let mut scaled = base.clone();
        for v in &mut scaled[1].1 {
            *v *= 4.0;
        }
        let m1 = toy_model(&base);
        let m2 = toy_model(&scaled);
        for t in ["a", "b", "c"] {
            assert_eq!(
                m1.similarity("b", t).unwrap().to_bits(),
                m2.similarity("b", t).unwrap().to_bits()
            );
        }
        assert_eq!(m1.neighbors("b", 2).unwrap().iter().map(|(t, _)| t.clone()).collect::<Vec<_>>(),
                   m2.neighbors("b", 2).unwrap().iter().map(|(t, _)| t.clone()).collect::<Vec<_>>());
    }

    #[test]
    fn neighbors_k1_is_argmax_of_exhaustive_scan() {
        let model = toy_model(&[
            ("q", vec![1.0, 0.0, 0.0]),
            ("r", vec![0.9, 0.1, 0.0]),
            ("s", vec![0.0, 1.0, 0.0]),
        ]);
        // Independent oracle: exhaustive pairwise scan.
        let mut best: Option<(&str, f64)> = None;
        for other in ["r", "s"] {
            let sim = model.similarity("q", other).unwrap();
            if best.is_none() || sim > best.unwrap().1 {
                best = Some((other, sim));
            }
        }
        let neighbors = model.neighbors("q", 1).unwrap();
        assert_eq!(neighbors.len(), 1);
        assert_eq!(neighbors[0].0, best.unwrap().0);
        assert_eq!(neighbors[0].1, best.unwrap().1);
    }

    #[test]
    fn neighbors_large_k_returns_all_other_terms_sorted() {
        let model = toy_model(&[
            ("a", vec![1.0, 0.0]),
            ("b", vec![0.0, 1.0]),
            ("c", vec![1.0, 1.0]),
            ("d", vec![-1.0, 0.0]),
        ]);
        let neighbors = model.neighbors("a", 100).unwrap();
        assert_eq!(neighbors.len(), 3);
        for pair in neighbors.windows(2) {
            assert!(pair[0].1 >= pair[1].1);
        }
        assert!(neighbors.iter().all(|(t, _)| t != "a"));
    }

    #[test]
    fn neighbors_ties_break_lexicographically() {
        let model = toy_model(&[
            ("t", vec![1.0, 0.0]),
            ("zz", vec![2.0, 0.0]),
            ("aa", vec![4.0, 0.0]),
        ]);
        let neighbors = model.neighbors("t", 2).unwrap();
        assert_eq!(neighbors[0].0, "aa");
        assert_eq!(neighbors[1].0, "zz");
        assert_eq!(neighbors[0].1, 1.0);
        assert_eq!(neighbors[1].1, 1.0);
    }

    fn basic_of(terms: &[&str]) -> LexiconSet {
        let mut set = LexiconSet::new("basic", LexiconKind::Basic);
        for t in terms {
            set.insert(LexiconEntry::new(t, Source::User).unwrap());
        }
        set
    }

    #[test]
    fn expand_includes_identical_vector_and_excludes_orthogonal() {
        let model = toy_model(&[
            ("slur", vec![1.0, 0.0]),
            ("same", vec![2.0, 0.0]),
            ("ortho", vec![0.0, 1.0]),
        ]);
        let extended = expand_lexicon(&model, &basic_of(&["slur"]), 0.7).unwrap();
        assert!(extended.contains_term("same"));
        assert!(!extended.contains_term("ortho"));
        assert!(!extended.contains_term("slur"));
        assert_eq!(extended.kind, LexiconKind::Extended);
        assert!(extended.iter().all(|e| e.source == Source::Expanded));
    }

    /// Boundary semantics: vectors (1,0,0,0) and (7,5,5,1) have cosine
    /// exactly 7/10 = 0.7 in f64, which must NOT pass the strict threshold.
    #[test]
    fn expand_threshold_is_strictly_greater_than() {
        let model = toy_model(&[
            ("anchor", vec![1.0, 0.0, 0.0, 0.0]),
            ("boundary", vec![7.0, 5.0, 5.0, 1.0]),
            ("above", vec![8.0, 6.0, 0.0, 0.0]),
        ]);
        assert_eq!(model.similarity("anchor", "boundary").unwrap(), 0.7);
        assert_eq!(model.similarity("anchor", "above").unwrap(), 0.8);

        let basic = basic_of(&["anchor"]);
        let at_threshold = expand_lexicon(&model, &basic, 0.7).unwrap();
        assert!(!at_threshold.contains_term("boundary"));
        assert!(at_threshold.contains_term("above"));

        let just_below = expand_lexicon(&model, &basic, 0.7 - 1e-6).unwrap();
        assert!(just_below.contains_term("boundary"));
    }

    #[test]
    fn expand_threshold_one_yields_empty_set() {
        let model = toy_model(&[
            ("slur", vec![1.0, 0.0]),
            ("same", vec![3.0, 0.0]),
        ]);
        let extended = expand_lexicon(&model, &basic_of(&["slur"]), 1.0).unwrap();
        assert!(extended.is_empty());
    }

    #[test]
    fn expand_disjoint_lexicon_is_error() {
        let model = toy_model(&[("a", vec![1.0, 0.0])]);
        assert!(matches!(
            expand_lexicon(&model, &basic_of(&["missing", "two token"]), 0.7),
            Err(EmbeddingError::LexiconDisjoint)
        ));
    }

    /// Extended set equals an exhaustive pairwise-similarity filter.
    #[test]
    fn expand_matches_brute_force_oracle() {
        let entries = [
            ("slura", vec![1.0f32, 0.2, 0.0]),
            ("slurb", vec![0.0f32, 1.0, 0.3]),
            ("nearb", vec![0.1f32, 0.9, 0.2]),
            ("neara", vec![0.95f32, 0.3, 0.0]),
            ("far1", vec![-1.0f32, 0.1, 0.0]),
            ("far2", vec![0.0f32, -0.2, 1.0]),
            ("mid", vec![0.5f32, 0.5, 0.1]),
            ("odd", vec![0.0f32, 0.0, -1.0]),
        ];
        let model = toy_model(&entries);
        let basic = basic_of(&["slura", "slurb"]);
        let threshold = 0.7;
        let extended = expand_lexicon(&model, &basic, threshold).unwrap();

        // Oracle: brute-force pairwise cosine against each basic anchor.
        for (term, vec) in &entries {
            if basic.contains_term(term) {
                assert!(!extended.contains_term(term));
                continue;
            }
            let mut max_sim = f64::NEG_INFINITY;
            for anchor in ["slura", "slurb"] {
                let anchor_vec = entries.iter().find(|(t, _)| t == &anchor).unwrap();
                let dot: f64 = vec.iter().zip(&anchor_vec.1).map(|(a, b)| *a as f64 * *b as f64).sum();
                let na: f64 = vec.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
                let nb: f64 = anchor_vec.1.iter().map(|b| (*b as f64).powi(2)).sum::<f64>().sqrt();
                max_sim = max_sim.max((dot / (na * nb)).clamp(-1.0, 1.0));
            }
            assert_eq!(
                extended.contains_term(term),
                max_sim > threshold,
                "term {term} max_sim {max_sim}"
            );
        }
    }

    #[test]
    fn build_vocab_min_count_and_ordering() {
        let corpus = vec![
            TokenSequence { source_id: "1".into(), tokens: vec!["a".into(), "a".into(), "b".into()] },
        ];
        let vocab = build_vocab(&corpus, 2).unwrap();
        assert_eq!(vocab.len(), 1);
        assert_eq!(vocab[0].term, "a");

        let vocab = build_vocab(&corpus, 1).unwrap();
        assert_eq!(
            vocab.iter().map(|v| v.term.as_str()).collect::<Vec<_>>(),
            ["a", "b"]
        );
    }

    #[test]
    fn build_vocab_empty_after_filter_is_error() {
        let corpus = vec![TokenSequence { source_id: "1".into(), tokens: vec!["a".into()] }];
        assert!(matches!(
            build_vocab(&corpus, 99),
            Err(EmbeddingError::EmptyVocabulary(99))
        ));
    }

    #[test]
    fn build_vocab_matches_counting_oracle() {
        // ~1k-token synthetic corpus with a known Zipf-ish shape.
        let mut corpus = Vec::new();
        for i in 0..200 {
            let mut tokens = vec!["common".to_string()];
            if i % 2 == 0 {
                tokens.push("half".to_string());
            }
            if i % 5 == 0 {
                tokens.push("fifth".to_string());
            }
            tokens.push(format!("unique{i}"));
            corpus.push(TokenSequence { source_id: i.to_string(), tokens });
        }
        // Independent oracle: plain hash-map counting pass.
        let mut counts: HashMap<String, u64> = HashMap::new();
        for seq in &corpus {
            for t in &seq.tokens {
                *counts.entry(t.clone()).or_default() += 1;
            }
        }
        let vocab = build_vocab(&corpus, 2).unwrap();
        for entry in &vocab {
            assert_eq!(entry.frequency, counts[&entry.term]);
        }
        assert!(vocab.iter().all(|v| v.frequency >= 2));
        assert_eq!(vocab.len(), counts.values().filter(|&&c| c >= 2).count());
    }

    #[test]
    fn model_file_round_trip_is_bit_identical() {
        let model = toy_model(&[
            ("alpha", vec![0.25, -1.5, 3.125]),
            ("beta", vec![0.1, 0.2, 0.3]),
        ]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        model.save(&path).unwrap();
        let loaded = EmbeddingModel::load(&path).unwrap();

        assert_eq!(loaded.vocab(), model.vocab());
        assert_eq!(loaded.dim(), model.dim());
        for t1 in ["alpha", "beta"] {
            for t2 in ["alpha", "beta"] {
                assert_eq!(
                    model.similarity(t1, t2).unwrap().to_bits(),
                    loaded.similarity(t1, t2).unwrap().to_bits()
                );
            }
        }

        // Saving the loaded model reproduces the same bytes.
        let path2 = dir.path().join("model2.bin");
        loaded.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn model_load_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        std::fs::write(&path, b"NOTAMODEL").unwrap();
        assert!(matches!(
            EmbeddingModel::load(&path),
            Err(EmbeddingError::InvalidModelFile(_))
        ));
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut config = TrainConfig::default();
        config.epochs = 0;
        assert!(config.validate().is_err());
        let mut config = TrainConfig::default();
        config.dim = 1;
        assert!(config.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
