//! Simultaneous multi-pattern keyword matching over token sequences.
//!
//! A [`LexiconSet`] compiles into an Aho-Corasick automaton whose alphabet is
//! the set of tokens appearing in lexicon terms, so one pass over a record
//! finds every single- and multi-token term at once. Matching respects token
//! boundaries by construction: the automaton transitions on whole tokens, so
//! a lexicon entry `rat` can never fire inside the token `grateful`.

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TokenSequence;
use crate::label::Label;
use crate::lexicon::LexiconSet;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("cannot compile an empty lexicon")]
    EmptyLexicon,
}

/// Labeling outcome for one token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub source_id: String,
    /// Lexicon terms found as whole tokens / contiguous token runs, sorted.
    pub matched_terms: BTreeSet<String>,
    pub label: Label,
}

#[derive(Debug, Clone)]
struct State {
    /// Sorted (symbol, next state) pairs; binary-searched during matching.
    transitions: Vec<(u32, u32)>,
    fail: u32,
    /// Pattern indices recognized on reaching this state, including those
    /// inherited through the failure chain.
    outputs: Vec<u32>,
}

/// Compiled transition structure over the lexicon's terms.
#[derive(Debug, Clone)]
pub struct PatternAutomaton {
    lexicon_name: String,
    terms: Vec<String>,
    alphabet: HashMap<String, u32>,
    states: Vec<State>,
}

impl PatternAutomaton {
    /// Compiles every lexicon term into one automaton. Terms are token
    /// sequences (space-joined in the lexicon); compilation is total for any
    /// non-empty lexicon.
    pub fn compile(lexicon: &LexiconSet) -> Result<PatternAutomaton, MatchError> {
        if lexicon.is_empty() {
            return Err(MatchError::EmptyLexicon);
        }

        let terms: Vec<String> = lexicon.terms().map(String::from).collect();
        let mut alphabet: HashMap<String, u32> = HashMap::new();
        let mut goto: Vec<HashMap<u32, u32>> = vec![HashMap::new()];
        let mut outputs: Vec<Vec<u32>> = vec![Vec::new()];

        for (pattern_idx, term) in terms.iter().enumerate() {
            let mut state = 0usize;
            for token in term.split(' ') {
                let next_symbol = alphabet.len() as u32;
                let symbol = *alphabet.entry(token.to_string()).or_insert(next_symbol);
                state = match goto[state].get(&symbol) {
                    Some(&next) => next as usize,
                    None => {
                        goto.push(HashMap::new());
                        outputs.push(Vec::new());
                        let next = (goto.len() - 1) as u32;
                        goto[state].insert(symbol, next);
                        next as usize
                    }
                };
            }
            outputs[state].push(pattern_idx as u32);
        }

        // Failure links via BFS from the root; outputs inherit through the
        // failure chain so overlapping and nested terms all surface.
        let mut fail = vec![0u32; goto.len()];
        let mut queue = VecDeque::new();
        let root_children: Vec<(u32, u32)> = goto[0].iter().map(|(&s, &n)| (s, n)).collect();
        for (_, next) in &root_children {
            queue.push_back(*next);
        }
        while let Some(state) = queue.pop_front() {
            let edges: Vec<(u32, u32)> = goto[state as usize].iter().map(|(&s, &n)| (s, n)).collect();
            for (symbol, next) in edges {
                queue.push_back(next);
                let mut f = fail[state as usize];
                loop {
                    if let Some(&target) = goto[f as usize].get(&symbol) {
                        if target != next {
                            fail[next as usize] = target;
                        }
                        break;
                    }
                    if f == 0 {
                        fail[next as usize] = 0;
                        break;
                    }
                    f = fail[f as usize];
                }
                let inherited = outputs[fail[next as usize] as usize].clone();
                outputs[next as usize].extend(inherited);
            }
        }

        let states = goto
            .into_iter()
            .zip(fail)
            .zip(outputs)
            .map(|((transitions, fail), outputs)| {
                let mut transitions: Vec<(u32, u32)> = transitions.into_iter().collect();
                transitions.sort_unstable();
                State {
                    transitions,
                    fail,
                    outputs,
                }
            })
            .collect();

        Ok(PatternAutomaton {
            lexicon_name: lexicon.name.clone(),
            terms,
            alphabet,
            states,
        })
    }

    /// Number of distinct terms the automaton recognizes.
    pub fn pattern_count(&self) -> usize {
        self.terms.len()
    }

    /// Name of the lexicon this automaton was compiled from.
    pub fn lexicon_name(&self) -> &str {
        &self.lexicon_name
    }

    fn step(&self, mut state: u32, symbol: u32) -> u32 {
        loop {
            let s = &self.states[state as usize];
            if let Ok(idx) = s.transitions.binary_search_by_key(&symbol, |&(sym, _)| sym) {
                return s.transitions[idx].1;
            }
            if state == 0 {
                return 0;
            }
            state = s.fail;
        }
    }

    /// Labels a token sequence: `Antisocial` iff any lexicon term occurs as a
    /// whole token or contiguous token run.
    pub fn annotate(&self, tokens: &TokenSequence) -> MatchResult {
        let mut matched: BTreeSet<u32> = BTreeSet::new();
        let mut state = 0u32;
        for token in &tokens.tokens {
            state = match self.alphabet.get(token) {
                Some(&symbol) => self.step(state, symbol),
                // Tokens outside the pattern alphabet cannot continue any
                // partial match.
                None => 0,
            };
            matched.extend(&self.states[state as usize].outputs);
        }
        let matched_terms: BTreeSet<String> = matched
            .into_iter()
            .map(|idx| self.terms[idx as usize].clone())
            .collect();
        let label = if matched_terms.is_empty() {
            Label::Normal
        } else {
            Label::Antisocial
        };
        MatchResult {
            source_id: tokens.source_id.clone(),
            matched_terms,
            label,
        }
    }
}

/// Reference implementation: per-term sliding-window scan. Quadratic, kept
/// public for differential testing against the automaton.
pub fn naive_scan(lexicon: &LexiconSet, tokens: &TokenSequence) -> MatchResult {
    let mut matched_terms = BTreeSet::new();
    for entry in lexicon.iter() {
        let pattern: Vec<&str> = entry.term.split(' ').collect();
        if pattern.len() > tokens.tokens.len() {
            continue;
        }
        let hit = tokens
            .tokens
            .windows(pattern.len())
            .any(|w| w.iter().map(String::as_str).eq(pattern.iter().copied()));
        if hit {
            matched_terms.insert(entry.term.clone());
        }
    }
    let label = if matched_terms.is_empty() {
        Label::Normal
    } else {
        Label::Antisocial
    };
    MatchResult {
        source_id: tokens.source_id.clone(),
        matched_terms,
        label,
    }
}
