//! Sentence splitting and the three-case sentence pairing rule.
//!
//! A dialogue pair whose sides split into the same number of sentences is
//! paired sentence by sentence (a single sentence on each side is the common
//! case). When the counts differ the pair is either skipped or only the
//! common prefix is kept, depending on [`UnequalPolicy`].

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dialogue::DialoguePair;

/// Per-language sentence boundary settings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRules {
    pub terminators: BTreeSet<char>,
    /// Tokens whose trailing `.` never ends a sentence. Compared ignoring case.
    #[serde(default = "default_abbreviations")]
    pub abbreviations: BTreeSet<String>,
}

fn default_abbreviations() -> BTreeSet<String> {
    ["Mr", "Mrs", "Dr", "St", "vs", "etc"].map(String::from).into()
}

impl SentenceRules {
    pub fn with_terminators(terminators: impl IntoIterator<Item = char>) -> Self {
        SentenceRules {
            terminators: terminators.into_iter().collect(),
            abbreviations: default_abbreviations(),
        }
    }

    /// `.`, `!`, `?` and `…`.
    pub fn source_default() -> Self {
        Self::with_terminators(['.', '!', '?', '…'])
    }

    /// The source set plus the Arabic-script `؟` and `۔`.
    pub fn target_default() -> Self {
        Self::with_terminators(['.', '!', '?', '…', '؟', '۔'])
    }

    fn is_abbreviation(&self, token: &str) -> bool {
        self.abbreviations.iter().any(|a| a.eq_ignore_ascii_case(token))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnequalPolicy {
    /// Drop dialogue pairs whose sentence counts differ.
    #[default]
    Skip,
    /// Keep the first `min(|S|, |T|)` sentences of each side.
    Prefix,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitPolicy {
    pub source: SentenceRules,
    pub target: SentenceRules,
    pub unequal_policy: UnequalPolicy,
}

impl Default for SplitPolicy {
    fn default() -> Self {
        SplitPolicy {
            source: SentenceRules::source_default(),
            target: SentenceRules::target_default(),
            unequal_policy: UnequalPolicy::Skip,
        }
    }
}

const CLOSERS: &[char] = &['"', '\'', '”', '’', '»', ')', ']'];

/// Splits cleaned dialogue text into sentences.
///
/// A sentence ends after a run of terminator characters, together with any
/// closing quotes right after it. A lone `.` after a known abbreviation, or
/// after a single letter that is followed by a longer word (an initial as in
/// "J. Smith"), does not end a sentence. Text after the last terminator is
/// kept as a final half sentence.
pub fn split_sentences(text: &str, rules: &SentenceRules) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if !rules.terminators.contains(&chars[i]) {
            i += 1;
            continue;
        }
        let run_start = i;
        while i < chars.len() && rules.terminators.contains(&chars[i]) {
            i += 1;
        }
        while i < chars.len() && CLOSERS.contains(&chars[i]) {
            i += 1;
        }
        let lone_dot = i - run_start == 1 && chars[run_start] == '.';
        if lone_dot && guarded(&chars, run_start, rules) {
            continue;
        }
        push_trimmed(&mut out, &chars[start..i]);
        start = i;
    }
    push_trimmed(&mut out, &chars[start..]);
    out
}

fn push_trimmed(out: &mut Vec<String>, chars: &[char]) {
    let s: String = chars.iter().collect();
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_owned());
    }
}

/// Whether the `.` at `dot` belongs to an abbreviation or an initial.
fn guarded(chars: &[char], dot: usize, rules: &SentenceRules) -> bool {
    let word_start = chars[..dot]
        .iter()
        .rposition(|c| !c.is_alphabetic())
        .map_or(0, |p| p + 1);
    let token: String = chars[word_start..dot].iter().collect();
    if token.is_empty() {
        return false;
    }
    if rules.is_abbreviation(&token) {
        return true;
    }
    if token.chars().count() == 1 {
        let next_word = chars[dot + 1..]
            .iter()
            .skip_while(|c| c.is_whitespace())
            .take_while(|c| c.is_alphabetic())
            .count();
        return next_word >= 2;
    }
    false
}

/// Where a sentence pair came from inside its dialogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Origin {
    pub start_ms: u64,
    pub ordinal: u32,
}

/// The corpus unit: one source sentence and its translation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SentencePair {
    pub video_id: String,
    pub source_text: String,
    pub target_text: String,
    pub origin: Origin,
}

pub fn match_sentences(pair: &DialoguePair, policy: &SplitPolicy) -> Vec<SentencePair> {
    let source = split_sentences(&pair.source_text, &policy.source);
    let target = split_sentences(&pair.target_text, &policy.target);
    let keep = if source.len() == target.len() {
        source.len()
    } else {
        match policy.unequal_policy {
            UnequalPolicy::Skip => 0,
            UnequalPolicy::Prefix => source.len().min(target.len()),
        }
    };
    source
        .into_iter()
        .zip(target)
        .take(keep)
        .enumerate()
        .map(|(ordinal, (source_text, target_text))| SentencePair {
            video_id: pair.video_id.clone(),
            source_text,
            target_text,
            origin: Origin {
                start_ms: pair.start_ms,
                ordinal: ordinal as u32,
            },
        })
        .collect()
}
