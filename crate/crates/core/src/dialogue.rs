//! Cue text cleaning and dialogue pairing.

use std::sync::LazyLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use crate::lang::LangCode;
use crate::subtitle::SubtitleDocument;

/// One cleaning step. Rules run in list order on every pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CleaningRule {
    /// `<...>` markup and `{...}` style codes; unclosed ones run to end of line.
    TagStrip,
    /// `[...]` and `(...)` descriptions.
    BracketStrip,
    /// `NAME:` at the start of a line when text follows.
    SpeakerLabel {
        #[serde(default = "default_label_len")]
        max_len: usize,
    },
    /// Leading dialogue dashes.
    DashStrip,
    /// `&amp;`, `&lt;`, `&#NN;` and friends.
    EntityDecode,
    /// Drops lines that begin or end with a music glyph.
    MusicDrop {
        #[serde(default = "default_glyphs")]
        glyphs: String,
    },
    CustomPattern {
        pattern: String,
        #[serde(default)]
        replacement: String,
    },
}

fn default_label_len() -> usize {
    30
}

fn default_glyphs() -> String {
    "♪♫".to_owned()
}

/// Ordered rule list, loadable from TOML as a sequence of `[[rule]]` tables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningRules {
    #[serde(rename = "rule", default)]
    pub rules: Vec<CleaningRule>,
}

impl Default for CleaningRules {
    fn default() -> Self {
        CleaningRules {
            rules: vec![
                CleaningRule::TagStrip,
                CleaningRule::BracketStrip,
                CleaningRule::SpeakerLabel { max_len: default_label_len() },
                CleaningRule::DashStrip,
                CleaningRule::EntityDecode,
            ],
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CleaningError {
    #[error("invalid custom pattern {pattern:?}: {source}")]
    Pattern {
        pattern: String,
        #[source]
        source: regex::Error,
    },
    #[error("speaker label length must be positive")]
    LabelLength,
    #[error("cannot parse cleaning rules: {0}")]
    Config(#[from] toml::de::Error),
}

impl CleaningRules {
    pub fn from_toml(text: &str) -> Result<Self, CleaningError> {
        Ok(toml::from_str(text)?)
    }
}

static TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)<[^>\n]*(?:>|$)|\{[^}\n]*(?:\}|$)").unwrap());
static BRACKET: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[[^\[\]]*\]|\([^()]*\)").unwrap());
static DASH: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^[ \t]*[-–—]+[ \t]*").unwrap());
static ENTITY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"&(amp|lt|gt|quot|apos|nbsp|#[0-9]{1,7}|#[xX][0-9a-fA-F]{1,6});").unwrap());

#[derive(Debug, Clone)]
enum Step {
    Replace(Regex, String),
    Speaker(Regex),
    Entities,
    Music(Vec<char>),
}

/// Compiled [`CleaningRules`].
#[derive(Debug, Clone)]
pub struct Cleaner {
    steps: Vec<Step>,
}

impl Default for Cleaner {
    fn default() -> Self {
        Cleaner::new(&CleaningRules::default()).expect("default rules compile")
    }
}

const MAX_PASSES: usize = 16;

impl Cleaner {
    pub fn new(rules: &CleaningRules) -> Result<Self, CleaningError> {
        let steps = rules
            .rules
            .iter()
            .map(|rule| {
                Ok(match rule {
                    CleaningRule::TagStrip => Step::Replace(TAG.clone(), String::new()),
                    CleaningRule::BracketStrip => Step::Replace(BRACKET.clone(), String::new()),
                    CleaningRule::DashStrip => Step::Replace(DASH.clone(), String::new()),
                    CleaningRule::SpeakerLabel { max_len } => {
                        if *max_len == 0 {
                            return Err(CleaningError::LabelLength);
                        }
                        let re = format!(r"(?m)^([ \t]*(?:[-–—][ \t]*)*)[^\s:]{{1,{max_len}}}:[ \t]+(\S)");
                        Step::Speaker(Regex::new(&re).expect("label pattern is valid"))
                    }
                    CleaningRule::EntityDecode => Step::Entities,
                    CleaningRule::MusicDrop { glyphs } => Step::Music(glyphs.chars().collect()),
                    CleaningRule::CustomPattern { pattern, replacement } => {
                        let re = Regex::new(pattern).map_err(|source| CleaningError::Pattern {
                            pattern: pattern.clone(),
                            source,
                        })?;
                        Step::Replace(re, replacement.clone())
                    }
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Cleaner { steps })
    }

    /// Cleans raw cue text. An empty result means the cue carries nothing
    /// worth pairing.
    ///
    /// The rule list, the line join and whitespace normalization are applied
    /// repeatedly until the text stops changing, so the result is a fixed
    /// point: cleaning it again returns it unchanged.
    pub fn clean(&self, raw: &str) -> String {
        let mut text = self.pass(raw);
        for _ in 1..MAX_PASSES {
            let next = self.pass(&text);
            if next == text {
                break;
            }
            text = next;
        }
        text
    }

    fn pass(&self, raw: &str) -> String {
        let mut text = raw.replace("\r\n", "\n");
        for step in &self.steps {
            text = match step {
                Step::Replace(re, with) => re.replace_all(&text, with.as_str()).into_owned(),
                Step::Speaker(re) => re.replace_all(&text, "$1$2").into_owned(),
                Step::Entities => ENTITY.replace_all(&text, |c: &Captures| decode_entity(&c[1])).into_owned(),
                Step::Music(glyphs) => text
                    .split('\n')
                    .filter(|line| {
                        let line = line.trim();
                        let has = |c: Option<char>| c.is_some_and(|c| glyphs.contains(&c));
                        !(has(line.chars().next()) || has(line.chars().next_back()))
                    })
                    .collect::<Vec<_>>()
                    .join("\n"),
            };
        }
        // Stray markup characters, e.g. from decoded `&lt;`, never survive.
        let text = text.replace(['<', '>', '{', '}'], " ");
        text.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

fn decode_entity(name: &str) -> String {
    let code = match name {
        "amp" => return "&".into(),
        "lt" => return "<".into(),
        "gt" => return ">".into(),
        "quot" => return "\"".into(),
        "apos" => return "'".into(),
        "nbsp" => return " ".into(),
        _ if name.starts_with("#x") || name.starts_with("#X") => u32::from_str_radix(&name[2..], 16).ok(),
        _ => name[1..].parse::<u32>().ok(),
    };
    code.and_then(char::from_u32)
        .filter(|c| !c.is_control() || c.is_whitespace())
        .map(String::from)
        .unwrap_or_default()
}

/// Cleans `text` with `cleaner`.
pub fn clean_dialogue(text: &str, cleaner: &Cleaner) -> String {
    cleaner.clean(text)
}

/// Cleaned source and target text sharing one time window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialoguePair {
    pub video_id: String,
    pub start_ms: u64,
    pub end_ms: u64,
    pub source_text: String,
    pub target_text: String,
    pub source_lang: LangCode,
    pub target_lang: LangCode,
}

/// Turns matched cue positions into dialogue pairs. Pairs where either side
/// cleans to nothing are dropped. Times come from the source cue.
pub fn pair_dialogues(
    source: &SubtitleDocument,
    target: &SubtitleDocument,
    matching: &[(usize, usize)],
    cleaner: &Cleaner,
) -> Vec<DialoguePair> {
    let mut pairs: Vec<DialoguePair> = matching
        .iter()
        .filter_map(|&(i, j)| {
            let (src, dst) = (&source.cues[i], &target.cues[j]);
            let source_text = cleaner.clean(&src.text);
            let target_text = cleaner.clean(&dst.text);
            if source_text.is_empty() || target_text.is_empty() {
                return None;
            }
            Some(DialoguePair {
                video_id: source.video_id.clone(),
                start_ms: src.start_ms,
                end_ms: src.end_ms,
                source_text,
                target_text,
                source_lang: source.language.clone(),
                target_lang: target.language.clone(),
            })
        })
        .collect();
    pairs.sort_by_key(|p| p.start_ms);
    pairs
}
