//! SubRip parsing, serialization and timeline shifting.
//!
//! Times are integer milliseconds throughout. The parser is lenient: a
//! malformed block is skipped and reported as a [`Diagnostic`], and parsing
//! continues with the next block.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::lang::LangCode;

/// One timed subtitle block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cue {
    /// Block ordinal as found in the file.
    pub index: u32,
    pub start_ms: u64,
    pub end_ms: u64,
    /// Raw text, lines separated by `\n`.
    pub text: String,
}

impl Cue {
    pub fn new(index: u32, start_ms: u64, end_ms: u64, text: impl Into<String>) -> Self {
        Cue {
            index,
            start_ms,
            end_ms,
            text: text.into(),
        }
    }

    fn sort_key(&self) -> (u64, u64, u32) {
        (self.start_ms, self.end_ms, self.index)
    }
}

/// All cues of one video in one language, sorted by `(start, end, index)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtitleDocument {
    pub language: LangCode,
    pub video_id: String,
    pub cues: Vec<Cue>,
}

impl SubtitleDocument {
    /// Builds a document, sorting the cues into canonical order.
    pub fn new(language: LangCode, video_id: impl Into<String>, mut cues: Vec<Cue>) -> Self {
        cues.sort_by_key(Cue::sort_key);
        SubtitleDocument {
            language,
            video_id: video_id.into(),
            cues,
        }
    }

    pub fn len(&self) -> usize {
        self.cues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cues.is_empty()
    }

    /// Copy of this document with cues renumbered `1..=n` in current order.
    pub fn renumbered(&self) -> SubtitleDocument {
        let mut doc = self.clone();
        for (n, cue) in doc.cues.iter_mut().enumerate() {
            cue.index = n as u32 + 1;
        }
        doc
    }
}

/// Input formats understood by [`parse`]. Only SubRip today.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubtitleFormat {
    #[default]
    Srt,
}

/// Legacy single-byte encoding tried when the input is not valid UTF-8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FallbackEncoding {
    #[serde(rename = "windows-1256")]
    Windows1256,
    #[serde(rename = "windows-1252")]
    Windows1252,
}

impl FallbackEncoding {
    fn encoding(self) -> &'static encoding_rs::Encoding {
        match self {
            FallbackEncoding::Windows1256 => encoding_rs::WINDOWS_1256,
            FallbackEncoding::Windows1252 => encoding_rs::WINDOWS_1252,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOptions {
    #[serde(default)]
    pub format: SubtitleFormat,
    #[serde(default)]
    pub fallback_encoding: Option<FallbackEncoding>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// 1-based line number in the decoded text.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Parsed {
    pub document: SubtitleDocument,
    pub diagnostics: Vec<Diagnostic>,
    /// Blocks that had a valid header but no text.
    pub empty_blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("input is not valid UTF-8 (first bad byte at offset {offset})")]
    Encoding { offset: usize },
}

const UTF8_BOM: &[u8] = b"\xEF\xBB\xBF";

fn decode(bytes: &[u8], fallback: Option<FallbackEncoding>) -> Result<String, FormatError> {
    let (body, bom_len) = match bytes.strip_prefix(UTF8_BOM) {
        Some(rest) => (rest, UTF8_BOM.len()),
        None => (bytes, 0),
    };
    match std::str::from_utf8(body) {
        Ok(text) => Ok(text.to_owned()),
        Err(err) => match fallback {
            Some(enc) => {
                let (text, _) = enc.encoding().decode_without_bom_handling(body);
                Ok(text.into_owned())
            }
            None => Err(FormatError::Encoding {
                offset: bom_len + err.valid_up_to(),
            }),
        },
    }
}

/// Parses subtitle bytes with default options (UTF-8 only).
pub fn parse_srt(
    bytes: &[u8],
    language: LangCode,
    video_id: &str,
) -> Result<Parsed, FormatError> {
    parse(bytes, language, video_id, &ParseOptions::default())
}

pub fn parse(
    bytes: &[u8],
    language: LangCode,
    video_id: &str,
    options: &ParseOptions,
) -> Result<Parsed, FormatError> {
    let text = decode(bytes, options.fallback_encoding)?;
    match options.format {
        SubtitleFormat::Srt => Ok(parse_srt_text(&text, language, video_id)),
    }
}

fn is_blank(line: &str) -> bool {
    line.trim().is_empty()
}

fn parse_ordinal(line: &str) -> Option<u32> {
    let line = line.trim();
    if line.is_empty() || !line.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    line.parse().ok()
}

/// `true` when `lines[i]` looks like the first line of a new block.
fn starts_block(lines: &[&str], i: usize) -> bool {
    parse_ordinal(lines[i]).is_some()
        && lines.get(i + 1).is_some_and(|next| parse_timing(next).is_ok())
}

fn parse_srt_text(text: &str, language: LangCode, video_id: &str) -> Parsed {
    let lines: Vec<&str> = text
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .collect();
    let mut diagnostics = Vec::new();
    let mut cues = Vec::new();
    let mut empty_blocks = 0;
    let mut diag = |line: usize, message: String| diagnostics.push(Diagnostic { line: line + 1, message });

    let skip_block = |i: &mut usize| {
        *i += 1;
        while *i < lines.len() && !is_blank(lines[*i]) && !starts_block(&lines, *i) {
            *i += 1;
        }
    };

    let mut i = 0;
    while i < lines.len() {
        if is_blank(lines[i]) {
            i += 1;
            continue;
        }
        let header = i;
        let index = match parse_ordinal(lines[i]) {
            Some(n) if n > 0 => n,
            Some(_) => {
                diag(i, "block ordinal must be positive".into());
                skip_block(&mut i);
                continue;
            }
            None => {
                diag(i, format!("expected block ordinal, found {:?}", truncate(lines[i])));
                skip_block(&mut i);
                continue;
            }
        };
        i += 1;
        if i >= lines.len() || is_blank(lines[i]) {
            diag(header, "block has no timing line".into());
            continue;
        }
        let (start_ms, end_ms) = match parse_timing(lines[i]) {
            Ok(t) => t,
            Err(msg) => {
                diag(i, msg);
                skip_block(&mut i);
                continue;
            }
        };
        let timing_line = i;
        i += 1;
        let mut body: Vec<&str> = Vec::new();
        while i < lines.len() && !is_blank(lines[i]) && !starts_block(&lines, i) {
            body.push(lines[i]);
            i += 1;
        }
        if body.is_empty() {
            empty_blocks += 1;
            continue;
        }
        if start_ms > end_ms {
            diag(timing_line, "cue ends before it starts".into());
            continue;
        }
        cues.push(Cue::new(index, start_ms, end_ms, body.join("\n")));
    }

    Parsed {
        document: SubtitleDocument::new(language, video_id, cues),
        diagnostics,
        empty_blocks,
    }
}

fn truncate(line: &str) -> String {
    line.chars().take(40).collect()
}

fn parse_timing(line: &str) -> Result<(u64, u64), String> {
    let (left, right) = line
        .split_once("-->")
        .ok_or_else(|| format!("expected timing line, found {:?}", truncate(line)))?;
    let start = parse_timestamp(left.trim())?;
    // Anything after the end timestamp (position hints) is ignored.
    let end_field = right.split_whitespace().next().unwrap_or("");
    let end = parse_timestamp(end_field)?;
    Ok((start, end))
}

/// `H+:MM:SS,mmm`, also accepting `.` before the milliseconds.
fn parse_timestamp(field: &str) -> Result<u64, String> {
    let bad = || format!("malformed timestamp {:?}", truncate(field));
    let (hms, millis) = field.split_once([',', '.']).ok_or_else(bad)?;
    let mut parts = hms.split(':');
    let (Some(h), Some(m), Some(s), None) = (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return Err(bad());
    };
    let digits = |s: &str, min: usize, max: usize| {
        (min..=max).contains(&s.len()) && s.bytes().all(|b| b.is_ascii_digit())
    };
    if !digits(h, 1, 12) || !digits(m, 1, 2) || !digits(s, 1, 2) || !digits(millis, 1, 3) {
        return Err(bad());
    }
    let hours: u64 = h.parse().map_err(|_| bad())?;
    let minutes: u64 = m.parse().map_err(|_| bad())?;
    let seconds: u64 = s.parse().map_err(|_| bad())?;
    // "5" after the separator means 500 ms.
    let millis: u64 = format!("{millis:0<3}").parse().map_err(|_| bad())?;
    if minutes >= 60 || seconds >= 60 {
        return Err(bad());
    }
    hours
        .checked_mul(3_600_000)
        .and_then(|t| t.checked_add(minutes * 60_000 + seconds * 1000 + millis))
        .ok_or_else(bad)
}

fn write_timestamp(out: &mut String, ms: u64) {
    let hours = ms / 3_600_000;
    let minutes = ms / 60_000 % 60;
    let seconds = ms / 1000 % 60;
    let millis = ms % 1000;
    let _ = write!(out, "{hours:02}:{minutes:02}:{seconds:02},{millis:03}");
}

/// Canonical SubRip bytes: blocks renumbered from 1, LF endings, one blank
/// line after every block.
pub fn serialize_srt(doc: &SubtitleDocument) -> Vec<u8> {
    let mut out = String::new();
    for (n, cue) in doc.cues.iter().enumerate() {
        let _ = writeln!(out, "{}", n + 1);
        write_timestamp(&mut out, cue.start_ms);
        out.push_str(" --> ");
        write_timestamp(&mut out, cue.end_ms);
        out.push('\n');
        out.push_str(&cue.text);
        out.push_str("\n\n");
    }
    out.into_bytes()
}

#[derive(Debug, Clone)]
pub struct Shifted {
    pub document: SubtitleDocument,
    /// Cues whose start would have gone below zero.
    pub clamped: usize,
}

/// Adds `delta_ms` to every cue time, clamping at zero.
pub fn shift_document(doc: &SubtitleDocument, delta_ms: i64) -> Shifted {
    let mut clamped = 0;
    let cues = doc
        .cues
        .iter()
        .map(|cue| {
            let start = cue.start_ms as i64 + delta_ms;
            if start < 0 {
                clamped += 1;
            }
            Cue {
                start_ms: start.max(0) as u64,
                end_ms: (cue.end_ms as i64 + delta_ms).max(0) as u64,
                ..cue.clone()
            }
        })
        .collect();
    Shifted {
        document: SubtitleDocument::new(doc.language.clone(), doc.video_id.clone(), cues),
        clamped,
    }
}
