//! Line-aligned corpus files and pipeline statistics.

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::NamedTempFile;

use crate::catalog::FilterStage;
use crate::sentence::SentencePair;
use crate::store::{Stage, Store, StoreError};

fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn has_content(text: &str) -> bool {
    text.chars().any(char::is_alphanumeric)
}

/// Last cleaning pass before emission. Returns `None` when either side is
/// empty or has no letter or digit in any script; both sides are dropped
/// together.
pub fn final_clean(pair: &SentencePair) -> Option<SentencePair> {
    let source_text = normalize(&pair.source_text);
    let target_text = normalize(&pair.target_text);
    if !has_content(&source_text) || !has_content(&target_text) {
        return None;
    }
    Some(SentencePair {
        source_text,
        target_text,
        ..pair.clone()
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EmitOptions {
    /// Drop exact repeats of an already emitted (source, target) pair.
    pub dedup: bool,
}

/// Applies [`final_clean`] and optional dedup to a pair stream, yielding the
/// lines to emit and counting what was dropped.
#[derive(Debug)]
pub struct FinalPass {
    options: EmitOptions,
    seen: HashSet<(String, String)>,
    pub input: usize,
    pub dropped: usize,
}

impl FinalPass {
    pub fn new(options: EmitOptions) -> Self {
        FinalPass {
            options,
            seen: HashSet::new(),
            input: 0,
            dropped: 0,
        }
    }

    pub fn accept(&mut self, pair: &SentencePair) -> Option<SentencePair> {
        self.input += 1;
        let kept = final_clean(pair).filter(|p| {
            !self.options.dedup || self.seen.insert((p.source_text.clone(), p.target_text.clone()))
        });
        if kept.is_none() {
            self.dropped += 1;
        }
        kept
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot write corpus file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EmitCounts {
    pub sentence_pairs: usize,
    pub emitted_lines: usize,
    pub dropped: usize,
}

struct Output {
    path: PathBuf,
    tmp: NamedTempFile,
}

impl Output {
    fn create(path: &Path) -> Result<Output, CorpusError> {
        let io = |source| CorpusError::Io {
            path: path.to_owned(),
            source,
        };
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        let tmp = NamedTempFile::new_in(dir).map_err(io)?;
        Ok(Output {
            path: path.to_owned(),
            tmp,
        })
    }
}

/// Writes `pairs` as two line-aligned UTF-8 files. Both files appear only if
/// everything was written; on error neither is left behind.
pub fn emit_corpus(
    pairs: impl IntoIterator<Item = SentencePair>,
    out_src: &Path,
    out_dst: &Path,
    options: EmitOptions,
) -> Result<EmitCounts, CorpusError> {
    emit_corpus_fallible(pairs.into_iter().map(Ok::<_, CorpusError>), out_src, out_dst, options)
}

/// [`emit_corpus`] over a stream that can fail part-way, like a store scan.
pub fn emit_corpus_fallible<E>(
    pairs: impl IntoIterator<Item = Result<SentencePair, E>>,
    out_src: &Path,
    out_dst: &Path,
    options: EmitOptions,
) -> Result<EmitCounts, CorpusError>
where
    CorpusError: From<E>,
{
    let src = Output::create(out_src)?;
    let dst = Output::create(out_dst)?;
    let mut pass = FinalPass::new(options);
    let mut emitted = 0;
    {
        let mut ws = BufWriter::new(src.tmp.as_file());
        let mut wd = BufWriter::new(dst.tmp.as_file());
        let err = |o: &Output| {
            let path = o.path.clone();
            move |source| CorpusError::Io { path, source }
        };
        for pair in pairs {
            let Some(pair) = pass.accept(&pair?) else {
                continue;
            };
            writeln!(ws, "{}", pair.source_text).map_err(err(&src))?;
            writeln!(wd, "{}", pair.target_text).map_err(err(&dst))?;
            emitted += 1;
        }
        ws.flush().map_err(err(&src))?;
        wd.flush().map_err(err(&dst))?;
    }
    for o in [src, dst] {
        let Output { path, tmp } = o;
        tmp.persist(&path).map_err(|e| CorpusError::Io {
            path: path.clone(),
            source: e.error,
        })?;
    }
    Ok(EmitCounts {
        sentence_pairs: pass.input,
        emitted_lines: emitted,
        dropped: pass.dropped,
    })
}

/// An exact ratio of two counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn value(&self) -> Option<f64> {
        (self.den != 0).then(|| self.num as f64 / self.den as f64)
    }

    /// Rounded half up to two decimals, e.g. `1190.91`.
    pub fn fixed2(&self) -> Option<String> {
        if self.den == 0 {
            return None;
        }
        let (n, d) = (self.num as u128, self.den as u128);
        let hundredths = (n * 200 + d) / (2 * d);
        Some(format!("{}.{:02}", hundredths / 100, hundredths % 100))
    }

    /// Truncated to three significant digits, e.g. `1190` or `1.05`.
    pub fn approx(&self) -> Option<String> {
        if self.den == 0 {
            return None;
        }
        let (n, d) = (self.num as u128, self.den as u128);
        let whole = n / d;
        if whole >= 100 {
            let digits = whole.to_string().len() as u32;
            let unit = 10u128.pow(digits - 3);
            return Some((whole / unit * unit).to_string());
        }
        if n == 0 {
            return Some("0".into());
        }
        let mut decimals = 0u32;
        while n * 10u128.pow(decimals) / d < 100 {
            decimals += 1;
        }
        let scaled = n * 10u128.pow(decimals) / d;
        let unit = 10u128.pow(decimals);
        Some(format!(
            "{}.{:0width$}",
            scaled / unit,
            scaled % unit,
            width = decimals as usize
        ))
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.approx() {
            Some(a) => write!(f, "{}/{}≃{}", self.num, self.den, a),
            None => write!(f, "{}/{} undefined", self.num, self.den),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub movies_considered: u64,
    pub subtitle_pairs_found: u64,
    pub dialogues_count: u64,
    pub sentence_pairs_count: u64,
    pub emitted_lines: u64,
    pub dropped_in_final_clean: u64,
}

impl CorpusStats {
    pub fn dialogues_per_movie(&self) -> Ratio {
        Ratio {
            num: self.dialogues_count,
            den: self.subtitle_pairs_found,
        }
    }

    pub fn sentences_per_movie(&self) -> Ratio {
        Ratio {
            num: self.sentence_pairs_count,
            den: self.subtitle_pairs_found,
        }
    }

    pub fn sentences_per_dialogue(&self) -> Ratio {
        Ratio {
            num: self.sentence_pairs_count,
            den: self.dialogues_count,
        }
    }
}

/// Counts every stage of `store`. Emitted and dropped lines are recomputed
/// by running the final pass over the sentence stage.
pub fn compute_stats(store: &Store, options: EmitOptions) -> Result<CorpusStats, StoreError> {
    let mut pass = FinalPass::new(options);
    let mut emitted = 0u64;
    for rec in store.scan::<SentencePair>()? {
        if pass.accept(&rec?.payload).is_some() {
            emitted += 1;
        }
    }
    Ok(CorpusStats {
        movies_considered: crate::pipeline::searched_videos(store)?,
        subtitle_pairs_found: store.count(Stage::SubtitlePair)? as u64,
        dialogues_count: store.count(Stage::Dialogue)? as u64,
        sentence_pairs_count: pass.input as u64,
        emitted_lines: emitted,
        dropped_in_final_clean: pass.dropped as u64,
    })
}

/// Machine-readable statistics document.
#[derive(Debug, Clone, Serialize)]
pub struct StatsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter: Option<Vec<FilterStage>>,
    #[serde(flatten)]
    pub counts: CorpusStats,
    pub dialogues_per_movie: Option<String>,
    pub sentences_per_movie: Option<String>,
    pub sentences_per_dialogue: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fetch_seconds: Option<u64>,
}

impl StatsReport {
    pub fn new(counts: CorpusStats, filter: Option<Vec<FilterStage>>, fetch_seconds: Option<u64>) -> Self {
        StatsReport {
            filter,
            counts,
            dialogues_per_movie: counts.dialogues_per_movie().fixed2(),
            sentences_per_movie: counts.sentences_per_movie().fixed2(),
            sentences_per_dialogue: counts.sentences_per_dialogue().fixed2(),
            fetch_seconds,
        }
    }

    /// Plain-text tables, one section per stage.
    pub fn render_table(&self) -> String {
        let c = &self.counts;
        let mut sections: Vec<(&str, Vec<(String, String)>)> = Vec::new();
        if let Some(filter) = &self.filter {
            sections.push((
                "Number of Filtered Movies",
                filter.iter().map(|s| (s.label.clone(), s.count.to_string())).collect(),
            ));
        }
        let mut pairs = vec![("subtitle pairs count".to_owned(), c.subtitle_pairs_found.to_string())];
        if c.movies_considered > 0 {
            pairs.push(("videos searched".into(), c.movies_considered.to_string()));
        }
        if let Some(secs) = self.fetch_seconds {
            pairs.push(("time spent".into(), format!("{secs} s")));
        }
        sections.push(("Found Subtitle Pairs Stat", pairs));
        sections.push((
            "Found Dialogues Stat",
            vec![
                ("Synchronous Dialogues count".into(), c.dialogues_count.to_string()),
                ("avg dialogues count per movie".into(), c.dialogues_per_movie().to_string()),
            ],
        ));
        sections.push((
            "Found Sentences Stat",
            vec![
                ("sentence pairs count".into(), c.sentence_pairs_count.to_string()),
                ("Avg sentence pair per movie".into(), c.sentences_per_movie().to_string()),
                ("Number of sentences per dialogue".into(), c.sentences_per_dialogue().to_string()),
                ("dropped in final cleaning".into(), c.dropped_in_final_clean.to_string()),
                ("emitted lines".into(), c.emitted_lines.to_string()),
            ],
        ));

        render_sections(&sections)
    }
}

/// The "Number of Filtered Movies" table on its own.
pub fn render_filter_table(stages: &[FilterStage]) -> String {
    let rows = stages.iter().map(|s| (s.label.clone(), s.count.to_string())).collect();
    render_sections(&[("Number of Filtered Movies", rows)])
}

fn render_sections(sections: &[(&str, Vec<(String, String)>)]) -> String {
    let width = sections
        .iter()
        .flat_map(|(_, rows)| rows.iter().map(|(l, v)| l.chars().count() + v.chars().count()))
        .max()
        .unwrap_or(0)
        + 4;
    let mut out = String::new();
    for (title, rows) in sections {
        let _ = writeln!(out, "{title}");
        let _ = writeln!(out, "{}", "-".repeat(width));
        for (label, value) in rows {
            let pad = width - label.chars().count() - value.chars().count();
            let _ = writeln!(out, "{label}{}{value}", " ".repeat(pad));
        }
        out.push('\n');
    }
    out
}
