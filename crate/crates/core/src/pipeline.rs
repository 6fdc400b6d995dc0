//! Stage drivers: each reads its input stage from the [`Store`] and writes
//! its output stage, so every step can run on its own and be repeated.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{apply_filter, filter_report, load_catalog, CatalogError, ColumnMapping, FilterSpec, FilterStage, MovieRecord};
use crate::corpus::{compute_stats, emit_corpus_fallible, CorpusError, EmitCounts, EmitOptions, StatsReport};
use crate::dialogue::{pair_dialogues, Cleaner, DialoguePair};
use crate::lang::LangCode;
use crate::provider::{find_synchronized_pair, SearchOptions, SubtitleProvider};
use crate::sentence::{match_sentences, SentencePair, SplitPolicy};
use crate::store::{Payload, Store, StoreError};
use crate::subtitle::SubtitleDocument;
use crate::sync::{match_cues, SyncPolicy};

impl Payload for MovieRecord {
    const FILE: &'static str = "catalog";
}

impl Payload for DialoguePair {
    const FILE: &'static str = "dialogue";
}

impl Payload for SentencePair {
    const FILE: &'static str = "sentence";
}

/// A synchronized subtitle pair found for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtitlePairRecord {
    pub video_id: String,
    pub source_candidate: String,
    pub target_candidate: String,
    pub matched_count: usize,
    pub match_fraction: f64,
    /// Already applied to `target`.
    pub applied_shift_ms: i64,
    pub source: SubtitleDocument,
    pub target: SubtitleDocument,
}

impl Payload for SubtitlePairRecord {
    const FILE: &'static str = "subtitle_pair";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FetchOutcome {
    Found,
    NotFound,
    /// Provider error. Retried on the next fetch run.
    Failed,
}

/// Resume marker written once per attempted video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchMarker {
    pub video_id: String,
    pub outcome: FetchOutcome,
    pub elapsed_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl FetchMarker {
    pub const FILE_NAME: &'static str = "fetch_progress";
}

impl Payload for FetchMarker {
    const FILE: &'static str = FetchMarker::FILE_NAME;
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct InitSummary {
    pub records: usize,
    pub skipped: usize,
}

/// Loads the catalog into the catalog stage, replacing earlier contents.
pub fn init_catalog(
    store: &Store,
    catalog: &Path,
    mapping: &ColumnMapping,
    run_id: &str,
) -> Result<InitSummary, PipelineError> {
    let loaded = load_catalog(catalog, mapping)?;
    let _lock = store.lock()?;
    let mut writer = store.replace::<MovieRecord>(run_id)?;
    for record in &loaded.records {
        writer.append(record)?;
    }
    writer.finish()?;
    Ok(InitSummary {
        records: loaded.records.len(),
        skipped: loaded.skipped,
    })
}

/// Reads the catalog stage and applies `spec`. Returns the admitted movies
/// and the per-bound report.
pub fn filtered_movies(store: &Store, spec: &FilterSpec) -> Result<(Vec<MovieRecord>, Vec<FilterStage>), StoreError> {
    let records = store
        .scan::<MovieRecord>()?
        .map(|r| r.map(|r| r.payload))
        .collect::<Result<Vec<_>, _>>()?;
    let report = filter_report(&records, spec);
    Ok((apply_filter(&records, spec), report))
}

#[derive(Debug, Clone)]
pub struct FetchOptions {
    pub jobs: usize,
    /// Stop after this many newly attempted videos.
    pub limit: Option<usize>,
    pub search: SearchOptions,
}

impl Default for FetchOptions {
    fn default() -> Self {
        FetchOptions {
            jobs: 4,
            limit: None,
            search: SearchOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FetchSummary {
    /// Videos admitted by the filter.
    pub videos: usize,
    /// Skipped because an earlier run already settled them.
    pub resumed: usize,
    pub attempted: usize,
    pub found: usize,
    pub not_found: usize,
    pub failed: usize,
    /// Pairs in the store after this run.
    pub pairs_total: usize,
}

/// Video ids that need no further fetching.
fn settled_videos(store: &Store) -> Result<HashSet<String>, StoreError> {
    let mut done = HashSet::new();
    for rec in store.scan::<FetchMarker>()? {
        let marker = rec?.payload;
        if marker.outcome != FetchOutcome::Failed {
            done.insert(marker.video_id);
        }
    }
    for rec in store.scan::<SubtitlePairRecord>()? {
        done.insert(rec?.payload.video_id);
    }
    Ok(done)
}

/// Distinct videos with at least one fetch attempt.
pub(crate) fn searched_videos(store: &Store) -> Result<u64, StoreError> {
    let mut seen = HashSet::new();
    for rec in store.scan::<FetchMarker>()? {
        seen.insert(rec?.payload.video_id);
    }
    Ok(seen.len() as u64)
}

/// Total time spent searching, summed over the last attempt of each video.
pub fn fetch_seconds(store: &Store) -> Result<Option<u64>, StoreError> {
    let mut last = BTreeMap::new();
    for rec in store.scan::<FetchMarker>()? {
        let marker = rec?.payload;
        last.insert(marker.video_id, marker.elapsed_ms);
    }
    Ok((!last.is_empty()).then(|| last.values().sum::<u64>() / 1000))
}

enum Fetched {
    Pair(Box<SubtitlePairRecord>, u64),
    Missing(String, u64),
    Failed(String, u64, String),
}

/// Searches a synchronized pair for every movie not settled by an earlier run.
///
/// Workers run on a pool of `jobs` threads; the calling thread owns the
/// writers, so records become durable one by one and an interrupted run can
/// resume where it stopped. Provider failures are recorded per video and do
/// not stop the batch.
#[allow(clippy::too_many_arguments)]
pub fn fetch_pairs(
    store: &Store,
    movies: &[MovieRecord],
    source_lang: &LangCode,
    target_lang: &LangCode,
    provider: &dyn SubtitleProvider,
    policy: &SyncPolicy,
    options: &FetchOptions,
    run_id: &str,
) -> Result<FetchSummary, PipelineError> {
    let _lock = store.lock()?;
    let done = settled_videos(store)?;
    let mut pending: Vec<&MovieRecord> = movies.iter().filter(|m| !done.contains(&m.id)).collect();
    let mut summary = FetchSummary {
        videos: movies.len(),
        resumed: movies.len() - pending.len(),
        ..FetchSummary::default()
    };
    if let Some(limit) = options.limit {
        pending.truncate(limit);
    }

    let mut pairs = store.append::<SubtitlePairRecord>(run_id)?.with_batch_size(1);
    let mut markers = store.append::<FetchMarker>(run_id)?.with_batch_size(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs.max(1))
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;

    let (tx, rx) = mpsc::channel();
    let result = std::thread::scope(|scope| {
        scope.spawn(|| {
            pool.install(|| {
                pending.par_iter().for_each_with(tx, |tx, movie| {
                    let started = Instant::now();
                    let found = find_synchronized_pair(movie, source_lang, target_lang, provider, policy, &options.search);
                    let elapsed = started.elapsed().as_millis() as u64;
                    let msg = match found {
                        Ok(Some(pair)) => Fetched::Pair(
                            Box::new(SubtitlePairRecord {
                                video_id: movie.id.clone(),
                                source_candidate: pair.source_candidate.provider_id,
                                target_candidate: pair.target_candidate.provider_id,
                                matched_count: pair.verdict.matched_count,
                                match_fraction: pair.verdict.match_fraction,
                                applied_shift_ms: pair.verdict.applied_shift_ms,
                                source: pair.source,
                                target: pair.target,
                            }),
                            elapsed,
                        ),
                        Ok(None) => Fetched::Missing(movie.id.clone(), elapsed),
                        Err(e) => Fetched::Failed(movie.id.clone(), elapsed, e.to_string()),
                    };
                    // The receiver only hangs up after a store error.
                    let _ = tx.send(msg);
                })
            })
        });

        for msg in rx {
            summary.attempted += 1;
            let marker = match msg {
                Fetched::Pair(record, elapsed_ms) => {
                    pairs.append(&record)?;
                    summary.found += 1;
                    log::info!("{}: pair found (shift {} ms)", record.video_id, record.applied_shift_ms);
                    FetchMarker { video_id: record.video_id, outcome: FetchOutcome::Found, elapsed_ms, error: None }
                }
                Fetched::Missing(video_id, elapsed_ms) => {
                    summary.not_found += 1;
                    log::info!("{video_id}: no synchronized pair");
                    FetchMarker { video_id, outcome: FetchOutcome::NotFound, elapsed_ms, error: None }
                }
                Fetched::Failed(video_id, elapsed_ms, error) => {
                    summary.failed += 1;
                    log::warn!("{video_id}: {error}");
                    FetchMarker { video_id, outcome: FetchOutcome::Failed, elapsed_ms, error: Some(error) }
                }
            };
            markers.append(&marker)?;
        }
        Ok::<_, StoreError>(())
    });
    result?;
    pairs.finish()?;
    markers.finish()?;
    summary.pairs_total = store.count_file(SubtitlePairRecord::FILE)?;
    Ok(summary)
}

/// Builds the dialogue stage from the stored subtitle pairs, in video id order.
pub fn build_dialogues(
    store: &Store,
    cleaner: &Cleaner,
    tolerance_ms: u64,
    run_id: &str,
) -> Result<usize, PipelineError> {
    let _lock = store.lock()?;
    let mut by_video = BTreeMap::new();
    for rec in store.scan::<SubtitlePairRecord>()? {
        let rec = rec?.payload;
        by_video.entry(rec.video_id.clone()).or_insert(rec);
    }
    let mut writer = store.replace::<DialoguePair>(run_id)?;
    let mut count = 0;
    for pair in by_video.values() {
        let matching = match_cues(&pair.source, &pair.target, tolerance_ms);
        for dialogue in pair_dialogues(&pair.source, &pair.target, &matching, cleaner) {
            writer.append(&dialogue)?;
            count += 1;
        }
    }
    writer.finish()?;
    Ok(count)
}

/// Builds the sentence stage from the dialogue stage.
pub fn build_sentences(store: &Store, policy: &SplitPolicy, run_id: &str) -> Result<usize, PipelineError> {
    let _lock = store.lock()?;
    let mut writer = store.replace::<SentencePair>(run_id)?;
    let mut count = 0;
    for rec in store.scan::<DialoguePair>()? {
        for pair in match_sentences(&rec?.payload, policy) {
            writer.append(&pair)?;
            count += 1;
        }
    }
    writer.finish()?;
    Ok(count)
}

#[derive(Debug, Clone)]
pub struct CorpusOutput {
    pub dir: PathBuf,
    pub prefix: String,
}

impl CorpusOutput {
    pub fn paths(&self, source: &LangCode, target: &LangCode) -> (PathBuf, PathBuf) {
        (
            self.dir.join(format!("{}.{}", self.prefix, source)),
            self.dir.join(format!("{}.{}", self.prefix, target)),
        )
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub counts: EmitCounts,
    pub report: StatsReport,
    pub files: Vec<PathBuf>,
}

/// Writes the corpus files plus `stats.json` and `stats.txt` next to them.
pub fn generate(
    store: &Store,
    source_lang: &LangCode,
    target_lang: &LangCode,
    output: &CorpusOutput,
    options: EmitOptions,
    filter: Option<Vec<FilterStage>>,
) -> Result<Generated, PipelineError> {
    std::fs::create_dir_all(&output.dir).map_err(|source| PipelineError::Io { path: output.dir.clone(), source })?;
    let (out_src, out_dst) = output.paths(source_lang, target_lang);
    let pairs = store.scan::<SentencePair>()?.map(|r| r.map(|r| r.payload).map_err(CorpusError::from));
    let counts = emit_corpus_fallible(pairs, &out_src, &out_dst, options)?;
    let report = stats_report(store, options, filter)?;

    let json_path = output.dir.join("stats.json");
    let text_path = output.dir.join("stats.txt");
    let json = serde_json::to_string_pretty(&report).expect("stats serialize") + "\n";
    for (path, body) in [(&json_path, json), (&text_path, report.render_table())] {
        std::fs::write(path, body).map_err(|source| PipelineError::Io { path: path.clone(), source })?;
    }
    Ok(Generated {
        counts,
        report,
        files: vec![out_src, out_dst, json_path, text_path],
    })
}

pub fn stats_report(
    store: &Store,
    options: EmitOptions,
    filter: Option<Vec<FilterStage>>,
) -> Result<StatsReport, StoreError> {
    let counts = compute_stats(store, options)?;
    Ok(StatsReport::new(counts, filter, fetch_seconds(store)?))
}
