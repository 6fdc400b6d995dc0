//! Subtitle sources and the search for a synchronized subtitle pair.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::catalog::MovieRecord;
use crate::lang::LangCode;
use crate::subtitle::{parse, shift_document, ParseOptions, SubtitleDocument};
use crate::sync::{check_sync, recover_shift, SyncPolicy, SyncVerdict};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtitleCandidate {
    pub provider_id: String,
    pub video_id: String,
    pub language: LangCode,
    pub release_label: String,
    pub byte_size: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{url} answered HTTP {status}")]
    Http { url: String, status: u16 },
    #[error("request to {url} failed: {message}")]
    Network { url: String, message: String },
    #[error("still rate limited by {url} after {waits} waits")]
    RateLimited { url: String, waits: u32 },
    #[error("unexpected response from {url}: {message}")]
    Decode { url: String, message: String },
    #[error("invalid provider configuration: {0}")]
    Config(String),
}

/// A source of subtitle files for `(video, language)` queries.
pub trait SubtitleProvider: Send + Sync {
    fn name(&self) -> &str;

    /// Candidates in the provider's own preference order.
    fn list_candidates(
        &self,
        video: &MovieRecord,
        language: &LangCode,
    ) -> Result<Vec<SubtitleCandidate>, ProviderError>;

    fn fetch(&self, candidate: &SubtitleCandidate) -> Result<Vec<u8>, ProviderError>;
}

/// Reads `<root>/<video_id>/<language>/*.srt`, ordered by file name.
#[derive(Debug, Clone)]
pub struct LocalProvider {
    root: PathBuf,
}

impl LocalProvider {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        LocalProvider { root: root.into() }
    }
}

impl SubtitleProvider for LocalProvider {
    fn name(&self) -> &str {
        "local"
    }

    fn list_candidates(
        &self,
        video: &MovieRecord,
        language: &LangCode,
    ) -> Result<Vec<SubtitleCandidate>, ProviderError> {
        let dir = self.root.join(&video.id).join(language.as_str());
        let entries = match std::fs::read_dir(&dir) {
            Ok(entries) => entries,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(source) => return Err(ProviderError::Io { path: dir, source }),
        };
        let mut candidates = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|source| ProviderError::Io { path: dir.clone(), source })?;
            let path = entry.path();
            if !path.is_file() || path.extension().is_none_or(|e| !e.eq_ignore_ascii_case("srt")) {
                continue;
            }
            let file_name = entry.file_name().to_string_lossy().into_owned();
            let byte_size = entry.metadata().map(|m| m.len()).unwrap_or(0);
            candidates.push(SubtitleCandidate {
                provider_id: format!("{}/{}/{}", video.id, language, file_name),
                video_id: video.id.clone(),
                language: language.clone(),
                release_label: path.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
                byte_size,
            });
        }
        candidates.sort_by(|a, b| a.provider_id.cmp(&b.provider_id));
        Ok(candidates)
    }

    fn fetch(&self, candidate: &SubtitleCandidate) -> Result<Vec<u8>, ProviderError> {
        let path = self.root.join(&candidate.provider_id);
        std::fs::read(&path).map_err(|source| ProviderError::Io { path, source })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Total tries for failing (5xx or network) requests.
    pub attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    /// How many 429 answers to wait out before giving up.
    pub max_rate_limit_waits: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
            max_rate_limit_waits: 5,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Token bucket holding at most `burst` requests, refilled at `per_minute`.
#[derive(Debug)]
struct TokenBucket {
    tokens: f64,
    burst: f64,
    per_sec: f64,
    last: Instant,
}

impl TokenBucket {
    fn new(per_minute: u32, burst: u32) -> Self {
        let burst = burst.max(1) as f64;
        TokenBucket {
            tokens: burst,
            burst,
            per_sec: per_minute as f64 / 60.0,
            last: Instant::now(),
        }
    }

    /// Reserves one token and returns how long to wait before using it.
    fn reserve(&mut self) -> Duration {
        if self.per_sec <= 0.0 {
            return Duration::ZERO;
        }
        let now = Instant::now();
        let elapsed = now.duration_since(self.last).as_secs_f64();
        self.last = now;
        self.tokens = (self.tokens + elapsed * self.per_sec).min(self.burst) - 1.0;
        if self.tokens >= 0.0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(-self.tokens / self.per_sec)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub base_url: String,
    /// Sent as a bearer token when present.
    #[serde(skip)]
    pub credentials: Option<String>,
    /// Zero disables rate limiting.
    pub rate_per_minute: u32,
    #[serde(default = "default_burst")]
    pub burst: u32,
    pub cache_root: PathBuf,
    #[serde(default = "default_remote_name")]
    pub name: String,
}

fn default_burst() -> u32 {
    1
}

fn default_remote_name() -> String {
    "remote".into()
}

#[derive(Debug, Deserialize)]
struct SearchHit {
    id: String,
    #[serde(default)]
    release: String,
    #[serde(default)]
    size: u64,
}

/// Generic REST subtitle API:
///
/// * `GET <base>/search?title=..&year=..&lang=..` answers a JSON array of
///   `{"id", "release", "size"}` objects;
/// * `GET <base>/download/<id>` answers the subtitle bytes.
///
/// Both answers are cached under `<cache_root>/<name>/`, so a repeated run
/// does not touch the network.
pub struct RemoteProvider {
    config: RemoteConfig,
    base: url::Url,
    client: reqwest::blocking::Client,
    bucket: Mutex<TokenBucket>,
    retry: RetryPolicy,
    requests: AtomicUsize,
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig) -> Result<Self, ProviderError> {
        let mut base = url::Url::parse(&config.base_url)
            .map_err(|e| ProviderError::Config(format!("base_url {:?}: {e}", config.base_url)))?;
        if base.cannot_be_a_base() {
            return Err(ProviderError::Config(format!("base_url {:?} cannot be a base", config.base_url)));
        }
        if !base.path().ends_with('/') {
            base.set_path(&format!("{}/", base.path()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(RemoteProvider {
            bucket: Mutex::new(TokenBucket::new(config.rate_per_minute, config.burst)),
            config,
            base,
            client,
            retry: RetryPolicy::default(),
            requests: AtomicUsize::new(0),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// HTTP requests sent so far, retries included.
    pub fn requests_sent(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }

    fn cache_dir(&self) -> PathBuf {
        self.config.cache_root.join(&self.config.name)
    }

    fn download_cache_path(&self, id: &str) -> PathBuf {
        let safe: String = id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
            .collect();
        self.cache_dir().join(format!("{safe}.srt"))
    }

    fn wait_for_token(&self) {
        let wait = self.bucket.lock().expect("rate limiter poisoned").reserve();
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }

    fn get(&self, url: url::Url) -> Result<Vec<u8>, ProviderError> {
        let mut failures = 0;
        let mut waits = 0;
        loop {
            self.wait_for_token();
            self.requests.fetch_add(1, Ordering::Relaxed);
            let mut request = self.client.get(url.clone());
            if let Some(token) = &self.config.credentials {
                request = request.bearer_auth(token);
            }
            let outcome = request.send();
            let pause = match outcome {
                Ok(resp) if resp.status().is_success() => {
                    return resp.bytes().map(|b| b.to_vec()).map_err(|e| ProviderError::Network {
                        url: url.to_string(),
                        message: e.to_string(),
                    });
                }
                Ok(resp) if resp.status().as_u16() == 429 => {
                    waits += 1;
                    if waits > self.retry.max_rate_limit_waits {
                        return Err(ProviderError::RateLimited { url: url.to_string(), waits });
                    }
                    let retry_after = resp
                        .headers()
                        .get(reqwest::header::RETRY_AFTER)
                        .and_then(|v| v.to_str().ok())
                        .and_then(|v| v.trim().parse::<u64>().ok())
                        .map(Duration::from_secs);
                    retry_after.unwrap_or_else(|| self.retry.delay(waits)).min(self.retry.max_delay)
                }
                Ok(resp) if resp.status().is_server_error() => {
                    failures += 1;
                    if failures >= self.retry.attempts {
                        return Err(ProviderError::Http {
                            url: url.to_string(),
                            status: resp.status().as_u16(),
                        });
                    }
                    self.retry.delay(failures)
                }
                Ok(resp) => {
                    return Err(ProviderError::Http {
                        url: url.to_string(),
                        status: resp.status().as_u16(),
                    });
                }
                Err(e) => {
                    failures += 1;
                    if failures >= self.retry.attempts {
                        return Err(ProviderError::Network {
                            url: url.to_string(),
                            message: e.to_string(),
                        });
                    }
                    self.retry.delay(failures)
                }
            };
            log::debug!("retrying {url} in {pause:?}");
            std::thread::sleep(pause);
        }
    }

    fn cached(&self, path: &Path, load: impl FnOnce() -> Result<Vec<u8>, ProviderError>) -> Result<Vec<u8>, ProviderError> {
        if let Ok(bytes) = std::fs::read(path) {
            return Ok(bytes);
        }
        let bytes = load()?;
        write_atomic(path, &bytes)?;
        Ok(bytes)
    }
}

/// Write-to-temp then rename, so concurrent writers never expose a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ProviderError> {
    let io = |source| ProviderError::Io { path: path.to_owned(), source };
    let dir = path.parent().expect("cache paths have a parent");
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

impl SubtitleProvider for RemoteProvider {
    fn name(&self) -> &str {
        &self.config.name
    }

    fn list_candidates(
        &self,
        video: &MovieRecord,
        language: &LangCode,
    ) -> Result<Vec<SubtitleCandidate>, ProviderError> {
        let mut url = self.base.join("search").expect("static path");
        {
            let mut q = url.query_pairs_mut();
            q.append_pair("title", &video.title);
            if let Some(year) = video.year {
                q.append_pair("year", &year.to_string());
            }
            q.append_pair("lang", language.as_str());
        }
        let key = hex_digest(url.query().unwrap_or_default());
        let path = self.cache_dir().join("search").join(format!("{key}.json"));
        let body = self.cached(&path, || self.get(url.clone()))?;
        let hits: Vec<SearchHit> = serde_json::from_slice(&body).map_err(|e| {
            let _ = std::fs::remove_file(&path);
            ProviderError::Decode { url: url.to_string(), message: e.to_string() }
        })?;
        Ok(hits
            .into_iter()
            .map(|hit| SubtitleCandidate {
                provider_id: hit.id,
                video_id: video.id.clone(),
                language: language.clone(),
                release_label: hit.release,
                byte_size: hit.size,
            })
            .collect())
    }

    fn fetch(&self, candidate: &SubtitleCandidate) -> Result<Vec<u8>, ProviderError> {
        let mut url = self.base.join("download/").expect("static path");
        url.path_segments_mut()
            .expect("base checked in new")
            .pop_if_empty()
            .push(&candidate.provider_id);
        self.cached(&self.download_cache_path(&candidate.provider_id), || self.get(url))
    }
}

fn hex_digest(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    /// Most candidate combinations evaluated per video.
    pub budget: usize,
    /// Try offset recovery when a pair is not synchronized as-is.
    pub shifting: bool,
    pub parse: ParseOptions,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            budget: 16,
            shifting: true,
            parse: ParseOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyncedPair {
    pub source: SubtitleDocument,
    /// Already shifted by `verdict.applied_shift_ms`.
    pub target: SubtitleDocument,
    pub verdict: SyncVerdict,
    pub source_candidate: SubtitleCandidate,
    pub target_candidate: SubtitleCandidate,
}

fn load_candidate(
    provider: &dyn SubtitleProvider,
    candidate: &SubtitleCandidate,
    options: &ParseOptions,
) -> Option<SubtitleDocument> {
    let bytes = match provider.fetch(candidate) {
        Ok(b) => b,
        Err(e) => {
            log::warn!("skipping {}: {e}", candidate.provider_id);
            return None;
        }
    };
    match parse(&bytes, candidate.language.clone(), &candidate.video_id, options) {
        Ok(parsed) if parsed.document.is_empty() => {
            log::warn!("skipping {}: no cues ({} diagnostics)", candidate.provider_id, parsed.diagnostics.len());
            None
        }
        Ok(parsed) => {
            if !parsed.diagnostics.is_empty() {
                log::debug!("{}: {} malformed blocks skipped", candidate.provider_id, parsed.diagnostics.len());
            }
            Some(parsed.document)
        }
        Err(e) => {
            log::warn!("skipping {}: {e}", candidate.provider_id);
            None
        }
    }
}

/// Walks candidate pairs in `(source rank, target rank)` order and returns the
/// first synchronized one, shifting the target when allowed.
pub fn find_synchronized_pair(
    video: &MovieRecord,
    source_lang: &LangCode,
    target_lang: &LangCode,
    provider: &dyn SubtitleProvider,
    policy: &SyncPolicy,
    options: &SearchOptions,
) -> Result<Option<SyncedPair>, ProviderError> {
    let sources = provider.list_candidates(video, source_lang)?;
    if sources.is_empty() {
        return Ok(None);
    }
    let targets = provider.list_candidates(video, target_lang)?;
    let mut target_docs: Vec<Option<Option<SubtitleDocument>>> = vec![None; targets.len()];
    let mut visited = 0;
    for source_candidate in &sources {
        let Some(source) = load_candidate(provider, source_candidate, &options.parse) else {
            continue;
        };
        for (t, target_candidate) in targets.iter().enumerate() {
            let target = target_docs[t].get_or_insert_with(|| load_candidate(provider, target_candidate, &options.parse));
            let Some(target) = target.as_ref() else {
                continue;
            };
            if visited == options.budget {
                return Ok(None);
            }
            visited += 1;

            let verdict = check_sync(&source, target, policy);
            let found = if verdict.synchronized {
                Some((verdict, target.clone()))
            } else if options.shifting {
                match recover_shift(&source, target, policy) {
                    Ok(r) if r.verdict.synchronized => {
                        Some((r.verdict, shift_document(target, r.delta_ms).document))
                    }
                    Ok(_) => None,
                    Err(e) => {
                        log::warn!("shift search failed for {}: {e}", target_candidate.provider_id);
                        None
                    }
                }
            } else {
                None
            };
            if let Some((verdict, target)) = found {
                return Ok(Some(SyncedPair {
                    source,
                    target,
                    verdict,
                    source_candidate: source_candidate.clone(),
                    target_candidate: target_candidate.clone(),
                }));
            }
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subtitle::{serialize_srt, Cue};
    use std::collections::BTreeSet;
    use std::io::{BufRead, BufReader};
    use std::net::TcpListener;
    use std::sync::Arc;

    fn movie(id: &str) -> MovieRecord {
        MovieRecord {
            id: id.into(),
            title: "The Movie".into(),
            year: Some(2001),
            media_type: Some("movie".into()),
            rating: None,
            rating_count: None,
            duration: None,
            genres: BTreeSet::new(),
        }
    }

    fn lang(code: &str) -> LangCode {
        code.parse().unwrap()
    }

    fn srt(starts: &[u64], offset: i64) -> Vec<u8> {
        let cues = starts
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let s = (s as i64 + offset) as u64;
                Cue::new(i as u32 + 1, s, s + 900, format!("line {i}"))
            })
            .collect();
        serialize_srt(&SubtitleDocument::new(lang("en"), "x", cues))
    }

    const STARTS: &[u64] = &[1_000, 3_100, 4_700, 8_000, 9_300, 12_900, 15_000, 16_800, 21_000, 23_500];

    fn put(root: &Path, rel: &str, bytes: &[u8]) {
        let path = root.join(rel);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, bytes).unwrap();
    }

    #[test]
    fn local_provider_lists_in_name_order() {
        let dir = tempfile::tempdir().unwrap();
        let provider = LocalProvider::new(dir.path());
        assert!(provider.list_candidates(&movie("tt001"), &lang("en")).unwrap().is_empty());

        put(dir.path(), "tt001/en/b.srt", b"second");
        put(dir.path(), "tt001/en/a.srt", b"first");
        put(dir.path(), "tt001/en/notes.txt", b"ignored");
        let found = provider.list_candidates(&movie("tt001"), &lang("en")).unwrap();
        let labels: Vec<_> = found.iter().map(|c| c.release_label.as_str()).collect();
        assert_eq!(labels, ["a", "b"]);
        assert_eq!(found[0].byte_size, 5);
        assert_eq!(provider.fetch(&found[1]).unwrap(), b"second");
    }

    fn search_with(sources: &[Vec<u8>], targets: &[Vec<u8>], budget: usize) -> Option<SyncedPair> {
        let dir = tempfile::tempdir().unwrap();
        for (i, s) in sources.iter().enumerate() {
            put(dir.path(), &format!("tt1/en/{i}.srt"), s);
        }
        for (i, t) in targets.iter().enumerate() {
            put(dir.path(), &format!("tt1/fa/{i}.srt"), t);
        }
        let options = SearchOptions { budget, ..SearchOptions::default() };
        find_synchronized_pair(
            &movie("tt1"),
            &lang("en"),
            &lang("fa"),
            &LocalProvider::new(dir.path()),
            &SyncPolicy::default(),
            &options,
        )
        .unwrap()
    }

    #[test]
    fn identical_timings_are_returned_unshifted() {
        let pair = search_with(&[srt(STARTS, 0)], &[srt(STARTS, 0)], 16).unwrap();
        assert_eq!(pair.verdict.match_fraction, 1.0);
        assert_eq!(pair.verdict.applied_shift_ms, 0);
        assert_eq!(pair.target.language, lang("fa"));
    }

    #[test]
    fn constant_offset_is_shifted_back() {
        let pair = search_with(&[srt(STARTS, 0)], &[srt(STARTS, 700)], 16).unwrap();
        assert_eq!(pair.verdict.applied_shift_ms, -700);
        assert_eq!(pair.target.cues[0].start_ms, 1_000);
        assert!(pair.verdict.synchronized);
    }

    #[test]
    fn shifting_can_be_disabled() {
        let dir = tempfile::tempdir().unwrap();
        put(dir.path(), "tt1/en/a.srt", &srt(STARTS, 0));
        put(dir.path(), "tt1/fa/a.srt", &srt(STARTS, 700));
        let options = SearchOptions { shifting: false, ..SearchOptions::default() };
        let found = find_synchronized_pair(
            &movie("tt1"),
            &lang("en"),
            &lang("fa"),
            &LocalProvider::new(dir.path()),
            &SyncPolicy::default(),
            &options,
        )
        .unwrap();
        assert!(found.is_none());
    }

    #[test]
    fn unsyncable_and_budget() {
        let disjoint: Vec<u64> = (0..10).map(|i| 500_000 + i * 7_777).collect();
        assert!(search_with(&[srt(STARTS, 0)], &[srt(&disjoint, 0)], 16).is_none());

        // The synchronized target is the second combination.
        let targets = [srt(&disjoint, 0), srt(STARTS, 0)];
        assert!(search_with(&[srt(STARTS, 0)], &targets, 1).is_none());
        let pair = search_with(&[srt(STARTS, 0)], &targets, 2).unwrap();
        assert_eq!(pair.target_candidate.release_label, "1");
    }

    #[test]
    fn unparseable_candidates_are_skipped() {
        let pair = search_with(&[b"\xff\xfe garbage".to_vec(), srt(STARTS, 0)], &[srt(STARTS, 0)], 16).unwrap();
        assert_eq!(pair.source_candidate.release_label, "1");
    }

    /// Serves one scripted `(status, headers, body)` answer per connection and
    /// records each request head.
    fn stub_server(script: Vec<(u16, &'static str, Vec<u8>)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base = format!("http://{}/api", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        std::thread::spawn(move || {
            for (status, headers, body) in script {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap() == 0 || line == "\r\n" {
                        break;
                    }
                    head.push_str(&line);
                }
                log.lock().unwrap().push(head);
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Length: {}\r\nConnection: close\r\n{headers}\r\n",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
                stream.write_all(&body).unwrap();
            }
        });
        (base, seen)
    }

    fn remote(base: String, cache: &Path) -> RemoteProvider {
        RemoteProvider::new(RemoteConfig {
            base_url: base,
            credentials: Some("secret".into()),
            rate_per_minute: 0,
            burst: 1,
            cache_root: cache.to_owned(),
            name: "stub".into(),
        })
        .unwrap()
        .with_retry(RetryPolicy {
            base_delay: Duration::from_millis(1),
            ..RetryPolicy::default()
        })
    }

    fn candidate(id: &str) -> SubtitleCandidate {
        SubtitleCandidate {
            provider_id: id.into(),
            video_id: "tt1".into(),
            language: lang("en"),
            release_label: String::new(),
            byte_size: 0,
        }
    }

    #[test]
    fn rate_limited_then_ok() {
        let cache = tempfile::tempdir().unwrap();
        let (base, seen) = stub_server(vec![
            (429, "Retry-After: 0\r\n", Vec::new()),
            (200, "", b"1\n00:00:01,000 --> 00:00:02,000\nHi\n".to_vec()),
        ]);
        let provider = remote(base, cache.path());
        let bytes = provider.fetch(&candidate("42")).unwrap();
        assert!(bytes.starts_with(b"1\n"));
        assert_eq!(provider.requests_sent(), 2);
        let seen = seen.lock().unwrap();
        assert!(seen[1].starts_with("GET /api/download/42 "));
        assert!(seen[1].to_ascii_lowercase().contains("authorization: bearer secret"));
    }

    #[test]
    fn server_errors_exhaust_retries() {
        let cache = tempfile::tempdir().unwrap();
        let (base, _) = stub_server(vec![(500, "", Vec::new()); 3]);
        let provider = remote(base, cache.path());
        let err = provider.fetch(&candidate("7")).unwrap_err();
        assert!(matches!(err, ProviderError::Http { status: 500, .. }), "{err}");
        assert_eq!(provider.requests_sent(), 3);
        assert!(!cache.path().join("stub/7.srt").exists());
    }

    #[test]
    fn cache_serves_repeats_without_network() {
        let cache = tempfile::tempdir().unwrap();
        let (base, _) = stub_server(vec![(200, "", b"payload".to_vec())]);
        let provider = remote(base.clone(), cache.path());
        assert_eq!(provider.fetch(&candidate("a/b")).unwrap(), b"payload");
        assert_eq!(provider.fetch(&candidate("a/b")).unwrap(), b"payload");
        assert_eq!(provider.requests_sent(), 1);
        assert_eq!(std::fs::read(cache.path().join("stub/a_b.srt")).unwrap(), b"payload");

        let warm = remote(base, cache.path());
        assert_eq!(warm.fetch(&candidate("a/b")).unwrap(), b"payload");
        assert_eq!(warm.requests_sent(), 0);
    }

    #[test]
    fn search_builds_candidates() {
        let cache = tempfile::tempdir().unwrap();
        let body = br#"[{"id":"9","release":"Movie.2001.WEB","size":1234},{"id":"10"}]"#.to_vec();
        let (base, seen) = stub_server(vec![(200, "Content-Type: application/json\r\n", body)]);
        let provider = remote(base, cache.path());
        let found = provider.list_candidates(&movie("tt1"), &lang("fa")).unwrap();
        assert_eq!(found.len(), 2);
        assert_eq!(found[0].release_label, "Movie.2001.WEB");
        assert_eq!(found[0].byte_size, 1234);
        assert_eq!(found[1].provider_id, "10");
        assert!(seen.lock().unwrap()[0].starts_with("GET /api/search?title=The+Movie&year=2001&lang=fa "));
        // Cached: no second connection is served.
        assert_eq!(provider.list_candidates(&movie("tt1"), &lang("fa")).unwrap(), found);
        assert_eq!(provider.requests_sent(), 1);
    }

    #[test]
    fn token_bucket_spaces_requests() {
        let mut bucket = TokenBucket::new(60, 2);
        assert!(bucket.reserve().is_zero());
        assert!(bucket.reserve().is_zero());
        let wait = bucket.reserve();
        assert!(wait > Duration::from_millis(900) && wait <= Duration::from_secs(1), "{wait:?}");
        assert!(TokenBucket::new(0, 1).reserve().is_zero());
    }

    #[test]
    fn bad_base_url_is_a_config_error() {
        let err = RemoteProvider::new(RemoteConfig {
            base_url: "not a url".into(),
            credentials: None,
            rate_per_minute: 1,
            burst: 1,
            cache_root: PathBuf::from("/tmp"),
            name: "x".into(),
        });
        assert!(matches!(err, Err(ProviderError::Config(_))));
    }
}
