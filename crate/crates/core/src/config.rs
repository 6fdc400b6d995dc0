//! Pipeline configuration file.
//!
//! ```toml
//! data_root = "data"
//! catalog = "imdb.csv"
//! jobs = 4
//!
//! [filter]
//! type_limit = "movie"
//! year_min = 1990
//!
//! [provider]
//! kind = "local"
//! root = "subtitles"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::catalog::{CatalogError, ColumnMapping, FilterSpec};
use crate::corpus::EmitOptions;
use crate::dialogue::{Cleaner, CleaningError, CleaningRules};
use crate::pipeline::CorpusOutput;
use crate::provider::{LocalProvider, ProviderError, RemoteConfig, RemoteProvider, SearchOptions, SubtitleProvider};
use crate::sentence::SplitPolicy;
use crate::subtitle::{FallbackEncoding, ParseOptions};
use crate::sync::{SyncError, SyncPolicy};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration in {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid catalog mapping: {0}")]
    Mapping(#[from] CatalogError),
    #[error("invalid cleaning rules: {0}")]
    Cleaning(#[from] CleaningError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Allow constant-offset recovery for unsynchronized pairs.
    pub shifting: bool,
    /// Candidate combinations tried per video.
    pub budget: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { shifting: true, budget: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub prefix: String,
    /// Defaults to the store directory of the language pair.
    pub dir: Option<PathBuf>,
    pub dedup: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { prefix: "corpus".into(), dir: None, dedup: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProviderConfig {
    Local {
        root: PathBuf,
    },
    Remote {
        base_url: String,
        #[serde(default = "default_credentials_env")]
        credentials_env: String,
        #[serde(default = "default_rate")]
        rate_per_minute: u32,
        #[serde(default = "default_burst")]
        burst: u32,
        cache_root: PathBuf,
        #[serde(default = "default_provider_name")]
        name: String,
    },
}

fn default_credentials_env() -> String {
    "SUBBITEXT_API_TOKEN".into()
}

fn default_rate() -> u32 {
    40
}

fn default_burst() -> u32 {
    1
}

fn default_provider_name() -> String {
    "remote".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data_root: PathBuf,
    pub catalog: Option<PathBuf>,
    pub catalog_mapping: ColumnMapping,
    /// TOML file of `[[rule]]` tables. The built-in rule list when absent.
    pub cleaning_rules: Option<PathBuf>,
    pub filter: FilterSpec,
    pub sync: SyncPolicy,
    pub search: SearchConfig,
    pub sentences: SplitPolicy,
    /// Decoding used for subtitle files that are not valid UTF-8.
    pub fallback_encoding: Option<FallbackEncoding>,
    pub provider: Option<ProviderConfig>,
    pub jobs: usize,
    pub corpus: CorpusConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            data_root: PathBuf::from("data"),
            catalog: None,
            catalog_mapping: ColumnMapping::default(),
            cleaning_rules: None,
            filter: FilterSpec::default(),
            sync: SyncPolicy::default(),
            search: SearchConfig::default(),
            sentences: SplitPolicy::default(),
            fallback_encoding: None,
            provider: None,
            jobs: 4,
            corpus: CorpusConfig::default(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        let mut config: Config =
            toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.to_owned(), source })?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        Ok(config)
    }

    /// Makes every relative path relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_root);
        self.catalog.as_mut().map(fix);
        self.cleaning_rules.as_mut().map(fix);
        self.corpus.dir.as_mut().map(fix);
        match &mut self.provider {
            Some(ProviderConfig::Local { root }) => fix(root),
            Some(ProviderConfig::Remote { cache_root, .. }) => fix(cache_root),
            None => {}
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sync.validate()?;
        if self.jobs == 0 {
            return Err(ConfigError::Invalid("jobs must be at least 1".into()));
        }
        if self.search.budget == 0 {
            return Err(ConfigError::Invalid("search budget must be at least 1".into()));
        }
        if self.corpus.prefix.is_empty() || self.corpus.prefix.contains(['/', '\\']) {
            return Err(ConfigError::Invalid(format!("bad corpus prefix {:?}", self.corpus.prefix)));
        }
        Ok(())
    }

    pub fn cleaner(&self) -> Result<Cleaner, ConfigError> {
        let rules = match &self.cleaning_rules {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.clone(), source })?;
                CleaningRules::from_toml(&text)?
            }
            None => CleaningRules::default(),
        };
        Ok(Cleaner::new(&rules)?)
    }

    pub fn search_options(&self) -> SearchOptions {
        SearchOptions {
            budget: self.search.budget,
            shifting: self.search.shifting,
            parse: ParseOptions { fallback_encoding: self.fallback_encoding, ..ParseOptions::default() },
        }
    }

    pub fn emit_options(&self) -> EmitOptions {
        EmitOptions { dedup: self.corpus.dedup }
    }

    /// Where the corpus goes; `store_dir` is used when no directory is set.
    pub fn corpus_output(&self, store_dir: &Path) -> CorpusOutput {
        CorpusOutput {
            dir: self.corpus.dir.clone().unwrap_or_else(|| store_dir.to_owned()),
            prefix: self.corpus.prefix.clone(),
        }
    }

    pub fn build_provider(&self) -> Result<Box<dyn SubtitleProvider>, ConfigError> {
        match &self.provider {
            None => Err(ConfigError::Invalid("no [provider] configured".into())),
            Some(ProviderConfig::Local { root }) => Ok(Box::new(LocalProvider::new(root.clone()))),
            Some(ProviderConfig::Remote { base_url, credentials_env, rate_per_minute, burst, cache_root, name }) => {
                let remote = RemoteProvider::new(RemoteConfig {
                    base_url: base_url.clone(),
                    credentials: std::env::var(credentials_env).ok(),
                    rate_per_minute: *rate_per_minute,
                    burst: *burst,
                    cache_root: cache_root.clone(),
                    name: name.clone(),
                })?;
                Ok(Box::new(remote))
            }
        }
    }
}
