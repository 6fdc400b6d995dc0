//! Movie catalog ingestion and attribute filters.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// One catalog row. `None` means the attribute is unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovieRecord {
    pub id: String,
    pub title: String,
    pub year: Option<i32>,
    pub media_type: Option<String>,
    pub rating: Option<f64>,
    pub rating_count: Option<u64>,
    /// Seconds.
    pub duration: Option<u64>,
    pub genres: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DurationUnit {
    #[default]
    Seconds,
    Minutes,
}

impl DurationUnit {
    fn to_seconds(self, value: f64) -> f64 {
        match self {
            DurationUnit::Seconds => value,
            DurationUnit::Minutes => value * 60.0,
        }
    }
}

/// Maps canonical fields to the catalog's header names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMapping {
    pub id: String,
    pub title: String,
    pub year: String,
    pub media_type: String,
    pub rating: String,
    pub rating_count: String,
    pub duration: String,
    pub duration_unit: DurationUnit,
    /// Genre flag columns. When absent, every unmapped column holding only
    /// 0/1 values is treated as a genre flag.
    pub genres: Option<Vec<String>>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            id: "id".into(),
            title: "title".into(),
            year: "year".into(),
            media_type: "type".into(),
            rating: "imdbRating".into(),
            rating_count: "ratingCount".into(),
            duration: "duration".into(),
            duration_unit: DurationUnit::Seconds,
            genres: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("cannot read catalog {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed catalog: {0}")]
    Csv(#[from] csv::Error),
    #[error("catalog header lacks required column {0:?}")]
    MissingColumn(String),
    #[error("catalog has {rows} data rows but none could be parsed")]
    Empty { rows: usize },
    #[error("cannot parse column mapping: {0}")]
    Mapping(#[from] toml::de::Error),
}

impl ColumnMapping {
    pub fn from_toml(text: &str) -> Result<Self, CatalogError> {
        Ok(toml::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub records: Vec<MovieRecord>,
    /// Rows dropped for a missing id or title, a duplicate id, or a broken row.
    pub skipped: usize,
}

pub fn load_catalog(path: &Path, mapping: &ColumnMapping) -> Result<Catalog, CatalogError> {
    let file = std::fs::File::open(path).map_err(|source| CatalogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_catalog(file, mapping)
}

fn parse_number(field: Option<&str>) -> Option<f64> {
    let v: f64 = field?.trim().parse().ok()?;
    v.is_finite().then_some(v)
}

fn parse_whole(field: Option<&str>) -> Option<u64> {
    parse_number(field).filter(|v| *v >= 0.0 && v.fract() == 0.0).map(|v| v as u64)
}

fn is_flag(value: &str) -> bool {
    matches!(value.trim(), "" | "0" | "1" | "0.0" | "1.0")
}

fn flag_set(value: &str) -> bool {
    matches!(value.trim(), "1" | "1.0")
}

/// Reads a comma-separated catalog whose first row is the header.
pub fn read_catalog(input: impl Read, mapping: &ColumnMapping) -> Result<Catalog, CatalogError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header = reader.headers()?.clone();
    let column = |name: &str| header.iter().position(|h| h.trim() == name);
    let required = |name: &str| column(name).ok_or_else(|| CatalogError::MissingColumn(name.to_owned()));
    let id_col = required(&mapping.id)?;
    let title_col = required(&mapping.title)?;
    let year_col = column(&mapping.year);
    let type_col = column(&mapping.media_type);
    let rating_col = column(&mapping.rating);
    let count_col = column(&mapping.rating_count);
    let duration_col = column(&mapping.duration);

    let mut rows = Vec::new();
    let mut broken = 0;
    for row in reader.records() {
        match row {
            Ok(row) => rows.push(row),
            Err(err) if err.is_io_error() => return Err(err.into()),
            Err(_) => broken += 1,
        }
    }

    let mapped: HashSet<usize> = [Some(id_col), Some(title_col), year_col, type_col, rating_col, count_col, duration_col]
        .into_iter()
        .flatten()
        .collect();
    let genre_cols: Vec<(usize, String)> = match &mapping.genres {
        Some(names) => names
            .iter()
            .filter_map(|n| column(n).map(|c| (c, n.clone())))
            .collect(),
        None => header
            .iter()
            .enumerate()
            .filter(|(c, _)| !mapped.contains(c))
            .filter(|&(c, _)| {
                let values = || rows.iter().filter_map(|r| r.get(c));
                values().all(is_flag) && values().any(flag_set)
            })
            .map(|(c, name)| (c, name.trim().to_owned()))
            .collect(),
    };

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    let mut skipped = broken;
    for row in &rows {
        let field = |c: Option<usize>| c.and_then(|c| row.get(c)).map(str::trim).filter(|s| !s.is_empty());
        let (Some(id), Some(title)) = (field(Some(id_col)), field(Some(title_col))) else {
            skipped += 1;
            continue;
        };
        if !seen.insert(id.to_owned()) {
            skipped += 1;
            continue;
        }
        let year = parse_number(field(year_col))
            .filter(|y| y.fract() == 0.0 && (1870.0..=2100.0).contains(y))
            .map(|y| y as i32);
        let rating = parse_number(field(rating_col)).filter(|r| (0.0..=10.0).contains(r));
        let duration = parse_number(field(duration_col))
            .filter(|d| *d >= 0.0)
            .map(|d| mapping.duration_unit.to_seconds(d).round() as u64);
        let genres = genre_cols
            .iter()
            .filter(|(c, _)| row.get(*c).is_some_and(flag_set))
            .map(|(_, name)| name.clone())
            .collect();
        records.push(MovieRecord {
            id: id.to_owned(),
            title: title.to_owned(),
            year,
            media_type: field(type_col).map(str::to_owned),
            rating,
            rating_count: parse_whole(field(count_col)),
            duration,
            genres,
        });
    }

    let data_rows = rows.len() + broken;
    if data_rows > 0 && records.is_empty() {
        return Err(CatalogError::Empty { rows: data_rows });
    }
    Ok(Catalog { records, skipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DurationBound {
    pub value: u64,
    pub unit: DurationUnit,
}

impl DurationBound {
    pub fn seconds(&self) -> u64 {
        match self.unit {
            DurationUnit::Seconds => self.value,
            DurationUnit::Minutes => self.value * 60,
        }
    }
}

/// Inclusive lower bounds and tag filters. Every bound is optional; records
/// whose bounded attribute is unknown are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSpec {
    pub type_limit: Option<String>,
    pub year_min: Option<i32>,
    pub rating_min: Option<f64>,
    pub duration_min: Option<DurationBound>,
    pub genre_any: Option<BTreeSet<String>>,
}

#[derive(Debug, Clone, PartialEq)]
enum Bound {
    Type(String),
    Year(i32),
    Rating(f64),
    Duration(DurationBound),
    Genre(BTreeSet<String>),
}

impl Bound {
    fn admits(&self, r: &MovieRecord) -> bool {
        match self {
            Bound::Type(t) => r.media_type.as_deref() == Some(t.as_str()),
            Bound::Year(y) => r.year.is_some_and(|v| v >= *y),
            Bound::Rating(min) => r.rating.is_some_and(|v| v >= *min),
            Bound::Duration(d) => r.duration.is_some_and(|v| v >= d.seconds()),
            Bound::Genre(any) => !r.genres.is_disjoint(any),
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::Type(t) => write!(f, "type = {t}"),
            Bound::Year(y) => write!(f, "year >= {y}"),
            Bound::Rating(r) => write!(f, "rating >= {r}"),
            Bound::Duration(d) => match d.unit {
                DurationUnit::Seconds => write!(f, "duration >= {} s", d.value),
                DurationUnit::Minutes => write!(f, "duration >= {} min", d.value),
            },
            Bound::Genre(g) => {
                let list: Vec<&str> = g.iter().map(String::as_str).collect();
                write!(f, "genre in {{{}}}", list.join(", "))
            }
        }
    }
}

impl FilterSpec {
    /// Present bounds, in declaration order.
    fn bounds(&self) -> Vec<Bound> {
        let mut out = Vec::new();
        if let Some(t) = &self.type_limit {
            out.push(Bound::Type(t.clone()));
        }
        if let Some(y) = self.year_min {
            out.push(Bound::Year(y));
        }
        if let Some(r) = self.rating_min {
            out.push(Bound::Rating(r));
        }
        if let Some(d) = self.duration_min {
            out.push(Bound::Duration(d));
        }
        if let Some(g) = &self.genre_any {
            out.push(Bound::Genre(g.clone()));
        }
        out
    }

    pub fn admits(&self, record: &MovieRecord) -> bool {
        self.bounds().iter().all(|b| b.admits(record))
    }
}

pub fn apply_filter(records: &[MovieRecord], spec: &FilterSpec) -> Vec<MovieRecord> {
    let bounds = spec.bounds();
    records
        .iter()
        .filter(|r| bounds.iter().all(|b| b.admits(r)))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FilterStage {
    pub label: String,
    pub count: usize,
}

/// Survivor counts after each bound, applied cumulatively.
pub fn filter_report(records: &[MovieRecord], spec: &FilterSpec) -> Vec<FilterStage> {
    let mut report = vec![FilterStage {
        label: "all".into(),
        count: records.len(),
    }];
    let mut survivors: Vec<&MovieRecord> = records.iter().collect();
    for bound in spec.bounds() {
        survivors.retain(|r| bound.admits(r));
        report.push(FilterStage {
            label: bound.to_string(),
            count: survivors.len(),
        });
    }
    report
}
