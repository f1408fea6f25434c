//! Event-sequence data model, CSV loading, vocabulary construction and a
//! synthetic lifestream generator.
//!
//! Raw datasets keep categorical values as strings; [`Vocabulary::encode`]
//! turns them into index-based [`EventSequence`]s ready for the encoder.
//! The loader derives two standard attributes from the timestamp: weekday
//! (categorical, index 1..=7, 0 unknown) and `log1p` of the seconds since
//! the previous event.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the derived weekday categorical field.
pub const WEEKDAY_FIELD: &str = "__weekday";
/// Name of the derived log1p inter-event gap numerical field.
pub const DELTA_FIELD: &str = "__log_delta";
/// Cardinality of the weekday field (unknown + Mon..Sun).
pub const WEEKDAY_CARDINALITY: usize = 8;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Declaration of a numerical column.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct NumericalField {
    pub name: String,
    /// Apply `log1p` before normalization (heavy-tailed amounts).
    #[serde(default)]
    pub log1p: bool,
}

/// Dataset schema: which columns hold the id, time, label and attributes.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub id: String,
    pub time: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default)]
    pub numerical: Vec<NumericalField>,
}

impl Schema {
    pub fn validate(&self) -> Result<(), IngestError> {
        let mut names: Vec<&str> = vec![self.id.as_str(), self.time.as_str()];
        if let Some(l) = &self.label {
            names.push(l);
        }
        names.extend(self.categorical.iter().map(|s| s.as_str()));
        names.extend(self.numerical.iter().map(|f| f.name.as_str()));
        let mut sorted = names.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != names.len() {
            return Err(IngestError::Schema("duplicate field names".into()));
        }
        if self.categorical.is_empty() && self.numerical.is_empty() {
            return Err(IngestError::Schema(
                "schema needs at least one categorical or numerical field".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self, IngestError> {
        let mut buf = String::new();
        std::fs::File::open(path)?.read_to_string(&mut buf)?;
        let schema: Schema = serde_json::from_str(&buf)
            .map_err(|e| IngestError::Schema(format!("{}: {e}", path.display())))?;
        schema.validate()?;
        Ok(schema)
    }
}

/// One event as loaded from disk: raw categorical tokens, raw numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct RawEvent {
    pub time: i64,
    pub cats: Vec<String>,
    pub nums: Vec<f64>,
}

/// One person's raw events, time-sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSequence {
    pub person_id: String,
    pub events: Vec<RawEvent>,
    pub label: Option<i64>,
}

/// Vocabulary-encoded event. Categorical values are 0-based indices with
/// index 0 reserved for unknown tokens; numericals are transformed
/// (log1p where flagged) but not yet normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub time: i64,
    pub cats: Vec<u32>,
    pub nums: Vec<f64>,
}

/// Vocabulary-encoded sequence: the unit the encoder consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct EventSequence {
    pub person_id: String,
    pub events: Vec<Event>,
    pub label: Option<i64>,
}

/// Per-field statistics of one numerical column over the training split.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NumStats {
    pub mean: f64,
    pub var: f64,
}

/// Token tables for categorical fields plus numerical statistics.
///
/// Field order is schema categoricals then [`WEEKDAY_FIELD`], and schema
/// numericals then [`DELTA_FIELD`]. Index 0 of every categorical field is
/// the unknown token.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Vocabulary {
    pub cat_fields: Vec<String>,
    /// token -> index (>= 1) per categorical field; deterministic order.
    pub cat_tokens: Vec<BTreeMap<String, u32>>,
    pub num_fields: Vec<String>,
    pub num_log1p: Vec<bool>,
    pub num_stats: Vec<NumStats>,
}

impl Vocabulary {
    /// Cardinality (unknown token included) of categorical field `f`.
    pub fn cardinality(&self, f: usize) -> usize {
        self.cat_tokens[f].len() + 1
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        (0..self.cat_fields.len()).map(|f| self.cardinality(f)).collect()
    }

    pub fn n_numerical(&self) -> usize {
        self.num_fields.len()
    }

    fn token_index(&self, f: usize, token: &str) -> u32 {
        self.cat_tokens[f].get(token).copied().unwrap_or(0)
    }

    /// Encode a raw sequence: map tokens to indices, append the derived
    /// weekday and log-gap attributes, apply log1p transforms.
    pub fn encode(&self, seq: &RawSequence) -> EventSequence {
        let n_schema_cats = self.cat_fields.len() - 1; // last is weekday
        let n_schema_nums = self.num_fields.len() - 1; // last is delta
        let mut events = Vec::with_capacity(seq.events.len());
        let mut prev_time: Option<i64> = None;
        for raw in &seq.events {
            let mut cats = Vec::with_capacity(self.cat_fields.len());
            for f in 0..n_schema_cats {
                cats.push(self.token_index(f, &raw.cats[f]));
            }
            cats.push(weekday_index(raw.time));
            let mut nums = Vec::with_capacity(self.num_fields.len());
            for f in 0..n_schema_nums {
                let v = raw.nums[f];
                nums.push(if self.num_log1p[f] { signed_log1p(v) } else { v });
            }
            let delta = prev_time.map_or(0.0, |p| (raw.time - p).max(0) as f64);
            nums.push(delta.ln_1p());
            prev_time = Some(raw.time);
            events.push(Event {
                time: raw.time,
                cats,
                nums,
            });
        }
        EventSequence {
            person_id: seq.person_id.clone(),
            events,
            label: seq.label,
        }
    }

    pub fn encode_all(&self, dataset: &[RawSequence]) -> Vec<EventSequence> {
        dataset.iter().map(|s| self.encode(s)).collect()
    }
}

fn signed_log1p(v: f64) -> f64 {
    v.signum() * v.abs().ln_1p()
}

/// Weekday of an epoch timestamp, 1 = Monday .. 7 = Sunday.
pub fn weekday_index(time: i64) -> u32 {
    match DateTime::from_timestamp(time, 0) {
        Some(dt) => dt.weekday().number_from_monday(),
        None => 0,
    }
}

/// Group a CSV dataset into per-person raw sequences, time-sorted.
pub fn load_dataset(path: &Path, schema: &Schema) -> Result<Vec<RawSequence>, IngestError> {
    schema.validate()?;
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize, IngestError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::Schema(format!("missing column \"{name}\"")))
    };
    let id_col = col(&schema.id)?;
    let time_col = col(&schema.time)?;
    let label_col = match &schema.label {
        Some(l) => Some(col(l)?),
        None => None,
    };
    let cat_cols: Vec<usize> = schema
        .categorical
        .iter()
        .map(|n| col(n))
        .collect::<Result<_, _>>()?;
    let num_cols: Vec<(usize, &NumericalField)> = schema
        .numerical
        .iter()
        .map(|f| col(&f.name).map(|c| (c, f)))
        .collect::<Result<_, _>>()?;

    let mut persons: BTreeMap<String, RawSequence> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // 1-based, after the header
        let record = record?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let time = parse_time(field(time_col))
            .ok_or_else(|| IngestError::Row {
                row,
                message: format!("unparseable time \"{}\"", field(time_col)),
            })?;
        let mut nums = Vec::with_capacity(num_cols.len());
        for &(c, f) in &num_cols {
            let v: f64 = field(c).trim().parse().map_err(|_| IngestError::Row {
                row,
                message: format!("unparseable number \"{}\" in column \"{}\"", field(c), f.name),
            })?;
            if !v.is_finite() {
                return Err(IngestError::Row {
                    row,
                    message: format!("non-finite number in column \"{}\"", f.name),
                });
            }
            nums.push(v);
        }
        let cats = cat_cols.iter().map(|&c| field(c).to_string()).collect();
        let label = match label_col {
            Some(c) if !field(c).trim().is_empty() => {
                Some(field(c).trim().parse().map_err(|_| IngestError::Row {
                    row,
                    message: format!("unparseable label \"{}\"", field(c)),
                })?)
            }
            _ => None,
        };
        let id = field(id_col).to_string();
        let entry = persons.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            RawSequence {
                person_id: id,
                events: Vec::new(),
                label: None,
            }
        });
        entry.events.push(RawEvent { time, cats, nums });
        if label.is_some() {
            entry.label = label;
        }
    }
    if persons.is_empty() {
        return Err(IngestError::Dataset(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    let mut out: Vec<RawSequence> = order
        .into_iter()
        .map(|id| persons.remove(&id).unwrap())
        .collect();
    for seq in &mut out {
        seq.events.sort_by_key(|e| e.time);
    }
    Ok(out)
}

/// Epoch seconds or an ISO-8601 date / date-time.
fn parse_time(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    if let Ok(dt) = NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S") {
        return Some(dt.and_utc().timestamp());
    }
    if let Ok(dt) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        return Some(dt.and_utc().timestamp());
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Some(d.and_hms_opt(0, 0, 0)?.and_utc().timestamp());
    }
    None
}

/// Scan the training split and build token tables plus numerical stats.
/// The derived weekday and gap fields are appended with fixed cardinality
/// and stats computed the same way as declared fields.
pub fn build_vocabulary(dataset: &[RawSequence], schema: &Schema) -> Result<Vocabulary, IngestError> {
    if dataset.is_empty() {
        return Err(IngestError::Dataset("empty dataset".into()));
    }
    let n_cats = schema.categorical.len();
    let mut tokens: Vec<BTreeMap<String, u32>> = vec![BTreeMap::new(); n_cats];
    for seq in dataset {
        for e in &seq.events {
            for (f, tok) in e.cats.iter().enumerate() {
                let next = tokens[f].len() as u32 + 1;
                tokens[f].entry(tok.clone()).or_insert(next);
            }
        }
    }
    // deterministic indices: re-number by sorted token order
    for table in &mut tokens {
        let keys: Vec<String> = table.keys().cloned().collect();
        for (i, k) in keys.iter().enumerate() {
            table.insert(k.clone(), i as u32 + 1);
        }
    }

    let mut cat_fields = schema.categorical.clone();
    cat_fields.push(WEEKDAY_FIELD.to_string());
    let mut weekday_table = BTreeMap::new();
    for (i, name) in ["mon", "tue", "wed", "thu", "fri", "sat", "sun"].iter().enumerate() {
        weekday_table.insert(name.to_string(), i as u32 + 1);
    }
    tokens.push(weekday_table);

    // numerical stats over transformed values, Welford accumulation
    let mut num_fields: Vec<String> = schema.numerical.iter().map(|f| f.name.clone()).collect();
    num_fields.push(DELTA_FIELD.to_string());
    let mut num_log1p: Vec<bool> = schema.numerical.iter().map(|f| f.log1p).collect();
    num_log1p.push(false); // delta is already log-transformed at encode time
    let n_nums = num_fields.len();
    let mut count = vec![0u64; n_nums];
    let mut mean = vec![0f64; n_nums];
    let mut m2 = vec![0f64; n_nums];
    let mut push = |f: usize, v: f64| {
        count[f] += 1;
        let delta = v - mean[f];
        mean[f] += delta / count[f] as f64;
        m2[f] += delta * (v - mean[f]);
    };
    for seq in dataset {
        let mut prev: Option<i64> = None;
        for e in &seq.events {
            for (f, &v) in e.nums.iter().enumerate() {
                push(f, if num_log1p[f] { signed_log1p(v) } else { v });
            }
            let gap = prev.map_or(0.0, |p| (e.time - p).max(0) as f64);
            push(n_nums - 1, gap.ln_1p());
            prev = Some(e.time);
        }
    }
    let num_stats = (0..n_nums)
        .map(|f| NumStats {
            mean: mean[f],
            var: if count[f] > 0 { m2[f] / count[f] as f64 } else { 0.0 },
        })
        .collect();

    Ok(Vocabulary {
        cat_fields,
        cat_tokens: tokens,
        num_fields,
        num_log1p,
        num_stats,
    })
}

/// Configuration of the synthetic lifestream generator.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_persons: usize,
    pub n_classes: usize,
    pub events_per_person: (usize, usize),
    pub n_categories: usize,
    /// 0 = class-conditional category distributions identical, 1 = fully
    /// class-specific.
    pub class_signal_strength: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_persons: 200,
            n_classes: 4,
            events_per_person: (20, 60),
            n_categories: 16,
            class_signal_strength: 0.8,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.n_classes < 2 {
            return Err(IngestError::Dataset("n_classes must be >= 2".into()));
        }
        if self.events_per_person.0 > self.events_per_person.1 || self.events_per_person.0 == 0 {
            return Err(IngestError::Dataset(
                "events_per_person must satisfy 1 <= min <= max".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.class_signal_strength) {
            return Err(IngestError::Dataset(
                "class_signal_strength must be in [0, 1]".into(),
            ));
        }
        if self.n_persons == 0 || self.n_categories == 0 {
            return Err(IngestError::Dataset(
                "n_persons and n_categories must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Schema matching [`generate_synthetic`] output.
pub fn synthetic_schema() -> Schema {
    Schema {
        id: "person_id".into(),
        time: "time".into(),
        label: Some("label".into()),
        categorical: vec!["category".into()],
        numerical: vec![NumericalField {
            name: "amount".into(),
            log1p: true,
        }],
    }
}

/// Deterministic synthetic lifestreams. Each person draws a class label
/// round-robin; category indices come from a per-class multinomial
/// interpolated between a shared base distribution and a class-specific
/// one by `class_signal_strength`.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Vec<RawSequence>, IngestError> {
    config.validate()?;
    use rand::SeedableRng;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let n_cat = config.n_categories;
    let base = vec![1.0 / n_cat as f64; n_cat];
    let class_dists: Vec<Vec<f64>> = (0..config.n_classes)
        .map(|class| {
            // class-specific: uniform over the categories congruent to class
            let members: Vec<usize> = (0..n_cat).filter(|c| c % config.n_classes == class).collect();
            let mut dist = vec![0.0; n_cat];
            if members.is_empty() {
                dist.clone_from(&base);
            } else {
                for &m in &members {
                    dist[m] = 1.0 / members.len() as f64;
                }
            }
            let s = config.class_signal_strength;
            dist.iter()
                .zip(&base)
                .map(|(&d, &b)| (1.0 - s) * b + s * d)
                .collect()
        })
        .collect();

    let base_time: i64 = 1_577_836_800; // 2020-01-01T00:00:00Z
    let mut out = Vec::with_capacity(config.n_persons);
    for p in 0..config.n_persons {
        let class = p % config.n_classes;
        let (lo, hi) = config.events_per_person;
        let n_events = rng.random_range(lo..=hi);
        let mut time = base_time + rng.random_range(0..86_400);
        let mut events = Vec::with_capacity(n_events);
        for _ in 0..n_events {
            time += rng.random_range(3_600..172_800);
            let cat = sample_multinomial(&class_dists[class], &mut rng);
            // amounts loosely scale with the category index
            let amount = rng.random_range(1.0..100.0) * (1.0 + cat as f64);
            events.push(RawEvent {
                time,
                cats: vec![format!("c{cat}")],
                nums: vec![(amount * 100.0).round() / 100.0],
            });
        }
        out.push(RawSequence {
            person_id: format!("p{p:05}"),
            events,
            label: Some(class as i64),
        });
    }
    Ok(out)
}

fn sample_multinomial(dist: &[f64], rng: &mut ChaCha20Rng) -> usize {
    let x: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if x < acc {
            return i;
        }
    }
    dist.len() - 1
}

/// Write sequences back to the dataset CSV format.
pub fn write_dataset_csv(
    path: &Path,
    dataset: &[RawSequence],
    schema: &Schema,
) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![schema.id.clone(), schema.time.clone()];
    if let Some(l) = &schema.label {
        header.push(l.clone());
    }
    header.extend(schema.categorical.iter().cloned());
    header.extend(schema.numerical.iter().map(|f| f.name.clone()));
    w.write_record(&header)?;
    for seq in dataset {
        for e in &seq.events {
            let mut rec = vec![seq.person_id.clone(), e.time.to_string()];
            if schema.label.is_some() {
                rec.push(seq.label.map_or(String::new(), |l| l.to_string()));
            }
            rec.extend(e.cats.iter().cloned());
            rec.extend(e.nums.iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn simple_schema() -> Schema {
        Schema {
            id: "uid".into(),
            time: "ts".into(),
            label: None,
            categorical: vec!["mcc".into()],
            numerical: vec![NumericalField {
                name: "amount".into(),
                log1p: false,
            }],
        }
    }

    #[test]
    fn load_single_person_sorted() {
        let f = write_csv("uid,ts,mcc,amount\nu1,300,A,1.0\nu1,100,B,2.0\nu1,200,A,3.0\n");
        let ds = load_dataset(f.path(), &simple_schema()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds[0].events.len(), 3);
        let times: Vec<i64> = ds[0].events.iter().map(|e| e.time).collect();
        assert_eq!(times, vec![100, 200, 300]);
    }

    #[test]
    fn load_interleaved_persons() {
        let f = write_csv("uid,ts,mcc,amount\nu1,300,A,1.0\nu2,50,B,2.0\nu1,100,A,3.0\nu2,500,B,4.0\n");
        let ds = load_dataset(f.path(), &simple_schema()).unwrap();
        assert_eq!(ds.len(), 2);
        for seq in &ds {
            assert!(seq.events.windows(2).all(|w| w[0].time <= w[1].time));
        }
    }

    #[test]
    fn load_missing_column_names_it() {
        let f = write_csv("uid,ts,amount\nu1,100,1.0\n");
        let err = load_dataset(f.path(), &simple_schema()).unwrap_err();
        assert!(err.to_string().contains("mcc"), "{err}");
    }

    #[test]
    fn load_bad_time_reports_row() {
        let f = write_csv("uid,ts,mcc,amount\nu1,100,A,1.0\nu1,nope,A,1.0\n");
        let err = load_dataset(f.path(), &simple_schema()).unwrap_err();
        assert!(matches!(err, IngestError::Row { row: 3, .. }), "{err}");
    }

    #[test]
    fn load_empty_file_is_dataset_error() {
        let f = write_csv("uid,ts,mcc,amount\n");
        assert!(matches!(
            load_dataset(f.path(), &simple_schema()),
            Err(IngestError::Dataset(_))
        ));
    }

    #[test]
    fn load_iso_dates() {
        let f = write_csv(
            "uid,ts,mcc,amount\nu1,2020-06-21T16:40:00,A,1.0\nu1,2020-06-22,B,2.0\n",
        );
        let ds = load_dataset(f.path(), &simple_schema()).unwrap();
        assert_eq!(ds[0].events.len(), 2);
        assert!(ds[0].events[0].time < ds[0].events[1].time);
    }

    #[test]
    fn vocabulary_counts_tokens() {
        let f = write_csv("uid,ts,mcc,amount\nu1,1,A,5.0\nu1,2,B,5.0\nu1,3,A,5.0\n");
        let schema = simple_schema();
        let ds = load_dataset(f.path(), &schema).unwrap();
        let vocab = build_vocabulary(&ds, &schema).unwrap();
        assert_eq!(vocab.cardinality(0), 3); // unknown + A + B
        assert_eq!(vocab.num_stats[0].mean, 5.0);
        assert_eq!(vocab.num_stats[0].var, 0.0);
    }

    #[test]
    fn unknown_token_maps_to_zero() {
        let f = write_csv("uid,ts,mcc,amount\nu1,1,A,5.0\nu1,2,B,6.0\n");
        let schema = simple_schema();
        let ds = load_dataset(f.path(), &schema).unwrap();
        let vocab = build_vocabulary(&ds, &schema).unwrap();
        let unseen = RawSequence {
            person_id: "x".into(),
            events: vec![RawEvent {
                time: 5,
                cats: vec!["C".into()],
                nums: vec![1.0],
            }],
            label: None,
        };
        let enc = vocab.encode(&unseen);
        assert_eq!(enc.events[0].cats[0], 0);
    }

    #[test]
    fn encode_appends_weekday_and_delta() {
        let schema = simple_schema();
        // 2020-01-01 is a Wednesday
        let seq = RawSequence {
            person_id: "u".into(),
            events: vec![
                RawEvent { time: 1_577_836_800, cats: vec!["A".into()], nums: vec![1.0] },
                RawEvent { time: 1_577_836_800 + 100, cats: vec!["A".into()], nums: vec![2.0] },
            ],
            label: None,
        };
        let vocab = build_vocabulary(&[seq.clone()], &schema).unwrap();
        let enc = vocab.encode(&seq);
        assert_eq!(enc.events[0].cats.len(), 2);
        assert_eq!(enc.events[0].cats[1], 3); // Wednesday
        assert_eq!(enc.events[0].nums.len(), 2);
        assert_eq!(enc.events[0].nums[1], 0.0); // no previous event
        assert!((enc.events[1].nums[1] - 100f64.ln_1p()).abs() < 1e-12);
    }

    #[test]
    fn synthetic_deterministic() {
        let cfg = SynthConfig { n_persons: 20, ..Default::default() };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synthetic_counts_and_labels() {
        let cfg = SynthConfig { n_persons: 200, n_classes: 4, ..Default::default() };
        let ds = generate_synthetic(&cfg).unwrap();
        assert_eq!(ds.len(), 200);
        let mut per_class = [0usize; 4];
        for s in &ds {
            per_class[s.label.unwrap() as usize] += 1;
        }
        assert_eq!(per_class, [50, 50, 50, 50]);
    }

    #[test]
    fn synthetic_zero_signal_gives_identical_distributions() {
        let cfg = SynthConfig {
            n_persons: 400,
            class_signal_strength: 0.0,
            seed: 3,
            ..Default::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        // with zero signal every class draws categories from the same base
        // distribution; compare class-0 vs class-1 category frequencies
        let mut freq = vec![[0usize; 2]; cfg.n_categories];
        let mut totals = [0usize; 2];
        for s in &ds {
            let class = s.label.unwrap() as usize;
            if class > 1 {
                continue;
            }
            for e in &s.events {
                let c: usize = e.cats[0][1..].parse().unwrap();
                freq[c][class] += 1;
                totals[class] += 1;
            }
        }
        for row in &freq {
            let p0 = row[0] as f64 / totals[0] as f64;
            let p1 = row[1] as f64 / totals[1] as f64;
            assert!((p0 - p1).abs() < 0.03, "p0={p0} p1={p1}");
        }
    }

    #[test]
    fn csv_round_trip_is_identity() {
        let cfg = SynthConfig { n_persons: 10, ..Default::default() };
        let ds = generate_synthetic(&cfg).unwrap();
        let schema = synthetic_schema();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_dataset_csv(f.path(), &ds, &schema).unwrap();
        let back = load_dataset(f.path(), &schema).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn schema_rejects_duplicates() {
        let schema = Schema {
            id: "a".into(),
            time: "a".into(),
            label: None,
            categorical: vec!["x".into()],
            numerical: vec![],
        };
        assert!(schema.validate().is_err());
    }

    #[test]
    fn synth_config_validation() {
        let bad = SynthConfig { n_classes: 1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SynthConfig { class_signal_strength: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
