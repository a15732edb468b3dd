//! Content-addressed metric store: one JSON file per key at
//! `<root>/<key[0..2]>/<key>.json`.
//!
//! Writes go through a temporary file and an atomic rename; puts to the same
//! key are serialized by an in-process lock. Floats are written in shortest
//! round-trip form.

use crate::corpus::{sha256_hex, Anthology, PoemId};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 2;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error in {path}: {message}")]
    Schema { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, StoreError>;

/// A numeric array, possibly nested (per-layer rows, matrices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricValue {
    Array(Vec<f64>),
    Nested(Vec<MetricValue>),
}

impl MetricValue {
    pub fn as_array(&self) -> Option<&[f64]> {
        match self {
            MetricValue::Array(v) => Some(v),
            MetricValue::Nested(_) => None,
        }
    }

    /// Rows of a two-level value (`Nested` of `Array`s).
    pub fn as_rows(&self) -> Option<Vec<&[f64]>> {
        match self {
            MetricValue::Nested(rows) => rows.iter().map(MetricValue::as_array).collect(),
            MetricValue::Array(v) if v.is_empty() => Some(Vec::new()),
            MetricValue::Array(_) => None,
        }
    }

    /// Every leaf value in order.
    pub fn flatten(&self) -> Vec<f64> {
        match self {
            MetricValue::Array(v) => v.clone(),
            MetricValue::Nested(rows) => rows.iter().flat_map(MetricValue::flatten).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            MetricValue::Array(v) => v.iter().all(|x| x.is_finite()),
            MetricValue::Nested(rows) => rows.iter().all(MetricValue::is_finite),
        }
    }
}

/// Metric names accepted for poem records.
pub const POEM_METRICS: &[&str] = &[
    "ppl_whole",
    "ppl_segments",
    "entropy_seq",
    "entropy_adf",
    "entropy_segments",
    "abs_prob_seq",
    "prob_kld_seq",
    "hd_dist",
    "early_exit_jsd",
    "hd_abs_cov",
    "hd_gram",
];

/// Metric names accepted for pair records.
pub const PAIR_METRICS: &[&str] = &[
    "entropy_dtw",
    "emb_wmd",
    "emb_fd",
    "pca_mse",
    "pca_ssim",
    "k_components",
    "pca_layers",
];

/// Storage key of a pair: `sha256(min(a, b) ++ max(a, b))`.
pub fn pair_key(a: &PoemId, b: &PoemId) -> PoemId {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    PoemId::parse(&sha256_hex(format!("{lo}{hi}").as_bytes())).expect("sha256 hex")
}

pub type Entries = BTreeMap<String, BTreeMap<String, MetricValue>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub schema_version: u32,
    pub poem_id: PoemId,
    /// The two poems of a pair record, in key order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<[PoemId; 2]>,
    /// model tag -> metric name -> values
    pub entries: Entries,
}

impl MetricRecord {
    pub fn poem(id: PoemId) -> Self {
        MetricRecord {
            schema_version: SCHEMA_VERSION,
            poem_id: id,
            pair: None,
            entries: BTreeMap::new(),
        }
    }

    pub fn pair(a: &PoemId, b: &PoemId) -> Self {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        MetricRecord {
            schema_version: SCHEMA_VERSION,
            poem_id: pair_key(a, b),
            pair: Some([lo.clone(), hi.clone()]),
            entries: BTreeMap::new(),
        }
    }

    pub fn with_metrics(mut self, model_tag: &str, metrics: BTreeMap<String, MetricValue>) -> Self {
        self.entries.insert(model_tag.to_owned(), metrics);
        self
    }

    pub fn metric(&self, model_tag: &str, name: &str) -> Option<&MetricValue> {
        self.entries.get(model_tag)?.get(name)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!("schema_version {}", self.schema_version));
        }
        let registry = if self.pair.is_some() { PAIR_METRICS } else { POEM_METRICS };
        if let Some([a, b]) = &self.pair {
            if pair_key(a, b) != self.poem_id {
                return Err("pair key does not match its members".into());
            }
        }
        for (tag, metrics) in &self.entries {
            for (name, value) in metrics {
                if !registry.contains(&name.as_str()) {
                    return Err(format!("unknown metric `{name}` under `{tag}`"));
                }
                if !value.is_finite() {
                    return Err(format!("non-finite value in `{name}` under `{tag}`"));
                }
            }
        }
        Ok(())
    }
}

/// First stored layout: a single model tag with flat metrics.
#[derive(Deserialize)]
struct RecordV1 {
    poem_id: PoemId,
    model_tag: String,
    metrics: BTreeMap<String, MetricValue>,
}

fn parse_record(path: &Path, bytes: &[u8]) -> Result<MetricRecord> {
    let schema = |message: String| StoreError::Schema {
        path: path.to_owned(),
        message,
    };
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| schema(e.to_string()))?;
    let version = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| schema("missing schema_version".into()))?;
    let record = match version {
        1 => {
            let old: RecordV1 = serde_json::from_value(value).map_err(|e| schema(e.to_string()))?;
            MetricRecord::poem(old.poem_id).with_metrics(&old.model_tag, old.metrics)
        }
        2 => serde_json::from_value(value).map_err(|e| schema(e.to_string()))?,
        v => return Err(schema(format!("unsupported schema_version {v}"))),
    };
    record.validate().map_err(schema)?;
    Ok(record)
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
    locks: Arc<Mutex<HashMap<String, Arc<Mutex<()>>>>>,
}

/// Result of [`Store::scan`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    /// Sorted by poem id.
    pub items: Vec<(PoemId, MetricValue)>,
    pub skipped: usize,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|source| StoreError::Io {
            path: root.clone(),
            source,
        })?;
        Ok(Store {
            root,
            locks: Arc::default(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, id: &PoemId) -> PathBuf {
        let s = id.as_str();
        self.root.join(&s[..2]).join(format!("{s}.json"))
    }

    fn lock_for(&self, id: &PoemId) -> Arc<Mutex<()>> {
        let mut map = self.locks.lock().expect("lock table poisoned");
        Arc::clone(map.entry(id.to_string()).or_default())
    }

    pub fn get(&self, id: &PoemId) -> Result<Option<MetricRecord>> {
        let path = self.path_for(id);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => return Err(StoreError::Io { path, source }),
        };
        let record = parse_record(&path, &bytes)?;
        if &record.poem_id != id {
            return Err(StoreError::Schema {
                path,
                message: format!("record id {} stored under {id}", record.poem_id),
            });
        }
        Ok(Some(record))
    }

    /// Merges `record` into whatever is stored under its key: metrics present
    /// in `record` replace stored ones, all others are kept.
    pub fn put(&self, record: &MetricRecord) -> Result<()> {
        let path = self.path_for(&record.poem_id);
        record.validate().map_err(|message| StoreError::Schema {
            path: path.clone(),
            message,
        })?;
        let lock = self.lock_for(&record.poem_id);
        let _guard = lock.lock().expect("record lock poisoned");

        let mut merged = self.get(&record.poem_id)?.unwrap_or_else(|| MetricRecord {
            entries: BTreeMap::new(),
            ..record.clone()
        });
        for (tag, metrics) in &record.entries {
            let slot = merged.entries.entry(tag.clone()).or_default();
            for (name, value) in metrics {
                slot.insert(name.clone(), value.clone());
            }
        }
        merged.schema_version = SCHEMA_VERSION;
        self.write_atomic(&path, &serde_json::to_vec(&merged).expect("records serialize"))
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        let io = |path: &Path| {
            let path = path.to_owned();
            move |source| StoreError::Io { path, source }
        };
        let dir = path.parent().expect("fan-out directory");
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let tmp = dir.join(format!(
            ".{}.{}.tmp",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("record"),
            std::process::id()
        ));
        std::fs::write(&tmp, bytes).map_err(io(&tmp))?;
        std::fs::rename(&tmp, path).map_err(io(path))
    }

    /// Writes an auxiliary JSON document (e.g. the corpus index) at a path
    /// relative to the store root.
    pub fn put_document(&self, name: &str, bytes: &[u8]) -> Result<()> {
        self.write_atomic(&self.root.join(name), bytes)
    }

    /// One metric for each of the anthology's poems, sorted by id. Poems
    /// without the metric are counted in `skipped`.
    pub fn scan(&self, anthology: &Anthology, model_tag: &str, metric: &str) -> Result<Scan> {
        let mut ids: Vec<&PoemId> = anthology.poem_ids.iter().collect();
        ids.sort();
        ids.dedup();
        let mut items = Vec::new();
        let mut skipped = 0;
        for id in ids {
            match self.get(id)?.and_then(|r| r.metric(model_tag, metric).cloned()) {
                Some(v) => items.push((id.clone(), v)),
                None => skipped += 1,
            }
        }
        Ok(Scan { items, skipped })
    }

    /// Every record file in the store, sorted by key.
    pub fn keys(&self) -> Result<Vec<PoemId>> {
        let mut out = Vec::new();
        let io = |path: &Path| {
            let path = path.to_owned();
            move |source| StoreError::Io { path, source }
        };
        for entry in std::fs::read_dir(&self.root).map_err(io(&self.root))? {
            let entry = entry.map_err(io(&self.root))?;
            if !entry.file_type().map_err(io(&entry.path()))?.is_dir() {
                continue;
            }
            for file in std::fs::read_dir(entry.path()).map_err(io(&entry.path()))? {
                let name = file.map_err(io(&entry.path()))?.file_name();
                if let Some(id) = name
                    .to_str()
                    .and_then(|n| n.strip_suffix(".json"))
                    .and_then(PoemId::parse)
                {
                    out.push(id);
                }
            }
        }
        out.sort();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{poem_id, Genre};

    fn metrics(pairs: &[(&str, MetricValue)]) -> BTreeMap<String, MetricValue> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn put_get_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let id = poem_id("山");
        let tricky = vec![0.1 + 0.2, 1.0 / 3.0, 5e-324, 1.7976931348623157e308, -0.0];
        let rec = MetricRecord::poem(id.clone()).with_metrics(
            "base",
            metrics(&[
                ("entropy_seq", MetricValue::Array(tricky)),
                ("hd_dist", MetricValue::Nested(vec![MetricValue::Array(vec![1.0]), MetricValue::Array(vec![])])),
            ]),
        );
        store.put(&rec).unwrap();
        assert_eq!(store.get(&id).unwrap(), Some(rec));
        assert!(store.path_for(&id).starts_with(dir.path().join(&id.as_str()[..2])));
        assert_eq!(store.get(&poem_id("水")).unwrap(), None);
    }

    #[test]
    fn puts_merge_by_tag_and_metric() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let id = poem_id("月");
        let one = MetricValue::Array(vec![1.0]);
        let two = MetricValue::Array(vec![2.0]);
        store.put(&MetricRecord::poem(id.clone()).with_metrics("base", metrics(&[("ppl_whole", one.clone()), ("hd_dist", one.clone())]))).unwrap();
        store.put(&MetricRecord::poem(id.clone()).with_metrics("sft", metrics(&[("ppl_whole", two.clone())]))).unwrap();
        store.put(&MetricRecord::poem(id.clone()).with_metrics("base", metrics(&[("ppl_whole", two.clone())]))).unwrap();
        let got = store.get(&id).unwrap().unwrap();
        assert_eq!(got.metric("base", "ppl_whole"), Some(&two));
        assert_eq!(got.metric("base", "hd_dist"), Some(&one));
        assert_eq!(got.metric("sft", "ppl_whole"), Some(&two));
    }

    #[test]
    fn corrupt_file_is_left_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let id = poem_id("风");
        let path = store.path_for(&id);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, b"{not json").unwrap();
        let rec = MetricRecord::poem(id.clone()).with_metrics("base", metrics(&[("ppl_whole", MetricValue::Array(vec![1.0]))]));
        assert!(matches!(store.put(&rec), Err(StoreError::Schema { .. })));
        assert_eq!(std::fs::read(&path).unwrap(), b"{not json");
        assert!(matches!(store.get(&id), Err(StoreError::Schema { .. })));
    }

    #[test]
    fn rejects_unknown_metrics_and_non_finite_values() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let id = poem_id("云");
        let bad_name = MetricRecord::poem(id.clone()).with_metrics("base", metrics(&[("vibes", MetricValue::Array(vec![]))]));
        assert!(store.put(&bad_name).is_err());
        let bad_value = MetricRecord::poem(id).with_metrics("base", metrics(&[("ppl_whole", MetricValue::Array(vec![f64::NAN]))]));
        assert!(store.put(&bad_value).is_err());
    }

    #[test]
    fn version_one_records_are_migrated() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let id = poem_id("雪");
        let path = store.path_for(&id);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        let v1 = format!(r#"{{"schema_version":1,"poem_id":"{id}","model_tag":"base","metrics":{{"ppl_whole":[7.5]}}}}"#);
        std::fs::write(&path, v1).unwrap();
        let got = store.get(&id).unwrap().unwrap();
        assert_eq!(got.schema_version, SCHEMA_VERSION);
        assert_eq!(got.metric("base", "ppl_whole"), Some(&MetricValue::Array(vec![7.5])));
    }

    #[test]
    fn scan_is_sorted_and_counts_missing() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let ids: Vec<PoemId> = ["甲", "乙", "丙"].iter().map(|c| poem_id(c)).collect();
        for id in ids.iter().rev().take(2) {
            store.put(&MetricRecord::poem(id.clone()).with_metrics("base", metrics(&[("ppl_whole", MetricValue::Array(vec![3.0]))]))).unwrap();
        }
        let anth = Anthology {
            name: "Qilv/x".into(),
            genre: Genre::Qilv,
            poem_ids: ids.clone(),
            description: String::new(),
        };
        let scan = store.scan(&anth, "base", "ppl_whole").unwrap();
        assert_eq!(scan.items.len(), 2);
        assert_eq!(scan.skipped, 1);
        assert!(scan.items.windows(2).all(|w| w[0].0 < w[1].0));
        let empty = Anthology { poem_ids: vec![], ..anth };
        assert_eq!(store.scan(&empty, "base", "ppl_whole").unwrap().items.len(), 0);
    }

    #[test]
    fn pair_keys_are_symmetric() {
        let a = poem_id("甲");
        let b = poem_id("乙");
        assert_eq!(pair_key(&a, &b), pair_key(&b, &a));
        assert_eq!(MetricRecord::pair(&a, &b), MetricRecord::pair(&b, &a));
    }

    #[test]
    fn concurrent_puts_to_one_id_keep_every_metric() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let id = poem_id("并发");
        std::thread::scope(|s| {
            for (i, name) in POEM_METRICS.iter().enumerate() {
                let store = store.clone();
                let id = id.clone();
                s.spawn(move || {
                    let rec = MetricRecord::poem(id).with_metrics("base", metrics(&[(name, MetricValue::Array(vec![i as f64]))]));
                    store.put(&rec).unwrap();
                });
            }
        });
        let got = store.get(&id).unwrap().unwrap();
        assert_eq!(got.entries["base"].len(), POEM_METRICS.len());
    }
}
