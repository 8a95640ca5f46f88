//! Annotation dataset schema, ingestion, splitting and shared statistics.

mod io;
mod split;
mod stats;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::baselines::majority_vote;
use crate::error::{Error, Result};

pub use io::{ingest_dataset, read_dataset, write_dataset_csv, Ingested, RowError, SchemaSpec};
pub use split::{
    allocate_stratified, stratified_partition, stratified_split, stratified_subsample, split_sizes,
    Split, SplitSpec,
};
pub use stats::{mean, minmax_normalize, pearson_correlation, population_variance, MinMax};

/// Annotator qualification tier on the crowdsourcing platform.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Qualification {
    Master,
    Normal,
    #[default]
    Unknown,
}

impl Qualification {
    pub fn as_str(self) -> &'static str {
        match self {
            Qualification::Master => "master",
            Qualification::Normal => "normal",
            Qualification::Unknown => "unknown",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "master" | "masters" => Some(Qualification::Master),
            "normal" => Some(Qualification::Normal),
            "unknown" | "" => Some(Qualification::Unknown),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextUnit {
    pub text_id: String,
    pub text: String,
}

/// One annotator's labels for one text, with the behavioral metadata
/// recorded by the platform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub text_id: String,
    pub annotator_id: String,
    pub labels: BTreeMap<String, i64>,
    pub worktime_s: f64,
    pub annotator_throughput: u64,
    pub qualification: Qualification,
}

/// Target label name plus the ordered auxiliary label names.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub target: String,
    pub aux: Vec<String>,
}

impl LabelSchema {
    pub fn new(target: impl Into<String>, aux: Vec<String>) -> Self {
        LabelSchema { target: target.into(), aux }
    }

    pub fn n_aux(&self) -> usize {
        self.aux.len()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.target == label || self.aux.iter().any(|a| a == label)
    }
}

/// Validated, immutable collection of texts and their annotation records.
#[derive(Clone, Debug)]
pub struct Dataset {
    texts: Vec<TextUnit>,
    records: Vec<AnnotationRecord>,
    schema: LabelSchema,
    gold: BTreeMap<String, i64>,
    text_index: HashMap<String, usize>,
    by_text: Vec<Vec<usize>>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.texts == other.texts
            && self.records == other.records
            && self.schema == other.schema
            && self.gold == other.gold
    }
}

impl Dataset {
    pub fn new(
        texts: Vec<TextUnit>,
        records: Vec<AnnotationRecord>,
        schema: LabelSchema,
        gold: BTreeMap<String, i64>,
    ) -> Result<Self> {
        if schema.aux.is_empty() {
            return Err(Error::Schema("at least one auxiliary label is required".into()));
        }
        if schema.aux.iter().any(|a| a == &schema.target) {
            return Err(Error::Schema(format!(
                "target '{}' is also listed as an auxiliary label",
                schema.target
            )));
        }
        let mut text_index = HashMap::with_capacity(texts.len());
        for (i, t) in texts.iter().enumerate() {
            if t.text.is_empty() {
                return Err(Error::Schema(format!("text '{}' is empty", t.text_id)));
            }
            if text_index.insert(t.text_id.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate text_id '{}'", t.text_id)));
            }
        }
        let mut by_text = vec![Vec::new(); texts.len()];
        for (r, rec) in records.iter().enumerate() {
            let Some(&ti) = text_index.get(&rec.text_id) else {
                return Err(Error::Schema(format!(
                    "record for unknown text_id '{}'",
                    rec.text_id
                )));
            };
            if !(rec.worktime_s.is_finite() && rec.worktime_s > 0.0) {
                return Err(Error::Schema(format!(
                    "worktime must be positive, got {} for '{}'",
                    rec.worktime_s, rec.text_id
                )));
            }
            if rec.annotator_throughput < 1 {
                return Err(Error::Schema(format!(
                    "annotator throughput must be >= 1 for '{}'",
                    rec.annotator_id
                )));
            }
            if let Some(name) = rec.labels.keys().find(|k| !schema.contains(k)) {
                return Err(Error::Schema(format!("label '{name}' is not in the schema")));
            }
            by_text[ti].push(r);
        }
        if let Some(i) = by_text.iter().position(|v| v.is_empty()) {
            return Err(Error::Schema(format!("text '{}' has no annotation records", texts[i].text_id)));
        }
        if let Some(id) = gold.keys().find(|id| !text_index.contains_key(*id)) {
            return Err(Error::Schema(format!("gold value for unknown text_id '{id}'")));
        }
        Ok(Dataset { texts, records, schema, gold, text_index, by_text })
    }

    pub fn texts(&self) -> &[TextUnit] {
        &self.texts
    }

    pub fn records(&self) -> &[AnnotationRecord] {
        &self.records
    }

    pub fn schema(&self) -> &LabelSchema {
        &self.schema
    }

    pub fn gold(&self) -> &BTreeMap<String, i64> {
        &self.gold
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn text_index(&self, text_id: &str) -> Option<usize> {
        self.text_index.get(text_id).copied()
    }

    pub fn records_for(&self, text: usize) -> impl Iterator<Item = &AnnotationRecord> + '_ {
        self.by_text[text].iter().map(move |&r| &self.records[r])
    }

    /// Raw label values the annotators of `text` assigned to `label`.
    pub fn votes(&self, text: usize, label: &str) -> Vec<i64> {
        self.records_for(text).filter_map(|r| r.labels.get(label).copied()).collect()
    }

    /// Majority-vote binary class of `label` for `text` (values > 0 count as
    /// positive; ties go to the negative class).
    pub fn majority_class(&self, text: usize, label: &str) -> Option<bool> {
        let votes: Vec<i64> = self.votes(text, label).into_iter().map(|v| i64::from(v > 0)).collect();
        majority_vote(&votes).ok().map(|v| v == 1)
    }

    /// Binary target class: the gold value when present, otherwise the
    /// annotators' majority vote.
    pub fn target_class(&self, text: usize) -> Option<bool> {
        match self.gold.get(&self.texts[text].text_id) {
            Some(&g) => Some(g > 0),
            None => self.majority_class(text, &self.schema.target),
        }
    }

    /// Binary class for any schema label; the target resolves through gold.
    pub fn class_of(&self, text: usize, label: &str) -> Option<bool> {
        if label == self.schema.target {
            self.target_class(text)
        } else {
            self.majority_class(text, label)
        }
    }

    /// Target classes for every text, failing on the first text without one.
    pub fn target_classes(&self) -> Result<Vec<bool>> {
        self.classes(&self.schema.target.clone())
    }

    pub fn classes(&self, label: &str) -> Result<Vec<bool>> {
        (0..self.len())
            .map(|i| {
                self.class_of(i, label).ok_or_else(|| {
                    Error::Schema(format!(
                        "text '{}' has no value for label '{label}'",
                        self.texts[i].text_id
                    ))
                })
            })
            .collect()
    }

    /// New dataset restricted to the given text indices (order preserved).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut texts = Vec::with_capacity(indices.len());
        let mut records = Vec::new();
        let mut gold = BTreeMap::new();
        for &i in indices {
            let t = &self.texts[i];
            texts.push(t.clone());
            records.extend(self.records_for(i).cloned());
            if let Some(&g) = self.gold.get(&t.text_id) {
                gold.insert(t.text_id.clone(), g);
            }
        }
        Dataset::new(texts, records, self.schema.clone(), gold)
            .expect("subset of a valid dataset is valid")
    }
}
