//! Labeled conversation datasets, the label catalog and stratified splitting.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub index: usize,
    pub name: String,
    #[serde(default)]
    pub description: String,
}

/// Ordered label catalog. Indices are exactly `0..len()`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LabelEntry>", into = "Vec<LabelEntry>")]
pub struct LabelCatalog {
    entries: Vec<LabelEntry>,
}

impl LabelCatalog {
    pub fn new(mut entries: Vec<LabelEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidCatalog("catalog has no labels".into()));
        }
        entries.sort_by_key(|e| e.index);
        let mut names = HashSet::new();
        for (expected, entry) in entries.iter().enumerate() {
            if entry.index != expected {
                return Err(Error::InvalidCatalog(format!(
                    "label indices must be 0..{} without gaps or duplicates, found {} at position {}",
                    entries.len(),
                    entry.index,
                    expected
                )));
            }
            if entry.name.trim().is_empty() {
                return Err(Error::InvalidCatalog(format!(
                    "label {} has an empty name",
                    entry.index
                )));
            }
            if !names.insert(entry.name.as_str()) {
                return Err(Error::InvalidCatalog(format!("duplicate label name `{}`", entry.name)));
            }
        }
        Ok(Self { entries })
    }

    /// The 14 retail customer-support intents, with short descriptions.
    pub fn retail_default() -> Self {
        const LABELS: [(&str, &str); 14] = [
            (
                "Product / Service Availability",
                "Whether products or services are in stock or can be booked",
            ),
            ("General", "General information and issues customer has before buying"),
            (
                "General after Purchase",
                "General questions and issues after a purchase",
            ),
            (
                "Help Integrating the Product",
                "Help assembling, installing or using a product",
            ),
            (
                "Initiate After-sales Service",
                "Starting an after-sales service such as a repair or a complaint",
            ),
            ("Issue Handling", "Handling of problems, complaints and refunds"),
            ("Order Creation", "Placing a new order"),
            (
                "Order Fulfillment Issues",
                "Missing, damaged or incomplete deliveries of an order",
            ),
            (
                "Order Processing",
                "Status, changes or delivery details of an existing order",
            ),
            ("Other", "Anything not covered by the other classes"),
            (
                "Planning & Advice",
                "Help planning a room or project and advice on products",
            ),
            ("Prepare for Exchange & Returns", "Preparing an exchange or a return"),
            (
                "Product / Service Information",
                "Information about products and services",
            ),
            (
                "Service Fulfillment",
                "Delivery of booked services such as assembly or installation",
            ),
        ];
        let entries = LABELS
            .iter()
            .enumerate()
            .map(|(index, (name, description))| LabelEntry {
                index,
                name: (*name).to_string(),
                description: (*description).to_string(),
            })
            .collect();
        Self::new(entries).expect("built-in catalog is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<LabelEntry> = serde_json::from_str(&raw).map_err(|e| Error::MalformedFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::new(entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), &self.entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LabelEntry] {
        &self.entries
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.entries.get(index).map(|e| e.name.as_str())
    }
}

impl TryFrom<Vec<LabelEntry>> for LabelCatalog {
    type Error = Error;
    fn try_from(entries: Vec<LabelEntry>) -> Result<Self> {
        Self::new(entries)
    }
}

impl From<LabelCatalog> for Vec<LabelEntry> {
    fn from(catalog: LabelCatalog) -> Self {
        catalog.entries
    }
}

/// One conversation transcript with an optional gold label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationRecord {
    pub id: String,
    pub text: String,
    pub label: Option<usize>,
}

impl ConversationRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Option<usize>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    catalog: LabelCatalog,
    records: Vec<ConversationRecord>,
}

impl Dataset {
    pub fn new(catalog: LabelCatalog, records: Vec<ConversationRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for record in &records {
            check_record(record, &catalog)?;
            if !seen.insert(record.id.as_str()) {
                return Err(Error::DuplicateId(record.id.clone()));
            }
        }
        Ok(Self { catalog, records })
    }

    pub fn catalog(&self) -> &LabelCatalog {
        &self.catalog
    }

    pub fn records(&self) -> &[ConversationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ConversationRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Records whose id is in `ids`, in dataset order.
    pub fn subset(&self, ids: &BTreeSet<String>) -> Dataset {
        Dataset {
            catalog: self.catalog.clone(),
            records: self.records.iter().filter(|r| ids.contains(&r.id)).cloned().collect(),
        }
    }

    /// Records grouped by label, dataset order within each group. Unlabeled
    /// records are skipped.
    pub fn by_label(&self) -> Vec<Vec<&ConversationRecord>> {
        let mut groups = vec![Vec::new(); self.catalog.len()];
        for record in &self.records {
            if let Some(label) = record.label {
                groups[label].push(record);
            }
        }
        groups
    }
}

fn check_record(record: &ConversationRecord, catalog: &LabelCatalog) -> Result<()> {
    if record.id.is_empty() {
        return Err(Error::InvalidCatalog("record with empty id".into()));
    }
    match record.label {
        Some(label) if label >= catalog.len() => Err(Error::LabelOutOfRange {
            id: record.id.clone(),
            label,
            n_labels: catalog.len(),
        }),
        _ => Ok(()),
    }
}

/// Reads a line-delimited dataset file (`{"id", "text", "label"}` per line).
/// Blank lines are ignored.
pub fn load_dataset(path: impl AsRef<Path>, catalog: &LabelCatalog) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ConversationRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        if record.id.is_empty() {
            return Err(Error::MalformedLine {
                path: path.to_path_buf(),
                line: n + 1,
                message: "empty id".into(),
            });
        }
        records.push(record);
    }
    Dataset::new(catalog.clone(), records)
}

pub fn write_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    write_jsonl(path.as_ref(), dataset.records())
}

/// Per-label record counts over the full catalog.
pub fn label_distribution(dataset: &Dataset) -> Vec<usize> {
    let mut counts = vec![0; dataset.catalog().len()];
    for label in dataset.records().iter().filter_map(|r| r.label) {
        counts[label] += 1;
    }
    counts
}

/// Train+dev / validation / test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct SplitRatios([f64; 3]);

impl SplitRatios {
    pub fn new(ratios: [f64; 3]) -> Result<Self> {
        let sum: f64 = ratios.iter().sum();
        if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidRatios(ratios));
        }
        Ok(Self(ratios))
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self([0.5, 0.25, 0.25])
    }
}

impl TryFrom<[f64; 3]> for SplitRatios {
    type Error = Error;
    fn try_from(value: [f64; 3]) -> Result<Self> {
        Self::new(value)
    }
}

impl From<SplitRatios> for [f64; 3] {
    fn from(value: SplitRatios) -> Self {
        value.0
    }
}

/// Largest-remainder apportionment of `n` items by `ratios`. Equal remainders
/// go to the earlier subset.
pub fn apportion(n: usize, ratios: &SplitRatios) -> [usize; 3] {
    let quotas = ratios.0.map(|r| r * n as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train_dev: BTreeSet<String>,
    pub validation: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl SplitAssignment {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::MalformedFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    /// Checks disjointness and that the union is exactly the dataset's ids.
    pub fn validate_against(&self, dataset: &Dataset) -> Result<()> {
        let known: HashSet<&str> = dataset.records().iter().map(|r| r.id.as_str()).collect();
        let mut seen = HashSet::new();
        for id in self.train_dev.iter().chain(&self.validation).chain(&self.test) {
            if !seen.insert(id.as_str()) {
                return Err(Error::Config(format!("id `{id}` is assigned to more than one subset")));
            }
            if !known.contains(id.as_str()) {
                return Err(Error::Config(format!("split references unknown id `{id}`")));
            }
        }
        if seen.len() != dataset.len() {
            return Err(Error::Config(format!(
                "split covers {} of {} records",
                seen.len(),
                dataset.len()
            )));
        }
        Ok(())
    }
}

/// Stratified three-way split. Each class is shuffled with its own seeded
/// stream and cut by largest-remainder counts.
pub fn stratified_split(dataset: &Dataset, ratios: &SplitRatios, seed: u64) -> Result<SplitAssignment> {
    if let Some(r) = dataset.records().iter().find(|r| r.label.is_none()) {
        return Err(Error::Unlabeled(r.id.clone()));
    }
    let mut split = SplitAssignment::default();
    for (label, members) in dataset.by_label().into_iter().enumerate() {
        if members.is_empty() {
            return Err(Error::EmptyClass(label));
        }
        let mut ids: Vec<&str> = members.iter().map(|r| r.id.as_str()).collect();
        ids.shuffle(&mut rng::stream(seed, Domain::Split, label as u64));
        let [train, validation, _] = apportion(ids.len(), ratios);
        for (pos, id) in ids.into_iter().enumerate() {
            let target = if pos < train {
                &mut split.train_dev
            } else if pos < train + validation {
                &mut split.validation
            } else {
                &mut split.test
            };
            target.insert(id.to_string());
        }
    }
    Ok(split)
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
