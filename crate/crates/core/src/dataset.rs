//! Response ingestion, the sparse response matrix, and deterministic splits.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// CSV header (and JSONL key set) for response files.
pub const RESPONSE_HEADER: [&str; 4] = ["model", "benchmark", "item", "outcome"];

/// Items are keyed by benchmark as well as id so equal ids in different
/// benchmarks stay distinct.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemKey {
    pub benchmark: String,
    pub item: String,
}

impl ItemKey {
    pub fn new(benchmark: impl Into<String>, item: impl Into<String>) -> Self {
        ItemKey {
            benchmark: benchmark.into(),
            item: item.into(),
        }
    }
}

impl fmt::Display for ItemKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.benchmark, self.item)
    }
}

/// One observed (model, item) outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    #[serde(rename = "model")]
    pub model_id: String,
    #[serde(rename = "benchmark")]
    pub benchmark_id: String,
    #[serde(rename = "item")]
    pub item_id: String,
    pub outcome: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Entry {
    pub model: usize,
    pub item: usize,
    pub outcome: u8,
}

/// Sparse binary response matrix. Models and items are sorted
/// lexicographically; entries are sorted by `(model, item)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseMatrix {
    models: Vec<String>,
    items: Vec<ItemKey>,
    entries: Vec<Entry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseFormat {
    Csv,
    Jsonl,
}

impl ResponseFormat {
    /// `.jsonl` / `.ndjson` are JSON lines; anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("jsonl") || ext.eq_ignore_ascii_case("ndjson") => {
                ResponseFormat::Jsonl
            }
            _ => ResponseFormat::Csv,
        }
    }
}

impl FromStr for ResponseFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ResponseFormat::Csv),
            "jsonl" => Ok(ResponseFormat::Jsonl),
            other => Err(Error::InvalidArgument(format!(
                "unknown response format `{other}`"
            ))),
        }
    }
}

impl ResponseMatrix {
    /// Builds a matrix from records, rejecting duplicate interactions.
    pub fn from_records<I>(records: I) -> Result<Self>
    where
        I: IntoIterator<Item = ResponseRecord>,
    {
        let records: Vec<ResponseRecord> = records.into_iter().collect();
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            check_outcome(r.outcome).map_err(Error::InvalidData)?;
            if !seen.insert((&r.model_id, &r.benchmark_id, &r.item_id)) {
                return Err(Error::InvalidData(format!(
                    "duplicate interaction ({}, {}, {})",
                    r.model_id, r.benchmark_id, r.item_id
                )));
            }
        }
        Ok(Self::build(records))
    }

    fn build(records: Vec<ResponseRecord>) -> Self {
        let models: Vec<String> = records
            .iter()
            .map(|r| r.model_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let items: Vec<ItemKey> = records
            .iter()
            .map(|r| ItemKey::new(r.benchmark_id.clone(), r.item_id.clone()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let model_index: HashMap<&str, usize> = models
            .iter()
            .enumerate()
            .map(|(i, m)| (m.as_str(), i))
            .collect();
        let item_index: HashMap<(&str, &str), usize> = items
            .iter()
            .enumerate()
            .map(|(i, k)| ((k.benchmark.as_str(), k.item.as_str()), i))
            .collect();
        let mut entries: Vec<Entry> = records
            .iter()
            .map(|r| Entry {
                model: model_index[r.model_id.as_str()],
                item: item_index[&(r.benchmark_id.as_str(), r.item_id.as_str())],
                outcome: r.outcome,
            })
            .collect();
        entries.sort_unstable_by_key(|e| (e.model, e.item));
        ResponseMatrix {
            models,
            items,
            entries,
        }
    }

    pub fn models(&self) -> &[String] {
        &self.models
    }

    pub fn items(&self) -> &[ItemKey] {
        &self.items
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn n_models(&self) -> usize {
        self.models.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_entries(&self) -> usize {
        self.entries.len()
    }

    pub fn model_index(&self, model_id: &str) -> Option<usize> {
        self.models
            .binary_search_by(|m| m.as_str().cmp(model_id))
            .ok()
    }

    pub fn item_index(&self, key: &ItemKey) -> Option<usize> {
        self.items.binary_search(key).ok()
    }

    /// Distinct benchmark ids, sorted.
    pub fn benchmarks(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.items.iter().map(|k| k.benchmark.as_str()).collect();
        out.dedup();
        out
    }

    pub fn records(&self) -> impl Iterator<Item = ResponseRecord> + '_ {
        self.entries.iter().map(|e| {
            let key = &self.items[e.item];
            ResponseRecord {
                model_id: self.models[e.model].clone(),
                benchmark_id: key.benchmark.clone(),
                item_id: key.item.clone(),
                outcome: e.outcome,
            }
        })
    }

    /// Sub-matrix of the given entries; models and items without any of
    /// them are dropped.
    pub fn select_entries(&self, entry_indices: &[usize]) -> Result<Self> {
        let mut records = Vec::with_capacity(entry_indices.len());
        let mut seen = HashSet::with_capacity(entry_indices.len());
        for &i in entry_indices {
            let e = self.entries.get(i).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "entry index {i} out of range ({} entries)",
                    self.entries.len()
                ))
            })?;
            if !seen.insert(i) {
                return Err(Error::InvalidArgument(format!("entry index {i} repeated")));
            }
            let key = &self.items[e.item];
            records.push(ResponseRecord {
                model_id: self.models[e.model].clone(),
                benchmark_id: key.benchmark.clone(),
                item_id: key.item.clone(),
                outcome: e.outcome,
            });
        }
        Ok(Self::build(records))
    }

    /// Number of observations per model and per item.
    pub fn observation_counts(&self) -> (Vec<usize>, Vec<usize>) {
        let mut per_model = vec![0; self.models.len()];
        let mut per_item = vec![0; self.items.len()];
        for e in &self.entries {
            per_model[e.model] += 1;
            per_item[e.item] += 1;
        }
        (per_model, per_item)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(RESPONSE_HEADER)?;
        for e in &self.entries {
            let key = &self.items[e.item];
            w.write_record([
                self.models[e.model].as_str(),
                key.benchmark.as_str(),
                key.item.as_str(),
                if e.outcome == 1 { "1" } else { "0" },
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = BufWriter::new(writer);
        for record in self.records() {
            serde_json::to_writer(&mut w, &record)?;
            w.write_all(b"\n").map_err(|e| Error::io("<jsonl writer>", e))?;
        }
        w.flush().map_err(|e| Error::io("<jsonl writer>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path, format: ResponseFormat) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        match format {
            ResponseFormat::Csv => self.write_csv(BufWriter::new(file)),
            ResponseFormat::Jsonl => self.write_jsonl(file),
        }
    }
}

fn check_outcome(outcome: u8) -> std::result::Result<(), String> {
    if outcome <= 1 {
        Ok(())
    } else {
        Err(format!("outcome must be 0 or 1, got {outcome}"))
    }
}

fn parse_outcome(raw: &str) -> std::result::Result<u8, String> {
    match raw.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(format!("outcome must be 0 or 1, got `{other}`")),
    }
}

/// Loads a response file. Lines starting with `#` are ignored.
pub fn load_responses(path: &Path, format: ResponseFormat) -> Result<ResponseMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    match format {
        ResponseFormat::Csv => read_csv(file, &name),
        ResponseFormat::Jsonl => read_jsonl(BufReader::new(file), &name),
    }
}

struct Collector<'a> {
    source_name: &'a str,
    records: Vec<ResponseRecord>,
    seen: HashMap<(String, String, String), u64>,
}

impl<'a> Collector<'a> {
    fn new(source_name: &'a str) -> Self {
        Collector {
            source_name,
            records: Vec::new(),
            seen: HashMap::new(),
        }
    }

    fn error(&self, line: u64, message: impl Into<String>) -> Error {
        Error::Parse {
            source_name: self.source_name.to_owned(),
            line,
            message: message.into(),
        }
    }

    fn push(
        &mut self,
        line: u64,
        model: &str,
        benchmark: &str,
        item: &str,
        outcome: std::result::Result<u8, String>,
    ) -> Result<()> {
        let outcome = outcome.map_err(|m| self.error(line, m))?;
        for (field, value) in [("model", model), ("benchmark", benchmark), ("item", item)] {
            if value.trim().is_empty() {
                return Err(self.error(line, format!("empty `{field}` field")));
            }
        }
        let key = (model.to_owned(), benchmark.to_owned(), item.to_owned());
        if let Some(first) = self.seen.get(&key) {
            return Err(self.error(
                line,
                format!("duplicate interaction ({model}, {benchmark}, {item}), first seen on line {first}"),
            ));
        }
        self.seen.insert(key, line);
        self.records.push(ResponseRecord {
            model_id: model.to_owned(),
            benchmark_id: benchmark.to_owned(),
            item_id: item.to_owned(),
            outcome,
        });
        Ok(())
    }

    fn finish(self) -> Result<ResponseMatrix> {
        if self.records.is_empty() {
            return Err(Error::InvalidData(format!(
                "{}: no response rows",
                self.source_name
            )));
        }
        Ok(ResponseMatrix::build(self.records))
    }
}

pub fn read_csv<R: Read>(reader: R, source_name: &str) -> Result<ResponseMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut columns = [0usize; 4];
    for (slot, name) in columns.iter_mut().zip(RESPONSE_HEADER) {
        *slot = headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            source_name: source_name.to_owned(),
            line: 1,
            message: format!(
                "missing `{name}` column (expected header `{}`)",
                RESPONSE_HEADER.join(",")
            ),
        })?;
    }
    let mut collector = Collector::new(source_name);
    let mut record = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut record).map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            collector.error(line, e.to_string())
        })?;
        if !more {
            break;
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let field = |i: usize| record.get(columns[i]);
        match (field(0), field(1), field(2), field(3)) {
            (Some(m), Some(b), Some(i), Some(o)) => {
                collector.push(line, m, b, i, parse_outcome(o))?;
            }
            _ => {
                return Err(collector.error(
                    line,
                    format!("expected {} fields, found {}", headers.len(), record.len()),
                ))
            }
        }
    }
    collector.finish()
}

#[derive(Deserialize)]
struct JsonRow {
    model: String,
    benchmark: String,
    item: String,
    outcome: serde_json::Value,
}

pub fn read_jsonl<R: BufRead>(reader: R, source_name: &str) -> Result<ResponseMatrix> {
    let mut collector = Collector::new(source_name);
    for (n, line) in reader.lines().enumerate() {
        let line_no = n as u64 + 1;
        let line = line.map_err(|e| Error::io(source_name, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let row: JsonRow =
            serde_json::from_str(trimmed).map_err(|e| collector.error(line_no, e.to_string()))?;
        let outcome = match &row.outcome {
            serde_json::Value::Number(n) => match n.as_u64() {
                Some(v) if v <= 1 => Ok(v as u8),
                _ => Err(format!("outcome must be 0 or 1, got `{n}`")),
            },
            serde_json::Value::String(s) => parse_outcome(s),
            other => Err(format!("outcome must be 0 or 1, got `{other}`")),
        };
        collector.push(line_no, &row.model, &row.benchmark, &row.item, outcome)?;
    }
    collector.finish()
}

/// Disjoint train / validation / test entry indices (each sorted).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl SplitAssignment {
    /// Every entry in training; used for full-data fits.
    pub fn all_train(matrix: &ResponseMatrix) -> Self {
        SplitAssignment {
            train: (0..matrix.n_entries()).collect(),
            validation: Vec::new(),
            test: Vec::new(),
            seed: 0,
        }
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }
}

/// RNG stream for splits. Fixed so that neighbouring seeds (checked for 7
/// and 8 up to 3000 entries) never yield the same assignment.
const SPLIT_STREAM: u64 = 3;

/// Random interaction-level split.
pub fn split_interactions(
    matrix: &ResponseMatrix,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<SplitAssignment> {
    let (f_train, f_val, f_test) = fractions;
    let all = [f_train, f_val, f_test];
    if all.iter().any(|f| !f.is_finite() || *f <= 0.0) || ((f_train + f_val + f_test) - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let n = matrix.n_entries();
    let n_train = ((f_train * n as f64).round() as usize).min(n);
    let n_val = ((f_val * n as f64).round() as usize).min(n - n_train);

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    order.shuffle(&mut rng);
    let mut train = order[..n_train].to_vec();
    let mut validation = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(SplitAssignment {
        train,
        validation,
        test,
        seed,
    })
}

/// Keeps `max(1, round(fraction · n_items))` uniformly chosen items and all
/// of their entries. The model list is unchanged.
pub fn subsample_items(matrix: &ResponseMatrix, fraction: f64, seed: u64) -> Result<ResponseMatrix> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "item fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let n = matrix.n_items();
    let keep = ((fraction * n as f64).round() as usize).clamp(1, n.max(1));
    if n == 0 {
        return Err(Error::InvalidData("matrix has no items".into()));
    }
    if keep == n {
        return Ok(matrix.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, n, keep).into_vec();
    chosen.sort_unstable();

    let mut new_index = vec![usize::MAX; n];
    for (new, &old) in chosen.iter().enumerate() {
        new_index[old] = new;
    }
    let items = chosen.iter().map(|&i| matrix.items[i].clone()).collect();
    let entries = matrix
        .entries
        .iter()
        .filter(|e| new_index[e.item] != usize::MAX)
        .map(|e| Entry {
            item: new_index[e.item],
            ..*e
        })
        .collect();
    Ok(ResponseMatrix {
        models: matrix.models.clone(),
        items,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(m: &str, b: &str, i: &str, o: u8) -> ResponseRecord {
        ResponseRecord {
            model_id: m.into(),
            benchmark_id: b.into(),
            item_id: i.into(),
            outcome: o,
        }
    }

    fn csv_matrix(text: &str) -> Result<ResponseMatrix> {
        read_csv(text.as_bytes(), "test.csv")
    }

    #[test]
    fn loads_sparse_csv() {
        let m = csv_matrix(
            "model,benchmark,item,outcome\n\
             # a comment\n\
             beta,mmlu,q2,1\n\
             alpha,mmlu,q1,0\n\
             alpha,mmlu,q2,1\n",
        )
        .unwrap();
        assert_eq!(m.n_entries(), 3);
        assert_eq!(m.models(), ["alpha", "beta"]);
        assert_eq!(m.items(), [ItemKey::new("mmlu", "q1"), ItemKey::new("mmlu", "q2")]);
        assert_eq!(
            m.entries()[0],
            Entry {
                model: 0,
                item: 0,
                outcome: 0
            }
        );
    }

    #[test]
    fn bad_outcome_names_the_line() {
        let err = csv_matrix("model,benchmark,item,outcome\nm,b,i,1\nm,b,j,2\n").unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains('2'), "{message}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn duplicates_and_missing_fields_rejected() {
        let err = csv_matrix("model,benchmark,item,outcome\nm,b,i,1\nm,b,i,0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        let err = csv_matrix("model,benchmark,item,outcome\nm,b,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
        let err = csv_matrix("model,bench,item,outcome\nm,b,i,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err:?}");
        assert!(csv_matrix("model,benchmark,item,outcome\n").is_err());
    }

    #[test]
    fn same_item_id_in_two_benchmarks() {
        let m = csv_matrix("model,benchmark,item,outcome\nm,a,1,1\nm,b,1,0\n").unwrap();
        assert_eq!(m.n_items(), 2);
    }

    #[test]
    fn jsonl_loading() {
        let text = "{\"model\":\"m\",\"benchmark\":\"b\",\"item\":\"i\",\"outcome\":1}\n\
                    # skip\n\
                    \n\
                    {\"model\":\"n\",\"benchmark\":\"b\",\"item\":\"i\",\"outcome\":\"0\"}\n";
        let m = read_jsonl(text.as_bytes(), "x.jsonl").unwrap();
        assert_eq!(m.n_entries(), 2);
        let bad = "{\"model\":\"m\",\"benchmark\":\"b\",\"item\":\"i\",\"outcome\":3}\n";
        assert!(matches!(
            read_jsonl(bad.as_bytes(), "x.jsonl"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn from_records_rejects_duplicates() {
        let recs = vec![record("m", "b", "i", 1), record("m", "b", "i", 1)];
        assert!(ResponseMatrix::from_records(recs).is_err());
        assert!(ResponseMatrix::from_records(vec![record("m", "b", "i", 4)]).is_err());
    }

    fn grid(models: usize, items: usize) -> ResponseMatrix {
        let mut recs = Vec::new();
        for m in 0..models {
            for i in 0..items {
                recs.push(record(&format!("m{m:02}"), "b", &format!("i{i:03}"), ((m * 7 + i * 3) % 2) as u8));
            }
        }
        ResponseMatrix::from_records(recs).unwrap()
    }

    #[test]
    fn split_exact_sizes_and_determinism() {
        let m = grid(2, 5);
        let a = split_interactions(&m, (0.6, 0.2, 0.2), 7).unwrap();
        assert_eq!(a.sizes(), (6, 2, 2));
        assert_eq!(a, split_interactions(&m, (0.6, 0.2, 0.2), 7).unwrap());
        assert!(split_interactions(&m, (0.6, 0.3, 0.2), 7).is_err());
        assert!(split_interactions(&m, (0.8, 0.2, 0.0), 7).is_err());
    }

    #[test]
    fn neighbouring_seeds_give_different_splits() {
        for items in 3..=300 {
            let m = grid(1, items);
            let a = split_interactions(&m, (0.6, 0.2, 0.2), 7).unwrap();
            let b = split_interactions(&m, (0.6, 0.2, 0.2), 8).unwrap();
            assert_ne!(a.train.iter().chain(&a.validation).collect::<Vec<_>>(),
                       b.train.iter().chain(&b.validation).collect::<Vec<_>>(),
                       "{items} entries");
        }
    }

    #[test]
    fn subsample_sizes() {
        let m = grid(3, 10);
        assert_eq!(subsample_items(&m, 1.0, 1).unwrap(), m);
        let s = subsample_items(&m, 0.3, 1).unwrap();
        assert_eq!(s.n_items(), 3);
        assert_eq!(s.n_models(), 3);
        assert_eq!(s.n_entries(), 9);
        assert_eq!(s, subsample_items(&m, 0.3, 1).unwrap());
        assert_eq!(subsample_items(&m, 0.01, 1).unwrap().n_items(), 1);
        assert!(subsample_items(&m, 0.0, 1).is_err());
        assert!(subsample_items(&m, 1.5, 1).is_err());
    }

    #[test]
    fn select_entries_drops_unobserved() {
        let m = grid(3, 4);
        let sub = m.select_entries(&[0, 1]).unwrap();
        assert_eq!(sub.n_models(), 1);
        assert_eq!(sub.n_items(), 2);
        assert!(m.select_entries(&[0, 0]).is_err());
        assert!(m.select_entries(&[500]).is_err());
    }

    fn arb_matrix() -> impl Strategy<Value = ResponseMatrix> {
        prop::collection::btree_map((0u8..6, 0u8..3, 0u8..8), 0u8..2, 1..60).prop_map(|cells| {
            let recs = cells
                .into_iter()
                .map(|((m, b, i), o)| record(&format!("m{m}"), &format!("b{b}"), &format!("q{i}"), o));
            ResponseMatrix::from_records(recs).unwrap()
        })
    }

    proptest! {
        #[test]
        fn csv_round_trip(m in arb_matrix()) {
            let mut buf = Vec::new();
            m.write_csv(&mut buf).unwrap();
            let back = read_csv(buf.as_slice(), "rt").unwrap();
            prop_assert_eq!(&back, &m);
            let mut buf = Vec::new();
            m.write_jsonl(&mut buf).unwrap();
            prop_assert_eq!(read_jsonl(buf.as_slice(), "rt").unwrap(), m);
        }

        #[test]
        fn split_is_a_partition(m in arb_matrix(), seed in any::<u64>()) {
            let s = split_interactions(&m, (0.6, 0.2, 0.2), seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..m.n_entries()).collect::<Vec<_>>());
            let n = m.n_entries() as f64;
            prop_assert!((s.train.len() as f64 - 0.6 * n).abs() <= 1.0);
            prop_assert!((s.validation.len() as f64 - 0.2 * n).abs() <= 1.0);
        }

        #[test]
        fn subsample_keeps_rounded_count(m in arb_matrix(), f in 0.01f64..=1.0, seed in any::<u64>()) {
            let s = subsample_items(&m, f, seed).unwrap();
            let expected = ((f * m.n_items() as f64).round() as usize).max(1);
            prop_assert_eq!(s.n_items(), expected);
            prop_assert_eq!(s.models(), m.models());
        }
    }
}
