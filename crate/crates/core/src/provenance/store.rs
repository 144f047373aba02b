//! Append-only JSONL provenance store.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use thiserror::Error;

use super::{FeatureRegistry, ProvenanceRecord, SchemaError};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {error}")]
    Corrupt {
        path: String,
        line: usize,
        error: SchemaError,
    },
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

#[derive(Debug)]
pub struct ProvenanceStore {
    path: Option<PathBuf>,
    lines: Vec<String>,
    records: Vec<ProvenanceRecord>,
    features: Vec<Option<Vec<f64>>>,
    registry: FeatureRegistry,
    reads: AtomicUsize,
}

impl ProvenanceStore {
    pub fn in_memory(registry: &FeatureRegistry) -> Self {
        Self {
            path: None,
            lines: Vec::new(),
            records: Vec::new(),
            features: Vec::new(),
            registry: registry.clone(),
            reads: AtomicUsize::new(0),
        }
    }

    /// Opens (creating if absent) a JSONL store and loads every line.
    pub fn open(path: &Path, registry: &FeatureRegistry) -> Result<Self, StoreError> {
        let io_err = |source| StoreError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut store = Self::in_memory(registry);
        store.path = Some(path.to_path_buf());
        if !path.exists() {
            File::create(path).map_err(io_err)?;
            return Ok(store);
        }
        let reader = BufReader::new(File::open(path).map_err(io_err)?);
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = ProvenanceRecord::from_json(&line).map_err(|error| StoreError::Corrupt {
                path: path.display().to_string(),
                line: i + 1,
                error,
            })?;
            store.push(line, rec);
        }
        Ok(store)
    }

    fn push(&mut self, line: String, rec: ProvenanceRecord) {
        self.features.push(self.registry.featurize(&rec.environmental_context));
        self.records.push(rec);
        self.lines.push(line);
    }

    /// Validates and durably appends a record; returns its id (line index).
    pub fn append(&mut self, record: &ProvenanceRecord) -> Result<usize, StoreError> {
        record.validate()?;
        let line = record.to_line();
        if let Some(path) = &self.path {
            let io_err = |source| StoreError::Io {
                path: path.display().to_string(),
                source,
            };
            let mut f = OpenOptions::new().append(true).open(path).map_err(io_err)?;
            writeln!(f, "{line}").map_err(io_err)?;
            f.flush().map_err(io_err)?;
        }
        self.push(line, record.clone());
        Ok(self.records.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, id: usize) -> Option<&ProvenanceRecord> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.records.get(id)
    }

    /// All records in id order.
    pub fn records(&self) -> &[ProvenanceRecord] {
        self.reads.fetch_add(1, Ordering::Relaxed);
        &self.records
    }

    /// The stored line exactly as written.
    pub fn raw_line(&self, id: usize) -> Option<&str> {
        self.lines.get(id).map(String::as_str)
    }

    /// Normalized feature vector of a record, if its context carries one.
    pub fn features(&self, id: usize) -> Option<&[f64]> {
        self.features.get(id)?.as_deref()
    }

    pub fn registry(&self) -> &FeatureRegistry {
        &self.registry
    }

    /// The `k` records nearest to `query` in Euclidean distance, ascending,
    /// ties broken by lower id. Records without features are skipped.
    pub fn retrieve_similar(&self, query: &[f64], k: usize) -> Vec<(usize, f64)> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        let mut scored: Vec<(usize, f64)> = self
            .features
            .iter()
            .enumerate()
            .filter_map(|(id, f)| {
                let f = f.as_ref()?;
                let d2: f64 = f.iter().zip(query).map(|(a, b)| (a - b).powi(2)).sum();
                Some((id, d2.sqrt()))
            })
            .collect();
        scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }

    /// Read operations served so far (retrievals, lookups, listings).
    pub fn read_count(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }
}
