//! Expert-knowledge snippets with structured parameter suggestions.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::programs::PrimitiveId;

const BUILTIN: &str = include_str!("../../data/expert_knowledge.json");

/// A suggested single-parameter edit family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridItem {
    /// Multiply the current value.
    Scale {
        program_id: String,
        param: String,
        factors: Vec<f64>,
    },
    /// Set absolute values.
    Set {
        program_id: String,
        param: String,
        values: Vec<f64>,
    },
    /// Quarantine whichever sender produced the most inconsistent reports.
    QuarantineMostInconsistent { program_id: String, ttl: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertSnippet {
    pub snippet_id: String,
    pub primitive: PrimitiveId,
    pub text: String,
    pub tags: Vec<String>,
    #[serde(default)]
    pub grid: Vec<GridItem>,
}

#[derive(Debug, Deserialize)]
struct Document {
    version: String,
    snippets: Vec<ExpertSnippet>,
}

#[derive(Debug)]
pub struct SnippetRegistry {
    pub version: String,
    snippets: Vec<ExpertSnippet>,
    reads: AtomicUsize,
}

impl Clone for SnippetRegistry {
    fn clone(&self) -> Self {
        Self {
            version: self.version.clone(),
            snippets: self.snippets.clone(),
            reads: AtomicUsize::new(0),
        }
    }
}

impl SnippetRegistry {
    /// A fresh copy of the shipped registry with its own access counter.
    pub fn builtin() -> SnippetRegistry {
        static REG: OnceLock<SnippetRegistry> = OnceLock::new();
        REG.get_or_init(|| SnippetRegistry::from_json(BUILTIN).expect("shipped snippets"))
            .clone()
    }

    pub fn from_json(text: &str) -> Result<SnippetRegistry, String> {
        let doc: Document = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let mut snippets = doc.snippets;
        if let Some(s) = snippets.iter().find(|s| s.tags.is_empty()) {
            return Err(format!("snippet `{}` has no tags", s.snippet_id));
        }
        snippets.sort_by(|a, b| a.snippet_id.cmp(&b.snippet_id));
        if snippets.windows(2).any(|w| w[0].snippet_id == w[1].snippet_id) {
            return Err("duplicate snippet_id".into());
        }
        Ok(SnippetRegistry {
            version: doc.version,
            snippets,
            reads: AtomicUsize::new(0),
        })
    }

    /// Snippets of `primitive` sharing at least one tag with `tags`, ordered
    /// by id. An empty tag filter returns every snippet of the primitive.
    pub fn snippets_for(&self, primitive: PrimitiveId, tags: &[String]) -> Vec<ExpertSnippet> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.snippets
            .iter()
            .filter(|s| s.primitive == primitive)
            .filter(|s| tags.is_empty() || s.tags.iter().any(|t| tags.contains(t)))
            .cloned()
            .collect()
    }

    /// As [`Self::snippets_for`] keyed by a primitive code such as `"L2"`;
    /// unknown codes match nothing.
    pub fn snippets_for_code(&self, code: &str, tags: &[String]) -> Vec<ExpertSnippet> {
        match PrimitiveId::from_code(code) {
            Some(p) => self.snippets_for(p, tags),
            None => Vec::new(),
        }
    }

    /// Lookups served so far.
    pub fn read_count(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.snippets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }
}
