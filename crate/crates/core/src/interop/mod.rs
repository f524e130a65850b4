//! Cross-domain interoperability services: relational→RDF translation,
//! ontology annotation, concept alignment, description validation,
//! synchronization into central graphs, and a normalized query log.

mod align;
mod ontology;
mod querylog;
mod sync;
mod translate;

pub use align::{align, AlignmentMap, Correspondence, Relation};
pub use ontology::{
    annotate, validate_description, OntologyContext, PredicateDef, RangeKind, ValidationReport, Violation,
    ViolationReason,
};
pub use querylog::{normalize, signature, CacheStatus, Normalized, QueryLog, QueryLogEntry, QueryOutcome};
pub use sync::{SkewRejection, SyncSummary, Synchronizer, DEFAULT_SKEW_MS};
pub use translate::{read_csv, translate_relational, ColumnMapping, RelationalRecord, Scalar, TranslationMapping};

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::semantic::{GraphStore, Iri, Query, SemanticError, Triple};

#[derive(Debug, Error)]
pub enum InteropError {
    #[error("column {0} cannot be cast to its mapped datatype")]
    DatatypeMismatch(String),
    #[error("record belongs to table {found}, mapping expects {expected}")]
    TableMismatch { expected: String, found: String },
    #[error("primary key column {0} is missing or null")]
    MissingPrimaryKey(String),
    #[error("CSV: {0}")]
    Csv(String),
    #[error("document {name}: {reason}")]
    InvalidDocument { name: String, reason: String },
    #[error("no {kind} named {name:?}")]
    UnknownDocument { kind: &'static str, name: String },
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Mapping documents, keyed by name.
#[derive(Debug, Clone, Default)]
pub struct Documents {
    pub mappings: BTreeMap<String, TranslationMapping>,
    pub alignments: BTreeMap<String, AlignmentMap>,
    pub contexts: BTreeMap<String, OntologyContext>,
}

impl Documents {
    /// Adds one JSON document. Its kind is recognized by its fields
    /// (`columnMap`, `correspondences` or `predicates`) and its `name` must
    /// equal `stem` when both are given.
    pub fn add(&mut self, stem: &str, text: &str) -> Result<(), InteropError> {
        let bad = |reason: String| InteropError::InvalidDocument { name: stem.to_owned(), reason };
        let v: Value = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        let named = |name: &str| -> Result<(), InteropError> {
            if name == stem || stem.is_empty() {
                Ok(())
            } else {
                Err(bad(format!("file name does not match name {name:?}")))
            }
        };
        if v.get("columnMap").is_some() {
            let mut m: TranslationMapping = serde_json::from_value(v).map_err(|e| bad(e.to_string()))?;
            if m.name.is_empty() {
                m.name = stem.to_owned();
            }
            named(&m.name)?;
            m.check()?;
            self.mappings.insert(m.name.clone(), m);
        } else if v.get("correspondences").is_some() {
            let a: AlignmentMap = serde_json::from_value(v).map_err(|e| bad(e.to_string()))?;
            named(&a.name)?;
            a.check()?;
            self.alignments.insert(a.name.clone(), a);
        } else if v.get("predicates").is_some() {
            let c: OntologyContext = serde_json::from_value(v).map_err(|e| bad(e.to_string()))?;
            named(&c.name)?;
            c.check()?;
            self.contexts.insert(c.name.clone(), c);
        } else {
            return Err(bad("not a mapping, alignment or ontology document".into()));
        }
        Ok(())
    }

    /// Loads every `*.json` file of `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, InteropError> {
        let io = |source| InteropError::Io { path: dir.display().to_string(), source };
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut docs = Documents::default();
        for p in paths {
            let text = std::fs::read_to_string(&p)
                .map_err(|source| InteropError::Io { path: p.display().to_string(), source })?;
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            docs.add(stem, &text)?;
        }
        Ok(docs)
    }
}

#[derive(Debug, Default)]
struct Counters {
    translate: AtomicU64,
    annotate: AtomicU64,
    align: AtomicU64,
    validate: AtomicU64,
    sync: AtomicU64,
    query: AtomicU64,
}

/// Result of lifting one batch of domain data into a central graph.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct LiftOutcome {
    #[serde(skip)]
    pub triples: Vec<Triple>,
    pub report: ValidationReport,
    pub summary: Option<SyncSummary>,
}

/// The six services over one store, sharing the loaded documents.
pub struct InteropServices {
    store: Arc<GraphStore>,
    docs: Documents,
    sync: Synchronizer,
    log: QueryLog,
    counters: Counters,
}

impl InteropServices {
    pub fn new(store: Arc<GraphStore>, docs: Documents) -> Self {
        let functional: Vec<Iri> = docs.contexts.values().flat_map(|c| c.functional_predicates().cloned()).collect();
        let sync = Synchronizer::new(store.clone(), functional);
        InteropServices { store, docs, sync, log: QueryLog::new(), counters: Counters::default() }
    }

    pub fn store(&self) -> &Arc<GraphStore> {
        &self.store
    }

    pub fn documents(&self) -> &Documents {
        &self.docs
    }

    pub fn query_log(&self) -> &QueryLog {
        &self.log
    }

    pub fn synchronizer(&self) -> &Synchronizer {
        &self.sync
    }

    pub fn mapping(&self, name: &str) -> Result<&TranslationMapping, InteropError> {
        self.docs.mappings.get(name).ok_or_else(|| unknown("mapping", name))
    }

    pub fn alignment(&self, name: &str) -> Result<&AlignmentMap, InteropError> {
        self.docs.alignments.get(name).ok_or_else(|| unknown("alignment", name))
    }

    pub fn context(&self, name: &str) -> Result<&OntologyContext, InteropError> {
        self.docs.contexts.get(name).ok_or_else(|| unknown("ontology context", name))
    }

    pub fn translate(&self, mapping: &str, records: &[RelationalRecord]) -> Result<Vec<Triple>, InteropError> {
        self.counters.translate.fetch_add(1, Ordering::Relaxed);
        translate_relational(records, self.mapping(mapping)?)
    }

    pub fn annotate(&self, context: &str, triples: &[Triple]) -> Result<Vec<Triple>, InteropError> {
        self.counters.annotate.fetch_add(1, Ordering::Relaxed);
        Ok(annotate(triples, self.context(context)?))
    }

    pub fn align(&self, alignment: &str, triples: &[Triple]) -> Result<Vec<Triple>, InteropError> {
        self.counters.align.fetch_add(1, Ordering::Relaxed);
        Ok(align(triples, self.alignment(alignment)?))
    }

    pub fn validate(&self, context: &str, triples: &[Triple]) -> Result<ValidationReport, InteropError> {
        self.counters.validate.fetch_add(1, Ordering::Relaxed);
        Ok(validate_description(triples, self.context(context)?))
    }

    pub fn synchronize(&self, triples: &[Triple], central: &Iri) -> SyncSummary {
        self.counters.sync.fetch_add(1, Ordering::Relaxed);
        self.sync.synchronize(triples, central)
    }

    pub fn query(&self, q: &Query) -> Result<QueryOutcome, SemanticError> {
        self.counters.query.fetch_add(1, Ordering::Relaxed);
        self.log.process(&self.store, q)
    }

    /// annotate → align (when given) → validate, then synchronize into
    /// `central` only if the description is valid.
    pub fn lift(
        &self,
        triples: &[Triple],
        context: &str,
        alignment: Option<&str>,
        central: &Iri,
    ) -> Result<LiftOutcome, InteropError> {
        let annotated = self.annotate(context, triples)?;
        let aligned = match alignment {
            Some(a) => self.align(a, &annotated)?,
            None => annotated,
        };
        let report = self.validate(context, &aligned)?;
        let summary = report.valid.then(|| self.synchronize(&aligned, central));
        Ok(LiftOutcome { triples: aligned, report, summary })
    }

    /// Invocation counts per service.
    pub fn counters(&self) -> BTreeMap<&'static str, u64> {
        let c = &self.counters;
        [
            ("translate", &c.translate),
            ("annotate", &c.annotate),
            ("align", &c.align),
            ("validate", &c.validate),
            ("sync", &c.sync),
            ("query", &c.query),
        ]
        .into_iter()
        .map(|(k, v)| (k, v.load(Ordering::Relaxed)))
        .collect()
    }
}

fn unknown(kind: &'static str, name: &str) -> InteropError {
    InteropError::UnknownDocument { kind, name: name.to_owned() }
}
