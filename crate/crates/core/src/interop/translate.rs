use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::semantic::{vocab, Datatype, Iri, Literal, Triple};

use super::InteropError;

/// A scalar cell of a relational row.
#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Null,
    Boolean(bool),
    Integer(i64),
    Decimal(f64),
    String(String),
}

impl Scalar {
    /// Plain text rendering used for key substitution.
    pub fn render(&self) -> String {
        match self {
            Scalar::Null => String::new(),
            Scalar::Boolean(b) => b.to_string(),
            Scalar::Integer(i) => i.to_string(),
            Scalar::Decimal(d) => Literal::decimal(*d).lexical().to_owned(),
            Scalar::String(s) => s.clone(),
        }
    }

    /// Lexically casts the cell to `datatype`; `None` when impossible.
    pub fn cast(&self, datatype: Datatype) -> Option<Literal> {
        match (self, datatype) {
            (Scalar::Null, _) => None,
            (s, Datatype::String) => Some(Literal::string(s.render())),
            (Scalar::Integer(i), Datatype::Integer) => Some(Literal::integer(*i)),
            (Scalar::Decimal(d), Datatype::Integer) if d.fract() == 0.0 && d.abs() < 9.0e15 => {
                Some(Literal::integer(*d as i64))
            }
            (Scalar::Integer(i), Datatype::Decimal) => Some(Literal::decimal(*i as f64)),
            (Scalar::Decimal(d), Datatype::Decimal) if d.is_finite() => Some(Literal::decimal(*d)),
            (Scalar::Boolean(b), Datatype::Boolean) => Some(Literal::boolean(*b)),
            (Scalar::Integer(i @ (0 | 1)), Datatype::Boolean) => Some(Literal::boolean(*i == 1)),
            (Scalar::Integer(ms), Datatype::DateTime) => chrono::DateTime::from_timestamp_millis(*ms)
                .map(|d| Literal::new(d.to_rfc3339_opts(chrono::SecondsFormat::Millis, true), Datatype::DateTime))
                .and_then(Result::ok),
            (Scalar::String(s), dt) => Literal::new(s.trim(), dt).ok(),
            _ => None,
        }
    }
}

impl Serialize for Scalar {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Scalar::Null => s.serialize_none(),
            Scalar::Boolean(b) => s.serialize_bool(*b),
            Scalar::Integer(i) => s.serialize_i64(*i),
            Scalar::Decimal(d) => s.serialize_f64(*d),
            Scalar::String(t) => s.serialize_str(t),
        }
    }
}

impl<'de> Deserialize<'de> for Scalar {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(match Value::deserialize(d)? {
            Value::Null => Scalar::Null,
            Value::Bool(b) => Scalar::Boolean(b),
            Value::Number(n) => match n.as_i64() {
                Some(i) => Scalar::Integer(i),
                None => Scalar::Decimal(n.as_f64().unwrap_or(f64::NAN)),
            },
            Value::String(s) => Scalar::String(s),
            other => return Err(serde::de::Error::custom(format!("not a scalar: {other}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RelationalRecord {
    pub table: String,
    pub primary_key: String,
    pub columns: BTreeMap<String, Scalar>,
}

impl RelationalRecord {
    pub fn new(table: &str, primary_key: &str, columns: impl IntoIterator<Item = (String, Scalar)>) -> Self {
        RelationalRecord {
            table: table.to_owned(),
            primary_key: primary_key.to_owned(),
            columns: columns.into_iter().collect(),
        }
    }
}

/// Reads CSV text (with a header row) into records. Empty cells are null;
/// every other cell stays a string until a mapping casts it.
pub fn read_csv(table: &str, primary_key: &str, text: &str) -> Result<Vec<RelationalRecord>, InteropError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| InteropError::Csv(e.to_string()))?.clone();
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| InteropError::Csv(e.to_string()))?;
        let columns = headers.iter().zip(row.iter()).map(|(h, v)| {
            let cell = if v.is_empty() { Scalar::Null } else { Scalar::String(v.to_owned()) };
            (h.to_owned(), cell)
        });
        out.push(RelationalRecord::new(table, primary_key, columns));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub predicate: Iri,
    pub datatype: Datatype,
}

/// Relational→RDF mapping for one table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TranslationMapping {
    #[serde(default)]
    pub name: String,
    pub table: String,
    pub class_iri: Iri,
    /// IRI template containing `{pk}`.
    pub subject_template: String,
    pub column_map: BTreeMap<String, ColumnMapping>,
}

impl TranslationMapping {
    pub fn check(&self) -> Result<(), InteropError> {
        if !self.subject_template.contains("{pk}") {
            return Err(InteropError::InvalidDocument {
                name: self.name.clone(),
                reason: "subject template lacks {pk}".into(),
            });
        }
        Ok(())
    }
}

/// One type triple per record plus one triple per mapped, non-null column,
/// in record order then column-name order. Unmapped columns are ignored.
pub fn translate_relational(
    records: &[RelationalRecord],
    m: &TranslationMapping,
) -> Result<Vec<Triple>, InteropError> {
    let mut out = Vec::new();
    for r in records {
        if r.table != m.table {
            return Err(InteropError::TableMismatch { expected: m.table.clone(), found: r.table.clone() });
        }
        let pk = match r.columns.get(&r.primary_key) {
            Some(v) if *v != Scalar::Null => v.render(),
            _ => return Err(InteropError::MissingPrimaryKey(r.primary_key.clone())),
        };
        let subject = Iri::new(m.subject_template.replace("{pk}", &pk))?;
        out.push(Triple::new(subject.clone(), vocab::rdf_type(), m.class_iri.clone()));
        for (column, map) in &m.column_map {
            let Some(cell) = r.columns.get(column) else { continue };
            if *cell == Scalar::Null {
                continue;
            }
            let lit = cell
                .cast(map.datatype)
                .ok_or_else(|| InteropError::DatatypeMismatch(column.clone()))?;
            out.push(Triple::new(subject.clone(), map.predicate.clone(), lit));
        }
    }
    Ok(out)
}
