use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::SemanticError;

const XSD: &str = "http://www.w3.org/2001/XMLSchema#";

/// An absolute IRI. Equality is exact string equality.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Iri(String);

impl Iri {
    pub fn new(value: impl Into<String>) -> Result<Self, SemanticError> {
        let value = value.into();
        let ok = !value.is_empty()
            && value.contains(':')
            && !value.chars().any(|c| c.is_whitespace() || c == '<' || c == '>' || c == '"');
        if ok {
            Ok(Iri(value))
        } else {
            Err(SemanticError::MalformedIri(value))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Text after the last `#`, `/` or `:`; used for human-facing labels.
    pub fn local_name(&self) -> &str {
        let cut = self.0.rfind(['#', '/', ':']).map(|i| i + 1).unwrap_or(0);
        &self.0[cut..]
    }
}

impl fmt::Display for Iri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for Iri {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Iri {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        let raw = raw
            .strip_prefix('<')
            .and_then(|r| r.strip_suffix('>'))
            .map(str::to_owned)
            .unwrap_or(raw);
        Iri::new(raw).map_err(serde::de::Error::custom)
    }
}

impl TryFrom<&str> for Iri {
    type Error = SemanticError;
    fn try_from(s: &str) -> Result<Self, Self::Error> {
        Iri::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Datatype {
    String,
    Integer,
    Decimal,
    Boolean,
    DateTime,
}

impl Datatype {
    pub const ALL: [Datatype; 5] = [
        Datatype::String,
        Datatype::Integer,
        Datatype::Decimal,
        Datatype::Boolean,
        Datatype::DateTime,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            Datatype::String => "string",
            Datatype::Integer => "integer",
            Datatype::Decimal => "decimal",
            Datatype::Boolean => "boolean",
            Datatype::DateTime => "dateTime",
        }
    }

    pub fn iri(self) -> String {
        format!("{XSD}{}", self.short_name())
    }

    /// Accepts the short name, `xsd:` prefixed name, or the full XSD IRI.
    pub fn parse(name: &str) -> Result<Self, SemanticError> {
        let short = name
            .strip_prefix(XSD)
            .or_else(|| name.strip_prefix("xsd:"))
            .unwrap_or(name);
        Datatype::ALL
            .into_iter()
            .find(|d| d.short_name() == short)
            .ok_or_else(|| SemanticError::UnknownDatatype(name.to_owned()))
    }

    fn is_numeric(self) -> bool {
        matches!(self, Datatype::Integer | Datatype::Decimal)
    }
}

fn valid_decimal(s: &str) -> bool {
    let body = s.strip_prefix(['-', '+']).unwrap_or(s);
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    let digits = |t: &str| t.bytes().all(|b| b.is_ascii_digit());
    match frac {
        None => !int.is_empty() && digits(int),
        Some(f) => (!int.is_empty() || !f.is_empty()) && digits(int) && digits(f),
    }
}

fn parse_datetime_millis(s: &str) -> Option<i64> {
    chrono::DateTime::parse_from_rfc3339(s)
        .ok()
        .map(|d| d.timestamp_millis())
}

/// A typed literal whose lexical form is valid for its datatype.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Literal {
    lexical: String,
    datatype: Datatype,
}

impl Literal {
    pub fn new(lexical: impl Into<String>, datatype: Datatype) -> Result<Self, SemanticError> {
        let lexical = lexical.into();
        let ok = match datatype {
            Datatype::String => true,
            Datatype::Integer => {
                let body = lexical.strip_prefix(['-', '+']).unwrap_or(&lexical);
                !body.is_empty() && body.bytes().all(|b| b.is_ascii_digit()) && lexical.parse::<i64>().is_ok()
            }
            Datatype::Decimal => valid_decimal(&lexical),
            Datatype::Boolean => lexical == "true" || lexical == "false",
            Datatype::DateTime => parse_datetime_millis(&lexical).is_some(),
        };
        if ok {
            Ok(Literal { lexical, datatype })
        } else {
            Err(SemanticError::InvalidLexical { lexical, datatype })
        }
    }

    pub fn string(s: impl Into<String>) -> Self {
        Literal { lexical: s.into(), datatype: Datatype::String }
    }

    pub fn integer(v: i64) -> Self {
        Literal { lexical: v.to_string(), datatype: Datatype::Integer }
    }

    /// Panics on non-finite input.
    pub fn decimal(v: f64) -> Self {
        assert!(v.is_finite(), "decimal literal must be finite");
        let mut lexical = format!("{v}");
        if !lexical.contains('.') {
            lexical.push_str(".0");
        }
        Literal { lexical, datatype: Datatype::Decimal }
    }

    pub fn boolean(v: bool) -> Self {
        Literal { lexical: v.to_string(), datatype: Datatype::Boolean }
    }

    pub fn lexical(&self) -> &str {
        &self.lexical
    }

    pub fn datatype(&self) -> Datatype {
        self.datatype
    }

    /// Numeric value for integer and decimal literals.
    pub fn as_f64(&self) -> Option<f64> {
        if self.datatype.is_numeric() {
            self.lexical.parse().ok()
        } else {
            None
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self.datatype {
            Datatype::Integer => self.lexical.parse().ok(),
            _ => None,
        }
    }

    /// Integer and decimal literals compare numerically with each other; every
    /// other pair must share a datatype.
    pub fn compare(&self, other: &Literal) -> Result<Ordering, SemanticError> {
        use Datatype::*;
        let mismatch = || SemanticError::TypeMismatch {
            left: self.to_string(),
            right: other.to_string(),
        };
        match (self.datatype, other.datatype) {
            (a, b) if a.is_numeric() && b.is_numeric() => {
                if let (Some(x), Some(y)) = (self.as_i64(), other.as_i64()) {
                    return Ok(x.cmp(&y));
                }
                let (x, y) = (self.as_f64().ok_or_else(mismatch)?, other.as_f64().ok_or_else(mismatch)?);
                x.partial_cmp(&y).ok_or_else(mismatch)
            }
            (String, String) => Ok(self.lexical.cmp(&other.lexical)),
            (Boolean, Boolean) => Ok((self.lexical == "true").cmp(&(other.lexical == "true"))),
            (DateTime, DateTime) => {
                let x = parse_datetime_millis(&self.lexical).ok_or_else(mismatch)?;
                let y = parse_datetime_millis(&other.lexical).ok_or_else(mismatch)?;
                Ok(x.cmp(&y))
            }
            _ => Err(mismatch()),
        }
    }
}

pub(crate) fn escape_lexical(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "\"{}\"^^<{}>", escape_lexical(&self.lexical), self.datatype.iri())
    }
}

/// Object-position value: an IRI or a literal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Iri(Iri),
    Literal(Literal),
}

impl Term {
    pub fn iri(s: &str) -> Result<Self, SemanticError> {
        Iri::new(s).map(Term::Iri)
    }

    pub fn as_iri(&self) -> Option<&Iri> {
        match self {
            Term::Iri(i) => Some(i),
            Term::Literal(_) => None,
        }
    }

    pub fn as_literal(&self) -> Option<&Literal> {
        match self {
            Term::Literal(l) => Some(l),
            Term::Iri(_) => None,
        }
    }

    /// Plain text value: the IRI string or the literal's lexical form.
    pub fn value_str(&self) -> &str {
        match self {
            Term::Iri(i) => i.as_str(),
            Term::Literal(l) => l.lexical(),
        }
    }

    /// IRIs order lexicographically among themselves; IRI vs literal is a
    /// type mismatch.
    pub fn compare(&self, other: &Term) -> Result<Ordering, SemanticError> {
        match (self, other) {
            (Term::Iri(a), Term::Iri(b)) => Ok(a.cmp(b)),
            (Term::Literal(a), Term::Literal(b)) => a.compare(b),
            _ => Err(SemanticError::TypeMismatch {
                left: self.to_string(),
                right: other.to_string(),
            }),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Iri(i) => write!(f, "<{i}>"),
            Term::Literal(l) => l.fmt(f),
        }
    }
}

impl From<Iri> for Term {
    fn from(i: Iri) -> Self {
        Term::Iri(i)
    }
}

impl From<Literal> for Term {
    fn from(l: Literal) -> Self {
        Term::Literal(l)
    }
}

/// A subject-predicate-object fact. Subjects and predicates are always IRIs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub subject: Iri,
    pub predicate: Iri,
    pub object: Term,
}

impl Triple {
    pub fn new(subject: Iri, predicate: Iri, object: impl Into<Term>) -> Self {
        Triple { subject, predicate, object: object.into() }
    }

    /// Builds a triple whose object is an IRI, validating all three strings.
    pub fn iris(s: &str, p: &str, o: &str) -> Result<Self, SemanticError> {
        Ok(Triple::new(Iri::new(s)?, Iri::new(p)?, Iri::new(o)?))
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}> <{}> {} .", self.subject, self.predicate, self.object)
    }
}

/// A query variable. Rendered with a leading `?`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Variable(String);

impl Variable {
    /// Accepts the bare name or the `?`-prefixed form.
    pub fn new(name: &str) -> Result<Self, SemanticError> {
        let bare = name.strip_prefix('?').unwrap_or(name);
        if bare.is_empty() || bare.contains(':') || bare.chars().any(char::is_whitespace) {
            return Err(SemanticError::InvalidVariable(name.to_owned()));
        }
        Ok(Variable(bare.to_owned()))
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "?{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iri_requires_scheme_and_no_whitespace() {
        assert!(Iri::new("urn:a").is_ok());
        assert!(matches!(Iri::new("no-scheme"), Err(SemanticError::MalformedIri(_))));
        assert!(Iri::new("").is_err());
        assert!(Iri::new("urn:a b").is_err());
    }

    #[test]
    fn literal_lexical_forms_are_checked() {
        assert!(Literal::new("42", Datatype::Integer).is_ok());
        assert!(Literal::new("-7", Datatype::Integer).is_ok());
        assert!(Literal::new("4.2", Datatype::Integer).is_err());
        assert!(Literal::new("abc", Datatype::Integer).is_err());
        assert!(Literal::new("3.25", Datatype::Decimal).is_ok());
        assert!(Literal::new(".5", Datatype::Decimal).is_ok());
        assert!(Literal::new("1e5", Datatype::Decimal).is_err());
        assert!(Literal::new("yes", Datatype::Boolean).is_err());
        assert!(Literal::new("2024-01-01T02:00:00Z", Datatype::DateTime).is_ok());
        assert!(Literal::new("yesterday", Datatype::DateTime).is_err());
        assert!(Datatype::parse("xsd:float").is_err());
    }

    #[test]
    fn numeric_literals_compare_across_integer_and_decimal() {
        let a = Literal::integer(100);
        let b = Literal::decimal(99.5);
        assert_eq!(a.compare(&b).unwrap(), Ordering::Greater);
        assert!(a.compare(&Literal::string("100")).is_err());
    }

    #[test]
    fn decimal_constructor_keeps_a_fraction() {
        assert_eq!(Literal::decimal(72.0).lexical(), "72.0");
        assert_eq!(Literal::decimal(-0.25).lexical(), "-0.25");
    }

    #[test]
    fn datatype_names_round_trip() {
        for d in Datatype::ALL {
            assert_eq!(Datatype::parse(&d.iri()).unwrap(), d);
            assert_eq!(Datatype::parse(d.short_name()).unwrap(), d);
        }
    }

    #[test]
    fn variable_rejects_iri_like_names() {
        assert_eq!(Variable::new("?x").unwrap().name(), "x");
        assert!(Variable::new("?").is_err());
        assert!(Variable::new("urn:x").is_err());
    }
}
