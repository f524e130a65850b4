//! Line-oriented N-Triples subset: IRIs and typed (or plain string) literals.

use super::{Datatype, Iri, Literal, SemanticError, Term, Triple};

/// One line per triple, sorted, LF-terminated.
pub fn to_ntriples<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> String {
    let mut lines: Vec<String> = triples.into_iter().map(|t| t.to_string()).collect();
    lines.sort();
    lines.dedup();
    let mut out = lines.join("\n");
    if !out.is_empty() {
        out.push('\n');
    }
    out
}

pub fn parse_ntriples(text: &str) -> Result<Vec<Triple>, SemanticError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| SemanticError::Syntax { line: n + 1, reason };
        let mut cur = Cursor { rest: line };
        let s = cur.term().map_err(err)?;
        let p = cur.term().map_err(err)?;
        let o = cur.term().map_err(err)?;
        cur.skip_ws();
        if cur.rest != "." {
            return Err(err(format!("expected '.' but found {:?}", cur.rest)));
        }
        let (Term::Iri(s), Term::Iri(p)) = (s, p) else {
            return Err(err("literal in subject or predicate position".into()));
        };
        out.push(Triple::new(s, p, o));
    }
    Ok(out)
}

/// Parses a single N-Triples term such as `<urn:a>` or `"72"^^<...#integer>`.
pub fn parse_term(text: &str) -> Result<Term, SemanticError> {
    let mut cur = Cursor { rest: text.trim() };
    let t = cur
        .term()
        .map_err(|reason| SemanticError::Syntax { line: 1, reason })?;
    if !cur.rest.trim().is_empty() {
        return Err(SemanticError::Syntax { line: 1, reason: format!("trailing input {:?}", cur.rest) });
    }
    Ok(t)
}

struct Cursor<'a> {
    rest: &'a str,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        self.rest = self.rest.trim_start();
    }

    fn iri(&mut self) -> Result<Iri, String> {
        let body = self.rest.strip_prefix('<').ok_or("expected '<'")?;
        let end = body.find('>').ok_or("unterminated IRI")?;
        self.rest = &body[end + 1..];
        Iri::new(&body[..end]).map_err(|e| e.to_string())
    }

    fn term(&mut self) -> Result<Term, String> {
        self.skip_ws();
        if self.rest.starts_with('<') {
            return self.iri().map(Term::Iri);
        }
        let body = self.rest.strip_prefix('"').ok_or_else(|| format!("unexpected {:?}", self.rest))?;
        let mut lexical = String::new();
        let mut chars = body.char_indices();
        let close = loop {
            match chars.next() {
                None => return Err("unterminated literal".into()),
                Some((i, '"')) => break i,
                Some((_, '\\')) => match chars.next() {
                    Some((_, 'n')) => lexical.push('\n'),
                    Some((_, 'r')) => lexical.push('\r'),
                    Some((_, 't')) => lexical.push('\t'),
                    Some((_, c @ ('"' | '\\'))) => lexical.push(c),
                    other => return Err(format!("bad escape {other:?}")),
                },
                Some((_, c)) => lexical.push(c),
            }
        };
        self.rest = &body[close + 1..];
        let datatype = if let Some(after) = self.rest.strip_prefix("^^") {
            self.rest = after;
            let dt = self.iri()?;
            Datatype::parse(dt.as_str()).map_err(|e| e.to_string())?
        } else if self.rest.starts_with('@') {
            return Err("language-tagged literals are not supported".into());
        } else {
            Datatype::String
        };
        Literal::new(lexical, datatype).map(Term::Literal).map_err(|e| e.to_string())
    }
}
