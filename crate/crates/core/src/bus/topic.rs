use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::BusError;

/// A publish topic such as `obs/smart-home/vo-1`: non-empty segments, no
/// wildcards.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Topic(Vec<String>);

fn segments(s: &str) -> Option<Vec<String>> {
    if s.is_empty() {
        return None;
    }
    let parts: Vec<String> = s.split('/').map(str::to_owned).collect();
    parts.iter().all(|p| !p.is_empty()).then_some(parts)
}

impl Topic {
    pub fn new(s: &str) -> Result<Self, BusError> {
        let parts = segments(s).ok_or_else(|| BusError::InvalidTopic(s.to_owned()))?;
        if parts.iter().any(|p| p.contains(['+', '#'])) {
            return Err(BusError::InvalidTopic(s.to_owned()));
        }
        Ok(Topic(parts))
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    /// `$dead/<self>`.
    pub fn dead_letter(&self) -> Topic {
        let mut s = vec!["$dead".to_owned()];
        s.extend(self.0.iter().cloned());
        Topic(s)
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("/"))
    }
}

impl FromStr for Topic {
    type Err = BusError;
    fn from_str(s: &str) -> Result<Self, BusError> {
        Topic::new(s)
    }
}

impl TryFrom<String> for Topic {
    type Error = BusError;
    fn try_from(s: String) -> Result<Self, BusError> {
        Topic::new(&s)
    }
}

impl From<Topic> for String {
    fn from(t: Topic) -> String {
        t.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Segment {
    Literal(String),
    /// `+`: exactly one segment.
    One,
    /// `#`: any suffix, including none. Final position only.
    Rest,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TopicFilter(Vec<Segment>);

impl TopicFilter {
    pub fn new(s: &str) -> Result<Self, BusError> {
        let invalid = || BusError::InvalidFilter(s.to_owned());
        let parts = segments(s).ok_or_else(invalid)?;
        let last = parts.len() - 1;
        let mut out = Vec::with_capacity(parts.len());
        for (i, p) in parts.into_iter().enumerate() {
            out.push(match p.as_str() {
                "+" => Segment::One,
                "#" if i == last => Segment::Rest,
                _ if p.contains(['+', '#']) => return Err(invalid()),
                _ => Segment::Literal(p),
            });
        }
        Ok(TopicFilter(out))
    }

    pub fn segments(&self) -> &[Segment] {
        &self.0
    }

    pub fn matches(&self, topic: &Topic) -> bool {
        let t = topic.segments();
        for (i, seg) in self.0.iter().enumerate() {
            match seg {
                Segment::Rest => return true,
                Segment::One if i < t.len() => {}
                Segment::Literal(l) if t.get(i) == Some(l) => {}
                _ => return false,
            }
        }
        self.0.len() == t.len()
    }
}

impl fmt::Display for TopicFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self
            .0
            .iter()
            .map(|s| match s {
                Segment::Literal(l) => l.as_str(),
                Segment::One => "+",
                Segment::Rest => "#",
            })
            .collect();
        f.write_str(&parts.join("/"))
    }
}

impl TryFrom<String> for TopicFilter {
    type Error = BusError;
    fn try_from(s: String) -> Result<Self, BusError> {
        TopicFilter::new(&s)
    }
}

impl From<TopicFilter> for String {
    fn from(t: TopicFilter) -> String {
        t.to_string()
    }
}
