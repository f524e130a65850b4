use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::AnalyticsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Number(f64),
    Category(String),
}

impl FeatureValue {
    pub fn category(s: impl Into<String>) -> Self {
        FeatureValue::Category(s.into())
    }

    fn kind(&self) -> FeatureKind {
        match self {
            FeatureValue::Number(_) => FeatureKind::Numeric,
            FeatureValue::Category(_) => FeatureKind::Categorical,
        }
    }
}

impl fmt::Display for FeatureValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureValue::Number(x) => write!(f, "{x}"),
            FeatureValue::Category(c) => f.write_str(c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub value: FeatureValue,
}

/// Named feature values in schema order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector {
    pub values: Vec<Feature>,
}

impl FeatureVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: FeatureValue) -> Self {
        self.values.push(Feature { name: name.to_owned(), value });
        self
    }

    pub fn number(self, name: &str, x: f64) -> Self {
        self.with(name, FeatureValue::Number(x))
    }

    pub fn category(self, name: &str, c: impl Into<String>) -> Self {
        self.with(name, FeatureValue::Category(c.into()))
    }

    pub fn get(&self, name: &str) -> Option<&FeatureValue> {
        self.values.iter().find(|f| f.name == name).map(|f| &f.value)
    }

    pub fn names(&self) -> Vec<&str> {
        self.values.iter().map(|f| f.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub features: FeatureVector,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Majority,
    NaiveBayes,
    Knn,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Majority => "majority",
            Algorithm::NaiveBayes => "naive-bayes",
            Algorithm::Knn => "knn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Analyzer {
    Location,
    Activity,
    Physio,
}

impl Analyzer {
    pub const ALL: [Analyzer; 3] = [Analyzer::Location, Analyzer::Activity, Analyzer::Physio];

    pub fn name(self) -> &'static str {
        match self {
            Analyzer::Location => "location",
            Analyzer::Activity => "activity",
            Analyzer::Physio => "physio",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

impl fmt::Display for Analyzer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_BINS: usize = 5;
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelConfig {
    pub analyzer: Analyzer,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub hyperparams: BTreeMap<String, f64>,
    pub feature_schema: Vec<String>,
}

impl ModelConfig {
    pub fn new(analyzer: Analyzer, algorithm: Algorithm, schema: &[&str]) -> Self {
        ModelConfig {
            analyzer,
            algorithm,
            hyperparams: BTreeMap::new(),
            feature_schema: schema.iter().map(|s| (*s).to_owned()).collect(),
        }
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.hyperparams.insert(name.to_owned(), value);
        self
    }

    fn invalid(&self, reason: String) -> AnalyticsError {
        AnalyticsError::InvalidHyperparam { analyzer: self.analyzer, reason }
    }

    pub fn k(&self) -> Result<usize, AnalyticsError> {
        let k = self.hyperparams.get("k").copied().unwrap_or(DEFAULT_K as f64);
        if k < 1.0 || k.fract() != 0.0 || (k as usize) % 2 == 0 {
            return Err(self.invalid(format!("k must be a positive odd integer, got {k}")));
        }
        Ok(k as usize)
    }

    pub fn alpha(&self) -> Result<f64, AnalyticsError> {
        let a = self.hyperparams.get("alpha").copied().unwrap_or(DEFAULT_ALPHA);
        if !(a > 0.0 && a.is_finite()) {
            return Err(self.invalid(format!("alpha must be positive, got {a}")));
        }
        Ok(a)
    }

    /// Equal-width bins used to discretize numeric features for naive Bayes.
    pub fn bins(&self) -> Result<usize, AnalyticsError> {
        let b = self.hyperparams.get("bins").copied().unwrap_or(DEFAULT_BINS as f64);
        if b < 1.0 || b.fract() != 0.0 {
            return Err(self.invalid(format!("bins must be a positive integer, got {b}")));
        }
        Ok(b as usize)
    }

    pub fn validate(&self) -> Result<(), AnalyticsError> {
        if self.feature_schema.is_empty() {
            return Err(self.invalid("empty feature schema".into()));
        }
        let unique: BTreeSet<&String> = self.feature_schema.iter().collect();
        if unique.len() != self.feature_schema.len() {
            return Err(self.invalid("duplicate feature name".into()));
        }
        match self.algorithm {
            Algorithm::Majority => Ok(()),
            Algorithm::NaiveBayes => self.alpha().and(self.bins()).map(|_| ()),
            Algorithm::Knn => self.k().map(|_| ()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    pub scores: BTreeMap<String, f64>,
    #[serde(rename = "modelId")]
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    /// Position in [0, 1]; values outside the training range clamp.
    pub fn normalize(&self, x: f64) -> f64 {
        if self.max > self.min {
            ((x - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    fn bin(&self, x: f64, bins: usize) -> usize {
        ((self.normalize(x) * bins as f64) as usize).min(bins - 1)
    }
}

/// Per-feature categorical counts for naive Bayes. Numeric features are
/// first mapped to bin categories `b0..`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NbFeature {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<Range>,
    pub vocabulary: BTreeSet<String>,
    pub counts: BTreeMap<String, BTreeMap<String, u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Parameters {
    Majority {
        label: String,
        counts: BTreeMap<String, u64>,
    },
    NaiveBayes {
        alpha: f64,
        bins: usize,
        class_counts: BTreeMap<String, u64>,
        features: Vec<NbFeature>,
    },
    Knn {
        k: usize,
        ranges: Vec<Option<Range>>,
        instances: Vec<LabeledInstance>,
    },
}

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainedModel {
    pub version: u32,
    pub id: String,
    pub config: ModelConfig,
    pub kinds: Vec<FeatureKind>,
    pub parameters: Parameters,
    pub trained_on: usize,
    pub label_set: BTreeSet<String>,
}

fn schema_kinds(data: &[LabeledInstance], cfg: &ModelConfig) -> Result<Vec<FeatureKind>, AnalyticsError> {
    let first = data.first().ok_or(AnalyticsError::EmptyDataset)?;
    let kinds: Vec<FeatureKind> = first.features.values.iter().map(|f| f.value.kind()).collect();
    for inst in data {
        check_vector(&inst.features, &cfg.feature_schema, &kinds)?;
        if let Some(f) = inst.features.values.iter().find(|f| matches!(f.value, FeatureValue::Number(x) if !x.is_finite())) {
            return Err(AnalyticsError::SchemaMismatch(format!("feature {} is not finite", f.name)));
        }
    }
    Ok(kinds)
}

fn check_vector(x: &FeatureVector, schema: &[String], kinds: &[FeatureKind]) -> Result<(), AnalyticsError> {
    let names = x.names();
    if names.len() != schema.len() || names.iter().zip(schema).any(|(a, b)| *a != b) {
        return Err(AnalyticsError::SchemaMismatch(format!("expected features {schema:?}, got {names:?}")));
    }
    for (f, k) in x.values.iter().zip(kinds) {
        if f.value.kind() != *k {
            return Err(AnalyticsError::SchemaMismatch(format!("feature {} should be {k:?}", f.name)));
        }
    }
    Ok(())
}

fn modal(counts: &BTreeMap<String, u64>) -> String {
    let mut best: Option<(&String, u64)> = None;
    for (label, &n) in counts {
        if best.map_or(true, |(_, m)| n > m) {
            best = Some((label, n));
        }
    }
    best.map(|(l, _)| l.clone()).unwrap_or_default()
}

pub fn train(data: &[LabeledInstance], cfg: &ModelConfig) -> Result<TrainedModel, AnalyticsError> {
    cfg.validate()?;
    let kinds = schema_kinds(data, cfg)?;
    let mut class_counts: BTreeMap<String, u64> = BTreeMap::new();
    for inst in data {
        *class_counts.entry(inst.label.clone()).or_default() += 1;
    }
    let label_set: BTreeSet<String> = class_counts.keys().cloned().collect();
    let ranges: Vec<Option<Range>> = (0..kinds.len())
        .map(|i| match kinds[i] {
            FeatureKind::Categorical => None,
            FeatureKind::Numeric => {
                let xs = data.iter().filter_map(|d| match d.features.values[i].value {
                    FeatureValue::Number(x) => Some(x),
                    FeatureValue::Category(_) => None,
                });
                let (min, max) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
                Some(Range { min, max })
            }
        })
        .collect();
    let parameters = match cfg.algorithm {
        Algorithm::Majority => Parameters::Majority { label: modal(&class_counts), counts: class_counts },
        Algorithm::NaiveBayes => {
            let bins = cfg.bins()?;
            let mut features: Vec<NbFeature> = ranges
                .iter()
                .map(|r| NbFeature { range: r.clone(), vocabulary: BTreeSet::new(), counts: BTreeMap::new() })
                .collect();
            for inst in data {
                for (f, nb) in inst.features.values.iter().zip(features.iter_mut()) {
                    let cat = nb_category(&f.value, nb.range.as_ref(), bins);
                    nb.vocabulary.insert(cat.clone());
                    *nb.counts.entry(inst.label.clone()).or_default().entry(cat).or_default() += 1;
                }
            }
            Parameters::NaiveBayes { alpha: cfg.alpha()?, bins, class_counts, features }
        }
        Algorithm::Knn => {
            let k = cfg.k()?;
            if k > data.len() {
                return Err(AnalyticsError::InvalidHyperparam {
                    analyzer: cfg.analyzer,
                    reason: format!("k={k} exceeds the {} training instances", data.len()),
                });
            }
            Parameters::Knn { k, ranges, instances: data.to_vec() }
        }
    };
    Ok(TrainedModel {
        version: SNAPSHOT_VERSION,
        id: format!("{}/{}", cfg.analyzer, cfg.algorithm.name()),
        config: cfg.clone(),
        kinds,
        parameters,
        trained_on: data.len(),
        label_set,
    })
}

fn nb_category(v: &FeatureValue, range: Option<&Range>, bins: usize) -> String {
    match (v, range) {
        (FeatureValue::Number(x), Some(r)) => format!("b{}", r.bin(*x, bins)),
        (v, _) => v.to_string(),
    }
}

#[derive(Debug, Clone)]
struct Neighbour<'a> {
    distance: f64,
    inst: &'a LabeledInstance,
}

fn feature_key(f: &FeatureVector) -> Vec<String> {
    f.values.iter().map(|v| v.value.to_string()).collect()
}

impl TrainedModel {
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn predict(&self, x: &FeatureVector) -> Result<Prediction, AnalyticsError> {
        check_vector(x, &self.config.feature_schema, &self.kinds)?;
        let scores = match &self.parameters {
            Parameters::Majority { counts, .. } => {
                let n: u64 = counts.values().sum();
                counts.iter().map(|(l, c)| (l.clone(), *c as f64 / n as f64)).collect()
            }
            Parameters::NaiveBayes { alpha, bins, class_counts, features } => {
                nb_posteriors(x, *alpha, *bins, class_counts, features)
            }
            Parameters::Knn { k, ranges, instances } => {
                let label = knn_vote(x, *k, ranges, instances);
                return Ok(Prediction { scores: label.1, label: label.0, model_id: self.id.clone() });
            }
        };
        Ok(Prediction { label: argmax(&scores), scores, model_id: self.id.clone() })
    }

    pub fn to_snapshot(&self) -> String {
        serde_json::to_string_pretty(self).expect("models serialize")
    }

    pub fn from_snapshot(text: &str) -> Result<Self, AnalyticsError> {
        let m: TrainedModel = serde_json::from_str(text).map_err(|e| AnalyticsError::Snapshot(e.to_string()))?;
        if m.version != SNAPSHOT_VERSION {
            return Err(AnalyticsError::Snapshot(format!("unsupported snapshot version {}", m.version)));
        }
        m.config.validate()?;
        Ok(m)
    }
}

/// Highest score; ties go to the lexicographically smallest label.
fn argmax(scores: &BTreeMap<String, f64>) -> String {
    let mut best: Option<(&String, f64)> = None;
    for (l, &s) in scores {
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((l, s));
        }
    }
    best.map(|(l, _)| l.clone()).unwrap_or_default()
}

fn nb_posteriors(
    x: &FeatureVector,
    alpha: f64,
    bins: usize,
    class_counts: &BTreeMap<String, u64>,
    features: &[NbFeature],
) -> BTreeMap<String, f64> {
    let n: u64 = class_counts.values().sum();
    let classes = class_counts.len() as f64;
    let mut logs: BTreeMap<String, f64> = BTreeMap::new();
    for (label, &nc) in class_counts {
        let mut lp = ((nc as f64 + alpha) / (n as f64 + alpha * classes)).ln();
        for (f, nb) in x.values.iter().zip(features) {
            let cat = nb_category(&f.value, nb.range.as_ref(), bins);
            let count = nb.counts.get(label).and_then(|m| m.get(&cat)).copied().unwrap_or(0);
            let v = nb.vocabulary.len() as f64 + 1.0;
            lp += ((count as f64 + alpha) / (nc as f64 + alpha * v)).ln();
        }
        logs.insert(label.clone(), lp);
    }
    let max = logs.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logs.values().map(|l| (l - max).exp()).sum();
    logs.into_iter().map(|(l, lp)| (l, (lp - max).exp() / total)).collect()
}

fn distance(x: &FeatureVector, y: &FeatureVector, ranges: &[Option<Range>]) -> f64 {
    let mut sum = 0.0;
    for ((a, b), r) in x.values.iter().zip(&y.values).zip(ranges) {
        match (&a.value, &b.value, r) {
            (FeatureValue::Number(p), FeatureValue::Number(q), Some(r)) => {
                let d = r.normalize(*p) - r.normalize(*q);
                sum += d * d;
            }
            (p, q, _) => {
                if p != q {
                    sum += 1.0;
                }
            }
        }
    }
    sum.sqrt()
}

/// k nearest by (distance, label, feature values); most votes wins, then
/// smallest distance sum, then smallest label. Scores are vote shares.
fn knn_vote(
    x: &FeatureVector,
    k: usize,
    ranges: &[Option<Range>],
    instances: &[LabeledInstance],
) -> (String, BTreeMap<String, f64>) {
    let mut all: Vec<Neighbour> =
        instances.iter().map(|inst| Neighbour { distance: distance(x, &inst.features, ranges), inst }).collect();
    all.sort_by(|a, b| {
        a.distance
            .partial_cmp(&b.distance)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.inst.label.cmp(&b.inst.label))
            .then_with(|| feature_key(&a.inst.features).cmp(&feature_key(&b.inst.features)))
    });
    let mut votes: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for nb in all.iter().take(k) {
        let e = votes.entry(&nb.inst.label).or_default();
        e.0 += 1;
        e.1 += nb.distance;
    }
    let winner = votes
        .iter()
        .min_by(|a, b| {
            b.1 .0
                .cmp(&a.1 .0)
                .then_with(|| a.1 .1.partial_cmp(&b.1 .1).unwrap_or(Ordering::Equal))
                .then_with(|| a.0.cmp(b.0))
        })
        .map(|(l, _)| (*l).to_owned())
        .unwrap_or_default();
    let scores = votes.into_iter().map(|(l, (n, _))| (l.to_owned(), n as f64 / k as f64)).collect();
    (winner, scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(x: f64, label: &str) -> LabeledInstance {
        LabeledInstance { features: FeatureVector::new().number("x", x), label: label.into() }
    }

    fn fixture() -> Vec<LabeledInstance> {
        vec![inst(1.0, "A"), inst(1.0, "A"), inst(1.0, "A"), inst(2.0, "B")]
    }

    fn cfg(alg: Algorithm) -> ModelConfig {
        ModelConfig::new(Analyzer::Location, alg, &["x"])
    }

    #[test]
    fn majority_is_constant() {
        let m = train(&[inst(5.0, "Z")], &cfg(Algorithm::Majority)).unwrap();
        for x in [0.0, 5.0, 99.0] {
            assert_eq!(m.predict(&FeatureVector::new().number("x", x)).unwrap().label, "Z");
        }
        let tie = train(&[inst(1.0, "B"), inst(1.0, "A")], &cfg(Algorithm::Majority)).unwrap();
        assert_eq!(tie.predict(&FeatureVector::new().number("x", 0.0)).unwrap().label, "A");
    }

    #[test]
    fn naive_bayes_smoothed_posterior() {
        let m = train(&fixture(), &cfg(Algorithm::NaiveBayes).with_param("alpha", 1.0)).unwrap();
        let p = m.predict(&FeatureVector::new().number("x", 1.0)).unwrap();
        assert_eq!(p.label, "A");
        assert!((p.scores["A"] - 16.0 / 19.0).abs() < 1e-12);
        assert!((p.scores["B"] - 3.0 / 19.0).abs() < 1e-12);
    }

    #[test]
    fn knn_exact_match_and_k_bounds() {
        let m = train(&fixture(), &cfg(Algorithm::Knn).with_param("k", 1.0)).unwrap();
        let p = m.predict(&FeatureVector::new().number("x", 2.0)).unwrap();
        assert_eq!(p.label, "B");
        assert_eq!(p.scores["B"], 1.0);
        assert!(matches!(
            train(&fixture(), &cfg(Algorithm::Knn).with_param("k", 5.0)),
            Err(AnalyticsError::InvalidHyperparam { .. })
        ));
        assert!(cfg(Algorithm::Knn).with_param("k", 2.0).validate().is_err());
        assert!(cfg(Algorithm::NaiveBayes).with_param("alpha", 0.0).validate().is_err());
    }

    #[test]
    fn schema_is_enforced() {
        assert!(matches!(train(&[], &cfg(Algorithm::Majority)), Err(AnalyticsError::EmptyDataset)));
        let m = train(&fixture(), &cfg(Algorithm::NaiveBayes)).unwrap();
        assert!(matches!(
            m.predict(&FeatureVector::new().number("y", 1.0)),
            Err(AnalyticsError::SchemaMismatch(_))
        ));
        assert!(m.predict(&FeatureVector::new().category("x", "1")).is_err());
        let mixed = vec![inst(1.0, "A"), LabeledInstance { features: FeatureVector::new().category("x", "a"), label: "B".into() }];
        assert!(train(&mixed, &cfg(Algorithm::Majority)).is_err());
    }

    #[test]
    fn unseen_category_is_total() {
        let data = vec![
            LabeledInstance { features: FeatureVector::new().category("c", "red"), label: "A".into() },
            LabeledInstance { features: FeatureVector::new().category("c", "blue"), label: "B".into() },
        ];
        let m = train(&data, &ModelConfig::new(Analyzer::Activity, Algorithm::NaiveBayes, &["c"])).unwrap();
        let p = m.predict(&FeatureVector::new().category("c", "green")).unwrap();
        assert!((p.scores.values().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(p.label, "A");
    }

    #[test]
    fn clamps_out_of_range() {
        let r = Range { min: 0.0, max: 10.0 };
        assert_eq!(r.normalize(-5.0), 0.0);
        assert_eq!(r.normalize(50.0), 1.0);
        assert_eq!(r.normalize(5.0), 0.5);
        assert_eq!(Range { min: 3.0, max: 3.0 }.normalize(7.0), 0.0);
    }

    #[test]
    fn snapshot_round_trip() {
        for alg in [Algorithm::Majority, Algorithm::NaiveBayes, Algorithm::Knn] {
            let c = cfg(alg).with_param("k", 3.0);
            let m = train(&fixture(), &c).unwrap();
            let back = TrainedModel::from_snapshot(&m.to_snapshot()).unwrap();
            assert_eq!(back, m);
            let x = FeatureVector::new().number("x", 1.5);
            assert_eq!(back.predict(&x).unwrap(), m.predict(&x).unwrap());
        }
    }
}
