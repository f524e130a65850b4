use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::features::physio_features;
use super::ml::{train, Analyzer, FeatureVector, LabeledInstance, ModelConfig, Prediction, TrainedModel};
use super::{schema_of, AnalyticsError};

const BUNDLED: [(Analyzer, &str); 3] = [
    (Analyzer::Location, include_str!("../../config/analytics/location.json")),
    (Analyzer::Activity, include_str!("../../config/analytics/activity.json")),
    (Analyzer::Physio, include_str!("../../config/analytics/physio.json")),
];
const BUNDLED_RECOMMENDATIONS: &str = include_str!("../../config/analytics/recommendations.json");

fn parse_config(analyzer: Analyzer, path: &Path, text: &str) -> Result<ModelConfig, AnalyticsError> {
    let invalid = |reason: String| AnalyticsError::InvalidConfig { path: path.to_owned(), reason };
    let cfg: ModelConfig = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
    if cfg.analyzer != analyzer {
        return Err(invalid(format!("file is for {analyzer} but declares {}", cfg.analyzer)));
    }
    if cfg.feature_schema != schema_of(analyzer) {
        return Err(AnalyticsError::SchemaMismatch(format!(
            "{analyzer} schema must be {:?}, got {:?}",
            schema_of(analyzer),
            cfg.feature_schema
        )));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Reads `{location,activity,physio}.json` from `dir`. Either all three
/// load and validate, or nothing is returned.
pub fn load_configs(dir: &Path) -> Result<BTreeMap<Analyzer, ModelConfig>, AnalyticsError> {
    let mut out = BTreeMap::new();
    for a in Analyzer::ALL {
        let path = dir.join(format!("{a}.json"));
        if !path.is_file() {
            return Err(AnalyticsError::MissingConfig(a));
        }
        let text = fs::read_to_string(&path).map_err(|source| AnalyticsError::Io { path: path.clone(), source })?;
        out.insert(a, parse_config(a, &path, &text)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendationRow {
    pub status: String,
    /// An activity name, or `*` for any.
    pub activity: String,
    pub code: String,
}

/// First matching row wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendationTable {
    pub rows: Vec<RecommendationRow>,
}

impl RecommendationTable {
    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED_RECOMMENDATIONS).expect("bundled recommendation table parses")
    }

    pub fn lookup(&self, status: &str, activity: &str) -> Option<&str> {
        self.rows
            .iter()
            .find(|r| r.status == status && (r.activity == "*" || r.activity == activity))
            .map(|r| r.code.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysioAnalysis {
    pub prediction: Prediction,
    pub recommendation: String,
}

/// Owns one model slot per analyzer. Training holds the slot's lock;
/// readers clone the current `Arc` and never see a partial swap.
pub struct AnalyticsManager {
    configs: BTreeMap<Analyzer, ModelConfig>,
    models: RwLock<BTreeMap<Analyzer, Arc<TrainedModel>>>,
    training: BTreeMap<Analyzer, Mutex<()>>,
    recommendations: RecommendationTable,
}

impl AnalyticsManager {
    pub fn new(configs: BTreeMap<Analyzer, ModelConfig>, recommendations: RecommendationTable) -> Self {
        AnalyticsManager {
            configs,
            models: RwLock::new(BTreeMap::new()),
            training: Analyzer::ALL.into_iter().map(|a| (a, Mutex::new(()))).collect(),
            recommendations,
        }
    }

    pub fn bundled() -> Self {
        let configs = BUNDLED
            .iter()
            .map(|(a, text)| {
                let path = Path::new("bundled").join(format!("{a}.json"));
                (*a, parse_config(*a, &path, text).expect("bundled analytics config is valid"))
            })
            .collect();
        AnalyticsManager::new(configs, RecommendationTable::bundled())
    }

    pub fn from_dir(dir: &Path) -> Result<Self, AnalyticsError> {
        let configs = load_configs(dir)?;
        let rec_path = dir.join("recommendations.json");
        let recommendations = if rec_path.is_file() {
            let text = fs::read_to_string(&rec_path)
                .map_err(|source| AnalyticsError::Io { path: rec_path.clone(), source })?;
            serde_json::from_str(&text)
                .map_err(|e| AnalyticsError::InvalidConfig { path: rec_path.clone(), reason: e.to_string() })?
        } else {
            RecommendationTable::bundled()
        };
        Ok(AnalyticsManager::new(configs, recommendations))
    }

    pub fn config(&self, analyzer: Analyzer) -> Result<&ModelConfig, AnalyticsError> {
        self.configs.get(&analyzer).ok_or(AnalyticsError::MissingConfig(analyzer))
    }

    pub fn configs(&self) -> &BTreeMap<Analyzer, ModelConfig> {
        &self.configs
    }

    pub fn recommendations(&self) -> &RecommendationTable {
        &self.recommendations
    }

    pub fn train(&self, analyzer: Analyzer, data: &[LabeledInstance]) -> Result<Arc<TrainedModel>, AnalyticsError> {
        let cfg = self.config(analyzer)?;
        let _slot = self.training[&analyzer].lock();
        let model = Arc::new(train(data, cfg)?);
        self.models.write().insert(analyzer, model.clone());
        Ok(model)
    }

    /// Installs a model trained elsewhere, e.g. loaded from a snapshot.
    pub fn install(&self, model: TrainedModel) -> Arc<TrainedModel> {
        let analyzer = model.config.analyzer;
        let _slot = self.training[&analyzer].lock();
        let model = Arc::new(model);
        self.models.write().insert(analyzer, model.clone());
        model
    }

    pub fn model(&self, analyzer: Analyzer) -> Option<Arc<TrainedModel>> {
        self.models.read().get(&analyzer).cloned()
    }

    pub fn predict(&self, analyzer: Analyzer, x: &FeatureVector) -> Result<Prediction, AnalyticsError> {
        self.model(analyzer).ok_or(AnalyticsError::ModelUnavailable(analyzer))?.predict(x)
    }

    pub fn analyze_physio(
        &self,
        heart_rate: &[(i64, f64)],
        systolic: &[(i64, f64)],
        current_activity: Option<&str>,
        t: i64,
    ) -> Result<PhysioAnalysis, AnalyticsError> {
        let model = self.model(Analyzer::Physio).ok_or(AnalyticsError::ModelUnavailable(Analyzer::Physio))?;
        let x = physio_features(heart_rate, systolic, current_activity, t);
        let prediction = model.predict(&x)?;
        let activity = current_activity.unwrap_or(super::NONE);
        let recommendation = self.recommendations.lookup(&prediction.label, activity).unwrap_or("REC-NONE").to_owned();
        Ok(PhysioAnalysis { prediction, recommendation })
    }

    pub fn save_snapshot(&self, analyzer: Analyzer, path: &Path) -> Result<(), AnalyticsError> {
        let model = self.model(analyzer).ok_or(AnalyticsError::ModelUnavailable(analyzer))?;
        fs::write(path, model.to_snapshot()).map_err(|source| AnalyticsError::Io { path: path.to_owned(), source })
    }

    pub fn load_snapshot(&self, path: &Path) -> Result<Arc<TrainedModel>, AnalyticsError> {
        let text = fs::read_to_string(path).map_err(|source| AnalyticsError::Io { path: path.to_owned(), source })?;
        Ok(self.install(TrainedModel::from_snapshot(&text)?))
    }
}
