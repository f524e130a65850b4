use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::HubError;

const DEFAULT_SCENARIO: &str = include_str!("../../config/scenarios/default.json");

/// Emission period in ticks per device kind; 0 silences the kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Rates {
    pub motion: u64,
    pub luminosity: u64,
    pub temperature: u64,
    pub appliance: u64,
    pub beacon: u64,
    pub vitals: u64,
}

impl Default for Rates {
    fn default() -> Self {
        Rates { motion: 5, luminosity: 10, temperature: 15, appliance: 15, beacon: 5, vitals: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct KillSwitch {
    pub at_tick: u64,
    pub kind: String,
    /// Withdraw the kind's template before the kill.
    #[serde(default)]
    pub remove_template: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct FaultSwitches {
    #[serde(default)]
    pub ack_drop: f64,
    #[serde(default)]
    pub delivery_drop: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kill: Option<KillSwitch>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct UserSpec {
    pub access_level: u8,
    #[serde(default)]
    pub preferences: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ScriptedRequest {
    pub at_tick: u64,
    pub capability: String,
    /// Index into the scenario's users.
    pub user: usize,
    #[serde(default = "one")]
    pub repeat: u32,
    #[serde(default = "ten")]
    pub every: u64,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
}

fn one() -> u32 {
    1
}

fn ten() -> u64 {
    10
}

fn yes() -> bool {
    true
}

fn sixty() -> u64 {
    60
}

fn two() -> usize {
    2
}

fn five_hundred() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub duration_ticks: u64,
    #[serde(default = "two")]
    pub users_per_domain: usize,
    #[serde(default = "yes")]
    pub noise: bool,
    /// Composite-object rules run every this many ticks; 0 disables them.
    #[serde(default = "sixty")]
    pub cvo_every: u64,
    #[serde(default = "five_hundred")]
    pub training_instances: usize,
    #[serde(default)]
    pub rates: Rates,
    #[serde(default)]
    pub faults: FaultSwitches,
    /// Per-user overrides by index; users without one get access level 1.
    #[serde(default)]
    pub users: Vec<UserSpec>,
    #[serde(default)]
    pub requests: Vec<ScriptedRequest>,
}

impl ScenarioConfig {
    pub fn bundled() -> Self {
        Self::from_json(DEFAULT_SCENARIO).expect("bundled scenario is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, HubError> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| HubError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HubError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| HubError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    /// A quiet scenario: no scripted requests, no faults.
    pub fn quiet(seed: u64, duration_ticks: u64) -> Self {
        ScenarioConfig {
            seed,
            duration_ticks,
            users_per_domain: 2,
            noise: true,
            cvo_every: 60,
            training_instances: 500,
            rates: Rates::default(),
            faults: FaultSwitches::default(),
            users: Vec::new(),
            requests: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), HubError> {
        let bad = |m: String| Err(HubError::Config(m));
        if self.users_per_domain == 0 {
            return bad("usersPerDomain must be at least 1".into());
        }
        if self.users.len() > self.users_per_domain {
            return bad(format!("{} user specs for {} users", self.users.len(), self.users_per_domain));
        }
        if let Some(u) = self.users.iter().find(|u| u.access_level > 3) {
            return bad(format!("access level {} outside 0..=3", u.access_level));
        }
        for (name, p) in [("ackDrop", self.faults.ack_drop), ("deliveryDrop", self.faults.delivery_drop)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        for r in &self.requests {
            if r.user >= self.users_per_domain {
                return bad(format!("request at tick {} names user {} of {}", r.at_tick, r.user, self.users_per_domain));
            }
            if r.repeat == 0 || (r.repeat > 1 && r.every == 0) {
                return bad(format!("request at tick {} has an empty repeat schedule", r.at_tick));
            }
        }
        if self.training_instances < 2 {
            return bad("trainingInstances must be at least 2".into());
        }
        Ok(())
    }

    pub fn user_spec(&self, index: usize) -> UserSpec {
        self.users.get(index).cloned().unwrap_or(UserSpec { access_level: 1, preferences: BTreeMap::new() })
    }

    /// Scripted requests due at `tick`, in declaration order.
    pub fn requests_at(&self, tick: u64) -> Vec<&ScriptedRequest> {
        self.requests
            .iter()
            .filter(|r| {
                tick >= r.at_tick
                    && (0..r.repeat as u64).any(|k| r.at_tick + k * r.every == tick)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenario_parses() {
        let cfg = ScenarioConfig::bundled();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.duration_ticks, 5000);
        assert_eq!(cfg.requests_at(1134).len(), 1);
        assert!(cfg.requests_at(1133).is_empty());
    }

    #[test]
    fn rejects_out_of_range_user() {
        let mut cfg = ScenarioConfig::quiet(1, 10);
        cfg.requests.push(ScriptedRequest {
            at_tick: 1,
            capability: "analytics.location".into(),
            user: 5,
            repeat: 1,
            every: 10,
            params: BTreeMap::new(),
        });
        assert!(matches!(cfg.validate(), Err(HubError::Config(_))));
    }
}
