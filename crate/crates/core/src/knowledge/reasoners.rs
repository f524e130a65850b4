use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::object::ObjectRepository;
use crate::semantic::{vocab, Graph, Iri, Literal, Term, Triple};

use super::engine::{infer, infer_fixpoint, parse_rules, InferenceRule, RuleProgram};
use super::RuleError;

pub const WINDOW_MOTION_RATIO: &str = "urn:hub:windowMotionRatio";
pub const WINDOW_MEAN_LUMINOSITY: &str = "urn:hub:windowMeanLuminosity";
pub const WINDOW_HOUR: &str = "urn:hub:windowHour";
pub const LUMINOSITY_MISSING: &str = "urn:hub:luminosityMissing";
pub const LATEST_BEACON_ZONE: &str = "urn:hub:latestBeaconZone";
pub const LATEST_BEACON_AT: &str = "urn:hub:latestBeaconAt";
pub const LATEST_HEART_RATE: &str = "urn:hub:latestHeartRate";
pub const LATEST_SYSTOLIC: &str = "urn:hub:latestSystolic";
pub const HEART_RATE_MISSING: &str = "urn:hub:heartRateMissing";
pub const SYSTOLIC_MISSING: &str = "urn:hub:systolicMissing";

/// Graph holding shared background facts such as zone declarations.
pub const KB_GRAPH: &str = "urn:hub:graph:kb";

const ACTIVITY_RULES: &str = include_str!("../../config/rules/activity.json");
const LOCATION_RULES: &str = include_str!("../../config/rules/location.json");
const PHYSIO_RULES: &str = include_str!("../../config/rules/physio.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasonerKind {
    Activity,
    Location,
    Physio,
}

impl ReasonerKind {
    pub const ALL: [ReasonerKind; 3] = [ReasonerKind::Activity, ReasonerKind::Location, ReasonerKind::Physio];

    pub fn name(self) -> &'static str {
        match self {
            ReasonerKind::Activity => "activity",
            ReasonerKind::Location => "location",
            ReasonerKind::Physio => "physio",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s || (s == "physio-status" && *k == ReasonerKind::Physio))
    }

    /// The predicate each run may derive at most one value of per user.
    pub fn conclusion(self) -> Iri {
        vocab::iri(match self {
            ReasonerKind::Activity => vocab::CURRENT_ACTIVITY,
            ReasonerKind::Location => vocab::IN_ZONE,
            ReasonerKind::Physio => vocab::PHYSIO_STATUS,
        })
    }

    pub fn bundled_rules(self) -> &'static str {
        match self {
            ReasonerKind::Activity => ACTIVITY_RULES,
            ReasonerKind::Location => LOCATION_RULES,
            ReasonerKind::Physio => PHYSIO_RULES,
        }
    }

    fn ambiguous(self, user: &Iri, values: Vec<Term>) -> RuleError {
        let values = values.iter().map(ToString::to_string).collect();
        let user = user.clone();
        match self {
            ReasonerKind::Activity => RuleError::AmbiguousActivity { user, values },
            ReasonerKind::Location => RuleError::AmbiguousZone { user, values },
            ReasonerKind::Physio => RuleError::AmbiguousStatus { user, values },
        }
    }
}

impl fmt::Display for ReasonerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Inclusive range of epoch milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub from: i64,
    pub to: i64,
}

impl TimeWindow {
    pub fn new(from: i64, to: i64) -> Self {
        TimeWindow { from, to }
    }

    /// The `minutes` minutes ending at `to`.
    pub fn ending_at(to: i64, minutes: i64) -> Self {
        TimeWindow { from: to - minutes * 60_000, to }
    }

    pub fn contains(&self, ts: i64) -> bool {
        self.from <= ts && ts <= self.to
    }

    pub fn hour_of_end(&self) -> i64 {
        self.to.div_euclid(3_600_000).rem_euclid(24)
    }
}

fn fact(user: &Iri, p: &str, o: impl Into<Term>) -> Triple {
    Triple::new(user.clone(), vocab::iri(p), o)
}

/// Summary facts the activity rules read. `motion_ratio` is the share of
/// motion readings above zero.
pub fn activity_facts(user: &Iri, motion_ratio: Option<f64>, mean_luminosity: Option<f64>, hour: i64) -> Vec<Triple> {
    if motion_ratio.is_none() && mean_luminosity.is_none() {
        return Vec::new();
    }
    let mut out = vec![fact(user, WINDOW_HOUR, Literal::integer(hour))];
    if let Some(r) = motion_ratio {
        out.push(fact(user, WINDOW_MOTION_RATIO, Literal::decimal(r)));
    }
    match mean_luminosity {
        Some(l) => out.push(fact(user, WINDOW_MEAN_LUMINOSITY, Literal::decimal(l))),
        None => out.push(fact(user, LUMINOSITY_MISSING, Literal::boolean(true))),
    }
    out
}

pub fn location_facts(user: &Iri, latest: Option<(i64, Iri)>) -> Vec<Triple> {
    match latest {
        None => Vec::new(),
        Some((ts, zone)) => vec![
            fact(user, LATEST_BEACON_ZONE, zone),
            fact(user, LATEST_BEACON_AT, Literal::integer(ts)),
        ],
    }
}

pub fn physio_facts(user: &Iri, heart_rate: Option<Literal>, systolic: Option<Literal>) -> Vec<Triple> {
    if heart_rate.is_none() && systolic.is_none() {
        return Vec::new();
    }
    let mut out = Vec::new();
    match heart_rate {
        Some(h) => out.push(fact(user, LATEST_HEART_RATE, h)),
        None => out.push(fact(user, HEART_RATE_MISSING, Literal::boolean(true))),
    }
    match systolic {
        Some(s) => out.push(fact(user, LATEST_SYSTOLIC, s)),
        None => out.push(fact(user, SYSTOLIC_MISSING, Literal::boolean(true))),
    }
    out
}

fn fixture_user() -> Iri {
    vocab::iri("urn:hub:user:fixture")
}

/// Summary inputs covering every threshold edge of the bundled rules.
fn exclusion_fixtures(kind: ReasonerKind) -> Vec<Vec<Triple>> {
    let u = fixture_user();
    let mut out = Vec::new();
    match kind {
        ReasonerKind::Activity => {
            let ratios = [None, Some(0.0), Some(0.1), Some(0.49), Some(0.5), Some(1.0)];
            let lums = [None, Some(0.0), Some(49.9), Some(50.0), Some(400.0)];
            for r in ratios {
                for l in lums {
                    for h in [0, 2, 5, 6, 12, 21, 22, 23] {
                        out.push(activity_facts(&u, r, l, h));
                    }
                }
            }
        }
        ReasonerKind::Location => {
            for zone in ["urn:hub:zone:a", "urn:hub:zone:b"] {
                let mut g = location_facts(&u, Some((0, vocab::iri(zone))));
                g.push(Triple::new(vocab::iri(zone), vocab::rdf_type(), vocab::iri(vocab::ZONE)));
                out.push(g);
            }
        }
        ReasonerKind::Physio => {
            let hrs = [None, Some(0), Some(39), Some(40), Some(45), Some(49), Some(50), Some(72), Some(100), Some(101), Some(130), Some(140), Some(141), Some(220)];
            let sys = [None, Some(0), Some(79), Some(80), Some(85), Some(89), Some(90), Some(118), Some(130), Some(131), Some(170), Some(180), Some(181), Some(260)];
            for h in hrs {
                for s in sys {
                    out.push(physio_facts(&u, h.map(Literal::integer), s.map(Literal::integer)));
                    out.push(physio_facts(
                        &u,
                        h.map(|x| Literal::decimal(x as f64 + 0.5)),
                        s.map(|x| Literal::decimal(x as f64 - 0.5)),
                    ));
                }
            }
        }
    }
    out
}

/// Rejects rule sets that can conclude two different values for one user
/// on any fixture.
pub fn check_exclusive(kind: ReasonerKind, rules: &[InferenceRule]) -> Result<(), RuleError> {
    let u = fixture_user();
    let conclusion = kind.conclusion();
    for facts in exclusion_fixtures(kind) {
        let mut g = Graph::default();
        for t in &facts {
            g.insert(t.clone());
        }
        let r = infer(&g, rules)?;
        let values: BTreeSet<&Term> =
            r.derived.iter().filter(|t| t.subject == u && t.predicate == conclusion).map(|t| &t.object).collect();
        if values.len() > 1 {
            let fixture = facts.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
            return Err(RuleError::OverlappingRules { program: kind.name().into(), fixture });
        }
    }
    Ok(())
}

/// The activity, location and physio reasoning services over one object
/// repository. Each run summarizes the user's observations in the window,
/// then runs the program to fixpoint.
pub struct Reasoners {
    repo: Arc<ObjectRepository>,
    rules: BTreeMap<ReasonerKind, Vec<InferenceRule>>,
    locks: Mutex<HashMap<(Iri, ReasonerKind), Arc<Mutex<()>>>>,
}

impl Reasoners {
    pub fn bundled(repo: Arc<ObjectRepository>) -> Result<Self, RuleError> {
        let mut rules = BTreeMap::new();
        for kind in ReasonerKind::ALL {
            let parsed = parse_rules(kind.bundled_rules())?;
            check_exclusive(kind, &parsed)?;
            rules.insert(kind, parsed);
        }
        repo.store().create_graph(&vocab::iri(KB_GRAPH));
        Ok(Reasoners { repo, rules, locks: Mutex::new(HashMap::new()) })
    }

    /// Swaps in a rule set for `kind` after the exclusivity check.
    pub fn set_rules(&mut self, kind: ReasonerKind, rules: Vec<InferenceRule>) -> Result<(), RuleError> {
        check_exclusive(kind, &rules)?;
        self.rules.insert(kind, rules);
        Ok(())
    }

    /// Replaces rules without the exclusivity check; ambiguity then surfaces
    /// at run time.
    pub fn set_rules_unchecked(&mut self, kind: ReasonerKind, rules: Vec<InferenceRule>) {
        self.rules.insert(kind, rules);
    }

    pub fn rules(&self, kind: ReasonerKind) -> &[InferenceRule] {
        &self.rules[&kind]
    }

    /// Declares `zone` in the background graph.
    pub fn declare_zone(&self, zone: &Iri) {
        self.repo
            .store()
            .insert(&vocab::iri(KB_GRAPH), Triple::new(zone.clone(), vocab::rdf_type(), vocab::iri(vocab::ZONE)));
    }

    fn readings(&self, user: &Iri, property: &str, window: TimeWindow) -> Vec<(i64, Literal)> {
        let mut out: Vec<(i64, Literal)> = self
            .repo
            .vos_owned_by(user)
            .iter()
            .filter(|vo| vo.observed_property.as_str() == property)
            .flat_map(|vo| self.repo.recent_observations(&vo.id))
            .filter(|(ts, _)| window.contains(*ts))
            .collect();
        out.sort_by_key(|a| a.0);
        out
    }

    fn latest(&self, user: &Iri, property: &str, window: TimeWindow) -> Option<Literal> {
        self.readings(user, property, window).pop().map(|(_, v)| v)
    }

    pub fn summarize(&self, kind: ReasonerKind, user: &Iri, window: TimeWindow) -> Vec<Triple> {
        match kind {
            ReasonerKind::Activity => {
                let motion = self.readings(user, vocab::MOTION, window);
                let lum = self.readings(user, vocab::LUMINOSITY, window);
                let ratio = (!motion.is_empty()).then(|| {
                    let moving = motion.iter().filter(|(_, v)| v.as_f64().is_some_and(|x| x > 0.0)).count();
                    moving as f64 / motion.len() as f64
                });
                let lum_values: Vec<f64> = lum.iter().filter_map(|(_, v)| v.as_f64()).collect();
                let mean = (!lum_values.is_empty()).then(|| lum_values.iter().sum::<f64>() / lum_values.len() as f64);
                activity_facts(user, ratio, mean, window.hour_of_end())
            }
            ReasonerKind::Location => {
                let latest = self
                    .readings(user, vocab::ZONE_PROXIMITY, window)
                    .into_iter()
                    .filter_map(|(ts, v)| Iri::new(v.lexical()).ok().map(|z| (ts, z)))
                    .max_by(|a, b| a.0.cmp(&b.0).then_with(|| b.1.cmp(&a.1)));
                location_facts(user, latest)
            }
            ReasonerKind::Physio => physio_facts(
                user,
                self.latest(user, vocab::HEART_RATE, window),
                self.latest(user, vocab::SYSTOLIC, window),
            ),
        }
    }

    pub fn run(&self, kind: ReasonerKind, user: &Iri, window: TimeWindow) -> Result<Vec<Triple>, RuleError> {
        let model = self.repo.user(user).ok_or_else(|| RuleError::UnknownUser(user.clone()))?;
        let lock = self.locks.lock().entry((user.clone(), kind)).or_default().clone();
        let _guard = lock.lock();

        let store = self.repo.store();
        let summary_graph = Iri::new(format!("{user}/summary/{kind}"))?;
        let output_graph = Iri::new(format!("{user}/inferred/{kind}"))?;
        store.clear_graph(&summary_graph);
        store.insert_all(&summary_graph, self.summarize(kind, user, window));

        let own: BTreeSet<Iri> = self.repo.vos_owned_by(user).into_iter().map(|v| v.id).collect();
        let cvo_graphs = self
            .repo
            .cvos()
            .into_iter()
            .filter(|c| c.members.iter().any(|m| own.contains(m)))
            .map(|c| c.description_graph);
        let inputs = [summary_graph, vocab::iri(KB_GRAPH), model.profile_graph].into_iter().chain(cvo_graphs);
        let prog = RuleProgram::new(kind.name(), self.rules[&kind].clone(), inputs, output_graph.clone())?;
        let result = infer_fixpoint(store, &prog)?;

        let conclusion = kind.conclusion();
        let values: BTreeSet<Term> = result
            .derived
            .iter()
            .filter(|t| &t.subject == user && t.predicate == conclusion)
            .map(|t| t.object.clone())
            .collect();
        if values.len() > 1 {
            store.clear_graph(&output_graph);
            return Err(kind.ambiguous(user, values.into_iter().collect()));
        }
        Ok(result.derived)
    }

    /// The single conclusion of a run, if any.
    pub fn conclude(&self, kind: ReasonerKind, user: &Iri, window: TimeWindow) -> Result<Option<Iri>, RuleError> {
        let conclusion = kind.conclusion();
        Ok(self
            .run(kind, user, window)?
            .into_iter()
            .find(|t| &t.subject == user && t.predicate == conclusion)
            .and_then(|t| t.object.as_iri().cloned()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::object::{DomainId, Observation, UserModel, VirtualObject, VoKind};
    use crate::semantic::GraphStore;

    const T0: i64 = 1_700_000_000_000 - 1_700_000_000_000 % 86_400_000;

    struct Fixture {
        repo: Arc<ObjectRepository>,
        reasoners: Reasoners,
        user: Iri,
        seq: u64,
    }

    impl Fixture {
        fn new() -> Self {
            let store = Arc::new(GraphStore::new());
            let repo = Arc::new(ObjectRepository::new(store.clone()));
            let user = vocab::iri("urn:hub:user:u1");
            let profile = vocab::iri("urn:hub:user:u1/profile");
            store.create_graph(&profile);
            repo.register_user(UserModel {
                user_id: user.clone(),
                profile_graph: profile,
                preferences: Default::default(),
                access_level: 1,
            })
            .unwrap();
            let reasoners = Reasoners::bundled(repo.clone()).unwrap();
            Fixture { repo, reasoners, user, seq: 0 }
        }

        fn device(&self, name: &str, property: &str) -> Iri {
            let id = vocab::iri(&format!("urn:hub:vo:{name}"));
            let vo = VirtualObject {
                id: id.clone(),
                domain: DomainId::smart_home(),
                kind: VoKind::Sensor,
                description_graph: vocab::iri(&format!("urn:hub:vo:{name}/desc")),
                observed_property: vocab::iri(property),
                unit: "1".into(),
                owner: Some(self.user.clone()),
            };
            self.repo.register_described(vo, &vocab::iri("urn:hub:Sensor")).unwrap();
            id
        }

        fn observe(&mut self, source: &Iri, ts: i64, value: Literal) {
            self.seq += 1;
            let obs = Observation { source: source.clone(), timestamp: ts, value, sequence: self.seq };
            self.repo.ingest(&obs).unwrap();
        }

        fn conclude(&self, kind: ReasonerKind, window: TimeWindow) -> Result<Option<String>, RuleError> {
            self.reasoners
                .conclude(kind, &self.user, window)
                .map(|o| o.map(|i| i.local_name().to_owned()))
        }
    }

    #[test]
    fn bundled_rules_are_exclusive() {
        for kind in ReasonerKind::ALL {
            check_exclusive(kind, &parse_rules(kind.bundled_rules()).unwrap()).unwrap();
        }
    }

    #[test]
    fn no_observations_derive_nothing() {
        let f = Fixture::new();
        for kind in ReasonerKind::ALL {
            assert!(f.reasoners.run(kind, &f.user, TimeWindow::new(0, T0)).unwrap().is_empty());
        }
    }

    #[test]
    fn still_dark_night_is_sleeping() {
        let mut f = Fixture::new();
        let motion = f.device("motion", vocab::MOTION);
        let lum = f.device("lum", vocab::LUMINOSITY);
        let two_am = T0 + 2 * 3_600_000;
        for m in 0..30 {
            let ts = two_am - (29 - m) * 60_000;
            f.observe(&motion, ts, Literal::integer(0));
            f.observe(&lum, ts, Literal::decimal(3.0));
        }
        let w = TimeWindow::ending_at(two_am, 30);
        assert_eq!(f.conclude(ReasonerKind::Activity, w).unwrap().as_deref(), Some("Sleeping"));
        let derived = f.reasoners.run(ReasonerKind::Activity, &f.user, w).unwrap();
        assert_eq!(
            derived,
            vec![Triple::iris("urn:hub:user:u1", vocab::CURRENT_ACTIVITY, "urn:hub:Sleeping").unwrap()]
        );
        let out = vocab::iri("urn:hub:user:u1/inferred/activity");
        assert_eq!(f.repo.store().triples(&out), derived);
    }

    #[test]
    fn overlapping_rules_surface_as_ambiguity() {
        let mut f = Fixture::new();
        let motion = f.device("motion", vocab::MOTION);
        f.observe(&motion, T0 + 12 * 3_600_000, Literal::integer(1));
        let overlap: Vec<InferenceRule> = parse_rules(
            r#"{"rules":[
              {"id":"a","body":{"where":[["?u","urn:hub:windowMotionRatio","?r"]],"filters":[{"var":"?r","op":">","value":0}]},
               "head":[["?u","urn:hub:currentActivity","urn:hub:Active"]]},
              {"id":"b","body":{"where":[["?u","urn:hub:windowMotionRatio","?r"]],"filters":[{"var":"?r","op":">","value":0.5}]},
               "head":[["?u","urn:hub:currentActivity","urn:hub:Exercising"]]}]}"#,
        )
        .unwrap();
        let mut r = Reasoners::bundled(f.repo.clone()).unwrap();
        assert!(matches!(
            r.set_rules(ReasonerKind::Activity, overlap.clone()),
            Err(RuleError::OverlappingRules { .. })
        ));
        r.set_rules_unchecked(ReasonerKind::Activity, overlap);
        let w = TimeWindow::ending_at(T0 + 12 * 3_600_000, 30);
        assert!(matches!(r.run(ReasonerKind::Activity, &f.user, w), Err(RuleError::AmbiguousActivity { .. })));
    }

    #[test]
    fn latest_beacon_wins() {
        let mut f = Fixture::new();
        let kitchen = vocab::iri("urn:hub:zone:kitchen");
        let office = vocab::iri("urn:hub:zone:office");
        f.reasoners.declare_zone(&kitchen);
        f.reasoners.declare_zone(&office);
        let tag = f.device("tag", vocab::ZONE_PROXIMITY);
        f.observe(&tag, T0 + 1000, Literal::string(kitchen.as_str()));
        let w = TimeWindow::new(T0, T0 + 10_000);
        assert_eq!(f.conclude(ReasonerKind::Location, w).unwrap().as_deref(), Some("kitchen"));
        f.observe(&tag, T0 + 2000, Literal::string(office.as_str()));
        assert_eq!(f.conclude(ReasonerKind::Location, w).unwrap().as_deref(), Some("office"));
        let second = f.device("tag2", vocab::ZONE_PROXIMITY);
        f.observe(&second, T0 + 2000, Literal::string(kitchen.as_str()));
        assert_eq!(f.conclude(ReasonerKind::Location, w).unwrap().as_deref(), Some("kitchen"));
    }

    #[test]
    fn physio_bands() {
        let mut f = Fixture::new();
        let hr = f.device("hr", vocab::HEART_RATE);
        let sys = f.device("sys", vocab::SYSTOLIC);
        let w = TimeWindow::new(T0, T0 + 100_000);
        f.observe(&hr, T0 + 1, Literal::integer(72));
        f.observe(&sys, T0 + 2, Literal::integer(118));
        assert_eq!(f.conclude(ReasonerKind::Physio, w).unwrap().as_deref(), Some("Normal"));
        f.observe(&hr, T0 + 3, Literal::integer(130));
        assert_eq!(f.conclude(ReasonerKind::Physio, w).unwrap().as_deref(), Some("Elevated"));
        f.observe(&hr, T0 + 4, Literal::integer(150));
        assert_eq!(f.conclude(ReasonerKind::Physio, w).unwrap().as_deref(), Some("Critical"));
    }

    #[test]
    fn unknown_user_is_an_error() {
        let f = Fixture::new();
        let stranger = vocab::iri("urn:hub:user:nobody");
        assert!(matches!(
            f.reasoners.run(ReasonerKind::Physio, &stranger, TimeWindow::new(0, 1)),
            Err(RuleError::UnknownUser(_))
        ));
    }
}
