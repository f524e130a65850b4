//! Seeded device simulators. Each user follows the planted daily routine;
//! once per simulated hour a (possibly noisy) activity, zone and status are
//! drawn and every device reading that hour is generated around them.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analytics::planted::{
    hour_of, luminosity, motion_level, noisy, planted_activity, planted_status, planted_zone, vitals_for, ACTIVITIES,
    EPOCH, STATUSES, ZONES,
};
use crate::bus::Topic;
use crate::object::{DomainId, Observation};
use crate::semantic::{vocab, Iri, Literal};

use super::config::{Rates, ScenarioConfig};
use super::domain::SourceFormat;

/// One tick is one simulated minute.
pub const TICK_MS: i64 = 60_000;

pub fn tick_time(tick: u64) -> i64 {
    EPOCH + tick as i64 * TICK_MS
}

pub fn user_iri(index: usize) -> Iri {
    Iri::new(format!("urn:hub:user:u{index}")).expect("static pattern")
}

pub fn zone_iri(zone: &str) -> Iri {
    Iri::new(format!("urn:hub:zone:{zone}")).expect("zone names are plain words")
}

pub fn vo_iri(domain: &DomainId, local: &str) -> Iri {
    Iri::new(format!("urn:hub:vo:{domain}:{local}")).expect("domain ids and device ids are IRI-safe")
}

/// A kind of device every user of a domain carries.
#[derive(Debug, Clone, Copy)]
pub struct DeviceKind {
    /// Prefix of the device id, `{prefix}-u{index}`.
    pub prefix: &'static str,
    pub class: &'static str,
    pub property: &'static str,
    pub unit: &'static str,
    rate: fn(&Rates) -> u64,
}

impl DeviceKind {
    pub fn every(&self, rates: &Rates) -> u64 {
        (self.rate)(rates)
    }

    pub fn device_id(&self, user: usize) -> String {
        format!("{}-u{user}", self.prefix)
    }
}

const HOME: [DeviceKind; 4] = [
    DeviceKind { prefix: "motion", class: "urn:hub:MotionSensor", property: vocab::MOTION, unit: "events", rate: |r| r.motion },
    DeviceKind {
        prefix: "luminosity",
        class: "urn:hub:LuminositySensor",
        property: vocab::LUMINOSITY,
        unit: "lux",
        rate: |r| r.luminosity,
    },
    DeviceKind {
        prefix: "temperature",
        class: "urn:hub:TemperatureSensor",
        property: vocab::TEMPERATURE,
        unit: "celsius",
        rate: |r| r.temperature,
    },
    DeviceKind {
        prefix: "appliance",
        class: "urn:hub:PowerMeter",
        property: vocab::APPLIANCE_POWER,
        unit: "watt",
        rate: |r| r.appliance,
    },
];

const MEDICAL: [DeviceKind; 3] = [
    DeviceKind { prefix: "hr", class: "urn:hub:VitalsMonitor", property: vocab::HEART_RATE, unit: "bpm", rate: |r| r.vitals },
    DeviceKind { prefix: "sys", class: "urn:hub:VitalsMonitor", property: vocab::SYSTOLIC, unit: "mmHg", rate: |r| r.vitals },
    DeviceKind { prefix: "dia", class: "urn:hub:VitalsMonitor", property: vocab::DIASTOLIC, unit: "mmHg", rate: |r| r.vitals },
];

const OFFICE: [DeviceKind; 1] = [DeviceKind {
    prefix: "beacon",
    class: "urn:hub:Beacon",
    property: vocab::ZONE_PROXIMITY,
    unit: "zone",
    rate: |r| r.beacon,
}];

pub fn device_kinds(domain: &DomainId) -> &'static [DeviceKind] {
    match domain.as_str() {
        DomainId::SMART_HOME => &HOME,
        DomainId::MEDICAL_FACILITY => &MEDICAL,
        DomainId::SMART_OFFICE => &OFFICE,
        _ => &[],
    }
}

/// The medical facility's device table, one row per vitals monitor.
pub fn medical_devices_csv(users: usize) -> String {
    let mut out = String::from("device_id,measures,unit,patient\n");
    for u in 0..users {
        for d in &MEDICAL {
            let measures = d.property.strip_prefix(vocab::HUB).unwrap_or(d.property);
            out.push_str(&format!("{},{measures},{},u{u}\n", d.device_id(u), d.unit));
        }
    }
    out
}

/// The state a user is actually in, which analytics are scored against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Truth {
    pub activity: String,
    pub zone: String,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Emission {
    pub domain: DomainId,
    pub topic: Topic,
    pub payload: Vec<u8>,
}

struct UserSim {
    rng: ChaCha8Rng,
    hour_start: Option<i64>,
    truth: Truth,
    vitals: (f64, f64),
    sequences: BTreeMap<String, u64>,
}

pub struct Simulator {
    users: Vec<UserSim>,
    rates: Rates,
    noise: bool,
    domains: Vec<DomainId>,
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

impl Simulator {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        let users = (0..cfg.users_per_domain)
            .map(|u| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(100 + u as u64);
                UserSim {
                    rng,
                    hour_start: None,
                    truth: Truth { activity: String::new(), zone: String::new(), status: String::new() },
                    vitals: (0.0, 0.0),
                    sequences: BTreeMap::new(),
                }
            })
            .collect();
        Simulator { users, rates: cfg.rates.clone(), noise: cfg.noise, domains: DomainId::defaults().to_vec() }
    }

    pub fn truth(&self, user: usize) -> Option<&Truth> {
        self.users.get(user).filter(|u| u.hour_start.is_some()).map(|u| &u.truth)
    }

    /// Emissions for `tick`: users in order, then domains, then devices.
    pub fn step(&mut self, tick: u64) -> Vec<Emission> {
        let t = tick_time(tick);
        let hour_start = t - t.rem_euclid(60 * TICK_MS);
        let mut out = Vec::new();
        for (index, user) in self.users.iter_mut().enumerate() {
            if user.hour_start != Some(hour_start) {
                user.hour_start = Some(hour_start);
                redraw(user, hour_of(t), self.noise);
            }
            for domain in &self.domains {
                for kind in device_kinds(domain) {
                    let every = kind.every(&self.rates);
                    if every == 0 || tick % every != 0 {
                        continue;
                    }
                    let value = reading(user, kind, hour_of(t));
                    let device = kind.device_id(index);
                    let seq = user.sequences.entry(device.clone()).or_insert(0);
                    *seq += 1;
                    let obs = Observation { source: vo_iri(domain, &device), timestamp: t, value, sequence: *seq };
                    let topic = Topic::new(&format!("obs/{domain}/{device}")).expect("device ids are topic-safe");
                    out.push(Emission { domain: domain.clone(), topic, payload: encode(domain, &device, &obs) });
                }
            }
        }
        out
    }
}

fn redraw(user: &mut UserSim, hour: u32, noise: bool) {
    let rng = &mut user.rng;
    let activity = planted_activity(hour);
    let zone = planted_zone(hour);
    let status = planted_status(activity);
    let (activity, zone, status) = if noise {
        (noisy(activity, &ACTIVITIES, rng), noisy(zone, &ZONES, rng), noisy(status, &STATUSES, rng))
    } else {
        (activity, zone, status)
    };
    user.vitals = vitals_for(status, rng);
    user.truth = Truth { activity: activity.into(), zone: zone.into(), status: status.into() };
}

fn reading(user: &mut UserSim, kind: &DeviceKind, hour: u32) -> Literal {
    let rng = &mut user.rng;
    let activity = user.truth.activity.as_str();
    match kind.property {
        vocab::MOTION => Literal::integer(motion_level(activity, rng) as i64),
        vocab::LUMINOSITY => Literal::decimal(round1(luminosity(hour, rng))),
        vocab::TEMPERATURE => {
            let warm = if activity == "Exercising" { 1.5 } else { 0.0 };
            Literal::decimal(round1(20.0 + warm + rng.gen_range(0.0..2.0)))
        }
        vocab::APPLIANCE_POWER => {
            let w = if activity == "Active" { rng.gen_range(100.0..400.0) } else { rng.gen_range(5.0..20.0) };
            Literal::decimal(round1(w))
        }
        vocab::ZONE_PROXIMITY => Literal::string(zone_iri(&user.truth.zone).as_str()),
        vocab::HEART_RATE => Literal::decimal(round1(user.vitals.0 + rng.gen_range(-3.0..3.0))),
        vocab::SYSTOLIC => Literal::decimal(round1(user.vitals.1 + rng.gen_range(-3.0..3.0))),
        _ => Literal::decimal(round1(user.vitals.1 * 0.65 + rng.gen_range(-3.0..3.0))),
    }
}

fn encode(domain: &DomainId, device: &str, obs: &Observation) -> Vec<u8> {
    match SourceFormat::of(domain) {
        SourceFormat::JsonObservations => serde_json::to_vec(obs).expect("observations serialize"),
        SourceFormat::RelationalCsv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["device_id", "sequence", "timestamp", "value"]).expect("in-memory write");
            w.write_record([device, &obs.sequence.to_string(), &obs.timestamp.to_string(), obs.value.lexical()])
                .expect("in-memory write");
            w.into_inner().expect("in-memory flush")
        }
    }
}
