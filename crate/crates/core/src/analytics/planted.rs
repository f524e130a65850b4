//! Synthetic daily routine with a planted schedule: zone and activity are
//! functions of the hour of day, perturbed by label noise. Shared by the
//! device simulators and the training-data generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::features::{activity_features, location_features, physio_features};
use super::ml::LabeledInstance;

/// 2024-01-01T00:00:00Z, a Monday.
pub const EPOCH: i64 = 1_704_067_200_000;
pub const NOISE: f64 = 0.10;

const MINUTE: i64 = 60_000;
const HOUR: i64 = 60 * MINUTE;

pub const ZONES: [&str; 4] = ["Bedroom", "Kitchen", "LivingRoom", "Office"];
pub const ACTIVITIES: [&str; 4] = ["Active", "Exercising", "Resting", "Sleeping"];
pub const STATUSES: [&str; 3] = ["Critical", "Elevated", "Normal"];

pub fn planted_zone(hour: u32) -> &'static str {
    match hour {
        0..=6 | 22..=23 => "Bedroom",
        7 | 12 | 19 => "Kitchen",
        8..=11 | 13..=16 => "Office",
        _ => "LivingRoom",
    }
}

pub fn planted_activity(hour: u32) -> &'static str {
    match hour {
        0..=5 | 22..=23 => "Sleeping",
        6 | 7 | 12 => "Active",
        17 | 18 => "Exercising",
        _ => "Resting",
    }
}

/// Motion events per reading for an activity. Sleeping and resting are
/// still; active people move in about a third of readings; exercise moves
/// in all of them.
pub fn motion_level(activity: &str, rng: &mut impl Rng) -> f64 {
    match activity {
        "Sleeping" | "Resting" => 0.0,
        "Active" if rng.gen_bool(0.3) => rng.gen_range(5..=12) as f64,
        "Active" => 0.0,
        _ => rng.gen_range(15..=30) as f64,
    }
}

/// Physiological status the routine implies: exercise raises vitals.
pub fn planted_status(activity: &str) -> &'static str {
    if activity == "Exercising" {
        "Elevated"
    } else {
        "Normal"
    }
}

/// Luminosity (lux) for a zone at an hour; dark at night.
pub fn luminosity(hour: u32, rng: &mut impl Rng) -> f64 {
    let base = if (7..21).contains(&hour) { 300.0 } else { 5.0 };
    base + rng.gen_range(0.0..20.0)
}

/// `planted`, or with probability [`NOISE`] another label chosen uniformly.
pub fn noisy<'a>(planted: &'a str, labels: &[&'a str], rng: &mut impl Rng) -> &'a str {
    if rng.gen_bool(NOISE) {
        let others: Vec<&str> = labels.iter().copied().filter(|l| *l != planted).collect();
        others[rng.gen_range(0..others.len())]
    } else {
        planted
    }
}

pub fn hour_of(t: i64) -> u32 {
    (t.div_euclid(HOUR).rem_euclid(24)) as u32
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Timestamp of the `i`th hourly instance: the middle of hour `i`.
pub fn instance_time(i: usize) -> i64 {
    EPOCH + i as i64 * HOUR + 30 * MINUTE
}

/// `n` hourly instances in time order; each predicts the zone at its
/// timestamp from the zones before it.
pub fn location_dataset(seed: u64, n: usize) -> Vec<LabeledInstance> {
    let mut rng = rng_for(seed, 1);
    let mut history: Vec<(i64, String)> = Vec::new();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = instance_time(i);
        let zone = noisy(planted_zone(hour_of(t)), &ZONES, &mut rng).to_owned();
        out.push(LabeledInstance { features: location_features(&history, t - 1), label: zone.clone() });
        history.push((t, zone));
    }
    out
}

/// Like [`location_dataset`] for activities; three motion readings in the
/// half hour up to the timestamp reflect the (noisy) true activity.
pub fn activity_dataset(seed: u64, n: usize) -> Vec<LabeledInstance> {
    let mut rng = rng_for(seed, 2);
    let mut activities: Vec<(i64, String)> = Vec::new();
    let mut motion: Vec<(i64, f64)> = Vec::new();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = instance_time(i);
        let act = noisy(planted_activity(hour_of(t)), &ACTIVITIES, &mut rng).to_owned();
        for back in [25, 10, 0] {
            motion.push((t - back * MINUTE, motion_level(&act, &mut rng)));
        }
        out.push(LabeledInstance { features: activity_features(&activities, &motion, t), label: act.clone() });
        activities.push((t + MINUTE, act));
    }
    out
}

/// Vital signs consistent with a status; the band chosen for the abnormal
/// reading alternates between heart rate and systolic pressure.
pub fn vitals_for(status: &str, rng: &mut impl Rng) -> (f64, f64) {
    let normal_hr = rng.gen_range(55.0..95.0);
    let normal_sys = rng.gen_range(95.0..125.0);
    let hr_side = rng.gen_bool(0.5);
    match status {
        "Normal" => (normal_hr, normal_sys),
        "Elevated" if hr_side => (rng.gen_range(105.0..135.0), normal_sys),
        "Elevated" => (normal_hr, rng.gen_range(135.0..175.0)),
        _ if hr_side => (rng.gen_range(145.0..185.0), normal_sys),
        _ => (normal_hr, rng.gen_range(185.0..215.0)),
    }
}

pub fn physio_dataset(seed: u64, n: usize) -> Vec<LabeledInstance> {
    let mut rng = rng_for(seed, 3);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = instance_time(i);
        let planned = planted_activity(hour_of(t));
        let status = noisy(planted_status(planned), &STATUSES, &mut rng);
        let activity = noisy(planned, &ACTIVITIES, &mut rng);
        let (hr, sys) = vitals_for(status, &mut rng);
        let hr_readings: Vec<(i64, f64)> =
            (0..3).map(|q| (t - q * 5 * MINUTE, hr + rng.gen_range(-3.0..3.0))).collect();
        let sys_readings: Vec<(i64, f64)> =
            (0..2).map(|q| (t - q * 30 * MINUTE, sys + rng.gen_range(-3.0..3.0))).collect();
        out.push(LabeledInstance {
            features: physio_features(&hr_readings, &sys_readings, Some(activity), t),
            label: status.to_owned(),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_seeded() {
        assert_eq!(location_dataset(42, 50), location_dataset(42, 50));
        assert_ne!(location_dataset(42, 50), location_dataset(7, 50));
        assert_eq!(activity_dataset(1, 30), activity_dataset(1, 30));
        assert_eq!(physio_dataset(1, 30), physio_dataset(1, 30));
    }

    #[test]
    fn noise_rate_is_near_ten_percent() {
        let data = location_dataset(42, 2000);
        let off = data
            .iter()
            .enumerate()
            .filter(|(i, d)| {
                d.label != planted_zone(hour_of(instance_time(*i)))
            })
            .count();
        let rate = off as f64 / data.len() as f64;
        assert!((0.07..0.13).contains(&rate), "rate {rate}");
    }
}
