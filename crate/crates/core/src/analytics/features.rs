use chrono::{DateTime, Datelike, Timelike};

use super::ml::FeatureVector;

pub const LOCATION_SCHEMA: [&str; 4] = ["hour", "dow", "previous-zone", "dwell-minutes"];
pub const ACTIVITY_SCHEMA: [&str; 4] = ["hour", "dow", "previous-activity", "mean-motion-60"];
pub const PHYSIO_SCHEMA: [&str; 4] = ["mean-hr-15", "max-hr-15", "mean-systolic-60", "current-activity"];

pub const NONE: &str = "none";

const MINUTE: i64 = 60_000;

/// Hour of day (0-23, UTC) and three-letter weekday of `t`.
pub fn hour_and_dow(t: i64) -> (u32, String) {
    let d = DateTime::from_timestamp_millis(t).unwrap_or_default();
    (d.hour(), d.weekday().to_string())
}

fn sorted_before<T: Clone>(history: &[(i64, T)], t: i64) -> Vec<(i64, T)> {
    let mut h: Vec<(i64, T)> = history.iter().filter(|(ts, _)| *ts <= t).cloned().collect();
    h.sort_by_key(|(ts, _)| *ts);
    h
}

/// Latest value at or before `t` and how long (minutes) it has held,
/// measured from the first entry of its final unbroken run.
fn latest_run(history: &[(i64, String)], t: i64) -> Option<(String, f64)> {
    let h = sorted_before(history, t);
    let (_, last) = h.last()?.clone();
    let start = h.iter().rev().take_while(|(_, v)| *v == last).last().map(|(ts, _)| *ts)?;
    Some((last, (t - start) as f64 / MINUTE as f64))
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn in_window(history: &[(i64, f64)], t: i64, minutes: i64) -> Vec<f64> {
    history.iter().filter(|(ts, _)| *ts > t - minutes * MINUTE && *ts <= t).map(|(_, v)| *v).collect()
}

/// `zones`: (timestamp, zone) facts, in any order.
pub fn location_features(zones: &[(i64, String)], t: i64) -> FeatureVector {
    let (hour, dow) = hour_and_dow(t);
    let (prev, dwell) = latest_run(zones, t).unwrap_or_else(|| (NONE.to_owned(), 0.0));
    FeatureVector::new()
        .category("hour", hour.to_string())
        .category("dow", dow)
        .category("previous-zone", prev)
        .number("dwell-minutes", dwell)
}

/// `activities`: derived (timestamp, activity) facts; `motion`: motion
/// counts. The mean covers readings in (t - 60 min, t].
pub fn activity_features(activities: &[(i64, String)], motion: &[(i64, f64)], t: i64) -> FeatureVector {
    let (hour, dow) = hour_and_dow(t);
    let prev = sorted_before(activities, t).pop().map(|(_, a)| a).unwrap_or_else(|| NONE.to_owned());
    FeatureVector::new()
        .category("hour", hour.to_string())
        .category("dow", dow)
        .category("previous-activity", prev)
        .number("mean-motion-60", mean(&in_window(motion, t, 60)))
}

pub fn physio_features(
    heart_rate: &[(i64, f64)],
    systolic: &[(i64, f64)],
    current_activity: Option<&str>,
    t: i64,
) -> FeatureVector {
    let hr = in_window(heart_rate, t, 15);
    let max_hr = hr.iter().copied().fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))));
    FeatureVector::new()
        .number("mean-hr-15", mean(&hr))
        .number("max-hr-15", max_hr.unwrap_or(0.0))
        .number("mean-systolic-60", mean(&in_window(systolic, t, 60)))
        .category("current-activity", current_activity.unwrap_or(NONE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::ml::FeatureValue;

    // 2024-01-01 was a Monday.
    const MONDAY: i64 = 1_704_067_200_000;

    #[test]
    fn empty_history_defaults() {
        let f = location_features(&[], MONDAY + 9 * 60 * MINUTE);
        assert_eq!(f.names(), LOCATION_SCHEMA.to_vec());
        assert_eq!(f.get("hour"), Some(&FeatureValue::category("9")));
        assert_eq!(f.get("dow"), Some(&FeatureValue::category("Mon")));
        assert_eq!(f.get("previous-zone"), Some(&FeatureValue::category(NONE)));
        assert_eq!(f.get("dwell-minutes"), Some(&FeatureValue::Number(0.0)));
        let a = activity_features(&[], &[], MONDAY);
        assert_eq!(a.names(), ACTIVITY_SCHEMA.to_vec());
        assert_eq!(a.get("mean-motion-60"), Some(&FeatureValue::Number(0.0)));
    }

    #[test]
    fn dwell_counts_the_final_run() {
        let t = MONDAY + 60 * MINUTE;
        let h = vec![
            (t - 30 * MINUTE, "Office".to_owned()),
            (t - 12 * MINUTE, "Kitchen".to_owned()),
            (t - 5 * MINUTE, "Kitchen".to_owned()),
            (t + 5 * MINUTE, "Office".to_owned()),
        ];
        let f = location_features(&h, t);
        assert_eq!(f.get("previous-zone"), Some(&FeatureValue::category("Kitchen")));
        assert_eq!(f.get("dwell-minutes"), Some(&FeatureValue::Number(12.0)));
        let mut shuffled = h.clone();
        shuffled.reverse();
        assert_eq!(location_features(&shuffled, t), f);
    }

    #[test]
    fn activity_and_physio_windows() {
        let t = MONDAY + 120 * MINUTE;
        let motion = vec![(t - 70 * MINUTE, 100.0), (t - 50 * MINUTE, 2.0), (t - 10 * MINUTE, 4.0), (t, 6.0)];
        let acts = vec![(t - 30 * MINUTE, "Resting".to_owned()), (t - 90 * MINUTE, "Active".to_owned())];
        let f = activity_features(&acts, &motion, t);
        assert_eq!(f.get("previous-activity"), Some(&FeatureValue::category("Resting")));
        assert_eq!(f.get("mean-motion-60"), Some(&FeatureValue::Number(4.0)));

        let hr = vec![(t - 20 * MINUTE, 200.0), (t - 10 * MINUTE, 70.0), (t, 80.0)];
        let sys = vec![(t - 30 * MINUTE, 110.0), (t, 130.0)];
        let p = physio_features(&hr, &sys, Some("Resting"), t);
        assert_eq!(p.names(), PHYSIO_SCHEMA.to_vec());
        assert_eq!(p.get("mean-hr-15"), Some(&FeatureValue::Number(75.0)));
        assert_eq!(p.get("max-hr-15"), Some(&FeatureValue::Number(80.0)));
        assert_eq!(p.get("mean-systolic-60"), Some(&FeatureValue::Number(120.0)));
    }
}
