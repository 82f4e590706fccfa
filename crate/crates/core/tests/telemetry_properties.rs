use bofex::telemetry::{
    clean, parse_csv_reader, window, write_csv, RawLog, ValidityLimits, N_CHANNELS, SEGMENT_LEN,
    STEP_SECONDS,
};
use bofex::Mnemonic;
use proptest::prelude::*;

const T0: i64 = 1_700_000_000;

/// Irregularly sampled raw log whose channels all start with a valid value.
/// Roughly one value in eight falls outside the default limits.
fn raw_log(max_samples: usize) -> impl Strategy<Value = RawLog> {
    let limits = ValidityLimits::default();
    let channel = move |m: Mnemonic| {
        let (lo, hi) = limits.get(m);
        let span = hi - lo;
        prop::collection::vec((1i64..25, 0u8..8, 0.0f64..1.0), 2..max_samples).prop_map(move |draws| {
            let mut t = T0;
            let mut out = Vec::with_capacity(draws.len());
            for (i, (dt, kind, u)) in draws.into_iter().enumerate() {
                let v = if i > 0 && kind == 0 {
                    hi + span * (0.01 + u)
                } else {
                    lo + span * u
                };
                out.push((t, v));
                t += dt;
            }
            out
        })
    };
    let channels: Vec<_> = Mnemonic::ALL.iter().map(|&m| channel(m)).collect();
    channels.prop_map(|channels| RawLog {
        well_id: "w".into(),
        channels,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cleaned_values_stay_within_limits(raw in raw_log(200)) {
        let limits = ValidityLimits::default();
        let log = clean(&raw, &limits, STEP_SECONDS).unwrap();
        for &m in &Mnemonic::ALL {
            for &v in log.channel(m) {
                prop_assert!(limits.contains(m, v), "{m} = {v}");
            }
        }
    }

    #[test]
    fn clean_is_idempotent(raw in raw_log(200)) {
        let limits = ValidityLimits::default();
        let once = clean(&raw, &limits, STEP_SECONDS).unwrap();
        let twice = clean(&once.to_raw(), &limits, STEP_SECONDS).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn csv_round_trip_is_identity(raw in raw_log(120)) {
        let limits = ValidityLimits::default();
        let log = clean(&raw, &limits, STEP_SECONDS).unwrap();
        let mut bytes = Vec::new();
        write_csv(&log, &mut bytes).unwrap();
        let back = clean(&parse_csv_reader("w", bytes.as_slice()).unwrap(), &limits, STEP_SECONDS).unwrap();
        prop_assert_eq!(log, back);
    }

    #[test]
    fn windows_are_always_one_hour(raw in raw_log(700), pick in 0.0f64..1.0) {
        let log = clean(&raw, &ValidityLimits::default(), STEP_SECONDS).unwrap();
        if log.len() >= SEGMENT_LEN {
            let end = SEGMENT_LEN + ((log.len() - SEGMENT_LEN) as f64 * pick) as usize;
            let seg = window(&log, log.time_at(end)).unwrap();
            prop_assert_eq!(seg.end_index() - seg.start_index(), SEGMENT_LEN);
            for &m in &Mnemonic::ALL {
                prop_assert_eq!(seg.channel(m).len(), SEGMENT_LEN);
            }
        } else {
            prop_assert!(window(&log, log.end()).is_err());
        }
    }
}

#[test]
fn shipped_limits_file_matches_defaults() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../config/limits.toml");
    let shipped = ValidityLimits::load(std::path::Path::new(path)).unwrap();
    assert_eq!(shipped, ValidityLimits::default());
    assert_eq!(Mnemonic::ALL.len(), N_CHANNELS);
}
