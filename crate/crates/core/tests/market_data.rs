use std::fs::File;

use pihedge_core::market_data::{
    build_dataset, load_ohlcv_csv, quantize_decision, write_ohlcv_csv, CsvSchema, Episode, OhlcvBar,
};
use proptest::prelude::*;

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/ohlcv_6x78.csv");
const SAMPLES: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/../../fixtures/ohlcv_6x78_samples.csv"
);

fn fixture() -> Vec<Episode> {
    load_ohlcv_csv(File::open(FIXTURE).unwrap(), &CsvSchema::default()).unwrap()
}

#[test]
fn fixture_has_six_days_of_77_samples() {
    let episodes = fixture();
    assert_eq!(episodes.len(), 6);
    for e in &episodes {
        assert_eq!(e.len(), 78);
        assert_eq!(build_dataset(e).unwrap().len(), 77);
    }
    assert_eq!(episodes[4].label, "2021-01-29");
}

#[test]
fn fixture_samples_match_reference() {
    let episodes = fixture();
    let mut reader = csv::Reader::from_path(SAMPLES).unwrap();
    let mut expected = reader.records().map(|r| r.unwrap());
    for e in &episodes {
        for s in build_dataset(e).unwrap() {
            let row = expected.next().unwrap();
            assert_eq!(&row[0], e.label.as_str());
            assert_eq!(row[1].parse::<usize>().unwrap(), s.slot);
            assert_eq!(
                row[2].parse::<f64>().unwrap(),
                s.d,
                "{} slot {}",
                e.label,
                s.slot
            );
            assert_eq!(
                row[3].parse::<f64>().unwrap(),
                s.g,
                "{} slot {}",
                e.label,
                s.slot
            );
        }
    }
    assert!(expected.next().is_none());
}

#[test]
fn keeping_first_slot_adds_one_sample() {
    let schema = CsvSchema {
        drop_first_slot: false,
        ..CsvSchema::default()
    };
    let episodes = load_ohlcv_csv(File::open(FIXTURE).unwrap(), &schema).unwrap();
    assert!(episodes
        .iter()
        .all(|e| build_dataset(e).unwrap().len() == 78));
}

#[test]
fn csv_round_trip_preserves_bars() {
    let episodes = fixture();
    let mut buf = Vec::new();
    write_ohlcv_csv(&episodes, &mut buf).unwrap();
    let back = load_ohlcv_csv(buf.as_slice(), &CsvSchema::default()).unwrap();
    assert_eq!(back.len(), episodes.len());
    for (a, b) in back.iter().zip(&episodes) {
        assert_eq!(a.bars(), b.bars());
    }
}

fn bar_strategy() -> impl Strategy<Value = OhlcvBar> {
    (
        1.0f64..500.0,
        0.0f64..0.1,
        0.0f64..0.1,
        0.0f64..=1.0,
        0.0f64..1e7,
    )
        .prop_map(|(o, up, down, frac, v)| {
            let high = o * (1.0 + up);
            let low = o * (1.0 - down);
            let close = low + frac * (high - low);
            OhlcvBar::new(0, o, high, low, close, v).unwrap()
        })
}

proptest! {
    #[test]
    fn decision_sign_and_bound(bar in bar_strategy()) {
        let d = quantize_decision(&bar);
        prop_assert!(d.is_finite());
        if bar.close > bar.open {
            prop_assert!(d >= 0.0);
        } else if bar.close < bar.open {
            prop_assert!(d <= 0.0);
        } else {
            prop_assert_eq!(d, 0.0);
        }
        prop_assert!(d.abs() <= bar.volume * bar.high * (1.0 + 1e-12));
    }

    #[test]
    fn dataset_targets_are_price_changes(bars in prop::collection::vec(bar_strategy(), 2..30)) {
        let bars: Vec<OhlcvBar> = bars.into_iter().enumerate().map(|(i, b)| OhlcvBar { slot_index: i, ..b }).collect();
        let episode = Episode::new(bars.clone(), "day", true).unwrap();
        let data = build_dataset(&episode).unwrap();
        prop_assert_eq!(data.len(), bars.len() - 1);
        for (s, b) in data.iter().zip(&bars[1..]) {
            prop_assert_eq!(s.g, b.close / b.open - 1.0);
            prop_assert_eq!(s.open, b.open);
        }
    }
}
