use chiarella::io::{day_from_path, ingest_csv, write_days_csv, DayData};
use chiarella::PricePath;
use chrono::{NaiveDate, TimeDelta};
use proptest::prelude::*;

fn day(symbol: &str, prices: Vec<f64>, date: u32) -> DayData {
    let start = NaiveDate::from_ymd_opt(2024, 1, date).unwrap().and_hms_opt(9, 30, 0).unwrap();
    day_from_path(symbol, PricePath::new(prices).unwrap(), start).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn writer_output_ingests_identically(
        a in prop::collection::vec(0.01f64..1e4, 2..80),
        b in prop::collection::vec(1e-6f64..10.0, 2..80),
    ) {
        let days = vec![day("AAA", a, 2), day("AAA", b.clone(), 3), day("ZZ", b, 2)];
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("days.csv");
        write_days_csv(&days, &file).unwrap();
        prop_assert_eq!(ingest_csv(&file).unwrap(), days);
    }

    #[test]
    fn filled_minutes_survive_round_trip(
        prices in prop::collection::vec(1.0f64..100.0, 4..60),
        drops in prop::collection::vec(any::<bool>(), 4..60),
    ) {
        // Drop isolated interior minutes; each gap is one minute and gets filled.
        let full = day("GAP", prices.clone(), 5);
        let ts = full.timestamps().to_vec();
        let n = prices.len();
        let keep: Vec<bool> = (0..n)
            .map(|i| i == 0 || i == n - 1 || !(drops[i % drops.len()] && !drops[(i - 1) % drops.len()]))
            .collect();
        let mut text = String::from("symbol,timestamp,price\n");
        for i in (0..n).filter(|&i| keep[i]) {
            text += &format!("GAP,{},{}\n", ts[i].format("%Y-%m-%dT%H:%M:%S"), prices[i]);
        }
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("gaps.csv");
        std::fs::write(&file, text).unwrap();
        let days = ingest_csv(&file).unwrap();
        prop_assert_eq!(days.len(), 1);
        let d = &days[0];
        prop_assert_eq!(d.path.len(), n);
        for i in 0..n {
            prop_assert_eq!(d.filled[i], !keep[i]);
            let want = if keep[i] { prices[i] } else { prices[i - 1] };
            prop_assert_eq!(d.path.prices[i], want);
            prop_assert_eq!(d.timestamps()[i], ts[0] + TimeDelta::minutes(i as i64));
        }
        let again = dir.path().join("again.csv");
        write_days_csv(&days, &again).unwrap();
        prop_assert_eq!(&ingest_csv(&again).unwrap(), &days);
    }
}
