use std::collections::HashMap;

use chrono::NaiveDate;

use tokon_core::datasets::{DatasetRecord, Granularity};
use tokon_core::forecaster::{QuantizingOracle, Replay};
use tokon_core::normalization::{DomainStats, TimeSeries};
use tokon_core::search::{golden_section_search, SearchConfig, UpdateRule};
use tokon_core::Error;

fn records() -> Vec<DatasetRecord> {
    let start = NaiveDate::from_ymd_opt(2001, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    (0..4)
        .map(|i| DatasetRecord {
            id: format!("r{i}"),
            granularity: Granularity::Monthly,
            start_date: start,
            date_source: Default::default(),
            context: TimeSeries::new(vec![90.0 + i as f64, 110.0, 100.0]).unwrap(),
            target: TimeSeries::new(vec![100.0, 100.0]).unwrap(),
        })
        .collect()
}

fn config() -> SearchConfig<f64> {
    SearchConfig::new((0..4).map(|i| format!("r{i}")).collect())
}

#[test]
fn oracle_prefers_the_finest_grid_and_literal_rule_does_not() {
    let stats = DomainStats::new(100.0, 10.0, 12).unwrap();
    let (sigma, trace) = golden_section_search(&config(), &records(), &stats, &QuantizingOracle).unwrap();
    assert!(sigma > 990.0, "{sigma}");
    assert_eq!(trace.evaluations, 2 * trace.iterations.len());

    let mut literal = config();
    literal.update_rule = UpdateRule::Literal;
    let (sigma_literal, _) = golden_section_search(&literal, &records(), &stats, &QuantizingOracle).unwrap();
    assert!(sigma_literal < sigma);
}

#[test]
fn calibration_errors() {
    let stats = DomainStats::new(100.0, 10.0, 12).unwrap();
    let mut cfg = config();
    cfg.calibration_ids.push("missing".into());
    assert!(matches!(golden_section_search(&cfg, &records(), &stats, &QuantizingOracle), Err(Error::InvalidConfig(_))));

    let silent = Replay::new(HashMap::new());
    assert!(matches!(
        golden_section_search(&config(), &records(), &stats, &silent),
        Err(Error::AllForecastsFailed { .. })
    ));
}

#[test]
fn partial_failures_cost_the_naive_forecast() {
    let stats = DomainStats::new(100.0, 10.0, 12).unwrap();
    // only r0 answers, always far off; the others cost the naive forecast, which is exact here
    let replay = Replay::new(HashMap::from([("r0".to_string(), "0, 0".to_string())]));
    let (_, trace) = golden_section_search(&config(), &records(), &stats, &replay).unwrap();
    // token 0 maps to 100 - 499.5 * 10 / delta in both steps
    for state in &trace.iterations {
        for (probe, cost) in [(state.probe_lower, state.cost_lower), (state.probe_upper, state.cost_upper)] {
            let expected = 2.0 * (4995.0 / probe).powi(2);
            assert!((cost - expected).abs() <= 1e-9 * expected, "{probe}: {cost} vs {expected}");
        }
    }
}
