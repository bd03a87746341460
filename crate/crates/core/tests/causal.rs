mod common;

use common::{normal, random_panel, rng};
use gpcausal::causal::{att_draws, pretreatment_fit, quantile_sorted, AttReport, CounterfactualDraws, Interval, Period};
use gpcausal::panel::PanelData;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn panel_and_draws(seed: u64, m: usize) -> (PanelData, CounterfactualDraws) {
    let mut r = rng(seed);
    let panel = random_panel(&mut r, 6, 5, 2, 3);
    let cells = panel.partition().mis;
    let draws = DMatrix::from_fn(m, cells.len(), |_, _| normal(&mut r));
    (panel, CounterfactualDraws::new(draws, cells).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shifting_treated_outcomes_shifts_att(seed in 0u64..100_000, c in -50.0f64..50.0) {
        let (panel, cf) = panel_and_draws(seed, 30);
        let mis = panel.partition().mis;
        let y: Vec<f64> = (0..panel.n_cells())
            .map(|k| {
                let cell = panel.cell(k);
                panel.y()[k] + if mis.contains(&cell) { c } else { 0.0 }
            })
            .collect();
        let shifted = panel.with_outcomes(y).unwrap();
        let a = att_draws(&panel, &cf, false).unwrap();
        let b = att_draws(&shifted, &cf, false).unwrap();
        for (x, z) in a.att_draws.iter().zip(&b.att_draws) {
            prop_assert!((z - x - c).abs() < 1e-10);
        }
    }

    #[test]
    fn overall_att_is_count_weighted_mean_of_periods(seed in 0u64..100_000) {
        let (panel, cf) = panel_and_draws(seed, 25);
        let s = att_draws(&panel, &cf, false).unwrap();
        let total: usize = s.by_time.iter().map(|t| t.n_cells).sum();
        prop_assert_eq!(total, cf.cells.len());
        for m in 0..25 {
            let agg: f64 = s
                .by_time
                .iter()
                .map(|t| s.att_by_time[(m, t.time - 1)] * t.n_cells as f64)
                .sum::<f64>()
                / total as f64;
            prop_assert!((agg - s.att_draws[m]).abs() < 1e-12);
        }
    }
}

#[test]
fn pre_periods_have_no_post_columns() {
    let (panel, cf) = panel_and_draws(1, 10);
    let s = att_draws(&panel, &cf, false).unwrap();
    for t in 0..2 {
        assert!(s.att_by_time.column(t).iter().all(|v| v.is_nan()));
    }
    assert!(s.by_time.iter().all(|t| t.period == Period::Post && t.time >= 3));
}

#[test]
fn mean_shift_in_pretreatment_predictions() {
    let (panel, _) = panel_and_draws(2, 1);
    let pre = panel.treated_pre_cells();
    let draws = DMatrix::from_fn(50, pre.len(), |m, k| panel.y_at(pre[k]) + 1.0 + 1e-3 * m as f64);
    let fit = pretreatment_fit(&panel, &CounterfactualDraws::new(draws, pre).unwrap(), false).unwrap();
    assert_eq!(fit.by_time.len(), panel.t0());
    for t in &fit.by_time {
        assert!((t.interval.median + 1.0245).abs() < 1e-12);
    }
    assert_eq!(fit.periods_covering_zero, 0);
}

#[test]
fn median_error_shrinks_with_more_draws() {
    let spread = |m: usize| {
        let meds: Vec<f64> = (0..40)
            .map(|s| {
                let mut r = rng(1000 + s);
                let v: Vec<f64> = (0..m).map(|_| normal(&mut r)).collect();
                Interval::from_draws(&v).median
            })
            .collect();
        let mean = meds.iter().sum::<f64>() / meds.len() as f64;
        (meds.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (meds.len() - 1) as f64).sqrt()
    };
    assert!(spread(10_000) < spread(100));
}

#[test]
fn quantiles_interpolate_linearly() {
    let v = [1.0, 2.0, 3.0, 4.0, 5.0];
    assert_eq!(quantile_sorted(&v, 0.0), 1.0);
    assert_eq!(quantile_sorted(&v, 1.0), 5.0);
    assert_eq!(quantile_sorted(&v, 0.5), 3.0);
    assert!((quantile_sorted(&v, 0.125) - 1.5).abs() < 1e-15);
}

#[test]
fn report_rows_are_time_ordered() {
    let (panel, cf) = panel_and_draws(3, 20);
    let pre = panel.treated_pre_cells();
    let pd = DMatrix::from_fn(20, pre.len(), |m, _| m as f64 * 0.1);
    let report = AttReport::new(
        &att_draws(&panel, &cf, false).unwrap(),
        Some(pretreatment_fit(&panel, &CounterfactualDraws::new(pd, pre).unwrap(), false).unwrap()),
    );
    let times: Vec<usize> = report.att_by_time.iter().map(|r| r.time).collect();
    assert_eq!(times, vec![1, 2, 3, 4, 5]);
    let mut buf = Vec::new();
    report.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next(), Some("time,period,n_cells,median,lo,hi"));
    assert_eq!(text.lines().count(), 6);
    let json = serde_json::to_value(&report).unwrap();
    for key in ["att", "att_by_time", "pretreatment"] {
        assert!(json.get(key).is_some(), "{key}");
    }
    for key in ["median", "lo", "hi"] {
        assert!(json["att"].get(key).is_some());
    }
}
