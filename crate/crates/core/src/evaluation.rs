//! Forecast scoring and experiment runs.
//!
//! Metrics are always computed in domain units. Step `k` pools the `k`-th
//! error of every successful series; the averaged figures are means of the
//! per-step values over the evaluated steps.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::forecaster::{forecast_batch, replay_line, BackendConfig, Forecaster};
use crate::normalization::NormalizationParams;
use crate::pipeline::{build_request, prediction_to_domain};
use crate::prompting::PromptKind;
use crate::scalar::{mean, Scalar};

fn check_lengths<T>(predictions: &[T], targets: &[T]) -> Result<()> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(Error::LengthMismatch { left: predictions.len(), right: targets.len() });
    }
    Ok(())
}

pub fn rmse<T: Scalar>(predictions: &[T], targets: &[T]) -> Result<T> {
    check_lengths(predictions, targets)?;
    let sq: Vec<T> = predictions.iter().zip(targets).map(|(&p, &t)| (p - t) * (p - t)).collect();
    Ok(mean(&sq).expect("non-empty").sqrt())
}

pub fn mae<T: Scalar>(predictions: &[T], targets: &[T]) -> Result<T> {
    check_lengths(predictions, targets)?;
    let abs: Vec<T> = predictions.iter().zip(targets).map(|(&p, &t)| (p - t).abs()).collect();
    Ok(mean(&abs).expect("non-empty"))
}

/// Prediction (absent when the forecast failed) and ground truth of one series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesOutcome<T> {
    pub prediction: Option<Vec<T>>,
    pub target: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport<T> {
    pub rmse_per_step: Vec<T>,
    pub mae_per_step: Vec<T>,
    pub rmse_avg: T,
    pub mae_avg: T,
    pub n_series: usize,
    pub n_failed: usize,
}

impl<T: Scalar> MetricReport<T> {
    pub fn steps(&self) -> usize {
        self.rmse_per_step.len()
    }

    /// Tab-separated `step, rmse, mae` rows, steps numbered from 1.
    pub fn write_table<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step\trmse\tmae")?;
        for (k, (r, m)) in self.rmse_per_step.iter().zip(&self.mae_per_step).enumerate() {
            writeln!(out, "{}\t{r}\t{m}", k + 1)?;
        }
        writeln!(out, "avg\t{}\t{}", self.rmse_avg, self.mae_avg)
    }
}

/// Per-step RMSE and MAE over the first `steps` steps (all of `horizon`
/// when `None`). Failed series are excluded and counted.
pub fn per_step_metrics<T: Scalar>(
    outcomes: &[SeriesOutcome<T>],
    horizon: usize,
    steps: Option<usize>,
) -> Result<MetricReport<T>> {
    let steps = steps.unwrap_or(horizon);
    if steps == 0 || steps > horizon {
        return Err(Error::InvalidParams(format!("cannot evaluate {steps} of {horizon} steps")));
    }
    let mut ok = Vec::new();
    let mut n_failed = 0;
    for o in outcomes {
        if o.target.len() != horizon {
            return Err(Error::LengthMismatch { left: o.target.len(), right: horizon });
        }
        match &o.prediction {
            Some(p) if p.len() == horizon => ok.push((p, &o.target)),
            Some(p) => return Err(Error::LengthMismatch { left: p.len(), right: horizon }),
            None => n_failed += 1,
        }
    }
    if ok.is_empty() {
        return Err(Error::NoSuccessfulSeries);
    }
    let mut rmse_per_step = Vec::with_capacity(steps);
    let mut mae_per_step = Vec::with_capacity(steps);
    for k in 0..steps {
        let preds: Vec<T> = ok.iter().map(|(p, _)| p[k]).collect();
        let truth: Vec<T> = ok.iter().map(|(_, t)| t[k]).collect();
        rmse_per_step.push(rmse(&preds, &truth)?);
        mae_per_step.push(mae(&preds, &truth)?);
    }
    Ok(MetricReport {
        rmse_avg: mean(&rmse_per_step).expect("steps > 0"),
        mae_avg: mean(&mae_per_step).expect("steps > 0"),
        rmse_per_step,
        mae_per_step,
        n_series: outcomes.len(),
        n_failed,
    })
}

/// Relative reduction from `baseline_value` to `improved_value`, in percent.
pub fn improvement_percent<T: Scalar>(baseline_value: T, improved_value: T) -> Result<T> {
    if !(baseline_value > T::zero()) {
        return Err(Error::NonPositiveBaseline(baseline_value.to_f64().unwrap_or(f64::NAN)));
    }
    Ok(T::lit(100.0) * (baseline_value - improved_value) / baseline_value)
}

/// Per-step RMSE divided by the smallest per-step RMSE across all steps and
/// prompt kinds. `rows[k][j]` is step `k` of `kinds[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedTable<T> {
    pub kinds: Vec<PromptKind>,
    pub rows: Vec<Vec<T>>,
    pub minimum: T,
}

impl<T: Scalar> NormalizedTable<T> {
    pub fn write_table<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<&str> = self.kinds.iter().map(|k| k.as_str()).collect();
        writeln!(out, "step\t{}", header.join("\t"))?;
        for (k, row) in self.rows.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(T::to_string).collect();
            writeln!(out, "{}\t{}", k + 1, cells.join("\t"))?;
        }
        Ok(())
    }
}

pub fn normalized_per_step_table<T: Scalar>(
    reports: &BTreeMap<PromptKind, MetricReport<T>>,
) -> Result<NormalizedTable<T>> {
    let steps = reports.values().next().ok_or(Error::EmptyInput)?.steps();
    if steps == 0 {
        return Err(Error::EmptyInput);
    }
    if let Some(r) = reports.values().find(|r| r.steps() != steps) {
        return Err(Error::LengthMismatch { left: r.steps(), right: steps });
    }
    let minimum = reports.values().flat_map(|r| r.rmse_per_step.iter().copied()).fold(T::infinity(), T::min);
    if !(minimum > T::zero()) {
        return Err(Error::InvalidParams("minimum per-step RMSE is zero; nothing to normalize by".into()));
    }
    let rows = (0..steps).map(|k| reports.values().map(|r| r.rmse_per_step[k] / minimum).collect()).collect();
    Ok(NormalizedTable { kinds: reports.keys().copied().collect(), rows, minimum })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset_path: Option<PathBuf>,
    pub prompt_kind: PromptKind,
    pub use_tokon: bool,
    pub backend: BackendConfig,
    pub normalization: Option<NormalizationParams<f64>>,
    /// Evaluate only the first `n` steps; all steps when absent.
    pub horizon_eval: Option<usize>,
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.use_tokon && self.normalization.is_none() {
            return Err(Error::InvalidConfig("normalization enabled without parameters".into()));
        }
        if self.horizon_eval == Some(0) {
            return Err(Error::InvalidConfig("horizon_eval must be positive".into()));
        }
        self.backend.validate()
    }

    fn active_normalization(&self) -> Option<&NormalizationParams<f64>> {
        self.normalization.as_ref().filter(|_| self.use_tokon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesResult {
    pub id: String,
    /// Domain units; absent when the forecast failed.
    pub prediction: Option<Vec<f64>>,
    pub target: Vec<f64>,
    pub failed: bool,
    pub attempts: u32,
    pub raw_text: String,
}

/// Self-contained results document: configuration, per-series outcomes and
/// the metrics derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub config: ExperimentConfig,
    pub horizon: usize,
    pub series: Vec<SeriesResult>,
    /// Absent when no series succeeded.
    pub metrics: Option<MetricReport<f64>>,
}

impl ExperimentResults {
    pub fn outcomes(&self) -> Vec<SeriesOutcome<f64>> {
        self.series
            .iter()
            .map(|s| SeriesOutcome { prediction: s.prediction.clone(), target: s.target.clone() })
            .collect()
    }

    /// Recomputes the metric block from the stored per-series outcomes.
    pub fn rescore(&self, first_steps: Option<usize>) -> Result<MetricReport<f64>> {
        per_step_metrics(&self.outcomes(), self.horizon, first_steps)
    }

    /// Replay fixture lines reproducing every stored reply.
    pub fn replay_fixture(&self) -> String {
        self.series.iter().map(|s| replay_line(&s.id, &s.raw_text) + "\n").collect()
    }
}

pub fn run_experiment(
    config: &ExperimentConfig,
    dataset: &Dataset,
    backend: &dyn Forecaster,
) -> Result<ExperimentResults> {
    config.validate()?;
    let params = config.active_normalization();
    let requests =
        dataset.records.iter().map(|r| build_request(r, config.prompt_kind, params)).collect::<Result<Vec<_>>>()?;
    let responses = forecast_batch(backend, &requests)?;

    let series: Vec<SeriesResult> = dataset
        .records
        .iter()
        .zip(responses)
        .map(|(record, resp)| SeriesResult {
            id: record.id.clone(),
            prediction: (!resp.failed).then(|| prediction_to_domain(&resp.parsed_values, params)),
            target: record.target.values().to_vec(),
            failed: resp.failed,
            attempts: resp.attempts,
            raw_text: resp.raw_text,
        })
        .collect();
    let mut results = ExperimentResults { config: config.clone(), horizon: dataset.horizon, series, metrics: None };
    results.metrics = match results.rescore(config.horizon_eval) {
        Ok(m) => Some(m),
        Err(Error::NoSuccessfulSeries) => None,
        Err(e) => return Err(e),
    };
    Ok(results)
}

/// Writes the document through a temporary file and a rename.
pub fn write_results(results: &ExperimentResults, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    let text = serde_json::to_string_pretty(results)?;
    std::fs::write(&tmp, text + "\n").map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: impl AsRef<Path>) -> Result<ExperimentResults> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(p: &[f64], t: &[f64]) -> SeriesOutcome<f64> {
        SeriesOutcome { prediction: Some(p.to_vec()), target: t.to_vec() }
    }

    #[test]
    fn scalar_metrics() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[3.0], &[1.0]).unwrap(), 2.0);
        assert_eq!(mae(&[3.0], &[1.0]).unwrap(), 2.0);
        assert_eq!(rmse(&[1.0, 5.0], &[2.0, 1.0]).unwrap(), (17.0f64 / 2.0).sqrt());
        assert!((rmse(&[1.0f64, 5.0], &[2.0, 1.0]).unwrap() - 2.9155).abs() < 1e-4);
        assert_eq!(mae(&[1.0, 5.0], &[2.0, 1.0]).unwrap(), 2.5);
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(mae::<f64>(&[], &[]), Err(Error::LengthMismatch { .. })));
        assert_eq!(rmse(&[3.0f32], &[1.0]).unwrap(), 2.0f32);
    }

    #[test]
    fn per_step_hand_computed() {
        // errors: series A [1, -2, 0], series B [3, 2, -4]
        let outcomes = vec![
            outcome(&[11.0, 8.0, 5.0], &[10.0, 10.0, 5.0]),
            outcome(&[3.0, 2.0, -4.0], &[0.0, 0.0, 0.0]),
            SeriesOutcome { prediction: None, target: vec![1.0, 1.0, 1.0] },
        ];
        let r = per_step_metrics(&outcomes, 3, None).unwrap();
        let expect_rmse = [(5.0f64).sqrt(), (4.0f64).sqrt(), (8.0f64).sqrt()];
        let expect_mae = [2.0, 2.0, 2.0];
        for k in 0..3 {
            assert!((r.rmse_per_step[k] - expect_rmse[k]).abs() < 1e-15);
            assert_eq!(r.mae_per_step[k], expect_mae[k]);
        }
        assert!((r.rmse_avg - expect_rmse.iter().sum::<f64>() / 3.0).abs() < 1e-15);
        assert_eq!(r.n_series, 3);
        assert_eq!(r.n_failed, 1);

        let first = per_step_metrics(&outcomes, 3, Some(2)).unwrap();
        assert_eq!(first.steps(), 2);
        assert!((first.rmse_avg - (expect_rmse[0] + expect_rmse[1]) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn per_step_edge_cases() {
        let perfect = per_step_metrics(&[outcome(&[1.0, 2.0], &[1.0, 2.0])], 2, None).unwrap();
        assert!(perfect.rmse_per_step.iter().chain(&perfect.mae_per_step).all(|&v| v == 0.0));
        let failed = [SeriesOutcome::<f64> { prediction: None, target: vec![1.0] }];
        assert!(matches!(per_step_metrics(&failed, 1, None), Err(Error::NoSuccessfulSeries)));
        assert!(per_step_metrics(&[outcome(&[1.0], &[1.0])], 1, Some(2)).is_err());
        assert!(matches!(
            per_step_metrics(&[outcome(&[1.0], &[1.0, 2.0])], 2, None),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn improvement_reference_values() {
        assert!((improvement_percent(4.651f64, 4.005).unwrap() - 13.89).abs() < 0.01);
        assert!((improvement_percent(2704.62f64, 2187.18).unwrap() - 19.13).abs() < 0.01);
        assert_eq!(improvement_percent(3.0, 3.0).unwrap(), 0.0);
        assert!(matches!(improvement_percent(0.0, 1.0), Err(Error::NonPositiveBaseline(_))));
    }

    fn report(rmse_per_step: Vec<f64>) -> MetricReport<f64> {
        MetricReport {
            mae_per_step: rmse_per_step.clone(),
            rmse_avg: 0.0,
            mae_avg: 0.0,
            rmse_per_step,
            n_series: 1,
            n_failed: 0,
        }
    }

    #[test]
    fn normalized_table() {
        let single = BTreeMap::from([(PromptKind::Baseline, report(vec![2.5]))]);
        assert_eq!(normalized_per_step_table(&single).unwrap().rows, vec![vec![1.0]]);

        let many = BTreeMap::from([
            (PromptKind::Baseline, report(vec![2.0, 4.0])),
            (PromptKind::Tsfc, report(vec![3.0, 2.0])),
        ]);
        let t = normalized_per_step_table(&many).unwrap();
        assert_eq!(t.kinds, vec![PromptKind::Baseline, PromptKind::Tsfc]);
        assert_eq!(t.rows, vec![vec![1.0, 1.5], vec![2.0, 1.0]]);
        assert_eq!(t.rows.iter().flatten().filter(|&&v| v == 1.0).count(), 2);

        assert!(normalized_per_step_table::<f64>(&BTreeMap::new()).is_err());
        let ragged =
            BTreeMap::from([(PromptKind::Baseline, report(vec![2.0, 4.0])), (PromptKind::CoT, report(vec![3.0]))]);
        assert!(normalized_per_step_table(&ragged).is_err());
    }

    #[test]
    fn metric_table_layout() {
        let mut buf = Vec::new();
        report(vec![1.0, 2.0]).write_table(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step\trmse\tmae\n1\t1\t1\n2\t2\t2\navg\t0\t0\n");
    }
}
