//! Golden-section search for the target standard deviation.
//!
//! The target mean is pinned at the midpoint of the initial interval and
//! only the target scale is searched. Each iteration evaluates both probes
//! afresh (two cost evaluations per iteration, no reuse) and shrinks the
//! interval by the golden ratio conjugate.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::DatasetRecord;
use crate::error::{Error, Result};
use crate::forecaster::{forecast_batch, Forecaster};
use crate::normalization::{DomainStats, NormalizationParams, TargetParams};
use crate::pipeline::{build_request, prediction_to_domain};
use crate::prompting::PromptKind;
use crate::scalar::Scalar;

/// Smallest target scale handed to the cost function.
pub const MIN_PROBE: f64 = 1e-6;

/// `(sqrt(5) - 1) / 2`.
pub fn golden_ratio_conjugate<T: Scalar>() -> T {
    (T::lit(5.0).sqrt() - T::one()) / T::lit(2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostKind {
    #[default]
    SumSquaredError,
    SumAbsoluteError,
}

impl CostKind {
    pub fn cost(self, prediction: &[f64], target: &[f64]) -> f64 {
        prediction
            .iter()
            .zip(target)
            .map(|(p, t)| match self {
                CostKind::SumSquaredError => (p - t) * (p - t),
                CostKind::SumAbsoluteError => (p - t).abs(),
            })
            .sum()
    }
}

/// How the interval shrinks after comparing the two probe costs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateRule {
    /// Keep the side holding the cheaper probe.
    #[default]
    Minimize,
    /// If the upper probe is cheaper, move the upper bound to the lower
    /// probe; otherwise move the lower bound to the upper probe. Discards
    /// the cheaper probe's side; kept for comparison runs.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig<T> {
    pub epsilon: T,
    pub initial_lo: T,
    pub initial_hi: T,
    pub cost_kind: CostKind,
    pub calibration_ids: Vec<String>,
    pub max_iterations: usize,
    pub update_rule: UpdateRule,
    pub index_min: i64,
    pub index_max: i64,
    pub prompt_kind: PromptKind,
}

impl<T: Scalar> SearchConfig<T> {
    /// Defaults over the integer range `[0, 999]`.
    pub fn new(calibration_ids: Vec<String>) -> Self {
        Self::with_range(calibration_ids, 0, 999)
    }

    pub fn with_range(calibration_ids: Vec<String>, index_min: i64, index_max: i64) -> Self {
        Self {
            epsilon: T::one(),
            initial_lo: T::from_i64_lossy(index_min),
            initial_hi: T::from_i64_lossy(index_max),
            cost_kind: CostKind::default(),
            calibration_ids,
            max_iterations: 50,
            update_rule: UpdateRule::default(),
            index_min,
            index_max,
            prompt_kind: PromptKind::Baseline,
        }
    }

    /// Target mean used for every probe.
    pub fn target_mean(&self) -> T {
        (self.initial_lo + self.initial_hi) / T::lit(2.0)
    }

    fn validate_interval(&self) -> Result<()> {
        if !(self.initial_lo < self.initial_hi) {
            return Err(Error::InvalidConfig(format!(
                "initial_lo ({}) must be below initial_hi ({})",
                self.initial_lo, self.initial_hi
            )));
        }
        if !(self.epsilon > T::zero()) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be positive".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_interval()?;
        if self.calibration_ids.is_empty() {
            return Err(Error::InvalidConfig("calibration set is empty".into()));
        }
        if self.index_min >= self.index_max {
            return Err(Error::InvalidConfig("index_min must be below index_max".into()));
        }
        let mid = self.target_mean();
        if mid < T::from_i64_lossy(self.index_min) || mid > T::from_i64_lossy(self.index_max) {
            return Err(Error::InvalidConfig("interval midpoint outside the index range".into()));
        }
        Ok(())
    }
}

/// Interval and probes of one iteration, with the probes' costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchState<T> {
    pub lo: T,
    pub hi: T,
    pub probe_upper: T,
    pub probe_lower: T,
    pub cost_upper: T,
    pub cost_lower: T,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace<T> {
    pub iterations: Vec<SearchState<T>>,
    pub final_lo: T,
    pub final_hi: T,
    pub final_sigma_t: T,
    pub evaluations: usize,
    pub max_iterations_exceeded: bool,
    /// Cheapest probe seen, as `(probe, cost)`.
    pub best_probe: Option<(T, T)>,
}

impl<T: Scalar> SearchTrace<T> {
    /// Tab-separated table, one row per iteration.
    pub fn write_table<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iteration\tlo\thi\tprobe_lower\tprobe_upper\tcost_lower\tcost_upper")?;
        for s in &self.iterations {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                s.iteration, s.lo, s.hi, s.probe_lower, s.probe_upper, s.cost_lower, s.cost_upper
            )?;
        }
        Ok(())
    }

    pub fn save_table(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_table(std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }
}

/// Minimizes `cost` over `[initial_lo, initial_hi]` and returns the midpoint
/// of the final interval. Hitting `max_iterations` is flagged in the trace,
/// not raised.
pub fn golden_section_minimize<T, F>(config: &SearchConfig<T>, mut cost: F) -> Result<(T, SearchTrace<T>)>
where
    T: Scalar,
    F: FnMut(T) -> Result<T>,
{
    config.validate_interval()?;
    let rho = golden_ratio_conjugate::<T>();
    let (mut lo, mut hi) = (config.initial_lo, config.initial_hi);
    let mut iterations = Vec::new();
    let mut best: Option<(T, T)> = None;
    let mut exceeded = false;

    while hi - lo > config.epsilon {
        if iterations.len() == config.max_iterations {
            exceeded = true;
            break;
        }
        let width = hi - lo;
        let probe_upper = lo + width * rho;
        let probe_lower = hi - width * rho;
        let cost_upper = cost(probe_upper)?;
        let cost_lower = cost(probe_lower)?;
        for (p, c) in [(probe_upper, cost_upper), (probe_lower, cost_lower)] {
            if best.is_none_or(|(_, b)| c < b) {
                best = Some((p, c));
            }
        }
        iterations.push(SearchState {
            lo,
            hi,
            probe_upper,
            probe_lower,
            cost_upper,
            cost_lower,
            iteration: iterations.len(),
        });
        match config.update_rule {
            UpdateRule::Minimize => {
                if cost_lower < cost_upper {
                    hi = probe_upper;
                } else {
                    lo = probe_lower;
                }
            }
            UpdateRule::Literal => {
                if cost_upper < cost_lower {
                    hi = probe_lower;
                } else {
                    lo = probe_upper;
                }
            }
        }
    }
    if exceeded {
        log::warn!("golden-section search stopped after {} iterations", config.max_iterations);
    }
    let sigma = (lo + hi) / T::lit(2.0);
    let evaluations = 2 * iterations.len();
    Ok((
        sigma,
        SearchTrace {
            iterations,
            final_lo: lo,
            final_hi: hi,
            final_sigma_t: sigma,
            evaluations,
            max_iterations_exceeded: exceeded,
            best_probe: best,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeCost {
    pub total: f64,
    pub failed: usize,
}

/// Summed forecast cost over the calibration records with the target scale
/// set to `delta`. A failed forecast is charged the cost of repeating the
/// record's last context value.
pub fn evaluate_probe_cost(
    delta: f64,
    calibration: &[&DatasetRecord],
    stats: &DomainStats<f64>,
    forecaster: &dyn Forecaster,
    config: &SearchConfig<f64>,
) -> Result<ProbeCost> {
    if calibration.is_empty() {
        return Err(Error::InvalidConfig("calibration set is empty".into()));
    }
    let delta = delta.max(MIN_PROBE);
    let target = TargetParams::new(config.target_mean(), delta, config.index_min, config.index_max)?;
    let params = NormalizationParams { stats: *stats, target };
    let requests =
        calibration.iter().map(|r| build_request(r, config.prompt_kind, Some(&params))).collect::<Result<Vec<_>>>()?;
    let responses = forecast_batch(forecaster, &requests)?;

    let mut total = 0.0;
    let mut failed = 0;
    for (record, response) in calibration.iter().zip(&responses) {
        let truth = record.target.values();
        let cost = if response.failed {
            failed += 1;
            let naive = vec![record.context.last(); truth.len()];
            config.cost_kind.cost(&naive, truth)
        } else {
            let prediction = prediction_to_domain(&response.parsed_values, Some(&params));
            config.cost_kind.cost(&prediction, truth)
        };
        total += cost;
    }
    if failed == calibration.len() {
        return Err(Error::AllForecastsFailed { delta });
    }
    Ok(ProbeCost { total, failed })
}

/// Searches the target scale over the calibration records named in `config`.
pub fn golden_section_search(
    config: &SearchConfig<f64>,
    records: &[DatasetRecord],
    stats: &DomainStats<f64>,
    forecaster: &dyn Forecaster,
) -> Result<(f64, SearchTrace<f64>)> {
    config.validate()?;
    let calibration = config
        .calibration_ids
        .iter()
        .map(|id| {
            records
                .iter()
                .find(|r| &r.id == id)
                .ok_or_else(|| Error::InvalidConfig(format!("calibration id `{id}` not in dataset")))
        })
        .collect::<Result<Vec<_>>>()?;
    golden_section_minimize(config, |delta| {
        let probe = evaluate_probe_cost(delta, &calibration, stats, forecaster, config)?;
        if probe.failed > 0 {
            log::info!("sigma_t probe {delta:.4}: {} of {} forecasts failed", probe.failed, calibration.len());
        }
        Ok(probe.total)
    })
}
