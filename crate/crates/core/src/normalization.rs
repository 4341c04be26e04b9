//! Tokenization-optimized normalization.
//!
//! A value `s` in domain units is mapped onto an integer token index by
//! standardizing it with domain statistics, rescaling to a target mean and
//! standard deviation, rounding to the nearest integer and clipping into
//! `[index_min, index_max]`. Every index in that range is a single token of
//! the model's vocabulary, so a series of `n` values becomes `n` tokens
//! (plus separators).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{mean, Scalar};

/// Ordered, non-empty series of finite values in domain units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<T>", into = "Vec<T>", bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct TimeSeries<T: Scalar> {
    values: Vec<T>,
}

impl<T: Scalar> TimeSeries<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Always false; kept for API symmetry with slices.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn last(&self) -> T {
        self.values[self.values.len() - 1]
    }
}

impl<T: Scalar> TryFrom<Vec<T>> for TimeSeries<T> {
    type Error = Error;

    fn try_from(values: Vec<T>) -> Result<Self> {
        Self::new(values)
    }
}

impl<T: Scalar> From<TimeSeries<T>> for Vec<T> {
    fn from(series: TimeSeries<T>) -> Self {
        series.values
    }
}

/// Pooled mean and sample standard deviation of a domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainStats<T> {
    pub mean: T,
    pub std_dev: T,
    pub sample_count: usize,
}

impl<T: Scalar> DomainStats<T> {
    pub fn new(mean: T, std_dev: T, sample_count: usize) -> Result<Self> {
        if !mean.is_finite() || !std_dev.is_finite() || std_dev <= T::zero() {
            return Err(Error::InvalidParams(format!(
                "domain stats need finite mean and positive std_dev, got mean={mean}, std_dev={std_dev}"
            )));
        }
        if sample_count == 0 {
            return Err(Error::InvalidParams("sample_count must be positive".into()));
        }
        Ok(Self { mean, std_dev, sample_count })
    }
}

/// Target location and scale in token-index units, plus the admissible index range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetParams<T> {
    pub target_mean: T,
    pub target_std: T,
    pub index_min: i64,
    pub index_max: i64,
}

impl<T: Scalar> TargetParams<T> {
    pub fn new(target_mean: T, target_std: T, index_min: i64, index_max: i64) -> Result<Self> {
        if index_min >= index_max {
            return Err(Error::InvalidParams(format!("index_min ({index_min}) must be below index_max ({index_max})")));
        }
        if !target_std.is_finite() || target_std <= T::zero() {
            return Err(Error::InvalidParams(format!("target_std must be positive, got {target_std}")));
        }
        let lo = T::from_i64_lossy(index_min);
        let hi = T::from_i64_lossy(index_max);
        if !(lo <= target_mean && target_mean <= hi) {
            return Err(Error::InvalidParams(format!("target_mean {target_mean} outside [{index_min}, {index_max}]")));
        }
        Ok(Self { target_mean, target_std, index_min, index_max })
    }

    /// Target mean fixed at the midpoint of the index range.
    pub fn centered(target_std: T, index_min: i64, index_max: i64) -> Result<Self> {
        let mid = (T::from_i64_lossy(index_min) + T::from_i64_lossy(index_max)) / T::lit(2.0);
        Self::new(mid, target_std, index_min, index_max)
    }
}

/// Domain statistics paired with target parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams<T> {
    pub stats: DomainStats<T>,
    pub target: TargetParams<T>,
}

impl<T: Scalar> NormalizationParams<T> {
    pub fn normalize(&self, series: &TimeSeries<T>) -> NormalizedSeries {
        normalize_series(series, &self.stats, &self.target)
    }

    pub fn denormalize(&self, values: &[T]) -> Vec<T> {
        denormalize_series(values, &self.stats, &self.target)
    }

    pub fn error_bound(&self) -> T {
        quantization_error_bound(&self.stats, &self.target)
    }
}

/// Series of token indices, each inside the target's index range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedSeries {
    pub tokens: Vec<i64>,
}

impl NormalizedSeries {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn to_values<T: Scalar>(&self) -> Vec<T> {
        self.tokens.iter().map(|&t| T::from_i64_lossy(t)).collect()
    }
}

/// Pooled mean and sample (n - 1) standard deviation over every element of
/// every series in the set.
pub fn compute_domain_stats<'a, T, I>(series_set: I) -> Result<DomainStats<T>>
where
    T: Scalar,
    I: IntoIterator<Item = &'a TimeSeries<T>>,
{
    let pooled: Vec<T> = series_set.into_iter().flat_map(|s| s.values().iter().copied()).collect();
    if pooled.is_empty() {
        return Err(Error::EmptyInput);
    }
    if pooled.len() < 2 {
        return Err(Error::DegenerateVariance);
    }
    let m = mean(&pooled).expect("non-empty");
    let ss: T = pooled.iter().map(|&v| (v - m) * (v - m)).sum();
    let std_dev = (ss / T::from_count(pooled.len() - 1)).sqrt();
    if std_dev <= T::zero() || pooled.iter().all(|&v| v == pooled[0]) {
        return Err(Error::DegenerateVariance);
    }
    DomainStats::new(m, std_dev, pooled.len())
}

/// Affine image of `s` in token-index units, before rounding and clipping.
pub fn scale_value<T: Scalar>(s: T, stats: &DomainStats<T>, target: &TargetParams<T>) -> T {
    target.target_std * (s - stats.mean) / stats.std_dev + target.target_mean
}

/// Round to nearest, ties away from zero. `Float::round` already has these
/// semantics; every call site goes through here so the rule lives in one place.
pub fn round_index<T: Scalar>(x: T) -> T {
    x.round()
}

pub fn normalize_value<T: Scalar>(s: T, stats: &DomainStats<T>, target: &TargetParams<T>) -> i64 {
    let lo = T::from_i64_lossy(target.index_min);
    let hi = T::from_i64_lossy(target.index_max);
    let rounded = round_index(scale_value(s, stats, target));
    let clipped = if rounded > hi {
        hi
    } else if rounded < lo {
        lo
    } else {
        rounded
    };
    // NaN falls through both comparisons above
    clipped.to_i64().unwrap_or(target.index_min).clamp(target.index_min, target.index_max)
}

pub fn normalize_series<T: Scalar>(
    series: &TimeSeries<T>,
    stats: &DomainStats<T>,
    target: &TargetParams<T>,
) -> NormalizedSeries {
    NormalizedSeries { tokens: series.values().iter().map(|&s| normalize_value(s, stats, target)).collect() }
}

/// Exact affine inverse of [`scale_value`]. Accepts indices outside the
/// target range.
pub fn denormalize_value<T: Scalar>(v: T, stats: &DomainStats<T>, target: &TargetParams<T>) -> T {
    (v - target.target_mean) * stats.std_dev / target.target_std + stats.mean
}

pub fn denormalize_series<T: Scalar>(values: &[T], stats: &DomainStats<T>, target: &TargetParams<T>) -> Vec<T> {
    values.iter().map(|&v| denormalize_value(v, stats, target)).collect()
}

/// Upper bound on `|denormalize(normalize(s)) - s|` for every `s` whose
/// scaled value lands inside the index range: half a token, in domain units.
pub fn quantization_error_bound<T: Scalar>(stats: &DomainStats<T>, target: &TargetParams<T>) -> T {
    T::lit(0.5) * stats.std_dev / target.target_std
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn aihepc() -> (DomainStats<f64>, TargetParams<f64>) {
        (DomainStats::new(4.98, 4.99, 100).unwrap(), TargetParams::new(499.5, 24.57, 0, 999).unwrap())
    }

    fn series(v: &[f64]) -> TimeSeries<f64> {
        TimeSeries::new(v.to_vec()).unwrap()
    }

    #[test]
    fn pooled_stats_of_two_series() {
        let set = [series(&[1.0, 2.0]), series(&[3.0, 4.0])];
        let stats = compute_domain_stats(&set).unwrap();
        // pooled sum of squares 5, divisor 3
        assert_eq!(stats.mean, 2.5);
        assert!((stats.std_dev - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((stats.std_dev - 1.2910).abs() < 1e-4);
        assert_eq!(stats.sample_count, 4);
    }

    #[test]
    fn constant_pool_is_degenerate() {
        let set = [series(&[5.0, 5.0, 5.0])];
        assert!(matches!(compute_domain_stats(&set), Err(Error::DegenerateVariance)));
        let single = [series(&[5.0])];
        assert!(matches!(compute_domain_stats(&single), Err(Error::DegenerateVariance)));
        let empty: [TimeSeries<f64>; 0] = [];
        assert!(matches!(compute_domain_stats(&empty), Err(Error::EmptyInput)));
    }

    #[test]
    fn series_rejects_empty_and_non_finite() {
        assert!(matches!(TimeSeries::<f64>::new(vec![]), Err(Error::EmptyInput)));
        assert!(matches!(TimeSeries::new(vec![1.0, f64::NAN]), Err(Error::NonFinite { index: 1 })));
        assert!(matches!(TimeSeries::new(vec![f64::INFINITY]), Err(Error::NonFinite { index: 0 })));
        let parsed: std::result::Result<TimeSeries<f64>, _> = serde_json::from_str("[]");
        assert!(parsed.is_err());
    }

    #[test]
    fn target_params_validation() {
        assert!(TargetParams::new(5.0, 1.0, 10, 10).is_err());
        assert!(TargetParams::new(5.0, 0.0, 0, 10).is_err());
        assert!(TargetParams::new(11.0, 1.0, 0, 10).is_err());
        let c = TargetParams::<f64>::centered(24.57, 0, 999).unwrap();
        assert_eq!(c.target_mean, 499.5);
    }

    #[test]
    fn normalize_reference_values() {
        let (stats, target) = aihepc();
        // s = m_s lands on r(499.5) = 500 (ties away from zero)
        assert_eq!(normalize_value(4.98, &stats, &target), 500);
        // z = 1.0 -> 524.07
        assert_eq!(normalize_value(9.97, &stats, &target), 524);
        assert_eq!(normalize_value(1e9, &stats, &target), 999);
        assert_eq!(normalize_value(-1e9, &stats, &target), 0);
        assert_eq!(normalize_series(&series(&[4.98, 9.97]), &stats, &target).tokens, vec![500, 524]);
        let c = normalize_series(&series(&[3.3, 3.3, 3.3]), &stats, &target);
        assert!(c.tokens.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn rounding_ties_go_away_from_zero() {
        assert_eq!(round_index(0.5f64), 1.0);
        assert_eq!(round_index(-0.5f64), -1.0);
        assert_eq!(round_index(2.5f64), 3.0);
        assert_eq!(round_index(499.5f32), 500.0);
    }

    #[test]
    fn denormalize_reference_values() {
        let (stats, target) = aihepc();
        // 0.5 * 4.99 / 24.57 + 4.98
        let expected = 0.5 * 4.99 / 24.57 + 4.98;
        assert!((denormalize_value(500.0, &stats, &target) - expected).abs() < 1e-12);
        assert!((denormalize_value(500.0, &stats, &target) - 5.08155).abs() < 1e-5);

        let back = denormalize_value(524.0, &stats, &target);
        assert!((back - 9.9558).abs() < 1e-4);
        assert!((back - 9.97).abs() <= quantization_error_bound(&stats, &target));

        let integral = TargetParams::new(500.0, 24.57, 0, 999).unwrap();
        assert_eq!(denormalize_value(500.0, &stats, &integral), stats.mean);
    }

    #[test]
    fn bound_reference_values() {
        let (stats, target) = aihepc();
        assert!((quantization_error_bound(&stats, &target) - 0.10155).abs() < 1e-4);
        let sm4_stats = DomainStats::<f64>::new(3724.92, 3145.08, 100).unwrap();
        let sm4_target = TargetParams::new(499.5, 312.31, 0, 999).unwrap();
        assert!((quantization_error_bound(&sm4_stats, &sm4_target) - 5.035).abs() < 1e-3);
        let wide = TargetParams::new(499.5, 1e12, 0, 999).unwrap();
        assert!(quantization_error_bound(&stats, &wide) < 1e-11);
    }

    #[test]
    fn works_in_single_precision() {
        let stats = DomainStats::<f32>::new(4.98, 4.99, 100).unwrap();
        let target = TargetParams::<f32>::new(499.5, 24.57, 0, 999).unwrap();
        assert_eq!(normalize_value(9.97f32, &stats, &target), 524);
        assert_eq!(normalize_value(f32::MAX, &stats, &target), 999);
    }

    fn params() -> impl Strategy<Value = (DomainStats<f64>, TargetParams<f64>)> {
        (-1e4..1e4f64, 1e-3..1e4f64, 0.5..500.0f64, -50i64..50, 10i64..2000).prop_flat_map(|(m, sd, tsd, lo, span)| {
            let hi = lo + span;
            (lo as f64..=hi as f64)
                .prop_map(move |tm| (DomainStats::new(m, sd, 10).unwrap(), TargetParams::new(tm, tsd, lo, hi).unwrap()))
        })
    }

    proptest! {
        #[test]
        fn output_is_inside_index_range((stats, target) in params(), s in -1e7..1e7f64) {
            let v = normalize_value(s, &stats, &target);
            prop_assert!(target.index_min <= v && v <= target.index_max);
        }

        #[test]
        fn monotone_in_input((stats, target) in params(), a in -1e6..1e6f64, b in -1e6..1e6f64) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(normalize_value(lo, &stats, &target) <= normalize_value(hi, &stats, &target));
        }

        #[test]
        fn round_trip_within_bound((stats, target) in params(), u in 0.0..1.0f64) {
            // pick s whose scaled value is inside the index range
            let lo = target.index_min as f64;
            let hi = target.index_max as f64;
            let s = denormalize_value(lo + u * (hi - lo), &stats, &target);
            let v = normalize_value(s, &stats, &target);
            let back = denormalize_value(v as f64, &stats, &target);
            let bound = quantization_error_bound(&stats, &target);
            prop_assert!((back - s).abs() <= bound * (1.0 + 1e-9) + 1e-12 * s.abs().max(1.0));
        }

        #[test]
        fn affine_inverse((stats, target) in params(), s in -1e6..1e6f64) {
            let back = denormalize_value(scale_value(s, &stats, &target), &stats, &target);
            prop_assert!((back - s).abs() <= 1e-9 * s.abs().max(1.0));
        }

        #[test]
        fn stats_permutation_invariant(mut v in proptest::collection::vec(-1e3..1e3f64, 2..64), seed in any::<u64>()) {
            prop_assume!(v.iter().any(|&x| x != v[0]));
            let a = compute_domain_stats(&[TimeSeries::new(v.clone()).unwrap()]).unwrap();
            // deterministic shuffle
            let n = v.len();
            let mut state = seed | 1;
            for i in (1..n).rev() {
                state ^= state << 13; state ^= state >> 7; state ^= state << 17;
                v.swap(i, (state % (i as u64 + 1)) as usize);
            }
            let (left, right) = v.split_at(n / 2);
            let parts: Vec<TimeSeries<f64>> = [left, right]
                .iter()
                .filter(|p| !p.is_empty())
                .map(|p| TimeSeries::new(p.to_vec()).unwrap())
                .collect();
            let b = compute_domain_stats(&parts).unwrap();
            prop_assert!((a.mean - b.mean).abs() <= 1e-9 * a.mean.abs().max(1.0));
            prop_assert!((a.std_dev - b.std_dev).abs() <= 1e-9 * a.std_dev.max(1.0));
            prop_assert_eq!(a.sample_count, b.sample_count);
        }
    }
}
